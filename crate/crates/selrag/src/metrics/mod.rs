//! Patch evaluation: exact match, BLEU-4, and CodeBLEU.
//!
//! CodeBLEU combines standard BLEU, keyword-weighted n-gram BLEU, an AST
//! subtree match and a data-flow match. All metrics land in `[0, 1]`, and a
//! candidate identical to its reference scores 1.0 on every one of them.

mod dataflow;

pub use dataflow::{extract_def_use, match_df_trees, DefUseEdge, LanguageProfile};

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::ast::{parse_source, AstNode};
use crate::error::{Error, Result};

/// Whitespace tokenization used by EM and the BLEU family.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|s| s.to_string()).collect()
}

/// True iff the whitespace-normalized token sequences are equal.
pub fn exact_match(candidate: &str, reference: &str) -> bool {
    tokenize(candidate) == tokenize(reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Smoothing {
    None,
    /// Zero precisions are replaced by 1e-9.
    Epsilon,
}

const SMOOTHING_EPSILON: f64 = 1e-9;

/// BLEU-4 configuration: n-gram weights summing to 1, plus smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BleuConfig {
    pub weights: [f64; 4],
    pub smoothing: Smoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            weights: [0.25; 4],
            smoothing: Smoothing::None,
        }
    }
}

impl BleuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("BLEU weights must be non-negative".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("BLEU weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn gram_weight(gram: &[String], weights: Option<&BTreeMap<String, f64>>) -> f64 {
    match weights {
        None => 1.0,
        Some(map) => {
            // Mean of the token weights; plain tokens weigh 1.
            let total: f64 = gram
                .iter()
                .map(|t| map.get(t).copied().unwrap_or(1.0))
                .sum();
            total / gram.len() as f64
        }
    }
}

/// Clipped (optionally token-weighted) n-gram precision.
///
/// When neither side has n-grams of this order the precision is vacuously 1;
/// when only the candidate lacks them it is 0.
fn modified_precision(
    candidate: &[String],
    reference: &[String],
    n: usize,
    weights: Option<&BTreeMap<String, f64>>,
) -> f64 {
    let cand_counts = ngram_counts(candidate, n);
    let ref_counts = ngram_counts(reference, n);
    if cand_counts.is_empty() {
        return if ref_counts.is_empty() { 1.0 } else { 0.0 };
    }
    let mut matched = 0.0;
    let mut total = 0.0;
    for (gram, count) in &cand_counts {
        let weight = gram_weight(gram, weights);
        let clipped = (*count).min(ref_counts.get(gram).copied().unwrap_or(0));
        matched += clipped as f64 * weight;
        total += *count as f64 * weight;
    }
    matched / total
}

/// Brevity penalty: 1 when the candidate is longer than the reference,
/// otherwise `exp(1 - f_r / f_g)`.
fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len > reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

fn bleu_with_weights(
    candidate: &[String],
    reference: &[String],
    cfg: &BleuConfig,
    keyword_weights: Option<&BTreeMap<String, f64>>,
) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::EmptySequence);
    }
    cfg.validate()?;
    let mut log_sum = 0.0;
    for (n, weight) in (1..=4).zip(cfg.weights) {
        if weight == 0.0 {
            continue;
        }
        let mut precision = modified_precision(candidate, reference, n, keyword_weights);
        if precision == 0.0 {
            match cfg.smoothing {
                Smoothing::None => return Ok(0.0),
                Smoothing::Epsilon => precision = SMOOTHING_EPSILON,
            }
        }
        log_sum += weight * precision.ln();
    }
    Ok(brevity_penalty(candidate.len(), reference.len()) * log_sum.exp())
}

/// BLEU-4: brevity penalty times the weighted geometric mean of clipped
/// 1..4-gram precisions.
pub fn bleu4(candidate: &[String], reference: &[String], cfg: &BleuConfig) -> Result<f64> {
    bleu_with_weights(candidate, reference, cfg, None)
}

/// BLEU-4 with language keywords up-weighted in the precision counts.
pub fn weighted_bleu4(
    candidate: &[String],
    reference: &[String],
    cfg: &BleuConfig,
    keyword_weights: &BTreeMap<String, f64>,
) -> Result<f64> {
    bleu_with_weights(candidate, reference, cfg, Some(keyword_weights))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Structural hash over node types; leaf values are excluded.
fn structural_hash(node: &AstNode, sink: &mut Vec<u64>) -> u64 {
    let mut bytes: Vec<u8> = node.node_type.as_bytes().to_vec();
    bytes.push(0);
    for child in &node.children {
        bytes.extend_from_slice(&structural_hash(child, sink).to_le_bytes());
    }
    let hash = fnv1a64(&bytes);
    if !node.is_leaf() {
        sink.push(hash);
    }
    hash
}

fn subtree_multiset(root: &AstNode) -> HashMap<u64, usize> {
    let mut hashes = Vec::new();
    structural_hash(root, &mut hashes);
    let mut counts = HashMap::new();
    for h in hashes {
        *counts.entry(h).or_insert(0) += 1;
    }
    counts
}

/// Syntactic AST match: clipped count of candidate subtrees found in the
/// reference, over the reference's subtree count.
///
/// Subtrees are rooted at non-leaf nodes and canonicalized by a structural
/// hash over node types only.
pub fn match_ast(candidate: &AstNode, reference: &AstNode) -> f64 {
    let cand = subtree_multiset(candidate);
    let reference = subtree_multiset(reference);
    let ref_total: usize = reference.values().sum();
    let cand_total: usize = cand.values().sum();
    if ref_total == 0 {
        return if cand_total == 0 { 1.0 } else { 0.0 };
    }
    let matched: usize = cand
        .iter()
        .map(|(hash, count)| (*count).min(reference.get(hash).copied().unwrap_or(0)))
        .sum();
    matched as f64 / ref_total as f64
}

/// Semantic data-flow match over def-use edges.
pub fn match_df(candidate: &str, reference: &str, language: &str) -> Result<f64> {
    let cand = parse_source(candidate, language)?;
    let reference = parse_source(reference, language)?;
    let profile = LanguageProfile::for_language(language);
    Ok(match_df_trees(&cand, &reference, &profile))
}

/// CodeBLEU weights and the keyword map for the weighted n-gram component.
#[derive(Debug, Clone, Serialize)]
pub struct CodeBleuConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub keyword_weights: BTreeMap<String, f64>,
}

/// Keyword tokens are up-weighted 5:1 in the weighted n-gram component.
pub const KEYWORD_WEIGHT: f64 = 5.0;

impl CodeBleuConfig {
    /// Equal component weights with the bundled keyword list for `language`.
    pub fn for_language(language: &str) -> Self {
        CodeBleuConfig {
            alpha: 0.25,
            beta: 0.25,
            gamma: 0.25,
            epsilon: 0.25,
            keyword_weights: keyword_weights(language),
        }
    }

    pub fn with_weights(mut self, alpha: f64, beta: f64, gamma: f64, epsilon: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self.gamma = gamma;
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.alpha, self.beta, self.gamma, self.epsilon];
        if parts.iter().any(|w| *w < 0.0) {
            return Err(Error::Config(
                "CodeBLEU weights must be non-negative".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "CodeBLEU weights sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

/// The bundled keyword list for a language, each mapped to
/// [`KEYWORD_WEIGHT`]. Unknown languages get an empty map, which makes the
/// weighted component equal standard BLEU.
pub fn keyword_weights(language: &str) -> BTreeMap<String, f64> {
    let raw = match language.to_ascii_lowercase().as_str() {
        "java" => include_str!("../../data/keywords/java.txt"),
        "c" => include_str!("../../data/keywords/c.txt"),
        _ => "",
    };
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|kw| (kw.to_string(), KEYWORD_WEIGHT))
        .collect()
}

/// CodeBLEU score with its four components and any per-sample flags.
#[derive(Debug, Clone, Serialize)]
pub struct CodeBleuBreakdown {
    pub bleu: f64,
    pub weighted_bleu: f64,
    pub ast_match: f64,
    pub df_match: f64,
    pub score: f64,
    pub flags: Vec<String>,
}

/// Weighted sum of the four CodeBLEU components.
///
/// Never fails: a component that cannot be computed (empty tokens, parse
/// failure) contributes 0 and is flagged.
pub fn codebleu(
    candidate: &str,
    reference: &str,
    language: &str,
    cfg: &CodeBleuConfig,
) -> CodeBleuBreakdown {
    let mut flags = Vec::new();
    let cand_tokens = tokenize(candidate);
    let ref_tokens = tokenize(reference);
    let bleu_cfg = BleuConfig::default();

    let (bleu, weighted_bleu) = if cand_tokens.is_empty() || ref_tokens.is_empty() {
        flags.push("empty-token-sequence".to_string());
        (0.0, 0.0)
    } else {
        (
            bleu4(&cand_tokens, &ref_tokens, &bleu_cfg).unwrap_or(0.0),
            weighted_bleu4(&cand_tokens, &ref_tokens, &bleu_cfg, &cfg.keyword_weights)
                .unwrap_or(0.0),
        )
    };

    let cand_tree = parse_source(candidate, language);
    let ref_tree = parse_source(reference, language);
    let (ast_match_score, df_match_score) = match (&cand_tree, &ref_tree) {
        (Ok(cand), Ok(reference)) => {
            let profile = LanguageProfile::for_language(language);
            (
                match_ast(cand, reference),
                match_df_trees(cand, reference, &profile),
            )
        }
        (cand, reference) => {
            if let Err(e) = cand {
                flags.push(format!("candidate-parse-failure: {e}"));
            }
            if let Err(e) = reference {
                flags.push(format!("reference-parse-failure: {e}"));
            }
            (0.0, 0.0)
        }
    };

    let score = cfg.alpha * bleu
        + cfg.beta * weighted_bleu
        + cfg.gamma * ast_match_score
        + cfg.epsilon * df_match_score;
    CodeBleuBreakdown {
        bleu,
        weighted_bleu,
        ast_match: ast_match_score,
        df_match: df_match_score,
        score,
        flags,
    }
}

/// One candidate/reference pair to score.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub candidate: String,
    pub reference: String,
}

/// Per-sample scores, including all four CodeBLEU components.
#[derive(Debug, Clone, Serialize)]
pub struct SampleScore {
    pub id: String,
    pub em: bool,
    pub bleu4: f64,
    pub codebleu: f64,
    pub bleu_component: f64,
    pub weighted_bleu_component: f64,
    pub ast_match: f64,
    pub df_match: f64,
    pub flags: Vec<String>,
}

/// Batch scores; aggregates are arithmetic means of per-sample values.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub em_rate: f64,
    pub bleu4: f64,
    pub codebleu: f64,
    pub samples: Vec<SampleScore>,
}

/// Score a batch. Rows are sorted by sample id so the report bytes do not
/// depend on scoring order.
pub fn evaluate_batch(
    samples: &[EvalSample],
    language: &str,
    bleu_cfg: &BleuConfig,
    cb_cfg: &CodeBleuConfig,
) -> EvalReport {
    let mut rows: Vec<SampleScore> = samples
        .par_iter()
        .map(|sample| score_sample(sample, language, bleu_cfg, cb_cfg))
        .collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));

    let n = rows.len() as f64;
    let (mut em_sum, mut bleu_sum, mut cb_sum) = (0.0, 0.0, 0.0);
    for row in &rows {
        em_sum += if row.em { 1.0 } else { 0.0 };
        bleu_sum += row.bleu4;
        cb_sum += row.codebleu;
    }
    EvalReport {
        em_rate: if rows.is_empty() { 0.0 } else { em_sum / n },
        bleu4: if rows.is_empty() { 0.0 } else { bleu_sum / n },
        codebleu: if rows.is_empty() { 0.0 } else { cb_sum / n },
        samples: rows,
    }
}

fn score_sample(
    sample: &EvalSample,
    language: &str,
    bleu_cfg: &BleuConfig,
    cb_cfg: &CodeBleuConfig,
) -> SampleScore {
    let cand_tokens = tokenize(&sample.candidate);
    let ref_tokens = tokenize(&sample.reference);
    let mut flags = Vec::new();
    let bleu = if cand_tokens.is_empty() || ref_tokens.is_empty() {
        flags.push("empty-token-sequence".to_string());
        0.0
    } else {
        bleu4(&cand_tokens, &ref_tokens, bleu_cfg).unwrap_or(0.0)
    };
    let breakdown = codebleu(&sample.candidate, &sample.reference, language, cb_cfg);
    for flag in &breakdown.flags {
        if !flags.contains(flag) {
            flags.push(flag.clone());
        }
    }
    SampleScore {
        id: sample.id.clone(),
        em: exact_match(&sample.candidate, &sample.reference),
        bleu4: bleu,
        codebleu: breakdown.score,
        bleu_component: breakdown.bleu,
        weighted_bleu_component: breakdown.weighted_bleu,
        ast_match: breakdown.ast_match,
        df_match: breakdown.df_match,
        flags,
    }
}
