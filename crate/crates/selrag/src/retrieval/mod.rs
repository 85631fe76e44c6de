//! The dual patch retriever and its selection gate.
//!
//! A [`CodebaseIndex`] holds bug-fix pairs with three precomputed vectors
//! each: semantic (embedded source), structural (embedded AST sequence) and
//! hybrid (their element-wise mean). Retrieval scans every entry exactly —
//! codebases are small enough that the exact scan is both the fastest index
//! to build and the correctness oracle — scores candidates by cosine
//! similarity, admits those strictly above the gate threshold, and packs
//! them into the prompt budget in descending similarity order.

mod store;

pub use store::{load_index, save_index};

use serde::{Deserialize, Serialize};

use crate::ast::{ast_traversal, parse_source};
use crate::embed::{hybrid_vector, Embedder, EmbedderSpec, FeatureVector};
use crate::error::{Error, Result};
use crate::prompt::{assemble_text, has_marker_collision, TokenizerHandle};

/// A buggy method and its fixed counterpart; the unit stored in the codebase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugFixPair {
    pub id: String,
    pub buggy_code: String,
    pub fixed_code: String,
    pub language: String,
}

/// Which retriever scores candidates.
///
/// `SemanticOnly` drops the structural signal (the paper's "w/o SSDR"
/// ablation); `StructuralOnly` drops the semantic signal ("w/o SR").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    Hybrid,
    SemanticOnly,
    StructuralOnly,
}

impl std::str::FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" => Ok(RetrievalMode::Hybrid),
            "sr" | "semantic-only" => Ok(RetrievalMode::SemanticOnly),
            "ssdr" | "structural-only" => Ok(RetrievalMode::StructuralOnly),
            other => Err(Error::Config(format!(
                "unknown retrieval mode `{other}` (expected hybrid, sr, or ssdr)"
            ))),
        }
    }
}

impl std::fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            RetrievalMode::Hybrid => "hybrid",
            RetrievalMode::SemanticOnly => "semantic-only",
            RetrievalMode::StructuralOnly => "structural-only",
        };
        f.write_str(name)
    }
}

/// One indexed pair with its precomputed vectors.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub pair: BugFixPair,
    pub semantic: FeatureVector,
    pub structural: FeatureVector,
    pub hybrid: FeatureVector,
}

impl IndexEntry {
    fn vector_for(&self, mode: RetrievalMode) -> &FeatureVector {
        match mode {
            RetrievalMode::Hybrid => &self.hybrid,
            RetrievalMode::SemanticOnly => &self.semantic,
            RetrievalMode::StructuralOnly => &self.structural,
        }
    }
}

/// The bug-fix codebase with precomputed vectors; immutable after build.
#[derive(Debug, Clone)]
pub struct CodebaseIndex {
    pub entries: Vec<IndexEntry>,
    pub embedder: EmbedderSpec,
    pub mode: RetrievalMode,
}

impl CodebaseIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Language targets are parsed with: the first entry's. Codebases are
    /// single-language in practice.
    pub fn language(&self) -> Option<&str> {
        self.entries.first().map(|e| e.pair.language.as_str())
    }
}

/// Pairs skipped during indexing, with reasons.
#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub indexed: usize,
    pub skipped: Vec<(String, String)>,
}

/// Embed every pair and assemble the index.
///
/// The semantic vector embeds the buggy source, the structural vector embeds
/// its flattened AST sequence, and the hybrid vector is their mean. Pairs
/// with empty code are skipped with a report; embedder transport errors
/// propagate.
pub fn build_index(
    pairs: &[BugFixPair],
    embedder: &Embedder,
    mode: RetrievalMode,
) -> Result<(CodebaseIndex, BuildReport)> {
    let mut report = BuildReport::default();
    let mut entries: Vec<IndexEntry> = Vec::with_capacity(pairs.len());
    let mut seen_ids = std::collections::BTreeSet::new();

    for pair in pairs {
        if !seen_ids.insert(pair.id.clone()) {
            report.skipped.push((pair.id.clone(), "duplicate id".into()));
            continue;
        }
        if pair.fixed_code.trim().is_empty() {
            report
                .skipped
                .push((pair.id.clone(), "empty fixed_code".into()));
            continue;
        }
        match embed_pair(pair, embedder) {
            Ok((semantic, structural, hybrid)) => {
                entries.push(IndexEntry {
                    pair: pair.clone(),
                    semantic,
                    structural,
                    hybrid,
                });
                report.indexed += 1;
            }
            Err(Error::EmptyInput) => {
                report
                    .skipped
                    .push((pair.id.clone(), "empty buggy_code".into()));
            }
            Err(other) => return Err(other),
        }
    }

    if entries.is_empty() {
        return Err(Error::IndexEmpty(
            "all pairs were skipped during indexing".into(),
        ));
    }
    Ok((
        CodebaseIndex {
            entries,
            embedder: embedder.spec().clone(),
            mode,
        },
        report,
    ))
}

fn embed_pair(
    pair: &BugFixPair,
    embedder: &Embedder,
) -> Result<(FeatureVector, FeatureVector, FeatureVector)> {
    let semantic = embedder.embed_code(&pair.buggy_code)?;
    let tree = parse_source(&pair.buggy_code, &pair.language)?;
    let structural = embedder.embed_ast(&ast_traversal(&tree))?;
    let hybrid = hybrid_vector(&semantic, &structural)?;
    Ok((semantic, structural, hybrid))
}

/// Cosine similarity of two vectors: dot product over the product of norms.
///
/// The result is clamped into `[-1, 1]` to absorb rounding.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(-1.0, 1.0))
}

/// Selection gate configuration: similarity threshold plus prompt budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Admission threshold; comparison is strictly greater-than. `-1`
    /// admits everything ("no threshold").
    pub threshold: f64,
    /// Token budget for the whole assembled prompt, target included.
    pub max_context_tokens: usize,
    /// Upper bound on admitted pairs.
    pub max_pairs: usize,
}

impl GateConfig {
    pub fn new(threshold: f64, max_context_tokens: usize, max_pairs: usize) -> Self {
        GateConfig {
            threshold,
            max_context_tokens,
            max_pairs,
        }
    }

    /// Default gate for short-code corpora (methods under ~50 tokens).
    pub fn short_code() -> Self {
        GateConfig::new(0.9, 512, 10)
    }

    /// Default gate for medium-length corpora (~50–100 token methods).
    pub fn medium_code() -> Self {
        GateConfig::new(0.8, 1024, 10)
    }

    /// Default gate for long-function corpora.
    pub fn long_code() -> Self {
        GateConfig::new(0.8, 1500, 10)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "gate threshold {} outside [-1, 1]",
                self.threshold
            )));
        }
        if self.max_context_tokens == 0 {
            return Err(Error::Config("max_context_tokens must be >= 1".into()));
        }
        if self.max_pairs == 0 {
            return Err(Error::Config("max_pairs must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig::short_code()
    }
}

/// A gate-admitted pair with its similarity score.
#[derive(Debug, Clone, Serialize)]
pub struct ScoredPair {
    pub pair: BugFixPair,
    pub similarity: f64,
}

/// Gate output: admitted pairs in descending similarity order.
#[derive(Debug, Clone, Serialize)]
pub struct RetrievedContext {
    pub selected: Vec<ScoredPair>,
    pub candidates_considered: usize,
}

/// Embed the target according to the index's retrieval mode.
pub fn target_vector(index: &CodebaseIndex, target_buggy_code: &str) -> Result<FeatureVector> {
    let language = index
        .language()
        .ok_or_else(|| Error::IndexEmpty("index has no entries".into()))?;
    let embedder = Embedder::new(index.embedder.clone())?;
    let semantic = || embedder.embed_code(target_buggy_code);
    let structural = || {
        let tree = parse_source(target_buggy_code, language)?;
        embedder.embed_ast(&ast_traversal(&tree))
    };
    let vector = match index.mode {
        RetrievalMode::SemanticOnly => semantic()?,
        RetrievalMode::StructuralOnly => structural()?,
        RetrievalMode::Hybrid => hybrid_vector(&semantic()?, &structural()?)?,
    };
    if vector.is_zero() {
        return Err(Error::ZeroVector);
    }
    Ok(vector)
}

/// Retrieve gate-admitted pairs for a target buggy code.
///
/// Scans all entries exactly, admits similarity strictly greater than the
/// threshold, orders by similarity descending with ascending-id tie-break,
/// then greedily packs pairs while the full assembled prompt stays within
/// the token budget; an overflowing pair is skipped and packing continues.
pub fn retrieve(
    index: &CodebaseIndex,
    target_buggy_code: &str,
    gate: &GateConfig,
    tokenizer: &TokenizerHandle,
) -> Result<RetrievedContext> {
    let vector = target_vector(index, target_buggy_code)?;
    retrieve_with_vector(index, &vector, target_buggy_code, gate, tokenizer)
}

/// [`retrieve`] with a precomputed target vector.
///
/// Lets callers reuse one embedding across threshold sweeps, and tests pin
/// exact similarity values.
pub fn retrieve_with_vector(
    index: &CodebaseIndex,
    target: &FeatureVector,
    target_buggy_code: &str,
    gate: &GateConfig,
    tokenizer: &TokenizerHandle,
) -> Result<RetrievedContext> {
    gate.validate()?;
    if index.is_empty() {
        return Err(Error::IndexEmpty("index has no entries".into()));
    }

    let mut admitted: Vec<(&IndexEntry, f64)> = Vec::new();
    for entry in &index.entries {
        let similarity = cosine_similarity(target, entry.vector_for(index.mode))?;
        if similarity > gate.threshold {
            admitted.push((entry, similarity));
        }
    }
    admitted.sort_by(|(ea, sa), (eb, sb)| {
        sb.partial_cmp(sa)
            .expect("similarities are finite")
            .then_with(|| ea.pair.id.cmp(&eb.pair.id))
    });

    let mut chosen: Vec<(&IndexEntry, f64)> = Vec::new();
    for (entry, similarity) in admitted {
        if chosen.len() >= gate.max_pairs {
            break;
        }
        if has_marker_collision(&entry.pair.buggy_code)
            || has_marker_collision(&entry.pair.fixed_code)
        {
            log::warn!(
                "pair `{}` contains a marker literal and was rejected by the gate",
                entry.pair.id
            );
            continue;
        }
        let mut parts: Vec<(&str, &str)> = chosen
            .iter()
            .map(|(e, _)| (e.pair.buggy_code.as_str(), e.pair.fixed_code.as_str()))
            .collect();
        parts.push((&entry.pair.buggy_code, &entry.pair.fixed_code));
        let text = assemble_text(&parts, target_buggy_code);
        if tokenizer.count(&text) <= gate.max_context_tokens {
            chosen.push((entry, similarity));
        }
    }

    Ok(RetrievedContext {
        selected: chosen
            .into_iter()
            .map(|(entry, similarity)| ScoredPair {
                pair: entry.pair.clone(),
                similarity,
            })
            .collect(),
        candidates_considered: index.len(),
    })
}

/// Test oracle: naive full ranking by explicit scalar loops.
///
/// Independent of the retrieval path; its pre-gate ordering must equal
/// [`retrieve`]'s.
pub fn brute_force_topk(
    index: &CodebaseIndex,
    target_buggy_code: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let target = target_vector(index, target_buggy_code)?;
    let mut scored: Vec<(String, f64)> = Vec::new();
    for entry in &index.entries {
        let stored = entry.vector_for(index.mode);
        if stored.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                actual: stored.dim(),
            });
        }
        let a = target.as_slice();
        let b = stored.as_slice();
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if na == 0.0 || nb == 0.0 {
            return Err(Error::ZeroVector);
        }
        scored.push((entry.pair.id.clone(), dot / (na.sqrt() * nb.sqrt())));
    }
    scored.sort_by(|(ida, sa), (idb, sb)| {
        sb.partial_cmp(sa)
            .expect("similarities are finite")
            .then_with(|| ida.cmp(idb))
    });
    scored.truncate(k);
    Ok(scored)
}
