//! Code-only prompt assembly with exact token accounting.
//!
//! A repair prompt is the marker-delimited concatenation
//! `[BUG] RBC1 [FIX] RFC1 … [BUG] BC [FIX]`: retrieved pairs in similarity
//! order, then the target buggy code, always terminated by `[FIX]`. No
//! natural-language instructions are ever added.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::retrieval::{retrieve, CodebaseIndex, GateConfig, RetrievedContext};

pub const BUG_MARKER: &str = "[BUG]";
pub const FIX_MARKER: &str = "[FIX]";

/// Counts tokens for gate accounting. Implementations must be deterministic.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace splitting; the space-delimited `[BUG]` / `[FIX]` markers count
/// as exactly one token each.
pub struct WhitespaceTokenizer;

impl TokenCounter for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Shareable tokenizer handle.
///
/// Counting is only ever applied to the full assembled string, never by
/// summing the counts of parts, so boundary effects of a backend-provided
/// tokenizer cannot skew the accounting.
#[derive(Clone)]
pub struct TokenizerHandle {
    kind: String,
    counter: Arc<dyn TokenCounter>,
}

impl TokenizerHandle {
    pub fn whitespace() -> Self {
        TokenizerHandle {
            kind: "whitespace".to_string(),
            counter: Arc::new(WhitespaceTokenizer),
        }
    }

    /// Swap in a backend-provided counter.
    pub fn custom(kind: impl Into<String>, counter: Arc<dyn TokenCounter>) -> Self {
        TokenizerHandle {
            kind: kind.into(),
            counter,
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn count(&self, text: &str) -> usize {
        self.counter.count(text)
    }
}

impl std::fmt::Debug for TokenizerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TokenizerHandle")
            .field("kind", &self.kind)
            .finish()
    }
}

/// An assembled prompt ready for a generation backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RepairPrompt {
    pub text: String,
    pub token_count: usize,
    pub pairs_included: usize,
}

/// True when the code contains a marker literal and would break the
/// prompt's unambiguous structure.
pub fn has_marker_collision(code: &str) -> bool {
    code.contains(BUG_MARKER) || code.contains(FIX_MARKER)
}

/// The raw prompt grammar over already-selected pair texts.
///
/// `("[BUG] " rbc " [FIX] " rfc " ")*` followed by `"[BUG] " target " [FIX]"`.
pub(crate) fn assemble_text(pairs: &[(&str, &str)], target: &str) -> String {
    let mut text = String::new();
    for (buggy, fixed) in pairs {
        text.push_str(BUG_MARKER);
        text.push(' ');
        text.push_str(buggy);
        text.push(' ');
        text.push_str(FIX_MARKER);
        text.push(' ');
        text.push_str(fixed);
        text.push(' ');
    }
    text.push_str(BUG_MARKER);
    text.push(' ');
    text.push_str(target);
    text.push(' ');
    text.push_str(FIX_MARKER);
    text
}

/// Assemble the prompt for a retrieved context and target buggy code.
///
/// Pairs are serialized in context order. A pair whose code contains a
/// marker literal is rejected with a warning so the prompt stays
/// unambiguous; the target itself is always kept.
pub fn assemble_prompt(
    context: &RetrievedContext,
    target: &str,
    tokenizer: &TokenizerHandle,
) -> Result<RepairPrompt> {
    if target.trim().is_empty() {
        return Err(Error::EmptyTarget);
    }
    if has_marker_collision(target) {
        log::warn!("target code contains a marker literal; prompt round-trip is not guaranteed");
    }
    let mut pairs: Vec<(&str, &str)> = Vec::with_capacity(context.selected.len());
    for scored in &context.selected {
        let pair = &scored.pair;
        if has_marker_collision(&pair.buggy_code) || has_marker_collision(&pair.fixed_code) {
            log::warn!(
                "pair `{}` contains a marker literal and was rejected from the prompt",
                pair.id
            );
            continue;
        }
        pairs.push((&pair.buggy_code, &pair.fixed_code));
    }
    let text = assemble_text(&pairs, target);
    let token_count = tokenizer.count(&text);
    Ok(RepairPrompt {
        text,
        token_count,
        pairs_included: pairs.len(),
    })
}

/// Split a prompt back into its `(buggy, fixed)` pairs and target.
///
/// Exact inverse of [`assemble_prompt`] whenever no code segment contains a
/// marker literal. Returns `None` when the text does not match the grammar.
pub fn parse_prompt(text: &str) -> Option<(Vec<(String, String)>, String)> {
    let bug_sep = format!("{BUG_MARKER} ");
    let fix_sep = format!(" {FIX_MARKER} ");
    let mut segments = text.split(&bug_sep);
    if !segments.next()?.is_empty() {
        return None;
    }
    let segments: Vec<&str> = segments.collect();
    let (last, middle) = segments.split_last()?;
    let target = last.strip_suffix(&format!(" {FIX_MARKER}"))?;
    let mut pairs = Vec::with_capacity(middle.len());
    for segment in middle {
        let (buggy, rest) = segment.split_once(&fix_sep)?;
        let fixed = rest.strip_suffix(' ')?;
        pairs.push((buggy.to_string(), fixed.to_string()));
    }
    Some((pairs, target.to_string()))
}

/// One exported fine-tuning row, or the reason a sample was skipped.
#[derive(Debug, Clone)]
pub enum ExportRecord {
    Sample {
        prompt: RepairPrompt,
        completion: String,
    },
    Skip {
        index: usize,
        reason: String,
    },
}

#[derive(Serialize)]
struct ExportRowJson<'a> {
    prompt: &'a str,
    completion: &'a str,
}

/// Build one `{prompt, completion}` row per `(target, ground_truth_fix)`
/// sample. Per-row retrieval errors become skip records; the stream never
/// aborts.
pub fn export_training_rows(
    dataset: &[(String, String)],
    index: &CodebaseIndex,
    gate: &GateConfig,
    tokenizer: &TokenizerHandle,
) -> Vec<ExportRecord> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, (target, fix))| {
            let row = retrieve(index, target, gate, tokenizer)
                .and_then(|ctx| assemble_prompt(&ctx, target, tokenizer));
            match row {
                Ok(prompt) => ExportRecord::Sample {
                    prompt,
                    completion: fix.clone(),
                },
                Err(e) => ExportRecord::Skip {
                    index: i,
                    reason: e.to_string(),
                },
            }
        })
        .collect()
}

/// Write export records as JSONL; skip records are logged, not emitted.
/// Returns `(samples_written, samples_skipped)`.
pub fn write_export_jsonl<W: std::io::Write>(
    records: &[ExportRecord],
    mut out: W,
) -> Result<(usize, usize)> {
    let mut written = 0;
    let mut skipped = 0;
    for record in records {
        match record {
            ExportRecord::Sample { prompt, completion } => {
                let row = ExportRowJson {
                    prompt: &prompt.text,
                    completion,
                };
                serde_json::to_writer(&mut out, &row)?;
                out.write_all(b"\n")?;
                written += 1;
            }
            ExportRecord::Skip { index, reason } => {
                log::warn!("export skipped sample {index}: {reason}");
                skipped += 1;
            }
        }
    }
    Ok((written, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{BugFixPair, ScoredPair};
    use proptest::prelude::*;

    fn context_of(pairs: &[(&str, &str)]) -> RetrievedContext {
        RetrievedContext {
            selected: pairs
                .iter()
                .enumerate()
                .map(|(i, (b, f))| ScoredPair {
                    pair: BugFixPair {
                        id: format!("p{i}"),
                        buggy_code: b.to_string(),
                        fixed_code: f.to_string(),
                        language: "java".to_string(),
                    },
                    similarity: 0.9,
                })
                .collect(),
            candidates_considered: pairs.len(),
        }
    }

    #[test]
    fn single_pair_prompt_matches_grammar() {
        let ctx = context_of(&[("rbc1", "rfc1")]);
        let prompt = assemble_prompt(&ctx, "bc", &TokenizerHandle::whitespace()).unwrap();
        assert_eq!(prompt.text, "[BUG] rbc1 [FIX] rfc1 [BUG] bc [FIX]");
        assert_eq!(prompt.pairs_included, 1);
        assert_eq!(prompt.token_count, 8);
    }

    #[test]
    fn empty_context_degrades_to_target_only() {
        let ctx = context_of(&[]);
        let prompt = assemble_prompt(&ctx, "bc", &TokenizerHandle::whitespace()).unwrap();
        assert_eq!(prompt.text, "[BUG] bc [FIX]");
        assert_eq!(prompt.pairs_included, 0);
    }

    #[test]
    fn pairs_keep_context_order() {
        let ctx = context_of(&[("first_bug", "first_fix"), ("second_bug", "second_fix")]);
        let prompt = assemble_prompt(&ctx, "bc", &TokenizerHandle::whitespace()).unwrap();
        let a = prompt.text.find("first_bug").unwrap();
        let b = prompt.text.find("second_bug").unwrap();
        assert!(a < b);
        assert!(prompt.text.ends_with(FIX_MARKER));
    }

    #[test]
    fn empty_target_rejected() {
        let ctx = context_of(&[]);
        assert!(matches!(
            assemble_prompt(&ctx, "  \n", &TokenizerHandle::whitespace()),
            Err(Error::EmptyTarget)
        ));
    }

    #[test]
    fn marker_collision_rejects_the_pair() {
        let ctx = context_of(&[("evil [BUG] code", "fix"), ("good", "fix")]);
        let prompt = assemble_prompt(&ctx, "bc", &TokenizerHandle::whitespace()).unwrap();
        assert_eq!(prompt.pairs_included, 1);
        assert!(!prompt.text.contains("evil"));
    }

    #[test]
    fn token_count_tokenizes_the_full_text() {
        let ctx = context_of(&[("int x ;", "int y ;")]);
        let tokenizer = TokenizerHandle::whitespace();
        let prompt = assemble_prompt(&ctx, "int z ;", &tokenizer).unwrap();
        assert_eq!(prompt.token_count, tokenizer.count(&prompt.text));
    }

    #[test]
    fn parse_inverts_assemble() {
        let ctx = context_of(&[("a b", "c d"), ("e", "f")]);
        let prompt = assemble_prompt(&ctx, "target code", &TokenizerHandle::whitespace()).unwrap();
        let (pairs, target) = parse_prompt(&prompt.text).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("a b".to_string(), "c d".to_string()),
                ("e".to_string(), "f".to_string()),
            ]
        );
        assert_eq!(target, "target code");
    }

    proptest! {
        #[test]
        fn round_trip_recovers_pairs_and_target(
            pairs in prop::collection::vec(("[a-z]{1,3}( [a-z]{1,3}){0,3}", "[a-z]{1,3}( [a-z]{1,3}){0,3}"), 0..4),
            target in "[a-z]{1,3}( [a-z]{1,3}){0,3}",
        ) {
            let refs: Vec<(&str, &str)> = pairs.iter().map(|(b, f)| (b.as_str(), f.as_str())).collect();
            let ctx = context_of(&refs);
            let tokenizer = TokenizerHandle::whitespace();
            let prompt = assemble_prompt(&ctx, &target, &tokenizer).unwrap();
            prop_assert!(prompt.text.ends_with(FIX_MARKER));
            let (parsed_pairs, parsed_target) = parse_prompt(&prompt.text).unwrap();
            prop_assert_eq!(parsed_pairs.len(), prompt.pairs_included);
            let expected: Vec<(String, String)> =
                pairs.iter().map(|(b, f)| (b.clone(), f.clone())).collect();
            prop_assert_eq!(parsed_pairs, expected);
            prop_assert_eq!(parsed_target, target);
        }

        #[test]
        fn adding_a_pair_never_shrinks_the_token_count(
            pairs in prop::collection::vec(("[a-z]{1,4}( [a-z]{1,4}){0,4}", "[a-z]{1,4}( [a-z]{1,4}){0,4}"), 1..5),
            target in "[a-z]{1,4}",
        ) {
            let tokenizer = TokenizerHandle::whitespace();
            let refs: Vec<(&str, &str)> = pairs.iter().map(|(b, f)| (b.as_str(), f.as_str())).collect();
            let shorter = assemble_prompt(&context_of(&refs[..refs.len() - 1]), &target, &tokenizer).unwrap();
            let longer = assemble_prompt(&context_of(&refs), &target, &tokenizer).unwrap();
            prop_assert!(longer.token_count >= shorter.token_count);
        }
    }
}
