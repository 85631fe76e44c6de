//! Patch generation backends.
//!
//! Decoding happens behind a backend: an HTTP service fronting a fine-tuned
//! model in production, and deterministic mock/fixture backends for tests
//! and offline runs. Candidate post-processing (stop-marker truncation,
//! trimming, ranking) is shared across backends.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::prompt::{assemble_prompt, parse_prompt, RepairPrompt, TokenizerHandle, BUG_MARKER};
use crate::retrieval::{retrieve, CodebaseIndex, GateConfig, RetrievedContext};

/// A prompt plus decoding parameters.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: RepairPrompt,
    /// Beam size: how many ranked candidates to request.
    pub num_candidates: usize,
    pub max_new_tokens: usize,
    /// Candidate text is truncated at the first occurrence of this marker,
    /// so a model that starts a new pair after its fix is cut off cleanly.
    pub stop_marker: String,
}

impl GenerationRequest {
    pub fn new(prompt: RepairPrompt) -> Self {
        GenerationRequest {
            prompt,
            num_candidates: 1,
            max_new_tokens: 512,
            stop_marker: BUG_MARKER.to_string(),
        }
    }

    pub fn with_candidates(mut self, num_candidates: usize) -> Self {
        self.num_candidates = num_candidates;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.num_candidates == 0 {
            return Err(Error::Config("num_candidates must be >= 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// One generated patch; rank 1 is the backend's best candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatchCandidate {
    pub text: String,
    pub rank: usize,
    pub backend_score: Option<f64>,
}

/// Truncate at the stop marker and trim surrounding whitespace.
pub fn postprocess_candidate(text: &str, stop_marker: &str) -> String {
    let cut = match text.find(stop_marker) {
        Some(pos) => &text[..pos],
        None => text,
    };
    cut.trim().to_string()
}

fn finalize(raw: Vec<(String, Option<f64>)>, req: &GenerationRequest) -> Vec<PatchCandidate> {
    raw.into_iter()
        .take(req.num_candidates)
        .enumerate()
        .map(|(i, (text, score))| PatchCandidate {
            text: postprocess_candidate(&text, &req.stop_marker),
            rank: i + 1,
            backend_score: score,
        })
        .collect()
}

/// A patch generation backend. Implementations must be safe to share
/// across worker threads.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<PatchCandidate>>;

    fn name(&self) -> &str;
}

/// Mock backend returning one fixed text for every prompt.
pub struct ConstantBackend {
    pub text: String,
}

impl ConstantBackend {
    pub fn new(text: impl Into<String>) -> Self {
        ConstantBackend { text: text.into() }
    }
}

impl GenerationBackend for ConstantBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<PatchCandidate>> {
        req.validate()?;
        Ok(finalize(vec![(self.text.clone(), None)], req))
    }

    fn name(&self) -> &str {
        "constant"
    }
}

/// Recorded-fixture backend: maps a prompt text to its ordered candidates.
pub struct FixtureBackend {
    fixtures: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct FixtureRow {
    prompt: String,
    candidates: Vec<String>,
}

impl FixtureBackend {
    pub fn new(fixtures: BTreeMap<String, Vec<String>>) -> Self {
        FixtureBackend { fixtures }
    }

    /// Load fixtures from JSONL rows `{"prompt": …, "candidates": […]}`.
    pub fn from_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|_| Error::FileNotFound(path.display().to_string()))?;
        let mut fixtures = BTreeMap::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() {
                continue;
            }
            let row: FixtureRow = serde_json::from_str(trimmed)
                .map_err(|e| Error::BackendContract(format!("fixture row: {e}")))?;
            fixtures.insert(row.prompt, row.candidates);
        }
        Ok(FixtureBackend { fixtures })
    }
}

impl GenerationBackend for FixtureBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<PatchCandidate>> {
        req.validate()?;
        let texts = self.fixtures.get(&req.prompt.text).ok_or_else(|| {
            Error::BackendContract("no fixture recorded for this prompt".into())
        })?;
        Ok(finalize(
            texts.iter().map(|t| (t.clone(), None)).collect(),
            req,
        ))
    }

    fn name(&self) -> &str {
        "fixture"
    }
}

/// Oracle backend that answers with the known fix for the prompt's target.
///
/// The target is recovered from the prompt's final `[BUG] … [FIX]` segment
/// and looked up in a buggy-code → fixed-code map; useful for end-to-end
/// sanity runs where the harness should score a perfect repair.
pub struct EchoBackend {
    fixes: BTreeMap<String, String>,
}

impl EchoBackend {
    pub fn new(fixes: BTreeMap<String, String>) -> Self {
        EchoBackend { fixes }
    }
}

impl GenerationBackend for EchoBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<PatchCandidate>> {
        req.validate()?;
        let (_, target) = parse_prompt(&req.prompt.text).ok_or_else(|| {
            Error::BackendContract("prompt does not match the [BUG]/[FIX] grammar".into())
        })?;
        let fix = self.fixes.get(&target).ok_or_else(|| {
            Error::BackendContract("no recorded fix for the prompt's target".into())
        })?;
        Ok(finalize(vec![(fix.clone(), None)], req))
    }

    fn name(&self) -> &str {
        "echo"
    }
}

#[derive(Serialize)]
struct GenerateRequestBody<'a> {
    prompt: &'a str,
    num_candidates: usize,
    max_new_tokens: usize,
}

#[derive(Deserialize)]
struct GenerateResponseBody {
    candidates: Vec<GenerateResponseCandidate>,
}

#[derive(Deserialize)]
struct GenerateResponseCandidate {
    text: String,
    #[serde(default)]
    score: Option<f64>,
}

const GENERATE_ATTEMPTS: u32 = 4;
const DEFAULT_GEN_IN_FLIGHT: usize = 4;

/// HTTP backend speaking the `POST <endpoint>/generate` contract.
pub struct HttpGenerationBackend {
    endpoint: String,
    client: reqwest::blocking::Client,
    in_flight: InFlightLimit,
}

impl HttpGenerationBackend {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        Ok(HttpGenerationBackend {
            endpoint: endpoint.into(),
            client,
            in_flight: InFlightLimit::new(DEFAULT_GEN_IN_FLIGHT),
        })
    }

    fn call_once(&self, url: &str, req: &GenerationRequest) -> Result<Vec<(String, Option<f64>)>> {
        let body = GenerateRequestBody {
            prompt: &req.prompt.text,
            num_candidates: req.num_candidates,
            max_new_tokens: req.max_new_tokens,
        };
        let response = self
            .client
            .post(url)
            .json(&body)
            .send()
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(Error::BackendUnavailable(format!(
                "status {}",
                response.status()
            )));
        }
        let parsed: GenerateResponseBody = response
            .json()
            .map_err(|e| Error::BackendContract(format!("malformed response: {e}")))?;
        Ok(parsed
            .candidates
            .into_iter()
            .map(|c| (c.text, c.score))
            .collect())
    }
}

impl GenerationBackend for HttpGenerationBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<PatchCandidate>> {
        req.validate()?;
        let _slot = self.in_flight.acquire();
        let url = format!("{}/generate", self.endpoint.trim_end_matches('/'));
        let mut last_err = String::new();
        for attempt in 0..GENERATE_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << (attempt - 1)));
            }
            match self.call_once(&url, req) {
                Ok(raw) => return Ok(finalize(raw, req)),
                Err(Error::BackendUnavailable(msg)) => last_err = msg,
                Err(other) => return Err(other),
            }
        }
        Err(Error::BackendUnavailable(format!(
            "{url}: {last_err} (after {GENERATE_ATTEMPTS} attempts)"
        )))
    }

    fn name(&self) -> &str {
        "http"
    }
}

/// Bounds concurrent backend calls.
struct InFlightLimit {
    slots: Mutex<usize>,
    freed: Condvar,
}

struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    fn new(slots: usize) -> Self {
        InFlightLimit {
            slots: Mutex::new(slots),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut slots = self.slots.lock().expect("limit poisoned");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("limit poisoned");
        }
        *slots -= 1;
        InFlightGuard { limit: self }
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut slots = self.limit.slots.lock().expect("limit poisoned");
        *slots += 1;
        self.limit.freed.notify_one();
    }
}

/// Everything produced while repairing one target, kept for audit.
#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub candidates: Vec<PatchCandidate>,
    pub context: RetrievedContext,
    pub prompt: RepairPrompt,
}

/// Retrieve, assemble the prompt, and generate candidates for one target.
///
/// Errors are tagged with the stage they came from.
pub fn repair_one(
    target: &str,
    index: &CodebaseIndex,
    gate: &GateConfig,
    tokenizer: &TokenizerHandle,
    backend: &dyn GenerationBackend,
    num_candidates: usize,
) -> Result<RepairOutcome> {
    let context =
        retrieve(index, target, gate, tokenizer).map_err(|e| e.at_stage(Stage::Retrieve))?;
    let prompt =
        assemble_prompt(&context, target, tokenizer).map_err(|e| e.at_stage(Stage::Prompt))?;
    let request = GenerationRequest::new(prompt.clone()).with_candidates(num_candidates);
    let candidates = backend
        .generate(&request)
        .map_err(|e| e.at_stage(Stage::Generate))?;
    Ok(RepairOutcome {
        candidates,
        context,
        prompt,
    })
}

/// [`repair_one`] against a persisted index file.
pub fn repair_one_at(
    index_path: &Path,
    target: &str,
    gate: &GateConfig,
    tokenizer: &TokenizerHandle,
    backend: &dyn GenerationBackend,
    num_candidates: usize,
) -> Result<RepairOutcome> {
    let index =
        crate::retrieval::load_index(index_path).map_err(|e| e.at_stage(Stage::Index))?;
    repair_one(target, &index, gate, tokenizer, backend, num_candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Embedder;
    use crate::retrieval::{build_index, BugFixPair, RetrievalMode};

    fn prompt_for(target: &str) -> RepairPrompt {
        RepairPrompt {
            text: format!("[BUG] {target} [FIX]"),
            token_count: 3,
            pairs_included: 0,
        }
    }

    fn small_index() -> CodebaseIndex {
        let pairs: Vec<BugFixPair> = (0..4)
            .map(|i| BugFixPair {
                id: format!("p{i}"),
                buggy_code: format!("int value{i} = {i} ;"),
                fixed_code: format!("int value{i} = {} ;", i + 1),
                language: "java".to_string(),
            })
            .collect();
        let embedder = Embedder::baseline();
        build_index(&pairs, &embedder, RetrievalMode::Hybrid).unwrap().0
    }

    #[test]
    fn constant_backend_echoes_one_candidate() {
        let backend = ConstantBackend::new("FIXED");
        let req = GenerationRequest::new(prompt_for("bc"));
        let out = backend.generate(&req).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "FIXED");
        assert_eq!(out[0].rank, 1);
    }

    #[test]
    fn stop_marker_truncates_candidate_text() {
        let backend = ConstantBackend::new("fix code [BUG] trailing junk");
        let req = GenerationRequest::new(prompt_for("bc"));
        let out = backend.generate(&req).unwrap();
        assert_eq!(out[0].text, "fix code");
    }

    #[test]
    fn fixture_backend_returns_ranked_candidates_in_order() {
        let prompt = prompt_for("bc");
        let texts: Vec<String> = (1..=10).map(|i| format!("candidate {i}")).collect();
        let mut fixtures = BTreeMap::new();
        fixtures.insert(prompt.text.clone(), texts.clone());
        let backend = FixtureBackend::new(fixtures);
        let req = GenerationRequest::new(prompt).with_candidates(10);
        let out = backend.generate(&req).unwrap();
        assert_eq!(out.len(), 10);
        for (i, candidate) in out.iter().enumerate() {
            assert_eq!(candidate.rank, i + 1);
            assert_eq!(candidate.text, texts[i]);
        }
    }

    #[test]
    fn generate_never_exceeds_num_candidates() {
        let prompt = prompt_for("bc");
        let mut fixtures = BTreeMap::new();
        fixtures.insert(
            prompt.text.clone(),
            (0..10).map(|i| format!("c{i}")).collect(),
        );
        let backend = FixtureBackend::new(fixtures);
        let req = GenerationRequest::new(prompt).with_candidates(3);
        assert_eq!(backend.generate(&req).unwrap().len(), 3);
    }

    #[test]
    fn echo_backend_recovers_the_target_fix() {
        let mut fixes = BTreeMap::new();
        fixes.insert("int x = 0 ;".to_string(), "int x = 1 ;".to_string());
        let backend = EchoBackend::new(fixes);
        let req = GenerationRequest::new(prompt_for("int x = 0 ;"));
        let out = backend.generate(&req).unwrap();
        assert_eq!(out[0].text, "int x = 1 ;");
    }

    #[test]
    fn repair_one_smoke_with_mock_backend() {
        let index = small_index();
        let backend = ConstantBackend::new("int value0 = 1 ;");
        let outcome = repair_one(
            "int value0 = 0 ;",
            &index,
            &GateConfig::new(-1.0, 4096, 10),
            &TokenizerHandle::whitespace(),
            &backend,
            1,
        )
        .unwrap();
        assert_eq!(outcome.candidates.len(), 1);
        assert!(outcome.prompt.text.ends_with("[FIX]"));
        assert_eq!(outcome.context.candidates_considered, index.len());
    }

    #[test]
    fn self_similar_target_ranks_first_in_audit_context() {
        let index = small_index();
        let target = index.entries[2].pair.buggy_code.clone();
        let backend = ConstantBackend::new("fix");
        let outcome = repair_one(
            &target,
            &index,
            &GateConfig::new(-1.0, 4096, 10),
            &TokenizerHandle::whitespace(),
            &backend,
            1,
        )
        .unwrap();
        assert_eq!(outcome.context.selected[0].pair.id, "p2");
        assert!((outcome.context.selected[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_index_file_is_stage_tagged() {
        let backend = ConstantBackend::new("fix");
        let err = repair_one_at(
            Path::new("/nonexistent/dir/codebase.idx"),
            "int x ;",
            &GateConfig::default(),
            &TokenizerHandle::whitespace(),
            &backend,
            1,
        )
        .unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Index));
        assert!(matches!(
            err,
            Error::Stage { source, .. } if matches!(*source, Error::IndexMissing(_))
        ));
    }

    #[test]
    fn deterministic_with_mock_backend_and_baseline_embedder() {
        let index = small_index();
        let backend = ConstantBackend::new("fix");
        let run = || {
            repair_one(
                "int value1 = 1 ;",
                &index,
                &GateConfig::new(0.5, 512, 10),
                &TokenizerHandle::whitespace(),
                &backend,
                1,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.prompt, b.prompt);
    }
}
