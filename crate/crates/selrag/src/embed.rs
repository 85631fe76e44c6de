//! Feature vectors and the pluggable embedders that produce them.
//!
//! Two embedder kinds exist behind one handle: a remote service speaking the
//! `POST <endpoint>/embed` contract (the production path, fronting a code
//! pre-trained model) and a deterministic baseline — a hashed character
//! 3-gram term-frequency vector, L2-normalized — that lets the whole
//! pipeline run offline with stable results.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ast::AstSequence;
use crate::error::{Error, Result};

/// Fixed-dimension real vector produced by an embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    /// Build a vector, rejecting non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidVector(format!("non-finite entry {bad}")));
        }
        Ok(FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// A zero vector is representable but similarity against it is undefined.
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Multiply every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        FeatureVector::new(self.values.iter().map(|v| v * factor).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    DeterministicBaseline,
    RemoteService,
}

/// Configuration of an embedder; persisted inside index files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub dim: usize,
    pub max_input_tokens: usize,
}

pub const BASELINE_DIM: usize = 256;
pub const DEFAULT_MAX_INPUT_TOKENS: usize = 512;
const REMOTE_ATTEMPTS: u32 = 4; // initial call plus three retries
const DEFAULT_MAX_IN_FLIGHT: usize = 8;

impl EmbedderSpec {
    pub fn baseline() -> Self {
        EmbedderSpec {
            kind: EmbedderKind::DeterministicBaseline,
            endpoint: None,
            dim: BASELINE_DIM,
            max_input_tokens: DEFAULT_MAX_INPUT_TOKENS,
        }
    }

    pub fn remote(endpoint: impl Into<String>, dim: usize) -> Self {
        EmbedderSpec {
            kind: EmbedderKind::RemoteService,
            endpoint: Some(endpoint.into()),
            dim,
            max_input_tokens: DEFAULT_MAX_INPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("embedder dim must be positive".into()));
        }
        if self.max_input_tokens == 0 {
            return Err(Error::Config("max_input_tokens must be positive".into()));
        }
        match (self.kind, &self.endpoint) {
            (EmbedderKind::RemoteService, None) => Err(Error::Config(
                "remote-service embedder requires an endpoint".into(),
            )),
            (EmbedderKind::DeterministicBaseline, Some(_)) => Err(Error::Config(
                "deterministic-baseline embedder takes no endpoint".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Shareable embedder handle; concurrent embed calls are permitted.
pub struct Embedder {
    spec: EmbedderSpec,
    remote: Option<RemoteClient>,
}

impl Embedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self> {
        spec.validate()?;
        let remote = match spec.kind {
            EmbedderKind::RemoteService => Some(RemoteClient::new(
                spec.endpoint.clone().expect("validated endpoint"),
                DEFAULT_MAX_IN_FLIGHT,
            )?),
            EmbedderKind::DeterministicBaseline => None,
        };
        Ok(Embedder { spec, remote })
    }

    pub fn baseline() -> Self {
        Embedder::new(EmbedderSpec::baseline()).expect("baseline spec is valid")
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    /// Embed raw source code (the semantics-retriever input).
    pub fn embed_code(&self, code: &str) -> Result<FeatureVector> {
        if code.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        // Over-long inputs keep their head tokens; within the limit the raw
        // string is embedded untouched.
        let tokens: Vec<&str> = code.split_whitespace().collect();
        if tokens.len() > self.spec.max_input_tokens {
            let truncated = tokens[..self.spec.max_input_tokens].join(" ");
            self.embed_text(&truncated)
        } else {
            self.embed_text(code)
        }
    }

    /// Embed a flattened AST sequence (the structural-retriever input).
    ///
    /// The sequence is joined by single spaces before embedding; sequences
    /// longer than `max_input_tokens` are head-truncated first.
    pub fn embed_ast(&self, seq: &AstSequence) -> Result<FeatureVector> {
        if seq.is_empty() {
            return Err(Error::EmptyInput);
        }
        let text = if seq.len() > self.spec.max_input_tokens {
            seq.tokens[..self.spec.max_input_tokens].join(" ")
        } else {
            seq.joined()
        };
        self.embed_text(&text)
    }

    fn embed_text(&self, text: &str) -> Result<FeatureVector> {
        match self.spec.kind {
            EmbedderKind::DeterministicBaseline => Ok(baseline_embed(text, self.spec.dim)),
            EmbedderKind::RemoteService => self
                .remote
                .as_ref()
                .expect("remote client present for remote kind")
                .embed(text, self.spec.dim),
        }
    }
}

/// Element-wise mean of the semantic and structural vectors.
pub fn hybrid_vector(semantic: &FeatureVector, structural: &FeatureVector) -> Result<FeatureVector> {
    if semantic.dim() != structural.dim() {
        return Err(Error::DimensionMismatch {
            expected: semantic.dim(),
            actual: structural.dim(),
        });
    }
    let values = semantic
        .as_slice()
        .iter()
        .zip(structural.as_slice())
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    FeatureVector::new(values)
}

/// Hashed character 3-gram term-frequency embedding, L2-normalized.
///
/// Pure function of the input bytes: stable across processes and platforms.
/// Inputs shorter than three characters contribute themselves as a single
/// gram so every non-empty input maps to a unit vector.
fn baseline_embed(text: &str, dim: usize) -> FeatureVector {
    let chars: Vec<char> = text.chars().collect();
    let mut counts = vec![0.0f64; dim];
    let mut bump = |gram: &str| {
        let bucket = (fnv1a64(gram.as_bytes()) % dim as u64) as usize;
        counts[bucket] += 1.0;
    };
    if chars.len() < 3 {
        bump(text);
    } else {
        for window in chars.windows(3) {
            bump(&window.iter().collect::<String>());
        }
    }
    let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut counts {
            *v /= norm;
        }
    }
    FeatureVector { values: counts }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

struct RemoteClient {
    endpoint: String,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
}

impl RemoteClient {
    fn new(endpoint: String, max_in_flight: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::ServiceUnavailable(e.to_string()))?;
        Ok(RemoteClient {
            endpoint,
            client,
            in_flight: Semaphore::new(max_in_flight),
        })
    }

    fn embed(&self, text: &str, expected_dim: usize) -> Result<FeatureVector> {
        let _slot = self.in_flight.acquire();
        let url = format!("{}/embed", self.endpoint.trim_end_matches('/'));
        let body = EmbedRequest { texts: vec![text] };

        let mut last_err = String::new();
        for attempt in 0..REMOTE_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << (attempt - 1)));
            }
            match self.try_once(&url, &body, expected_dim) {
                Ok(vector) => return Ok(vector),
                Err(Error::ServiceUnavailable(msg)) => last_err = msg,
                Err(other) => return Err(other),
            }
        }
        Err(Error::ServiceUnavailable(format!(
            "{url}: {last_err} (after {REMOTE_ATTEMPTS} attempts)"
        )))
    }

    fn try_once(
        &self,
        url: &str,
        body: &EmbedRequest<'_>,
        expected_dim: usize,
    ) -> Result<FeatureVector> {
        let response = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| Error::ServiceUnavailable(e.to_string()))?;
        if !response.status().is_success() {
            return Err(Error::ServiceUnavailable(format!(
                "status {}",
                response.status()
            )));
        }
        let parsed: EmbedResponse = response
            .json()
            .map_err(|e| Error::ServiceUnavailable(format!("malformed body: {e}")))?;
        if parsed.dim != expected_dim {
            return Err(Error::DimensionMismatch {
                expected: expected_dim,
                actual: parsed.dim,
            });
        }
        let values = parsed
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| Error::ServiceUnavailable("empty vectors array".into()))?;
        if values.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                expected: expected_dim,
                actual: values.len(),
            });
        }
        FeatureVector::new(values)
            .map_err(|e| Error::ServiceUnavailable(format!("invalid vector: {e}")))
    }
}

/// Counting semaphore bounding in-flight remote requests.
struct Semaphore {
    slots: Mutex<usize>,
    freed: Condvar,
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    fn new(slots: usize) -> Self {
        Semaphore {
            slots: Mutex::new(slots),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut slots = self.slots.lock().expect("semaphore poisoned");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("semaphore poisoned");
        }
        *slots -= 1;
        SemaphoreGuard { sem: self }
    }
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut slots = self.sem.slots.lock().expect("semaphore poisoned");
        *slots += 1;
        self.sem.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn baseline_vectors_are_unit_norm() {
        let embedder = Embedder::baseline();
        let v = embedder.embed_code("int x;").unwrap();
        assert_eq!(v.dim(), BASELINE_DIM);
        assert!((v.l2_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn baseline_is_deterministic() {
        let embedder = Embedder::baseline();
        let a = embedder.embed_code("int x;").unwrap();
        let b = embedder.embed_code("int x;").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_inputs_embed_to_unit_vectors() {
        let embedder = Embedder::baseline();
        let seq = AstSequence {
            tokens: vec!["x".to_string()],
        };
        let v = embedder.embed_ast(&seq).unwrap();
        assert!((v.l2_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn marker_tokens_change_the_vector() {
        let embedder = Embedder::baseline();
        let a = AstSequence {
            tokens: vec!["AST#program#Left".into(), "x".into(), "AST#program#Right".into()],
        };
        let b = AstSequence {
            tokens: vec!["AST#block#Left".into(), "x".into(), "AST#block#Right".into()],
        };
        assert_ne!(embedder.embed_ast(&a).unwrap(), embedder.embed_ast(&b).unwrap());
    }

    #[test]
    fn overlong_sequences_are_head_truncated() {
        let mut spec = EmbedderSpec::baseline();
        spec.max_input_tokens = 4;
        let embedder = Embedder::new(spec).unwrap();
        let long = AstSequence {
            tokens: (0..10).map(|i| format!("tok{i}")).collect(),
        };
        let prefix = AstSequence {
            tokens: long.tokens[..4].to_vec(),
        };
        assert_eq!(
            embedder.embed_ast(&long).unwrap(),
            embedder.embed_ast(&prefix).unwrap()
        );
    }

    #[test]
    fn overlong_code_is_head_truncated() {
        let mut spec = EmbedderSpec::baseline();
        spec.max_input_tokens = 3;
        let embedder = Embedder::new(spec).unwrap();
        let long = "a b c d e f g";
        assert_eq!(
            embedder.embed_code(long).unwrap(),
            embedder.embed_code("a b c").unwrap()
        );
    }

    #[test]
    fn empty_code_rejected() {
        let embedder = Embedder::baseline();
        assert!(matches!(embedder.embed_code("  "), Err(Error::EmptyInput)));
    }

    #[test]
    fn unreachable_service_reports_unavailable() {
        // Nothing listens on this port; all attempts fail fast.
        let spec = EmbedderSpec::remote("http://127.0.0.1:9", BASELINE_DIM);
        let embedder = Embedder::new(spec).unwrap();
        assert!(matches!(
            embedder.embed_code("int x;"),
            Err(Error::ServiceUnavailable(_))
        ));
    }

    #[test]
    fn remote_spec_requires_endpoint() {
        let spec = EmbedderSpec {
            kind: EmbedderKind::RemoteService,
            endpoint: None,
            dim: 8,
            max_input_tokens: 16,
        };
        assert!(matches!(Embedder::new(spec), Err(Error::Config(_))));
    }

    #[test]
    fn hybrid_is_the_elementwise_mean() {
        let a = vector(&[1.0, 0.0]);
        let b = vector(&[0.0, 1.0]);
        assert_eq!(hybrid_vector(&a, &b).unwrap(), vector(&[0.5, 0.5]));

        let v = vector(&[0.25, -0.5, 3.0]);
        assert_eq!(hybrid_vector(&v, &v).unwrap(), v);

        let c = vector(&[2.0, 4.0]);
        let d = vector(&[0.0, -4.0]);
        assert_eq!(hybrid_vector(&c, &d).unwrap(), vector(&[1.0, 0.0]));
    }

    #[test]
    fn hybrid_is_symmetric_and_checks_dims() {
        let a = vector(&[1.0, 2.0, 3.0]);
        let b = vector(&[-1.0, 0.5, 2.0]);
        assert_eq!(hybrid_vector(&a, &b).unwrap(), hybrid_vector(&b, &a).unwrap());
        let short = vector(&[1.0]);
        assert!(matches!(
            hybrid_vector(&a, &short),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_vectors_rejected() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
    }
}
