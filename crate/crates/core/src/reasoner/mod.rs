//! Inference backends behind one interface: a deterministic rule engine and a
//! chat-completion client, plus a request-hash cache.
//!
//! Verdicts are advisory. Callers re-check anything that would mutate a graph
//! or admit a sequence.

mod llm;
mod rules;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use llm::{LlmConfig, LlmReasoner, TokenBucket, PROMPT_VERSION};
pub use rules::RuleEngine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestKind {
    EnhanceProposal,
    MergeVerdict,
    ParamSimulation,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::EnhanceProposal => "EnhanceProposal",
            RequestKind::MergeVerdict => "MergeVerdict",
            RequestKind::ParamSimulation => "ParamSimulation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerRequest {
    pub kind: RequestKind,
    /// Structured context. `serde_json`'s map is ordered, so serialization is
    /// canonical. A `variables` array lists the names bindings may use.
    pub payload: serde_json::Value,
    /// Upper bound on response tokens.
    pub budget: u32,
}

impl ReasonerRequest {
    pub fn new(kind: RequestKind, payload: serde_json::Value) -> Self {
        ReasonerRequest {
            kind,
            payload,
            budget: 1024,
        }
    }

    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn variables(&self) -> Vec<String> {
        self.payload
            .get("variables")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|s| s.as_str().map(String::from)).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonCode {
    ControlFlowConflict,
    DataFlowConflict,
    ConditionConflict,
    UnreachablePath,
    MissingCallLink,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::ControlFlowConflict => "control-flow-conflict",
            ReasonCode::DataFlowConflict => "data-flow-conflict",
            ReasonCode::ConditionConflict => "condition-conflict",
            ReasonCode::UnreachablePath => "unreachable-path",
            ReasonCode::MissingCallLink => "missing-call-link",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerVerdict {
    pub decision: Decision,
    #[serde(default)]
    pub reasons: Vec<ReasonCode>,
    #[serde(default)]
    pub bindings: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub raw_trace: String,
    #[serde(default)]
    pub backend: String,
    /// Set when an LLM answer was replaced by the rule engine's.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

impl ReasonerVerdict {
    pub fn accept(backend: &str) -> Self {
        ReasonerVerdict {
            decision: Decision::Accept,
            reasons: Vec::new(),
            bindings: BTreeMap::new(),
            raw_trace: String::new(),
            backend: backend.to_string(),
            fallback: false,
        }
    }

    pub fn reject(backend: &str, reasons: Vec<ReasonCode>) -> Self {
        ReasonerVerdict {
            decision: Decision::Reject,
            reasons,
            ..Self::accept(backend)
        }
    }

    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }

    pub fn with_trace(mut self, trace: impl Into<String>) -> Self {
        self.raw_trace = trace.into();
        self
    }
}

/// Schema checks every verdict must pass regardless of backend.
pub fn validate_verdict(req: &ReasonerRequest, v: &ReasonerVerdict) -> Result<(), String> {
    if v.decision == Decision::Reject && v.reasons.is_empty() {
        return Err("Reject without reasons".into());
    }
    let vars = req.variables();
    if let Some(bad) = v.bindings.keys().find(|k| !vars.contains(k)) {
        return Err(format!("binding `{bad}` names no request variable"));
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ReasonerError {
    #[error("reasoner backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("reasoner response violated the schema after {attempts} attempts: {detail}")]
    SchemaViolation { attempts: u32, detail: String },
}

pub trait Reasoner: Send + Sync {
    fn infer(&self, req: &ReasonerRequest) -> Result<ReasonerVerdict, ReasonerError>;

    /// Short identifier recorded in dataset provenance.
    fn backend(&self) -> &str;
}

/// Memoizes verdicts by backend and request hash, in memory and optionally on disk.
pub struct CachedReasoner<R> {
    inner: R,
    memory: Mutex<HashMap<String, (String, ReasonerVerdict)>>,
    dir: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: String,
    verdict: ReasonerVerdict,
}

impl<R: Reasoner> CachedReasoner<R> {
    pub fn new(inner: R) -> Self {
        CachedReasoner {
            inner,
            memory: Mutex::new(HashMap::new()),
            dir: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Also persists verdicts as `<hash>.json` under `dir`.
    pub fn with_dir(inner: R, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut c = Self::new(inner);
        c.dir = Some(dir);
        Ok(c)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &R {
        &self.inner
    }

    fn lookup(&self, hash: &str, canonical: &str) -> Option<ReasonerVerdict> {
        if let Some((req, v)) = self.memory.lock().unwrap().get(hash) {
            // a hash collision must never serve a foreign verdict
            if req == canonical {
                return Some(v.clone());
            }
        }
        let path = self.dir.as_ref()?.join(format!("{hash}.json"));
        let entry: CacheEntry = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
        (entry.request == canonical).then_some(entry.verdict)
    }
}

impl<R: Reasoner> Reasoner for CachedReasoner<R> {
    fn infer(&self, req: &ReasonerRequest) -> Result<ReasonerVerdict, ReasonerError> {
        // verdicts from different backends or prompt versions never mix
        let canonical = format!("{}\n{}", self.inner.backend(), req.canonical());
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        if let Some(v) = self.lookup(&hash, &canonical) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let verdict = self.inner.infer(req)?;
        if let Some(dir) = &self.dir {
            let entry = CacheEntry {
                request: canonical.clone(),
                verdict: verdict.clone(),
            };
            // best effort: a failed cache write only costs a recomputation
            let _ = fs::write(
                dir.join(format!("{hash}.json")),
                serde_json::to_string_pretty(&entry).expect("verdicts serialize"),
            );
        }
        self.memory
            .lock()
            .unwrap()
            .insert(hash, (canonical, verdict.clone()));
        Ok(verdict)
    }

    fn backend(&self) -> &str {
        self.inner.backend()
    }
}

impl<T: Reasoner + ?Sized> Reasoner for Box<T> {
    fn infer(&self, req: &ReasonerRequest) -> Result<ReasonerVerdict, ReasonerError> {
        (**self).infer(req)
    }

    fn backend(&self) -> &str {
        (**self).backend()
    }
}

impl<T: Reasoner + ?Sized> Reasoner for std::sync::Arc<T> {
    fn infer(&self, req: &ReasonerRequest) -> Result<ReasonerVerdict, ReasonerError> {
        (**self).infer(req)
    }

    fn backend(&self) -> &str {
        (**self).backend()
    }
}
