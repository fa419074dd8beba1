use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::rules::RuleEngine;
use super::{
    validate_verdict, Decision, ReasonCode, Reasoner, ReasonerError, ReasonerRequest,
    ReasonerVerdict, RequestKind,
};

const SYSTEM_PROMPT: &str = include_str!("../../prompts/system.v1.md");
const ENHANCE_PROMPT: &str = include_str!("../../prompts/enhance_proposal.v1.md");
const MERGE_PROMPT: &str = include_str!("../../prompts/merge_verdict.v1.md");
const PARAM_PROMPT: &str = include_str!("../../prompts/param_simulation.v1.md");
pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Chat-completions URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer credential.
    pub credential_env: String,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub requests_per_second: f64,
    pub burst: u32,
    pub max_concurrency: usize,
    /// Answer with the rule engine when the backend is down or keeps
    /// violating the schema.
    pub fallback_to_rules: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            credential_env: "ANOMALYGEN_API_KEY".into(),
            max_retries: 3,
            timeout_secs: 60,
            requests_per_second: 2.0,
            burst: 4,
            max_concurrency: 4,
            fallback_to_rules: true,
        }
    }
}

/// Classic token bucket; `acquire` blocks until a token is available.
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate_per_sec: f64, burst: u32) -> Self {
        let capacity = f64::from(burst.max(1));
        TokenBucket {
            rate: rate_per_sec.max(1e-6),
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().unwrap();
                let now = Instant::now();
                let refill = now.duration_since(s.1).as_secs_f64() * self.rate;
                s.0 = (s.0 + refill).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

struct Gate {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Chat-completion backend with retry, schema validation and rule-engine
/// fallback.
pub struct LlmReasoner {
    config: LlmConfig,
    agent: ureq::Agent,
    bucket: TokenBucket,
    gate: Gate,
    label: String,
}

#[derive(Deserialize)]
struct WireVerdict {
    decision: Decision,
    #[serde(default)]
    reasons: Vec<ReasonCode>,
    #[serde(default)]
    bindings: std::collections::BTreeMap<String, Json>,
    #[serde(default)]
    trace: String,
}

impl LlmReasoner {
    pub fn new(config: LlmConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        LlmReasoner {
            bucket: TokenBucket::new(config.requests_per_second, config.burst),
            gate: Gate {
                cap: config.max_concurrency.max(1),
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
            label: format!("llm:{}@{PROMPT_VERSION}", config.model),
            agent,
            config,
        }
    }

    fn task_prompt(kind: RequestKind) -> &'static str {
        match kind {
            RequestKind::EnhanceProposal => ENHANCE_PROMPT,
            RequestKind::MergeVerdict => MERGE_PROMPT,
            RequestKind::ParamSimulation => PARAM_PROMPT,
        }
    }

    fn body(&self, req: &ReasonerRequest) -> Json {
        let user = format!(
            "{}\nREQUEST: {}",
            Self::task_prompt(req.kind),
            serde_json::to_string(&req.payload).expect("payloads serialize")
        );
        json!({
            "model": self.config.model,
            "temperature": 0,
            "max_tokens": req.budget,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": user},
            ],
        })
    }

    /// One round trip. `Ok(Err(_))` is a schema problem worth retrying.
    fn call_once(&self, req: &ReasonerRequest, key: &str) -> Result<Result<ReasonerVerdict, String>, ReasonerError> {
        self.bucket.acquire();
        let _slot = self.gate.enter();
        let resp = self
            .agent
            .post(&self.config.endpoint)
            .set("Authorization", &format!("Bearer {key}"))
            .send_json(self.body(req));
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                return Ok(Err(format!("HTTP {code}")))
            }
            Err(e) => return Err(ReasonerError::BackendUnavailable(e.to_string())),
        };
        let body: Json = match resp.into_json() {
            Ok(b) => b,
            Err(e) => return Ok(Err(format!("unreadable body: {e}"))),
        };
        let Some(content) = body["choices"][0]["message"]["content"].as_str() else {
            return Ok(Err("response has no message content".into()));
        };
        let wire: WireVerdict = match serde_json::from_str(content) {
            Ok(w) => w,
            Err(e) => return Ok(Err(format!("content is not a verdict: {e}"))),
        };
        let verdict = ReasonerVerdict {
            decision: wire.decision,
            reasons: wire.reasons,
            bindings: wire.bindings,
            raw_trace: wire.trace,
            backend: self.label.clone(),
            fallback: false,
        };
        Ok(validate_verdict(req, &verdict).map(|()| verdict))
    }

    fn fallback(&self, req: &ReasonerRequest, why: &str) -> ReasonerVerdict {
        let mut v = RuleEngine.answer(req);
        v.fallback = true;
        v.raw_trace = format!("[{} fell back: {why}] {}", self.label, v.raw_trace);
        v
    }
}

impl Reasoner for LlmReasoner {
    fn infer(&self, req: &ReasonerRequest) -> Result<ReasonerVerdict, ReasonerError> {
        let key = match std::env::var(&self.config.credential_env) {
            Ok(k) if !k.is_empty() => k,
            _ => {
                let why = format!("credential variable {} is not set", self.config.credential_env);
                return if self.config.fallback_to_rules {
                    Ok(self.fallback(req, &why))
                } else {
                    Err(ReasonerError::BackendUnavailable(why))
                };
            }
        };
        let attempts = self.config.max_retries.max(1);
        let mut last = String::new();
        for _ in 0..attempts {
            match self.call_once(req, &key) {
                Ok(Ok(v)) => return Ok(v),
                Ok(Err(problem)) => last = problem,
                Err(e) if self.config.fallback_to_rules => return Ok(self.fallback(req, &e.to_string())),
                Err(e) => return Err(e),
            }
        }
        if self.config.fallback_to_rules {
            Ok(self.fallback(req, &last))
        } else {
            Err(ReasonerError::SchemaViolation {
                attempts,
                detail: last,
            })
        }
    }

    fn backend(&self) -> &str {
        &self.label
    }
}
