use std::collections::BTreeMap;

use serde_json::{json, Value as Json};

use super::{ReasonCode, Reasoner, ReasonerError, ReasonerRequest, ReasonerVerdict, RequestKind};
use crate::corpus::parse_expr;
use crate::eval::{eval, EvalError, Sym, Value};

/// Deterministic backend built from the same checks the validators apply.
///
/// Payload shapes it understands:
/// - `EnhanceProposal`: `{hint_line, proposal: {anchor, line, falls_through}}`
/// - `MergeVerdict`: `{sequence: <LogSequence>}`
/// - `ParamSimulation`: `{constraints: [expr], domains: {var: [value]}}`
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleEngine;

pub const RULE_BACKEND: &str = "rule-engine";

impl RuleEngine {
    pub fn answer(&self, req: &ReasonerRequest) -> ReasonerVerdict {
        match req.kind {
            RequestKind::EnhanceProposal => enhance_proposal(&req.payload),
            RequestKind::MergeVerdict => merge_verdict(&req.payload),
            RequestKind::ParamSimulation => param_simulation(&req.payload),
        }
    }
}

impl Reasoner for RuleEngine {
    fn infer(&self, req: &ReasonerRequest) -> Result<ReasonerVerdict, ReasonerError> {
        Ok(self.answer(req))
    }

    fn backend(&self) -> &str {
        RULE_BACKEND
    }
}

fn enhance_proposal(p: &Json) -> ReasonerVerdict {
    let proposal = &p["proposal"];
    let legal = proposal["falls_through"].as_bool() == Some(true)
        && proposal["line"].as_u64().is_some()
        && proposal["line"] == p["hint_line"];
    if legal {
        let mut v = ReasonerVerdict::accept(RULE_BACKEND)
            .with_trace("anchor is a fall-through statement on the hinted call line");
        v.bindings.insert("anchor".into(), proposal["anchor"].clone());
        v
    } else {
        ReasonerVerdict::reject(RULE_BACKEND, vec![ReasonCode::MissingCallLink])
            .with_trace("anchor does not fall through or is off the hinted line")
    }
}

#[derive(serde::Deserialize)]
struct SequenceView {
    events: Vec<crate::merge::LogEvent>,
    context: crate::merge::ExecutionContext,
}

fn merge_verdict(p: &Json) -> ReasonerVerdict {
    let seq: SequenceView = match serde_json::from_value(p["sequence"].clone()) {
        Ok(s) => s,
        Err(e) => {
            return ReasonerVerdict::reject(RULE_BACKEND, vec![ReasonCode::ControlFlowConflict])
                .with_trace(format!("malformed sequence: {e}"))
        }
    };
    match crate::merge::check_sequence(&seq.events, &seq.context) {
        Ok(()) => ReasonerVerdict::accept(RULE_BACKEND).with_trace("brackets, definitions and conditions hold"),
        Err((code, why)) => ReasonerVerdict::reject(RULE_BACKEND, vec![code]).with_trace(why),
    }
}

fn param_simulation(p: &Json) -> ReasonerVerdict {
    let constraints: Vec<_> = p["constraints"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|c| c.as_str().and_then(|s| parse_expr(s).ok()))
        .collect();
    let domains: BTreeMap<String, Vec<Value>> = p["domains"]
        .as_object()
        .map(|m| {
            m.iter()
                .map(|(k, v)| (k.clone(), serde_json::from_value(v.clone()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    let names: Vec<&String> = domains.keys().collect();
    let sizes: Vec<usize> = domains.values().map(Vec::len).collect();
    if sizes.contains(&0) {
        return ReasonerVerdict::reject(RULE_BACKEND, vec![ReasonCode::ConditionConflict])
            .with_trace("empty domain");
    }
    let total: usize = sizes.iter().product();
    for mut idx in 0..total {
        let mut env = BTreeMap::new();
        for (i, name) in names.iter().enumerate().rev() {
            let v = domains[*name][idx % sizes[i]].clone();
            idx /= sizes[i];
            env.insert((*name).clone(), Sym::Known(v));
        }
        let ok = constraints.iter().all(|c| match eval(c, &env) {
            Ok(Sym::Known(Value::Bool(b))) => b,
            // atoms over variables we were not given cannot be refuted here
            Err(EvalError::Undefined(_)) | Ok(Sym::Unknown) => true,
            _ => false,
        });
        if ok {
            let mut v = ReasonerVerdict::accept(RULE_BACKEND)
                .with_trace("first assignment in domain order satisfying every constraint");
            for (k, s) in env {
                if let Sym::Known(val) = s {
                    v.bindings.insert(k, json!(val));
                }
            }
            return v;
        }
    }
    ReasonerVerdict::reject(RULE_BACKEND, vec![ReasonCode::ConditionConflict])
        .with_trace("no assignment in the declared domains satisfies the constraints")
}
