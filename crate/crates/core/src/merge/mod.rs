//! Per-method path enumeration and stack-disciplined merging of callee log
//! sequences into their callers, with an authoritative sequence validator.

mod engine;
mod paths;
mod replay;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use engine::{merge_bottom_up, MergeConfig, MergeOutcome, Rejection};
pub use paths::{enumerate_paths, LoopPolicy, MethodPath, PathBudgetExceeded};
pub(crate) use paths::decision_text;
pub(crate) use replay::{product, Death, Replayer};
pub use replay::UNFILLED;

use crate::corpus::{split_fq, Expr, LogKey, LogLevel};
use crate::eval::{Sym, Value};
use crate::lcfg::{EdgeLabel, Lcfg, NodeId, NodeKind, StmtOp};
use crate::reasoner::{ReasonCode, Reasoner, ReasonerRequest, ReasonerVerdict, RequestKind};

/// What a path step does, in replayable form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum StepOp {
    Enter {
        params: Vec<String>,
    },
    Assign {
        var: String,
        value: Expr,
    },
    Branch {
        cond: Expr,
        taken: bool,
    },
    Call {
        target: String,
        args: Vec<Expr>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        assign_to: Option<String>,
        /// Not expanded: result unknown, never throws.
        opaque: bool,
        /// Exception the callee is expected to raise, for exceptional returns.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exception: Option<String>,
    },
    Return {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Expr>,
    },
    Catch {
        var: String,
        exception: String,
    },
    Throw {
        exception: String,
    },
    Log {
        key: LogKey,
        level: LogLevel,
        template: String,
        params: Vec<Expr>,
    },
    Exit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exception: Option<String>,
    },
    Pass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    /// Activation the step runs in; the root is frame 0.
    pub frame: usize,
    pub method: String,
    pub node: NodeId,
    #[serde(flatten)]
    pub op: StepOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSource {
    pub method: String,
    pub node: NodeId,
    pub frame: usize,
    pub key: LogKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub fingerprint: String,
    pub rendered: String,
    pub source: EventSource,
    /// Parameter expression → rendered value.
    pub bindings: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unfilled: bool,
}

/// `<Class:method> [LEVEL]`
pub fn fingerprint(method: &str, level: LogLevel) -> String {
    let (class, name) = split_fq(method);
    format!("<{class}:{name}> [{level}]")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarLink {
    pub variable: String,
    pub frame: usize,
    /// Step index of the defining step.
    pub defined_at: usize,
    /// Step index of the consuming log step.
    pub consumed_at: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionContext {
    pub path: Vec<PathStep>,
    pub variable_chain: Vec<VarLink>,
    /// Domains of the root method's parameters.
    pub inputs: BTreeMap<String, Vec<Value>>,
    /// Root input assignment the rendered messages come from.
    pub witness: BTreeMap<String, Value>,
    /// Parameter domains of every entered method, for conflict classification.
    pub param_domains: BTreeMap<String, BTreeMap<String, Vec<Value>>>,
    /// A log-relevant callee outside the subgraph was left unexpanded.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSequence {
    pub events: Vec<LogEvent>,
    pub context: ExecutionContext,
    /// Branch decisions, caught and escaping exceptions, as `method: atom`.
    pub constraints: Vec<String>,
    pub verdict: ReasonerVerdict,
    pub origin_subgraph: usize,
    pub root: String,
}

impl LogSequence {
    pub fn fingerprints(&self) -> Vec<String> {
        self.events.iter().map(|e| e.fingerprint.clone()).collect()
    }

    pub fn keys(&self) -> Vec<LogKey> {
        self.events.iter().map(|e| e.source.key.clone()).collect()
    }
}

/// Step list for one method path on its own: calls are opaque.
pub fn method_path_steps(lcfg: &Lcfg, path: &MethodPath) -> Vec<PathStep> {
    path.nodes
        .iter()
        .enumerate()
        .map(|(i, &n)| PathStep {
            frame: 0,
            method: lcfg.owner.clone(),
            node: n,
            op: match &lcfg.node(n).kind {
                NodeKind::Call(c) => {
                    let e = &lcfg.edges[path.edges[i]];
                    StepOp::Call {
                        target: c.targets().first().map_or_else(|| c.written.clone(), |t| t.to_string()),
                        args: c.args.clone(),
                        assign_to: c.assign_to.clone(),
                        opaque: true,
                        exception: (e.label == EdgeLabel::Exception).then(|| e.exception.clone()).flatten(),
                    }
                }
                kind => node_op(kind, path.edges.get(i).map(|&e| &lcfg.edges[e])),
            },
        })
        .collect()
}

/// Step operation for any non-call node.
pub(crate) fn node_op(kind: &NodeKind, out: Option<&crate::lcfg::LcfgEdge>) -> StepOp {
    match kind {
        NodeKind::Entry { params } => StepOp::Enter {
            params: params.clone(),
        },
        NodeKind::Exit { exception } => StepOp::Exit {
            exception: exception.clone(),
        },
        NodeKind::Statement(StmtOp::Assign { target, value }) => StepOp::Assign {
            var: target.clone(),
            value: value.clone(),
        },
        NodeKind::Statement(StmtOp::Return { value }) => StepOp::Return {
            value: value.clone(),
        },
        NodeKind::Statement(StmtOp::Marker(_)) => StepOp::Pass,
        NodeKind::Branch { cond } | NodeKind::LoopHead { cond } => StepOp::Branch {
            cond: cond.clone(),
            taken: out.is_some_and(|e| matches!(e.label, EdgeLabel::True | EdgeLabel::LoopBody)),
        },
        NodeKind::Log(l) => StepOp::Log {
            key: l.key.clone(),
            level: l.level,
            template: l.template.clone(),
            params: l.params.clone(),
        },
        NodeKind::Throw { exception } => StepOp::Throw {
            exception: exception.clone(),
        },
        NodeKind::CatchEntry { exception, var } => StepOp::Catch {
            var: var.clone(),
            exception: exception.clone(),
        },
        NodeKind::Call(_) => unreachable!("calls are resolved by the caller"),
    }
}

/// Sorted, deduplicated constraint set of a step list.
pub(crate) fn constraint_set(steps: &[PathStep]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for (i, s) in steps.iter().enumerate() {
        match &s.op {
            StepOp::Branch { cond, taken } => {
                set.insert(format!("{}: {}", s.method, decision_text(cond, *taken)));
            }
            StepOp::Catch { exception, .. } => {
                set.insert(format!("{}: catch {exception}", s.method));
            }
            StepOp::Exit {
                exception: Some(x),
            } if s.frame == 0 && i + 1 == steps.len() => {
                set.insert(format!("{}: throws {x}", s.method));
            }
            _ => {}
        }
    }
    set.into_iter().collect()
}

/// Definition → log-consumption links per frame.
pub(crate) fn variable_chain(steps: &[PathStep]) -> Vec<VarLink> {
    let mut defs: BTreeMap<usize, BTreeMap<String, usize>> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, s) in steps.iter().enumerate() {
        let frame_defs = defs.entry(s.frame).or_default();
        match &s.op {
            StepOp::Enter { params } => {
                for p in params {
                    frame_defs.insert(p.clone(), i);
                }
            }
            StepOp::Assign { var, .. } | StepOp::Catch { var, .. } => {
                frame_defs.insert(var.clone(), i);
            }
            StepOp::Call {
                assign_to: Some(v),
                exception: None,
                ..
            } => {
                frame_defs.insert(v.clone(), i);
            }
            StepOp::Log { params, .. } => {
                let mut seen = BTreeSet::new();
                for var in params.iter().flat_map(Expr::variables) {
                    if let (true, Some(&d)) = (seen.insert(var.clone()), frame_defs.get(&var)) {
                        out.push(VarLink {
                            variable: var,
                            frame: s.frame,
                            defined_at: d,
                            consumed_at: i,
                        });
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn known_domain(values: &[Value]) -> Vec<Sym> {
    values.iter().cloned().map(Sym::Known).collect()
}

const MAX_WORLDS: usize = 1 << 16;

/// Root input worlds for a context, in domain order.
pub(crate) fn context_worlds(ctx: &ExecutionContext) -> Vec<BTreeMap<String, Sym>> {
    let domains: Vec<(String, Vec<Sym>)> = ctx
        .inputs
        .iter()
        .map(|(k, v)| (k.clone(), known_domain(v)))
        .collect();
    product(&domains, MAX_WORLDS).unwrap_or_default()
}

/// Structural and semantic checks every emitted sequence must pass.
///
/// - frames nest: a callee frame opens right after a non-opaque call in the
///   frame on top of the stack and closes before the caller continues
///   (`missing-call-link`);
/// - events are exactly the log steps of the path (`control-flow-conflict`);
/// - some root input survives all branch decisions; if none does, the
///   conflict is `condition-conflict` when one frame's decisions contradict
///   each other on their own and `data-flow-conflict` otherwise;
/// - the witness input reproduces every rendered message.
pub fn check_sequence(events: &[LogEvent], ctx: &ExecutionContext) -> Result<(), (ReasonCode, String)> {
    check_brackets(&ctx.path).map_err(|m| (ReasonCode::MissingCallLink, m))?;
    let logs: Vec<(usize, NodeId, &LogKey, String)> = ctx
        .path
        .iter()
        .filter_map(|s| match &s.op {
            StepOp::Log { key, level, .. } => Some((s.frame, s.node, key, fingerprint(&s.method, *level))),
            _ => None,
        })
        .collect();
    let seen: Vec<(usize, NodeId, &LogKey, String)> = events
        .iter()
        .map(|e| (e.source.frame, e.source.node, &e.source.key, e.fingerprint.clone()))
        .collect();
    if logs != seen {
        return Err((
            ReasonCode::ControlFlowConflict,
            "events are not the log projection of the path".into(),
        ));
    }
    let mut all = Replayer::new(context_worlds(ctx));
    for s in &ctx.path {
        if !all.apply(&s.op) {
            return Err(match all.last_death {
                Some(Death::Undefined) => (
                    ReasonCode::DataFlowConflict,
                    format!("variable read before definition in {}", s.method),
                ),
                _ => classify_conflict(ctx),
            });
        }
    }
    let witness: BTreeMap<String, Sym> = ctx
        .witness
        .iter()
        .map(|(k, v)| (k.clone(), Sym::Known(v.clone())))
        .collect();
    let mut one = Replayer::new(vec![witness]);
    let survived = ctx.path.iter().all(|s| one.apply(&s.op));
    let rendered: Vec<&str> = events.iter().map(|e| e.rendered.as_str()).collect();
    let replayed: Vec<&str> = one
        .worlds
        .first()
        .map(|w| w.rendered.iter().map(|r| r.text.as_str()).collect())
        .unwrap_or_default();
    if !survived || rendered != replayed {
        return Err((
            ReasonCode::DataFlowConflict,
            "witness input does not reproduce the rendered messages".into(),
        ));
    }
    Ok(())
}

fn check_brackets(path: &[PathStep]) -> Result<(), String> {
    let mut stack: Vec<usize> = Vec::new();
    let mut opened = BTreeSet::new();
    let mut awaiting: Option<&str> = None;
    for (i, s) in path.iter().enumerate() {
        if let StepOp::Enter { .. } = s.op {
            let ok_root = i == 0 && stack.is_empty();
            let ok_call = awaiting == Some(s.method.as_str());
            if !(ok_root || ok_call) || !opened.insert(s.frame) {
                return Err(format!("step {i}: frame {} entered without a matching call", s.frame));
            }
            stack.push(s.frame);
            awaiting = None;
            continue;
        }
        if awaiting.is_some() {
            return Err(format!("step {i}: call not followed by callee entry"));
        }
        if stack.last() != Some(&s.frame) {
            return Err(format!("step {i}: runs in frame {} outside its bracket", s.frame));
        }
        match &s.op {
            StepOp::Exit { .. } => {
                stack.pop();
                if stack.is_empty() && i + 1 != path.len() {
                    return Err(format!("step {i}: root exited before the path ended"));
                }
            }
            StepOp::Call {
                opaque: false,
                target,
                ..
            } => awaiting = Some(target.as_str()),
            _ => {}
        }
    }
    if !stack.is_empty() || awaiting.is_some() {
        return Err("path ends inside an open call".into());
    }
    Ok(())
}

/// Replays each frame alone, its parameters ranging over their declared or
/// default domains and nested calls treated as opaque.
pub(crate) fn classify_conflict(ctx: &ExecutionContext) -> (ReasonCode, String) {
    let frames: BTreeSet<usize> = ctx.path.iter().map(|s| s.frame).collect();
    let root_frame = ctx.path.first().map_or(0, |s| s.frame);
    for f in frames {
        let own: Vec<&PathStep> = ctx.path.iter().filter(|s| s.frame == f).collect();
        let Some(&first) = own.first() else { continue };
        let params = match &first.op {
            StepOp::Enter { params } => params.clone(),
            _ => Vec::new(),
        };
        let domains: Vec<(String, Vec<Sym>)> = params
            .iter()
            .map(|p| {
                let d = ctx
                    .param_domains
                    .get(&first.method)
                    .and_then(|m| m.get(p))
                    .or_else(|| (f == root_frame).then(|| ctx.inputs.get(p)).flatten())
                    .map(|v| known_domain(v))
                    .unwrap_or_else(|| vec![Sym::Unknown]);
                (p.clone(), d)
            })
            .collect();
        let Some(worlds) = product(&domains, MAX_WORLDS) else { continue };
        let mut r = Replayer::new(worlds);
        let mut alive = true;
        for s in own {
            let op = match &s.op {
                StepOp::Call {
                    target,
                    args,
                    assign_to,
                    ..
                } => StepOp::Call {
                    target: target.clone(),
                    args: args.clone(),
                    assign_to: assign_to.clone(),
                    opaque: true,
                    exception: None,
                },
                other => other.clone(),
            };
            if !r.apply(&op) {
                alive = false;
                break;
            }
        }
        if !alive && r.last_death == Some(Death::Condition) {
            return (
                ReasonCode::ConditionConflict,
                format!("branch decisions in {} contradict each other", first.method),
            );
        }
    }
    (
        ReasonCode::DataFlowConflict,
        "values flowing between frames rule out the branch decisions".into(),
    )
}

/// Validator first, reasoner second: a structural rejection always wins, and
/// a reasoner rejection of a structurally valid sequence is respected.
pub fn verify_merge(events: &[LogEvent], ctx: &ExecutionContext, reasoner: &dyn Reasoner) -> ReasonerVerdict {
    let structural = check_sequence(events, ctx);
    let req = ReasonerRequest::new(
        RequestKind::MergeVerdict,
        json!({"sequence": {"events": events, "context": ctx}, "variables": []}),
    );
    let advisory = reasoner.infer(&req);
    match (structural, advisory) {
        (Err((code, why)), Ok(v)) => {
            let mut r = ReasonerVerdict::reject(reasoner.backend(), vec![code]).with_trace(why);
            r.fallback = v.fallback;
            r
        }
        (Err((code, why)), Err(e)) => {
            ReasonerVerdict::reject(reasoner.backend(), vec![code]).with_trace(format!("{why}; reasoner: {e}"))
        }
        (Ok(()), Ok(v)) => v,
        (Ok(()), Err(e)) => {
            ReasonerVerdict::accept(reasoner.backend()).with_trace(format!("validator accepted; reasoner: {e}"))
        }
    }
}

/// Drops sequences citing log nodes unknown to `has_log`, then exact
/// duplicates (same fingerprints, constraint set and source statements),
/// keeping first occurrences in input order.
pub fn optimize_sequences(seqs: Vec<LogSequence>, has_log: &dyn Fn(&EventSource) -> bool) -> Vec<LogSequence> {
    let mut seen = BTreeSet::new();
    seqs.into_iter()
        .filter(|s| s.events.iter().all(|e| has_log(&e.source)))
        .filter(|s| seen.insert((s.fingerprints(), s.constraints.clone(), s.keys())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_expr;

    fn step(frame: usize, method: &str, op: StepOp) -> PathStep {
        PathStep {
            frame,
            method: method.into(),
            node: 0,
            op,
        }
    }

    fn ctx(path: Vec<PathStep>, inputs: &[(&str, Vec<Value>)]) -> ExecutionContext {
        let inputs: BTreeMap<String, Vec<Value>> = inputs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let witness = inputs.iter().map(|(k, v)| (k.clone(), v[0].clone())).collect();
        ExecutionContext {
            path,
            variable_chain: Vec::new(),
            inputs,
            witness,
            param_domains: BTreeMap::new(),
            truncated: false,
        }
    }

    fn ints(v: &[i64]) -> Vec<Value> {
        v.iter().map(|&i| Value::Int(i)).collect()
    }

    #[test]
    fn contradictory_branches_are_condition_conflicts() {
        let c = ctx(
            vec![
                step(0, "A.f/1", StepOp::Enter { params: vec!["x".into()] }),
                step(0, "A.f/1", StepOp::Branch { cond: parse_expr("x > 0").unwrap(), taken: true }),
                step(0, "A.f/1", StepOp::Branch { cond: parse_expr("x < 0").unwrap(), taken: true }),
                step(0, "A.f/1", StepOp::Exit { exception: None }),
            ],
            &[("x", ints(&[-1, 0, 1, 2]))],
        );
        let err = check_sequence(&[], &c).unwrap_err();
        assert_eq!(err.0, ReasonCode::ConditionConflict);
    }

    #[test]
    fn parent_value_against_child_requirement_is_data_flow_conflict() {
        let flag_false = parse_expr("false").unwrap();
        let mut c = ctx(
            vec![
                step(0, "P.run/0", StepOp::Enter { params: vec![] }),
                step(0, "P.run/0", StepOp::Assign { var: "flag".into(), value: flag_false.clone() }),
                step(
                    0,
                    "P.run/0",
                    StepOp::Call {
                        target: "C.go/1".into(),
                        args: vec![parse_expr("flag").unwrap()],
                        assign_to: None,
                        opaque: false,
                        exception: None,
                    },
                ),
                step(1, "C.go/1", StepOp::Enter { params: vec!["flag".into()] }),
                step(1, "C.go/1", StepOp::Branch { cond: parse_expr("flag").unwrap(), taken: true }),
                step(1, "C.go/1", StepOp::Exit { exception: None }),
                step(0, "P.run/0", StepOp::Exit { exception: None }),
            ],
            &[],
        );
        c.param_domains.insert(
            "C.go/1".into(),
            BTreeMap::from([("flag".to_string(), vec![Value::Bool(false), Value::Bool(true)])]),
        );
        let err = check_sequence(&[], &c).unwrap_err();
        assert_eq!(err.0, ReasonCode::DataFlowConflict);
    }

    #[test]
    fn event_outside_its_frame_is_a_missing_link() {
        let c = ctx(
            vec![
                step(0, "P.run/0", StepOp::Enter { params: vec![] }),
                step(1, "C.go/0", StepOp::Pass),
                step(0, "P.run/0", StepOp::Exit { exception: None }),
            ],
            &[],
        );
        assert_eq!(check_sequence(&[], &c).unwrap_err().0, ReasonCode::MissingCallLink);
    }

    #[test]
    fn fingerprint_format() {
        assert_eq!(fingerprint("DataNode.setPermission/2", LogLevel::Info), "<DataNode:setPermission> [INFO]");
    }

    #[test]
    fn optimize_empty_is_empty() {
        assert!(optimize_sequences(Vec::new(), &|_| true).is_empty());
    }
}
