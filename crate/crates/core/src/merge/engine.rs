//! Depth-first, stack-disciplined merge of kept callee paths into the paths
//! of a subgraph's root.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    classify_conflict, constraint_set, fingerprint, node_op, product, variable_chain, verify_merge, Death,
    EventSource, ExecutionContext, LogEvent, LogSequence, PathStep, Replayer, StepOp,
};
use crate::callgraph::CallGraph;
use crate::corpus::Corpus;
use crate::enhance::EnhancedCfg;
use crate::eval::{Sym, Value};
use crate::lcfg::{CallRef, EdgeLabel, NodeKind, Subgraph};
use crate::reasoner::{ReasonCode, Reasoner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Maximum number of completed or abandoned merge candidates per subgraph.
    pub budget: usize,
    /// How many extra activations of one method may be on the stack at once.
    pub reentry_cap: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            budget: 10_000,
            reentry_cap: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub root_path: usize,
    pub reasons: Vec<ReasonCode>,
    pub trace: String,
    /// Methods entered before the candidate was abandoned.
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub subgraph: usize,
    pub root: String,
    pub accepted: Vec<LogSequence>,
    pub rejected: Vec<Rejection>,
    pub rejection_counts: BTreeMap<String, usize>,
    pub budget_exceeded: bool,
    /// Accepted sequences that left a log-relevant callee unexpanded.
    pub truncated: usize,
    /// Root paths for which every merge candidate was rejected.
    pub all_rejected_root_paths: Vec<usize>,
}

#[derive(Clone)]
struct Cursor<'a> {
    cfg: &'a EnhancedCfg,
    path: usize,
    pos: usize,
    frame: usize,
}

#[derive(Clone)]
struct State<'a> {
    stack: Vec<Cursor<'a>>,
    replay: Replayer,
    steps: Vec<PathStep>,
    next_frame: usize,
    truncated: bool,
}

enum Choice<'a> {
    Expand { target: String, cfg: &'a EnhancedCfg, path: usize },
    Opaque { target: String, truncated: bool },
}

const MAX_ROOT_WORLDS: usize = 1 << 16;

struct Merger<'a> {
    subgraph: &'a Subgraph,
    graph: &'a CallGraph,
    corpus: &'a Corpus,
    cfgs: &'a BTreeMap<String, EnhancedCfg>,
    reasoner: &'a dyn Reasoner,
    config: MergeConfig,
    explored: usize,
    out: MergeOutcome,
}

/// Merges every kept path of the subgraph root with the kept paths of the
/// callees it reaches, bottom-up through the call stack.
///
/// Callees inside the subgraph, and callees the pruned graph dropped because
/// they cannot log, are expanded. Callees with logs outside the subgraph are
/// left opaque and the sequence is marked truncated. Externals and methods
/// without source are opaque; they never throw.
pub fn merge_bottom_up(
    subgraph: &Subgraph,
    graph: &CallGraph,
    corpus: &Corpus,
    cfgs: &BTreeMap<String, EnhancedCfg>,
    reasoner: &dyn Reasoner,
    config: MergeConfig,
) -> MergeOutcome {
    let mut m = Merger {
        subgraph,
        graph,
        corpus,
        cfgs,
        reasoner,
        config,
        explored: 0,
        out: MergeOutcome {
            subgraph: subgraph.id,
            root: subgraph.root_name.clone(),
            accepted: Vec::new(),
            rejected: Vec::new(),
            rejection_counts: BTreeMap::new(),
            budget_exceeded: false,
            truncated: 0,
            all_rejected_root_paths: Vec::new(),
        },
    };
    if let Some(root) = cfgs.get(&subgraph.root_name) {
        for p in 0..root.paths.len() {
            if m.out.budget_exceeded {
                break;
            }
            let before = m.out.accepted.len();
            let rejected_before = m.out.rejected.len();
            m.merge_root_path(root, p);
            if m.out.accepted.len() == before && m.out.rejected.len() > rejected_before {
                m.out.all_rejected_root_paths.push(p);
            }
        }
    }
    m.out
}

impl<'a> Merger<'a> {
    fn root_worlds(&self, root: &EnhancedCfg) -> (BTreeMap<String, Vec<Value>>, Vec<BTreeMap<String, Sym>>) {
        let method = self.corpus.method(&root.owner);
        let inputs: BTreeMap<String, Vec<Value>> = method
            .map(|m| {
                m.params
                    .iter()
                    .map(|p| (p.name.clone(), self.corpus.input_domain(&m.fq_name, &p.name, p.ty)))
                    .collect()
            })
            .unwrap_or_default();
        let domains: Vec<(String, Vec<Sym>)> = inputs
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().cloned().map(Sym::Known).collect()))
            .collect();
        let worlds = product(&domains, MAX_ROOT_WORLDS).unwrap_or_else(|| {
            // too many combinations: keep the first value of each domain
            vec![domains
                .iter()
                .map(|(k, d)| (k.clone(), d.first().cloned().unwrap_or(Sym::Unknown)))
                .collect()]
        });
        (inputs, worlds)
    }

    fn param_domains(&self, steps: &[PathStep]) -> BTreeMap<String, BTreeMap<String, Vec<Value>>> {
        let mut out = BTreeMap::new();
        for s in steps {
            if !matches!(s.op, StepOp::Enter { .. }) || out.contains_key(&s.method) {
                continue;
            }
            if let Some(m) = self.corpus.method(&s.method) {
                let d: BTreeMap<String, Vec<Value>> = m
                    .params
                    .iter()
                    .map(|p| (p.name.clone(), self.corpus.input_domain(&m.fq_name, &p.name, p.ty)))
                    .collect();
                out.insert(s.method.clone(), d);
            }
        }
        out
    }

    fn reject(&mut self, root_path: usize, reasons: Vec<ReasonCode>, trace: String, steps: &[PathStep]) {
        for r in &reasons {
            *self.out.rejection_counts.entry(r.as_str().to_string()).or_default() += 1;
        }
        let mut methods: Vec<String> = Vec::new();
        for s in steps {
            if matches!(s.op, StepOp::Enter { .. }) && !methods.contains(&s.method) {
                methods.push(s.method.clone());
            }
        }
        self.out.rejected.push(Rejection {
            root_path,
            reasons,
            trace,
            methods,
        });
    }

    fn tick(&mut self) -> bool {
        self.explored += 1;
        if self.explored > self.config.budget {
            self.out.budget_exceeded = true;
        }
        !self.out.budget_exceeded
    }

    fn merge_root_path(&mut self, root: &'a EnhancedCfg, path: usize) {
        let (inputs, worlds) = self.root_worlds(root);
        let mut work = vec![State {
            stack: vec![Cursor {
                cfg: root,
                path,
                pos: 0,
                frame: 0,
            }],
            replay: Replayer::new(worlds),
            steps: Vec::new(),
            next_frame: 1,
            truncated: false,
        }];
        while let Some(mut st) = work.pop() {
            if self.out.budget_exceeded {
                return;
            }
            // run straight-line steps until a call offers a choice
            loop {
                let Some(top) = st.stack.last().cloned() else {
                    if self.tick() {
                        self.finish(path, st, &inputs);
                    }
                    break;
                };
                let kept = &top.cfg.paths[top.path].path;
                let node = kept.nodes[top.pos];
                let out_edge = kept.edges.get(top.pos).map(|&e| &top.cfg.graph.edges[e]);
                let method = top.cfg.owner.clone();
                let kind = &top.cfg.graph.node(node).kind;
                let last = top.pos + 1 == kept.nodes.len();
                if let NodeKind::Call(call) = kind {
                    let expected = out_edge
                        .filter(|e| e.label == EdgeLabel::Exception)
                        .and_then(|e| e.exception.clone());
                    let choices = self.choices(&st, &call.target, expected.as_deref());
                    st.stack.last_mut().expect("non-empty").pos += 1;
                    if choices.is_empty() {
                        if self.tick() {
                            let why = match &expected {
                                Some(x) => format!("no callee of {} in {method} raises {x}", call.written),
                                None => format!("no callee path of {} in {method} returns normally", call.written),
                            };
                            self.reject(path, vec![ReasonCode::UnreachablePath], why, &st.steps);
                        }
                        break;
                    }
                    for choice in choices.into_iter().rev() {
                        let mut next = st.clone();
                        let (target, opaque) = match &choice {
                            Choice::Expand { target, .. } => (target.clone(), false),
                            Choice::Opaque { target, .. } => (target.clone(), true),
                        };
                        let op = StepOp::Call {
                            target,
                            args: call.args.clone(),
                            assign_to: call.assign_to.clone(),
                            opaque,
                            exception: expected.clone(),
                        };
                        next.steps.push(PathStep {
                            frame: top.frame,
                            method: method.clone(),
                            node,
                            op: op.clone(),
                        });
                        if !next.replay.apply(&op) {
                            self.kill(path, &next);
                            continue;
                        }
                        match choice {
                            Choice::Expand { cfg, path: p, .. } => {
                                next.stack.push(Cursor {
                                    cfg,
                                    path: p,
                                    pos: 0,
                                    frame: next.next_frame,
                                });
                                next.next_frame += 1;
                            }
                            Choice::Opaque { truncated, .. } => next.truncated |= truncated,
                        }
                        work.push(next);
                    }
                    break;
                }
                let op = node_op(kind, out_edge);
                st.steps.push(PathStep {
                    frame: top.frame,
                    method,
                    node,
                    op: op.clone(),
                });
                if !st.replay.apply(&op) {
                    self.kill(path, &st);
                    break;
                }
                if last {
                    st.stack.pop();
                } else {
                    st.stack.last_mut().expect("non-empty").pos += 1;
                }
            }
        }
    }

    fn kill(&mut self, root_path: usize, st: &State) {
        if !self.tick() {
            return;
        }
        let (code, why) = match st.replay.last_death {
            Some(Death::Undefined) => (
                ReasonCode::DataFlowConflict,
                "variable read before definition".to_string(),
            ),
            _ => {
                let ctx = ExecutionContext {
                    path: st.steps.clone(),
                    variable_chain: Vec::new(),
                    inputs: BTreeMap::new(),
                    witness: BTreeMap::new(),
                    param_domains: self.param_domains(&st.steps),
                    truncated: st.truncated,
                };
                classify_conflict(&ctx)
            }
        };
        self.reject(root_path, vec![code], why, &st.steps);
    }

    fn expandable(&self, target: &str, st: &State) -> Option<&'a EnhancedCfg> {
        let cfg = self.cfgs.get(target)?;
        let in_scope = match self.graph.id_of(target) {
            Some(id) => self.subgraph.members.contains(&id),
            // pruned away: the callee cannot log, so expanding it only adds
            // its control and data flow
            None => true,
        };
        let active = st.stack.iter().filter(|c| c.cfg.owner == target).count();
        (in_scope && active <= self.config.reentry_cap).then_some(cfg)
    }

    fn choices(&self, st: &State, target: &CallRef, expected: Option<&str>) -> Vec<Choice<'a>> {
        let targets: Vec<String> = match target {
            CallRef::Method(t) => vec![t.clone()],
            CallRef::Dynamic { key, candidates } if candidates.is_empty() => vec![key.clone()],
            CallRef::Dynamic { candidates, .. } => candidates.clone(),
        };
        let mut out = Vec::new();
        for t in targets {
            match self.expandable(&t, st) {
                Some(cfg) => {
                    for (i, k) in cfg.paths.iter().enumerate() {
                        if k.path.exit.as_deref() == expected {
                            out.push(Choice::Expand {
                                target: t.clone(),
                                cfg,
                                path: i,
                            });
                        }
                    }
                }
                None if expected.is_none() => {
                    let logs = self.graph.id_of(&t).is_some() && self.cfgs.contains_key(&t);
                    out.push(Choice::Opaque {
                        target: t,
                        truncated: logs,
                    });
                }
                None => {}
            }
        }
        out
    }

    fn finish(&mut self, root_path: usize, st: State, inputs: &BTreeMap<String, Vec<Value>>) {
        let Some(world) = st.replay.worlds.first() else {
            return;
        };
        let witness: BTreeMap<String, Value> = world
            .inputs
            .iter()
            .filter_map(|(k, v)| v.known().cloned().map(|v| (k.clone(), v)))
            .collect();
        let mut rendered = world.rendered.iter();
        let mut events = Vec::new();
        for s in &st.steps {
            if let StepOp::Log { key, level, params, .. } = &s.op {
                let r = rendered.next().expect("one rendering per log step");
                events.push(LogEvent {
                    fingerprint: fingerprint(&s.method, *level),
                    rendered: r.text.clone(),
                    source: EventSource {
                        method: s.method.clone(),
                        node: s.node,
                        frame: s.frame,
                        key: key.clone(),
                    },
                    bindings: params
                        .iter()
                        .map(|p| p.to_string())
                        .zip(r.values.iter().cloned())
                        .collect(),
                    unfilled: r.unfilled,
                });
            }
        }
        if events.is_empty() {
            return;
        }
        let context = ExecutionContext {
            variable_chain: variable_chain(&st.steps),
            inputs: inputs.clone(),
            witness,
            param_domains: self.param_domains(&st.steps),
            truncated: st.truncated,
            path: st.steps,
        };
        let verdict = verify_merge(&events, &context, self.reasoner);
        if verdict.accepted() {
            if context.truncated {
                self.out.truncated += 1;
            }
            self.out.accepted.push(LogSequence {
                constraints: constraint_set(&context.path),
                events,
                context,
                verdict,
                origin_subgraph: self.subgraph.id,
                root: self.subgraph.root_name.clone(),
            });
        } else {
            let trace = verdict.raw_trace.clone();
            self.reject(root_path, verdict.reasons, trace, &context.path);
        }
    }
}
