//! Enhanced CFGs: call completion, exception augmentation, log-flow links and
//! constraint verification over each method's LCFG.
//!
//! The reasoner only proposes; every proposal passes a structural check before
//! it changes a graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{Corpus, LogKey, MethodSource, Stmt, StmtKind};
use crate::eval::{Sym, Value};
use crate::lcfg::{
    annotate_lcfg, build_with, BuildOptions, CallRef, EdgeLabel, InsertedCall, Lcfg, NodeId, NodeKind, StmtOp,
};
use crate::merge::{enumerate_paths, method_path_steps, product, LoopPolicy, MethodPath, Replayer};
use crate::reasoner::{Reasoner, ReasonerError, ReasonerRequest, RequestKind};

#[derive(Debug, thiserror::Error)]
pub enum EnhanceError {
    #[error("insertion of {callee} after statement {anchor} in {method} refused: {reason}")]
    CompletionRejected {
        method: String,
        callee: String,
        anchor: u32,
        reason: String,
    },
    #[error("{owner}: log statements {missing:?} lie on no kept path")]
    InconsistentCfg { owner: String, missing: Vec<String> },
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
}

/// < Source Code, Call Path, Log-Oriented CFG >
#[derive(Debug, Clone)]
pub struct Ternary<'a> {
    pub source: &'a MethodSource,
    /// Root of the subgraph down to this method.
    pub call_path: Vec<String>,
    pub lcfg: Lcfg,
}

impl<'a> Ternary<'a> {
    pub fn new(source: &'a MethodSource, call_path: Vec<String>) -> Self {
        let mut call_path = call_path;
        if call_path.last() != Some(&source.fq_name) {
            call_path.push(source.fq_name.clone());
        }
        Ternary {
            source,
            call_path,
            lcfg: annotate_lcfg(&crate::lcfg::build_lcfg(source)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub method: String,
    pub callee: String,
    pub hint_line: u32,
    pub anchor: Option<u32>,
    pub accepted: bool,
    pub backend: String,
    pub note: String,
}

/// Corpus-wide decisions of the call-completion step.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CompletionPlan {
    pub dynamic: BTreeMap<String, Vec<String>>,
    pub insertions: BTreeMap<String, BTreeMap<u32, Vec<InsertedCall>>>,
    pub records: Vec<CompletionRecord>,
}

impl CompletionPlan {
    pub fn options_for(&self, method: &str) -> BuildOptions {
        BuildOptions {
            throws: BTreeMap::new(),
            insertions: self.insertions.get(method).cloned().unwrap_or_default(),
            dynamic: self.dynamic.clone(),
        }
    }
}

fn falls_through(s: &Stmt) -> bool {
    matches!(s.kind, StmtKind::Assign { .. } | StmtKind::Call(_) | StmtKind::Log(_))
}

/// An insertion is legal after a statement that completes normally and sits
/// on the line the hidden call is attributed to.
pub fn validate_insertion(method: &MethodSource, callee: &str, anchor: u32, hint_line: u32) -> Result<(), EnhanceError> {
    let refuse = |reason: &str| EnhanceError::CompletionRejected {
        method: method.fq_name.clone(),
        callee: callee.to_string(),
        anchor,
        reason: reason.to_string(),
    };
    let stmt = method.find_stmt(anchor).ok_or_else(|| refuse("no such statement"))?;
    if !falls_through(stmt) {
        return Err(refuse("anchor does not complete normally"));
    }
    if stmt.line != hint_line {
        return Err(refuse("anchor is not on the attributed line"));
    }
    Ok(())
}

/// Resolves dynamic dispatch from the corpus metadata and asks the reasoner
/// where each hidden call belongs.
pub fn plan_completions(corpus: &Corpus, reasoner: &dyn Reasoner) -> Result<CompletionPlan, ReasonerError> {
    let mut plan = CompletionPlan {
        dynamic: corpus.meta.dynamic.clone(),
        ..Default::default()
    };
    let mut calls = corpus.meta.implicit_calls.clone();
    calls.sort_by(|a, b| (&a.caller, a.line, &a.callee).cmp(&(&b.caller, b.line, &b.callee)));
    for ic in calls {
        let mut record = CompletionRecord {
            method: ic.caller.clone(),
            callee: ic.callee.clone(),
            hint_line: ic.line,
            anchor: None,
            accepted: false,
            backend: reasoner.backend().to_string(),
            note: String::new(),
        };
        let Some(method) = corpus.method(&ic.caller) else {
            record.note = "caller has no source".into();
            plan.records.push(record);
            continue;
        };
        if corpus.method(&ic.callee).is_some_and(|c| !c.params.is_empty()) {
            record.note = "hidden calls must take no arguments".into();
            plan.records.push(record);
            continue;
        }
        let mut candidates: Vec<&Stmt> = Vec::new();
        method.walk(&mut |s| {
            if falls_through(s) {
                candidates.push(s);
            }
        });
        candidates.sort_by_key(|s| (s.line.abs_diff(ic.line), s.id));
        let Some(first) = candidates.first() else {
            record.note = "no statement to anchor on".into();
            plan.records.push(record);
            continue;
        };
        let listed: Vec<_> = candidates
            .iter()
            .map(|s| json!({"anchor": s.id, "line": s.line}))
            .collect();
        let req = ReasonerRequest::new(
            RequestKind::EnhanceProposal,
            json!({
                "method": method.fq_name,
                "callee": ic.callee,
                "hint_line": ic.line,
                "proposal": {"anchor": first.id, "line": first.line, "falls_through": true},
                "candidates": listed,
                "variables": ["anchor"],
            }),
        );
        let verdict = reasoner.infer(&req)?;
        record.backend = verdict.backend.clone();
        if !verdict.accepted() {
            record.note = format!("reasoner rejected: {}", verdict.raw_trace);
            plan.records.push(record);
            continue;
        }
        let anchor = verdict
            .bindings
            .get("anchor")
            .and_then(|v| v.as_u64())
            .map_or(first.id, |a| a as u32);
        record.anchor = Some(anchor);
        match validate_insertion(method, &ic.callee, anchor, ic.line) {
            Ok(()) => {
                record.accepted = true;
                plan.insertions
                    .entry(method.fq_name.clone())
                    .or_default()
                    .entry(anchor)
                    .or_default()
                    .push(InsertedCall {
                        callee: ic.callee.clone(),
                        args: Vec::new(),
                        assign_to: None,
                    });
            }
            Err(e) => record.note = e.to_string(),
        }
        plan.records.push(record);
    }
    Ok(plan)
}

/// Exception types that may escape each method (and each dynamic key), as a
/// least fixpoint over the corpus.
pub fn throw_oracle(corpus: &Corpus, plan: &CompletionPlan) -> BTreeMap<String, BTreeSet<String>> {
    let mut throws: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    loop {
        let mut next = throws.clone();
        for (name, m) in &corpus.source_index {
            let mut opts = plan.options_for(name);
            opts.throws = throws.clone();
            let l = build_with(m, &opts);
            let live = l.reachable();
            let escaping: BTreeSet<String> = l
                .exits
                .iter()
                .filter(|x| live.contains(x))
                .filter_map(|&x| match &l.node(x).kind {
                    NodeKind::Exit { exception } => exception.clone(),
                    _ => None,
                })
                .collect();
            if !escaping.is_empty() {
                next.entry(name.clone()).or_default().extend(escaping);
            }
        }
        for (key, candidates) in &plan.dynamic {
            let union: BTreeSet<String> = candidates
                .iter()
                .filter_map(|c| next.get(c))
                .flatten()
                .cloned()
                .collect();
            if !union.is_empty() {
                next.insert(key.clone(), union);
            }
        }
        if next == throws {
            return throws;
        }
        throws = next;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionRecord {
    pub node: NodeId,
    pub callee: String,
    pub anchor_stmt: u32,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicResolution {
    pub node: NodeId,
    pub key: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HandlerKind {
    Catch,
    Finally,
    Propagate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionBranch {
    pub origin: NodeId,
    pub exception: String,
    pub target: NodeId,
    pub handler: HandlerKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogVarLink {
    pub log: NodeId,
    pub variable: String,
    /// Defining node, or `None` for a free variable.
    pub def: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BindingSource {
    Reasoner,
    Fallback,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptPath {
    pub path: MethodPath,
    pub bindings: BTreeMap<String, Value>,
    pub binding_source: BindingSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Consistency {
    Pending,
    Verified,
    Quarantined { missing: Vec<LogKey> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancedCfg {
    pub owner: String,
    pub call_path: Vec<String>,
    pub base: Lcfg,
    pub graph: Lcfg,
    pub inserted_calls: Vec<InsertionRecord>,
    pub dynamic_resolutions: Vec<DynamicResolution>,
    /// Callees the source says are called but no Call node reaches.
    pub unmatched_callees: Vec<String>,
    pub exception_branches: Vec<ExceptionBranch>,
    pub log_var_links: Vec<LogVarLink>,
    pub paths: Vec<KeptPath>,
    pub pruned_paths: usize,
    pub budget_exceeded: bool,
    pub consistency: Consistency,
}

impl EnhancedCfg {
    pub fn ensure_consistent(&self) -> Result<(), EnhanceError> {
        match &self.consistency {
            Consistency::Quarantined { missing } => Err(EnhanceError::InconsistentCfg {
                owner: self.owner.clone(),
                missing: missing.iter().map(|k| k.to_string()).collect(),
            }),
            _ => Ok(()),
        }
    }

    /// Graph text followed by per-path constraint and binding sections.
    pub fn to_text(&self) -> String {
        let mut out = self.graph.to_text();
        let _ = writeln!(out, "call-path {}", self.call_path.join(" -> "));
        for r in &self.inserted_calls {
            let _ = writeln!(out, "inserted {} node={} after-stmt={} line={}", r.callee, r.node, r.anchor_stmt, r.line);
        }
        for d in &self.dynamic_resolutions {
            let _ = writeln!(out, "dynamic {} node={} -> {}", d.key, d.node, d.candidates.join(", "));
        }
        for b in &self.exception_branches {
            let _ = writeln!(out, "throws {} from={} to={} {:?}", b.exception, b.origin, b.target, b.handler);
        }
        for l in &self.log_var_links {
            match l.def {
                Some(d) => {
                    let _ = writeln!(out, "flow log={} {} <- {}", l.log, l.variable, d);
                }
                None => {
                    let _ = writeln!(out, "flow log={} {} free", l.log, l.variable);
                }
            }
        }
        for k in &self.paths {
            let nodes: Vec<String> = k.path.nodes.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(out, "path {} [{}]", k.path.id, nodes.join(" "));
            let _ = writeln!(out, "  when {}", k.path.constraints.join(" && "));
            let binds: Vec<String> = k.bindings.iter().map(|(a, b)| format!("{a}={b}")).collect();
            let _ = writeln!(out, "  bind {} ({:?})", binds.join(", "), k.binding_source);
        }
        let _ = writeln!(out, "consistency {:?}", self.consistency);
        out
    }
}

/// Callees named by the source: static targets, dispatch candidates and
/// hidden calls attributed to the method.
fn expected_callees(source: &MethodSource, corpus: &Corpus) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    source.walk(&mut |s| {
        if let StmtKind::Call(c) = &s.kind {
            match &c.target {
                crate::corpus::CallTarget::Static(fq) => {
                    out.insert(fq.clone());
                }
                crate::corpus::CallTarget::Dynamic(k) => out.extend(corpus.dynamic_candidates(k).iter().cloned()),
            }
        }
    });
    out.extend(corpus.implicit_calls_of(&source.fq_name).into_iter().map(|ic| ic.callee.clone()));
    out
}

/// Step 1: resolve dispatch candidates and materialise planned hidden calls.
pub fn match_and_complete_calls(t: &Ternary, corpus: &Corpus, plan: &CompletionPlan) -> EnhancedCfg {
    let graph = annotate_lcfg(&build_with(t.source, &plan.options_for(&t.source.fq_name)));
    let mut inserted_calls = Vec::new();
    let mut dynamic_resolutions = Vec::new();
    let mut reached = BTreeSet::new();
    for (n, c) in graph.call_nodes() {
        reached.extend(c.targets().into_iter().map(String::from));
        if c.implicit {
            let anchor = n.stmt.unwrap_or_default();
            inserted_calls.push(InsertionRecord {
                node: n.id,
                callee: c.targets()[0].to_string(),
                anchor_stmt: anchor,
                line: n.line,
            });
        }
        if let CallRef::Dynamic { key, candidates } = &c.target {
            dynamic_resolutions.push(DynamicResolution {
                node: n.id,
                key: key.clone(),
                candidates: candidates.clone(),
            });
        }
    }
    let unmatched_callees = expected_callees(t.source, corpus)
        .into_iter()
        .filter(|c| !reached.contains(c))
        .collect();
    EnhancedCfg {
        owner: t.source.fq_name.clone(),
        call_path: t.call_path.clone(),
        base: t.lcfg.clone(),
        graph,
        inserted_calls,
        dynamic_resolutions,
        unmatched_callees,
        exception_branches: Vec::new(),
        log_var_links: Vec::new(),
        paths: Vec::new(),
        pruned_paths: 0,
        budget_exceeded: false,
        consistency: Consistency::Pending,
    }
}

/// Step 2: route every exception a callee or `throw` may raise to its nearest
/// matching handler, else to a propagate-exit.
pub fn augment_exception_paths(
    cfg: &EnhancedCfg,
    source: &MethodSource,
    plan: &CompletionPlan,
    throws: &BTreeMap<String, BTreeSet<String>>,
) -> EnhancedCfg {
    let mut opts = plan.options_for(&source.fq_name);
    opts.throws = throws.clone();
    let graph = annotate_lcfg(&build_with(source, &opts));
    let mut branches = Vec::new();
    for e in graph.edges.iter().filter(|e| e.label == EdgeLabel::Exception) {
        let Some(x) = &e.exception else { continue };
        let known = match &graph.node(e.from).kind {
            NodeKind::Throw { .. } => true,
            NodeKind::Call(c) => {
                let mut keys: Vec<&str> = c.targets();
                if let CallRef::Dynamic { key, .. } = &c.target {
                    keys.push(key);
                }
                keys.iter().any(|k| throws.get(*k).is_some_and(|t| t.contains(x)))
            }
            _ => false,
        };
        if !known {
            continue;
        }
        let handler = match &graph.node(e.to).kind {
            NodeKind::CatchEntry { .. } => HandlerKind::Catch,
            NodeKind::Exit { .. } => HandlerKind::Propagate,
            _ => HandlerKind::Finally,
        };
        branches.push(ExceptionBranch {
            origin: e.from,
            exception: x.clone(),
            target: e.to,
            handler,
        });
    }
    EnhancedCfg {
        graph,
        exception_branches: branches,
        ..cfg.clone()
    }
}

/// Variable a node defines along a given outgoing edge. Calls only define
/// their result when they return normally.
fn defined_var(kind: &NodeKind, label: EdgeLabel) -> Vec<String> {
    match kind {
        NodeKind::Entry { params } => params.clone(),
        NodeKind::Statement(StmtOp::Assign { target, .. }) => vec![target.clone()],
        NodeKind::Call(c) if label != EdgeLabel::Exception => c.assign_to.iter().cloned().collect(),
        NodeKind::CatchEntry { var, .. } => vec![var.clone()],
        _ => Vec::new(),
    }
}

/// Reaching definitions: for each node, the (variable, defining node) pairs
/// that reach its entry along some path.
pub fn reaching_definitions(graph: &Lcfg) -> Vec<BTreeSet<(String, NodeId)>> {
    let n = graph.nodes.len();
    let mut facts: Vec<BTreeSet<(String, NodeId)>> = vec![BTreeSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for e in &graph.edges {
            let defs = defined_var(&graph.node(e.from).kind, e.label);
            let mut out: BTreeSet<(String, NodeId)> = facts[e.from]
                .iter()
                .filter(|(v, _)| !defs.contains(v))
                .cloned()
                .collect();
            out.extend(defs.into_iter().map(|v| (v, e.from)));
            let before = facts[e.to].len();
            facts[e.to].extend(out);
            changed |= facts[e.to].len() != before;
        }
    }
    facts
}

/// Step 3: link each log parameter variable to its reaching definitions.
pub fn associate_log_flow(cfg: &EnhancedCfg) -> EnhancedCfg {
    let facts = reaching_definitions(&cfg.graph);
    let live = cfg.graph.reachable();
    let mut links = Vec::new();
    for (node, log) in cfg.graph.log_nodes() {
        if !live.contains(&node.id) {
            continue;
        }
        let mut vars: Vec<String> = log.params.iter().flat_map(|p| p.variables()).collect();
        let mut seen = BTreeSet::new();
        vars.retain(|v| seen.insert(v.clone()));
        for v in vars {
            let defs: Vec<NodeId> = facts[node.id]
                .iter()
                .filter(|(name, _)| *name == v)
                .map(|(_, d)| *d)
                .collect();
            if defs.is_empty() {
                links.push(LogVarLink {
                    log: node.id,
                    variable: v.clone(),
                    def: None,
                });
            }
            for d in defs {
                links.push(LogVarLink {
                    log: node.id,
                    variable: v.clone(),
                    def: Some(d),
                });
            }
        }
    }
    EnhancedCfg {
        log_var_links: links,
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathLimits {
    pub policy: LoopPolicy,
    pub budget: usize,
}

impl Default for PathLimits {
    fn default() -> Self {
        PathLimits {
            policy: LoopPolicy::default(),
            budget: 10_000,
        }
    }
}

const MAX_WORLDS: usize = 1 << 16;

/// Step 4–5: keep paths some input can drive, simulate bindings for them and
/// check that every live log statement survives on a kept path.
///
/// Parameters with a declared domain range over it; others stay unknown,
/// since their values come from callers.
pub fn constrain_and_verify(
    cfg: &EnhancedCfg,
    source: &MethodSource,
    corpus: &Corpus,
    reasoner: &dyn Reasoner,
    limits: PathLimits,
) -> Result<EnhancedCfg, ReasonerError> {
    let (paths, budget_exceeded) = match enumerate_paths(&cfg.graph, limits.policy, limits.budget) {
        Ok(p) => (p, false),
        Err(e) => (e.partial, true),
    };
    let feasibility_domains: Vec<(String, Vec<Sym>)> = source
        .params
        .iter()
        .map(|p| {
            let d = corpus
                .declared_domain(&source.fq_name, &p.name)
                .map(|v| v.iter().cloned().map(Sym::Known).collect())
                .unwrap_or_else(|| vec![Sym::Unknown]);
            (p.name.clone(), d)
        })
        .collect();
    let concrete: Vec<(String, Vec<Value>)> = source
        .params
        .iter()
        .map(|p| (p.name.clone(), corpus.input_domain(&source.fq_name, &p.name, p.ty)))
        .collect();
    let worlds = product(&feasibility_domains, MAX_WORLDS).unwrap_or_else(|| {
        vec![feasibility_domains.iter().map(|(k, _)| (k.clone(), Sym::Unknown)).collect()]
    });
    let mut kept = Vec::new();
    let mut pruned = 0;
    for path in paths {
        let steps = method_path_steps(&cfg.graph, &path);
        let mut r = Replayer::new(worlds.clone());
        if !steps.iter().all(|s| r.apply(&s.op)) {
            pruned += 1;
            continue;
        }
        let template = path
            .nodes
            .iter()
            .find_map(|&n| match &cfg.graph.node(n).kind {
                NodeKind::Log(l) => Some(l.template.clone()),
                _ => None,
            })
            .unwrap_or_default();
        let req = ReasonerRequest::new(
            RequestKind::ParamSimulation,
            json!({
                "method": source.fq_name,
                "template": template,
                "constraints": path.constraints,
                "domains": concrete.iter().cloned().collect::<BTreeMap<_, _>>(),
                "variables": source.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
            }),
        );
        let verdict = reasoner.infer(&req)?;
        let survives = |world: BTreeMap<String, Sym>| {
            let mut one = Replayer::new(vec![world]);
            steps.iter().all(|s| one.apply(&s.op))
        };
        let proposed: BTreeMap<String, Value> = verdict
            .bindings
            .iter()
            .filter_map(|(k, v)| serde_json::from_value(v.clone()).ok().map(|v| (k.clone(), v)))
            .collect();
        let as_world = |b: &BTreeMap<String, Value>| -> BTreeMap<String, Sym> {
            source
                .params
                .iter()
                .map(|p| (p.name.clone(), b.get(&p.name).cloned().map_or(Sym::Unknown, Sym::Known)))
                .collect()
        };
        let (bindings, binding_source) = if verdict.accepted()
            && !proposed.is_empty()
            && proposed.iter().all(|(k, v)| {
                concrete
                    .iter()
                    .any(|(name, dom)| name == k && dom.contains(v))
            })
            && survives(as_world(&proposed))
        {
            (proposed, BindingSource::Reasoner)
        } else {
            let domains: Vec<(String, Vec<Sym>)> = concrete
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().map(Sym::Known).collect()))
                .collect();
            let first = product(&domains, MAX_WORLDS)
                .unwrap_or_default()
                .into_iter()
                .find(|w| survives(w.clone()));
            match first {
                Some(w) => (
                    w.into_iter()
                        .filter_map(|(k, s)| s.known().cloned().map(|v| (k, v)))
                        .collect(),
                    BindingSource::Fallback,
                ),
                None => (BTreeMap::new(), BindingSource::None),
            }
        };
        kept.push(KeptPath {
            path,
            bindings,
            binding_source,
        });
    }
    let live = cfg.graph.reachable();
    let on_kept: BTreeSet<&LogKey> = kept.iter().flat_map(|k| k.path.logs.iter()).collect();
    let missing: Vec<LogKey> = cfg
        .graph
        .log_nodes()
        .filter(|(n, l)| live.contains(&n.id) && !on_kept.contains(&l.key))
        .map(|(_, l)| l.key.clone())
        .collect();
    Ok(EnhancedCfg {
        paths: kept,
        pruned_paths: pruned,
        budget_exceeded,
        consistency: if missing.is_empty() {
            Consistency::Verified
        } else {
            Consistency::Quarantined { missing }
        },
        ..cfg.clone()
    })
}

/// Corpus-wide inputs shared by every method's enhancement.
pub struct EnhanceContext<'a> {
    pub corpus: &'a Corpus,
    pub plan: CompletionPlan,
    pub throws: BTreeMap<String, BTreeSet<String>>,
    pub limits: PathLimits,
}

impl<'a> EnhanceContext<'a> {
    pub fn new(corpus: &'a Corpus, reasoner: &dyn Reasoner, limits: PathLimits) -> Result<Self, ReasonerError> {
        let plan = plan_completions(corpus, reasoner)?;
        let throws = throw_oracle(corpus, &plan);
        Ok(EnhanceContext {
            corpus,
            plan,
            throws,
            limits,
        })
    }

    /// All four steps for one ternary.
    pub fn enhance(&self, t: &Ternary, reasoner: &dyn Reasoner) -> Result<EnhancedCfg, ReasonerError> {
        let cfg = match_and_complete_calls(t, self.corpus, &self.plan);
        let cfg = augment_exception_paths(&cfg, t.source, &self.plan, &self.throws);
        let cfg = associate_log_flow(&cfg);
        constrain_and_verify(&cfg, t.source, self.corpus, reasoner, self.limits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_sources;
    use crate::reasoner::RuleEngine;

    const SET_PERMISSION: &str = r#"class DataNode {
    void setPermission(String src, String user) {
        try {
            checkOwner(user);
            log.info("setPermission done for {}", src);
        } catch (AccessControlException e) {
            log.warn("permission denied for {}", user);
            throw new AccessControlException();
        }
    }
    void checkOwner(String user) {
        if (user == "guest") {
            throw new AccessControlException();
        }
    }
}
"#;

    fn corpus(src: &str) -> Corpus {
        parse_sources(&[("t.jsub".into(), src.into())]).unwrap()
    }

    #[test]
    fn exception_edge_from_check_call_into_failure_catch() {
        let c = corpus(SET_PERMISSION);
        let ctx = EnhanceContext::new(&c, &RuleEngine, PathLimits::default()).unwrap();
        assert!(ctx.throws["DataNode.checkOwner/1"].contains("AccessControlException"));
        let m = c.method("DataNode.setPermission/2").unwrap();
        let cfg = ctx.enhance(&Ternary::new(m, vec![]), &RuleEngine).unwrap();
        let branch = cfg
            .exception_branches
            .iter()
            .find(|b| matches!(cfg.graph.node(b.origin).kind, NodeKind::Call(_)))
            .unwrap();
        assert_eq!(branch.exception, "AccessControlException");
        assert_eq!(branch.handler, HandlerKind::Catch);
        let after: Vec<_> = cfg.graph.successors(branch.target).map(|e| e.to).collect();
        assert!(matches!(&cfg.graph.node(after[0]).kind, NodeKind::Log(l) if l.template.starts_with("permission denied")));
        assert_eq!(cfg.consistency, Consistency::Verified);
        assert_eq!(cfg.paths.len(), 2);
    }

    #[test]
    fn augmentation_is_idempotent_and_identity_without_throws() {
        let c = corpus("class A { void f(int x) {\n if (x > 0) {\n log.info(\"a\");\n }\n } }");
        let plan = plan_completions(&c, &RuleEngine).unwrap();
        let throws = throw_oracle(&c, &plan);
        let m = c.method("A.f/1").unwrap();
        let t = Ternary::new(m, vec![]);
        let once = augment_exception_paths(&match_and_complete_calls(&t, &c, &plan), m, &plan, &throws);
        let twice = augment_exception_paths(&once, m, &plan, &throws);
        assert_eq!(once, twice);
        assert_eq!(once.graph, t.lcfg);
        assert!(once.exception_branches.is_empty());
    }

    #[test]
    fn log_flow_links_assignment_and_call_return() {
        let c = corpus("class A { void f() {\n int x = 5;\n log.info(\"v={}\", x);\n int y = g();\n log.info(\"w={}\", y);\n }\n int g() {\n return 1;\n } }");
        let m = c.method("A.f/0").unwrap();
        let plan = plan_completions(&c, &RuleEngine).unwrap();
        let cfg = associate_log_flow(&match_and_complete_calls(&Ternary::new(m, vec![]), &c, &plan));
        let kind_of = |var: &str| {
            let l = cfg.log_var_links.iter().find(|l| l.variable == var).unwrap();
            cfg.graph.node(l.def.unwrap()).kind.clone()
        };
        assert!(matches!(kind_of("x"), NodeKind::Statement(StmtOp::Assign { .. })));
        assert!(matches!(kind_of("y"), NodeKind::Call(_)));
    }

    #[test]
    fn unsatisfiable_path_is_pruned_and_binding_recorded() {
        let src = "class A { void f(int x) {\n if (x > 0) {\n if (x < 0) {\n log.info(\"never\");\n }\n log.info(\"pos\");\n }\n } }";
        let c = corpus(src);
        let mut c = c;
        c.meta
            .domains
            .insert("A.f/1".into(), BTreeMap::from([("x".to_string(), vec![Value::Int(-1), Value::Int(3)])]));
        let ctx = EnhanceContext::new(&c, &RuleEngine, PathLimits::default()).unwrap();
        let m = c.method("A.f/1").unwrap();
        let cfg = ctx.enhance(&Ternary::new(m, vec![]), &RuleEngine).unwrap();
        assert_eq!(cfg.pruned_paths, 1);
        let pos = cfg
            .paths
            .iter()
            .find(|k| k.path.constraints == ["x > 0", "!(x < 0)"])
            .unwrap();
        assert_eq!(pos.bindings["x"], Value::Int(3));
        assert!(matches!(cfg.consistency, Consistency::Quarantined { .. }));
        assert!(cfg.ensure_consistent().is_err());
    }

    #[test]
    fn illegal_insertion_is_refused() {
        let c = corpus("class A { void f(int x) {\n if (x > 0) {\n log.info(\"a\");\n }\n } }");
        let m = c.method("A.f/1").unwrap();
        // statement 0 is the `if`, which does not complete as a simple statement
        assert!(matches!(
            validate_insertion(m, "H.h/0", 0, 2),
            Err(EnhanceError::CompletionRejected { .. })
        ));
        assert!(validate_insertion(m, "H.h/0", 1, 3).is_ok());
    }
}
