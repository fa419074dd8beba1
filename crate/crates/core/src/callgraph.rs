//! Global call graph, log-method tagging and reverse pruning.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{walk_block, CallTarget, Corpus, StmtKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogTag {
    None,
    Direct,
    Indirect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodNode {
    pub id: usize,
    pub fq_name: String,
    pub log_tag: LogTag,
    pub has_source: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    Static,
    /// One of the declared candidates of a `calldyn` site.
    Dynamic,
    /// Declared in corpus metadata, invisible to the parser.
    Implicit,
    /// Read from an external edge list.
    Imported,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: usize,
    pub callee: usize,
    pub line: Option<u32>,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedCallee {
    pub caller: String,
    pub callee: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RawGraph {
    nodes: Vec<MethodNode>,
    edges: Vec<CallEdge>,
    #[serde(default)]
    unresolved: Vec<UnresolvedCallee>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawGraph", into = "RawGraph")]
pub struct CallGraph {
    pub nodes: Vec<MethodNode>,
    pub edges: Vec<CallEdge>,
    /// Calls to methods that are neither in the corpus nor declared external.
    pub unresolved: Vec<UnresolvedCallee>,
    fwd: Vec<Vec<usize>>,
    rev: Vec<Vec<usize>>,
    by_name: BTreeMap<String, usize>,
}

impl From<RawGraph> for CallGraph {
    fn from(r: RawGraph) -> Self {
        let mut g = CallGraph::new(r.nodes, r.edges);
        g.unresolved = r.unresolved;
        g
    }
}

impl From<CallGraph> for RawGraph {
    fn from(g: CallGraph) -> Self {
        RawGraph {
            nodes: g.nodes,
            edges: g.edges,
            unresolved: g.unresolved,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{path}:{line}: malformed edge, expected `caller,callee`")]
    Format { path: String, line: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid logging API pattern `{pattern}`: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

impl CallGraph {
    /// Node ids must equal their positions in `nodes`.
    pub fn new(nodes: Vec<MethodNode>, edges: Vec<CallEdge>) -> Self {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            assert_eq!(node.id, i, "node ids must be dense and ordered");
        }
        let mut fwd = vec![Vec::new(); n];
        let mut rev = vec![Vec::new(); n];
        for e in &edges {
            assert!(e.caller < n && e.callee < n, "edge references a missing node");
            fwd[e.caller].push(e.callee);
            rev[e.callee].push(e.caller);
        }
        for list in fwd.iter_mut().chain(rev.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let by_name = nodes.iter().map(|n| (n.fq_name.clone(), n.id)).collect();
        CallGraph {
            nodes,
            edges,
            unresolved: Vec::new(),
            fwd,
            rev,
            by_name,
        }
    }

    pub fn empty() -> Self {
        CallGraph::new(Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn id_of(&self, fq_name: &str) -> Option<usize> {
        self.by_name.get(fq_name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.nodes[id].fq_name
    }

    /// Distinct callees of `id`, ascending.
    pub fn callees(&self, id: usize) -> &[usize] {
        &self.fwd[id]
    }

    /// Distinct callers of `id`, ascending.
    pub fn callers(&self, id: usize) -> &[usize] {
        &self.rev[id]
    }

    pub fn in_degree(&self, id: usize) -> usize {
        self.rev[id].len()
    }

    pub fn edges_from(&self, id: usize) -> impl Iterator<Item = &CallEdge> {
        self.edges.iter().filter(move |e| e.caller == id)
    }

    pub fn direct_ids(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .filter(|n| n.log_tag == LogTag::Direct)
            .map(|n| n.id)
            .collect()
    }

    /// Deterministic `caller,callee` edge list, sorted and de-duplicated.
    pub fn to_edge_list(&self) -> String {
        let mut pairs: Vec<(&str, &str)> = self
            .edges
            .iter()
            .map(|e| (self.name(e.caller), self.name(e.callee)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut out = String::new();
        for (a, b) in pairs {
            let _ = writeln!(out, "{a},{b}");
        }
        out
    }

    pub fn export_edge_list(&self, path: &Path) -> Result<(), GraphError> {
        std::fs::write(path, self.to_edge_list()).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Builds the caller→callee graph: one node per corpus method plus a boundary
/// node for every callee without source.
pub fn build_call_graph(corpus: &Corpus) -> CallGraph {
    // (caller, callee, line, kind)
    let mut raw: Vec<(String, String, Option<u32>, EdgeKind)> = Vec::new();
    let mut unresolved = Vec::new();
    for m in corpus.source_index.values() {
        walk_block(&m.body, &mut |s| {
            let StmtKind::Call(c) = &s.kind else { return };
            match &c.target {
                CallTarget::Static(t) => {
                    if corpus.method(t).is_none() && !corpus.meta.external.contains(t) {
                        unresolved.push(UnresolvedCallee {
                            caller: m.fq_name.clone(),
                            callee: t.clone(),
                            line: s.line,
                        });
                    }
                    raw.push((m.fq_name.clone(), t.clone(), Some(s.line), EdgeKind::Static));
                }
                CallTarget::Dynamic(key) => {
                    for cand in corpus.dynamic_candidates(key) {
                        raw.push((
                            m.fq_name.clone(),
                            cand.clone(),
                            Some(s.line),
                            EdgeKind::Dynamic,
                        ));
                    }
                }
            }
        });
    }
    for ic in &corpus.meta.implicit_calls {
        raw.push((
            ic.caller.clone(),
            ic.callee.clone(),
            Some(ic.line),
            EdgeKind::Implicit,
        ));
    }
    let mut g = assemble(corpus, raw);
    g.unresolved = unresolved;
    g
}

fn assemble(corpus: &Corpus, raw: Vec<(String, String, Option<u32>, EdgeKind)>) -> CallGraph {
    let mut names: Vec<String> = corpus.source_index.keys().cloned().collect();
    let mut boundary: BTreeSet<String> = BTreeSet::new();
    for (a, b, _, _) in &raw {
        for n in [a, b] {
            if corpus.method(n).is_none() {
                boundary.insert(n.clone());
            }
        }
    }
    names.extend(boundary);
    let index: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let nodes = names
        .iter()
        .enumerate()
        .map(|(i, n)| MethodNode {
            id: i,
            fq_name: n.clone(),
            log_tag: LogTag::None,
            has_source: corpus.method(n).is_some(),
        })
        .collect();
    let mut edges: Vec<CallEdge> = raw
        .iter()
        .map(|(a, b, line, kind)| CallEdge {
            caller: index[a.as_str()],
            callee: index[b.as_str()],
            line: *line,
            kind: *kind,
        })
        .collect();
    edges.sort();
    CallGraph::new(nodes, edges)
}

/// Reads a `caller,callee` edge list. Blank lines and `#` comments are skipped.
/// Names with corpus sources get `has_source = true`.
pub fn import_call_graph(path: &Path, corpus: Option<&Corpus>) -> Result<CallGraph, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_edge_list(&text, &path.display().to_string(), corpus)
}

pub fn parse_edge_list(
    text: &str,
    origin: &str,
    corpus: Option<&Corpus>,
) -> Result<CallGraph, GraphError> {
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(GraphError::Format {
                path: origin.to_string(),
                line: i + 1,
            });
        }
        raw.push((
            fields[0].to_string(),
            fields[1].to_string(),
            None,
            EdgeKind::Imported,
        ));
    }
    let empty = Corpus::default();
    let corpus = corpus.unwrap_or(&empty);
    // only names that occur in the edge list become nodes
    let mut names: BTreeSet<String> = BTreeSet::new();
    for (a, b, _, _) in &raw {
        names.insert(a.clone());
        names.insert(b.clone());
    }
    let names: Vec<String> = names.into_iter().collect();
    let index: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let nodes = names
        .iter()
        .enumerate()
        .map(|(i, n)| MethodNode {
            id: i,
            fq_name: n.clone(),
            log_tag: LogTag::None,
            has_source: corpus.method(n).is_some(),
        })
        .collect();
    let mut edges: Vec<CallEdge> = raw
        .iter()
        .map(|(a, b, line, kind)| CallEdge {
            caller: index[a.as_str()],
            callee: index[b.as_str()],
            line: *line,
            kind: *kind,
        })
        .collect();
    edges.sort();
    edges.dedup();
    Ok(CallGraph::new(nodes, edges))
}

/// Compiled logging-API patterns matched against call text such as `log.info`.
#[derive(Debug, Clone)]
pub struct ApiPatterns {
    patterns: Vec<Regex>,
}

pub const DEFAULT_API_PATTERN: &str = r"^log\.(trace|debug|info|warn|error|fatal)$";

impl ApiPatterns {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, GraphError> {
        let patterns = patterns
            .iter()
            .map(|p| {
                Regex::new(p.as_ref()).map_err(|source| GraphError::Pattern {
                    pattern: p.as_ref().to_string(),
                    source,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(ApiPatterns { patterns })
    }

    pub fn matches(&self, call_text: &str) -> bool {
        self.patterns.iter().any(|p| p.is_match(call_text))
    }
}

impl Default for ApiPatterns {
    fn default() -> Self {
        ApiPatterns::new(&[DEFAULT_API_PATTERN]).expect("default pattern compiles")
    }
}

/// Methods that directly invoke a logging API: a matching log or call statement
/// in the body, or (for imported graphs) a callee whose name matches.
pub fn direct_log_methods(graph: &CallGraph, corpus: &Corpus, api: &ApiPatterns) -> BTreeSet<usize> {
    let mut direct = BTreeSet::new();
    for node in &graph.nodes {
        let mut hit = false;
        if let Some(m) = corpus.method(&node.fq_name) {
            walk_block(&m.body, &mut |s| match &s.kind {
                StmtKind::Log(l) => hit |= api.matches(&format!("log.{}", l.level.method_name())),
                StmtKind::Call(c) => hit |= api.matches(&c.written),
                _ => {}
            });
        }
        if !hit {
            hit = graph
                .callees(node.id)
                .iter()
                .any(|&c| !graph.nodes[c].has_source && api.matches(graph.name(c)));
        }
        if hit {
            direct.insert(node.id);
        }
    }
    direct
}

/// Tags `direct` as Direct and everything that can reach them as Indirect,
/// via multi-source breadth-first search over reverse edges.
pub fn tag_from_direct(graph: &CallGraph, direct: &BTreeSet<usize>) -> CallGraph {
    let mut g = graph.clone();
    for n in &mut g.nodes {
        n.log_tag = LogTag::None;
    }
    let mut seen = vec![false; g.len()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &d in direct {
        g.nodes[d].log_tag = LogTag::Direct;
        seen[d] = true;
        queue.push_back(d);
    }
    while let Some(n) = queue.pop_front() {
        for &caller in &graph.rev[n] {
            if !seen[caller] {
                seen[caller] = true;
                g.nodes[caller].log_tag = LogTag::Indirect;
                queue.push_back(caller);
            }
        }
    }
    g
}

pub fn tag_log_methods(graph: &CallGraph, corpus: &Corpus, api: &ApiPatterns) -> CallGraph {
    let direct = direct_log_methods(graph, corpus, api);
    tag_from_direct(graph, &direct)
}

/// Keeps exactly the Direct and Indirect nodes and the edges among them.
/// Surviving nodes are renumbered densely in their original order.
pub fn prune(graph: &CallGraph) -> CallGraph {
    let mut remap = vec![usize::MAX; graph.len()];
    let mut nodes = Vec::new();
    for n in &graph.nodes {
        if n.log_tag != LogTag::None {
            remap[n.id] = nodes.len();
            nodes.push(MethodNode {
                id: nodes.len(),
                ..n.clone()
            });
        }
    }
    let edges = graph
        .edges
        .iter()
        .filter(|e| remap[e.caller] != usize::MAX && remap[e.callee] != usize::MAX)
        .map(|e| CallEdge {
            caller: remap[e.caller],
            callee: remap[e.callee],
            ..e.clone()
        })
        .collect();
    CallGraph::new(nodes, edges)
}

/// Share of nodes kept by pruning, as a fraction of the original graph.
pub fn retained_ratio(kept: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        kept as f64 / total as f64
    }
}

/// A random graph with `n` nodes, up to `m` distinct edges (self-loops allowed,
/// so recursion shows up) and each node Direct with probability `p_direct`.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, m: usize, p_direct: f64) -> (CallGraph, BTreeSet<usize>) {
    let nodes = (0..n)
        .map(|i| MethodNode {
            id: i,
            fq_name: format!("R{i}.m/0"),
            log_tag: LogTag::None,
            has_source: true,
        })
        .collect();
    let mut pairs = BTreeSet::new();
    if n > 0 {
        for _ in 0..m {
            pairs.insert((rng.gen_range(0..n), rng.gen_range(0..n)));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| CallEdge {
            caller: a,
            callee: b,
            line: None,
            kind: EdgeKind::Static,
        })
        .collect();
    let direct = (0..n).filter(|_| rng.gen_bool(p_direct)).collect();
    (CallGraph::new(nodes, edges), direct)
}
