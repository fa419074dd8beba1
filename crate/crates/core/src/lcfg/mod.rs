//! Log-oriented control-flow graphs and dual-threshold subgraph extraction.

mod annotate;
mod build;
mod subgraph;

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

pub use annotate::annotate_lcfg;
pub use build::{build_lcfg, build_with, BuildOptions, InsertedCall};
pub use subgraph::{extract_subgraphs, Subgraph, SubgraphError};

use crate::corpus::{Expr, LogKey, LogLevel};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StmtOp {
    Assign { target: String, value: Expr },
    Return { value: Option<Expr> },
    /// Structural node with no effect: `finally` entry, rethrow after a
    /// `finally` copy, or return resumption.
    Marker(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallRef {
    Method(String),
    Dynamic { key: String, candidates: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallNode {
    pub target: CallRef,
    pub written: String,
    pub args: Vec<Expr>,
    pub assign_to: Option<String>,
    pub resolved: bool,
    pub dynamic: bool,
    /// Inserted during call completion rather than parsed.
    pub implicit: bool,
}

impl CallNode {
    /// Concrete callees this node may invoke.
    pub fn targets(&self) -> Vec<&str> {
        match &self.target {
            CallRef::Method(m) => vec![m.as_str()],
            CallRef::Dynamic { candidates, .. } => candidates.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogNode {
    pub key: LogKey,
    pub level: LogLevel,
    pub template: String,
    pub params: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Entry { params: Vec<String> },
    Exit { exception: Option<String> },
    Statement(StmtOp),
    Branch { cond: Expr },
    LoopHead { cond: Expr },
    Call(CallNode),
    Log(LogNode),
    Throw { exception: String },
    CatchEntry { exception: String, var: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcfgNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub line: u32,
    /// Statement the node was lowered from, if any.
    pub stmt: Option<u32>,
    /// Conjunction of branch decisions dominating the node (Log and Call only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<String>,
    /// No incoming edge yet (e.g. a catch block nothing is known to throw into).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unresolved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeLabel {
    Seq,
    True,
    False,
    LoopBody,
    LoopExit,
    Exception,
    Finally,
}

impl EdgeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeLabel::Seq => "seq",
            EdgeLabel::True => "true",
            EdgeLabel::False => "false",
            EdgeLabel::LoopBody => "loop-body",
            EdgeLabel::LoopExit => "loop-exit",
            EdgeLabel::Exception => "exception",
            EdgeLabel::Finally => "finally",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LcfgEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub label: EdgeLabel,
    /// Exception type carried along an `exception` edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exception: Option<String>,
    /// Closes a loop iteration.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub back: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lcfg {
    pub owner: String,
    pub nodes: Vec<LcfgNode>,
    pub edges: Vec<LcfgEdge>,
    pub entry: NodeId,
    pub exits: BTreeSet<NodeId>,
}

impl Lcfg {
    pub fn node(&self, id: NodeId) -> &LcfgNode {
        &self.nodes[id]
    }

    pub fn successors(&self, id: NodeId) -> impl Iterator<Item = &LcfgEdge> {
        self.edges.iter().filter(move |e| e.from == id)
    }

    pub fn predecessors(&self, id: NodeId) -> impl Iterator<Item = &LcfgEdge> {
        self.edges.iter().filter(move |e| e.to == id)
    }

    pub fn log_nodes(&self) -> impl Iterator<Item = (&LcfgNode, &LogNode)> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Log(l) => Some((n, l)),
            _ => None,
        })
    }

    pub fn call_nodes(&self) -> impl Iterator<Item = (&LcfgNode, &CallNode)> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Call(c) => Some((n, c)),
            _ => None,
        })
    }

    /// Nodes reachable from the entry.
    pub fn reachable(&self) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.entry];
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(self.successors(n).map(|e| e.to));
            }
        }
        seen
    }

    /// Deterministic line-oriented text form: sorted nodes, then sorted edges.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lcfg {}", self.owner);
        let _ = writeln!(out, "entry {}", self.entry);
        let exits: Vec<String> = self.exits.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(out, "exits {}", exits.join(" "));
        for n in &self.nodes {
            let _ = write!(out, "node {} line={} {}", n.id, n.line, n.kind);
            if !n.constraints.is_empty() {
                let _ = write!(out, " when [{}]", n.constraints.join(" && "));
            }
            if n.unresolved {
                out.push_str(" unresolved");
            }
            out.push('\n');
        }
        let mut edges = self.edges.clone();
        edges.sort();
        for e in &edges {
            let _ = write!(out, "edge {} -> {} {}", e.from, e.to, e.label.as_str());
            if let Some(x) = &e.exception {
                let _ = write!(out, "({x})");
            }
            if e.back {
                out.push_str(" back");
            }
            out.push('\n');
        }
        out
    }

    /// Graphviz rendering for documentation.
    pub fn to_dot(&self) -> String {
        let mut out = format!("digraph \"{}\" {{\n  node [shape=box, fontname=\"monospace\"];\n", self.owner);
        for n in &self.nodes {
            let shape = match n.kind {
                NodeKind::Branch { .. } | NodeKind::LoopHead { .. } => "diamond",
                NodeKind::Entry { .. } | NodeKind::Exit { .. } => "oval",
                NodeKind::Log(_) => "note",
                _ => "box",
            };
            let label = n.kind.to_string().replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(out, "  n{} [shape={shape}, label=\"{}: {label}\"];", n.id, n.id);
        }
        let mut edges = self.edges.clone();
        edges.sort();
        for e in &edges {
            let mut label = e.label.as_str().to_string();
            if let Some(x) = &e.exception {
                label = format!("{label}({x})");
            }
            let style = if e.label == EdgeLabel::Exception { ", style=dashed" } else { "" };
            let _ = writeln!(out, "  n{} -> n{} [label=\"{label}\"{style}];", e.from, e.to);
        }
        out.push_str("}\n");
        out
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Entry { params } => write!(f, "entry({})", params.join(", ")),
            NodeKind::Exit { exception: None } => f.write_str("exit"),
            NodeKind::Exit { exception: Some(x) } => write!(f, "exit throws {x}"),
            NodeKind::Statement(StmtOp::Assign { target, value }) => write!(f, "{target} = {value}"),
            NodeKind::Statement(StmtOp::Return { value: Some(v) }) => write!(f, "return {v}"),
            NodeKind::Statement(StmtOp::Return { value: None }) => f.write_str("return"),
            NodeKind::Statement(StmtOp::Marker(m)) => write!(f, "[{m}]"),
            NodeKind::Branch { cond } => write!(f, "branch {cond}"),
            NodeKind::LoopHead { cond } => write!(f, "loop {cond}"),
            NodeKind::Call(c) => {
                let args: Vec<String> = c.args.iter().map(|a| a.to_string()).collect();
                if let Some(v) = &c.assign_to {
                    write!(f, "{v} = ")?;
                }
                write!(f, "call {}({})", c.written, args.join(", "))?;
                if let CallRef::Dynamic { candidates, .. } = &c.target {
                    if !candidates.is_empty() {
                        write!(f, " -> {{{}}}", candidates.join(", "))?;
                    }
                }
                if c.implicit {
                    f.write_str(" implicit")?;
                }
                Ok(())
            }
            NodeKind::Log(l) => {
                let params: Vec<String> = l.params.iter().map(|a| a.to_string()).collect();
                write!(f, "log {} {:?}", l.level, l.template)?;
                if !params.is_empty() {
                    write!(f, " ({})", params.join(", "))?;
                }
                Ok(())
            }
            NodeKind::Throw { exception } => write!(f, "throw {exception}"),
            NodeKind::CatchEntry { exception, var } => write!(f, "catch {exception} {var}"),
        }
    }
}
