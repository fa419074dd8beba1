use serde::{Deserialize, Serialize};

use crate::corpus::LogKey;
use crate::lcfg::{EdgeLabel, Lcfg, NodeId, NodeKind};

/// How many times a loop body may run per loop entry: 0, 1 or `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopPolicy {
    pub k: usize,
}

impl Default for LoopPolicy {
    fn default() -> Self {
        LoopPolicy { k: 2 }
    }
}

impl LoopPolicy {
    fn may_exit(self, iterations: usize) -> bool {
        iterations <= 1 || iterations == self.k
    }

    fn may_iterate(self, iterations: usize) -> bool {
        iterations < self.k
    }
}

/// One entry→exit walk through a method's graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodPath {
    pub id: usize,
    pub nodes: Vec<NodeId>,
    /// Indices into the graph's edge list; `edges[i]` leads from `nodes[i]` to `nodes[i + 1]`.
    pub edges: Vec<usize>,
    /// Exception type when the walk ends at a propagate-exit.
    pub exit: Option<String>,
    /// Branch decisions in path order, negated when the false side was taken.
    pub constraints: Vec<String>,
    pub logs: Vec<LogKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("path budget of {budget} exceeded in {owner}")]
pub struct PathBudgetExceeded {
    pub owner: String,
    pub budget: usize,
    pub partial: Vec<MethodPath>,
}

/// Every entry→exit path under the loop policy, in depth-first order with
/// successors taken by edge index.
pub fn enumerate_paths(
    lcfg: &Lcfg,
    policy: LoopPolicy,
    budget: usize,
) -> Result<Vec<MethodPath>, PathBudgetExceeded> {
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); lcfg.nodes.len()];
    for (i, e) in lcfg.edges.iter().enumerate() {
        out_edges[e.from].push(i);
    }
    let mut walker = Walker {
        lcfg,
        policy,
        budget,
        out_edges,
        nodes: vec![lcfg.entry],
        edges: Vec::new(),
        counters: Vec::new(),
        found: Vec::new(),
        exceeded: false,
    };
    walker.walk(lcfg.entry);
    if walker.exceeded {
        return Err(PathBudgetExceeded {
            owner: lcfg.owner.clone(),
            budget,
            partial: walker.found,
        });
    }
    Ok(walker.found)
}

struct Walker<'a> {
    lcfg: &'a Lcfg,
    policy: LoopPolicy,
    budget: usize,
    out_edges: Vec<Vec<usize>>,
    nodes: Vec<NodeId>,
    edges: Vec<usize>,
    /// Completed iterations of each loop currently on the path.
    counters: Vec<(NodeId, usize)>,
    found: Vec<MethodPath>,
    exceeded: bool,
}

impl Walker<'_> {
    fn count(&self, head: NodeId) -> usize {
        self.counters
            .iter()
            .rev()
            .find(|(h, _)| *h == head)
            .map_or(0, |(_, c)| *c)
    }

    fn walk(&mut self, at: NodeId) {
        if self.exceeded {
            return;
        }
        if self.lcfg.exits.contains(&at) {
            if self.found.len() == self.budget {
                self.exceeded = true;
                return;
            }
            self.found.push(self.finish());
            return;
        }
        let is_loop = matches!(self.lcfg.node(at).kind, NodeKind::LoopHead { .. });
        let iterations = if is_loop { self.count(at) } else { 0 };
        for i in 0..self.out_edges[at].len() {
            let ei = self.out_edges[at][i];
            let e = &self.lcfg.edges[ei];
            if is_loop {
                let allowed = match e.label {
                    EdgeLabel::LoopExit => self.policy.may_exit(iterations),
                    EdgeLabel::LoopBody => self.policy.may_iterate(iterations),
                    _ => true,
                };
                if !allowed {
                    continue;
                }
            }
            let to = e.to;
            let saved = self.counters.len();
            if e.back {
                let c = self.count(to);
                self.counters.push((to, c + 1));
            } else if matches!(self.lcfg.node(to).kind, NodeKind::LoopHead { .. }) {
                self.counters.push((to, 0));
            }
            self.nodes.push(to);
            self.edges.push(ei);
            self.walk(to);
            self.nodes.pop();
            self.edges.pop();
            self.counters.truncate(saved);
        }
    }

    fn finish(&self) -> MethodPath {
        let last = *self.nodes.last().expect("paths start at entry");
        let exit = match &self.lcfg.node(last).kind {
            NodeKind::Exit { exception } => exception.clone(),
            _ => None,
        };
        let mut constraints = Vec::new();
        let mut logs = Vec::new();
        for (i, &n) in self.nodes.iter().enumerate() {
            match &self.lcfg.node(n).kind {
                NodeKind::Branch { cond } | NodeKind::LoopHead { cond } => {
                    let taken = matches!(
                        self.lcfg.edges[self.edges[i]].label,
                        EdgeLabel::True | EdgeLabel::LoopBody
                    );
                    constraints.push(decision_text(cond, taken));
                }
                NodeKind::Log(l) => logs.push(l.key.clone()),
                _ => {}
            }
        }
        MethodPath {
            id: self.found.len(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            exit,
            constraints,
            logs,
        }
    }
}

pub(crate) fn decision_text(cond: &crate::corpus::Expr, taken: bool) -> String {
    if taken {
        cond.to_string()
    } else {
        crate::corpus::Expr::not(cond.clone()).to_string()
    }
}
