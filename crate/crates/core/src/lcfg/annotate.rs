use std::collections::BTreeSet;

use super::{EdgeLabel, Lcfg, NodeId, NodeKind};
use crate::corpus::Expr;

/// A branch decision: (deciding node, outcome).
type Atom = (NodeId, bool);

fn gen(lcfg: &Lcfg, from: NodeId, label: EdgeLabel) -> Option<Atom> {
    match (&lcfg.node(from).kind, label) {
        (NodeKind::Branch { .. }, EdgeLabel::True) | (NodeKind::LoopHead { .. }, EdgeLabel::LoopBody) => {
            Some((from, true))
        }
        (NodeKind::Branch { .. }, EdgeLabel::False) | (NodeKind::LoopHead { .. }, EdgeLabel::LoopExit) => {
            Some((from, false))
        }
        _ => None,
    }
}

pub(crate) fn render_atom(lcfg: &Lcfg, (node, outcome): Atom) -> String {
    let cond = match &lcfg.node(node).kind {
        NodeKind::Branch { cond } | NodeKind::LoopHead { cond } => cond,
        _ => unreachable!("atoms only come from branch-like nodes"),
    };
    if outcome {
        cond.to_string()
    } else {
        Expr::not(cond.clone()).to_string()
    }
}

/// Branch decisions that hold on every entry path to each node
/// (forward must-analysis, intersection at joins). Unreachable nodes get none.
pub(crate) fn must_decisions(lcfg: &Lcfg) -> Vec<BTreeSet<Atom>> {
    let n = lcfg.nodes.len();
    // None = top (not yet reached)
    let mut facts: Vec<Option<BTreeSet<Atom>>> = vec![None; n];
    facts[lcfg.entry] = Some(BTreeSet::new());
    let mut changed = true;
    while changed {
        changed = false;
        for id in 0..n {
            if id == lcfg.entry {
                continue;
            }
            let mut acc: Option<BTreeSet<Atom>> = None;
            for e in lcfg.predecessors(id) {
                let Some(pred) = &facts[e.from] else { continue };
                let mut out = pred.clone();
                out.extend(gen(lcfg, e.from, e.label));
                acc = Some(match acc {
                    None => out,
                    Some(a) => a.intersection(&out).copied().collect(),
                });
            }
            if acc.is_some() && acc != facts[id] {
                facts[id] = acc;
                changed = true;
            }
        }
    }
    facts.into_iter().map(Option::unwrap_or_default).collect()
}

/// Records on every Log and Call node the branch conditions dominating it,
/// ordered by the deciding node. Graph shape is untouched.
pub fn annotate_lcfg(lcfg: &Lcfg) -> Lcfg {
    let facts = must_decisions(lcfg);
    let mut out = lcfg.clone();
    for node in &mut out.nodes {
        node.constraints = match node.kind {
            NodeKind::Log(_) | NodeKind::Call(_) => facts[node.id]
                .iter()
                .map(|&a| render_atom(lcfg, a))
                .collect(),
            _ => Vec::new(),
        };
    }
    out
}
