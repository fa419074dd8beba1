use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::callgraph::{CallGraph, LogTag};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubgraphError {
    #[error("pruned call graph is empty; nothing to extract")]
    NoSubgraphs,
    #[error("invalid thresholds: entry threshold must be at least 1")]
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub id: usize,
    pub root: usize,
    pub root_name: String,
    pub members: BTreeSet<usize>,
    pub depth: usize,
}

impl Subgraph {
    /// Shortest call chain inside the subgraph from the root to `target`,
    /// as fq names. `None` when `target` is not a member.
    pub fn call_path(&self, graph: &CallGraph, target: usize) -> Option<Vec<String>> {
        let parents = bfs(graph, self.root, self.depth, Some(&self.members));
        if !parents.contains_key(&target) {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while let Some(&(Some(p), _)) = parents.get(&cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some(path.into_iter().map(|i| graph.name(i).to_string()).collect())
    }

    pub fn member_names(&self, graph: &CallGraph) -> Vec<String> {
        self.members.iter().map(|&m| graph.name(m).to_string()).collect()
    }
}

/// Breadth-first closure up to `depth` hops: node → (parent, distance).
fn bfs(
    graph: &CallGraph,
    root: usize,
    depth: usize,
    within: Option<&BTreeSet<usize>>,
) -> BTreeMap<usize, (Option<usize>, usize)> {
    let mut seen = BTreeMap::from([(root, (None, 0))]);
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        let d = seen[&n].1;
        if d == depth {
            continue;
        }
        for &c in graph.callees(n) {
            if within.is_some_and(|w| !w.contains(&c)) || seen.contains_key(&c) {
                continue;
            }
            seen.insert(c, (Some(n), d + 1));
            queue.push_back(c);
        }
    }
    seen
}

/// Depth-bounded forward closure of `root`.
pub(crate) fn closure(graph: &CallGraph, root: usize, depth: usize) -> BTreeSet<usize> {
    bfs(graph, root, depth, None).into_keys().collect()
}

/// Roots are methods whose in-degree is at most `entry_threshold`. A root whose
/// closure holds no Direct method is re-rooted at the closure's frontier;
/// Direct methods still uncovered get a subgraph of their own. Subgraphs whose
/// members are a strict subset of another's are dropped, as are duplicates.
pub fn extract_subgraphs(
    graph: &CallGraph,
    entry_threshold: usize,
    depth_threshold: usize,
) -> Result<Vec<Subgraph>, SubgraphError> {
    if graph.is_empty() {
        return Err(SubgraphError::NoSubgraphs);
    }
    if entry_threshold == 0 {
        return Err(SubgraphError::Threshold);
    }
    let is_direct = |i: usize| graph.nodes[i].log_tag == LogTag::Direct;
    let mut found: BTreeMap<BTreeSet<usize>, usize> = BTreeMap::new();
    let mut tried = BTreeSet::new();
    let mut work: Vec<usize> = (0..graph.len())
        .filter(|&i| graph.in_degree(i) <= entry_threshold)
        .rev()
        .collect();
    while let Some(root) = work.pop() {
        if !tried.insert(root) {
            continue;
        }
        let reach = bfs(graph, root, depth_threshold, None);
        let members: BTreeSet<usize> = reach.keys().copied().collect();
        if members.iter().any(|&m| is_direct(m)) {
            found.entry(members).or_insert(root);
            continue;
        }
        let horizon = depth_threshold.max(1);
        let mut frontier: Vec<usize> = if depth_threshold == 0 {
            graph.callees(root).to_vec()
        } else {
            reach
                .iter()
                .filter(|(_, &(_, d))| d == horizon)
                .map(|(&n, _)| n)
                .collect()
        };
        frontier.sort_unstable();
        work.extend(frontier.into_iter().rev());
    }
    let covered: BTreeSet<usize> = found.keys().flatten().copied().collect();
    for d in graph.direct_ids() {
        if !covered.contains(&d) {
            found
                .entry(closure(graph, d, depth_threshold))
                .or_insert(d);
        }
    }
    let sets: Vec<(BTreeSet<usize>, usize)> = found.into_iter().collect();
    let mut kept: Vec<(usize, BTreeSet<usize>)> = sets
        .iter()
        .filter(|(m, _)| {
            !sets
                .iter()
                .any(|(other, _)| other.len() > m.len() && m.is_subset(other))
        })
        .map(|(m, r)| (*r, m.clone()))
        .collect();
    kept.sort();
    Ok(kept
        .into_iter()
        .enumerate()
        .map(|(id, (root, members))| Subgraph {
            id,
            root,
            root_name: graph.name(root).to_string(),
            members,
            depth: depth_threshold,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callgraph::{parse_edge_list, tag_from_direct};

    fn chain() -> CallGraph {
        let g = parse_edge_list("A,B\nB,C\n", "t", None).unwrap();
        let c = g.id_of("C").unwrap();
        tag_from_direct(&g, &BTreeSet::from([c]))
    }

    fn names(g: &CallGraph, s: &Subgraph) -> Vec<String> {
        s.member_names(g)
    }

    #[test]
    fn chain_depth_two_single_subgraph() {
        let g = chain();
        let subs = extract_subgraphs(&g, 1, 2).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].root_name, "A");
        assert_eq!(names(&g, &subs[0]), ["A", "B", "C"]);
        assert_eq!(
            subs[0].call_path(&g, g.id_of("C").unwrap()).unwrap(),
            ["A", "B", "C"]
        );
    }

    #[test]
    fn chain_depth_one_reroots() {
        let g = chain();
        let subs = extract_subgraphs(&g, 1, 1).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].root_name, "B");
        assert_eq!(names(&g, &subs[0]), ["B", "C"]);
    }

    #[test]
    fn empty_graph_is_an_error() {
        assert_eq!(
            extract_subgraphs(&CallGraph::empty(), 2, 3),
            Err(SubgraphError::NoSubgraphs)
        );
    }
}
