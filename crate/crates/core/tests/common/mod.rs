#![allow(dead_code)]

use std::path::{Path, PathBuf};

use anomalygen_core::corpus::{parse_corpus, Corpus};
use anomalygen_core::pipeline::{Pipeline, PipelineConfig};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

pub fn fixture_corpus() -> Corpus {
    parse_corpus(&[fixture_dir()]).expect("fixture corpus parses")
}

pub fn fixture_config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        corpus: vec![fixture_dir()],
        output: out.to_path_buf(),
        ..PipelineConfig::default()
    }
}

/// Runs every stage over the fixture corpus into `out`.
pub fn run_fixture(out: &Path) -> Pipeline {
    let p = Pipeline::new(fixture_config(out)).expect("pipeline");
    p.run().expect("pipeline run");
    p
}

pub mod oracle {
    use std::collections::{BTreeMap, BTreeSet};

    use anomalygen_core::corpus::{Corpus, LogKey};
    use anomalygen_core::merge::{StepOp, UNFILLED};
    use anomalygen_core::LogSequence;
    use anomalygen_interp as interp;

    /// `<*>` in the generated text matches any run of characters.
    pub fn rendered_matches(generated: &str, actual: &str) -> bool {
        let parts: Vec<&str> = generated.split(UNFILLED).collect();
        if parts.len() == 1 {
            return generated == actual;
        }
        let mut rest = actual;
        for (i, p) in parts.iter().enumerate() {
            if i == 0 {
                let Some(r) = rest.strip_prefix(p) else { return false };
                rest = r;
            } else if i == parts.len() - 1 {
                return rest.ends_with(p);
            } else {
                let Some(at) = rest.find(p) else { return false };
                rest = &rest[at + p.len()..];
            }
        }
        true
    }

    /// Dispatch decisions the sequence's path commits to, keyed like the
    /// corpus metadata.
    pub fn dispatch_of(seq: &LogSequence, corpus: &Corpus) -> Result<BTreeMap<String, String>, String> {
        let mut key_of = BTreeMap::new();
        for (key, cands) in &corpus.meta.dynamic {
            for c in cands {
                key_of.insert(c.as_str(), key.as_str());
            }
        }
        let mut out = BTreeMap::new();
        for step in &seq.context.path {
            if let StepOp::Call { target, opaque: false, .. } = &step.op {
                if let Some(key) = key_of.get(target.as_str()) {
                    if let Some(prev) = out.insert(key.to_string(), target.clone()) {
                        if &prev != target {
                            return Err(format!("{key} dispatched to both {prev} and {target}"));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Replays a generated sequence on the reference interpreter with its
    /// witness inputs; `Err` describes the first divergence.
    pub fn check_sound(seq: &LogSequence, corpus: &Corpus) -> Result<(), String> {
        let dispatch = dispatch_of(seq, corpus)?;
        let mut full = interp::dispatch_choices(corpus)
            .into_iter()
            .next()
            .unwrap_or_default();
        full.extend(dispatch);
        let run = interp::run(corpus, &seq.root, &seq.context.witness, &full).map_err(|e| e.to_string())?;
        if run.events.len() != seq.events.len() {
            return Err(format!(
                "{}: {} generated events vs {} executed",
                seq.root,
                seq.events.len(),
                run.events.len()
            ));
        }
        for (g, a) in seq.events.iter().zip(&run.events) {
            if g.source.key != a.key || !rendered_matches(&g.rendered, &a.rendered) {
                return Err(format!(
                    "{}: generated {} \"{}\" vs executed {} \"{}\"",
                    seq.root, g.source.key, g.rendered, a.key, a.rendered
                ));
            }
        }
        Ok(())
    }

    /// Key lists the interpreter produces from `root` that no generated
    /// sequence for that root reproduces.
    pub fn missing_runs(root: &str, seqs: &[LogSequence], corpus: &Corpus) -> Vec<Vec<LogKey>> {
        let generated: BTreeSet<Vec<LogKey>> = seqs.iter().filter(|s| s.root == root).map(|s| s.keys()).collect();
        let mut missing = BTreeSet::new();
        for inputs in interp::input_assignments(corpus, root) {
            for dispatch in interp::dispatch_choices(corpus) {
                let Ok(run) = interp::run(corpus, root, &inputs, &dispatch) else { continue };
                let keys = run.keys();
                if !keys.is_empty() && !generated.contains(&keys) {
                    missing.insert(keys);
                }
            }
        }
        missing.into_iter().collect()
    }
}

/// Nominal alpha from its pairwise definition: observed disagreement is the
/// share of mismatching ordered pairs within each item (weighted 1/(m-1)),
/// expected disagreement the share over all pairable values pooled.
pub fn alpha_by_pairs<L: PartialEq>(cells: &[Vec<Option<L>>]) -> Option<f64> {
    let units: Vec<Vec<&L>> = cells
        .iter()
        .map(|r| r.iter().flatten().collect::<Vec<_>>())
        .filter(|u| u.len() >= 2)
        .collect();
    let pooled: Vec<&L> = units.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    if n < 2.0 {
        return None;
    }
    let mut d_o = 0.0;
    for u in &units {
        let mut mismatches = 0.0;
        for (i, a) in u.iter().enumerate() {
            for (j, b) in u.iter().enumerate() {
                if i != j && a != b {
                    mismatches += 1.0;
                }
            }
        }
        d_o += mismatches / (u.len() - 1) as f64;
    }
    d_o /= n;
    let mut mismatches = 0.0;
    for (i, a) in pooled.iter().enumerate() {
        for (j, b) in pooled.iter().enumerate() {
            if i != j && a != b {
                mismatches += 1.0;
            }
        }
    }
    let d_e = mismatches / (n * (n - 1.0));
    if d_e == 0.0 {
        return Some(1.0);
    }
    Some(1.0 - d_o / d_e)
}

/// Published reliability data (4 coders, 12 units, nominal alpha 0.743).
pub fn reliability_example() -> Vec<Vec<Option<u8>>> {
    let rows: [[u8; 12]; 4] = [
        [1, 2, 3, 3, 2, 1, 4, 1, 2, 0, 0, 0],
        [1, 2, 3, 3, 2, 2, 4, 1, 2, 5, 0, 3],
        [0, 3, 3, 3, 2, 3, 4, 2, 2, 5, 1, 0],
        [1, 2, 3, 3, 2, 4, 4, 1, 2, 5, 1, 0],
    ];
    (0..12)
        .map(|u| rows.iter().map(|r| (r[u] != 0).then_some(r[u])).collect())
        .collect()
}

pub mod programs {
    use std::collections::BTreeMap;
    use std::fmt::Write as _;

    use anomalygen_core::callgraph::{build_call_graph, prune, tag_log_methods, ApiPatterns, DEFAULT_API_PATTERN};
    use anomalygen_core::corpus::{parse_sources, Corpus};
    use anomalygen_core::enhance::{EnhanceContext, PathLimits};
    use anomalygen_core::lcfg::extract_subgraphs;
    use anomalygen_core::merge::{merge_bottom_up, MergeConfig};
    use anomalygen_core::reasoner::RuleEngine;
    use anomalygen_core::{LogSequence, Ternary};
    use rand::Rng;

    /// A random recursion-free program: one class, `n` static methods over an
    /// int parameter, calls only to higher-numbered methods.
    pub fn random_source<R: Rng>(rng: &mut R, n: usize) -> String {
        let mut out = String::from("class R {\n");
        for k in 0..n {
            let _ = writeln!(out, "    static void m{k}(int a) {{");
            let mut tag = 0;
            block(rng, &mut out, k, n, 2, 2, &mut tag);
            out.push_str("    }\n\n");
        }
        out.push_str("}\n");
        out
    }

    fn block<R: Rng>(rng: &mut R, out: &mut String, k: usize, n: usize, depth: usize, indent: usize, tag: &mut usize) {
        let pad = "    ".repeat(indent);
        for _ in 0..rng.gen_range(1..=3) {
            *tag += 1;
            let t = *tag;
            let callee = (k + 1 < n).then(|| rng.gen_range(k + 1..n));
            match rng.gen_range(0..8) {
                0 | 1 => {
                    let level = ["debug", "info", "warn", "error"][rng.gen_range(0..4)];
                    let _ = writeln!(out, "{pad}log.{level}(\"m{k} s{t} a={{}}\", a);");
                }
                2 | 3 if callee.is_some() => {
                    let d = rng.gen_range(-1..=1);
                    let _ = writeln!(out, "{pad}m{}(a + {d});", callee.unwrap());
                }
                4 if depth > 0 => {
                    let c = rng.gen_range(-1..=2);
                    let _ = writeln!(out, "{pad}if (a > {c}) {{");
                    block(rng, out, k, n, depth - 1, indent + 1, tag);
                    if rng.gen_bool(0.6) {
                        let _ = writeln!(out, "{pad}}} else {{");
                        block(rng, out, k, n, depth - 1, indent + 1, tag);
                    }
                    let _ = writeln!(out, "{pad}}}");
                }
                5 if depth > 0 && callee.is_some() => {
                    let _ = writeln!(out, "{pad}try {{");
                    let _ = writeln!(out, "{pad}    m{}(a);", callee.unwrap());
                    let _ = writeln!(out, "{pad}}} catch (Boom e) {{");
                    let _ = writeln!(out, "{pad}    log.warn(\"m{k} s{t} caught {{}}\", e);");
                    if rng.gen_bool(0.3) {
                        let _ = writeln!(out, "{pad}}} finally {{");
                        let _ = writeln!(out, "{pad}    log.debug(\"m{k} s{t} finally\");");
                    }
                    let _ = writeln!(out, "{pad}}}");
                }
                6 => {
                    let c = rng.gen_range(0..=2);
                    let _ = writeln!(out, "{pad}if (a == {c}) {{");
                    let _ = writeln!(out, "{pad}    log.error(\"m{k} s{t} failing with {{}}\", a);");
                    let _ = writeln!(out, "{pad}    throw new Boom();");
                    let _ = writeln!(out, "{pad}}}");
                }
                7 if depth > 0 => {
                    let v = format!("i{t}");
                    let _ = writeln!(out, "{pad}int {v} = 0;");
                    let _ = writeln!(out, "{pad}while ({v} < 2 && {v} < a) {{");
                    let _ = writeln!(out, "{pad}    log.debug(\"m{k} s{t} round {{}}\", {v});");
                    let _ = writeln!(out, "{pad}    {v} = {v} + 1;");
                    let _ = writeln!(out, "{pad}}}");
                }
                _ => {
                    let _ = writeln!(out, "{pad}log.info(\"m{k} s{t}\");");
                }
            }
        }
    }

    pub fn parse(source: &str) -> Corpus {
        parse_sources(&[("random.jsub".into(), source.into())]).unwrap_or_else(|e| panic!("{e}\n{source}"))
    }

    /// Every sequence the merge step accepts for `corpus`, before deduplication.
    pub fn generate(corpus: &Corpus) -> Vec<LogSequence> {
        generate_with_roots(corpus).1
    }

    /// Subgraph roots and the accepted sequences of all subgraphs.
    pub fn generate_with_roots(corpus: &Corpus) -> (Vec<String>, Vec<LogSequence>) {
        let api = ApiPatterns::new(&[DEFAULT_API_PATTERN]).unwrap();
        let pruned = prune(&tag_log_methods(&build_call_graph(corpus), corpus, &api));
        let Ok(subgraphs) = extract_subgraphs(&pruned, 2, 3) else { return (Vec::new(), Vec::new()) };
        let ctx = EnhanceContext::new(corpus, &RuleEngine, PathLimits::default()).unwrap();
        let cfgs: BTreeMap<_, _> = corpus
            .source_index
            .values()
            .map(|m| (m.fq_name.clone(), ctx.enhance(&Ternary::new(m, Vec::new()), &RuleEngine).unwrap()))
            .collect();
        let seqs = subgraphs
            .iter()
            .flat_map(|g| merge_bottom_up(g, &pruned, corpus, &cfgs, &RuleEngine, MergeConfig::default()).accepted)
            .collect();
        (subgraphs.into_iter().map(|g| g.root_name).collect(), seqs)
    }
}

pub mod discipline {
    use std::collections::BTreeMap;

    use anomalygen_core::merge::{ExecutionContext, LogEvent, StepOp};
    use anomalygen_core::LogSequence;
    use rand::Rng;

    /// Checks that every event belongs to the frame on top of the call stack
    /// when its log step runs, and that each callee's events (with its own
    /// callees') form one contiguous block.
    pub fn violation(seq: &LogSequence) -> Option<String> {
        let mut stack: Vec<usize> = Vec::new();
        let mut parent: BTreeMap<usize, Option<usize>> = BTreeMap::new();
        let mut logged = Vec::new();
        for (i, s) in seq.context.path.iter().enumerate() {
            match &s.op {
                StepOp::Enter { .. } => {
                    parent.insert(s.frame, stack.last().copied());
                    stack.push(s.frame);
                }
                StepOp::Exit { .. } => {
                    if stack.pop() != Some(s.frame) {
                        return Some(format!("step {i}: exit of frame {} not on top", s.frame));
                    }
                }
                StepOp::Log { .. } => {
                    if stack.last() != Some(&s.frame) {
                        return Some(format!("step {i}: log in frame {} while {:?} runs", s.frame, stack.last()));
                    }
                    logged.push((s.frame, s.node));
                }
                _ => {}
            }
        }
        let events: Vec<(usize, usize)> = seq.events.iter().map(|e| (e.source.frame, e.source.node)).collect();
        if events != logged {
            return Some("events differ from the logged steps".into());
        }
        let within = |mut f: usize, anc: usize| loop {
            if f == anc {
                break true;
            }
            match parent.get(&f).copied().flatten() {
                Some(p) => f = p,
                None => break false,
            }
        };
        for &f in parent.keys() {
            let idx: Vec<usize> = events.iter().enumerate().filter(|(_, e)| within(e.0, f)).map(|(i, _)| i).collect();
            if let (Some(a), Some(b)) = (idx.first(), idx.last()) {
                if b - a + 1 != idx.len() {
                    return Some(format!("events of frame {f} are interleaved with its caller's"));
                }
            }
        }
        None
    }

    /// Swaps two events from different frames.
    pub fn swap_events<R: Rng>(seq: &LogSequence, rng: &mut R) -> Option<(Vec<LogEvent>, ExecutionContext)> {
        let pairs: Vec<(usize, usize)> = (0..seq.events.len())
            .flat_map(|i| (i + 1..seq.events.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| seq.events[i].source.frame != seq.events[j].source.frame)
            .collect();
        if pairs.is_empty() {
            return None;
        }
        let (i, j) = pairs[rng.gen_range(0..pairs.len())];
        let mut events = seq.events.clone();
        events.swap(i, j);
        Some((events, seq.context.clone()))
    }

    /// Moves a callee's log step past the callee's exit, into the caller's
    /// bracket, keeping the events consistent with the new path.
    pub fn hoist_log<R: Rng>(seq: &LogSequence, rng: &mut R) -> Option<(Vec<LogEvent>, ExecutionContext)> {
        let path = &seq.context.path;
        let root = path.first()?.frame;
        let candidates: Vec<usize> = path
            .iter()
            .enumerate()
            .filter(|(_, s)| s.frame != root && matches!(s.op, StepOp::Log { .. }))
            .map(|(i, _)| i)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let p = candidates[rng.gen_range(0..candidates.len())];
        let frame = path[p].frame;
        let exit = path
            .iter()
            .enumerate()
            .skip(p)
            .find(|(_, s)| s.frame == frame && matches!(s.op, StepOp::Exit { .. }))?
            .0;
        let mut ctx = seq.context.clone();
        let step = ctx.path.remove(p);
        ctx.path.insert(exit, step);
        let order: Vec<(usize, usize)> = ctx
            .path
            .iter()
            .filter(|s| matches!(s.op, StepOp::Log { .. }))
            .map(|s| (s.frame, s.node))
            .collect();
        let mut events = Vec::new();
        for key in order {
            let e = seq.events.iter().find(|e| (e.source.frame, e.source.node) == key)?;
            events.push(e.clone());
        }
        Some((events, ctx))
    }
}
