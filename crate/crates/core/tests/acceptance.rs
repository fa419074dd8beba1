//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anomalygen_core::callgraph::{prune, random_graph, tag_from_direct};
use anomalygen_core::corpus::LogLevel;
use anomalygen_core::label::{krippendorff_alpha, label_sequence, RuleSet, LEVEL_RULE};
use anomalygen_core::merge::{fingerprint, verify_merge, StepOp};
use anomalygen_core::metrics::{coverage_ratio, increment, percent};
use anomalygen_core::pipeline::{MergeArtifact, Stage};
use anomalygen_core::reasoner::{Decision, RuleEngine};
use anomalygen_core::{AnomalyLabel, CallGraph, LogSequence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{discipline, oracle, programs};

type Outcome = Result<String, String>;

fn main() -> ExitCode {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("pruning-correctness", pruning),
        ("metric-arithmetic", metric_arithmetic),
        ("interpreter-soundness", soundness),
        ("interpreter-completeness", completeness),
        ("stack-discipline", stack_discipline),
        ("exception-path-fidelity", exception_paths),
        ("labeling-golden-suite", labeling),
        ("krippendorff-alpha", alpha),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name:<26} {detail} ({secs:.2}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name:<26} {detail} ({secs:.2}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Names of nodes that reach a Direct node, by plain DFS per start node.
fn reachability_oracle(graph: &CallGraph, direct: &BTreeSet<usize>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for start in 0..graph.len() {
        let mut seen = vec![false; graph.len()];
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            if direct.contains(&n) {
                out.insert(graph.name(start).to_string());
                break;
            }
            stack.extend(graph.callees(n));
        }
    }
    out
}

const PRUNE_GRAPHS: u64 = 1000;
const PRUNE_LIMIT: Duration = Duration::from_secs(10);

fn pruning() -> Outcome {
    let mut spent = Duration::ZERO;
    for seed in 0..PRUNE_GRAPHS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=200);
        let m = rng.gen_range(0..=600);
        let p = rng.gen_range(0.0..0.3);
        let (graph, direct) = random_graph(&mut rng, n, m, p);
        let started = Instant::now();
        let pruned = prune(&tag_from_direct(&graph, &direct));
        spent += started.elapsed();
        let got: BTreeSet<String> = pruned.nodes.iter().map(|n| n.fq_name.clone()).collect();
        let want = reachability_oracle(&graph, &direct);
        ensure(got == want, || format!("seed {seed}: {} kept, oracle {}", got.len(), want.len()))?;
    }
    ensure(spent < PRUNE_LIMIT, || format!("pruning took {spent:?}"))?;
    Ok(format!("{PRUNE_GRAPHS} graphs match the oracle, pruning {:.3}s < 10s", spent.as_secs_f64()))
}

const PP_TOLERANCE: f64 = 0.01;

fn metric_arithmetic() -> Outcome {
    let ratios = [
        ("coverage 9225/9662", 9225, 9662, 95.48),
        ("coverage 2874/2889", 2874, 2889, 99.48),
        ("r-coverage 93/107", 93, 107, 86.92),
        ("r-coverage 14/15", 14, 15, 93.33),
    ];
    for (what, a, b, printed) in ratios {
        let got = percent(coverage_ratio(a, b).map_err(|e| e.to_string())?);
        ensure((got - printed).abs() <= PP_TOLERANCE, || format!("{what}: {got} vs {printed}"))?;
    }
    for (a, b, printed) in [(2874, 30, "95X"), (9225, 242, "38X")] {
        let got = increment(a, b).map_err(|e| e.to_string())?.to_string();
        ensure(got == printed, || format!("increment {a}/{b}: {got} vs {printed}"))?;
    }
    Ok(format!("4 ratios within ±{PP_TOLERANCE} pp, 2 increments exact"))
}

fn fixture_run() -> (tempfile::TempDir, MergeArtifact, Vec<anomalygen_core::Subgraph>) {
    let dir = tempfile::tempdir().expect("tempdir");
    let p = common::run_fixture(dir.path());
    let read = |s: Stage| std::fs::read(p.artifact_path(s.artifact())).expect("artifact");
    let merged = serde_json::from_slice(&read(Stage::Merge)).expect("merged.json");
    let subgraphs = serde_json::from_slice(&read(Stage::Extract)).expect("subgraphs.json");
    (dir, merged, subgraphs)
}

fn soundness() -> Outcome {
    let corpus = common::fixture_corpus();
    let widest = corpus.meta.domains.values().flat_map(|d| d.values()).map(Vec::len).max().unwrap_or(0);
    ensure(widest <= 8, || format!("a declared domain has {widest} values"))?;
    let (_dir, merged, _) = fixture_run();
    let violations: Vec<String> = merged.sequences.iter().filter_map(|s| oracle::check_sound(s, &corpus).err()).collect();
    ensure(violations.is_empty(), || format!("{} violations, first: {}", violations.len(), violations[0]))?;
    Ok(format!("{} sequences replayed, 0 violations", merged.sequences.len()))
}

fn completeness() -> Outcome {
    let corpus = common::fixture_corpus();
    let (dir, merged, subgraphs) = fixture_run();
    let mut missing = 0;
    let mut first = None;
    for g in &subgraphs {
        let m = oracle::missing_runs(&g.root_name, &merged.sequences, &corpus);
        missing += m.len();
        if first.is_none() && !m.is_empty() {
            first = Some(format!("{}: {:?}", g.root_name, m[0]));
        }
    }
    ensure(missing == 0, || format!("{missing} event lists not generated, first {}", first.unwrap_or_default()))?;
    let p = anomalygen_core::pipeline::Pipeline::new(common::fixture_config(dir.path())).map_err(|e| e.to_string())?;
    let report = p.report().map_err(|e| e.to_string())?;
    let c = &report.coverage;
    ensure(c.coverage == 1.0, || format!("coverage {}/{}", c.n_generated_events, c.n_total_events))?;
    Ok(format!(
        "{} roots, every execution generated; coverage {}/{} = 100%",
        subgraphs.len(),
        c.n_generated_events,
        c.n_total_events
    ))
}

const SELECTED: usize = 10_000;
const MUTATIONS: usize = 1_000;

fn stack_discipline() -> Outcome {
    // pool of sequences from seeded random programs, generated in parallel
    let mut pool: Vec<(usize, LogSequence)> = Vec::new();
    let mut batch = 0u64;
    while pool.len() < SELECTED + SELECTED / 5 {
        let found: Vec<(usize, LogSequence)> = (batch * 256..(batch + 1) * 256)
            .into_par_iter()
            .flat_map_iter(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.gen_range(3..8);
                let corpus = programs::parse(&programs::random_source(&mut rng, n));
                programs::generate(&corpus).into_iter().map(move |s| (seed as usize, s))
            })
            .collect();
        pool.extend(found);
        batch += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let selected: Vec<&(usize, LogSequence)> = pool.choose_multiple(&mut rng, SELECTED).collect();
    let nested = selected.iter().filter(|(_, s)| s.context.path.iter().any(|p| p.frame != s.context.path[0].frame)).count();
    for (seed, seq) in &selected {
        if let Some(v) = discipline::violation(seq) {
            return Err(format!("program {seed}, root {}: {v}", seq.root));
        }
    }
    let mut rejected = 0;
    let mut tried = 0;
    for (i, (_, seq)) in selected.iter().enumerate() {
        if tried == MUTATIONS {
            break;
        }
        let mutant = if i % 2 == 0 {
            discipline::hoist_log(seq, &mut rng).or_else(|| discipline::swap_events(seq, &mut rng))
        } else {
            discipline::swap_events(seq, &mut rng).or_else(|| discipline::hoist_log(seq, &mut rng))
        };
        let Some((events, ctx)) = mutant else { continue };
        tried += 1;
        if verify_merge(&events, &ctx, &RuleEngine).decision == Decision::Reject {
            rejected += 1;
        }
    }
    ensure(tried == MUTATIONS, || format!("only {tried} mutable sequences"))?;
    ensure(rejected == MUTATIONS, || format!("{rejected}/{MUTATIONS} mutations rejected"))?;
    Ok(format!(
        "{SELECTED} sequences ({nested} with callee frames) nested correctly; {rejected}/{MUTATIONS} mutations rejected"
    ))
}

fn exception_paths() -> Outcome {
    let (_dir, merged, _) = fixture_run();
    let root = "FSNamesystem.setPermission/2";
    let seqs: Vec<&LogSequence> = merged.sequences.iter().filter(|s| s.root == root).collect();
    let texts = |s: &LogSequence| s.events.iter().map(|e| e.rendered.clone()).collect::<Vec<_>>();
    let ending = |s: &LogSequence| match s.context.path.last().map(|p| &p.op) {
        Some(StepOp::Exit { exception }) => exception.clone(),
        _ => Some("<no exit>".into()),
    };
    let success = [
        "Set permission for /user/alice",
        "Released write lock for setPermission",
        "Flushing edit log buffer",
        "logSync finished, synced=1",
        "allowed=true ugi=hdfs cmd=setPermission src=/user/alice",
    ];
    let failure = [
        "Permission denied: user=guest is not the owner of /user/alice",
        "allowed=false ugi=guest cmd=setPermission src=/user/alice",
        "Released write lock for setPermission",
    ];
    let ok = seqs.iter().find(|s| texts(s) == success).ok_or("success-path sequence missing")?;
    ensure(ending(ok).is_none(), || "success path does not return normally".into())?;
    let bad = seqs.iter().find(|s| texts(s) == failure).ok_or("exception-path sequence missing")?;
    ensure(ending(bad).as_deref() == Some("AccessControlException"), || {
        format!("exception path ends with {:?}", ending(bad))
    })?;
    let levels: Vec<&str> = bad.events.iter().map(|e| e.fingerprint.rsplit(' ').next().unwrap_or("")).collect();
    ensure(levels == ["[WARN]", "[INFO]", "[DEBUG]"], || format!("exception-path levels {levels:?}"))?;
    let caught = bad.context.path.iter().any(|p| matches!(&p.op, StepOp::Catch { exception, .. } if exception == "AccessControlException"));
    ensure(caught, || "exception path never enters the handler".into())?;
    Ok(format!("{} setPermission sequences incl. success and AccessControlException paths", seqs.len()))
}

/// (level, message, expected evidence as (rule, matched text)).
const GOLDEN: &[(LogLevel, &str, &[(&str, &str)])] = &[
    (LogLevel::Error, "Disk full on /data", &[(LEVEL_RULE, "Disk full on /data")]),
    (LogLevel::Fatal, "Shutting down", &[(LEVEL_RULE, "Shutting down")]),
    (LogLevel::Warn, "Disk nearly full", &[]),
    (LogLevel::Info, "Block received", &[]),
    (LogLevel::Debug, "Heartbeat ok", &[]),
    (LogLevel::Trace, "enter loop", &[]),
    (LogLevel::Info, "java.io.IOException: broken pipe", &[("explicit-exception", "Exception")]),
    (LogLevel::Warn, "Caught AccessControlException for guest", &[("explicit-exception", "Exception")]),
    (LogLevel::Info, "exception swallowed", &[]),
    (LogLevel::Info, "Request done, error_code=500", &[("implicit-error-code", "error_code=500")]),
    (LogLevel::Info, "error_code=404 for /x", &[("implicit-error-code", "error_code=404")]),
    (LogLevel::Info, "error_code=200 ok", &[]),
    (LogLevel::Info, "error_code=399", &[]),
    (LogLevel::Info, "error_code=400", &[("implicit-error-code", "error_code=400")]),
    (LogLevel::Info, "Task failed after 3 attempts", &[("implicit-fail", "fail")]),
    (LogLevel::Warn, "FAILURE detected", &[("implicit-fail", "FAIL")]),
    (LogLevel::Info, "Cannot connect to namenode", &[("implicit-cannot", "Cannot")]),
    (LogLevel::Info, "Invalid block id", &[("implicit-invalid", "Invalid")]),
    (LogLevel::Info, "request is INVALID", &[("implicit-invalid", "INVALID")]),
    (LogLevel::Info, "Heartbeat accepted", &[]),
    (LogLevel::Info, "Allocated 512 MB to app_01", &[]),
    (LogLevel::Info, "Validation succeeded", &[]),
    (
        LogLevel::Error,
        "Exception in thread main",
        &[(LEVEL_RULE, "Exception in thread main"), ("explicit-exception", "Exception")],
    ),
    (
        LogLevel::Error,
        "Unknown op code 2, error_code=500",
        &[(LEVEL_RULE, "Unknown op code 2, error_code=500"), ("implicit-error-code", "error_code=500")],
    ),
    (
        LogLevel::Warn,
        "fail-over cannot start: invalid state",
        &[("implicit-fail", "fail"), ("implicit-cannot", "cannot"), ("implicit-invalid", "invalid")],
    ),
    (
        LogLevel::Info,
        "two codes error_code=500 and error_code=503",
        &[("implicit-error-code", "error_code=500"), ("implicit-error-code", "error_code=503")],
    ),
    (LogLevel::Info, "failed twice: fail", &[("implicit-fail", "fail"), ("implicit-fail", "fail")]),
    (LogLevel::Info, "Replica exists, error_code=409", &[("implicit-error-code", "error_code=409")]),
    (LogLevel::Info, "Shutdown complete", &[]),
    (LogLevel::Debug, "retrying in 3 s", &[]),
];

fn labeling() -> Outcome {
    ensure(GOLDEN.len() == 30, || format!("{} golden cases", GOLDEN.len()))?;
    let (_dir, merged, _) = fixture_run();
    let template = merged.sequences.first().ok_or("no sequence to label")?.clone();
    let rules = RuleSet::default();
    let mut anomalous = 0;
    for (i, &(level, text, want)) in GOLDEN.iter().enumerate() {
        let mut seq = template.clone();
        seq.events.truncate(1);
        seq.events[0].rendered = text.to_string();
        seq.events[0].fingerprint = fingerprint("Golden.case/0", level);
        let record = label_sequence(seq, &rules);
        let want_label = if want.is_empty() { AnomalyLabel::Normal } else { AnomalyLabel::Anomalous };
        ensure(record.label == want_label, || format!("case {i} \"{text}\": {:?}", record.label))?;
        let got: Vec<(&str, &str)> = record.evidence.iter().map(|e| (e.rule.as_str(), e.matched.as_str())).collect();
        ensure(got == want, || format!("case {i} \"{text}\": evidence {got:?}"))?;
        for e in &record.evidence {
            ensure(e.event == 0 && text.get(e.start..e.end) == Some(e.matched.as_str()), || {
                format!("case {i}: span {}..{} does not select \"{}\"", e.start, e.end, e.matched)
            })?;
        }
        anomalous += usize::from(want_label == AnomalyLabel::Anomalous);
    }
    Ok(format!("30 cases ({anomalous} anomalous) with exact evidence spans"))
}

const MICRO_TOLERANCE: f64 = 1e-9;
const MONTE_CARLO_ITEMS: usize = 10_000;
const MONTE_CARLO_TOLERANCE: f64 = 0.05;

fn alpha() -> Outcome {
    let perfect: Vec<Vec<Option<&str>>> = (0..50)
        .map(|i| {
            let l = if i % 3 == 0 { "anomalous" } else { "normal" };
            vec![Some(l), Some(l), Some(l)]
        })
        .collect();
    let r = krippendorff_alpha(&perfect).map_err(|e| e.to_string())?;
    ensure(r.alpha == 1.0 && !r.degenerate, || format!("perfect agreement gives {}", r.alpha))?;

    let mut micro: Vec<Vec<Vec<Option<u8>>>> = vec![
        vec![vec![Some(0), Some(1)], vec![Some(1), Some(0)]],
        vec![vec![Some(0), Some(0)], vec![Some(1), Some(1)], vec![Some(0), Some(1)]],
        vec![vec![Some(0), Some(0), None], vec![Some(1), Some(1), Some(1)], vec![None, Some(1), Some(0)]],
        vec![vec![Some(0), Some(1), Some(2)], vec![Some(2), Some(2), Some(2)], vec![Some(1), Some(1), None]],
        common::reliability_example(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let items = rng.gen_range(2..15);
        micro.push(
            (0..items)
                .map(|_| (0..3).map(|_| rng.gen_bool(0.85).then(|| rng.gen_range(0..3))).collect())
                .collect(),
        );
    }
    for (i, case) in micro.iter().enumerate() {
        let Some(want) = common::alpha_by_pairs(case) else { continue };
        let got = krippendorff_alpha(case).map_err(|e| format!("micro {i}: {e}"))?.alpha;
        ensure((got - want).abs() < MICRO_TOLERANCE, || format!("micro {i}: {got} vs oracle {want}"))?;
    }
    let published = krippendorff_alpha(&common::reliability_example()).map_err(|e| e.to_string())?.alpha;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random: Vec<Vec<Option<bool>>> = (0..MONTE_CARLO_ITEMS)
        .map(|_| (0..3).map(|_| Some(rng.gen_bool(0.5))).collect())
        .collect();
    let mc = krippendorff_alpha(&random).map_err(|e| e.to_string())?.alpha;
    ensure(mc.abs() <= MONTE_CARLO_TOLERANCE, || format!("random coders give {mc}"))?;
    Ok(format!(
        "perfect = 1.0; {} micro-cases within {MICRO_TOLERANCE:e} (published example {published:.4}); random coders {mc:+.4} within ±{MONTE_CARLO_TOLERANCE}",
        micro.len()
    ))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::run_fixture(a.path());
    common::run_fixture(b.path());
    let mut compared = 0;
    for name in ["dataset.jsonl", "review_sample.json", "merged.json", "report.json"] {
        let x = std::fs::read(a.path().join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(name)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{name} differs between runs"))?;
        compared += x.len();
    }
    Ok(format!("dataset and companion artifacts byte-identical ({compared} bytes)"))
}
