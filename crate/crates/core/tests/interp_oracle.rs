mod common;

use anomalygen_core::pipeline::{MergeArtifact, Stage};
use anomalygen_core::lcfg::Subgraph;
use anomalygen_interp as interp;

use common::oracle::{check_sound, missing_runs, rendered_matches};

fn artifacts(dir: &std::path::Path) -> (MergeArtifact, Vec<Subgraph>) {
    let p = common::run_fixture(dir);
    let read = |name: &str| std::fs::read(p.artifact_path(name)).unwrap();
    (
        serde_json::from_slice(&read(Stage::Merge.artifact())).unwrap(),
        serde_json::from_slice(&read(Stage::Extract.artifact())).unwrap(),
    )
}

#[test]
fn wildcard_matching() {
    assert!(rendered_matches("a <*> b", "a 12 b"));
    assert!(rendered_matches("<*>", "<external>"));
    assert!(rendered_matches("at <*>", "at <external>"));
    assert!(!rendered_matches("a <*> b", "a 12 c"));
    assert!(!rendered_matches("exact", "exact!"));
}

#[test]
fn every_generated_sequence_is_executable() {
    let dir = tempfile::tempdir().unwrap();
    let (merged, _) = artifacts(dir.path());
    let corpus = common::fixture_corpus();
    assert!(!merged.sequences.is_empty());
    let failures: Vec<String> = merged.sequences.iter().filter_map(|s| check_sound(s, &corpus).err()).collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn every_execution_is_generated() {
    let dir = tempfile::tempdir().unwrap();
    let (merged, subgraphs) = artifacts(dir.path());
    let corpus = common::fixture_corpus();
    for g in &subgraphs {
        let missing = missing_runs(&g.root_name, &merged.sequences, &corpus);
        assert!(missing.is_empty(), "{}: {missing:#?}", g.root_name);
    }
}

#[test]
fn fixture_runs_never_get_stuck() {
    let corpus = common::fixture_corpus();
    for m in corpus.source_index.keys() {
        for inputs in interp::input_assignments(&corpus, m) {
            for d in interp::dispatch_choices(&corpus) {
                if let Err(e) = interp::run(&corpus, m, &inputs, &d) {
                    panic!("{m} {inputs:?}: {e}");
                }
            }
        }
    }
}

#[test]
fn tampered_sequences_are_caught() {
    let dir = tempfile::tempdir().unwrap();
    let (merged, _) = artifacts(dir.path());
    let corpus = common::fixture_corpus();
    let seq = merged.sequences.iter().find(|s| s.events.len() > 1).unwrap();

    let mut wrong_text = seq.clone();
    wrong_text.events[0].rendered.push_str(" (edited)");
    assert!(check_sound(&wrong_text, &corpus).is_err());

    let mut dropped = seq.clone();
    dropped.events.pop();
    assert!(check_sound(&dropped, &corpus).is_err());

    let mut swapped = seq.clone();
    swapped.events.swap(0, 1);
    assert!(check_sound(&swapped, &corpus).is_err());
}
