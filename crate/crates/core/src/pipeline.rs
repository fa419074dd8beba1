//! Stage orchestration, configuration and on-disk artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::callgraph::{build_call_graph, prune, tag_log_methods, ApiPatterns, CallGraph, LogTag};
use crate::corpus::{list_log_statements, parse_corpus, Corpus, LogKey};
use crate::enhance::{CompletionPlan, Consistency, EnhanceContext, EnhancedCfg, PathLimits, Ternary};
use crate::label::{
    label_sequence, sample_for_review, AgreementReport, AnnotationMatrix, AnomalyLabel, Evidence, RuleSet, RuleSpec,
};
use crate::lcfg::{extract_subgraphs, Subgraph};
use crate::merge::{merge_bottom_up, optimize_sequences, ExecutionContext, LoopPolicy, LogSequence, MergeConfig};
use crate::metrics::{coverage_of_keys, normalize_template, CoverageReport};
use crate::reasoner::{CachedReasoner, LlmConfig, LlmReasoner, Reasoner, RuleEngine};

pub const SCHEMA_VERSION: &str = "1.0";

/// JSON Schema every dataset line validates against.
pub const DATASET_SCHEMA: &str = include_str!("../schema/dataset_record.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    RuleEngine,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerConfig {
    pub backend: Backend,
    pub llm: LlmConfig,
    /// Directory of request-hash → verdict files.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            backend: Backend::RuleEngine,
            llm: LlmConfig::default(),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Source files or directories; `corpus.meta.json` files inside are picked up.
    pub corpus: Vec<PathBuf>,
    pub output: PathBuf,
    pub log_api_patterns: Vec<String>,
    pub entry_threshold: usize,
    pub depth_threshold: usize,
    pub loop_k: usize,
    pub path_budget: usize,
    pub merge: MergeConfig,
    pub reasoner: ReasonerConfig,
    pub rules: RuleSpec,
    /// TOML file with a `RuleSpec`; replaces `rules` when set.
    pub rules_path: Option<PathBuf>,
    /// Reference templates, one per line.
    pub reference: Option<PathBuf>,
    /// CSV of `item,annotator,label` for the review sample.
    pub annotations: Option<PathBuf>,
    pub review_rate: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: Vec::new(),
            output: PathBuf::from("out"),
            log_api_patterns: vec![crate::callgraph::DEFAULT_API_PATTERN.to_string()],
            entry_threshold: 2,
            depth_threshold: 3,
            loop_k: 2,
            path_budget: 10_000,
            merge: MergeConfig::default(),
            reasoner: ReasonerConfig::default(),
            rules: RuleSpec::default(),
            rules_path: None,
            reference: None,
            annotations: None,
            review_rate: 0.10,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.corpus.is_empty() {
            return bad("no corpus path given".into());
        }
        for p in &self.corpus {
            if !p.exists() {
                return bad(format!("corpus path {} does not exist", p.display()));
            }
        }
        if self.entry_threshold < 1 {
            return bad("entry_threshold must be at least 1".into());
        }
        if self.loop_k < 2 {
            return bad("loop_k must be at least 2".into());
        }
        if self.path_budget == 0 || self.merge.budget == 0 {
            return bad("budgets must be positive".into());
        }
        if !(self.review_rate > 0.0 && self.review_rate <= 1.0) {
            return bad(format!("review_rate {} outside (0, 1]", self.review_rate));
        }
        ApiPatterns::new(&self.log_api_patterns).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.rule_set()?;
        for p in [&self.reference, &self.annotations].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn rule_set(&self) -> Result<RuleSet, PipelineError> {
        let spec = match &self.rules_path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
            }
            None => self.rules.clone(),
        };
        RuleSet::new(spec).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Hash of every setting that can change the dataset; the output
    /// directory is excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn limits(&self) -> PathLimits {
        PathLimits {
            policy: LoopPolicy { k: self.loop_k },
            budget: self.path_budget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Parse,
    Graph,
    Prune,
    Extract,
    Enhance,
    Merge,
    Label,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Parse,
        Stage::Graph,
        Stage::Prune,
        Stage::Extract,
        Stage::Enhance,
        Stage::Merge,
        Stage::Label,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Graph => "graph",
            Stage::Prune => "prune",
            Stage::Extract => "extract",
            Stage::Enhance => "enhance",
            Stage::Merge => "merge",
            Stage::Label => "label",
            Stage::Report => "report",
        }
    }

    /// Primary artifact the stage writes.
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::Parse => "corpus.json",
            Stage::Graph => "callgraph.json",
            Stage::Prune => "pruned.json",
            Stage::Extract => "subgraphs.json",
            Stage::Enhance => "enhanced.json",
            Stage::Merge => "merged.json",
            Stage::Label => "dataset.jsonl",
            Stage::Report => "report.json",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage}: missing upstream artifact {}", path.display())]
    MissingUpstreamArtifact { stage: Stage, path: PathBuf },
    #[error("{stage} failed ({}): {source}", path.display())]
    Stage {
        stage: Stage,
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

/// Where stage artifacts live. Files by default; the trait keeps other
/// stores possible.
pub trait ArtifactStore: Send + Sync {
    fn read(&self, name: &str) -> io::Result<Vec<u8>>;
    fn write(&self, name: &str, bytes: &[u8]) -> io::Result<()>;
    fn exists(&self, name: &str) -> bool;
    fn location(&self, name: &str) -> PathBuf;
}

#[derive(Debug, Clone)]
pub struct FsStore {
    root: PathBuf,
}

impl FsStore {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(FsStore { root })
    }
}

impl ArtifactStore for FsStore {
    fn read(&self, name: &str) -> io::Result<Vec<u8>> {
        fs::read(self.root.join(name))
    }

    fn write(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.root.join(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)
    }

    fn exists(&self, name: &str) -> bool {
        self.root.join(name).is_file()
    }

    fn location(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnhanceArtifact {
    pub plan: CompletionPlan,
    pub throws: BTreeMap<String, BTreeSet<String>>,
    pub cfgs: BTreeMap<String, EnhancedCfg>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphSummary {
    pub id: usize,
    pub root: String,
    pub members: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rejection_counts: BTreeMap<String, usize>,
    pub budget_exceeded: bool,
    pub truncated: usize,
    pub all_rejected_root_paths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeArtifact {
    pub subgraphs: Vec<SubgraphSummary>,
    /// Accepted sequences from every subgraph before deduplication.
    pub merged: usize,
    pub sequences: Vec<LogSequence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subgraph: usize,
    pub root: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
    pub config_hash: String,
}

/// One line of `dataset.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema_version: String,
    pub id: String,
    pub fingerprints: Vec<String>,
    pub messages: Vec<String>,
    pub sources: Vec<LogKey>,
    pub context: ExecutionContext,
    pub constraints: Vec<String>,
    pub label: AnomalyLabel,
    pub evidence: Vec<Evidence>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub methods: usize,
    pub log_statements: usize,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub pruned_nodes: usize,
    pub pruned_edges: usize,
    pub subgraphs: usize,
    pub enhanced_cfgs: usize,
    pub quarantined: Vec<String>,
    pub path_budget_exceeded: Vec<String>,
    pub completions_accepted: usize,
    pub completions_rejected: usize,
    pub merged_sequences: usize,
    pub dataset_records: usize,
    pub anomalous: usize,
    pub rejection_counts: BTreeMap<String, usize>,
    pub merge_budget_exceeded: Vec<usize>,
    pub coverage: CoverageReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementReport>,
    pub review_sample: usize,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "config       {}", &self.config_hash[..12.min(self.config_hash.len())]);
        let _ = writeln!(out, "parse        {} methods, {} log statements", self.methods, self.log_statements);
        let _ = writeln!(out, "graph        {} nodes, {} edges", self.graph_nodes, self.graph_edges);
        let _ = writeln!(out, "prune        {} nodes, {} edges", self.pruned_nodes, self.pruned_edges);
        let _ = writeln!(out, "extract      {} subgraphs", self.subgraphs);
        let _ = writeln!(
            out,
            "enhance      {} cfgs, {} quarantined, {} over path budget, completions {} accepted / {} rejected",
            self.enhanced_cfgs,
            self.quarantined.len(),
            self.path_budget_exceeded.len(),
            self.completions_accepted,
            self.completions_rejected
        );
        let _ = writeln!(
            out,
            "merge        {} accepted, {} after dedup",
            self.merged_sequences, self.dataset_records
        );
        for (reason, n) in &self.rejection_counts {
            let _ = writeln!(out, "  rejected   {reason}: {n}");
        }
        let _ = writeln!(
            out,
            "label        {} records, {} anomalous, {} sampled for review",
            self.dataset_records, self.anomalous, self.review_sample
        );
        if let Some(a) = &self.agreement {
            let flag = if a.flagged { " (below 0.8)" } else { "" };
            let _ = writeln!(out, "agreement    alpha={:.4}{flag}", a.alpha);
        }
        out.push_str(&self.coverage.to_text());
        out
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    store: Box<dyn ArtifactStore>,
    reasoner: Box<dyn Reasoner>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("backend", &self.reasoner.backend())
            .finish()
    }
}

pub fn build_reasoner(config: &ReasonerConfig) -> io::Result<Box<dyn Reasoner>> {
    let inner: Box<dyn Reasoner> = match config.backend {
        Backend::RuleEngine => Box::new(RuleEngine),
        Backend::Llm => Box::new(LlmReasoner::new(config.llm.clone())),
    };
    Ok(match &config.cache_dir {
        Some(dir) => Box::new(CachedReasoner::with_dir(inner, dir)?),
        None => Box::new(CachedReasoner::new(inner)),
    })
}

/// Per-stage one-line summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSummary {
    pub stage: Stage,
    pub artifact: PathBuf,
    pub detail: String,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let reasoner = build_reasoner(&config.reasoner).map_err(|e| PipelineError::Config(e.to_string()))?;
        Self::with_reasoner(config, reasoner)
    }

    pub fn with_reasoner(config: PipelineConfig, reasoner: Box<dyn Reasoner>) -> Result<Self, PipelineError> {
        config.validate()?;
        let store = FsStore::new(&config.output).map_err(|e| PipelineError::Config(format!(
            "cannot create output directory {}: {e}",
            config.output.display()
        )))?;
        Ok(Pipeline {
            config,
            store: Box::new(store),
            reasoner,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn artifact_path(&self, name: &str) -> PathBuf {
        self.store.location(name)
    }

    /// Every stage in order.
    pub fn run(&self) -> Result<Vec<StageSummary>, PipelineError> {
        Stage::ALL.iter().map(|&s| self.run_stage(s)).collect()
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageSummary, PipelineError> {
        let detail = match stage {
            Stage::Parse => self.parse()?,
            Stage::Graph => self.graph()?,
            Stage::Prune => self.prune()?,
            Stage::Extract => self.extract()?,
            Stage::Enhance => self.enhance()?,
            Stage::Merge => self.merge()?,
            Stage::Label => self.label()?,
            Stage::Report => self.report()?.to_text(),
        };
        Ok(StageSummary {
            stage,
            artifact: self.store.location(stage.artifact()),
            detail,
        })
    }

    fn fail<E>(&self, stage: Stage, name: &str, e: E) -> PipelineError
    where
        E: Into<Box<dyn std::error::Error + Send + Sync>>,
    {
        PipelineError::Stage {
            stage,
            path: self.store.location(name),
            source: e.into(),
        }
    }

    fn load<T: DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<T, PipelineError> {
        if !self.store.exists(name) {
            return Err(PipelineError::MissingUpstreamArtifact {
                stage,
                path: self.store.location(name),
            });
        }
        let bytes = self.store.read(name).map_err(|e| self.fail(stage, name, e))?;
        serde_json::from_slice(&bytes).map_err(|e| self.fail(stage, name, e))
    }

    fn save<T: Serialize>(&self, stage: Stage, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| self.fail(stage, name, e))?;
        bytes.push(b'\n');
        self.store.write(name, &bytes).map_err(|e| self.fail(stage, name, e))
    }

    fn save_text(&self, stage: Stage, name: &str, text: &str) -> Result<(), PipelineError> {
        self.store.write(name, text.as_bytes()).map_err(|e| self.fail(stage, name, e))
    }

    fn parse(&self) -> Result<String, PipelineError> {
        let s = Stage::Parse;
        let corpus = parse_corpus(&self.config.corpus).map_err(|e| self.fail(s, s.artifact(), e))?;
        let statements = list_log_statements(&corpus);
        self.save(s, s.artifact(), &corpus)?;
        self.save(s, "log_statements.json", &statements)?;
        Ok(format!(
            "{} methods, {} log statements",
            corpus.method_count(),
            statements.len()
        ))
    }

    fn graph(&self) -> Result<String, PipelineError> {
        let s = Stage::Graph;
        let corpus: Corpus = self.load(s, Stage::Parse.artifact())?;
        let api = ApiPatterns::new(&self.config.log_api_patterns).map_err(|e| self.fail(s, s.artifact(), e))?;
        let graph = tag_log_methods(&build_call_graph(&corpus), &corpus, &api);
        self.save(s, s.artifact(), &graph)?;
        let tagged = graph.nodes.iter().filter(|n| n.log_tag != LogTag::None).count();
        Ok(format!(
            "{} nodes, {} edges, {} log-relevant, {} unresolved callees",
            graph.len(),
            graph.edges.len(),
            tagged,
            graph.unresolved.len()
        ))
    }

    fn prune(&self) -> Result<String, PipelineError> {
        let s = Stage::Prune;
        let graph: CallGraph = self.load(s, Stage::Graph.artifact())?;
        let pruned = prune(&graph);
        self.save(s, s.artifact(), &pruned)?;
        Ok(format!("{} of {} nodes kept", pruned.len(), graph.len()))
    }

    fn extract(&self) -> Result<String, PipelineError> {
        let s = Stage::Extract;
        let pruned: CallGraph = self.load(s, Stage::Prune.artifact())?;
        let subgraphs = extract_subgraphs(&pruned, self.config.entry_threshold, self.config.depth_threshold)
            .map_err(|e| self.fail(s, s.artifact(), e))?;
        self.save(s, s.artifact(), &subgraphs)?;
        Ok(format!("{} subgraphs", subgraphs.len()))
    }

    fn enhance(&self) -> Result<String, PipelineError> {
        let s = Stage::Enhance;
        let corpus: Corpus = self.load(s, Stage::Parse.artifact())?;
        let pruned: CallGraph = self.load(s, Stage::Prune.artifact())?;
        let subgraphs: Vec<Subgraph> = self.load(s, Stage::Extract.artifact())?;
        let reasoner = self.reasoner.as_ref();
        let ctx = EnhanceContext::new(&corpus, reasoner, self.config.limits()).map_err(|e| self.fail(s, s.artifact(), e))?;
        // call path from the first subgraph that reaches the method
        let call_path = |name: &str| -> Vec<String> {
            pruned
                .id_of(name)
                .and_then(|id| subgraphs.iter().find_map(|g| g.call_path(&pruned, id)))
                .unwrap_or_else(|| vec![name.to_string()])
        };
        let methods: Vec<_> = corpus.source_index.values().collect();
        let cfgs = methods
            .par_iter()
            .map(|m| {
                let t = Ternary::new(m, call_path(&m.fq_name));
                ctx.enhance(&t, reasoner).map(|c| (m.fq_name.clone(), c))
            })
            .collect::<Result<BTreeMap<_, _>, _>>()
            .map_err(|e| self.fail(s, s.artifact(), e))?;
        let quarantined = cfgs
            .values()
            .filter(|c| matches!(c.consistency, Consistency::Quarantined { .. }))
            .count();
        let text: String = cfgs.values().map(|c| c.to_text() + "\n").collect();
        let artifact = EnhanceArtifact {
            plan: ctx.plan,
            throws: ctx.throws,
            cfgs,
        };
        self.save(s, s.artifact(), &artifact)?;
        self.save_text(s, "lcfg.txt", &text)?;
        Ok(format!("{} cfgs, {} quarantined", artifact.cfgs.len(), quarantined))
    }

    fn merge(&self) -> Result<String, PipelineError> {
        let s = Stage::Merge;
        let corpus: Corpus = self.load(s, Stage::Parse.artifact())?;
        let pruned: CallGraph = self.load(s, Stage::Prune.artifact())?;
        let subgraphs: Vec<Subgraph> = self.load(s, Stage::Extract.artifact())?;
        let enhanced: EnhanceArtifact = self.load(s, Stage::Enhance.artifact())?;
        let reasoner = self.reasoner.as_ref();
        let outcomes: Vec<_> = subgraphs
            .par_iter()
            .map(|g| merge_bottom_up(g, &pruned, &corpus, &enhanced.cfgs, reasoner, self.config.merge))
            .collect();
        let keys: BTreeSet<LogKey> = list_log_statements(&corpus).iter().map(|l| l.key()).collect();
        let mut summaries = Vec::new();
        let mut all = Vec::new();
        for (g, o) in subgraphs.iter().zip(outcomes) {
            summaries.push(SubgraphSummary {
                id: g.id,
                root: g.root_name.clone(),
                members: g.members.len(),
                accepted: o.accepted.len(),
                rejected: o.rejected.len(),
                rejection_counts: o.rejection_counts,
                budget_exceeded: o.budget_exceeded,
                truncated: o.truncated,
                all_rejected_root_paths: o.all_rejected_root_paths,
            });
            all.extend(o.accepted);
        }
        let merged = all.len();
        let sequences = optimize_sequences(all, &|src| src.key.owner == src.method && keys.contains(&src.key));
        let detail = format!("{merged} accepted, {} after dedup", sequences.len());
        self.save(
            s,
            s.artifact(),
            &MergeArtifact {
                subgraphs: summaries,
                merged,
                sequences,
            },
        )?;
        Ok(detail)
    }

    fn label(&self) -> Result<String, PipelineError> {
        let s = Stage::Label;
        let merged: MergeArtifact = self.load(s, Stage::Merge.artifact())?;
        let rules = self.config.rule_set()?;
        let hash = self.config.hash();
        let records: Vec<DatasetRecord> = merged
            .sequences
            .into_par_iter()
            .enumerate()
            .map(|(i, seq)| to_record(i, label_sequence(seq, &rules), &hash))
            .collect();
        let mut out = String::new();
        for r in &records {
            out.push_str(&serde_json::to_string(r).map_err(|e| self.fail(s, s.artifact(), e))?);
            out.push('\n');
        }
        self.save_text(s, s.artifact(), &out)?;
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let sample = if ids.is_empty() {
            Vec::new()
        } else {
            sample_for_review(&ids, self.config.review_rate, self.config.seed).map_err(|e| self.fail(s, "review_sample.json", e))?
        };
        self.save(s, "review_sample.json", &sample)?;
        let anomalous = records.iter().filter(|r| r.label == AnomalyLabel::Anomalous).count();
        Ok(format!("{} records, {anomalous} anomalous", records.len()))
    }

    /// Coverage and summary over all persisted artifacts.
    pub fn report(&self) -> Result<RunReport, PipelineError> {
        let s = Stage::Report;
        let corpus: Corpus = self.load(s, Stage::Parse.artifact())?;
        let graph: CallGraph = self.load(s, Stage::Graph.artifact())?;
        let pruned: CallGraph = self.load(s, Stage::Prune.artifact())?;
        let subgraphs: Vec<Subgraph> = self.load(s, Stage::Extract.artifact())?;
        let enhanced: EnhanceArtifact = self.load(s, Stage::Enhance.artifact())?;
        let merged: MergeArtifact = self.load(s, Stage::Merge.artifact())?;
        let records = self.load_dataset()?;
        let sample: Vec<String> = self.load(s, "review_sample.json")?;

        let keys: Vec<&LogKey> = records.iter().flat_map(|r| r.sources.iter()).collect();
        let mut coverage = coverage_of_keys(keys.iter().copied(), &corpus).map_err(|e| self.fail(s, s.artifact(), e))?;
        if let Some(path) = &self.config.reference {
            let text = fs::read_to_string(path).map_err(|e| self.fail(s, s.artifact(), e))?;
            let reference: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            let statements = list_log_statements(&corpus);
            let used: BTreeSet<&LogKey> = keys.iter().copied().collect();
            let generated: BTreeSet<String> = statements
                .iter()
                .filter(|l| used.contains(&l.key()))
                .map(|l| normalize_template(&l.template))
                .collect();
            coverage = coverage
                .with_reference(&generated, &reference)
                .map_err(|e| self.fail(s, s.artifact(), e))?;
        }
        let agreement = match &self.config.annotations {
            Some(path) => {
                let f = fs::File::open(path).map_err(|e| self.fail(s, s.artifact(), e))?;
                let m = AnnotationMatrix::from_csv(f).map_err(|e| self.fail(s, s.artifact(), e))?;
                Some(m.agreement().map_err(|e| self.fail(s, s.artifact(), e))?)
            }
            None => None,
        };
        let mut rejection_counts = BTreeMap::new();
        for g in &merged.subgraphs {
            for (k, n) in &g.rejection_counts {
                *rejection_counts.entry(k.clone()).or_insert(0) += n;
            }
        }
        let report = RunReport {
            config_hash: self.config.hash(),
            methods: corpus.method_count(),
            log_statements: list_log_statements(&corpus).len(),
            graph_nodes: graph.len(),
            graph_edges: graph.edges.len(),
            pruned_nodes: pruned.len(),
            pruned_edges: pruned.edges.len(),
            subgraphs: subgraphs.len(),
            enhanced_cfgs: enhanced.cfgs.len(),
            quarantined: enhanced
                .cfgs
                .values()
                .filter(|c| matches!(c.consistency, Consistency::Quarantined { .. }))
                .map(|c| c.owner.clone())
                .collect(),
            path_budget_exceeded: enhanced
                .cfgs
                .values()
                .filter(|c| c.budget_exceeded)
                .map(|c| c.owner.clone())
                .collect(),
            completions_accepted: enhanced.plan.records.iter().filter(|r| r.accepted).count(),
            completions_rejected: enhanced.plan.records.iter().filter(|r| !r.accepted).count(),
            merged_sequences: merged.merged,
            dataset_records: records.len(),
            anomalous: records.iter().filter(|r| r.label == AnomalyLabel::Anomalous).count(),
            rejection_counts,
            merge_budget_exceeded: merged
                .subgraphs
                .iter()
                .filter(|g| g.budget_exceeded)
                .map(|g| g.id)
                .collect(),
            coverage,
            agreement,
            review_sample: sample.len(),
        };
        self.save(s, s.artifact(), &report)?;
        self.save_text(s, "report.txt", &report.to_text())?;
        Ok(report)
    }

    pub fn load_dataset(&self) -> Result<Vec<DatasetRecord>, PipelineError> {
        let s = Stage::Report;
        let name = Stage::Label.artifact();
        if !self.store.exists(name) {
            return Err(PipelineError::MissingUpstreamArtifact {
                stage: s,
                path: self.store.location(name),
            });
        }
        let bytes = self.store.read(name).map_err(|e| self.fail(s, name, e))?;
        read_dataset(&bytes).map_err(|e| self.fail(s, name, e))
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<Vec<DatasetRecord>, serde_json::Error> {
    bytes
        .split(|&b| b == b'\n')
        .filter(|l| !l.iter().all(u8::is_ascii_whitespace))
        .map(serde_json::from_slice)
        .collect()
}

fn to_record(i: usize, r: crate::label::AnomalyRecord, config_hash: &str) -> DatasetRecord {
    let seq = r.sequence;
    DatasetRecord {
        schema_version: SCHEMA_VERSION.to_string(),
        id: format!("seq-{:06}", i + 1),
        fingerprints: seq.fingerprints(),
        messages: seq.events.iter().map(|e| e.rendered.clone()).collect(),
        sources: seq.keys(),
        constraints: seq.constraints,
        label: r.label,
        evidence: r.evidence,
        provenance: Provenance {
            subgraph: seq.origin_subgraph,
            root: seq.root,
            backend: seq.verdict.backend,
            fallback: seq.verdict.fallback,
            config_hash: config_hash.to_string(),
        },
        context: seq.context,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig {
            corpus: vec!["x".into()],
            ..Default::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn missing_corpus_fails_validation() {
        let c = PipelineConfig {
            corpus: vec!["/definitely/not/here".into()],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            output: "elsewhere".into(),
            ..Default::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig {
            seed: 7,
            ..Default::default()
        };
        assert_ne!(a.hash(), c.hash());
    }
}
