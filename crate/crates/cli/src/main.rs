use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use anomalygen_core::label::{AnnotationMatrix, ALPHA_BAR};
use anomalygen_core::pipeline::{Backend, Pipeline, PipelineConfig, PipelineError, Stage};

/// Synthesizes anomaly-labeled log sequences from source code without
/// running it.
#[derive(Debug, Parser)]
#[command(name = "anomalygen", version)]
struct Cli {
    #[command(flatten)]
    opts: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage in order.
    Run,
    /// Parse the corpus and list its log statements.
    Parse,
    /// Build the call graph and tag log methods.
    Graph,
    /// Keep only methods that log or reach a logging method.
    Prune,
    /// Extract entry-rooted, depth-bounded subgraphs.
    Extract,
    /// Build and enhance the log-oriented control-flow graphs.
    Enhance,
    /// Merge callee sequences into their callers.
    Merge,
    /// Label merged sequences and write the dataset.
    Label,
    /// Coverage and run summary.
    Report {
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Krippendorff's alpha over an `item,annotator,label` CSV file.
    Agreement {
        csv: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    RuleEngine,
    Llm,
}

/// Every flag overrides the same setting from `--config`, which in turn
/// overrides the built-in default.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Source file or directory (repeatable).
    #[arg(long, global = true)]
    corpus: Vec<PathBuf>,
    /// Directory for stage artifacts.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Regular expression matched against call text to spot logging calls (repeatable).
    #[arg(long = "log-api-pattern", global = true)]
    log_api_patterns: Vec<String>,
    #[arg(long, global = true)]
    entry_threshold: Option<usize>,
    #[arg(long, global = true)]
    depth_threshold: Option<usize>,
    /// Loop unrolling bound.
    #[arg(long, global = true)]
    loop_k: Option<usize>,
    #[arg(long, global = true)]
    path_budget: Option<usize>,
    #[arg(long, global = true)]
    merge_budget: Option<usize>,
    #[arg(long, global = true)]
    reentry_cap: Option<usize>,
    #[arg(long, value_enum, global = true)]
    backend: Option<BackendArg>,
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Name of the environment variable holding the API credential.
    #[arg(long, global = true)]
    credential_env: Option<String>,
    #[arg(long, global = true)]
    requests_per_second: Option<f64>,
    #[arg(long, global = true)]
    max_concurrency: Option<usize>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Labeling rules (TOML), replacing the built-in rule set.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Reference templates, one per line, for r-coverage and increment.
    #[arg(long, global = true)]
    reference: Option<PathBuf>,
    /// Annotations CSV for the agreement figure in the report.
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,
    #[arg(long, global = true)]
    review_rate: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

/// Paths in a config file are relative to the file.
fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn load_config(a: &ConfigArgs) -> Result<PipelineConfig, PipelineError> {
    let mut c = match &a.config {
        Some(path) => {
            let mut c = PipelineConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            c.corpus.iter_mut().for_each(|p| rebase(base, p));
            rebase(base, &mut c.output);
            for p in [&mut c.rules_path, &mut c.reference, &mut c.annotations, &mut c.reasoner.cache_dir]
                .into_iter()
                .flatten()
            {
                rebase(base, p);
            }
            c
        }
        None => PipelineConfig::default(),
    };
    if !a.corpus.is_empty() {
        c.corpus = a.corpus.clone();
    }
    if !a.log_api_patterns.is_empty() {
        c.log_api_patterns = a.log_api_patterns.clone();
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag.clone() { c.$($field).+ = v; })*
        };
    }
    set!(
        output => output,
        entry_threshold => entry_threshold,
        depth_threshold => depth_threshold,
        loop_k => loop_k,
        path_budget => path_budget,
        merge_budget => merge.budget,
        reentry_cap => merge.reentry_cap,
        endpoint => reasoner.llm.endpoint,
        model => reasoner.llm.model,
        credential_env => reasoner.llm.credential_env,
        requests_per_second => reasoner.llm.requests_per_second,
        max_concurrency => reasoner.llm.max_concurrency,
        review_rate => review_rate,
        seed => seed,
    );
    if let Some(b) = a.backend {
        c.reasoner.backend = match b {
            BackendArg::RuleEngine => Backend::RuleEngine,
            BackendArg::Llm => Backend::Llm,
        };
    }
    if a.cache_dir.is_some() {
        c.reasoner.cache_dir = a.cache_dir.clone();
    }
    if a.rules.is_some() {
        c.rules_path = a.rules.clone();
    }
    if a.reference.is_some() {
        c.reference = a.reference.clone();
    }
    if a.annotations.is_some() {
        c.annotations = a.annotations.clone();
    }
    Ok(c)
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Parse => Stage::Parse,
        Command::Graph => Stage::Graph,
        Command::Prune => Stage::Prune,
        Command::Extract => Stage::Extract,
        Command::Enhance => Stage::Enhance,
        Command::Merge => Stage::Merge,
        Command::Label => Stage::Label,
        _ => return None,
    })
}

fn execute(cli: &Cli) -> Result<()> {
    if let Command::Agreement { csv } = &cli.command {
        let file = File::open(csv).with_context(|| format!("cannot open {}", csv.display()))?;
        let report = AnnotationMatrix::from_csv(file)?.agreement()?;
        println!(
            "alpha={:.4} items={} annotators={} disagreements={}",
            report.alpha,
            report.n_items,
            report.n_annotators,
            report.disagreement_items.len()
        );
        if report.degenerate {
            println!("note: only one label value was used; alpha is 1 by convention");
        }
        if report.flagged {
            println!("warning: alpha below {ALPHA_BAR}");
        }
        return Ok(());
    }
    let pipeline = Pipeline::new(load_config(&cli.opts)?)?;
    match &cli.command {
        Command::Run => {
            for s in pipeline.run()? {
                if s.stage == Stage::Report {
                    print!("{}", s.detail);
                } else {
                    println!("{:<8} {}", s.stage.as_str(), s.detail);
                }
            }
            println!("dataset  {}", pipeline.artifact_path(Stage::Label.artifact()).display());
        }
        Command::Report { json } => {
            let report = pipeline.report()?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_text());
            }
        }
        other => {
            let stage = stage_of(other).expect("every other command is a stage");
            let s = pipeline.run_stage(stage)?;
            println!("{:<8} {} -> {}", s.stage.as_str(), s.detail, s.artifact.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>() {
        Some(PipelineError::Config(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
