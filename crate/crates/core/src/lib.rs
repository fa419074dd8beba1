//! Execution-free synthesis of anomaly-labeled log sequences from source code.
//!
//! The pipeline runs in four phases:
//!
//! 1. [`callgraph`]: build the global call graph, tag methods that log directly or
//!    transitively, and prune everything else.
//! 2. [`lcfg`] and [`enhance`]: cut the pruned graph into depth-bounded subgraphs,
//!    build a log-oriented control-flow graph per method, then complete calls,
//!    add exception paths, link log parameters to their definitions and verify
//!    path constraints.
//! 3. [`merge`]: enumerate per-method paths and splice callee sequences into their
//!    callers with a stack, verifying each merge through a [`reasoner`].
//! 4. [`label`]: mark sequences as normal or anomalous with explicit and implicit
//!    rules, and measure annotation agreement.
//!
//! [`metrics`] computes coverage figures and [`pipeline`] wires the phases into
//! resumable stages.

pub mod callgraph;
pub mod corpus;
pub mod enhance;
pub mod eval;
pub mod label;
pub mod lcfg;
pub mod merge;
pub mod metrics;
pub mod pipeline;
pub mod reasoner;

pub use callgraph::{CallGraph, LogTag, MethodNode};
pub use corpus::{list_log_statements, parse_corpus, Corpus, LogStatement, MethodSource};
pub use enhance::{EnhancedCfg, Ternary};
pub use eval::Value;
pub use label::{AgreementReport, AnomalyLabel, AnomalyRecord, RuleSet};
pub use lcfg::{Lcfg, Subgraph};
pub use merge::{ExecutionContext, LogEvent, LogSequence};
pub use metrics::CoverageReport;
pub use pipeline::PipelineConfig;
pub use reasoner::{Reasoner, ReasonerRequest, ReasonerVerdict};
