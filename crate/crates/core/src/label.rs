//! Rule-based anomaly labels, review sampling and annotation agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::LogLevel;
use crate::merge::{ExecutionContext, LogSequence};

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("rule `{id}`: invalid pattern: {source}")]
    Pattern {
        id: String,
        #[source]
        source: regex::Error,
    },
    #[error("rule `{id}`: error-code pattern needs one capture group for the code")]
    MissingCodeGroup { id: String },
    #[error("duplicate rule id `{0}`")]
    DuplicateRule(String),
    #[error("nothing to sample from")]
    EmptyInput,
    #[error("sampling rate {0} outside (0, 1]")]
    Rate(f64),
    #[error("agreement needs at least two annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("no item carries two or more codings")]
    NoPairableItems,
    #[error("annotation file: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyLabel {
    Normal,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub id: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCodeRule {
    pub id: String,
    /// Must capture the numeric code in group 1.
    pub pattern: String,
    pub min_code: u64,
}

/// Explicit rules (level threshold, keywords) and implicit rules (error codes,
/// failure keywords). The TOML form is the `[rules]` table of the pipeline
/// config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleSpec {
    /// Events at or above this level are anomalous; `None` disables the rule.
    pub level_threshold: Option<LogLevel>,
    pub explicit: Vec<PatternRule>,
    pub error_codes: Vec<ErrorCodeRule>,
    pub implicit: Vec<PatternRule>,
}

impl Default for RuleSpec {
    fn default() -> Self {
        let rule = |id: &str, pattern: &str| PatternRule {
            id: id.into(),
            pattern: pattern.into(),
        };
        RuleSpec {
            level_threshold: Some(LogLevel::Error),
            explicit: vec![rule("explicit-exception", "Exception")],
            error_codes: vec![ErrorCodeRule {
                id: "implicit-error-code".into(),
                pattern: r"error_code=(\d+)".into(),
                min_code: 400,
            }],
            implicit: vec![
                rule("implicit-fail", r"(?i)fail"),
                rule("implicit-cannot", r"(?i)cannot"),
                rule("implicit-invalid", r"(?i)invalid"),
            ],
        }
    }
}

pub const LEVEL_RULE: &str = "explicit-level";

#[derive(Debug, Clone)]
pub struct RuleSet {
    spec: RuleSpec,
    explicit: Vec<(String, Regex)>,
    codes: Vec<(String, Regex, u64)>,
    implicit: Vec<(String, Regex)>,
}

impl RuleSet {
    pub fn new(spec: RuleSpec) -> Result<Self, LabelError> {
        let mut ids = BTreeSet::new();
        let mut fresh = |id: &str| {
            if ids.insert(id.to_string()) {
                Ok(())
            } else {
                Err(LabelError::DuplicateRule(id.to_string()))
            }
        };
        if spec.level_threshold.is_some() {
            fresh(LEVEL_RULE)?;
        }
        let compile = |id: &str, p: &str| {
            Regex::new(p).map_err(|source| LabelError::Pattern {
                id: id.to_string(),
                source,
            })
        };
        let mut explicit = Vec::new();
        for r in &spec.explicit {
            fresh(&r.id)?;
            explicit.push((r.id.clone(), compile(&r.id, &r.pattern)?));
        }
        let mut codes = Vec::new();
        for r in &spec.error_codes {
            fresh(&r.id)?;
            let re = compile(&r.id, &r.pattern)?;
            if re.captures_len() < 2 {
                return Err(LabelError::MissingCodeGroup { id: r.id.clone() });
            }
            codes.push((r.id.clone(), re, r.min_code));
        }
        let mut implicit = Vec::new();
        for r in &spec.implicit {
            fresh(&r.id)?;
            implicit.push((r.id.clone(), compile(&r.id, &r.pattern)?));
        }
        Ok(RuleSet {
            spec,
            explicit,
            codes,
            implicit,
        })
    }

    pub fn spec(&self) -> &RuleSpec {
        &self.spec
    }

    /// Evidence for one rendered event, explicit rules first.
    pub fn scan(&self, index: usize, level: Option<LogLevel>, text: &str) -> Vec<Evidence> {
        let mut out = Vec::new();
        let mut hit = |rule: &str, start: usize, end: usize| {
            out.push(Evidence {
                rule: rule.to_string(),
                event: index,
                matched: text[start..end].to_string(),
                start,
                end,
            })
        };
        if let (Some(min), Some(level)) = (self.spec.level_threshold, level) {
            if level >= min {
                hit(LEVEL_RULE, 0, text.len());
            }
        }
        for (id, re) in &self.explicit {
            for m in re.find_iter(text) {
                hit(id, m.start(), m.end());
            }
        }
        for (id, re, min) in &self.codes {
            for c in re.captures_iter(text) {
                let whole = c.get(0).expect("group 0");
                let code: Option<u64> = c.get(1).and_then(|g| g.as_str().parse().ok());
                if code.is_some_and(|code| code >= *min) {
                    hit(id, whole.start(), whole.end());
                }
            }
        }
        for (id, re) in &self.implicit {
            for m in re.find_iter(text) {
                hit(id, m.start(), m.end());
            }
        }
        out
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::new(RuleSpec::default()).expect("default rules compile")
    }
}

/// One rule match: `matched` is `rendered[start..end]` of event `event`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub rule: String,
    pub event: usize,
    pub matched: String,
    pub start: usize,
    pub end: usize,
}

/// < log_sequence, execution_context, anomaly_label >
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub sequence: LogSequence,
    pub label: AnomalyLabel,
    pub evidence: Vec<Evidence>,
}

impl AnomalyRecord {
    pub fn execution_context(&self) -> &ExecutionContext {
        &self.sequence.context
    }
}

fn level_of(fingerprint: &str) -> Option<LogLevel> {
    let inner = fingerprint.rsplit_once('[')?.1.strip_suffix(']')?;
    LogLevel::ALL.into_iter().find(|l| l.as_str() == inner)
}

pub fn label_sequence(seq: LogSequence, rules: &RuleSet) -> AnomalyRecord {
    let evidence: Vec<Evidence> = seq
        .events
        .iter()
        .enumerate()
        .flat_map(|(i, e)| rules.scan(i, level_of(&e.fingerprint), &e.rendered))
        .collect();
    AnomalyRecord {
        label: if evidence.is_empty() {
            AnomalyLabel::Normal
        } else {
            AnomalyLabel::Anomalous
        },
        evidence,
        sequence: seq,
    }
}

/// `floor(rate · N)` items drawn uniformly without replacement, returned in
/// input order.
pub fn sample_for_review<T: Clone>(records: &[T], rate: f64, seed: u64) -> Result<Vec<T>, LabelError> {
    if records.is_empty() {
        return Err(LabelError::EmptyInput);
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(LabelError::Rate(rate));
    }
    // tolerance so that e.g. 0.29 * 100 still yields 29
    let k = ((rate * records.len() as f64) + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, records.len(), k.min(records.len())).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| records[i].clone()).collect())
}

/// Agreement over a matrix `items × annotators` with missing codings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub alpha: f64,
    pub n_items: usize,
    pub n_annotators: usize,
    /// Items whose codings are not all equal.
    pub disagreement_items: Vec<usize>,
    /// Expected disagreement was zero: a single value was ever used, and
    /// alpha is reported as 1 by convention.
    pub degenerate: bool,
    /// Alpha below the 0.8 bar.
    pub flagged: bool,
}

pub const ALPHA_BAR: f64 = 0.8;

/// Krippendorff's alpha, nominal metric.
pub fn krippendorff_alpha<L: Ord + Clone>(annotations: &[Vec<Option<L>>]) -> Result<AgreementReport, LabelError> {
    let n_annotators = annotations.iter().map(Vec::len).max().unwrap_or(0);
    if n_annotators < 2 {
        return Err(LabelError::TooFewAnnotators(n_annotators));
    }
    // coincidence matrix over value indices
    let values: BTreeSet<&L> = annotations.iter().flatten().flatten().collect();
    let index: BTreeMap<&L, usize> = values.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let k = index.len();
    let mut o = vec![vec![0.0f64; k]; k];
    let mut disagreement_items = Vec::new();
    for (item, row) in annotations.iter().enumerate() {
        let codes: Vec<usize> = row.iter().flatten().map(|v| index[v]).collect();
        let m = codes.len();
        if m < 2 {
            continue;
        }
        if codes.iter().any(|&c| c != codes[0]) {
            disagreement_items.push(item);
        }
        let w = 1.0 / (m - 1) as f64;
        for (a, &ca) in codes.iter().enumerate() {
            for (b, &cb) in codes.iter().enumerate() {
                if a != b {
                    o[ca][cb] += w;
                }
            }
        }
    }
    let n_c: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    if n == 0.0 {
        return Err(LabelError::NoPairableItems);
    }
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..k {
        for kk in 0..k {
            if c != kk {
                d_o += o[c][kk];
                d_e += n_c[c] * n_c[kk];
            }
        }
    }
    let report = |alpha: f64, degenerate| AgreementReport {
        alpha,
        n_items: annotations.len(),
        n_annotators,
        disagreement_items: disagreement_items.clone(),
        degenerate,
        flagged: alpha < ALPHA_BAR,
    };
    if d_e == 0.0 {
        return Ok(report(1.0, true));
    }
    let alpha = 1.0 - (n - 1.0) * d_o / d_e;
    Ok(report(alpha, false))
}

/// Codings read from CSV rows `item,annotator,label` (a header row is
/// expected). Items and annotators are ordered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotationMatrix {
    pub items: Vec<String>,
    pub annotators: Vec<String>,
    pub cells: Vec<Vec<Option<String>>>,
}

impl AnnotationMatrix {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, LabelError> {
        #[derive(Deserialize)]
        struct Row {
            item: String,
            annotator: String,
            label: String,
        }
        let mut m = AnnotationMatrix::default();
        let mut rows = Vec::new();
        for r in csv::Reader::from_reader(reader).deserialize() {
            let r: Row = r?;
            if !m.items.contains(&r.item) {
                m.items.push(r.item.clone());
            }
            if !m.annotators.contains(&r.annotator) {
                m.annotators.push(r.annotator.clone());
            }
            rows.push(r);
        }
        m.cells = vec![vec![None; m.annotators.len()]; m.items.len()];
        for r in rows {
            let i = m.items.iter().position(|x| *x == r.item).expect("seen");
            let a = m.annotators.iter().position(|x| *x == r.annotator).expect("seen");
            m.cells[i][a] = Some(r.label);
        }
        Ok(m)
    }

    pub fn agreement(&self) -> Result<AgreementReport, LabelError> {
        krippendorff_alpha(&self.cells)
    }
}
