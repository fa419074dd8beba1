//! Log-event coverage, reference coverage and increment figures.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{list_log_statements, Corpus, LogKey, LogLevel};
use crate::merge::LogSequence;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("denominator is zero")]
    ZeroDenominator,
    #[error("reference template list is empty")]
    EmptyReference,
}

/// Masks parameters to `<*>` and collapses whitespace. Idempotent.
pub fn normalize_template(t: &str) -> String {
    static PARAM: OnceLock<Regex> = OnceLock::new();
    let re = PARAM.get_or_init(|| Regex::new(r"\{\}|<\*>|\b\d+(\.\d+)?\b").expect("static pattern"));
    let masked = re.replace_all(t, "<*>");
    masked.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn coverage_ratio(generated: usize, total: usize) -> Result<f64, MetricsError> {
    if total == 0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(generated as f64 / total as f64)
}

/// Floor of `n_generated / n_reference`, printed as `NX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Increment(pub u64);

impl fmt::Display for Increment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}X", self.0)
    }
}

pub fn increment(n_generated: u64, n_reference: u64) -> Result<Increment, MetricsError> {
    if n_reference == 0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(Increment(n_generated / n_reference))
}

/// Percentage rounded to two decimals, as printed in coverage tables.
pub fn percent(ratio: f64) -> f64 {
    (ratio * 10_000.0).round() / 100.0
}

/// Fraction of distinct normalized reference templates that some generated
/// template matches after the same normalization.
pub fn r_coverage<S: AsRef<str>>(generated: &BTreeSet<String>, reference: &[S]) -> Result<f64, MetricsError> {
    let generated: BTreeSet<String> = generated.iter().map(|t| normalize_template(t)).collect();
    let reference: BTreeSet<String> = reference.iter().map(|t| normalize_template(t.as_ref())).collect();
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let matched = reference.iter().filter(|t| generated.contains(*t)).count();
    coverage_ratio(matched, reference.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingEvent {
    pub owner: String,
    pub key: LogKey,
    pub level: LogLevel,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_generated_events: usize,
    pub n_total_events: usize,
    pub coverage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increment: Option<Increment>,
    pub missing_events: Vec<MissingEvent>,
}

impl CoverageReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "log events   {}/{} ({:.2}%)",
            self.n_generated_events,
            self.n_total_events,
            percent(self.coverage)
        );
        if let Some(r) = self.r_coverage {
            let _ = writeln!(out, "r-coverage   {:.2}%", percent(r));
        }
        if let Some(i) = self.increment {
            let _ = writeln!(out, "increment    {i}");
        }
        for m in &self.missing_events {
            let _ = writeln!(out, "missing      {} [{}] \"{}\"", m.key, m.level.as_str(), m.template);
        }
        out
    }
}

/// Event identity: owner method plus normalized template.
fn event_id(owner: &str, template: &str) -> (String, String) {
    (owner.to_string(), normalize_template(template))
}

/// Distinct (owner, normalized template) events of the given log statements.
pub fn generated_events<'a, I>(keys: I, corpus: &Corpus) -> BTreeSet<(String, String)>
where
    I: IntoIterator<Item = &'a LogKey>,
{
    let templates: BTreeMap<LogKey, String> = list_log_statements(corpus)
        .into_iter()
        .map(|s| (s.key(), s.template))
        .collect();
    keys.into_iter()
        .filter_map(|k| templates.get(k).map(|t| event_id(&k.owner, t)))
        .collect()
}

/// Coverage of the corpus's log statements by the events whose source
/// statements are `keys`. A statement is covered when its event identity
/// appears among them.
pub fn coverage_of_keys<'a, I>(keys: I, corpus: &Corpus) -> Result<CoverageReport, MetricsError>
where
    I: IntoIterator<Item = &'a LogKey>,
{
    let generated = generated_events(keys, corpus);
    let statements = list_log_statements(corpus);
    let mut covered = 0;
    let mut missing_events = Vec::new();
    for s in &statements {
        if generated.contains(&event_id(&s.owner, &s.template)) {
            covered += 1;
        } else {
            missing_events.push(MissingEvent {
                owner: s.owner.clone(),
                key: s.key(),
                level: s.level,
                template: s.template.clone(),
            });
        }
    }
    Ok(CoverageReport {
        n_generated_events: covered,
        n_total_events: statements.len(),
        coverage: coverage_ratio(covered, statements.len())?,
        r_coverage: None,
        increment: None,
        missing_events,
    })
}

pub fn coverage<'a, I>(sequences: I, corpus: &Corpus) -> Result<CoverageReport, MetricsError>
where
    I: IntoIterator<Item = &'a LogSequence>,
{
    coverage_of_keys(sequences.into_iter().flat_map(|s| s.events.iter().map(|e| &e.source.key)), corpus)
}

impl CoverageReport {
    /// Adds reference figures from a template-per-line reference dataset.
    pub fn with_reference<S: AsRef<str>>(
        mut self,
        generated_templates: &BTreeSet<String>,
        reference: &[S],
    ) -> Result<Self, MetricsError> {
        self.r_coverage = Some(r_coverage(generated_templates, reference)?);
        self.increment = Some(increment(self.n_generated_events as u64, reference.len() as u64)?);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_idempotent() {
        for t in ["size={} MB", "took 12 ms,  id <*>", "plain"] {
            let once = normalize_template(t);
            assert_eq!(normalize_template(&once), once);
        }
        assert_eq!(normalize_template("size={} MB"), normalize_template("size=<*> MB"));
    }

    #[test]
    fn zero_denominators() {
        assert_eq!(coverage_ratio(0, 0), Err(MetricsError::ZeroDenominator));
        assert_eq!(increment(5, 0), Err(MetricsError::ZeroDenominator));
        assert_eq!(r_coverage::<&str>(&BTreeSet::new(), &[]), Err(MetricsError::EmptyReference));
    }

    #[test]
    fn increment_identity() {
        assert_eq!(increment(42, 42).unwrap().to_string(), "1X");
    }
}
