//! Source corpus: parsing `.jsub` files into method-level statement trees and
//! enumerating every log statement.

pub mod ast;
mod parser;
mod printer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use ast::*;
pub use parser::parse_expr;
pub use printer::{pretty_print, print_method};

use crate::eval::Value;

pub const META_FILE: &str = "corpus.meta.json";
pub const SOURCE_EXT: &str = "jsub";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{file}:{line}:{column}: syntax error: {message}")]
    Syntax {
        file: String,
        line: u32,
        column: u32,
        message: String,
    },
    #[error("duplicate method `{name}` (first in {first}, again in {second})")]
    DuplicateMethod {
        name: String,
        first: String,
        second: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid corpus metadata {path}: {message}")]
    Meta { path: String, message: String },
}

/// A call the parser cannot see but the call graph knows about, e.g. from bytecode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImplicitCall {
    pub caller: String,
    pub callee: String,
    /// Line of the statement the call belongs to.
    pub line: u32,
}

/// Finite input domains used by constraint checking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaultDomains {
    pub int: Vec<i64>,
    pub boolean: Vec<bool>,
    pub string: Vec<String>,
}

impl Default for DefaultDomains {
    fn default() -> Self {
        DefaultDomains {
            int: vec![-1, 0, 1, 2],
            boolean: vec![false, true],
            string: vec![String::new(), "x".to_string()],
        }
    }
}

impl DefaultDomains {
    pub fn for_type(&self, ty: Type) -> Vec<Value> {
        match ty {
            Type::Int => self.int.iter().map(|i| Value::Int(*i)).collect(),
            Type::Boolean => self.boolean.iter().map(|b| Value::Bool(*b)).collect(),
            Type::Str => self.string.iter().map(|s| Value::Str(s.clone())).collect(),
            Type::Void => Vec::new(),
        }
    }
}

/// Contents of `corpus.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusMeta {
    /// `Iface.method` → candidate implementations (`Class.method/arity`).
    #[serde(default)]
    pub dynamic: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub implicit_calls: Vec<ImplicitCall>,
    /// Methods known to live outside the corpus (no unresolved-callee diagnostic).
    #[serde(default)]
    pub external: BTreeSet<String>,
    /// Method → parameter → declared domain.
    #[serde(default)]
    pub domains: BTreeMap<String, BTreeMap<String, Vec<Value>>>,
    #[serde(default)]
    pub default_domains: DefaultDomains,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub classes: Vec<ClassDecl>,
    pub source_index: BTreeMap<String, MethodSource>,
    #[serde(default)]
    pub meta: CorpusMeta,
}

/// Identity of a log statement: owner method plus position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogKey {
    pub owner: String,
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for LogKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}:{}", self.owner, self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogStatement {
    pub owner: String,
    pub file: String,
    pub level: LogLevel,
    pub template: String,
    pub param_exprs: Vec<String>,
    pub position: u32,
    pub column: u32,
}

impl LogStatement {
    pub fn key(&self) -> LogKey {
        LogKey {
            owner: self.owner.clone(),
            line: self.position,
            column: self.column,
        }
    }
}

impl Corpus {
    pub fn method(&self, fq_name: &str) -> Option<&MethodSource> {
        self.source_index.get(fq_name)
    }

    pub fn method_count(&self) -> usize {
        self.source_index.len()
    }

    pub fn dynamic_candidates(&self, key: &str) -> &[String] {
        self.meta.dynamic.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Declared domain for a parameter, if the metadata names one.
    pub fn declared_domain(&self, method: &str, param: &str) -> Option<&[Value]> {
        self.meta
            .domains
            .get(method)
            .and_then(|m| m.get(param))
            .map(Vec::as_slice)
    }

    /// Declared domain, falling back to the type's default domain.
    pub fn input_domain(&self, method: &str, param: &str, ty: Type) -> Vec<Value> {
        match self.declared_domain(method, param) {
            Some(d) => d.to_vec(),
            None => self.meta.default_domains.for_type(ty),
        }
    }

    /// Implicit calls attached to `caller`, keyed by statement line.
    pub fn implicit_calls_of(&self, caller: &str) -> Vec<&ImplicitCall> {
        self.meta
            .implicit_calls
            .iter()
            .filter(|c| c.caller == caller)
            .collect()
    }
}

/// Parses every `.jsub` file named by `paths` (directories are searched
/// recursively) and loads `corpus.meta.json` from any given directory or file.
pub fn parse_corpus<P: AsRef<Path>>(paths: &[P]) -> Result<Corpus, CorpusError> {
    let mut files = Vec::new();
    let mut metas = Vec::new();
    for p in paths {
        collect(p.as_ref(), &mut files, &mut metas)?;
    }
    files.sort();
    files.dedup();
    metas.sort();
    metas.dedup();

    let mut sources = Vec::with_capacity(files.len());
    for f in &files {
        let text = fs::read_to_string(f).map_err(|source| CorpusError::Io {
            path: f.display().to_string(),
            source,
        })?;
        sources.push((f.display().to_string(), text));
    }
    let mut corpus = parse_sources(&sources)?;
    for m in metas {
        let text = fs::read_to_string(&m).map_err(|source| CorpusError::Io {
            path: m.display().to_string(),
            source,
        })?;
        let meta: CorpusMeta = serde_json::from_str(&text).map_err(|e| CorpusError::Meta {
            path: m.display().to_string(),
            message: e.to_string(),
        })?;
        merge_meta(&mut corpus.meta, meta);
    }
    Ok(corpus)
}

fn merge_meta(into: &mut CorpusMeta, from: CorpusMeta) {
    into.dynamic.extend(from.dynamic);
    into.implicit_calls.extend(from.implicit_calls);
    into.implicit_calls.sort();
    into.implicit_calls.dedup();
    into.external.extend(from.external);
    into.domains.extend(from.domains);
    into.default_domains = from.default_domains;
}

fn collect(p: &Path, files: &mut Vec<PathBuf>, metas: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: p.display().to_string(),
        source,
    };
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(p)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        entries.sort();
        for e in entries {
            if e.is_dir() {
                collect(&e, files, metas)?;
            } else if e.extension().is_some_and(|x| x == SOURCE_EXT) {
                files.push(e);
            } else if e.file_name().is_some_and(|n| n == META_FILE) {
                metas.push(e);
            }
        }
        Ok(())
    } else if p.file_name().is_some_and(|n| n == META_FILE) {
        metas.push(p.to_path_buf());
        Ok(())
    } else if p.exists() {
        files.push(p.to_path_buf());
        Ok(())
    } else {
        Err(io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "no such file or directory",
        )))
    }
}

/// Parses in-memory `(file name, text)` pairs in the given order.
pub fn parse_sources(sources: &[(String, String)]) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (file, text) in sources {
        let mut p = parser::Parser::new(file, text)?;
        for (class, methods) in p.parse_file()? {
            for m in methods {
                if let Some(prev) = corpus.source_index.get(&m.fq_name) {
                    return Err(CorpusError::DuplicateMethod {
                        name: m.fq_name.clone(),
                        first: format!("{}:{}", prev.span.file, prev.span.start_line),
                        second: format!("{}:{}", m.span.file, m.span.start_line),
                    });
                }
                corpus.source_index.insert(m.fq_name.clone(), m);
            }
            corpus.classes.push(class);
        }
    }
    Ok(corpus)
}

/// Every log statement in the corpus, ordered by (file, line, column).
pub fn list_log_statements(corpus: &Corpus) -> Vec<LogStatement> {
    let mut out = Vec::new();
    for m in corpus.source_index.values() {
        m.walk(&mut |s| {
            if let StmtKind::Log(l) = &s.kind {
                out.push(LogStatement {
                    owner: m.fq_name.clone(),
                    file: m.span.file.clone(),
                    level: l.level,
                    template: l.template.clone(),
                    param_exprs: l.args.iter().map(|a| a.to_string()).collect(),
                    position: s.line,
                    column: l.column,
                });
            }
        });
    }
    out.sort_by(|a, b| (&a.file, a.position, a.column).cmp(&(&b.file, b.position, b.column)));
    out
}

/// `Class.method/2` → (`Class`, `method`).
pub fn split_fq(fq: &str) -> (&str, &str) {
    let base = fq.split('/').next().unwrap_or(fq);
    match base.rsplit_once('.') {
        Some((c, m)) => (c, m),
        None => ("", base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Corpus, CorpusError> {
        parse_sources(&[("t.jsub".to_string(), text.to_string())])
    }

    #[test]
    fn minimal_method_with_one_log() {
        let c = parse("class A {\n void run() {\n log.info(\"started\");\n }\n}\n").unwrap();
        assert_eq!(c.method_count(), 1);
        let logs = list_log_statements(&c);
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].level, LogLevel::Info);
        assert_eq!(logs[0].owner, "A.run/0");
        assert_eq!(logs[0].position, 3);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        let c = parse_sources(&[]).unwrap();
        assert_eq!(c.method_count(), 0);
        assert!(list_log_statements(&c).is_empty());
        let empty: [&str; 0] = [];
        assert_eq!(parse_corpus(&empty).unwrap().method_count(), 0);
    }

    #[test]
    fn three_logs_share_owner() {
        let c = parse(
            "class A { void m() { log.info(\"a\"); log.warn(\"b\"); log.error(\"c\"); } void n() {} }",
        )
        .unwrap();
        let logs = list_log_statements(&c);
        assert_eq!(logs.len(), 3);
        assert!(logs.iter().all(|l| l.owner == "A.m/0"));
    }

    #[test]
    fn zero_logs() {
        let c = parse("class A { int f(int x) { return x + 1; } }").unwrap();
        assert!(list_log_statements(&c).is_empty());
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse("class A {\n void m() {\n x = ;\n }\n}").unwrap_err();
        match err {
            CorpusError::Syntax { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn placeholder_count_must_match() {
        let err = parse("class A { void m(int x) { log.info(\"{} {}\", x); } }").unwrap_err();
        assert!(err.to_string().contains("placeholder"), "{err}");
    }

    #[test]
    fn unknown_level_rejected() {
        assert!(parse("class A { void m() { log.notice(\"x\"); } }").is_err());
    }

    #[test]
    fn duplicate_method_detected() {
        let err = parse_sources(&[
            ("a.jsub".into(), "class A { void m() {} }".into()),
            ("b.jsub".into(), "class A { void m() {} }".into()),
        ])
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateMethod { .. }));
    }

    #[test]
    fn overloads_by_arity_are_distinct() {
        let c = parse("class A { void m() {} void m(int x) {} }").unwrap();
        assert!(c.method("A.m/0").is_some());
        assert!(c.method("A.m/1").is_some());
    }

    #[test]
    fn statement_kinds_parse() {
        let src = r#"
class S {
    static int all(int n, boolean f, String s) {
        int acc = 0;
        for (int i = 0; i < n; i = i + 1) {
            acc = acc + i;
        }
        while (acc > 10) {
            acc = acc - 1;
        }
        switch (n) {
            case 1: { log.debug("one"); }
            case -2: { log.debug("minus two"); }
            default: { log.debug("other {}", n); }
        }
        try {
            helper(acc);
            int r = Other.compute(acc, 2);
            calldyn Sink.put(r);
        } catch (IoException e) {
            log.warn("io {}", e);
            throw new WrappedException();
        } finally {
            log.trace("done");
        }
        if (!f && s == "x") {
            return -1;
        } else if (f) {
            return 1;
        }
        return acc;
    }
}
"#;
        let c = parse(src).unwrap();
        let m = c.method("S.all/3").unwrap();
        assert!(m.is_static);
        let mut kinds = 0;
        m.walk(&mut |_| kinds += 1);
        let mut ids = Vec::new();
        m.walk(&mut |s| ids.push(s.id));
        assert_eq!(ids, (0..kinds).collect::<Vec<u32>>());
        let mut dyn_calls = 0;
        m.walk(&mut |s| {
            if let StmtKind::Call(CallStmt {
                target: CallTarget::Dynamic(k),
                ..
            }) = &s.kind
            {
                assert_eq!(k, "Sink.put");
                dyn_calls += 1;
            }
        });
        assert_eq!(dyn_calls, 1);
        assert_eq!(list_log_statements(&c).len(), 5);
    }

    #[test]
    fn log_positions_lie_inside_owner_span() {
        let c = parse("class A {\n void m(int x) {\n if (x > 0) {\n log.info(\"p\");\n }\n }\n}\n").unwrap();
        for l in list_log_statements(&c) {
            let span = &c.method(&l.owner).unwrap().span;
            assert!(span.start_line <= l.position && l.position <= span.end_line);
        }
    }

    #[test]
    fn calls_in_expressions_rejected() {
        assert!(parse("class A { void m() { int x = 1 + f(2); } }").is_err());
    }

    #[test]
    fn split_names() {
        assert_eq!(split_fq("DataNode.setPermission/2"), ("DataNode", "setPermission"));
    }
}
