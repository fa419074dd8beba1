//! Concrete reference interpreter for the source subset.
//!
//! It runs method bodies directly from the statement tree with its own value
//! type and expression evaluator, so it shares no analysis code with the
//! generator it is used to check. Hidden calls declared in the corpus
//! metadata run right after the first simple statement on their line;
//! `calldyn` sites dispatch through a caller-supplied choice per interface
//! method; external callees return a placeholder and never throw.

use std::collections::BTreeMap;

use anomalygen_core::corpus::{
    BinaryOp, Block, CallTarget, Corpus, Expr, LogKey, LogLevel, MethodSource, Stmt, StmtKind, UnaryOp,
};
use anomalygen_core::eval::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
enum V {
    I(i64),
    B(bool),
    S(String),
}

impl V {
    fn from_core(v: &Value) -> V {
        match v {
            Value::Int(i) => V::I(*i),
            Value::Bool(b) => V::B(*b),
            Value::Str(s) => V::S(s.clone()),
        }
    }

    fn show(&self) -> String {
        match self {
            V::I(i) => i.to_string(),
            V::B(b) => b.to_string(),
            V::S(s) => s.clone(),
        }
    }
}

/// Placeholder rendered for values returned by external callees.
pub const EXTERNAL_VALUE: &str = "<external>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub key: LogKey,
    pub level: LogLevel,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ending {
    Returned,
    Threw(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Stuck {
    #[error("unknown method {0}")]
    UnknownMethod(String),
    #[error("variable `{0}` read before assignment")]
    Unbound(String),
    #[error("ill-typed operation: {0}")]
    Type(String),
    #[error("division by zero")]
    DivZero,
    #[error("no dispatch choice for {0}")]
    NoDispatch(String),
    #[error("step limit reached")]
    Fuel,
    #[error("call depth limit reached")]
    Depth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub events: Vec<Event>,
    pub ending: Ending,
}

impl Run {
    pub fn keys(&self) -> Vec<LogKey> {
        self.events.iter().map(|e| e.key.clone()).collect()
    }
}

enum Flow {
    Normal,
    Return(Option<V>),
    Throw(String),
}

pub struct Interpreter<'a> {
    corpus: &'a Corpus,
    dispatch: &'a BTreeMap<String, String>,
    events: Vec<Event>,
    fuel: usize,
    depth: usize,
}

const FUEL: usize = 100_000;
const MAX_DEPTH: usize = 64;

/// Runs `method` on `inputs` (by parameter name).
pub fn run(
    corpus: &Corpus,
    method: &str,
    inputs: &BTreeMap<String, Value>,
    dispatch: &BTreeMap<String, String>,
) -> Result<Run, Stuck> {
    let mut it = Interpreter {
        corpus,
        dispatch,
        events: Vec::new(),
        fuel: FUEL,
        depth: 0,
    };
    let m = corpus.method(method).ok_or_else(|| Stuck::UnknownMethod(method.into()))?;
    let args = m
        .params
        .iter()
        .map(|p| inputs.get(&p.name).map(V::from_core).ok_or_else(|| Stuck::Unbound(p.name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let ending = match it.invoke(m, args)? {
        Ok(_) => Ending::Returned,
        Err(x) => Ending::Threw(x),
    };
    Ok(Run {
        events: it.events,
        ending,
    })
}

type Env = BTreeMap<String, V>;

impl<'a> Interpreter<'a> {
    /// `Ok(Ok(ret))` on return, `Ok(Err(type))` on an escaping exception.
    fn invoke(&mut self, m: &MethodSource, args: Vec<V>) -> Result<Result<Option<V>, String>, Stuck> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(Stuck::Depth);
        }
        let mut env: Env = m.params.iter().map(|p| p.name.clone()).zip(args).collect();
        let hidden: Vec<(u32, String)> = self
            .corpus
            .meta
            .implicit_calls
            .iter()
            .filter(|c| c.caller == m.fq_name)
            .map(|c| (c.line, c.callee.clone()))
            .collect();
        let anchors = anchor_statements(m, &hidden);
        let flow = self.block(m, &m.body, &mut env, &anchors)?;
        self.depth -= 1;
        Ok(match flow {
            Flow::Normal => Ok(None),
            Flow::Return(v) => Ok(v),
            Flow::Throw(x) => Err(x),
        })
    }

    fn block(&mut self, m: &MethodSource, b: &Block, env: &mut Env, anchors: &Anchors) -> Result<Flow, Stuck> {
        for s in b {
            match self.stmt(m, s, env, anchors)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn stmt(&mut self, m: &MethodSource, s: &Stmt, env: &mut Env, anchors: &Anchors) -> Result<Flow, Stuck> {
        self.fuel = self.fuel.checked_sub(1).ok_or(Stuck::Fuel)?;
        let flow = match &s.kind {
            StmtKind::Assign { target, value, .. } => {
                let v = self.eval(value, env)?;
                env.insert(target.clone(), v);
                Flow::Normal
            }
            StmtKind::If {
                cond,
                then_branch,
                else_branch,
            } => {
                if self.truth(cond, env)? {
                    self.block(m, then_branch, env, anchors)?
                } else if let Some(e) = else_branch {
                    self.block(m, e, env, anchors)?
                } else {
                    Flow::Normal
                }
            }
            StmtKind::While { cond, body } => {
                while self.truth(cond, env)? {
                    self.fuel = self.fuel.checked_sub(1).ok_or(Stuck::Fuel)?;
                    match self.block(m, body, env, anchors)? {
                        Flow::Normal => {}
                        other => return Ok(other),
                    }
                }
                Flow::Normal
            }
            StmtKind::For {
                init,
                cond,
                update,
                body,
            } => {
                if let Some(i) = init {
                    if let f @ (Flow::Return(_) | Flow::Throw(_)) = self.stmt(m, i, env, anchors)? {
                        return Ok(f);
                    }
                }
                while self.truth(cond, env)? {
                    match self.block(m, body, env, anchors)? {
                        Flow::Normal => {}
                        other => return Ok(other),
                    }
                    if let Some(u) = update {
                        if let f @ (Flow::Return(_) | Flow::Throw(_)) = self.stmt(m, u, env, anchors)? {
                            return Ok(f);
                        }
                    }
                }
                Flow::Normal
            }
            StmtKind::Switch {
                scrutinee,
                cases,
                default,
            } => {
                let v = self.eval(scrutinee, env)?;
                let mut chosen = default.as_ref();
                for (label, body) in cases {
                    if self.eval(label, env)? == v {
                        chosen = Some(body);
                        break;
                    }
                }
                match chosen {
                    Some(b) => self.block(m, b, env, anchors)?,
                    None => Flow::Normal,
                }
            }
            StmtKind::Try {
                body,
                catches,
                finally,
            } => {
                let mut flow = self.block(m, body, env, anchors)?;
                if let Flow::Throw(x) = &flow {
                    if let Some(c) = catches.iter().find(|c| c.exception == *x) {
                        env.insert(c.var.clone(), V::S(x.clone()));
                        flow = self.block(m, &c.body, env, anchors)?;
                    }
                }
                if let Some(f) = finally {
                    match self.block(m, f, env, anchors)? {
                        Flow::Normal => flow,
                        other => other,
                    }
                } else {
                    flow
                }
            }
            StmtKind::Throw { exception } => Flow::Throw(exception.clone()),
            StmtKind::Return(v) => Flow::Return(match v {
                Some(e) => Some(self.eval(e, env)?),
                None => None,
            }),
            StmtKind::Log(l) => {
                let vals = l
                    .args
                    .iter()
                    .map(|a| self.eval(a, env).map(|v| v.show()))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut rendered = String::new();
                let mut pieces = l.template.split("{}");
                rendered.push_str(pieces.next().unwrap_or_default());
                for (i, p) in pieces.enumerate() {
                    rendered.push_str(&vals[i]);
                    rendered.push_str(p);
                }
                self.events.push(Event {
                    key: LogKey {
                        owner: m.fq_name.clone(),
                        line: s.line,
                        column: l.column,
                    },
                    level: l.level,
                    rendered,
                });
                Flow::Normal
            }
            StmtKind::Call(c) => {
                let callee = match &c.target {
                    CallTarget::Static(t) => t.clone(),
                    CallTarget::Dynamic(k) => self.dispatch.get(k).cloned().ok_or_else(|| Stuck::NoDispatch(k.clone()))?,
                };
                let args = c
                    .args
                    .iter()
                    .map(|a| self.eval(a, env))
                    .collect::<Result<Vec<_>, _>>()?;
                match self.call(&callee, args)? {
                    Ok(ret) => {
                        if let Some((_, var)) = &c.assign {
                            env.insert(var.clone(), ret.unwrap_or_else(|| V::S(EXTERNAL_VALUE.into())));
                        }
                        Flow::Normal
                    }
                    Err(x) => Flow::Throw(x),
                }
            }
        };
        if let Flow::Normal = flow {
            if let Some(callees) = anchors.get(&s.id) {
                for callee in callees {
                    if let Err(x) = self.call(callee, Vec::new())? {
                        return Ok(Flow::Throw(x));
                    }
                }
            }
        }
        Ok(flow)
    }

    fn call(&mut self, callee: &str, args: Vec<V>) -> Result<Result<Option<V>, String>, Stuck> {
        match self.corpus.method(callee) {
            Some(m) => self.invoke(m, args),
            None => Ok(Ok(Some(V::S(EXTERNAL_VALUE.into())))),
        }
    }

    fn truth(&mut self, e: &Expr, env: &Env) -> Result<bool, Stuck> {
        match self.eval(e, env)? {
            V::B(b) => Ok(b),
            other => Err(Stuck::Type(format!("condition {e} is {other:?}"))),
        }
    }

    fn eval(&mut self, e: &Expr, env: &Env) -> Result<V, Stuck> {
        Ok(match e {
            Expr::Int(i) => V::I(*i),
            Expr::Bool(b) => V::B(*b),
            Expr::Str(s) => V::S(s.clone()),
            Expr::Var(v) => env.get(v).cloned().ok_or_else(|| Stuck::Unbound(v.clone()))?,
            Expr::Unary(UnaryOp::Not, x) => match self.eval(x, env)? {
                V::B(b) => V::B(!b),
                o => return Err(Stuck::Type(format!("!{o:?}"))),
            },
            Expr::Unary(UnaryOp::Neg, x) => match self.eval(x, env)? {
                V::I(i) => V::I(i.wrapping_neg()),
                o => return Err(Stuck::Type(format!("-{o:?}"))),
            },
            Expr::Binary(BinaryOp::And, a, b) => match self.eval(a, env)? {
                V::B(false) => V::B(false),
                V::B(true) => match self.eval(b, env)? {
                    V::B(r) => V::B(r),
                    o => return Err(Stuck::Type(format!("&& {o:?}"))),
                },
                o => return Err(Stuck::Type(format!("{o:?} &&"))),
            },
            Expr::Binary(BinaryOp::Or, a, b) => match self.eval(a, env)? {
                V::B(true) => V::B(true),
                V::B(false) => match self.eval(b, env)? {
                    V::B(r) => V::B(r),
                    o => return Err(Stuck::Type(format!("|| {o:?}"))),
                },
                o => return Err(Stuck::Type(format!("{o:?} ||"))),
            },
            Expr::Binary(op, a, b) => {
                let l = self.eval(a, env)?;
                let r = self.eval(b, env)?;
                binary(*op, l, r)?
            }
        })
    }
}

fn binary(op: BinaryOp, l: V, r: V) -> Result<V, Stuck> {
    use BinaryOp::*;
    Ok(match (op, l, r) {
        (Add, V::I(a), V::I(b)) => V::I(a.wrapping_add(b)),
        (Add, V::S(a), b) => V::S(a + &b.show()),
        (Add, a, V::S(b)) => V::S(a.show() + &b),
        (Sub, V::I(a), V::I(b)) => V::I(a.wrapping_sub(b)),
        (Mul, V::I(a), V::I(b)) => V::I(a.wrapping_mul(b)),
        (Div | Rem, V::I(_), V::I(0)) => return Err(Stuck::DivZero),
        (Div, V::I(a), V::I(b)) => V::I(a.wrapping_div(b)),
        (Rem, V::I(a), V::I(b)) => V::I(a.wrapping_rem(b)),
        (Lt, V::I(a), V::I(b)) => V::B(a < b),
        (Le, V::I(a), V::I(b)) => V::B(a <= b),
        (Gt, V::I(a), V::I(b)) => V::B(a > b),
        (Ge, V::I(a), V::I(b)) => V::B(a >= b),
        (Eq, V::I(a), V::I(b)) => V::B(a == b),
        (Eq, V::B(a), V::B(b)) => V::B(a == b),
        (Eq, V::S(a), V::S(b)) => V::B(a == b),
        (Ne, V::I(a), V::I(b)) => V::B(a != b),
        (Ne, V::B(a), V::B(b)) => V::B(a != b),
        (Ne, V::S(a), V::S(b)) => V::B(a != b),
        (op, l, r) => return Err(Stuck::Type(format!("{l:?} {} {r:?}", op.symbol()))),
    })
}

type Anchors = BTreeMap<u32, Vec<String>>;

/// Statement id after which each hidden call runs: the first assignment,
/// call or log statement on the declared line, in source order.
fn anchor_statements(m: &MethodSource, hidden: &[(u32, String)]) -> Anchors {
    let mut out: Anchors = BTreeMap::new();
    for (line, callee) in hidden {
        let mut found = None;
        m.walk(&mut |s| {
            let simple = matches!(s.kind, StmtKind::Assign { .. } | StmtKind::Call(_) | StmtKind::Log(_));
            if found.is_none() && simple && s.line == *line {
                found = Some(s.id);
            }
        });
        if let Some(id) = found {
            out.entry(id).or_default().push(callee.clone());
        }
    }
    out
}

/// Every combination of dispatch choices for the corpus's dynamic keys, in
/// key order with the first key varying slowest.
pub fn dispatch_choices(corpus: &Corpus) -> Vec<BTreeMap<String, String>> {
    let mut out = vec![BTreeMap::new()];
    for (key, candidates) in &corpus.meta.dynamic {
        let mut next = Vec::new();
        for partial in &out {
            for c in candidates {
                let mut p = partial.clone();
                p.insert(key.clone(), c.clone());
                next.push(p);
            }
        }
        if !candidates.is_empty() {
            out = next;
        }
    }
    out
}

/// Every assignment of `method`'s parameters over their input domains.
pub fn input_assignments(corpus: &Corpus, method: &str) -> Vec<BTreeMap<String, Value>> {
    let Some(m) = corpus.method(method) else {
        return Vec::new();
    };
    let mut out = vec![BTreeMap::new()];
    for p in &m.params {
        let domain = corpus.input_domain(method, &p.name, p.ty);
        let mut next = Vec::with_capacity(out.len() * domain.len());
        for partial in &out {
            for v in &domain {
                let mut a = partial.clone();
                a.insert(p.name.clone(), v.clone());
                next.push(a);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use anomalygen_core::corpus::parse_sources;

    fn corpus(src: &str) -> Corpus {
        parse_sources(&[("t.jsub".into(), src.into())]).unwrap()
    }

    #[test]
    fn catch_then_finally() {
        let c = corpus(
            "class A { void f(int x) {\n try {\n g(x);\n log.info(\"ok\");\n } catch (Boom e) {\n log.warn(\"caught {}\", e);\n } finally {\n log.info(\"done\");\n }\n }\n void g(int x) {\n if (x > 0) {\n throw new Boom();\n }\n } }",
        );
        let inputs = BTreeMap::from([("x".to_string(), Value::Int(1))]);
        let r = run(&c, "A.f/1", &inputs, &BTreeMap::new()).unwrap();
        let texts: Vec<_> = r.events.iter().map(|e| e.rendered.as_str()).collect();
        assert_eq!(texts, ["caught Boom", "done"]);
        assert_eq!(r.ending, Ending::Returned);
    }

    #[test]
    fn loop_and_return_value() {
        let c = corpus(
            "class A { void f(int n) {\n int i = 0;\n while (i < n) {\n int d = twice(i);\n log.info(\"d={}\", d);\n i = i + 1;\n }\n }\n int twice(int v) {\n return v * 2;\n } }",
        );
        let inputs = BTreeMap::from([("n".to_string(), Value::Int(2))]);
        let r = run(&c, "A.f/1", &inputs, &BTreeMap::new()).unwrap();
        let texts: Vec<_> = r.events.iter().map(|e| e.rendered.as_str()).collect();
        assert_eq!(texts, ["d=0", "d=2"]);
    }

    #[test]
    fn uncaught_exception_escapes() {
        let c = corpus("class A { void f() {\n log.info(\"a\");\n throw new Bad();\n } }");
        let r = run(&c, "A.f/0", &BTreeMap::new(), &BTreeMap::new()).unwrap();
        assert_eq!(r.ending, Ending::Threw("Bad".into()));
        assert_eq!(r.events.len(), 1);
    }
}
