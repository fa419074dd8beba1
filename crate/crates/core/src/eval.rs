//! Runtime values and a three-valued expression evaluator.
//!
//! `Unknown` stands for a value the analysis cannot see (external call results,
//! unconstrained parameters). Any operation touching `Unknown` yields `Unknown`,
//! and a branch on `Unknown` cannot be refuted.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::ast::{BinaryOp, Expr, Type, UnaryOp};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl Value {
    pub fn type_of(&self) -> Type {
        match self {
            Value::Bool(_) => Type::Boolean,
            Value::Int(_) => Type::Int,
            Value::Str(_) => Type::Str,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Sym {
    Known(Value),
    Unknown,
}

impl Sym {
    pub fn known(&self) -> Option<&Value> {
        match self {
            Sym::Known(v) => Some(v),
            Sym::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("variable `{0}` read before definition")]
    Undefined(String),
    #[error("type mismatch in `{0}`")]
    Type(String),
    #[error("division by zero")]
    DivZero,
}

/// Variable lookup for [`eval`].
pub trait Env {
    fn get(&self, var: &str) -> Option<&Sym>;
}

impl Env for BTreeMap<String, Sym> {
    fn get(&self, var: &str) -> Option<&Sym> {
        BTreeMap::get(self, var)
    }
}

impl Env for std::collections::HashMap<String, Sym> {
    fn get(&self, var: &str) -> Option<&Sym> {
        std::collections::HashMap::get(self, var)
    }
}

pub fn eval(expr: &Expr, env: &dyn Env) -> Result<Sym, EvalError> {
    Ok(match expr {
        Expr::Int(i) => Sym::Known(Value::Int(*i)),
        Expr::Str(s) => Sym::Known(Value::Str(s.clone())),
        Expr::Bool(b) => Sym::Known(Value::Bool(*b)),
        Expr::Var(v) => env
            .get(v)
            .cloned()
            .ok_or_else(|| EvalError::Undefined(v.clone()))?,
        Expr::Unary(op, e) => {
            let Sym::Known(v) = eval(e, env)? else {
                return Ok(Sym::Unknown);
            };
            Sym::Known(match (op, v) {
                (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
                (UnaryOp::Neg, Value::Int(i)) => Value::Int(i.wrapping_neg()),
                _ => return Err(EvalError::Type(expr.to_string())),
            })
        }
        Expr::Binary(op, a, b) => {
            // short-circuit so `x != 0 && y / x > 1` behaves as it would at runtime
            if matches!(op, BinaryOp::And | BinaryOp::Or) {
                let lhs = eval(a, env)?;
                match (op, &lhs) {
                    (BinaryOp::And, Sym::Known(Value::Bool(false))) => {
                        return Ok(Sym::Known(Value::Bool(false)))
                    }
                    (BinaryOp::Or, Sym::Known(Value::Bool(true))) => {
                        return Ok(Sym::Known(Value::Bool(true)))
                    }
                    (_, Sym::Known(Value::Bool(_))) | (_, Sym::Unknown) => {}
                    _ => return Err(EvalError::Type(expr.to_string())),
                }
                let rhs = eval(b, env)?;
                return Ok(match (lhs, rhs) {
                    (_, Sym::Known(Value::Bool(r))) if matches!(op, BinaryOp::And) && !r => {
                        Sym::Known(Value::Bool(false))
                    }
                    (_, Sym::Known(Value::Bool(r))) if matches!(op, BinaryOp::Or) && r => {
                        Sym::Known(Value::Bool(true))
                    }
                    (Sym::Known(Value::Bool(_)), Sym::Known(Value::Bool(r))) => {
                        Sym::Known(Value::Bool(r))
                    }
                    (_, Sym::Known(Value::Bool(_))) | (_, Sym::Unknown) => Sym::Unknown,
                    _ => return Err(EvalError::Type(expr.to_string())),
                });
            }
            let lhs = eval(a, env)?;
            let rhs = eval(b, env)?;
            let (Sym::Known(l), Sym::Known(r)) = (lhs, rhs) else {
                return Ok(Sym::Unknown);
            };
            Sym::Known(apply_binary(*op, l, r).map_err(|e| match e {
                EvalError::Type(_) => EvalError::Type(expr.to_string()),
                other => other,
            })?)
        }
    })
}

pub fn apply_binary(op: BinaryOp, l: Value, r: Value) -> Result<Value, EvalError> {
    use BinaryOp::*;
    Ok(match (op, l, r) {
        (Add, Value::Int(a), Value::Int(b)) => Value::Int(a.wrapping_add(b)),
        (Add, Value::Str(a), b) => Value::Str(format!("{a}{b}")),
        (Add, a, Value::Str(b)) => Value::Str(format!("{a}{b}")),
        (Sub, Value::Int(a), Value::Int(b)) => Value::Int(a.wrapping_sub(b)),
        (Mul, Value::Int(a), Value::Int(b)) => Value::Int(a.wrapping_mul(b)),
        (Div | Rem, Value::Int(_), Value::Int(0)) => return Err(EvalError::DivZero),
        (Div, Value::Int(a), Value::Int(b)) => Value::Int(a.wrapping_div(b)),
        (Rem, Value::Int(a), Value::Int(b)) => Value::Int(a.wrapping_rem(b)),
        (Lt, Value::Int(a), Value::Int(b)) => Value::Bool(a < b),
        (Le, Value::Int(a), Value::Int(b)) => Value::Bool(a <= b),
        (Gt, Value::Int(a), Value::Int(b)) => Value::Bool(a > b),
        (Ge, Value::Int(a), Value::Int(b)) => Value::Bool(a >= b),
        (Eq, a, b) if a.type_of() == b.type_of() => Value::Bool(a == b),
        (Ne, a, b) if a.type_of() == b.type_of() => Value::Bool(a != b),
        _ => return Err(EvalError::Type(op.symbol().to_string())),
    })
}

/// Renders a `{}` template with the given argument strings, in order.
pub fn render_template(template: &str, args: &[String]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut it = args.iter();
    while let Some(i) = rest.find("{}") {
        out.push_str(&rest[..i]);
        match it.next() {
            Some(a) => out.push_str(a),
            None => out.push_str("{}"),
        }
        rest = &rest[i + 2..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_expr;

    fn env(pairs: &[(&str, Sym)]) -> BTreeMap<String, Sym> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn arithmetic_and_comparison() {
        let e = parse_expr("x * 2 + 1 > 5").unwrap();
        let r = eval(&e, &env(&[("x", Sym::Known(Value::Int(3)))])).unwrap();
        assert_eq!(r, Sym::Known(Value::Bool(true)));
    }

    #[test]
    fn unknown_propagates_but_short_circuit_decides() {
        let u = env(&[("x", Sym::Unknown), ("f", Sym::Known(Value::Bool(false)))]);
        assert_eq!(eval(&parse_expr("x > 0").unwrap(), &u).unwrap(), Sym::Unknown);
        assert_eq!(
            eval(&parse_expr("f && x > 0").unwrap(), &u).unwrap(),
            Sym::Known(Value::Bool(false))
        );
        assert_eq!(
            eval(&parse_expr("x > 0 && f").unwrap(), &u).unwrap(),
            Sym::Known(Value::Bool(false))
        );
    }

    #[test]
    fn string_concat_and_errors() {
        let e = env(&[("n", Sym::Known(Value::Int(4)))]);
        assert_eq!(
            eval(&parse_expr("\"n=\" + n").unwrap(), &e).unwrap(),
            Sym::Known(Value::Str("n=4".into()))
        );
        assert_eq!(
            eval(&parse_expr("n / 0").unwrap(), &e),
            Err(EvalError::DivZero)
        );
        assert!(matches!(
            eval(&parse_expr("y + 1").unwrap(), &e),
            Err(EvalError::Undefined(_))
        ));
    }

    #[test]
    fn template_rendering() {
        assert_eq!(
            render_template("a={} b={}", &["1".into(), "x".into()]),
            "a=1 b=x"
        );
        assert_eq!(render_template("none", &[]), "none");
    }
}
