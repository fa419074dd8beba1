//! Concrete re-execution of a step list over a set of input worlds.
//!
//! Each world is one assignment of root inputs. A world dies when a branch
//! decision on the path contradicts its values or it reads an undefined
//! variable; `Unknown` values never kill.

use std::collections::BTreeMap;

use super::StepOp;
use crate::eval::{eval, render_template, EvalError, Sym, Value};

#[derive(Debug, Clone)]
pub(crate) struct RenderedLog {
    pub text: String,
    pub values: Vec<String>,
    pub unfilled: bool,
}

#[derive(Debug, Clone)]
struct Frame {
    env: BTreeMap<String, Sym>,
    ret: Option<Sym>,
    call_assign: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct World {
    pub inputs: BTreeMap<String, Sym>,
    frames: Vec<Frame>,
    pending_args: Option<Vec<Sym>>,
    pub rendered: Vec<RenderedLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Death {
    /// A branch decision is false for the world's values.
    Condition,
    /// A variable was read before any definition on the path.
    Undefined,
}

#[derive(Debug, Clone)]
pub(crate) struct Replayer {
    pub worlds: Vec<World>,
    pub last_death: Option<Death>,
}

/// Placeholder for values the analysis cannot see.
pub const UNFILLED: &str = "<*>";

impl Replayer {
    pub fn new(inputs: Vec<BTreeMap<String, Sym>>) -> Self {
        Replayer {
            worlds: inputs
                .into_iter()
                .map(|inputs| World {
                    inputs,
                    frames: Vec::new(),
                    pending_args: None,
                    rendered: Vec::new(),
                })
                .collect(),
            last_death: None,
        }
    }

    pub fn alive(&self) -> bool {
        !self.worlds.is_empty()
    }

    /// Applies one step to every world, dropping those it kills.
    pub fn apply(&mut self, op: &StepOp) -> bool {
        let mut death = None;
        self.worlds.retain_mut(|w| match step(w, op) {
            Ok(()) => true,
            Err(d) => {
                death = Some(d);
                false
            }
        });
        if death.is_some() {
            self.last_death = death;
        }
        self.alive()
    }
}

fn value_of(e: &crate::corpus::Expr, env: &BTreeMap<String, Sym>) -> Result<Sym, Death> {
    match eval(e, env) {
        Ok(v) => Ok(v),
        Err(EvalError::Undefined(_)) | Err(EvalError::Type(_)) => Err(Death::Undefined),
        // integer division by zero would raise at runtime; the path is not this world's
        Err(EvalError::DivZero) => Err(Death::Condition),
    }
}

fn step(w: &mut World, op: &StepOp) -> Result<(), Death> {
    match op {
        StepOp::Enter { params } => {
            let env = match w.frames.is_empty() {
                true => params
                    .iter()
                    .map(|p| (p.clone(), w.inputs.get(p).cloned().unwrap_or(Sym::Unknown)))
                    .collect(),
                false => {
                    let args = w.pending_args.take().unwrap_or_default();
                    params
                        .iter()
                        .enumerate()
                        .map(|(i, p)| (p.clone(), args.get(i).cloned().unwrap_or(Sym::Unknown)))
                        .collect()
                }
            };
            w.frames.push(Frame {
                env,
                ret: None,
                call_assign: None,
            });
        }
        StepOp::Exit { exception } => {
            let done = w.frames.pop().ok_or(Death::Undefined)?;
            if let Some(parent) = w.frames.last_mut() {
                let target = parent.call_assign.take();
                if let (None, Some(var)) = (exception, target) {
                    parent.env.insert(var, done.ret.unwrap_or(Sym::Unknown));
                }
            }
        }
        StepOp::Assign { var, value } => {
            let f = w.frames.last_mut().ok_or(Death::Undefined)?;
            let v = value_of(value, &f.env)?;
            f.env.insert(var.clone(), v);
        }
        StepOp::Branch { cond, taken } => {
            let f = w.frames.last().ok_or(Death::Undefined)?;
            match value_of(cond, &f.env)? {
                Sym::Known(Value::Bool(b)) if b != *taken => return Err(Death::Condition),
                Sym::Known(Value::Bool(_)) | Sym::Unknown => {}
                Sym::Known(_) => return Err(Death::Undefined),
            }
        }
        StepOp::Call {
            args,
            assign_to,
            opaque,
            ..
        } => {
            let f = w.frames.last_mut().ok_or(Death::Undefined)?;
            let vals = args
                .iter()
                .map(|a| value_of(a, &f.env))
                .collect::<Result<Vec<_>, _>>()?;
            if *opaque {
                if let Some(v) = assign_to {
                    f.env.insert(v.clone(), Sym::Unknown);
                }
            } else {
                f.call_assign = assign_to.clone();
                w.pending_args = Some(vals);
            }
        }
        StepOp::Return { value } => {
            let f = w.frames.last_mut().ok_or(Death::Undefined)?;
            f.ret = match value {
                Some(e) => Some(value_of(e, &f.env)?),
                None => None,
            };
        }
        StepOp::Catch { var, exception } => {
            let f = w.frames.last_mut().ok_or(Death::Undefined)?;
            f.env.insert(var.clone(), Sym::Known(Value::Str(exception.clone())));
        }
        StepOp::Log { template, params, .. } => {
            let f = w.frames.last().ok_or(Death::Undefined)?;
            let mut values = Vec::with_capacity(params.len());
            let mut unfilled = false;
            for p in params {
                match value_of(p, &f.env)? {
                    Sym::Known(v) => values.push(v.to_string()),
                    Sym::Unknown => {
                        unfilled = true;
                        values.push(UNFILLED.to_string());
                    }
                }
            }
            w.rendered.push(RenderedLog {
                text: render_template(template, &values),
                values,
                unfilled,
            });
        }
        StepOp::Throw { .. } | StepOp::Pass => {}
    }
    Ok(())
}

/// Cartesian product of per-variable domains, first variable varying slowest.
/// `None` when the product would exceed `cap`.
pub(crate) fn product(domains: &[(String, Vec<Sym>)], cap: usize) -> Option<Vec<BTreeMap<String, Sym>>> {
    let mut total: usize = 1;
    for (_, d) in domains {
        total = total.checked_mul(d.len())?;
    }
    if total > cap {
        return None;
    }
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut world = BTreeMap::new();
        for (name, d) in domains.iter().rev() {
            world.insert(name.clone(), d[idx % d.len()].clone());
            idx /= d.len();
        }
        out.push(world);
    }
    Some(out)
}
