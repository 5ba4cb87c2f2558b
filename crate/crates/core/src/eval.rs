//! Fuel-bounded big-step evaluation over closures and environments.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::syntax::{Closure, Store, Term, Value, ValueEnv};

pub const DEFAULT_FUEL: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StuckKind {
    NotAFunction,
    NotALocation,
    NotABool,
    UnboundVariable,
    DanglingLocation,
}

impl fmt::Display for StuckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalOutcome {
    Done { value: Value, store: Store },
    Timeout,
    Stuck(StuckKind),
}

impl EvalOutcome {
    pub fn value(&self) -> Option<&Value> {
        match self {
            EvalOutcome::Done { value, .. } => Some(value),
            _ => None,
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self, EvalOutcome::Done { .. })
    }
}

impl fmt::Display for EvalOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalOutcome::Done { value, .. } => write!(f, "{value}"),
            EvalOutcome::Timeout => f.write_str("timeout"),
            EvalOutcome::Stuck(k) => write!(f, "stuck: {k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Halt {
    Timeout,
    Stuck(StuckKind),
}

/// Observation points for instrumented runs. Every method defaults to doing
/// nothing.
pub(crate) trait Hooks {
    fn enter(&mut self, _t: &Term, _env: &ValueEnv, _store: &Store) {}
    fn leave(&mut self, _t: &Term, _env: &ValueEnv, _store: &Store, _v: &Value) {}
    fn allocated(&mut self, _t: &Term, _env: &ValueEnv, _store: &Store, _loc: usize) {}
    fn assigning(&mut self, _store: &Store, _loc: usize, _v: &Value) {}
    fn call(&mut self, _app: &Term, _clo: &Closure, _arg: &Value, _store: &Store) {}
    fn returned(&mut self, _app: &Term, _env: &ValueEnv, _clo: &Closure, _arg: &Value, _store: &Store, _v: &Value) {}
}

struct NoHooks;

impl Hooks for NoHooks {}

pub(crate) struct Machine<'h, H: Hooks> {
    pub fuel: u64,
    pub store: Store,
    pub hooks: &'h mut H,
}

impl<H: Hooks> Machine<'_, H> {
    pub fn run(&mut self, env: &ValueEnv, t: &Term) -> Result<Value, Halt> {
        if self.fuel == 0 {
            return Err(Halt::Timeout);
        }
        self.fuel -= 1;
        self.hooks.enter(t, env, &self.store);
        let v = self.step(env, t)?;
        self.hooks.leave(t, env, &self.store, &v);
        Ok(v)
    }

    fn step(&mut self, env: &ValueEnv, t: &Term) -> Result<Value, Halt> {
        match t {
            Term::Const(b) => Ok(Value::Bool(*b)),
            Term::Var(x) => env.lookup(x).cloned().ok_or(Halt::Stuck(StuckKind::UnboundVariable)),
            Term::Abs { captures, param, body, .. } => Ok(Value::Closure(Arc::new(Closure {
                env: env.clone(),
                param: param.clone(),
                body: body.clone(),
                captures: captures.clone(),
            }))),
            Term::App(f, a) => {
                let fv = self.run(env, f)?;
                let av = self.run(env, a)?;
                let Value::Closure(clo) = fv else {
                    return Err(Halt::Stuck(StuckKind::NotAFunction));
                };
                self.hooks.call(t, &clo, &av, &self.store);
                let inner = clo.env.extend(clo.param.clone(), av.clone());
                let v = self.run(&inner, &clo.body)?;
                self.hooks.returned(t, env, &clo, &av, &self.store, &v);
                Ok(v)
            }
            Term::RefAlloc(init) => {
                let v = self.run(env, init)?;
                let loc = self.store.alloc(v);
                self.hooks.allocated(t, env, &self.store, loc);
                Ok(Value::Loc(loc))
            }
            Term::Deref(target) => match self.run(env, target)? {
                Value::Loc(l) => self.store.get(l).cloned().ok_or(Halt::Stuck(StuckKind::DanglingLocation)),
                _ => Err(Halt::Stuck(StuckKind::NotALocation)),
            },
            Term::Assign(target, value) => {
                let Value::Loc(l) = self.run(env, target)? else {
                    return Err(Halt::Stuck(StuckKind::NotALocation));
                };
                let v = self.run(env, value)?;
                if l >= self.store.len() {
                    return Err(Halt::Stuck(StuckKind::DanglingLocation));
                }
                self.hooks.assigning(&self.store, l, &v);
                self.store.set(l, v);
                Ok(Value::Bool(true))
            }
            Term::Seq(a, b) => {
                let b1 = self.run(env, a)?.as_bool().ok_or(Halt::Stuck(StuckKind::NotABool))?;
                let b2 = self.run(env, b)?.as_bool().ok_or(Halt::Stuck(StuckKind::NotABool))?;
                Ok(Value::Bool(b1 && b2))
            }
        }
    }
}

pub(crate) fn outcome(result: Result<Value, Halt>, store: Store) -> EvalOutcome {
    match result {
        Ok(value) => EvalOutcome::Done { value, store },
        Err(Halt::Timeout) => EvalOutcome::Timeout,
        Err(Halt::Stuck(k)) => EvalOutcome::Stuck(k),
    }
}

/// Evaluates `t` from `env` and `store`, spending one unit of fuel per node.
pub fn eval(env: &ValueEnv, store: Store, t: &Term, fuel: u64) -> EvalOutcome {
    let mut hooks = NoHooks;
    let mut m = Machine { fuel, store, hooks: &mut hooks };
    let r = m.run(env, t);
    outcome(r, m.store)
}

/// Evaluates a closed program from the empty environment and store.
pub fn eval_closed(t: &Term, fuel: u64) -> EvalOutcome {
    eval(&ValueEnv::new(), Store::new(), t, fuel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_term;

    fn run(src: &str) -> EvalOutcome {
        eval_closed(&parse_term(src).unwrap(), DEFAULT_FUEL)
    }

    #[test]
    fn seq_is_conjunction() {
        assert_eq!(run("(seq true false)"), EvalOutcome::Done { value: Value::Bool(false), store: Store::new() });
    }

    #[test]
    fn assignment_returns_true() {
        let expected = Store::from_values(vec![Value::Bool(false)]);
        assert_eq!(run("(:= (ref true) false)"), EvalOutcome::Done { value: Value::Bool(true), store: expected });
    }

    #[test]
    fn deref_after_alloc() {
        let expected = Store::from_values(vec![Value::Bool(true)]);
        assert_eq!(run("(! (ref true))"), EvalOutcome::Done { value: Value::Bool(true), store: expected });
    }

    #[test]
    fn stuck_kinds() {
        assert_eq!(run("(app true false)"), EvalOutcome::Stuck(StuckKind::NotAFunction));
        assert_eq!(run("(! true)"), EvalOutcome::Stuck(StuckKind::NotALocation));
        assert_eq!(run("(seq (ref true) true)"), EvalOutcome::Stuck(StuckKind::NotABool));
        assert_eq!(run("y"), EvalOutcome::Stuck(StuckKind::UnboundVariable));
    }

    #[test]
    fn fuel_exhaustion_is_timeout() {
        let t = parse_term("(app (lam {} (x: Bool^{}) (seq x x)) true)").unwrap();
        assert_eq!(eval_closed(&t, 1), EvalOutcome::Timeout);
        assert_eq!(eval_closed(&t, 0), EvalOutcome::Timeout);
        assert!(eval_closed(&t, 6).is_done());
        assert_eq!(eval_closed(&t, 5), EvalOutcome::Timeout);
    }

    #[test]
    fn closures_capture_their_environment() {
        let t = parse_term("(app (app (lam {} (x: Bool^{}) (lam {x} (y: Bool^{}) x)) false) true)").unwrap();
        assert_eq!(eval_closed(&t, 100).value(), Some(&Value::Bool(false)));
    }
}
