//! Random well-typed program generation, differential testing and batch
//! execution.
//!
//! The generator builds candidates bottom-up and keeps a candidate only when
//! the checker accepts it in the current context, so every emitted program
//! is well-typed by construction.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eval::{eval_closed, EvalOutcome};
use crate::monitor::{monitor_closed, MonitorOptions, ViolationReport};
use crate::rewrite::{rewrite_at, RewriteOutcome, RewriteRule};
use crate::syntax::{Path, Pretype, QualifiedType, Qualifier, Term, TypeEnv, Value, VarSet};
use crate::typing::{synthesize, synthesize_with_demand, typecheck, CheckMode, Typing};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GenConfig {
    pub seed: u64,
    pub max_depth: usize,
    pub mode: CheckMode,
}

impl GenConfig {
    pub fn new(seed: u64, max_depth: usize, mode: CheckMode) -> Self {
        GenConfig { seed, max_depth, mode }
    }

    /// The configuration of the `i`-th member of a corpus.
    pub fn nth(&self, i: u64) -> GenConfig {
        GenConfig { seed: mix(self.seed, i), ..*self }
    }
}

fn mix(seed: u64, i: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const RETRIES: usize = 8;

struct Gen {
    rng: ChaCha8Rng,
    mode: CheckMode,
    counter: usize,
}

fn bool_ty() -> QualifiedType {
    QualifiedType::bool(Qualifier::empty())
}

fn cell_pretype() -> Pretype {
    Pretype::Ref(Box::new(bool_ty()))
}

/// Closed, pure, untracked Boolean terms: inlinable arguments.
const CLOSED_BOOLS: &[&str] = &[
    "true",
    "false",
    "(! (ref true))",
    "(! (ref false))",
    "(seq true false)",
    "(app (lam {} (v: Bool^{}) v) true)",
    "(app (lam {} (v: Bool^{}) (seq v false)) true)",
    "(:= (ref false) true)",
];

const CLOSED_FUNS: &[&str] = &[
    "(lam {} (v: Bool^{}) v)",
    "(lam {} (v: Bool^{}) (seq v true))",
    "(lam {} (v: Bool^{}) (! (ref v)))",
];

impl Gen {
    fn new(cfg: &GenConfig) -> Self {
        Gen { rng: ChaCha8Rng::seed_from_u64(cfg.seed), mode: cfg.mode, counter: 0 }
    }

    fn name(&mut self) -> String {
        self.counter += 1;
        format!("x{}", self.counter)
    }

    fn accepts(&self, env: &TypeEnv, t: &Term) -> Option<Typing> {
        synthesize(env, t, self.mode).ok()
    }

    fn is_bool(&self, env: &TypeEnv, t: &Term, depth: usize) -> bool {
        t.depth() <= depth && self.accepts(env, t).is_some_and(|ty| ty.qtype.pretype == Pretype::Bool)
    }

    fn leaf(&mut self, env: &TypeEnv) -> Term {
        let bools: Vec<&String> = env
            .bindings()
            .iter()
            .filter(|(_, t)| t.pretype == Pretype::Bool)
            .map(|(n, _)| n)
            .collect();
        if !bools.is_empty() && self.rng.gen_bool(0.4) {
            return Term::var(bools.choose(&mut self.rng).unwrap().as_str());
        }
        Term::Const(self.rng.gen_bool(0.5))
    }

    fn closed_bool(&mut self) -> Term {
        crate::parse::parse_term(CLOSED_BOOLS.choose(&mut self.rng).unwrap()).expect("valid literal")
    }

    fn vars_where(&self, env: &TypeEnv, pred: impl Fn(&QualifiedType) -> bool) -> Vec<String> {
        env.bindings().iter().filter(|(_, t)| pred(t)).map(|(n, _)| n.clone()).collect()
    }

    /// A term of type `Ref Bool`: an existing cell or a new one.
    fn cell(&mut self, env: &TypeEnv, depth: usize) -> Term {
        let cells = self.vars_where(env, |t| t.pretype == cell_pretype());
        let deep = self.vars_where(env, |t| matches!(&t.pretype, Pretype::Ref(i) if i.pretype == cell_pretype()));
        let roll = self.rng.gen_range(0..10);
        if roll < 6 && !cells.is_empty() {
            Term::var(cells.choose(&mut self.rng).unwrap().as_str())
        } else if roll < 8 && !deep.is_empty() {
            Term::deref(Term::var(deep.choose(&mut self.rng).unwrap().as_str()))
        } else {
            Term::alloc(self.boolean(env, depth.saturating_sub(1)))
        }
    }

    /// Eliminates a variable of any type down to a Boolean.
    fn use_var(&mut self, env: &TypeEnv, depth: usize) -> Option<Term> {
        let (name, ty) = env.bindings().choose(&mut self.rng)?.clone();
        let mut t = Term::var(name);
        let mut pre = ty.pretype;
        for _ in 0..4 {
            match pre {
                Pretype::Bool => return Some(t),
                Pretype::Ref(inner) => {
                    t = Term::deref(t);
                    pre = inner.pretype;
                }
                Pretype::Fun(f) => {
                    let arg = match &f.domain.pretype {
                        Pretype::Bool => self.boolean(env, depth.saturating_sub(2)),
                        p if *p == cell_pretype() => self.cell(env, depth.saturating_sub(2)),
                        _ => return None,
                    };
                    t = Term::app(t, arg);
                    pre = f.codomain.pretype;
                }
            }
        }
        None
    }

    /// `(app (lam caps (x: T^s) body) init)` with `body` generated under the
    /// new binding and the capture set cut down to what `body` needs.
    fn bind(&mut self, env: &TypeEnv, init: Term, depth: usize, body_gen: &mut dyn FnMut(&mut Gen, &TypeEnv, usize) -> Term) -> Option<Term> {
        let ity = self.accepts(env, &init)?;
        let p = ity.qtype.qual;
        let s = if p.fresh {
            Qualifier::fresh()
        } else if self.rng.gen_bool(0.2) {
            Qualifier { vars: p.vars.clone(), fresh: true, self_ref: false }
        } else {
            Qualifier::of_vars(p.vars.iter().cloned())
        };
        let param_ty = QualifiedType::new(ity.qtype.pretype.clone(), s.clone());
        let x = self.name();
        let mut inner = env.clone();
        inner.push_unchecked(x.clone(), QualifiedType::new(param_ty.pretype.clone(), s.clone()));
        inner.set_observation_unchecked(inner.names());
        let body = body_gen(self, &inner, depth.saturating_sub(2));
        let (_, demand) = synthesize_with_demand(&inner, &body, self.mode).ok()?;
        let mut caps: VarSet = demand;
        caps.remove(&x);
        caps.extend(s.vars.iter().cloned());
        Some(Term::app(Term::abs(caps, x, param_ty, body), init))
    }

    fn initializer(&mut self, env: &TypeEnv, depth: usize) -> Term {
        let full = self.mode == CheckMode::Full;
        let refs = self.vars_where(env, |t| t.pretype == cell_pretype());
        let funs = self.vars_where(env, |t| matches!(t.pretype, Pretype::Fun(_)) && !t.qual.fresh);
        let d = depth.saturating_sub(1);
        match self.rng.gen_range(0..10) {
            0..=3 => Term::alloc(self.boolean(env, d)),
            4..=5 if full && !refs.is_empty() => Term::alloc(Term::var(refs.choose(&mut self.rng).unwrap().as_str())),
            6 if full && !funs.is_empty() => Term::alloc(Term::var(funs.choose(&mut self.rng).unwrap().as_str())),
            4..=5 if !refs.is_empty() => Term::var(refs.choose(&mut self.rng).unwrap().as_str()),
            6..=8 => self.closure(env, d),
            _ => self.boolean(env, d),
        }
    }

    fn closure(&mut self, env: &TypeEnv, depth: usize) -> Term {
        let x = self.name();
        let param_ty = if self.rng.gen_bool(0.6) {
            bool_ty()
        } else {
            QualifiedType::new(cell_pretype(), Qualifier::fresh())
        };
        let mut inner = env.clone();
        inner.push_unchecked(x.clone(), param_ty.clone());
        inner.set_observation_unchecked(inner.names());
        let body = self.boolean(&inner, depth.saturating_sub(1));
        let caps = match synthesize_with_demand(&inner, &body, self.mode) {
            Ok((_, mut d)) => {
                d.remove(&x);
                d
            }
            Err(_) => VarSet::new(),
        };
        Term::abs(caps, x, param_ty, body)
    }

    fn redex(&mut self, env: &TypeEnv, depth: usize) -> Option<Term> {
        let arg = if self.rng.gen_bool(0.75) {
            self.closed_bool()
        } else {
            crate::parse::parse_term(CLOSED_FUNS.choose(&mut self.rng).unwrap()).expect("valid literal")
        };
        let aty = self.accepts(&TypeEnv::new(), &arg)?;
        let x = self.name();
        let param_ty = QualifiedType::new(aty.qtype.pretype, Qualifier::empty());
        let mut inner = env.clone();
        inner.push_unchecked(x.clone(), param_ty.clone());
        inner.set_observation_unchecked(inner.names());
        let body = self.boolean(&inner, depth.saturating_sub(2));
        let (_, mut caps) = synthesize_with_demand(&inner, &body, self.mode).ok()?;
        caps.remove(&x);
        Some(Term::app(Term::abs(caps, x, param_ty, body), arg))
    }

    fn boolean(&mut self, env: &TypeEnv, depth: usize) -> Term {
        if depth <= 1 {
            return self.leaf(env);
        }
        for _ in 0..RETRIES {
            let d = depth - 1;
            let cand = match self.rng.gen_range(0..100) {
                0..=19 => {
                    let target = self.cell(env, d);
                    let value = self.boolean(env, d);
                    Some(Term::assign(target, value))
                }
                20..=39 => {
                    let init = self.initializer(env, d);
                    self.bind(env, init, depth, &mut |g, e, dd| g.boolean(e, dd))
                }
                40..=59 => self.redex(env, depth),
                60..=74 => {
                    let a = self.boolean(env, d);
                    let b = self.boolean(env, d);
                    Some(Term::seq(a, b))
                }
                75..=84 => Some(Term::deref(self.cell(env, d))),
                _ => self.use_var(env, depth),
            };
            if let Some(c) = cand {
                if self.is_bool(env, &c, depth) {
                    return c;
                }
            }
        }
        self.leaf(env)
    }
}

/// Generates a closed Boolean program accepted by the checker in `cfg.mode`.
pub fn generate(cfg: &GenConfig) -> Term {
    let mut g = Gen::new(cfg);
    let env = TypeEnv::new();
    for _ in 0..RETRIES {
        let t = g.boolean(&env, cfg.max_depth);
        if g.is_bool(&env, &t, cfg.max_depth.max(1)) {
            return t;
        }
    }
    Term::Const(true)
}

/// Generates `count` programs; member `i` uses `cfg.nth(i)`.
pub fn generate_corpus(cfg: &GenConfig, count: usize, exec: Exec) -> Vec<Term> {
    let idx: Vec<u64> = (0..count as u64).collect();
    map_batch(&idx, exec, |&i| generate(&cfg.nth(i)))
}

/// A program whose subterm at `path` is a sequence of two statements over a
/// few shared cells, followed by reads of every cell.
pub fn generate_reorder_case(cfg: &GenConfig) -> (Term, Path) {
    let mut g = Gen::new(cfg);
    let cells = g.rng.gen_range(2..=3);
    let mut prefix = Vec::new();
    build_reorder(&mut g, &TypeEnv::new(), cells, &mut prefix)
        .unwrap_or_else(|| (Term::seq(Term::Const(true), Term::Const(true)), vec![]))
}

fn statement(g: &mut Gen, env: &TypeEnv) -> Term {
    let cells = g.vars_where(env, |t| t.pretype == cell_pretype());
    let funs = g.vars_where(env, |t| matches!(t.pretype, Pretype::Fun(_)));
    let pick = |g: &mut Gen, v: &[String]| Term::var(v.choose(&mut g.rng).unwrap().as_str());
    for _ in 0..RETRIES {
        let cand = match g.rng.gen_range(0..10) {
            0..=4 => Term::deref(pick(g, &cells)),
            5..=6 => Term::assign(pick(g, &cells), Term::Const(g.rng.gen_bool(0.5))),
            7 => {
                let src = Term::deref(pick(g, &cells));
                Term::assign(pick(g, &cells), src)
            }
            _ if !funs.is_empty() => Term::app(pick(g, &funs), Term::Const(g.rng.gen_bool(0.5))),
            _ => Term::seq(Term::deref(pick(g, &cells)), Term::deref(pick(g, &cells))),
        };
        if g.is_bool(env, &cand, 4) {
            return cand;
        }
    }
    Term::Const(true)
}

fn build_reorder(g: &mut Gen, env: &TypeEnv, cells_left: usize, prefix: &mut Path) -> Option<(Term, Path)> {
    let n_cells = env.bindings().iter().filter(|(_, t)| t.pretype == cell_pretype()).count();
    if cells_left == 0 {
        if g.rng.gen_bool(0.4) {
            // a closure writing or reading one of the cells
            let clo = statement_closure(g, env);
            if let Some(c) = clo {
                return bind_then(g, env, c, 0, prefix);
            }
        }
        let s1 = statement(g, env);
        let s2 = statement(g, env);
        let cells = g.vars_where(env, |t| t.pretype == cell_pretype());
        let mut tail = Term::Const(true);
        for c in cells.iter().rev() {
            tail = Term::seq(Term::deref(Term::var(c.as_str())), tail);
        }
        let body = Term::seq(Term::seq(s1, s2), tail);
        let mut path = prefix.clone();
        path.push(0);
        return Some((body, path));
    }
    let init = if n_cells > 0 && g.rng.gen_bool(0.25) {
        let cells = g.vars_where(env, |t| t.pretype == cell_pretype());
        Term::var(cells.choose(&mut g.rng).unwrap().as_str())
    } else {
        Term::alloc(Term::Const(g.rng.gen_bool(0.5)))
    };
    bind_then(g, env, init, cells_left - 1, prefix)
}

fn statement_closure(g: &mut Gen, env: &TypeEnv) -> Option<Term> {
    let x = g.name();
    let mut inner = env.clone();
    inner.push_unchecked(x.clone(), bool_ty());
    inner.set_observation_unchecked(inner.names());
    let body = statement(g, &inner);
    let (_, mut caps) = synthesize_with_demand(&inner, &body, g.mode).ok()?;
    caps.remove(&x);
    Some(Term::abs(caps, x, bool_ty(), body))
}

fn bind_then(g: &mut Gen, env: &TypeEnv, init: Term, cells_left: usize, prefix: &mut Path) -> Option<(Term, Path)> {
    let ity = g.accepts(env, &init)?;
    let p = ity.qtype.qual;
    let s = if p.fresh { Qualifier::fresh() } else { Qualifier::of_vars(p.vars.iter().cloned()) };
    let param_ty = QualifiedType::new(ity.qtype.pretype, s.clone());
    let x = g.name();
    let mut inner = env.clone();
    inner.push_unchecked(x.clone(), param_ty.clone());
    inner.set_observation_unchecked(inner.names());
    prefix.extend([0, 0]);
    let (body, path) = build_reorder(g, &inner, cells_left, prefix)?;
    let (_, mut caps) = synthesize_with_demand(&inner, &body, g.mode).ok()?;
    caps.remove(&x);
    caps.extend(s.vars.iter().cloned());
    Some((Term::app(Term::abs(caps, x, param_ty, body), init), path))
}

/// Answer of a differential test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum DiffVerdict {
    Equal(String),
    Unequal(String, String),
    Inconclusive(String),
}

impl fmt::Display for DiffVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffVerdict::Equal(v) => write!(f, "equal: {v}"),
            DiffVerdict::Unequal(a, b) => write!(f, "unequal: {a} vs {b}"),
            DiffVerdict::Inconclusive(why) => write!(f, "inconclusive: {why}"),
        }
    }
}

fn answer(o: &EvalOutcome) -> Result<String, String> {
    match o {
        EvalOutcome::Done { value: Value::Bool(b), .. } => Ok(b.to_string()),
        EvalOutcome::Timeout => Err("timeout".into()),
        other => Ok(other.to_string()),
    }
}

/// Runs two closed Boolean programs from empty stores and compares answers.
pub fn difftest(p1: &Term, p2: &Term, fuel: u64) -> DiffVerdict {
    let (o1, o2) = (eval_closed(p1, fuel), eval_closed(p2, fuel));
    match (answer(&o1), answer(&o2)) {
        (Err(w), _) | (_, Err(w)) => DiffVerdict::Inconclusive(w),
        (Ok(a), Ok(b)) if a == b => DiffVerdict::Equal(a),
        (Ok(a), Ok(b)) => DiffVerdict::Unequal(a, b),
    }
}

/// How a batch is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Data-parallel; falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
}

/// Maps `f` over `items` under `exec`, preserving order.
pub fn map_batch<T, R, F>(items: &[T], exec: Exec, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Result of checking, running and monitoring one program.
#[derive(Clone, Debug, Serialize)]
pub struct ProgramReport {
    pub accepted: bool,
    pub error: Option<String>,
    pub outcome: String,
    pub done: bool,
    pub violations: Vec<ViolationReport>,
    #[serde(skip)]
    pub rule_hits: BTreeMap<&'static str, usize>,
}

pub fn run_program(t: &Term, mode: CheckMode, fuel: u64, opts: MonitorOptions) -> ProgramReport {
    match typecheck(&TypeEnv::new(), t, mode) {
        Err(e) => ProgramReport {
            accepted: false,
            error: Some(e.to_string()),
            outcome: String::new(),
            done: false,
            violations: vec![],
            rule_hits: BTreeMap::new(),
        },
        Ok(el) => {
            let run = monitor_closed(&el, fuel, opts);
            ProgramReport {
                accepted: true,
                error: None,
                outcome: run.outcome.to_string(),
                done: run.outcome.is_done(),
                violations: run.violations,
                rule_hits: el.rule_hits,
            }
        }
    }
}

pub fn run_corpus(programs: &[Term], mode: CheckMode, fuel: u64, opts: MonitorOptions, exec: Exec) -> Vec<ProgramReport> {
    map_batch(programs, exec, |t| run_program(t, mode, fuel, opts))
}

/// Total rule hits over a batch of reports.
pub fn coverage(reports: &[ProgramReport]) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for r in reports {
        for (k, v) in &r.rule_hits {
            *out.entry(*k).or_default() += v;
        }
    }
    out
}

/// Every path in `t` whose subterm satisfies `pred`.
pub fn paths_where(t: &Term, pred: impl Fn(&Term) -> bool) -> Vec<Path> {
    t.paths().into_iter().filter(|p| t.subterm(p).is_some_and(&pred)).collect()
}

pub fn is_redex(t: &Term) -> bool {
    matches!(t, Term::App(f, _) if matches!(f.as_ref(), Term::Abs { .. }))
}

/// Outcome of trying one rewrite and comparing behaviour.
#[derive(Clone, Debug, Serialize)]
pub struct RewriteTrial {
    pub program: String,
    pub path: String,
    pub accepted: bool,
    pub verdict: Option<DiffVerdict>,
}

pub fn try_rewrite(t: &Term, path: &[usize], rule: RewriteRule, mode: CheckMode, fuel: u64) -> RewriteTrial {
    let out = rewrite_at(&TypeEnv::new(), t, path, rule, mode);
    let (accepted, verdict) = match out {
        Ok(RewriteOutcome::Rewritten { term, .. }) => (true, Some(difftest(t, &term, fuel))),
        _ => (false, None),
    };
    RewriteTrial { program: t.to_string(), path: crate::syntax::format_path(path), accepted, verdict }
}
