//! Algorithmic type-and-effect checking.
//!
//! Qualifiers and effects are synthesized minimally; subsumption is applied
//! only where a rule demands containment (application, assignment, storing).
//! Widening a qualifier towards a target follows binding qualifiers that are
//! observed and non-fresh, which is the closure of t-sub and t-sub-var.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::qualifier::{self, saturate, subqual, subst_effect, subst_self, subst_var, uncovered};
use crate::syntax::{
    format_path, show_set, Effect, FunType, Name, Path, Pretype, QualPosition, QualifiedType,
    Qualifier, Term, TypeEnv, VarSet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckMode {
    /// Flat references holding untracked values; no effects.
    Base,
    /// Higher-order references and write effects.
    Full,
}

impl fmt::Display for CheckMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckMode::Base => "base",
            CheckMode::Full => "full",
        })
    }
}

impl FromStr for CheckMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(CheckMode::Base),
            "full" => Ok(CheckMode::Full),
            _ => Err(format!("unknown mode `{s}` (expected base or full)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Typing {
    pub qtype: QualifiedType,
    pub effect: Effect,
}

impl Typing {
    fn pure(qtype: QualifiedType) -> Self {
        Typing { qtype, effect: Effect::pure() }
    }
}

impl fmt::Display for Typing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ! {}", self.qtype, self.effect)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ErrorCode {
    UnboundVariable,
    NotObserved,
    IllFormedType,
    Shadowing,
    CaptureNotObserved,
    DomainNotCaptured,
    CodomainMentionsParam,
    NotAFunction,
    NotAReference,
    NotABool,
    TypeMismatch,
    FreshArgument,
    ArgumentNotCovered,
    Overlap,
    Escape,
    FreshStored,
    NotStorable,
}

/// A checking failure, pinned to the rule whose premise failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeError {
    pub rule: &'static str,
    pub code: ErrorCode,
    pub path: Path,
    pub message: String,
    /// Named sets that witness the failure, e.g. an offending overlap.
    pub sets: Vec<(String, VarSet)>,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] at {}: {}", self.rule, format_path(&self.path), self.message)?;
        for (name, set) in &self.sets {
            write!(f, "; {name} = {}", show_set(set))?;
        }
        Ok(())
    }
}

impl std::error::Error for TypeError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Warning {
    pub path: Path,
    pub message: String,
}

/// Per-node results of checking.
#[derive(Clone, Debug)]
pub struct NodeInfo {
    pub typing: Typing,
    /// The observation the node was checked under.
    pub observation: VarSet,
    /// For allocations: the qualifier of the stored value.
    pub referent: Option<Qualifier>,
}

/// A checked program: a private copy of the term whose every node carries
/// its typing.
#[derive(Clone, Debug)]
pub struct Elaborated {
    pub term: Arc<Term>,
    pub env: TypeEnv,
    pub mode: CheckMode,
    pub typing: Typing,
    pub rule_hits: BTreeMap<&'static str, usize>,
    pub warnings: Vec<Warning>,
    nodes: HashMap<usize, NodeInfo>,
}

fn node_key(t: &Term) -> usize {
    t as *const Term as usize
}

impl Elaborated {
    /// Info for a node of `self.term` (looked up by identity).
    pub fn info(&self, t: &Term) -> Option<&NodeInfo> {
        self.nodes.get(&node_key(t))
    }

    pub fn info_at(&self, path: &[usize]) -> Option<&NodeInfo> {
        self.term.subterm(path).and_then(|t| self.info(t))
    }

    /// Overwrites the recorded referent of the allocation at `path`. Only
    /// meant for building deliberately broken fixtures.
    pub fn corrupt_referent(&mut self, path: &[usize], q: Qualifier) -> bool {
        let Some(t) = self.term.subterm(path) else { return false };
        if !matches!(t, Term::RefAlloc(_)) {
            return false;
        }
        let key = node_key(t);
        match self.nodes.get_mut(&key) {
            Some(info) => {
                info.referent = Some(q);
                true
            }
            None => false,
        }
    }
}

fn deep_copy(t: &Term) -> Arc<Term> {
    let kids = t.children().into_iter().map(|c| deep_copy(c)).collect();
    Arc::new(t.with_children(kids))
}

/// Checks `t` under `env` (with its observation) and records every node.
pub fn typecheck(env: &TypeEnv, t: &Term, mode: CheckMode) -> Result<Elaborated, TypeError> {
    let term = deep_copy(t);
    let mut ck = Checker::new(env, mode, true);
    let typing = ck.check(&term)?;
    let Checker { cells, recorded, hits, warnings, .. } = ck;
    let nodes = recorded
        .into_iter()
        .map(|(k, r)| {
            (k, NodeInfo { typing: r.typing, observation: cells[r.cell].clone(), referent: r.referent })
        })
        .collect();
    Ok(Elaborated { term, env: env.clone(), mode, typing, rule_hits: hits, warnings, nodes })
}

/// Synthesizes the typing of `t` without recording per-node information.
pub fn synthesize(env: &TypeEnv, t: &Term, mode: CheckMode) -> Result<Typing, TypeError> {
    Checker::new(env, mode, false).check(t)
}

/// Synthesizes the typing of `t` together with the part of the observation
/// the derivation consulted. Re-checking under that smaller observation
/// yields the same typing.
pub fn synthesize_with_demand(
    env: &TypeEnv,
    t: &Term,
    mode: CheckMode,
) -> Result<(Typing, VarSet), TypeError> {
    let mut ck = Checker::new(env, mode, false);
    let typing = ck.check(t)?;
    Ok((typing, ck.demand))
}

/// The typing environment and observation in force at `path` inside `t`.
pub fn env_at(env: &TypeEnv, t: &Term, path: &[usize], mode: CheckMode) -> Result<TypeEnv, TypeError> {
    let mut env = env.clone();
    let mut here = t;
    for (depth, &i) in path.iter().enumerate() {
        let err = |msg: &str| TypeError {
            rule: "path",
            code: ErrorCode::IllFormedType,
            path: path[..depth].to_vec(),
            message: msg.to_string(),
            sets: vec![],
        };
        match here {
            Term::Abs { captures, param, param_type, body } if i == 0 => {
                let mut ck = Checker::new(&env, mode, false);
                let bind = ck.abs_binding(captures, param, param_type)?;
                env.push_unchecked(param.clone(), bind);
                let mut obs = captures.clone();
                obs.insert(param.clone());
                env.set_observation_unchecked(obs);
                here = body;
            }
            Term::Seq(a, b) if i < 2 => {
                let child = if i == 0 { a } else { b };
                let (_, demand) = synthesize_with_demand(&env, child, mode)?;
                env.set_observation_unchecked(demand);
                here = child;
            }
            _ => {
                here = here.children().get(i).copied().ok_or_else(|| err("no such subterm"))?;
            }
        }
    }
    Ok(env)
}

struct Recorded {
    typing: Typing,
    cell: usize,
    referent: Option<Qualifier>,
}

struct Checker {
    mode: CheckMode,
    env: TypeEnv,
    phi: VarSet,
    /// Observation members consulted so far in the current scope.
    demand: VarSet,
    path: Path,
    record: bool,
    cell: usize,
    cells: Vec<VarSet>,
    recorded: HashMap<usize, Recorded>,
    hits: BTreeMap<&'static str, usize>,
    warnings: Vec<Warning>,
}

fn fail(rule: &'static str, code: ErrorCode, path: &Path, message: String) -> TypeError {
    TypeError { rule, code, path: path.clone(), message, sets: vec![] }
}

impl Checker {
    fn new(env: &TypeEnv, mode: CheckMode, record: bool) -> Self {
        Checker {
            mode,
            env: env.clone(),
            phi: env.observation().clone(),
            demand: VarSet::new(),
            path: Vec::new(),
            record,
            cell: 0,
            cells: vec![env.observation().clone()],
            recorded: HashMap::new(),
            hits: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn err(&self, rule: &'static str, code: ErrorCode, message: String) -> TypeError {
        fail(rule, code, &self.path, message)
    }

    fn hit(&mut self, rule: &'static str) {
        *self.hits.entry(rule).or_default() += 1;
    }

    /// Observation query; successful queries are remembered as demand.
    fn observe(&mut self, x: &str) -> bool {
        if self.phi.contains(x) {
            self.demand.insert(x.to_string());
            true
        } else {
            false
        }
    }

    fn observe_all(&mut self, xs: &VarSet) -> VarSet {
        xs.iter().filter(|x| !self.observe(x)).cloned().collect()
    }

    fn child(&mut self, t: &Term, i: usize) -> Result<Typing, TypeError> {
        self.path.push(i);
        let r = self.check(t);
        self.path.pop();
        r
    }

    fn check(&mut self, t: &Term) -> Result<Typing, TypeError> {
        let mut referent = None;
        let typing = self.check_node(t, &mut referent)?;
        if self.record {
            self.recorded.insert(node_key(t), Recorded { typing: typing.clone(), cell: self.cell, referent });
        }
        Ok(typing)
    }

    fn effect(&self, e: Effect) -> Effect {
        match self.mode {
            CheckMode::Base => Effect::pure(),
            CheckMode::Full => e,
        }
    }

    fn check_node(&mut self, t: &Term, referent: &mut Option<Qualifier>) -> Result<Typing, TypeError> {
        match t {
            Term::Const(_) => {
                self.hit("t-cst");
                Ok(Typing::pure(QualifiedType::bool(Qualifier::empty())))
            }
            Term::Var(x) => {
                self.hit("t-var");
                let ty = self
                    .env
                    .lookup(x)
                    .ok_or_else(|| self.err("t-var", ErrorCode::UnboundVariable, format!("unbound variable `{x}`")))?
                    .clone();
                if !self.observe(x) {
                    return Err(self.err(
                        "t-var",
                        ErrorCode::NotObserved,
                        format!("`{x}` is not in the observation {}", show_set(&self.phi)),
                    ));
                }
                Ok(Typing::pure(QualifiedType::new(ty.pretype, Qualifier::var(x))))
            }
            Term::Abs { captures, param, param_type, body } => self.check_abs(captures, param, param_type, body),
            Term::App(f, a) => self.check_app(f, a),
            Term::RefAlloc(init) => self.check_ref(init, referent),
            Term::Deref(target) => {
                self.hit("t-!");
                let tt = self.child(target, 0)?;
                let Pretype::Ref(inner) = &tt.qtype.pretype else {
                    return Err(self.err(
                        "t-!",
                        ErrorCode::NotAReference,
                        format!("dereferencing a value of type {}", tt.qtype),
                    ));
                };
                let q = match self.mode {
                    CheckMode::Base => Qualifier::empty(),
                    CheckMode::Full => {
                        let missing = self.observe_all(&inner.qual.vars);
                        if !missing.is_empty() {
                            let mut e = self.err(
                                "t-!",
                                ErrorCode::NotObserved,
                                "referent qualifier is not observed".into(),
                            );
                            e.sets.push(("unobserved".into(), missing));
                            return Err(e);
                        }
                        inner.qual.clone()
                    }
                };
                Ok(Typing { qtype: QualifiedType::new(inner.pretype.clone(), q), effect: tt.effect })
            }
            Term::Assign(target, value) => self.check_assign(target, value),
            Term::Seq(a, b) => {
                self.hit("t-seq");
                let (ta, pa) = self.seq_component(a, 0)?;
                let (tb, pb) = self.seq_component(b, 1)?;
                for (ty, i) in [(&ta, 0), (&tb, 1)] {
                    if ty.qtype.pretype != Pretype::Bool {
                        let mut path = self.path.clone();
                        path.push(i);
                        return Err(fail(
                            "t-seq",
                            ErrorCode::NotABool,
                            &path,
                            format!("sequenced term has type {}", ty.qtype),
                        ));
                    }
                }
                let _ = (pa, pb);
                Ok(Typing {
                    qtype: QualifiedType::bool(Qualifier::empty()),
                    effect: self.effect(ta.effect.union(&tb.effect)),
                })
            }
        }
    }

    /// Checks a sequence component under its own observation, namely the
    /// part of the enclosing observation its derivation needs.
    fn seq_component(&mut self, t: &Term, i: usize) -> Result<(Typing, VarSet), TypeError> {
        let outer_demand = std::mem::take(&mut self.demand);
        let outer_cell = self.cell;
        self.cells.push(VarSet::new());
        let cell = self.cells.len() - 1;
        self.cell = cell;
        let r = self.child(t, i);
        self.cell = outer_cell;
        let inner = std::mem::replace(&mut self.demand, outer_demand);
        let ty = r?;
        if ty.qtype.qual.fresh {
            let mut path = self.path.clone();
            path.push(i);
            self.warnings.push(Warning { path, message: "fresh result discarded by sequencing".into() });
        }
        self.demand.extend(inner.iter().cloned());
        self.cells[cell] = inner.clone();
        Ok((ty, inner))
    }

    fn wf_type(&self, ty: &QualifiedType, position: QualPosition, what: &str) -> Result<(), TypeError> {
        ty.validate(position)
            .map_err(|e| self.err("wf", ErrorCode::IllFormedType, format!("{what}: {e}")))?;
        for x in ty.qual.vars.iter().chain(ty.pretype.free_names().iter()) {
            if !self.env.contains(x) {
                return Err(self.err(
                    "wf",
                    ErrorCode::UnboundVariable,
                    format!("{what} mentions `{x}`, which is not bound before it"),
                ));
            }
        }
        if self.mode == CheckMode::Base {
            base_restrictions(&ty.pretype).map_err(|m| self.err("wf", ErrorCode::IllFormedType, format!("{what}: {m}")))?;
        }
        Ok(())
    }

    /// Validates a lambda's parameter annotation and returns the qualified
    /// type the parameter is bound at inside the body.
    fn abs_binding(
        &mut self,
        captures: &VarSet,
        param: &Name,
        param_type: &QualifiedType,
    ) -> Result<QualifiedType, TypeError> {
        if self.env.contains(param) {
            return Err(self.err(
                "t-abs",
                ErrorCode::Shadowing,
                format!("parameter `{param}` shadows an existing binding"),
            ));
        }
        self.wf_type(param_type, QualPosition::Domain, "parameter type")?;
        if let Some(x) = captures.iter().find(|x| !self.env.contains(x)) {
            return Err(self.err("t-abs", ErrorCode::UnboundVariable, format!("captured `{x}` is unbound")));
        }
        let missing = self.observe_all(captures);
        if !missing.is_empty() {
            let mut e = self.err(
                "t-abs",
                ErrorCode::CaptureNotObserved,
                "captured variables are not observed".into(),
            );
            e.sets.push(("unobserved".into(), missing));
            return Err(e);
        }
        let s = &param_type.qual;
        let outside: VarSet = s.vars.difference(captures).cloned().collect();
        if !outside.is_empty() {
            let mut e = self.err(
                "t-abs",
                ErrorCode::DomainNotCaptured,
                "parameter qualifier exceeds the captured set".into(),
            );
            e.sets.push(("uncaptured".into(), outside));
            return Err(e);
        }
        // φ ∩ s[q'/♠] ∪_{◇∈s} ◇, with ⌊s⌋ ⊆ q' ⊆ φ
        let mut vars = s.vars.clone();
        if s.self_ref {
            vars.extend(captures.iter().cloned());
        }
        Ok(QualifiedType::new(
            param_type.pretype.clone(),
            Qualifier { vars, fresh: s.fresh, self_ref: false },
        ))
    }

    fn check_abs(
        &mut self,
        captures: &VarSet,
        param: &Name,
        param_type: &QualifiedType,
        body: &Term,
    ) -> Result<Typing, TypeError> {
        self.hit("t-abs");
        let bind = self.abs_binding(captures, param, param_type)?;
        let mut obs = captures.clone();
        obs.insert(param.clone());

        self.env.push_unchecked(param.clone(), bind);
        let saved_phi = std::mem::replace(&mut self.phi, obs.clone());
        let saved_demand = std::mem::take(&mut self.demand);
        let saved_cell = self.cell;
        self.cells.push(obs);
        self.cell = self.cells.len() - 1;
        let r = self.child(body, 0);
        self.cell = saved_cell;
        self.demand = saved_demand;
        self.phi = saved_phi;
        self.env.pop();
        let bt = r?;

        if bt.qtype.pretype.mentions(param) {
            return Err(self.err(
                "t-abs",
                ErrorCode::CodomainMentionsParam,
                format!("result type {} mentions parameter `{param}`", bt.qtype),
            ));
        }
        let fun = QualifiedType::function(
            param.clone(),
            param_type.clone(),
            self.effect(bt.effect),
            bt.qtype,
            Qualifier { vars: captures.clone(), fresh: false, self_ref: false },
        );
        Ok(Typing::pure(fun))
    }

    /// Members of `from` that cannot be widened into `target` by t-sub and
    /// t-sub-var steps under the current observation.
    fn unwidenable(&mut self, from: &VarSet, target: &Qualifier) -> VarSet {
        let (env, phi, demand) = (&self.env, &self.phi, &mut self.demand);
        uncovered(env, from, target, &mut |q: &Qualifier| {
            let ok = q.vars.iter().all(|y| phi.contains(y));
            if ok {
                demand.extend(q.vars.iter().cloned());
            }
            ok
        })
    }

    fn compatible(&self, actual: &Pretype, expected: &Pretype, actual_q: &Qualifier) -> bool {
        match self.mode {
            CheckMode::Full => alpha_eq(actual, expected),
            CheckMode::Base => sub_pretype(&self.env, actual, expected, Some(actual_q)),
        }
    }

    fn check_app(&mut self, f: &Term, a: &Term) -> Result<Typing, TypeError> {
        let ft = self.child(f, 0)?;
        let at = self.child(a, 1)?;
        let p = ft.qtype.qual.clone();
        let Pretype::Fun(fun) = &ft.qtype.pretype else {
            self.hit("t-app");
            return Err(self.err("t-app", ErrorCode::NotAFunction, format!("applying a value of type {}", ft.qtype)));
        };
        let FunType { param: x, domain, latent, codomain } = fun.as_ref();
        let s = &domain.qual;
        let o = &at.qtype.qual;
        let rule = if s.fresh { "t-app-◇" } else { "t-app" };
        self.hit(rule);

        if !self.compatible(&at.qtype.pretype, &domain.pretype, o) {
            return Err(self.err(
                rule,
                ErrorCode::TypeMismatch,
                format!("argument of type {} where {} is expected", at.qtype.pretype, domain.pretype),
            ));
        }
        let s_vars = s.strip_markers();
        let missing = self.observe_all(&s_vars);
        if !missing.is_empty() {
            let mut e = self.err(rule, ErrorCode::NotObserved, "parameter qualifier is not observed".into());
            e.sets.push(("unobserved".into(), missing));
            return Err(e);
        }
        if s.fresh {
            let env = self.env.clone();
            let excess = qualifier::overlap_excess(&env, &p, o, s)
                .map_err(|u| self.err(rule, ErrorCode::UnboundVariable, u.to_string()))?;
            if !excess.is_empty() {
                let mut e = self.err(
                    rule,
                    ErrorCode::Overlap,
                    format!("argument overlaps with the function via {}", show_set(&excess)),
                );
                e.sets.push(("overlap".into(), excess));
                e.sets.push(("function".into(), saturate(&env, &p.vars).unwrap_or_default()));
                e.sets.push(("argument".into(), saturate(&env, &o.vars).unwrap_or_default()));
                return Err(e);
            }
        } else {
            if o.fresh {
                return Err(self.err(
                    rule,
                    ErrorCode::FreshArgument,
                    "fresh argument passed where the parameter is not fresh".into(),
                ));
            }
            let target = Qualifier { vars: s_vars, fresh: false, self_ref: false };
            let bad = self.unwidenable(&o.vars, &target);
            if !bad.is_empty() {
                let mut e = self.err(
                    rule,
                    ErrorCode::ArgumentNotCovered,
                    format!("argument qualifier {} does not widen to {}", o, target),
                );
                e.sets.push(("uncovered".into(), bad));
                return Err(e);
            }
        }
        let mut r_rest = codomain.qual.strip_markers();
        r_rest.remove(x);
        let mut eps_rest = latent.vars.clone();
        eps_rest.remove(x);
        for (what, set) in [("result qualifier", r_rest), ("latent effect", eps_rest)] {
            let missing = self.observe_all(&set);
            if !missing.is_empty() {
                let mut e = self.err(rule, ErrorCode::Escape, format!("{what} is not observed"));
                e.sets.push(("unobserved".into(), missing));
                return Err(e);
            }
        }
        let rq = subst_self(&subst_var(&codomain.qual, x, o), &p);
        let call_eff = subst_effect(latent, x, &o.vars, &p.vars);
        let effect = self.effect(ft.effect.union(&at.effect).union(&call_eff));
        Ok(Typing { qtype: QualifiedType::new(codomain.pretype.clone(), rq), effect })
    }

    /// Rewrites `q` with t-sub-var as far as observed, non-fresh bindings
    /// allow; the result is the least qualifier that the value can be
    /// stored at.
    fn reduce(&mut self, q: &VarSet) -> VarSet {
        let mut cur = q.clone();
        loop {
            let mut next = VarSet::new();
            let mut changed = false;
            for x in &cur {
                let bq = self.env.lookup(x).map(|t| t.qual.clone());
                match bq {
                    Some(bq) if !bq.fresh && !bq.self_ref && bq.vars.iter().all(|y| self.phi.contains(y)) => {
                        self.demand.extend(bq.vars.iter().cloned());
                        next.extend(bq.vars.iter().cloned());
                        changed = true;
                    }
                    _ => {
                        next.insert(x.clone());
                    }
                }
            }
            if !changed {
                return cur;
            }
            cur = next;
        }
    }

    fn check_ref(&mut self, init: &Term, referent: &mut Option<Qualifier>) -> Result<Typing, TypeError> {
        self.hit("t-ref");
        let it = self.child(init, 0)?;
        let q = &it.qtype.qual;
        if q.fresh {
            return Err(self.err("t-ref", ErrorCode::FreshStored, "a fresh value cannot be stored".into()));
        }
        let stored = match self.mode {
            CheckMode::Base => {
                let bad = self.unwidenable(&q.vars, &Qualifier::empty());
                if !bad.is_empty() {
                    let mut e = self.err(
                        "t-ref",
                        ErrorCode::NotStorable,
                        "only untracked values can be stored in base mode".into(),
                    );
                    e.sets.push(("tracked".into(), bad));
                    return Err(e);
                }
                base_restrictions(&it.qtype.pretype)
                    .map_err(|m| self.err("t-ref", ErrorCode::NotStorable, m))?;
                Qualifier::empty()
            }
            CheckMode::Full => Qualifier::of_vars(self.reduce(&q.vars)),
        };
        *referent = Some(stored.clone());
        let cell = QualifiedType::new(it.qtype.pretype.clone(), stored.clone());
        Ok(Typing { qtype: QualifiedType::reference(cell, stored.with_fresh()), effect: it.effect })
    }

    fn check_assign(&mut self, target: &Term, value: &Term) -> Result<Typing, TypeError> {
        self.hit("t-:=");
        let tt = self.child(target, 0)?;
        let vt = self.child(value, 1)?;
        let Pretype::Ref(inner) = &tt.qtype.pretype else {
            return Err(self.err("t-:=", ErrorCode::NotAReference, format!("assigning through {}", tt.qtype)));
        };
        let o = &vt.qtype.qual;
        if !self.compatible(&vt.qtype.pretype, &inner.pretype, o) {
            return Err(self.err(
                "t-:=",
                ErrorCode::TypeMismatch,
                format!("storing {} into a cell of {}", vt.qtype.pretype, inner.pretype),
            ));
        }
        if o.fresh {
            return Err(self.err("t-:=", ErrorCode::FreshStored, "a fresh value cannot be stored".into()));
        }
        let p1 = Qualifier::of_vars(inner.qual.strip_markers());
        let missing = self.observe_all(&p1.vars);
        if !missing.is_empty() {
            let mut e = self.err("t-:=", ErrorCode::NotObserved, "referent qualifier is not observed".into());
            e.sets.push(("unobserved".into(), missing));
            return Err(e);
        }
        let bad = self.unwidenable(&o.vars, &p1);
        if !bad.is_empty() {
            let mut e = self.err(
                "t-:=",
                ErrorCode::ArgumentNotCovered,
                format!("stored value {} does not widen to the referent {}", o, p1),
            );
            e.sets.push(("uncovered".into(), bad));
            return Err(e);
        }
        let write = Effect::of_vars(tt.qtype.qual.strip_markers());
        Ok(Typing {
            qtype: QualifiedType::bool(Qualifier::empty()),
            effect: self.effect(tt.effect.union(&vt.effect).union(&write)),
        })
    }
}

/// Base-mode shape restrictions: untracked referents and no latent effects.
fn base_restrictions(t: &Pretype) -> Result<(), String> {
    match t {
        Pretype::Bool => Ok(()),
        Pretype::Ref(inner) => {
            if !inner.qual.is_empty() {
                return Err(format!("referent qualifier {} must be empty in base mode", inner.qual));
            }
            base_restrictions(&inner.pretype)
        }
        Pretype::Fun(f) => {
            if !f.latent.is_pure() {
                return Err(format!("latent effect {} requires full mode", f.latent));
            }
            base_restrictions(&f.domain.pretype)?;
            base_restrictions(&f.codomain.pretype)
        }
    }
}

/// Substitutes the set `by` for the free name `x` in every qualifier and
/// effect of `ty`.
pub fn subst_in_qtype(ty: &QualifiedType, x: &str, by: &VarSet) -> QualifiedType {
    let q = subst_var(&ty.qual, x, &Qualifier { vars: by.clone(), fresh: false, self_ref: false });
    QualifiedType::new(subst_in_pretype(&ty.pretype, x, by), q)
}

pub fn subst_in_pretype(t: &Pretype, x: &str, by: &VarSet) -> Pretype {
    match t {
        Pretype::Bool => Pretype::Bool,
        Pretype::Ref(inner) => Pretype::Ref(Box::new(subst_in_qtype(inner, x, by))),
        Pretype::Fun(f) => {
            let domain = subst_in_qtype(&f.domain, x, by);
            if f.param == x {
                return Pretype::Fun(Box::new(FunType { domain, ..(**f).clone() }));
            }
            let mut latent = f.latent.clone();
            if latent.vars.remove(x) {
                latent.vars.extend(by.iter().cloned());
            }
            Pretype::Fun(Box::new(FunType {
                param: f.param.clone(),
                domain,
                latent,
                codomain: subst_in_qtype(&f.codomain, x, by),
            }))
        }
    }
}

fn canonical_param(depth: usize) -> Name {
    // not a legal surface identifier, so it cannot clash
    format!("#{depth}")
}

/// Structural equality up to renaming of function parameters.
pub fn alpha_eq(a: &Pretype, b: &Pretype) -> bool {
    alpha_eq_at(a, b, 0)
}

fn alpha_eq_at(a: &Pretype, b: &Pretype, depth: usize) -> bool {
    match (a, b) {
        (Pretype::Bool, Pretype::Bool) => true,
        (Pretype::Ref(x), Pretype::Ref(y)) => x.qual == y.qual && alpha_eq_at(&x.pretype, &y.pretype, depth),
        (Pretype::Fun(f), Pretype::Fun(g)) => {
            if f.domain.qual != g.domain.qual || !alpha_eq_at(&f.domain.pretype, &g.domain.pretype, depth) {
                return false;
            }
            let z = canonical_param(depth);
            let zs = VarSet::from([z]);
            let (fc, gc) = (subst_in_qtype(&f.codomain, &f.param, &zs), subst_in_qtype(&g.codomain, &g.param, &zs));
            let fl = subst_effect(&f.latent, &f.param, &zs, &VarSet::new());
            let gl = subst_effect(&g.latent, &g.param, &zs, &VarSet::new());
            fl.vars == gl.vars
                && f.latent.self_ref == g.latent.self_ref
                && fc.qual == gc.qual
                && alpha_eq_at(&fc.pretype, &gc.pretype, depth + 1)
        }
        _ => false,
    }
}

/// Declarative subtyping on qualified types: sq-sub over s-ref, s-fun and
/// the qualifier rules.
pub fn check_subtype(env: &TypeEnv, t1: &QualifiedType, t2: &QualifiedType) -> bool {
    sub_pretype(env, &t1.pretype, &t2.pretype, Some(&t1.qual)) && subqual(env, &t1.qual, &t2.qual).unwrap_or(false)
}

/// Pretype subtyping. `outer` is the qualifier of the function value being
/// compared, which lets a codomain trade variables it reaches for `♠`.
pub fn sub_pretype(env: &TypeEnv, a: &Pretype, b: &Pretype, outer: Option<&Qualifier>) -> bool {
    match (a, b) {
        (Pretype::Bool, Pretype::Bool) => true,
        (Pretype::Ref(u), Pretype::Ref(s)) => {
            sub_pretype(env, &u.pretype, &s.pretype, None)
                && sub_pretype(env, &s.pretype, &u.pretype, None)
                && subqual(env, &u.qual, &s.qual).unwrap_or(false)
                && subqual(env, &s.qual, &u.qual).unwrap_or(false)
        }
        (Pretype::Fun(f1), Pretype::Fun(f2)) => {
            let (s1, s2) = (&f1.domain.qual, &f2.domain.qual);
            if s1.self_ref && !s1.fresh {
                return false;
            }
            if !sub_pretype(env, &f2.domain.pretype, &f1.domain.pretype, None) {
                return false;
            }
            // a fresh, self-referential domain accepts any argument
            let dom_ok = (s1.fresh && s1.self_ref) || subqual(env, s2, s1).unwrap_or(false);
            if !dom_ok {
                return false;
            }
            let z = canonical_param(env.len());
            let zs = VarSet::from([z.clone()]);
            let c1 = subst_in_qtype(&f1.codomain, &f1.param, &zs);
            let c2 = subst_in_qtype(&f2.codomain, &f2.param, &zs);
            if !sub_pretype(env, &c1.pretype, &c2.pretype, None) {
                return false;
            }
            let mut inner = env.clone();
            let bound = Qualifier { vars: s2.vars.clone(), fresh: s2.fresh, self_ref: false };
            inner.push_unchecked(z.clone(), QualifiedType::new(f2.domain.pretype.clone(), bound));
            let (r1, r2) = (&c1.qual, &c2.qual);
            if (r1.fresh && !r2.fresh) || (r1.self_ref && !r2.self_ref) {
                return false;
            }
            let mut target = r2.clone();
            if r2.self_ref {
                if let Some(q) = outer {
                    target.vars.extend(q.vars.iter().cloned());
                }
            }
            if !uncovered(&inner, &r1.vars, &target, &mut |_| true).is_empty() {
                return false;
            }
            let e1 = subst_effect(&f1.latent, &f1.param, &zs, &VarSet::new());
            let e2 = subst_effect(&f2.latent, &f2.param, &zs, &VarSet::new());
            if f1.latent.self_ref && !f2.latent.self_ref {
                return false;
            }
            let e2q = Qualifier { vars: e2.vars, fresh: false, self_ref: false };
            uncovered(&inner, &e1.vars, &e2q, &mut |_| true).is_empty()
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_qtype, parse_term};
    use crate::syntax::var_set;

    fn ty(src: &str) -> QualifiedType {
        parse_qtype(src).unwrap()
    }

    fn cell_env(names: &[&str]) -> TypeEnv {
        let mut env = TypeEnv::new();
        for n in names {
            env.bind(*n, ty("(Ref Bool^{})^{fresh}")).unwrap();
        }
        env
    }

    fn check(env: &TypeEnv, src: &str, mode: CheckMode) -> Result<Typing, TypeError> {
        synthesize(env, &parse_term(src).unwrap(), mode)
    }

    #[test]
    fn ref_true_in_base() {
        let t = check(&TypeEnv::new(), "(ref true)", CheckMode::Base).unwrap();
        assert_eq!(t.qtype.to_string(), "(Ref Bool^{})^{fresh}");
        assert!(t.effect.is_pure());
    }

    #[test]
    fn identity_type() {
        let t = check(&TypeEnv::new(), "(lam {} (x: Bool^{fresh}) x)", CheckMode::Base).unwrap();
        assert_eq!(t.qtype.to_string(), "((x: Bool^{fresh}) -> Bool^{x} / {})^{}");
    }

    #[test]
    fn assignment_effect() {
        let mut env = cell_env(&["x"]);
        env.bind("y", ty("(Ref Bool^{})^{x}")).unwrap();
        let t = check(&env, "(:= y true)", CheckMode::Full).unwrap();
        assert_eq!(t.qtype, QualifiedType::bool(Qualifier::empty()));
        assert_eq!(t.effect, Effect::of_vars(["y"]));
    }

    #[test]
    fn variables_must_be_observed() {
        let env = cell_env(&["x"]).observing(VarSet::new()).unwrap();
        let e = check(&env, "(! x)", CheckMode::Base).unwrap_err();
        assert_eq!((e.rule, e.code), ("t-var", ErrorCode::NotObserved));
    }

    #[test]
    fn full_mode_refs_track_referents() {
        let env = cell_env(&["x"]);
        let t = check(&env, "(ref x)", CheckMode::Full).unwrap();
        assert_eq!(t.qtype.to_string(), "(Ref (Ref Bool^{})^{x})^{x fresh}");
        let t = check(&env, "(! (ref x))", CheckMode::Full).unwrap();
        assert_eq!(t.qtype.qual, Qualifier::var("x"));
        let e = check(&env, "(ref x)", CheckMode::Base).unwrap_err();
        assert_eq!(e.rule, "t-ref");
        let e = check(&env, "(ref (ref true))", CheckMode::Full).unwrap_err();
        assert_eq!((e.rule, e.code), ("t-ref", ErrorCode::FreshStored));
    }

    #[test]
    fn demand_is_least_observation() {
        let env = cell_env(&["x", "y", "z"]);
        let (_, d) = synthesize_with_demand(&env, &parse_term("(:= x (! y))").unwrap(), CheckMode::Full).unwrap();
        assert_eq!(d, var_set(["x", "y"]));
    }

    #[test]
    fn seq_records_component_observations() {
        let env = cell_env(&["x", "y"]);
        let el = typecheck(&env, &parse_term("(seq (! x) (:= y true))").unwrap(), CheckMode::Full).unwrap();
        assert_eq!(el.info_at(&[0]).unwrap().observation, var_set(["x"]));
        assert_eq!(el.info_at(&[1, 0]).unwrap().observation, var_set(["y"]));
        assert_eq!(el.info_at(&[]).unwrap().observation, var_set(["x", "y"]));
        assert_eq!(el.typing.effect, Effect::of_vars(["y"]));
    }

    #[test]
    fn env_at_follows_binders() {
        let t = parse_term("(lam {} (x: Bool^{}) (seq x true))").unwrap();
        let env = env_at(&TypeEnv::new(), &t, &[0, 0], CheckMode::Base).unwrap();
        assert!(env.contains("x"));
        assert_eq!(env.observation(), &var_set(["x"]));
    }

    #[test]
    fn subtype_reflexive_and_ref_invariant() {
        let env = cell_env(&["a", "b"]);
        let t = ty("((x: Bool^{fresh}) -> Bool^{x} / {})^{a}");
        assert!(check_subtype(&env, &t, &t));
        let r1 = ty("(Ref (Ref Bool^{})^{a})^{}");
        let r2 = ty("(Ref (Ref Bool^{})^{a b})^{}");
        assert!(!check_subtype(&env, &r1, &r2));
    }

    #[test]
    fn stepwise_self_introduction() {
        // q' = {a} and q = {b} with a reaching b, so q' <: q
        let mut env = cell_env(&["b"]);
        env.bind("a", ty("(Ref Bool^{})^{b}")).unwrap();
        let from = ty("((x: (Ref Bool^{})^{fresh self}) -> (Ref Bool^{})^{x} / {})^{b}");
        let to = ty("((x: (Ref Bool^{})^{a}) -> (Ref Bool^{})^{self} / {})^{b}");
        assert!(check_subtype(&env, &from, &to));
        let bad = ty("((x: (Ref Bool^{})^{a}) -> (Ref Bool^{})^{} / {})^{b}");
        assert!(!check_subtype(&env, &from, &bad));
    }

    #[test]
    fn alpha_equivalence() {
        let a = ty("((x: Bool^{}) -> Bool^{x} / {x})^{}");
        let b = ty("((y: Bool^{}) -> Bool^{y} / {y})^{}");
        let c = ty("((y: Bool^{}) -> Bool^{} / {y})^{}");
        assert!(alpha_eq(&a.pretype, &b.pretype));
        assert!(!alpha_eq(&a.pretype, &c.pretype));
    }
}
