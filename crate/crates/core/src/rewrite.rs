//! Source-to-source equational rewrites with statically checked side
//! conditions: reordering of sequenced computations and β-inlining.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::qualifier::{saturate, subst_effect, subst_self, subst_var, uncovered};
use crate::syntax::{show_set, Effect, Name, Qualifier, QualifiedType, Term, TypeEnv, VarSet};
use crate::typing::{env_at, subst_in_qtype, synthesize, synthesize_with_demand, CheckMode, TypeError, Typing};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RewriteRule {
    ReorderBase,
    ReorderEffect,
    BetaInline,
}

impl RewriteRule {
    pub fn reorder_for(mode: CheckMode) -> Self {
        match mode {
            CheckMode::Base => RewriteRule::ReorderBase,
            CheckMode::Full => RewriteRule::ReorderEffect,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewriteRule::ReorderBase => "re-order",
            RewriteRule::ReorderEffect => "re-order-eff",
            RewriteRule::BetaInline => "beta-equiv",
        }
    }
}

impl fmt::Display for RewriteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Saturated sets that instantiate a reordering side condition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReorderWitness {
    pub phi1: VarSet,
    pub phi2: VarSet,
    pub eff1: VarSet,
    pub eff2: VarSet,
    pub sat_phi1: VarSet,
    pub sat_phi2: VarSet,
    pub sat_eff1: VarSet,
    pub sat_eff2: VarSet,
    /// The failed condition and its non-empty intersection, if any.
    pub failed: Option<(String, VarSet)>,
}

impl ReorderWitness {
    pub fn holds(&self) -> bool {
        self.failed.is_none()
    }
}

#[derive(Clone, Debug)]
pub enum RewriteOutcome {
    Rewritten { rule: RewriteRule, term: Term, typing: Typing, witness: Vec<(String, VarSet)> },
    Refused { rule: RewriteRule, condition: String, witness: Vec<(String, VarSet)> },
}

impl RewriteOutcome {
    pub fn term(&self) -> Option<&Term> {
        match self {
            RewriteOutcome::Rewritten { term, .. } => Some(term),
            RewriteOutcome::Refused { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RewriteError {
    #[error("not a sequence")]
    NotASeq,
    #[error("not a beta-redex")]
    NotARedex,
    #[error("no subterm at the given path")]
    BadPath,
    #[error("{0}")]
    Type(#[from] TypeError),
}

fn unbound(e: crate::qualifier::Unbound) -> TypeError {
    TypeError {
        rule: "re-order",
        code: crate::typing::ErrorCode::UnboundVariable,
        path: vec![],
        message: e.to_string(),
        sets: vec![],
    }
}

/// Decides the reordering side condition for `t1; t2` under `env`.
/// Each component is given the least observation its derivation needs.
pub fn can_reorder(env: &TypeEnv, t1: &Term, t2: &Term, mode: CheckMode) -> Result<ReorderWitness, TypeError> {
    let (ty1, phi1) = synthesize_with_demand(env, t1, mode)?;
    let (ty2, phi2) = synthesize_with_demand(env, t2, mode)?;
    let sat = |q: &VarSet| saturate(env, q).map_err(unbound);
    let (eff1, eff2) = (ty1.effect.vars.clone(), ty2.effect.vars.clone());
    let mut w = ReorderWitness {
        sat_phi1: sat(&phi1)?,
        sat_phi2: sat(&phi2)?,
        sat_eff1: sat(&eff1)?,
        sat_eff2: sat(&eff2)?,
        phi1,
        phi2,
        eff1,
        eff2,
        failed: None,
    };
    let meet = |a: &VarSet, b: &VarSet| -> VarSet { a.intersection(b).cloned().collect() };
    w.failed = match mode {
        CheckMode::Base => {
            let m = meet(&w.sat_phi1, &w.sat_phi2);
            (!m.is_empty()).then(|| ("qsat φ1 ∩ qsat φ2 ≠ ∅".to_string(), m))
        }
        CheckMode::Full => {
            let m1 = meet(&w.sat_phi1, &w.sat_eff2);
            let m2 = meet(&w.sat_phi2, &w.sat_eff1);
            if !m1.is_empty() {
                Some(("qsat φ1 ∩ qsat ε2 ≠ ∅".to_string(), m1))
            } else if !m2.is_empty() {
                Some(("qsat φ2 ∩ qsat ε1 ≠ ∅".to_string(), m2))
            } else {
                None
            }
        }
    };
    Ok(w)
}

fn witness_sets(w: &ReorderWitness) -> Vec<(String, VarSet)> {
    vec![
        ("φ1".into(), w.phi1.clone()),
        ("φ2".into(), w.phi2.clone()),
        ("ε1".into(), w.eff1.clone()),
        ("ε2".into(), w.eff2.clone()),
        ("qsat φ1".into(), w.sat_phi1.clone()),
        ("qsat φ2".into(), w.sat_phi2.clone()),
        ("qsat ε1".into(), w.sat_eff1.clone()),
        ("qsat ε2".into(), w.sat_eff2.clone()),
    ]
}

/// Swaps the components of a sequence when the side condition holds.
pub fn reorder(env: &TypeEnv, t: &Term, mode: CheckMode) -> Result<RewriteOutcome, RewriteError> {
    let Term::Seq(a, b) = t else { return Err(RewriteError::NotASeq) };
    let typing = synthesize(env, t, mode)?;
    let w = can_reorder(env, a, b, mode)?;
    let rule = RewriteRule::reorder_for(mode);
    let mut witness = witness_sets(&w);
    Ok(match w.failed {
        None => RewriteOutcome::Rewritten { rule, term: Term::Seq(b.clone(), a.clone()), typing, witness },
        Some((condition, set)) => {
            witness.insert(0, ("intersection".into(), set));
            RewriteOutcome::Refused { rule, condition, witness }
        }
    })
}

fn subst_names(q: &VarSet, x: &str) -> VarSet {
    let mut q = q.clone();
    q.remove(x);
    q
}

/// `body[arg/x]` for a closed `arg`. Occurrences of `x` in capture sets and
/// type annotations are replaced by the empty qualifier.
pub fn subst_term(body: &Term, x: &str, arg: &Term) -> Term {
    let fv = arg.free_vars();
    subst_rec(body, x, arg, &fv, &mut 0)
}

fn fresh_name(base: &str, avoid: &VarSet, body: &Term, counter: &mut usize) -> Name {
    let used = body.free_vars();
    loop {
        *counter += 1;
        let cand = format!("{base}_{counter}");
        if !avoid.contains(&cand) && !used.contains(&cand) {
            return cand;
        }
    }
}

fn subst_rec(t: &Term, x: &str, arg: &Term, arg_fv: &VarSet, counter: &mut usize) -> Term {
    match t {
        Term::Const(_) => t.clone(),
        Term::Var(y) if y == x => arg.clone(),
        Term::Var(_) => t.clone(),
        Term::Abs { captures, param, param_type, body } => {
            let captures = subst_names(captures, x);
            let param_type = subst_in_qtype(param_type, x, &VarSet::new());
            if param == x {
                return Term::Abs { captures, param: param.clone(), param_type, body: body.clone() };
            }
            if arg_fv.contains(param) {
                // only reachable for open arguments
                let renamed = fresh_name(param, arg_fv, body, counter);
                let body2 = subst_rec(body, param, &Term::Var(renamed.clone()), &VarSet::from([renamed.clone()]), counter);
                let body3 = subst_rec(&body2, x, arg, arg_fv, counter);
                return Term::Abs { captures, param: renamed, param_type, body: Arc::new(body3) };
            }
            Term::Abs {
                captures,
                param: param.clone(),
                param_type,
                body: Arc::new(subst_rec(body, x, arg, arg_fv, counter)),
            }
        }
        _ => {
            let kids = t
                .children()
                .into_iter()
                .map(|c| Arc::new(subst_rec(c, x, arg, arg_fv, counter)))
                .collect();
            t.with_children(kids)
        }
    }
}

/// Inlines a β-redex `(λx.t2)^q t1` whose argument is closed, untracked
/// and pure.
pub fn beta_inline(env: &TypeEnv, t: &Term, mode: CheckMode) -> Result<RewriteOutcome, RewriteError> {
    let Term::App(f, a) = t else { return Err(RewriteError::NotARedex) };
    let Term::Abs { captures, param, body, .. } = f.as_ref() else { return Err(RewriteError::NotARedex) };
    let rule = RewriteRule::BetaInline;
    let refuse = |condition: &str, witness: Vec<(String, VarSet)>| {
        Ok(RewriteOutcome::Refused { rule, condition: condition.to_string(), witness })
    };

    let fv = a.free_vars();
    if !fv.is_empty() {
        return refuse("argument is not closed", vec![("fv(t1)".into(), fv)]);
    }
    let empty_obs = env.clone().observing(VarSet::new()).expect("empty observation is always valid");
    let at = match synthesize(&empty_obs, a, mode) {
        Ok(at) => at,
        Err(e) => return refuse(&format!("Γ[∅] ⊢ t1 fails: {e}"), vec![]),
    };
    if !at.qtype.qual.is_empty() {
        return refuse(
            "Γ[∅] ⊢ t1 : T^∅ (argument qualifier must be empty)",
            vec![("qualifier".into(), at.qtype.qual.vars.clone())],
        );
    }
    if !at.effect.is_pure() {
        return refuse("Γ[∅] ⊢ t1 : T^∅ ∅ (argument must be pure)", vec![("effect".into(), at.effect.vars.clone())]);
    }
    // the redex itself must check; this also checks the abstraction
    let ft = synthesize(env, f, mode)?;
    synthesize(env, t, mode)?;
    let crate::syntax::Pretype::Fun(fun) = &ft.qtype.pretype else { return Err(RewriteError::NotARedex) };

    let q = Qualifier::of_vars(captures.iter().cloned());
    let r_theta = subst_self(&subst_var(&fun.codomain.qual, &fun.param, &Qualifier::empty()), &q);
    let eps_theta = subst_effect(&fun.latent, &fun.param, &VarSet::new(), &q.vars);
    let out = subst_term(body, param, a);
    let out_ty = match synthesize(env, &out, mode) {
        Ok(ty) => ty,
        Err(e) => return refuse(&format!("inlined term does not re-check: {e}"), vec![]),
    };
    let expected = QualifiedType::new(fun.codomain.pretype.clone(), r_theta.clone());
    let q_bad = uncovered(env, &out_ty.qtype.qual.vars, &r_theta, &mut |_| true);
    let fresh_bad = out_ty.qtype.qual.fresh && !r_theta.fresh;
    if !q_bad.is_empty() || fresh_bad {
        return refuse(
            &format!("inlined term qualifier {} exceeds {}", out_ty.qtype.qual, r_theta),
            vec![("uncovered".into(), q_bad)],
        );
    }
    let eps_q = Qualifier::of_vars(eps_theta.vars.iter().cloned());
    let e_bad = uncovered(env, &out_ty.effect.vars, &eps_q, &mut |_| true);
    if !e_bad.is_empty() {
        return refuse(
            &format!("inlined term effect {} exceeds {}", out_ty.effect, eps_theta),
            vec![("uncovered".into(), e_bad)],
        );
    }
    Ok(RewriteOutcome::Rewritten {
        rule,
        term: out,
        typing: Typing { qtype: expected, effect: Effect { vars: eps_theta.vars, self_ref: false } },
        witness: vec![("rθ".into(), r_theta.vars.clone()), ("εθ".into(), eps_q.vars)],
    })
}

/// Applies `rule` at `path` inside `program` and re-checks the whole result.
pub fn rewrite_at(
    env: &TypeEnv,
    program: &Term,
    path: &[usize],
    rule: RewriteRule,
    mode: CheckMode,
) -> Result<RewriteOutcome, RewriteError> {
    let sub = program.subterm(path).ok_or(RewriteError::BadPath)?;
    let local = env_at(env, program, path, mode)?;
    let r = match rule {
        RewriteRule::BetaInline => beta_inline(&local, sub, mode)?,
        RewriteRule::ReorderBase | RewriteRule::ReorderEffect => reorder(&local, sub, mode)?,
    };
    match r {
        RewriteOutcome::Rewritten { rule, term, typing, witness } => {
            let whole = program.replace_at(path, term).ok_or(RewriteError::BadPath)?;
            synthesize(env, &whole, mode)?;
            Ok(RewriteOutcome::Rewritten { rule, term: whole, typing, witness })
        }
        refused => Ok(refused),
    }
}

/// Human-readable rendering of a witness list.
pub fn show_witness(w: &[(String, VarSet)]) -> String {
    w.iter().map(|(n, s)| format!("{n} = {}", show_set(s))).collect::<Vec<_>>().join(", ")
}
