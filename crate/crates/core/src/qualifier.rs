//! Saturation, substitution and containment over qualifiers.

use thiserror::Error;

use crate::syntax::{Effect, Name, Qualifier, TypeEnv, VarSet};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("unbound variable `{0}`")]
pub struct Unbound(pub Name);

/// `q*`: everything reachable from `q` through binding qualifiers.
pub fn saturate(env: &TypeEnv, q: &VarSet) -> Result<VarSet, Unbound> {
    let mut seen = VarSet::new();
    let mut work: Vec<&str> = q.iter().map(String::as_str).collect();
    while let Some(x) = work.pop() {
        if seen.contains(x) {
            continue;
        }
        let ty = env.lookup(x).ok_or_else(|| Unbound(x.to_string()))?;
        seen.insert(x.to_string());
        work.extend(ty.qual.vars.iter().map(String::as_str));
    }
    Ok(seen)
}

/// `r[p/x]`.
pub fn subst_var(r: &Qualifier, x: &str, p: &Qualifier) -> Qualifier {
    if !r.vars.contains(x) {
        return r.clone();
    }
    let mut out = r.clone();
    out.vars.remove(x);
    out.union(p)
}

/// `r[q/♠]`.
pub fn subst_self(r: &Qualifier, q: &Qualifier) -> Qualifier {
    if !r.self_ref {
        return r.clone();
    }
    let mut out = r.clone();
    out.self_ref = false;
    out.union(q)
}

/// `p ∪_b q`.
pub fn cond_union(p: &Qualifier, q: &Qualifier, b: bool) -> Qualifier {
    if b {
        p.union(q)
    } else {
        p.clone()
    }
}

/// Effect substitution `ε[⌊o⌋/x, ⌊p⌋/♠]`, performed simultaneously.
pub fn subst_effect(eff: &Effect, x: &str, arg: &VarSet, self_q: &VarSet) -> Effect {
    let mut vars = eff.vars.clone();
    if vars.remove(x) {
        vars.extend(arg.iter().cloned());
    }
    if eff.self_ref {
        vars.extend(self_q.iter().cloned());
    }
    Effect { vars, self_ref: false }
}

pub fn intersect(a: &VarSet, b: &VarSet) -> VarSet {
    a.intersection(b).cloned().collect()
}

/// `qsat q1 ∩ qsat q2 = ∅`.
pub fn separate(env: &TypeEnv, q1: &VarSet, q2: &VarSet) -> Result<bool, Unbound> {
    Ok(saturate(env, q1)?.is_disjoint(&saturate(env, q2)?))
}

/// Saturated overlap of `⌊p⌋` and `⌊o⌋` that falls outside `⌊s⌋`.
/// Empty when the check passes; always empty when `♠ ∈ s`.
pub fn overlap_excess(
    env: &TypeEnv,
    p: &Qualifier,
    o: &Qualifier,
    s: &Qualifier,
) -> Result<VarSet, Unbound> {
    let sp = saturate(env, &p.vars)?;
    let so = saturate(env, &o.vars)?;
    for x in &s.vars {
        env.lookup(x).ok_or_else(|| Unbound(x.clone()))?;
    }
    if s.self_ref {
        return Ok(VarSet::new());
    }
    Ok(sp.intersection(&so).filter(|x| !s.vars.contains(*x)).cloned().collect())
}

/// `♠ ∉ s ⇒ ⌊p⌋* ∩ ⌊o⌋* ⊆ ⌊s⌋`.
pub fn overlap_bounded(env: &TypeEnv, p: &Qualifier, o: &Qualifier, s: &Qualifier) -> Result<bool, Unbound> {
    Ok(overlap_excess(env, p, o, s)?.is_empty())
}

/// Decides `Γ ⊢ p1 <: p2` under q-sub, q-var and q-trans.
///
/// A variable of `p1` is covered when it occurs in `p2` or when its binding
/// qualifier is non-fresh and covered in turn (q-var). Markers can only be
/// kept, never dropped.
pub fn subqual(env: &TypeEnv, p1: &Qualifier, p2: &Qualifier) -> Result<bool, Unbound> {
    for x in p1.vars.iter().chain(&p2.vars) {
        env.lookup(x).ok_or_else(|| Unbound(x.clone()))?;
    }
    if (p1.fresh && !p2.fresh) || (p1.self_ref && !p2.self_ref) {
        return Ok(false);
    }
    Ok(uncovered(env, &p1.vars, p2, &mut |_| true).is_empty())
}

/// The members of `from` that cannot be rewritten into `target` by q-var
/// steps. `may_unfold` gates each unfolding step (the typing rule t-sub-var
/// additionally demands that the binding qualifier is observed).
pub fn uncovered(
    env: &TypeEnv,
    from: &VarSet,
    target: &Qualifier,
    may_unfold: &mut dyn FnMut(&Qualifier) -> bool,
) -> VarSet {
    let mut memo = std::collections::BTreeMap::new();
    from.iter()
        .filter(|x| !covered(env, x, target, may_unfold, &mut memo))
        .cloned()
        .collect()
}

fn covered(
    env: &TypeEnv,
    x: &str,
    target: &Qualifier,
    may_unfold: &mut dyn FnMut(&Qualifier) -> bool,
    memo: &mut std::collections::BTreeMap<Name, bool>,
) -> bool {
    if target.vars.contains(x) {
        return true;
    }
    if let Some(&v) = memo.get(x) {
        return v;
    }
    // provisional entry guards against ill-scoped cyclic environments
    memo.insert(x.to_string(), false);
    let ok = match env.lookup(x) {
        None => false,
        Some(ty) => {
            let q = &ty.qual;
            !q.fresh
                && !q.self_ref
                && may_unfold(q)
                && q.vars.iter().all(|y| covered(env, y, target, may_unfold, memo))
        }
    };
    memo.insert(x.to_string(), ok);
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{var_set, QualifiedType};

    fn cell() -> QualifiedType {
        QualifiedType::reference(QualifiedType::bool(Qualifier::empty()), Qualifier::fresh())
    }

    fn chain_env() -> TypeEnv {
        TypeEnv::new()
            .with("a", QualifiedType::bool(Qualifier::empty()))
            .and_then(|e| e.with("b", QualifiedType::bool(Qualifier::var("a"))))
            .and_then(|e| e.with("c", QualifiedType::bool(Qualifier::var("b"))))
            .unwrap()
    }

    #[test]
    fn saturate_follows_binding_chain() {
        let env = TypeEnv::new()
            .with("x", cell())
            .and_then(|e| {
                e.with(
                    "y",
                    QualifiedType::reference(QualifiedType::bool(Qualifier::empty()), Qualifier::var("x")),
                )
            })
            .unwrap();
        assert_eq!(saturate(&env, &var_set(["y"])).unwrap(), var_set(["x", "y"]));
        assert!(saturate(&env, &VarSet::new()).unwrap().is_empty());
        assert_eq!(saturate(&chain_env(), &var_set(["c"])).unwrap(), var_set(["a", "b", "c"]));
        assert_eq!(saturate(&env, &var_set(["nope"])), Err(Unbound("nope".into())));
    }

    #[test]
    fn substitution_equations() {
        assert_eq!(subst_var(&Qualifier::var("x"), "x", &Qualifier::var("c2")), Qualifier::var("c2"));
        assert_eq!(subst_var(&Qualifier::var("y"), "x", &Qualifier::var("c2")), Qualifier::var("y"));
        assert_eq!(
            subst_var(&Qualifier::var("x").with_fresh(), "x", &Qualifier::of_vars(["a", "b"])),
            Qualifier::of_vars(["a", "b"]).with_fresh()
        );
        assert_eq!(subst_self(&Qualifier::empty().with_self(), &Qualifier::var("z")), Qualifier::var("z"));
        assert_eq!(subst_self(&Qualifier::var("x"), &Qualifier::var("z")), Qualifier::var("x"));
        assert_eq!(
            subst_self(&Qualifier::var("x").with_self(), &Qualifier::var("a").with_fresh()),
            Qualifier::of_vars(["a", "x"]).with_fresh()
        );
    }

    #[test]
    fn cond_union_cases() {
        let (a, b) = (Qualifier::var("a"), Qualifier::var("b"));
        assert_eq!(cond_union(&a, &b, true), Qualifier::of_vars(["a", "b"]));
        assert_eq!(cond_union(&a, &b, false), a);
        assert_eq!(cond_union(&Qualifier::empty(), &Qualifier::fresh(), true), Qualifier::fresh());
    }

    #[test]
    fn separation() {
        let env = TypeEnv::new().with("x", cell()).and_then(|e| e.with("y", cell())).unwrap();
        assert!(separate(&env, &var_set(["x"]), &var_set(["y"])).unwrap());
        assert!(separate(&env, &VarSet::new(), &var_set(["y"])).unwrap());
        let env2 = TypeEnv::new()
            .with("x", cell())
            .and_then(|e| {
                e.with("y", QualifiedType::reference(QualifiedType::bool(Qualifier::empty()), Qualifier::var("x")))
            })
            .unwrap();
        assert!(!separate(&env2, &var_set(["y"]), &var_set(["x"])).unwrap());
    }

    #[test]
    fn overlap_checks() {
        let env = TypeEnv::new().with("z", cell()).and_then(|e| e.with("w", cell())).unwrap();
        let p = Qualifier::var("z");
        let o = Qualifier::var("z");
        assert!(!overlap_bounded(&env, &p, &o, &Qualifier::fresh()).unwrap());
        assert!(overlap_bounded(&env, &p, &o, &Qualifier::var("z").with_fresh()).unwrap());
        assert!(overlap_bounded(&env, &p, &Qualifier::var("w"), &Qualifier::empty()).unwrap());
        assert!(overlap_bounded(&env, &p, &o, &Qualifier::fresh().with_self()).unwrap());
    }

    #[test]
    fn subqual_cases() {
        let env = TypeEnv::new()
            .with("x", cell())
            .and_then(|e| e.with("y", cell()))
            .unwrap();
        assert!(subqual(&env, &Qualifier::var("x"), &Qualifier::of_vars(["x", "y"])).unwrap());
        assert!(!subqual(&env, &Qualifier::var("x").with_fresh(), &Qualifier::var("x")).unwrap());
        let env = TypeEnv::new()
            .with("z", cell())
            .and_then(|e| e.with("y", QualifiedType::bool(Qualifier::var("z"))))
            .and_then(|e| e.with("w", QualifiedType::bool(Qualifier::empty())))
            .unwrap();
        assert!(subqual(&env, &Qualifier::var("y"), &Qualifier::of_vars(["z", "w"])).unwrap());
        assert!(!subqual(&env, &Qualifier::var("y"), &Qualifier::var("w")).unwrap());
        // fresh bindings never unfold
        let env = TypeEnv::new().with("c", cell()).unwrap();
        assert!(!subqual(&env, &Qualifier::var("c"), &Qualifier::empty()).unwrap());
        assert!(!subqual(&env, &Qualifier::var("c"), &Qualifier::fresh()).unwrap());
    }
}
