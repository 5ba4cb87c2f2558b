use proptest::prelude::*;

use reach_core::eval::{eval_closed, EvalOutcome};
use reach_core::harness::{difftest, generate, GenConfig};
use reach_core::qualifier::saturate;
use reach_core::typing::{env_at, synthesize, synthesize_with_demand};
use reach_core::{parse_term, CheckMode, QualifiedType, Qualifier, TypeEnv, VarSet};

fn mode() -> impl Strategy<Value = CheckMode> {
    prop_oneof![Just(CheckMode::Base), Just(CheckMode::Full)]
}

fn program() -> impl Strategy<Value = (CheckMode, reach_core::Term)> {
    (any::<u64>(), 0usize..=8, mode()).prop_map(|(seed, depth, m)| (m, generate(&GenConfig::new(seed, depth, m))))
}

/// Environments whose bindings only mention earlier names.
fn env() -> impl Strategy<Value = TypeEnv> {
    prop::collection::vec((prop::collection::vec(any::<bool>(), 8), any::<bool>()), 1..8).prop_map(|rows| {
        let mut env = TypeEnv::new();
        for (i, (mask, fresh)) in rows.into_iter().enumerate() {
            let vars: VarSet = (0..i).filter(|j| mask[*j]).map(|j| format!("v{j}")).collect();
            let q = Qualifier { vars, fresh, self_ref: false };
            env.bind(format!("v{i}"), QualifiedType::bool(q)).unwrap();
        }
        env
    })
}

/// Closures compare by identity, so runs are compared by their printed form.
fn observe(o: &EvalOutcome) -> (String, Vec<String>) {
    let store = match o {
        EvalOutcome::Done { store, .. } => store.values().iter().map(|v| v.to_string()).collect(),
        _ => vec![],
    };
    (o.to_string(), store)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn saturation_is_a_closure(env in env(), picks in prop::collection::vec(any::<bool>(), 8)) {
        let q: VarSet = env.names().into_iter().zip(picks).filter(|(_, b)| *b).map(|(n, _)| n).collect();
        let s = saturate(&env, &q).unwrap();
        prop_assert!(q.is_subset(&s));
        prop_assert_eq!(saturate(&env, &s).unwrap(), s.clone());
        for x in &s {
            prop_assert!(env.lookup(x).unwrap().qual.vars.is_subset(&s));
        }
    }

    #[test]
    fn printing_round_trips((_, t) in program()) {
        prop_assert_eq!(parse_term(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn subterm_replacement_is_identity((_, t) in program(), pick in any::<prop::sample::Index>()) {
        let paths = t.paths();
        let p = &paths[pick.index(paths.len())];
        let sub = t.subterm(p).unwrap().clone();
        prop_assert_eq!(t.replace_at(p, sub).unwrap(), t);
    }

    #[test]
    fn evaluation_is_deterministic_and_fuel_monotone((_, t) in program(), extra in 0u64..1000) {
        let a = observe(&eval_closed(&t, 100_000));
        prop_assert_eq!(&a, &observe(&eval_closed(&t, 100_000)));
        prop_assert!(a.0 != "timeout");
        let steps = (1..=t.size() as u64 * 64).find(|f| eval_closed(&t, *f).is_done()).unwrap();
        prop_assert!(!eval_closed(&t, steps - 1).is_done());
        prop_assert_eq!(observe(&eval_closed(&t, steps + extra)), a);
    }

    #[test]
    fn typing_is_deterministic((m, t) in program()) {
        prop_assert_eq!(synthesize(&TypeEnv::new(), &t, m).unwrap(), synthesize(&TypeEnv::new(), &t, m).unwrap());
    }

    #[test]
    fn demand_suffices((m, t) in program(), pick in any::<prop::sample::Index>()) {
        let paths = t.paths();
        let p = &paths[pick.index(paths.len())];
        let env = env_at(&TypeEnv::new(), &t, p, m).unwrap();
        let sub = t.subterm(p).unwrap();
        let (typing, demand) = synthesize_with_demand(&env, sub, m).unwrap();
        prop_assert!(demand.is_subset(env.observation()));
        let narrowed = env.clone().observing(demand).unwrap();
        prop_assert_eq!(synthesize(&narrowed, sub, m).unwrap(), typing);
    }

    #[test]
    fn difftest_is_symmetric((_, a) in program(), (_, b) in program()) {
        use reach_core::harness::DiffVerdict::*;
        match (difftest(&a, &b, 100_000), difftest(&b, &a, 100_000)) {
            (Equal(x), Equal(y)) => prop_assert_eq!(x, y),
            (Unequal(x1, y1), Unequal(y2, x2)) => {
                prop_assert_eq!(x1, x2);
                prop_assert_eq!(y1, y2);
            }
            (Inconclusive(_), Inconclusive(_)) => {}
            (l, r) => prop_assert!(false, "{l} vs {r}"),
        }
    }
}
