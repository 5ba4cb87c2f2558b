//! Runtime monitor: evaluates a checked program while maintaining a store
//! typing and checking reachability bounds, frame conditions, effect safety
//! and store well-formedness on the concrete trace.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::eval::{outcome, EvalOutcome, Hooks, Machine};
use crate::syntax::{format_path, Closure, Path, Pretype, Store, Term, Value, ValueEnv, VarSet};
use crate::typing::{CheckMode, Elaborated};

pub type Loc = usize;
pub type LocSet = BTreeSet<Loc>;

/// `Σ`: for every location, the locations its contents were declared to
/// reach when it was allocated.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StoreTyping(Vec<LocSet>);

impl StoreTyping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<LocSet>) -> Self {
        StoreTyping(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, l: Loc) -> Option<&LocSet> {
        self.0.get(l)
    }

    pub fn entries(&self) -> &[LocSet] {
        &self.0
    }

    fn push(&mut self, declared: LocSet) -> Loc {
        self.0.push(declared);
        self.0.len() - 1
    }

    /// Locations whose declared set mentions a location that is not older.
    pub fn cyclic_entries(&self) -> Vec<Loc> {
        (0..self.0.len()).filter(|&l| self.0[l].iter().any(|&m| m >= l)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("dangling location {0}")]
pub struct Dangling(pub Loc);

/// `Locs(v)`.
pub fn locs(v: &Value) -> LocSet {
    let mut out = LocSet::new();
    collect_locs(v, &mut out);
    out
}

fn collect_locs(v: &Value, out: &mut LocSet) {
    match v {
        Value::Bool(_) => {}
        Value::Loc(l) => {
            out.insert(*l);
        }
        Value::Closure(c) => collect_env_locs(&c.env, &c.captures, out),
    }
}

fn collect_env_locs(env: &ValueEnv, q: &VarSet, out: &mut LocSet) {
    for x in q {
        if let Some(v) = env.lookup(x) {
            collect_locs(v, out);
        }
    }
}

/// `Locs_H(q)`: the locations of the values `q` names in `env`.
pub fn locs_of_vars(env: &ValueEnv, q: &VarSet) -> LocSet {
    let mut out = LocSet::new();
    collect_env_locs(env, q, &mut out);
    out
}

/// `L*` under `Σ`.
pub fn sat_locs(sigma: &StoreTyping, l: &LocSet) -> Result<LocSet, Dangling> {
    let mut seen = LocSet::new();
    let mut work: Vec<Loc> = l.iter().copied().collect();
    while let Some(x) = work.pop() {
        if !seen.insert(x) {
            continue;
        }
        let next = sigma.get(x).ok_or(Dangling(x))?;
        work.extend(next.iter().copied());
    }
    Ok(seen)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ViolationKind {
    ResultReachability,
    Frame,
    EffectSafety,
    StoreWF,
    Acyclicity,
    TypingExtension,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ViolationReport {
    pub kind: ViolationKind,
    /// Number of nodes entered when the check fired.
    pub step: u64,
    pub path: String,
    pub location: Option<Loc>,
    /// Locations that escaped the bound.
    pub witnesses: Vec<Loc>,
    /// The bound that was exceeded.
    pub bound: Vec<Loc>,
    pub message: String,
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at step {} ({}): {}; witnesses {:?} outside {:?}",
            self.kind, self.step, self.path, self.message, self.witnesses, self.bound
        )
    }
}

/// Certificate that an application left every location outside its
/// permitted set untouched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FrameRecord {
    pub step: u64,
    pub path: String,
    pub allowed: Vec<Loc>,
    pub preserved: Vec<Loc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonitorOptions {
    /// Check results and writes of every call against the callee's type.
    pub call_boundary: bool,
    /// Check the result bound and frame of every subterm evaluation.
    pub every_node: bool,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        MonitorOptions { call_boundary: false, every_node: true }
    }
}

impl MonitorOptions {
    pub fn all() -> Self {
        MonitorOptions { call_boundary: true, every_node: true }
    }
}

#[derive(Clone, Debug)]
pub struct MonitorRun {
    pub outcome: EvalOutcome,
    pub sigma: StoreTyping,
    pub violations: Vec<ViolationReport>,
    pub frames: Vec<FrameRecord>,
    /// Pre-existing locations written during the run.
    pub modified: LocSet,
}

struct Entry {
    store_len: usize,
    write_mark: usize,
}

struct Monitor<'a> {
    elab: &'a Elaborated,
    paths: HashMap<usize, Path>,
    opts: MonitorOptions,
    sigma: StoreTyping,
    step: u64,
    writes: Vec<Loc>,
    nodes: Vec<Entry>,
    calls: Vec<Entry>,
    violations: Vec<ViolationReport>,
    frames: Vec<FrameRecord>,
}

fn key(t: &Term) -> usize {
    t as *const Term as usize
}

fn index_paths(t: &Term, here: &mut Path, out: &mut HashMap<usize, Path>) {
    out.insert(key(t), here.clone());
    for (i, c) in t.children().into_iter().enumerate() {
        here.push(i);
        index_paths(c, here, out);
        here.pop();
    }
}

impl Monitor<'_> {
    fn path_of(&self, t: &Term) -> String {
        self.paths.get(&key(t)).map_or_else(|| "?".to_string(), |p| format_path(p))
    }

    fn sat(&self, l: &LocSet) -> LocSet {
        // dangling locations stay as they are and surface as violations elsewhere
        sat_locs(&self.sigma, l).unwrap_or_else(|_| l.clone())
    }

    fn report(
        &mut self,
        kind: ViolationKind,
        path: String,
        location: Option<Loc>,
        witnesses: LocSet,
        bound: &LocSet,
        message: impl Into<String>,
    ) {
        self.violations.push(ViolationReport {
            kind,
            step: self.step,
            path,
            location,
            witnesses: witnesses.into_iter().collect(),
            bound: bound.iter().copied().collect(),
            message: message.into(),
        });
    }

    /// Writes since `mark` to locations older than `store_len` that fall
    /// outside `allowed`.
    fn stray_writes(&self, entry: &Entry, allowed: &LocSet) -> LocSet {
        self.writes[entry.write_mark..]
            .iter()
            .copied()
            .filter(|l| *l < entry.store_len && !allowed.contains(l))
            .collect()
    }

    fn check_result(&mut self, path: String, v: &Value, declared: LocSet, fresh_from: Option<usize>, what: &str) {
        let bound = self.sat(&declared);
        let escaped: LocSet = locs(v)
            .into_iter()
            .filter(|l| !bound.contains(l) && fresh_from.is_none_or(|f| *l < f))
            .collect();
        if !escaped.is_empty() {
            self.report(ViolationKind::ResultReachability, path, None, escaped, &bound, what.to_string());
        }
    }

    fn check_stored(&mut self, path: String, loc: Loc, v: &Value) {
        let Some(declared) = self.sigma.get(loc).cloned() else {
            self.report(ViolationKind::StoreWF, path, Some(loc), LocSet::new(), &LocSet::new(), "no store typing entry");
            return;
        };
        let direct = locs(v);
        if self.elab.mode == CheckMode::Base && !direct.is_empty() {
            self.report(
                ViolationKind::StoreWF,
                path,
                Some(loc),
                direct,
                &LocSet::new(),
                "base-mode cells may only hold values reaching no locations",
            );
            return;
        }
        let bound = self.sat(&declared);
        let reach = self.sat(&direct);
        let excess: LocSet = reach.difference(&bound).copied().collect();
        if !excess.is_empty() {
            self.report(ViolationKind::StoreWF, path, Some(loc), excess, &bound, "stored value exceeds the declared reachability of its cell");
        }
    }

    /// `Locs(ε\x) ∪_{x∈ε} Locs(v) ∪_{♠∈ε} Locs(closure)` for a call.
    fn instantiate(&self, env: &ValueEnv, vars: &VarSet, self_ref: bool, param: &str, clo: &Closure, arg: &Value) -> LocSet {
        let mut rest = vars.clone();
        let has_param = rest.remove(param);
        let mut out = locs_of_vars(env, &rest);
        if has_param {
            out.extend(locs(arg));
        }
        if self_ref {
            out.extend(locs_of_vars(&clo.env, &clo.captures));
        }
        out
    }
}

impl Hooks for Monitor<'_> {
    fn enter(&mut self, _t: &Term, _env: &ValueEnv, store: &Store) {
        self.step += 1;
        self.nodes.push(Entry { store_len: store.len(), write_mark: self.writes.len() });
    }

    fn leave(&mut self, t: &Term, env: &ValueEnv, _store: &Store, v: &Value) {
        let entry = self.nodes.pop().expect("balanced node stack");
        if !self.opts.every_node {
            return;
        }
        let Some(info) = self.elab.info(t) else { return };
        let p = &info.typing.qtype.qual;
        let visible: VarSet = info.observation.intersection(&p.vars).cloned().collect();
        let declared = locs_of_vars(env, &visible);
        let path = self.path_of(t);
        self.check_result(path.clone(), v, declared, p.fresh.then_some(entry.store_len), "result reaches beyond its qualifier");

        let (scope, kind) = match self.elab.mode {
            CheckMode::Base => (info.observation.clone(), ViolationKind::Frame),
            CheckMode::Full => (
                info.observation.intersection(&info.typing.effect.vars).cloned().collect(),
                ViolationKind::EffectSafety,
            ),
        };
        let allowed = self.sat(&locs_of_vars(env, &scope));
        let stray = self.stray_writes(&entry, &allowed);
        if !stray.is_empty() {
            self.report(kind, path.clone(), None, stray, &allowed, "write outside the permitted frame");
        }
        if matches!(t, Term::App(..)) {
            let preserved: Vec<Loc> = (0..entry.store_len).filter(|l| !allowed.contains(l)).collect();
            self.frames.push(FrameRecord {
                step: self.step,
                path,
                allowed: allowed.into_iter().collect(),
                preserved,
            });
        }
    }

    fn allocated(&mut self, t: &Term, env: &ValueEnv, store: &Store, loc: Loc) {
        let path = self.path_of(t);
        let referent = self.elab.info(t).and_then(|i| i.referent.clone()).unwrap_or_default();
        let declared = locs_of_vars(env, &referent.vars);
        if self.sigma.len() != loc {
            self.report(
                ViolationKind::TypingExtension,
                path.clone(),
                Some(loc),
                LocSet::new(),
                &LocSet::new(),
                format!("store typing has {} entries at allocation of {loc}", self.sigma.len()),
            );
        }
        let cyclic: LocSet = declared.iter().copied().filter(|&m| m >= loc).collect();
        if !cyclic.is_empty() {
            self.report(ViolationKind::Acyclicity, path.clone(), Some(loc), cyclic, &LocSet::new(), "declared set is not strictly older");
        }
        self.sigma.push(declared);
        if let Some(v) = store.get(loc) {
            let v = v.clone();
            self.check_stored(path, loc, &v);
        }
    }

    fn assigning(&mut self, _store: &Store, loc: Loc, v: &Value) {
        self.check_stored(format!("write to loc:{loc}"), loc, v);
        self.writes.push(loc);
    }

    fn call(&mut self, _app: &Term, _clo: &Closure, _arg: &Value, store: &Store) {
        self.calls.push(Entry { store_len: store.len(), write_mark: self.writes.len() });
    }

    fn returned(&mut self, app: &Term, env: &ValueEnv, clo: &Closure, arg: &Value, _store: &Store, v: &Value) {
        let entry = self.calls.pop().expect("balanced call stack");
        if !self.opts.call_boundary {
            return;
        }
        let Term::App(f, _) = app else { return };
        let Some(info) = self.elab.info(f) else { return };
        let Pretype::Fun(fun) = &info.typing.qtype.pretype else { return };
        let path = self.path_of(app);
        let r = &fun.codomain.qual;
        let declared = self.instantiate(env, &r.vars, r.self_ref, &fun.param, clo, arg);
        self.check_result(path.clone(), v, declared, r.fresh.then_some(entry.store_len), "call result reaches beyond the codomain qualifier");
        if self.elab.mode == CheckMode::Full {
            let eff = &fun.latent;
            let allowed = self.sat(&self.instantiate(env, &eff.vars, eff.self_ref, &fun.param, clo, arg));
            let stray = self.stray_writes(&entry, &allowed);
            if !stray.is_empty() {
                self.report(ViolationKind::EffectSafety, path, None, stray, &allowed, "callee wrote outside its latent effect");
            }
        }
    }
}

/// Runs `elab` under the monitor, starting from `env`, `store` and `sigma`,
/// and checks the top-level judgment under `observation`.
pub fn monitored_eval(
    elab: &Elaborated,
    fuel: u64,
    observation: &VarSet,
    env: &ValueEnv,
    store: Store,
    sigma: StoreTyping,
    opts: MonitorOptions,
) -> MonitorRun {
    let mut paths = HashMap::new();
    index_paths(&elab.term, &mut Vec::new(), &mut paths);
    let initial_sigma = sigma.clone();
    let initial_len = store.len();
    let mut mon = Monitor {
        elab,
        paths,
        opts,
        sigma,
        step: 0,
        writes: Vec::new(),
        nodes: Vec::new(),
        calls: Vec::new(),
        violations: Vec::new(),
        frames: Vec::new(),
    };
    let mut machine = Machine { fuel, store, hooks: &mut mon };
    let result = machine.run(env, &elab.term);
    let store = std::mem::take(&mut machine.store);
    let outcome = outcome(result, store);

    let top = Entry { store_len: initial_len, write_mark: 0 };
    if let EvalOutcome::Done { value, .. } = &outcome {
        let p = &elab.typing.qtype.qual;
        let visible: VarSet = observation.intersection(&p.vars).cloned().collect();
        let declared = locs_of_vars(env, &visible);
        mon.check_result("root".into(), value, declared, p.fresh.then_some(initial_len), "program result reaches beyond its qualifier");
        let (scope, kind) = match elab.mode {
            CheckMode::Base => (observation.clone(), ViolationKind::Frame),
            CheckMode::Full => (
                observation.intersection(&elab.typing.effect.vars).cloned().collect(),
                ViolationKind::EffectSafety,
            ),
        };
        let allowed = mon.sat(&locs_of_vars(env, &scope));
        let stray = mon.stray_writes(&top, &allowed);
        if !stray.is_empty() {
            mon.report(kind, "root".into(), None, stray, &allowed, "program wrote outside its frame");
        }
    }
    if mon.sigma.entries().get(..initial_sigma.len()) != Some(initial_sigma.entries()) {
        let bound = LocSet::new();
        mon.report(ViolationKind::TypingExtension, "root".into(), None, LocSet::new(), &bound, "initial store typing was modified");
    }
    for l in mon.sigma.cyclic_entries() {
        let bound = LocSet::new();
        mon.report(ViolationKind::Acyclicity, "root".into(), Some(l), LocSet::new(), &bound, "cyclic store typing entry");
    }
    let modified = mon.writes.iter().copied().filter(|l| *l < initial_len).collect();
    MonitorRun { outcome, sigma: mon.sigma, violations: mon.violations, frames: mon.frames, modified }
}

/// Monitors a closed program from the empty environment and store.
pub fn monitor_closed(elab: &Elaborated, fuel: u64, opts: MonitorOptions) -> MonitorRun {
    monitored_eval(elab, fuel, &VarSet::new(), &ValueEnv::new(), Store::new(), StoreTyping::new(), opts)
}
