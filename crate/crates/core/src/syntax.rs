//! Terms, types, qualifiers, typing environments and runtime values.
//!
//! Everything here is immutable after construction. Subterms are held behind
//! `Arc` so closures can share their bodies with the program they came from.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub type Name = String;

/// Canonically ordered set of variable names.
pub type VarSet = BTreeSet<Name>;

/// Child-index path from the root of a term to one of its subterms.
pub type Path = Vec<usize>;

pub fn var_set<I, S>(names: I) -> VarSet
where
    I: IntoIterator<Item = S>,
    S: Into<Name>,
{
    names.into_iter().map(Into::into).collect()
}

/// A reachability qualifier: variables plus the freshness (◇) and
/// self-reference (♠) markers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Qualifier {
    pub vars: VarSet,
    pub fresh: bool,
    pub self_ref: bool,
}

impl Qualifier {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn fresh() -> Self {
        Qualifier { fresh: true, ..Self::default() }
    }

    pub fn of_vars<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Name>,
    {
        Qualifier { vars: var_set(names), ..Self::default() }
    }

    pub fn var(name: &str) -> Self {
        Self::of_vars([name])
    }

    pub fn with_fresh(mut self) -> Self {
        self.fresh = true;
        self
    }

    pub fn with_self(mut self) -> Self {
        self.self_ref = true;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty() && !self.fresh && !self.self_ref
    }

    pub fn has_markers(&self) -> bool {
        self.fresh || self.self_ref
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains(name)
    }

    /// `⌊q⌋`: the variables of `q` with both markers dropped.
    pub fn strip_markers(&self) -> VarSet {
        self.vars.clone()
    }

    pub fn union(&self, other: &Qualifier) -> Qualifier {
        Qualifier {
            vars: self.vars.union(&other.vars).cloned().collect(),
            fresh: self.fresh || other.fresh,
            self_ref: self.self_ref || other.self_ref,
        }
    }
}

/// Write effect: the variables whose reachable locations may be modified.
/// The bound parameter of a function type is tracked as an ordinary member of
/// `vars` on that function's latent effect.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Effect {
    pub vars: VarSet,
    pub self_ref: bool,
}

impl Effect {
    pub fn pure() -> Self {
        Self::default()
    }

    pub fn of_vars<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Name>,
    {
        Effect { vars: var_set(names), self_ref: false }
    }

    pub fn is_pure(&self) -> bool {
        self.vars.is_empty() && !self.self_ref
    }

    pub fn union(&self, other: &Effect) -> Effect {
        Effect {
            vars: self.vars.union(&other.vars).cloned().collect(),
            self_ref: self.self_ref || other.self_ref,
        }
    }

    pub fn as_qualifier(&self) -> Qualifier {
        Qualifier { vars: self.vars.clone(), fresh: false, self_ref: self.self_ref }
    }

    pub fn from_qualifier(q: &Qualifier) -> Effect {
        Effect { vars: q.vars.clone(), self_ref: q.self_ref }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Pretype {
    Bool,
    Ref(Box<QualifiedType>),
    Fun(Box<FunType>),
}

/// Dependent function type `(x: T^s) -> U^r / ε`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FunType {
    pub param: Name,
    pub domain: QualifiedType,
    pub latent: Effect,
    pub codomain: QualifiedType,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QualifiedType {
    pub pretype: Pretype,
    pub qual: Qualifier,
}

impl QualifiedType {
    pub fn new(pretype: Pretype, qual: Qualifier) -> Self {
        QualifiedType { pretype, qual }
    }

    pub fn bool(qual: Qualifier) -> Self {
        Self::new(Pretype::Bool, qual)
    }

    pub fn reference(referent: QualifiedType, qual: Qualifier) -> Self {
        Self::new(Pretype::Ref(Box::new(referent)), qual)
    }

    pub fn function(
        param: impl Into<Name>,
        domain: QualifiedType,
        latent: Effect,
        codomain: QualifiedType,
        qual: Qualifier,
    ) -> Self {
        Self::new(
            Pretype::Fun(Box::new(FunType { param: param.into(), domain, latent, codomain })),
            qual,
        )
    }
}

/// Where a qualifier sits; decides which markers it may carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QualPosition {
    /// Result or binding qualifier `p`: may be fresh, never self-referential.
    Term,
    /// Function domain qualifier `s`.
    Domain,
    /// Function codomain qualifier `r`.
    Codomain,
    /// Qualifier of the value held by a reference.
    Referent,
}

impl fmt::Display for QualPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualPosition::Term => "term qualifier",
            QualPosition::Domain => "domain qualifier",
            QualPosition::Codomain => "codomain qualifier",
            QualPosition::Referent => "referent qualifier",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WellFormedError {
    #[error("marker `{marker}` is not allowed in a {position}")]
    MarkerNotAllowed { marker: &'static str, position: QualPosition },
    #[error("codomain pretype mentions parameter `{param}`")]
    CodomainMentionsParam { param: Name },
}

impl QualifiedType {
    /// Checks marker placement and the codomain restriction, treating `self`
    /// as sitting at `position`.
    pub fn validate(&self, position: QualPosition) -> Result<(), WellFormedError> {
        check_markers(&self.qual, position)?;
        self.pretype.validate()
    }
}

impl Pretype {
    pub fn validate(&self) -> Result<(), WellFormedError> {
        match self {
            Pretype::Bool => Ok(()),
            Pretype::Ref(inner) => inner.validate(QualPosition::Referent),
            Pretype::Fun(fun) => {
                fun.domain.validate(QualPosition::Domain)?;
                fun.codomain.validate(QualPosition::Codomain)?;
                if fun.codomain.pretype.mentions(&fun.param) {
                    return Err(WellFormedError::CodomainMentionsParam { param: fun.param.clone() });
                }
                Ok(())
            }
        }
    }

    /// Whether `name` occurs free anywhere inside this pretype's qualifiers
    /// or latent effects.
    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Pretype::Bool => false,
            Pretype::Ref(inner) => inner.mentions(name),
            Pretype::Fun(fun) => {
                if fun.domain.mentions(name) {
                    return true;
                }
                if fun.param == name {
                    return false;
                }
                fun.latent.vars.contains(name) || fun.codomain.mentions(name)
            }
        }
    }

    /// All free variable names occurring in nested qualifiers and effects.
    pub fn free_names(&self) -> VarSet {
        let mut out = VarSet::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names(&self, out: &mut VarSet) {
        match self {
            Pretype::Bool => {}
            Pretype::Ref(inner) => inner.collect_names(out),
            Pretype::Fun(fun) => {
                fun.domain.collect_names(out);
                let mut inner = VarSet::new();
                inner.extend(fun.latent.vars.iter().cloned());
                fun.codomain.collect_names(&mut inner);
                inner.remove(&fun.param);
                out.extend(inner);
            }
        }
    }
}

impl QualifiedType {
    pub fn mentions(&self, name: &str) -> bool {
        self.qual.contains(name) || self.pretype.mentions(name)
    }

    fn collect_names(&self, out: &mut VarSet) {
        out.extend(self.qual.vars.iter().cloned());
        self.pretype.collect_names(out);
    }
}

fn check_markers(q: &Qualifier, position: QualPosition) -> Result<(), WellFormedError> {
    let (fresh_ok, self_ok) = match position {
        QualPosition::Term => (true, false),
        QualPosition::Domain | QualPosition::Codomain => (true, true),
        QualPosition::Referent => (false, false),
    };
    if q.fresh && !fresh_ok {
        return Err(WellFormedError::MarkerNotAllowed { marker: "fresh", position });
    }
    if q.self_ref && !self_ok {
        return Err(WellFormedError::MarkerNotAllowed { marker: "self", position });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Const(bool),
    Var(Name),
    /// `(λx: T^s. body)^q` where `q` lists the captured variables.
    Abs { captures: VarSet, param: Name, param_type: QualifiedType, body: Arc<Term> },
    App(Arc<Term>, Arc<Term>),
    RefAlloc(Arc<Term>),
    Deref(Arc<Term>),
    Assign(Arc<Term>, Arc<Term>),
    Seq(Arc<Term>, Arc<Term>),
}

impl Term {
    pub fn var(name: impl Into<Name>) -> Term {
        Term::Var(name.into())
    }

    pub fn abs(
        captures: VarSet,
        param: impl Into<Name>,
        param_type: QualifiedType,
        body: Term,
    ) -> Term {
        Term::Abs { captures, param: param.into(), param_type, body: Arc::new(body) }
    }

    pub fn app(f: Term, a: Term) -> Term {
        Term::App(Arc::new(f), Arc::new(a))
    }

    pub fn alloc(init: Term) -> Term {
        Term::RefAlloc(Arc::new(init))
    }

    pub fn deref(t: Term) -> Term {
        Term::Deref(Arc::new(t))
    }

    pub fn assign(target: Term, value: Term) -> Term {
        Term::Assign(Arc::new(target), Arc::new(value))
    }

    pub fn seq(a: Term, b: Term) -> Term {
        Term::Seq(Arc::new(a), Arc::new(b))
    }

    pub fn children(&self) -> Vec<&Arc<Term>> {
        match self {
            Term::Const(_) | Term::Var(_) => vec![],
            Term::Abs { body, .. } => vec![body],
            Term::RefAlloc(t) | Term::Deref(t) => vec![t],
            Term::App(a, b) | Term::Assign(a, b) | Term::Seq(a, b) => vec![a, b],
        }
    }

    /// Rebuilds this node with new children, in `children()` order.
    pub fn with_children(&self, mut kids: Vec<Arc<Term>>) -> Term {
        assert_eq!(kids.len(), self.children().len(), "arity mismatch");
        let mut take = || kids.remove(0);
        match self {
            Term::Const(_) | Term::Var(_) => self.clone(),
            Term::Abs { captures, param, param_type, .. } => Term::Abs {
                captures: captures.clone(),
                param: param.clone(),
                param_type: param_type.clone(),
                body: take(),
            },
            Term::App(..) => Term::App(take(), take()),
            Term::RefAlloc(_) => Term::RefAlloc(take()),
            Term::Deref(_) => Term::Deref(take()),
            Term::Assign(..) => Term::Assign(take(), take()),
            Term::Seq(..) => Term::Seq(take(), take()),
        }
    }

    pub fn free_vars(&self) -> VarSet {
        let mut out = VarSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<Name>, out: &mut VarSet) {
        match self {
            Term::Const(_) => {}
            Term::Var(x) => {
                if !bound.iter().any(|b| b == x) {
                    out.insert(x.clone());
                }
            }
            Term::Abs { param, body, .. } => {
                bound.push(param.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
            _ => {
                for c in self.children() {
                    c.collect_free(bound, out);
                }
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    pub fn subterm(&self, path: &[usize]) -> Option<&Term> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => self.children().get(i).and_then(|c| c.subterm(rest)),
        }
    }

    /// Replaces the subterm at `path`, returning `None` if the path is invalid.
    pub fn replace_at(&self, path: &[usize], replacement: Term) -> Option<Term> {
        match path.split_first() {
            None => Some(replacement),
            Some((&i, rest)) => {
                let kids = self.children();
                let child = kids.get(i)?;
                let new_child = child.replace_at(rest, replacement)?;
                let mut new_kids: Vec<Arc<Term>> = kids.into_iter().cloned().collect();
                new_kids[i] = Arc::new(new_child);
                Some(self.with_children(new_kids))
            }
        }
    }

    /// Pre-order list of every subterm path.
    pub fn paths(&self) -> Vec<Path> {
        let mut out = Vec::new();
        self.collect_paths(&mut Vec::new(), &mut out);
        out
    }

    fn collect_paths(&self, here: &mut Path, out: &mut Vec<Path>) {
        out.push(here.clone());
        for (i, c) in self.children().into_iter().enumerate() {
            here.push(i);
            c.collect_paths(here, out);
            here.pop();
        }
    }
}

pub fn format_path(path: &[usize]) -> String {
    if path.is_empty() {
        return "root".to_string();
    }
    path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".")
}

/// Parses a path in the form printed by [`format_path`] (`root` or `0.1.0`).
pub fn parse_path(s: &str) -> Option<Path> {
    let s = s.trim();
    if s.is_empty() || s == "root" {
        return Some(Vec::new());
    }
    s.split('.').map(|p| p.parse().ok()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("`{0}` is already bound")]
    Duplicate(Name),
    #[error("qualifier of `{name}` mentions `{var}`, which is not bound before it")]
    NotScoped { name: Name, var: Name },
    #[error("observation mentions unbound `{0}`")]
    UnboundObservation(Name),
    #[error("binding `{name}`: {source}")]
    IllFormed { name: Name, source: WellFormedError },
}

/// Typing context `Γ` together with its observation `φ`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeEnv {
    bindings: Vec<(Name, QualifiedType)>,
    observation: VarSet,
}

impl TypeEnv {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `name: ty` and observes it. Enforces distinct names and that
    /// the binding only mentions strictly earlier bindings.
    pub fn bind(&mut self, name: impl Into<Name>, ty: QualifiedType) -> Result<(), EnvError> {
        let name = name.into();
        if self.lookup(&name).is_some() {
            return Err(EnvError::Duplicate(name));
        }
        ty.validate(QualPosition::Term)
            .map_err(|source| EnvError::IllFormed { name: name.clone(), source })?;
        let mentioned = ty.qual.vars.iter().chain(ty.pretype.free_names().iter()).cloned().collect::<Vec<_>>();
        for var in mentioned {
            if self.lookup(&var).is_none() {
                return Err(EnvError::NotScoped { name, var });
            }
        }
        self.observation.insert(name.clone());
        self.bindings.push((name, ty));
        Ok(())
    }

    pub fn with(mut self, name: impl Into<Name>, ty: QualifiedType) -> Result<Self, EnvError> {
        self.bind(name, ty)?;
        Ok(self)
    }

    /// Extends without validation; the checker uses this after it has already
    /// established well-formedness.
    pub(crate) fn push_unchecked(&mut self, name: Name, ty: QualifiedType) {
        self.bindings.push((name, ty));
    }

    pub(crate) fn pop(&mut self) {
        self.bindings.pop();
    }

    pub fn set_observation(&mut self, observation: VarSet) -> Result<(), EnvError> {
        if let Some(x) = observation.iter().find(|x| self.lookup(x).is_none()) {
            return Err(EnvError::UnboundObservation(x.clone()));
        }
        self.observation = observation;
        Ok(())
    }

    pub fn observing(mut self, observation: VarSet) -> Result<Self, EnvError> {
        self.set_observation(observation)?;
        Ok(self)
    }

    pub(crate) fn set_observation_unchecked(&mut self, observation: VarSet) {
        self.observation = observation;
    }

    pub fn observation(&self) -> &VarSet {
        &self.observation
    }

    pub fn lookup(&self, name: &str) -> Option<&QualifiedType> {
        self.bindings.iter().rev().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.bindings.iter().position(|(n, _)| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.lookup(name).is_some()
    }

    pub fn bindings(&self) -> &[(Name, QualifiedType)] {
        &self.bindings
    }

    pub fn names(&self) -> VarSet {
        self.bindings.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

/// Closure record `⟨H, λx.t⟩^q`.
#[derive(Debug)]
pub struct Closure {
    pub env: ValueEnv,
    pub param: Name,
    pub body: Arc<Term>,
    pub captures: VarSet,
}

#[derive(Clone, Debug)]
pub enum Value {
    Bool(bool),
    Loc(usize),
    Closure(Arc<Closure>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Loc(a), Value::Loc(b)) => a == b,
            (Value::Closure(a), Value::Closure(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

/// Persistent value environment; extension shares the tail.
#[derive(Clone, Debug, Default)]
pub struct ValueEnv(Option<Arc<EnvNode>>);

#[derive(Debug)]
struct EnvNode {
    name: Name,
    value: Value,
    next: Option<Arc<EnvNode>>,
}

impl ValueEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&self, name: impl Into<Name>, value: Value) -> ValueEnv {
        ValueEnv(Some(Arc::new(EnvNode { name: name.into(), value, next: self.0.clone() })))
    }

    pub fn lookup(&self, name: &str) -> Option<&Value> {
        let mut cur = self.0.as_deref();
        while let Some(node) = cur {
            if node.name == name {
                return Some(&node.value);
            }
            cur = node.next.as_deref();
        }
        None
    }

    /// Innermost binding first.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        let mut cur = self.0.as_deref();
        std::iter::from_fn(move || {
            let node = cur?;
            cur = node.next.as_deref();
            Some((node.name.as_str(), &node.value))
        })
    }
}

/// Store indexed by allocation order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Store(Vec<Value>);

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values(values: Vec<Value>) -> Self {
        Store(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, loc: usize) -> Option<&Value> {
        self.0.get(loc)
    }

    pub fn alloc(&mut self, v: Value) -> usize {
        self.0.push(v);
        self.0.len() - 1
    }

    /// Returns false when `loc` is dangling.
    pub fn set(&mut self, loc: usize, v: Value) -> bool {
        match self.0.get_mut(loc) {
            Some(slot) => {
                *slot = v;
                true
            }
            None => false,
        }
    }

    pub fn values(&self) -> &[Value] {
        &self.0
    }
}

// ---------------------------------------------------------------------------
// Printing

struct Braced<'a, I>(&'a I);

fn write_set<'a>(
    f: &mut fmt::Formatter<'_>,
    vars: impl Iterator<Item = &'a Name>,
    extra: &[(&str, bool)],
) -> fmt::Result {
    let mut items: Vec<&str> = vars.map(String::as_str).collect();
    items.extend(extra.iter().filter(|(_, on)| *on).map(|(s, _)| *s));
    write!(f, "{{{}}}", items.join(" "))
}

impl<'a> fmt::Display for Braced<'a, VarSet> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_set(f, self.0.iter(), &[])
    }
}

pub fn show_set(set: &VarSet) -> String {
    Braced(set).to_string()
}

impl fmt::Display for Qualifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_set(f, self.vars.iter(), &[("fresh", self.fresh), ("self", self.self_ref)])
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_set(f, self.vars.iter(), &[("self", self.self_ref)])
    }
}

impl fmt::Display for Pretype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pretype::Bool => f.write_str("Bool"),
            Pretype::Ref(inner) => write!(f, "(Ref {inner})"),
            Pretype::Fun(fun) => write!(
                f,
                "(({}: {}) -> {} / {})",
                fun.param, fun.domain, fun.codomain, fun.latent
            ),
        }
    }
}

impl fmt::Display for QualifiedType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}^{}", self.pretype, self.qual)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(b) => write!(f, "{b}"),
            Term::Var(x) => f.write_str(x),
            Term::Abs { captures, param, param_type, body } => {
                write!(f, "(lam {} ({param}: {param_type}) {body})", Braced(captures))
            }
            Term::App(a, b) => write!(f, "(app {a} {b})"),
            Term::RefAlloc(t) => write!(f, "(ref {t})"),
            Term::Deref(t) => write!(f, "(! {t})"),
            Term::Assign(a, b) => write!(f, "(:= {a} {b})"),
            Term::Seq(a, b) => write!(f, "(seq {a} {b})"),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Loc(l) => write!(f, "loc:{l}"),
            Value::Closure(c) => write!(f, "<closure q={}>", Braced(&c.captures)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bool_t() -> QualifiedType {
        QualifiedType::bool(Qualifier::empty())
    }

    #[test]
    fn free_vars_examples() {
        assert_eq!(Term::var("x").free_vars(), var_set(["x"]));
        let id = Term::abs(VarSet::new(), "x", bool_t(), Term::var("x"));
        assert!(id.free_vars().is_empty());
        let t = Term::assign(Term::var("y"), Term::deref(Term::var("z")));
        assert_eq!(t.free_vars(), var_set(["y", "z"]));
    }

    #[test]
    fn strip_markers_examples() {
        assert_eq!(Qualifier::var("x").with_fresh().strip_markers(), var_set(["x"]));
        assert!(Qualifier::fresh().with_self().strip_markers().is_empty());
        assert_eq!(Qualifier::of_vars(["a", "b"]).strip_markers(), var_set(["a", "b"]));
    }

    #[test]
    fn self_marker_rejected_in_term_position() {
        let ty = QualifiedType::bool(Qualifier::empty().with_self());
        assert_eq!(
            ty.validate(QualPosition::Term),
            Err(WellFormedError::MarkerNotAllowed { marker: "self", position: QualPosition::Term })
        );
        let referent = QualifiedType::reference(QualifiedType::bool(Qualifier::fresh()), Qualifier::empty());
        assert!(matches!(
            referent.validate(QualPosition::Term),
            Err(WellFormedError::MarkerNotAllowed { marker: "fresh", position: QualPosition::Referent })
        ));
    }

    #[test]
    fn codomain_may_not_mention_param() {
        let cod = QualifiedType::reference(QualifiedType::bool(Qualifier::var("x")), Qualifier::empty());
        let f = QualifiedType::function("x", bool_t(), Effect::pure(), cod, Qualifier::empty());
        assert_eq!(
            f.validate(QualPosition::Term),
            Err(WellFormedError::CodomainMentionsParam { param: "x".into() })
        );
        // the codomain qualifier itself may mention the parameter
        let ok = QualifiedType::function("x", bool_t(), Effect::of_vars(["x"]), QualifiedType::bool(Qualifier::var("x")), Qualifier::empty());
        assert!(ok.validate(QualPosition::Term).is_ok());
    }

    #[test]
    fn env_rejects_forward_references() {
        let mut env = TypeEnv::new();
        let err = env.bind("y", QualifiedType::bool(Qualifier::var("x"))).unwrap_err();
        assert_eq!(err, EnvError::NotScoped { name: "y".into(), var: "x".into() });
        env.bind("x", bool_t()).unwrap();
        env.bind("y", QualifiedType::bool(Qualifier::var("x"))).unwrap();
        assert_eq!(env.bind("x", bool_t()), Err(EnvError::Duplicate("x".into())));
    }

    #[test]
    fn replace_and_lookup_paths() {
        let t = Term::seq(Term::Const(true), Term::app(Term::var("f"), Term::var("a")));
        assert_eq!(t.subterm(&[1, 1]), Some(&Term::var("a")));
        let t2 = t.replace_at(&[1, 1], Term::Const(false)).unwrap();
        assert_eq!(t2.to_string(), "(seq true (app f false))");
        assert_eq!(t.paths().len(), 5);
        assert_eq!(parse_path("1.0"), Some(vec![1, 0]));
        assert_eq!(format_path(&[]), "root");
    }

    #[test]
    fn value_env_is_persistent() {
        let base = ValueEnv::new().extend("x", Value::Bool(true));
        let ext = base.extend("x", Value::Bool(false));
        assert_eq!(base.lookup("x"), Some(&Value::Bool(true)));
        assert_eq!(ext.lookup("x"), Some(&Value::Bool(false)));
        assert_eq!(Value::Loc(3).to_string(), "loc:3");
    }
}
