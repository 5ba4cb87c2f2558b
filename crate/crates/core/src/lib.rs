//! Reachability-typed lambda calculi with references.
//!
//! The crate provides the surface syntax, an algorithmic type-and-effect
//! checker in two modes, a fuel-bounded big-step evaluator, a monitor that
//! checks store invariants on concrete runs, a rewriter for reordering and
//! β-inlining, and a random program generator with a differential tester.

pub mod eval;
pub mod harness;
pub mod monitor;
pub mod parse;
pub mod qualifier;
pub mod rewrite;
pub mod syntax;
pub mod typing;

pub use parse::{parse_qtype, parse_term, ParseError};
pub use syntax::{
    Effect, Name, Path, Pretype, QualifiedType, Qualifier, Store, Term, TypeEnv, Value, ValueEnv, VarSet,
};
pub use typing::{typecheck, CheckMode, Elaborated, TypeError, Typing};
