//! A laboratory for measuring and minimizing prequential code length with
//! in-context learners.
//!
//! The crate provides:
//!
//! - synthetic supervised task families and a structured HMM sequence family
//!   ([`tasks`], [`hmm`]);
//! - differentiable in-context learner architectures over a small
//!   reverse-mode autodiff tape ([`graph`], [`learners`]);
//! - prequential, train-risk, and suffix meta-objectives with a seeded
//!   meta-training loop ([`objectives`]);
//! - a gradient-descent baseline that retrains per context prefix ([`sgd`]);
//! - prequential coding curves, code-length reports in bits, and baseline
//!   predictors ([`eval`]);
//! - a bit-exact arithmetic codec driven by streaming predictive
//!   distributions ([`codec`]);
//! - a hosted-model probe with an offline mock backend ([`probe`]);
//! - experiment configs, a persistent results store, and figure emission
//!   ([`exp`], [`store`], [`plot`]).
//!
//! The guide under `book/` walks through the concepts with runnable
//! examples; its snippets compile as doc-tests of this crate.


pub mod codec;
pub mod error;
pub mod eval;
pub mod exp;


pub mod graph;
pub mod hmm;

pub mod learners;
pub mod io;
pub mod objectives;
pub mod plot;
pub mod probe;


pub mod rng;
pub mod sgd;
pub mod store;


pub mod tasks;

pub use error::{Error, Result};

// Book chapters double as doc-tests so the guide can never drift from the
// library. Only compiled by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/prequential.md")]
    mod prequential {}
    #[doc = include_str!("../../../book/src/tasks.md")]
    mod tasks {}
    #[doc = include_str!("../../../book/src/hmm.md")]
    mod hmm {}
    #[doc = include_str!("../../../book/src/learners.md")]
    mod learners {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/probe.md")]
    mod probe {}
}
