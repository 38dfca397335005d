//! Concept learning over synthetic scenes: a reverse-mode autodiff tape,
//! a typed reasoning DSL, embedding-based concept grounding, a soft program
//! executor, a scene/question generator with a symbolic oracle, training
//! harnesses, and a tabletop action domain that reuses learned concepts.

pub mod actions;
pub mod autodiff;
pub mod concepts;
pub mod dsl;
pub mod executor;
pub mod learning;
pub mod par;
pub mod worldgen;
