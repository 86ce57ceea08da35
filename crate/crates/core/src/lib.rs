//! Graph-based heuristic search for typed module programs.
//!
//! Programs are trees of typed modules. The search keeps a graph whose nodes
//! are distinct programs and whose edges join programs one edit apart, and
//! repeatedly expands the node with the highest expectation score. A
//! curriculum training loop couples the search with a program predictor and
//! an optional candidate-module selector; a REINFORCE sampler serves as the
//! comparison baseline.

pub mod dsl;
pub mod graph;
pub mod microworld;
pub mod predictors;
pub mod program;
pub mod report;
pub mod reinforce;
pub mod search;
pub mod training;

pub use dsl::{legality_check, load_registry, LegalityReport, ModuleId, ModuleRegistry};
pub use program::{canonical_key, from_sequence, mutate, to_sequence, NodeAddress, ProgramTree, Token};
