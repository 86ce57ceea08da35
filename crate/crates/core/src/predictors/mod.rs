//! Learners that steer the search: a program predictor that proposes a seed
//! program and scores every new graph node, a necessity predictor that picks
//! the candidate module subset, and a question embedder for retrieving the
//! closest already-solved question.

mod embed;
mod necessity;
mod ngram;

pub use embed::{l2_distance, QuestionEmbedder, SolvedEntry, SolvedStore, SparseVec};
pub use necessity::{presence_vector, select_candidates, NecessityPredictor, NecessityState};
pub use ngram::{NGramPredictor, NGramRow, NGramState, CONTEXT_WINDOW, MAX_DECODE_TOKENS, PREDICTOR_LEARNING_RATE};

use crate::dsl::ModuleRegistry;
use crate::program::ProgramTree;

/// Source of seed programs and of prior scores for unvisited graph nodes.
pub trait ProgramPredictor {
    /// Most likely program for the question, using only the registry's active
    /// modules. Always structurally legal.
    fn predict(&self, question: &[String], registry: &ModuleRegistry) -> ProgramTree;

    /// Probability of the program given the question, in (0, 1].
    fn probability(&self, question: &[String], program: &ProgramTree) -> f64;

    fn train(&mut self, question: &[String], program: &ProgramTree);

    /// Scorer bound to one question. Implementations may cache per-question
    /// work here; the default simply forwards to [`probability`](Self::probability).
    fn conditioned<'a>(&'a self, question: &'a [String]) -> Box<dyn ProgramScorer + 'a> {
        Box::new(Forward { predictor: self, question })
    }
}

pub trait ProgramScorer {
    fn probability(&mut self, program: &ProgramTree) -> f64;
}

struct Forward<'a, P: ?Sized> {
    predictor: &'a P,
    question: &'a [String],
}

impl<P: ProgramPredictor + ?Sized> ProgramScorer for Forward<'_, P> {
    fn probability(&mut self, program: &ProgramTree) -> f64 {
        self.predictor.probability(self.question, program)
    }
}

/// Splits a question into its distinct words, sorted.
pub(crate) fn distinct_words(question: &[String]) -> Vec<&str> {
    let mut words: Vec<&str> = question.iter().map(String::as_str).collect();
    words.sort_unstable();
    words.dedup();
    words
}
