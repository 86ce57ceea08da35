use std::collections::HashMap;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::{distinct_words, ProgramPredictor, ProgramScorer};
use crate::dsl::{ModuleId, ModuleRegistry};
use crate::program::{ProgramTree, Token};

pub const CONTEXT_WINDOW: usize = 2;
/// Step size of the cross-entropy gradient step taken per trained token.
pub const PREDICTOR_LEARNING_RATE: f64 = 0.5;
/// Greedy decoding stops emitting free choices after this many tokens and
/// closes the remaining slots with `END`.
pub const MAX_DECODE_TOKENS: usize = 20;

type Ctx = (u16, u16);

/// Word id reserved for the always-present bias feature.
const BIAS_WORD: u32 = 0;

/// Log-linear next-token model over pre-order sequences.
///
/// The logit of each token is a sum over the question's distinct words (plus
/// an always-present bias word) of two weights: one tied to the previous two
/// tokens and one shared by every context. Training takes one gradient step
/// on the log-likelihood of each token of the program. An untrained model is
/// uniform.
#[derive(Debug, Clone)]
pub struct NGramPredictor {
    registry: ModuleRegistry,
    learning_rate: f64,
    words: HashMap<String, u32>,
    contextual: FxHashMap<(u32, Ctx), Vec<f64>>,
    shared: FxHashMap<u32, Vec<f64>>,
}

impl NGramPredictor {
    pub fn new(registry: &ModuleRegistry) -> Self {
        NGramPredictor {
            registry: registry.clone(),
            learning_rate: PREDICTOR_LEARNING_RATE,
            words: HashMap::new(),
            contextual: FxHashMap::default(),
            shared: FxHashMap::default(),
        }
    }

    /// Vocabulary size: every module of the registry universe plus `END`.
    pub fn vocab_size(&self) -> usize {
        self.registry.universe_len() + 1
    }

    fn end_index(&self) -> u16 {
        self.registry.universe_len() as u16
    }

    fn start_index(&self) -> u16 {
        self.registry.universe_len() as u16 + 1
    }

    fn index_of(&self, token: Token) -> u16 {
        match token {
            Token::Module(id) => id.0,
            Token::End => self.end_index(),
        }
    }

    fn word_ids(&self, question: &[String]) -> Vec<u32> {
        let mut ids = vec![BIAS_WORD];
        ids.extend(distinct_words(question).into_iter().filter_map(|w| self.words.get(w).copied()));
        ids
    }

    fn intern(&mut self, question: &[String]) -> Vec<u32> {
        let mut ids = vec![BIAS_WORD];
        for w in distinct_words(question) {
            let next = self.words.len() as u32 + 1;
            ids.push(*self.words.entry(w.to_string()).or_insert(next));
        }
        ids
    }

    fn context(&self, history: &[u16]) -> Ctx {
        let n = history.len();
        let start = self.start_index();
        let a = if n >= 2 { history[n - 2] } else { start };
        let b = if n >= 1 { history[n - 1] } else { start };
        (a, b)
    }

    /// Next-token distribution over the vocabulary (index = module id, last =
    /// `END`).
    pub fn distribution(&self, question: &[String], history: &[Token]) -> Vec<f64> {
        let hist: Vec<u16> = history.iter().map(|&t| self.index_of(t)).collect();
        self.distribution_ids(&self.word_ids(question), self.context(&hist))
    }

    fn distribution_ids(&self, words: &[u32], ctx: Ctx) -> Vec<f64> {
        let mut logits = vec![0.0; self.vocab_size()];
        for &w in words {
            for row in [self.contextual.get(&(w, ctx)), self.shared.get(&w)].into_iter().flatten() {
                logits.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut dist: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = dist.iter().sum();
        dist.iter_mut().for_each(|d| *d /= z);
        dist
    }

    fn sequence_probability(&self, words: &[u32], program: &ProgramTree, cache: Option<&mut HashMap<Ctx, Vec<f64>>>) -> f64 {
        let mut hist: Vec<u16> = Vec::with_capacity(program.len());
        let mut p = 1.0;
        let mut cache = cache;
        for &t in program.tokens() {
            let ctx = self.context(&hist);
            let idx = self.index_of(t) as usize;
            let q = match cache.as_deref_mut() {
                Some(c) => c.entry(ctx).or_insert_with(|| self.distribution_ids(words, ctx))[idx],
                None => self.distribution_ids(words, ctx)[idx],
            };
            p *= q;
            hist.push(idx as u16);
        }
        p
    }

    pub fn export_state(&self) -> NGramState {
        let mut words: Vec<(&String, &u32)> = self.words.iter().collect();
        words.sort_by_key(|(_, id)| **id);
        let mut rows: Vec<NGramRow> = self
            .shared
            .iter()
            .map(|(&w, r)| NGramRow { word: w, context: None, weights: r.clone() })
            .chain(self.contextual.iter().map(|(&(w, (a, b)), r)| NGramRow { word: w, context: Some([a, b]), weights: r.clone() }))
            .collect();
        rows.sort_by_key(|r| (r.word, r.context));
        NGramState {
            vocabulary: (0..self.registry.universe_len())
                .map(|i| self.registry.name(ModuleId(i as u16)).to_string())
                .collect(),
            learning_rate: self.learning_rate,
            words: words.into_iter().map(|(w, _)| w.clone()).collect(),
            rows,
        }
    }

    pub fn import_state(registry: &ModuleRegistry, state: &NGramState) -> Result<Self, String> {
        let names: Vec<&str> = (0..registry.universe_len()).map(|i| registry.name(ModuleId(i as u16))).collect();
        if names != state.vocabulary.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err("predictor vocabulary does not match the registry".into());
        }
        if !(state.learning_rate > 0.0 && state.learning_rate.is_finite()) {
            return Err("learning rate must be a positive number".into());
        }
        let mut p = NGramPredictor::new(registry);
        p.learning_rate = state.learning_rate;
        p.words = state.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32 + 1)).collect();
        if p.words.len() != state.words.len() {
            return Err("duplicate word in predictor state".into());
        }
        let v = p.vocab_size();
        for r in &state.rows {
            if r.word as usize > state.words.len() {
                return Err("predictor row refers to an unknown word".into());
            }
            if r.weights.len() != v || r.weights.iter().any(|x| !x.is_finite()) {
                return Err("malformed predictor row".into());
            }
            if r.context.is_some_and(|c| c.iter().any(|&x| x as usize > v)) {
                return Err("predictor row has an out-of-range context".into());
            }
            match r.context {
                None => p.shared.insert(r.word, r.weights.clone()),
                Some([a, b]) => p.contextual.insert((r.word, (a, b)), r.weights.clone()),
            };
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramState {
    pub vocabulary: Vec<String>,
    pub learning_rate: f64,
    /// Question words in id order; id 0 is the bias feature.
    pub words: Vec<String>,
    pub rows: Vec<NGramRow>,
}

/// Logit weights of one word, for one context or (`None`) for all contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramRow {
    pub word: u32,
    pub context: Option<[u16; 2]>,
    pub weights: Vec<f64>,
}

impl ProgramPredictor for NGramPredictor {
    fn predict(&self, question: &[String], registry: &ModuleRegistry) -> ProgramTree {
        let words = self.word_ids(question);
        let mut hist: Vec<u16> = Vec::new();
        let mut tokens: Vec<Token> = Vec::new();
        let mut open = 1usize;
        // candidates sorted by name so that ties resolve lexicographically
        let mut candidates: Vec<(Token, &str)> = registry.modules().map(|(id, s)| (Token::Module(id), s.name.as_str())).collect();
        candidates.push((Token::End, crate::program::END_TOKEN));
        candidates.sort_by(|a, b| a.1.cmp(b.1));
        while open > 0 {
            if tokens.len() >= MAX_DECODE_TOKENS {
                tokens.extend(std::iter::repeat_n(Token::End, open));
                break;
            }
            let dist = self.distribution_ids(&words, self.context(&hist));
            let root = tokens.is_empty();
            let mut best: Option<(Token, f64)> = None;
            for &(t, _) in &candidates {
                if root && t == Token::End {
                    continue;
                }
                let p = dist[self.index_of(t) as usize];
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((t, p));
                }
            }
            let (t, _) = best.expect("registry has at least one module");
            open -= 1;
            if let Token::Module(id) = t {
                open += registry.arity(id);
            }
            tokens.push(t);
            hist.push(self.index_of(t));
        }
        ProgramTree::from_tokens(tokens, registry).expect("decoder closes every slot")
    }

    fn probability(&self, question: &[String], program: &ProgramTree) -> f64 {
        self.sequence_probability(&self.word_ids(question), program, None)
    }

    fn train(&mut self, question: &[String], program: &ProgramTree) {
        let words = self.intern(question);
        let v = self.vocab_size();
        let lr = self.learning_rate;
        let mut hist: Vec<u16> = Vec::new();
        for &t in program.tokens() {
            let ctx = self.context(&hist);
            let idx = self.index_of(t) as usize;
            let dist = self.distribution_ids(&words, ctx);
            for &w in &words {
                step(self.contextual.entry((w, ctx)).or_insert_with(|| vec![0.0; v]), &dist, idx, lr);
                step(self.shared.entry(w).or_insert_with(|| vec![0.0; v]), &dist, idx, lr);
            }
            hist.push(idx as u16);
        }
    }

    fn conditioned<'a>(&'a self, question: &'a [String]) -> Box<dyn ProgramScorer + 'a> {
        Box::new(CachedScorer { predictor: self, words: self.word_ids(question), cache: HashMap::new() })
    }
}

struct CachedScorer<'a> {
    predictor: &'a NGramPredictor,
    words: Vec<u32>,
    cache: HashMap<Ctx, Vec<f64>>,
}

impl ProgramScorer for CachedScorer<'_> {
    fn probability(&mut self, program: &ProgramTree) -> f64 {
        self.predictor.sequence_probability(&self.words, program, Some(&mut self.cache))
    }
}

/// Cross-entropy gradient step on one weight row.
fn step(row: &mut [f64], dist: &[f64], taken: usize, lr: f64) {
    for (j, (x, p)) in row.iter_mut().zip(dist).enumerate() {
        let target = if j == taken { 1.0 } else { 0.0 };
        *x += lr * (target - p);
    }
}
