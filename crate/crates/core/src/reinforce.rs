//! REINFORCE baseline: a tabular contextual policy samples programs token by
//! token and is updated with the exact-match reward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::dsl::ModuleRegistry;
use crate::microworld::{exact_match_oracle, QuestionTriplet};
use crate::program::{ProgramTree, Token};
use crate::training::CurvePoint;

pub const MAX_SAMPLE_TOKENS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub learning_rate: f64,
    /// Weight of the old baseline in the moving average; 1.0 freezes it.
    pub baseline_decay: f64,
    pub max_len: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { learning_rate: 0.05, baseline_decay: 0.99, max_len: MAX_SAMPLE_TOKENS }
    }
}

type Context = (u16, u16);

/// Logits for the next token are the sum, over the question's distinct words
/// and a shared bias row, of a per-(word, previous two tokens) weight vector.
#[derive(Debug, Clone)]
pub struct SequencePolicy {
    registry: ModuleRegistry,
    config: PolicyConfig,
    words: FxHashMap<String, u32>,
    table: FxHashMap<(u32, Context), Vec<f64>>,
    pub baseline: f64,
}

const BIAS_WORD: u32 = 0;

impl SequencePolicy {
    pub fn new(registry: &ModuleRegistry, config: PolicyConfig) -> Self {
        SequencePolicy { registry: registry.clone(), config, words: FxHashMap::default(), table: FxHashMap::default(), baseline: 0.0 }
    }

    fn vocab(&self) -> usize {
        self.registry.universe_len() + 1
    }

    fn end_index(&self) -> u16 {
        self.registry.universe_len() as u16
    }

    fn start_index(&self) -> u16 {
        self.registry.universe_len() as u16 + 1
    }

    fn token_index(&self, t: Token) -> u16 {
        match t {
            Token::End => self.end_index(),
            Token::Module(id) => id.0,
        }
    }

    fn word_ids(&self, question: &[String]) -> Vec<u32> {
        let mut ids = vec![BIAS_WORD];
        ids.extend(crate::predictors::distinct_words(question).into_iter().filter_map(|w| self.words.get(w).copied()));
        ids
    }

    fn intern(&mut self, question: &[String]) -> Vec<u32> {
        let mut ids = vec![BIAS_WORD];
        for w in crate::predictors::distinct_words(question) {
            let next = self.words.len() as u32 + 1;
            ids.push(*self.words.entry(w.to_string()).or_insert(next));
        }
        ids
    }

    /// Next-token distribution over the universe modules and `END` (last
    /// entry). Inactive modules get probability 0; so does `END` at the root.
    pub fn distribution(&self, words: &[u32], ctx: Context, at_root: bool) -> Vec<f64> {
        let n = self.vocab();
        let mut logits = vec![0.0; n];
        for &w in words {
            if let Some(row) = self.table.get(&(w, ctx)) {
                logits.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        let allowed = |i: usize| -> bool {
            if i == n - 1 {
                !at_root
            } else {
                self.registry.is_active(crate::dsl::ModuleId(i as u16))
            }
        };
        let max = (0..n).filter(|&i| allowed(i)).map(|i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = (0..n).map(|i| if allowed(i) { (logits[i] - max).exp() } else { 0.0 }).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        probs
    }

    fn token_from_index(&self, i: usize) -> Token {
        if i == self.vocab() - 1 {
            Token::End
        } else {
            Token::Module(crate::dsl::ModuleId(i as u16))
        }
    }

    /// Samples a program token by token, stopping when every slot is filled.
    /// After `max_len` tokens the remaining slots are filled with `END`.
    pub fn sample_program<R: Rng + ?Sized>(&self, question: &[String], rng: &mut R) -> ProgramTree {
        let words = self.word_ids(question);
        let mut tokens = Vec::new();
        let mut open = 1usize;
        let mut ctx = (self.start_index(), self.start_index());
        while open > 0 {
            if tokens.len() >= self.config.max_len {
                tokens.extend(std::iter::repeat_n(Token::End, open));
                break;
            }
            let probs = self.distribution(&words, ctx, tokens.is_empty());
            let mut u = rng.gen::<f64>();
            let mut pick = probs.iter().rposition(|&p| p > 0.0).expect("some token is allowed");
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 && u < p {
                    pick = i;
                    break;
                }
                u -= p;
            }
            let t = self.token_from_index(pick);
            open = open - 1 + match t {
                Token::End => 0,
                Token::Module(id) => self.registry.arity(id),
            };
            tokens.push(t);
            ctx = (ctx.1, pick as u16);
        }
        ProgramTree::from_tokens_unchecked(tokens)
    }

    /// Log-probability of sampling exactly `program`, ignoring the length cap.
    pub fn log_probability(&self, question: &[String], program: &ProgramTree) -> f64 {
        let words = self.word_ids(question);
        let mut ctx = (self.start_index(), self.start_index());
        let mut lp = 0.0;
        for (pos, &t) in program.tokens().iter().enumerate() {
            let i = self.token_index(t);
            lp += self.distribution(&words, ctx, pos == 0)[i as usize].ln();
            ctx = (ctx.1, i);
        }
        lp
    }

    /// Policy-gradient step with advantage `reward - baseline`, applied to
    /// the rows of every word present in the question; then moves the
    /// baseline toward the reward.
    pub fn update(&mut self, question: &[String], program: &ProgramTree, reward: f64) {
        let advantage = reward - self.baseline;
        if advantage != 0.0 {
            let words = self.intern(question);
            let mut ctx = (self.start_index(), self.start_index());
            let mut steps = Vec::with_capacity(program.len());
            for (pos, &t) in program.tokens().iter().enumerate() {
                let i = self.token_index(t) as usize;
                let probs = self.distribution(&words, ctx, pos == 0);
                steps.push((ctx, i, probs));
                ctx = (ctx.1, i as u16);
            }
            let lr = self.config.learning_rate;
            let n = self.vocab();
            for (ctx, taken, probs) in steps {
                for &w in &words {
                    let row = self.table.entry((w, ctx)).or_insert_with(|| vec![0.0; n]);
                    for (j, x) in row.iter_mut().enumerate() {
                        let indicator = if j == taken { 1.0 } else { 0.0 };
                        *x += lr * advantage * (indicator - probs[j]);
                    }
                }
            }
        }
        let d = self.config.baseline_decay;
        self.baseline = d * self.baseline + (1.0 - d) * reward;
    }
}

/// Cycles over the unsolved questions in id order; each step samples one
/// program, scores it by exact match, and updates the policy. Records the
/// cumulative evaluations at every newly solved question, plus a final point.
pub fn run_baseline(
    dataset: &[QuestionTriplet],
    registry: &ModuleRegistry,
    budget: u64,
    seed: u64,
    config: &PolicyConfig,
) -> Vec<CurvePoint> {
    let mut curve = Vec::new();
    if budget == 0 {
        return curve;
    }
    let mut policy = SequencePolicy::new(registry, config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unsolved: Vec<usize> = (0..dataset.len()).filter(|&i| dataset[i].gt_program.is_some()).collect();
    let mut solved = 0usize;
    let mut evaluations = 0u64;
    let mut cursor = 0usize;
    while evaluations < budget && !unsolved.is_empty() {
        if cursor >= unsolved.len() {
            cursor = 0;
        }
        let q = &dataset[unsolved[cursor]];
        let gt = q.gt_program.as_ref().expect("filtered above");
        let program = policy.sample_program(&q.question, &mut rng);
        let reward = exact_match_oracle(&program, gt);
        evaluations += 1;
        policy.update(&q.question, &program, reward);
        if reward >= 1.0 {
            unsolved.remove(cursor);
            solved += 1;
            curve.push(CurvePoint { evaluations, correct_found: solved });
        } else {
            cursor += 1;
        }
    }
    if curve.last().is_none_or(|p| p.evaluations != evaluations) {
        curve.push(CurvePoint { evaluations, correct_found: solved });
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn distributions_are_normalized() {
        let r = ModuleRegistry::builtin("microworld10").unwrap();
        let mut p = SequencePolicy::new(&r, PolicyConfig::default());
        let prog = ProgramTree::parse("count filter_red scene", &r).unwrap();
        p.update(&q("how many red"), &prog, 1.0);
        for root in [true, false] {
            let d = p.distribution(&p.word_ids(&q("how many red")), (11, 11), root);
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_advantage_changes_nothing() {
        let r = ModuleRegistry::builtin("microworld10").unwrap();
        let mut p = SequencePolicy::new(&r, PolicyConfig::default());
        let prog = ProgramTree::parse("count scene", &r).unwrap();
        p.update(&q("a b"), &prog, 0.0);
        assert!(p.table.is_empty());
    }

    #[test]
    fn reward_raises_target_probability() {
        let r = ModuleRegistry::builtin("microworld10").unwrap();
        let cfg = PolicyConfig { baseline_decay: 1.0, ..PolicyConfig::default() };
        let mut p = SequencePolicy::new(&r, cfg);
        let target = ProgramTree::parse("exist filter_blue scene", &r).unwrap();
        let question = q("is there a blue thing");
        let mut last = p.log_probability(&question, &target);
        for _ in 0..100 {
            p.update(&question, &target, 1.0);
            let now = p.log_probability(&question, &target);
            assert!(now >= last);
            last = now;
        }
        assert_eq!(p.baseline, 0.0);
    }

    #[test]
    fn single_token_support() {
        let doc = r#"{"types":["ObjectSet"],"answer_types":["ObjectSet"],
            "modules":[{"name":"scene","inputs":[],"output":"ObjectSet"}]}"#;
        let r = ModuleRegistry::from_json(doc).unwrap();
        let p = SequencePolicy::new(&r, PolicyConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(p.sample_program(&q("x"), &mut rng).to_text(&r), "scene");
        }
    }

    #[test]
    fn samples_are_well_formed_and_capped() {
        let r = ModuleRegistry::builtin("microworld39").unwrap();
        let p = SequencePolicy::new(&r, PolicyConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let s = p.sample_program(&q("x"), &mut rng);
            assert!(ProgramTree::from_tokens(s.tokens().to_vec(), &r).is_ok());
            assert!(s.len() <= MAX_SAMPLE_TOKENS + MAX_SAMPLE_TOKENS);
        }
    }

    #[test]
    fn empty_budget_gives_empty_trace() {
        let r = ModuleRegistry::builtin("microworld10").unwrap();
        assert!(run_baseline(&[], &r, 0, 1, &PolicyConfig::default()).is_empty());
    }
}
