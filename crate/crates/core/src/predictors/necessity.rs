use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::distinct_words;
use crate::dsl::{ModuleId, ModuleRegistry};
use crate::program::ProgramTree;

pub const NECESSITY_LEARNING_RATE: f64 = 0.1;

/// Per-module logistic regression over question-word presence features.
#[derive(Debug, Clone)]
pub struct NecessityPredictor {
    modules: usize,
    learning_rate: f64,
    bias: Vec<f64>,
    weights: HashMap<String, Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// 1.0 for every universe module that occurs in the program, else 0.0.
pub fn presence_vector(program: &ProgramTree, registry: &ModuleRegistry) -> Vec<f64> {
    let mut v = vec![0.0; registry.universe_len()];
    for id in program.modules() {
        v[id.index()] = 1.0;
    }
    v
}

impl NecessityPredictor {
    pub fn new(registry: &ModuleRegistry) -> Self {
        let n = registry.universe_len();
        NecessityPredictor { modules: n, learning_rate: NECESSITY_LEARNING_RATE, bias: vec![0.0; n], weights: HashMap::new() }
    }

    fn logits(&self, question: &[String]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for w in distinct_words(question) {
            if let Some(ws) = self.weights.get(w) {
                z.iter_mut().zip(ws).for_each(|(a, b)| *a += b);
            }
        }
        z
    }

    /// Necessity in [0, 1] for every module of the universe, in document order.
    pub fn predict(&self, question: &[String]) -> Vec<f64> {
        self.logits(question).into_iter().map(sigmoid).collect()
    }

    /// One online logistic step per module toward the program's presence
    /// vector.
    pub fn train(&mut self, question: &[String], program: &ProgramTree, registry: &ModuleRegistry) {
        let target = presence_vector(program, registry);
        let pred = self.predict(question);
        let grad: Vec<f64> = target.iter().zip(&pred).map(|(y, p)| self.learning_rate * (y - p)).collect();
        self.bias.iter_mut().zip(&grad).for_each(|(b, g)| *b += g);
        let n = self.modules;
        for w in distinct_words(question) {
            let ws = self.weights.entry(w.to_string()).or_insert_with(|| vec![0.0; n]);
            ws.iter_mut().zip(&grad).for_each(|(a, g)| *a += g);
        }
    }

    pub fn export_state(&self) -> NecessityState {
        let mut weights: Vec<(String, Vec<f64>)> = self.weights.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        weights.sort_by(|a, b| a.0.cmp(&b.0));
        NecessityState { learning_rate: self.learning_rate, bias: self.bias.clone(), weights }
    }

    pub fn import_state(registry: &ModuleRegistry, state: &NecessityState) -> Result<Self, String> {
        let n = registry.universe_len();
        if state.bias.len() != n || state.weights.iter().any(|(_, w)| w.len() != n) {
            return Err("necessity state does not match the registry size".into());
        }
        Ok(NecessityPredictor {
            modules: n,
            learning_rate: state.learning_rate,
            bias: state.bias.clone(),
            weights: state.weights.iter().cloned().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityState {
    pub learning_rate: f64,
    pub bias: Vec<f64>,
    pub weights: Vec<(String, Vec<f64>)>,
}

/// Top-`np` active modules by necessity (ties broken at random) plus `nr`
/// modules drawn uniformly without replacement from the rest. Returned in document order.
pub fn select_candidates<R: Rng + ?Sized>(
    necessity: &[f64],
    registry: &ModuleRegistry,
    np: usize,
    nr: usize,
    rng: &mut R,
) -> Vec<ModuleId> {
    let mut ranked: Vec<(ModuleId, f64)> = registry.modules().map(|(id, _)| (id, necessity[id.index()])).collect();
    ranked.shuffle(rng);
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top = np.min(ranked.len());
    let mut chosen: Vec<ModuleId> = ranked[..top].iter().map(|r| r.0).collect();
    let rest: Vec<ModuleId> = ranked[top..].iter().map(|r| r.0).collect();
    let extra = nr.min(rest.len());
    if extra > 0 {
        for i in rand::seq::index::sample(rng, rest.len(), extra).into_vec() {
            chosen.push(rest[i]);
        }
    }
    chosen.sort();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn outputs_are_probabilities() {
        let r = ModuleRegistry::builtin("microworld39").unwrap();
        let n = NecessityPredictor::new(&r);
        let v = n.predict(&q("how many red things"));
        assert_eq!(v.len(), 39);
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn presence_of_count_red_scene() {
        let r = ModuleRegistry::builtin("microworld10").unwrap();
        let p = ProgramTree::parse("count filter_red scene", &r).unwrap();
        let v = presence_vector(&p, &r);
        assert_eq!(v.iter().filter(|x| **x == 1.0).count(), 3);
    }

    #[test]
    fn learns_word_module_association() {
        let r = ModuleRegistry::builtin("microworld10").unwrap();
        let mut n = NecessityPredictor::new(&r);
        let p = ProgramTree::parse("count filter_red scene", &r).unwrap();
        for _ in 0..100 {
            n.train(&q("red"), &p, &r);
        }
        let out = n.predict(&q("red"));
        let red = r.lookup("filter_red").unwrap().index();
        let blue = r.lookup("filter_blue").unwrap().index();
        assert!(out[red] > 0.9, "{}", out[red]);
        assert!(out[blue] < 0.1, "{}", out[blue]);
    }

    #[test]
    fn candidate_counts() {
        let r = ModuleRegistry::builtin("microworld39").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scores: Vec<f64> = (0..39).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let c = select_candidates(&scores, &r, 15, 5, &mut rng);
        assert_eq!(c.len(), 20);
        let mut ranked: Vec<usize> = (0..39).collect();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        for &top in &ranked[..15] {
            assert!(c.contains(&ModuleId(top as u16)));
        }
        let all = select_candidates(&scores, &r, 39, 5, &mut rng);
        assert_eq!(all.len(), 39);
        let only_top = select_candidates(&scores, &r, 15, 0, &mut rng);
        assert_eq!(only_top.len(), 15);
        assert!(only_top.iter().all(|id| ranked[..15].contains(&id.index())));
    }

    #[test]
    fn equal_scores_do_not_starve_any_module() {
        let r = ModuleRegistry::builtin("microworld39").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = [0usize; 39];
        for _ in 0..200 {
            for id in select_candidates(&[0.5; 39], &r, 15, 0, &mut rng) {
                seen[id.index()] += 1;
            }
        }
        // each module is expected 200 * 15 / 39 ~ 77 times
        assert!(seen.iter().all(|&c| (40..=120).contains(&c)), "{seen:?}");
    }

    #[test]
    fn state_round_trip() {
        let r = ModuleRegistry::builtin("microworld10").unwrap();
        let mut n = NecessityPredictor::new(&r);
        n.train(&q("how many red objects"), &ProgramTree::parse("count filter_red scene", &r).unwrap(), &r);
        let s = n.export_state();
        let back = NecessityPredictor::import_state(&r, &s).unwrap();
        assert_eq!(back.predict(&q("red objects")), n.predict(&q("red objects")));
    }
}
