//! Outer training loop: sample a question from the curriculum pools, search
//! for its program, route it to solved or unsolved, and train the predictors
//! on the best program found.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::ModuleRegistry;
use crate::graph::{shortest_legal_program, GraphError};
use crate::microworld::{Executor, QuestionTriplet};
use crate::predictors::{select_candidates, NGramPredictor, NecessityPredictor, ProgramPredictor, QuestionEmbedder, SolvedStore};
use crate::search::{run_search, ExactMatch, SceneAccuracy, SearchConfig, SearchOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pool {
    Unmet,
    Unsolved,
    Solved,
}

impl Pool {
    pub fn as_str(self) -> &'static str {
        match self {
            Pool::Unmet => "unmet",
            Pool::Unsolved => "unsolved",
            Pool::Solved => "solved",
        }
    }
}

/// How a candidate program is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// 1 iff the program equals the reference program.
    ExactMatch,
    /// Fraction of the question's scenes answered correctly.
    Accuracy,
}

impl EvalMode {
    pub fn default_boundary(self) -> f64 {
        match self {
            EvalMode::ExactMatch => 1.0,
            EvalMode::Accuracy => 0.99,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("every question is solved")]
    AllSolved,
}

/// Partition of question indices into unmet, unsolved and solved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPools {
    pub unmet: Vec<usize>,
    pub unsolved: Vec<usize>,
    pub solved: Vec<usize>,
}

fn remove_sorted(v: &mut Vec<usize>, x: usize) -> bool {
    match v.binary_search(&x) {
        Ok(i) => {
            v.remove(i);
            true
        }
        Err(_) => false,
    }
}

fn insert_sorted(v: &mut Vec<usize>, x: usize) {
    if let Err(i) = v.binary_search(&x) {
        v.insert(i, x);
    }
}

impl DataPools {
    pub fn new(count: usize) -> Self {
        DataPools { unmet: (0..count).collect(), unsolved: Vec::new(), solved: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.unmet.len() + self.unsolved.len() + self.solved.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pool_of(&self, id: usize) -> Option<Pool> {
        if self.unmet.binary_search(&id).is_ok() {
            Some(Pool::Unmet)
        } else if self.unsolved.binary_search(&id).is_ok() {
            Some(Pool::Unsolved)
        } else if self.solved.binary_search(&id).is_ok() {
            Some(Pool::Solved)
        } else {
            None
        }
    }

    /// Probability of drawing from the unmet pool: `exp(-N_us / (N_s + 1))`
    /// while unmet questions remain, else 0.
    pub fn p_unmet(&self) -> f64 {
        if self.unmet.is_empty() {
            0.0
        } else {
            (-(self.unsolved.len() as f64) / (self.solved.len() as f64 + 1.0)).exp()
        }
    }

    /// Draws a question from unmet with probability [`p_unmet`](Self::p_unmet),
    /// otherwise from unsolved, uniformly within the pool.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, Pool), PoolError> {
        if self.unmet.is_empty() && self.unsolved.is_empty() {
            return Err(PoolError::AllSolved);
        }
        let from_unmet = rng.gen::<f64>() < self.p_unmet();
        let (pool, kind) = if from_unmet { (&self.unmet, Pool::Unmet) } else { (&self.unsolved, Pool::Unsolved) };
        Ok((pool[rng.gen_range(0..pool.len())], kind))
    }

    /// Moves the question to solved when `score` reaches the boundary, else
    /// to unsolved. Returns the destination.
    pub fn route(&mut self, id: usize, score: f64, boundary: f64) -> Pool {
        remove_sorted(&mut self.unmet, id);
        remove_sorted(&mut self.unsolved, id);
        if score >= boundary {
            insert_sorted(&mut self.solved, id);
            Pool::Solved
        } else {
            insert_sorted(&mut self.unsolved, id);
            Pool::Unsolved
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Number of sample-search-train iterations; 0 means no limit.
    pub max_loop: usize,
    pub acceptable_boundary: Option<f64>,
    pub csm_enabled: bool,
    pub np: usize,
    pub nr: usize,
    /// Stop once this many evaluations have been spent; 0 means no limit.
    pub evaluation_budget: u64,
    /// Also train the predictors on loops whose best score is 0.
    pub train_on_failures: bool,
    /// After each training step, replay one update of each predictor for
    /// every solved question.
    pub replay: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_loop: 100,
            acceptable_boundary: None,
            csm_enabled: true,
            np: 15,
            nr: 5,
            evaluation_budget: 0,
            train_on_failures: false,
            replay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopRecord {
    #[serde(rename = "loop")]
    pub loop_index: usize,
    pub question_id: usize,
    pub source_pool: &'static str,
    pub evaluations: u64,
    pub best_score: f64,
    pub solved_total: usize,
    pub csm_fallback_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub evaluations: u64,
    pub correct_found: usize,
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: &mut W) -> io::Result<()> {
    writeln!(out, "evaluations,correct_found")?;
    for p in points {
        writeln!(out, "{},{}", p.evaluations, p.correct_found)?;
    }
    Ok(())
}

pub fn write_metrics_csv<W: Write>(records: &[LoopRecord], out: &mut W) -> io::Result<()> {
    writeln!(out, "loop,question_id,source_pool,evaluations,best_score,solved_total,csm_fallback_flag")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.loop_index,
            r.question_id,
            r.source_pool,
            r.evaluations,
            r.best_score,
            r.solved_total,
            r.csm_fallback_flag
        )?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("question {0} has no reference program, which exact-match scoring needs")]
    MissingProgram(usize),
    #[error("question {0}: {1}")]
    NoSeed(usize, GraphError),
    #[error("invalid search configuration: {0}")]
    Config(#[from] crate::search::ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCause {
    AllSolved,
    LoopLimit,
    Budget,
}

pub struct TrainingOutcome {
    pub predictor: NGramPredictor,
    pub necessity: NecessityPredictor,
    pub pools: DataPools,
    pub store: SolvedStore,
    pub records: Vec<LoopRecord>,
    pub curve: Vec<CurvePoint>,
    pub evaluations: u64,
    pub stop: StopCause,
}

impl TrainingOutcome {
    pub fn solved_fraction(&self) -> f64 {
        self.pools.solved.len() as f64 / self.pools.len().max(1) as f64
    }
}

/// Runs the sample, search, route, train loop. With `csm_enabled` every
/// search uses only the modules picked by the necessity predictor, falling
/// back to the full registry when that subset admits no legal program.
pub fn run_training(
    dataset: &[QuestionTriplet],
    registry: &ModuleRegistry,
    mode: EvalMode,
    config: &LoopConfig,
    search: &SearchConfig,
    seed: u64,
) -> Result<TrainingOutcome, TrainingError> {
    run_training_with(dataset, registry, mode, config, search, seed, NGramPredictor::new(registry), &mut |_, _| {})
}

/// [`run_training`] starting from a given program predictor, calling
/// `observe` after every loop with its record and search outcome.
#[allow(clippy::too_many_arguments)]
pub fn run_training_with(
    dataset: &[QuestionTriplet],
    registry: &ModuleRegistry,
    mode: EvalMode,
    config: &LoopConfig,
    search: &SearchConfig,
    seed: u64,
    predictor: NGramPredictor,
    observe: &mut dyn FnMut(&LoopRecord, &SearchOutcome),
) -> Result<TrainingOutcome, TrainingError> {
    search.validate()?;
    if mode == EvalMode::ExactMatch {
        if let Some(q) = dataset.iter().find(|q| q.gt_program.is_none()) {
            return Err(TrainingError::MissingProgram(q.id));
        }
    }
    let boundary = config.acceptable_boundary.unwrap_or_else(|| mode.default_boundary());
    let executor = Executor::new(registry);
    let embedder = QuestionEmbedder::fit(dataset.iter().map(|q| q.question.as_slice()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut predictor = predictor;
    let mut necessity = NecessityPredictor::new(registry);
    let mut pools = DataPools::new(dataset.len());
    let mut store = SolvedStore::new();
    let mut records = Vec::new();
    let mut curve = Vec::new();
    let mut evaluations = 0u64;
    let mut loop_index = 0usize;

    let stop = loop {
        if config.max_loop > 0 && loop_index >= config.max_loop {
            break StopCause::LoopLimit;
        }
        if config.evaluation_budget > 0 && evaluations >= config.evaluation_budget {
            break StopCause::Budget;
        }
        let Ok((id, source)) = pools.sample(&mut rng) else {
            break StopCause::AllSolved;
        };
        loop_index += 1;
        let triplet = &dataset[id];

        let mut fallback = false;
        let active = if config.csm_enabled {
            let scores = necessity.predict(&triplet.question);
            let picked = select_candidates(&scores, registry, config.np, config.nr, &mut rng);
            let restricted = registry.restrict(&picked);
            if shortest_legal_program(&restricted).is_ok() {
                restricted
            } else {
                fallback = true;
                registry.clone()
            }
        } else {
            registry.clone()
        };

        let search_config = SearchConfig { rng_seed: rng.gen(), ..search.clone() };
        let solved = (!store.is_empty()).then_some((&embedder, &store));
        let outcome = match mode {
            EvalMode::ExactMatch => {
                let gt = triplet.gt_program.as_ref().expect("checked above");
                let mut eval = ExactMatch { target: gt };
                run_search(&triplet.question, &mut eval, &predictor, solved, &active, &search_config)
            }
            EvalMode::Accuracy => {
                let mut eval = SceneAccuracy { executor: &executor, triplet };
                run_search(&triplet.question, &mut eval, &predictor, solved, &active, &search_config)
            }
        }
        .map_err(|e| TrainingError::NoSeed(triplet.id, e))?;
        evaluations += outcome.evaluations;

        let dest = pools.route(id, outcome.best_score, boundary);
        if dest == Pool::Solved {
            store.insert(&embedder, triplet.id, &triplet.question, outcome.best_program.clone(), outcome.best_score);
            curve.push(CurvePoint { evaluations, correct_found: pools.solved.len() });
        }
        if config.train_on_failures || outcome.best_score > 0.0 {
            predictor.train(&triplet.question, &outcome.best_program);
            if config.csm_enabled {
                necessity.train(&triplet.question, &outcome.best_program, registry);
            }
            if config.replay {
                for e in store.entries() {
                    predictor.train(&e.question, &e.program);
                    if config.csm_enabled {
                        necessity.train(&e.question, &e.program, registry);
                    }
                }
            }
        }
        let record = LoopRecord {
            loop_index,
            question_id: triplet.id,
            source_pool: source.as_str(),
            evaluations,
            best_score: outcome.best_score,
            solved_total: pools.solved.len(),
            csm_fallback_flag: fallback,
        };
        observe(&record, &outcome);
        records.push(record);
    };
    if curve.last().is_none_or(|p| p.evaluations != evaluations) {
        curve.push(CurvePoint { evaluations, correct_found: pools.solved.len() });
    }
    Ok(TrainingOutcome { predictor, necessity, pools, store, records, curve, evaluations, stop })
}
