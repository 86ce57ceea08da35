//! Heuristic search over the program graph: repeatedly expand the open node
//! with the highest expectation until a perfect program is found, the step
//! budget runs out, or every node is fully explored.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, Write};
use std::rc::Rc;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::ModuleRegistry;
use crate::graph::{init_graph, AddOutcome, GraphError, NodeId, ProgramGraph};
use crate::microworld::{exact_match_oracle, Executor, QuestionTriplet};
use crate::predictors::{ProgramPredictor, ProgramScorer, QuestionEmbedder, SolvedStore};
use crate::program::{cmp_keys, for_each_mutant, ProgramTree, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub max_step: usize,
    /// `weights[d]` multiplies the best score within `d` hops; the number of
    /// weights fixes the radius.
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub tolerance: usize,
    pub rng_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { max_step: 1000, weights: vec![0.5, 0.25, 0.15, 0.1], alpha: 0.05, tolerance: 1, rng_seed: 0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("at least one expectation weight is required")]
    NoWeights,
    #[error("expectation weights must be finite and non-negative")]
    BadWeight,
    #[error("alpha must be finite and non-negative")]
    BadAlpha,
}

impl SearchConfig {
    pub fn radius(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.weights.is_empty() {
            return Err(ConfigError::NoWeights);
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ConfigError::BadWeight);
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(ConfigError::BadAlpha);
        }
        Ok(())
    }
}

/// Scores an executable program in [0, 1]. Each call counts as one
/// evaluation.
pub trait Evaluator {
    fn evaluate(&mut self, program: &ProgramTree) -> f64;
}

/// 1 iff the program is the reference program.
pub struct ExactMatch<'a> {
    pub target: &'a ProgramTree,
}

impl Evaluator for ExactMatch<'_> {
    fn evaluate(&mut self, program: &ProgramTree) -> f64 {
        exact_match_oracle(program, self.target)
    }
}

/// Fraction of the question's scenes answered correctly.
pub struct SceneAccuracy<'a> {
    pub executor: &'a Executor,
    pub triplet: &'a QuestionTriplet,
}

impl Evaluator for SceneAccuracy<'_> {
    fn evaluate(&mut self, program: &ProgramTree) -> f64 {
        self.executor.accuracy(program, self.triplet).unwrap_or(0.0)
    }
}

impl<F: FnMut(&ProgramTree) -> f64> Evaluator for F {
    fn evaluate(&mut self, program: &ProgramTree) -> f64 {
        self(program)
    }
}

/// Weighted ball maxima plus a balance term that favors rarely visited
/// nodes: `sum_d w_d * ball_d + alpha / (visits + 1)`.
pub fn expectation(graph: &ProgramGraph, node: NodeId, weights: &[f64], alpha: f64) -> f64 {
    let balls = graph.ball_maxima(node);
    let mut exp = 0.0;
    for (d, w) in weights.iter().enumerate() {
        exp += w * balls[d.min(balls.len() - 1)];
    }
    exp + alpha / (graph.node(node).visit_count as f64 + 1.0)
}

/// Open node with the highest expectation; ties go to the shorter program,
/// then the smaller canonical key. `None` when every node is fully explored.
pub fn select_node(graph: &mut ProgramGraph, config: &SearchConfig) -> Option<NodeId> {
    graph.refresh_balls();
    let registry = graph.registry();
    let mut best: Option<(NodeId, f64)> = None;
    for node in graph.nodes() {
        if node.fully_explored {
            continue;
        }
        let exp = expectation(graph, node.id, &config.weights, config.alpha);
        let better = match best {
            None => true,
            Some((b, be)) => match exp.total_cmp(&be) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => {
                    let other = &graph.node(b).program;
                    match node.program.len().cmp(&other.len()) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => cmp_keys(node.program.tokens(), other.tokens(), registry).is_lt(),
                    }
                }
            },
        };
        if better {
            best = Some((node.id, exp));
        }
    }
    best.map(|(id, _)| id)
}

/// Heap entry ordered like [`select_node`]: higher expectation, then shorter
/// program, then smaller key. Entries whose version is stale are skipped.
#[derive(Debug)]
struct Candidate {
    exp: f64,
    ranks: Rc<[u16]>,
    id: NodeId,
    version: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.exp
            .total_cmp(&other.exp)
            .then_with(|| other.ranks.len().cmp(&self.ranks.len()))
            .then_with(|| other.ranks.cmp(&self.ranks))
            .then_with(|| other.id.cmp(&self.id))
            .then_with(|| self.version.cmp(&other.version))
    }
}

/// Priority queue over open nodes that yields the same choice as
/// [`select_node`] without scanning the whole graph.
struct Frontier {
    heap: BinaryHeap<Candidate>,
    versions: Vec<u32>,
    ranks: Vec<Rc<[u16]>>,
    /// Position of each token code in canonical-key order.
    token_rank: Vec<u16>,
}

impl Frontier {
    fn new(registry: &ModuleRegistry) -> Self {
        let mut tokens: Vec<Token> = (0..registry.universe_len())
            .map(|i| Token::Module(crate::dsl::ModuleId(i as u16)))
            .chain(std::iter::once(Token::End))
            .collect();
        tokens.sort_by(|a, b| cmp_keys(std::slice::from_ref(a), std::slice::from_ref(b), registry));
        let mut token_rank = vec![0u16; registry.universe_len() + 1];
        for (rank, t) in tokens.iter().enumerate() {
            let slot = match t {
                Token::Module(id) => id.index(),
                Token::End => registry.universe_len(),
            };
            token_rank[slot] = rank as u16;
        }
        Frontier { heap: BinaryHeap::new(), versions: Vec::new(), ranks: Vec::new(), token_rank }
    }

    fn push(&mut self, graph: &ProgramGraph, id: NodeId, config: &SearchConfig) {
        let universe = graph.registry().universe_len();
        while self.ranks.len() <= id {
            let n = graph.node(self.ranks.len());
            let ranks: Rc<[u16]> = n
                .program
                .tokens()
                .iter()
                .map(|t| match t {
                    Token::Module(m) => self.token_rank[m.index()],
                    Token::End => self.token_rank[universe],
                })
                .collect();
            self.ranks.push(ranks);
            self.versions.push(0);
        }
        if graph.node(id).fully_explored {
            return;
        }
        self.versions[id] += 1;
        self.heap.push(Candidate {
            exp: expectation(graph, id, &config.weights, config.alpha),
            ranks: self.ranks[id].clone(),
            id,
            version: self.versions[id],
        });
    }

    fn pop(&mut self, graph: &ProgramGraph) -> Option<NodeId> {
        while let Some(c) = self.heap.pop() {
            if c.version == self.versions[c.id] && !graph.node(c.id).fully_explored {
                return Some(c.id);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub selected_key: String,
    pub new_nodes: usize,
    pub evaluations: u64,
    pub best_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub records: Vec<TraceRecord>,
}

impl SearchTrace {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "step,selected_key,new_nodes,evaluations,best_score")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", r.step, r.selected_key, r.new_nodes, r.evaluations, r.best_score)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Solved,
    Exhausted,
    StepLimit,
}

/// State of one search over one question.
pub struct GraphSearch<'a> {
    pub graph: ProgramGraph,
    scorer: Box<dyn ProgramScorer + 'a>,
    evaluator: &'a mut dyn Evaluator,
    config: &'a SearchConfig,
    rng: ChaCha8Rng,
    seeds: Vec<NodeId>,
    frontier: Frontier,
    pub evaluations: u64,
    pub best: Option<NodeId>,
    pub trace: SearchTrace,
    pub steps: usize,
}

impl<'a> GraphSearch<'a> {
    pub fn new(
        question: &'a [String],
        evaluator: &'a mut dyn Evaluator,
        predictor: &'a dyn ProgramPredictor,
        solved: Option<(&QuestionEmbedder, &SolvedStore)>,
        registry: &ModuleRegistry,
        config: &'a SearchConfig,
    ) -> Result<Self, GraphError> {
        let mut scorer = predictor.conditioned(question);
        let (graph, seeds) =
            init_graph(question, predictor, scorer.as_mut(), solved, registry, config.tolerance, config.radius())?;
        Ok(GraphSearch {
            graph,
            scorer,
            evaluator,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            frontier: Frontier::new(registry),
            seeds,
            evaluations: 0,
            best: None,
            trace: SearchTrace::default(),
            steps: 0,
        })
    }

    pub fn best_score(&self) -> f64 {
        self.best.map_or(0.0, |b| self.graph.node(b).score)
    }

    /// Best evaluated program, or the first seed if nothing was evaluated.
    pub fn best_program(&self) -> &ProgramTree {
        &self.graph.node(self.best.unwrap_or(self.seeds[0])).program
    }

    /// Visits `id`: scores it on the first visit when executable, then adds
    /// the legal mutants at one randomly chosen unexpanded address. Returns
    /// the number of new nodes.
    pub fn expand(&mut self, id: NodeId) -> usize {
        let node = self.graph.node_mut(id);
        node.visit_count += 1;
        if !node.visited && node.legality.executable {
            node.visited = true;
            let score = self.evaluator.evaluate(&node.program);
            self.evaluations += 1;
            self.graph.set_score(id, score);
            if self.best.is_none_or(|b| score > self.graph.node(b).score) {
                self.best = Some(id);
            }
        }
        let node = self.graph.node(id);
        let Some(addr) = node.unexpanded().choose(&mut self.rng) else {
            self.graph.node_mut(id).fully_explored = true;
            return 0;
        };
        let tokens = node.program.tokens().to_vec();
        let mut fresh = Vec::new();
        let mut buf = Vec::new();
        let graph = &self.graph;
        for_each_mutant(&tokens, addr, graph.registry(), &mut buf, |m, _| {
            if graph.find(m).is_none() {
                fresh.push(m.to_vec());
            }
        });
        let mut added = 0;
        for m in fresh {
            let program = ProgramTree::from_tokens_unchecked(m);
            if let AddOutcome::Added(_) = self.graph.add_program(program, self.scorer.as_mut()) {
                added += 1;
            }
        }
        let node = self.graph.node_mut(id);
        node.expanded[addr] = true;
        if node.expanded.iter().all(|e| *e) {
            node.fully_explored = true;
        }
        added
    }

    /// Same choice as [`select_node`], served from the priority queue.
    pub fn select(&mut self) -> Option<NodeId> {
        self.graph.refresh_balls();
        for id in self.graph.take_updated() {
            self.frontier.push(&self.graph, id, self.config);
        }
        self.frontier.pop(&self.graph)
    }

    /// One select-and-expand step. `None` once every node is fully explored.
    pub fn step(&mut self) -> Option<NodeId> {
        let id = self.select()?;
        let new_nodes = self.expand(id);
        self.frontier.push(&self.graph, id, self.config);
        self.steps += 1;
        self.trace.records.push(TraceRecord {
            step: self.steps,
            selected_key: self.graph.key(id),
            new_nodes,
            evaluations: self.evaluations,
            best_score: self.best_score(),
        });
        Some(id)
    }

    pub fn run(&mut self) -> StopReason {
        while self.steps < self.config.max_step {
            if self.best_score() >= 1.0 {
                return StopReason::Solved;
            }
            if self.step().is_none() {
                return StopReason::Exhausted;
            }
        }
        if self.best_score() >= 1.0 {
            StopReason::Solved
        } else {
            StopReason::StepLimit
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_program: ProgramTree,
    pub best_score: f64,
    pub evaluations: u64,
    pub steps: usize,
    pub stop: StopReason,
    pub trace: SearchTrace,
    pub graph: ProgramGraph,
}

/// Searches for a program for `question`, seeding the graph from the
/// predictor, the closest solved question and the shortest legal program.
pub fn run_search(
    question: &[String],
    evaluator: &mut dyn Evaluator,
    predictor: &dyn ProgramPredictor,
    solved: Option<(&QuestionEmbedder, &SolvedStore)>,
    registry: &ModuleRegistry,
    config: &SearchConfig,
) -> Result<SearchOutcome, GraphError> {
    let mut search = GraphSearch::new(question, evaluator, predictor, solved, registry, config)?;
    let stop = search.run();
    Ok(SearchOutcome {
        best_program: search.best_program().clone(),
        best_score: search.best_score(),
        evaluations: search.evaluations,
        steps: search.steps,
        stop,
        trace: std::mem::take(&mut search.trace),
        graph: search.graph,
    })
}
