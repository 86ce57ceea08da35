//! Program graph: one node per distinct program, an edge between every pair
//! of programs one edit apart, and per-node search state.

use std::collections::VecDeque;
use std::io::{self, Write};

use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::dsl::{legality_report, min_sizes, LegalityReport, ModuleRegistry, TypeMask};
use crate::predictors::{ProgramPredictor, ProgramScorer, QuestionEmbedder, SolvedStore};
use crate::program::{canonical_key, cmp_keys, for_each_mutant, EditKind, ProgramTree, Token};

pub type NodeId = usize;

/// Lower bound on a predictor-initialized node score.
pub const SCORE_FLOOR: f64 = 1e-9;

/// Node-count cap for [`shortest_legal_program`].
pub const SHORTEST_PROGRAM_CAP: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("no legal seed program is available")]
    NoLegalSeed,
}

#[derive(Debug, Clone)]
pub struct GraphNode {
    pub id: NodeId,
    pub program: ProgramTree,
    pub score: f64,
    pub visit_count: u64,
    pub visited: bool,
    pub fully_explored: bool,
    pub expanded: Vec<bool>,
    pub legality: LegalityReport,
}

impl GraphNode {
    pub fn unexpanded(&self) -> impl Iterator<Item = usize> + '_ {
        self.expanded.iter().enumerate().filter(|(_, e)| !**e).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    Added(NodeId),
    Existing(NodeId),
    Rejected,
}

/// Deduplicated program nodes with symmetric distance-1 edges.
///
/// Nodes `u` and `v` are joined iff one is a mutant of the other. Most edits
/// have a one-edit inverse, so looking up the mutants of a new node finds
/// nearly all of its neighbors. Deletions that drop a non-`END` sibling do
/// not, so those mutants are parked in `pending` until the program arrives.
///
/// Ball maxima `ball[u][d]` (the best score within `d` hops of `u`) are kept
/// up to date incrementally by [`refresh_balls`](Self::refresh_balls).
#[derive(Debug, Clone)]
pub struct ProgramGraph {
    registry: ModuleRegistry,
    tolerance: usize,
    nodes: Vec<GraphNode>,
    index: FxHashMap<ProgramTree, NodeId>,
    adjacency: Vec<Vec<NodeId>>,
    pending: FxHashMap<Box<[Token]>, Vec<NodeId>>,
    radius: usize,
    ball: Vec<Vec<f64>>,
    dirty: Vec<NodeId>,
    updated: Vec<NodeId>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl ProgramGraph {
    pub fn new(registry: &ModuleRegistry, tolerance: usize, radius: usize) -> Self {
        ProgramGraph {
            registry: registry.clone(),
            tolerance,
            nodes: Vec::new(),
            index: FxHashMap::default(),
            adjacency: Vec::new(),
            pending: FxHashMap::default(),
            radius,
            ball: Vec::new(),
            dirty: Vec::new(),
            updated: Vec::new(),
            stamp: Vec::new(),
            epoch: 0,
        }
    }

    pub fn registry(&self) -> &ModuleRegistry {
        &self.registry
    }

    pub fn tolerance(&self) -> usize {
        self.tolerance
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &GraphNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut GraphNode {
        &mut self.nodes[id]
    }

    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adjacency[id]
    }

    pub fn find(&self, tokens: &[Token]) -> Option<NodeId> {
        self.index.get(tokens).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn key(&self, id: NodeId) -> String {
        canonical_key(&self.nodes[id].program, &self.registry)
    }

    /// Inserts a program unless it is already present or exceeds the
    /// mismatch tolerance. New nodes start unvisited with the scorer's
    /// probability as their score.
    pub fn add_program(&mut self, program: ProgramTree, scorer: &mut dyn ProgramScorer) -> AddOutcome {
        if let Some(&id) = self.index.get(&program) {
            return AddOutcome::Existing(id);
        }
        let legality = match legality_report(&program, &self.registry, self.tolerance) {
            Ok(r) if r.within_tolerance => r,
            _ => return AddOutcome::Rejected,
        };
        let score = scorer.probability(&program).clamp(SCORE_FLOOR, 1.0);
        let id = self.nodes.len();

        let mut linked: Vec<NodeId> = self.pending.remove(program.tokens()).unwrap_or_default();
        let mut buf = Vec::new();
        for addr in 0..program.len() {
            for_each_mutant(program.tokens(), addr, &self.registry, &mut buf, |m, kind| {
                if let Some(&n) = self.index.get(m) {
                    linked.push(n);
                } else if matches!(kind, EditKind::Deletion { lossy: true }) {
                    let list = self.pending.entry(m.into()).or_default();
                    if list.last() != Some(&id) {
                        list.push(id);
                    }
                }
            });
        }
        linked.sort_unstable();
        linked.dedup();
        for &n in &linked {
            self.adjacency[n].push(id);
        }

        self.nodes.push(GraphNode {
            id,
            expanded: vec![false; program.len()],
            program: program.clone(),
            score,
            visit_count: 0,
            visited: false,
            fully_explored: false,
            legality,
        });
        self.index.insert(program, id);
        self.adjacency.push(linked);
        self.ball.push(vec![score; self.radius + 1]);
        self.stamp.push(0);
        self.dirty.push(id);
        AddOutcome::Added(id)
    }

    pub fn set_score(&mut self, id: NodeId, score: f64) {
        self.nodes[id].score = score;
        self.dirty.push(id);
    }

    /// Best score within graph distance `d` of `id`, for `d = 0..=radius`,
    /// as maintained by [`refresh_balls`](Self::refresh_balls).
    pub fn ball_maxima(&self, id: NodeId) -> &[f64] {
        &self.ball[id]
    }

    fn next_epoch(&mut self) -> u32 {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.epoch
    }

    /// Brings the ball maxima up to date after score changes and insertions.
    ///
    /// Layer `d` satisfies `M_d(u) = max(M_{d-1}(u), max over neighbors n of
    /// M_{d-1}(n))`. Only nodes whose own or a neighbor's previous layer
    /// changed, or whose adjacency grew, are recomputed.
    pub fn refresh_balls(&mut self) {
        if self.dirty.is_empty() {
            return;
        }
        let dirty = std::mem::take(&mut self.dirty);
        // nodes whose adjacency changed: dirty nodes and all their neighbors
        let mut structural: Vec<NodeId> = Vec::new();
        let mut changed: Vec<NodeId> = Vec::new();
        let e = self.next_epoch();
        for &u in &dirty {
            if self.stamp[u] != e {
                self.stamp[u] = e;
                changed.push(u);
                self.ball[u][0] = self.nodes[u].score;
            }
        }
        self.updated.extend_from_slice(&changed);
        for &u in &dirty {
            structural.push(u);
            structural.extend_from_slice(&self.adjacency[u]);
        }
        for d in 1..=self.radius {
            let e = self.next_epoch();
            let mut touched: Vec<NodeId> = Vec::new();
            for &u in &structural {
                if self.stamp[u] != e {
                    self.stamp[u] = e;
                    touched.push(u);
                }
            }
            for &u in &changed {
                if self.stamp[u] != e {
                    self.stamp[u] = e;
                    touched.push(u);
                }
                for &n in &self.adjacency[u] {
                    if self.stamp[n] != e {
                        self.stamp[n] = e;
                        touched.push(n);
                    }
                }
            }
            let mut next = Vec::new();
            for u in touched {
                let mut m = self.ball[u][d - 1];
                for &n in &self.adjacency[u] {
                    m = m.max(self.ball[n][d - 1]);
                }
                if m != self.ball[u][d] {
                    self.ball[u][d] = m;
                    next.push(u);
                }
            }
            self.updated.extend_from_slice(&next);
            changed = next;
        }
    }

    /// Nodes whose ball maxima changed in refreshes since the last call, in
    /// no particular order and possibly repeated.
    pub fn take_updated(&mut self) -> Vec<NodeId> {
        std::mem::take(&mut self.updated)
    }

    /// One JSON object per node: key, score, visit_count, visited,
    /// fully_explored, legality and the keys of its neighbors.
    pub fn write_dump<W: Write>(&self, out: &mut W) -> io::Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            key: String,
            score: f64,
            visit_count: u64,
            visited: bool,
            fully_explored: bool,
            legality: &'a LegalityReport,
            edges: Vec<String>,
        }
        for node in &self.nodes {
            let mut edges: Vec<String> = self.adjacency[node.id].iter().map(|&n| self.key(n)).collect();
            edges.sort();
            let rec = Record {
                key: self.key(node.id),
                score: node.score,
                visit_count: node.visit_count,
                visited: node.visited,
                fully_explored: node.fully_explored,
                legality: &node.legality,
                edges,
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Best score within hop distance `d` of `node` for `d = 0..=depth`, by a
/// truncated breadth-first search over the current scores.
pub fn ball_max_scores(graph: &ProgramGraph, node: NodeId, depth: usize) -> Vec<f64> {
    let mut dist = vec![usize::MAX; graph.len()];
    let mut best = vec![f64::NEG_INFINITY; depth + 1];
    let mut queue = VecDeque::new();
    dist[node] = 0;
    queue.push_back(node);
    while let Some(u) = queue.pop_front() {
        let du = dist[u];
        best[du] = best[du].max(graph.node(u).score);
        if du == depth {
            continue;
        }
        for &n in graph.neighbors(u) {
            if dist[n] == usize::MAX {
                dist[n] = du + 1;
                queue.push_back(n);
            }
        }
    }
    for d in 1..=depth {
        best[d] = best[d].max(best[d - 1]);
    }
    best
}

/// Smallest program with no type mismatches; among those of that size, the
/// one with the lexicographically smallest canonical key.
pub fn shortest_legal_program(registry: &ModuleRegistry) -> Result<ProgramTree, GraphError> {
    let sizes = min_sizes(registry);
    let slot_min = |mask: TypeMask| -> Option<usize> {
        (0..sizes.len()).filter(|t| mask & (1 << t) != 0).filter_map(|t| sizes[t]).min()
    };
    let target = slot_min(registry.answer_mask()).ok_or(GraphError::NoLegalSeed)?;
    if target > SHORTEST_PROGRAM_CAP {
        return Err(GraphError::NoLegalSeed);
    }
    let mut choices: Vec<Token> = std::iter::once(Token::End)
        .chain(registry.modules().map(|(id, _)| Token::Module(id)))
        .collect();
    choices.sort_by(|a, b| cmp_keys(std::slice::from_ref(a), std::slice::from_ref(b), registry));

    let none = registry.none_type();
    let mut pending: Vec<TypeMask> = vec![registry.answer_mask()];
    let mut tokens = Vec::with_capacity(target);
    let mut used = 0;
    while let Some(mask) = pending.pop() {
        let rest: usize = pending.iter().map(|&m| slot_min(m).unwrap_or(usize::MAX / 64)).sum();
        let pick = choices.iter().copied().find(|&t| {
            let (out, need) = match t {
                Token::End => (none, 1),
                Token::Module(id) => {
                    let sig = registry.sig(id);
                    let kids: Option<usize> = sig.inputs.iter().map(|&m| slot_min(m)).sum();
                    match kids {
                        Some(k) => (sig.output, 1 + k),
                        None => return false,
                    }
                }
            };
            mask & (1 << out) != 0 && used + need + rest <= target
        });
        let t = pick.ok_or(GraphError::NoLegalSeed)?;
        used += 1;
        tokens.push(t);
        if let Token::Module(id) = t {
            pending.extend(registry.sig(id).inputs.iter().rev());
        }
    }
    Ok(ProgramTree::from_tokens_unchecked(tokens))
}

/// Builds a graph from up to three seeds: the predictor's program, the
/// program of the closest solved question, and the shortest legal program.
/// Seeds outside the registry or the tolerance are skipped. Returns the graph
/// and the seed node ids in that order, duplicates collapsed.
#[allow(clippy::too_many_arguments)]
pub fn init_graph(
    question: &[String],
    predictor: &dyn ProgramPredictor,
    scorer: &mut dyn ProgramScorer,
    solved: Option<(&QuestionEmbedder, &SolvedStore)>,
    registry: &ModuleRegistry,
    tolerance: usize,
    radius: usize,
) -> Result<(ProgramGraph, Vec<NodeId>), GraphError> {
    if registry.is_empty() {
        return Err(GraphError::NoLegalSeed);
    }
    let mut seeds = vec![predictor.predict(question, registry)];
    if let Some((embedder, store)) = solved {
        if let Some((program, _)) = store.closest(embedder, question) {
            seeds.push(program.clone());
        }
    }
    if let Ok(p) = shortest_legal_program(registry) {
        seeds.push(p);
    }
    let mut graph = ProgramGraph::new(registry, tolerance, radius);
    let mut ids = Vec::new();
    for s in seeds {
        match graph.add_program(s, scorer) {
            AddOutcome::Added(id) | AddOutcome::Existing(id) => {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            AddOutcome::Rejected => {}
        }
    }
    if ids.is_empty() {
        return Err(GraphError::NoLegalSeed);
    }
    Ok((graph, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::brute_force_distance;

    struct Const(f64);
    impl ProgramScorer for Const {
        fn probability(&mut self, _: &ProgramTree) -> f64 {
            self.0
        }
    }

    fn reg() -> ModuleRegistry {
        ModuleRegistry::builtin("microworld10").unwrap()
    }

    fn p(s: &str, r: &ModuleRegistry) -> ProgramTree {
        ProgramTree::parse(s, r).unwrap()
    }

    #[test]
    fn shortest_microworld10() {
        let r = reg();
        assert_eq!(shortest_legal_program(&r).unwrap().to_text(&r), "count scene");
        let only_exist = r.restrict_names(&["scene", "exist", "filter_red"]);
        assert_eq!(shortest_legal_program(&only_exist).unwrap().to_text(&r), "exist scene");
        let no_answer = r.restrict_names(&["scene", "filter_red"]);
        assert_eq!(shortest_legal_program(&no_answer), Err(GraphError::NoLegalSeed));
    }

    #[test]
    fn adding_exist_links_two_neighbors() {
        let r = reg();
        let mut g = ProgramGraph::new(&r, 1, 3);
        let mut s = Const(0.5);
        g.add_program(p("count scene", &r), &mut s);
        g.add_program(p("scene", &r), &mut s);
        assert_eq!(g.edge_count(), 1);
        let before = g.edge_count();
        assert!(matches!(g.add_program(p("exist scene", &r), &mut s), AddOutcome::Added(_)));
        assert_eq!(g.edge_count() - before, 2);
        assert!(matches!(g.add_program(p("exist scene", &r), &mut s), AddOutcome::Existing(_)));
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn tolerance_rejects() {
        let r = reg();
        let mut g = ProgramGraph::new(&r, 1, 3);
        let mut s = Const(0.5);
        // scene at the root (1) and count under count (1)
        assert_eq!(g.add_program(p("count count scene", &r), &mut s), AddOutcome::Added(0));
        assert_eq!(g.add_program(p("filter_red count END", &r), &mut s), AddOutcome::Rejected);
    }

    #[test]
    fn lossy_deletions_are_linked() {
        let r = ModuleRegistry::builtin("microworld39").unwrap();
        let mut g = ProgramGraph::new(&r, 3, 3);
        let mut s = Const(0.5);
        let a = p("union scene filter_red scene", &r);
        let b = p("scene", &r);
        g.add_program(a.clone(), &mut s);
        g.add_program(b.clone(), &mut s);
        assert_eq!(brute_force_distance(&a, &b, 1, &r), Some(1));
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn ball_maxima_on_path() {
        let r = reg();
        let mut g = ProgramGraph::new(&r, 1, 3);
        g.add_program(p("count filter_red scene", &r), &mut Const(0.1));
        g.add_program(p("count scene", &r), &mut Const(0.9));
        g.add_program(p("exist scene", &r), &mut Const(0.5));
        let v = ball_max_scores(&g, 0, 2);
        assert_eq!(v, vec![0.1, 0.9, 0.9]);
        g.refresh_balls();
        assert_eq!(g.ball_maxima(0), &[0.1, 0.9, 0.9, 0.9]);
        g.set_score(1, 0.2);
        g.refresh_balls();
        assert_eq!(g.ball_maxima(0), &[0.1, 0.2, 0.5, 0.5]);
    }

    #[test]
    fn isolated_ball() {
        let r = reg();
        let mut g = ProgramGraph::new(&r, 1, 3);
        g.add_program(p("count scene", &r), &mut Const(0.4));
        assert_eq!(ball_max_scores(&g, 0, 3), vec![0.4; 4]);
    }

    #[test]
    fn dump_lines() {
        let r = reg();
        let mut g = ProgramGraph::new(&r, 1, 3);
        g.add_program(p("count scene", &r), &mut Const(0.4));
        g.add_program(p("exist scene", &r), &mut Const(0.4));
        let mut out = Vec::new();
        g.write_dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["key"], "count scene");
        assert_eq!(first["edges"][0], "exist scene");
    }
}
