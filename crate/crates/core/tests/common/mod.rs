//! Oracles and fixtures shared by the property and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use gbhs::dsl::ModuleRegistry;
use gbhs::graph::{AddOutcome, ProgramGraph};
use gbhs::predictors::ProgramScorer;
use gbhs::program::{neighbors, random_executable, random_tree, ProgramNode};
use gbhs::ProgramTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mw10() -> ModuleRegistry {
    ModuleRegistry::builtin("microworld10").unwrap()
}

pub fn mw39() -> ModuleRegistry {
    ModuleRegistry::builtin("microworld39").unwrap()
}

pub fn tree(registry: &ModuleRegistry, seed: u64) -> ProgramTree {
    random_tree(registry, 0.3, 6, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Random tree with at most `max_nodes` nodes, by rejection.
pub fn small_tree(registry: &ModuleRegistry, seed: u64, max_nodes: usize) -> ProgramTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let t = random_tree(registry, 0.45, 4, &mut rng);
        if t.len() <= max_nodes {
            return t;
        }
    }
}

pub fn ends(n: usize) -> Vec<ProgramNode> {
    vec![ProgramNode::End; n]
}

/// One-edit variants of the subtree `node`, built directly on the nested
/// representation: insertion above (or filling an `END`), deletion keeping
/// one child, and substitution by an equal-arity module.
pub fn oracle_variants(node: &ProgramNode, root: bool, reg: &ModuleRegistry) -> BTreeSet<ProgramNode> {
    let mut out = BTreeSet::new();
    match node {
        ProgramNode::End => {
            for (id, sig) in reg.modules() {
                out.insert(ProgramNode::Module(id, ends(sig.arity())));
            }
        }
        ProgramNode::Module(target, children) => {
            for (id, sig) in reg.modules() {
                for j in 0..sig.arity() {
                    let mut ch = ends(sig.arity());
                    ch[j] = node.clone();
                    out.insert(ProgramNode::Module(id, ch));
                }
            }
            if children.is_empty() {
                if !root {
                    out.insert(ProgramNode::End);
                }
            } else {
                for c in children {
                    if !(root && *c == ProgramNode::End) {
                        out.insert(c.clone());
                    }
                }
            }
            for (id, sig) in reg.modules() {
                if id != *target && sig.arity() == children.len() {
                    out.insert(ProgramNode::Module(id, children.clone()));
                }
            }
            for (i, c) in children.iter().enumerate() {
                for v in oracle_variants(c, false, reg) {
                    let mut ch = children.clone();
                    ch[i] = v;
                    out.insert(ProgramNode::Module(*target, ch));
                }
            }
        }
    }
    out
}

pub fn node_type(node: &ProgramNode, reg: &ModuleRegistry) -> usize {
    match node {
        ProgramNode::End => reg.none_type(),
        ProgramNode::Module(id, _) => reg.sig(*id).output,
    }
}

/// Mismatches by direct recursion over the nested tree.
pub fn oracle_mismatches(node: &ProgramNode, reg: &ModuleRegistry) -> usize {
    fn inner(node: &ProgramNode, reg: &ModuleRegistry) -> usize {
        match node {
            ProgramNode::End => 0,
            ProgramNode::Module(id, children) => children
                .iter()
                .zip(&reg.sig(*id).inputs)
                .map(|(c, &mask)| usize::from(mask & (1 << node_type(c, reg)) == 0) + inner(c, reg))
                .sum(),
        }
    }
    usize::from(!reg.is_answer_type(node_type(node, reg))) + inner(node, reg)
}

pub struct Constant;

impl ProgramScorer for Constant {
    fn probability(&mut self, _: &ProgramTree) -> f64 {
        0.5
    }
}

/// Graph grown by adding mutants of random existing nodes until it holds
/// `target` nodes or no growth is possible.
pub fn grow_graph(reg: &ModuleRegistry, tolerance: usize, target: usize, seed: u64) -> ProgramGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = ProgramGraph::new(reg, tolerance, 3);
    let first = random_executable(reg, 4, 0.6, &mut rng).unwrap();
    graph.add_program(first, &mut Constant);
    let mut stalls = 0;
    while graph.len() < target && stalls < 200 {
        let base = graph.node(rng.gen_range(0..graph.len())).program.clone();
        let mutants = neighbors(&base, reg);
        let pick = mutants[rng.gen_range(0..mutants.len())].clone();
        match graph.add_program(pick, &mut Constant) {
            AddOutcome::Added(_) => stalls = 0,
            _ => stalls += 1,
        }
    }
    graph
}
