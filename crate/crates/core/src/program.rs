//! Program trees in pre-order form, their text serialization, and the three
//! one-edit mutations (insertion, deletion, substitution).
//!
//! A [`ProgramTree`] stores its pre-order token sequence. Because every module
//! has a fixed arity the sequence determines the tree uniquely, so the token
//! list doubles as the canonical key used for deduplication.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::Rng;
use thiserror::Error;

use crate::dsl::{ModuleId, ModuleRegistry, TypeMask};

/// Text spelling of the end-of-branch leaf.
pub const END_TOKEN: &str = "END";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Token {
    Module(ModuleId),
    End,
}

impl Token {
    /// Dense code: the module id, or `u16::MAX` for `END`.
    pub fn code(self) -> u16 {
        match self {
            Token::Module(id) => id.0,
            Token::End => u16::MAX,
        }
    }
}

impl Hash for Token {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u16(self.code())
    }
}

/// Pre-order position of a node within a program (0 = root).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeAddress(pub usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SequenceError {
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("sequence ends before all input slots are filled")]
    Truncated,
    #[error("{0} token(s) remain after the root is complete")]
    TrailingTokens(usize),
    #[error("a program needs a module at its root")]
    EmptyProgram,
    #[error("malformed expression: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MutateError {
    #[error("address {0} is outside a program of {1} nodes")]
    InvalidAddress(usize, usize),
}

/// Nested view of a program, convenient for construction and inspection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProgramNode {
    Module(ModuleId, Vec<ProgramNode>),
    End,
}

/// A structurally legal program: every module has exactly `arity` children
/// and the root is a module.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ProgramTree {
    tokens: Vec<Token>,
}

impl Hash for ProgramTree {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.tokens.as_slice().hash(state)
    }
}

impl std::borrow::Borrow<[Token]> for ProgramTree {
    fn borrow(&self) -> &[Token] {
        &self.tokens
    }
}

impl fmt::Debug for ProgramTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ProgramTree{:?}", self.tokens)
    }
}

/// Checks that `tokens` spell exactly one complete tree with a module root.
pub(crate) fn check_structure(
    tokens: &[Token],
    registry: &ModuleRegistry,
) -> Result<(), SequenceError> {
    if matches!(tokens.first(), None | Some(Token::End)) {
        return Err(if tokens.is_empty() { SequenceError::Truncated } else { SequenceError::EmptyProgram });
    }
    let mut open = 1usize;
    for (i, &t) in tokens.iter().enumerate() {
        if open == 0 {
            return Err(SequenceError::TrailingTokens(tokens.len() - i));
        }
        open -= 1;
        if let Token::Module(id) = t {
            if id.index() >= registry.universe_len() {
                return Err(SequenceError::UnknownModule(format!("#{}", id.0)));
            }
            open += registry.arity(id);
        }
    }
    if open > 0 {
        Err(SequenceError::Truncated)
    } else {
        Ok(())
    }
}

impl ProgramTree {
    /// Builds a program from pre-order tokens, validating structure.
    pub fn from_tokens(tokens: Vec<Token>, registry: &ModuleRegistry) -> Result<Self, SequenceError> {
        check_structure(&tokens, registry)?;
        Ok(ProgramTree { tokens })
    }

    pub(crate) fn from_tokens_unchecked(tokens: Vec<Token>) -> Self {
        ProgramTree { tokens }
    }

    /// Parses whitespace-separated tokens (`END` for leaves).
    pub fn parse(text: &str, registry: &ModuleRegistry) -> Result<Self, SequenceError> {
        let seq: Vec<&str> = text.split_whitespace().collect();
        from_sequence(&seq, registry)
    }

    /// Parses the functional form, e.g. `count(filter_red(scene))`. Missing
    /// trailing arguments are not filled in; every slot must be spelled.
    pub fn parse_expr(text: &str, registry: &ModuleRegistry) -> Result<Self, SequenceError> {
        let mut tokens = Vec::new();
        let mut names = Vec::new();
        let mut cur = String::new();
        for ch in text.chars() {
            match ch {
                '(' | ')' | ',' => {
                    if !cur.trim().is_empty() {
                        names.push(cur.trim().to_string());
                    }
                    cur.clear();
                }
                c => cur.push(c),
            }
        }
        if !cur.trim().is_empty() {
            names.push(cur.trim().to_string());
        }
        for name in &names {
            tokens.push(lookup_token(name, registry)?);
        }
        let tree = Self::from_tokens(tokens, registry)?;
        // Reject inputs whose parenthesization disagrees with the arities.
        let canonical: String = tree.display(registry).to_string().chars().filter(|c| !c.is_whitespace()).collect();
        let given: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if canonical != given {
            return Err(SequenceError::Malformed(text.to_string()));
        }
        Ok(tree)
    }

    pub fn from_node(node: &ProgramNode, registry: &ModuleRegistry) -> Result<Self, SequenceError> {
        fn walk(n: &ProgramNode, out: &mut Vec<Token>) {
            match n {
                ProgramNode::End => out.push(Token::End),
                ProgramNode::Module(id, children) => {
                    out.push(Token::Module(*id));
                    children.iter().for_each(|c| walk(c, out));
                }
            }
        }
        let mut tokens = Vec::new();
        walk(node, &mut tokens);
        Self::from_tokens(tokens, registry)
    }

    pub fn to_node(&self, registry: &ModuleRegistry) -> ProgramNode {
        fn build(tokens: &[Token], pos: &mut usize, reg: &ModuleRegistry) -> ProgramNode {
            let t = tokens[*pos];
            *pos += 1;
            match t {
                Token::End => ProgramNode::End,
                Token::Module(id) => {
                    let children = (0..reg.arity(id)).map(|_| build(tokens, pos, reg)).collect();
                    ProgramNode::Module(id, children)
                }
            }
        }
        build(&self.tokens, &mut 0, registry)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Number of nodes, `END` leaves included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> ModuleId {
        match self.tokens[0] {
            Token::Module(id) => id,
            Token::End => unreachable!("program roots are modules"),
        }
    }

    /// One-past-the-end index of the subtree rooted at `index`.
    pub fn subtree_end(&self, index: usize, registry: &ModuleRegistry) -> usize {
        subtree_end(&self.tokens, index, registry)
    }

    pub fn modules(&self) -> impl Iterator<Item = ModuleId> + '_ {
        self.tokens.iter().filter_map(|t| match t {
            Token::Module(id) => Some(*id),
            Token::End => None,
        })
    }

    pub fn depth(&self, registry: &ModuleRegistry) -> usize {
        fn go(tokens: &[Token], pos: &mut usize, reg: &ModuleRegistry) -> usize {
            let t = tokens[*pos];
            *pos += 1;
            match t {
                Token::End => 1,
                Token::Module(id) => 1 + (0..reg.arity(id)).map(|_| go(tokens, pos, reg)).max().unwrap_or(0),
            }
        }
        go(&self.tokens, &mut 0, registry)
    }

    /// Functional-form display, e.g. `count(filter_red(scene))`.
    pub fn display<'a>(&'a self, registry: &'a ModuleRegistry) -> ProgramDisplay<'a> {
        ProgramDisplay { program: self, registry }
    }

    /// Whitespace-separated token text, the on-disk form.
    pub fn to_text(&self, registry: &ModuleRegistry) -> String {
        canonical_key(self, registry)
    }
}

pub struct ProgramDisplay<'a> {
    program: &'a ProgramTree,
    registry: &'a ModuleRegistry,
}

impl fmt::Display for ProgramDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(
            f: &mut fmt::Formatter<'_>,
            tokens: &[Token],
            pos: &mut usize,
            reg: &ModuleRegistry,
        ) -> fmt::Result {
            let t = tokens[*pos];
            *pos += 1;
            f.write_str(reg.token_name(t))?;
            if let Token::Module(id) = t {
                let arity = reg.arity(id);
                if arity > 0 {
                    f.write_str("(")?;
                    for i in 0..arity {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        go(f, tokens, pos, reg)?;
                    }
                    f.write_str(")")?;
                }
            }
            Ok(())
        }
        go(f, &self.program.tokens, &mut 0, self.registry)
    }
}

pub(crate) fn subtree_end(tokens: &[Token], index: usize, registry: &ModuleRegistry) -> usize {
    let mut open = 1usize;
    let mut i = index;
    while open > 0 {
        open -= 1;
        if let Token::Module(id) = tokens[i] {
            open += registry.arity(id);
        }
        i += 1;
    }
    i
}

fn lookup_token(name: &str, registry: &ModuleRegistry) -> Result<Token, SequenceError> {
    if name == END_TOKEN {
        Ok(Token::End)
    } else {
        registry
            .lookup(name)
            .map(Token::Module)
            .ok_or_else(|| SequenceError::UnknownModule(name.to_string()))
    }
}

/// Pre-order token names.
pub fn to_sequence(program: &ProgramTree, registry: &ModuleRegistry) -> Vec<String> {
    program.tokens.iter().map(|&t| registry.token_name(t).to_string()).collect()
}

/// Inverse of [`to_sequence`].
pub fn from_sequence<S: AsRef<str>>(
    seq: &[S],
    registry: &ModuleRegistry,
) -> Result<ProgramTree, SequenceError> {
    let tokens = seq
        .iter()
        .map(|s| lookup_token(s.as_ref(), registry))
        .collect::<Result<Vec<_>, _>>()?;
    ProgramTree::from_tokens(tokens, registry)
}

/// Space-joined token names. Injective because names never contain spaces.
pub fn canonical_key(program: &ProgramTree, registry: &ModuleRegistry) -> String {
    let mut out = String::new();
    for (i, &t) in program.tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(registry.token_name(t));
    }
    out
}

/// Compares two programs by their canonical keys without allocating.
pub fn cmp_keys(a: &[Token], b: &[Token], registry: &ModuleRegistry) -> std::cmp::Ordering {
    let ai = a.iter().map(|&t| registry.token_name(t)).flat_map(|s| s.bytes().chain(std::iter::once(b' ')));
    let bi = b.iter().map(|&t| registry.token_name(t)).flat_map(|s| s.bytes().chain(std::iter::once(b' ')));
    ai.cmp(bi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditKind {
    Insertion,
    Deletion {
        /// Some abandoned sibling subtree was not a bare `END`, so the edit
        /// has no single-edit inverse.
        lossy: bool,
    },
    Substitution,
}

/// Enumerates the one-edit mutants of `tokens` at `addr`, writing each into a
/// scratch buffer and passing it to `visit`. May yield duplicates.
pub(crate) fn for_each_mutant(
    tokens: &[Token],
    addr: usize,
    registry: &ModuleRegistry,
    buf: &mut Vec<Token>,
    mut visit: impl FnMut(&[Token], EditKind),
) {
    let end = subtree_end(tokens, addr, registry);
    let (prefix, rest) = tokens.split_at(addr);
    let (sub, suffix) = rest.split_at(end - addr);
    let mut emit = |buf: &mut Vec<Token>, parts: &[&[Token]], kind: EditKind| {
        buf.clear();
        for p in parts {
            buf.extend_from_slice(p);
        }
        visit(buf, kind);
    };
    const ENDS: [Token; 8] = [Token::End; 8];
    let ends = |n: usize| -> Vec<Token> { if n <= 8 { ENDS[..n].to_vec() } else { vec![Token::End; n] } };

    match sub[0] {
        Token::End => {
            for (id, sig) in registry.modules() {
                let fill = ends(sig.arity());
                emit(buf, &[prefix, &[Token::Module(id)], &fill, suffix], EditKind::Insertion);
            }
        }
        Token::Module(target) => {
            // insertion between the target and its parent
            for (id, sig) in registry.modules() {
                let k = sig.arity();
                for j in 0..k {
                    let before = ends(j);
                    let after = ends(k - 1 - j);
                    emit(
                        buf,
                        &[prefix, &[Token::Module(id)], &before, sub, &after, suffix],
                        EditKind::Insertion,
                    );
                }
            }
            // deletion
            let arity = registry.arity(target);
            if arity == 0 {
                if addr != 0 {
                    emit(buf, &[prefix, &[Token::End], suffix], EditKind::Deletion { lossy: false });
                }
            } else {
                let mut spans = Vec::with_capacity(arity);
                let mut s = addr + 1;
                for _ in 0..arity {
                    let e = subtree_end(tokens, s, registry);
                    spans.push((s, e));
                    s = e;
                }
                for (i, &(s, e)) in spans.iter().enumerate() {
                    if addr == 0 && tokens[s] == Token::End {
                        continue;
                    }
                    let lossy = spans
                        .iter()
                        .enumerate()
                        .any(|(j, &(s2, e2))| j != i && !(e2 - s2 == 1 && tokens[s2] == Token::End));
                    emit(buf, &[prefix, &tokens[s..e], suffix], EditKind::Deletion { lossy });
                }
            }
            // substitution with every other module of equal arity
            for (id, sig) in registry.modules() {
                if id != target && sig.arity() == arity {
                    emit(buf, &[prefix, &[Token::Module(id)], &sub[1..], suffix], EditKind::Substitution);
                }
            }
        }
    }
}

/// All distinct programs one edit away from `program` at `target`, in
/// generation order.
pub fn mutate(
    program: &ProgramTree,
    target: NodeAddress,
    registry: &ModuleRegistry,
) -> Result<Vec<ProgramTree>, MutateError> {
    if target.0 >= program.len() {
        return Err(MutateError::InvalidAddress(target.0, program.len()));
    }
    let mut seen: HashSet<Vec<Token>> = HashSet::new();
    let mut out = Vec::new();
    let mut buf = Vec::new();
    for_each_mutant(&program.tokens, target.0, registry, &mut buf, |m, _| {
        if seen.insert(m.to_vec()) {
            out.push(ProgramTree { tokens: m.to_vec() });
        }
    });
    Ok(out)
}

/// Union of [`mutate`] over every address.
pub fn neighbors(program: &ProgramTree, registry: &ModuleRegistry) -> Vec<ProgramTree> {
    let mut seen: HashSet<Vec<Token>> = HashSet::new();
    let mut out = Vec::new();
    let mut buf = Vec::new();
    for addr in 0..program.len() {
        for_each_mutant(&program.tokens, addr, registry, &mut buf, |m, _| {
            if seen.insert(m.to_vec()) {
                out.push(ProgramTree { tokens: m.to_vec() });
            }
        });
    }
    out
}

/// Minimal number of mutation steps turning `from` into `to`, by breadth-first
/// closure of [`mutate`]. `None` when more than `bound` steps are needed.
pub fn brute_force_distance(
    from: &ProgramTree,
    to: &ProgramTree,
    bound: usize,
    registry: &ModuleRegistry,
) -> Option<usize> {
    if from == to {
        return Some(0);
    }
    let mut seen: HashSet<ProgramTree> = HashSet::from([from.clone()]);
    let mut queue = VecDeque::from([(from.clone(), 0usize)]);
    while let Some((p, d)) = queue.pop_front() {
        if d == bound {
            continue;
        }
        for n in neighbors(&p, registry) {
            if &n == to {
                return Some(d + 1);
            }
            if seen.insert(n.clone()) {
                queue.push_back((n, d + 1));
            }
        }
    }
    None
}

/// Untyped random tree: uniform module choice per slot, `END` with
/// probability `end_prob` per non-root slot, depth capped at `max_depth`
/// (slots at the cap get `END` or an arity-0 module).
pub fn random_tree<R: Rng + ?Sized>(
    registry: &ModuleRegistry,
    end_prob: f64,
    max_depth: usize,
    rng: &mut R,
) -> ProgramTree {
    fn go<R: Rng + ?Sized>(
        reg: &ModuleRegistry,
        leaves: &[ModuleId],
        end_prob: f64,
        depth_left: usize,
        root: bool,
        rng: &mut R,
        out: &mut Vec<Token>,
    ) {
        if depth_left <= 1 {
            let choices = leaves.len() + usize::from(!root);
            let pick = rng.gen_range(0..choices);
            out.push(if pick < leaves.len() { Token::Module(leaves[pick]) } else { Token::End });
            return;
        }
        if !root && rng.gen_bool(end_prob) {
            out.push(Token::End);
            return;
        }
        let ids = reg.active_ids();
        let id = ids[rng.gen_range(0..ids.len())];
        out.push(Token::Module(id));
        for _ in 0..reg.arity(id) {
            go(reg, leaves, end_prob, depth_left - 1, false, rng, out);
        }
    }
    let leaves: Vec<ModuleId> = registry.modules().filter(|(_, s)| s.arity() == 0).map(|(id, _)| id).collect();
    let max_depth = if leaves.is_empty() { max_depth.max(2) } else { max_depth.max(1) };
    loop {
        let mut out = Vec::new();
        go(registry, &leaves, end_prob, max_depth, true, rng, &mut out);
        if out[0] != Token::End {
            return ProgramTree { tokens: out };
        }
    }
}

/// Random program with zero type mismatches and depth at most `max_depth`.
/// At each slot an arity-0 producer (or `END` when `None` is accepted) is
/// chosen with probability `leaf_bias` when one exists. Returns `None` when
/// no answer type is reachable within the depth budget.
pub fn random_executable<R: Rng + ?Sized>(
    registry: &ModuleRegistry,
    max_depth: usize,
    leaf_bias: f64,
    rng: &mut R,
) -> Option<ProgramTree> {
    let heights = min_heights(registry);
    let answer_mask = registry.answer_mask();
    let roots: Vec<usize> = (0..registry.types().len())
        .filter(|&t| answer_mask & (1 << t) != 0)
        .filter(|&t| t != registry.none_type())
        .filter(|&t| heights[t].is_some_and(|h| h <= max_depth))
        .collect();
    if roots.is_empty() {
        return None;
    }
    let root_mask: TypeMask = roots.iter().fold(0, |m, &t| m | (1 << t));
    let mut out = Vec::new();
    fill_slot(registry, &heights, root_mask, max_depth, leaf_bias, true, rng, &mut out);
    Some(ProgramTree { tokens: out })
}

/// Minimum tree height producing each type with zero mismatches.
fn min_heights(registry: &ModuleRegistry) -> Vec<Option<usize>> {
    let n = registry.types().len();
    let mut h: Vec<Option<usize>> = vec![None; n];
    h[registry.none_type()] = Some(1);
    loop {
        let mut changed = false;
        for (_, sig) in registry.modules() {
            let mut need = Some(0usize);
            for &mask in &sig.inputs {
                let slot = (0..n).filter(|t| mask & (1 << t) != 0).filter_map(|t| h[t]).min();
                need = match (need, slot) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    _ => None,
                };
            }
            if let Some(inner) = need {
                let height = inner + 1;
                if h[sig.output].is_none_or(|cur| height < cur) {
                    h[sig.output] = Some(height);
                    changed = true;
                }
            }
        }
        if !changed {
            return h;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn fill_slot<R: Rng + ?Sized>(
    reg: &ModuleRegistry,
    heights: &[Option<usize>],
    accepts: TypeMask,
    budget: usize,
    leaf_bias: f64,
    root: bool,
    rng: &mut R,
    out: &mut Vec<Token>,
) {
    let fits = |mask: TypeMask, budget: usize| -> bool {
        (0..heights.len()).any(|t| mask & (1 << t) != 0 && heights[t].is_some_and(|h| h <= budget))
    };
    let none_ok = !root && accepts & (1 << reg.none_type()) != 0;
    let mut leaves: Vec<Token> = Vec::new();
    let mut inner: Vec<ModuleId> = Vec::new();
    for (id, sig) in reg.modules() {
        if accepts & (1 << sig.output) == 0 {
            continue;
        }
        if sig.arity() == 0 {
            leaves.push(Token::Module(id));
        } else if budget > 1 && sig.inputs.iter().all(|&m| fits(m, budget - 1)) {
            inner.push(id);
        }
    }
    if none_ok {
        leaves.push(Token::End);
    }
    let take_leaf = !leaves.is_empty() && (inner.is_empty() || rng.gen_bool(leaf_bias));
    if take_leaf {
        out.push(leaves[rng.gen_range(0..leaves.len())]);
        return;
    }
    let id = inner[rng.gen_range(0..inner.len())];
    out.push(Token::Module(id));
    for &mask in &reg.sig(id).inputs {
        fill_slot(reg, heights, mask, budget - 1, leaf_bias, false, rng, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn four() -> ModuleRegistry {
        ModuleRegistry::builtin("microworld10")
            .unwrap()
            .restrict_names(&["scene", "count", "exist", "filter_red"])
    }

    #[test]
    fn sequence_examples() {
        let r = ModuleRegistry::builtin("microworld10").unwrap();
        let p = ProgramTree::parse_expr("count(filter_red(scene))", &r).unwrap();
        assert_eq!(to_sequence(&p, &r), ["count", "filter_red", "scene"]);
        assert_eq!(from_sequence(&["count", "filter_red", "scene"], &r).unwrap(), p);
        let s = from_sequence(&["scene"], &r).unwrap();
        assert_eq!(to_sequence(&s, &r), ["scene"]);
        assert_eq!(canonical_key(&s, &r), "scene");
        assert_eq!(from_sequence(&["count"], &r), Err(SequenceError::Truncated));
        assert_eq!(
            from_sequence(&["count", "scene", "scene"], &r),
            Err(SequenceError::TrailingTokens(1))
        );
        assert_eq!(
            from_sequence(&["bogus"], &r),
            Err(SequenceError::UnknownModule("bogus".into()))
        );
        assert_eq!(from_sequence(&["END"], &r), Err(SequenceError::EmptyProgram));
    }

    #[test]
    fn binary_sequence_with_end() {
        let r = ModuleRegistry::builtin("microworld39").unwrap();
        let p = ProgramTree::parse_expr("greater(count(scene), END)", &r).unwrap();
        assert_eq!(to_sequence(&p, &r), ["greater", "count", "scene", "END"]);
        assert_eq!(p.display(&r).to_string(), "greater(count(scene), END)");
        assert!(ProgramTree::parse_expr("greater(count(scene))", &r).is_err());
    }

    #[test]
    fn keys_distinguish_modules() {
        let r = four();
        let a = ProgramTree::parse("count scene", &r).unwrap();
        let b = ProgramTree::parse("exist scene", &r).unwrap();
        assert_ne!(canonical_key(&a, &r), canonical_key(&b, &r));
    }

    #[test]
    fn mutate_at_leaf_of_count_scene() {
        let r = four();
        let p = ProgramTree::parse("count scene", &r).unwrap();
        let mut got: Vec<String> = mutate(&p, NodeAddress(1), &r)
            .unwrap()
            .iter()
            .map(|m| canonical_key(m, &r))
            .collect();
        got.sort();
        assert_eq!(got, ["count END", "count count scene", "count exist scene", "count filter_red scene"]);
    }

    #[test]
    fn substitution_of_lone_leaf_module_is_empty() {
        let r = four();
        let p = ProgramTree::parse("scene", &r).unwrap();
        let muts = mutate(&p, NodeAddress(0), &r).unwrap();
        // only insertions above the root; the root cannot be deleted
        assert_eq!(muts.len(), 3);
        assert!(muts.iter().all(|m| m.len() == 2));
    }

    #[test]
    fn invalid_address() {
        let r = four();
        let p = ProgramTree::parse("scene", &r).unwrap();
        assert_eq!(mutate(&p, NodeAddress(1), &r), Err(MutateError::InvalidAddress(1, 1)));
    }

    #[test]
    fn end_leaf_insertion_fills_slots() {
        let r = ModuleRegistry::builtin("microworld39").unwrap().restrict_names(&["scene", "greater", "count"]);
        let p = ProgramTree::parse_expr("count(END)", &r).unwrap();
        let keys: HashSet<String> =
            mutate(&p, NodeAddress(1), &r).unwrap().iter().map(|m| canonical_key(m, &r)).collect();
        assert!(keys.contains("count scene"));
        assert!(keys.contains("count greater END END"));
        assert!(keys.contains("count count END"));
        assert_eq!(keys.len(), 3);
    }

    #[test]
    fn deletion_variants_retain_each_child() {
        let r = ModuleRegistry::builtin("microworld39").unwrap();
        let p = ProgramTree::parse_expr("and_(exist(scene), not_(END))", &r).unwrap();
        let keys: HashSet<String> =
            mutate(&p, NodeAddress(0), &r).unwrap().iter().map(|m| canonical_key(m, &r)).collect();
        assert!(keys.contains("exist scene"));
        assert!(keys.contains("not_ END"));
        assert!(keys.contains("or_ exist scene not_ END"));
    }

    #[test]
    fn bfs_distances() {
        let r = four();
        let p = |s: &str| ProgramTree::parse(s, &r).unwrap();
        assert_eq!(brute_force_distance(&p("count scene"), &p("count scene"), 3, &r), Some(0));
        assert_eq!(brute_force_distance(&p("count scene"), &p("exist scene"), 3, &r), Some(1));
        assert_eq!(brute_force_distance(&p("scene"), &p("count filter_red scene"), 3, &r), Some(2));
        assert_eq!(brute_force_distance(&p("scene"), &p("count filter_red scene"), 1, &r), None);
    }

    #[test]
    fn random_executable_programs_type_check() {
        let r = ModuleRegistry::builtin("microworld39").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = random_executable(&r, 6, 0.4, &mut rng).unwrap();
            assert_eq!(crate::dsl::count_mismatches(&p, &r), Ok(0));
            assert!(p.depth(&r) <= 6);
        }
    }

    #[test]
    fn unreachable_answer_type() {
        let r = ModuleRegistry::builtin("microworld10").unwrap().restrict_names(&["count", "exist"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(random_executable(&r, 6, 0.5, &mut rng).is_none());
    }
}
