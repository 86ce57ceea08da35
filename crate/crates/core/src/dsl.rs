//! Module registry, type-mismatch counting and tolerance-gated legality.
//!
//! A registry owns the full table of module signatures (the "universe") and
//! an active subset. Restricting a registry keeps module ids stable, so a
//! program built against the full registry can be checked against any of its
//! restrictions.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::{ProgramTree, Token};

/// Name of the distinguished type produced by `END` leaves.
pub const NONE_TYPE: &str = "None";

/// Maximum number of distinct types a registry may declare.
pub const MAX_TYPES: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("registry declares no modules")]
    EmptyRegistry,
    #[error("registry declares more than {MAX_TYPES} types")]
    TooManyTypes,
    #[error("malformed registry document: {0}")]
    Parse(String),
    #[error("unknown builtin registry `{0}`")]
    UnknownBuiltin(String),
}

/// Symbolic type identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypeId(pub String);

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Index of a module within the registry universe. Stable across restrictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModuleId(pub u16);

impl ModuleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bit set over the registry's type indices.
pub type TypeMask = u64;

#[derive(Debug, Clone)]
pub struct ModuleSig {
    pub name: String,
    /// One accepted-type mask per input slot.
    pub inputs: Vec<TypeMask>,
    pub output: usize,
}

impl ModuleSig {
    pub fn arity(&self) -> usize {
        self.inputs.len()
    }
}

#[derive(Debug)]
struct Universe {
    types: Vec<TypeId>,
    none_type: usize,
    answer_mask: TypeMask,
    modules: Vec<ModuleSig>,
    by_name: HashMap<String, ModuleId>,
}

/// Registry document as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryDocument {
    pub types: Vec<String>,
    pub answer_types: Vec<String>,
    pub modules: Vec<ModuleDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModuleDocument {
    pub name: String,
    pub inputs: Vec<Vec<String>>,
    pub output: String,
}

#[derive(Debug, Clone)]
pub struct ModuleRegistry {
    universe: Arc<Universe>,
    active: Arc<[ModuleId]>,
    active_mask: Arc<[bool]>,
}

const MICROWORLD10: &str = include_str!("../registries/microworld10.json");
const MICROWORLD39: &str = include_str!("../registries/microworld39.json");

/// Names of the registries compiled into the crate.
pub const BUILTIN_REGISTRIES: [&str; 2] = ["microworld10", "microworld39"];

impl ModuleRegistry {
    pub fn builtin(name: &str) -> Result<Self, RegistryError> {
        match name {
            "microworld10" => Self::from_json(MICROWORLD10),
            "microworld39" => Self::from_json(MICROWORLD39),
            other => Err(RegistryError::UnknownBuiltin(other.to_string())),
        }
    }

    /// Resolves either a builtin name or a path to a JSON registry document.
    pub fn resolve(name_or_path: &str) -> Result<Self, RegistryError> {
        if BUILTIN_REGISTRIES.contains(&name_or_path) {
            return Self::builtin(name_or_path);
        }
        let text = std::fs::read_to_string(name_or_path)
            .map_err(|e| RegistryError::Parse(format!("{name_or_path}: {e}")))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let doc: RegistryDocument =
            serde_json::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        load_registry(&doc)
    }

    pub fn to_document(&self) -> RegistryDocument {
        let u = &self.universe;
        RegistryDocument {
            types: u.types.iter().map(|t| t.0.clone()).collect(),
            answer_types: self.mask_names(u.answer_mask),
            modules: self
                .modules()
                .map(|(_, sig)| ModuleDocument {
                    name: sig.name.clone(),
                    inputs: sig.inputs.iter().map(|m| self.mask_names(*m)).collect(),
                    output: u.types[sig.output].0.clone(),
                })
                .collect(),
        }
    }

    fn mask_names(&self, mask: TypeMask) -> Vec<String> {
        self.universe
            .types
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, t)| t.0.clone())
            .collect()
    }

    /// Active modules in document order.
    pub fn modules(&self) -> impl Iterator<Item = (ModuleId, &ModuleSig)> + '_ {
        self.active.iter().map(move |&id| (id, &self.universe.modules[id.index()]))
    }

    pub fn active_ids(&self) -> &[ModuleId] {
        &self.active
    }

    /// Number of active modules.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Number of modules in the universe, active or not.
    pub fn universe_len(&self) -> usize {
        self.universe.modules.len()
    }

    pub fn is_active(&self, id: ModuleId) -> bool {
        self.active_mask.get(id.index()).copied().unwrap_or(false)
    }

    pub fn sig(&self, id: ModuleId) -> &ModuleSig {
        &self.universe.modules[id.index()]
    }

    pub fn arity(&self, id: ModuleId) -> usize {
        self.universe.modules[id.index()].inputs.len()
    }

    pub fn name(&self, id: ModuleId) -> &str {
        &self.universe.modules[id.index()].name
    }

    pub fn token_name(&self, token: Token) -> &str {
        match token {
            Token::Module(id) => self.name(id),
            Token::End => crate::program::END_TOKEN,
        }
    }

    /// Looks up an active module by name.
    pub fn lookup(&self, name: &str) -> Option<ModuleId> {
        self.universe.by_name.get(name).copied().filter(|id| self.is_active(*id))
    }

    /// Looks up a module by name regardless of whether it is active.
    pub fn lookup_universe(&self, name: &str) -> Option<ModuleId> {
        self.universe.by_name.get(name).copied()
    }

    pub fn types(&self) -> &[TypeId] {
        &self.universe.types
    }

    pub fn type_name(&self, index: usize) -> &str {
        &self.universe.types[index].0
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.universe.types.iter().position(|t| t.0 == name)
    }

    pub fn none_type(&self) -> usize {
        self.universe.none_type
    }

    pub fn answer_mask(&self) -> TypeMask {
        self.universe.answer_mask
    }

    pub fn is_answer_type(&self, ty: usize) -> bool {
        self.universe.answer_mask & (1 << ty) != 0
    }

    /// Restricts the active set to `ids` (kept in document order). Ids that are
    /// not active in `self` are ignored.
    pub fn restrict(&self, ids: &[ModuleId]) -> ModuleRegistry {
        let mut mask = vec![false; self.universe.modules.len()];
        for id in ids {
            if self.is_active(*id) {
                mask[id.index()] = true;
            }
        }
        let active: Vec<ModuleId> = (0..mask.len())
            .filter(|&i| mask[i])
            .map(|i| ModuleId(i as u16))
            .collect();
        ModuleRegistry {
            universe: Arc::clone(&self.universe),
            active: active.into(),
            active_mask: mask.into(),
        }
    }

    /// Restriction by module names; unknown names are ignored.
    pub fn restrict_names(&self, names: &[&str]) -> ModuleRegistry {
        let ids: Vec<ModuleId> = names.iter().filter_map(|n| self.lookup(n)).collect();
        self.restrict(&ids)
    }

    /// Whether both registries share the same module universe.
    pub fn same_universe(&self, other: &ModuleRegistry) -> bool {
        Arc::ptr_eq(&self.universe, &other.universe)
    }
}

/// Validates a registry document. Module ordering follows the document.
pub fn load_registry(doc: &RegistryDocument) -> Result<ModuleRegistry, RegistryError> {
    if doc.modules.is_empty() {
        return Err(RegistryError::EmptyRegistry);
    }
    let mut types: Vec<TypeId> = Vec::new();
    for t in &doc.types {
        if types.iter().any(|x| &x.0 == t) {
            return Err(RegistryError::DuplicateName(t.clone()));
        }
        types.push(TypeId(t.clone()));
    }
    if !types.iter().any(|t| t.0 == NONE_TYPE) {
        types.push(TypeId(NONE_TYPE.to_string()));
    }
    if types.len() > MAX_TYPES {
        return Err(RegistryError::TooManyTypes);
    }
    let none_type = types.iter().position(|t| t.0 == NONE_TYPE).unwrap();
    let type_of = |name: &str| -> Result<usize, RegistryError> {
        types
            .iter()
            .position(|t| t.0 == name)
            .ok_or_else(|| RegistryError::UnknownType(name.to_string()))
    };
    let mask_of = |names: &[String]| -> Result<TypeMask, RegistryError> {
        names.iter().try_fold(0u64, |acc, n| Ok(acc | (1u64 << type_of(n)?)))
    };

    let answer_mask = mask_of(&doc.answer_types)?;
    let mut modules = Vec::with_capacity(doc.modules.len());
    let mut by_name = HashMap::new();
    for (i, m) in doc.modules.iter().enumerate() {
        if m.name == crate::program::END_TOKEN || m.name.is_empty() || m.name.contains(char::is_whitespace)
        {
            return Err(RegistryError::Parse(format!("invalid module name `{}`", m.name)));
        }
        if by_name.insert(m.name.clone(), ModuleId(i as u16)).is_some() {
            return Err(RegistryError::DuplicateName(m.name.clone()));
        }
        let inputs = m.inputs.iter().map(|slot| mask_of(slot)).collect::<Result<Vec<_>, _>>()?;
        modules.push(ModuleSig { name: m.name.clone(), inputs, output: type_of(&m.output)? });
    }
    let n = modules.len();
    Ok(ModuleRegistry {
        universe: Arc::new(Universe { types, none_type, answer_mask, modules, by_name }),
        active: (0..n).map(|i| ModuleId(i as u16)).collect::<Vec<_>>().into(),
        active_mask: vec![true; n].into(),
    })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LegalityError {
    #[error("module `{0}` is not in the registry")]
    UnknownModule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalityReport {
    pub mismatch_count: usize,
    pub executable: bool,
    pub within_tolerance: bool,
}

/// Counts slot-type mismatches plus one for a root whose output is not an
/// answer type. `END` leaves produce the `None` type.
pub fn count_mismatches(
    program: &ProgramTree,
    registry: &ModuleRegistry,
) -> Result<usize, LegalityError> {
    enum Slot {
        Root,
        Accepts(TypeMask),
    }
    let mut stack = vec![Slot::Root];
    let mut mismatches = 0;
    for &token in program.tokens() {
        let slot = stack.pop().expect("structurally legal program");
        let out = match token {
            Token::End => registry.none_type(),
            Token::Module(id) => {
                if !registry.is_active(id) {
                    return Err(LegalityError::UnknownModule(registry.name(id).to_string()));
                }
                registry.sig(id).output
            }
        };
        let ok = match slot {
            Slot::Root => registry.is_answer_type(out),
            Slot::Accepts(mask) => mask & (1 << out) != 0,
        };
        if !ok {
            mismatches += 1;
        }
        if let Token::Module(id) = token {
            for &mask in registry.sig(id).inputs.iter().rev() {
                stack.push(Slot::Accepts(mask));
            }
        }
    }
    Ok(mismatches)
}

pub fn legality_report(
    program: &ProgramTree,
    registry: &ModuleRegistry,
    tolerance: usize,
) -> Result<LegalityReport, LegalityError> {
    let mismatch_count = count_mismatches(program, registry)?;
    Ok(LegalityReport {
        mismatch_count,
        executable: mismatch_count == 0,
        within_tolerance: mismatch_count <= tolerance,
    })
}

/// True iff the program only uses active modules and has at most `tolerance`
/// type mismatches.
pub fn legality_check(program: &ProgramTree, registry: &ModuleRegistry, tolerance: usize) -> bool {
    matches!(count_mismatches(program, registry), Ok(n) if n <= tolerance)
}

/// Types that some program over the active modules can produce with zero
/// mismatches, with the minimum node count needed for each (`END` counts as
/// a node). `None` is always producible by a single `END` leaf.
pub fn min_sizes(registry: &ModuleRegistry) -> Vec<Option<usize>> {
    let n_types = registry.types().len();
    let mut best: Vec<Option<usize>> = vec![None; n_types];
    best[registry.none_type()] = Some(1);
    loop {
        let mut changed = false;
        for (_, sig) in registry.modules() {
            let mut total = Some(1usize);
            for &mask in &sig.inputs {
                let slot_min = (0..n_types)
                    .filter(|t| mask & (1 << t) != 0)
                    .filter_map(|t| best[t])
                    .min();
                total = match (total, slot_min) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
            }
            if let Some(size) = total {
                if best[sig.output].is_none_or(|b| size < b) {
                    best[sig.output] = Some(size);
                    changed = true;
                }
            }
        }
        if !changed {
            return best;
        }
    }
}

/// Set of type names a mask covers, for diagnostics.
pub fn mask_to_names(registry: &ModuleRegistry, mask: TypeMask) -> BTreeSet<String> {
    registry
        .types()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, t)| t.0.clone())
        .collect()
}
