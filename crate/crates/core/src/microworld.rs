//! Discrete object-scene world: deterministic module executor, accuracy and
//! exact-match scoring, and a seeded question/dataset generator.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{count_mismatches, ModuleId, ModuleRegistry};
use crate::program::{random_executable, ProgramTree, SequenceError, Token};

pub const GRID: u8 = 16;
pub const MAX_OBJECTS: usize = 10;

macro_rules! attr_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
            pub fn parse(s: &str) -> Option<Self> {
                match s { $($text => Some($name::$variant),)+ _ => None }
            }
        }
    };
}

attr_enum!(Color {
    Gray => "gray", Red => "red", Blue => "blue", Green => "green",
    Brown => "brown", Purple => "purple", Cyan => "cyan", Yellow => "yellow",
});
attr_enum!(Shape { Cube => "cube", Sphere => "sphere", Cylinder => "cylinder" });
attr_enum!(Size { Large => "large", Small => "small" });

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u8,
    pub color: Color,
    pub shape: Shape,
    pub size: Size,
    pub x: u8,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Random scene with 1..=10 objects at distinct grid positions. Object ids
    /// are their indices.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Scene {
        let n = rng.gen_range(1..=MAX_OBJECTS);
        let cells: Vec<u16> =
            rand::seq::index::sample(rng, GRID as usize * GRID as usize, n).into_iter().map(|c| c as u16).collect();
        let objects = cells
            .into_iter()
            .enumerate()
            .map(|(i, cell)| SceneObject {
                id: i as u8,
                color: *Color::ALL.choose(rng).unwrap(),
                shape: *Shape::ALL.choose(rng).unwrap(),
                size: *Size::ALL.choose(rng).unwrap(),
                x: (cell % GRID as u16) as u8,
                y: (cell / GRID as u16) as u8,
            })
            .collect();
        Scene { objects }
    }

    fn all(&self) -> u16 {
        ((1u32 << self.objects.len()) - 1) as u16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Attribute {
    Color(Color),
    Shape(Shape),
    Size(Size),
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Color(c) => c.as_str(),
            Attribute::Shape(s) => s.as_str(),
            Attribute::Size(s) => s.as_str(),
        })
    }
}

/// Result of executing a program on a scene. Object sets are bit masks over
/// object ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Value {
    ObjectSet(u16),
    Object(u8),
    Integer(i64),
    Boolean(bool),
    Attribute(Attribute),
    NoneValue,
    /// Runtime failure (e.g. `unique` on a non-singleton). Never a correct
    /// answer.
    Abort,
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::ObjectSet(_) => "ObjectSet",
            Value::Object(_) => "Object",
            Value::Integer(_) => "Integer",
            Value::Boolean(_) => "Boolean",
            Value::Attribute(_) => "Attribute",
            Value::NoneValue => "None",
            Value::Abort => "Abort",
        }
    }

    /// Answer equality: `Abort` matches nothing, not even itself.
    pub fn matches(&self, other: &Value) -> bool {
        !matches!(self, Value::Abort) && self == other
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("program has {0} type mismatch(es) and cannot be executed")]
    NotExecutable(usize),
    #[error("module `{0}` has no micro-world semantics")]
    NoSemantics(String),
    #[error("module `{module}` received a {got} value")]
    TypeMismatch { module: String, got: &'static str },
    #[error("module `{0}` is not in the registry")]
    UnknownModule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AttrKind {
    Color,
    Shape,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Left,
    Right,
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Scene,
    Filter(Attribute),
    Count,
    Exist,
    Unique,
    Query(AttrKind),
    Relate(Direction),
    Same(AttrKind),
    EqualInt,
    Greater,
    Less,
    And,
    Or,
    Not,
    Union,
    Intersect,
    Except,
    EqualAttr(AttrKind),
}

fn attr_kind(s: &str) -> Option<AttrKind> {
    match s {
        "color" => Some(AttrKind::Color),
        "shape" => Some(AttrKind::Shape),
        "size" => Some(AttrKind::Size),
        _ => None,
    }
}

fn parse_op(name: &str) -> Option<Op> {
    let op = match name {
        "scene" => Op::Scene,
        "count" => Op::Count,
        "exist" => Op::Exist,
        "unique" => Op::Unique,
        "equal_int" => Op::EqualInt,
        "greater" => Op::Greater,
        "less" => Op::Less,
        "and_" => Op::And,
        "or_" => Op::Or,
        "not_" => Op::Not,
        "union" => Op::Union,
        "intersect" => Op::Intersect,
        "except" => Op::Except,
        "relate_left" => Op::Relate(Direction::Left),
        "relate_right" => Op::Relate(Direction::Right),
        "relate_above" => Op::Relate(Direction::Above),
        "relate_below" => Op::Relate(Direction::Below),
        _ => {
            if let Some(rest) = name.strip_prefix("filter_") {
                let attr = Color::parse(rest)
                    .map(Attribute::Color)
                    .or_else(|| Shape::parse(rest).map(Attribute::Shape))
                    .or_else(|| Size::parse(rest).map(Attribute::Size))?;
                Op::Filter(attr)
            } else if let Some(rest) = name.strip_prefix("query_") {
                Op::Query(attr_kind(rest)?)
            } else if let Some(rest) = name.strip_prefix("same_") {
                Op::Same(attr_kind(rest)?)
            } else {
                let rest = name.strip_prefix("equal_")?;
                Op::EqualAttr(attr_kind(rest)?)
            }
        }
    };
    Some(op)
}

/// Binds registry modules to micro-world semantics.
#[derive(Debug, Clone)]
pub struct Executor {
    ops: Vec<Option<Op>>,
    registry: ModuleRegistry,
}

impl Executor {
    pub fn new(registry: &ModuleRegistry) -> Self {
        let ops = (0..registry.universe_len())
            .map(|i| parse_op(registry.name(ModuleId(i as u16))))
            .collect();
        Executor { ops, registry: registry.clone() }
    }

    pub fn registry(&self) -> &ModuleRegistry {
        &self.registry
    }

    /// Executes a program that has zero type mismatches.
    pub fn execute(&self, program: &ProgramTree, scene: &Scene) -> Result<Value, ExecError> {
        let mismatches = count_mismatches(program, &self.registry)
            .map_err(|e| ExecError::UnknownModule(e.to_string()))?;
        if mismatches > 0 {
            return Err(ExecError::NotExecutable(mismatches));
        }
        self.execute_unchecked(program, scene)
    }

    /// Executes without the up-front type check. Ill-typed inputs surface as
    /// [`ExecError::TypeMismatch`].
    pub fn execute_unchecked(&self, program: &ProgramTree, scene: &Scene) -> Result<Value, ExecError> {
        let mut pos = 0;
        self.eval(program.tokens(), &mut pos, scene)
    }

    fn eval(&self, tokens: &[Token], pos: &mut usize, scene: &Scene) -> Result<Value, ExecError> {
        let token = tokens[*pos];
        *pos += 1;
        let id = match token {
            Token::End => return Ok(Value::NoneValue),
            Token::Module(id) => id,
        };
        let op = self.ops[id.index()].ok_or_else(|| ExecError::NoSemantics(self.registry.name(id).into()))?;
        let arity = self.registry.arity(id);
        let mut args = [Value::NoneValue; 2];
        let mut abort = false;
        for slot in args.iter_mut().take(arity) {
            *slot = self.eval(tokens, pos, scene)?;
            abort |= *slot == Value::Abort;
        }
        if abort {
            return Ok(Value::Abort);
        }
        let bad = |v: &Value| ExecError::TypeMismatch { module: self.registry.name(id).to_string(), got: v.type_name() };
        let set = |v: &Value| match v {
            Value::ObjectSet(s) => Ok(*s),
            other => Err(bad(other)),
        };
        let obj = |v: &Value| match v {
            Value::Object(o) => Ok(*o as usize),
            other => Err(bad(other)),
        };
        let int = |v: &Value| match v {
            Value::Integer(i) => Ok(*i),
            other => Err(bad(other)),
        };
        let boolean = |v: &Value| match v {
            Value::Boolean(b) => Ok(*b),
            other => Err(bad(other)),
        };
        let attr = |v: &Value| match v {
            Value::Attribute(a) => Ok(*a),
            other => Err(bad(other)),
        };
        let objects = &scene.objects;
        let select = |pred: &dyn Fn(&SceneObject) -> bool| -> u16 {
            objects.iter().enumerate().filter(|(_, o)| pred(o)).fold(0u16, |m, (i, _)| m | (1 << i))
        };
        let attr_of = |o: &SceneObject, kind: AttrKind| match kind {
            AttrKind::Color => Attribute::Color(o.color),
            AttrKind::Shape => Attribute::Shape(o.shape),
            AttrKind::Size => Attribute::Size(o.size),
        };
        let value = match op {
            Op::Scene => Value::ObjectSet(scene.all()),
            Op::Filter(a) => {
                let s = set(&args[0])?;
                let kind = match a {
                    Attribute::Color(_) => AttrKind::Color,
                    Attribute::Shape(_) => AttrKind::Shape,
                    Attribute::Size(_) => AttrKind::Size,
                };
                Value::ObjectSet(s & select(&|o| attr_of(o, kind) == a))
            }
            Op::Count => Value::Integer(set(&args[0])?.count_ones() as i64),
            Op::Exist => Value::Boolean(set(&args[0])? != 0),
            Op::Unique => {
                let s = set(&args[0])?;
                if s.count_ones() == 1 {
                    Value::Object(s.trailing_zeros() as u8)
                } else {
                    Value::Abort
                }
            }
            Op::Query(kind) => Value::Attribute(attr_of(&objects[obj(&args[0])?], kind)),
            Op::Relate(dir) => {
                let o = &objects[obj(&args[0])?];
                Value::ObjectSet(select(&|p| match dir {
                    Direction::Left => p.x < o.x,
                    Direction::Right => p.x > o.x,
                    Direction::Above => p.y < o.y,
                    Direction::Below => p.y > o.y,
                }))
            }
            Op::Same(kind) => {
                let i = obj(&args[0])?;
                let target = attr_of(&objects[i], kind);
                Value::ObjectSet(select(&|p| p.id as usize != i && attr_of(p, kind) == target))
            }
            Op::EqualInt => Value::Boolean(int(&args[0])? == int(&args[1])?),
            Op::Greater => Value::Boolean(int(&args[0])? > int(&args[1])?),
            Op::Less => Value::Boolean(int(&args[0])? < int(&args[1])?),
            Op::And => Value::Boolean(boolean(&args[0])? && boolean(&args[1])?),
            Op::Or => Value::Boolean(boolean(&args[0])? || boolean(&args[1])?),
            Op::Not => Value::Boolean(!boolean(&args[0])?),
            Op::Union => Value::ObjectSet(set(&args[0])? | set(&args[1])?),
            Op::Intersect => Value::ObjectSet(set(&args[0])? & set(&args[1])?),
            Op::Except => Value::ObjectSet(set(&args[0])? & !set(&args[1])?),
            Op::EqualAttr(kind) => {
                let (a, b) = (attr(&args[0])?, attr(&args[1])?);
                let same_kind = matches!(
                    (kind, a),
                    (AttrKind::Color, Attribute::Color(_))
                        | (AttrKind::Shape, Attribute::Shape(_))
                        | (AttrKind::Size, Attribute::Size(_))
                );
                Value::Boolean(same_kind && a == b)
            }
        };
        Ok(value)
    }

    /// Fraction of scenes on which the program's output matches the paired
    /// answer.
    pub fn accuracy(&self, program: &ProgramTree, triplet: &QuestionTriplet) -> Result<f64, ExecError> {
        let mismatches = count_mismatches(program, &self.registry)
            .map_err(|e| ExecError::UnknownModule(e.to_string()))?;
        if mismatches > 0 {
            return Err(ExecError::NotExecutable(mismatches));
        }
        let mut correct = 0usize;
        for (scene, answer) in triplet.scenes.iter().zip(&triplet.answers) {
            if self.execute_unchecked(program, scene)?.matches(answer) {
                correct += 1;
            }
        }
        Ok(correct as f64 / triplet.scenes.len().max(1) as f64)
    }
}

/// 1.0 iff the two programs are identical.
pub fn exact_match_oracle(program: &ProgramTree, gt: &ProgramTree) -> f64 {
    if program == gt {
        1.0
    } else {
        0.0
    }
}

/// A question with its evaluation scenes, their answers and (optionally) the
/// program that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionTriplet {
    pub id: usize,
    pub question: Vec<String>,
    pub scenes: Vec<Scene>,
    pub answers: Vec<Value>,
    pub gt_program: Option<ProgramTree>,
}

impl QuestionTriplet {
    pub fn question_text(&self) -> String {
        self.question.join(" ")
    }
}

/// Phrase template for a module; `{0}`, `{1}` mark where the renderings of
/// its inputs go.
fn phrase(name: &str) -> String {
    let fixed = match name {
        "scene" => "objects",
        "count" => "how many {0}",
        "exist" => "are there any {0}",
        "unique" => "the {0}",
        "equal_int" => "is the number {0} equal to {1}",
        "greater" => "is the number {0} greater than {1}",
        "less" => "is the number {0} less than {1}",
        "and_" => "both {0} and {1}",
        "or_" => "either {0} or {1}",
        "not_" => "it is not true that {0}",
        "union" => "{0} together with {1}",
        "intersect" => "{0} that are also {1}",
        "except" => "{0} excluding {1}",
        _ => "",
    };
    if !fixed.is_empty() {
        return fixed.to_string();
    }
    if let Some(rest) = name.strip_prefix("filter_") {
        format!("{rest} {{0}}")
    } else if let Some(rest) = name.strip_prefix("query_") {
        format!("what {rest} is {{0}}")
    } else if let Some(rest) = name.strip_prefix("relate_") {
        let word = match rest {
            "left" => "left of",
            "right" => "right of",
            "above" => "above",
            "below" => "below",
            other => other,
        };
        format!("things {word} {{0}}")
    } else if let Some(rest) = name.strip_prefix("same_") {
        format!("things with the same {rest} as {{0}}")
    } else if let Some(rest) = name.strip_prefix("equal_") {
        format!("does {{0}} have the same {rest} as {{1}}")
    } else {
        let words = name.replace('_', " ");
        let slots: Vec<String> = (0..4).map(|i| format!("{{{i}}}")).collect();
        format!("{words} {}", slots.join(" "))
    }
}

/// Renders a question by composing each module's phrase around the
/// renderings of its inputs. `END` inputs render as nothing.
pub fn render_question(program: &ProgramTree, registry: &ModuleRegistry) -> Vec<String> {
    fn go(tokens: &[Token], pos: &mut usize, reg: &ModuleRegistry) -> String {
        let t = tokens[*pos];
        *pos += 1;
        let id = match t {
            Token::End => return String::new(),
            Token::Module(id) => id,
        };
        let children: Vec<String> = (0..reg.arity(id)).map(|_| go(tokens, pos, reg)).collect();
        let mut text = phrase(reg.name(id));
        for i in 0..4 {
            let slot = format!("{{{i}}}");
            text = text.replace(&slot, children.get(i).map(String::as_str).unwrap_or(""));
        }
        text
    }
    go(program.tokens(), &mut 0, registry).split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("could not generate a non-degenerate question after {0} attempts")]
    GenerationExhausted(usize),
    #[error("registry cannot produce any answer-typed program")]
    NoAnswerType,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub count: usize,
    pub scenes_per_question: usize,
    pub seed: u64,
    pub max_depth: usize,
    /// Probability of closing a slot with a leaf when possible; larger values
    /// give shorter programs.
    pub leaf_bias: f64,
}

impl GenConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        GenConfig { count, scenes_per_question: 10, seed, max_depth: 6, leaf_bias: 0.5 }
    }
}

pub const GEN_RETRY_CAP: usize = 1000;
const SCENE_RETRIES: usize = 50;

/// Deterministic dataset generation: sample an executable program, render its
/// question, sample scenes on which it does not abort, and record the answers.
/// Programs whose answers are constant across all scenes are rejected.
pub fn gen_dataset(registry: &ModuleRegistry, config: &GenConfig) -> Result<Vec<QuestionTriplet>, GenError> {
    let exec = Executor::new(registry);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.count);
    for id in 0..config.count {
        let mut attempts = 0;
        let triplet = loop {
            if attempts == GEN_RETRY_CAP {
                return Err(GenError::GenerationExhausted(attempts));
            }
            attempts += 1;
            let program = random_executable(registry, config.max_depth, config.leaf_bias, &mut rng)
                .ok_or(GenError::NoAnswerType)?;
            if let Some(t) = sample_scenes(&exec, &program, config.scenes_per_question, &mut rng)? {
                break QuestionTriplet {
                    id,
                    question: render_question(&program, registry),
                    scenes: t.0,
                    answers: t.1,
                    gt_program: Some(program),
                };
            }
        };
        out.push(triplet);
    }
    Ok(out)
}

type ScenesAndAnswers = (Vec<Scene>, Vec<Value>);

fn sample_scenes<R: Rng>(
    exec: &Executor,
    program: &ProgramTree,
    n: usize,
    rng: &mut R,
) -> Result<Option<ScenesAndAnswers>, ExecError> {
    let mut scenes = Vec::with_capacity(n);
    let mut answers = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _ in 0..SCENE_RETRIES {
            let scene = Scene::random(rng);
            let v = exec.execute(program, &scene)?;
            if v != Value::Abort {
                found = Some((scene, v));
                break;
            }
        }
        match found {
            Some((s, v)) => {
                scenes.push(s);
                answers.push(v);
            }
            None => return Ok(None),
        }
    }
    if n > 1 && answers.iter().all(|a| *a == answers[0]) {
        return Ok(None);
    }
    Ok(Some((scenes, answers)))
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletRecord {
    id: usize,
    question: String,
    program: Option<String>,
    scenes: Vec<Scene>,
    answers: Vec<Value>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("line {line}: program: {err}")]
    Program { line: usize, err: SequenceError },
}

pub fn write_dataset<W: Write>(
    out: &mut W,
    dataset: &[QuestionTriplet],
    registry: &ModuleRegistry,
) -> std::io::Result<()> {
    for t in dataset {
        let rec = TripletRecord {
            id: t.id,
            question: t.question_text(),
            program: t.gt_program.as_ref().map(|p| p.to_text(registry)),
            scenes: t.scenes.clone(),
            answers: t.answers.clone(),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R, registry: &ModuleRegistry) -> Result<Vec<QuestionTriplet>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TripletRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Format { line: i + 1, msg: e.to_string() })?;
        if rec.scenes.len() != rec.answers.len() {
            return Err(DatasetError::Format { line: i + 1, msg: "scenes and answers differ in length".into() });
        }
        let gt_program = rec
            .program
            .map(|p| ProgramTree::parse(&p, registry))
            .transpose()
            .map_err(|err| DatasetError::Program { line: i + 1, err })?;
        out.push(QuestionTriplet {
            id: rec.id,
            question: rec.question.split_whitespace().map(str::to_string).collect(),
            scenes: rec.scenes,
            answers: rec.answers,
            gt_program,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, registry: &ModuleRegistry) -> Result<Vec<QuestionTriplet>, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file), registry)
}

/// Mean program length (nodes) of the ground-truth programs.
pub fn mean_program_length(dataset: &[QuestionTriplet]) -> f64 {
    let lens: Vec<usize> = dataset.iter().filter_map(|t| t.gt_program.as_ref().map(|p| p.len())).collect();
    if lens.is_empty() {
        0.0
    } else {
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    }
}

/// Histogram of ground-truth lengths, handy for dataset summaries.
pub fn length_histogram(dataset: &[QuestionTriplet]) -> HashMap<usize, usize> {
    let mut h = HashMap::new();
    for t in dataset {
        if let Some(p) = &t.gt_program {
            *h.entry(p.len()).or_insert(0) += 1;
        }
    }
    h
}
