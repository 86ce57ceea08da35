//! Python bindings: registries, programs, datasets, single searches, the
//! training loop, the REINFORCE baseline and curve summaries.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gbhs::dsl::{legality_report, ModuleRegistry};
use gbhs::microworld::{gen_dataset, load_dataset, write_dataset, Executor, GenConfig, QuestionTriplet};
use gbhs::predictors::{NGramPredictor, ProgramPredictor};
use gbhs::report::{summarize, MethodCurves};
use gbhs::reinforce::{run_baseline, PolicyConfig};
use gbhs::search::{run_search, Evaluator, ExactMatch, SceneAccuracy, SearchConfig};
use gbhs::training::{run_training, CurvePoint, EvalMode, LoopConfig};
use gbhs::{canonical_key, mutate, to_sequence, NodeAddress, ProgramTree};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<EvalMode> {
    match mode {
        "exact-match" => Ok(EvalMode::ExactMatch),
        "accuracy" => Ok(EvalMode::Accuracy),
        other => Err(PyValueError::new_err(format!("unknown mode `{other}`, expected exact-match or accuracy"))),
    }
}

type Curve = Vec<(u64, usize)>;

fn curve_tuples(curve: &[CurvePoint]) -> Curve {
    curve.iter().map(|p| (p.evaluations, p.correct_found)).collect()
}

/// A typed module inventory, built in (`microworld10`, `microworld39`) or
/// loaded from a JSON file.
#[pyclass(name = "Registry", module = "gbhs_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRegistry {
    inner: ModuleRegistry,
}

#[pymethods]
impl PyRegistry {
    #[new]
    fn new(name_or_path: &str) -> PyResult<Self> {
        Ok(PyRegistry { inner: ModuleRegistry::resolve(name_or_path).map_err(value_err)? })
    }

    fn module_names(&self) -> Vec<String> {
        self.inner.modules().map(|(_, s)| s.name.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Registry({} modules)", self.inner.len())
    }
}

/// A program tree over a registry.
#[pyclass(name = "Program", module = "gbhs_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProgram {
    inner: ProgramTree,
    registry: ModuleRegistry,
}

impl PyProgram {
    fn wrap(&self, inner: ProgramTree) -> PyProgram {
        PyProgram { inner, registry: self.registry.clone() }
    }
}

#[pymethods]
impl PyProgram {
    /// Parses pre-order tokens (`count filter_red scene`) or nested calls
    /// (`count(filter_red(scene))`).
    #[new]
    fn new(registry: &PyRegistry, text: &str) -> PyResult<Self> {
        let reg = &registry.inner;
        let inner = if text.contains('(') { ProgramTree::parse_expr(text, reg) } else { ProgramTree::parse(text, reg) }
            .map_err(value_err)?;
        Ok(PyProgram { inner, registry: reg.clone() })
    }

    fn to_sequence(&self) -> Vec<String> {
        to_sequence(&self.inner, &self.registry)
    }

    fn key(&self) -> String {
        canonical_key(&self.inner, &self.registry)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// One-edit variants at the node with the given pre-order index.
    fn mutate(&self, address: usize) -> PyResult<Vec<PyProgram>> {
        let out = mutate(&self.inner, NodeAddress(address), &self.registry).map_err(value_err)?;
        Ok(out.into_iter().map(|p| self.wrap(p)).collect())
    }

    /// `(mismatch_count, executable, within_tolerance)`.
    fn legality(&self, tolerance: usize) -> PyResult<(usize, bool, bool)> {
        let r = legality_report(&self.inner, &self.registry, tolerance).map_err(value_err)?;
        Ok((r.mismatch_count, r.executable, r.within_tolerance))
    }

    fn __eq__(&self, other: &PyProgram) -> bool {
        self.inner == other.inner
    }

    fn __hash__(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.inner.hash(&mut h);
        h.finish()
    }

    fn __str__(&self) -> String {
        self.inner.to_text(&self.registry)
    }

    fn __repr__(&self) -> String {
        format!("Program({:?})", self.inner.display(&self.registry).to_string())
    }
}

/// Questions with scenes, answers and reference programs.
#[pyclass(name = "Dataset", module = "gbhs_py", frozen, skip_from_py_object)]
struct PyDataset {
    items: Vec<QuestionTriplet>,
    registry: ModuleRegistry,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (registry, count, seed, leaf_bias = 0.5, scenes = 10, max_depth = 6))]
    fn generate(registry: &PyRegistry, count: usize, seed: u64, leaf_bias: f64, scenes: usize, max_depth: usize) -> PyResult<Self> {
        if !(0.0..=1.0).contains(&leaf_bias) || scenes == 0 || max_depth == 0 {
            return Err(PyValueError::new_err("leaf_bias must lie in [0, 1]; scenes and max_depth must be positive"));
        }
        let config = GenConfig { count, scenes_per_question: scenes, seed, max_depth, leaf_bias };
        let items = gen_dataset(&registry.inner, &config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(PyDataset { items, registry: registry.inner.clone() })
    }

    #[staticmethod]
    fn load(registry: &PyRegistry, path: &str) -> PyResult<Self> {
        let items = load_dataset(std::path::Path::new(path), &registry.inner).map_err(value_err)?;
        Ok(PyDataset { items, registry: registry.inner.clone() })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(value_err)?);
        write_dataset(&mut f, &self.items, &self.registry).map_err(value_err)?;
        std::io::Write::flush(&mut f).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.items.len()
    }

    fn question(&self, index: usize) -> PyResult<String> {
        self.get(index).map(|q| q.question_text())
    }

    fn program(&self, index: usize) -> PyResult<Option<PyProgram>> {
        let q = self.get(index)?;
        Ok(q.gt_program.clone().map(|inner| PyProgram { inner, registry: self.registry.clone() }))
    }

    /// Searches one question from an untrained predictor. Returns the best
    /// program, its score, the evaluations spent and the expansions made.
    #[pyo3(signature = (index, mode = "exact-match", max_step = 1000, tolerance = 1, seed = 0))]
    fn search(&self, index: usize, mode: &str, max_step: usize, tolerance: usize, seed: u64) -> PyResult<(PyProgram, f64, u64, usize)> {
        let q = self.get(index)?;
        let config = SearchConfig { max_step, tolerance, rng_seed: seed, ..SearchConfig::default() };
        let predictor = NGramPredictor::new(&self.registry);
        let executor = Executor::new(&self.registry);
        let mut exact;
        let mut accuracy;
        let evaluator: &mut dyn Evaluator = match parse_mode(mode)? {
            EvalMode::ExactMatch => {
                let target = q.gt_program.as_ref().ok_or_else(|| PyValueError::new_err("question has no reference program"))?;
                exact = ExactMatch { target };
                &mut exact
            }
            EvalMode::Accuracy => {
                accuracy = SceneAccuracy { executor: &executor, triplet: q };
                &mut accuracy
            }
        };
        let predictor: &dyn ProgramPredictor = &predictor;
        let out = run_search(&q.question, evaluator, predictor, None, &self.registry, &config).map_err(value_err)?;
        let program = PyProgram { inner: out.best_program, registry: self.registry.clone() };
        Ok((program, out.best_score, out.evaluations, out.steps))
    }

    /// Runs the training loop and returns `(solved, evaluations, curve)`
    /// with the curve as `(evaluations, correct_found)` pairs.
    #[pyo3(signature = (mode = "exact-match", csm = true, max_loop = 100, budget = 0, seed = 1))]
    fn train(&self, mode: &str, csm: bool, max_loop: usize, budget: u64, seed: u64) -> PyResult<(usize, u64, Curve)> {
        if max_loop == 0 && budget == 0 {
            return Err(PyValueError::new_err("max_loop and budget cannot both be unlimited"));
        }
        let config = LoopConfig { max_loop, evaluation_budget: budget, csm_enabled: csm, ..LoopConfig::default() };
        let out = run_training(&self.items, &self.registry, parse_mode(mode)?, &config, &SearchConfig::default(), seed)
            .map_err(value_err)?;
        Ok((out.pools.solved.len(), out.evaluations, curve_tuples(&out.curve)))
    }

    /// REINFORCE baseline curve under an evaluation budget.
    #[pyo3(signature = (budget, seed = 1))]
    fn baseline(&self, budget: u64, seed: u64) -> Curve {
        curve_tuples(&run_baseline(&self.items, &self.registry, budget, seed, &PolicyConfig::default()))
    }
}

impl PyDataset {
    fn get(&self, index: usize) -> PyResult<&QuestionTriplet> {
        self.items.get(index).ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))
    }
}

/// Summarizes curves per method: returns the common solve count, the median
/// evaluations per method, the across-seed max/min ratio at half the
/// dataset per method, and the first-over-last median ratio.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn summarize_curves(
    methods: Vec<(String, Vec<Vec<(u64, usize)>>)>,
    questions: usize,
) -> PyResult<(usize, Vec<(String, Option<f64>, f64)>, Option<f64>)> {
    let mut parsed = Vec::new();
    for (method, curves) in methods {
        let curves: Vec<Vec<CurvePoint>> = curves
            .into_iter()
            .map(|c| c.into_iter().map(|(evaluations, correct_found)| CurvePoint { evaluations, correct_found }).collect())
            .collect();
        for c in &curves {
            if c.windows(2).any(|w| w[1].evaluations < w[0].evaluations || w[1].correct_found < w[0].correct_found) {
                return Err(PyValueError::new_err(format!("curve of `{method}` is not cumulative")));
            }
        }
        parsed.push(MethodCurves { method, curves });
    }
    let report = summarize(&parsed, questions);
    let rows = report.methods.into_iter().map(|m| (m.method, m.median_evaluations, m.stability)).collect();
    Ok((report.k_common, rows, report.ratio))
}

#[pymodule]
fn gbhs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegistry>()?;
    m.add_class::<PyProgram>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(summarize_curves, m)?)?;
    Ok(())
}
