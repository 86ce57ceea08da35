use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gbhs::microworld::{gen_dataset, load_dataset, mean_program_length, write_dataset, GenConfig, GenError, QuestionTriplet};
use gbhs::predictors::{NGramPredictor, NGramState};
use gbhs::reinforce::{run_baseline, PolicyConfig};
use gbhs::report::{read_curve, summarize, write_curves_csv, write_svg, write_table, MethodCurves};
use gbhs::search::SearchConfig;
use gbhs::training::{run_training_with, write_curve_csv, EvalMode, LoopConfig, CurvePoint};
use gbhs::ModuleRegistry;

const OUT_DIR_VAR: &str = "GBHS_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "out";
const DEFAULT_BASELINE_SEEDS: [u64; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
const DEFAULT_BASELINE_BUDGET: u64 = 100_000;

#[derive(Parser)]
#[command(name = "gbhs", version, about = "Graph-based heuristic search for typed module programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a question dataset.
    Gen(GenArgs),
    /// Run the search-and-train loop once per seed.
    Run(RunArgs),
    /// Run the REINFORCE baseline once per seed.
    Baseline(BaselineArgs),
    /// Summarize solve curves across methods and seeds.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "microworld39")]
    registry: String,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Scenes per question.
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    /// Probability of filling a slot with a leaf; higher gives shorter programs.
    #[arg(long)]
    leaf_bias: Option<f64>,
    /// Depth limit of generated programs.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Output file; defaults to dataset.jsonl under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    ExactMatch,
    Accuracy,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::ExactMatch => EvalMode::ExactMatch,
            Mode::Accuracy => EvalMode::Accuracy,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in registry name or JSON file.
    #[arg(long)]
    registry: Option<String>,
    /// JSON-lines question file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory; defaults to the config value, then $GBHS_OUT_DIR, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prefix of every output file name.
    #[arg(long)]
    label: Option<String>,
    /// Worker threads for the seed fan-out.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Scoring: reference-program match or answer accuracy over scenes.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Restrict each search to candidate modules.
    #[arg(long, value_enum)]
    csm: Option<Switch>,
    /// Loop limit (0 = no limit).
    #[arg(long)]
    max_loop: Option<usize>,
    /// Expansions per search.
    #[arg(long)]
    max_step: Option<usize>,
    /// Type mismatches allowed in graph nodes.
    #[arg(long)]
    tolerance: Option<usize>,
    /// Stop each run after this many evaluations (0 = no limit).
    #[arg(long)]
    budget: Option<u64>,
    /// Write the search trace and graph dump of the first N loops.
    #[arg(long, default_value_t = 0)]
    dump_loops: usize,
    /// Start from an exported predictor state.
    #[arg(long)]
    predictor_in: Option<PathBuf>,
    /// Export the final predictor state of every seed.
    #[arg(long)]
    save_predictor: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    /// Evaluations per seed.
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// METHOD=FILE[,FILE...]; repeat per method. The ratio compares the
    /// first method with the last.
    #[arg(long = "curves", required = true)]
    curves: Vec<String>,
    /// Dataset size; stability is measured at half of it.
    #[arg(long)]
    questions: usize,
    /// Directory for report.txt and report-curves.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also draw the curves as report.svg.
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    registry: Option<String>,
    dataset: Option<PathBuf>,
    mode: Option<Mode>,
    seeds: Option<Vec<u64>>,
    output_dir: Option<PathBuf>,
    label: Option<String>,
    jobs: Option<usize>,
    search: SearchConfig,
    training: LoopConfig,
    baseline: BaselineSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BaselineSection {
    budget: u64,
    seeds: Option<Vec<u64>>,
    policy: PolicyConfig,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { budget: DEFAULT_BASELINE_BUDGET, seeds: None, policy: PolicyConfig::default() }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Generation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Generation(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Generation(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let mut f = create_file(path)?;
    body(&mut f).and_then(|_| f.flush()).map_err(io_err(path))
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if a.scenes == 0 {
        return Err(usage("--scenes must be at least 1"));
    }
    let registry = ModuleRegistry::resolve(&a.registry).map_err(usage)?;
    let mut config = GenConfig::new(a.count, a.seed);
    config.scenes_per_question = a.scenes;
    if let Some(b) = a.leaf_bias {
        if !(0.0..=1.0).contains(&b) {
            return Err(usage("--leaf-bias must lie in [0, 1]"));
        }
        config.leaf_bias = b;
    }
    if let Some(d) = a.max_depth {
        if d == 0 {
            return Err(usage("--max-depth must be at least 1"));
        }
        config.max_depth = d;
    }
    let dataset = gen_dataset(&registry, &config).map_err(|e| match e {
        GenError::GenerationExhausted(_) => CliError::Generation(e.to_string()),
        other => usage(other),
    })?;
    let path = a.out.unwrap_or_else(|| default_out_dir().join("dataset.jsonl"));
    write_file(&path, |f| write_dataset(f, &dataset, &registry))?;
    println!("questions {} mean program length {:.3} -> {}", dataset.len(), mean_program_length(&dataset), path.display());
    Ok(())
}

/// Settings shared by `run` and `baseline` after merging flags over the
/// config file over defaults.
struct Resolved {
    file: FileConfig,
    registry: ModuleRegistry,
    dataset: Vec<QuestionTriplet>,
    out_dir: PathBuf,
    jobs: usize,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn resolve(common: &Common) -> Result<Resolved, CliError> {
    let file = load_config(common.config.as_deref())?;
    let registry_name = common.registry.clone().or_else(|| file.registry.clone()).unwrap_or_else(|| "microworld39".into());
    let registry = ModuleRegistry::resolve(&registry_name).map_err(usage)?;
    let dataset_path = common
        .dataset
        .clone()
        .or_else(|| file.dataset.clone())
        .ok_or_else(|| usage("no dataset given (use --dataset or `dataset` in the config)"))?;
    if !dataset_path.exists() {
        return Err(usage(format!("dataset {} does not exist", dataset_path.display())));
    }
    let dataset = load_dataset(&dataset_path, &registry).map_err(|e| usage(format!("{}: {e}", dataset_path.display())))?;
    if dataset.is_empty() {
        return Err(usage(format!("dataset {} is empty", dataset_path.display())));
    }
    if let Some((i, _)) = dataset.iter().enumerate().find(|(i, q)| q.id != *i) {
        return Err(usage(format!("dataset record {} has id {}, expected ids 0..n in order", i + 1, dataset[i].id)));
    }
    let out_dir = common.out.clone().or_else(|| file.output_dir.clone()).unwrap_or_else(default_out_dir);
    let jobs = common
        .jobs
        .or(file.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    Ok(Resolved { file, registry, dataset, out_dir, jobs })
}

fn check_seeds(seeds: &[u64]) -> Result<(), CliError> {
    if seeds.is_empty() {
        return Err(usage("seed list is empty"));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(usage("seed list has duplicates"));
    }
    Ok(())
}

/// Runs `work` for every seed on up to `jobs` threads and returns the results
/// in seed order.
fn fan_out<T: Send>(seeds: &[u64], jobs: usize, work: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new(seeds.iter().map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let r = work(seed);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("workers finished").into_iter().map(|r| r.expect("every seed ran")).collect()
}

fn cmd_run(a: RunArgs) -> Result<(), CliError> {
    let mut r = resolve(&a.common)?;
    let seeds = a.common.seeds.clone().or_else(|| r.file.seeds.clone()).unwrap_or_else(|| vec![1]);
    check_seeds(&seeds)?;
    let mode: EvalMode = a.mode.or(r.file.mode).unwrap_or(Mode::ExactMatch).into();
    let mut training = r.file.training.clone();
    if let Some(s) = a.csm {
        training.csm_enabled = matches!(s, Switch::On);
    }
    if let Some(m) = a.max_loop {
        training.max_loop = m;
    }
    if let Some(b) = a.budget {
        training.evaluation_budget = b;
    }
    let mut search = r.file.search.clone();
    if let Some(m) = a.max_step {
        search.max_step = m;
    }
    if let Some(t) = a.tolerance {
        search.tolerance = t;
    }
    search.validate().map_err(usage)?;
    if training.max_loop == 0 && training.evaluation_budget == 0 {
        return Err(usage("max_loop and the evaluation budget cannot both be unlimited"));
    }
    if mode == EvalMode::ExactMatch {
        if let Some(q) = r.dataset.iter().find(|q| q.gt_program.is_none()) {
            return Err(usage(format!("exact-match mode needs a program for every question; question {} has none", q.id)));
        }
    }
    let initial = match &a.predictor_in {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            let state: NGramState = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            NGramPredictor::import_state(&r.registry, &state).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => NGramPredictor::new(&r.registry),
    };
    let label = a
        .common
        .label
        .clone()
        .or_else(|| r.file.label.take())
        .unwrap_or_else(|| if training.csm_enabled { "gbhs-csm".into() } else { "gbhs-nocsm".into() });
    let out_dir = r.out_dir.clone();
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let results = fan_out(&seeds, r.jobs, |seed| -> Result<String, CliError> {
        let stem = out_dir.join(format!("{label}-seed{seed}"));
        let metrics_path = PathBuf::from(format!("{}-metrics.csv", stem.display()));
        let mut metrics = create_file(&metrics_path)?;
        writeln!(metrics, "loop,question_id,source_pool,evaluations,best_score,solved_total,csm_fallback_flag")
            .map_err(io_err(&metrics_path))?;
        let mut failure: Option<CliError> = None;
        let outcome = run_training_with(
            &r.dataset,
            &r.registry,
            mode,
            &training,
            &search,
            seed,
            initial.clone(),
            &mut |rec, out| {
                if failure.is_some() {
                    return;
                }
                let line = writeln!(
                    metrics,
                    "{},{},{},{},{},{},{}",
                    rec.loop_index,
                    rec.question_id,
                    rec.source_pool,
                    rec.evaluations,
                    rec.best_score,
                    rec.solved_total,
                    rec.csm_fallback_flag
                )
                .and_then(|_| metrics.flush());
                if let Err(e) = line {
                    failure = Some(io_err(&metrics_path)(e));
                    return;
                }
                if rec.loop_index <= a.dump_loops {
                    let base = format!("{}-loop{}", stem.display(), rec.loop_index);
                    let trace = PathBuf::from(format!("{base}-trace.csv"));
                    let graph = PathBuf::from(format!("{base}-graph.jsonl"));
                    if let Err(e) = write_file(&trace, |f| out.trace.write_csv(f))
                        .and_then(|_| write_file(&graph, |f| out.graph.write_dump(f)))
                    {
                        failure = Some(e);
                    }
                }
            },
        )
        .map_err(usage)?;
        if let Some(e) = failure {
            return Err(e);
        }
        let curve_path = PathBuf::from(format!("{}-curve.csv", stem.display()));
        write_file(&curve_path, |f| write_curve_csv(&outcome.curve, f))?;
        if a.save_predictor {
            let path = PathBuf::from(format!("{}-predictor.json", stem.display()));
            let text = serde_json::to_string_pretty(&outcome.predictor.export_state()).map_err(usage)?;
            write_file(&path, |f| f.write_all(text.as_bytes()))?;
        }
        Ok(format!(
            "seed {seed}: solved {}/{} in {} loops, {} evaluations, stop {:?}",
            outcome.pools.solved.len(),
            r.dataset.len(),
            outcome.records.len(),
            outcome.evaluations,
            outcome.stop
        ))
    });
    finish(results)
}

fn finish(results: Vec<Result<String, CliError>>) -> Result<(), CliError> {
    let mut first_err = None;
    for r in results {
        match r {
            Ok(line) => println!("{line}"),
            Err(e) => {
                eprintln!("error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn cmd_baseline(a: BaselineArgs) -> Result<(), CliError> {
    let r = resolve(&a.common)?;
    let seeds = a
        .common
        .seeds
        .clone()
        .or_else(|| r.file.baseline.seeds.clone())
        .unwrap_or_else(|| DEFAULT_BASELINE_SEEDS.to_vec());
    check_seeds(&seeds)?;
    let budget = a.budget.unwrap_or(r.file.baseline.budget);
    let policy = r.file.baseline.policy.clone();
    if !(policy.learning_rate > 0.0 && policy.learning_rate.is_finite()) {
        return Err(usage("baseline learning_rate must be positive"));
    }
    if !(0.0..=1.0).contains(&policy.baseline_decay) {
        return Err(usage("baseline_decay must lie in [0, 1]"));
    }
    if policy.max_len == 0 {
        return Err(usage("baseline max_len must be at least 1"));
    }
    if let Some(q) = r.dataset.iter().find(|q| q.gt_program.is_none()) {
        return Err(usage(format!("the baseline needs a program for every question; question {} has none", q.id)));
    }
    let label = a.common.label.clone().or_else(|| r.file.label.clone()).unwrap_or_else(|| "reinforce".into());
    let out_dir = r.out_dir.clone();
    let results = fan_out(&seeds, r.jobs, |seed| -> Result<String, CliError> {
        let curve: Vec<CurvePoint> = run_baseline(&r.dataset, &r.registry, budget, seed, &policy);
        let path = out_dir.join(format!("{label}-seed{seed}-curve.csv"));
        write_file(&path, |f| write_curve_csv(&curve, f))?;
        let last = curve.last().copied().unwrap_or(CurvePoint { evaluations: 0, correct_found: 0 });
        Ok(format!("seed {seed}: solved {}/{} in {} evaluations", last.correct_found, r.dataset.len(), last.evaluations))
    });
    finish(results)
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    if a.questions == 0 {
        return Err(usage("--questions must be at least 1"));
    }
    let mut methods = Vec::new();
    for entry in &a.curves {
        let (method, files) = entry.split_once('=').ok_or_else(|| usage(format!("`{entry}` is not METHOD=FILE[,FILE...]")))?;
        if method.is_empty() || files.is_empty() {
            return Err(usage(format!("`{entry}` is not METHOD=FILE[,FILE...]")));
        }
        let mut curves = Vec::new();
        for f in files.split(',') {
            let path = Path::new(f);
            let file = File::open(path).map_err(io_err(path))?;
            curves.push(read_curve(file).map_err(|e| usage(format!("{f}: {e}")))?);
        }
        methods.push(MethodCurves { method: method.to_string(), curves });
    }
    let report = summarize(&methods, a.questions);
    let out_dir = a.out.unwrap_or_else(default_out_dir);
    let mut table = Vec::new();
    write_table(&methods, &report, a.questions, &mut table).map_err(usage)?;
    io::stdout().write_all(&table).map_err(usage)?;
    write_file(&out_dir.join("report.txt"), |f| f.write_all(&table))?;
    write_file(&out_dir.join("report-curves.csv"), |f| write_curves_csv(&methods, f))?;
    if a.svg {
        write_file(&out_dir.join("report.svg"), |f| write_svg(&methods, f))?;
    }
    Ok(())
}
