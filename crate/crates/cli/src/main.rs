//! `sparsetouch`: file-based pipeline from plate simulation to evaluation
//! reports. Every subcommand reads and writes JSON artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sparsetouch::dataset::make_folds;
use sparsetouch::eval::{
    emit_report, error_vs_budget, failure_robustness, force_interval_report, load_manifest, EvalSplit,
    EvaluationReport, ReportFormat, RobustnessConfig, DEFAULT_INTERVALS,
};
use sparsetouch::filter::{filter_pipeline, grid_pitch, FilterConfig};
use sparsetouch::locator::{default_params_for, grid_search_cv, SearchTarget};
use sparsetouch::plate::cell_centered_sites;
use sparsetouch::study::{self, GreedyPlan};
use sparsetouch::svr::SolverOptions;
use sparsetouch::{
    DeformationDataset, Error, ForceLocator, LocatorParams, Method, PlateSpec, SamplingGrid, SelectionGoal,
    SelectionResult, Signal, StudyConfig, SvrGrid, SvrHyperParams, TrialSet,
};

#[derive(Parser)]
#[command(name = "sparsetouch", version, about = "Sparse deformation-sensor placement and force localization")]
struct Cli {
    /// Worker threads for internal parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Seed for splits, folds and failure draws.
    #[arg(long, global = true, env = "SPARSETOUCH_SEED", default_value_t = 7)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate plate deformation readings for a grid of point loads.
    Simulate(SimulateArgs),
    /// Drop sensor sites that cannot host a sensor.
    Filter(FilterArgs),
    /// Choose a sparse sensor set.
    Select(SelectArgs),
    /// Train a force locator on selected sensors.
    Train(TrainArgs),
    /// Error-vs-budget and force-interval report.
    Eval(EvalArgs),
    /// Error under random sensor failures.
    Robustness(RobustnessArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "data.json")]
    out: PathBuf,
    /// deflection, strain-u or strain-v.
    #[arg(long, default_value = "deflection")]
    signal: Signal,
    #[arg(long, default_value_t = 200.0)]
    width: f64,
    #[arg(long, default_value_t = 120.0)]
    height: f64,
    #[arg(long, default_value_t = 2.0)]
    thickness: f64,
    #[arg(long, default_value_t = 2000.0)]
    youngs: f64,
    #[arg(long, default_value_t = 0.35)]
    poisson: f64,
    #[arg(long, default_value_t = 100)]
    terms: usize,
    /// Sensor lattice as NUxNV.
    #[arg(long, default_value = "30x18", value_parser = parse_lattice)]
    sensors: (usize, usize),
    /// Force lattice as NUxNV.
    #[arg(long, default_value = "40x24", value_parser = parse_lattice)]
    forces: (usize, usize),
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,34")]
    magnitudes: Vec<f64>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long = "in", default_value = "data.json")]
    input: PathBuf,
    #[arg(long, default_value = "cand.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    k_neighbors: usize,
    /// Centroid-offset radius (mm); defaults to 0.15 sensor pitch.
    #[arg(long)]
    com_radius: Option<f64>,
    /// Strip width along each support line (mm).
    #[arg(long, default_value_t = 10.0)]
    support_margin: f64,
}

#[derive(Args, Clone)]
struct StudyArgs {
    /// Trials to learn positions from: all, or strongest (one load per site).
    #[arg(long, default_value = "all")]
    trials: TrialSet,
    #[arg(long, default_value_t = 0.85)]
    train_fraction: f64,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long = "in", default_value = "data.json")]
    input: PathBuf,
    #[arg(long, default_value = "cand.json")]
    candidates: PathBuf,
    #[arg(long, default_value = "selection.json")]
    out: PathBuf,
    /// greedy-svr, pca-qr, entropy or mi.
    #[arg(long)]
    method: Method,
    #[arg(long, default_value_t = 10)]
    budget: usize,
    /// Stop greedy SVR once the cross-validated error (mm) falls this low.
    #[arg(long)]
    target_error: Option<f64>,
    /// Rescore the first greedy steps over the full hyperparameter grid.
    #[arg(long)]
    rehearse_hyperparams: bool,
    /// Training trials the greedy search scores on.
    #[arg(long, default_value_t = 400)]
    subsample: usize,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    /// Relative reconstruction error that sizes the greedy candidate pool;
    /// 0 searches every candidate.
    #[arg(long, default_value_t = 0.01)]
    compress: f64,
    /// Refit the GP length scale and exponent before entropy / mi.
    #[arg(long)]
    gp_grid_search: bool,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "in", default_value = "data.json")]
    input: PathBuf,
    /// Selection to read sensors from.
    #[arg(long, conflicts_with = "candidates")]
    selection: Option<PathBuf>,
    /// Budget within the selection (default: the largest).
    #[arg(long, requires = "selection")]
    budget: Option<usize>,
    /// Use every filtered candidate instead of a selection.
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long, requires_all = ["eps", "gamma"], conflicts_with = "grid_search")]
    c: Option<f64>,
    #[arg(long, requires_all = ["c", "gamma"])]
    eps: Option<f64>,
    #[arg(long, requires_all = ["c", "eps"])]
    gamma: Option<f64>,
    /// Pick C, ε, γ by 5-fold cross-validation on the training trials.
    #[arg(long)]
    grid_search: bool,
    /// Also learn the load magnitude.
    #[arg(long)]
    magnitude_head: bool,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "in", default_value = "data.json")]
    input: PathBuf,
    /// Selection files, one per method.
    #[arg(long = "selection", required = true, num_args = 1..)]
    selections: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    budgets: Vec<usize>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,svg,json")]
    formats: Vec<ReportFormat>,
    /// Skip the force-interval table.
    #[arg(long)]
    no_intervals: bool,
    #[command(flatten)]
    study: StudyArgs,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long = "in", default_value = "data.json")]
    input: PathBuf,
    #[arg(long = "selection", required = true, num_args = 1..)]
    selections: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    budget: usize,
    #[arg(long, default_value_t = 5)]
    max_failures: usize,
    #[arg(long, default_value_t = 20)]
    repetitions: usize,
    /// Retrain on the surviving sensors instead of zeroing failed inputs.
    #[arg(long)]
    retrain: bool,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "csv,svg,json")]
    formats: Vec<ReportFormat>,
    #[command(flatten)]
    study: StudyArgs,
}

fn parse_lattice(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NUxNV, got '{s}'"))?;
    let n = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad lattice size '{t}': {e}"));
    Ok((n(a)?, n(b)?))
}

/// Filtered candidate list as written by `filter`.
#[derive(Serialize, Deserialize)]
struct CandidateFile {
    dataset_hash: String,
    config: FilterConfig,
    candidates: Vec<usize>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> sparsetouch::Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> sparsetouch::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Side-car manifest `<out>.manifest.json`; the only file carrying a timestamp.
fn write_manifest(out: &Path, command: &str, config: serde_json::Value, seed: u64) -> sparsetouch::Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write_json(
        Path::new(&name),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": config,
            "created_unix": created,
        }),
    )
}

fn load_data(path: &Path) -> sparsetouch::Result<DeformationDataset> {
    DeformationDataset::load(path)
}

fn study_config(args: &StudyArgs, seed: u64) -> StudyConfig {
    StudyConfig { trial_set: args.trials, train_fraction: args.train_fraction, seed, ..Default::default() }
}

fn simulate(a: SimulateArgs, seed: u64) -> sparsetouch::Result<()> {
    let spec = PlateSpec {
        width_a: a.width,
        height_b: a.height,
        thickness_h: a.thickness,
        youngs_e: a.youngs,
        poisson_nu: a.poisson,
        series_terms: a.terms,
    };
    spec.validate()?;
    let grid = SamplingGrid {
        sensor_sites: cell_centered_sites(&spec, a.sensors.0, a.sensors.1),
        force_sites: cell_centered_sites(&spec, a.forces.0, a.forces.1),
        force_magnitudes: a.magnitudes.clone(),
    };
    let data = sparsetouch::plate::generate_dataset(&spec, &grid, a.signal)?;
    data.save(&a.out)?;
    let config = json!({
        "spec": spec,
        "signal": a.signal,
        "sensors": a.sensors,
        "forces": a.forces,
        "magnitudes": a.magnitudes,
        "dataset_hash": data.content_hash(),
    });
    write_manifest(&a.out, "simulate", config, seed)?;
    eprintln!("wrote {} sensors x {} trials to {}", data.n_sensors(), data.n_trials(), a.out.display());
    Ok(())
}

fn filter(a: FilterArgs, seed: u64) -> sparsetouch::Result<()> {
    let data = load_data(&a.input)?;
    let spec = data.meta().spec.unwrap_or_default();
    let pitch = grid_pitch(data.sensor_sites());
    let mut config = FilterConfig::for_plate(&spec, pitch);
    config.k_neighbors = a.k_neighbors;
    config.support_margin = a.support_margin;
    if let Some(r) = a.com_radius {
        config.com_radius = r;
    }
    let candidates = filter_pipeline(data.sensor_sites(), &config)?;
    let file = CandidateFile { dataset_hash: data.content_hash(), config, candidates };
    write_json(&a.out, &file)?;
    write_manifest(&a.out, "filter", json!({ "filter": config, "input": a.input }), seed)?;
    eprintln!("kept {} of {} sites", file.candidates.len(), data.n_sensors());
    Ok(())
}

fn load_candidates(path: &Path, data: &DeformationDataset) -> sparsetouch::Result<Vec<usize>> {
    let file: CandidateFile = read_json(path)?;
    if file.dataset_hash != data.content_hash() {
        return Err(Error::Validation(format!("{} was filtered from a different dataset", path.display())));
    }
    Ok(file.candidates)
}

fn select(a: SelectArgs, seed: u64) -> sparsetouch::Result<()> {
    let data = load_data(&a.input)?;
    let candidates = load_candidates(&a.candidates, &data)?;
    let mut config = study_config(&a.study, seed);
    config.gp_grid_search = a.gp_grid_search;
    config.greedy = GreedyPlan {
        subsample: a.subsample,
        folds: a.folds,
        compress_tolerance: (a.compress > 0.0).then_some(a.compress),
        rehearse: a.rehearse_hyperparams,
        ..GreedyPlan::default()
    };
    let view = config.view(&data)?;
    let split = config.split(view.n_trials())?;
    let goal = SelectionGoal { max_budget: a.budget, target_error: a.target_error };
    let result = study::select(a.method, &view, &candidates, &split.train, &goal, &config)?;
    result.save(&a.out)?;
    write_manifest(&a.out, "select", json!({ "method": a.method, "goal": goal, "study": config }), seed)?;
    for d in &result.diagnostics {
        eprintln!("note: {d}");
    }
    eprintln!("{}: {:?}", a.method, result.at_budget(result.max_budget()).unwrap_or_default());
    Ok(())
}

fn train(a: TrainArgs, seed: u64) -> sparsetouch::Result<()> {
    let data = load_data(&a.input)?;
    let sensors = match (&a.selection, &a.candidates) {
        (Some(p), _) => {
            let sel = SelectionResult::load(p)?;
            let k = a.budget.unwrap_or(sel.max_budget());
            sel.at_budget(k)
                .ok_or_else(|| Error::Validation(format!("selection has no budget {k}")))?
                .to_vec()
        }
        (None, Some(p)) => load_candidates(p, &data)?,
        (None, None) => return Err(Error::Validation("pass --selection or --candidates".into())),
    };
    let config = study_config(&a.study, seed);
    let view = config.view(&data)?;
    let split = config.split(view.n_trials())?;
    let solver = SolverOptions::default();
    let search = |target: SearchTarget| -> sparsetouch::Result<SvrHyperParams> {
        let folds = make_folds(split.train.len(), 5, seed)?;
        let out = grid_search_cv(&view, &sensors, &split.train, &SvrGrid::default(), &folds, target, &solver)?;
        eprintln!("grid search ({target:?}): {:?} (cv rmse {:.3})", out.best, out.cv_error);
        Ok(out.best)
    };
    let (position, magnitude) = match (a.c, a.eps, a.gamma) {
        (Some(c), Some(e), Some(g)) => {
            let p = SvrHyperParams::new(c, e, g);
            (p, a.magnitude_head.then_some(p))
        }
        // the magnitude head gets its own search
        _ if a.grid_search => {
            let m = if a.magnitude_head { Some(search(SearchTarget::Magnitude)?) } else { None };
            (search(SearchTarget::Position)?, m)
        }
        _ => {
            let p = default_params_for(sensors.len());
            (p, a.magnitude_head.then_some(p))
        }
    };
    let params = LocatorParams { position, magnitude, solver };
    let locator = ForceLocator::train(&view, &sensors, &split.train, &params)?;
    let errs: Vec<f64> = locator.evaluate(&view, &split.test, &[])?.iter().map(|e| e.position).collect();
    locator.save(&a.out)?;
    write_manifest(&a.out, "train", json!({ "params": params, "study": config, "sensors": sensors }), seed)?;
    eprintln!("test position error {:.3} mm over {} trials", sparsetouch::locator::mean(&errs), errs.len());
    Ok(())
}

/// Existing report in `dir` for the same dataset, so eval and robustness
/// can fill their sections independently.
fn existing_report(dir: &Path, hash: &str) -> EvaluationReport {
    load_manifest(dir.join("manifest.json"))
        .ok()
        .filter(|r| r.dataset_hash == hash)
        .unwrap_or_else(|| EvaluationReport { dataset_hash: hash.to_string(), ..Default::default() })
}

fn merge_config(report: &mut EvaluationReport, key: &str, value: serde_json::Value) {
    if !report.config.is_object() {
        report.config = json!({});
    }
    report.config[key] = value;
}

fn eval(a: EvalArgs, seed: u64) -> sparsetouch::Result<()> {
    let start = Instant::now();
    let data = load_data(&a.input)?;
    let selections = a.selections.iter().map(SelectionResult::load).collect::<sparsetouch::Result<Vec<_>>>()?;
    let config = study_config(&a.study, seed);
    let view = config.view(&data)?;
    let sp = config.split(view.n_trials())?;
    let split = EvalSplit { train: sp.train, test: sp.test, seed };
    let mut report = existing_report(&a.out, &data.content_hash());
    report.error_vs_budget = Vec::new();
    for sel in &selections {
        let k = sel.max_budget();
        let params = LocatorParams::position_only(default_params_for(k));
        let budgets: Vec<usize> = a.budgets.iter().copied().filter(|&b| b <= k).collect();
        report.error_vs_budget.extend(error_vs_budget(&view, std::slice::from_ref(sel), &budgets, &split, &params)?);
    }
    if !a.no_intervals {
        let sel = &selections[0];
        let sensors = sel.at_budget(sel.max_budget()).unwrap_or_default();
        let all = StudyConfig { trial_set: TrialSet::All, ..config.clone() };
        let sp = all.split(data.n_trials())?;
        let p = default_params_for(sensors.len());
        let params = LocatorParams { position: p, magnitude: Some(p), solver: SolverOptions::default() };
        let locator = ForceLocator::train(&data, sensors, &sp.train, &params)?;
        report.force_intervals = force_interval_report(&data, &locator, &sp.test, &DEFAULT_INTERVALS)?;
    }
    if !report.seeds.contains(&seed) {
        report.seeds.push(seed);
    }
    merge_config(&mut report, "eval", json!({ "budgets": a.budgets, "study": config, "selections": a.selections }));
    report.runtime_seconds = start.elapsed().as_secs_f64();
    let written = emit_report(&report, &a.out, &a.formats)?;
    for c in &report.error_vs_budget {
        eprintln!("{:>10} k={:<3} {:.3} ± {:.3} mm", c.method, c.budget, c.mean_error, c.std_error);
    }
    eprintln!("wrote {} files to {}", written.len(), a.out.display());
    Ok(())
}

fn robustness(a: RobustnessArgs, seed: u64) -> sparsetouch::Result<()> {
    let start = Instant::now();
    let data = load_data(&a.input)?;
    let config = study_config(&a.study, seed);
    let view = config.view(&data)?;
    let sp = config.split(view.n_trials())?;
    let split = EvalSplit { train: sp.train, test: sp.test, seed };
    let rconfig = RobustnessConfig {
        failure_counts: (0..=a.max_failures).collect(),
        repetitions: a.repetitions,
        seed,
        retrain: a.retrain,
    };
    let mut report = existing_report(&a.out, &data.content_hash());
    report.robustness = Vec::new();
    for path in &a.selections {
        let sel = SelectionResult::load(path)?;
        let sensors = sel
            .at_budget(a.budget)
            .ok_or_else(|| Error::Validation(format!("{} has no budget {}", path.display(), a.budget)))?;
        let params = LocatorParams::position_only(default_params_for(sensors.len()));
        report.robustness.extend(failure_robustness(&view, sel.method, sensors, &split, &params, &rconfig)?);
    }
    if !report.seeds.contains(&seed) {
        report.seeds.push(seed);
    }
    merge_config(&mut report, "robustness", json!({ "budget": a.budget, "failures": rconfig, "study": config }));
    report.runtime_seconds = start.elapsed().as_secs_f64();
    emit_report(&report, &a.out, &a.formats)?;
    for r in &report.robustness {
        eprintln!("{:>10} f={} {:.3} ± {:.3} mm", r.method, r.failed, r.mean_error, r.std_error);
    }
    Ok(())
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("error: kind={kind} message={message:?}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return fail("usage", &first, 1);
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            return fail("validation", "--jobs must be at least 1", 1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("validation", &e.to_string(), 1);
        }
    }
    let seed = cli.seed;
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a, seed),
        Command::Filter(a) => filter(a, seed),
        Command::Select(a) => select(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Eval(a) => eval(a, seed),
        Command::Robustness(a) => robustness(a, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), if e.is_numerical() { 2 } else { 1 }),
    }
}
