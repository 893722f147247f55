//! `qotl`: train latent quantum circuits with an optimal-transport loss, score
//! anomalies, and run the scaling studies. Every output directory gets a
//! `run.toml` with the arguments used and SHA-256 digests of each file written.

mod record;
mod selftest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use qotl::anomaly::{score_grid, AnomalyConfig, ZInit};
use qotl::ansatz::{
    bloch_projection, build_ala, build_hea, default_test_axis, gen_bp_target_ensemble, gen_equator_ensemble,
    gen_localized_ensemble, gen_test_grid, init_theta, run_circuit, CircuitSpec, Ensemble, LatentVector,
};
use qotl::cost::{CostMetric, Shots};
use qotl::experiments::{
    experiment_a, experiment_b, experiment_gradvar, experiment_shots, ExperimentGrid, ExperimentResult,
};
use qotl::optim::AdamParams;
use qotl::rng;
use qotl::train::{train_from, Checkpoint, TrainConfig};
use qotl::Error;

use record::RunRecord;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "qotl", version, about = "Optimal-transport generative modeling of quantum state ensembles")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "QOTL_OUT_DIR", default_value = ".")]
    out: PathBuf,
    /// Flat TOML file of `flag = value` pairs; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a circuit on a generated ensemble. Writes checkpoint.toml and
    /// trace.csv (iteration, loss, grad_norm, shots_used[, global_loss]).
    Train(TrainArgs),
    /// Score test states against a checkpoint. Writes scores.csv
    /// (theta_t, phi_t, score, argmin_z_k..., restarts_used[, theory][, label]).
    Anomaly(AnomalyArgs),
    /// Run a Monte-Carlo study. Writes <name>_trials.csv (n, n_z, n_layers, m,
    /// n_s, cost, trial, value), <name>_cells.csv (..., count, mean, std_err,
    /// variance) and, for scaling-b, scaling-b_fits.csv.
    Experiment(ExperimentArgs),
    /// Generalized Bloch coordinates of a dataset or of a model sweep over
    /// z in {0, 0.01, ..., 1}. Writes bloch.csv (source, param, x, y, z, residual).
    Bloch(BlochArgs),
    /// Run the built-in oracle checks. Writes selftest.csv (check, value, tolerance, pass).
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Equator,
    Localized,
    Bp,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Hea,
    Ala,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Local,
    Global,
}

impl From<MetricArg> for CostMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Local => CostMetric::Local,
            MetricArg::Global => CostMetric::TraceDistance,
        }
    }
}

#[derive(Clone, Debug)]
struct ShotsArg(Shots);

fn parse_shots(s: &str) -> Result<ShotsArg, String> {
    if s.eq_ignore_ascii_case("exact") {
        return Ok(ShotsArg(Shots::Exact));
    }
    match s.parse::<u64>() {
        Ok(0) | Err(_) => Err(format!("expected `exact` or a positive shot count, got {s:?}")),
        Ok(n) => Ok(ShotsArg(Shots::Finite(n))),
    }
}

/// Comma-separated list; the empty string is the empty list.
#[derive(Clone, Debug)]
struct List<T>(Vec<T>);

fn parse_list<T: FromStr>(s: &str) -> Result<List<T>, String>
where
    T::Err: std::fmt::Display,
{
    if s.trim().is_empty() {
        return Ok(List(Vec::new()));
    }
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(List)
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "equator")]
    task: Task,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Training-ensemble size.
    #[arg(long, default_value_t = 30)]
    m: usize,
    /// Generated batch size (defaults to --m).
    #[arg(long)]
    m_g: Option<usize>,
    #[arg(long, default_value_t = 1)]
    nz: usize,
    #[arg(long, default_value_t = 10)]
    layers: usize,
    #[arg(long, value_enum, default_value = "hea")]
    family: FamilyArg,
    #[arg(long, default_value_t = 2)]
    block_size: usize,
    #[arg(long, value_enum, default_value = "local")]
    metric: MetricArg,
    /// `exact` or a shot count per cost evaluation.
    #[arg(long, value_parser = parse_shots, default_value = "exact")]
    shots: ShotsArg,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Initial angles are drawn uniformly from [0, init_max).
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI)]
    init_max: f64,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// Localized-dataset parameters `mu,sigma,a,b`.
    #[arg(long, value_parser = parse_list::<f64>, default_value = "0,0.02,0,0.1")]
    localized: List<f64>,
    /// Also record the trace-distance OTL at every iteration.
    #[arg(long)]
    track_global: bool,
    /// Continue from a checkpoint (same dataset flags and seed expected).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AnomalyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test-state theta values (default 0, 0.1, ..., 2).
    #[arg(long, value_parser = parse_list::<f64>)]
    theta: Option<List<f64>>,
    /// Test-state phi values (default 0, 0.1, ..., 2).
    #[arg(long, value_parser = parse_list::<f64>)]
    phi: Option<List<f64>>,
    #[arg(long, value_parser = parse_shots, default_value = "exact")]
    shots: ShotsArg,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    /// Latent grid size scanned before descent (0 disables the scan).
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    /// Start every restart from this latent vector instead of a random one.
    #[arg(long, value_parser = parse_list::<f64>)]
    z_init: Option<List<f64>>,
    /// Add the equator reference score (grid-search interpretation) as a column.
    #[arg(long)]
    with_theory: bool,
    /// Label rows with score above this value as anomalous.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    ScalingA,
    ScalingB,
    Shots,
    Gradvar,
}

impl ExperimentName {
    fn label(self) -> &'static str {
        match self {
            ExperimentName::ScalingA => "scaling-a",
            ExperimentName::ScalingB => "scaling-b",
            ExperimentName::Shots => "shots",
            ExperimentName::Gradvar => "gradvar",
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    name: ExperimentName,
    /// Full-size grid instead of the quick default.
    #[arg(long)]
    full: bool,
    #[arg(long, value_parser = parse_list::<usize>)]
    n: Option<List<usize>>,
    #[arg(long, value_parser = parse_list::<usize>)]
    nz: Option<List<usize>>,
    #[arg(long, value_parser = parse_list::<usize>)]
    m: Option<List<usize>>,
    #[arg(long, value_parser = parse_list::<u64>)]
    ns: Option<List<u64>>,
    #[arg(long, value_parser = parse_list::<usize>)]
    layers: Option<List<usize>>,
    #[arg(long)]
    monte: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Equator,
    Localized,
    Zero,
}

#[derive(Args)]
struct BlochArgs {
    /// Sweep this model over z instead of sampling a dataset.
    #[arg(long, conflicts_with = "generator")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "equator")]
    generator: Generator,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 30)]
    m: usize,
    #[arg(long, value_parser = parse_list::<f64>, default_value = "0,0.02,0,0.1")]
    localized: List<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Divergence(String),
    Io(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => Failure::Divergence(e.to_string()),
            Error::Io(_) | Error::Csv(_) => Failure::Io(e.to_string()),
            Error::Parse(_) => Failure::Usage(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn create(dir: &Path, name: &str) -> Outcome<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok((path, BufWriter::new(file)))
}

fn read_checkpoint(path: &Path) -> Outcome<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(Checkpoint::from_toml(&text)?)
}

fn dataset(task: Task, n: usize, m: usize, localized: &[f64], seed: u64) -> Outcome<Ensemble> {
    let mut r = rng::child(seed, &[0]);
    Ok(match task {
        Task::Equator => gen_equator_ensemble(n, m, &mut r)?,
        Task::Bp => gen_bp_target_ensemble(n, m, &mut r)?,
        Task::Localized => {
            let [mu, sigma, a, b] = localized else {
                return Err(Failure::Usage("--localized takes mu,sigma,a,b".into()));
            };
            gen_localized_ensemble(n, m, *mu, *sigma, *a, *b, &mut r)?
        }
    })
}

fn cmd_train(args: &TrainArgs, out: &Path) -> Outcome<()> {
    let mut rec = RunRecord::new("train", args.seed);
    let ensemble = dataset(args.task, args.n, args.m, &args.localized.0, args.seed)?;
    let adam = AdamParams { learning_rate: args.lr, ..Default::default() };
    let start = match &args.resume {
        Some(path) => read_checkpoint(path)?,
        None => {
            let mut r = rng::child(args.seed, &[1]);
            let spec = match args.family {
                FamilyArg::Hea => build_hea(args.n, args.layers, args.nz, &mut r)?,
                FamilyArg::Ala => build_ala(args.n, args.layers, args.nz, args.block_size, &mut r)?,
            };
            Checkpoint::fresh(init_theta(&spec, &mut r, (0.0, args.init_max))?, adam)
        }
    };
    let cfg = TrainConfig {
        m_g: args.m_g,
        metric: args.metric.into(),
        shots: args.shots.0,
        iterations: args.iterations,
        adam,
        seed: rng::child_seed(args.seed, &[2]),
        track_global: args.track_global,
    };
    let result = train_from(&ensemble, &start.spec, &cfg, start.optimizer.clone(), start.iterations_done);
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            rec.status = format!("failed: {e}");
            rec.finish(out)?;
            return Err(e.into());
        }
    };
    let ck = Checkpoint {
        spec: outcome.spec,
        optimizer: outcome.optimizer,
        adam,
        iterations_done: start.iterations_done + args.iterations,
    };
    let ck_path = out.join("checkpoint.toml");
    fs::write(&ck_path, ck.to_toml())?;
    rec.add(&ck_path)?;
    let (trace_path, w) = create(out, "trace.csv")?;
    outcome.trace.write_csv(w)?;
    rec.add(&trace_path)?;
    rec.summary.insert("cost_copies".into(), (outcome.budget.cost_copies as i64).into());
    rec.summary.insert("gradient_copies".into(), (outcome.budget.gradient_copies as i64).into());
    if let (Some(first), Some(last)) = (outcome.trace.records.first(), outcome.trace.records.last()) {
        rec.summary.insert("first_loss".into(), first.loss.into());
        rec.summary.insert("last_loss".into(), last.loss.into());
        rec.summary.insert("train_seconds".into(), last.wall_seconds.into());
    }
    rec.finish(out)?;
    Ok(())
}

fn cmd_anomaly(args: &AnomalyArgs, out: &Path) -> Outcome<()> {
    let mut rec = RunRecord::new("anomaly", args.seed);
    let ck = read_checkpoint(&args.checkpoint)?;
    let thetas = args.theta.clone().map_or_else(default_test_axis, |l| l.0);
    let phis = args.phi.clone().map_or_else(default_test_axis, |l| l.0);
    let tests = if thetas.is_empty() || phis.is_empty() {
        Vec::new()
    } else {
        gen_test_grid(ck.spec.n(), &thetas, &phis)?
    };
    let cfg = AnomalyConfig {
        shots: args.shots.0,
        z_init: args.z_init.clone().map_or(ZInit::Uniform, |l| ZInit::Given(l.0)),
        iterations: args.iterations,
        step: args.step,
        restarts: args.restarts,
        grid_points: args.grid_points,
        seed: args.seed,
    };
    let table = score_grid(&tests, &ck.spec, &cfg, args.with_theory)?;
    let (path, w) = create(out, "scores.csv")?;
    table.write_csv(w, args.threshold)?;
    rec.add(&path)?;
    if args.with_theory {
        rec.notes.push(
            "theory column: exact local cost against an ideal equator circuit, minimized over a 400-point latent grid; \
             an interpretation of the reference curve, not a published formula"
                .into(),
        );
    }
    rec.finish(out)?;
    Ok(())
}

fn override_list<T: Clone>(target: &mut Vec<T>, value: &Option<List<T>>) {
    if let Some(l) = value {
        *target = l.0.clone();
    }
}

fn cmd_experiment(args: &ExperimentArgs, out: &Path) -> Outcome<()> {
    let name = args.name.label();
    let mut rec = RunRecord::new(&format!("experiment {name}"), args.seed);
    let mut grid = match args.name {
        ExperimentName::ScalingA => ExperimentGrid::scaling_a(args.full),
        ExperimentName::ScalingB => ExperimentGrid::scaling_b(args.full),
        ExperimentName::Shots => ExperimentGrid::shots(args.full),
        ExperimentName::Gradvar => ExperimentGrid::gradvar(args.full),
    };
    override_list(&mut grid.n, &args.n);
    override_list(&mut grid.n_z, &args.nz);
    override_list(&mut grid.m, &args.m);
    override_list(&mut grid.n_s, &args.ns);
    override_list(&mut grid.n_layers, &args.layers);
    if let Some(k) = args.monte {
        grid.n_monte = k;
    }
    grid.seed = args.seed;
    let res: ExperimentResult = match args.name {
        ExperimentName::ScalingA => experiment_a(&grid)?,
        ExperimentName::ScalingB => experiment_b(&grid)?,
        ExperimentName::Shots => experiment_shots(&grid)?,
        ExperimentName::Gradvar => experiment_gradvar(&grid, &[CostMetric::TraceDistance, CostMetric::Local])?,
    };
    let (p, w) = create(out, &format!("{name}_trials.csv"))?;
    res.write_trials_csv(w)?;
    rec.add(&p)?;
    let (p, w) = create(out, &format!("{name}_cells.csv"))?;
    res.write_cells_csv(w)?;
    rec.add(&p)?;
    if matches!(args.name, ExperimentName::ScalingB) {
        let (p, w) = create(out, &format!("{name}_fits.csv"))?;
        res.write_fits_csv(w)?;
        rec.add(&p)?;
    }
    let mut g = toml::Table::new();
    let ints = |v: &[usize]| toml::Value::Array(v.iter().map(|&x| (x as i64).into()).collect());
    g.insert("n".into(), ints(&grid.n));
    g.insert("n_z".into(), ints(&grid.n_z));
    g.insert("m".into(), ints(&grid.m));
    g.insert("n_s".into(), toml::Value::Array(grid.n_s.iter().map(|&x| (x as i64).into()).collect()));
    g.insert("n_layers".into(), ints(&grid.n_layers));
    g.insert("n_monte".into(), (grid.n_monte as i64).into());
    g.insert("full".into(), args.full.into());
    rec.summary.insert("grid".into(), toml::Value::Table(g));
    rec.finish(out)?;
    Ok(())
}

fn cmd_bloch(args: &BlochArgs, out: &Path) -> Outcome<()> {
    let mut rec = RunRecord::new("bloch", args.seed);
    let mut rows: Vec<(String, f64, qotl::ansatz::BlochPoint)> = Vec::new();
    if let Some(path) = &args.checkpoint {
        let spec: CircuitSpec = read_checkpoint(path)?.spec;
        for k in 0..=100 {
            let z = k as f64 / 100.0;
            let state = run_circuit(&spec, &LatentVector::new(vec![z; spec.n_z()])?)?;
            rows.push(("model".into(), z, bloch_projection(&state)));
        }
    } else {
        let (label, ens) = match args.generator {
            Generator::Equator => ("equator", dataset(Task::Equator, args.n, args.m, &[], args.seed)?),
            Generator::Localized => ("localized", dataset(Task::Localized, args.n, args.m, &args.localized.0, args.seed)?),
            Generator::Zero => ("zero", Ensemble::uniform(vec![qotl::qsim::Statevector::zero(args.n)?])?),
        };
        for (i, s) in ens.states().iter().enumerate() {
            rows.push((label.into(), i as f64, bloch_projection(s)));
        }
    }
    let (path, w) = create(out, "bloch.csv")?;
    let mut w = csv_writer(w);
    w.write_record(["source", "param", "x", "y", "z", "residual"]).map_err(csv_err)?;
    for (src, p, b) in rows {
        w.write_record([src, p.to_string(), b.x.to_string(), b.y.to_string(), b.z.to_string(), b.residual.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    drop(w);
    rec.add(&path)?;
    rec.finish(out)?;
    Ok(())
}

fn csv_writer(w: BufWriter<File>) -> csv::Writer<BufWriter<File>> {
    csv::Writer::from_writer(w)
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Io(e.to_string())
}

fn cmd_selftest(args: &SelftestArgs, out: &Path) -> Outcome<()> {
    let mut rec = RunRecord::new("selftest", args.seed);
    let checks = selftest::run(args.seed)?;
    let (path, w) = create(out, "selftest.csv")?;
    let mut w = csv_writer(w);
    w.write_record(["check", "value", "tolerance", "pass"]).map_err(csv_err)?;
    let mut all = true;
    for c in &checks {
        all &= c.pass;
        w.write_record([c.name.to_string(), c.value.to_string(), c.tolerance.to_string(), c.pass.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    drop(w);
    rec.add(&path)?;
    if !all {
        rec.status = "failed".into();
    }
    rec.finish(out)?;
    if all {
        Ok(())
    } else {
        Err(Failure::Other("selftest checks failed; see selftest.csv".into()))
    }
}

/// Expands `--config` into flags placed right after the subcommand so that
/// explicit flags, which come later, override them.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>, String> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let (path, consumed) = match argv[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => (argv.get(pos + 1).cloned().ok_or("--config needs a file")?, 2),
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let table: toml::Table = text.parse().map_err(|e| format!("{path}: {e}"))?;
    let mut flags = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => flags.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                flags.push(flag);
                flags.push(items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(","));
            }
            other => {
                flags.push(flag);
                flags.push(scalar(&other)?);
            }
        }
    }
    let mut rest: Vec<String> = argv;
    rest.drain(pos..pos + consumed);
    let sub = rest
        .iter()
        .position(|a| ["train", "anomaly", "experiment", "bloch", "selftest"].contains(&a.as_str()))
        .ok_or("no subcommand given")?;
    // `experiment` takes its name positionally before any flags
    let at = if rest[sub] == "experiment" { (sub + 2).min(rest.len()) } else { sub + 1 };
    rest.splice(at..at, flags);
    Ok(rest)
}

fn scalar(v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(format!("unsupported config value {other}")),
    }
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let matches = Cli::command().args_override_self(true).get_matches_from(argv);
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    if let Err(e) = fs::create_dir_all(&cli.out) {
        eprintln!("error: {}: {e}", cli.out.display());
        return ExitCode::from(EXIT_IO);
    }
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, &cli.out),
        Command::Anomaly(a) => cmd_anomaly(a, &cli.out),
        Command::Experiment(a) => cmd_experiment(a, &cli.out),
        Command::Bloch(a) => cmd_bloch(a, &cli.out),
        Command::Selftest(a) => cmd_selftest(a, &cli.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Divergence(m) => (EXIT_DIVERGENCE, m),
                Failure::Io(m) => (EXIT_IO, m),
                Failure::Other(m) => (EXIT_FAILURE, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
