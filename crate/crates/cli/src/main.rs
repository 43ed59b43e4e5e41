//! `qgp` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qgp_core::experiments::{run_extrapolation, run_interpolation, ExperimentOutcome};
use qgp_core::qkernel::kernel_shots;
use qgp_core::synth::synth_dataset;
use qgp_core::{
    fmt_f64, Dataset, EnergyWindow, GpModel, InputVector, KernelConfig, KernelKind, PairEncoding,
    QgpError, QuantumKernelParams, RunConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "qgp",
    version,
    about = "Quantum-kernel Gaussian process models of potential energy surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic 6-D dataset.
    Synth(SynthArgs),
    /// Tune kernel parameters by Bayesian optimization and save the model.
    Optimize(OptimizeArgs),
    /// Score a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Predict the energy at one point with a saved model.
    Predict(PredictArgs),
    /// Evaluate the kernel between two points.
    Kernel(KernelArgs),
    /// Summarize an optimization trace file.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "entangled")]
    kernel: String,
    #[arg(long)]
    train_n: usize,
    /// Train only on energies at or below this value (cm⁻¹).
    #[arg(long, allow_hyphen_values = true)]
    energy_max: Option<f64>,
    #[arg(long, default_value_t = 30)]
    bo_iters: usize,
    #[arg(long, default_value_t = 20)]
    bo_init: usize,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Offset inside log(L + a).
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `signed` or `absolute` coordinate difference in the pair phase.
    #[arg(long, default_value = "signed")]
    pair_encoding: String,
    #[arg(long, default_value_t = 0.05)]
    theta_min: f64,
    #[arg(long, default_value_t = 20.0)]
    theta_max: f64,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    trace_out: PathBuf,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    predictions_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also score points that were used for training.
    #[arg(long)]
    include_train: bool,
    #[arg(long)]
    predictions_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated coordinates.
    #[arg(long, allow_hyphen_values = true)]
    x: String,
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[arg(long, default_value = "entangled")]
    kind: String,
    /// Comma-separated kernel parameters (theta_1..theta_m[,theta_12] or the RBF theta).
    #[arg(long)]
    theta: String,
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    #[arg(long, allow_hyphen_values = true)]
    xp: String,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "signed")]
    pair_encoding: String,
}

#[derive(Debug, Args)]
struct TraceArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(QgpError),
}

impl From<QgpError> for CliError {
    fn from(e: QgpError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERIC,
            CliError::Core(QgpError::ObjectiveFailure(_)) => EXIT_NUMERIC,
            CliError::Core(QgpError::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Core(QgpError::DimensionMismatch { .. }) => EXIT_USAGE,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    configure_threads();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Kernel(a) => cmd_kernel(a),
        Command::Trace(a) => cmd_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("QGP_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // Fails only if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn parse_vector(text: &str, what: &str) -> CliResult<Vec<f64>> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|_| {
            CliError::Usage(format!(
                "cannot parse {what} '{text}' as comma-separated numbers"
            ))
        })?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage(format!(
            "{what} must contain finite numbers"
        )));
    }
    Ok(values)
}

fn parse_input(text: &str, what: &str) -> CliResult<InputVector> {
    InputVector::new(parse_vector(text, what)?).map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_kind(text: &str) -> CliResult<KernelKind> {
    text.parse()
        .map_err(|e: QgpError| CliError::Usage(e.to_string()))
}

fn parse_encoding(text: &str) -> CliResult<PairEncoding> {
    match text {
        "signed" => Ok(PairEncoding::Signed),
        "absolute" => Ok(PairEncoding::Absolute),
        other => Err(CliError::Usage(format!(
            "unknown pair encoding '{other}' (expected signed or absolute)"
        ))),
    }
}

fn echo(value: &serde_json::Value) {
    println!("config: {value}");
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    echo(&json!({"command": "synth", "out": a.out, "n": a.n, "seed": a.seed}));
    let data = synth_dataset(a.n, a.seed)?;
    data.save_csv(&a.out)?;
    println!("wrote {} points to {}", data.len(), a.out.display());
    Ok(())
}

fn cmd_optimize(a: OptimizeArgs) -> CliResult<()> {
    let kind = parse_kind(&a.kernel)?;
    let mut cfg = RunConfig::new(a.seed, a.train_n, kind);
    cfg.bo_init = a.bo_init;
    cfg.bo_iters = a.bo_iters;
    cfg.kappa = a.kappa;
    cfg.objective_offset_a = a.a;
    cfg.noise_var = a.sigma2;
    cfg.pair_encoding = parse_encoding(&a.pair_encoding)?;
    cfg.theta_bounds = (a.theta_min, a.theta_max);
    if let Some(e) = a.energy_max {
        if e.is_nan() {
            return Err(CliError::Usage("--energy-max must be a number".into()));
        }
        cfg.window = EnergyWindow::below(e)?;
    }
    cfg.validate()?;

    let data = Dataset::load_csv(&a.data)?;
    let (_, max_energy) = data.energy_range().expect("non-empty dataset");
    let extrapolate = cfg.window.hi < max_energy;
    let config_echo = json!({
        "command": "optimize",
        "data": a.data,
        "protocol": if extrapolate { "extrapolation" } else { "interpolation" },
        "run": cfg,
    });
    echo(&config_echo);

    let outcome = if extrapolate {
        run_extrapolation(&data, &cfg)?
    } else {
        run_interpolation(&data, &cfg)?
    };
    write_outputs(&a, &outcome, &config_echo)?;

    let r = &outcome.report;
    println!(
        "evaluations: {} ({} failed)",
        r.evaluations, r.failed_evaluations
    );
    println!("best theta: {}", join(&r.best_theta));
    println!("lml: {}", r.lml_at_optimum);
    println!("objective: {}", r.objective_at_optimum);
    println!("rmse: {}", r.rmse);
    println!("initial best rmse: {}", r.initial_best_rmse);
    println!("n_train: {} n_test: {}", r.n_train, r.n_test);
    println!("wall time: {:.2} s", r.wall_time_s);
    Ok(())
}

fn write_outputs(
    a: &OptimizeArgs,
    outcome: &ExperimentOutcome,
    config_echo: &serde_json::Value,
) -> CliResult<()> {
    outcome
        .model
        .save_json(&a.model_out, Some(config_echo.clone()))?;
    outcome
        .trace
        .save_csv(&a.trace_out, Some(&config_echo.to_string()))?;
    if let Some(path) = &a.report_out {
        outcome.report.save_json(path)?;
    }
    if let Some(path) = &a.predictions_out {
        outcome.save_predictions(path, Some(&config_echo.to_string()))?;
    }
    Ok(())
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(",")
}

fn load_model(path: &Path) -> CliResult<GpModel> {
    Ok(GpModel::load_json(path)?)
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    echo(&json!({
        "command": "evaluate",
        "model": a.model,
        "data": a.data,
        "include_train": a.include_train,
    }));
    let model = load_model(&a.model)?;
    let data = Dataset::load_csv(&a.data)?;
    let train: std::collections::HashSet<Vec<u64>> = model
        .train_inputs()
        .iter()
        .map(|x| x.as_slice().iter().map(|v| v.to_bits()).collect())
        .collect();
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| {
            a.include_train
                || !train.contains(
                    &data.inputs()[i]
                        .as_slice()
                        .iter()
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>(),
                )
        })
        .collect();
    let subset = data.subset(&keep);
    let preds = model.predict_means(subset.inputs())?;
    let err = qgp_core::experiments::rmse(&preds, subset.energies())?;
    if let Some(path) = &a.predictions_out {
        let mut text = String::new();
        let d = subset.dimension();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.extend(["energy_true".to_string(), "energy_pred".to_string()]);
        text.push_str(&header.join(","));
        text.push('\n');
        for ((x, e), p) in subset.iter().zip(&preds) {
            text.push_str(&join(x.as_slice()));
            text.push_str(&format!(",{},{}\n", fmt_f64(e), fmt_f64(*p)));
        }
        std::fs::write(path, text).map_err(QgpError::from)?;
    }
    println!("points: {}", subset.len());
    println!("rmse: {err}");
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult<()> {
    let x = parse_input(&a.x, "--x")?;
    let model = load_model(&a.model)?;
    let p = model.predict(&x)?;
    println!("mean: {}", p.mean);
    println!("std: {}", p.std_dev());
    Ok(())
}

fn cmd_kernel(a: KernelArgs) -> CliResult<()> {
    let kind = parse_kind(&a.kind)?;
    let encoding = parse_encoding(&a.pair_encoding)?;
    let theta = parse_vector(&a.theta, "--theta")?;
    let x = parse_input(&a.x, "--x")?;
    let xp = parse_input(&a.xp, "--xp")?;
    echo(&json!({
        "command": "kernel",
        "kind": kind,
        "theta": theta,
        "x": x,
        "xp": xp,
        "shots": a.shots,
        "seed": a.seed,
        "pair_encoding": encoding,
    }));
    let kernel = KernelConfig::from_flat(kind, &theta, encoding)?;
    if x.dim() != xp.dim() {
        return Err(CliError::Usage("--x and --xp differ in dimension".into()));
    }
    let exact = kernel.eval(&x, &xp)?;
    println!("exact: {exact}");
    if let Some(shots) = a.shots {
        let params: &QuantumKernelParams = kernel
            .quantum
            .as_ref()
            .ok_or_else(|| CliError::Usage("--shots applies only to quantum kernels".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let estimate = kernel_shots(&x, &xp, params, shots, &mut rng)?;
        println!("shots: {shots}");
        println!("estimate: {estimate}");
    }
    Ok(())
}

fn cmd_trace(a: TraceArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.trace).map_err(QgpError::from)?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let headers = rdr.headers().map_err(QgpError::from)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Core(QgpError::InvalidData(format!(
                "trace lacks column '{name}'"
            )))
        })
    };
    let (obj_col, best_col) = (col("objective")?, col("best_so_far")?);
    let theta_cols: Vec<usize> = (1..obj_col).collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(QgpError::from)?;
        let parse = |i: usize| -> CliResult<f64> {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::Core(QgpError::InvalidData(format!(
                        "bad value in trace row: {record:?}"
                    )))
                })
        };
        let theta = theta_cols
            .iter()
            .map(|&i| parse(i))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push((theta, parse(obj_col)?, parse(best_col)?));
    }
    if rows.is_empty() {
        return Err(CliError::Core(QgpError::EmptyInput(
            "trace has no evaluations",
        )));
    }
    let monotone = rows.windows(2).all(|w| w[1].2 >= w[0].2);
    let (best_i, best) =
        rows.iter().enumerate().fold(
            (0, &rows[0]),
            |acc, (i, r)| if r.1 > acc.1 .1 { (i, r) } else { acc },
        );
    let names: Vec<&str> = theta_cols.iter().map(|&i| &headers[i]).collect();
    println!("evaluations: {}", rows.len());
    println!("parameters: {}", names.join(","));
    println!("best iter: {best_i}");
    println!("best objective: {}", best.1);
    println!("best theta: {}", join(&best.0));
    println!("best_so_far monotone: {monotone}");
    Ok(())
}
