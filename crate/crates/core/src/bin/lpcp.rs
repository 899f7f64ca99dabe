use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lpcp_core::baselines::{fg_threshold, read_weighted, weighted_threshold, WeightedScores};
use lpcp_core::estimation::{default_grid, estimate_lp_params};
use lpcp_core::harness::{
    compare, evaluate, synthetic_matrix, write_table_csv, EvalConfig, Method, MethodParams,
    ScoreMatrix, SynthConfig, TestPerturbation,
};
use lpcp_core::{
    perturb_sample, read_scores, read_values, write_scores, Error, GlobalLaw, Level, LocalLaw,
    PerturbationSpec, Result,
};

/// Robust split conformal prediction under Lévy–Prokhorov distribution shift.
#[derive(Parser)]
#[command(name = "lpcp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Threshold from a calibration score file.
    Calibrate(CalibrateArgs),
    /// Select (epsilon, rho) from two calibration batches and a test batch.
    Estimate(EstimateArgs),
    /// Coverage and set size of one method over random splits.
    Evaluate(EvaluateArgs),
    /// Several methods on shared splits.
    Compare(CompareArgs),
    /// Perturbed score files or synthetic score matrices.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Chi-squared radius for chi2 and fg.
    #[arg(long, default_value_t = 0.0)]
    rho_chi2: f64,
    /// RSCP perturbation budget.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// RSCP smoothing scale.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Use the plain 1 - alpha level for lp instead of the finite-sample adjusted one.
    #[arg(long)]
    uncorrected: bool,
}

impl MethodArgs {
    fn params(&self) -> MethodParams {
        MethodParams {
            epsilon: self.epsilon,
            rho: self.rho,
            rho_chi2: self.rho_chi2,
            delta: self.delta,
            sigma: self.sigma,
            corrected: !self.uncorrected,
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    /// One score per line.
    #[arg(long, required_unless_present = "weights")]
    scores: Option<PathBuf>,
    /// CSV with columns score,weight (weighted and fg).
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    test_weight: f64,
    #[arg(long, default_value = "lp")]
    method: String,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[command(flatten)]
    params: MethodArgs,
    /// Score files start with a header line.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    calib_a: PathBuf,
    #[arg(long)]
    calib_b: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Comma-separated epsilon grid; defaults to log-spaced points over the pooled IQR.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    grid_points: usize,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV with header true_label,s_0,...,s_{L-1}.
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long = "splits", default_value_t = 30)]
    splits: usize,
    #[arg(long, default_value_t = 1000)]
    n_calib: usize,
    #[arg(long, default_value_t = 1000)]
    k_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Local noise bound applied to test rows.
    #[arg(long)]
    perturb_epsilon: Option<f64>,
    /// Relabelling probability applied to test rows.
    #[arg(long)]
    perturb_rho: Option<f64>,
    /// Keep one perturbation draw per row across splits.
    #[arg(long)]
    fix_perturbation: bool,
    /// One likelihood-ratio weight per matrix row.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    header: bool,
    #[command(flatten)]
    params: MethodArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, default_value = "lp")]
    method: String,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Methods to compare, comma-separated or repeated.
    #[arg(long = "method", value_delimiter = ',', required = true)]
    methods: Vec<String>,
    /// Also write a summary table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scores to perturb; omit to generate a synthetic score matrix instead.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Point mass for replaced scores.
    #[arg(long, default_value_t = 0.0)]
    global_value: f64,
    /// Uniform law for replaced scores, as low,high.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    global_uniform: Option<Vec<f64>>,
    /// Deterministic local displacement instead of uniform noise.
    #[arg(long)]
    local_point: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    labels: usize,
    #[arg(long, default_value_t = 3.0)]
    signal: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long)]
    header: bool,
    /// Output file; a sidecar `<out>.json` records the settings.
    #[arg(long)]
    out: PathBuf,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn emit_json<T: Serialize + ?Sized>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => create(p)?.write_all(text.as_bytes())?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn level(x: f64) -> Result<Level> {
    Level::new(x)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let alpha = level(a.alpha)?;
    let method = Method::from_name(&a.method, &a.params.params())?;
    let result = if let (true, Some(wpath)) = (method.uses_weights(), &a.weights) {
        let (scores, weights) = read_weighted(open(wpath)?)?;
        let ws = WeightedScores::new(scores, weights, a.test_weight)?;
        match method {
            Method::Fg { rho } => fg_threshold(&ws, alpha, rho)?,
            _ => weighted_threshold(&ws, alpha)?,
        }
    } else {
        let path = a
            .scores
            .as_deref()
            .ok_or_else(|| Error::Domain("--scores is required for this method".into()))?;
        method.threshold(&read_scores(open(path)?, a.header)?, alpha)?
    };
    emit_json(&result, a.out.as_deref())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let calib_a = read_scores(open(&a.calib_a)?, a.header)?;
    let calib_b = read_scores(open(&a.calib_b)?, a.header)?;
    let test = read_scores(open(&a.test)?, a.header)?;
    let grid = match a.grid {
        Some(g) => g,
        None => default_grid(&[&calib_a, &calib_b, &test], a.grid_points)?,
    };
    let result = estimate_lp_params(&calib_a, &calib_b, &test, &grid, level(a.alpha)?)?;
    emit_json(&result, a.out.as_deref())
}

fn eval_inputs(e: &EvalArgs) -> Result<(ScoreMatrix, EvalConfig, Option<Vec<f64>>)> {
    let matrix = ScoreMatrix::read_csv(open(&e.matrix)?)?;
    let perturbation = match (e.perturb_epsilon, e.perturb_rho) {
        (None, None) => None,
        (eps, rho) => Some(TestPerturbation {
            epsilon: eps.unwrap_or(0.0),
            rho: rho.unwrap_or(0.0),
            redraw: !e.fix_perturbation,
        }),
    };
    let config = EvalConfig {
        alpha: e.alpha,
        splits: e.splits,
        n_calib: e.n_calib,
        k_test: e.k_test,
        seed: e.seed,
        perturbation,
    };
    let weights = match &e.weights {
        Some(p) => Some(read_values(open(p)?, e.header)?),
        None => None,
    };
    Ok((matrix, config, weights))
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let (matrix, config, weights) = eval_inputs(&a.eval)?;
    let method = Method::from_name(&a.method, &a.eval.params.params())?;
    let report = evaluate(&matrix, &method, &config, weights.as_deref())?;
    emit_json(&report, a.eval.out.as_deref())
}

fn run_compare(a: CompareArgs) -> Result<()> {
    let (matrix, config, weights) = eval_inputs(&a.eval)?;
    let params = a.eval.params.params();
    let methods = a
        .methods
        .iter()
        .map(|m| Method::from_name(m, &params))
        .collect::<Result<Vec<_>>>()?;
    let reports = compare(&matrix, &methods, &config, weights.as_deref())?;
    if let Some(p) = &a.csv {
        write_table_csv(&reports, create(p)?)?;
    }
    emit_json(&reports, a.eval.out.as_deref())
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum Sidecar {
    Perturb {
        input: String,
        spec: PerturbationSpec,
    },
    Synthetic {
        config: SynthConfig,
    },
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let sidecar = match &a.scores {
        Some(path) => {
            let base = read_scores(open(path)?, a.header)?;
            let global_law = match a.global_uniform.as_deref() {
                Some(&[low, high]) => GlobalLaw::Uniform { low, high },
                _ => GlobalLaw::PointMass {
                    value: a.global_value,
                },
            };
            let local_law = match a.local_point {
                Some(value) => LocalLaw::PointMass { value },
                None => LocalLaw::Uniform,
            };
            let spec = PerturbationSpec {
                epsilon: a.epsilon,
                rho: level(a.rho)?,
                local_law,
                global_law,
                seed: a.seed,
            };
            let out = perturb_sample(&base, &spec)?;
            write_scores(create(&a.out)?, out.scores())?;
            Sidecar::Perturb {
                input: path.display().to_string(),
                spec,
            }
        }
        None => {
            let config = SynthConfig {
                rows: a.rows,
                labels: a.labels,
                signal: a.signal,
                noise: a.noise,
                seed: a.seed,
            };
            synthetic_matrix(&config)?.write_csv(create(&a.out)?)?;
            Sidecar::Synthetic { config }
        }
    };
    emit_json(&sidecar, Some(&sidecar_path(&a.out)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Estimate(a) => estimate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Compare(a) => run_compare(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lpcp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
