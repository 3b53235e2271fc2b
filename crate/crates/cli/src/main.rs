use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use activeu::error::{Error, Result};
use activeu::harness::dgp::DgpKind;
use activeu::harness::io::{read_csv, write_json, Report};
use activeu::harness::trials::{run_estimation_trials, Method, Protocol, SimConfig};
use activeu::harness::uest::{run_uestimation, run_uestimation_trials, PilotSource, UMethod, UestConfig};
use activeu::inference::DEFAULT_ALPHA;
use activeu::kernels::{fast_gini_pairwise_sum, fast_kendall_sum, naive_gini_pairwise_sum, naive_kendall_sum};
use activeu::learners::LearnerSpec;
use activeu::pipeline::{estimate_dataset, EstimateConfig, EstimatePolicy};
use activeu::policy::{ScoreForm, DEFAULT_TAU};
use clap::{ArgAction, Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "activeu", version, about = "Label-efficient estimation of U-statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a U-statistic on a CSV dataset, querying labels under a policy.
    Estimate(EstimateArgs),
    /// Monte Carlo comparison of estimators on synthetic data.
    Simulate(SimulateArgs),
    /// Pairwise-ranking U-estimation trials on a CSV pool or synthetic data.
    Uestimate(UestimateArgs),
    /// Time fast kernel sums against naive enumeration and check they agree.
    BenchKernels(BenchArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    seed: u64,
    /// JSON output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    kernel: String,
    #[arg(long)]
    budget: f64,
    /// classical, uniform, active or plugin-act-y
    #[arg(long, default_value = "active")]
    policy: String,
    #[arg(long, default_value_t = activeu::pipeline::DEFAULT_PILOT_FRAC)]
    pilot_frac: f64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    normalized: bool,
    /// knn[:K] or ridge[:LAMBDA]
    #[arg(long, default_value = "knn")]
    mu_learner: String,
    #[arg(long, default_value = "knn")]
    score_learner: String,
    /// abs or rms
    #[arg(long, default_value = "abs")]
    score_form: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimulateArgs {
    /// appendix-c1 or linear-ranking
    #[arg(long)]
    dgp: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    kernel: String,
    #[arg(long, value_delimiter = ',', required = true)]
    budgets: Vec<f64>,
    #[arg(long, default_value_t = 3000)]
    trials: usize,
    #[arg(long, default_value = "classical,uniform,active")]
    methods: String,
    /// fixed (one dataset, redrawn labels) or redraw (fresh data per trial)
    #[arg(long, default_value = "fixed")]
    protocol: String,
    #[arg(long, default_value_t = 1000)]
    pilot_size: usize,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value = "abs")]
    score_form: String,
    /// Include per-trial records in the output.
    #[arg(long)]
    records: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct UestimateArgs {
    /// CSV pool; its y column acts as the labeling oracle.
    #[arg(long, conflicts_with = "dgp")]
    data: Option<PathBuf>,
    /// linear-ranking
    #[arg(long)]
    dgp: Option<String>,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    p: usize,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    budget: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pilot_budget: usize,
    /// historical (synthetic only), queried or queried-free
    #[arg(long)]
    pilot_source: Option<String>,
    #[arg(long, default_value_t = 3000)]
    trials: usize,
    #[arg(long, default_value = "noml,semi,act")]
    methods: String,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    seed: u64,
    /// Replace fitted pseudo-labels by y + N(0, s^2) (synthetic only).
    #[arg(long)]
    pseudo_noise: Option<f64>,
    /// Compute the sandwich covariance of every active fit.
    #[arg(long)]
    sandwich: bool,
    #[arg(long)]
    records: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// gini or kendall
    #[arg(long)]
    kernel: String,
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => 2,
        Error::Parse { .. } | Error::Domain(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Estimation(_) | Error::NotConverged { .. } => 4,
    }
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            stdout.write_all(b"\n")?;
            Ok(())
        }
    }
}

fn report<C: Serialize, S: Serialize, R: Serialize>(
    command: &'static str,
    config: C,
    summaries: S,
    records: Option<R>,
    extra: Map<String, Value>,
) -> Report<C, S, R> {
    Report {
        version: activeu::VERSION,
        command,
        config,
        summaries,
        records,
        extra,
    }
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let mut cfg = EstimateConfig::new(&a.kernel, a.budget, EstimatePolicy::parse(&a.policy)?, a.common.seed);
    cfg.tau = a.common.tau;
    cfg.alpha = a.common.alpha;
    cfg.pilot_frac = a.pilot_frac;
    cfg.normalized = a.normalized;
    cfg.mu_learner = LearnerSpec::parse(&a.mu_learner)?;
    cfg.score_learner = LearnerSpec::parse(&a.score_learner)?;
    cfg.score_form = ScoreForm::parse(&a.score_form)?;
    let data = read_csv(&a.data)?;
    let out = estimate_dataset(&data, &cfg)?;
    emit(
        a.common.out.as_deref(),
        &report("estimate", cfg, out, None::<()>, Map::new()),
    )
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let dgp = DgpKind::parse(&a.dgp)?;
    let mut cfg = SimConfig::new(dgp, a.n, a.p, &a.kernel, a.budgets, a.trials, a.common.seed);
    cfg.methods = Method::parse_list(&a.methods)?;
    cfg.tau = a.common.tau;
    cfg.alpha = a.common.alpha;
    cfg.pilot_size = a.pilot_size;
    cfg.score_form = ScoreForm::parse(&a.score_form)?;
    cfg.protocol = match a.protocol.as_str() {
        "fixed" => Protocol::Fixed,
        "redraw" => Protocol::Redraw,
        other => return Err(Error::Argument(format!("unknown protocol '{other}'"))),
    };
    if let Some(s) = a.noise_sigma {
        cfg.noise_sigma = s;
    }
    let out = run_estimation_trials(&cfg)?;
    let mut extra = Map::new();
    extra.insert("population_reference".into(), json!(out.population_reference));
    extra.insert("fixed_target".into(), json!(out.fixed_target));
    extra.insert("excluded".into(), json!(out.excluded.len()));
    let records = a.records.then_some(out.records);
    emit(
        a.common.out.as_deref(),
        &report("simulate", out.config, out.summaries, records, extra),
    )
}

fn uestimate(a: UestimateArgs) -> Result<()> {
    let mut cfg = UestConfig::new(a.budget, a.trials, a.seed);
    cfg.methods = UMethod::parse_list(&a.methods)?;
    cfg.pilot_budget = a.pilot_budget;
    cfg.tau = a.tau;
    cfg.sandwich = a.sandwich;
    cfg.pseudo_noise = a.pseudo_noise;
    if let Some(src) = &a.pilot_source {
        cfg.pilot_source = match src.as_str() {
            "historical" => PilotSource::Historical,
            "queried" => PilotSource::Queried { deduct: true },
            "queried-free" => PilotSource::Queried { deduct: false },
            other => return Err(Error::Argument(format!("unknown pilot source '{other}'"))),
        };
    }
    let out = match (&a.data, &a.dgp) {
        (Some(path), _) => {
            if a.pseudo_noise.is_some() {
                return Err(Error::Argument("--pseudo-noise needs synthetic data".into()));
            }
            if a.pilot_source.is_none() {
                cfg.pilot_source = PilotSource::Queried { deduct: true };
            }
            run_uestimation(&cfg, read_csv(path)?, None, None)?
        }
        (None, Some(name)) => {
            let kind = DgpKind::parse(name)?;
            if kind != DgpKind::LinearRanking {
                return Err(Error::Argument("uestimate simulates linear-ranking data only".into()));
            }
            let sigma = a.noise_sigma.unwrap_or(kind.default_sigma());
            run_uestimation_trials(&cfg, a.n, a.p, sigma)?
        }
        (None, None) => return Err(Error::Argument("one of --data or --dgp is required".into())),
    };
    let mut extra = Map::new();
    extra.insert("n".into(), json!(out.n));
    extra.insert("p".into(), json!(out.p));
    extra.insert("theta_star".into(), json!(out.theta_star));
    extra.insert("theta_ref".into(), json!(out.theta_ref));
    extra.insert("theta_pilot".into(), json!(out.theta_pilot));
    extra.insert("excluded".into(), json!(out.excluded.len()));
    let records = a.records.then_some(out.records);
    emit(
        a.out.as_deref(),
        &report("uestimate", out.config, out.summaries, records, extra),
    )
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    fast_sum: f64,
    naive_sum: f64,
    rel_error: f64,
    equal: bool,
    fast_ms: f64,
    naive_ms: f64,
    speedup: f64,
}

const BENCH_RTOL: f64 = 1e-9;

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64() * 1e3)
}

fn bench_kernels(a: BenchArgs) -> Result<()> {
    if a.kernel != "gini" && a.kernel != "kendall" {
        return Err(Error::Argument(format!(
            "bench-kernels supports gini and kendall, not '{}'",
            a.kernel
        )));
    }
    let mut rows = Vec::new();
    for (i, &n) in a.sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(i as u64));
        let ((fast, fast_ms), (naive, naive_ms)) = if a.kernel == "gini" {
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            (
                timed(|| fast_gini_pairwise_sum(&v)),
                timed(|| naive_gini_pairwise_sum(&v)),
            )
        } else {
            // Rounded coordinates so ties are exercised.
            let v: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        (rng.random::<f64>() * 50.0).round(),
                        (rng.random::<f64>() * 50.0).round(),
                    )
                })
                .collect();
            (timed(|| fast_kendall_sum(&v)), timed(|| naive_kendall_sum(&v)))
        };
        let fast = fast?;
        let rel_error = (fast - naive).abs() / naive.abs().max(1.0);
        rows.push(BenchRow {
            n,
            fast_sum: fast,
            naive_sum: naive,
            rel_error,
            equal: rel_error <= BENCH_RTOL,
            fast_ms,
            naive_ms,
            speedup: naive_ms / fast_ms.max(1e-6),
        });
    }
    let mismatch: Vec<usize> = rows.iter().filter(|r| !r.equal).map(|r| r.n).collect();
    let config = json!({"kernel": a.kernel, "sizes": a.sizes, "seed": a.seed, "rtol": BENCH_RTOL});
    emit(
        a.out.as_deref(),
        &report("bench-kernels", config, rows, None::<()>, Map::new()),
    )?;
    if mismatch.is_empty() {
        Ok(())
    } else {
        Err(Error::Estimation(format!(
            "fast and naive sums disagree at n = {mismatch:?}"
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::Uestimate(a) => uestimate(a),
        Command::BenchKernels(a) => bench_kernels(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
