//! `defliq` command-line front end. Every command prints one JSON document
//! on standard output; diagnostics go to standard error.
//!
//! Exit codes: 0 on success, 1 when a verification fails, 2 on bad input.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use defliq::figures::{dataset, FigureId, FigureSpec};
use defliq::hjb::{smooth_fit_report, verify_appendix_identities, verify_hjb, GridSpec};
use defliq::numeric::linspace;
use defliq::sim::{simulate_paths, summarize, write_paths_csv, Estimator, Policy, SimConfig};
use defliq::{BoundarySet, ModelError, ModelParams, Regime, State, ValueContext};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "defliq",
    version,
    about = "Optimal liquidation with default risk"
)]
struct Cli {
    /// JSON file with the model parameters; the reference set when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exponents, thresholds and sampled waiting-region coefficients.
    Boundaries,
    /// Value, region and partial derivatives at one state.
    Value {
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, allow_negative_numbers = true)]
        y: f64,
        #[arg(long, allow_negative_numbers = true)]
        w: f64,
    },
    /// Certifies the variational inequality, the identity suite and smooth fit.
    Verify {
        #[arg(long, default_value_t = 400)]
        nx: usize,
        #[arg(long, default_value_t = 50)]
        ny: usize,
        /// Multiplies the below-barrier coefficient; a negative control.
        #[arg(long, hide = true)]
        corrupt_b_scale: Option<f64>,
    },
    /// Monte-Carlo estimate of a policy's expected discounted gain.
    Simulate {
        #[arg(long, allow_negative_numbers = true)]
        x: f64,
        #[arg(long, allow_negative_numbers = true)]
        y: f64,
        #[arg(long, allow_negative_numbers = true)]
        w: f64,
        #[arg(long, value_enum, default_value_t = PolicyArg::Optimal)]
        policy: PolicyArg,
        /// Liquidation time of the sell-at policy.
        #[arg(long, default_value_t = 1.0)]
        sell_time: f64,
        #[arg(long, default_value_t = 20_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 15.0)]
        tmax: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = EstimatorArg::Survival)]
        estimator: EstimatorArg,
        /// Also write one CSV row per path here.
        #[arg(long)]
        paths_csv: Option<PathBuf>,
    },
    /// Writes the CSV files of a figure dataset.
    Figures {
        #[arg(long, value_parser = ["f1", "f2", "f3", "f4"])]
        figure: String,
        #[arg(long, default_value = "figures")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Optimal,
    Immediate,
    SellAt,
    Hold,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Survival,
    Sampled,
}

enum Failure {
    Input(String),
    Verification(serde_json::Value),
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<serde_json::Value, Failure>;

fn load_params(path: Option<&PathBuf>) -> Result<ModelParams, Failure> {
    match path {
        None => Ok(ModelParams::reference()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?;
            Ok(ModelParams::from_json(&text)?)
        }
    }
}

fn boundaries(params: ModelParams) -> Outcome {
    let b = BoundarySet::new(&params)?;
    let samples = linspace(0.0, 7.0, 15)
        .into_iter()
        .map(|y| {
            Ok(json!({
                "y": y,
                "g_lambda": b.g_lambda(y, &params),
                "g_infinity": b.g_infinity(y, &params),
                "b_coeff": b.b_coeff(y, &params)?,
                "b_scaled": b.b_scaled(y, &params)?,
            }))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(
        json!({ "params": params, "n0": b.n0, "n1": b.n1, "f0": b.f0, "kappa": b.kappa, "samples": samples }),
    )
}

fn value(params: ModelParams, x: f64, y: f64, w: f64) -> Outcome {
    let ctx = ValueContext::new(params)?;
    let s = State::new(x, y, w)?;
    // undefined on branch edges and at zero inventory
    let derivatives = match ctx.value_derivatives(&s) {
        Ok(d) => Some(d),
        Err(ModelError::OnBranchEdge { .. }) => None,
        Err(_) if y == 0.0 => None,
        Err(e) => return Err(e.into()),
    };
    Ok(json!({
        "state": s,
        "value": ctx.value(&s)?,
        "region": ctx.classify(&s),
        "derivatives": derivatives,
    }))
}

fn verify(params: ModelParams, nx: usize, ny: usize, corrupt: Option<f64>) -> Outcome {
    if nx < 2 || ny < 2 {
        return Err(Failure::Input("--nx and --ny must be at least 2".into()));
    }
    let mut ctx = ValueContext::new(params)?;
    if let Some(f) = corrupt {
        ctx = ctx.with_corrupted_coefficient(f);
    }
    let grid = GridSpec {
        nx,
        ny,
        ..GridSpec::default()
    };
    let hjb = verify_hjb(&ctx, &grid)?;
    let identities = verify_appendix_identities(&ctx, &grid.ys())?;
    let fit = smooth_fit_report(&ctx, &grid.ys())?;
    let fit_ok = fit.max_jump <= 1e-6;
    let passed = hjb.passed && identities.passed && fit_ok;
    let report = json!({
        "passed": passed,
        "hjb": hjb,
        "identities": identities,
        "smooth_fit": { "max_jump": fit.max_jump, "tolerance": 1e-6, "passed": fit_ok, "jumps": fit.jumps },
    });
    if passed {
        Ok(report)
    } else {
        Err(Failure::Verification(report))
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    params: ModelParams,
    (x, y, w): (f64, f64, f64),
    policy: PolicyArg,
    sell_time: f64,
    paths: usize,
    dt: f64,
    tmax: f64,
    seed: u64,
    estimator: EstimatorArg,
    paths_csv: Option<PathBuf>,
) -> Outcome {
    let ctx = ValueContext::new(params)?;
    let s = State::new(x, y, w)?;
    let cfg = SimConfig {
        dt,
        t_max: tmax,
        n_paths: paths,
        seed,
        estimator: match estimator {
            EstimatorArg::Survival => Estimator::SurvivalWeighted,
            EstimatorArg::Sampled => Estimator::SampledDefault,
        },
        policy: match policy {
            PolicyArg::Optimal => Policy::Optimal,
            PolicyArg::Immediate => Policy::ImmediateLiquidation,
            PolicyArg::SellAt => Policy::SellAtTime(sell_time),
            PolicyArg::Hold => Policy::Hold,
        },
    };
    let records = simulate_paths(&s, &ctx, &cfg)?;
    let est = summarize(&records, &s, &ctx, &cfg);
    if let Some(path) = paths_csv {
        let mut buf = Vec::new();
        write_paths_csv(&records, &mut buf).expect("writing to memory");
        fs::write(&path, buf)
            .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    let v = ctx.value(&s)?;
    let z = if est.std_error > 0.0 {
        Some((est.mean - v) / est.std_error)
    } else {
        None
    };
    Ok(json!({
        "estimate": est,
        "analytic_value": v,
        "z_score": z,
        "regime": ctx.regime(w),
        "note": match ctx.regime(w) {
            Regime::Below => "the analytic value treats the stressed regime as permanent",
            Regime::Above => "the analytic value treats the default-free regime as permanent",
        },
    }))
}

fn figures(params: ModelParams, figure: &str, out: PathBuf) -> Outcome {
    let id: FigureId = figure.parse()?;
    let d = dataset(&params, &FigureSpec::default_for(id))?;
    let files = d
        .write(&out)
        .map_err(|e| Failure::Input(format!("cannot write to {}: {e}", out.display())))?;
    Ok(json!({ "figure": id, "files": files, "rows": d.rows(), "summary": d.summary }))
}

fn dispatch(cli: Cli) -> Outcome {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Input(e.to_string()))?;
    }
    let params = load_params(cli.config.as_ref())?;
    match cli.command {
        Command::Boundaries => boundaries(params),
        Command::Value { x, y, w } => value(params, x, y, w),
        Command::Verify {
            nx,
            ny,
            corrupt_b_scale,
        } => verify(params, nx, ny, corrupt_b_scale),
        Command::Simulate {
            x,
            y,
            w,
            policy,
            sell_time,
            paths,
            dt,
            tmax,
            seed,
            estimator,
            paths_csv,
        } => simulate(
            params,
            (x, y, w),
            policy,
            sell_time,
            paths,
            dt,
            tmax,
            seed,
            estimator,
            paths_csv,
        ),
        Command::Figures { figure, out } => figures(params, &figure, out),
    }
}

fn print(v: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("JSON values serialize")
    );
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(v) => {
            print(&v);
            ExitCode::SUCCESS
        }
        Err(Failure::Verification(v)) => {
            print(&v);
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
