//! Monte-Carlo simulation of the controlled price, inventory and credit index.
//!
//! Each path runs on its own ChaCha stream (`seed`, stream = path index),
//! so results do not depend on how rayon schedules the paths. Per step the
//! order is: apply the policy, account for default over the step, then
//! diffuse price and credit index by one exact log-normal / Gaussian step.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::numeric::pairwise_sum;
use crate::params::{ModelParams, Regime, RegionLabel, State};
use crate::value::{sale_gain, ValueContext};

/// Accuracy of the below-barrier landing root used by the optimal policy.
pub const LANDING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Never samples default; weights gains by the survival probability and
    /// charges the expected default cost continuously.
    SurvivalWeighted,
    /// Samples the default time against one exponential draw.
    SampledDefault,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Sell down to the free boundary whenever the state leaves the waiting region.
    Optimal,
    /// Sell everything at time zero.
    ImmediateLiquidation,
    /// Hold until the given time, then sell everything.
    SellAtTime(f64),
    /// Never sell.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub policy: Policy,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_max >= self.dt && self.t_max.is_finite()) {
            return bad(format!("t_max must be at least dt, got {}", self.t_max));
        }
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1".into());
        }
        if let Policy::SellAtTime(t) = self.policy {
            if !(t >= 0.0 && t.is_finite()) {
                return bad(format!("sale time must be non-negative, got {t}"));
            }
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_max / self.dt - 1e-9).ceil() as usize
    }
}

/// Outcome of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRecord {
    pub discounted_gain: f64,
    pub defaulted: bool,
    pub default_time: Option<f64>,
    pub final_inventory: f64,
    pub shares_sold_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub estimator: Estimator,
    pub policy: Policy,
    pub seed: u64,
    /// Fraction of paths with a sampled default (zero for the survival estimator).
    pub default_fraction: f64,
    /// Upper bound on the discounted value beyond `t_max`, `e^{-(delta - mu) t_max} x / gamma`.
    pub truncation_bound: f64,
}

/// Price and credit index after one step, with the Brownian increments used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub x: f64,
    pub w: f64,
    pub dw: f64,
    pub db: f64,
}

/// Exact step of the price `dX/X = mu dt + sigma dB` and the credit index
/// `dW`, with `B = rho W + sqrt(1 - rho^2) W2`.
pub fn step_exact<R: Rng + ?Sized>(
    x: f64,
    w: f64,
    dt: f64,
    params: &ModelParams,
    rng: &mut R,
) -> Step {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let sq = dt.sqrt();
    let dw = sq * z1;
    let rho = params.rho;
    let db = sq * (rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * z2);
    let drift = (params.mu - 0.5 * params.sigma * params.sigma) * dt;
    Step {
        x: x * (drift + params.sigma * db).exp(),
        w: w + dw,
        dw,
        db,
    }
}

/// Shares the optimal policy sells at `s`: nothing while waiting, down to
/// the threshold curve in a partial-sale region, everything otherwise.
pub fn optimal_action(s: &State, ctx: &ValueContext) -> Result<f64> {
    Ok(match ctx.classify(s) {
        RegionLabel::WaitAbove | RegionLabel::WaitBelow | RegionLabel::Liquidated => 0.0,
        RegionLabel::Sell1Above | RegionLabel::Sell1Below => s.y,
        RegionLabel::Sell2Above => ctx.landing(s.x, s.y, Regime::Above, LANDING_TOL)?,
        RegionLabel::Sell2Below => ctx.landing(s.x, s.y, Regime::Below, LANDING_TOL)?,
    })
}

fn policy_action(policy: Policy, s: &State, t: f64, ctx: &ValueContext) -> Result<f64> {
    match policy {
        Policy::Optimal => optimal_action(s, ctx),
        Policy::ImmediateLiquidation => Ok(s.y),
        Policy::SellAtTime(t0) => Ok(if t >= t0 - 1e-9 { s.y } else { 0.0 }),
        Policy::Hold => Ok(0.0),
    }
}

/// Simulates one path from `initial`.
pub fn run_path<R: Rng + ?Sized>(
    initial: &State,
    ctx: &ValueContext,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PathRecord> {
    let p = ctx.params();
    let (lam, k, delta) = (p.default_rate, p.default_penalty, p.delta);
    let dt = cfg.dt;
    let mut s = *initial;
    let mut gain = 0.0;
    let mut sold = 0.0;
    // survival: h accumulates delta + lambda 1{w < b}; sampled: hazard only
    let mut h: f64 = 0.0;
    let mut hazard = 0.0;
    // drawn unconditionally so both estimators see the same diffusion noise
    let exp_draw: f64 = rng.sample(Exp1);
    let threshold = match cfg.estimator {
        Estimator::SampledDefault => exp_draw,
        Estimator::SurvivalWeighted => f64::INFINITY,
    };
    let mut default_time = None;

    for step in 0..cfg.steps() {
        let t = step as f64 * dt;
        let disc = match cfg.estimator {
            Estimator::SurvivalWeighted => (-h).exp(),
            Estimator::SampledDefault => (-delta * t).exp(),
        };
        let d = policy_action(cfg.policy, &s, t, ctx)?.min(s.y);
        if d > 0.0 {
            gain += disc * sale_gain(s.x, d, p.gamma, p.cost_sell)?;
            s.x *= (-p.gamma * d).exp();
            sold += d;
            s.y = if d >= s.y { 0.0 } else { s.y - d };
        }
        if s.y <= 0.0 {
            s.y = 0.0;
            break;
        }
        let below = if s.w < p.barrier { 1.0 } else { 0.0 };
        match cfg.estimator {
            Estimator::SurvivalWeighted => {
                gain -= disc * lam * below * k * s.x * s.y * dt;
                h += (delta + lam * below) * dt;
            }
            Estimator::SampledDefault => {
                hazard += lam * below * dt;
                if hazard > threshold {
                    let tau = t + dt;
                    gain -= (-delta * tau).exp() * k * s.x * s.y;
                    default_time = Some(tau);
                    break;
                }
            }
        }
        let next = step_exact(s.x, s.w, dt, p, rng);
        s.x = next.x;
        s.w = next.w;
    }
    Ok(PathRecord {
        discounted_gain: gain,
        defaulted: default_time.is_some(),
        default_time,
        final_inventory: s.y,
        shares_sold_total: sold,
    })
}

/// RNG of path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs every path of `cfg` and returns the records in path order.
pub fn simulate_paths(
    initial: &State,
    ctx: &ValueContext,
    cfg: &SimConfig,
) -> Result<Vec<PathRecord>> {
    cfg.validate()?;
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| run_path(initial, ctx, cfg, &mut path_rng(cfg.seed, i)))
        .collect()
}

/// Mean and standard error of the discounted gain over `cfg.n_paths` paths.
pub fn estimate(initial: &State, ctx: &ValueContext, cfg: &SimConfig) -> Result<McEstimate> {
    let records = simulate_paths(initial, ctx, cfg)?;
    Ok(summarize(&records, initial, ctx, cfg))
}

pub fn summarize(
    records: &[PathRecord],
    initial: &State,
    ctx: &ValueContext,
    cfg: &SimConfig,
) -> McEstimate {
    let n = records.len() as f64;
    let gains: Vec<f64> = records.iter().map(|r| r.discounted_gain).collect();
    let (lo, hi) = gains
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| {
            (a.min(g), b.max(g))
        });
    // a deterministic payoff must come back exactly, without summation noise
    let (mean, var) = if lo == hi {
        (lo, 0.0)
    } else {
        let mean = pairwise_sum(&gains) / n;
        let sq: Vec<f64> = gains.iter().map(|g| (g - mean) * (g - mean)).collect();
        (mean, pairwise_sum(&sq) / (n - 1.0))
    };
    let p = ctx.params();
    McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        n_paths: records.len(),
        dt: cfg.dt,
        t_max: cfg.t_max,
        estimator: cfg.estimator,
        policy: cfg.policy,
        seed: cfg.seed,
        default_fraction: records.iter().filter(|r| r.defaulted).count() as f64 / n,
        truncation_bound: (-(p.delta - p.mu) * cfg.t_max).exp() * initial.x / p.gamma,
    }
}

/// Writes per-path records as CSV
/// (`path_id,defaulted,default_time,discounted_gain,final_inventory`).
pub fn write_paths_csv<W: Write>(records: &[PathRecord], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "path_id,defaulted,default_time,discounted_gain,final_inventory"
    )?;
    for (i, r) in records.iter().enumerate() {
        let tau = r
            .default_time
            .map(|t| format!("{t:.16e}"))
            .unwrap_or_default();
        writeln!(
            out,
            "{i},{},{tau},{:.16e},{:.16e}",
            r.defaulted, r.discounted_gain, r.final_inventory
        )?;
    }
    Ok(())
}
