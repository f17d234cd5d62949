//! The value function, its partial derivatives and the region map.
//!
//! On each side of the credit barrier the value has three branches in the
//! price variable:
//!
//! * waiting, `x` below the threshold: `(x / T(y))^n c(y) - k x y`, where
//!   `T` is the threshold, `c(y) = T(y)^n B(y)` and `k` is the default drag
//!   (zero above the barrier);
//! * partial sale: sell `d` shares along the characteristic
//!   `(x e^{-gamma u}, y - u)` until it meets the threshold curve, then wait;
//! * full sale: liquidate everything at once.
//!
//! Below the barrier the threshold `G(y)` decreases in `y`, so the
//! characteristic through `(x, y)` lands on `(G(y - d), y - d)` with `d`
//! solving `x e^{-gamma d} = G(y - d)`. Partial sales are therefore possible
//! up to `x = G(0) e^{gamma y}`, where the landing inventory reaches zero.

use std::sync::Arc;

use serde::Serialize;

use crate::boundary::{BoundarySet, CoefficientTable};
use crate::error::{ModelError, Result};
use crate::numeric::bisect;
use crate::params::{validate, ModelParams, Regime, RegionLabel, State};

/// Relative distance to a branch edge under which a state counts as on it.
pub const EDGE_TOL: f64 = 1e-12;

/// Shares sold when the price moves from `x` down to `z` along a
/// characteristic: `ln(x / z) / gamma`.
pub fn sale_map(x: f64, z: f64, gamma: f64) -> Result<f64> {
    if !(x > 0.0 && z > 0.0) {
        return Err(ModelError::NonPositivePrice { x, z });
    }
    Ok((x / z).ln() / gamma)
}

/// Net proceeds of selling a block of `delta` shares at pre-trade price `x`.
pub fn sale_gain(x: f64, delta: f64, gamma: f64, cost_sell: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(ModelError::NegativeSale(delta));
    }
    Ok(-(x / gamma) * (-gamma * delta).exp_m1() - cost_sell * delta)
}

/// The three price branches of the value on one side of the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Waiting,
    Partial,
    Full,
}

/// Analytic partial derivatives at a state. The credit-index derivatives
/// are identically zero because the value is flat in `w` on each side of
/// the barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derivatives {
    pub v: f64,
    pub v_x: f64,
    pub v_xx: f64,
    pub v_y: f64,
    pub v_ww: f64,
    pub v_xw: f64,
}

impl Derivatives {
    fn new(v: f64, v_x: f64, v_xx: f64, v_y: f64) -> Self {
        Self {
            v,
            v_x,
            v_xx,
            v_y,
            v_ww: 0.0,
            v_xw: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum CoefficientSource {
    Exact,
    Table(Arc<CoefficientTable>),
}

/// Parameters paired with their derived boundary structure.
#[derive(Debug, Clone)]
pub struct ValueContext {
    params: ModelParams,
    bounds: BoundarySet,
    source: CoefficientSource,
    coefficient_scale: f64,
}

/// Waiting-branch value and partials at a point.
#[derive(Debug, Clone, Copy)]
struct WaitingPartials {
    v: f64,
    vx: f64,
    vy: f64,
    vxx: f64,
    vxy: f64,
    vyy: f64,
}

/// One side of the barrier: threshold curve, exponent and coefficient.
#[derive(Clone, Copy)]
struct Side<'a> {
    ctx: &'a ValueContext,
    /// The threshold does not move with inventory.
    flat: bool,
    n: f64,
    drag: f64,
    scale: f64,
}

impl Side<'_> {
    fn params(&self) -> &ModelParams {
        &self.ctx.params
    }

    fn threshold(&self, y: f64) -> f64 {
        if self.flat {
            self.ctx.bounds.f0
        } else {
            self.ctx.bounds.g_lambda(y, &self.ctx.params)
        }
    }

    fn threshold_d1(&self, y: f64) -> f64 {
        if self.flat {
            0.0
        } else {
            self.ctx.bounds.g_lambda_prime(y, &self.ctx.params)
        }
    }

    fn threshold_d2(&self, y: f64) -> f64 {
        if self.flat {
            0.0
        } else {
            self.ctx.bounds.g_lambda_second(y, &self.ctx.params)
        }
    }

    /// `T(y)^n B(y)` including any deliberate corruption factor.
    fn coefficient(&self, y: f64) -> Result<f64> {
        let b = &self.ctx.bounds;
        let p = &self.ctx.params;
        let c = if self.flat {
            b.a_scaled(y, p)
        } else {
            match &self.ctx.source {
                CoefficientSource::Exact => b.b_scaled(y, p)?,
                CoefficientSource::Table(t) => match t.get(y) {
                    Some(c) => c,
                    None => b.b_scaled(y, p)?,
                },
            }
        };
        Ok(self.scale * c)
    }

    fn waiting(&self, x: f64, y: f64) -> Result<WaitingPartials> {
        let p = self.params();
        let (n, k, gamma) = (self.n, self.drag, p.gamma);
        let t = self.threshold(y);
        let c = self.coefficient(y)?;
        let source = self.scale * p.cost_sell / (n - 1.0);
        let pw = (n * (x / t).ln()).exp();
        // x^n B'(y), written through the scaled coefficient
        let xb1 = pw * (source - gamma * n * c);
        let xb2 = -gamma * n * xb1 - pw * n * source * self.threshold_d1(y) / t;
        Ok(WaitingPartials {
            v: pw * c - k * x * y,
            vx: n * pw * c / x - k * y,
            vy: xb1 - k * x,
            vxx: n * (n - 1.0) * pw * c / (x * x),
            vxy: n * xb1 / x - k,
            vyy: xb2,
        })
    }

    /// Upper end of the partial-sale branch, `T(0) e^{gamma y}`.
    fn full_edge(&self, y: f64) -> f64 {
        self.threshold(0.0) * (self.params().gamma * y).exp()
    }

    fn locate(&self, x: f64, y: f64) -> Branch {
        if x < self.threshold(y) * (1.0 - EDGE_TOL) {
            Branch::Waiting
        } else if x <= self.full_edge(y) * (1.0 + EDGE_TOL) {
            Branch::Partial
        } else {
            Branch::Full
        }
    }

    fn on_edge(&self, x: f64, y: f64) -> bool {
        let near = |e: f64| (x - e).abs() <= EDGE_TOL * e;
        near(self.threshold(y)) || near(self.full_edge(y))
    }

    /// Shares sold before the characteristic through `(x, y)` meets the
    /// threshold curve, to absolute accuracy `tol`.
    ///
    /// The root of `ln x - gamma d - ln T(y - d)` is bracketed on
    /// `[0, min(y, ln(x / T(y)) / gamma)]`; Newton steps are taken from the
    /// linearized guess and replaced by bisection whenever they leave the
    /// bracket, so convergence is guaranteed and usually takes a few steps.
    fn landing(&self, x: f64, y: f64, tol: f64) -> Result<f64> {
        let gamma = self.params().gamma;
        if self.flat {
            return Ok((x / self.threshold(y)).ln().max(0.0) / gamma);
        }
        let g = |d: f64| x.ln() - gamma * d - self.threshold(y - d).ln();
        let slope = |d: f64| -gamma + self.threshold_d1(y - d) / self.threshold(y - d);
        let g0 = g(0.0);
        if g0 <= 0.0 {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0, y.min(g0 / gamma));
        let g_hi = g(hi);
        if g_hi >= 0.0 {
            return Ok(hi);
        }
        if !(g_hi < 0.0) {
            return Err(ModelError::RootBracketFailure {
                lo,
                hi,
                f_lo: g0,
                f_hi: g_hi,
            });
        }
        let mut d = (-g0 / slope(0.0)).clamp(lo, hi);
        for _ in 0..200 {
            let gd = g(d);
            if gd == 0.0 {
                return Ok(d);
            }
            if gd > 0.0 {
                lo = d;
            } else {
                hi = d;
            }
            let newton = d - gd / slope(d);
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - d).abs() <= tol || hi - lo <= tol {
                return Ok(next);
            }
            d = next;
        }
        Ok(d)
    }

    fn partial_value(&self, x: f64, y: f64) -> Result<f64> {
        let p = self.params();
        let d = self.landing(x, y, 1e-14)?;
        let yl = y - d;
        let wait = self.waiting(self.threshold(yl), yl)?;
        Ok(wait.v + sale_gain(x, d, p.gamma, p.cost_sell)?)
    }

    fn full_value(&self, x: f64, y: f64) -> f64 {
        let p = self.params();
        -(x / p.gamma) * (-p.gamma * y).exp_m1() - p.cost_sell * y
    }

    fn value(&self, x: f64, y: f64) -> Result<f64> {
        if y == 0.0 {
            return Ok(0.0);
        }
        match self.locate(x, y) {
            Branch::Waiting => Ok(self.waiting(x, y)?.v),
            Branch::Partial => self.partial_value(x, y),
            Branch::Full => Ok(self.full_value(x, y)),
        }
    }

    fn derivatives(&self, x: f64, y: f64, branch: Branch) -> Result<Derivatives> {
        let p = self.params();
        let gamma = p.gamma;
        match branch {
            Branch::Waiting => {
                let w = self.waiting(x, y)?;
                Ok(Derivatives::new(w.v, w.vx, w.vxx, w.vy))
            }
            Branch::Full => {
                let e = (-gamma * y).exp();
                Ok(Derivatives::new(
                    self.full_value(x, y),
                    -(-gamma * y).exp_m1() / gamma,
                    0.0,
                    x * e - p.cost_sell,
                ))
            }
            Branch::Partial => {
                if x < self.threshold(y) * (1.0 - 1e-6) {
                    return Err(ModelError::InvalidState(format!(
                        "partial-sale branch is not defined below the threshold (x = {x}, y = {y})"
                    )));
                }
                let d = self.landing(x, y, 1e-14)?;
                let yl = y - d;
                let t = self.threshold(yl);
                let t1 = self.threshold_d1(yl);
                let t2 = self.threshold_d2(yl);
                let w = self.waiting(t, yl)?;
                let cost = p.cost_sell;
                // psi(y') = v_wait(T(y'), y') - T(y') / gamma along the curve
                let psi1 = w.vx * t1 + w.vy - t1 / gamma;
                let psi2 = (w.vxx * t1 + w.vxy) * t1 + w.vx * t2 + w.vxy * t1 + w.vyy - t2 / gamma;
                let q = psi1 + cost;
                let denom = gamma * t - t1;
                let r = t / denom;
                let r1 = (t * t2 - t1 * t1) / (denom * denom);
                let d_y = t1 / (t1 - gamma * t);
                let v = w.v + sale_gain(x, d, gamma, cost)?;
                let v_x = 1.0 / gamma - q * r / x;
                let v_y = psi1 - q * d_y;
                let v_xx = (q * r + (psi2 * r + q * r1) * r) / (x * x);
                Ok(Derivatives::new(v, v_x, v_xx, v_y))
            }
        }
    }
}

impl ValueContext {
    /// Validates `params` and derives the boundary structure.
    pub fn new(params: ModelParams) -> Result<Self> {
        let params = validate(params)?;
        let bounds = BoundarySet::new(&params)?;
        Ok(Self::assemble(params, bounds))
    }

    /// Pairs parameters with a precomputed boundary set, checking that the
    /// set was derived from these parameters.
    pub fn from_parts(params: ModelParams, bounds: BoundarySet) -> Result<Self> {
        let params = validate(params)?;
        if BoundarySet::with_tolerance(&params, bounds.quadrature_tol)? != bounds {
            return Err(ModelError::InconsistentContext);
        }
        Ok(Self::assemble(params, bounds))
    }

    fn assemble(params: ModelParams, bounds: BoundarySet) -> Self {
        Self {
            params,
            bounds,
            source: CoefficientSource::Exact,
            coefficient_scale: 1.0,
        }
    }

    /// Serves the below-barrier coefficient from an interpolation table on
    /// `[0, y_max]` instead of fresh quadrature.
    pub fn with_table(mut self, y_max: f64) -> Result<Self> {
        if self.params.default_rate > 0.0 {
            let table = CoefficientTable::build(&self.params, &self.bounds, y_max)?;
            self.source = CoefficientSource::Table(table);
        }
        Ok(self)
    }

    /// Multiplies the below-barrier coefficient `B(y)` by `factor`. Only
    /// useful as a negative control for the verification machinery.
    #[doc(hidden)]
    pub fn with_corrupted_coefficient(mut self, factor: f64) -> Self {
        self.coefficient_scale = factor;
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn bounds(&self) -> &BoundarySet {
        &self.bounds
    }

    /// Maximum relative table error, when a table is in use.
    pub fn table_error(&self) -> Option<f64> {
        match &self.source {
            CoefficientSource::Table(t) => Some(t.max_midpoint_error),
            CoefficientSource::Exact => None,
        }
    }

    fn side(&self, regime: Regime) -> Side<'_> {
        match regime {
            Regime::Above => Side {
                ctx: self,
                flat: true,
                n: self.bounds.n0,
                drag: 0.0,
                scale: 1.0,
            },
            Regime::Below => Side {
                ctx: self,
                flat: self.params.default_rate == 0.0,
                n: self.bounds.n1,
                drag: self.bounds.kappa,
                scale: self.coefficient_scale,
            },
        }
    }

    pub fn regime(&self, w: f64) -> Regime {
        Regime::of(w, self.params.barrier)
    }

    /// Selling threshold for inventory `y` on the given side.
    pub fn threshold(&self, y: f64, regime: Regime) -> f64 {
        self.side(regime).threshold(y)
    }

    /// Price above which everything is sold at once, `T(0) e^{gamma y}`.
    pub fn full_sale_edge(&self, y: f64, regime: Regime) -> f64 {
        self.side(regime).full_edge(y)
    }

    /// Branch containing `(x, y)`; edge points go to the selling side.
    pub fn branch(&self, x: f64, y: f64, regime: Regime) -> Branch {
        self.side(regime).locate(x, y)
    }

    pub fn classify(&self, s: &State) -> RegionLabel {
        if s.y == 0.0 {
            return RegionLabel::Liquidated;
        }
        let regime = self.regime(s.w);
        match (regime, self.branch(s.x, s.y, regime)) {
            (Regime::Above, Branch::Waiting) => RegionLabel::WaitAbove,
            (Regime::Above, Branch::Partial) => RegionLabel::Sell2Above,
            (Regime::Above, Branch::Full) => RegionLabel::Sell1Above,
            (Regime::Below, Branch::Waiting) => RegionLabel::WaitBelow,
            (Regime::Below, Branch::Partial) => RegionLabel::Sell2Below,
            (Regime::Below, Branch::Full) => RegionLabel::Sell1Below,
        }
    }

    /// Value on the default-free side of the barrier.
    pub fn v_above(&self, x: f64, y: f64) -> Result<f64> {
        self.side(Regime::Above).value(x, y)
    }

    /// Value on the default-prone side of the barrier.
    pub fn v_below(&self, x: f64, y: f64) -> Result<f64> {
        self.side(Regime::Below).value(x, y)
    }

    pub fn value_in(&self, x: f64, y: f64, regime: Regime) -> Result<f64> {
        self.side(regime).value(x, y)
    }

    pub fn value(&self, s: &State) -> Result<f64> {
        self.value_in(s.x, s.y, self.regime(s.w))
    }

    /// Analytic partials at an interior point. States within [`EDGE_TOL`]
    /// of a branch edge are rejected; use [`Self::branch_derivatives`] to
    /// pick a side.
    pub fn value_derivatives(&self, s: &State) -> Result<Derivatives> {
        if s.y == 0.0 {
            return Err(ModelError::InvalidState(
                "partial derivatives are not defined at zero inventory".into(),
            ));
        }
        let regime = self.regime(s.w);
        let side = self.side(regime);
        if side.on_edge(s.x, s.y) {
            return Err(ModelError::OnBranchEdge { x: s.x, y: s.y });
        }
        side.derivatives(s.x, s.y, side.locate(s.x, s.y))
    }

    /// Partials of the formula of `branch`, evaluated at `(x, y)` even when
    /// the point belongs to a neighbouring branch. Used for one-sided limits.
    pub fn branch_derivatives(
        &self,
        x: f64,
        y: f64,
        regime: Regime,
        branch: Branch,
    ) -> Result<Derivatives> {
        self.side(regime).derivatives(x, y, branch)
    }

    /// Shares to sell so that the post-trade state sits on the threshold
    /// curve, found to absolute accuracy `tol`. Zero in the waiting branch.
    pub fn landing(&self, x: f64, y: f64, regime: Regime, tol: f64) -> Result<f64> {
        self.side(regime)
            .landing(x, y, tol)
            .map(|d| d.clamp(0.0, y))
    }

    /// Below-barrier value with the partial-sale branch written as
    /// `v(G(y), y - d) + sale` with `d = ln(x / G(y)) / gamma` on
    /// `G(y) < x <= G(y) e^{gamma y}`.
    ///
    /// This form moves along the characteristic only to the price `G(y)`,
    /// so the landing inventory `y - d` leaves the point strictly inside the
    /// waiting region. It does not satisfy the gradient constraint with
    /// equality and is kept only for comparison with [`Self::v_below`].
    pub fn v_below_fixed_landing(&self, x: f64, y: f64) -> Result<f64> {
        let side = self.side(Regime::Below);
        if y == 0.0 {
            return Ok(0.0);
        }
        let g = side.threshold(y);
        let gamma = self.params.gamma;
        if x <= g {
            Ok(side.waiting(x, y)?.v)
        } else if x <= g * (gamma * y).exp() {
            let d = sale_map(x, g, gamma)?;
            let inner = side.waiting(g, y - d)?.v;
            Ok(inner + sale_gain(x, d, gamma, self.params.cost_sell)?)
        } else {
            Ok(side.full_value(x, y))
        }
    }
}

/// Static sell-then-default value `sup_{d in [0, y]} [sale(d) - K x e^{-gamma d} (y - d)]`,
/// the large-intensity limit in which default strikes right after the
/// initial block sale. Returns the value and the optimal block size.
pub fn v_infinity(x: f64, y: f64, params: &ModelParams) -> Result<(f64, f64)> {
    let (gamma, k, cost) = (params.gamma, params.default_penalty, params.cost_sell);
    let objective =
        |d: f64| sale_gain(x, d, gamma, cost).map(|g| g - k * x * (-gamma * d).exp() * (y - d));
    let slope = |d: f64| x * (-gamma * d).exp() * (1.0 + k * (gamma * (y - d) + 1.0)) - cost;
    let d = if slope(0.0) <= 0.0 {
        0.0
    } else if slope(y) >= 0.0 {
        y
    } else {
        bisect(slope, 0.0, y, 1e-14)?
    };
    Ok((objective(d)?, d))
}
