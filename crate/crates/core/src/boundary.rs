//! Exponents, free boundaries and the waiting-region coefficient.
//!
//! Above the credit barrier the selling threshold is the constant `F0`;
//! below it the threshold `G(y)` depends on the remaining inventory and is
//! strictly lower whenever the default rate is positive. The waiting-region
//! value below the barrier is `x^{n1} B(y) - kappa x y`, where `B` has no
//! elementary closed form and is integrated numerically.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{ModelError, Result};
use crate::numeric::{adaptive_simpson, QuadratureConfig};
use crate::params::ModelParams;

/// Positive root of `s l (l - 1) + mu l - rhs = 0` with `s = sigma^2 / 2`.
///
/// Uses the cancellation-free form of the quadratic formula and polishes the
/// root with one Newton step.
pub fn solve_exponent(half_sigma_sq: f64, mu: f64, rhs: f64) -> Result<f64> {
    let a = half_sigma_sq;
    let b = mu - half_sigma_sq;
    let disc = b * b + 4.0 * a * rhs;
    if !(disc > 0.0) || !(a > 0.0) {
        return Err(ModelError::NonPositiveDiscriminant { discriminant: disc });
    }
    let sq = disc.sqrt();
    let mut l = if b > 0.0 {
        2.0 * rhs / (b + sq)
    } else {
        (sq - b) / (2.0 * a)
    };
    let q = a * l * l + b * l - rhs;
    let dq = 2.0 * a * l + b;
    if dq != 0.0 {
        l -= q / dq;
    }
    Ok(l)
}

/// Value of the characteristic quadratic at `l`.
pub fn exponent_residual(half_sigma_sq: f64, mu: f64, rhs: f64, l: f64) -> f64 {
    half_sigma_sq * l * (l - 1.0) + mu * l - rhs
}

/// Selling threshold above the barrier, `n0 C / (n0 - 1)`.
pub fn f0(params: &ModelParams, n0: f64) -> f64 {
    n0 * params.cost_sell / (n0 - 1.0)
}

/// `lambda K / (delta + lambda - mu)`.
pub fn kappa(params: &ModelParams) -> f64 {
    params.default_rate * params.default_penalty / (params.delta + params.default_rate - params.mu)
}

/// Selling threshold below the barrier for inventory `y`.
pub fn g_lambda(y: f64, params: &ModelParams, n1: f64) -> f64 {
    let k = kappa(params);
    n1 * params.cost_sell / ((n1 - 1.0) * (1.0 + k * (params.gamma * y + 1.0)))
}

/// Infinite-intensity limit of the lower threshold, `C / (1 + K (gamma y + 1))`.
pub fn g_infinity(y: f64, params: &ModelParams) -> f64 {
    params.cost_sell / (1.0 + params.default_penalty * (params.gamma * y + 1.0))
}

/// `ln G(y) - ln G(u)`, accurate when `u` is close to `y`.
fn log_boundary_ratio(y: f64, u: f64, params: &ModelParams) -> f64 {
    let k = kappa(params);
    let base = 1.0 + k * (params.gamma * u + 1.0);
    -(k * params.gamma * (y - u) / base).ln_1p()
}

/// `G(y)^{n1} B(y)`, the waiting-region coefficient rescaled so that it
/// stays finite for very large exponents. The integrand lies in `(0, C/(n1-1)]`.
pub fn b_scaled(y: f64, params: &ModelParams, n1: f64, rel_tol: f64) -> Result<f64> {
    if y <= 0.0 {
        return Ok(0.0);
    }
    let gamma = params.gamma;
    let integrand = |u: f64| (n1 * (log_boundary_ratio(y, u, params) - gamma * (y - u))).exp();
    let cfg = QuadratureConfig {
        rel_tol,
        ..QuadratureConfig::default()
    };
    Ok(params.cost_sell / (n1 - 1.0) * adaptive_simpson(integrand, 0.0, y, cfg)?)
}

/// `B(y) = e^{-gamma n1 y} int_0^y C e^{gamma n1 u} / ((n1 - 1) G(u)^{n1}) du`.
pub fn b_coeff(y: f64, params: &ModelParams, n1: f64, rel_tol: f64) -> Result<f64> {
    let scaled = b_scaled(y, params, n1, rel_tol)?;
    Ok(scaled * g_lambda(y, params, n1).powf(-n1))
}

/// Derived analytic structure of a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundarySet {
    pub n0: f64,
    pub n1: f64,
    #[serde(rename = "F0")]
    pub f0: f64,
    pub kappa: f64,
    pub quadrature_tol: f64,
}

impl BoundarySet {
    pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-10;

    pub fn new(params: &ModelParams) -> Result<Self> {
        Self::with_tolerance(params, Self::DEFAULT_QUADRATURE_TOL)
    }

    pub fn with_tolerance(params: &ModelParams, quadrature_tol: f64) -> Result<Self> {
        let s = params.half_sigma_sq();
        let n0 = solve_exponent(s, params.mu, params.delta)?;
        let n1 = if params.default_rate == 0.0 {
            n0
        } else {
            solve_exponent(s, params.mu, params.delta + params.default_rate)?
        };
        Ok(Self {
            n0,
            n1,
            f0: f0(params, n0),
            kappa: kappa(params),
            quadrature_tol,
        })
    }

    pub fn g_lambda(&self, y: f64, params: &ModelParams) -> f64 {
        g_lambda(y, params, self.n1)
    }

    /// `G'(y) = -c G(y)^2` with `c = (n1 - 1) kappa gamma / (n1 C)`.
    pub fn g_lambda_prime(&self, y: f64, params: &ModelParams) -> f64 {
        let g = self.g_lambda(y, params);
        -self.slope_constant(params) * g * g
    }

    pub fn g_lambda_second(&self, y: f64, params: &ModelParams) -> f64 {
        let g = self.g_lambda(y, params);
        let c = self.slope_constant(params);
        2.0 * c * c * g * g * g
    }

    fn slope_constant(&self, params: &ModelParams) -> f64 {
        (self.n1 - 1.0) * self.kappa * params.gamma / (self.n1 * params.cost_sell)
    }

    pub fn g_infinity(&self, y: f64, params: &ModelParams) -> f64 {
        g_infinity(y, params)
    }

    pub fn b_coeff(&self, y: f64, params: &ModelParams) -> Result<f64> {
        b_coeff(y, params, self.n1, self.quadrature_tol)
    }

    pub fn b_scaled(&self, y: f64, params: &ModelParams) -> Result<f64> {
        b_scaled(y, params, self.n1, self.quadrature_tol)
    }

    /// Slope of [`Self::b_scaled`], from the linear ODE that `B` satisfies.
    pub fn b_scaled_prime(&self, y: f64, scaled: f64, params: &ModelParams) -> f64 {
        let n = self.n1;
        let g = self.g_lambda(y, params);
        let gp = self.g_lambda_prime(y, params);
        scaled * n * (gp / g - params.gamma) + params.cost_sell / (n - 1.0)
    }

    /// `G(y)^{n1} B(y)` in the default-free regime, where the threshold is the
    /// constant `F0`; closed form `F0 (1 - e^{-gamma n0 y}) / (gamma n0^2)`.
    pub fn a_scaled(&self, y: f64, params: &ModelParams) -> f64 {
        let n = self.n0;
        -self.f0 * (-params.gamma * n * y).exp_m1() / (params.gamma * n * n)
    }

    /// Small-intensity limit of `B(y)`: `C (1 - e^{-gamma n0 y}) / (gamma n0 (n0 - 1) F0^{n0})`.
    pub fn b_coeff_limit(&self, y: f64, params: &ModelParams) -> f64 {
        let n = self.n0;
        -params.cost_sell * (-params.gamma * n * y).exp_m1()
            / (params.gamma * n * (n - 1.0) * self.f0.powf(n))
    }
}

/// Tabulated `G(y)^{n1} B(y)` on a uniform grid with cubic Hermite
/// interpolation. Node slopes come from the ODE, then pass through the
/// Fritsch-Carlson limiter so the interpolant stays monotone.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    /// Largest relative deviation from exact quadrature at the cell midpoints.
    pub max_midpoint_error: f64,
}

impl CoefficientTable {
    pub const MAX_REL_ERROR: f64 = 1e-8;

    /// Builds a table on `[0, y_max]`, refining the grid until every cell
    /// midpoint matches exact quadrature to [`Self::MAX_REL_ERROR`].
    pub fn build(params: &ModelParams, bounds: &BoundarySet, y_max: f64) -> Result<Arc<Self>> {
        let mut cells = 64usize;
        loop {
            let table = Self::with_cells(params, bounds, y_max, cells)?;
            if table.max_midpoint_error <= Self::MAX_REL_ERROR || cells >= 1 << 16 {
                return Ok(Arc::new(table));
            }
            cells *= 2;
        }
    }

    fn with_cells(
        params: &ModelParams,
        bounds: &BoundarySet,
        y_max: f64,
        cells: usize,
    ) -> Result<Self> {
        let step = y_max / cells as f64;
        let mut values = Vec::with_capacity(cells + 1);
        let mut slopes = Vec::with_capacity(cells + 1);
        for i in 0..=cells {
            let y = step * i as f64;
            let v = bounds.b_scaled(y, params)?;
            values.push(v);
            slopes.push(bounds.b_scaled_prime(y, v, params));
        }
        // Fritsch-Carlson limiter
        for i in 0..cells {
            let secant = (values[i + 1] - values[i]) / step;
            if secant == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
                continue;
            }
            let a = slopes[i] / secant;
            let b = slopes[i + 1] / secant;
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                slopes[i] = t * a * secant;
                slopes[i + 1] = t * b * secant;
            }
        }
        let mut table = Self {
            step,
            values,
            slopes,
            max_midpoint_error: 0.0,
        };
        let mut worst = 0.0f64;
        for i in 0..cells {
            let y = step * (i as f64 + 0.5);
            let exact = bounds.b_scaled(y, params)?;
            let approx = table.eval(y);
            let err = (approx - exact).abs() / exact.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(err);
        }
        table.max_midpoint_error = worst;
        Ok(table)
    }

    pub fn y_max(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    /// Interpolated value; `None` outside the tabulated range.
    pub fn get(&self, y: f64) -> Option<f64> {
        if !(0.0..=self.y_max() * (1.0 + 1e-12)).contains(&y) {
            return None;
        }
        Some(self.eval(y))
    }

    fn eval(&self, y: f64) -> f64 {
        let last = self.values.len() - 1;
        let i = ((y / self.step).floor() as usize).min(last - 1);
        let t = (y - self.step * i as f64) / self.step;
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference() -> (ModelParams, BoundarySet) {
        let p = ModelParams::reference();
        let b = BoundarySet::new(&p).unwrap();
        (p, b)
    }

    /// Independent root: bisection on the quadratic itself.
    fn bisect_exponent(s: f64, mu: f64, rhs: f64) -> f64 {
        let q = |l: f64| s * l * (l - 1.0) + mu * l - rhs;
        let (mut lo, mut hi) = (1.0, 2.0);
        while q(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn exponents_match_bisection_oracle() {
        let n0 = solve_exponent(0.02, 0.5, 0.7).unwrap();
        let n1 = solve_exponent(0.02, 0.5, 1.4).unwrap();
        assert_relative_eq!(n0, bisect_exponent(0.02, 0.5, 0.7), max_relative = 1e-13);
        assert_relative_eq!(n1, bisect_exponent(0.02, 0.5, 1.4), max_relative = 1e-13);
        assert!((n0 - 1.3791).abs() < 5e-5);
        assert!((n1 - 2.6287).abs() < 5e-5);
        assert!(exponent_residual(0.02, 0.5, 0.7, n0).abs() <= 1e-12);
        assert!(exponent_residual(0.02, 0.5, 1.4, n1).abs() <= 1e-12);
    }

    #[test]
    fn exponent_with_negative_linear_term() {
        // mu < sigma^2 / 2 takes the other branch of the stable formula
        let l = solve_exponent(0.5, 0.1, 0.3).unwrap();
        assert_relative_eq!(l, bisect_exponent(0.5, 0.1, 0.3), max_relative = 1e-13);
    }

    #[test]
    fn degenerate_quadratic_is_an_error() {
        assert!(matches!(
            solve_exponent(0.0, 0.5, 0.7),
            Err(ModelError::NonPositiveDiscriminant { .. })
        ));
    }

    #[test]
    fn f0_reference_and_limits() {
        let (p, b) = reference();
        assert!((b.f0 - 1.0914).abs() < 5e-4);
        assert_eq!(f0(&p, 2.0), 0.6);
        assert_relative_eq!(f0(&p, 1e12), p.cost_sell, max_relative = 1e-11);
    }

    #[test]
    fn g_lambda_reference_values() {
        let (p, b) = reference();
        // direct evaluation with n1 from the bisection oracle
        let n1 = bisect_exponent(0.02, 0.5, 1.4);
        let k = 0.35 / 0.9;
        let oracle = |y: f64| n1 * 0.3 / ((n1 - 1.0) * (1.0 + k * (0.5 * y + 1.0)));
        for y in [0.0, 0.1, 1.0, 1.5, 7.0] {
            assert_relative_eq!(b.g_lambda(y, &p), oracle(y), max_relative = 1e-13);
        }
        assert!((b.g_lambda(0.0, &p) - 0.3486).abs() < 1e-4);
        assert!((b.g_lambda(1.5, &p) - 0.2881).abs() < 1e-4);
        assert!((b.g_lambda(0.1, &p) - 0.34380).abs() < 1e-5);
        assert!(b.g_lambda(0.0, &p) < b.f0);
    }

    #[test]
    fn g_lambda_without_default_is_f0() {
        let p = ModelParams::reference().with_default_rate(0.0);
        let b = BoundarySet::new(&p).unwrap();
        assert_eq!(b.n1, b.n0);
        for y in [0.0, 1.0, 5.0] {
            assert_relative_eq!(b.g_lambda(y, &p), b.f0, max_relative = 1e-15);
        }
    }

    #[test]
    fn g_infinity_values() {
        let p = ModelParams::reference();
        assert_relative_eq!(g_infinity(0.0, &p), 0.2, max_relative = 1e-15);
        assert_relative_eq!(g_infinity(1.5, &p), 0.16, max_relative = 1e-15);
        let no_penalty = ModelParams {
            default_penalty: 0.0,
            ..p
        };
        assert_eq!(g_infinity(3.0, &no_penalty), p.cost_sell);
    }

    #[test]
    fn boundary_derivative_identity_matches_finite_differences() {
        let (p, b) = reference();
        for y in [0.1, 0.5, 1.0, 3.0, 7.0] {
            let h = 1e-6;
            let fd = (b.g_lambda(y + h, &p) - b.g_lambda(y - h, &p)) / (2.0 * h);
            assert_relative_eq!(b.g_lambda_prime(y, &p), fd, max_relative = 1e-6);
            let fd2 = (b.g_lambda_prime(y + h, &p) - b.g_lambda_prime(y - h, &p)) / (2.0 * h);
            assert_relative_eq!(b.g_lambda_second(y, &p), fd2, max_relative = 1e-6);
        }
    }

    /// Brute-force trapezoid rule on the literal integral.
    fn trapezoid_b(y: f64, p: &ModelParams, n1: f64, n: usize) -> f64 {
        let g = |u: f64| g_lambda(u, p, n1);
        let f = |u: f64| p.cost_sell * (p.gamma * n1 * u).exp() / ((n1 - 1.0) * g(u).powf(n1));
        let h = y / n as f64;
        let mut s = 0.5 * (f(0.0) + f(y));
        for i in 1..n {
            s += f(h * i as f64);
        }
        (-p.gamma * n1 * y).exp() * s * h
    }

    #[test]
    fn b_coeff_matches_trapezoid_oracle() {
        let (p, b) = reference();
        assert_eq!(b.b_coeff(0.0, &p).unwrap(), 0.0);
        let exact = b.b_coeff(1.0, &p).unwrap();
        let oracle = trapezoid_b(1.0, &p, b.n1, 1_000_000);
        assert_relative_eq!(exact, oracle, max_relative = 1e-8);
        assert!(exact > 0.0);
    }

    #[test]
    fn b_coeff_tolerance_contract() {
        let (p, b) = reference();
        for y in [0.3, 1.0, 4.0, 7.0] {
            let fine = b_coeff(y, &p, b.n1, 1e-10).unwrap();
            let coarse = b_coeff(y, &p, b.n1, 2e-10).unwrap();
            assert!((fine - coarse).abs() <= 2e-10 * fine.abs());
        }
    }

    #[test]
    fn b_coeff_small_intensity_limit() {
        let p = ModelParams::reference().with_default_rate(1e-8);
        let b = BoundarySet::new(&p).unwrap();
        for y in [0.1, 1.0, 7.0] {
            let limit = b.b_coeff_limit(y, &p);
            assert_relative_eq!(b.b_coeff(y, &p).unwrap(), limit, max_relative = 1e-6);
        }
    }

    #[test]
    fn above_barrier_coefficient_solves_the_same_ode() {
        let p = ModelParams::reference();
        let b = BoundarySet::new(&p).unwrap();
        let n = b.n0;
        for y in [0.2, 1.0, 3.0] {
            let h = 1e-6;
            let fd = (b.a_scaled(y + h, &p) - b.a_scaled(y - h, &p)) / (2.0 * h);
            let ode = -p.gamma * n * b.a_scaled(y, &p) + p.cost_sell / (n - 1.0);
            assert_relative_eq!(fd, ode, max_relative = 1e-8);
        }
    }

    #[test]
    fn scaled_coefficient_stays_finite_for_huge_exponents() {
        let p = ModelParams::reference().with_default_rate(2f64.powi(20));
        let b = BoundarySet::new(&p).unwrap();
        assert!(b.n1 > 5000.0);
        let s = b.b_scaled(1.5, &p).unwrap();
        assert!(s.is_finite() && s > 0.0);
        assert!(s <= p.cost_sell / (b.n1 - 1.0) * 1.5);
    }

    #[test]
    fn table_reproduces_exact_quadrature() {
        let (p, b) = reference();
        let table = CoefficientTable::build(&p, &b, 7.0).unwrap();
        assert!(table.max_midpoint_error <= CoefficientTable::MAX_REL_ERROR);
        for y in [0.013, 0.77, 2.5, 6.999] {
            let exact = b.b_scaled(y, &p).unwrap();
            assert_relative_eq!(table.get(y).unwrap(), exact, max_relative = 1e-8);
        }
        assert!(table.get(7.5).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exponent_residual_vanishes(sigma in 0.05..1.0f64, mu in -0.5..0.8f64, gap in 0.01..2.0f64, lam in 0.0..5.0f64) {
                let s = 0.5 * sigma * sigma;
                for rhs in [mu + gap, mu + gap + lam] {
                    let l = solve_exponent(s, mu, rhs).unwrap();
                    prop_assert!(l > 1.0);
                    prop_assert!(exponent_residual(s, mu, rhs, l).abs() <= 1e-12 * rhs.max(1.0));
                }
            }

            #[test]
            fn lower_threshold_decreases_in_inventory_and_intensity(lam in 0.01..50.0f64, y in 0.0..7.0f64, dy in 0.01..1.0f64) {
                let p = ModelParams::reference().with_default_rate(lam);
                let b = BoundarySet::new(&p).unwrap();
                let g = b.g_lambda(y, &p);
                prop_assert!(b.n1 > b.n0);
                prop_assert!(g < b.f0);
                prop_assert!(g > b.g_infinity(y, &p));
                prop_assert!(b.g_lambda(y + dy, &p) < g);
                let q = p.with_default_rate(lam * 1.5);
                let bq = BoundarySet::new(&q).unwrap();
                prop_assert!(bq.n1 > b.n1);
                prop_assert!(bq.g_lambda(y, &q) < g);
            }
        }
    }
}
