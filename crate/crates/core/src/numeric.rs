//! Small numerical kernels: adaptive Simpson quadrature, bisection and
//! compensated summation.

use crate::error::ModelError;

/// Settings for [`adaptive_simpson`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Relative tolerance on the integral.
    pub rel_tol: f64,
    /// Maximum recursion depth of the bisection of the interval.
    pub max_depth: u32,
    /// Budget of integrand evaluations.
    pub max_evaluations: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_depth: 60,
            max_evaluations: 2_000_000,
        }
    }
}

struct Simpson<'a, F> {
    f: &'a F,
    evaluations: usize,
    budget: usize,
    max_depth: u32,
    exhausted: bool,
}

impl<F: Fn(f64) -> f64> Simpson<'_, F> {
    fn eval(&mut self, x: f64) -> f64 {
        self.evaluations += 1;
        (self.f)(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &mut self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = self.eval(lm);
        let frm = self.eval(rm);
        let h = b - a;
        let left = h / 12.0 * (fa + 4.0 * flm + fm);
        let right = h / 12.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        if depth >= self.max_depth || self.evaluations >= self.budget {
            self.exhausted = true;
            return left + right + delta / 15.0;
        }
        self.refine(a, m, fa, flm, fm, left, 0.5 * eps, depth + 1)
            + self.refine(m, b, fm, frm, fb, right, 0.5 * eps, depth + 1)
    }
}

/// Integrates `f` over `[a, b]` by adaptive Simpson with Richardson
/// correction. The interval is first split into 16 panels so that the
/// initial error estimate is not fooled by symmetric integrands.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, cfg: QuadratureConfig) -> Result<f64, ModelError>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    const PANELS: usize = 16;
    let mut s = Simpson {
        f: &f,
        evaluations: 0,
        budget: cfg.max_evaluations,
        max_depth: cfg.max_depth,
        exhausted: false,
    };
    let h = (b - a) / PANELS as f64;
    let nodes: Vec<f64> = (0..=2 * PANELS).map(|i| a + 0.5 * h * i as f64).collect();
    let values: Vec<f64> = nodes.iter().map(|&x| s.eval(x)).collect();
    let panels: Vec<f64> = (0..PANELS)
        .map(|k| h / 6.0 * (values[2 * k] + 4.0 * values[2 * k + 1] + values[2 * k + 2]))
        .collect();
    let rough: f64 = panels.iter().map(|p| p.abs()).sum();
    let eps = (cfg.rel_tol * rough).max(f64::MIN_POSITIVE) / PANELS as f64;
    let mut total = 0.0;
    for k in 0..PANELS {
        total += s.refine(
            nodes[2 * k],
            nodes[2 * k + 2],
            values[2 * k],
            values[2 * k + 1],
            values[2 * k + 2],
            panels[k],
            eps,
            0,
        );
    }
    if s.exhausted || !total.is_finite() {
        return Err(ModelError::QuadratureFailure {
            a,
            b,
            tol: cfg.rel_tol,
            evaluations: s.evaluations,
        });
    }
    Ok(total)
}

/// Finds a root of `f` on `[lo, hi]` by bisection. The bracket must have
/// a sign change (a zero at either end counts). Iterates until the bracket
/// is narrower than `tol` or stops shrinking in floating point.
pub fn bisect<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64, ModelError>
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(ModelError::RootBracketFailure { lo, hi, f_lo, f_hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pairwise (cascade) summation; error grows like `log n` instead of `n`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let (left, right) = values.split_at(values.len() / 2);
    pairwise_sum(left) + pairwise_sum(right)
}

/// `n` points evenly spaced on `[a, b]`, both ends included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// `n` points evenly spaced in log scale on `[a, b]`, both ends included.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut pts: Vec<f64> = linspace(a.ln(), b.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect();
    if let Some(first) = pts.first_mut() {
        *first = a;
    }
    if n > 1 {
        pts[n - 1] = b;
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let cfg = QuadratureConfig::default();
        let v = adaptive_simpson(f64::exp, 0.0, 2.0, cfg).unwrap();
        assert_relative_eq!(v, 2f64.exp() - 1.0, max_relative = 1e-12);
        let v = adaptive_simpson(|x| x.sin(), 0.0, std::f64::consts::PI, cfg).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-12);
        // symmetric integrand whose coarse Simpson estimate vanishes
        let v =
            adaptive_simpson(|x| (8.0 * x).sin().powi(2), 0.0, std::f64::consts::PI, cfg).unwrap();
        assert_relative_eq!(v, std::f64::consts::FRAC_PI_2, max_relative = 1e-10);
    }

    #[test]
    fn simpson_handles_reversed_and_empty_intervals() {
        let cfg = QuadratureConfig::default();
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, cfg).unwrap(), 0.0);
        let v = adaptive_simpson(|x| x * x, 1.0, 0.0, cfg).unwrap();
        assert_relative_eq!(v, -1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn simpson_reports_budget_exhaustion() {
        let cfg = QuadratureConfig {
            rel_tol: 1e-14,
            max_depth: 60,
            max_evaluations: 100,
        };
        let err = adaptive_simpson(|x: f64| x.abs().sqrt(), -1.0, 1.0, cfg).unwrap_err();
        assert!(matches!(err, ModelError::QuadratureFailure { .. }));
    }

    #[test]
    fn bisection_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn bisection_requires_a_bracket() {
        assert!(matches!(
            bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12),
            Err(ModelError::RootBracketFailure { .. })
        ));
        assert_eq!(bisect(|x| x, 0.0, 1.0, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }

    #[test]
    fn grids_hit_their_endpoints() {
        let g = linspace(0.1, 7.0, 50);
        assert_eq!(g.len(), 50);
        assert_eq!((g[0], g[49]), (0.1, 7.0));
        let l = logspace(0.01, 10.0, 400);
        assert_eq!((l[0], l[399]), (0.01, 10.0));
        assert!(l.windows(2).all(|w| w[0] < w[1]));
    }
}
