//! Datasets for the value-function plots and the intensity sweeps.
//!
//! Every number comes from [`ValueContext`] or [`BoundarySet`]; the sweep
//! figures serve the below-barrier coefficient from a [`crate::CoefficientTable`]
//! whose agreement with exact quadrature is checked when it is built.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{g_infinity, BoundarySet};
use crate::error::{ModelError, Result};
use crate::numeric::{linspace, logspace};
use crate::params::{ModelParams, Regime};
use crate::value::{v_infinity, ValueContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureId {
    F1,
    F2,
    F3,
    F4,
}

impl FigureId {
    pub const ALL: [FigureId; 4] = [FigureId::F1, FigureId::F2, FigureId::F3, FigureId::F4];

    pub fn name(self) -> &'static str {
        match self {
            FigureId::F1 => "f1",
            FigureId::F2 => "f2",
            FigureId::F3 => "f3",
            FigureId::F4 => "f4",
        }
    }
}

impl std::str::FromStr for FigureId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(FigureId::F1),
            "f2" => Ok(FigureId::F2),
            "f3" => Ok(FigureId::F3),
            "f4" => Ok(FigureId::F4),
            other => Err(ModelError::InvalidConfig(format!(
                "unknown figure {other:?}"
            ))),
        }
    }
}

/// Grids of one figure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureSpec {
    pub id: FigureId,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Intensities of the sweep (empty for f1 and f2).
    pub lambdas: Vec<f64>,
}

impl FigureSpec {
    /// 400 log-spaced prices on `[0.01, 10]`, fifty inventories on
    /// `[0.1, 7]`; f3 sweeps `lambda = 2^{-N}` and f4 sweeps `lambda = 2^N`,
    /// `N` from -20 to 8 in steps of 0.5; f4 fixes `y = 1.5`.
    pub fn default_for(id: FigureId) -> Self {
        let exponents: Vec<f64> = (0..=56).map(|i| -20.0 + 0.5 * i as f64).collect();
        let xs = logspace(0.01, 10.0, 400);
        let ys = linspace(0.1, 7.0, 50);
        match id {
            FigureId::F1 | FigureId::F2 => Self {
                id,
                xs,
                ys,
                lambdas: Vec::new(),
            },
            FigureId::F3 => {
                let mut lambdas: Vec<f64> = exponents.iter().map(|n| (-n).exp2()).collect();
                lambdas.sort_by(f64::total_cmp);
                Self {
                    id,
                    xs: Vec::new(),
                    ys,
                    lambdas,
                }
            }
            FigureId::F4 => Self {
                id,
                xs,
                ys: vec![1.5],
                lambdas: exponents.iter().map(|n| n.exp2()).collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        let need_x = matches!(self.id, FigureId::F1 | FigureId::F2 | FigureId::F4);
        let need_l = matches!(self.id, FigureId::F3 | FigureId::F4);
        if (need_x && self.xs.is_empty())
            || self.ys.is_empty()
            || (need_l && self.lambdas.is_empty())
        {
            return Err(ModelError::InvalidConfig(format!(
                "empty grid for {}",
                self.id.name()
            )));
        }
        if !increasing(&self.xs) || !increasing(&self.ys) || !increasing(&self.lambdas) {
            return Err(ModelError::InvalidConfig(format!(
                "grids of {} must be strictly increasing",
                self.id.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Field {
    Num(f64),
    Text(&'static str),
}

impl Field {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Field::Num(v) => Some(*v),
            Field::Text(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Field::Num(v) if v.is_infinite() => {
                if *v > 0.0 {
                    "inf".into()
                } else {
                    "-inf".into()
                }
            }
            Field::Num(v) => format!("{v:.16e}"),
            Field::Text(t) => (*t).to_string(),
        }
    }
}

/// One CSV file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub file_name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    fn new(file_name: String, columns: &[&'static str]) -> Self {
        Self {
            file_name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Field::render).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Values of a numeric column.
    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = self
            .columns
            .iter()
            .position(|c| *c == name)
            .expect("unknown column");
        self.rows.iter().filter_map(|r| r[i].as_f64()).collect()
    }
}

/// Properties of a generated dataset, measured rather than assumed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Summary {
    Curves {
        /// Largest decrease of `v` between neighbouring prices at fixed `y`.
        max_decrease_in_x: f64,
        /// Largest relative table-vs-quadrature deviation, when a table was used.
        table_error: Option<f64>,
    },
    Thresholds {
        monotone_in_lambda: bool,
        bracketed: bool,
        /// Largest `|G - F0|` at the smallest intensity of the sweep.
        smallest_lambda_distance_to_f0: f64,
        /// Largest `|G - G_inf|` at the largest intensity.
        largest_lambda_distance_to_g_infinity: f64,
        /// Same, after multiplying `G_inf` by `n1 / (n1 - 1)`.
        largest_lambda_distance_to_scaled_limit: f64,
        /// `(2^-20, max_y |G - F0|)`, measured off the sweep.
        probe_small_lambda: (f64, f64),
        /// `(2^8, max_y |G - G_inf n1 / (n1 - 1)|)`, measured off the sweep.
        probe_large_lambda: (f64, f64),
    },
    Sweep {
        /// Largest increase of `v` from one intensity to the next, over all prices.
        max_increase_in_lambda: f64,
        /// `(lambda, sup_x |v_lambda - v_inf|)` for the last five intensities.
        tail_sup_distance: Vec<(f64, f64)>,
        tail_decreasing: bool,
        table_error: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub figure: FigureId,
    pub tables: Vec<Table>,
    pub summary: Summary,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.tables.iter().map(|t| t.rows.len()).sum()
    }

    /// Writes each table to `dir`, returning the paths written.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for t in &self.tables {
            let path = dir.join(&t.file_name);
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            fs::write(&path, buf)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn curves(ctx: &ValueContext, spec: &FigureSpec, regime: Regime) -> Result<Dataset> {
    spec.validate()?;
    let name = spec.id.name();
    let gamma = ctx.params().gamma;
    let per_y: Vec<(Vec<Vec<Field>>, Vec<Vec<Field>>, f64)> = spec
        .ys
        .par_iter()
        .map(|&y| {
            let vals: Vec<f64> = spec
                .xs
                .iter()
                .map(|&x| ctx.value_in(x, y, regime))
                .collect::<Result<_>>()?;
            let drop = vals.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
            let rows = spec
                .xs
                .iter()
                .zip(&vals)
                .map(|(&x, &v)| vec![Field::Num(y), Field::Num(x), Field::Num(v)])
                .collect();
            let t = ctx.threshold(y, regime);
            let mut markers = Vec::new();
            for (kind, x) in [
                ("threshold", t),
                ("threshold_scaled", t * (gamma * y).exp()),
            ] {
                markers.push(vec![
                    Field::Num(y),
                    Field::Num(x),
                    Field::Num(ctx.value_in(x, y, regime)?),
                    Field::Text(kind),
                ]);
            }
            Ok((rows, markers, drop))
        })
        .collect::<Result<_>>()?;
    let mut c = Table::new(format!("{name}_curves.csv"), &["y", "x", "v"]);
    let mut m = Table::new(
        format!("{name}_markers.csv"),
        &["y", "x_marker", "v_marker", "kind"],
    );
    let mut max_drop = 0.0f64;
    for (rows, markers, drop) in per_y {
        c.rows.extend(rows);
        m.rows.extend(markers);
        max_drop = max_drop.max(drop);
    }
    Ok(Dataset {
        figure: spec.id,
        tables: vec![c, m],
        summary: Summary::Curves {
            max_decrease_in_x: max_drop,
            table_error: ctx.table_error(),
        },
    })
}

/// Default-free value curves `x -> v(x, y)` with markers at `F0` and `F0 e^{gamma y}`.
pub fn dataset_f1(ctx: &ValueContext, spec: &FigureSpec) -> Result<Dataset> {
    curves(ctx, spec, Regime::Above)
}

/// Below-barrier value curves with markers at `G(y)` and `G(y) e^{gamma y}`.
pub fn dataset_f2(ctx: &ValueContext, spec: &FigureSpec) -> Result<Dataset> {
    let y_max = spec.ys.last().copied().unwrap_or(0.0);
    let ctx = ctx.clone().with_table(y_max)?;
    curves(&ctx, spec, Regime::Below)
}

/// Threshold curves `G(y)` and `G(y) e^{gamma y}` across the intensity sweep,
/// plus the `F0` (`lambda = 0`) and `G_inf` (`lambda = inf`) limit curves.
pub fn dataset_f3(params: &ModelParams, spec: &FigureSpec) -> Result<Dataset> {
    spec.validate()?;
    let gamma = params.gamma;
    let mut t = Table::new(
        "f3_thresholds.csv".into(),
        &["lambda", "y", "x_lower", "x_upper"],
    );
    let f0 = BoundarySet::new(params)?.f0;
    let sweep: Vec<(f64, BoundarySet, ModelParams)> = spec
        .lambdas
        .iter()
        .map(|&lam| {
            let p = params.with_default_rate(lam);
            Ok((lam, BoundarySet::new(&p)?, p))
        })
        .collect::<Result<_>>()?;
    let mut monotone = true;
    let mut bracketed = true;
    let mut prev: Option<Vec<f64>> = None;
    for (lam, b, p) in &sweep {
        let gs: Vec<f64> = spec.ys.iter().map(|&y| b.g_lambda(y, p)).collect();
        for (&y, &g) in spec.ys.iter().zip(&gs) {
            t.rows.push(vec![
                Field::Num(*lam),
                Field::Num(y),
                Field::Num(g),
                Field::Num(g * (gamma * y).exp()),
            ]);
            bracketed &= g_infinity(y, params) < g && g < f0;
        }
        if let Some(prev) = &prev {
            monotone &= gs.iter().zip(prev).all(|(g, q)| g < q);
        }
        prev = Some(gs);
    }
    for &y in &spec.ys {
        t.rows.push(vec![
            Field::Num(0.0),
            Field::Num(y),
            Field::Num(f0),
            Field::Num(f0 * (gamma * y).exp()),
        ]);
    }
    for &y in &spec.ys {
        let g = g_infinity(y, params);
        t.rows.push(vec![
            Field::Num(f64::INFINITY),
            Field::Num(y),
            Field::Num(g),
            Field::Num(g * (gamma * y).exp()),
        ]);
    }
    let dist = |(_, b, p): &(f64, BoundarySet, ModelParams), scaled: bool, to_f0: bool| {
        spec.ys
            .iter()
            .map(|&y| {
                let g = b.g_lambda(y, p);
                let target = if to_f0 {
                    f0
                } else if scaled {
                    g_infinity(y, params) * b.n1 / (b.n1 - 1.0)
                } else {
                    g_infinity(y, params)
                };
                (g - target).abs()
            })
            .fold(0.0, f64::max)
    };
    let probe = |lam: f64, to_f0: bool| -> Result<(f64, f64)> {
        let p = params.with_default_rate(lam);
        let b = BoundarySet::new(&p)?;
        Ok((lam, dist(&(lam, b, p), true, to_f0)))
    };
    let first = sweep.first().expect("validated non-empty");
    let last = sweep.last().expect("validated non-empty");
    Ok(Dataset {
        figure: FigureId::F3,
        tables: vec![t],
        summary: Summary::Thresholds {
            monotone_in_lambda: monotone,
            bracketed,
            smallest_lambda_distance_to_f0: dist(first, false, true),
            largest_lambda_distance_to_g_infinity: dist(last, false, false),
            largest_lambda_distance_to_scaled_limit: dist(last, true, false),
            probe_small_lambda: probe((-20f64).exp2(), true)?,
            probe_large_lambda: probe(8f64.exp2(), false)?,
        },
    })
}

/// Value curves at fixed inventory across the intensity sweep, with the
/// default-free curve (`lambda = 0`) and the static sell-then-default limit
/// (`lambda = inf`, kind `v_inf_derived`).
pub fn dataset_f4(params: &ModelParams, spec: &FigureSpec) -> Result<Dataset> {
    spec.validate()?;
    let y = spec.ys[0];
    let gamma = params.gamma;
    let base = ValueContext::new(*params)?;
    let mut t = Table::new("f4_sweep.csv".into(), &["lambda", "x", "v", "kind"]);
    let num = |lam: f64, x: f64, v: f64, kind| {
        vec![
            Field::Num(lam),
            Field::Num(x),
            Field::Num(v),
            Field::Text(kind),
        ]
    };

    for &x in &spec.xs {
        t.rows.push(num(0.0, x, base.v_above(x, y)?, "v0"));
    }
    let per_lambda: Vec<(f64, Vec<f64>, [f64; 4], Option<f64>)> = spec
        .lambdas
        .par_iter()
        .map(|&lam| {
            let ctx = ValueContext::new(params.with_default_rate(lam))?.with_table(y)?;
            let vals: Vec<f64> = spec
                .xs
                .iter()
                .map(|&x| ctx.v_below(x, y))
                .collect::<Result<_>>()?;
            let g = ctx.threshold(y, Regime::Below);
            let gu = g * (gamma * y).exp();
            Ok((
                lam,
                vals,
                [g, ctx.v_below(g, y)?, gu, ctx.v_below(gu, y)?],
                ctx.table_error(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut table_error: Option<f64> = None;
    for (lam, vals, _, err) in &per_lambda {
        for (&x, &v) in spec.xs.iter().zip(vals) {
            t.rows.push(num(*lam, x, v, "v_lambda"));
        }
        if let Some(e) = err {
            table_error = Some(table_error.map_or(*e, |t: f64| t.max(*e)));
        }
    }
    let inf: Vec<f64> = spec
        .xs
        .iter()
        .map(|&x| v_infinity(x, y, params).map(|r| r.0))
        .collect::<Result<_>>()?;
    for (&x, &v) in spec.xs.iter().zip(&inf) {
        t.rows.push(num(f64::INFINITY, x, v, "v_inf_derived"));
    }
    // markers
    for (lam, _, m, _) in &per_lambda {
        t.rows.push(num(*lam, m[0], m[1], "marker_threshold"));
        t.rows
            .push(num(*lam, m[2], m[3], "marker_threshold_scaled"));
    }
    let f0 = base.bounds().f0;
    let f0u = f0 * (gamma * y).exp();
    t.rows
        .push(num(0.0, f0, base.v_above(f0, y)?, "marker_threshold"));
    t.rows.push(num(
        0.0,
        f0u,
        base.v_above(f0u, y)?,
        "marker_threshold_scaled",
    ));
    let gi = g_infinity(y, params);
    let giu = gi * (gamma * y).exp();
    t.rows.push(num(
        f64::INFINITY,
        gi,
        v_infinity(gi, y, params)?.0,
        "marker_threshold",
    ));
    t.rows.push(num(
        f64::INFINITY,
        giu,
        v_infinity(giu, y, params)?.0,
        "marker_threshold_scaled",
    ));

    let mut max_increase = f64::NEG_INFINITY;
    for w in per_lambda.windows(2) {
        for (a, b) in w[0].1.iter().zip(&w[1].1) {
            max_increase = max_increase.max(b - a);
        }
    }
    let tail: Vec<(f64, f64)> = per_lambda
        .iter()
        .rev()
        .take(5)
        .rev()
        .map(|(lam, vals, _, _)| {
            (
                *lam,
                vals.iter()
                    .zip(&inf)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            )
        })
        .collect();
    let tail_decreasing = tail.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(Dataset {
        figure: FigureId::F4,
        tables: vec![t],
        summary: Summary::Sweep {
            max_increase_in_lambda: max_increase,
            tail_sup_distance: tail,
            tail_decreasing,
            table_error,
        },
    })
}

/// Builds the dataset of `spec.id`.
pub fn dataset(params: &ModelParams, spec: &FigureSpec) -> Result<Dataset> {
    match spec.id {
        FigureId::F1 => dataset_f1(&ValueContext::new(*params)?, spec),
        FigureId::F2 => dataset_f2(&ValueContext::new(*params)?, spec),
        FigureId::F3 => dataset_f3(params, spec),
        FigureId::F4 => dataset_f4(params, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: FigureId) -> FigureSpec {
        let mut s = FigureSpec::default_for(id);
        if !s.xs.is_empty() {
            s.xs = logspace(0.01, 10.0, 40);
        }
        if id != FigureId::F4 {
            s.ys = linspace(0.1, 7.0, 6);
        }
        s
    }

    #[test]
    fn sweep_grids() {
        let f3 = FigureSpec::default_for(FigureId::F3);
        assert_eq!(f3.lambdas.len(), 57);
        assert_eq!(f3.lambdas[0], 2f64.powi(-8));
        assert_eq!(*f3.lambdas.last().unwrap(), 2f64.powi(20));
        let f4 = FigureSpec::default_for(FigureId::F4);
        assert_eq!(f4.lambdas[0], 2f64.powi(-20));
        assert_eq!(*f4.lambdas.last().unwrap(), 2f64.powi(8));
        assert_eq!(f4.ys, vec![1.5]);
    }

    #[test]
    fn f1_shape_and_markers() {
        let p = ModelParams::reference();
        let spec = small(FigureId::F1);
        let d = dataset(&p, &spec).unwrap();
        assert_eq!(d.rows(), spec.ys.len() * spec.xs.len() + 2 * spec.ys.len());
        let ctx = ValueContext::new(p).unwrap();
        let m = &d.tables[1];
        let last = &m.rows[m.rows.len() - 2];
        let f0 = ctx.bounds().f0;
        assert_eq!(last[1].as_f64().unwrap(), f0);
        assert_eq!(last[2].as_f64().unwrap(), ctx.v_above(f0, 7.0).unwrap());
        match d.summary {
            Summary::Curves {
                max_decrease_in_x, ..
            } => assert_eq!(max_decrease_in_x, 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn f2_markers_sit_on_the_waiting_branch() {
        let p = ModelParams::reference();
        let d = dataset(&p, &small(FigureId::F2)).unwrap();
        let ctx = ValueContext::new(p).unwrap();
        let b = ctx.bounds();
        for row in d.tables[1]
            .rows
            .iter()
            .filter(|r| r[3] == Field::Text("threshold"))
        {
            let (y, x, v) = (
                row[0].as_f64().unwrap(),
                row[1].as_f64().unwrap(),
                row[2].as_f64().unwrap(),
            );
            let direct = b.b_scaled(y, &p).unwrap() - b.kappa * x * y;
            assert!((v - direct).abs() <= 1e-8 * (1.0 + direct.abs()));
        }
        assert!((b.g_lambda(0.1, &p) - 0.34380).abs() < 1e-5);
    }

    #[test]
    fn f3_is_bracketed_and_monotone() {
        let d = dataset(&ModelParams::reference(), &small(FigureId::F3)).unwrap();
        match d.summary {
            Summary::Thresholds {
                monotone_in_lambda,
                bracketed,
                ..
            } => assert!(monotone_in_lambda && bracketed),
            _ => unreachable!(),
        }
        assert_eq!(d.rows(), 57 * 6 + 2 * 6);
    }

    #[test]
    fn csv_is_deterministic() {
        let p = ModelParams::reference();
        let spec = small(FigureId::F1);
        let render = || {
            let d = dataset(&p, &spec).unwrap();
            let mut buf = Vec::new();
            d.tables[0].write_csv(&mut buf).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("y,x,v\n"));
    }

    #[test]
    fn bad_grids_are_rejected() {
        let mut s = small(FigureId::F1);
        s.xs = vec![1.0, 0.5];
        assert!(s.validate().is_err());
        s.xs.clear();
        assert!(s.validate().is_err());
        assert!("f9".parse::<FigureId>().is_err());
    }
}
