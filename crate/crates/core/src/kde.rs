//! Density responses from raw observations: predictor binning and Gaussian
//! kernel density estimation on a grid.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::measures::{DensityGrid, GridSpec};

/// Observations `(x, w)` with predictor `x` in `R^p` and response point `w`
/// in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservations {
    predictors: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
}

impl RawObservations {
    pub fn new(predictors: Vec<Vec<f64>>, points: Vec<Vec<f64>>) -> Result<Self> {
        if predictors.len() != points.len() {
            return Err(Error::LengthMismatch {
                expected: predictors.len(),
                got: points.len(),
            });
        }
        if predictors.is_empty() {
            return Err(Error::Empty("observations"));
        }
        check_rows(&predictors, "predictor")?;
        check_rows(&points, "response")?;
        Ok(Self { predictors, points })
    }

    /// Reads CSV with header `x1[,x2...],w1[,w2...]`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(csv_error)?.clone();
        let mut xcols = Vec::new();
        let mut wcols = Vec::new();
        for (i, name) in header.iter().enumerate() {
            let (target, rest) = if let Some(r) = name.strip_prefix('x') {
                (&mut xcols, r)
            } else if let Some(r) = name.strip_prefix('w') {
                (&mut wcols, r)
            } else {
                return Err(Error::Parse(format!("unexpected column '{name}'")));
            };
            let k: usize = rest
                .parse()
                .map_err(|_| Error::Parse(format!("unexpected column '{name}'")))?;
            target.push((k, i));
        }
        for (cols, prefix) in [(&mut xcols, 'x'), (&mut wcols, 'w')] {
            cols.sort();
            if cols.is_empty() || cols.iter().enumerate().any(|(j, (k, _))| *k != j + 1) {
                return Err(Error::Parse(format!(
                    "columns {prefix}1, {prefix}2, ... must be present and consecutive"
                )));
            }
        }
        let mut predictors = Vec::new();
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_error)?;
            let field = |i: usize| -> Result<f64> {
                let s = rec.get(i).unwrap_or("");
                s.parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad number '{s}'", line + 2)))
            };
            predictors.push(
                xcols
                    .iter()
                    .map(|&(_, i)| field(i))
                    .collect::<Result<Vec<_>>>()?,
            );
            points.push(
                wcols
                    .iter()
                    .map(|&(_, i)| field(i))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Self::new(predictors, points)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn predictor_dim(&self) -> usize {
        self.predictors[0].len()
    }

    pub fn response_dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn predictors(&self) -> &[Vec<f64>] {
        &self.predictors
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Replaces each two-dimensional response `(lo, hi)` by
    /// `(lo, hi - lo)`, e.g. daily minimum temperature and daily range.
    pub fn min_range_transform(mut self) -> Result<Self> {
        if self.response_dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: self.response_dim(),
            });
        }
        for p in &mut self.points {
            p[1] -= p[0];
        }
        Ok(self)
    }
}

fn check_rows(rows: &[Vec<f64>], what: &str) -> Result<()> {
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::InvalidInput(format!("{what} rows are empty")));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: r.len(),
        });
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} values must be finite")));
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// One predictor bin with the response points that fell into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub centre: f64,
    pub points: Vec<Vec<f64>>,
}

/// Groups observations into `bins` equal-width bins of the scalar predictor
/// over `range` (default: the observed range). Rows outside the range and
/// empty bins are dropped with a warning.
pub fn bin_by_predictor(
    data: &RawObservations,
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<Vec<Bin>> {
    if bins < 2 {
        return Err(Error::InvalidInput("need at least 2 bins".into()));
    }
    if data.predictor_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: data.predictor_dim(),
        });
    }
    let xs = data.predictors().iter().map(|r| r[0]);
    let (lo, hi) = match range {
        Some(r) => r,
        None => xs
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
                (a.min(x), b.max(x))
            }),
    };
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bad predictor range [{lo}, {hi}]"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let mut groups: Vec<Vec<Vec<f64>>> = vec![Vec::new(); bins];
    let mut dropped = 0usize;
    for (x, p) in xs.zip(data.points()) {
        if x < lo || x > hi {
            dropped += 1;
            continue;
        }
        let k = (((x - lo) / width).floor() as usize).min(bins - 1);
        groups[k].push(p.clone());
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} observations outside the predictor range [{lo}, {hi}]");
    }
    let empty = groups.iter().filter(|g| g.is_empty()).count();
    if empty > 0 {
        log::warn!("dropped {empty} empty bins");
    }
    let out: Vec<Bin> = groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(k, points)| Bin {
            centre: lo + (k as f64 + 0.5) * width,
            points,
        })
        .collect();
    if out.len() < 2 {
        return Err(Error::InvalidInput(
            "all observations fall into one bin".into(),
        ));
    }
    Ok(out)
}

/// Bandwidth selection for [`kde_on_grid`].
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Bandwidth {
    /// Normal reference rule per axis.
    #[default]
    Silverman,
    /// Solve-the-equation plug-in selector (one-dimensional data only).
    SheatherJones,
    /// Per-axis standard deviations of the Gaussian kernel.
    Explicit(Vec<f64>),
}

const MIN_POINTS_AUTO: usize = 5;

/// Per-axis bandwidths for `points`.
pub fn select_bandwidth(points: &[Vec<f64>], rule: &Bandwidth) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let d = points[0].len();
    if let Bandwidth::Explicit(h) = rule {
        if h.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: h.len(),
            });
        }
        if h.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("bandwidths must be positive".into()));
        }
        return Ok(h.clone());
    }
    let n = points.len();
    if n < MIN_POINTS_AUTO {
        return Err(Error::InvalidInput(format!(
            "automatic bandwidth needs at least {MIN_POINTS_AUTO} points, got {n}"
        )));
    }
    let sd: Vec<f64> = (0..d)
        .map(|a| std_dev(points.iter().map(|p| p[a])))
        .collect();
    if sd.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput(
            "points have zero variance along an axis".into(),
        ));
    }
    match rule {
        Bandwidth::Silverman => {
            let df = d as f64;
            let c = (4.0 / (df + 2.0)).powf(1.0 / (df + 4.0)) * (n as f64).powf(-1.0 / (df + 4.0));
            Ok(sd.iter().map(|s| c * s).collect())
        }
        Bandwidth::SheatherJones => {
            if d != 1 {
                return Err(Error::InvalidInput(
                    "the Sheather-Jones selector is one-dimensional".into(),
                ));
            }
            let x: Vec<f64> = points.iter().map(|p| p[0]).collect();
            Ok(vec![sheather_jones(&x)?])
        }
        Bandwidth::Explicit(_) => unreachable!(),
    }
}

fn std_dev(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn quantile_sorted(x: &[f64], p: f64) -> f64 {
    let pos = p * (x.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < x.len() {
        x[i] * (1.0 - f) + x[i + 1] * f
    } else {
        x[i]
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

// (1 / (n (n - 1))) sum_{i, j} phi^(r)((X_i - X_j) / g) for r = 4 or 6,
// diagonal included as in the usual implementation of the selector.
fn pair_sum(diffs: &[f64], n: usize, g: f64, order: u8) -> f64 {
    let s: f64 = diffs
        .iter()
        .map(|d| {
            let u = d / g;
            let u2 = u * u;
            let poly = match order {
                4 => (u2 - 6.0) * u2 + 3.0,
                _ => ((u2 - 15.0) * u2 + 45.0) * u2 - 15.0,
            };
            poly * (-0.5 * u2).exp() * INV_SQRT_2PI
        })
        .sum();
    let diag = match order {
        4 => 3.0,
        _ => -15.0,
    } * INV_SQRT_2PI;
    // Each unordered pair is stored once.
    (2.0 * s + n as f64 * diag) / (n as f64 * (n as f64 - 1.0))
}

/// Sheather-Jones solve-the-equation bandwidth for a Gaussian kernel.
pub fn sheather_jones(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < MIN_POINTS_AUTO {
        return Err(Error::InvalidInput(format!(
            "automatic bandwidth needs at least {MIN_POINTS_AUTO} points, got {n}"
        )));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let sd = std_dev(x.iter().copied());
    let scale = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    if !(scale > 0.0) {
        return Err(Error::InvalidInput("points have zero variance".into()));
    }
    let mut diffs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            diffs.push(x[i] - x[j]);
        }
    }
    let nf = n as f64;
    // Pilot bandwidths from the normal reference with robust scale 1.349 * scale.
    let lam = 1.349 * scale;
    let a = 0.920 * lam * nf.powf(-1.0 / 7.0);
    let b = 0.912 * lam * nf.powf(-1.0 / 9.0);
    let s_a = pair_sum(&diffs, n, a, 4) / a.powi(5);
    let t_b = -pair_sum(&diffs, n, b, 6) / b.powi(7);
    if !(s_a > 0.0 && t_b > 0.0) {
        return Err(Error::InvalidInput(
            "Sheather-Jones pilot estimates are not positive".into(),
        ));
    }
    let ratio = (s_a / t_b).powf(1.0 / 7.0);
    let rk = 0.5 / std::f64::consts::PI.sqrt();
    let f = |h: f64| {
        let alpha = 1.357 * ratio * h.powf(5.0 / 7.0);
        let s = pair_sum(&diffs, n, alpha, 4) / alpha.powi(5);
        if s > 0.0 {
            h - (rk / (nf * s)).powf(0.2)
        } else {
            f64::NEG_INFINITY
        }
    };
    let h0 = 1.06 * scale * nf.powf(-0.2);
    let (mut lo, mut hi) = (0.01 * h0, 10.0 * h0);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(Error::InvalidInput(
            "Sheather-Jones equation has no root in range".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Product Gaussian kernel density estimate evaluated at the grid nodes and
/// renormalized to unit mass on the rectangle.
pub fn kde_on_grid(
    points: &[Vec<f64>],
    spec: &GridSpec,
    bandwidth: &Bandwidth,
) -> Result<DensityGrid> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let d = spec.dim();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: p.len(),
        });
    }
    let h = select_bandwidth(points, bandwidth)?;
    let nodes: Vec<Vec<f64>> = spec.axes().iter().map(|a| a.nodes()).collect();
    let counts = spec.counts();
    let mut values = vec![0.0; spec.len()];
    let mut factors: Vec<Vec<f64>> = vec![Vec::new(); d];
    for p in points {
        for a in 0..d {
            factors[a] = nodes[a]
                .iter()
                .map(|z| {
                    let u = (z - p[a]) / h[a];
                    (-0.5 * u * u).exp() * INV_SQRT_2PI / h[a]
                })
                .collect();
        }
        // Outer product of the per-axis factors, row-major.
        let mut idx = vec![0usize; d];
        for v in values.iter_mut() {
            *v += idx
                .iter()
                .enumerate()
                .map(|(a, &i)| factors[a][i])
                .product::<f64>();
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
    let n = points.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    DensityGrid::new(spec.clone(), values)?.normalized()
}
