//! One-dimensional Wasserstein geometry through quantile functions.
//!
//! On the line `W_2^2(a, b) = int_0^1 (Q_a(t) - Q_b(t))^2 dt`, so quantile
//! curves are an isometric coordinate system and weighted barycenters reduce
//! to an average followed by an isotonic projection.

use crate::error::{Error, Result};
use crate::measures::{DensityGrid, DiscreteMeasure, GridSpec, GridValues};

pub const DEFAULT_QUANTILE_POINTS: usize = 201;

const MONOTONE_SLACK: f64 = 1e-12;

/// Nondecreasing values `Q(t_j)` on `t_j = j / (P - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurve {
    values: Vec<f64>,
    lower: f64,
    upper: f64,
}

impl QuantileCurve {
    pub fn new(values: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "quantile curves need at least 3 points, got {}",
                values.len()
            )));
        }
        if !(lower <= upper) {
            return Err(Error::InvalidInput(format!(
                "support [{lower}, {upper}] is empty"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("quantile values must be finite".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0] - MONOTONE_SLACK) {
            return Err(Error::InvalidInput(
                "quantile values must be nondecreasing".into(),
            ));
        }
        let slack = MONOTONE_SLACK * (1.0 + lower.abs().max(upper.abs()));
        if values
            .iter()
            .any(|&v| v < lower - slack || v > upper + slack)
        {
            return Err(Error::InvalidInput(format!(
                "quantile values leave the support [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            values,
            lower,
            upper,
        })
    }

    /// Samples `f` at the `P` quantile levels.
    pub fn from_fn(points: usize, lower: f64, upper: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..points).map(|j| f(level(j, points))).collect();
        Self::new(values, lower, upper)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// Linear interpolation at level `t` in `[0, 1]`.
    pub fn eval(&self, t: f64) -> f64 {
        let p = self.values.len();
        let s = t.clamp(0.0, 1.0) * (p - 1) as f64;
        let j = (s.floor() as usize).min(p - 2);
        let f = s - j as f64;
        self.values[j] * (1.0 - f) + self.values[j + 1] * f
    }

    pub fn median(&self) -> f64 {
        self.eval(0.5)
    }

    /// Mean of the measure, `int_0^1 Q(t) dt`, by the trapezoid rule.
    pub fn mean(&self) -> f64 {
        trapezoid(&self.values)
    }

    /// Quantile curve of a discrete measure on a one-dimensional grid,
    /// `Q(t) = min { d_k : F(d_k) >= t }` with `Q(0)` the first atom.
    pub fn from_discrete(measure: &DiscreteMeasure, points: usize) -> Result<Self> {
        let spec = measure.spec();
        if spec.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: spec.dim(),
            });
        }
        let ax = spec.axes()[0];
        let nodes = ax.nodes();
        let cum = cumulative(measure.mass());
        let first = measure
            .mass()
            .iter()
            .position(|&m| m > 0.0)
            .ok_or(Error::DegenerateDensity)?;
        let mut values = Vec::with_capacity(points);
        let mut k = first;
        for j in 0..points {
            let t = level(j, points);
            while k + 1 < nodes.len() && cum[k] < t {
                k += 1;
            }
            values.push(nodes[k]);
        }
        Self::new(values, ax.lower, ax.upper)
    }

    /// Projects the measure onto the nodes of a one-dimensional grid.
    ///
    /// Between consecutive levels the curve is linear, which spreads mass
    /// `1 / (P - 1)` uniformly over `[Q(t_j), Q(t_{j+1})]`; that mass is
    /// assigned to nodes by linear (hat-function) weights, so total mass and
    /// mean are preserved exactly.
    pub fn to_measure(&self, spec: &GridSpec) -> Result<DiscreteMeasure> {
        if spec.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: spec.dim(),
            });
        }
        let mut mass = vec![0.0; spec.len()];
        let dt = 1.0 / (self.values.len() - 1) as f64;
        for w in self.values.windows(2) {
            deposit_uniform(spec, w[0], w[1], dt, &mut mass);
        }
        DiscreteMeasure::new(spec.clone(), mass)
    }
}

#[inline]
fn level(j: usize, points: usize) -> f64 {
    j as f64 / (points - 1) as f64
}

fn trapezoid(v: &[f64]) -> f64 {
    let p = v.len();
    let inner: f64 = v[1..p - 1].iter().sum();
    (inner + 0.5 * (v[0] + v[p - 1])) / (p - 1) as f64
}

fn cumulative(mass: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = mass
        .iter()
        .map(|m| {
            acc += m;
            acc
        })
        .collect();
    let total = acc;
    cum.iter_mut().for_each(|c| *c /= total);
    if let Some(last) = cum.last_mut() {
        *last = 1.0;
    }
    cum
}

// Uniform mass on [a, b] with total `mass`, hat-binned onto the 1-D grid.
fn deposit_uniform(spec: &GridSpec, a: f64, b: f64, mass: f64, out: &mut [f64]) {
    let ax = spec.axes()[0];
    let h = ax.step();
    let a = a.clamp(ax.lower, ax.upper);
    let b = b.clamp(ax.lower, ax.upper);
    if b - a <= 1e-14 * h {
        spec.deposit(&[0.5 * (a + b)], mass, out);
        return;
    }
    let cell = |x: f64| (((x - ax.lower) / h).floor().max(0.0) as usize).min(ax.count - 2);
    let (ca, cb) = (cell(a), cell(b));
    let density = mass / (b - a);
    for c in ca..=cb {
        let lo = a.max(ax.node(c));
        let hi = b.min(ax.node(c + 1));
        if hi <= lo {
            continue;
        }
        let m = density * (hi - lo);
        let frac = ((0.5 * (lo + hi) - ax.node(c)) / h).clamp(0.0, 1.0);
        out[c] += m * (1.0 - frac);
        out[c + 1] += m * frac;
    }
}

/// Quantile curve of a density on a one-dimensional grid.
///
/// The CDF is accumulated with the trapezoid rule and interpolated linearly
/// between nodes; `Q(t) = inf { w : F(w) >= t }`. `Q(0)` is the last node
/// with `F = 0` and `Q(1)` the first node with `F = 1`, so both ends sit on
/// the effective support.
pub fn quantile_from_density(density: &DensityGrid, points: usize) -> Result<QuantileCurve> {
    let spec = density.spec();
    if spec.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: spec.dim(),
        });
    }
    if points < 3 {
        return Err(Error::InvalidInput(
            "need at least 3 quantile points".into(),
        ));
    }
    let ax = spec.axes()[0];
    let f = density.values();
    let mut cum = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * (w[0] + w[1]);
        cum.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::DegenerateDensity);
    }
    cum.iter_mut().for_each(|c| *c /= acc);
    *cum.last_mut().unwrap() = 1.0;

    let nodes = ax.nodes();
    let start = cum.iter().rposition(|&c| c == 0.0).unwrap_or(0);
    let end = cum.iter().position(|&c| c >= 1.0).unwrap();
    let mut values = Vec::with_capacity(points);
    values.push(nodes[start]);
    let mut k = start + 1;
    for j in 1..points - 1 {
        let t = level(j, points);
        while cum[k] < t {
            k += 1;
        }
        let (f0, f1) = (cum[k - 1], cum[k]);
        let w = nodes[k - 1] + (nodes[k] - nodes[k - 1]) * (t - f0) / (f1 - f0);
        values.push(w.min(nodes[k]));
    }
    values.push(nodes[end]);
    QuantileCurve::new(values, ax.lower, ax.upper)
}

/// Squared 2-Wasserstein distance between two quantile curves, by the
/// trapezoid rule on the shared level grid.
pub fn w2_1d(a: &QuantileCurve, b: &QuantileCurve) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let sq: Vec<f64> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    Ok(trapezoid(&sq))
}

/// Exact squared 2-Wasserstein distance between two discrete measures on
/// the line, given as sorted atoms with masses.
pub fn w2_atoms(xa: &[f64], ma: &[f64], xb: &[f64], mb: &[f64]) -> f64 {
    monotone_plan(ma, mb)
        .into_iter()
        .map(|(i, j, m)| m * (xa[i] - xb[j]).powi(2))
        .sum()
}

/// Monotone (north-west corner) coupling of two mass vectors on sorted
/// atoms, as `(i, j, mass)` triples in order, with both mass vectors
/// normalized to unit total. It is the optimal plan for any convex cost of
/// `x_i - y_j`.
pub fn monotone_plan(ma: &[f64], mb: &[f64]) -> Vec<(usize, usize, f64)> {
    let ca = cumulative(ma);
    let cb = cumulative(mb);
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(ma.len() + mb.len());
    while i < ma.len() && j < mb.len() {
        let next = ca[i].min(cb[j]);
        if next > prev {
            out.push((i, j, next - prev));
        }
        prev = next;
        if ca[i] <= next {
            i += 1;
        }
        if cb[j] <= next {
            j += 1;
        }
    }
    out
}

/// Exact squared 2-Wasserstein distance between two measures on the same
/// one-dimensional grid.
pub fn w2_discrete_1d(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch);
    }
    if a.spec().dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: a.spec().dim(),
        });
    }
    let nodes = a.spec().axes()[0].nodes();
    Ok(w2_atoms(&nodes, a.mass(), &nodes, b.mass()))
}

/// Exact squared 2-Wasserstein distance between the piecewise-linear
/// quantile curve `curve` and a discrete measure on a one-dimensional grid.
pub fn w2_curve_discrete(curve: &QuantileCurve, measure: &DiscreteMeasure) -> Result<f64> {
    let spec = measure.spec();
    if spec.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: spec.dim(),
        });
    }
    let nodes = spec.axes()[0].nodes();
    let cum = cumulative(measure.mass());
    let p = curve.len();
    let mut cuts: Vec<f64> = (0..p)
        .map(|j| level(j, p))
        .chain(cum.iter().copied())
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut acc = 0.0;
    let mut k = 0;
    for w in cuts.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        if s1 <= s0 {
            continue;
        }
        // On (s0, s1] the discrete quantile is constant.
        while k + 1 < nodes.len() && cum[k] < s1 {
            k += 1;
        }
        let x = nodes[k];
        let a = curve.eval(s0) - x;
        let b = curve.eval(s1) - x;
        acc += (s1 - s0) * (a * a + a * b + b * b) / 3.0;
    }
    Ok(acc)
}

/// Euclidean projection of `y` onto nondecreasing sequences
/// (pool adjacent violators, unit weights).
pub fn pav(y: &[f64]) -> Vec<f64> {
    // Blocks as (sum, count); a new point merges backwards while it
    // violates monotonicity.
    let mut sums: Vec<f64> = Vec::with_capacity(y.len());
    let mut counts: Vec<usize> = Vec::with_capacity(y.len());
    for &v in y {
        sums.push(v);
        counts.push(1);
        while sums.len() > 1 {
            let n = sums.len();
            let last = sums[n - 1] / counts[n - 1] as f64;
            let prev = sums[n - 2] / counts[n - 2] as f64;
            if prev <= last {
                break;
            }
            let (s, c) = (sums.pop().unwrap(), counts.pop().unwrap());
            sums[n - 2] += s;
            counts[n - 2] += c;
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in sums.iter().zip(&counts) {
        out.extend(std::iter::repeat_n(s / *c as f64, *c));
    }
    out
}

/// Checks that weights average to one.
pub fn check_weight_sum(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Empty("weights"));
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if !mean.is_finite() || (mean - 1.0).abs() > 1e-8 {
        return Err(Error::WeightSum { mean });
    }
    Ok(())
}

/// Weighted Wasserstein barycenter of one-dimensional measures.
///
/// Averages `(1/n) sum_i w_i Q_i`, projects the average onto nondecreasing
/// curves and clamps it to the common support.
pub fn weighted_quantile_barycenter(
    curves: &[QuantileCurve],
    weights: &[f64],
) -> Result<QuantileCurve> {
    if curves.is_empty() {
        return Err(Error::Empty("curves"));
    }
    if weights.len() != curves.len() {
        return Err(Error::LengthMismatch {
            expected: curves.len(),
            got: weights.len(),
        });
    }
    check_weight_sum(weights)?;
    let p = curves[0].len();
    if let Some(c) = curves.iter().find(|c| c.len() != p) {
        return Err(Error::LengthMismatch {
            expected: p,
            got: c.len(),
        });
    }
    let n = curves.len() as f64;
    let mut avg = vec![0.0; p];
    for (c, &w) in curves.iter().zip(weights) {
        for (a, q) in avg.iter_mut().zip(&c.values) {
            *a += w * q;
        }
    }
    avg.iter_mut().for_each(|a| *a /= n);
    let lower = curves.iter().map(|c| c.lower).fold(f64::INFINITY, f64::min);
    let upper = curves
        .iter()
        .map(|c| c.upper)
        .fold(f64::NEG_INFINITY, f64::max);
    let values = pav(&avg)
        .into_iter()
        .map(|v| v.clamp(lower, upper))
        .collect();
    QuantileCurve::new(values, lower, upper)
}
