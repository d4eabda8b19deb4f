//! Rectangular grids, densities sampled on them, and the discrete measures
//! used by every transport routine in the crate.
//!
//! Flat indices are row-major with axis 0 varying slowest.

use crate::error::{Error, Result};

/// One equidistant axis of a rectangular grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, count: usize) -> Self {
        Self {
            lower,
            upper,
            count,
        }
    }

    /// Distance between neighbouring nodes.
    #[inline]
    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.count - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.upper
        } else {
            self.lower + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }
}

/// Equidistant rectangular grid `d_1, ..., d_m` in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one axis".into()));
        }
        for (a, ax) in axes.iter().enumerate() {
            if ax.count < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} has {} points, need at least 2",
                    ax.count
                )));
            }
            if !(ax.lower.is_finite() && ax.upper.is_finite()) || ax.lower >= ax.upper {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} bounds [{}, {}] are not increasing",
                    ax.lower, ax.upper
                )));
            }
        }
        Ok(Self { axes })
    }

    /// One-dimensional grid on `[lower, upper]`.
    pub fn line(lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lower, upper, count)])
    }

    /// Square grid with identical axes.
    pub fn cube(dim: usize, lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lower, upper, count); dim])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Total number of grid points `m`.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    pub fn steps(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::step).collect()
    }

    /// Volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::step).product()
    }

    /// Length of the diagonal of one grid cell (`zeta`).
    pub fn diagonal(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a.step() * a.step())
            .sum::<f64>()
            .sqrt()
    }

    /// Axis indices of flat index `k`.
    pub fn unravel(&self, mut k: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (a, ax) in self.axes.iter().enumerate().rev() {
            idx[a] = k % ax.count;
            k /= ax.count;
        }
        idx
    }

    /// Flat index of the given axis indices.
    pub fn ravel(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim());
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, ax)| acc * ax.count + i)
    }

    /// Coordinates of grid point `k`.
    pub fn point(&self, k: usize) -> Vec<f64> {
        self.unravel(k)
            .into_iter()
            .zip(&self.axes)
            .map(|(i, ax)| ax.node(i))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Whether `p` lies in the closed rectangle, up to `tol` per axis.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(&self.axes)
                .all(|(&x, ax)| x >= ax.lower - tol && x <= ax.upper + tol)
    }

    /// Flat index of the grid node closest to `p` (clamped to the rectangle).
    pub fn nearest(&self, p: &[f64]) -> usize {
        let idx: Vec<usize> = p
            .iter()
            .zip(&self.axes)
            .map(|(&x, ax)| {
                let f = ((x - ax.lower) / ax.step()).round();
                f.clamp(0.0, (ax.count - 1) as f64) as usize
            })
            .collect();
        self.ravel(&idx)
    }

    /// Distributes `mass` located at `p` over the `2^dim` surrounding nodes
    /// with multilinear weights. `p` must lie inside the rectangle.
    pub fn deposit(&self, p: &[f64], mass: f64, out: &mut [f64]) {
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let ax = &self.axes[a];
            let f = ((p[a] - ax.lower) / ax.step()).clamp(0.0, (ax.count - 1) as f64);
            let i = (f.floor() as usize).min(ax.count - 2);
            base[a] = i;
            frac[a] = f - i as f64;
        }
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = mass;
            for a in 0..d {
                let hi = (corner >> a) & 1 == 1;
                idx[a] = base[a] + hi as usize;
                w *= if hi { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                out[self.ravel(&idx)] += w;
            }
        }
    }
}

/// Anything that carries one value per grid node.
pub trait GridValues {
    fn spec(&self) -> &GridSpec;
    fn values(&self) -> &[f64];
}

/// Nonnegative density values (probability per unit volume) on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::LengthMismatch {
                expected: spec.len(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "density values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { spec, values })
    }

    /// Evaluates `f` at every grid point.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..spec.len()).map(|k| f(&spec.point(k))).collect();
        Self::new(spec, values)
    }

    /// Riemann sum of the density (value times cell volume).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    /// Rescales so that the Riemann sum is exactly one.
    pub fn normalized(mut self) -> Result<Self> {
        let total = self.integral();
        if total <= 0.0 {
            return Err(Error::DegenerateDensity);
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        Ok(self)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl GridValues for DensityGrid {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Rescales `w` onto the probability simplex. The rounding residue is
/// absorbed into the largest component so the sum is one to the last bit
/// that the largest entry can carry.
pub fn normalize_mass(w: &mut [f64]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "masses must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDensity);
    }
    w.iter_mut().for_each(|v| *v /= total);
    let (imax, _) = w
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    let rest: f64 = w
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != imax)
        .map(|(_, v)| v)
        .sum();
    w[imax] = (1.0 - rest).max(0.0);
    Ok(())
}

/// Probability mass vector `r` supported on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    spec: GridSpec,
    mass: Vec<f64>,
}

impl DiscreteMeasure {
    /// Normalizes `mass` onto the simplex.
    pub fn new(spec: GridSpec, mut mass: Vec<f64>) -> Result<Self> {
        if mass.len() != spec.len() {
            return Err(Error::LengthMismatch {
                expected: spec.len(),
                got: mass.len(),
            });
        }
        normalize_mass(&mut mass)?;
        Ok(Self { spec, mass })
    }

    pub fn point_mass(spec: GridSpec, k: usize) -> Self {
        let mut mass = vec![0.0; spec.len()];
        mass[k] = 1.0;
        Self { spec, mass }
    }

    pub fn uniform(spec: GridSpec) -> Self {
        let m = spec.len();
        let mut mass = vec![1.0 / m as f64; m];
        normalize_mass(&mut mass).expect("uniform mass is valid");
        Self { spec, mass }
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.spec.dim()];
        for (k, &w) in self.mass.iter().enumerate() {
            if w > 0.0 {
                for (m, x) in mean.iter_mut().zip(self.spec.point(k)) {
                    *m += w * x;
                }
            }
        }
        mean
    }

    /// Row-major `dim x dim` covariance matrix.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.spec.dim();
        let mean = self.mean();
        let mut cov = vec![0.0; d * d];
        for (k, &w) in self.mass.iter().enumerate() {
            if w > 0.0 {
                let p = self.spec.point(k);
                for a in 0..d {
                    for b in 0..d {
                        cov[a * d + b] += w * (p[a] - mean[a]) * (p[b] - mean[b]);
                    }
                }
            }
        }
        cov
    }

    /// Flat index of the heaviest node.
    pub fn argmax(&self) -> usize {
        self.mass
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (i, &v)| if v > b.1 { (i, v) } else { b },
            )
            .0
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

impl GridValues for DiscreteMeasure {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }
    fn values(&self) -> &[f64] {
        &self.mass
    }
}

/// Approximates a density by the mass vector `f(d_k) / sum_j f(d_j)`.
pub fn discretize(density: &DensityGrid) -> Result<DiscreteMeasure> {
    DiscreteMeasure::new(density.spec.clone(), density.values.clone())
}

/// Dense matrix of ground costs between two finite point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidInput(
                "costs must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Squared Euclidean distances between two point clouds.
    pub fn from_points(src: &[Vec<f64>], dst: &[Vec<f64>]) -> Self {
        let entries = src
            .iter()
            .flat_map(|p| dst.iter().map(move |q| squared_distance(p, q)))
            .collect();
        Self {
            rows: src.len(),
            cols: dst.len(),
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.entries[k * self.cols + l]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

#[inline]
pub fn squared_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Pairwise squared-distance matrix `D = (||d_k - d_l||^2)` of the grid.
pub fn cost_matrix(spec: &GridSpec) -> CostMatrix {
    let pts = spec.points();
    CostMatrix::from_points(&pts, &pts)
}

/// Joint mass matrix with prescribed marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl TransportPlan {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.entries[k * self.cols + l]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries
            .chunks(self.cols)
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.entries.chunks(self.cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Sup-norm violation of the marginal constraints `S 1 = a`, `S' 1 = b`.
    pub fn marginal_violation(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self
            .row_sums()
            .iter()
            .zip(a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let c = self
            .col_sums()
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    /// Transport cost `<S, D>`.
    pub fn cost(&self, d: &CostMatrix) -> f64 {
        self.entries
            .iter()
            .zip(d.entries())
            .map(|(s, c)| s * c)
            .sum()
    }

    /// Nonzero atoms `(k, l, mass)`.
    pub fn atoms(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0.0)
            .map(move |(i, &s)| (i / self.cols, i % self.cols, s))
    }
}
