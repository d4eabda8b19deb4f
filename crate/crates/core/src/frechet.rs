//! Global and local Frechet regression weights for Euclidean predictors.
//!
//! Both schemes produce signed weights `s_i(x)` with `(1/n) sum_i s_i = 1`;
//! the conditional barycenter at `x` is then the weighted barycenter of the
//! responses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Predictor design `X` (n rows, q columns) with its moments.
#[derive(Debug, Clone)]
pub struct PredictorSample {
    rows: Vec<Vec<f64>>,
    // Lexicographic row order; sums run in this order so that permuting the
    // rows leaves every weight bit-identical.
    order: Vec<usize>,
    mean: DVector<f64>,
    cov_inv: Option<DMatrix<f64>>,
    ridge: Option<f64>,
}

impl PredictorSample {
    /// Builds the sample; a singular covariance is regularized with a small
    /// ridge `eps = 1e-10 * tr(cov) / q`, reported by [`Self::ridge`].
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(rows, true)
    }

    /// Like [`Self::new`] but without the ridge fallback.
    pub fn without_ridge(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(rows, false)
    }

    pub fn from_scalars(x: &[f64]) -> Result<Self> {
        Self::new(x.iter().map(|&v| vec![v]).collect())
    }

    fn build(rows: Vec<Vec<f64>>, allow_ridge: bool) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("predictor sample"));
        }
        let q = rows[0].len();
        if q == 0 {
            return Err(Error::InvalidInput(
                "predictors need at least one column".into(),
            ));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != q) {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: r.len(),
            });
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("predictors must be finite".into()));
        }
        let order = canonical_order(&rows);
        let mut mean = DVector::zeros(q);
        for &i in &order {
            mean += DVector::from_column_slice(&rows[i]);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(q, q);
        for &i in &order {
            let d = DVector::from_column_slice(&rows[i]) - &mean;
            cov += &d * d.transpose();
        }
        cov /= n as f64;

        let (cov_inv, ridge) = match invert_spd(&cov) {
            Some(inv) => (Some(inv), None),
            None if allow_ridge => {
                let eps = 1e-10 * cov.trace() / q as f64;
                if eps > 0.0 {
                    let reg = &cov + DMatrix::identity(q, q) * eps;
                    log::warn!("predictor covariance is singular; adding ridge {eps:e}");
                    (invert_spd(&reg), Some(eps))
                } else {
                    (None, None)
                }
            }
            None => (None, None),
        };
        if cov_inv.is_none() && !allow_ridge && n > q {
            return Err(Error::SingularCovariance);
        }
        Ok(Self {
            rows,
            order,
            mean,
            cov_inv,
            ridge,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn q(&self) -> usize {
        self.mean.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mean.iter().copied().collect()
    }

    /// Ridge added to the covariance, if one was needed.
    pub fn ridge(&self) -> Option<f64> {
        self.ridge
    }

    /// Per-axis minimum and maximum of the design.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let q = self.q();
        let mut lo = vec![f64::INFINITY; q];
        let mut hi = vec![f64::NEG_INFINITY; q];
        for r in &self.rows {
            for a in 0..q {
                lo[a] = lo[a].min(r[a]);
                hi[a] = hi[a].max(r[a]);
            }
        }
        (lo, hi)
    }

    /// Subsample with the given row indices.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.rows[i].clone()).collect())
    }
}

fn canonical_order(rows: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| {
        rows[i]
            .iter()
            .zip(&rows[j])
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

// Inverse of a symmetric positive definite matrix, or None when it is
// numerically singular.
fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(max > 0.0) || min <= 1e-12 * max {
        return None;
    }
    m.clone().cholesky().map(|c| c.inverse())
}

/// Univariate kernel shapes; multivariate kernels are products over axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    /// Density of the standardized kernel at `u`.
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Self::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Self::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `K_jm = int K(u)^j u^m du`, by composite Simpson quadrature.
    pub fn moment(self, j: i32, m: i32) -> f64 {
        let (a, b) = match self {
            Self::Gaussian => (-40.0, 40.0),
            Self::Epanechnikov => (-1.0, 1.0),
        };
        let steps = 20_000;
        let h = (b - a) / steps as f64;
        let f = |u: f64| self.eval(u).powi(j) * u.powi(m);
        let mut acc = f(a) + f(b);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "epanechnikov" | "epa" => Ok(Self::Epanechnikov),
            other => Err(Error::Parse(format!("unknown kernel '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Epanechnikov => "epanechnikov",
        }
    }
}

/// Product kernel with one bandwidth per predictor axis.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    bandwidth: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: Vec<f64>) -> Result<Self> {
        if bandwidth.is_empty() || bandwidth.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "bandwidths must be positive, got {bandwidth:?}"
            )));
        }
        let (k14, k26) = (family.moment(1, 4), family.moment(2, 6));
        if !(k14.is_finite() && k26.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel {} has infinite moments",
                family.name()
            )));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn gaussian(h: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, vec![h])
    }

    pub fn epanechnikov(h: f64) -> Result<Self> {
        Self::new(KernelFamily::Epanechnikov, vec![h])
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    /// Same kernel with all bandwidths multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.family,
            self.bandwidth.iter().map(|h| h * factor).collect(),
        )
    }

    /// `K_h(d) = prod_a K(d_a / h_a) / h_a`.
    pub fn eval(&self, d: &[f64]) -> f64 {
        d.iter()
            .zip(&self.bandwidth)
            .map(|(u, h)| self.family.eval(u / h) / h)
            .product()
    }
}

fn check_query(sample: &PredictorSample, x: &[f64]) -> Result<()> {
    if x.len() != sample.q() {
        return Err(Error::DimensionMismatch {
            expected: sample.q(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("query point must be finite".into()));
    }
    Ok(())
}

/// Global weights `s_i = 1 + (X_i - mean)' cov^{-1} (x - mean)`.
pub fn global_weights(sample: &PredictorSample, x: &[f64]) -> Result<Vec<f64>> {
    check_query(sample, x)?;
    if sample.n() < sample.q() + 1 {
        return Err(Error::InvalidInput(format!(
            "global weights need at least {} observations, got {}",
            sample.q() + 1,
            sample.n()
        )));
    }
    let inv = sample.cov_inv.as_ref().ok_or(Error::SingularCovariance)?;
    let dx = DVector::from_column_slice(x) - &sample.mean;
    let a = inv * dx;
    Ok(sample
        .rows
        .iter()
        .map(|r| {
            let d = DVector::from_column_slice(r) - &sample.mean;
            1.0 + d.dot(&a)
        })
        .collect())
}

/// Local linear weights
/// `s_i = K_h(X_i - x) (1 - mu1' mu2^{-1} (X_i - x)) / sigma0^2`.
pub fn local_weights(sample: &PredictorSample, x: &[f64], kernel: &KernelSpec) -> Result<Vec<f64>> {
    check_query(sample, x)?;
    let q = sample.q();
    if kernel.bandwidth.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: kernel.bandwidth.len(),
        });
    }
    let n = sample.n() as f64;
    let xv = DVector::from_column_slice(x);
    let diffs: Vec<DVector<f64>> = sample
        .rows
        .iter()
        .map(|r| DVector::from_column_slice(r) - &xv)
        .collect();
    let k: Vec<f64> = diffs.iter().map(|d| kernel.eval(d.as_slice())).collect();
    let mut mu0 = 0.0;
    let mut mu1 = DVector::zeros(q);
    let mut mu2 = DMatrix::zeros(q, q);
    for &i in &sample.order {
        let (d, ki) = (&diffs[i], k[i]);
        mu0 += ki;
        mu1 += d * ki;
        mu2 += d * d.transpose() * ki;
    }
    mu0 /= n;
    mu1 /= n;
    mu2 /= n;
    let too_small = || Error::BandwidthTooSmall { x: x.to_vec() };
    if !(mu0 > 0.0) {
        return Err(too_small());
    }
    let mu2_inv = invert_spd(&mu2).ok_or_else(too_small)?;
    let a = &mu2_inv * &mu1;
    let sigma0 = mu0 - mu1.dot(&a);
    if !(sigma0 > 1e-12 * mu0) {
        return Err(too_small());
    }
    Ok(diffs
        .iter()
        .zip(&k)
        .map(|(d, &ki)| ki * (1.0 - a.dot(d)) / sigma0)
        .collect())
}
