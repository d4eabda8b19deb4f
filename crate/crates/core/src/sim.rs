//! Monte Carlo models with known conditional barycenters, and the
//! integrated error metrics used to score fits against them.
//!
//! One-dimensional model: `X ~ U[0, 1]` and, given `X = x`, a response with
//! quantile function `c + s a u(t)`, where `a u(t)` is the quantile function
//! of the base shape `f0(w) ~ max(0, 0.05 - w^2)` centred at zero,
//! `c = 0.4 + 0.2 x + e` with `e ~ N(0, 0.01)` and
//! `s = sqrt(1 + 0.02 x) (1 + r)` with `r ~ N(0, (0.1 * 5/6)^2)`. The
//! conditional barycenter is the noise-free curve `0.4 + 0.2 x +
//! sqrt(1 + 0.02 x) a u(t)`. Curves are clamped to `[0, 1]`.
//!
//! Two-dimensional model: `X ~ U[0, 1]` and a Gaussian (or bivariate t with
//! two degrees of freedom) truncated to the unit square, with mean
//! `(0.4 x + 0.3) (1, 1)` and scatter `V diag(l1, l2) V'`, `V` a rotation by
//! 45 degrees and `(l1, l2) ~ N((1 + 0.5 x, 1 - 0.5 x) / 100, 1e-4 I)`.
//!
//! Every run draws from its own stream of a seeded ChaCha generator, so
//! runs can execute in any order or in parallel with identical results.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frechet::{KernelSpec, PredictorSample};
use crate::measures::{discretize, DensityGrid, DiscreteMeasure, GridSpec};
use crate::ot1d::{w2_1d, QuantileCurve};
use crate::regression::{FittedModel, Mode, Prediction, Responses, Solver};
use crate::sinkhorn::{sinkhorn_divergence, SinkhornSettings};

/// Floor applied to drawn scale and eigenvalue parameters.
pub const SCALE_FLOOR: f64 = 1e-4;
/// Times the local bandwidth may be widened by 1.5 when too few design
/// points fall inside the kernel window.
pub const MAX_WIDENINGS: usize = 8;
const WIDENING: f64 = 1.5;

/// Half-width of the base shape's support, `sqrt(0.05)`.
pub fn base_half_width() -> f64 {
    0.05f64.sqrt()
}

/// Quantile function of the density `0.75 (1 - u^2)` on `[-1, 1]`.
pub fn standard_quantile(t: f64) -> f64 {
    2.0 * (((2.0 * t - 1.0).clamp(-1.0, 1.0)).asin() / 3.0).sin()
}

/// Response curve `clamp(centre + scale * a * u(t), 0, 1)` on `points`
/// equispaced probability levels.
pub fn shape_curve(centre: f64, scale: f64, points: usize) -> Result<QuantileCurve> {
    let a = base_half_width();
    QuantileCurve::from_fn(points, 0.0, 1.0, |t| {
        (centre + scale * a * standard_quantile(t)).clamp(0.0, 1.0)
    })
}

/// Conditional barycenter of the one-dimensional model at `x`.
pub fn true_1d(x: f64, points: usize) -> Result<QuantileCurve> {
    if !(-0.5..=1.5).contains(&x) {
        return Err(Error::InvalidInput(format!(
            "the model is defined for x in [-0.5, 1.5], got {x}"
        )));
    }
    shape_curve(0.4 + 0.2 * x, (1.0 + 0.02 * x).sqrt(), points)
}

fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Trapezoid quadrature over one or more intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn trapezoid(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if count < 2 || !(lower < upper) {
            return Err(Error::InvalidInput(format!(
                "bad quadrature [{lower}, {upper}] with {count} points"
            )));
        }
        let h = (upper - lower) / (count - 1) as f64;
        let points = (0..count).map(|i| lower + h * i as f64).collect();
        let mut weights = vec![h; count];
        weights[0] = 0.5 * h;
        weights[count - 1] = 0.5 * h;
        Ok(Self { points, weights })
    }

    /// `points_per_unit` nodes per unit length, counting both ends of a unit
    /// interval (21 gives a spacing of 0.05).
    pub fn per_unit(lower: f64, upper: f64, points_per_unit: usize) -> Result<Self> {
        if points_per_unit < 2 {
            return Err(Error::InvalidInput(
                "need at least 2 points per unit".into(),
            ));
        }
        let count = ((upper - lower) * (points_per_unit - 1) as f64).round() as usize + 1;
        Self::trapezoid(lower, upper, count)
    }

    pub fn union(parts: &[Quadrature]) -> Self {
        Self {
            points: parts
                .iter()
                .flat_map(|q| q.points.iter().copied())
                .collect(),
            weights: parts
                .iter()
                .flat_map(|q| q.weights.iter().copied())
                .collect(),
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.points.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                got: values.len(),
            });
        }
        Ok(values.iter().zip(&self.weights).map(|(v, w)| v * w).sum())
    }
}

/// Predictor region over which errors are integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// `[0, 1]`.
    Interpolation,
    /// `[-0.5, 0]` and `[1, 1.5]`.
    Extrapolation,
}

impl Region {
    pub fn quadrature(self, points_per_unit: usize) -> Result<Quadrature> {
        match self {
            Self::Interpolation => Quadrature::per_unit(0.0, 1.0, points_per_unit),
            Self::Extrapolation => Ok(Quadrature::union(&[
                Quadrature::per_unit(-0.5, 0.0, points_per_unit)?,
                Quadrature::per_unit(1.0, 1.5, points_per_unit)?,
            ])),
        }
    }
}

/// Empirical mean integrated Wasserstein error: the average over runs of
/// the integrated `W_2^2` between each run's fitted path and the model's
/// true path on the quadrature nodes.
pub fn emiwe(fits: &[Vec<QuantileCurve>], quadrature: &Quadrature) -> Result<f64> {
    if fits.is_empty() {
        return Err(Error::Empty("runs"));
    }
    let p = fits[0].first().map_or(0, QuantileCurve::len);
    let truth = quadrature
        .points()
        .iter()
        .map(|&x| true_1d(x, p))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for path in fits {
        total += integrated_w2(path, &truth, quadrature)?;
    }
    Ok(total / fits.len() as f64)
}

fn integrated_w2(path: &[QuantileCurve], truth: &[QuantileCurve], q: &Quadrature) -> Result<f64> {
    if path.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: path.len(),
        });
    }
    let errs = path
        .iter()
        .zip(truth)
        .map(|(f, t)| w2_1d(f, t))
        .collect::<Result<Vec<_>>>()?;
    q.integrate(&errs)
}

/// Empirical mean integrated Sinkhorn error against `truth` on the
/// quadrature nodes. Because the divergence of a measure with itself is
/// positive, a perfect fit scores [`sinkhorn_floor`], not zero.
pub fn emise(
    fits: &[Vec<DiscreteMeasure>],
    truth: &[DiscreteMeasure],
    quadrature: &Quadrature,
    metric: &SinkhornSettings,
) -> Result<f64> {
    if fits.is_empty() {
        return Err(Error::Empty("runs"));
    }
    let mut total = 0.0;
    for path in fits {
        total += integrated_divergence(path, truth, quadrature, metric)?;
    }
    Ok(total / fits.len() as f64)
}

fn integrated_divergence(
    path: &[DiscreteMeasure],
    truth: &[DiscreteMeasure],
    q: &Quadrature,
    metric: &SinkhornSettings,
) -> Result<f64> {
    if path.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: path.len(),
        });
    }
    let errs = path
        .iter()
        .zip(truth)
        .map(|(f, t)| sinkhorn_divergence(f, t, metric))
        .collect::<Result<Vec<_>>>()?;
    q.integrate(&errs)
}

/// Integrated self-divergence of the true path.
pub fn sinkhorn_floor(
    truth: &[DiscreteMeasure],
    quadrature: &Quadrature,
    metric: &SinkhornSettings,
) -> Result<f64> {
    integrated_divergence(truth, truth, quadrature, metric)
}

/// One-dimensional simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig1d {
    pub n: usize,
    pub quantile_points: usize,
    pub monte_carlo: usize,
    pub seed: u64,
    /// Kernel of the local fit.
    pub kernel: KernelSpec,
    pub points_per_unit: usize,
}

impl SimConfig1d {
    pub fn new(n: usize, monte_carlo: usize, seed: u64) -> Self {
        Self {
            n,
            quantile_points: crate::ot1d::DEFAULT_QUANTILE_POINTS,
            monte_carlo,
            seed,
            kernel: KernelSpec::epanechnikov(0.1).expect("positive bandwidth"),
            points_per_unit: 21,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidInput(format!(
                "n must be at least 10, got {}",
                self.n
            )));
        }
        if self.monte_carlo == 0 {
            return Err(Error::InvalidInput(
                "need at least one Monte Carlo run".into(),
            ));
        }
        if self.quantile_points < 2 {
            return Err(Error::InvalidInput(
                "need at least 2 quantile points".into(),
            ));
        }
        if self.kernel.bandwidth().len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.kernel.bandwidth().len(),
            });
        }
        Ok(())
    }
}

/// Predictors and responses of one run.
#[derive(Debug, Clone)]
pub struct Sample1d {
    pub x: Vec<f64>,
    pub responses: Vec<QuantileCurve>,
    /// Scale draws raised to the floor.
    pub truncated: usize,
}

pub fn generate_1d(config: &SimConfig1d, run: u64) -> Result<Sample1d> {
    config.validate()?;
    let mut rng = run_rng(config.seed, run);
    let shift = Normal::new(0.0, 0.1).expect("valid normal");
    let spread = Normal::new(0.0, 0.1 * 5.0 / 6.0).expect("valid normal");
    let mut x = Vec::with_capacity(config.n);
    let mut responses = Vec::with_capacity(config.n);
    let mut truncated = 0;
    for _ in 0..config.n {
        let xi: f64 = rng.random();
        let centre = 0.4 + 0.2 * xi + shift.sample(&mut rng);
        let mut scale = (1.0 + 0.02 * xi).sqrt() * (1.0 + spread.sample(&mut rng));
        if scale < SCALE_FLOOR {
            scale = SCALE_FLOOR;
            truncated += 1;
        }
        x.push(xi);
        responses.push(shape_curve(centre, scale, config.quantile_points)?);
    }
    Ok(Sample1d {
        x,
        responses,
        truncated,
    })
}

/// Integrated errors of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Run1d {
    pub run: u64,
    pub global_extrapolation: f64,
    pub global_interpolation: f64,
    pub local_interpolation: f64,
    /// Quadrature nodes at which the local bandwidth had to be widened.
    pub widened: usize,
    pub truncated: usize,
}

/// Local prediction that widens the bandwidth while the local design is
/// too sparse. Returns the prediction and whether widening happened.
pub fn predict_local_widening(
    sample: &PredictorSample,
    responses: &Responses,
    kernel: &KernelSpec,
    solver: Solver,
    domain: (Vec<f64>, Vec<f64>),
    x: &[f64],
) -> Result<(Prediction, bool)> {
    let mut k = kernel.clone();
    for attempt in 0..=MAX_WIDENINGS {
        let model = FittedModel::new(
            sample.clone(),
            responses.clone(),
            Mode::Local(k.clone()),
            solver,
        )?
        .with_domain(domain.0.clone(), domain.1.clone())?;
        match model.predict(x) {
            Err(Error::BandwidthTooSmall { .. }) if attempt < MAX_WIDENINGS => {
                k = k.scaled(WIDENING)?;
            }
            other => return other.map(|p| (p, attempt > 0)),
        }
    }
    unreachable!("the last attempt returns")
}

fn curves(preds: Vec<Prediction>) -> Vec<QuantileCurve> {
    preds
        .into_iter()
        .map(|p| match p {
            Prediction::Quantile(q) => q,
            Prediction::Measure(_) => unreachable!("exact solver"),
        })
        .collect()
}

/// Fitted paths of one run: global on both regions, local on
/// interpolation.
#[derive(Debug, Clone)]
pub struct Fits1d {
    pub global_interpolation: Vec<QuantileCurve>,
    pub global_extrapolation: Vec<QuantileCurve>,
    pub local_interpolation: Vec<QuantileCurve>,
    pub widened: usize,
    pub truncated: usize,
}

pub fn fit_1d(config: &SimConfig1d, run: u64) -> Result<Fits1d> {
    let data = generate_1d(config, run)?;
    let sample = PredictorSample::from_scalars(&data.x)?;
    let responses = Responses::Quantiles(data.responses);
    let global = FittedModel::new(
        sample.clone(),
        responses.clone(),
        Mode::Global,
        Solver::Exact1d,
    )?;
    let qi = Region::Interpolation.quadrature(config.points_per_unit)?;
    let qe = Region::Extrapolation.quadrature(config.points_per_unit)?;
    let xs = |q: &Quadrature| q.points().iter().map(|&x| vec![x]).collect::<Vec<_>>();
    let global_interpolation = curves(global.predict_path(&xs(&qi))?);
    let global_extrapolation = curves(global.predict_path(&xs(&qe))?);
    let mut local_interpolation = Vec::with_capacity(qi.points().len());
    let mut widened = 0;
    for &x in qi.points() {
        let (p, w) = predict_local_widening(
            &sample,
            &responses,
            &config.kernel,
            Solver::Exact1d,
            (vec![0.0], vec![1.0]),
            &[x],
        )?;
        widened += w as usize;
        local_interpolation.extend(curves(vec![p]));
    }
    Ok(Fits1d {
        global_interpolation,
        global_extrapolation,
        local_interpolation,
        widened,
        truncated: data.truncated,
    })
}

pub fn run_1d(config: &SimConfig1d, run: u64) -> Result<Run1d> {
    let fits = fit_1d(config, run)?;
    let qi = Region::Interpolation.quadrature(config.points_per_unit)?;
    let qe = Region::Extrapolation.quadrature(config.points_per_unit)?;
    Ok(Run1d {
        run,
        global_extrapolation: emiwe(&[fits.global_extrapolation], &qe)?,
        global_interpolation: emiwe(&[fits.global_interpolation], &qi)?,
        local_interpolation: emiwe(&[fits.local_interpolation], &qi)?,
        widened: fits.widened,
        truncated: fits.truncated,
    })
}

/// Shape of the two-dimensional responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResponseFamily {
    #[default]
    Gaussian,
    /// Bivariate t with two degrees of freedom and the same scatter matrix.
    StudentT,
}

impl ResponseFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "t" | "student-t" | "multivariate-t" => Ok(Self::StudentT),
            _ => Err(Error::Parse(format!("unknown response family '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::StudentT => "multivariate-t",
        }
    }
}

/// Two-dimensional simulation settings. The same `lambda` drives the
/// barycenter solver (costs in grid cells) and the error metric (costs in
/// physical units).
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig2d {
    pub n: usize,
    pub grid: usize,
    pub lambda: f64,
    pub monte_carlo: usize,
    pub seed: u64,
    pub family: ResponseFamily,
    pub kernel: KernelSpec,
    pub points_per_unit: usize,
    /// Barycenter stopping tolerance (L1 change between sweeps). The
    /// default 1e-4 moves the integrated error by about 1e-6 relative.
    pub tolerance: f64,
    pub extrapolation: bool,
    pub local: bool,
}

impl SimConfig2d {
    pub fn new(n: usize, monte_carlo: usize, seed: u64) -> Self {
        Self {
            n,
            grid: 101,
            lambda: 0.4,
            monte_carlo,
            seed,
            family: ResponseFamily::Gaussian,
            kernel: KernelSpec::epanechnikov(0.1).expect("positive bandwidth"),
            points_per_unit: 21,
            tolerance: 1e-4,
            extrapolation: false,
            local: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidInput(format!(
                "n must be at least 10, got {}",
                self.n
            )));
        }
        if self.monte_carlo == 0 {
            return Err(Error::InvalidInput(
                "need at least one Monte Carlo run".into(),
            ));
        }
        if self.grid < 21 {
            return Err(Error::InvalidInput(format!(
                "grid needs at least 21 points per axis, got {}",
                self.grid
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 4.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must lie in (0, 4], got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec::cube(2, 0.0, 1.0, self.grid).expect("valid grid")
    }

    pub fn solver(&self) -> SinkhornSettings {
        SinkhornSettings {
            tolerance: self.tolerance,
            ..SinkhornSettings::with_lambda(self.lambda)
        }
    }

    pub fn metric(&self) -> SinkhornSettings {
        SinkhornSettings::with_lambda(self.lambda).physical()
    }
}

/// Truncated density with mean `(m, m)` and eigenvalues `l1`, `l2` along
/// the directions `(1, -1)` and `(1, 1)`.
pub fn rotated_measure(
    spec: &GridSpec,
    m: f64,
    l1: f64,
    l2: f64,
    family: ResponseFamily,
) -> Result<DiscreteMeasure> {
    let density = DensityGrid::from_fn(spec.clone(), |p| {
        let (dx, dy) = (p[0] - m, p[1] - m);
        // Coordinates along the principal axes.
        let a = (dx - dy) * std::f64::consts::FRAC_1_SQRT_2;
        let b = (dx + dy) * std::f64::consts::FRAC_1_SQRT_2;
        let q = a * a / l1 + b * b / l2;
        match family {
            ResponseFamily::Gaussian => (-0.5 * q).exp(),
            ResponseFamily::StudentT => (1.0 + 0.5 * q).powi(-2),
        }
    })?;
    discretize(&density)
}

/// Conditional barycenter of the two-dimensional model at `x`.
pub fn true_2d(x: f64, spec: &GridSpec, family: ResponseFamily) -> Result<DiscreteMeasure> {
    if !(-0.5..=1.5).contains(&x) {
        return Err(Error::InvalidInput(format!(
            "the model is defined for x in [-0.5, 1.5], got {x}"
        )));
    }
    rotated_measure(
        spec,
        0.4 * x + 0.3,
        (1.0 + 0.5 * x) / 100.0,
        (1.0 - 0.5 * x) / 100.0,
        family,
    )
}

#[derive(Debug, Clone)]
pub struct Sample2d {
    pub x: Vec<f64>,
    pub responses: Vec<DiscreteMeasure>,
    /// Eigenvalue draws raised to the floor.
    pub truncated: usize,
}

pub fn generate_2d(config: &SimConfig2d, run: u64) -> Result<Sample2d> {
    config.validate()?;
    let spec = config.spec();
    let mut rng = run_rng(config.seed, run);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut x = Vec::with_capacity(config.n);
    let mut responses = Vec::with_capacity(config.n);
    let mut truncated = 0;
    for _ in 0..config.n {
        let xi: f64 = rng.random();
        let mut ls = [1.0 + 0.5 * xi, 1.0 - 0.5 * xi].map(|m| (m + noise.sample(&mut rng)) / 100.0);
        for l in &mut ls {
            if *l < SCALE_FLOOR {
                *l = SCALE_FLOOR;
                truncated += 1;
            }
        }
        x.push(xi);
        responses.push(rotated_measure(
            &spec,
            0.4 * xi + 0.3,
            ls[0],
            ls[1],
            config.family,
        )?);
    }
    Ok(Sample2d {
        x,
        responses,
        truncated,
    })
}

/// Integrated Sinkhorn errors of one run; fields are `None` for estimators
/// the configuration leaves out.
#[derive(Debug, Clone, PartialEq)]
pub struct Run2d {
    pub run: u64,
    pub global_extrapolation: Option<f64>,
    pub global_interpolation: f64,
    pub local_interpolation: Option<f64>,
    pub widened: usize,
    pub truncated: usize,
}

fn measures(preds: Vec<Prediction>) -> Vec<DiscreteMeasure> {
    preds
        .into_iter()
        .map(|p| match p {
            Prediction::Measure(m) => m,
            Prediction::Quantile(_) => unreachable!("sinkhorn solver"),
        })
        .collect()
}

/// True measures on the quadrature nodes of `region`.
pub fn truth_path_2d(config: &SimConfig2d, region: Region) -> Result<Vec<DiscreteMeasure>> {
    let spec = config.spec();
    region
        .quadrature(config.points_per_unit)?
        .points()
        .iter()
        .map(|&x| true_2d(x, &spec, config.family))
        .collect()
}

pub fn run_2d(config: &SimConfig2d, run: u64) -> Result<Run2d> {
    let data = generate_2d(config, run)?;
    let sample = PredictorSample::from_scalars(&data.x)?;
    let responses = Responses::Grid(data.responses);
    let solver = Solver::Sinkhorn(config.solver());
    let metric = config.metric();
    let global = FittedModel::new(sample.clone(), responses.clone(), Mode::Global, solver)?;
    let qi = Region::Interpolation.quadrature(config.points_per_unit)?;
    let xs = |q: &Quadrature| q.points().iter().map(|&x| vec![x]).collect::<Vec<_>>();
    let truth_i = truth_path_2d(config, Region::Interpolation)?;

    let fit = measures(global.predict_path_warm(&xs(&qi))?);
    let global_interpolation = integrated_divergence(&fit, &truth_i, &qi, &metric)?;

    let global_extrapolation = if config.extrapolation {
        let qe = Region::Extrapolation.quadrature(config.points_per_unit)?;
        let truth_e = truth_path_2d(config, Region::Extrapolation)?;
        let fit = measures(global.predict_path_warm(&xs(&qe))?);
        Some(integrated_divergence(&fit, &truth_e, &qe, &metric)?)
    } else {
        None
    };

    let mut widened = 0;
    let local_interpolation = if config.local {
        let mut fit = Vec::with_capacity(qi.points().len());
        for &x in qi.points() {
            let (p, w) = predict_local_widening(
                &sample,
                &responses,
                &config.kernel,
                solver,
                (vec![0.0], vec![1.0]),
                &[x],
            )?;
            widened += w as usize;
            fit.extend(measures(vec![p]));
        }
        Some(integrated_divergence(&fit, &truth_i, &qi, &metric)?)
    } else {
        None
    };

    Ok(Run2d {
        run,
        global_extrapolation,
        global_interpolation,
        local_interpolation,
        widened,
        truncated: data.truncated,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Per-run metrics as CSV; floats are written in shortest round-trip form.
pub fn runs_1d_csv(runs: &[Run1d]) -> String {
    let mut s = String::from(
        "run,global_extrapolation,global_interpolation,local_interpolation,widened,truncated\n",
    );
    for r in runs {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{},{}",
            r.run,
            r.global_extrapolation,
            r.global_interpolation,
            r.local_interpolation,
            r.widened,
            r.truncated
        );
    }
    s
}

pub fn runs_2d_csv(runs: &[Run2d]) -> String {
    let mut s = String::from(
        "run,global_extrapolation,global_interpolation,local_interpolation,widened,truncated\n",
    );
    for r in runs {
        let _ = writeln!(
            s,
            "{},{},{:e},{},{},{}",
            r.run,
            opt(r.global_extrapolation),
            r.global_interpolation,
            opt(r.local_interpolation),
            r.widened,
            r.truncated
        );
    }
    s
}

/// Averages over runs for one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub n: usize,
    pub global_extrapolation: Option<f64>,
    pub global_interpolation: f64,
    pub local_interpolation: Option<f64>,
    /// Integrated self-divergence of the truth (two-dimensional tables).
    pub floor: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

pub fn summarize_1d(n: usize, runs: &[Run1d]) -> TableRow {
    TableRow {
        n,
        global_extrapolation: Some(mean(runs.iter().map(|r| r.global_extrapolation))),
        global_interpolation: mean(runs.iter().map(|r| r.global_interpolation)),
        local_interpolation: Some(mean(runs.iter().map(|r| r.local_interpolation))),
        floor: None,
    }
}

pub fn summarize_2d(n: usize, runs: &[Run2d], floor: f64) -> TableRow {
    let avg = |f: fn(&Run2d) -> Option<f64>| {
        runs.iter()
            .map(f)
            .collect::<Option<Vec<_>>>()
            .map(|v| mean(v.into_iter()))
    };
    TableRow {
        n,
        global_extrapolation: avg(|r| r.global_extrapolation),
        global_interpolation: mean(runs.iter().map(|r| r.global_interpolation)),
        local_interpolation: avg(|r| r.local_interpolation),
        floor: Some(floor),
    }
}

/// Aggregate table with one row per estimator and one column per sample
/// size. Estimators missing from every row are omitted.
pub fn table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("estimator");
    for r in rows {
        let _ = write!(s, ",n={}", r.n);
    }
    s.push('\n');
    let lines: [(&str, fn(&TableRow) -> Option<f64>); 4] = [
        ("global_extrapolation", |r| r.global_extrapolation),
        ("global_interpolation", |r| Some(r.global_interpolation)),
        ("local_interpolation", |r| r.local_interpolation),
        ("self_divergence_floor", |r| r.floor),
    ];
    for (name, get) in lines {
        if rows.iter().all(|r| get(r).is_none()) {
            continue;
        }
        s.push_str(name);
        for r in rows {
            let _ = write!(s, ",{}", opt(get(r)));
        }
        s.push('\n');
    }
    s
}

/// Parses a table written by [`table_csv`] into `(estimator, values by n)`.
pub fn parse_table_csv(text: &str) -> Result<(Vec<usize>, Vec<(String, Vec<Option<f64>>)>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Empty("table"))?;
    let ns = header
        .split(',')
        .skip(1)
        .map(|c| {
            c.strip_prefix("n=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad table column '{c}'")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut cells = line.split(',');
        let name = cells.next().unwrap_or_default().to_string();
        let values = cells
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse()
                        .map(Some)
                        .map_err(|_| Error::Parse(format!("bad table value '{c}'")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != ns.len() {
            return Err(Error::LengthMismatch {
                expected: ns.len(),
                got: values.len(),
            });
        }
        out.push((name, values));
    }
    Ok((ns, out))
}

/// Least-squares slope of `log y` against `log n`.
pub fn log_log_slope(ns: &[usize], ys: &[f64]) -> Result<f64> {
    if ns.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: ns.len(),
            got: ys.len(),
        });
    }
    if ns.len() < 2 || ys.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::InvalidInput(
            "need two or more positive values".into(),
        ));
    }
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (mx, my) = (mean(lx.iter().copied()), mean(ly.iter().copied()));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::GridValues;

    // Closed-form CDF of max(0, 0.05 - ((w - c) / s)^2) / s, normalized.
    fn shape_cdf(w: f64, c: f64, s: f64) -> f64 {
        let a = base_half_width();
        let z = ((w - c) / (s * a)).clamp(-1.0, 1.0);
        0.5 + 0.75 * (z - z * z * z / 3.0)
    }

    #[test]
    fn curve_inverts_the_shape_cdf() {
        let (c, s) = (0.5, (0.1f64 / 0.05).sqrt());
        let q = shape_curve(c, s, 201).unwrap();
        assert!((q.median() - c).abs() < 1e-12);
        for i in 1..20 {
            let t = i as f64 / 20.0;
            // Bisection on the CDF.
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if shape_cdf(mid, c, s) < t {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((q.eval(t) - lo).abs() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn truth_at_zero_is_base_shape() {
        let q = true_1d(0.0, 201).unwrap();
        let a = base_half_width();
        assert!((q.median() - 0.4).abs() < 1e-12);
        assert!((q.values()[0] - (0.4 - a)).abs() < 1e-12);
        assert!((q.values()[200] - (0.4 + a)).abs() < 1e-12);
        assert!(true_1d(1.6, 201).is_err());
    }

    #[test]
    fn truth_distance_between_ends() {
        // W2^2 of two location-scale members: shift^2 + (s1 - s0)^2 E[(a u)^2],
        // with E[u^2] = 1/5 for the parabolic shape.
        let d = w2_1d(&true_1d(0.0, 2001).unwrap(), &true_1d(1.0, 2001).unwrap()).unwrap();
        let ds = 1.02f64.sqrt() - 1.0;
        let want = 0.04 + ds * ds * 0.05 / 5.0;
        assert!((d - want).abs() < 1e-6, "{d} vs {want}");
    }

    #[test]
    fn quadrature_layout() {
        let qi = Region::Interpolation.quadrature(21).unwrap();
        assert_eq!(qi.points().len(), 21);
        assert!((qi.integrate(&[1.0; 21]).unwrap() - 1.0).abs() < 1e-14);
        let qe = Region::Extrapolation.quadrature(21).unwrap();
        assert_eq!(qe.points().len(), 22);
        assert!((qe.integrate(&[2.0; 22]).unwrap() - 2.0).abs() < 1e-14);
        assert!(qe.integrate(&[1.0; 21]).is_err());
    }

    #[test]
    fn perfect_fit_scores_zero() {
        let q = Region::Extrapolation.quadrature(21).unwrap();
        let path: Vec<QuantileCurve> = q
            .points()
            .iter()
            .map(|&x| true_1d(x, 101).unwrap())
            .collect();
        assert_eq!(emiwe(&[path.clone(), path], &q).unwrap(), 0.0);
    }

    #[test]
    fn generation_is_reproducible_per_run() {
        let cfg = SimConfig1d::new(20, 1, 9);
        let a = generate_1d(&cfg, 3).unwrap();
        let b = generate_1d(&cfg, 3).unwrap();
        let c = generate_1d(&cfg, 4).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.responses, b.responses);
        assert_ne!(a.x, c.x);
        assert!(generate_1d(&SimConfig1d::new(9, 1, 0), 0).is_err());
    }

    #[test]
    fn run_metrics_are_small_and_ordered() {
        let cfg = SimConfig1d::new(100, 1, 1);
        let r = run_1d(&cfg, 0).unwrap();
        assert!(r.global_interpolation < 2e-3);
        assert!(r.global_extrapolation > r.global_interpolation);
        assert_eq!(r, run_1d(&cfg, 0).unwrap());
    }

    #[test]
    fn truth_2d_moments() {
        let spec = GridSpec::cube(2, 0.0, 1.0, 51).unwrap();
        let m = true_2d(0.5, &spec, ResponseFamily::Gaussian).unwrap();
        let mean = m.mean();
        assert!((mean[0] - 0.5).abs() < 1e-9 && (mean[1] - 0.5).abs() < 1e-9);
        // Principal axes on the diagonals: var along (1, -1) is l1, along
        // (1, 1) is l2.
        let c = m.covariance();
        let (sxx, sxy, syy) = (c[0], c[1], c[3]);
        let along_anti = 0.5 * (sxx - 2.0 * sxy + syy);
        let along_diag = 0.5 * (sxx + 2.0 * sxy + syy);
        assert!((along_anti - 0.0125).abs() < 5e-4, "{along_anti}");
        assert!((along_diag - 0.0075).abs() < 5e-4, "{along_diag}");
        assert!((sxx - syy).abs() < 1e-12);
    }

    #[test]
    fn generation_2d_reproducible() {
        let mut cfg = SimConfig2d::new(10, 1, 4);
        cfg.grid = 21;
        let a = generate_2d(&cfg, 0).unwrap();
        let b = generate_2d(&cfg, 0).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.responses, b.responses);
        assert_eq!(a.responses[0].spec().len(), 441);
        cfg.family = ResponseFamily::StudentT;
        assert!(generate_2d(&cfg, 0).is_ok());
        cfg.lambda = 5.0;
        assert!(generate_2d(&cfg, 0).is_err());
    }

    #[test]
    fn emise_of_truth_is_the_floor() {
        let mut cfg = SimConfig2d::new(10, 1, 0);
        cfg.grid = 21;
        cfg.points_per_unit = 5;
        let q = Region::Interpolation.quadrature(5).unwrap();
        let truth = truth_path_2d(&cfg, Region::Interpolation).unwrap();
        let floor = sinkhorn_floor(&truth, &q, &cfg.metric()).unwrap();
        assert!(floor > 0.0);
        let e = emise(&[truth.clone()], &truth, &q, &cfg.metric()).unwrap();
        assert_eq!(e, floor);
    }

    #[test]
    fn table_roundtrip() {
        let rows = vec![
            TableRow {
                n: 50,
                global_extrapolation: Some(2e-3),
                global_interpolation: 5e-4,
                local_interpolation: None,
                floor: None,
            },
            TableRow {
                n: 100,
                global_extrapolation: Some(1e-3),
                global_interpolation: 2.5e-4,
                local_interpolation: None,
                floor: None,
            },
        ];
        let text = table_csv(&rows);
        assert_eq!(text.lines().count(), 3);
        let (ns, body) = parse_table_csv(&text).unwrap();
        assert_eq!(ns, vec![50, 100]);
        assert_eq!(
            body[1],
            (
                "global_interpolation".to_string(),
                vec![Some(5e-4), Some(2.5e-4)]
            )
        );
    }

    #[test]
    fn slope_of_power_law() {
        let ns = [50, 100, 150, 200];
        let ys: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.85)).collect();
        assert!((log_log_slope(&ns, &ys).unwrap() + 0.85).abs() < 1e-12);
    }
}
