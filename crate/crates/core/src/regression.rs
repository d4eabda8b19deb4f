//! Conditional Wasserstein barycenter estimators and two-point geodesics.

use crate::error::{Error, Result};
use crate::frechet::{global_weights, local_weights, KernelSpec, PredictorSample};
use crate::measures::{CostMatrix, DiscreteMeasure, GridValues};
use crate::ot1d::{
    monotone_plan, w2_1d, w2_discrete_1d, weighted_quantile_barycenter, QuantileCurve,
};
use crate::sinkhorn::kernel::Kernel;
use crate::sinkhorn::{
    exact_transport, sinkhorn_divergence, solve_scalings, weighted_sinkhorn_barycenter_warm,
    SinkhornSettings, WarmStart, EXACT_SIZE_CAP,
};

/// Weight recipe.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Global,
    Local(KernelSpec),
}

/// Barycenter solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    /// Quantile averaging with monotone projection (one-dimensional only).
    Exact1d,
    Sinkhorn(SinkhornSettings),
}

/// Distributional responses sharing one representation.
#[derive(Debug, Clone)]
pub enum Responses {
    Quantiles(Vec<QuantileCurve>),
    Grid(Vec<DiscreteMeasure>),
}

impl Responses {
    pub fn len(&self) -> usize {
        match self {
            Self::Quantiles(c) => c.len(),
            Self::Grid(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A predicted conditional barycenter.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Quantile(QuantileCurve),
    Measure(DiscreteMeasure),
}

impl Prediction {
    pub fn as_quantile(&self) -> Option<&QuantileCurve> {
        match self {
            Self::Quantile(q) => Some(q),
            Self::Measure(_) => None,
        }
    }

    pub fn as_measure(&self) -> Option<&DiscreteMeasure> {
        match self {
            Self::Measure(m) => Some(m),
            Self::Quantile(_) => None,
        }
    }
}

/// Predictors, responses, weight recipe and solver.
#[derive(Debug, Clone)]
pub struct FittedModel {
    sample: PredictorSample,
    responses: Responses,
    mode: Mode,
    solver: Solver,
    domain: Option<(Vec<f64>, Vec<f64>)>,
}

impl FittedModel {
    pub fn new(
        sample: PredictorSample,
        responses: Responses,
        mode: Mode,
        solver: Solver,
    ) -> Result<Self> {
        if responses.len() != sample.n() {
            return Err(Error::LengthMismatch {
                expected: sample.n(),
                got: responses.len(),
            });
        }
        match &responses {
            Responses::Quantiles(c) => {
                let p = c[0].len();
                if let Some(bad) = c.iter().find(|q| q.len() != p) {
                    return Err(Error::LengthMismatch {
                        expected: p,
                        got: bad.len(),
                    });
                }
                if matches!(solver, Solver::Sinkhorn(_)) {
                    return Err(Error::InvalidInput(
                        "the sinkhorn solver needs responses on a grid".into(),
                    ));
                }
            }
            Responses::Grid(m) => {
                let spec = m[0].spec();
                if m.iter().any(|r| r.spec() != spec) {
                    return Err(Error::GridMismatch);
                }
                if solver == Solver::Exact1d {
                    return Err(Error::InvalidInput(
                        "the exact solver needs quantile-curve responses".into(),
                    ));
                }
            }
        }
        if let (Mode::Local(k), q) = (&mode, sample.q()) {
            if k.bandwidth().len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: k.bandwidth().len(),
                });
            }
        }
        Ok(Self {
            sample,
            responses,
            mode,
            solver,
            domain: None,
        })
    }

    /// Declares the predictor domain (per-axis bounds) within which local
    /// fits count as interpolation. Defaults to the bounding box of the
    /// design.
    pub fn with_domain(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let q = self.sample.q();
        for v in [&lower, &upper] {
            if v.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: v.len(),
                });
            }
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidInput("domain bounds are not ordered".into()));
        }
        self.domain = Some((lower, upper));
        Ok(self)
    }

    pub fn sample(&self) -> &PredictorSample {
        &self.sample
    }

    pub fn responses(&self) -> &Responses {
        &self.responses
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn solver(&self) -> Solver {
        self.solver
    }

    /// Regression weights at `x`. Local mode rejects `x` outside the
    /// predictor domain.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.mode {
            Mode::Global => global_weights(&self.sample, x),
            Mode::Local(k) => {
                let (lo, hi) = match &self.domain {
                    Some(d) => d.clone(),
                    None => self.sample.bounding_box(),
                };
                if x.len() == lo.len()
                    && x.iter()
                        .zip(lo.iter().zip(&hi))
                        .any(|(v, (l, h))| v < l || v > h)
                {
                    return Err(Error::LocalExtrapolation { x: x.to_vec() });
                }
                local_weights(&self.sample, x, k)
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(self.predict_warm(x, None)?.0)
    }

    /// Prediction at `x`, reusing solver state from an earlier call on this
    /// model when given. Returns the state for the next call.
    pub fn predict_warm(
        &self,
        x: &[f64],
        warm: Option<&WarmStart>,
    ) -> Result<(Prediction, Option<WarmStart>)> {
        let w = self.weights(x)?;
        match (&self.responses, self.solver) {
            (Responses::Quantiles(c), Solver::Exact1d) => Ok((
                Prediction::Quantile(weighted_quantile_barycenter(c, &w)?),
                None,
            )),
            (Responses::Grid(m), Solver::Sinkhorn(s)) => {
                let b = weighted_sinkhorn_barycenter_warm(m, &w, &s, warm)?;
                Ok((Prediction::Measure(b.measure), Some(b.warm)))
            }
            _ => unreachable!("checked at construction"),
        }
    }

    /// Elementwise [`Self::predict`]; the first failure aborts with its index.
    pub fn predict_path(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        xs.iter()
            .enumerate()
            .map(|(index, x)| {
                self.predict(x).map_err(|e| Error::PathPoint {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Like [`Self::predict_path`], carrying solver state from one point to
    /// the next. Results agree with independent solves up to the solver
    /// tolerance.
    pub fn predict_path_warm(&self, xs: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        let mut warm: Option<WarmStart> = None;
        let mut out = Vec::with_capacity(xs.len());
        for (index, x) in xs.iter().enumerate() {
            let (p, w) = self
                .predict_warm(x, warm.as_ref())
                .map_err(|e| Error::PathPoint {
                    index,
                    source: Box::new(e),
                })?;
            warm = w;
            out.push(p);
        }
        Ok(out)
    }
}

/// Source of the coupling used for displacement interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coupling {
    /// Exact plan when both supports fit the exact solver, otherwise the
    /// entropic plan with these settings.
    Auto(SinkhornSettings),
    Exact,
    Sinkhorn(SinkhornSettings),
}

const NEGLIGIBLE_MASS: f64 = 1e-12;

/// McCann interpolant `((1 - t) id + t T)_# nu0` along a transport plan.
///
/// Each plan atom `(d_k -> d_l, S_kl)` moves to `(1 - t) d_k + t d_l` and
/// is spread over the surrounding grid nodes with multilinear weights.
/// Values of `t` outside `[0, 1]` extend the geodesic; an atom leaving the
/// grid rectangle is an error unless its mass is negligible.
pub fn mccann_interpolate(
    nu0: &DiscreteMeasure,
    nu1: &DiscreteMeasure,
    t: f64,
    coupling: Coupling,
) -> Result<DiscreteMeasure> {
    mccann_path(nu0, nu1, &[t], coupling)?
        .pop()
        .ok_or(Error::Empty("interpolation times"))
}

/// [`mccann_interpolate`] at several times, sharing one plan.
pub fn mccann_path(
    nu0: &DiscreteMeasure,
    nu1: &DiscreteMeasure,
    ts: &[f64],
    coupling: Coupling,
) -> Result<Vec<DiscreteMeasure>> {
    if nu0.spec() != nu1.spec() {
        return Err(Error::GridMismatch);
    }
    if ts.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(
            "interpolation times must be finite".into(),
        ));
    }
    let spec = nu0.spec();
    let atoms = plan_atoms(nu0, nu1, coupling)?;
    let pts = spec.points();
    let tol: Vec<f64> = spec
        .axes()
        .iter()
        .map(|a| 1e-9 * (a.upper - a.lower))
        .collect();
    let mut out = Vec::with_capacity(ts.len());
    let mut p = vec![0.0; spec.dim()];
    for &t in ts {
        let mut mass = vec![0.0; spec.len()];
        for &(k, l, s) in &atoms {
            for a in 0..p.len() {
                p[a] = (1.0 - t) * pts[k][a] + t * pts[l][a];
            }
            let inside = spec
                .axes()
                .iter()
                .zip(&p)
                .zip(&tol)
                .all(|((ax, &x), &e)| x >= ax.lower - e && x <= ax.upper + e);
            if !inside {
                if s > NEGLIGIBLE_MASS {
                    return Err(Error::DomainExit { t });
                }
                continue;
            }
            spec.deposit(&p, s, &mut mass);
        }
        out.push(DiscreteMeasure::new(spec.clone(), mass)?);
    }
    Ok(out)
}

fn support_len(m: &DiscreteMeasure) -> usize {
    m.mass().iter().filter(|x| **x > 0.0).count()
}

// Nonzero plan entries (k, l, mass).
fn plan_atoms(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    coupling: Coupling,
) -> Result<Vec<(usize, usize, f64)>> {
    // On the line the monotone coupling is exact at any size.
    let line = a.spec().dim() == 1;
    let small = line || support_len(a).max(support_len(b)) <= EXACT_SIZE_CAP;
    let settings = match coupling {
        Coupling::Exact => None,
        Coupling::Auto(_) if small => None,
        Coupling::Auto(s) | Coupling::Sinkhorn(s) => Some(s),
    };
    match settings {
        None if line => Ok(monotone_plan(a.mass(), b.mass())),
        None => {
            let d = support_cost(a, b);
            let (plan, _) = exact_transport(&d.0, &d.1, &d.2)?;
            Ok(plan.atoms().map(|(i, j, s)| (d.3[i], d.4[j], s)).collect())
        }
        Some(s) => {
            let spec = a.spec();
            let k = s.kernel(spec);
            let sc = solve_scalings(&k, a.mass(), b.mass(), &s)?;
            let rows: Vec<usize> = (0..spec.len()).filter(|&i| a.mass()[i] > 0.0).collect();
            let cols: Vec<usize> = (0..spec.len()).filter(|&j| b.mass()[j] > 0.0).collect();
            let mut atoms = Vec::new();
            for &i in &rows {
                for &j in &cols {
                    let (lk, _) = k.entry(i, j);
                    let s = if sc.log {
                        (sc.u[i] + lk + sc.v[j]).exp()
                    } else {
                        sc.u[i] * lk.exp() * sc.v[j]
                    };
                    if s > 0.0 {
                        atoms.push((i, j, s));
                    }
                }
            }
            Ok(atoms)
        }
    }
}

type SupportProblem = (Vec<f64>, Vec<f64>, CostMatrix, Vec<usize>, Vec<usize>);

// Restriction of the transport problem to the two supports.
fn support_cost(a: &DiscreteMeasure, b: &DiscreteMeasure) -> SupportProblem {
    let spec = a.spec();
    let rows: Vec<usize> = (0..spec.len()).filter(|&i| a.mass()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..spec.len()).filter(|&j| b.mass()[j] > 0.0).collect();
    let pa: Vec<Vec<f64>> = rows.iter().map(|&i| spec.point(i)).collect();
    let pb: Vec<Vec<f64>> = cols.iter().map(|&j| spec.point(j)).collect();
    let cost = CostMatrix::from_points(&pa, &pb);
    (
        rows.iter().map(|&i| a.mass()[i]).collect(),
        cols.iter().map(|&j| b.mass()[j]).collect(),
        cost,
        rows,
        cols,
    )
}

/// Distance used by [`geodesic_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathMetric {
    /// Exact `W_2`: closed form on the line, linear program otherwise.
    Exact,
    /// Square root of the Sinkhorn divergence.
    Sinkhorn(SinkhornSettings),
}

/// Exact squared `W_2` between two measures on one grid.
pub fn exact_w2_squared(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    if a.spec().dim() == 1 {
        return w2_discrete_1d(a, b);
    }
    let d = support_cost(a, b);
    Ok(exact_transport(&d.0, &d.1, &d.2)?.1)
}

fn deviation(ts: &[f64], mut dist: impl FnMut(usize, usize) -> Result<f64>) -> Result<f64> {
    let n = ts.len();
    if n < 3 {
        return Err(Error::InvalidInput("a path needs at least 3 points".into()));
    }
    let span = (ts[n - 1] - ts[0]).abs();
    let total = dist(0, n - 1)?;
    if !(total > 1e-14) || span == 0.0 {
        return Err(Error::DegeneratePath);
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let expected = (ts[i] - ts[j]).abs() / span * total;
            worst = worst.max((dist(i, j)? - expected).abs() / total);
        }
    }
    Ok(worst)
}

/// Largest relative departure from constant speed,
/// `max_ij |d(nu_i, nu_j) - |t_i - t_j| d(first, last) / |t_last - t_first|| / d(first, last)`.
pub fn geodesic_check(path: &[DiscreteMeasure], ts: &[f64], metric: PathMetric) -> Result<f64> {
    if path.len() != ts.len() {
        return Err(Error::LengthMismatch {
            expected: ts.len(),
            got: path.len(),
        });
    }
    deviation(ts, |i, j| {
        let sq = match metric {
            PathMetric::Exact => exact_w2_squared(&path[i], &path[j])?,
            PathMetric::Sinkhorn(s) => sinkhorn_divergence(&path[i], &path[j], &s)?,
        };
        Ok(sq.max(0.0).sqrt())
    })
}

/// [`geodesic_check`] for one-dimensional paths given as quantile curves.
pub fn geodesic_check_curves(path: &[QuantileCurve], ts: &[f64]) -> Result<f64> {
    if path.len() != ts.len() {
        return Err(Error::LengthMismatch {
            expected: ts.len(),
            got: path.len(),
        });
    }
    deviation(ts, |i, j| Ok(w2_1d(&path[i], &path[j])?.sqrt()))
}
