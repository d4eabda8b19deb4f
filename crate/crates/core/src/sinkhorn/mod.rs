//! Entropy-regularized optimal transport between discrete measures.
//!
//! The regularized problem is
//! `min_S <S, D> + (1/lambda) sum_kl S_kl log S_kl` over couplings with the
//! prescribed marginals. Its solution has the form
//! `S = diag(u) K diag(v)` with `K = exp(-lambda D)`, and `u`, `v` are found
//! by alternating scaling. The reported divergence is the transport cost
//! `<S, D>` of the regularized plan, in physical units.

mod barycenter;
mod exact;
pub mod kernel;

use std::sync::atomic::{AtomicU64, Ordering};

pub use barycenter::{
    weighted_sinkhorn_barycenter, weighted_sinkhorn_barycenter_warm, Barycenter, WarmStart,
};
pub use exact::{exact_transport, exact_w2_discrete, EXACT_SIZE_CAP};

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, DiscreteMeasure, GridSpec, GridValues, TransportPlan};
use kernel::{DenseKernel, Kernel, SeparableKernel};

/// Unit in which `lambda` multiplies the squared-distance cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostUnits {
    /// Costs are divided by the squared grid step before the kernel is
    /// formed, so a given `lambda` behaves the same on every grid.
    #[default]
    GridCell,
    /// Costs enter the kernel as they are.
    Physical,
}

/// Whether the solver may iterate on log-scalings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogDomain {
    /// Start with linear scalings and switch on underflow.
    #[default]
    Auto,
    /// Always iterate in log space.
    Always,
    /// Fail with [`Error::Underflow`] instead of switching.
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornSettings {
    pub lambda: f64,
    pub max_iters: usize,
    /// Sup-norm threshold on the marginal violation (plans) or the L1
    /// change between iterates (barycenters).
    pub tolerance: f64,
    pub log_domain: LogDomain,
    pub units: CostUnits,
}

impl Default for SinkhornSettings {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            max_iters: 10_000,
            tolerance: 1e-6,
            log_domain: LogDomain::Auto,
            units: CostUnits::GridCell,
        }
    }
}

impl SinkhornSettings {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn physical(mut self) -> Self {
        self.units = CostUnits::Physical;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        Ok(())
    }

    /// Divisor applied to grid costs before multiplying by `lambda`.
    pub fn grid_scale(&self, spec: &GridSpec) -> f64 {
        match self.units {
            CostUnits::Physical => 1.0,
            CostUnits::GridCell => spec
                .axes()
                .iter()
                .map(|a| a.step() * a.step())
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn dense_scale(&self, cost: &CostMatrix) -> f64 {
        match self.units {
            CostUnits::Physical => 1.0,
            CostUnits::GridCell => {
                let min = cost
                    .entries()
                    .iter()
                    .copied()
                    .filter(|c| *c > 0.0)
                    .fold(f64::INFINITY, f64::min);
                if min.is_finite() {
                    min
                } else {
                    1.0
                }
            }
        }
    }

    pub fn kernel(&self, spec: &GridSpec) -> SeparableKernel {
        SeparableKernel::new(spec, self.lambda, self.grid_scale(spec))
    }
}

// Largest marginal violation seen on a converged call, for auditing.
static MAX_VIOLATION_BITS: AtomicU64 = AtomicU64::new(0);
static CONVERGED_CALLS: AtomicU64 = AtomicU64::new(0);

fn record_violation(v: f64) {
    CONVERGED_CALLS.fetch_add(1, Ordering::Relaxed);
    let mut cur = MAX_VIOLATION_BITS.load(Ordering::Relaxed);
    while f64::from_bits(cur) < v {
        match MAX_VIOLATION_BITS.compare_exchange_weak(
            cur,
            v.to_bits(),
            Ordering::Relaxed,
            Ordering::Relaxed,
        ) {
            Ok(_) => break,
            Err(x) => cur = x,
        }
    }
}

/// Number of converged plan solves in this process and the largest final
/// marginal violation among them.
pub fn violation_audit() -> (u64, f64) {
    (
        CONVERGED_CALLS.load(Ordering::Relaxed),
        f64::from_bits(MAX_VIOLATION_BITS.load(Ordering::Relaxed)),
    )
}

/// Converged scalings. In log mode `u` and `v` hold `log u` and `log v`.
#[derive(Debug, Clone)]
pub struct Scalings {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub log: bool,
    pub iterations: usize,
    pub violation: f64,
}

/// Result of a plan solve.
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    /// Transport cost `<S, D>` of the regularized plan.
    pub divergence: f64,
    pub iterations: usize,
    pub violation: f64,
    pub log_domain: bool,
}

enum Outcome {
    Done(Scalings),
    Underflow,
}

fn check_marginals(a: &[f64], b: &[f64]) -> Result<()> {
    for m in [a, b] {
        if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(
                "masses must be finite and nonnegative".into(),
            ));
        }
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if sa <= 0.0 || (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return Err(Error::InvalidInput(format!(
            "marginals must carry equal positive mass ({sa} vs {sb})"
        )));
    }
    Ok(())
}

fn solve_linear<K: Kernel>(k: &K, a: &[f64], b: &[f64], s: &SinkhornSettings) -> Result<Outcome> {
    let mut u: Vec<f64> = a.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut v: Vec<f64> = b.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut kv = vec![0.0; k.rows()];
    let mut ktu = vec![0.0; k.cols()];
    let mut violation = f64::INFINITY;
    for it in 0..=s.max_iters {
        k.apply(&v, &mut kv);
        if it > 0 {
            violation = u
                .iter()
                .zip(&kv)
                .zip(a)
                .map(|((u, kv), a)| (u * kv - a).abs())
                .fold(0.0, f64::max);
            if !violation.is_finite() {
                return Ok(Outcome::Underflow);
            }
            if violation < s.tolerance {
                return Ok(Outcome::Done(Scalings {
                    u,
                    v,
                    log: false,
                    iterations: it,
                    violation,
                }));
            }
        }
        if it == s.max_iters {
            break;
        }
        for ((uk, &ak), &kvk) in u.iter_mut().zip(a).zip(&kv) {
            if ak > 0.0 {
                if !(kvk > 0.0) {
                    return Ok(Outcome::Underflow);
                }
                *uk = ak / kvk;
                if !uk.is_finite() {
                    return Ok(Outcome::Underflow);
                }
            }
        }
        k.apply_t(&u, &mut ktu);
        for ((vl, &bl), &kl) in v.iter_mut().zip(b).zip(&ktu) {
            if bl > 0.0 {
                if !(kl > 0.0) {
                    return Ok(Outcome::Underflow);
                }
                *vl = bl / kl;
                if !vl.is_finite() {
                    return Ok(Outcome::Underflow);
                }
            }
        }
    }
    Err(Error::NotConverged {
        iterations: s.max_iters,
        violation,
    })
}

fn ln_mass(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn solve_log<K: Kernel>(k: &K, a: &[f64], b: &[f64], s: &SinkhornSettings) -> Result<Scalings> {
    let la: Vec<f64> = a.iter().map(|&x| ln_mass(x)).collect();
    let lb: Vec<f64> = b.iter().map(|&x| ln_mass(x)).collect();
    let mut f: Vec<f64> = la
        .iter()
        .map(|&x| if x > f64::NEG_INFINITY { 0.0 } else { x })
        .collect();
    let mut g: Vec<f64> = lb
        .iter()
        .map(|&x| if x > f64::NEG_INFINITY { 0.0 } else { x })
        .collect();
    let mut kg = vec![0.0; k.rows()];
    let mut kf = vec![0.0; k.cols()];
    let mut violation = f64::INFINITY;
    for it in 0..=s.max_iters {
        k.apply_log(&g, &mut kg);
        if it > 0 {
            violation = f
                .iter()
                .zip(&kg)
                .zip(a)
                .map(|((f, h), a)| {
                    let e = f + h;
                    let row = if e > f64::NEG_INFINITY { e.exp() } else { 0.0 };
                    (row - a).abs()
                })
                .fold(0.0, f64::max);
            if violation < s.tolerance {
                return Ok(Scalings {
                    u: f,
                    v: g,
                    log: true,
                    iterations: it,
                    violation,
                });
            }
        }
        if it == s.max_iters {
            break;
        }
        for ((fk, &lak), &h) in f.iter_mut().zip(&la).zip(&kg) {
            if lak > f64::NEG_INFINITY {
                *fk = lak - h;
            }
        }
        k.apply_t_log(&f, &mut kf);
        for ((gl, &lbl), &h) in g.iter_mut().zip(&lb).zip(&kf) {
            if lbl > f64::NEG_INFINITY {
                *gl = lbl - h;
            }
        }
    }
    Err(Error::NotConverged {
        iterations: s.max_iters,
        violation,
    })
}

/// Runs the scaling iterations, switching to log space if linear scalings
/// underflow and the settings allow it.
pub fn solve_scalings<K: Kernel>(
    k: &K,
    a: &[f64],
    b: &[f64],
    s: &SinkhornSettings,
) -> Result<Scalings> {
    s.validate()?;
    check_marginals(a, b)?;
    let out = match s.log_domain {
        LogDomain::Always => solve_log(k, a, b, s)?,
        mode => match solve_linear(k, a, b, s)? {
            Outcome::Done(sc) => sc,
            Outcome::Underflow if mode == LogDomain::Auto => {
                log::debug!(
                    "linear sinkhorn underflowed at lambda = {}; using log domain",
                    s.lambda
                );
                solve_log(k, a, b, s)?
            }
            Outcome::Underflow => return Err(Error::Underflow { lambda: s.lambda }),
        },
    };
    record_violation(out.violation);
    Ok(out)
}

fn cost_of<K: Kernel>(k: &K, sc: &Scalings) -> f64 {
    if sc.log {
        k.transport_cost_log(&sc.u, &sc.v)
    } else {
        k.transport_cost(&sc.u, &sc.v)
    }
}

fn materialize<K: Kernel>(k: &K, sc: &Scalings) -> Result<TransportPlan> {
    let (rows, cols) = (k.rows(), k.cols());
    let mut entries = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (lk, _) = k.entry(r, c);
            entries[r * cols + c] = if sc.log {
                let e = sc.u[r] + sc.v[c] + lk;
                if e > f64::NEG_INFINITY {
                    e.exp()
                } else {
                    0.0
                }
            } else {
                sc.u[r] * lk.exp() * sc.v[c]
            };
        }
    }
    TransportPlan::from_entries(rows, cols, entries)
}

fn solution<K: Kernel>(k: &K, sc: Scalings) -> Result<SinkhornSolution> {
    let plan = materialize(k, &sc)?;
    Ok(SinkhornSolution {
        divergence: cost_of(k, &sc),
        plan,
        iterations: sc.iterations,
        violation: sc.violation,
        log_domain: sc.log,
    })
}

/// Regularized plan between two mass vectors for an arbitrary cost matrix.
pub fn sinkhorn_plan(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    s: &SinkhornSettings,
) -> Result<SinkhornSolution> {
    if a.len() != cost.rows() || b.len() != cost.cols() {
        return Err(Error::LengthMismatch {
            expected: cost.rows() * cost.cols(),
            got: a.len() * b.len(),
        });
    }
    let k = DenseKernel::new(cost, s.lambda, s.dense_scale(cost));
    let sc = solve_scalings(&k, a, b, s)?;
    solution(&k, sc)
}

/// Regularized plan between two measures on the same grid, using the
/// separable kernel.
pub fn sinkhorn_plan_grid(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    s: &SinkhornSettings,
) -> Result<SinkhornSolution> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch);
    }
    let k = s.kernel(a.spec());
    let sc = solve_scalings(&k, a.mass(), b.mass(), s)?;
    solution(&k, sc)
}

/// Sinkhorn divergence `<S_lambda, D>` between two measures on one grid,
/// without forming the plan.
pub fn sinkhorn_divergence(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    s: &SinkhornSettings,
) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch);
    }
    let k = s.kernel(a.spec());
    sinkhorn_divergence_with(&k, a.mass(), b.mass(), s)
}

/// Same as [`sinkhorn_divergence`] with a prebuilt kernel.
pub fn sinkhorn_divergence_with<K: Kernel>(
    k: &K,
    a: &[f64],
    b: &[f64],
    s: &SinkhornSettings,
) -> Result<f64> {
    let sc = solve_scalings(k, a, b, s)?;
    Ok(cost_of(k, &sc))
}
