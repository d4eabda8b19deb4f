//! Weighted entropic barycenters by iterative Bregman projections.
//!
//! Each measure `r_i` keeps a scaling `v_i`. One sweep computes
//! `u_i = r_i / (K v_i)`, forms the barycenter as the weighted geometric
//! mean `b = prod_i (K' u_i)^(w_i / n)` and resets `v_i = b / (K' u_i)`.
//! Negative weights enter the geometric mean with their sign; the mean is
//! formed in log space and shifted by its maximum before exponentiation.
//!
//! Measures are processed in a canonical order (by weight, then by mass
//! vector), so permuting the inputs does not change a single bit of the
//! output.

use std::cmp::Ordering;

use super::kernel::{Kernel, SeparableKernel};
use super::{LogDomain, SinkhornSettings};
use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, GridValues};
use crate::ot1d::check_weight_sum;

/// Consecutive increases of the iterate change that count as divergence.
const DIVERGENCE_STREAK: usize = 10;
/// Increases below this L1 change are slow transients, not divergence.
const DIVERGENCE_FLOOR: f64 = 1e-3;

/// Per-measure log-scalings from a previous solve, indexed like its inputs.
#[derive(Debug, Clone)]
pub struct WarmStart {
    log_v: Vec<Vec<f64>>,
}

impl WarmStart {
    pub fn len(&self) -> usize {
        self.log_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_v.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Barycenter {
    pub measure: DiscreteMeasure,
    pub iterations: usize,
    pub converged: bool,
    pub log_domain: bool,
    pub warm: WarmStart,
}

enum Sweep {
    Done(Vec<f64>, usize, bool),
    Underflow,
}

struct Problem<'a> {
    kernel: SeparableKernel,
    masses: Vec<&'a [f64]>,
    weights: Vec<f64>,
    m: usize,
}

/// Weighted barycenter `argmin_r sum_i w_i W_{2,lambda}^2(r_i, r)` on the
/// common grid of `measures`.
pub fn weighted_sinkhorn_barycenter(
    measures: &[DiscreteMeasure],
    weights: &[f64],
    s: &SinkhornSettings,
) -> Result<DiscreteMeasure> {
    Ok(weighted_sinkhorn_barycenter_warm(measures, weights, s, None)?.measure)
}

/// Same as [`weighted_sinkhorn_barycenter`], optionally starting from the
/// scalings of an earlier solve on the same measures.
pub fn weighted_sinkhorn_barycenter_warm(
    measures: &[DiscreteMeasure],
    weights: &[f64],
    s: &SinkhornSettings,
    warm: Option<&WarmStart>,
) -> Result<Barycenter> {
    s.validate()?;
    if measures.is_empty() {
        return Err(Error::Empty("measures"));
    }
    if weights.len() != measures.len() {
        return Err(Error::LengthMismatch {
            expected: measures.len(),
            got: weights.len(),
        });
    }
    check_weight_sum(weights)?;
    if !weights.iter().any(|w| *w > 0.0) {
        return Err(Error::InvalidInput(
            "at least one weight must be positive".into(),
        ));
    }
    let spec = measures[0].spec();
    if measures.iter().any(|r| r.spec() != spec) {
        return Err(Error::GridMismatch);
    }
    let m = spec.len();
    if let Some(w) = warm {
        if w.len() != measures.len() || w.log_v.iter().any(|v| v.len() != m) {
            return Err(Error::InvalidInput(
                "warm start does not match the inputs".into(),
            ));
        }
    }

    let n = measures.len() as f64;
    let order = canonical_order(measures, weights);
    let prob = Problem {
        kernel: s.kernel(spec),
        masses: order.iter().map(|&i| measures[i].mass()).collect(),
        weights: order.iter().map(|&i| weights[i] / n).collect(),
        m,
    };
    let mut log_v: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| match warm {
            Some(w) => w.log_v[i].clone(),
            None => vec![0.0; m],
        })
        .collect();

    let (b, iterations, converged, log_domain) = match s.log_domain {
        LogDomain::Always => {
            let (b, it, c) = sweep_log(&prob, &mut log_v, s)?;
            (b, it, c, true)
        }
        mode => {
            let mut v: Vec<Vec<f64>> = log_v
                .iter()
                .map(|g| g.iter().map(|x| x.exp()).collect())
                .collect();
            match sweep_linear(&prob, &mut v, s)? {
                Sweep::Done(b, it, c) => {
                    for (g, vi) in log_v.iter_mut().zip(&v) {
                        *g = vi.iter().map(|x| x.ln()).collect();
                    }
                    (b, it, c, false)
                }
                Sweep::Underflow if mode == LogDomain::Auto => {
                    log::debug!("barycenter scalings underflowed; using log domain");
                    let (b, it, c) = sweep_log(&prob, &mut log_v, s)?;
                    (b, it, c, true)
                }
                Sweep::Underflow => return Err(Error::Underflow { lambda: s.lambda }),
            }
        }
    };
    if !converged {
        log::warn!(
            "barycenter stopped at max_iters = {} without reaching tolerance {:e}",
            s.max_iters,
            s.tolerance
        );
    }

    let mut by_input = vec![Vec::new(); measures.len()];
    for (slot, g) in order.iter().zip(log_v) {
        by_input[*slot] = g;
    }
    Ok(Barycenter {
        measure: DiscreteMeasure::new(spec.clone(), b)?,
        iterations,
        converged,
        log_domain,
        warm: WarmStart { log_v: by_input },
    })
}

// Indices of the nonzero-weight measures, sorted by weight and then by mass.
fn canonical_order(measures: &[DiscreteMeasure], weights: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..measures.len()).filter(|&i| weights[i] != 0.0).collect();
    idx.sort_by(|&i, &j| {
        weights[i].total_cmp(&weights[j]).then_with(|| {
            measures[i]
                .mass()
                .iter()
                .zip(measures[j].mass())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    idx
}

struct Progress {
    prev: Option<Vec<f64>>,
    prev_change: f64,
    streak: usize,
}

impl Progress {
    fn new() -> Self {
        Self {
            prev: None,
            prev_change: f64::INFINITY,
            streak: 0,
        }
    }

    // Returns the L1 change, or an error after a run of increases.
    fn step(&mut self, b: &[f64], it: usize) -> Result<f64> {
        let change = match &self.prev {
            Some(p) => p.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            None => f64::INFINITY,
        };
        if change > self.prev_change && change > DIVERGENCE_FLOOR {
            self.streak += 1;
            if self.streak >= DIVERGENCE_STREAK {
                return Err(Error::BarycenterDiverged { iterations: it });
            }
        } else {
            self.streak = 0;
        }
        self.prev_change = change;
        self.prev = Some(b.to_vec());
        Ok(change)
    }
}

fn sweep_linear(p: &Problem, v: &mut [Vec<f64>], s: &SinkhornSettings) -> Result<Sweep> {
    let m = p.m;
    let k = p.kernel.rows();
    debug_assert_eq!(k, m);
    let mut kv = vec![0.0; m];
    let mut u = vec![0.0; m];
    let mut ktu: Vec<Vec<f64>> = vec![vec![0.0; m]; v.len()];
    let mut log_b = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut progress = Progress::new();
    for it in 1..=s.max_iters {
        for (i, r) in p.masses.iter().enumerate() {
            p.kernel.apply(&v[i], &mut kv);
            for l in 0..m {
                if r[l] > 0.0 {
                    if !(kv[l] > 0.0) {
                        return Ok(Sweep::Underflow);
                    }
                    u[l] = r[l] / kv[l];
                    if !u[l].is_finite() {
                        return Ok(Sweep::Underflow);
                    }
                } else {
                    u[l] = 0.0;
                }
            }
            p.kernel.apply_t(&u, &mut ktu[i]);
            if ktu[i].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Ok(Sweep::Underflow);
            }
        }
        log_b.iter_mut().for_each(|x| *x = 0.0);
        for (w, h) in p.weights.iter().zip(&ktu) {
            for (lb, x) in log_b.iter_mut().zip(h) {
                *lb += w * x.ln();
            }
        }
        if !normalize_log(&log_b, &mut b) {
            return Ok(Sweep::Underflow);
        }
        for (vi, h) in v.iter_mut().zip(&ktu) {
            for l in 0..m {
                vi[l] = b[l] / h[l];
            }
            if vi.iter().any(|x| !x.is_finite()) {
                return Ok(Sweep::Underflow);
            }
        }
        if progress.step(&b, it)? < s.tolerance {
            return Ok(Sweep::Done(b, it, true));
        }
    }
    Ok(Sweep::Done(b, s.max_iters, false))
}

// b = exp(log_b - max) / sum; false if nothing finite remains.
fn normalize_log(log_b: &[f64], b: &mut [f64]) -> bool {
    let max = log_b
        .iter()
        .copied()
        .filter(|x| !x.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    let mut total = 0.0;
    for (bl, &x) in b.iter_mut().zip(log_b) {
        *bl = if x.is_nan() { 0.0 } else { (x - max).exp() };
        total += *bl;
    }
    b.iter_mut().for_each(|x| *x /= total);
    total.is_finite() && total > 0.0
}

fn sweep_log(
    p: &Problem,
    g: &mut [Vec<f64>],
    s: &SinkhornSettings,
) -> Result<(Vec<f64>, usize, bool)> {
    let m = p.m;
    let ln_r: Vec<Vec<f64>> = p
        .masses
        .iter()
        .map(|r| {
            r.iter()
                .map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
                .collect()
        })
        .collect();
    let mut kg = vec![0.0; m];
    let mut f = vec![0.0; m];
    let mut h: Vec<Vec<f64>> = vec![vec![0.0; m]; g.len()];
    let mut log_b = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut progress = Progress::new();
    for it in 1..=s.max_iters {
        for i in 0..g.len() {
            p.kernel.apply_log(&g[i], &mut kg);
            for l in 0..m {
                f[l] = if ln_r[i][l] > f64::NEG_INFINITY {
                    ln_r[i][l] - kg[l]
                } else {
                    f64::NEG_INFINITY
                };
            }
            p.kernel.apply_t_log(&f, &mut h[i]);
        }
        log_b.iter_mut().for_each(|x| *x = 0.0);
        for (w, hi) in p.weights.iter().zip(&h) {
            for (lb, x) in log_b.iter_mut().zip(hi) {
                *lb += w * x;
            }
        }
        // A point no measure can reach carries no mass.
        for lb in log_b.iter_mut() {
            if !lb.is_finite() {
                *lb = f64::NEG_INFINITY;
            }
        }
        if !normalize_log(&log_b, &mut b) {
            return Err(Error::BarycenterDiverged { iterations: it });
        }
        let ln_b: Vec<f64> = b
            .iter()
            .map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
            .collect();
        for (gi, hi) in g.iter_mut().zip(&h) {
            for l in 0..m {
                gi[l] = if ln_b[l] > f64::NEG_INFINITY {
                    ln_b[l] - hi[l]
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        if progress.step(&b, it)? < s.tolerance {
            return Ok((b, it, true));
        }
    }
    Ok((b, s.max_iters, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize;
    use crate::measures::{DensityGrid, GridSpec};
    use crate::ot1d::{w2_curve_discrete, weighted_quantile_barycenter, QuantileCurve};

    fn gaussian_1d(spec: &GridSpec, mu: f64, sd: f64) -> DiscreteMeasure {
        discretize(
            &DensityGrid::from_fn(spec.clone(), |p| {
                (-(p[0] - mu).powi(2) / (2.0 * sd * sd)).exp()
            })
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_measure_returns_itself_up_to_blur() {
        let spec = GridSpec::line(0.0, 1.0, 11).unwrap();
        let r = gaussian_1d(&spec, 0.5, 0.25);
        let s = SinkhornSettings::with_lambda(1.0);
        let b = weighted_sinkhorn_barycenter(std::slice::from_ref(&r), &[1.0], &s).unwrap();
        assert!(b.l1_distance(&r) < 0.05, "{}", b.l1_distance(&r));
    }

    #[test]
    fn two_measures_match_quantile_barycenter() {
        let spec = GridSpec::line(0.0, 1.0, 101).unwrap();
        let a = gaussian_1d(&spec, 0.3, 0.05);
        let c = gaussian_1d(&spec, 0.7, 0.08);
        let s = SinkhornSettings::with_lambda(1.0);
        let b = weighted_sinkhorn_barycenter(&[a.clone(), c.clone()], &[1.0, 1.0], &s).unwrap();
        let qa = QuantileCurve::from_discrete(&a, 4001).unwrap();
        let qc = QuantileCurve::from_discrete(&c, 4001).unwrap();
        let q = weighted_quantile_barycenter(&[qa, qc], &[1.0, 1.0]).unwrap();
        let w2 = w2_curve_discrete(&q, &b).unwrap().sqrt();
        assert!(w2 <= 0.05, "W2 = {w2}");
    }

    #[test]
    fn two_gaussians_2d_mode_at_midpoint() {
        let spec = GridSpec::cube(2, 0.0, 1.0, 31).unwrap();
        let g = |mx: f64, my: f64| {
            discretize(
                &DensityGrid::from_fn(spec.clone(), |p| {
                    (-((p[0] - mx).powi(2) + (p[1] - my).powi(2)) / (2.0 * 0.006)).exp()
                })
                .unwrap(),
            )
            .unwrap()
        };
        let a = g(0.3, 0.4);
        let c = g(0.7, 0.6);
        let b =
            weighted_sinkhorn_barycenter(&[a, c], &[1.0, 1.0], &SinkhornSettings::with_lambda(0.4))
                .unwrap();
        let mode = spec.point(b.argmax());
        let h = spec.axes()[0].step();
        assert!(
            (mode[0] - 0.5).abs() <= h + 1e-12 && (mode[1] - 0.5).abs() <= h + 1e-12,
            "{mode:?}"
        );
    }

    #[test]
    fn permutation_is_bit_identical() {
        let spec = GridSpec::line(0.0, 1.0, 41).unwrap();
        let rs: Vec<DiscreteMeasure> = (0..4)
            .map(|i| gaussian_1d(&spec, 0.3 + 0.1 * i as f64, 0.06))
            .collect();
        let ws = [1.6, -0.2, 1.1, 1.5];
        let s = SinkhornSettings::with_lambda(0.5);
        let b1 = weighted_sinkhorn_barycenter(&rs, &ws, &s).unwrap();
        let perm = [2, 0, 3, 1];
        let rs2: Vec<DiscreteMeasure> = perm.iter().map(|&i| rs[i].clone()).collect();
        let ws2: Vec<f64> = perm.iter().map(|&i| ws[i]).collect();
        let b2 = weighted_sinkhorn_barycenter(&rs2, &ws2, &s).unwrap();
        assert_eq!(b1.mass(), b2.mass());
    }

    #[test]
    fn negative_weights_extrapolate_location() {
        // Weights (-1, 3) on locations 0.4, 0.5 put the mean at 0.55.
        let spec = GridSpec::line(0.0, 1.0, 101).unwrap();
        let a = gaussian_1d(&spec, 0.4, 0.05);
        let c = gaussian_1d(&spec, 0.5, 0.05);
        let b = weighted_sinkhorn_barycenter(
            &[a, c],
            &[-1.0, 3.0],
            &SinkhornSettings::with_lambda(1.0),
        )
        .unwrap();
        assert!((b.mean()[0] - 0.55).abs() < 0.01, "{}", b.mean()[0]);
    }

    #[test]
    fn warm_start_reaches_same_answer() {
        let spec = GridSpec::line(0.0, 1.0, 41).unwrap();
        let rs: Vec<DiscreteMeasure> = (0..3)
            .map(|i| gaussian_1d(&spec, 0.3 + 0.15 * i as f64, 0.07))
            .collect();
        let s = SinkhornSettings {
            tolerance: 1e-10,
            ..SinkhornSettings::with_lambda(0.5)
        };
        let cold = weighted_sinkhorn_barycenter_warm(&rs, &[1.2, 1.0, 0.8], &s, None).unwrap();
        let next =
            weighted_sinkhorn_barycenter_warm(&rs, &[1.1, 1.0, 0.9], &s, Some(&cold.warm)).unwrap();
        let fresh = weighted_sinkhorn_barycenter_warm(&rs, &[1.1, 1.0, 0.9], &s, None).unwrap();
        assert!(next.iterations <= fresh.iterations);
        assert!(next.measure.l1_distance(&fresh.measure) < 1e-7);
    }

    #[test]
    fn log_domain_agrees_with_linear() {
        let spec = GridSpec::line(0.0, 1.0, 41).unwrap();
        let rs: Vec<DiscreteMeasure> = (0..3)
            .map(|i| gaussian_1d(&spec, 0.3 + 0.15 * i as f64, 0.07))
            .collect();
        let ws = [1.5, 0.9, 0.6];
        let s = SinkhornSettings {
            tolerance: 1e-11,
            ..SinkhornSettings::with_lambda(0.5)
        };
        let lin = weighted_sinkhorn_barycenter_warm(&rs, &ws, &s, None).unwrap();
        let lg = weighted_sinkhorn_barycenter_warm(
            &rs,
            &ws,
            &SinkhornSettings {
                log_domain: LogDomain::Always,
                ..s
            },
            None,
        )
        .unwrap();
        assert!(!lin.log_domain && lg.log_domain);
        assert!(lin.measure.l1_distance(&lg.measure) < 1e-8);
    }

    #[test]
    fn sparse_supports_fall_back_to_log_domain() {
        let spec = GridSpec::line(0.0, 1.0, 201).unwrap();
        let a = DiscreteMeasure::point_mass(spec.clone(), 10);
        let c = DiscreteMeasure::point_mass(spec.clone(), 190);
        let bar = weighted_sinkhorn_barycenter_warm(
            &[a, c],
            &[1.0, 1.0],
            &SinkhornSettings::with_lambda(1.0),
            None,
        )
        .unwrap();
        assert!(bar.log_domain);
        assert!((bar.measure.mean()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn input_validation() {
        let spec = GridSpec::line(0.0, 1.0, 5).unwrap();
        let r = DiscreteMeasure::uniform(spec.clone());
        let s = SinkhornSettings::default();
        assert!(matches!(
            weighted_sinkhorn_barycenter(&[r.clone(), r.clone()], &[1.0, 0.5], &s),
            Err(Error::WeightSum { .. })
        ));
        assert!(weighted_sinkhorn_barycenter(&[], &[], &s).is_err());
        let other = DiscreteMeasure::uniform(GridSpec::line(0.0, 2.0, 5).unwrap());
        assert!(matches!(
            weighted_sinkhorn_barycenter(&[r, other], &[1.0, 1.0], &s),
            Err(Error::GridMismatch)
        ));
    }
}
