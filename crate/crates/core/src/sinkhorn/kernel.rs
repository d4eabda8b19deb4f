//! Gibbs kernels `K = exp(-lambda C)` and their application to vectors, in
//! linear and log space.
//!
//! On a product grid the squared Euclidean cost is a sum of per-axis costs,
//! so `K` is a Kronecker product of small per-axis kernels and `K v` costs
//! `O(m * sum_a n_a)` instead of `O(m^2)`.

use crate::measures::{CostMatrix, GridSpec};

/// Linear operator interface shared by the dense and separable kernels.
pub trait Kernel {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = K v`.
    fn apply(&self, v: &[f64], out: &mut [f64]);
    /// `out = K' u`.
    fn apply_t(&self, u: &[f64], out: &mut [f64]);
    /// `out_k = log sum_l K_kl exp(g_l)`.
    fn apply_log(&self, g: &[f64], out: &mut [f64]);
    /// `out_l = log sum_k K_kl exp(f_k)`.
    fn apply_t_log(&self, f: &[f64], out: &mut [f64]);
    /// `sum_kl u_k K_kl C_kl v_l` with `C` in physical units.
    fn transport_cost(&self, u: &[f64], v: &[f64]) -> f64;
    /// Same as [`Kernel::transport_cost`] with `u = exp(f)`, `v = exp(g)`.
    fn transport_cost_log(&self, f: &[f64], g: &[f64]) -> f64;
    /// `log K_kl` and the physical cost `C_kl`.
    fn entry(&self, k: usize, l: usize) -> (f64, f64);
}

/// `log sum exp` of an iterator, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Shifted sums below this are recomputed term by term in log space.
const LOG_SAFE_MIN: f64 = 1e-250;

struct AxisKernel {
    n: usize,
    c: Vec<f64>,
    k: Vec<f64>,
    kc: Vec<f64>,
    log_k: Vec<f64>,
    log_kc: Vec<f64>,
}

/// Kronecker-structured Gibbs kernel on a rectangular grid.
pub struct SeparableKernel {
    axes: Vec<AxisKernel>,
    m: usize,
}

impl SeparableKernel {
    /// `lambda` multiplies costs already divided by `scale`.
    pub fn new(spec: &GridSpec, lambda: f64, scale: f64) -> Self {
        let axes = spec
            .axes()
            .iter()
            .map(|ax| {
                let n = ax.count;
                let nodes = ax.nodes();
                let mut cost = vec![0.0; n * n];
                let mut k = vec![0.0; n * n];
                let mut kc = vec![0.0; n * n];
                let mut log_k = vec![0.0; n * n];
                let mut log_kc = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        let c = (nodes[i] - nodes[j]).powi(2);
                        let e = -lambda * c / scale;
                        cost[i * n + j] = c;
                        k[i * n + j] = e.exp();
                        kc[i * n + j] = e.exp() * c;
                        log_k[i * n + j] = e;
                        log_kc[i * n + j] = e + c.ln();
                    }
                }
                AxisKernel {
                    n,
                    c: cost,
                    k,
                    kc,
                    log_k,
                    log_kc,
                }
            })
            .collect();
        Self {
            axes,
            m: spec.len(),
        }
    }

    fn dim(&self) -> usize {
        self.axes.len()
    }

    // Applies one per-axis matrix along axis `a` of the row-major tensor.
    fn apply_axis(&self, a: usize, mat: &[f64], x: &[f64], out: &mut [f64]) {
        let n = self.axes[a].n;
        let post: usize = self.axes[a + 1..].iter().map(|ax| ax.n).product();
        let pre = self.m / (n * post);
        unsafe {
            if post == 1 {
                // out (pre x n) = x (pre x n) * mat'
                matrixmultiply::dgemm(
                    pre,
                    n,
                    n,
                    1.0,
                    x.as_ptr(),
                    n as isize,
                    1,
                    mat.as_ptr(),
                    1,
                    n as isize,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            } else {
                for p in 0..pre {
                    let off = p * n * post;
                    matrixmultiply::dgemm(
                        n,
                        n,
                        post,
                        1.0,
                        mat.as_ptr(),
                        n as isize,
                        1,
                        x[off..].as_ptr(),
                        post as isize,
                        1,
                        0.0,
                        out[off..].as_mut_ptr(),
                        post as isize,
                        1,
                    );
                }
            }
        }
    }

    // Log-space version of `apply_axis`. Each line along the axis is shifted
    // by its maximum, exponentiated and multiplied in linear space; entries
    // whose shifted sum leaves the normal range are recomputed exactly.
    fn apply_axis_log(&self, a: usize, lin: &[f64], log: &[f64], x: &[f64], out: &mut [f64]) {
        let n = self.axes[a].n;
        let post: usize = self.axes[a + 1..].iter().map(|ax| ax.n).product();
        let pre = self.m / (n * post);
        let mut shift = vec![f64::NEG_INFINITY; pre * post];
        for p in 0..pre {
            for j in 0..n {
                let base = (p * n + j) * post;
                for q in 0..post {
                    let s = &mut shift[p * post + q];
                    *s = s.max(x[base + q]);
                }
            }
        }
        let mut e = vec![0.0; self.m];
        for p in 0..pre {
            for j in 0..n {
                let base = (p * n + j) * post;
                for q in 0..post {
                    let s = shift[p * post + q];
                    e[base + q] = if s == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (x[base + q] - s).exp()
                    };
                }
            }
        }
        self.apply_axis(a, lin, &e, out);
        for p in 0..pre {
            for i in 0..n {
                let base = (p * n + i) * post;
                for q in 0..post {
                    let s = shift[p * post + q];
                    let y = out[base + q];
                    out[base + q] = if s == f64::NEG_INFINITY {
                        s
                    } else if y > LOG_SAFE_MIN {
                        s + y.ln()
                    } else {
                        let row = &log[i * n..(i + 1) * n];
                        log_sum_exp((0..n).map(|j| row[j] + x[(p * n + j) * post + q]))
                    };
                }
            }
        }
    }

    // Kronecker product of the chosen per-axis matrices applied to `x`.
    // Each factor is given as (linear, log) entries.
    fn apply_chain(&self, mats: &[(&[f64], &[f64])], x: &[f64], out: &mut [f64], log: bool) {
        let mut buf = x.to_vec();
        for (a, (lin, lg)) in mats.iter().enumerate() {
            if log {
                self.apply_axis_log(a, lin, lg, &buf, out);
            } else {
                self.apply_axis(a, lin, &buf, out);
            }
            if a + 1 < mats.len() {
                buf.copy_from_slice(out);
            }
        }
    }

    fn cost_chain(&self, u: &[f64], v: &[f64], log: bool) -> f64 {
        let mut out = vec![0.0; self.m];
        let mut total = 0.0;
        for b in 0..self.dim() {
            let mats: Vec<(&[f64], &[f64])> = self
                .axes
                .iter()
                .enumerate()
                .map(|(a, ax)| {
                    if a == b {
                        (ax.kc.as_slice(), ax.log_kc.as_slice())
                    } else {
                        (ax.k.as_slice(), ax.log_k.as_slice())
                    }
                })
                .collect();
            self.apply_chain(&mats, v, &mut out, log);
            total += if log {
                u.iter()
                    .zip(&out)
                    .map(|(f, h)| {
                        let e = f + h;
                        if e == f64::NEG_INFINITY || e.is_nan() {
                            0.0
                        } else {
                            e.exp()
                        }
                    })
                    .sum::<f64>()
            } else {
                u.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>()
            };
        }
        total
    }
}

impl Kernel for SeparableKernel {
    fn rows(&self) -> usize {
        self.m
    }

    fn cols(&self) -> usize {
        self.m
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let mats: Vec<(&[f64], &[f64])> = self
            .axes
            .iter()
            .map(|ax| (ax.k.as_slice(), ax.log_k.as_slice()))
            .collect();
        self.apply_chain(&mats, v, out, false);
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        self.apply(u, out);
    }

    fn apply_log(&self, g: &[f64], out: &mut [f64]) {
        let mats: Vec<(&[f64], &[f64])> = self
            .axes
            .iter()
            .map(|ax| (ax.k.as_slice(), ax.log_k.as_slice()))
            .collect();
        self.apply_chain(&mats, g, out, true);
    }

    fn apply_t_log(&self, f: &[f64], out: &mut [f64]) {
        self.apply_log(f, out);
    }

    fn transport_cost(&self, u: &[f64], v: &[f64]) -> f64 {
        self.cost_chain(u, v, false)
    }

    fn transport_cost_log(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cost_chain(f, g, true)
    }

    fn entry(&self, k: usize, l: usize) -> (f64, f64) {
        let mut lk = 0.0;
        let mut c = 0.0;
        let (mut k, mut l) = (k, l);
        for ax in self.axes.iter().rev() {
            let (i, j) = (k % ax.n, l % ax.n);
            k /= ax.n;
            l /= ax.n;
            lk += ax.log_k[i * ax.n + j];
            c += ax.c[i * ax.n + j];
        }
        (lk, c)
    }
}

/// Gibbs kernel of an arbitrary cost matrix.
pub struct DenseKernel {
    rows: usize,
    cols: usize,
    cost: Vec<f64>,
    log_k: Vec<f64>,
    k: Vec<f64>,
}

impl DenseKernel {
    pub fn new(cost: &CostMatrix, lambda: f64, scale: f64) -> Self {
        let log_k: Vec<f64> = cost.entries().iter().map(|c| -lambda * c / scale).collect();
        Self {
            rows: cost.rows(),
            cols: cost.cols(),
            cost: cost.entries().to_vec(),
            k: log_k.iter().map(|e| e.exp()).collect(),
            log_k,
        }
    }
}

impl Kernel for DenseKernel {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.k.chunks(self.cols)) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (row, &uk) in self.k.chunks(self.cols).zip(u) {
            for (o, kk) in out.iter_mut().zip(row) {
                *o += uk * kk;
            }
        }
    }

    fn apply_log(&self, g: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.log_k.chunks(self.cols)) {
            *o = log_sum_exp(row.iter().zip(g).map(|(a, b)| a + b));
        }
    }

    fn apply_t_log(&self, f: &[f64], out: &mut [f64]) {
        for (l, o) in out.iter_mut().enumerate() {
            *o = log_sum_exp((0..self.rows).map(|k| self.log_k[k * self.cols + l] + f[k]));
        }
    }

    fn transport_cost(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..self.rows {
            for l in 0..self.cols {
                let i = k * self.cols + l;
                total += u[k] * self.k[i] * self.cost[i] * v[l];
            }
        }
        total
    }

    fn transport_cost_log(&self, f: &[f64], g: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..self.rows {
            for l in 0..self.cols {
                let i = k * self.cols + l;
                let e = f[k] + self.log_k[i] + g[l];
                if e > f64::NEG_INFINITY {
                    total += e.exp() * self.cost[i];
                }
            }
        }
        total
    }

    fn entry(&self, k: usize, l: usize) -> (f64, f64) {
        let i = k * self.cols + l;
        (self.log_k[i], self.cost[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{cost_matrix, Axis};

    fn spec() -> GridSpec {
        GridSpec::new(vec![
            Axis::new(0.0, 1.0, 4),
            Axis::new(-1.0, 2.0, 3),
            Axis::new(0.0, 0.5, 5),
        ])
        .unwrap()
    }

    #[test]
    fn separable_matches_dense() {
        let spec = spec();
        let sep = SeparableKernel::new(&spec, 0.7, 0.3);
        let dense = DenseKernel::new(&cost_matrix(&spec), 0.7, 0.3);
        let m = spec.len();
        let v: Vec<f64> = (0..m)
            .map(|k| ((k * 37 % 11) as f64 + 0.5) / 11.0)
            .collect();
        let u: Vec<f64> = (0..m).map(|k| ((k * 13 % 7) as f64 + 1.0) / 7.0).collect();
        let (mut a, mut b) = (vec![0.0; m], vec![0.0; m]);
        sep.apply(&v, &mut a);
        dense.apply(&v, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
        }
        dense.apply_t(&v, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * y.abs().max(1.0));
        }

        let g: Vec<f64> = v.iter().map(|x| x.ln()).collect();
        sep.apply_log(&g, &mut a);
        dense.apply_log(&g, &mut b);
        for ((x, y), lin) in a.iter().zip(&b).zip(dense_lin(&dense, &v)) {
            assert!((x - y).abs() < 1e-12);
            assert!((x - lin.ln()).abs() < 1e-12);
        }

        let c1 = sep.transport_cost(&u, &v);
        let c2 = dense.transport_cost(&u, &v);
        assert!((c1 - c2).abs() < 1e-12 * c2);
        let f: Vec<f64> = u.iter().map(|x| x.ln()).collect();
        assert!((sep.transport_cost_log(&f, &g) - c2).abs() < 1e-12 * c2);
        assert!((dense.transport_cost_log(&f, &g) - c2).abs() < 1e-12 * c2);

        for (k, l) in [(0, 0), (3, 17), (59, 2), (30, 30)] {
            let (k1, c1) = sep.entry(k, l);
            let (k2, c2) = dense.entry(k, l);
            assert!((k1 - k2).abs() < 1e-12 && (c1 - c2).abs() < 1e-12);
        }
    }

    fn dense_lin(k: &DenseKernel, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; k.rows()];
        k.apply(v, &mut out);
        out
    }

    #[test]
    fn log_apply_handles_masked_entries() {
        let spec = GridSpec::line(0.0, 1.0, 3).unwrap();
        let sep = SeparableKernel::new(&spec, 1.0, 1.0);
        let mut out = vec![0.0; 3];
        sep.apply_log(&[f64::NEG_INFINITY; 3], &mut out);
        assert!(out.iter().all(|x| *x == f64::NEG_INFINITY));
        sep.apply_log(&[0.0, f64::NEG_INFINITY, f64::NEG_INFINITY], &mut out);
        assert!((out[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_domain_survives_extreme_lambda() {
        let spec = GridSpec::line(0.0, 1.0, 11).unwrap();
        let sep = SeparableKernel::new(&spec, 1e5, 1.0);
        let mut g = vec![f64::NEG_INFINITY; 11];
        g[0] = 0.0;
        let mut out = vec![0.0; 11];
        sep.apply_log(&g, &mut out);
        assert!((out[10] + 1e5).abs() < 1e-9);
        let mut lin = vec![0.0; 11];
        sep.apply(&g.iter().map(|x| x.exp()).collect::<Vec<_>>(), &mut lin);
        assert_eq!(lin[10], 0.0);
    }

    #[test]
    fn log_apply_matches_brute_force_over_wide_range() {
        let spec = GridSpec::new(vec![Axis::new(0.0, 1.0, 9), Axis::new(0.0, 2.0, 7)]).unwrap();
        let sep = SeparableKernel::new(&spec, 40.0, 1.0);
        let dense = DenseKernel::new(&cost_matrix(&spec), 40.0, 1.0);
        let m = spec.len();
        // Log-scalings spread over thousands of units.
        let g: Vec<f64> = (0..m).map(|k| -((k * 53 % 17) as f64) * 150.0).collect();
        let (mut a, mut b) = (vec![0.0; m], vec![0.0; m]);
        sep.apply_log(&g, &mut a);
        dense.apply_log(&g, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}
