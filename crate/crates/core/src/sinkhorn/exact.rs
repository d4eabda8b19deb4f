//! Exact discrete optimal transport by the transportation simplex.
//!
//! The basis is a spanning tree on row and column nodes with
//! `rows + cols - 1` cells. Potentials come from the tree, the entering cell
//! is the most negative reduced cost, and the leaving cell is found on the
//! unique cycle the entering cell closes. Only small instances are
//! supported; this solver is a reference for the entropic one.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, DiscreteMeasure, GridValues, TransportPlan};

/// Largest support size (on either side) accepted by the exact solver.
pub const EXACT_SIZE_CAP: usize = 64;

/// Optimal value of `min <S, D>` over couplings of two measures on the same
/// grid. Zero-mass points are dropped before the size cap is checked.
pub fn exact_w2_discrete(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch);
    }
    Ok(exact_transport(a.mass(), b.mass(), cost)?.1)
}

/// Optimal plan and value for mass vectors `a`, `b` and cost `cost`.
pub fn exact_transport(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<(TransportPlan, f64)> {
    if a.len() != cost.rows() || b.len() != cost.cols() {
        return Err(Error::LengthMismatch {
            expected: cost.rows() * cost.cols(),
            got: a.len() * b.len(),
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput(
            "masses must be finite and nonnegative".into(),
        ));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if sa <= 0.0 || (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return Err(Error::InvalidInput(format!(
            "marginals must carry equal positive mass ({sa} vs {sb})"
        )));
    }
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let size = rows.len().max(cols.len());
    if size > EXACT_SIZE_CAP {
        return Err(Error::SizeCap {
            size,
            cap: EXACT_SIZE_CAP,
        });
    }
    let sub_a: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let mut sub_b: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    // Make the two sides balance exactly.
    let scale = sa / sb;
    sub_b.iter_mut().for_each(|x| *x *= scale);
    let c: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost.get(i, j))
        .collect();

    let flow = Simplex::new(&sub_a, &sub_b, c).solve()?;

    let mut entries = vec![0.0; a.len() * b.len()];
    let mut value = 0.0;
    for (bi, &i) in rows.iter().enumerate() {
        for (bj, &j) in cols.iter().enumerate() {
            let x = flow[bi * cols.len() + bj];
            if x > 0.0 {
                entries[i * b.len() + j] = x;
                value += x * cost.get(i, j);
            }
        }
    }
    Ok((
        TransportPlan::from_entries(a.len(), b.len(), entries)?,
        value,
    ))
}

struct Simplex {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    flow: Vec<f64>,
    basic: Vec<bool>,
    cells: Vec<(usize, usize)>,
}

impl Simplex {
    // North-west corner start.
    fn new(a: &[f64], b: &[f64], cost: Vec<f64>) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut flow = vec![0.0; m * n];
        let mut basic = vec![false; m * n];
        let mut cells = Vec::with_capacity(m + n - 1);
        let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
        let (mut i, mut j) = (0, 0);
        loop {
            let x = if i == m - 1 && j == n - 1 {
                ra[i].max(0.0)
            } else {
                ra[i].min(rb[j]).max(0.0)
            };
            flow[i * n + j] = x;
            basic[i * n + j] = true;
            cells.push((i, j));
            ra[i] -= x;
            rb[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            m,
            n,
            cost,
            flow,
            basic,
            cells,
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        // Nodes 0..m are rows, m..m+n columns; edges carry the cell index.
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (c, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, c));
            adj[self.m + j].push((i, c));
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let mut pot = vec![f64::NAN; self.m + self.n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &(next, c) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j) = self.cells[c];
                    let cij = self.cost[i * self.n + j];
                    // u_i + v_j = c_ij
                    pot[next] = cij - pot[node];
                    queue.push_back(next);
                }
            }
        }
        let u = pot[..self.m].to_vec();
        let v = pot[self.m..].to_vec();
        (u, v)
    }

    // Cells on the tree path from row node `i` to column node `m + j`.
    fn path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let target = self.m + j;
        let mut via = vec![usize::MAX; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[i] = true;
        let mut queue = VecDeque::from([i]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, c) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    via[next] = c;
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = target;
        while node != i {
            let c = via[node];
            cells.push(c);
            let (ci, cj) = self.cells[c];
            node = if node == self.m + cj { ci } else { self.m + cj };
        }
        cells.reverse();
        cells
    }

    fn solve(mut self) -> Result<Vec<f64>> {
        let scale = self
            .cost
            .iter()
            .fold(0.0f64, |a, &c| a.max(c.abs()))
            .max(1e-300);
        let eps = 1e-12 * scale;
        let limit = 50 * (self.m * self.n).max(16);
        for _ in 0..limit {
            let adj = self.adjacency();
            let (u, v) = self.potentials(&adj);
            let mut best = (-eps, usize::MAX, usize::MAX);
            for i in 0..self.m {
                for j in 0..self.n {
                    if !self.basic[i * self.n + j] {
                        let r = self.cost[i * self.n + j] - u[i] - v[j];
                        if r < best.0 {
                            best = (r, i, j);
                        }
                    }
                }
            }
            if best.1 == usize::MAX {
                return Ok(self.flow);
            }
            let (_, p, q) = best;
            let path = self.path(&adj, p, q);
            // Along the cycle (p,q) -> path, cells at even path positions
            // lose flow and cells at odd positions gain it.
            let mut theta = f64::INFINITY;
            let mut leave = 0;
            for (pos, &c) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let (i, j) = self.cells[c];
                    let x = self.flow[i * self.n + j];
                    if x < theta {
                        theta = x;
                        leave = c;
                    }
                }
            }
            for (pos, &c) in path.iter().enumerate() {
                let (i, j) = self.cells[c];
                let x = &mut self.flow[i * self.n + j];
                if pos % 2 == 0 {
                    *x = (*x - theta).max(0.0);
                } else {
                    *x += theta;
                }
            }
            let (li, lj) = self.cells[leave];
            self.flow[li * self.n + lj] = 0.0;
            self.basic[li * self.n + lj] = false;
            self.flow[p * self.n + q] = theta;
            self.basic[p * self.n + q] = true;
            self.cells[leave] = (p, q);
        }
        Err(Error::PivotLimit(limit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{cost_matrix, GridSpec};
    use crate::ot1d::w2_atoms;
    use proptest::prelude::*;

    #[test]
    fn point_masses() {
        let spec = GridSpec::line(0.0, 1.0, 2).unwrap();
        let d = cost_matrix(&spec);
        let a = DiscreteMeasure::point_mass(spec.clone(), 0);
        let b = DiscreteMeasure::point_mass(spec.clone(), 1);
        assert_eq!(exact_w2_discrete(&a, &b, &d).unwrap(), 1.0);
        let u = DiscreteMeasure::uniform(spec);
        assert_eq!(exact_w2_discrete(&u, &u, &d).unwrap(), 0.0);
    }

    #[test]
    fn equal_costs_have_many_optima() {
        // Regular tetrahedron: every pair of vertices is at distance one.
        let s = 0.5f64.sqrt();
        let p = |x: f64, y: f64, z: f64| vec![x * s, y * s, z * s];
        let src = vec![p(1.0, 1.0, 1.0), p(1.0, -1.0, -1.0)];
        let dst = vec![p(-1.0, 1.0, -1.0), p(-1.0, -1.0, 1.0)];
        let d = CostMatrix::from_points(&src, &dst);
        for c in d.entries() {
            assert!((c - 4.0).abs() < 1e-12);
        }
        let (plan, value) = exact_transport(&[0.5, 0.5], &[0.5, 0.5], &d).unwrap();
        assert!((value - 4.0).abs() < 1e-12);
        // Any coupling is optimal, e.g. the crossed one.
        let other = TransportPlan::from_entries(2, 2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        assert!((other.cost(&d) - value).abs() < 1e-12);
        assert!(plan.marginal_violation(&[0.5, 0.5], &[0.5, 0.5]) < 1e-15);
    }

    #[test]
    fn size_cap() {
        let spec = GridSpec::line(0.0, 1.0, 65).unwrap();
        let d = cost_matrix(&spec);
        let u = DiscreteMeasure::uniform(spec.clone());
        assert!(matches!(
            exact_w2_discrete(&u, &u, &d),
            Err(Error::SizeCap { .. })
        ));
        // Large grids are fine when the supports are small.
        let a = DiscreteMeasure::point_mass(spec.clone(), 3);
        let b = DiscreteMeasure::point_mass(spec, 60);
        let v = exact_w2_discrete(&a, &b, &d).unwrap();
        assert!((v - (57.0f64 / 64.0).powi(2)).abs() < 1e-12);
    }

    // Brute force over all vertices is impractical; on the line the
    // monotone coupling is optimal and gives an independent oracle.
    proptest! {
        #[test]
        fn matches_monotone_coupling_on_the_line(
            wa in prop::collection::vec(0.0f64..1.0, 12),
            wb in prop::collection::vec(0.0f64..1.0, 12),
        ) {
            prop_assume!(wa.iter().sum::<f64>() > 0.1 && wb.iter().sum::<f64>() > 0.1);
            let spec = GridSpec::line(0.0, 1.0, 12).unwrap();
            let a = DiscreteMeasure::new(spec.clone(), wa).unwrap();
            let b = DiscreteMeasure::new(spec.clone(), wb).unwrap();
            let (plan, v) = exact_transport(a.mass(), b.mass(), &cost_matrix(&spec)).unwrap();
            let nodes = spec.axes()[0].nodes();
            let oracle = w2_atoms(&nodes, a.mass(), &nodes, b.mass());
            prop_assert!((v - oracle).abs() < 1e-10, "{} vs {}", v, oracle);
            prop_assert!(plan.marginal_violation(a.mass(), b.mass()) < 1e-12);
        }

        #[test]
        fn lp_duality_gap_closes_in_2d(
            wa in prop::collection::vec(0.01f64..1.0, 16),
            wb in prop::collection::vec(0.01f64..1.0, 16),
        ) {
            // Compare against a few random feasible plans: none may beat the optimum.
            let spec = GridSpec::cube(2, 0.0, 1.0, 4).unwrap();
            let a = DiscreteMeasure::new(spec.clone(), wa).unwrap();
            let b = DiscreteMeasure::new(spec.clone(), wb).unwrap();
            let d = cost_matrix(&spec);
            let (_, v) = exact_transport(a.mass(), b.mass(), &d).unwrap();
            let indep: f64 = (0..16).flat_map(|k| (0..16).map(move |l| (k, l)))
                .map(|(k, l)| a.mass()[k] * b.mass()[l] * d.get(k, l)).sum();
            prop_assert!(v <= indep + 1e-12);
            // Exact cost is at least the squared distance of the means.
            let (ma, mb) = (a.mean(), b.mean());
            let lb = (ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2);
            prop_assert!(v >= lb - 1e-12);
        }
    }
}
