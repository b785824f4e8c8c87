//! Exact solver for tiny dense quadratic programs.
//!
//! Problems have the shape
//!
//! ```text
//! minimize   ||z_u - r||^2 + M * z_s
//! subject to a_i^T z >= b_i        for every row i
//! ```
//!
//! where `z_u` is the leading `u_dim` components of `z` and `z_s` an
//! optional trailing slack variable (`dim == u_dim + 1`). Bound
//! constraints, barrier rows and the slack sign constraint all enter as
//! ordinary rows.
//!
//! With at most three decision variables, enumerating candidate active
//! sets and solving each equality-constrained subproblem is exact and
//! cheap. Any KKT point of a convex QP is a global minimum, so the scan
//! walks subset sizes in ascending order and stops at the first size that
//! produces a verified candidate; within a size, ties are broken toward
//! the smaller `||z_u||`. If no subset verifies, the constraint system is
//! infeasible: an optimum of a feasible bounded QP always admits a
//! linearly independent active subset whose KKT conditions it satisfies.

use alloc::vec;
use alloc::vec::Vec;

/// Primal feasibility slack accepted by the solver and its callers.
pub const FEAS_TOL: f64 = 1e-8;
/// Dual feasibility slack.
const DUAL_TOL: f64 = 1e-9;
/// Stationarity residual accepted after a KKT solve.
const STAT_TOL: f64 = 1e-7;
/// Objective window treated as a tie when comparing candidates.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QpRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct DenseQp {
    /// Total number of decision variables (u dims plus optional slack).
    pub dim: usize,
    /// Number of leading variables with quadratic cost.
    pub u_dim: usize,
    /// Target point for the quadratic part, length `u_dim`.
    pub u_ref: Vec<f64>,
    /// Linear weight on the slack variable; ignored when `dim == u_dim`.
    pub slack_weight: f64,
    pub rows: Vec<QpRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    pub z: Vec<f64>,
    pub objective: f64,
}

impl DenseQp {
    fn objective(&self, z: &[f64]) -> f64 {
        let mut o = 0.0;
        for i in 0..self.u_dim {
            let d = z[i] - self.u_ref[i];
            o += d * d;
        }
        if self.dim > self.u_dim {
            o += self.slack_weight * z[self.u_dim];
        }
        o
    }

    fn satisfies_all(&self, z: &[f64], tol: f64) -> bool {
        self.rows.iter().all(|r| dot(&r.coeffs, z) >= r.rhs - tol)
    }
}

/// Solves the QP; `None` means the rows are inconsistent.
pub fn solve_dense(qp: &DenseQp) -> Option<DenseSolution> {
    debug_assert!(qp.dim == qp.u_dim || qp.dim == qp.u_dim + 1);
    debug_assert!(qp.u_ref.len() == qp.u_dim);
    debug_assert!(qp.rows.iter().all(|r| r.coeffs.len() == qp.dim));

    // Fast path: the cost lower bound (u = r, slack = 0) if admissible.
    let mut z0 = vec![0.0; qp.dim];
    z0[..qp.u_dim].copy_from_slice(&qp.u_ref);
    if qp.satisfies_all(&z0, FEAS_TOL) {
        let objective = qp.objective(&z0);
        return Some(DenseSolution { z: z0, objective });
    }

    let n_rows = qp.rows.len();
    let mut subset = [0usize; 3];
    for size in 0..=qp.dim.min(n_rows) {
        let mut best: Option<DenseSolution> = None;
        for_each_subset(n_rows, size, &mut subset, 0, 0, &mut |s| {
            if let Some(cand) = kkt_candidate(qp, s) {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        cand.objective < b.objective - TIE_TOL
                            || (cand.objective <= b.objective + TIE_TOL
                                && u_norm2(&cand.z, qp.u_dim) < u_norm2(&b.z, qp.u_dim))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        });
        if best.is_some() {
            return best;
        }
    }
    None
}

fn u_norm2(z: &[f64], u_dim: usize) -> f64 {
    z[..u_dim].iter().map(|c| c * c).sum()
}

/// Optimizes over the affine set where rows `active` hold with equality
/// and verifies the result against the full problem.
///
/// The primal block is solved on its own (row reduction of the active
/// system, then the objective minimized over its null space) and the
/// multipliers recovered afterwards from `A^T l = grad`. Solving the
/// coupled saddle system instead would push O(M) multiplier magnitudes
/// through the back-substitution of the O(1) primal components and lose
/// them to cancellation once `M * machine-eps` crosses the feasibility
/// window.
fn kkt_candidate(qp: &DenseQp, active: &[usize]) -> Option<DenseSolution> {
    let d = qp.dim;
    let s = active.len();
    let q_diag = |j: usize| if j < qp.u_dim { 2.0 } else { 0.0 };

    // Reduce A z = b to identity on a pivot column per row.
    let mut a = vec![0.0; s * d];
    let mut b = vec![0.0; s];
    for (k, &ri) in active.iter().enumerate() {
        a[k * d..(k + 1) * d].copy_from_slice(&qp.rows[ri].coeffs);
        b[k] = qp.rows[ri].rhs;
    }
    let pivot_tol = 1e-12 * a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut is_pivot = vec![false; d];
    let mut pivot_col = vec![0usize; s];
    for r in 0..s {
        let (mut pr, mut pc, mut pv) = (r, 0usize, 0.0f64);
        for rr in r..s {
            for cc in (0..d).filter(|&c| !is_pivot[c]) {
                if a[rr * d + cc].abs() > pv {
                    (pr, pc, pv) = (rr, cc, a[rr * d + cc].abs());
                }
            }
        }
        if pv <= pivot_tol {
            // Dependent rows: the same face is reachable through a
            // smaller subset.
            return None;
        }
        if pr != r {
            for c in 0..d {
                a.swap(r * d + c, pr * d + c);
            }
            b.swap(r, pr);
        }
        is_pivot[pc] = true;
        pivot_col[r] = pc;
        let piv = a[r * d + pc];
        for c in 0..d {
            a[r * d + c] /= piv;
        }
        b[r] /= piv;
        for rr in 0..s {
            let f = a[rr * d + pc];
            if rr == r || f == 0.0 {
                continue;
            }
            for c in 0..d {
                a[rr * d + c] -= f * a[r * d + c];
            }
            b[rr] -= f * b[r];
        }
    }

    // Particular solution, free components held at zero.
    let mut z = vec![0.0; d];
    for r in 0..s {
        z[pivot_col[r]] = b[r];
    }

    // Minimize over the free directions. Zero curvature only arises
    // along the slack, whose linear cost is one-signed, so a singular
    // reduced Hessian means the subset supports no optimum.
    let free: Vec<usize> = (0..d).filter(|&c| !is_pivot[c]).collect();
    let nf = free.len();
    if nf > 0 {
        let mut ncols = vec![0.0; d * nf];
        for (y, &fc) in free.iter().enumerate() {
            ncols[fc * nf + y] = 1.0;
            for r in 0..s {
                ncols[pivot_col[r] * nf + y] = -a[r * d + fc];
            }
        }
        let mut h = vec![0.0; nf * nf];
        let mut rhs = vec![0.0; nf];
        for y1 in 0..nf {
            for y2 in 0..nf {
                h[y1 * nf + y2] =
                    (0..d).map(|j| q_diag(j) * ncols[j * nf + y1] * ncols[j * nf + y2]).sum();
            }
            rhs[y1] = -(0..d).map(|j| ncols[j * nf + y1] * grad_at(qp, j, z[j])).sum::<f64>();
        }
        let y = solve_linear(&mut h, &mut rhs, nf)?;
        for j in 0..d {
            for (k, &yk) in y.iter().enumerate() {
                z[j] += ncols[j * nf + k] * yk;
            }
        }
    }

    // Multipliers from the pivot rows of A^T l = grad(z); the remaining
    // rows are checked below as stationarity.
    let mut lambda = vec![0.0; s];
    if s > 0 {
        let mut m2 = vec![0.0; s * s];
        let mut r2 = vec![0.0; s];
        for k1 in 0..s {
            let j = pivot_col[k1];
            for k2 in 0..s {
                m2[k1 * s + k2] = qp.rows[active[k2]].coeffs[j];
            }
            r2[k1] = grad_at(qp, j, z[j]);
        }
        lambda = solve_linear(&mut m2, &mut r2, s)?;
    }

    if !z.iter().chain(&lambda).all(|c| c.is_finite()) {
        return None;
    }
    if lambda.iter().any(|&l| l < -DUAL_TOL) {
        return None;
    }
    if !qp.satisfies_all(&z, FEAS_TOL) {
        return None;
    }
    // Full stationarity recheck, relative to the gradient magnitude: the
    // slack gradient is M itself, and an absolute window would reject
    // exact optima once M * machine-eps crosses it.
    for j in 0..d {
        let grad_j = grad_at(qp, j, z[j]);
        let mut at_lambda = 0.0;
        for (k, &ri) in active.iter().enumerate() {
            at_lambda += qp.rows[ri].coeffs[j] * lambda[k];
        }
        let scale = 1.0_f64.max(grad_j.abs()).max(at_lambda.abs());
        if (grad_j - at_lambda).abs() > STAT_TOL * scale {
            return None;
        }
    }

    let objective = qp.objective(&z);
    Some(DenseSolution { z, objective })
}

/// Objective gradient component `j` at value `zj`.
fn grad_at(qp: &DenseQp, j: usize, zj: f64) -> f64 {
    if j < qp.u_dim {
        2.0 * (zj - qp.u_ref[j])
    } else {
        qp.slack_weight
    }
}

/// Gaussian elimination with partial pivoting; `None` on a singular
/// system. `m` is row-major `n x n`, consumed along with `rhs`.
fn solve_linear(m: &mut [f64], rhs: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let mut scale = 0.0f64;
    for v in m.iter() {
        scale = scale.max(v.abs());
    }
    let pivot_tol = 1e-12 * scale.max(1.0);

    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if m[pivot * n + col].abs() <= pivot_tol {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                m.swap(col * n + j, pivot * n + j);
            }
            rhs.swap(col, pivot);
        }
        let diag = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                m[row * n + j] -= factor * m[col * n + j];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for j in col + 1..n {
            acc -= m[col * n + j] * x[j];
        }
        x[col] = acc / m[col * n + col];
    }
    Some(x)
}

/// Visits every `size`-subset of `0..n` in lexicographic order.
fn for_each_subset(
    n: usize,
    size: usize,
    buf: &mut [usize; 3],
    depth: usize,
    start: usize,
    f: &mut impl FnMut(&[usize]),
) {
    if depth == size {
        f(&buf[..size]);
        return;
    }
    for i in start..n {
        buf[depth] = i;
        for_each_subset(n, size, buf, depth + 1, i + 1, f);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
