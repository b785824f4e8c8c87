//! Affine barrier functions and the safety QPs built from them.
//!
//! A barrier `h(x) = p^T x + q` with decay rate `eta` in `[0, 1]` encodes
//! the safe half-space `h >= 0`. For control-affine dynamics
//! `x' = f(x) + g(x) u` the one-step condition `h(x') >= (1 - eta) h(x)`
//! is linear in `u`:
//!
//! ```text
//! (p^T g) u + zeta >= (1 - eta) h(x) - p^T f - q + margin
//! ```
//!
//! where `zeta` is an optional shared slack and `margin >= 0` robustifies
//! against an additive disturbance `|w_i| <= W_i` (worst case of `p^T w`,
//! i.e. `sum_i |p_i| W_i`). Three solvers share this row constructor:
//!
//! * [`solve_strict`]: no slack; infeasibility is reported, not patched.
//! * [`solve_relaxed`]: one shared slack weighted by `big_m`, always
//!   feasible inside a nonempty input box.
//! * [`solve_noise_robust`]: the relaxed program with disturbance margins.
//!
//! Trajectories produced under these filters can be checked after the
//! fact with [`certify_forward_invariance`]: with slack bounded by `Z`
//! the invariant set shifts from `h >= 0` to `h + Z/eta >= 0`.

use alloc::vec;
use alloc::vec::Vec;

use crate::qp::{solve_dense, DenseQp, QpRow, FEAS_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbfError {
    DimensionMismatch,
    ZeroNormal,
    EtaOutOfRange,
    EmptyInputBox,
    EmptyTrajectory,
    ZeroEtaWithSlack,
}

impl core::fmt::Display for CbfError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let msg = match self {
            CbfError::DimensionMismatch => "vector dimensions disagree",
            CbfError::ZeroNormal => "barrier normal is zero",
            CbfError::EtaOutOfRange => "decay rate must lie in [0, 1]",
            CbfError::EmptyInputBox => "input box has no volume",
            CbfError::EmptyTrajectory => "trajectory is empty",
            CbfError::ZeroEtaWithSlack => "slack bound needs a positive decay rate",
        };
        write!(f, "{msg}")
    }
}

/// Safe half-space `p^T x + q >= 0` with per-step decay rate `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBarrier {
    pub p: Vec<f64>,
    pub q: f64,
    pub eta: f64,
}

impl AffineBarrier {
    pub fn new(p: Vec<f64>, q: f64, eta: f64) -> Result<Self, CbfError> {
        if p.iter().all(|&c| c == 0.0) {
            return Err(CbfError::ZeroNormal);
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(CbfError::EtaOutOfRange);
        }
        Ok(Self { p, q, eta })
    }

    pub fn h_value(&self, x: &[f64]) -> Result<f64, CbfError> {
        if x.len() != self.p.len() {
            return Err(CbfError::DimensionMismatch);
        }
        Ok(self.p.iter().zip(x).map(|(p, x)| p * x).sum::<f64>() + self.q)
    }

    /// Worst case of `p^T w` over the componentwise box `|w_i| <= w[i]`.
    /// Always nonnegative; zero exactly when the bound is zero.
    pub fn robust_margin(&self, w_bound: &[f64]) -> f64 {
        self.p
            .iter()
            .zip(w_bound)
            .map(|(p, w)| p.abs() * w)
            .sum()
    }
}

/// One linear constraint `u_coeffs . u + slack_coeff * zeta >= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfRow {
    pub u_coeffs: Vec<f64>,
    pub slack_coeff: f64,
    pub rhs: f64,
}

/// Builds the one-step decay row of a barrier at state `x`.
/// `g_x` is row-major `n x m`; `margin` is the robustification offset.
pub fn cbf_row(
    barrier: &AffineBarrier,
    x: &[f64],
    f_x: &[f64],
    g_x: &[Vec<f64>],
    margin: f64,
) -> Result<CbfRow, CbfError> {
    let n = barrier.p.len();
    if x.len() != n || f_x.len() != n || g_x.len() != n {
        return Err(CbfError::DimensionMismatch);
    }
    let m = g_x.first().map_or(0, Vec::len);
    if g_x.iter().any(|row| row.len() != m) {
        return Err(CbfError::DimensionMismatch);
    }
    let h = barrier.h_value(x)?;
    let p_f: f64 = barrier.p.iter().zip(f_x).map(|(p, f)| p * f).sum();
    let mut u_coeffs = vec![0.0; m];
    for j in 0..m {
        u_coeffs[j] = (0..n).map(|i| barrier.p[i] * g_x[i][j]).sum();
    }
    Ok(CbfRow {
        u_coeffs,
        slack_coeff: 1.0,
        rhs: (1.0 - barrier.eta) * h - p_f - barrier.q + margin,
    })
}

/// A safety QP instance at a single state.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub x: Vec<f64>,
    pub f_x: Vec<f64>,
    /// Row-major `n x m` input matrix.
    pub g_x: Vec<Vec<f64>>,
    pub u_ref: Vec<f64>,
    /// Per-input `(lo, hi)` bounds.
    pub input_box: Vec<(f64, f64)>,
    pub barriers: Vec<AffineBarrier>,
    /// Componentwise disturbance bound; zeros mean noiseless.
    pub w_bound: Vec<f64>,
    /// Slack weight for the relaxed programs.
    pub big_m: f64,
}

impl QpProblem {
    pub fn validate(&self) -> Result<(), CbfError> {
        let n = self.x.len();
        let m = self.u_ref.len();
        if self.f_x.len() != n || self.g_x.len() != n || self.w_bound.len() != n {
            return Err(CbfError::DimensionMismatch);
        }
        if self.g_x.iter().any(|r| r.len() != m) || self.input_box.len() != m {
            return Err(CbfError::DimensionMismatch);
        }
        if self.barriers.iter().any(|b| b.p.len() != n) {
            return Err(CbfError::DimensionMismatch);
        }
        if self.input_box.iter().any(|&(lo, hi)| lo > hi) {
            return Err(CbfError::EmptyInputBox);
        }
        Ok(())
    }

    /// Robustification offsets, one per barrier, for this problem's bound.
    pub fn noise_terms(&self) -> Vec<f64> {
        self.barriers
            .iter()
            .map(|b| b.robust_margin(&self.w_bound))
            .collect()
    }

    fn rows(&self, with_slack: bool, with_noise: bool) -> Result<Vec<QpRow>, CbfError> {
        let m = self.u_ref.len();
        let dim = if with_slack { m + 1 } else { m };
        let mut rows = Vec::with_capacity(self.barriers.len() + 2 * m + 1);
        for b in &self.barriers {
            let margin = if with_noise { b.robust_margin(&self.w_bound) } else { 0.0 };
            let r = cbf_row(b, &self.x, &self.f_x, &self.g_x, margin)?;
            let mut coeffs = r.u_coeffs;
            if with_slack {
                coeffs.push(r.slack_coeff);
            }
            rows.push(QpRow { coeffs, rhs: r.rhs });
        }
        for (j, &(lo, hi)) in self.input_box.iter().enumerate() {
            let mut c = vec![0.0; dim];
            c[j] = 1.0;
            rows.push(QpRow { coeffs: c.clone(), rhs: lo });
            c[j] = -1.0;
            rows.push(QpRow { coeffs: c, rhs: -hi });
        }
        if with_slack {
            let mut c = vec![0.0; dim];
            c[m] = 1.0;
            rows.push(QpRow { coeffs: c, rhs: 0.0 });
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub zeta: f64,
    pub feasible: bool,
    pub objective: f64,
}

fn clamp_ref(p: &QpProblem) -> Vec<f64> {
    p.u_ref
        .iter()
        .zip(&p.input_box)
        .map(|(&r, &(lo, hi))| r.clamp(lo, hi))
        .collect()
}

/// Minimum deviation from the reference subject to every barrier row
/// held hard. `feasible == false` reports that no admissible input
/// satisfies the rows; `u` then falls back to the clamped reference.
/// Disturbance margins apply whenever the problem carries a nonzero
/// bound, so this doubles as the tightened feasibility test.
pub fn solve_strict(p: &QpProblem) -> Result<QpSolution, CbfError> {
    p.validate()?;
    let qp = DenseQp {
        dim: p.u_ref.len(),
        u_dim: p.u_ref.len(),
        u_ref: p.u_ref.clone(),
        slack_weight: 0.0,
        rows: p.rows(false, true)?,
    };
    Ok(match solve_dense(&qp) {
        Some(sol) => QpSolution {
            u: sol.z,
            zeta: 0.0,
            feasible: true,
            objective: sol.objective,
        },
        None => QpSolution {
            u: clamp_ref(p),
            zeta: 0.0,
            feasible: false,
            objective: f64::INFINITY,
        },
    })
}

/// The slack-relaxed program: barrier rows soften by one shared `zeta`
/// weighted by `big_m` in the objective. Disturbance margins are not
/// applied; see [`solve_noise_robust`].
pub fn solve_relaxed(p: &QpProblem) -> Result<QpSolution, CbfError> {
    solve_with_slack(p, false)
}

/// The slack-relaxed program with every barrier row tightened by its
/// robustification margin. With a zero bound this coincides with
/// [`solve_relaxed`].
pub fn solve_noise_robust(p: &QpProblem) -> Result<QpSolution, CbfError> {
    solve_with_slack(p, true)
}

fn solve_with_slack(p: &QpProblem, with_noise: bool) -> Result<QpSolution, CbfError> {
    p.validate()?;
    let m = p.u_ref.len();
    let qp = DenseQp {
        dim: m + 1,
        u_dim: m,
        u_ref: p.u_ref.clone(),
        slack_weight: p.big_m,
        rows: p.rows(true, with_noise)?,
    };
    // The box is nonempty and the slack unbounded-above, so this cannot
    // fail; treat a miss as the numerical emergency it would be.
    let sol = solve_dense(&qp).ok_or(CbfError::EmptyInputBox)?;
    Ok(QpSolution {
        u: sol.z[..m].to_vec(),
        zeta: sol.z[m].max(0.0),
        feasible: true,
        objective: sol.objective,
    })
}

/// Certificate that a recorded trajectory stayed inside the (shifted)
/// safe set of every barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceCertificate {
    /// Largest slack observed while the trajectory was generated.
    pub z_max: f64,
    /// Largest shift `z_max / eta` over the barrier set.
    pub shifted_offset: f64,
    pub holds: bool,
    /// Index of the first offending state, if any.
    pub first_violation: Option<usize>,
}

/// Checks `h_b(x_t) + z_max/eta_b >= -tol` for every state and barrier,
/// and the decay chain `h'_b(x_{t+1}) >= (1 - eta_b) h'_b(x_t) - tol`
/// on consecutive pairs, where `h' = h + z_max/eta_b`.
pub fn certify_forward_invariance(
    trajectory: &[Vec<f64>],
    barriers: &[AffineBarrier],
    z_max: f64,
    tol: f64,
) -> Result<InvarianceCertificate, CbfError> {
    if trajectory.is_empty() {
        return Err(CbfError::EmptyTrajectory);
    }
    if z_max > 0.0 && barriers.iter().any(|b| b.eta == 0.0) {
        return Err(CbfError::ZeroEtaWithSlack);
    }
    let mut shifted_offset = 0.0f64;
    let mut first_violation = None;

    'scan: for (t, x) in trajectory.iter().enumerate() {
        for b in barriers {
            let shift = if z_max > 0.0 { z_max / b.eta } else { 0.0 };
            shifted_offset = shifted_offset.max(shift);
            let h = b.h_value(x)? + shift;
            if h < -tol {
                first_violation = Some(t);
                break 'scan;
            }
            if t + 1 < trajectory.len() {
                let h_next = b.h_value(&trajectory[t + 1])? + shift;
                if h_next < (1.0 - b.eta) * h - tol {
                    first_violation = Some(t + 1);
                    break 'scan;
                }
            }
        }
    }
    // Make the reported offset independent of where a violation stopped
    // the scan.
    if z_max > 0.0 {
        for b in barriers {
            shifted_offset = shifted_offset.max(z_max / b.eta);
        }
    }
    Ok(InvarianceCertificate {
        z_max,
        shifted_offset,
        holds: first_violation.is_none(),
        first_violation,
    })
}

/// Shared feasibility tolerance, re-exported for callers that check
/// solutions against rows themselves.
pub const FEASIBILITY_TOL: f64 = FEAS_TOL;

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(u_lo: f64, u_hi: f64, u_ref: f64, eta: f64, x: f64, f_x: f64) -> QpProblem {
        QpProblem {
            x: vec![x],
            f_x: vec![f_x],
            g_x: vec![vec![1.0]],
            u_ref: vec![u_ref],
            input_box: vec![(u_lo, u_hi)],
            barriers: vec![AffineBarrier::new(vec![1.0], 0.0, eta).unwrap()],
            w_bound: vec![0.0],
            big_m: 1e6,
        }
    }

    #[test]
    fn h_value_is_affine() {
        let b = AffineBarrier::new(vec![1.0, -2.0], 3.0, 0.2).unwrap();
        assert_eq!(b.h_value(&[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(b.h_value(&[0.0, 0.0]).unwrap(), 3.0);
        assert_eq!(b.h_value(&[1.0]), Err(CbfError::DimensionMismatch));
    }

    #[test]
    fn constructor_rejects_bad_barriers() {
        assert_eq!(
            AffineBarrier::new(vec![0.0, 0.0], 1.0, 0.5).unwrap_err(),
            CbfError::ZeroNormal
        );
        assert_eq!(
            AffineBarrier::new(vec![1.0], 1.0, 1.5).unwrap_err(),
            CbfError::EtaOutOfRange
        );
    }

    #[test]
    fn robust_margin_uses_absolute_normals() {
        let b = AffineBarrier::new(vec![1.0, -3.0], 0.0, 0.5).unwrap();
        assert_eq!(b.robust_margin(&[0.1, 0.1]), 0.4);
        assert_eq!(b.robust_margin(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn scalar_row_matches_hand_derivation() {
        // f(x) = x, g = 1, p = 1, q = 0, eta = 0.5, x = 1:
        // u >= (1 - eta) h - f = 0.5 - 1 = -0.5.
        let b = AffineBarrier::new(vec![1.0], 0.0, 0.5).unwrap();
        let row = cbf_row(&b, &[1.0], &[1.0], &[vec![1.0]], 0.0).unwrap();
        assert_eq!(row.u_coeffs, vec![1.0]);
        assert_eq!(row.rhs, -0.5);

        let with_margin = cbf_row(&b, &[1.0], &[1.0], &[vec![1.0]], 0.1).unwrap();
        assert_eq!(with_margin.rhs, -0.4);
    }

    #[test]
    fn strict_projects_reference_onto_row() {
        // Same scalar system; reference -2 is cut off at -0.5.
        let p = scalar_problem(-10.0, 10.0, -2.0, 0.5, 1.0, 1.0);
        let sol = solve_strict(&p).unwrap();
        assert!(sol.feasible);
        assert!((sol.u[0] + 0.5).abs() < 1e-10);

        // Interior reference passes through untouched.
        let p = scalar_problem(-10.0, 10.0, 0.3, 0.5, 1.0, 1.0);
        let sol = solve_strict(&p).unwrap();
        assert_eq!(sol.u, vec![0.3]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn strict_reports_infeasible_when_box_too_small() {
        // Row demands u >= -0.5 scaled up: shrink the box below the need.
        // h = x = 0.1, eta = 0.5, f_x = -0.9: u >= 0.05 + 0.9 = 0.95 > 0.5.
        let p = scalar_problem(0.0, 0.5, 0.0, 0.5, 0.1, -0.9);
        let sol = solve_strict(&p).unwrap();
        assert!(!sol.feasible);
        assert_eq!(sol.u, vec![0.0], "falls back to the clamped reference");
        assert!(sol.objective.is_infinite());
    }

    #[test]
    fn relaxed_matches_worked_scalar_example() {
        let p = scalar_problem(0.0, 0.5, 0.0, 0.5, 0.1, -0.9);
        let sol = solve_relaxed(&p).unwrap();
        assert!(sol.feasible);
        assert!((sol.u[0] - 0.5).abs() < 1e-9, "input saturates before slack engages");
        assert!((sol.zeta - 0.45).abs() < 1e-9);
    }

    #[test]
    fn relaxed_slack_vanishes_when_strict_is_feasible() {
        let p = scalar_problem(-10.0, 10.0, -2.0, 0.5, 1.0, 1.0);
        let strict = solve_strict(&p).unwrap();
        let relaxed = solve_relaxed(&p).unwrap();
        assert!(relaxed.zeta.abs() < 1e-10);
        assert!((relaxed.u[0] - strict.u[0]).abs() < 1e-9);
    }

    #[test]
    fn bigger_penalty_never_increases_slack() {
        let mut p = scalar_problem(0.0, 0.5, 0.0, 0.5, 0.1, -0.9);
        let mut last = f64::INFINITY;
        // Tolerance scales with M: the KKT system carries M on its right
        // hand side, so the recovered slack wobbles at M * machine eps.
        for m in [1.0, 10.0, 1e3, 1e6, 1e9] {
            p.big_m = m;
            let sol = solve_relaxed(&p).unwrap();
            assert!(sol.zeta <= last + 1e-6, "zeta must be nonincreasing in M");
            last = sol.zeta;
        }
    }

    #[test]
    fn zero_bound_noise_solver_equals_relaxed() {
        let p = scalar_problem(0.0, 0.5, 0.3, 0.5, 0.1, -0.9);
        let a = solve_relaxed(&p).unwrap();
        let b = solve_noise_robust(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_margin_shifts_scalar_solution() {
        let mut p = scalar_problem(-10.0, 10.0, -2.0, 0.5, 1.0, 1.0);
        p.w_bound = vec![0.1];
        let plain = solve_relaxed(&p).unwrap();
        let robust = solve_noise_robust(&p).unwrap();
        assert!((plain.u[0] + 0.5).abs() < 1e-9);
        assert!((robust.u[0] + 0.4).abs() < 1e-9, "row rhs gains the margin");
    }

    #[test]
    fn robust_feasible_points_satisfy_plain_rows() {
        // Tightened rows imply the untightened ones: spot-check by
        // scanning a grid of candidate inputs on a random-ish instance.
        let mut p = scalar_problem(-3.0, 3.0, 0.0, 0.3, 0.7, 0.2);
        p.w_bound = vec![0.05];
        let b = &p.barriers[0];
        let margin = b.robust_margin(&p.w_bound);
        let row = cbf_row(b, &p.x, &p.f_x, &p.g_x, margin).unwrap();
        let plain = cbf_row(b, &p.x, &p.f_x, &p.g_x, 0.0).unwrap();
        let mut robust_feasible = 0;
        for k in 0..=600 {
            let u = -3.0 + k as f64 * 0.01;
            if row.u_coeffs[0] * u >= row.rhs {
                robust_feasible += 1;
                assert!(plain.u_coeffs[0] * u >= plain.rhs);
            }
        }
        assert!(robust_feasible > 0, "containment check must not be vacuous");
    }

    #[test]
    fn certificate_accepts_decaying_scalar_run() {
        let b = AffineBarrier::new(vec![1.0], 0.0, 0.2).unwrap();
        // h shrinks by exactly (1 - eta) each step: the boundary case.
        let mut traj = Vec::new();
        let mut h = 1.0;
        for _ in 0..50 {
            traj.push(vec![h]);
            h *= 0.8;
        }
        let cert = certify_forward_invariance(&traj, &[b], 0.0, 1e-9).unwrap();
        assert!(cert.holds);
        assert_eq!(cert.first_violation, None);
        assert_eq!(cert.shifted_offset, 0.0);
    }

    #[test]
    fn certificate_flags_breach_of_shifted_set() {
        let b = AffineBarrier::new(vec![1.0], 0.0, 0.2).unwrap();
        let z = 0.1;
        // h = -z/eta - 0.01 sits just outside the shifted set.
        let traj = vec![vec![-z / 0.2 - 0.01]];
        let cert = certify_forward_invariance(&traj, &[b], z, 1e-9).unwrap();
        assert!(!cert.holds);
        assert_eq!(cert.first_violation, Some(0));
    }

    #[test]
    fn certificate_flags_too_fast_decay() {
        let b = AffineBarrier::new(vec![1.0], 0.0, 0.2).unwrap();
        // Second state drops below (1 - eta) h0.
        let traj = vec![vec![1.0], vec![0.7]];
        let cert = certify_forward_invariance(&traj, &[b], 0.0, 1e-9).unwrap();
        assert!(!cert.holds);
        assert_eq!(cert.first_violation, Some(1));
    }

    #[test]
    fn certificate_rejects_zero_eta_with_slack() {
        let b = AffineBarrier::new(vec![1.0], 0.0, 0.0).unwrap();
        let err = certify_forward_invariance(&[vec![1.0]], &[b], 0.5, 1e-9).unwrap_err();
        assert_eq!(err, CbfError::ZeroEtaWithSlack);
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        let b = AffineBarrier::new(vec![1.0], 0.0, 0.2).unwrap();
        assert_eq!(
            certify_forward_invariance(&[], &[b], 0.0, 1e-9).unwrap_err(),
            CbfError::EmptyTrajectory
        );
    }
}
