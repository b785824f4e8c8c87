//! Geometric reference solver for the small inequality-constrained QPs.
//!
//! The production solver enumerates active sets and verifies KKT
//! conditions. Here we instead solve the same problems by construction:
//!
//! * one input: clip an interval and clamp the reference into it;
//! * two inputs: clip the input box against every half-plane
//!   (Sutherland–Hodgman) and project the reference onto the resulting
//!   polygon;
//! * slack-relaxed: a golden-section search over the shared slack, where
//!   each probe re-solves the strict problem with shifted right-hand
//!   sides. The probed function `psi(z) + M z` is convex because it is
//!   the partial minimization of a convex objective over a polyhedron,
//!   so the search is exact up to floating-point resolution.
//!
//! A dense grid would not work in place of the search: with slack
//! weights around `1e6`, grid spacing `d` costs `1e6 * d` in objective,
//! which can never certify a `1e-6` comparison.

use rand::Rng;

/// Inequalities are `a . u >= b`.
pub type Row = (Vec<f64>, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub u: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedOracleSolution {
    pub u: Vec<f64>,
    pub zeta: f64,
    pub objective: f64,
}

/// `min ||u - u_ref||^2` over the box intersected with all rows.
/// `None` means the region is empty. Supports one or two inputs.
pub fn strict(u_ref: &[f64], bounds: &[(f64, f64)], rows: &[Row]) -> Option<OracleSolution> {
    match u_ref.len() {
        1 => strict_interval(u_ref[0], bounds[0], rows),
        2 => strict_polygon(u_ref, bounds, rows),
        d => panic!("oracle supports 1 or 2 inputs, got {d}"),
    }
}

fn strict_interval(u_ref: f64, (mut lo, mut hi): (f64, f64), rows: &[Row]) -> Option<OracleSolution> {
    for (a, b) in rows {
        let a = a[0];
        if a == 0.0 {
            if *b > 0.0 {
                return None;
            }
        } else if a > 0.0 {
            lo = lo.max(b / a);
        } else {
            hi = hi.min(b / a);
        }
    }
    if lo > hi {
        return None;
    }
    let u = u_ref.clamp(lo, hi);
    Some(OracleSolution {
        objective: (u - u_ref) * (u - u_ref),
        u: vec![u],
    })
}

fn strict_polygon(u_ref: &[f64], bounds: &[(f64, f64)], rows: &[Row]) -> Option<OracleSolution> {
    let (x, y) = (bounds[0], bounds[1]);
    if x.0 > x.1 || y.0 > y.1 {
        return None;
    }
    // Counterclockwise box corners; each clip keeps the >= side.
    let mut poly = vec![[x.0, y.0], [x.1, y.0], [x.1, y.1], [x.0, y.1]];
    for (a, b) in rows {
        poly = clip_halfplane(&poly, [a[0], a[1]], *b);
        if poly.is_empty() {
            return None;
        }
    }
    let inside_rows = rows
        .iter()
        .all(|(a, b)| a[0] * u_ref[0] + a[1] * u_ref[1] >= *b);
    let inside_box = (x.0..=x.1).contains(&u_ref[0]) && (y.0..=y.1).contains(&u_ref[1]);
    if inside_rows && inside_box {
        return Some(OracleSolution {
            u: u_ref.to_vec(),
            objective: 0.0,
        });
    }
    // Reference is outside: nearest point lies on the boundary, so scan
    // every edge (degenerate polygons reduce to points or segments and
    // are covered by the same loop).
    let mut best: Option<([f64; 2], f64)> = None;
    let n = poly.len();
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let cand = project_segment([u_ref[0], u_ref[1]], s, e);
        let d = (cand[0] - u_ref[0]).powi(2) + (cand[1] - u_ref[1]).powi(2);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((cand, d));
        }
    }
    best.map(|(u, d)| OracleSolution {
        u: u.to_vec(),
        objective: d,
    })
}

fn clip_halfplane(poly: &[[f64; 2]], a: [f64; 2], b: f64) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| a[0] * p[0] + a[1] * p[1] - b;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let s = poly[i];
        let e = poly[(i + 1) % poly.len()];
        let (fs, fe) = (side(s), side(e));
        if fs >= 0.0 {
            out.push(s);
            if fe < 0.0 {
                out.push(crossing(s, e, fs, fe));
            }
        } else if fe >= 0.0 {
            out.push(crossing(s, e, fs, fe));
        }
    }
    out
}

fn crossing(s: [f64; 2], e: [f64; 2], fs: f64, fe: f64) -> [f64; 2] {
    let t = fs / (fs - fe);
    [s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]
}

fn project_segment(p: [f64; 2], s: [f64; 2], e: [f64; 2]) -> [f64; 2] {
    let d = [e[0] - s[0], e[1] - s[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return s;
    }
    let t = (((p[0] - s[0]) * d[0] + (p[1] - s[1]) * d[1]) / len2).clamp(0.0, 1.0);
    [s[0] + t * d[0], s[1] + t * d[1]]
}

/// `min ||u - u_ref||^2 + big_m * z` over the box, `z >= 0`, and every
/// row softened to `a . u >= b - z`. The box is hard; a degenerate box
/// yields `None`.
pub fn relaxed(
    u_ref: &[f64],
    bounds: &[(f64, f64)],
    rows: &[Row],
    big_m: f64,
) -> Option<RelaxedOracleSolution> {
    // Beyond z_hi every softened row holds everywhere in the box, so the
    // optimum never lies to its right.
    let mut z_hi = 0.0f64;
    for (a, b) in rows {
        let min_au: f64 = a
            .iter()
            .zip(bounds)
            .map(|(&ai, &(lo, hi))| (ai * lo).min(ai * hi))
            .sum();
        z_hi = z_hi.max(b - min_au);
    }
    let probe = |z: f64| -> (f64, Option<OracleSolution>) {
        let shifted: Vec<Row> = rows
            .iter()
            .map(|(a, b)| (a.clone(), b - z))
            .collect();
        match strict(u_ref, bounds, &shifted) {
            Some(sol) => (sol.objective + big_m * z, Some(sol)),
            None => (f64::INFINITY, None),
        }
    };

    let mut best_z = 0.0;
    let mut best_phi = probe(0.0).0;
    let consider = |z: f64, phi: f64, best_z: &mut f64, best_phi: &mut f64| {
        if phi < *best_phi {
            *best_phi = phi;
            *best_z = z;
        }
    };
    if z_hi > 0.0 {
        let (phi_hi, _) = probe(z_hi);
        consider(z_hi, phi_hi, &mut best_z, &mut best_phi);
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (0.0, z_hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = probe(c).0;
        let mut fd = probe(d).0;
        consider(c, fc, &mut best_z, &mut best_phi);
        consider(d, fd, &mut best_z, &mut best_phi);
        for _ in 0..120 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = probe(c).0;
                consider(c, fc, &mut best_z, &mut best_phi);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = probe(d).0;
                consider(d, fd, &mut best_z, &mut best_phi);
            }
        }
    }
    let (_, sol) = probe(best_z);
    sol.map(|s| RelaxedOracleSolution {
        u: s.u,
        zeta: best_z,
        objective: s.objective + big_m * best_z,
    })
}

/// A randomly drawn QP with reference, box, rows, and slack weight.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub u_ref: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub rows: Vec<Row>,
    pub big_m: f64,
}

/// Draws instances until one is numerically well-posed: at the oracle
/// optimum every row is either clearly active or clearly slack, the
/// solution keeps a clear distance from each box face it does not sit
/// on, and infeasible instances stay infeasible under a small
/// right-hand-side relaxation. Borderline draws would make oracle and
/// production solver legitimately disagree within tolerance, which is
/// noise, not signal.
pub fn random_instance(rng: &mut impl Rng, dim: usize) -> OracleInstance {
    loop {
        let inst = sample_raw(rng, dim);
        if well_posed(&inst) {
            return inst;
        }
    }
}

fn sample_raw(rng: &mut impl Rng, dim: usize) -> OracleInstance {
    assert!(dim == 1 || dim == 2);
    let mut bounds = Vec::with_capacity(dim);
    for _ in 0..dim {
        let c = rng.gen_range(-3.0..3.0);
        let w = rng.gen_range(0.5..4.0);
        bounds.push((c - w, c + w));
    }
    let u_ref: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| rng.gen_range(lo - 2.0..hi + 2.0))
        .collect();
    let n_rows = rng.gen_range(0..=4);
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut a: Vec<f64>;
        loop {
            a = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if a.iter().map(|c| c * c).sum::<f64>().sqrt() >= 0.3 {
                break;
            }
        }
        let center_dot: f64 = a
            .iter()
            .zip(&bounds)
            .map(|(ai, (lo, hi))| ai * 0.5 * (lo + hi))
            .sum();
        let b = if rng.gen_bool(0.25) {
            // Sometimes demand more than the box can give, to exercise
            // infeasibility handling.
            let max_au: f64 = a
                .iter()
                .zip(&bounds)
                .map(|(&ai, &(lo, hi))| (ai * lo).max(ai * hi))
                .sum();
            max_au + rng.gen_range(-0.5..1.5)
        } else {
            center_dot + rng.gen_range(-3.0..3.0)
        };
        rows.push((a, b));
    }
    let big_m = [1e2, 1e4, 1e6][rng.gen_range(0..3)];
    OracleInstance {
        u_ref,
        bounds,
        rows,
        big_m,
    }
}

const ACTIVE_BAND_LO: f64 = 1e-9;
const ACTIVE_BAND_HI: f64 = 1e-5;

fn banded(margin: f64) -> bool {
    margin > ACTIVE_BAND_LO && margin < ACTIVE_BAND_HI
}

fn solution_well_separated(inst: &OracleInstance, u: &[f64], zeta: f64) -> bool {
    for (a, b) in &inst.rows {
        let slack: f64 = a.iter().zip(u).map(|(a, u)| a * u).sum::<f64>() + zeta - b;
        if banded(slack.abs()) {
            return false;
        }
    }
    for (&(lo, hi), &ui) in inst.bounds.iter().zip(u) {
        if banded(ui - lo) || banded(hi - ui) {
            return false;
        }
    }
    !banded(zeta)
}

fn well_posed(inst: &OracleInstance) -> bool {
    match strict(&inst.u_ref, &inst.bounds, &inst.rows) {
        Some(sol) => {
            if !solution_well_separated(inst, &sol.u, 0.0) {
                return false;
            }
        }
        None => {
            // Reject instances whose infeasibility flips under a small
            // right-hand-side relaxation.
            let eased: Vec<Row> = inst
                .rows
                .iter()
                .map(|(a, b)| (a.clone(), b - ACTIVE_BAND_HI))
                .collect();
            if strict(&inst.u_ref, &inst.bounds, &eased).is_some() {
                return false;
            }
        }
    }
    match relaxed(&inst.u_ref, &inst.bounds, &inst.rows, inst.big_m) {
        Some(sol) => solution_well_separated(inst, &sol.u, sol.zeta),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn interval_clamps_reference() {
        let sol = strict(&[-2.0], &[(-10.0, 10.0)], &[(vec![1.0], -0.5)]).unwrap();
        assert_eq!(sol.u, vec![-0.5]);
        assert!((sol.objective - 2.25).abs() < 1e-12);
    }

    #[test]
    fn interval_detects_empty() {
        let rows = vec![(vec![1.0], 2.0), (vec![-1.0], 2.0)]; // u >= 2 and u <= -2
        assert!(strict(&[0.0], &[(-10.0, 10.0)], &rows).is_none());
    }

    #[test]
    fn polygon_interior_reference_is_fixed_point() {
        let rows = vec![(vec![1.0, 1.0], -1.0)];
        let sol = strict(&[0.2, 0.3], &[(-1.0, 1.0), (-1.0, 1.0)], &rows).unwrap();
        assert_eq!(sol.u, vec![0.2, 0.3]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn polygon_projects_onto_diagonal_cut() {
        // Half-plane x + y >= 1 inside a generous box; projecting the
        // origin gives (0.5, 0.5) at squared distance 0.5.
        let rows = vec![(vec![1.0, 1.0], 1.0)];
        let sol = strict(&[0.0, 0.0], &[(-5.0, 5.0), (-5.0, 5.0)], &rows).unwrap();
        assert!((sol.u[0] - 0.5).abs() < 1e-12);
        assert!((sol.u[1] - 0.5).abs() < 1e-12);
        assert!((sol.objective - 0.5).abs() < 1e-12);
    }

    #[test]
    fn polygon_corner_projection() {
        let sol = strict(&[3.0, 4.0], &[(-1.0, 1.0), (-1.0, 1.0)], &[]).unwrap();
        assert_eq!(sol.u, vec![1.0, 1.0]);
        assert!((sol.objective - 13.0).abs() < 1e-12);
    }

    #[test]
    fn polygon_detects_empty() {
        let rows = vec![(vec![1.0, 0.0], 2.0)]; // x >= 2 outside the box
        assert!(strict(&[0.0, 0.0], &[(-1.0, 1.0), (-1.0, 1.0)], &rows).is_none());
    }

    #[test]
    fn relaxed_hand_example() {
        // u in [0, 0.5], row u >= 0.95, M = 1e6: saturate u at 0.5 and
        // buy the remaining 0.45 with slack.
        let sol = relaxed(&[0.0], &[(0.0, 0.5)], &[(vec![1.0], 0.95)], 1e6).unwrap();
        assert!((sol.u[0] - 0.5).abs() < 1e-7);
        assert!((sol.zeta - 0.45).abs() < 1e-7);
        assert!((sol.objective - (0.25 + 0.45e6)).abs() < 1.0);
    }

    #[test]
    fn relaxed_prefers_zero_slack_when_feasible() {
        let sol = relaxed(&[-2.0], &[(-10.0, 10.0)], &[(vec![1.0], -0.5)], 1e6).unwrap();
        assert!(sol.zeta.abs() < 1e-9);
        assert!((sol.u[0] + 0.5).abs() < 1e-7);
    }

    #[test]
    fn relaxed_trades_deviation_against_cheap_slack() {
        // With M = 2 the optimum splits: minimizing (u)^2 + 2z subject
        // to u + z >= 1, u free in a wide box. Lagrangian gives u = 1,
        // z = 0 only if marginal cost 2u <= M at the boundary; here the
        // unconstrained balance point is u = 1, cost 2 per unit equals
        // M = 2, so any split between u = 1, z = 0 and u slightly less
        // is near-optimal with objective 1.0.
        let sol = relaxed(&[0.0], &[(-5.0, 5.0)], &[(vec![1.0], 1.0)], 2.0).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn generator_produces_well_posed_mix() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut feasible = 0;
        let mut infeasible = 0;
        for _ in 0..60 {
            let dim = 1 + (feasible + infeasible) % 2;
            let inst = random_instance(&mut rng, dim);
            match strict(&inst.u_ref, &inst.bounds, &inst.rows) {
                Some(_) => feasible += 1,
                None => infeasible += 1,
            }
        }
        assert!(feasible >= 10, "feasible draws: {feasible}");
        assert!(infeasible >= 10, "infeasible draws: {infeasible}");
    }
}
