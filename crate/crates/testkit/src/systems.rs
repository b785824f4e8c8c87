//! Random planar control systems whose safe sets are provably easy to
//! hold, used to exercise barrier filters over long horizons.
//!
//! Each draw is `x' = A x + c + B u` with `A = s R(theta)` for a gain
//! `s < 1`, so the uncontrolled part is a strict contraction and any
//! half-space containing a neighborhood of the fixed point admits an
//! invariance-preserving input once the box is generous enough.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSpec {
    pub p: Vec<f64>,
    pub q: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractiveSystem {
    pub a: [[f64; 2]; 2],
    pub c: [f64; 2],
    pub b: [[f64; 2]; 2],
    pub input_lo: [f64; 2],
    pub input_hi: [f64; 2],
    pub barriers: Vec<BarrierSpec>,
}

impl ContractiveSystem {
    pub fn f(&self, x: &[f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * x[0] + self.a[0][1] * x[1] + self.c[0],
            self.a[1][0] * x[0] + self.a[1][1] * x[1] + self.c[1],
        ]
    }

    pub fn step(&self, x: &[f64; 2], u: &[f64; 2]) -> [f64; 2] {
        let fx = self.f(x);
        [
            fx[0] + self.b[0][0] * u[0] + self.b[0][1] * u[1],
            fx[1] + self.b[1][0] * u[0] + self.b[1][1] * u[1],
        ]
    }
}

pub fn sample_contractive(rng: &mut impl Rng) -> ContractiveSystem {
    let s = rng.gen_range(0.5..0.95);
    let theta = rng.gen_range(0.0..core::f64::consts::TAU);
    let (sin, cos) = theta.sin_cos();
    let a = [[s * cos, -s * sin], [s * sin, s * cos]];
    let c = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
    let n_barriers = rng.gen_range(1..=3);
    let barriers = (0..n_barriers)
        .map(|_| {
            let ang = rng.gen_range(0.0..core::f64::consts::TAU);
            BarrierSpec {
                p: vec![ang.cos(), ang.sin()],
                q: rng.gen_range(0.5..2.0),
                eta: rng.gen_range(0.05..0.5),
            }
        })
        .collect();
    ContractiveSystem {
        a,
        c,
        b: [[1.0, 0.0], [0.0, 1.0]],
        input_lo: [-5.0, -5.0],
        input_hi: [5.0, 5.0],
        barriers,
    }
}

/// A state strictly inside every barrier of `sys`, with margin.
pub fn sample_start_state(rng: &mut impl Rng, sys: &ContractiveSystem) -> [f64; 2] {
    loop {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let ok = sys.barriers.iter().all(|b| {
            b.p[0] * x[0] + b.p[1] * x[1] + b.q >= 0.1
        });
        if ok {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn drift_is_a_contraction() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..50 {
            let sys = sample_contractive(&mut rng);
            // For a scaled rotation, |A x| = s |x| exactly.
            let x = [3.0, -4.0];
            let ax = [
                sys.a[0][0] * x[0] + sys.a[0][1] * x[1],
                sys.a[1][0] * x[0] + sys.a[1][1] * x[1],
            ];
            let norm = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
            assert!(norm(ax) < 0.95 * norm(x) + 1e-12);
            assert!(norm(ax) > 0.45 * norm(x));
        }
    }

    #[test]
    fn start_states_sit_inside_every_barrier() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..50 {
            let sys = sample_contractive(&mut rng);
            let x = sample_start_state(&mut rng, &sys);
            for b in &sys.barriers {
                assert!(b.p[0] * x[0] + b.p[1] * x[1] + b.q >= 0.1);
            }
        }
    }

    #[test]
    fn step_composes_drift_and_input() {
        let sys = ContractiveSystem {
            a: [[0.5, 0.0], [0.0, 0.5]],
            c: [0.1, -0.1],
            b: [[1.0, 0.0], [0.0, 1.0]],
            input_lo: [-5.0, -5.0],
            input_hi: [5.0, 5.0],
            barriers: vec![],
        };
        let x1 = sys.step(&[2.0, 4.0], &[0.3, -0.3]);
        assert!((x1[0] - 1.4).abs() < 1e-12 && (x1[1] - 1.6).abs() < 1e-12);
    }
}
