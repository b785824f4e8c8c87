//! Discrete-time kinematic bicycle model.
//!
//! State `x = [p_x, p_y, psi, v]`: arc position along the road, lateral
//! position, heading, speed. Input `u = [tan_delta, accel]`: tangent of
//! the front steering angle and longitudinal acceleration. One explicit
//! Euler step of the model splits control-affinely as
//!
//! ```text
//! x' = f(x) + g(x) u
//! f(x) = [p_x + v cos(psi) Ts,  p_y + v sin(psi) Ts,  psi,  v]
//! g(x) = [[0, 0], [0, 0], [v Ts / L, 0], [0, Ts]]
//! ```
//!
//! The split is exposed because the safety layer consumes `f` and `g`
//! directly, not just the composed step.

use rand::Rng;

use crate::rngs::ChaCha12Rng;

pub const STATE_DIM: usize = 4;
pub const INPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub p_x: f64,
    pub p_y: f64,
    pub psi: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(p_x: f64, p_y: f64, psi: f64, v: f64) -> Self {
        Self { p_x, p_y, psi: normalize_angle(psi), v }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.p_x, self.p_y, self.psi, self.v]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

/// Control input, kept in the same component order as the vector `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub tan_delta: f64,
    pub accel: f64,
}

impl ControlInput {
    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [self.tan_delta, self.accel]
    }

    pub fn from_array(a: [f64; INPUT_DIM]) -> Self {
        Self { tan_delta: a[0], accel: a[1] }
    }

    pub fn is_finite(&self) -> bool {
        self.tan_delta.is_finite() && self.accel.is_finite()
    }
}

/// Admissible input region, a box in (tan_delta, accel) space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBox {
    pub tan_delta_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
}

impl Default for InputBox {
    fn default() -> Self {
        Self { tan_delta_max: 0.45, accel_min: -8.0, accel_max: 3.0 }
    }
}

impl InputBox {
    /// Per-dimension `(lo, hi)` bounds in `u` order.
    pub fn bounds(&self) -> [(f64, f64); INPUT_DIM] {
        [
            (-self.tan_delta_max, self.tan_delta_max),
            (self.accel_min, self.accel_max),
        ]
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            tan_delta: u.tan_delta.clamp(-self.tan_delta_max, self.tan_delta_max),
            accel: u.accel.clamp(self.accel_min, self.accel_max),
        }
    }

    pub fn contains(&self, u: ControlInput, tol: f64) -> bool {
        u.tan_delta.abs() <= self.tan_delta_max + tol
            && u.accel >= self.accel_min - tol
            && u.accel <= self.accel_max + tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleParams {
    /// Wheelbase L.
    pub wheelbase: f64,
    /// Control period Ts in seconds.
    pub ts: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self { wheelbase: 2.5, ts: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsError {
    NonFiniteState,
    NonFiniteInput,
}

impl core::fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DynamicsError::NonFiniteState => write!(f, "state has non-finite components"),
            DynamicsError::NonFiniteInput => write!(f, "input has non-finite components"),
        }
    }
}

/// Drift part `f(x)` of one Euler step.
pub fn f_bicycle(x: &VehicleState, p: &BicycleParams) -> [f64; STATE_DIM] {
    [
        x.p_x + x.v * libm::cos(x.psi) * p.ts,
        x.p_y + x.v * libm::sin(x.psi) * p.ts,
        x.psi,
        x.v,
    ]
}

/// Input matrix `g(x)`, row-major 4 x 2.
pub fn g_bicycle(x: &VehicleState, p: &BicycleParams) -> [[f64; INPUT_DIM]; STATE_DIM] {
    [
        [0.0, 0.0],
        [0.0, 0.0],
        [x.v * p.ts / p.wheelbase, 0.0],
        [0.0, p.ts],
    ]
}

/// One noiseless step. `road_length` wraps the arc position; pass
/// `f64::INFINITY` for an unbounded road. Heading is renormalized.
pub fn step(
    x: &VehicleState,
    u: &ControlInput,
    p: &BicycleParams,
    road_length: f64,
) -> Result<VehicleState, DynamicsError> {
    if !x.is_finite() {
        return Err(DynamicsError::NonFiniteState);
    }
    if !u.is_finite() {
        return Err(DynamicsError::NonFiniteInput);
    }
    let f = f_bicycle(x, p);
    let g = g_bicycle(x, p);
    let ua = u.to_array();
    let mut next = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        next[i] = f[i] + g[i][0] * ua[0] + g[i][1] * ua[1];
    }
    Ok(VehicleState {
        p_x: wrap_position(next[0], road_length),
        p_y: next[1],
        psi: normalize_angle(next[2]),
        v: next[3],
    })
}

/// Componentwise disturbance bound and its seeded sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Bound `|w_i| <= w[i]` per state component; all zero means noiseless.
    pub w: [f64; STATE_DIM],
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> Self {
        Self { w: [0.0; STATE_DIM], seed }
    }

    pub fn uniform(bound: f64, seed: u64) -> Self {
        Self { w: [bound; STATE_DIM], seed }
    }

    pub fn is_zero(&self) -> bool {
        self.w.iter().all(|&b| b == 0.0)
    }
}

/// Stateful draw stream for [`NoiseSpec`]. Fixed seed, fixed sequence.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    w: [f64; STATE_DIM],
    rng: ChaCha12Rng,
}

impl NoiseSampler {
    pub fn new(spec: &NoiseSpec) -> Self {
        Self {
            w: spec.w,
            rng: crate::rngs::stream(spec.seed, crate::rngs::StreamId::Noise),
        }
    }

    /// Sampler driven by an externally owned stream (checkpointed runs).
    pub fn with_rng(w: [f64; STATE_DIM], rng: ChaCha12Rng) -> Self {
        Self { w, rng }
    }

    pub fn bound(&self) -> [f64; STATE_DIM] {
        self.w
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }

    /// One disturbance vector, componentwise uniform in `[-w_i, w_i]`.
    pub fn draw(&mut self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            let u: f64 = self.rng.gen();
            out[i] = self.w[i] * (2.0 * u - 1.0);
        }
        out
    }
}

/// One step with additive bounded disturbance on every state component.
pub fn step_noisy(
    x: &VehicleState,
    u: &ControlInput,
    p: &BicycleParams,
    road_length: f64,
    noise: &mut NoiseSampler,
) -> Result<VehicleState, DynamicsError> {
    let clean = step(x, u, p, road_length)?;
    let w = noise.draw();
    Ok(VehicleState {
        p_x: wrap_position(clean.p_x + w[0], road_length),
        p_y: clean.p_y + w[1],
        psi: normalize_angle(clean.psi + w[2]),
        v: clean.v + w[3],
    })
}

/// Wraps into `[0, len)`. An infinite `len` leaves the value alone.
pub fn wrap_position(x: f64, len: f64) -> f64 {
    if !len.is_finite() {
        return x;
    }
    let w = x - len * libm::floor(x / len);
    // floor rounding can land exactly on len.
    if w >= len { w - len } else { w }
}

/// Normalizes an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -core::f64::consts::PI {
        r += two_pi;
    } else if r > core::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BicycleParams {
        BicycleParams { wheelbase: 2.5, ts: 0.01 }
    }

    #[test]
    fn drift_moves_along_heading() {
        let x = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let f = f_bicycle(&x, &params());
        assert_eq!(f, [0.1, 0.0, 0.0, 10.0]);

        let x = VehicleState::new(1.0, 2.0, core::f64::consts::FRAC_PI_2, 5.0);
        let f = f_bicycle(&x, &params());
        assert!((f[0] - 1.0).abs() < 1e-12, "pure lateral heading leaves p_x alone");
        assert!((f[1] - 2.05).abs() < 1e-12);
    }

    #[test]
    fn input_matrix_structure() {
        let x = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let g = g_bicycle(&x, &params());
        assert_eq!(g[0], [0.0, 0.0]);
        assert_eq!(g[1], [0.0, 0.0]);
        assert!((g[2][0] - 0.04).abs() < 1e-15, "steering gain is v*Ts/L");
        assert_eq!(g[2][1], 0.0);
        assert_eq!(g[3], [0.0, 0.01]);
    }

    #[test]
    fn step_matches_affine_composition() {
        // x' must equal f(x) + g(x) u exactly, for random states and inputs.
        let mut rng = crate::rngs::stream(3, crate::rngs::StreamId::Scene);
        for _ in 0..200 {
            let x = VehicleState::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..35.0),
            );
            let u = ControlInput {
                tan_delta: rng.gen_range(-0.45..0.45),
                accel: rng.gen_range(-8.0..3.0),
            };
            let p = params();
            let next = step(&x, &u, &p, f64::INFINITY).unwrap();
            let f = f_bicycle(&x, &p);
            let g = g_bicycle(&x, &p);
            let expect = [
                f[0] + g[0][0] * u.tan_delta + g[0][1] * u.accel,
                f[1] + g[1][0] * u.tan_delta + g[1][1] * u.accel,
                f[2] + g[2][0] * u.tan_delta + g[2][1] * u.accel,
                f[3] + g[3][0] * u.tan_delta + g[3][1] * u.accel,
            ];
            assert!((next.p_x - expect[0]).abs() <= 1e-12);
            assert!((next.p_y - expect[1]).abs() <= 1e-12);
            assert!((next.psi - normalize_angle(expect[2])).abs() <= 1e-12);
            assert!((next.v - expect[3]).abs() <= 1e-12);
        }
    }

    #[test]
    fn steering_turns_heading() {
        let x = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let u = ControlInput { tan_delta: 0.25, accel: 0.0 };
        let next = step(&x, &u, &params(), f64::INFINITY).unwrap();
        assert!((next.psi - 0.01).abs() < 1e-15, "psi' = v*Ts/L * tan_delta");
        assert_eq!(next.v, 10.0);
    }

    #[test]
    fn acceleration_changes_speed_only() {
        let x = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let u = ControlInput { tan_delta: 0.0, accel: 2.0 };
        let next = step(&x, &u, &params(), f64::INFINITY).unwrap();
        assert_eq!(next.v, 10.02);
        assert_eq!(next.psi, 0.0);
    }

    #[test]
    fn position_wraps_on_ring() {
        let x = VehicleState::new(199.95, 0.0, 0.0, 10.0);
        let u = ControlInput { tan_delta: 0.0, accel: 0.0 };
        let next = step(&x, &u, &params(), 200.0).unwrap();
        assert!(next.p_x >= 0.0 && next.p_x < 200.0);
        assert!((next.p_x - 0.05).abs() < 1e-10);
    }

    #[test]
    fn rejects_non_finite() {
        let p = params();
        let bad = VehicleState { p_x: f64::NAN, p_y: 0.0, psi: 0.0, v: 0.0 };
        let u = ControlInput { tan_delta: 0.0, accel: 0.0 };
        assert_eq!(step(&bad, &u, &p, 1e3), Err(DynamicsError::NonFiniteState));
        let x = VehicleState::new(0.0, 0.0, 0.0, 1.0);
        let bad_u = ControlInput { tan_delta: f64::INFINITY, accel: 0.0 };
        assert_eq!(step(&x, &bad_u, &p, 1e3), Err(DynamicsError::NonFiniteInput));
    }

    #[test]
    fn zero_noise_bound_reduces_to_clean_step() {
        let p = params();
        let mut sampler = NoiseSampler::new(&NoiseSpec::noiseless(9));
        let mut x = VehicleState::new(3.0, 2.0, 0.1, 12.0);
        let u = ControlInput { tan_delta: 0.1, accel: 1.0 };
        for _ in 0..50 {
            let clean = step(&x, &u, &p, 200.0).unwrap();
            let noisy = step_noisy(&x, &u, &p, 200.0, &mut sampler).unwrap();
            assert_eq!(clean, noisy);
            x = noisy;
        }
    }

    #[test]
    fn noise_stays_within_bound() {
        let spec = NoiseSpec { w: [0.01, 0.02, 0.005, 0.03], seed: 11 };
        let mut sampler = NoiseSampler::new(&spec);
        for _ in 0..100_000 {
            let w = sampler.draw();
            for i in 0..STATE_DIM {
                assert!(w[i].abs() <= spec.w[i] + 1e-15);
            }
        }
    }

    #[test]
    fn noise_sequence_is_reproducible() {
        let spec = NoiseSpec::uniform(0.01, 77);
        let mut a = NoiseSampler::new(&spec);
        let mut b = NoiseSampler::new(&spec);
        for _ in 0..1000 {
            assert_eq!(a.draw(), b.draw());
        }
    }

    #[test]
    fn angle_normalization_range() {
        for k in -20..20 {
            let a = 0.7 + k as f64 * core::f64::consts::PI;
            let n = normalize_angle(a);
            assert!(n > -core::f64::consts::PI && n <= core::f64::consts::PI);
        }
        assert_eq!(normalize_angle(core::f64::consts::PI), core::f64::consts::PI);
        assert!(
            normalize_angle(-core::f64::consts::PI) > 0.0,
            "-pi maps to +pi in the half-open convention"
        );
    }
}
