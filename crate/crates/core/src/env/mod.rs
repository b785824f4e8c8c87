//! Multi-lane ring-road traffic simulation.
//!
//! Time is organized in two scales: decisions happen once per epoch
//! (`ticks_per_epoch` dynamics ticks), controls are recomputed every tick.
//! [`env_epoch`] runs one full epoch: it applies per-vehicle decisions at
//! the boundary (safety-vetted for supervised runs), then advances the
//! tick loop and accumulates the population metrics that make up the
//! shared reward.
//!
//! Positions are rear bumpers on a ring of length `L`; the gap to a
//! leader is `wrap(leader.rear - ego.rear) - ego_len`, which goes
//! negative exactly on overlap, so there is no wrap seam to special-case.
//! Road closures enter every scan as virtual stopped vehicles but are
//! excluded from the headway/flow/comfort statistics.

pub mod idm;
pub mod metrics;

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::dynamics::{
    step_noisy, BicycleParams, ControlInput, InputBox, NoiseSampler, VehicleState, STATE_DIM,
};
use crate::planner::{
    self, Action, LaneGeometry, PlannerParams, Quintic, TrajectoryPlan, ACTION_COUNT,
};
use crate::rngs::{self, StreamId};
use crate::supervisor::{
    Executed, LaneNeighbors, NeighborInfo, NeighborSet, SupervisorContext, SupervisorParams,
};
use idm::{GapAcceptanceParams, IdmParams};
use metrics::{comfort_single, reward, traffic_flow};

/// A blocked stretch `[start, end)` of one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Closure {
    pub lane: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadConfig {
    pub length: f64,
    pub lane_count: usize,
    pub lane_width: f64,
    pub vehicle_length: f64,
    /// How far a vehicle can see leaders/followers (m of arc).
    pub sensing_range: f64,
    /// Communication radius for shared-speed averaging (m of arc).
    pub comm_range: f64,
    pub closures: Vec<Closure>,
}

impl Default for RoadConfig {
    fn default() -> Self {
        RoadConfig {
            length: 1000.0,
            lane_count: 3,
            lane_width: 4.0,
            vehicle_length: 4.0,
            sensing_range: 100.0,
            comm_range: 100.0,
            closures: Vec::new(),
        }
    }
}

impl RoadConfig {
    pub fn geometry(&self) -> LaneGeometry {
        LaneGeometry {
            lane_width: self.lane_width,
            lane_count: self.lane_count,
            road_length: self.length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Rl,
    Idm,
}

/// Whether reference controls pass through the safety filter or run raw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupervisionMode {
    Feedback,
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PopulationMode {
    AllRl,
    AllIdm,
    Mixed { rl_fraction: f64 },
}

/// Scripted lateral maneuver of a baseline vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmManeuver {
    pub lat: Quintic,
    pub from_lane: usize,
    pub target_lane: usize,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub state: VehicleState,
    pub kind: ControllerKind,
    /// Active trajectory plan (learning vehicles only).
    pub plan: Option<TrajectoryPlan>,
    /// Ticks since the plan was (re)built.
    pub plan_age: u32,
    /// Action attributed to the current epoch, for comfort and history.
    pub epoch_action: Action,
    pub in_es: bool,
    pub idm_maneuver: Option<IdmManeuver>,
    /// Source/target lanes of an in-flight lane change, for dual occupancy.
    pub change_span: Option<(usize, usize)>,
    /// Trailing per-epoch lane-change flags, newest at the back.
    pub change_history: VecDeque<bool>,
}

impl Vehicle {
    fn new(state: VehicleState, kind: ControllerKind) -> Self {
        Vehicle {
            state,
            kind,
            plan: None,
            plan_age: 0,
            epoch_action: Action::KeepLane,
            in_es: false,
            idm_maneuver: None,
            change_span: None,
            change_history: VecDeque::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub road: RoadConfig,
    pub bicycle: BicycleParams,
    pub bounds: InputBox,
    pub planner: PlannerParams,
    pub supervisor: SupervisorParams,
    pub idm: IdmParams,
    pub gap: GapAcceptanceParams,
    /// Componentwise dynamics disturbance bound (zero = noiseless).
    pub noise_bound: [f64; STATE_DIM],
    pub ticks_per_epoch: u32,
    /// Comfort threshold on |accel|.
    pub comfort_theta: f64,
    /// Weight of flow in the shared reward.
    pub flow_weight: f64,
    /// Trailing window (epochs) of the lane-change count fed back into
    /// observations.
    pub k_f: usize,
    pub mode: SupervisionMode,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            road: RoadConfig::default(),
            bicycle: BicycleParams::default(),
            bounds: InputBox::default(),
            planner: PlannerParams::default(),
            supervisor: SupervisorParams::default(),
            idm: IdmParams::default(),
            gap: GapAcceptanceParams::default(),
            noise_bound: [0.0; STATE_DIM],
            ticks_per_epoch: 50,
            comfort_theta: 1.0,
            flow_weight: 1.0,
            k_f: 10,
            mode: SupervisionMode::Feedback,
        }
    }
}

/// One slot in a per-lane positional scan.
#[derive(Debug, Clone, Copy)]
struct OccEntry {
    rear: f64,
    speed: f64,
    len: f64,
    /// `None` marks a virtual closure vehicle.
    vehicle: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub vehicles: Vec<Vehicle>,
    pub epoch: u64,
    pub tick: u64,
    noise: NoiseSampler,
    /// Per-lane scans sorted by rear position. `occ` counts a
    /// lane-changing vehicle in source and target lane and includes
    /// closures; `derived` holds real vehicles in their derived lane only.
    occ: Vec<Vec<OccEntry>>,
    derived: Vec<Vec<OccEntry>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneError {
    /// Demanded more vehicles than the road can hold at minimum spacing.
    Unpackable { requested: usize, capacity: usize },
    BadConfig(&'static str),
}

impl core::fmt::Display for SceneError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SceneError::Unpackable { requested, capacity } => {
                write!(f, "cannot place {requested} vehicles (capacity {capacity})")
            }
            SceneError::BadConfig(msg) => write!(f, "bad road config: {msg}"),
        }
    }
}

fn wrap(x: f64, len: f64) -> f64 {
    crate::dynamics::wrap_position(x, len)
}

/// Open stretches of a lane once its closures are carved out. A lane
/// with no closures is a full ring, encoded as `None`.
fn lane_segments(road: &RoadConfig, lane: usize) -> Option<Vec<(f64, f64)>> {
    let mut blocked: Vec<(f64, f64)> = road
        .closures
        .iter()
        .filter(|c| c.lane == lane)
        .map(|c| (c.start, c.end))
        .collect();
    if blocked.is_empty() {
        return None;
    }
    blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut segs = Vec::with_capacity(blocked.len());
    for i in 0..blocked.len() {
        let start = blocked[i].1;
        let end = blocked[(i + 1) % blocked.len()].0;
        let span = wrap(end - start, road.length);
        segs.push((wrap(start, road.length), span));
    }
    Some(segs)
}

/// Vehicles a lane can hold while every gap (including to closure ends)
/// stays at least `min_gap`.
fn lane_capacity(road: &RoadConfig, lane: usize, min_gap: f64) -> usize {
    let pitch = road.vehicle_length + min_gap;
    match lane_segments(road, lane) {
        None => (road.length / pitch) as usize,
        Some(segs) => segs
            .iter()
            .map(|(_, span)| ((span - min_gap) / pitch).max(0.0) as usize)
            .sum(),
    }
}

/// Total vehicle capacity of the road at minimum spacing `min_gap`.
pub fn road_capacity(road: &RoadConfig, min_gap: f64) -> usize {
    (0..road.lane_count).map(|l| lane_capacity(road, l, min_gap)).sum()
}

/// Vehicle count realizing a density given as a fraction of capacity.
pub fn vehicle_count_for_density(road: &RoadConfig, min_gap: f64, density: f64) -> usize {
    libm::round((road_capacity(road, min_gap) as f64) * density) as usize
}

/// `k` rear positions along a stretch, uniformly jittered while keeping
/// every gap at least `min_gap`. `span = None` means the whole ring.
fn place_along(
    road: &RoadConfig,
    start: f64,
    span: Option<f64>,
    k: usize,
    min_gap: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    if k == 0 {
        return Vec::new();
    }
    let pitch = road.vehicle_length + min_gap;
    // Free slack after reserving k pitches (ring) or k pitches plus an
    // end margin (segment, which needs min_gap to both closure ends).
    let (origin, slack) = match span {
        None => (start + rng.gen_range(0.0..road.length), road.length - k as f64 * pitch),
        Some(s) => (start + min_gap, s - min_gap - k as f64 * pitch),
    };
    let slack = slack.max(0.0);
    let mut jitter: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..=slack)).collect();
    jitter.sort_by(|a, b| a.total_cmp(b));
    (0..k)
        .map(|i| wrap(origin + i as f64 * pitch + jitter[i], road.length))
        .collect()
}

/// Caps drawn initial speeds so no pair starts out doomed: each vehicle
/// needs barrier headroom `v <= (gap - d_min)/tau`, a stopping envelope
/// behind its (never-accelerating) leader at half the braking authority,
/// and a closing speed the front-gap decay condition
///   v - v_lead <= tau |a_min| + lambda (gap - d_min - tau v)
/// accepts, so no vehicle is born inside the filter's rejection region.
/// Tight packings therefore start slow, which is the only physically
/// consistent reading of a jammed initial condition.
fn cap_initial_speeds(
    road: &RoadConfig,
    lane: usize,
    rears: &[f64],
    draws: &[f64],
    p: &SimParams,
) -> Vec<f64> {
    let mut ent: Vec<(f64, f64, Option<usize>)> = rears
        .iter()
        .enumerate()
        .map(|(i, r)| (*r, road.vehicle_length, Some(i)))
        .collect();
    for c in road.closures.iter().filter(|c| c.lane == lane) {
        ent.push((c.start, c.end - c.start, None));
    }
    ent.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut v = draws.to_vec();
    if ent.len() < 2 {
        return v; // alone on the ring: any speed is safe
    }
    let tau = p.supervisor.time_headway;
    let b_max = -p.bounds.accel_min;
    let b_safe = 0.5 * b_max;
    let lambda = p.supervisor.eta / p.bicycle.ts;
    // Caps are nondecreasing in the leader speed and capping only lowers
    // speeds, so the sweep is a monotone fixpoint iteration; an anchor
    // vehicle below its cap always exists (an all-binding ring would need
    // a mean speed over tau b_max / (ring gain), far above any draw), so
    // len + 2 sweeps settle the chain exactly.
    for _ in 0..ent.len() + 2 {
        let mut changed = false;
        for (k, e) in ent.iter().enumerate() {
            let Some(i) = e.2 else { continue };
            let lead = &ent[(k + 1) % ent.len()];
            let gap = wrap(lead.0 - e.0, road.length) - e.1;
            let v_lead = lead.2.map_or(0.0, |j| v[j]);
            let head = (gap - p.supervisor.d_min).max(0.0);
            let cap = (head / tau)
                .min(v_lead + libm::sqrt(2.0 * b_safe * head))
                .min((v_lead + tau * b_max + lambda * head) / (1.0 + lambda * tau));
            if v[i] > cap {
                v[i] = cap;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    v
}

/// Builds a fresh scene: vehicles spread lane by lane with jittered
/// uniform spacing, speeds drawn from `v0 * U(0.8, 1.0)` and then
/// safety-capped, controller kinds spread evenly through the index
/// order for mixed populations. All randomness comes from the scene
/// stream of `seed`; the dynamics noise stream is set up alongside it.
pub fn init_scene(
    p: &SimParams,
    n: usize,
    population: PopulationMode,
    seed: u64,
) -> Result<SimState, SceneError> {
    let road = &p.road;
    if road.lane_count == 0 || road.lane_count > 8 {
        return Err(SceneError::BadConfig("lane count out of range"));
    }
    if !(road.length > 0.0) || !(road.lane_width > 0.0) {
        return Err(SceneError::BadConfig("non-positive road dimensions"));
    }
    for c in &road.closures {
        if c.lane >= road.lane_count {
            return Err(SceneError::BadConfig("closure on nonexistent lane"));
        }
        if !(c.start >= 0.0 && c.end > c.start && c.end <= road.length) {
            return Err(SceneError::BadConfig("closure bounds out of order"));
        }
    }
    let min_gap = p.supervisor.d_min;
    let caps: Vec<usize> = (0..road.lane_count).map(|l| lane_capacity(road, l, min_gap)).collect();
    let capacity: usize = caps.iter().sum();
    if n > capacity {
        return Err(SceneError::Unpackable { requested: n, capacity });
    }

    // Largest-remaining-capacity first keeps lanes evenly loaded.
    let mut quota = vec![0usize; road.lane_count];
    for _ in 0..n {
        let lane = (0..road.lane_count)
            .max_by_key(|&l| (caps[l] - quota[l], core::cmp::Reverse(l)))
            .expect("at least one lane");
        quota[lane] += 1;
    }

    let mut scene = rngs::stream(seed, StreamId::Scene);
    let geom = road.geometry();
    let mut vehicles = Vec::with_capacity(n);
    for lane in 0..road.lane_count {
        let mut rears = match lane_segments(road, lane) {
            None => place_along(road, 0.0, None, quota[lane], min_gap, &mut scene),
            Some(segs) => {
                // Fill segments proportionally to their capacity.
                let seg_caps: Vec<usize> = segs
                    .iter()
                    .map(|(_, span)| {
                        ((span - min_gap) / (road.vehicle_length + min_gap)).max(0.0) as usize
                    })
                    .collect();
                let mut seg_quota = vec![0usize; segs.len()];
                for _ in 0..quota[lane] {
                    let s = (0..segs.len())
                        .max_by_key(|&s| (seg_caps[s] - seg_quota[s], core::cmp::Reverse(s)))
                        .expect("segments exist");
                    seg_quota[s] += 1;
                }
                let mut all = Vec::with_capacity(quota[lane]);
                for (s, (start, span)) in segs.iter().enumerate() {
                    all.extend(place_along(
                        road,
                        *start,
                        Some(*span),
                        seg_quota[s],
                        min_gap,
                        &mut scene,
                    ));
                }
                all
            }
        };
        rears.sort_by(|a, b| a.total_cmp(b));
        let draws: Vec<f64> =
            rears.iter().map(|_| p.idm.v0 * scene.gen_range(0.8..1.0)).collect();
        let speeds = cap_initial_speeds(road, lane, &rears, &draws, p);
        for (rear, v) in rears.iter().zip(speeds) {
            vehicles.push(Vehicle::new(
                VehicleState::new(*rear, geom.center(lane), 0.0, v),
                ControllerKind::Idm, // reassigned below
            ));
        }
    }

    let rl_quota = match population {
        PopulationMode::AllRl => n,
        PopulationMode::AllIdm => 0,
        PopulationMode::Mixed { rl_fraction } => {
            libm::round((n as f64) * rl_fraction.clamp(0.0, 1.0)) as usize
        }
    };
    for (i, v) in vehicles.iter_mut().enumerate() {
        // Bresenham spread: index i is learning iff the running quota
        // crosses an integer here.
        let filled = |j: usize| j * rl_quota / n.max(1);
        v.kind = if filled(i + 1) > filled(i) { ControllerKind::Rl } else { ControllerKind::Idm };
    }

    let noise = NoiseSampler::with_rng(p.noise_bound, rngs::stream(seed, StreamId::Noise));
    let mut sim = SimState {
        vehicles,
        epoch: 0,
        tick: 0,
        noise,
        occ: vec![Vec::new(); road.lane_count],
        derived: vec![Vec::new(); road.lane_count],
    };
    sim.rebuild_scans(p);
    Ok(sim)
}

impl SimState {
    pub fn noise_rng_mut(&mut self) -> &mut ChaCha12Rng {
        self.noise.rng_mut()
    }

    fn rebuild_scans(&mut self, p: &SimParams) {
        let geom = p.road.geometry();
        for list in self.occ.iter_mut().chain(self.derived.iter_mut()) {
            list.clear();
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            let lane = geom.lane_of(v.state.p_y);
            let entry = OccEntry {
                rear: v.state.p_x,
                speed: v.state.v,
                len: p.road.vehicle_length,
                vehicle: Some(i),
            };
            self.derived[lane].push(entry);
            self.occ[lane].push(entry);
            if let Some((from, to)) = v.change_span {
                for extra in [from, to] {
                    if extra != lane && extra < p.road.lane_count {
                        self.occ[extra].push(entry);
                    }
                }
            }
        }
        for c in &p.road.closures {
            self.occ[c.lane].push(OccEntry {
                rear: c.start,
                speed: 0.0,
                len: c.end - c.start,
                vehicle: None,
            });
        }
        for list in self.occ.iter_mut().chain(self.derived.iter_mut()) {
            list.sort_by(|a, b| a.rear.total_cmp(&b.rear));
        }
    }

    /// Nearest entry strictly ahead of `rear` on the ring, skipping
    /// vehicle `skip`. Returns the forward center-to-center arc.
    fn ahead_of(list: &[OccEntry], rear: f64, skip: usize, length: f64) -> Option<(f64, OccEntry)> {
        if list.is_empty() {
            return None;
        }
        let start = list.partition_point(|e| e.rear <= rear);
        for k in 0..list.len() {
            let e = list[(start + k) % list.len()];
            if e.vehicle == Some(skip) {
                continue;
            }
            return Some((wrap(e.rear - rear, length), e));
        }
        None
    }

    /// Nearest entry at or behind `rear`, skipping vehicle `skip`.
    fn behind_of(list: &[OccEntry], rear: f64, skip: usize, length: f64) -> Option<(f64, OccEntry)> {
        if list.is_empty() {
            return None;
        }
        let start = list.partition_point(|e| e.rear < rear);
        for k in 1..=list.len() {
            let e = list[(start + list.len() * 2 - k) % list.len()];
            if e.vehicle == Some(skip) {
                continue;
            }
            return Some((wrap(rear - e.rear, length), e));
        }
        None
    }

    fn lane_neighbors(&self, lane: usize, idx: usize, p: &SimParams) -> LaneNeighbors {
        let ego = &self.vehicles[idx].state;
        let list = &self.occ[lane];
        let leader = Self::ahead_of(list, ego.p_x, idx, p.road.length).and_then(|(arc, e)| {
            let gap = arc - p.road.vehicle_length;
            (gap <= p.road.sensing_range).then_some(NeighborInfo { gap, speed: e.speed })
        });
        let follower = Self::behind_of(list, ego.p_x, idx, p.road.length).and_then(|(arc, e)| {
            let gap = arc - e.len;
            (gap <= p.road.sensing_range).then_some(NeighborInfo { gap, speed: e.speed })
        });
        LaneNeighbors { leader, follower }
    }

    /// Sensing-limited neighbor picture around vehicle `idx`, from the
    /// occupancy scan (closures and mid-change vehicles included).
    pub fn neighbor_set(&self, idx: usize, p: &SimParams) -> NeighborSet {
        let geom = p.road.geometry();
        let lane = geom.lane_of(self.vehicles[idx].state.p_y);
        NeighborSet {
            current: self.lane_neighbors(lane, idx, p),
            left: (lane + 1 < geom.lane_count).then(|| self.lane_neighbors(lane + 1, idx, p)),
            right: (lane > 0).then(|| self.lane_neighbors(lane - 1, idx, p)),
        }
    }

    /// Bumper gap and speed of the leader of `idx` in `lane`, unbounded
    /// by sensing (scripted controllers see their own lane fully).
    fn leader_in(&self, lane: usize, idx: usize, p: &SimParams) -> Option<NeighborInfo> {
        let ego = &self.vehicles[idx].state;
        Self::ahead_of(&self.occ[lane], ego.p_x, idx, p.road.length).map(|(arc, e)| NeighborInfo {
            gap: arc - p.road.vehicle_length,
            speed: e.speed,
        })
    }
}

/// Per-vehicle decision for one epoch, produced by the learning side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleDecision {
    pub proposed: Action,
    pub q_values: [f64; ACTION_COUNT],
}

/// What the decision boundary did for one learning vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VetEvent {
    pub vehicle: usize,
    pub proposed: Action,
    pub executed: Executed,
    pub overridden: bool,
    pub es: bool,
    /// Slack spent by the boundary-tick projection.
    pub zeta: f64,
    pub vetted: [Option<bool>; ACTION_COUNT],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub reward: f64,
    pub flow: f64,
    pub comfort: f64,
    pub mean_speed: f64,
    /// Smallest same-lane bumper gap seen at any tick of the epoch.
    pub min_headway: f64,
    pub overrides: u32,
    pub es_count: u32,
    /// Any negative vehicle-to-vehicle headway this epoch.
    pub collision: bool,
    /// Any vehicle body overlapping a closed stretch of its lane.
    pub closure_breach: bool,
    pub qp_solves: u64,
    pub max_zeta: f64,
    pub events: Vec<VetEvent>,
    /// Ticks actually run (an unsupervised collision ends the epoch early).
    pub ticks_run: u32,
}

/// Speed statistics of real vehicles on their derived lanes.
fn headway_floor(derived: &[Vec<OccEntry>], length: f64) -> f64 {
    let mut min_gap = f64::INFINITY;
    for list in derived {
        match list.len() {
            0 => {}
            1 => min_gap = min_gap.min(length - list[0].len),
            k => {
                for i in 0..k {
                    let a = &list[i];
                    let b = &list[(i + 1) % k];
                    let gap = wrap(b.rear - a.rear, length) - a.len;
                    min_gap = min_gap.min(gap);
                }
            }
        }
    }
    min_gap
}

/// True when any vehicle body overlaps a closed stretch of its derived
/// lane. Mid-change vehicles count only in the lane they are laterally
/// nearest; dual occupancy stays a safety-side convention.
fn closure_overlap(derived: &[Vec<OccEntry>], closures: &[Closure], length: f64) -> bool {
    closures.iter().any(|c| {
        derived[c.lane].iter().any(|e| {
            wrap(c.start - e.rear, length) < e.len || wrap(e.rear - c.start, length) < c.end - c.start
        })
    })
}

/// Scratch per-tick control decision, resolved before any state mutates.
enum TickControl {
    Bicycle(ControlInput),
    /// IDM point mass: longitudinal accel; lateral handled by the maneuver.
    Point(f64),
}

/// Runs one epoch. `decisions[i]` must be `Some` exactly for learning
/// vehicles. Returns the population metrics; observation building and
/// replay storage stay with the caller.
pub fn env_epoch(
    sim: &mut SimState,
    p: &SimParams,
    decisions: &[Option<VehicleDecision>],
) -> EpochOutcome {
    assert_eq!(decisions.len(), sim.vehicles.len(), "one decision slot per vehicle");
    let geom = p.road.geometry();
    let sup = SupervisorContext {
        geom: &geom,
        params: &p.supervisor,
        bicycle: &p.bicycle,
        bounds: &p.bounds,
        w_bound: p.noise_bound,
    };
    let ts = p.bicycle.ts;

    let mut overrides = 0u32;
    let mut es_count = 0u32;
    let mut qp_solves = 0u64;
    let mut max_zeta = 0.0f64;
    let mut events = Vec::new();

    // --- Decision boundary ---------------------------------------------
    sim.rebuild_scans(p);
    for i in 0..sim.vehicles.len() {
        let span_before = sim.vehicles[i].change_span;
        match (sim.vehicles[i].kind, &decisions[i]) {
            (ControllerKind::Rl, Some(d)) => {
                let x = sim.vehicles[i].state;
                let lane = geom.lane_of(x.p_y);
                let refs = planner::reference_matrix(
                    &x,
                    &geom,
                    &p.planner,
                    &p.bounds,
                    p.bicycle.wheelbase,
                    ts,
                );
                let executed = match p.mode {
                    SupervisionMode::Feedback => {
                        let neighbors = sim.neighbor_set(i, p);
                        let res =
                            sup.feedback_action(d.proposed, &d.q_values, &x, &neighbors, &refs);
                        qp_solves +=
                            res.vetted.iter().flatten().count() as u64 + u64::from(!res.es);
                        overrides += u32::from(res.overridden);
                        es_count += u32::from(res.es);
                        max_zeta = max_zeta.max(res.zeta);
                        events.push(VetEvent {
                            vehicle: i,
                            proposed: d.proposed,
                            executed: res.executed,
                            overridden: res.overridden,
                            es: res.es,
                            zeta: res.zeta,
                            vetted: res.vetted,
                        });
                        res.executed
                    }
                    SupervisionMode::Vanilla => {
                        // Raw execution; only road-edge actions degrade to
                        // lane keeping.
                        if refs.available(d.proposed) {
                            Executed::Action(d.proposed)
                        } else {
                            Executed::Action(Action::KeepLane)
                        }
                    }
                };
                let veh = &mut sim.vehicles[i];
                match executed {
                    Executed::Action(a) => {
                        veh.in_es = false;
                        veh.epoch_action = a;
                        let continues = a.is_lane_change()
                            && veh.plan.map_or(false, |pl| {
                                pl.action == a && !pl.complete(veh.plan_age as f64 * ts)
                            });
                        if !continues {
                            veh.plan = planner::plan_action(a, &x, &geom, &p.planner);
                            veh.plan_age = 0;
                            veh.change_span = veh
                                .plan
                                .filter(|_| a.is_lane_change())
                                .map(|pl| (lane, pl.target_lane));
                        }
                    }
                    Executed::EmergencyStop => {
                        veh.in_es = true;
                        veh.plan = None;
                        veh.plan_age = 0;
                        veh.change_span = None;
                    }
                }
            }
            (ControllerKind::Idm, None) => {
                if sim.vehicles[i].idm_maneuver.is_none() {
                    try_idm_lane_change(sim, i, p, &geom);
                }
            }
            (kind, d) => panic!(
                "decision slot mismatch for vehicle {i}: kind {kind:?}, decision given: {}",
                d.is_some()
            ),
        }
        // A fresh lane claim must be visible to vehicles deciding later
        // in the same boundary, or two of them can accept the same gap.
        if sim.vehicles[i].change_span != span_before {
            sim.rebuild_scans(p);
        }
    }

    // --- Tick loop -------------------------------------------------------
    let n_real = sim.vehicles.len();
    let mut speed_sum = 0.0;
    let mut comfort_sum = 0.0;
    let mut comfort_ticks = 0u64;
    let mut min_headway = f64::INFINITY;
    let mut collision = false;
    let mut closure_breach = false;
    let mut ticks_run = 0u32;
    let mut controls: Vec<TickControl> = Vec::with_capacity(n_real);

    for _ in 0..p.ticks_per_epoch {
        sim.rebuild_scans(p);
        let floor = headway_floor(&sim.derived, p.road.length);
        min_headway = min_headway.min(floor);
        collision |= floor < 0.0;
        closure_breach |= closure_overlap(&sim.derived, &p.road.closures, p.road.length);
        if collision && p.mode == SupervisionMode::Vanilla {
            break;
        }

        controls.clear();
        for i in 0..n_real {
            let veh = &sim.vehicles[i];
            let control = match veh.kind {
                ControllerKind::Rl => {
                    let u_ref = if veh.in_es {
                        sup.emergency_stop(&veh.state)
                    } else {
                        rl_reference(veh, p, ts)
                    };
                    let u = match p.mode {
                        SupervisionMode::Feedback if !veh.in_es => {
                            let target = veh
                                .plan
                                .map(|pl| pl.target_lane)
                                .unwrap_or_else(|| geom.lane_of(veh.state.p_y));
                            let neighbors = sim.neighbor_set(i, p);
                            let f = sup.filter_control(&veh.state, target, &neighbors, u_ref);
                            qp_solves += 1;
                            max_zeta = max_zeta.max(f.zeta);
                            f.control
                        }
                        // The stop command is the filter's own fallback and
                        // runs raw; unsupervised runs are raw by design.
                        _ => u_ref,
                    };
                    TickControl::Bicycle(u)
                }
                ControllerKind::Idm => TickControl::Point(idm_tick_accel(sim, i, p)),
            };
            controls.push(control);
        }

        for i in 0..n_real {
            let veh = &mut sim.vehicles[i];
            match controls[i] {
                TickControl::Bicycle(u) => {
                    speed_sum += veh.state.v;
                    comfort_sum += comfort_single(
                        u.accel,
                        veh.epoch_action,
                        veh.in_es,
                        p.comfort_theta,
                    );
                    veh.state = step_noisy(&veh.state, &u, &p.bicycle, p.road.length, &mut sim.noise)
                        .expect("finite state and control");
                    if veh.plan.is_some() {
                        veh.plan_age += 1;
                        let done = veh
                            .plan
                            .map_or(false, |pl| pl.complete(veh.plan_age as f64 * ts));
                        if done {
                            veh.change_span = None;
                        }
                    }
                }
                TickControl::Point(a) => {
                    speed_sum += veh.state.v;
                    let changing = veh.idm_maneuver.is_some();
                    comfort_sum += comfort_single(
                        a,
                        if changing { Action::ChangeLeft } else { Action::KeepLane },
                        false,
                        p.comfort_theta,
                    );
                    let v_new = (veh.state.v + a * ts).max(0.0);
                    veh.state.p_x = wrap(veh.state.p_x + veh.state.v * ts, p.road.length);
                    veh.state.v = v_new;
                    if let Some(m) = &mut veh.idm_maneuver {
                        m.elapsed += ts;
                        veh.state.p_y = m.lat.value(m.elapsed);
                        veh.state.psi = libm::atan2(m.lat.d1(m.elapsed), veh.state.v.max(0.1));
                        if m.elapsed >= m.lat.duration {
                            veh.state.psi = 0.0;
                            veh.idm_maneuver = None;
                            veh.change_span = None;
                        }
                    }
                }
            }
            comfort_ticks += 1;
        }
        sim.tick += 1;
        ticks_run += 1;
    }

    // Post-step picture: catch anything the last tick caused.
    sim.rebuild_scans(p);
    let floor = headway_floor(&sim.derived, p.road.length);
    min_headway = min_headway.min(floor);
    collision |= floor < 0.0;
    closure_breach |= closure_overlap(&sim.derived, &p.road.closures, p.road.length);

    sim.epoch += 1;
    for veh in &mut sim.vehicles {
        let changed = match veh.kind {
            ControllerKind::Rl => !veh.in_es && veh.epoch_action.is_lane_change(),
            ControllerKind::Idm => veh.idm_maneuver.is_some() || veh.change_span.is_some(),
        };
        veh.change_history.push_back(changed);
        while veh.change_history.len() > p.k_f {
            veh.change_history.pop_front();
        }
    }

    let samples = (ticks_run.max(1) as u64 * n_real as u64) as f64;
    let mean_speed = speed_sum / samples;
    let comfort = if comfort_ticks > 0 { comfort_sum / comfort_ticks as f64 } else { 0.0 };
    let flow = traffic_flow(n_real, p.road.length, mean_speed);
    EpochOutcome {
        reward: reward(flow, comfort, p.flow_weight),
        flow,
        comfort,
        mean_speed,
        min_headway,
        overrides,
        es_count,
        collision,
        closure_breach,
        qp_solves,
        max_zeta,
        events,
        ticks_run,
    }
}

/// Reference control for a learning vehicle mid-epoch: the active plan
/// sampled one tick ahead of its age, or a speed-preserving brake hold
/// when there is no plan to follow.
fn rl_reference(veh: &Vehicle, p: &SimParams, ts: f64) -> ControlInput {
    match &veh.plan {
        Some(plan) => {
            let tau = (veh.plan_age + 1) as f64 * ts;
            planner::feedforward_from_plan(&plan.sample(tau), p.bicycle.wheelbase, p.planner.v_eps)
                .map(|u| p.bounds.clamp(u))
                .unwrap_or_else(|| planner::brake_hold(veh.state.v, &p.bounds, ts))
        }
        None => planner::brake_hold(veh.state.v, &p.bounds, ts),
    }
}

/// IDM acceleration for one tick: follow the derived-lane leader, and
/// during a committed change also the target-lane leader, whichever
/// brakes harder.
fn idm_tick_accel(sim: &SimState, idx: usize, p: &SimParams) -> f64 {
    let geom = p.road.geometry();
    let veh = &sim.vehicles[idx];
    let lane = geom.lane_of(veh.state.p_y);
    let mut lanes = [Some(lane), None];
    if let Some(m) = &veh.idm_maneuver {
        if m.target_lane != lane {
            lanes[1] = Some(m.target_lane);
        }
    }
    let mut accel = f64::INFINITY;
    let mut any = false;
    for l in lanes.into_iter().flatten() {
        match sim.leader_in(l, idx, p) {
            Some(lead) if lead.gap <= p.road.sensing_range => {
                any = true;
                accel =
                    accel.min(idm::idm_accel(veh.state.v, lead.speed, lead.gap, &p.idm, &p.bounds));
            }
            _ => {}
        }
    }
    if any {
        accel
    } else {
        idm::idm_accel_free(veh.state.v, &p.idm, &p.bounds)
    }
}

/// Gap-acceptance check for a scripted vehicle, left lane preferred.
fn try_idm_lane_change(sim: &mut SimState, idx: usize, p: &SimParams, geom: &LaneGeometry) {
    let free = p.road.sensing_range;
    let ego = sim.vehicles[idx].state;
    let lane = geom.lane_of(ego.p_y);
    let current_front = sim
        .lane_neighbors(lane, idx, p)
        .leader
        .map_or(free, |l| l.gap);
    for target in [lane + 1, lane.wrapping_sub(1)] {
        if target >= geom.lane_count {
            continue;
        }
        let nb = sim.lane_neighbors(target, idx, p);
        let front = nb.leader.map_or(free, |l| l.gap);
        let rear = nb.follower.map_or(free, |f| f.gap);
        // Position rule plus a stopping-distance veto on both new pairs;
        // the gap thresholds alone admit doomed cut-ins while lanes still
        // carry the initial-scene speed spread.
        let feasible = nb.leader.map_or(true, |l| {
            idm::closing_feasible(l.gap, ego.v - l.speed, p.idm.s0, p.gap.b_safe)
        }) && nb.follower.map_or(true, |f| {
            idm::closing_feasible(f.gap, f.speed - ego.v, p.idm.s0, p.gap.b_safe)
        });
        if idm::gap_acceptance(current_front, front, rear, &p.gap) && feasible {
            let veh = &mut sim.vehicles[idx];
            veh.idm_maneuver = Some(IdmManeuver {
                lat: Quintic::settling(
                    ego.p_y,
                    0.0,
                    geom.center(target),
                    p.planner.lane_change_duration,
                ),
                from_lane: lane,
                target_lane: target,
                elapsed: 0.0,
            });
            veh.change_span = Some((lane, target));
            return;
        }
    }
}

/// What one learning vehicle can sense, packaged for observation
/// building: per-lane leader/follower (gap, relative speed) pairs and
/// the shared mean speeds of communicating vehicles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SharedLane {
    /// Lane does not exist at this position.
    Absent,
    /// Lane exists but no communicating vehicle is in range.
    Empty,
    Mean(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceivedLane {
    pub exists: bool,
    /// `(bumper gap, neighbor speed - ego speed)`.
    pub leader: Option<(f64, f64)>,
    pub follower: Option<(f64, f64)>,
}

impl PerceivedLane {
    const MISSING: PerceivedLane = PerceivedLane { exists: false, leader: None, follower: None };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoPerception {
    pub v: f64,
    pub lane: usize,
    pub lane_count: usize,
    /// Current, left, right.
    pub lanes: [PerceivedLane; 3],
    /// Lane-change epochs within the trailing window.
    pub recent_changes: u32,
    /// Current, left, right.
    pub shared: [SharedLane; 3],
}

/// Builds the sensing picture for vehicle `idx` from the current scans.
pub fn perceive(sim: &SimState, idx: usize, p: &SimParams) -> EgoPerception {
    let geom = p.road.geometry();
    let ego = &sim.vehicles[idx];
    let lane = geom.lane_of(ego.state.p_y);
    let view = |l: usize| -> PerceivedLane {
        let nb = sim.lane_neighbors(l, idx, p);
        PerceivedLane {
            exists: true,
            leader: nb.leader.map(|n| (n.gap, n.speed - ego.state.v)),
            follower: nb.follower.map(|n| (n.gap, n.speed - ego.state.v)),
        }
    };
    let positions: Vec<f64> = sim.vehicles.iter().map(|v| v.state.p_x).collect();
    let neighbors = epsilon_neighbors(&positions, idx, p.road.comm_range, p.road.length);
    let mut lanes = [PerceivedLane::MISSING; 3];
    let mut shared = [SharedLane::Absent; 3];
    let candidates = [Some(lane), (lane + 1 < geom.lane_count).then(|| lane + 1), lane.checked_sub(1)];
    for (slot, l) in candidates.into_iter().enumerate() {
        let Some(l) = l else { continue };
        lanes[slot] = view(l);
        shared[slot] = shared_mean(sim, &neighbors, l, &geom);
    }
    EgoPerception {
        v: ego.state.v,
        lane,
        lane_count: geom.lane_count,
        lanes,
        recent_changes: ego.change_history.iter().filter(|c| **c).count() as u32,
        shared,
    }
}

/// Indices within ring arc distance `eps` of vehicle `ego`, itself
/// excluded.
pub fn epsilon_neighbors(positions: &[f64], ego: usize, eps: f64, length: f64) -> Vec<usize> {
    let x = positions[ego];
    (0..positions.len())
        .filter(|&j| {
            if j == ego {
                return false;
            }
            let fwd = wrap(positions[j] - x, length);
            fwd.min(length - fwd) <= eps
        })
        .collect()
}

/// Mean speed of the communicating (learning) ε-neighbors currently on
/// derived lane `l`.
fn shared_mean(sim: &SimState, neighbors: &[usize], l: usize, geom: &LaneGeometry) -> SharedLane {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &j in neighbors {
        let v = &sim.vehicles[j];
        if v.kind != ControllerKind::Rl || geom.lane_of(v.state.p_y) != l {
            continue;
        }
        sum += v.state.v;
        count += 1;
    }
    if count == 0 {
        SharedLane::Empty
    } else {
        SharedLane::Mean(sum / count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_params() -> SimParams {
        SimParams {
            road: RoadConfig { length: 200.0, ..RoadConfig::default() },
            ..SimParams::default()
        }
    }

    fn idm_decisions(sim: &SimState) -> Vec<Option<VehicleDecision>> {
        vec![None; sim.vehicles.len()]
    }

    #[test]
    fn capacity_and_density_accounting() {
        let road = RoadConfig { length: 200.0, ..RoadConfig::default() };
        // Pitch 6 m: 33 per lane, 99 total.
        assert_eq!(road_capacity(&road, 2.0), 99);
        assert_eq!(vehicle_count_for_density(&road, 2.0, 0.3), 30);
        let closed = RoadConfig {
            closures: vec![Closure { lane: 0, start: 30.0, end: 70.0 }],
            ..road
        };
        // Lane 0 loses the closed stretch: one 160 m segment -> 26 fit.
        assert_eq!(road_capacity(&closed, 2.0), 26 + 33 + 33);
    }

    #[test]
    fn scenes_respect_spacing_and_speed_range() {
        let p = base_params();
        for seed in 0..5 {
            let sim = init_scene(&p, 60, PopulationMode::AllIdm, seed).unwrap();
            assert_eq!(sim.vehicles.len(), 60);
            assert!(headway_floor(&sim.derived, p.road.length) >= p.supervisor.d_min - 1e-9);
            let geom = p.road.geometry();
            for (i, v) in sim.vehicles.iter().enumerate() {
                assert!(v.state.v >= 0.0 && v.state.v <= p.idm.v0);
                assert_eq!(v.state.psi, 0.0);
                // The speed cap must leave barrier headroom to the leader.
                let lane = geom.lane_of(v.state.p_y);
                let lead = sim.lane_neighbors(lane, i, &p).leader.unwrap();
                assert!(
                    v.state.v <= (lead.gap - p.supervisor.d_min) / p.supervisor.time_headway + 1e-9,
                    "vehicle {i} starts too fast for its gap"
                );
            }
        }
    }

    #[test]
    fn scene_rejects_overfull_road() {
        let p = base_params();
        let err = init_scene(&p, 100, PopulationMode::AllIdm, 0).unwrap_err();
        assert_eq!(err, SceneError::Unpackable { requested: 100, capacity: 99 });
    }

    #[test]
    fn closures_keep_vehicles_out_at_init() {
        let mut p = base_params();
        p.road.closures = vec![Closure { lane: 0, start: 30.0, end: 70.0 }];
        let sim = init_scene(&p, 50, PopulationMode::AllIdm, 7).unwrap();
        assert!(!closure_overlap(&sim.derived, &p.road.closures, p.road.length));
        let geom = p.road.geometry();
        for v in &sim.vehicles {
            if geom.lane_of(v.state.p_y) == 0 {
                let front = v.state.p_x + p.road.vehicle_length;
                assert!(
                    front <= 30.0 + 1e-9 || v.state.p_x >= 70.0 - 1e-9,
                    "vehicle inside closure at {}",
                    v.state.p_x
                );
            }
        }
    }

    #[test]
    fn mixed_population_spreads_kinds() {
        let p = base_params();
        let sim = init_scene(&p, 10, PopulationMode::Mixed { rl_fraction: 0.5 }, 3).unwrap();
        let kinds: Vec<ControllerKind> = sim.vehicles.iter().map(|v| v.kind).collect();
        let rl = kinds.iter().filter(|k| **k == ControllerKind::Rl).count();
        assert_eq!(rl, 5);
        // No long runs of a single kind.
        for w in kinds.windows(3) {
            assert!(w.iter().any(|k| *k == ControllerKind::Rl));
            assert!(w.iter().any(|k| *k == ControllerKind::Idm));
        }
    }

    #[test]
    fn ring_gap_goes_negative_only_on_overlap() {
        let entries = vec![
            OccEntry { rear: 190.0, speed: 0.0, len: 4.0, vehicle: Some(0) },
            OccEntry { rear: 193.0, speed: 0.0, len: 4.0, vehicle: Some(1) },
        ];
        // 190 -> 193: arc 3 < len 4: overlap.
        assert!(headway_floor(&[entries], 200.0) < 0.0);
        let spaced = vec![
            OccEntry { rear: 198.0, speed: 0.0, len: 4.0, vehicle: Some(0) },
            OccEntry { rear: 4.0, speed: 0.0, len: 4.0, vehicle: Some(1) },
        ];
        // Wrap seam: 198 -> 4 is arc 6, gap 2; 4 -> 198 is arc 194, gap 190.
        let sorted = {
            let mut s = spaced;
            s.sort_by(|a, b| a.rear.total_cmp(&b.rear));
            s
        };
        let floor = headway_floor(&[sorted], 200.0);
        assert!((floor - 2.0).abs() < 1e-9);
    }

    #[test]
    fn neighbor_set_sees_across_the_wrap_seam() {
        let mut p = base_params();
        // Full-ring sensing so the far-side follower stays visible.
        p.road.sensing_range = 200.0;
        let mut sim = init_scene(&p, 2, PopulationMode::AllIdm, 1).unwrap();
        // Put both in lane 0, ego near the seam, leader just past it.
        let geom = p.road.geometry();
        sim.vehicles[0].state = VehicleState::new(195.0, geom.center(0), 0.0, 10.0);
        sim.vehicles[1].state = VehicleState::new(5.0, geom.center(0), 0.0, 12.0);
        sim.rebuild_scans(&p);
        let nb = sim.neighbor_set(0, &p);
        let lead = nb.current.leader.unwrap();
        assert!((lead.gap - 6.0).abs() < 1e-9, "gap {}", lead.gap);
        assert_eq!(lead.speed, 12.0);
        let foll = nb.current.follower.unwrap();
        assert!((foll.gap - (190.0 - 4.0)).abs() < 1e-9);
        // Ego in lane 0 of a 3-lane road: left exists, right does not.
        assert!(nb.left.is_some());
        assert!(nb.right.is_none());
    }

    #[test]
    fn closure_appears_as_stopped_leader() {
        let mut p = base_params();
        p.road.closures = vec![Closure { lane: 0, start: 50.0, end: 90.0 }];
        let mut sim = init_scene(&p, 1, PopulationMode::AllIdm, 1).unwrap();
        let geom = p.road.geometry();
        sim.vehicles[0].state = VehicleState::new(20.0, geom.center(0), 0.0, 10.0);
        sim.rebuild_scans(&p);
        let nb = sim.neighbor_set(0, &p);
        let lead = nb.current.leader.unwrap();
        assert!((lead.gap - 26.0).abs() < 1e-9, "gap {}", lead.gap);
        assert_eq!(lead.speed, 0.0);
    }

    #[test]
    fn idm_only_epoch_conserves_vehicles_and_ticks() {
        let p = base_params();
        let mut sim = init_scene(&p, 30, PopulationMode::AllIdm, 11).unwrap();
        let d = idm_decisions(&sim);
        let out = env_epoch(&mut sim, &p, &d);
        assert_eq!(out.ticks_run, 50);
        assert_eq!(sim.tick, 50);
        assert_eq!(sim.epoch, 1);
        assert_eq!(sim.vehicles.len(), 30);
        assert_eq!(out.overrides, 0);
        assert_eq!(out.es_count, 0);
        assert!(out.events.is_empty());
        assert!(out.qp_solves == 0);
        assert!(out.min_headway > 0.0);
        assert!(out.mean_speed > 0.0);
        assert!((out.reward - (p.flow_weight * out.flow + out.comfort)).abs() < 1e-12);
    }

    #[test]
    fn idm_ring_settles_without_collisions() {
        // Dense single lane: the classic stop-and-go regime. No overlap
        // may ever appear, and speeds must stay bounded.
        let mut p = base_params();
        p.road.lane_count = 1;
        p.road.lane_width = 4.0;
        let mut sim = init_scene(&p, 25, PopulationMode::AllIdm, 5).unwrap();
        for _ in 0..200 {
            let d = idm_decisions(&sim);
            let out = env_epoch(&mut sim, &p, &d);
            assert!(!out.collision, "IDM ring produced an overlap");
            assert!(out.min_headway > 0.0);
        }
        for v in &sim.vehicles {
            assert!(v.state.v >= 0.0 && v.state.v <= p.idm.v0 + 1.0);
        }
    }

    #[test]
    fn supervised_epoch_counts_events() {
        let p = base_params();
        let mut sim = init_scene(&p, 12, PopulationMode::AllRl, 2).unwrap();
        let decisions: Vec<Option<VehicleDecision>> = sim
            .vehicles
            .iter()
            .map(|_| {
                Some(VehicleDecision {
                    proposed: Action::KeepLane,
                    q_values: [0.0, -1.0, -2.0],
                })
            })
            .collect();
        let out = env_epoch(&mut sim, &p, &decisions);
        assert_eq!(out.events.len(), 12);
        assert!(out.qp_solves >= 12 * 50);
        assert!(!out.collision);
        // Keep-lane proposals on a sparse ring never need overriding.
        assert_eq!(out.overrides, 0);
        assert_eq!(out.es_count, 0);
    }

    #[test]
    fn vanilla_epoch_skips_the_filter() {
        let mut p = base_params();
        p.mode = SupervisionMode::Vanilla;
        let mut sim = init_scene(&p, 12, PopulationMode::AllRl, 2).unwrap();
        let decisions: Vec<Option<VehicleDecision>> = sim
            .vehicles
            .iter()
            .map(|_| {
                Some(VehicleDecision {
                    proposed: Action::KeepLane,
                    q_values: [0.0; ACTION_COUNT],
                })
            })
            .collect();
        let out = env_epoch(&mut sim, &p, &decisions);
        assert_eq!(out.qp_solves, 0);
        assert!(out.events.is_empty());
    }

    #[test]
    fn perception_reports_walls_and_neighbors() {
        let mut p = base_params();
        p.road.sensing_range = 60.0;
        let mut sim = init_scene(&p, 3, PopulationMode::AllRl, 4).unwrap();
        let geom = p.road.geometry();
        sim.vehicles[0].state = VehicleState::new(10.0, geom.center(0), 0.0, 20.0);
        sim.vehicles[1].state = VehicleState::new(40.0, geom.center(0), 0.0, 25.0);
        sim.vehicles[2].state = VehicleState::new(30.0, geom.center(1), 0.0, 15.0);
        sim.rebuild_scans(&p);
        let per = perceive(&sim, 0, &p);
        assert_eq!(per.lane, 0);
        let cur = per.lanes[0];
        let (gap, dv) = cur.leader.unwrap();
        assert!((gap - 26.0).abs() < 1e-9);
        assert!((dv - 5.0).abs() < 1e-9);
        // Left lane exists and holds vehicle 2; right lane is off-road.
        assert!(per.lanes[1].exists);
        assert!(!per.lanes[2].exists);
        let (lgap, ldv) = per.lanes[1].leader.unwrap();
        assert!((lgap - 16.0).abs() < 1e-9);
        assert!((ldv - (-5.0)).abs() < 1e-9);
        // All three are learning vehicles, so shared means exist where
        // lanes do.
        assert!(matches!(per.shared[0], SharedLane::Mean(m) if (m - 25.0).abs() < 1e-9));
        assert!(matches!(per.shared[1], SharedLane::Mean(m) if (m - 15.0).abs() < 1e-9));
        assert_eq!(per.shared[2], SharedLane::Absent);
    }

    #[test]
    fn epsilon_neighbors_use_arc_distance() {
        // 0 and 990 on a 1000 ring are 10 apart across the seam.
        let pos = [0.0, 990.0, 400.0];
        assert_eq!(epsilon_neighbors(&pos, 0, 20.0, 1000.0), [1]);
        assert_eq!(epsilon_neighbors(&pos, 1, 20.0, 1000.0), [0]);
        assert_eq!(epsilon_neighbors(&pos, 0, 1e-6, 1000.0), [0usize; 0]);
        assert_eq!(epsilon_neighbors(&pos, 0, 500.0, 1000.0), [1, 2]);
    }

    #[test]
    fn idm_changes_lanes_around_a_closure() {
        let mut p = base_params();
        p.road.closures = vec![Closure { lane: 0, start: 100.0, end: 140.0 }];
        let mut sim = init_scene(&p, 1, PopulationMode::AllIdm, 9).unwrap();
        let geom = p.road.geometry();
        sim.vehicles[0].state = VehicleState::new(40.0, geom.center(0), 0.0, 20.0);
        sim.rebuild_scans(&p);
        let mut changed = false;
        for _ in 0..40 {
            let d = idm_decisions(&sim);
            let out = env_epoch(&mut sim, &p, &d);
            assert!(!out.closure_breach, "drove into the closed stretch");
            if geom.lane_of(sim.vehicles[0].state.p_y) != 0 {
                changed = true;
                break;
            }
        }
        assert!(changed, "vehicle never routed around the closure");
    }

    #[test]
    fn change_history_window_is_bounded() {
        let mut p = base_params();
        p.k_f = 3;
        let mut sim = init_scene(&p, 4, PopulationMode::AllIdm, 6).unwrap();
        let d = idm_decisions(&sim);
        for _ in 0..10 {
            env_epoch(&mut sim, &p, &d);
        }
        for v in &sim.vehicles {
            assert!(v.change_history.len() <= 3);
        }
    }
}
