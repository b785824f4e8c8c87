//! Layered campaign configuration.
//!
//! Precedence, lowest to highest: library defaults, preset, TOML file,
//! `LANELAB_*` environment variables, CLI flags. The last two only exist
//! for the keys that have flags; everything else is file-only. The
//! resolved [`Campaign`] is what the runner consumes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use lanelab_core::agent::AgentConfig;
use lanelab_core::env::{Closure, RoadConfig, SimParams, SupervisionMode};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Mode {
    FeedbackRl,
    VanillaRl,
    Idm,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FeedbackRl => "feedback_rl",
            Mode::VanillaRl => "vanilla_rl",
            Mode::Idm => "idm",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Freeway,
    RoadClosure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

/// One fully-resolved experiment campaign.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub scenario: Scenario,
    pub mode: Mode,
    pub densities: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Episodes E; each starts from a fresh scene.
    pub episodes: u32,
    /// Decision epochs K per episode.
    pub epochs: u32,
    /// Trailing epochs the summary means are computed over.
    pub eval_window: u32,
    /// Fraction of vehicles that are learning vehicles (ignored in idm
    /// mode, where everything is baseline traffic).
    pub rl_fraction: f64,
    /// Episodes between checkpoints; 0 means only a final one.
    pub checkpoint_every: u32,
    /// Write a JSONL line per vetting event.
    pub qp_trace: bool,
    pub out_dir: PathBuf,
    pub sim: SimParams,
    pub agent: AgentConfig,
}

impl Default for Campaign {
    fn default() -> Self {
        Campaign {
            scenario: Scenario::Freeway,
            mode: Mode::FeedbackRl,
            densities: vec![0.3],
            seeds: vec![1],
            episodes: 1,
            epochs: 100,
            eval_window: 1000,
            rl_fraction: 1.0,
            checkpoint_every: 25,
            qp_trace: false,
            out_dir: PathBuf::from("runs/out"),
            sim: SimParams::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl Campaign {
    fn apply_preset(&mut self, preset: Preset) {
        // Both presets use unit-length vehicles so the whole density grid
        // packs at the 2.0 minimum spacing, and match the supervisor's
        // headway term to IDM's so the two car-following envelopes are
        // commensurate in comparisons.
        self.sim.road.vehicle_length = 1.0;
        self.sim.supervisor.time_headway = 1.5;
        self.eval_window = 1000;
        match preset {
            Preset::Desk => {
                self.sim.road.length = 200.0;
                self.densities = vec![0.1, 0.3, 0.5, 0.7, 0.9];
                self.seeds = (1..=5).collect();
                self.episodes = 200;
                self.epochs = 200;
            }
            Preset::Paper => {
                self.sim.road.length = 1000.0;
                self.densities = (1..=9).map(|i| i as f64 / 10.0).collect();
                self.seeds = (1..=30).collect();
                self.episodes = 2000;
                self.epochs = 2000;
            }
        }
    }

    /// Snaps the derived agent normalizers to the settings they mirror.
    fn tie_agent(&mut self) {
        self.agent.gap_norm = self.sim.road.sensing_range;
        self.agent.speed_norm = self.sim.planner.desired_speed;
        self.agent.k_f = self.sim.k_f;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, why: String| Err(ConfigError::Invalid(format!("{key}: {why}")));
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.eval_window == 0 {
            return bad("eval_window", "must be at least 1".into());
        }
        if self.densities.is_empty() {
            return bad("densities", "need at least one density".into());
        }
        for &d in &self.densities {
            if !(d > 0.0 && d <= 1.0) {
                return bad("densities", format!("{d} outside (0, 1]"));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds", "must be distinct".into());
        }
        if !(0.0..=1.0).contains(&self.rl_fraction) {
            return bad("rl_fraction", format!("{} outside [0, 1]", self.rl_fraction));
        }
        let road = &self.sim.road;
        if self.scenario == Scenario::Freeway && !road.closures.is_empty() {
            return bad("road.closures", "set, but the scenario is freeway".into());
        }
        for (i, c) in road.closures.iter().enumerate() {
            if c.lane >= road.lane_count {
                return bad(
                    "road.closures",
                    format!("entry {i}: lane {} of {}", c.lane, road.lane_count),
                );
            }
            if !(c.start >= 0.0 && c.start < c.end && c.end <= road.length) {
                return bad(
                    "road.closures",
                    format!("entry {i}: [{}, {}) outside [0, {})", c.start, c.end, road.length),
                );
            }
        }
        for (key, v) in [
            ("road.length", road.length),
            ("road.lane_width", road.lane_width),
            ("road.vehicle_length", road.vehicle_length),
            ("vehicle.ts", self.sim.bicycle.ts),
            ("vehicle.wheelbase", self.sim.bicycle.wheelbase),
            ("idm.v0", self.sim.idm.v0),
            ("planner.desired_speed", self.sim.planner.desired_speed),
        ] {
            if !(v > 0.0) {
                return bad(key, format!("{v} must be positive"));
            }
        }
        if self.sim.bounds.accel_min >= 0.0 {
            return bad("limits.accel_min", "must be negative".into());
        }
        for w in self.sim.noise_bound {
            if w < 0.0 {
                return bad("noise_bound", format!("{w} is negative"));
            }
        }
        Ok(())
    }

    /// Simulation parameters for one replicate of this campaign.
    pub fn sim_params(&self) -> SimParams {
        let mut p = self.sim.clone();
        p.mode = match self.mode {
            Mode::VanillaRl => SupervisionMode::Vanilla,
            _ => SupervisionMode::Feedback,
        };
        p
    }

    pub fn replicate_dir(&self, density: f64, seed: u64) -> PathBuf {
        self.out_dir
            .join("replicates")
            .join(format!("{}-rho{:.3}-s{:04}", self.mode, density, seed))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Carries the toml parser's line/column span.
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// The flag-level overrides (CLI and their mirroring env vars).
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub densities: Vec<f64>,
    pub seeds: Vec<u64>,
    pub episodes: Option<u32>,
    pub epochs: Option<u32>,
    pub out: Option<PathBuf>,
}

/// Resolves the full layer stack into a validated campaign.
pub fn load(
    preset: Option<Preset>,
    file: Option<&Path>,
    ov: &Overrides,
) -> Result<Campaign, ConfigError> {
    let mut c = Campaign::default();
    if let Some(p) = preset {
        c.apply_preset(p);
    }
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let f: FileConfig = toml::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        f.apply(&mut c);
    }
    if let Some(m) = ov.mode {
        c.mode = m;
    }
    if !ov.densities.is_empty() {
        c.densities = ov.densities.clone();
    }
    if !ov.seeds.is_empty() {
        c.seeds = ov.seeds.clone();
    }
    if let Some(e) = ov.episodes {
        c.episodes = e;
    }
    if let Some(k) = ov.epochs {
        c.epochs = k;
    }
    if let Some(o) = &ov.out {
        c.out_dir = o.clone();
    }
    if c.scenario == Scenario::RoadClosure && c.sim.road.closures.is_empty() {
        // Two closed stretches on the outermost lane, scaled with the
        // ring; on the 200-length desk ring these are [30, 70) and
        // [120, 160).
        let l = c.sim.road.length;
        c.sim.road.closures = vec![
            Closure { lane: 0, start: 0.15 * l, end: 0.35 * l },
            Closure { lane: 0, start: 0.60 * l, end: 0.80 * l },
        ];
    }
    c.tie_agent();
    c.validate()?;
    Ok(c)
}

// ---------------------------------------------------------------------
// File schema: every key optional, unknown keys rejected.

macro_rules! overlay {
    ($src:expr => $dst:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })+
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<Scenario>,
    mode: Option<Mode>,
    densities: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    episodes: Option<u32>,
    epochs: Option<u32>,
    eval_window: Option<u32>,
    rl_fraction: Option<f64>,
    checkpoint_every: Option<u32>,
    qp_trace: Option<bool>,
    out_dir: Option<PathBuf>,
    noise_bound: Option<[f64; 4]>,
    road: Option<RoadSection>,
    vehicle: Option<VehicleSection>,
    limits: Option<LimitsSection>,
    planner: Option<PlannerSection>,
    supervisor: Option<SupervisorSection>,
    idm: Option<IdmSection>,
    gap: Option<GapSection>,
    agent: Option<AgentSection>,
    sim: Option<SimSection>,
}

impl FileConfig {
    fn apply(self, c: &mut Campaign) {
        overlay!(self => *c; scenario, mode, densities, seeds, episodes, epochs,
                 eval_window, rl_fraction, checkpoint_every, qp_trace, out_dir);
        if let Some(w) = self.noise_bound {
            c.sim.noise_bound = w;
        }
        if let Some(s) = self.road {
            s.apply(&mut c.sim.road);
        }
        if let Some(s) = self.vehicle {
            overlay!(s => c.sim.bicycle; ts, wheelbase);
        }
        if let Some(s) = self.limits {
            overlay!(s => c.sim.bounds; tan_delta_max, accel_min, accel_max);
        }
        if let Some(s) = self.planner {
            overlay!(s => c.sim.planner; desired_speed, speed_gain, lane_change_duration,
                     recenter_duration, v_eps);
        }
        if let Some(s) = self.supervisor {
            overlay!(s => c.sim.supervisor; eta, eta_lat, d_min, time_headway, lane_margin,
                     big_m, es_heading_gain, es_lateral_gain);
        }
        if let Some(s) = self.idm {
            overlay!(s => c.sim.idm; v0, t_headway, s0, a_max, b_comf, delta);
        }
        if let Some(s) = self.gap {
            overlay!(s => c.sim.gap; front_min, rear_min, incentive_margin, b_safe);
        }
        if let Some(s) = self.agent {
            s.apply(&mut c.agent);
        }
        if let Some(s) = self.sim {
            overlay!(s => c.sim; ticks_per_epoch, comfort_theta, flow_weight, k_f);
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadSection {
    length: Option<f64>,
    lanes: Option<usize>,
    lane_width: Option<f64>,
    vehicle_length: Option<f64>,
    sensing_range: Option<f64>,
    comm_range: Option<f64>,
    closures: Option<Vec<ClosureSection>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClosureSection {
    lane: usize,
    start: f64,
    end: f64,
}

impl RoadSection {
    fn apply(self, road: &mut RoadConfig) {
        overlay!(self => *road; length, lane_width, vehicle_length, sensing_range, comm_range);
        if let Some(n) = self.lanes {
            road.lane_count = n;
        }
        if let Some(cs) = self.closures {
            road.closures = cs
                .into_iter()
                .map(|c| Closure { lane: c.lane, start: c.start, end: c.end })
                .collect();
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VehicleSection {
    ts: Option<f64>,
    wheelbase: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsSection {
    tan_delta_max: Option<f64>,
    accel_min: Option<f64>,
    accel_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlannerSection {
    desired_speed: Option<f64>,
    speed_gain: Option<f64>,
    lane_change_duration: Option<f64>,
    recenter_duration: Option<f64>,
    v_eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SupervisorSection {
    eta: Option<f64>,
    eta_lat: Option<f64>,
    d_min: Option<f64>,
    time_headway: Option<f64>,
    lane_margin: Option<f64>,
    big_m: Option<f64>,
    es_heading_gain: Option<f64>,
    es_lateral_gain: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdmSection {
    v0: Option<f64>,
    t_headway: Option<f64>,
    s0: Option<f64>,
    a_max: Option<f64>,
    b_comf: Option<f64>,
    delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GapSection {
    front_min: Option<f64>,
    rear_min: Option<f64>,
    incentive_margin: Option<f64>,
    b_safe: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentSection {
    hidden: Option<[usize; 2]>,
    buffer_capacity: Option<usize>,
    batch_size: Option<usize>,
    gamma: Option<f64>,
    lr: Option<f64>,
    eps_start: Option<f64>,
    eps_end: Option<f64>,
    eps_frac: Option<f64>,
    target_sync: Option<u32>,
}

impl AgentSection {
    fn apply(self, a: &mut AgentConfig) {
        overlay!(self => *a; hidden, buffer_capacity, batch_size, gamma, lr,
                 eps_start, eps_end, eps_frac, target_sync);
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    ticks_per_epoch: Option<u32>,
    comfort_theta: Option<f64>,
    flow_weight: Option<f64>,
    k_f: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file_with(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn layers_stack_in_order() {
        let f = file_with(
            "episodes = 7\nmode = \"idm\"\n[road]\nlength = 300.0\n[supervisor]\neta = 0.01\n",
        );
        let ov = Overrides { episodes: Some(9), ..Overrides::default() };
        let c = load(Some(Preset::Desk), Some(f.path()), &ov).unwrap();
        // Preset set 200, file overrode to 300; flag beat the file's 7.
        assert_eq!(c.sim.road.length, 300.0);
        assert_eq!(c.episodes, 9);
        assert_eq!(c.mode, Mode::Idm);
        assert_eq!(c.sim.supervisor.eta, 0.01);
        // Untouched preset values survive.
        assert_eq!(c.sim.road.vehicle_length, 1.0);
        assert_eq!(c.sim.supervisor.time_headway, 1.5);
    }

    #[test]
    fn unknown_keys_are_line_precise_errors() {
        let f = file_with("episodes = 3\ntypo_key = 1\n");
        let err = load(None, Some(f.path()), &Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse { .. }), "{msg}");
        let detail = format!("{:?}", err);
        assert!(detail.contains("typo_key"), "{detail}");
    }

    #[test]
    fn closure_scenario_fills_scaled_defaults() {
        let f = file_with("scenario = \"road_closure\"\n");
        let c = load(Some(Preset::Desk), Some(f.path()), &Overrides::default()).unwrap();
        assert_eq!(c.sim.road.closures.len(), 2);
        assert_eq!(c.sim.road.closures[0].start, 30.0);
        assert_eq!(c.sim.road.closures[0].end, 70.0);
        assert_eq!(c.sim.road.closures[1].start, 120.0);
        assert_eq!(c.sim.road.closures[1].end, 160.0);
    }

    #[test]
    fn validation_rejects_bad_grids() {
        let reject = |text: &str, needle: &str| {
            let f = file_with(text);
            let err = load(None, Some(f.path()), &Overrides::default()).unwrap_err();
            assert!(err.to_string().contains(needle), "{err} missing {needle}");
        };
        reject("densities = [0.0]", "densities");
        reject("densities = [1.5]", "densities");
        reject("seeds = [3, 3]", "distinct");
        reject("episodes = 0", "episodes");
        reject("rl_fraction = 1.2", "rl_fraction");
        reject(
            "scenario = \"freeway\"\n[road]\nclosures = [{lane = 0, start = 1.0, end = 2.0}]",
            "freeway",
        );
        reject(
            "scenario = \"road_closure\"\n[road]\nclosures = [{lane = 9, start = 1.0, end = 2.0}]",
            "lane 9",
        );
    }

    #[test]
    fn agent_normalizers_follow_their_sources() {
        let f = file_with("[road]\nsensing_range = 80.0\n[planner]\ndesired_speed = 25.0\n");
        let c = load(None, Some(f.path()), &Overrides::default()).unwrap();
        assert_eq!(c.agent.gap_norm, 80.0);
        assert_eq!(c.agent.speed_norm, 25.0);
        assert_eq!(c.agent.k_f, c.sim.k_f);
    }
}
