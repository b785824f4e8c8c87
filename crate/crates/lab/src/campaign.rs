//! Campaign execution: one deterministic training or evaluation rollout
//! per (density, seed) cell, fanned out over a work pool and merged in
//! key order.
//!
//! Seeding is hierarchical. A cell's root is `child_seed(seed, ρ·1000)`;
//! scenes reseed per episode from `child_seed(root, episode)`; the
//! exploration, sampling and weight-init streams hang off the root with
//! fixed stream ids. Toggling one consumer never shifts another, and a
//! checkpoint only has to remember two stream positions.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, ensure, Context};
use lanelab_core::agent::{observe, DqnAgent, Observation, ReplayBuffer, Transition};
use lanelab_core::env::{
    env_epoch, init_scene, perceive, vehicle_count_for_density, ControllerKind, PopulationMode,
    SimParams, SimState, VehicleDecision, VetEvent,
};
use lanelab_core::planner::Action;
use lanelab_core::rngs::{self, StreamId};
use lanelab_core::supervisor::Executed;
use lanelab_core::agent as agent_mod;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CHECKPOINT_FILE};
use crate::config::{Campaign, Mode};
use crate::outputs::{self, EpochRow, SummaryRow};

/// What one replicate leaves behind, beyond its files on disk.
pub struct ReplicateOutcome {
    pub density: f64,
    pub seed: u64,
    pub rows: Vec<EpochRow>,
    pub summary: SummaryRow,
    /// The trained network, for in-process evaluation. Absent in idm mode.
    pub agent: Option<DqnAgent>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Train,
    Eval,
}

impl Phase {
    fn epochs_file(self) -> &'static str {
        match self {
            Phase::Train => "epochs.csv",
            Phase::Eval => "eval-epochs.csv",
        }
    }

    fn summary_file(self) -> &'static str {
        match self {
            Phase::Train => "summary.csv",
            Phase::Eval => "eval-summary.csv",
        }
    }
}

/// Runs the whole grid with training, writes `summary.csv`, and returns
/// its rows in (density, seed) order.
pub fn run_campaign(c: &Campaign) -> anyhow::Result<Vec<SummaryRow>> {
    run_grid(c, Phase::Train)
}

/// Greedy rollouts against the latest checkpoints (fresh networks where
/// none exist); writes `eval-summary.csv`. Training artifacts stay
/// untouched.
pub fn evaluate_campaign(c: &Campaign) -> anyhow::Result<Vec<SummaryRow>> {
    run_grid(c, Phase::Eval)
}

pub fn run_replicate(c: &Campaign, density: f64, seed: u64) -> anyhow::Result<ReplicateOutcome> {
    run_cell(c, density, seed, Phase::Train)
}

pub fn evaluate_replicate(
    c: &Campaign,
    density: f64,
    seed: u64,
) -> anyhow::Result<ReplicateOutcome> {
    run_cell(c, density, seed, Phase::Eval)
}

fn run_grid(c: &Campaign, phase: Phase) -> anyhow::Result<Vec<SummaryRow>> {
    fs::create_dir_all(&c.out_dir)
        .with_context(|| format!("creating {}", c.out_dir.display()))?;
    let mut grid: Vec<(f64, u64)> = c
        .densities
        .iter()
        .flat_map(|&d| c.seeds.iter().map(move |&s| (d, s)))
        .collect();
    grid.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    grid.dedup();

    // Indexed collect keeps grid order regardless of completion order.
    let results: Vec<anyhow::Result<ReplicateOutcome>> =
        grid.par_iter().map(|&(d, s)| run_cell(c, d, s, phase)).collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?.summary);
    }
    outputs::write_summary(&c.out_dir.join(phase.summary_file()), &rows)?;
    Ok(rows)
}

fn run_cell(c: &Campaign, density: f64, seed: u64, phase: Phase) -> anyhow::Result<ReplicateOutcome> {
    let p = c.sim_params();
    let n = vehicle_count_for_density(&p.road, p.supervisor.d_min, density);
    ensure!(n >= 1, "density {density} packs no vehicles onto this ring");
    let dir = c.replicate_dir(density, seed);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let root = rngs::child_seed(seed, (density * 1000.0).round() as u64);

    let rows = match (c.mode, phase) {
        (Mode::Idm, _) => run_idm(c, &p, n, root, &dir, phase)?,
        (_, Phase::Train) => return train_cell(c, &p, n, density, seed, root, &dir),
        (_, Phase::Eval) => run_greedy(c, &p, n, root, &dir)?,
    };
    let summary = outputs::summarize(density, seed, &rows, c.eval_window);
    Ok(ReplicateOutcome { density, seed, rows, summary, agent: None })
}

fn scene(
    p: &SimParams,
    n: usize,
    population: PopulationMode,
    root: u64,
    episode: u32,
) -> anyhow::Result<SimState> {
    init_scene(p, n, population, rngs::child_seed(root, episode as u64))
        .map_err(|e| anyhow!("placing episode {episode}: {e}"))
}

fn rl_indices(sim: &SimState) -> Vec<usize> {
    sim.vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == ControllerKind::Rl)
        .map(|(i, _)| i)
        .collect()
}

fn observe_all(sim: &SimState, rl_idx: &[usize], c: &Campaign, p: &SimParams) -> Vec<Observation> {
    rl_idx.iter().map(|&i| observe(&perceive(sim, i, p), &c.agent)).collect()
}

fn epoch_row(episode: u32, epoch: u32, out: &lanelab_core::env::EpochOutcome) -> EpochRow {
    EpochRow {
        episode,
        epoch,
        flow: out.flow,
        comfort: out.comfort,
        reward: out.reward,
        min_headway: out.min_headway,
        overrides: out.overrides,
        es_count: out.es_count,
    }
}

/// Baseline traffic: no agent, no decisions, no checkpoints.
fn run_idm(
    c: &Campaign,
    p: &SimParams,
    n: usize,
    root: u64,
    dir: &Path,
    phase: Phase,
) -> anyhow::Result<Vec<EpochRow>> {
    let mut rows = Vec::with_capacity((c.episodes * c.epochs) as usize);
    for episode in 0..c.episodes {
        let mut sim = scene(p, n, PopulationMode::AllIdm, root, episode)?;
        let decisions = vec![None; sim.vehicles.len()];
        for k in 0..c.epochs {
            let out = env_epoch(&mut sim, p, &decisions);
            rows.push(epoch_row(episode, k, &out));
        }
    }
    outputs::write_epochs(&dir.join(phase.epochs_file()), &rows)?;
    Ok(rows)
}

fn train_cell(
    c: &Campaign,
    p: &SimParams,
    n: usize,
    density: f64,
    seed: u64,
    root: u64,
    dir: &Path,
) -> anyhow::Result<ReplicateOutcome> {
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let epochs_path = dir.join(Phase::Train.epochs_file());
    let total_epochs = c.episodes as u64 * c.epochs as u64;
    let population = PopulationMode::Mixed { rl_fraction: c.rl_fraction };
    let vanilla = c.mode == Mode::VanillaRl;

    let mut expl = rngs::stream(root, StreamId::Exploration);
    let mut samp = rngs::stream(root, StreamId::Sampling);
    let (mut agent, mut buffer, start_episode, mut global_epoch, mut rows);
    if ckpt_path.exists() {
        let ck = checkpoint::load(&ckpt_path, &c.agent)
            .with_context(|| format!("resuming from {}", ckpt_path.display()))?;
        ensure!(
            ck.episode <= c.episodes,
            "checkpoint is {} episodes in, campaign asks for {}",
            ck.episode,
            c.episodes
        );
        expl.set_word_pos(ck.expl_pos);
        samp.set_word_pos(ck.samp_pos);
        agent = ck.agent;
        buffer = ck.buffer;
        start_episode = ck.episode;
        global_epoch = ck.global_epoch;
        rows = outputs::read_epochs(&epochs_path)
            .with_context(|| format!("resuming needs {}", epochs_path.display()))?;
        rows.retain(|r| r.episode < start_episode);
        ensure!(start_episode == 0 || !rows.is_empty(), "checkpoint without its epoch rows");
    } else {
        agent = DqnAgent::new(c.agent, root);
        buffer = ReplayBuffer::new(c.agent.buffer_capacity);
        start_episode = 0;
        global_epoch = 0;
        rows = Vec::new();
    }
    let mut trace = if c.qp_trace {
        Some(TraceWriter::open(&dir.join("qp_trace.jsonl"), start_episode)?)
    } else {
        None
    };

    for episode in start_episode..c.episodes {
        let mut sim = scene(p, n, population, root, episode)?;
        let rl_idx = rl_indices(&sim);
        let mut prev = observe_all(&sim, &rl_idx, c, p);
        for k in 0..c.epochs {
            let eps = agent.epsilon(global_epoch, total_epochs);
            let mut decisions: Vec<Option<VehicleDecision>> = vec![None; sim.vehicles.len()];
            for (slot, &i) in rl_idx.iter().enumerate() {
                let q = agent.q_values(&prev[slot]);
                let a = DqnAgent::select_action(&q, eps, &mut expl);
                decisions[i] = Some(VehicleDecision {
                    proposed: Action::from_index(a).expect("action index in range"),
                    q_values: q,
                });
            }
            let out = env_epoch(&mut sim, p, &decisions);
            let next = observe_all(&sim, &rl_idx, c, p);
            // The episode ends with the epoch budget, or early when an
            // unsupervised run collides.
            let terminal = k + 1 == c.epochs || (vanilla && out.collision);
            for (slot, &i) in rl_idx.iter().enumerate() {
                // The stored action is the one the safety layer actually
                // ran, not the proposal; during a stop it stays at the
                // last action executed before the stop.
                buffer.push(Transition {
                    obs: prev[slot],
                    action: sim.vehicles[i].epoch_action.index() as u8,
                    reward: out.reward,
                    next: next[slot],
                    terminal,
                });
            }
            agent.train_step(&buffer, &mut samp);
            if let Some(t) = &mut trace {
                t.record(episode, k, &out.events)?;
            }
            rows.push(epoch_row(episode, k, &out));
            global_epoch += 1;
            prev = next;
            if terminal {
                break;
            }
        }
        let done = episode + 1 == c.episodes;
        if done || (c.checkpoint_every > 0 && (episode + 1) % c.checkpoint_every == 0) {
            // Rows first: a checkpoint must never claim episodes the CSV
            // does not yet hold.
            outputs::write_epochs(&epochs_path, &rows)?;
            if let Some(t) = &mut trace {
                t.flush()?;
            }
            checkpoint::save(
                &ckpt_path,
                episode + 1,
                global_epoch,
                &agent,
                &buffer,
                expl.get_word_pos(),
                samp.get_word_pos(),
            )?;
        }
    }

    let summary = outputs::summarize(density, seed, &rows, c.eval_window);
    Ok(ReplicateOutcome { density, seed, rows, summary, agent: Some(agent) })
}

/// Greedy rollouts with a frozen network: no exploration, no replay, no
/// weight updates. Loads the cell's checkpoint when one exists.
fn run_greedy(
    c: &Campaign,
    p: &SimParams,
    n: usize,
    root: u64,
    dir: &Path,
) -> anyhow::Result<Vec<EpochRow>> {
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let agent = if ckpt_path.exists() {
        checkpoint::load(&ckpt_path, &c.agent)?.agent
    } else {
        DqnAgent::new(c.agent, root)
    };
    let population = PopulationMode::Mixed { rl_fraction: c.rl_fraction };
    let vanilla = c.mode == Mode::VanillaRl;

    let mut rows = Vec::with_capacity((c.episodes * c.epochs) as usize);
    for episode in 0..c.episodes {
        let mut sim = scene(p, n, population, root, episode)?;
        let rl_idx = rl_indices(&sim);
        let mut prev = observe_all(&sim, &rl_idx, c, p);
        for k in 0..c.epochs {
            let mut decisions: Vec<Option<VehicleDecision>> = vec![None; sim.vehicles.len()];
            for (slot, &i) in rl_idx.iter().enumerate() {
                let q = agent.q_values(&prev[slot]);
                decisions[i] = Some(VehicleDecision {
                    proposed: Action::from_index(agent_mod::greedy(&q)).expect("action index"),
                    q_values: q,
                });
            }
            let out = env_epoch(&mut sim, p, &decisions);
            prev = observe_all(&sim, &rl_idx, c, p);
            rows.push(epoch_row(episode, k, &out));
            if vanilla && out.collision {
                break;
            }
        }
    }
    outputs::write_epochs(&dir.join(Phase::Eval.epochs_file()), &rows)?;
    Ok(rows)
}

// ---------------------------------------------------------------------
// Opt-in JSONL trace of every vetting event.

#[derive(Serialize, Deserialize)]
struct TraceLine {
    episode: u32,
    epoch: u32,
    vehicle: usize,
    proposed: String,
    executed: String,
    overridden: bool,
    es: bool,
    zeta: f64,
    vetted: [Option<bool>; 3],
}

fn action_name(a: Action) -> &'static str {
    match a {
        Action::KeepLane => "keep_lane",
        Action::ChangeLeft => "change_left",
        Action::ChangeRight => "change_right",
    }
}

struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    /// Opens the trace, dropping lines from episodes a resumed run will
    /// replay.
    fn open(path: &Path, start_episode: u32) -> anyhow::Result<Self> {
        let keep = if start_episode > 0 && path.exists() {
            let mut keep = Vec::new();
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                let parsed: TraceLine =
                    serde_json::from_str(&line).context("corrupt qp_trace.jsonl")?;
                if parsed.episode < start_episode {
                    keep.push(line);
                }
            }
            keep
        } else {
            Vec::new()
        };
        let mut out = BufWriter::new(File::create(path)?);
        for line in keep {
            writeln!(out, "{line}")?;
        }
        Ok(TraceWriter { out })
    }

    fn record(&mut self, episode: u32, epoch: u32, events: &[VetEvent]) -> anyhow::Result<()> {
        for e in events {
            let line = TraceLine {
                episode,
                epoch,
                vehicle: e.vehicle,
                proposed: action_name(e.proposed).into(),
                executed: match e.executed {
                    Executed::Action(a) => action_name(a).into(),
                    Executed::EmergencyStop => "emergency_stop".into(),
                },
                overridden: e.overridden,
                es: e.es,
                zeta: e.zeta,
                vetted: e.vetted,
            };
            writeln!(self.out, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    fn flush(&mut self) -> anyhow::Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Paths a finished campaign leaves behind, for the CLI to report.
pub fn artifact_paths(c: &Campaign) -> Vec<PathBuf> {
    let mut v = vec![c.out_dir.join("summary.csv")];
    for &d in &c.densities {
        for &s in &c.seeds {
            v.push(c.replicate_dir(d, s).join("epochs.csv"));
        }
    }
    v
}
