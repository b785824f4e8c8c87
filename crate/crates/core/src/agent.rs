//! Observation encoding, replay memory, and the shared Q-network.
//!
//! Every learning vehicle feeds the same network and the same buffer;
//! an agent is therefore population state, not per-vehicle state. The
//! observation is a fixed-width encoding of the ego's sensing picture
//! plus a shared slot per lane carrying the mean speed of communicating
//! vehicles, so the input layer sees `OBS_LEN + SHARED_LEN` values.

use alloc::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::env::{EgoPerception, SharedLane};
use crate::nn::{Gradients, Mlp};
use crate::planner::ACTION_COUNT;
use crate::rngs::{self, StreamId};

/// Ego speed, lane index, six (gap, relative speed) pairs, and the
/// trailing lane-change count.
pub const OBS_LEN: usize = 15;
/// Mean communicated speed for current/left/right lanes.
pub const SHARED_LEN: usize = 3;
pub const INPUT_LEN: usize = OBS_LEN + SHARED_LEN;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub hidden: [usize; 2],
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the run over which epsilon decays linearly.
    pub eps_frac: f64,
    /// Hard target-network sync period, in train steps.
    pub target_sync: u32,
    /// Gap normalizer; matches the sensing range.
    pub gap_norm: f64,
    /// Speed normalizer; matches the desired speed.
    pub speed_norm: f64,
    /// Lane-change window; matches the environment's.
    pub k_f: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: [64, 64],
            buffer_capacity: 50_000,
            batch_size: 64,
            gamma: 0.95,
            lr: 1e-3,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_frac: 0.3,
            target_sync: 500,
            gap_norm: 100.0,
            speed_norm: 30.0,
            k_f: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub obs: [f64; OBS_LEN],
    pub shared: [f64; SHARED_LEN],
}

impl Observation {
    pub fn input(&self) -> [f64; INPUT_LEN] {
        let mut out = [0.0; INPUT_LEN];
        out[..OBS_LEN].copy_from_slice(&self.obs);
        out[OBS_LEN..].copy_from_slice(&self.shared);
        out
    }
}

/// Normalized observation. A missing neighbor in an existing lane reads
/// as a clear gap at sensing range; a missing lane reads as a wall
/// (zero gap). An empty shared slot falls back to the ego speed, an
/// absent lane to -1.
pub fn observe(per: &EgoPerception, cfg: &AgentConfig) -> Observation {
    let mut obs = [0.0; OBS_LEN];
    obs[0] = per.v / cfg.speed_norm;
    obs[1] = per.lane as f64 / per.lane_count as f64;
    for (slot, lane) in per.lanes.iter().enumerate() {
        let base = 2 + slot * 4;
        for (off, pair) in [(0, lane.leader), (2, lane.follower)] {
            let (gap, dv) = if !lane.exists {
                (0.0, 0.0)
            } else {
                pair.unwrap_or((cfg.gap_norm, 0.0))
            };
            obs[base + off] = gap / cfg.gap_norm;
            obs[base + off + 1] = dv / cfg.speed_norm;
        }
    }
    obs[14] = -(per.recent_changes as f64) / cfg.k_f as f64;

    let mut shared = [0.0; SHARED_LEN];
    for (slot, s) in per.shared.iter().enumerate() {
        shared[slot] = match s {
            SharedLane::Absent => -1.0,
            SharedLane::Empty => per.v / cfg.speed_norm,
            SharedLane::Mean(m) => m / cfg.speed_norm,
        };
    }
    Observation { obs, shared }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: u8,
    pub reward: f64,
    pub next: Observation,
    pub terminal: bool,
}

/// Bounded FIFO replay memory with uniform with-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { data: VecDeque::with_capacity(capacity.min(1 << 20)), capacity }
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }
}

/// One Q-network and its frozen copy, shared by the whole population.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub q: Mlp,
    pub target: Mlp,
    pub cfg: AgentConfig,
    pub train_steps: u64,
    pub steps_since_sync: u32,
}

impl DqnAgent {
    pub fn new(cfg: AgentConfig, seed: u64) -> Self {
        let dims = [INPUT_LEN, cfg.hidden[0], cfg.hidden[1], ACTION_COUNT];
        let mut init = rngs::stream(seed, StreamId::WeightInit);
        let q = Mlp::xavier(&dims, &mut init);
        let target = q.clone();
        DqnAgent { q, target, cfg, train_steps: 0, steps_since_sync: 0 }
    }

    pub fn q_values(&self, o: &Observation) -> [f64; ACTION_COUNT] {
        let out = self.q.forward(&o.input());
        [out[0], out[1], out[2]]
    }

    /// Linear decay over the first `eps_frac` of `total_epochs`, flat after.
    pub fn epsilon(&self, epoch: u64, total_epochs: u64) -> f64 {
        let horizon = (total_epochs as f64 * self.cfg.eps_frac).max(1.0);
        let t = (epoch as f64 / horizon).min(1.0);
        self.cfg.eps_start + t * (self.cfg.eps_end - self.cfg.eps_start)
    }

    /// Epsilon-greedy over the given Q row; greedy ties break toward the
    /// lowest action index.
    pub fn select_action(
        q_values: &[f64; ACTION_COUNT],
        eps: f64,
        rng: &mut ChaCha12Rng,
    ) -> usize {
        if rng.gen::<f64>() < eps {
            rng.gen_range(0..ACTION_COUNT)
        } else {
            greedy(q_values)
        }
    }

    /// One minibatch of temporal-difference learning. Returns the
    /// pre-update loss, or `None` while the buffer is still shorter
    /// than a batch.
    pub fn train_step(&mut self, buffer: &ReplayBuffer, rng: &mut ChaCha12Rng) -> Option<f64> {
        let b = self.cfg.batch_size;
        if buffer.len() < b {
            return None;
        }
        let mut grads = Gradients::zeros_like(&self.q);
        let mut loss = 0.0;
        for _ in 0..b {
            let t = buffer.get(rng.gen_range(0..buffer.len()));
            let y = self.td_target(t);
            let cache = self.q.forward_cached(&t.obs.input());
            let q_a = cache.output()[t.action as usize];
            let err = q_a - y;
            loss += err * err;
            let mut grad_out = [0.0; ACTION_COUNT];
            grad_out[t.action as usize] = 2.0 * err / b as f64;
            self.q.backward(&cache, &grad_out, &mut grads);
        }
        self.q.apply_sgd(&grads, self.cfg.lr);
        self.train_steps += 1;
        self.steps_since_sync += 1;
        if self.steps_since_sync >= self.cfg.target_sync {
            self.target = self.q.clone();
            self.steps_since_sync = 0;
        }
        Some(loss / b as f64)
    }

    /// Bootstrap target: reward only at terminals, otherwise reward plus
    /// the discounted best frozen-network value of the next observation.
    pub fn td_target(&self, t: &Transition) -> f64 {
        if t.terminal {
            t.reward
        } else {
            let next = self.target.forward(&t.next.input());
            let best = next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            t.reward + self.cfg.gamma * best
        }
    }
}

pub fn greedy(q_values: &[f64; ACTION_COUNT]) -> usize {
    let mut best = 0;
    for i in 1..ACTION_COUNT {
        if q_values[i] > q_values[best] {
            best = i;
        }
    }
    best
}

/// Discounted return of an episode's per-epoch rewards from its start.
pub fn episode_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}
