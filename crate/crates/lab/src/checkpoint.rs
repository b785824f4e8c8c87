//! Training checkpoints: plain text, written atomically at episode
//! boundaries. A checkpoint plus the epoch CSV is everything a resumed
//! run needs to continue bit-for-bit: network and target weights, replay
//! contents, and the word positions of the exploration and sampling
//! streams. Floats round-trip exactly through the shortest-decimal
//! formatter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context};
use lanelab_core::agent;
use lanelab_core::agent::{AgentConfig, DqnAgent, Observation, ReplayBuffer, Transition};
use lanelab_core::nn::Mlp;
use lanelab_core::planner::ACTION_COUNT;

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
const VERSION: &str = "lanelab-checkpoint v1";

#[derive(Debug)]
pub struct Checkpoint {
    /// Completed episodes; the resumed run starts here.
    pub episode: u32,
    pub global_epoch: u64,
    pub agent: DqnAgent,
    pub buffer: ReplayBuffer,
    pub expl_pos: u128,
    pub samp_pos: u128,
}

fn push_flat(out: &mut String, label: &str, flat: &[f64]) {
    out.push_str(label);
    for v in flat {
        write!(out, " {v}").expect("string write");
    }
    out.push('\n');
}

fn push_obs(out: &mut String, o: &Observation) {
    for v in o.obs.iter().chain(&o.shared) {
        write!(out, " {v}").expect("string write");
    }
}

pub fn save(
    path: &Path,
    episode: u32,
    global_epoch: u64,
    agent: &DqnAgent,
    buffer: &ReplayBuffer,
    expl_pos: u128,
    samp_pos: u128,
) -> anyhow::Result<()> {
    let mut out = String::new();
    out.push_str(VERSION);
    out.push('\n');
    writeln!(out, "episode {episode}")?;
    writeln!(out, "global_epoch {global_epoch}")?;
    writeln!(out, "train_steps {}", agent.train_steps)?;
    writeln!(out, "steps_since_sync {}", agent.steps_since_sync)?;
    writeln!(out, "expl_pos {expl_pos}")?;
    writeln!(out, "samp_pos {samp_pos}")?;
    out.push_str("dims");
    for d in agent.q.dims() {
        write!(out, " {d}")?;
    }
    out.push('\n');
    push_flat(&mut out, "q", &agent.q.to_flat());
    push_flat(&mut out, "target", &agent.target.to_flat());
    writeln!(out, "buffer {}", buffer.len())?;
    for t in buffer.iter() {
        write!(out, "t {} {} {}", t.action, t.reward, u8::from(t.terminal))?;
        push_obs(&mut out, &t.obs);
        push_obs(&mut out, &t.next);
        out.push('\n');
    }

    // Write beside the target and rename over it, so an interrupted save
    // never leaves a torn checkpoint.
    let tmp = path.with_file_name(format!(
        "{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or(CHECKPOINT_FILE)
    ));
    fs::write(&tmp, out).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

struct Parser<'a> {
    lines: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> Parser<'a> {
    /// Next line, which must start with `key`; returns the remaining
    /// whitespace-separated fields.
    fn field(&mut self, key: &str) -> anyhow::Result<std::str::SplitWhitespace<'a>> {
        self.lineno += 1;
        let line = self
            .lines
            .next()
            .with_context(|| format!("checkpoint truncated before `{key}`"))?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or("");
        ensure!(head == key, "line {}: expected `{key}`, found `{head}`", self.lineno);
        Ok(parts)
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> anyhow::Result<T> {
        let mut parts = self.field(key)?;
        let token = parts.next().with_context(|| format!("`{key}` missing its value"))?;
        token.parse().map_err(|_| anyhow::anyhow!("line {}: bad `{key}` value", self.lineno))
    }

    fn floats(&mut self, key: &str, expect: usize) -> anyhow::Result<Vec<f64>> {
        let parts = self.field(key)?;
        let vals: Result<Vec<f64>, _> = parts.map(str::parse).collect();
        let vals = vals.map_err(|_| anyhow::anyhow!("line {}: non-numeric `{key}`", self.lineno))?;
        ensure!(
            vals.len() == expect,
            "line {}: `{key}` holds {} values, expected {expect}",
            self.lineno,
            vals.len()
        );
        Ok(vals)
    }
}

fn parse_obs(it: &mut std::str::SplitWhitespace<'_>, lineno: usize) -> anyhow::Result<Observation> {
    let mut take = |len: usize| -> anyhow::Result<Vec<f64>> {
        (0..len)
            .map(|_| {
                it.next()
                    .with_context(|| format!("line {lineno}: short transition"))?
                    .parse::<f64>()
                    .map_err(|_| anyhow::anyhow!("line {lineno}: non-numeric transition"))
            })
            .collect()
    };
    let obs_v = take(agent::OBS_LEN)?;
    let shared_v = take(agent::SHARED_LEN)?;
    let mut obs = [0.0; agent::OBS_LEN];
    let mut shared = [0.0; agent::SHARED_LEN];
    obs.copy_from_slice(&obs_v);
    shared.copy_from_slice(&shared_v);
    Ok(Observation { obs, shared })
}

pub fn load(path: &Path, cfg: &AgentConfig) -> anyhow::Result<Checkpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut p = Parser { lines: text.lines(), lineno: 0 };

    let version = p.lines.next().unwrap_or("");
    p.lineno += 1;
    ensure!(version == VERSION, "unsupported checkpoint header `{version}`");

    let episode: u32 = p.scalar("episode")?;
    let global_epoch: u64 = p.scalar("global_epoch")?;
    let train_steps: u64 = p.scalar("train_steps")?;
    let steps_since_sync: u32 = p.scalar("steps_since_sync")?;
    let expl_pos: u128 = p.scalar("expl_pos")?;
    let samp_pos: u128 = p.scalar("samp_pos")?;

    let dims: Vec<usize> = p
        .field("dims")?
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow::anyhow!("bad `dims` line"))?;
    let expect = [agent::INPUT_LEN, cfg.hidden[0], cfg.hidden[1], ACTION_COUNT];
    ensure!(
        dims == expect,
        "checkpoint network {dims:?} does not match the configured {expect:?}"
    );
    let count = param_count(&dims);
    let q = Mlp::from_flat(&dims, &p.floats("q", count)?);
    let target = Mlp::from_flat(&dims, &p.floats("target", count)?);

    let len: usize = p.scalar("buffer")?;
    ensure!(len <= cfg.buffer_capacity, "buffer larger than the configured capacity");
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    for _ in 0..len {
        let mut parts = p.field("t")?;
        let lineno = p.lineno;
        let mut token = |what: &str| -> anyhow::Result<&str> {
            parts.next().with_context(|| format!("line {lineno}: transition missing {what}"))
        };
        let action: u8 = token("action")?
            .parse()
            .map_err(|_| anyhow::anyhow!("line {lineno}: bad action"))?;
        ensure!((action as usize) < ACTION_COUNT, "line {lineno}: action out of range");
        let reward: f64 = token("reward")?
            .parse()
            .map_err(|_| anyhow::anyhow!("line {lineno}: bad reward"))?;
        let terminal = match token("terminal flag")? {
            "0" => false,
            "1" => true,
            other => bail!("line {lineno}: bad terminal flag `{other}`"),
        };
        let obs = parse_obs(&mut parts, lineno)?;
        let next = parse_obs(&mut parts, lineno)?;
        ensure!(parts.next().is_none(), "line {lineno}: trailing transition fields");
        buffer.push(Transition { obs, action, reward, next, terminal });
    }

    Ok(Checkpoint {
        episode,
        global_epoch,
        agent: DqnAgent { q, target, cfg: *cfg, train_steps, steps_since_sync },
        buffer,
        expl_pos,
        samp_pos,
    })
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
