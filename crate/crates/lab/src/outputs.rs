//! File outputs: the two CSV contracts and the plot-ready JSON.
//!
//! Column order and headers are frozen; downstream plotting depends on
//! the exact bytes. Floats go through the shortest-round-trip formatter
//! on both write and read, so a rewrite of re-read rows is byte-stable.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One row of a replicate's `epochs.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub episode: u32,
    pub epoch: u32,
    #[serde(rename = "F")]
    pub flow: f64,
    #[serde(rename = "C")]
    pub comfort: f64,
    pub reward: f64,
    pub min_headway: f64,
    pub overrides: u32,
    pub es_count: u32,
}

/// One row of the campaign `summary.csv`: a (density, seed) replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub density: f64,
    pub seed: u64,
    #[serde(rename = "mean_F")]
    pub mean_f: f64,
    #[serde(rename = "mean_C")]
    pub mean_c: f64,
    pub total_overrides: u64,
    pub total_es: u64,
    pub min_headway: f64,
    pub collision_episodes: u32,
}

/// Collapses a replicate's epoch rows into its summary row. Means use
/// only the trailing `eval_window` epochs; totals, the headway floor and
/// the collision count cover the whole run.
pub fn summarize(density: f64, seed: u64, rows: &[EpochRow], eval_window: u32) -> SummaryRow {
    assert!(!rows.is_empty(), "a replicate records at least one epoch");
    let tail = &rows[rows.len().saturating_sub(eval_window as usize)..];
    let inv = 1.0 / tail.len() as f64;
    let mut collision_episodes = 0;
    let mut current = None;
    for r in rows {
        if r.min_headway < 0.0 && current != Some(r.episode) {
            collision_episodes += 1;
            current = Some(r.episode);
        }
    }
    SummaryRow {
        density,
        seed,
        mean_f: tail.iter().map(|r| r.flow).sum::<f64>() * inv,
        mean_c: tail.iter().map(|r| r.comfort).sum::<f64>() * inv,
        total_overrides: rows.iter().map(|r| u64::from(r.overrides)).sum(),
        total_es: rows.iter().map(|r| u64::from(r.es_count)).sum(),
        min_headway: rows.iter().map(|r| r.min_headway).fold(f64::INFINITY, f64::min),
        collision_episodes,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_epochs(path: &Path, rows: &[EpochRow]) -> anyhow::Result<()> {
    write_csv(path, rows)
}

pub fn read_epochs(path: &Path) -> anyhow::Result<Vec<EpochRow>> {
    read_csv(path)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> anyhow::Result<()> {
    write_csv(path, rows)
}

pub fn read_summary(path: &Path) -> anyhow::Result<Vec<SummaryRow>> {
    read_csv(path)
}

// ---------------------------------------------------------------------
// Plot-ready JSON.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub flow_vs_density: Vec<TrendPoint>,
    pub comfort_vs_density: Vec<TrendPoint>,
    pub headway_traces: Vec<HeadwayTrace>,
}

/// One density on a trend curve, aggregated across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub density: f64,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

/// Per-epoch headway floor of one replicate, in recording order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadwayTrace {
    pub density: f64,
    pub seed: u64,
    pub min_headway: Vec<f64>,
}

/// Mean and sample standard deviation (zero for a single value).
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn trend(summary: &[SummaryRow], pick: impl Fn(&SummaryRow) -> f64) -> Vec<TrendPoint> {
    let mut points: Vec<TrendPoint> = Vec::new();
    for row in summary {
        match points.iter_mut().find(|p| p.density == row.density) {
            Some(p) => p.per_seed.push(pick(row)),
            None => points.push(TrendPoint {
                density: row.density,
                mean: 0.0,
                std: 0.0,
                per_seed: vec![pick(row)],
            }),
        }
    }
    for p in &mut points {
        (p.mean, p.std) = mean_std(&p.per_seed);
    }
    points
}

/// Assembles the plot series from a summary and the per-replicate epoch
/// rows (keyed by density and seed, in summary order).
pub fn build_plot_data(
    summary: &[SummaryRow],
    epochs: &[(f64, u64, Vec<EpochRow>)],
) -> anyhow::Result<PlotData> {
    anyhow::ensure!(!summary.is_empty(), "no results to plot");
    Ok(PlotData {
        flow_vs_density: trend(summary, |r| r.mean_f),
        comfort_vs_density: trend(summary, |r| r.mean_c),
        headway_traces: epochs
            .iter()
            .map(|(density, seed, rows)| HeadwayTrace {
                density: *density,
                seed: *seed,
                min_headway: rows.iter().map(|r| r.min_headway).collect(),
            })
            .collect(),
    })
}

pub fn write_plot_data(path: &Path, data: &PlotData) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(data)?)?;
    Ok(())
}
