use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lanelab::config::{self, Mode, Overrides, Preset};
use lanelab::{campaign, compare, outputs};

#[derive(Parser)]
#[command(
    name = "lanelab",
    version,
    about = "Safety-filtered lane-change learning on a multi-lane ring road"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by the campaign-shaped subcommands. Every flag has an
/// environment mirror, so batch schedulers can inject settings without
/// editing command lines.
#[derive(Args)]
struct RunArgs {
    /// TOML config file, layered over the preset.
    #[arg(long, env = "LANELAB_CONFIG")]
    config: Option<PathBuf>,
    /// Named parameter bundle (desk fits a laptop, paper is full scale).
    #[arg(long, env = "LANELAB_PRESET", value_enum)]
    preset: Option<Preset>,
    #[arg(long, env = "LANELAB_MODE", value_enum)]
    mode: Option<Mode>,
    /// Density grid, comma separated.
    #[arg(long = "density", env = "LANELAB_DENSITY", value_delimiter = ',')]
    density: Vec<f64>,
    /// Replicate seeds, comma separated.
    #[arg(long = "seed", env = "LANELAB_SEED", value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, env = "LANELAB_EPISODES")]
    episodes: Option<u32>,
    #[arg(long, env = "LANELAB_EPOCHS")]
    epochs: Option<u32>,
    #[arg(long, env = "LANELAB_OUT")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<config::Campaign> {
        let ov = Overrides {
            mode: self.mode,
            densities: self.density.clone(),
            seeds: self.seed.clone(),
            episodes: self.episodes,
            epochs: self.epochs,
            out: self.out.clone(),
        };
        Ok(config::load(self.preset, self.config.as_deref(), &ov)?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train across the (density, seed) grid; writes summary.csv,
    /// per-replicate epochs.csv and checkpoints, and resumes from
    /// checkpoints left by an interrupted run.
    Train(RunArgs),
    /// Greedy rollouts against existing checkpoints (fresh networks where
    /// none exist); writes eval-summary.csv without touching training
    /// artifacts.
    Eval(RunArgs),
    /// Compare two campaign summaries (same grid) density by density.
    Compare {
        /// summary.csv of side a, or its campaign directory.
        a: PathBuf,
        /// summary.csv of side b, or its campaign directory.
        b: PathBuf,
        /// Directory for comparison.json (stdout only when omitted).
        #[arg(long, env = "LANELAB_OUT")]
        out: Option<PathBuf>,
    },
    /// Bundle a finished campaign directory into plot.json.
    Plotdata(RunArgs),
}

fn read_side(p: &Path) -> anyhow::Result<Vec<outputs::SummaryRow>> {
    let path = if p.is_dir() { p.join("summary.csv") } else { p.to_path_buf() };
    outputs::read_summary(&path).with_context(|| format!("reading {}", path.display()))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Train(args) => {
            let c = args.resolve()?;
            let rows = campaign::run_campaign(&c)?;
            println!(
                "trained {} replicates -> {}",
                rows.len(),
                c.out_dir.join("summary.csv").display()
            );
        }
        Cmd::Eval(args) => {
            let c = args.resolve()?;
            let rows = campaign::evaluate_campaign(&c)?;
            println!(
                "evaluated {} replicates -> {}",
                rows.len(),
                c.out_dir.join("eval-summary.csv").display()
            );
        }
        Cmd::Compare { a, b, out } => {
            let ra = read_side(&a)?;
            let rb = read_side(&b)?;
            let cmp = compare::compare_modes(&ra, &rb)?;
            print!("{}", compare::render(&a.display().to_string(), &b.display().to_string(), &cmp));
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                let path = dir.join("comparison.json");
                fs::write(&path, serde_json::to_string_pretty(&cmp)?)?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Plotdata(args) => {
            let c = args.resolve()?;
            let summary_path = c.out_dir.join("summary.csv");
            let summary = outputs::read_summary(&summary_path)
                .with_context(|| format!("reading {}", summary_path.display()))?;
            let mut per_cell = Vec::with_capacity(summary.len());
            for row in &summary {
                let path = c.replicate_dir(row.density, row.seed).join("epochs.csv");
                let rows = outputs::read_epochs(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                per_cell.push((row.density, row.seed, rows));
            }
            let data = outputs::build_plot_data(&summary, &per_cell)?;
            let path = c.out_dir.join("plot.json");
            outputs::write_plot_data(&path, &data)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
