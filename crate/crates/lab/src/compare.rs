//! Side-by-side report for two campaigns run on the same grid: flow and
//! comfort deltas per density, and whether each side's override totals
//! grow with density.

use serde::{Deserialize, Serialize};

use crate::outputs::{mean_std, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityComparison {
    pub density: f64,
    pub flow_a: SeedStats,
    pub flow_b: SeedStats,
    pub comfort_a: SeedStats,
    pub comfort_b: SeedStats,
    /// a minus b, on the seed means.
    pub delta_flow: f64,
    pub delta_comfort: f64,
    pub overrides_a: f64,
    pub overrides_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub densities: Vec<DensityComparison>,
    /// Mean override totals nondecreasing along the density axis.
    pub override_trend_a: bool,
    pub override_trend_b: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CompareError {
    #[error("grids differ: side a has {a} rows, side b has {b}")]
    RowCount { a: usize, b: usize },
    #[error("grids differ at row {row}: a is (ρ={da}, seed {sa}), b is (ρ={db}, seed {sb})")]
    KeyMismatch { row: usize, da: f64, sa: u64, db: f64, sb: u64 },
    #[error("nothing to compare")]
    Empty,
}

/// Both sides must carry the same (density, seed) cells in the same
/// order — which they do when both came from this tool, since summaries
/// are written in key order.
pub fn compare_modes(a: &[SummaryRow], b: &[SummaryRow]) -> Result<Comparison, CompareError> {
    if a.is_empty() || b.is_empty() {
        return Err(CompareError::Empty);
    }
    if a.len() != b.len() {
        return Err(CompareError::RowCount { a: a.len(), b: b.len() });
    }
    for (row, (ra, rb)) in a.iter().zip(b).enumerate() {
        if ra.density != rb.density || ra.seed != rb.seed {
            return Err(CompareError::KeyMismatch {
                row,
                da: ra.density,
                sa: ra.seed,
                db: rb.density,
                sb: rb.seed,
            });
        }
    }

    let mut densities: Vec<f64> = Vec::new();
    for r in a {
        if !densities.contains(&r.density) {
            densities.push(r.density);
        }
    }

    let cell = |rows: &[SummaryRow], d: f64, pick: fn(&SummaryRow) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| r.density == d).map(pick).collect()
    };
    let stats = |vals: &[f64]| -> SeedStats {
        let (mean, std) = mean_std(vals);
        SeedStats { mean, std }
    };

    let mut out = Vec::with_capacity(densities.len());
    for &d in &densities {
        let flow_a = stats(&cell(a, d, |r| r.mean_f));
        let flow_b = stats(&cell(b, d, |r| r.mean_f));
        let comfort_a = stats(&cell(a, d, |r| r.mean_c));
        let comfort_b = stats(&cell(b, d, |r| r.mean_c));
        out.push(DensityComparison {
            density: d,
            delta_flow: flow_a.mean - flow_b.mean,
            delta_comfort: comfort_a.mean - comfort_b.mean,
            overrides_a: mean_std(&cell(a, d, |r| r.total_overrides as f64)).0,
            overrides_b: mean_std(&cell(b, d, |r| r.total_overrides as f64)).0,
            flow_a,
            flow_b,
            comfort_a,
            comfort_b,
        });
    }
    let nondecreasing = |pick: fn(&DensityComparison) -> f64| {
        out.windows(2).all(|w| pick(&w[1]) >= pick(&w[0]))
    };
    Ok(Comparison {
        override_trend_a: nondecreasing(|c| c.overrides_a),
        override_trend_b: nondecreasing(|c| c.overrides_b),
        densities: out,
    })
}

/// Plain-text rendering for the terminal.
pub fn render(mode_a: &str, mode_b: &str, cmp: &Comparison) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "density  ΔF (a−b)    ΔC (a−b)    F_a (±σ)            F_b (±σ)");
    for d in &cmp.densities {
        let _ = writeln!(
            s,
            "{:<8} {:<+11.4} {:<+11.4} {:<9.4} ±{:<8.4} {:<9.4} ±{:<8.4}",
            d.density, d.delta_flow, d.delta_comfort, d.flow_a.mean, d.flow_a.std,
            d.flow_b.mean, d.flow_b.std,
        );
    }
    let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
    let _ = writeln!(
        s,
        "override trend nondecreasing with density: {mode_a} {}, {mode_b} {}",
        verdict(cmp.override_trend_a),
        verdict(cmp.override_trend_b),
    );
    s
}
