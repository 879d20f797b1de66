//! Parameter sweeps over vehicle count, rogue fraction and seed.

use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::metrics::{aggregate, RunMetrics};
use crate::model::{ConfigError, ScenarioConfig, ValidatedConfig};
use crate::netsim::{run_with, RunOptions};
use crate::rng::mix64;

fn default_counts() -> Vec<u32> {
    (1..=8).map(|i| i * 500).collect()
}

fn default_fractions() -> Vec<f64> {
    (0..=8).map(|i| f64::from(i) * 0.05).collect()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_counts")]
    pub vehicle_counts: Vec<u32>,
    #[serde(default = "default_fractions")]
    pub rogue_fractions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base: ScenarioConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            vehicle_counts: default_counts(),
            rogue_fractions: default_fractions(),
            seeds: default_seeds(),
            base: ScenarioConfig::default(),
        }
    }
}

/// One point of the sweep grid with its ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub n_vehicles: u32,
    pub rogue_fraction: f64,
    /// Seed as listed in the spec.
    pub seed: u64,
    /// Scenario carrying the derived per-cell seed.
    pub config: ValidatedConfig,
}

/// Per-cell seed: the listed seed xor a hash of the cell coordinates.
pub fn cell_seed(seed: u64, n_vehicles: u32, rogue_fraction: f64) -> u64 {
    seed ^ mix64(u64::from(n_vehicles) ^ mix64(rogue_fraction.to_bits()))
}

impl SweepSpec {
    /// Expands and validates every cell, failing on the first invalid one.
    pub fn cells(&self) -> Result<Vec<SweepCell>, ConfigError> {
        for (field, empty) in [
            ("vehicle_counts", self.vehicle_counts.is_empty()),
            ("rogue_fractions", self.rogue_fractions.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(ConfigError::Invalid {
                    field,
                    reason: "sweep list must not be empty".into(),
                });
            }
        }
        let mut cells = Vec::new();
        for &n in &self.vehicle_counts {
            for &f in &self.rogue_fractions {
                for &seed in &self.seeds {
                    let config = ScenarioConfig {
                        n_vehicles: n,
                        rogue_fraction: f,
                        seed: cell_seed(seed, n, f),
                        ..self.base.clone()
                    }
                    .validate()?;
                    cells.push(SweepCell {
                        n_vehicles: n,
                        rogue_fraction: f,
                        seed,
                        config,
                    });
                }
            }
        }
        Ok(cells)
    }
}

pub fn run_cell(cell: &SweepCell, exec: Execution) -> RunMetrics {
    let out = run_with(
        &cell.config,
        RunOptions {
            record_events: false,
            exec,
        },
    );
    aggregate(cell.config.config(), cell.seed, &out)
}

/// Runs every cell, handing each finished record to `on_done` as it completes.
/// Completion order depends on scheduling; record contents do not.
pub fn run_cells<F>(cells: Vec<SweepCell>, exec: Execution, threads: Option<usize>, on_done: F)
where
    F: Fn(RunMetrics) + Sync + Send,
{
    // Parallelism lives at the cell level here; each run stays sequential inside.
    exec::for_each_coarse(cells, exec, threads, |cell| {
        on_done(run_cell(&cell, Execution::Sequential))
    });
}

/// Runs every cell and returns records in grid order.
pub fn run_sweep(
    spec: &SweepSpec,
    exec: Execution,
    threads: Option<usize>,
) -> Result<Vec<RunMetrics>, ConfigError> {
    let cells = spec.cells()?;
    let n = cells.len();
    let slots: Vec<std::sync::Mutex<Option<RunMetrics>>> =
        (0..n).map(|_| std::sync::Mutex::new(None)).collect();
    let indexed: Vec<(usize, SweepCell)> = cells.into_iter().enumerate().collect();
    exec::for_each_coarse(indexed, exec, threads, |(i, cell)| {
        let m = run_cell(&cell, Execution::Sequential);
        *slots[i].lock().expect("slot lock") = Some(m);
    });
    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every cell ran"))
        .collect())
}
