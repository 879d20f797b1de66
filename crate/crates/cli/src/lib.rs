//! Subcommand implementations for the `fround` binary.
//!
//! Exit codes: 0 success, 1 invalid configuration (including malformed JSON),
//! 2 I/O failure.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use fround_core::export::{reports_json, write_metrics_csv, write_timing_csv};
use fround_core::metrics::{aggregate, METRICS_HEADER, TIMING_HEADER};
use fround_core::model::{ScenarioConfig, ValidatedConfig};
use fround_core::netsim::{run_with, RunOptions};
use fround_core::sweep::{run_cells, SweepSpec};
use fround_core::Execution;
use thiserror::Error;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const REPORTS_FILE: &str = "reports.json";
pub const EVENTS_FILE: &str = "events.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Io { .. } => 2,
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn config(path: &Path, message: impl ToString) -> Self {
        CliError::Config {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_config(path: &Path) -> Result<ValidatedConfig, CliError> {
    let text = read(path)?;
    let cfg: ScenarioConfig = serde_json::from_str(&text).map_err(|e| CliError::config(path, e))?;
    cfg.validate().map_err(|e| CliError::config(path, e))
}

pub fn load_sweep(path: &Path) -> Result<SweepSpec, CliError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::config(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Runs one scenario and writes `metrics.csv`, `timing.csv`, `reports.json`
/// and, with `emit_events`, `events.csv` into `out_dir`.
pub fn run_scenario(
    config_path: &Path,
    seed_override: Option<u64>,
    out_dir: &Path,
    emit_events: bool,
) -> Result<(), CliError> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = seed_override {
        cfg = cfg.with_seed(seed);
    }
    ensure_dir(out_dir)?;
    log::info!(
        "running n_vehicles={} rogue_fraction={} seed={}",
        cfg.n_vehicles,
        cfg.rogue_fraction,
        cfg.seed
    );
    let out = run_with(
        &cfg,
        RunOptions {
            record_events: emit_events,
            exec: Execution::Parallel,
        },
    );
    let metrics = aggregate(cfg.config(), cfg.seed, &out);
    let rows = [metrics];

    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> io::Result<()>| {
        let path = out_dir.join(name);
        let mut w = create(&path)?;
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))
    };
    write(METRICS_FILE, &|w| write_metrics_csv(w, &rows))?;
    write(TIMING_FILE, &|w| write_timing_csv(w, &rows))?;
    write(REPORTS_FILE, &|w| {
        w.write_all(reports_json(&out.reports).as_bytes())
    })?;
    if emit_events {
        write(EVENTS_FILE, &|w| out.log.write_csv(w))?;
    }
    log::info!(
        "done: {} windows, tpr={} fpr={} plr={}",
        out.reports.len(),
        rows[0].tpr,
        rows[0].fpr,
        rows[0].plr
    );
    Ok(())
}

struct SweepWriters {
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    error: Option<CliError>,
}

/// Runs every sweep cell and appends one row per finished cell.
/// `parallelism = None` uses every available core; `Some(1)` runs sequentially.
pub fn run_sweep_cmd(
    sweep_path: &Path,
    out_dir: &Path,
    parallelism: Option<usize>,
) -> Result<(), CliError> {
    let spec = load_sweep(sweep_path)?;
    let cells = spec.cells().map_err(|e| CliError::config(sweep_path, e))?;
    ensure_dir(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let timing_path = out_dir.join(TIMING_FILE);
    let mut metrics = create(&metrics_path)?;
    let mut timing = create(&timing_path)?;
    writeln!(metrics, "{METRICS_HEADER}")
        .and_then(|_| metrics.flush())
        .map_err(|e| CliError::io(&metrics_path, e))?;
    writeln!(timing, "{TIMING_HEADER}")
        .and_then(|_| timing.flush())
        .map_err(|e| CliError::io(&timing_path, e))?;

    let exec = match parallelism {
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    log::info!(
        "sweep: {} cells, parallelism {:?}",
        cells.len(),
        parallelism
    );
    let writers = Mutex::new(SweepWriters {
        metrics,
        timing,
        error: None,
    });
    run_cells(cells, exec, parallelism, |m| {
        let mut w = writers.lock().expect("writer lock");
        if w.error.is_some() {
            return;
        }
        let res = writeln!(w.metrics, "{}", m.csv_row())
            .and_then(|_| w.metrics.flush())
            .map_err(|e| CliError::io(&metrics_path, e))
            .and_then(|_| {
                writeln!(w.timing, "{}", m.timing_row())
                    .and_then(|_| w.timing.flush())
                    .map_err(|e| CliError::io(&timing_path, e))
            });
        if let Err(e) = res {
            w.error = Some(e);
        }
        log::debug!(
            "cell n={} f={} seed={} done",
            m.n_vehicles,
            m.rogue_fraction,
            m.seed
        );
    });
    match writers.into_inner().expect("writer lock").error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Validates a config and prints its normalized JSON form.
pub fn validate_cmd<W: Write>(config_path: &Path, mut stdout: W) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let json = serde_json::to_string_pretty(&cfg).expect("config serializes");
    writeln!(stdout, "{json}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn report(res: Result<(), CliError>) -> i32 {
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_run(
    config_path: &Path,
    seed_override: Option<u64>,
    out_dir: &Path,
    emit_events: bool,
) -> i32 {
    report(run_scenario(
        config_path,
        seed_override,
        out_dir,
        emit_events,
    ))
}

pub fn cmd_sweep(sweep_path: &Path, out_dir: &Path, parallelism: Option<usize>) -> i32 {
    report(run_sweep_cmd(sweep_path, out_dir, parallelism))
}

pub fn cmd_validate(config_path: &Path) -> i32 {
    report(validate_cmd(config_path, io::stdout().lock()))
}
