//! Deterministic vehicular network simulator with guard-node rogue detection.
//!
//! Vehicles move on a ring road under the Greenshield speed-density model and
//! broadcast beacons every tick over a lossy single-hop channel. A guard node,
//! the vehicle nearest the centroid of all positions, tests each window's
//! reported speeds against a sigma-bounded acceptance region and disseminates
//! the ids it rejects.
//!
//! ```no_run
//! use fround_core::model::ScenarioConfig;
//! use fround_core::{metrics, netsim};
//!
//! let cfg = ScenarioConfig { n_vehicles: 200, ..Default::default() }.validate()?;
//! let out = netsim::run(&cfg);
//! let m = metrics::aggregate(cfg.config(), cfg.seed, &out);
//! println!("tpr={} fpr={}", m.tpr, m.fpr);
//! # Ok::<(), fround_core::model::ConfigError>(())
//! ```

pub mod detection;
pub mod exec;
pub mod export;
pub mod metrics;
pub mod mobility;
pub mod model;
pub mod netsim;
pub mod rng;
pub mod sweep;
pub mod trace;

pub use detection::{detect_window, elect_guard, DetectionError, GroundTruth, Rlt, WindowSample};
pub use exec::Execution;
pub use metrics::RunMetrics;
pub use model::{
    BeaconMessage, ConfigError, ConfusionCounts, DetectionReport, Position, ScenarioConfig,
    ValidatedConfig, VehicleId, VehicleState,
};
pub use netsim::{run, run_with, ChannelStats, EventLog, RunOptions, RunOutput};
