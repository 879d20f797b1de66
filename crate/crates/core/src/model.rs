//! Domain types shared by every stage of a run, plus scenario validation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meters per statute mile.
pub const METERS_PER_MILE: f64 = 1609.344;

/// Base payload of every beacon, in bytes.
pub const BEACON_BASE_BYTES: u64 = 256;

/// Bytes added to a beacon per rogue-list entry (4-byte id plus 4 bytes framing).
pub const ROGUE_ENTRY_BYTES: u64 = 8;

/// Lateral spacing between lane centerlines.
pub const LANE_WIDTH_M: f64 = 3.7;

/// Converts a speed in miles/hour to meters/second.
#[inline]
pub fn mph_to_mps(mph: f64) -> f64 {
    mph * METERS_PER_MILE / 3600.0
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ConfigError {
    fn new(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

/// Planar position in meters; `x` runs east along the road, `y` north across lanes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Dense per-scenario vehicle identifier, `0..n_vehicles`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl VehicleId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How a vehicle fills the speed field of its beacons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportPolicy {
    Honest,
    /// Reports a constant low speed regardless of the true one.
    SuddenDrop {
        target_mph: f64,
    },
    /// Reports the true speed minus `rate_mph_per_s` for every second since start.
    GradualDrop {
        rate_mph_per_s: f64,
    },
}

impl Default for ReportPolicy {
    fn default() -> Self {
        ReportPolicy::SuddenDrop { target_mph: 10.0 }
    }
}

/// Ground-truth kinematic and behavioral state of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub pos: Position,
    /// mph
    pub true_speed: f64,
    /// mph/s, change of true speed over the last step.
    pub accel: f64,
    pub lane: u32,
    pub is_rogue: bool,
    pub policy: ReportPolicy,
}

/// Periodic broadcast of a vehicle's kinematic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconMessage {
    pub sender: VehicleId,
    pub t_ms: u64,
    pub reported_speed: f64,
    pub pos: Position,
    /// Beacon-message density carried by the sender (beacons x vehicles).
    pub density: f64,
    pub accel: f64,
    pub braking: bool,
    /// Distance to the vehicle ahead in the same lane, meters.
    pub gap: f64,
    pub rogue_list: Option<Vec<VehicleId>>,
    pub rlt_flag: Option<u8>,
    pub size: u64,
}

impl BeaconMessage {
    /// Wire size implied by the byte model for a beacon with this many rogue-list entries.
    pub fn size_for(rogue_entries: usize) -> u64 {
        BEACON_BASE_BYTES + ROGUE_ENTRY_BYTES * rogue_entries as u64
    }

    /// Attaches a guard verdict; size grows by the rogue-list payload.
    pub fn with_rogue_list(mut self, rogues: Vec<VehicleId>) -> Self {
        self.rlt_flag = Some(u8::from(!rogues.is_empty()));
        self.size = Self::size_for(rogues.len());
        self.rogue_list = Some(rogues);
        self
    }

    /// Bytes beyond the base payload.
    pub fn overhead(&self) -> u64 {
        self.size - BEACON_BASE_BYTES
    }
}

/// Full experiment description. Units: miles for `road_length`, mph for speeds,
/// meters for `tx_range`, milliseconds for intervals, seconds for `duration`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub road_length: f64,
    pub lanes: u32,
    pub n_vehicles: u32,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Greenshield jam density, vehicles per mile per lane.
    pub jam_density: f64,
    pub rogue_fraction: f64,
    pub rogue_policy: ReportPolicy,
    pub beacon_interval: u64,
    pub tx_range: f64,
    pub loss_prob: f64,
    /// Extra loss probability per 1000 vehicles in the scenario.
    pub loss_prob_per_1000_vehicles: f64,
    pub duration: f64,
    pub detection_window: u64,
    pub sigma_multiplier: f64,
    pub sigma_floor: f64,
    pub honest_noise_sigma: f64,
    pub guard_reelect_every_window: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            road_length: 3.0,
            lanes: 2,
            n_vehicles: 500,
            speed_min: 30.0,
            speed_max: 65.0,
            jam_density: 1250.0,
            rogue_fraction: 0.1,
            rogue_policy: ReportPolicy::default(),
            beacon_interval: 100,
            tx_range: 500.0,
            loss_prob: 0.0,
            loss_prob_per_1000_vehicles: 0.0,
            duration: 2.0,
            detection_window: 1000,
            sigma_multiplier: 1.0,
            sigma_floor: 0.1,
            honest_noise_sigma: 2.0,
            guard_reelect_every_window: true,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Number of vehicles flagged rogue at spawn.
    pub fn rogue_count(&self) -> u32 {
        (self.rogue_fraction * f64::from(self.n_vehicles)).round() as u32
    }

    pub fn validate(self) -> Result<ValidatedConfig, ConfigError> {
        validate_config(self)
    }
}

fn finite(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::new(field, format!("must be finite, got {v}")))
    }
}

fn positive(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if finite(field, v)? > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::new(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<f64, ConfigError> {
    if finite(field, v)? >= 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::new(field, format!("must be >= 0, got {v}")))
    }
}

/// Checks every scenario invariant and returns the config unchanged on success.
pub fn validate_config(cfg: ScenarioConfig) -> Result<ValidatedConfig, ConfigError> {
    positive("road_length", cfg.road_length)?;
    if cfg.lanes == 0 {
        return Err(ConfigError::new("lanes", "must be >= 1"));
    }
    if cfg.n_vehicles < 2 {
        return Err(ConfigError::new(
            "n_vehicles",
            format!(
                "detection needs at least 2 vehicles, got {}",
                cfg.n_vehicles
            ),
        ));
    }
    non_negative("speed_min", cfg.speed_min)?;
    positive("speed_max", cfg.speed_max)?;
    if cfg.speed_min > cfg.speed_max {
        return Err(ConfigError::new(
            "speed_min",
            format!(
                "speed_min {} exceeds speed_max {}",
                cfg.speed_min, cfg.speed_max
            ),
        ));
    }
    positive("jam_density", cfg.jam_density)?;
    if !(0.0..=1.0).contains(&finite("rogue_fraction", cfg.rogue_fraction)?) {
        return Err(ConfigError::new(
            "rogue_fraction",
            format!("must lie in [0, 1], got {}", cfg.rogue_fraction),
        ));
    }
    if cfg.rogue_count() > cfg.n_vehicles - 1 {
        return Err(ConfigError::new(
            "rogue_fraction",
            "at least one honest vehicle is required to act as guard",
        ));
    }
    match cfg.rogue_policy {
        ReportPolicy::Honest => {}
        ReportPolicy::SuddenDrop { target_mph } => {
            non_negative("rogue_policy.target_mph", target_mph)?;
        }
        ReportPolicy::GradualDrop { rate_mph_per_s } => {
            non_negative("rogue_policy.rate_mph_per_s", rate_mph_per_s)?;
        }
    }
    if cfg.beacon_interval == 0 {
        return Err(ConfigError::new("beacon_interval", "must be > 0 ms"));
    }
    positive("tx_range", cfg.tx_range)?;
    if !(0.0..1.0).contains(&finite("loss_prob", cfg.loss_prob)?) {
        return Err(ConfigError::new(
            "loss_prob",
            format!("must lie in [0, 1), got {}", cfg.loss_prob),
        ));
    }
    non_negative(
        "loss_prob_per_1000_vehicles",
        cfg.loss_prob_per_1000_vehicles,
    )?;
    non_negative("duration", cfg.duration)?;
    let duration_ms = (cfg.duration * 1000.0).round();
    if (duration_ms - cfg.duration * 1000.0).abs() > 1e-6 {
        return Err(ConfigError::new(
            "duration",
            "must be a whole number of milliseconds",
        ));
    }
    let duration_ms = duration_ms as u64;
    if !duration_ms.is_multiple_of(cfg.beacon_interval) {
        return Err(ConfigError::new(
            "duration",
            format!(
                "{duration_ms} ms is not a multiple of beacon_interval {}",
                cfg.beacon_interval
            ),
        ));
    }
    if cfg.detection_window == 0 || !cfg.detection_window.is_multiple_of(cfg.beacon_interval) {
        return Err(ConfigError::new(
            "detection_window",
            format!(
                "{} ms is not a positive multiple of beacon_interval {}",
                cfg.detection_window, cfg.beacon_interval
            ),
        ));
    }
    positive("sigma_multiplier", cfg.sigma_multiplier)?;
    positive("sigma_floor", cfg.sigma_floor)?;
    non_negative("honest_noise_sigma", cfg.honest_noise_sigma)?;

    Ok(ValidatedConfig {
        road_length_m: cfg.road_length * METERS_PER_MILE,
        duration_ms,
        cfg,
    })
}

/// A scenario that passed [`validate_config`]. Serializes as the plain config.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    cfg: ScenarioConfig,
    road_length_m: f64,
    duration_ms: u64,
}

impl ValidatedConfig {
    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn into_inner(self) -> ScenarioConfig {
        self.cfg
    }

    pub fn road_length_m(&self) -> f64 {
        self.road_length_m
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_ms
    }

    /// Effective per-delivery loss probability including the density ramp.
    pub fn effective_loss_prob(&self) -> f64 {
        let ramp = self.cfg.loss_prob_per_1000_vehicles * f64::from(self.cfg.n_vehicles) / 1000.0;
        (self.cfg.loss_prob + ramp).clamp(0.0, 1.0)
    }

    pub fn beacons_per_window(&self) -> u64 {
        self.cfg.detection_window / self.cfg.beacon_interval
    }

    /// Same scenario with a different master seed.
    pub fn with_seed(&self, seed: u64) -> ValidatedConfig {
        let mut v = self.clone();
        v.cfg.seed = seed;
        v
    }
}

impl std::ops::Deref for ValidatedConfig {
    type Target = ScenarioConfig;

    fn deref(&self) -> &ScenarioConfig {
        &self.cfg
    }
}

impl Serialize for ValidatedConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.cfg.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ValidatedConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let cfg = ScenarioConfig::deserialize(d)?;
        validate_config(cfg).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
}

/// Output of one guard detection pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub window_index: u64,
    pub guard: VehicleId,
    pub s_avg: f64,
    pub rho_avg: f64,
    pub sigma: f64,
    pub decisions: BTreeMap<VehicleId, Decision>,
    pub rogue_ids: Vec<VehicleId>,
    /// Wall-clock microseconds; not part of the serialized report since it varies per host.
    #[serde(skip)]
    pub processing_time_us: f64,
}

/// Confusion-matrix counts over the vehicles of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let v = ScenarioConfig::default().validate().unwrap();
        assert_eq!(v.road_length, 3.0);
        assert_eq!(v.lanes, 2);
        assert_eq!(v.tx_range, 500.0);
        assert_eq!(v.beacon_interval, 100);
        assert!((v.road_length_m() - 4828.032).abs() < 1e-9);
    }

    #[test]
    fn single_vehicle_rejected() {
        let cfg = ScenarioConfig {
            n_vehicles: 1,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid {
                field: "n_vehicles",
                ..
            }
        ));
    }

    #[test]
    fn window_must_divide_by_interval() {
        let cfg = ScenarioConfig {
            detection_window: 250,
            beacon_interval: 100,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid {
                field: "detection_window",
                ..
            }
        ));
    }

    #[test]
    fn speed_bounds_ordered() {
        let cfg = ScenarioConfig {
            speed_min: 70.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loss_prob_one_rejected() {
        let cfg = ScenarioConfig {
            loss_prob: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn all_rogue_rejected() {
        let cfg = ScenarioConfig {
            n_vehicles: 10,
            rogue_fraction: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn duration_multiple_of_interval() {
        let cfg = ScenarioConfig {
            duration: 1.05,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn beacon_size_model() {
        let b = BeaconMessage {
            sender: VehicleId(3),
            t_ms: 0,
            reported_speed: 60.0,
            pos: Position::default(),
            density: 0.0,
            accel: 0.0,
            braking: false,
            gap: 0.0,
            rogue_list: None,
            rlt_flag: None,
            size: BEACON_BASE_BYTES,
        };
        assert_eq!(b.overhead(), 0);
        let b = b.with_rogue_list(vec![VehicleId(1), VehicleId(2), VehicleId(7), VehicleId(9)]);
        assert_eq!(b.size, 256 + 32);
        assert_eq!(b.rlt_flag, Some(1));
        assert_eq!(b.overhead(), 32);
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = serde_json::from_str::<ScenarioConfig>(r#"{"n_vehicle": 3}"#);
        assert!(err.is_err());
    }
}
