//! Beacon-level discrete-event loop.
//!
//! Time advances in beacon ticks. At every tick each vehicle broadcasts one
//! beacon; every other vehicle within transmission range is a candidate
//! receiver and independently loses the copy with the scenario's loss
//! probability. At each detection-window boundary the current guard runs
//! detection over what it heard, attaches the verdict to its next beacon, and a
//! new guard is elected from current positions.
//!
//! Receivers that obtain a rogue list ignore later beacons from listed senders
//! at the application level (counted in [`ChannelStats::ignored`]); the guard
//! still feeds every received beacon to detection.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detection::{detect_window, elect_guard, GroundTruth, WindowSample};
use crate::exec::{self, Execution};
use crate::mobility::{self, beacon_density, reported_speed, Road};
use crate::model::{
    BeaconMessage, DetectionReport, Position, ValidatedConfig, VehicleId, VehicleState,
    BEACON_BASE_BYTES,
};
use crate::rng::{self, Purpose, StreamRng};

/// Closed-disc range test.
#[inline]
pub fn in_range(a: &Position, b: &Position, tx_range: f64) -> bool {
    a.distance(b) <= tx_range
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    /// Beacons broadcast.
    pub sent: u64,
    /// Candidate receptions that arrived.
    pub delivered: u64,
    /// Candidate receptions dropped by the channel.
    pub lost: u64,
    pub bytes_delivered: u64,
    /// Bytes beyond the base beacon payload, summed over delivered copies.
    pub overhead_bytes: u64,
    /// Delivered beacons discarded by receivers holding a rogue list naming the sender.
    pub ignored: u64,
}

impl ChannelStats {
    fn record(&mut self, msg: &BeaconMessage, delivered: bool) {
        if delivered {
            self.delivered += 1;
            self.bytes_delivered += msg.size;
            self.overhead_bytes += msg.size - BEACON_BASE_BYTES;
        } else {
            self.lost += 1;
        }
    }

    pub fn attempts(&self) -> u64 {
        self.delivered + self.lost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reception {
    pub receiver: VehicleId,
    pub delivered: bool,
}

fn draw_outcome(rng: &mut StreamRng, loss_prob: f64) -> bool {
    !(loss_prob > 0.0 && rng.random::<f64>() < loss_prob)
}

/// Broadcasts `msg` from `sender` to every other vehicle in range. Returns one
/// entry per candidate receiver, in id order, and updates `stats`.
pub fn broadcast(
    sender: &VehicleState,
    msg: &BeaconMessage,
    all_states: &[VehicleState],
    tx_range: f64,
    loss_prob: f64,
    rng: &mut StreamRng,
    stats: &mut ChannelStats,
) -> Vec<Reception> {
    debug_assert_eq!(msg.sender, sender.id);
    let mut candidates: Vec<VehicleId> = all_states
        .iter()
        .filter(|s| s.id != sender.id && in_range(&sender.pos, &s.pos, tx_range))
        .map(|s| s.id)
        .collect();
    candidates.sort_unstable();
    stats.sent += 1;
    candidates
        .into_iter()
        .map(|receiver| {
            let delivered = draw_outcome(rng, loss_prob);
            stats.record(msg, delivered);
            Reception {
                receiver,
                delivered,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryEvent {
    pub t_ms: u64,
    pub sender: VehicleId,
    pub receiver: VehicleId,
    /// Index into [`EventLog::beacons`].
    pub beacon: usize,
    pub delivered: bool,
}

/// Every candidate reception of a run, ordered by `(t_ms, sender, receiver)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLog {
    pub beacons: Vec<BeaconMessage>,
    pub events: Vec<DeliveryEvent>,
}

pub const EVENT_HEADER: &str = "t_ms,sender,receiver,delivered,reported_speed_mph,bytes";

impl EventLog {
    pub fn is_empty(&self) -> bool {
        self.beacons.is_empty() && self.events.is_empty()
    }

    pub fn beacon(&self, ev: &DeliveryEvent) -> &BeaconMessage {
        &self.beacons[ev.beacon]
    }

    /// Channel counters recomputed from the log (`ignored` is not derivable and stays 0).
    pub fn reduce(&self) -> ChannelStats {
        let mut stats = ChannelStats {
            sent: self.beacons.len() as u64,
            ..Default::default()
        };
        for ev in &self.events {
            stats.record(self.beacon(ev), ev.delivered);
        }
        stats
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{EVENT_HEADER}")?;
        let mut line = String::new();
        for ev in &self.events {
            let b = self.beacon(ev);
            line.clear();
            writeln!(
                line,
                "{},{},{},{},{:.3},{}",
                ev.t_ms,
                ev.sender,
                ev.receiver,
                u8::from(ev.delivered),
                b.reported_speed,
                b.size
            )
            .expect("writing to a String");
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub record_events: bool,
    pub exec: Execution,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_events: true,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: EventLog,
    pub stats: ChannelStats,
    pub reports: Vec<DetectionReport>,
    pub truth: GroundTruth,
    /// Windows where the guard heard fewer than two senders and no test ran.
    pub skipped_windows: u64,
    pub duration_ms: u64,
}

/// Sorted x coordinates for range queries along the road.
struct XIndex {
    order: Vec<(f64, usize)>,
}

impl XIndex {
    fn build(states: &[VehicleState]) -> Self {
        let mut order: Vec<(f64, usize)> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.pos.x, i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        XIndex { order }
    }

    /// Ids of all vehicles other than `i` within `range` of it, ascending.
    fn neighbors(&self, states: &[VehicleState], i: usize, range: f64) -> Vec<VehicleId> {
        let p = states[i].pos;
        let lo = self.order.partition_point(|(x, _)| *x < p.x - range);
        let hi = self.order.partition_point(|(x, _)| *x <= p.x + range);
        let mut out: Vec<VehicleId> = self.order[lo..hi]
            .iter()
            .filter(|(_, j)| *j != i && in_range(&p, &states[*j].pos, range))
            .map(|(_, j)| states[*j].id)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Runs a scenario, recording the full event log.
pub fn run(cfg: &ValidatedConfig) -> RunOutput {
    run_with(cfg, RunOptions::default())
}

pub fn run_with(cfg: &ValidatedConfig, opts: RunOptions) -> RunOutput {
    let road = Road::from_config(cfg);
    let n = cfg.n_vehicles as usize;
    let interval = cfg.beacon_interval;
    let window = cfg.detection_window;
    let duration = cfg.duration_ms();
    let loss = cfg.effective_loss_prob();
    let beacons_per_window = cfg.beacons_per_window();

    let mut speed_rngs = mobility::speed_streams(cfg);
    let mut loss_rngs = rng::per_vehicle(cfg.seed, Purpose::Loss, n);
    let mut states = mobility::spawn(cfg, &mut speed_rngs);
    let truth = GroundTruth::from_states(&states);

    let mut log = EventLog::default();
    let mut stats = ChannelStats::default();
    let mut reports = Vec::new();
    let mut skipped_windows = 0;
    let mut ignore: Vec<BTreeSet<VehicleId>> = vec![BTreeSet::new(); n];
    let mut pending: Option<(VehicleId, Vec<VehicleId>)> = None;

    let mut guard = elect_guard(&states).expect("validated config has >= 2 vehicles");
    let mut sample = WindowSample::new(guard, 0);

    let mut t = 0u64;
    loop {
        if t > 0 {
            mobility::step(&mut states, interval, &road, &mut speed_rngs)
                .expect("interval is positive and streams match");
        }
        if t > 0 && t.is_multiple_of(window) {
            let window_index = t / window - 1;
            match detect_window(&sample, cfg.sigma_multiplier, cfg.sigma_floor) {
                Ok(report) => {
                    ignore[guard.index()].extend(report.rogue_ids.iter().copied());
                    pending = Some((guard, report.rogue_ids.clone()));
                    reports.push(report);
                }
                Err(e) => {
                    log::debug!("window {window_index}: guard {guard} skipped ({e})");
                    skipped_windows += 1;
                }
            }
            if cfg.guard_reelect_every_window {
                guard = elect_guard(&states).expect("validated config has >= 2 vehicles");
            }
            sample = WindowSample::new(guard, window_index + 1);
        }
        if t >= duration {
            break;
        }

        let index = XIndex::build(&states);
        let gaps = mobility::leaders(&states, road.length_m);
        let states_ref = &states;
        let tx_range = cfg.tx_range;
        let outgoing: Vec<(Vec<VehicleId>, Vec<bool>)> =
            exec::map_slice_mut(&mut loss_rngs, opts.exec, |i, rng| {
                let candidates = index.neighbors(states_ref, i, tx_range);
                let outcomes = candidates.iter().map(|_| draw_outcome(rng, loss)).collect();
                (candidates, outcomes)
            });

        for (i, (candidates, outcomes)) in outgoing.into_iter().enumerate() {
            let s = &states[i];
            let mut msg = BeaconMessage {
                sender: s.id,
                t_ms: t,
                reported_speed: reported_speed(s, t),
                pos: s.pos,
                density: beacon_density(candidates.len() as u64 + 1, beacons_per_window),
                accel: s.accel,
                braking: s.accel < 0.0,
                gap: gaps[i].1,
                rogue_list: None,
                rlt_flag: None,
                size: BEACON_BASE_BYTES,
            };
            if matches!(&pending, Some((g, _)) if *g == s.id) {
                let (_, list) = pending.take().expect("checked above");
                msg = msg.with_rogue_list(list);
            }

            stats.sent += 1;
            let beacon_idx = log.beacons.len();
            for (&receiver, &delivered) in candidates.iter().zip(&outcomes) {
                stats.record(&msg, delivered);
                if opts.record_events {
                    log.events.push(DeliveryEvent {
                        t_ms: t,
                        sender: s.id,
                        receiver,
                        beacon: beacon_idx,
                        delivered,
                    });
                }
                if !delivered {
                    continue;
                }
                if ignore[receiver.index()].contains(&s.id) {
                    stats.ignored += 1;
                }
                if receiver == guard {
                    sample.record(msg.clone());
                }
                if let Some(list) = &msg.rogue_list {
                    ignore[receiver.index()].extend(list.iter().copied());
                }
            }
            if opts.record_events {
                log.beacons.push(msg);
            }
        }
        t += interval;
    }

    RunOutput {
        log,
        stats,
        reports,
        truth,
        skipped_windows,
        duration_ms: duration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ReportPolicy, ScenarioConfig};

    fn vehicle(id: u32, x: f64) -> VehicleState {
        VehicleState {
            id: VehicleId(id),
            pos: Position::new(x, 0.0),
            true_speed: 50.0,
            accel: 0.0,
            lane: 0,
            is_rogue: false,
            policy: ReportPolicy::Honest,
        }
    }

    fn beacon_from(s: &VehicleState) -> BeaconMessage {
        BeaconMessage {
            sender: s.id,
            t_ms: 0,
            reported_speed: s.true_speed,
            pos: s.pos,
            density: 0.0,
            accel: 0.0,
            braking: false,
            gap: 0.0,
            rogue_list: None,
            rlt_flag: None,
            size: BEACON_BASE_BYTES,
        }
    }

    #[test]
    fn range_boundary_is_closed() {
        let o = Position::new(0.0, 0.0);
        assert!(in_range(&o, &Position::new(499.0, 0.0), 500.0));
        assert!(in_range(&o, &Position::new(300.0, 400.0), 500.0));
        assert!(in_range(&o, &o, 500.0));
        assert!(!in_range(&o, &Position::new(500.001, 0.0), 500.0));
    }

    #[test]
    fn lossless_broadcast_reaches_all_candidates() {
        let states: Vec<VehicleState> = (0..7).map(|i| vehicle(i, f64::from(i) * 100.0)).collect();
        // vehicle 3 at 300 m reaches 0..=6 except itself (all within 300 m)
        let mut rng = rng::stream(1, Purpose::Loss, 3);
        let mut stats = ChannelStats::default();
        let out = broadcast(
            &states[3],
            &beacon_from(&states[3]),
            &states,
            500.0,
            0.0,
            &mut rng,
            &mut stats,
        );
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|r| r.delivered));
        assert_eq!((stats.sent, stats.delivered, stats.lost), (1, 6, 0));

        // vehicle 0 only reaches 1..=5
        let out = broadcast(
            &states[0],
            &beacon_from(&states[0]),
            &states,
            500.0,
            0.0,
            &mut rng,
            &mut stats,
        );
        assert_eq!(out.len(), 5);
        assert_eq!(stats.bytes_delivered, 11 * 256);
    }

    #[test]
    fn near_total_loss_drops_nearly_everything() {
        let states: Vec<VehicleState> = (0..50).map(|i| vehicle(i, f64::from(i))).collect();
        let mut rng = rng::stream(2, Purpose::Loss, 0);
        let mut stats = ChannelStats::default();
        for _ in 0..100 {
            broadcast(
                &states[0],
                &beacon_from(&states[0]),
                &states,
                500.0,
                1.0 - 1e-9,
                &mut rng,
                &mut stats,
            );
        }
        assert_eq!(stats.delivered + stats.lost, 4900);
        assert_eq!(stats.delivered, 0);
    }

    #[test]
    fn empirical_loss_ratio() {
        let states: Vec<VehicleState> = (0..101).map(|i| vehicle(i, f64::from(i))).collect();
        let mut rng = rng::stream(3, Purpose::Loss, 0);
        let mut stats = ChannelStats::default();
        for _ in 0..1000 {
            broadcast(
                &states[0],
                &beacon_from(&states[0]),
                &states,
                500.0,
                0.05,
                &mut rng,
                &mut stats,
            );
        }
        assert_eq!(stats.attempts(), 100_000);
        let ratio = stats.lost as f64 / stats.attempts() as f64;
        assert!((ratio - 0.05).abs() <= 0.005, "ratio {ratio}");
    }

    fn small_cfg(n: u32, duration: f64) -> ValidatedConfig {
        ScenarioConfig {
            n_vehicles: n,
            road_length: 0.1,
            rogue_fraction: 0.0,
            duration,
            seed: 42,
            ..Default::default()
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn two_vehicles_one_second() {
        let out = run(&small_cfg(2, 1.0));
        for (r, s) in [(0, 1), (1, 0)] {
            let got = out
                .log
                .events
                .iter()
                .filter(|e| e.receiver == VehicleId(r) && e.sender == VehicleId(s) && e.delivered)
                .count();
            assert_eq!(got, 10);
        }
        assert_eq!(out.stats.sent, 20);
        // guard hears a single sender: detection is skipped, not fatal
        assert!(out.reports.is_empty());
        assert_eq!(out.skipped_windows, 1);
    }

    #[test]
    fn zero_duration_is_empty() {
        let out = run(&small_cfg(5, 0.0));
        assert!(out.log.is_empty());
        assert_eq!(out.stats, ChannelStats::default());
        assert!(out.reports.is_empty());
    }

    #[test]
    fn every_vehicle_hears_all_others_each_tick() {
        let out = run(&small_cfg(12, 1.0));
        for t in (0..1000).step_by(100) {
            for r in 0..12 {
                let got = out
                    .log
                    .events
                    .iter()
                    .filter(|e| e.t_ms == t && e.receiver == VehicleId(r) && e.delivered)
                    .count();
                assert_eq!(got, 11);
            }
        }
    }

    #[test]
    fn log_is_totally_ordered_and_reduces_to_stats() {
        let cfg = ScenarioConfig {
            n_vehicles: 60,
            rogue_fraction: 0.2,
            loss_prob: 0.1,
            duration: 3.0,
            seed: 9,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let out = run(&cfg);
        let keys: Vec<_> = out
            .log
            .events
            .iter()
            .map(|e| (e.t_ms, e.sender, e.receiver))
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let mut reduced = out.log.reduce();
        reduced.ignored = out.stats.ignored;
        assert_eq!(reduced, out.stats);
    }

    #[test]
    fn guard_verdict_carried_in_next_beacon() {
        let cfg = ScenarioConfig {
            n_vehicles: 20,
            road_length: 0.2,
            rogue_fraction: 0.2,
            duration: 2.0,
            seed: 4,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let out = run(&cfg);
        assert!(!out.reports.is_empty());
        let first = &out.reports[0];
        assert!(!first.rogue_ids.is_empty());
        let carrier = out
            .log
            .beacons
            .iter()
            .find(|b| b.rogue_list.is_some())
            .expect("guard beacon with verdict");
        assert_eq!(carrier.sender, first.guard);
        assert_eq!(carrier.t_ms, 1000);
        assert_eq!(carrier.rogue_list.as_ref().unwrap(), &first.rogue_ids);
        assert_eq!(carrier.size, 256 + 8 * first.rogue_ids.len() as u64);
        assert_eq!(carrier.rlt_flag, Some(1));
        assert!(out.stats.overhead_bytes > 0);
        assert!(out.stats.ignored > 0);
    }

    #[test]
    fn execution_mode_does_not_change_results() {
        let cfg = ScenarioConfig {
            n_vehicles: 600,
            rogue_fraction: 0.1,
            loss_prob: 0.05,
            duration: 1.0,
            seed: 77,
            ..Default::default()
        }
        .validate()
        .unwrap();
        let seq = run_with(
            &cfg,
            RunOptions {
                record_events: true,
                exec: Execution::Sequential,
            },
        );
        let par = run_with(
            &cfg,
            RunOptions {
                record_events: true,
                exec: Execution::Parallel,
            },
        );
        assert_eq!(seq.log, par.log);
        assert_eq!(seq.stats, par.stats);
    }
}
