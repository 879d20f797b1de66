//! Evaluation quantities for a run and the fog failure-probability analysis.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

use crate::detection::score;
use crate::model::{ConfusionCounts, ScenarioConfig};
use crate::netsim::{ChannelStats, RunOutput};

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum MetricsError {
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
}

/// tp / (tp + fn); 1.0 when there were no rogues to find.
pub fn tpr(c: &ConfusionCounts) -> f64 {
    let total = c.tp + c.fn_;
    if total == 0 {
        1.0
    } else {
        c.tp as f64 / total as f64
    }
}

/// fp / (fp + tn); 0.0 when no honest vehicle was scored.
pub fn fpr(c: &ConfusionCounts) -> f64 {
    let total = c.fp + c.tn;
    if total == 0 {
        0.0
    } else {
        c.fp as f64 / total as f64
    }
}

/// Lost over attempted receptions; 0.0 when nothing was attempted.
pub fn plr(stats: &ChannelStats) -> f64 {
    let attempts = stats.attempts();
    if attempts == 0 {
        0.0
    } else {
        stats.lost as f64 / attempts as f64
    }
}

/// Delivered bytes per second.
pub fn avg_throughput(stats: &ChannelStats, duration_s: f64) -> Result<f64, MetricsError> {
    if duration_s > 0.0 {
        Ok(stats.bytes_delivered as f64 / duration_s)
    } else {
        Err(MetricsError::ZeroDuration)
    }
}

/// Bytes exchanged beyond the base beacon payload.
pub fn overhead(stats: &ChannelStats) -> u64 {
    stats.overhead_bytes
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Log of `sum_{i in range} C(n,i) p^i q^(n-i)`, walking away from `start` so
/// only the starting term needs a log-gamma evaluation.
fn log_binomial_sum(n: u64, range: std::ops::RangeInclusive<u64>, p: f64, q: f64) -> f64 {
    let (lo, hi) = (*range.start(), *range.end());
    if lo > hi {
        return f64::NEG_INFINITY;
    }
    let (ln_p, ln_q) = (p.ln(), q.ln());
    let log_pmf = |i: u64| ln_binomial(n, i) + i as f64 * ln_p + (n - i) as f64 * ln_q;
    let ratio_up = |i: u64| ((n - i) as f64).ln() - ((i + 1) as f64).ln() + ln_p - ln_q;

    let mut terms = Vec::new();
    let mut cur = log_pmf(lo);
    terms.push(cur);
    let mut peak = cur;
    for i in lo..hi {
        cur += ratio_up(i);
        terms.push(cur);
        peak = peak.max(cur);
        // Past the mode every further term shrinks; stop once they vanish.
        if cur < peak - 745.0 {
            break;
        }
    }
    log_sum_exp(&terms)
}

const DIRECT_SUM_MAX_TRIALS: u64 = 16;

/// Plain summation of whichever side has fewer terms. With one term on that
/// side the result is `p^n`, `1 - q^n` and the like to the last bit.
fn direct_tail(n: u64, k: u64, p: f64, q: f64) -> f64 {
    let mut coeff = [1.0f64; DIRECT_SUM_MAX_TRIALS as usize + 1];
    for i in 1..=n as usize {
        coeff[i] = coeff[i - 1] * (n as usize + 1 - i) as f64 / i as f64;
    }
    let pmf = |i: u64| coeff[i as usize] * p.powi(i as i32) * q.powi((n - i) as i32);
    let upper_terms = n - k + 1;
    if upper_terms <= k {
        (k..=n).map(pmf).sum::<f64>().min(1.0)
    } else {
        (1.0 - (0..k).map(pmf).sum::<f64>()).max(0.0)
    }
}

/// Probability that at least `k_min_failures` of `n_vehicles * t_max`
/// independent trials fail, each failing with probability `1 - d_f`.
///
/// `k_min_failures = 0` sums the full binomial support and is exactly 1.
/// The tail on the far side of the mean is summed in log space and the
/// complement taken when that is the shorter side.
pub fn system_failure_probability(
    n_vehicles: u64,
    t_max: u64,
    d_f: f64,
    k_min_failures: u64,
) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&d_f) {
        return Err(MetricsError::InvalidProbability(d_f));
    }
    let n = n_vehicles.saturating_mul(t_max);
    let k = k_min_failures;
    if k == 0 {
        return Ok(1.0);
    }
    if k > n {
        return Ok(0.0);
    }
    let p = 1.0 - d_f;
    let q = d_f;
    if p == 0.0 {
        return Ok(0.0);
    }
    if q == 0.0 {
        return Ok(1.0);
    }
    if n <= DIRECT_SUM_MAX_TRIALS {
        return Ok(direct_tail(n, k, p, q));
    }
    let mean = n as f64 * p;
    if (k as f64) > mean {
        Ok(log_binomial_sum(n, k..=n, p, q).exp().min(1.0))
    } else {
        let lower = log_binomial_sum(n, 0..=k - 1, p, q).exp();
        Ok((1.0 - lower).clamp(0.0, 1.0))
    }
}

/// Evaluation record for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n_vehicles: u32,
    pub rogue_fraction: f64,
    pub seed: u64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tpr: f64,
    pub fpr: f64,
    pub plr: f64,
    /// bytes per second
    pub avg_throughput: f64,
    pub overhead_bytes: u64,
    pub windows: u64,
    /// Mean wall-clock detection time per window, microseconds.
    pub mean_processing_time: f64,
}

/// Deterministic columns of [`RunMetrics`]; timing goes to a separate table.
pub const METRICS_HEADER: &str =
    "n_vehicles,rogue_fraction,seed,tp,fp,tn,fn,tpr,fpr,plr,avg_throughput_bps,overhead_bytes,windows";

pub const TIMING_HEADER: &str = "n_vehicles,rogue_fraction,seed,windows,mean_processing_time_us";

impl RunMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n_vehicles,
            self.rogue_fraction,
            self.seed,
            self.tp,
            self.fp,
            self.tn,
            self.fn_,
            self.tpr,
            self.fpr,
            self.plr,
            self.avg_throughput,
            self.overhead_bytes,
            self.windows
        )
    }

    pub fn timing_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.n_vehicles,
            self.rogue_fraction,
            self.seed,
            self.windows,
            self.mean_processing_time
        )
    }

    pub fn confusion(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }
}

/// Assembles every metric for one run. `seed` is the label to record, which for
/// sweeps is the listed seed rather than the derived per-cell seed.
pub fn aggregate(cfg: &ScenarioConfig, seed: u64, out: &RunOutput) -> RunMetrics {
    let counts = score(&out.reports, &out.truth);
    let duration_s = out.duration_ms as f64 / 1000.0;
    let mean_processing_time = if out.reports.is_empty() {
        0.0
    } else {
        out.reports
            .iter()
            .map(|r| r.processing_time_us)
            .sum::<f64>()
            / out.reports.len() as f64
    };
    RunMetrics {
        n_vehicles: cfg.n_vehicles,
        rogue_fraction: cfg.rogue_fraction,
        seed,
        tp: counts.tp,
        fp: counts.fp,
        tn: counts.tn,
        fn_: counts.fn_,
        tpr: tpr(&counts),
        fpr: fpr(&counts),
        plr: plr(&out.stats),
        avg_throughput: avg_throughput(&out.stats, duration_s).unwrap_or(0.0),
        overhead_bytes: overhead(&out.stats),
        windows: out.reports.len() as u64,
        mean_processing_time,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{Binomial, DiscreteCDF};

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn rates() {
        assert_eq!(tpr(&counts(8, 0, 0, 2)), 0.8);
        assert_eq!(tpr(&counts(0, 3, 3, 0)), 1.0);
        assert_eq!(fpr(&counts(0, 0, 95, 0)), 0.0);
        assert_eq!(fpr(&counts(0, 5, 95, 0)), 0.05);
        assert_eq!(fpr(&counts(1, 0, 0, 1)), 0.0);
    }

    #[test]
    fn packet_loss_ratio() {
        let s = |delivered, lost| ChannelStats {
            delivered,
            lost,
            ..Default::default()
        };
        assert_eq!(plr(&s(95, 5)), 0.05);
        assert_eq!(plr(&s(95, 0)), 0.0);
        assert_eq!(plr(&s(0, 7)), 1.0);
        assert_eq!(plr(&s(0, 0)), 0.0);
    }

    #[test]
    fn throughput() {
        let s = ChannelStats {
            bytes_delivered: 2560,
            ..Default::default()
        };
        assert_eq!(avg_throughput(&s, 1.0), Ok(2560.0));
        assert_eq!(avg_throughput(&ChannelStats::default(), 1.0), Ok(0.0));
        assert_eq!(avg_throughput(&s, 0.0), Err(MetricsError::ZeroDuration));
    }

    #[test]
    fn failure_probability_closed_forms() {
        assert_eq!(system_failure_probability(10, 3, 0.7, 0), Ok(1.0));
        let d: f64 = 0.9;
        assert_eq!(system_failure_probability(1, 1, d, 1), Ok(1.0 - d));
        assert_eq!(
            system_failure_probability(2, 1, d, 2),
            Ok((1.0 - d) * (1.0 - d))
        );
        assert_eq!(system_failure_probability(2, 1, d, 1), Ok(1.0 - d * d));
        assert_eq!(system_failure_probability(1, 2, d, 1), Ok(1.0 - d * d));
        assert_eq!(system_failure_probability(2, 1, 0.9, 3), Ok(0.0));
        assert_eq!(system_failure_probability(5, 1, 1.0, 1), Ok(0.0));
        assert_eq!(system_failure_probability(5, 1, 0.0, 5), Ok(1.0));
        assert_eq!(
            system_failure_probability(5, 1, 1.5, 1),
            Err(MetricsError::InvalidProbability(1.5))
        );
    }

    #[test]
    fn failure_probability_large_n() {
        // n = 10^6 trials, failure prob 0.01: tail at mean + 5 sd
        let n = 1_000_000u64;
        let k = 10_000 + 5 * 99;
        let got = system_failure_probability(1000, 1000, 0.99, k).unwrap();
        let oracle = Binomial::new(0.01, n).unwrap().sf(k - 1);
        assert!((got - oracle).abs() < 5e-9 * oracle, "{got} vs {oracle}");
        // 30-digit direct summation
        let reference = 4.073_589_609_500_827_5e-7;
        assert!(
            (got - reference).abs() < 5e-9 * reference,
            "{got} vs {reference}"
        );
        assert!(got > 0.0 && got < 1e-5);
    }

    proptest! {
        #[test]
        fn matches_independent_cdf(n in 1u64..2000, d_f in 0.001f64..0.999, frac in 0.0f64..1.0) {
            let k = ((n as f64) * frac).round() as u64;
            let got = system_failure_probability(n, 1, d_f, k).unwrap();
            let oracle = if k == 0 { 1.0 } else { Binomial::new(1.0 - d_f, n).unwrap().sf(k - 1) };
            prop_assert!((got - oracle).abs() < 1e-9, "n={} k={} d_f={} got={} oracle={}", n, k, d_f, got, oracle);
        }

        #[test]
        fn monotone_in_df_and_k(n in 1u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0, k in 1u64..500) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p_lo = system_failure_probability(n, 1, lo, k).unwrap();
            let p_hi = system_failure_probability(n, 1, hi, k).unwrap();
            prop_assert!(p_hi <= p_lo + 1e-12);
            let p_k1 = system_failure_probability(n, 1, a, k + 1).unwrap();
            let p_k = system_failure_probability(n, 1, a, k).unwrap();
            prop_assert!(p_k1 <= p_k + 1e-12);
        }

        #[test]
        fn rates_bounded(tp in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000, fn_ in 0u64..1000) {
            let c = counts(tp, fp, tn, fn_);
            prop_assert!((0.0..=1.0).contains(&tpr(&c)));
            prop_assert!((0.0..=1.0).contains(&fpr(&c)));
            if tp + fn_ > 0 {
                let fnr = fn_ as f64 / (tp + fn_) as f64;
                prop_assert!((tpr(&c) + fnr - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn plr_plus_delivery_is_one(delivered in 0u64..100_000, lost in 0u64..100_000) {
            prop_assume!(delivered + lost > 0);
            let s = ChannelStats { delivered, lost, ..Default::default() };
            let delivery = delivered as f64 / (delivered + lost) as f64;
            prop_assert!((plr(&s) + delivery - 1.0).abs() < 1e-15);
        }
    }
}
