//! Tracking-error statistics and disturbance-response metrics.
//!
//! The pointwise error is the planar distance to the reference,
//! `e(t) = sqrt((X_G - X_d)² + (Y_G - Y_d)²)`, recomputed here from the
//! logged positions rather than trusting the logged error column.

use crate::sim::RunLog;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty log")]
    EmptyLog,
    #[error("window [{0}, {1}] selects no samples")]
    EmptyWindow(f64, f64),
    #[error("log ends at {end} s, before the disturbance at {t_dist} s")]
    EndsBeforeDisturbance { end: f64, t_dist: f64 },
}

/// Pointwise tracking error, recomputed from positions.
pub fn error_series(log: &RunLog) -> Vec<f64> {
    log.states
        .iter()
        .zip(&log.references)
        .map(|(s, r)| ((s.x - r.x).powi(2) + (s.y - r.y).powi(2)).sqrt())
        .collect()
}

/// Mean and max of `e(t)` over `t ∈ [t0, t1]` (inclusive).
pub fn error_stats(log: &RunLog, t0: f64, t1: f64) -> Result<(f64, f64), MetricsError> {
    if log.times.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let e = error_series(log);
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut count = 0usize;
    for (t, ei) in log.times.iter().zip(&e) {
        if *t >= t0 - 1e-12 && *t <= t1 + 1e-12 {
            sum += ei;
            max = max.max(*ei);
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyWindow(t0, t1));
    }
    Ok((sum / count as f64, max))
}

/// Disturbance response relative to the pre-event baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceMetrics {
    /// Mean error over the 5 s before the event.
    pub baseline_m: f64,
    /// Peak error after the event minus the baseline.
    pub overshoot_m: f64,
    /// First time after the peak at which the error re-enters
    /// 1.5 × baseline and stays there for a full second, minus the event
    /// time. Equals the remaining duration when `converged` is false.
    pub convergence_s: f64,
    pub converged: bool,
}

/// Overshoot and re-convergence time after a disturbance at `t_dist`.
pub fn disturbance_metrics(log: &RunLog, t_dist: f64) -> Result<DisturbanceMetrics, MetricsError> {
    if log.times.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let end = *log.times.last().unwrap();
    if end <= t_dist {
        return Err(MetricsError::EndsBeforeDisturbance { end, t_dist });
    }
    let (baseline_m, _) = error_stats(log, t_dist - 5.0, t_dist)?;
    let e = error_series(log);

    let mut peak_idx = None;
    let mut peak = f64::NEG_INFINITY;
    for (i, (&t, &ei)) in log.times.iter().zip(&e).enumerate() {
        if t > t_dist && ei > peak {
            peak = ei;
            peak_idx = Some(i);
        }
    }
    let peak_idx = peak_idx.expect("post-disturbance samples exist");
    let overshoot_m = peak - baseline_m;
    let band = 1.5 * baseline_m;

    // First post-peak entry into the band that holds for a full second.
    let mut i = peak_idx;
    while i < e.len() {
        if e[i] <= band {
            let t_enter = log.times[i];
            let mut j = i;
            let mut held = true;
            while j < e.len() && log.times[j] <= t_enter + 1.0 + 1e-12 {
                if e[j] > band {
                    held = false;
                    break;
                }
                j += 1;
            }
            // A hold that runs into the end of the log only counts when a
            // full second of data backs it.
            if held && t_enter + 1.0 <= end + 1e-12 {
                return Ok(DisturbanceMetrics {
                    baseline_m,
                    overshoot_m,
                    convergence_s: t_enter - t_dist,
                    converged: true,
                });
            }
            i = if held { e.len() } else { j + 1 };
        } else {
            i += 1;
        }
    }
    Ok(DisturbanceMetrics {
        baseline_m,
        overshoot_m,
        convergence_s: end - t_dist,
        converged: false,
    })
}

/// Per-run summary written next to the log. Field names are part of the
/// artifact contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Statistics window the means refer to.
    pub window_s: [f64; 2],
    pub mean_err_m: f64,
    pub max_err_m: f64,
    /// Mean error before / after the first configured event.
    pub pre_event_mean_m: Option<f64>,
    pub post_event_mean_m: Option<f64>,
    pub overshoot_m: Option<f64>,
    pub convergence_s: Option<f64>,
    pub disturbance_converged: Option<bool>,
    /// Worst relative error of the final learned coefficients vs the plant
    /// truth (data-driven runs only).
    pub coeff_rel_err: Option<f64>,
    /// Present when the run ended in a recorded fault.
    pub fault: Option<String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Assemble the report for a finished run.
///
/// `window` defaults to the full log span; `event_time` splits the
/// pre/post breakdown; `t_dist` triggers the disturbance metrics.
pub fn build_report(
    log: &RunLog,
    window: Option<[f64; 2]>,
    event_time: Option<f64>,
    t_dist: Option<f64>,
    coeff_rel_err: Option<f64>,
) -> Result<MetricsReport, MetricsError> {
    if log.times.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let span_end = *log.times.last().unwrap();
    let window = window.unwrap_or([log.times[0], span_end]);
    let (mean_err_m, max_err_m) = error_stats(log, window[0], window[1])?;

    // The sample logged at the event instant already reflects the changed
    // world, so the pre-phase is half-open: [start, ev), post is [ev, end].
    let (pre, post) = match event_time {
        Some(ev) if ev > log.times[0] && ev < span_end => {
            let split = log.times.partition_point(|&t| t < ev - 1e-12);
            let e = error_series(log);
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            (Some(mean(&e[..split])), Some(mean(&e[split..])))
        }
        _ => (None, None),
    };

    let dist = match t_dist {
        Some(td) => Some(disturbance_metrics(log, td)?),
        None => None,
    };

    Ok(MetricsReport {
        window_s: window,
        mean_err_m,
        max_err_m,
        pre_event_mean_m: pre,
        post_event_mean_m: post,
        overshoot_m: dist.map(|d| d.overshoot_m),
        convergence_s: dist.map(|d| d.convergence_s),
        disturbance_converged: dist.map(|d| d.converged),
        coeff_rel_err,
        fault: log.fault.as_ref().map(|f| f.reason.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::State;
    use crate::reference::ReferenceState;
    use approx::assert_relative_eq;

    /// Log with a prescribed error series: actual at (e, 0) offsets from a
    /// fixed reference, sampled at 100 Hz.
    fn log_with_errors(errors: &[f64]) -> RunLog {
        let mut log = RunLog::default();
        for (k, &e) in errors.iter().enumerate() {
            log.times.push(k as f64 * 0.01);
            log.states.push(State { x: e, ..State::default() });
            log.references.push(ReferenceState::default());
            log.controls.push(crate::dynamics::Thrusts::zeros());
            log.errors.push(e);
        }
        log
    }

    #[test]
    fn perfect_tracking_is_all_zeros() {
        let log = log_with_errors(&vec![0.0; 500]);
        let (mean, max) = error_stats(&log, 0.0, 5.0).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(max, 0.0);
    }

    #[test]
    fn constant_offset_is_the_hypotenuse() {
        // Offset (0.3, 0.4): every sample sits 0.5 m off the reference.
        let mut log = RunLog::default();
        for k in 0..200 {
            log.times.push(k as f64 * 0.01);
            log.states.push(State { x: 0.3, y: 0.4, ..State::default() });
            log.references.push(ReferenceState::default());
            log.controls.push(crate::dynamics::Thrusts::zeros());
            log.errors.push(0.5);
        }
        let (mean, max) = error_stats(&log, 0.0, 2.0).unwrap();
        assert_relative_eq!(mean, 0.5, max_relative = 1e-12);
        assert_relative_eq!(max, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn window_excludes_samples_outside_it() {
        // Error 1.0 for t < 1 s, then zero: a [1, 2] window must not see it.
        let mut errs = vec![1.0; 100];
        errs.extend(vec![0.0; 101]);
        let log = log_with_errors(&errs);
        let (mean, max) = error_stats(&log, 1.0, 2.0).unwrap();
        assert_eq!(max, 0.0);
        assert_eq!(mean, 0.0);
        let (mean_all, _) = error_stats(&log, 0.0, 2.0).unwrap();
        assert!(mean_all > 0.4);
    }

    #[test]
    fn empty_window_is_an_error() {
        let log = log_with_errors(&vec![0.1; 100]);
        assert_eq!(
            error_stats(&log, 5.0, 6.0),
            Err(MetricsError::EmptyWindow(5.0, 6.0))
        );
    }

    #[test]
    fn triangular_bump_metrics_match_the_analytic_values() {
        // Baseline 0.02 m for 10 s; at t = 10 a triangular bump rises
        // linearly to 0.32 m at t = 12 and falls back to baseline at
        // t = 16; flat afterwards until t = 30.
        let base = 0.02;
        let peak = 0.32;
        let mut errors = Vec::new();
        let dt = 0.01;
        let n = (30.0_f64 / dt) as usize;
        for k in 0..=n {
            let t = k as f64 * dt;
            let e = if t <= 10.0 {
                base
            } else if t <= 12.0 {
                base + (peak - base) * (t - 10.0) / 2.0
            } else if t <= 16.0 {
                peak - (peak - base) * (t - 12.0) / 4.0
            } else {
                base
            };
            errors.push(e);
        }
        let log = log_with_errors(&errors);
        let m = disturbance_metrics(&log, 10.0).unwrap();
        assert_relative_eq!(m.baseline_m, base, max_relative = 1e-9);
        assert_relative_eq!(m.overshoot_m, peak - base, max_relative = 1e-6);
        // Band = 1.5 × 0.02 = 0.03; descending branch crosses it at
        // t = 12 + 4·(0.32 − 0.03)/(0.32 − 0.02) ≈ 15.8667, i.e. 5.8667 s
        // after the event.
        let t_cross = 12.0 + 4.0 * (peak - 1.5 * base) / (peak - base);
        assert!(m.converged);
        assert_relative_eq!(m.convergence_s, t_cross - 10.0, epsilon = 0.02);
    }

    #[test]
    fn no_disturbance_means_negligible_overshoot() {
        let log = log_with_errors(&vec![0.05; 3000]);
        let m = disturbance_metrics(&log, 15.0).unwrap();
        assert!(m.overshoot_m.abs() < 1e-12);
        assert!(m.converged);
        assert_relative_eq!(m.convergence_s, 0.01, epsilon = 1e-9);
    }

    #[test]
    fn never_converging_is_flagged_with_remaining_duration() {
        // Error jumps to 1.0 after t = 10 and stays there.
        let mut errs = vec![0.02; 1000];
        errs.extend(vec![1.0; 1001]);
        let log = log_with_errors(&errs);
        let m = disturbance_metrics(&log, 10.0).unwrap();
        assert!(!m.converged);
        assert_relative_eq!(m.convergence_s, 10.0, max_relative = 1e-6);
    }

    #[test]
    fn report_splits_phases_at_the_event() {
        let mut errs = vec![0.1; 1000];
        errs.extend(vec![0.3; 1001]);
        let log = log_with_errors(&errs);
        let rep = build_report(&log, None, Some(10.0), None, None).unwrap();
        assert_relative_eq!(rep.pre_event_mean_m.unwrap(), 0.1, max_relative = 1e-3);
        assert_relative_eq!(rep.post_event_mean_m.unwrap(), 0.3, max_relative = 1e-3);
        assert!(rep.overshoot_m.is_none());
        assert!(rep.fault.is_none());
    }

    #[test]
    fn report_json_round_trips() {
        let log = log_with_errors(&vec![0.05; 3000]);
        let rep = build_report(&log, Some([5.0, 25.0]), Some(10.0), Some(15.0), Some(0.01)).unwrap();
        let back = MetricsReport::from_json(&rep.to_json()).unwrap();
        assert_eq!(rep, back);
    }
}
