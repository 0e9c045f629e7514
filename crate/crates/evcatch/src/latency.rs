//! Worst-case perceptual latency model for frame- and event-based
//! trajectory estimators, plus live pipeline instrumentation.

use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Estimator class for the latency model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyMode {
    /// Standard camera, two consecutive 3D position measurements.
    FrameTwoShot,
    /// Event camera, two consecutive 3D position measurements.
    EventTwoShot,
    /// Event camera, simultaneous position + velocity measurement.
    EventOneShot,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatencyParams {
    /// Inter-frame interval in seconds (1/FPS); zero for event cameras.
    pub dt_fps: f64,
    /// Per-detection compute time in seconds.
    pub dt_c: f64,
    pub mode: LatencyMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub worst_case: f64,
    /// Initial waiting period before the first detection can start.
    pub waiting: f64,
    /// Total detection time after the wait.
    pub detection: f64,
    /// Which closed-form branch was active.
    pub branch: String,
}

/// Closed-form worst-case latency for two detections.
///
/// Frame-based: `2 dt_fps + dt_c` when `dt_c < dt_fps`, else `3 dt_c`.
/// Event-based two-shot: `3 dt_c`; one-shot: `2 dt_c`.
pub fn worst_case_latency(params: &LatencyParams) -> LatencyReport {
    match params.mode {
        LatencyMode::FrameTwoShot => {
            let wait = params.dt_c.max(params.dt_fps);
            if params.dt_c < params.dt_fps {
                LatencyReport {
                    worst_case: 2.0 * params.dt_fps + params.dt_c,
                    waiting: wait,
                    detection: params.dt_fps + params.dt_c,
                    branch: "compute faster than frame interval".into(),
                }
            } else {
                LatencyReport {
                    worst_case: 3.0 * params.dt_c,
                    waiting: wait,
                    detection: 2.0 * params.dt_c,
                    branch: "compute bound".into(),
                }
            }
        }
        LatencyMode::EventTwoShot => LatencyReport {
            worst_case: 3.0 * params.dt_c,
            waiting: params.dt_c,
            detection: 2.0 * params.dt_c,
            branch: "event two-shot".into(),
        },
        LatencyMode::EventOneShot => LatencyReport {
            worst_case: 2.0 * params.dt_c,
            waiting: params.dt_c,
            detection: params.dt_c,
            branch: "event one-shot".into(),
        },
    }
}

/// Worst-case latency generalized to n position detections: the initial
/// wait plus one full wait per detection, with only compute time for the
/// last. Reduces to the two-detection closed forms at n = 2.
pub fn worst_case_latency_n(params: &LatencyParams, n: usize) -> f64 {
    let per = match params.mode {
        LatencyMode::FrameTwoShot => params.dt_c.max(params.dt_fps),
        LatencyMode::EventTwoShot | LatencyMode::EventOneShot => params.dt_c,
    };
    let detections = match params.mode {
        LatencyMode::EventOneShot => n.saturating_sub(1).max(1),
        _ => n,
    };
    detections as f64 * per + params.dt_c
}

/// Evaluates the conditions under which an event-based algorithm has lower
/// worst-case latency than a frame-based one: `dt_c_event < dt_fps` for
/// two-shot methods, `dt_c_event < dt_fps + dt_c_image/2` for one-shot.
pub fn event_advantage(dt_c_event: f64, dt_fps: f64, dt_c_image: f64) -> (bool, bool) {
    (
        dt_c_event < dt_fps,
        dt_c_event < dt_fps + dt_c_image / 2.0,
    )
}

/// Pipeline stages that are individually timed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Segment,
    Cluster,
    Fit,
    Impact,
}

pub const STAGES: [Stage; 4] = [Stage::Segment, Stage::Cluster, Stage::Fit, Stage::Impact];

/// Wall-time accumulator for pipeline instrumentation.
#[derive(Debug, Default, Clone)]
pub struct PipelineTimings {
    pub cycle_s: Vec<f64>,
    pub stage_s: [Vec<f64>; 4],
    /// Stream time covered, seconds.
    pub stream_duration: f64,
}

pub struct StageTimer {
    start: Instant,
}

impl StageTimer {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }

    pub fn stop(self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStats {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

fn stats(samples: &[f64]) -> StageStats {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    StageStats {
        p50: percentile(&sorted, 0.5),
        p90: percentile(&sorted, 0.9),
        p99: percentile(&sorted, 0.99),
        max: sorted.last().copied().unwrap_or(0.0),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub cycles: usize,
    pub cycle: StageStats,
    pub segment: StageStats,
    pub cluster: StageStats,
    pub fit: StageStats,
    pub impact: StageStats,
    /// Detection cycles per second of wall time spent processing.
    pub cycle_rate_hz: f64,
    pub schema_version: u32,
}

impl PipelineTimings {
    pub fn report(&self) -> TimingReport {
        let total: f64 = self.cycle_s.iter().sum();
        TimingReport {
            cycles: self.cycle_s.len(),
            cycle: stats(&self.cycle_s),
            segment: stats(&self.stage_s[0]),
            cluster: stats(&self.stage_s[1]),
            fit: stats(&self.stage_s[2]),
            impact: stats(&self.stage_s[3]),
            cycle_rate_hz: if total > 0.0 {
                self.cycle_s.len() as f64 / total
            } else {
                0.0
            },
            schema_version: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(dt_fps: f64, dt_c: f64) -> LatencyParams {
        LatencyParams {
            dt_fps,
            dt_c,
            mode: LatencyMode::FrameTwoShot,
        }
    }

    #[test]
    fn frame_mode_fast_compute() {
        let r = worst_case_latency(&frame(1.0 / 30.0, 0.005));
        assert!((r.worst_case - (2.0 / 30.0 + 0.005)).abs() < 1e-15);
        // 71.67 ms
        assert!((r.worst_case - 0.0716666666666).abs() < 1e-10);
    }

    #[test]
    fn frame_mode_slow_compute() {
        let r = worst_case_latency(&frame(1.0 / 30.0, 0.050));
        assert!((r.worst_case - 0.150).abs() < 1e-15);
    }

    #[test]
    fn event_modes() {
        let two = worst_case_latency(&LatencyParams {
            dt_fps: 0.0,
            dt_c: 0.010,
            mode: LatencyMode::EventTwoShot,
        });
        assert!((two.worst_case - 0.030).abs() < 1e-15);
        let one = worst_case_latency(&LatencyParams {
            dt_fps: 0.0,
            dt_c: 0.010,
            mode: LatencyMode::EventOneShot,
        });
        assert!((one.worst_case - 0.020).abs() < 1e-15);
    }

    #[test]
    fn branch_continuity_at_boundary() {
        let dt = 1.0 / 30.0;
        let below = worst_case_latency(&frame(dt, dt - 1e-12)).worst_case;
        let at = worst_case_latency(&frame(dt, dt)).worst_case;
        assert!((at - 3.0 * dt).abs() < 1e-15);
        assert!((below - at).abs() < 1e-11);
    }

    #[test]
    fn monotone_in_both_parameters() {
        let mut prev = 0.0;
        for dt_c in [0.001, 0.01, 0.02, 0.04, 0.08] {
            let w = worst_case_latency(&frame(1.0 / 30.0, dt_c)).worst_case;
            assert!(w >= prev);
            prev = w;
        }
        let mut prev = 0.0;
        for dt_fps in [0.0, 0.01, 0.033, 0.1] {
            let w = worst_case_latency(&frame(dt_fps, 0.02)).worst_case;
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn n_detection_form_reduces_to_two_shot() {
        let p = frame(1.0 / 30.0, 0.005);
        assert!(
            (worst_case_latency_n(&p, 2) - worst_case_latency(&p).worst_case).abs() < 1e-15
        );
        let p = frame(1.0 / 30.0, 0.05);
        assert!(
            (worst_case_latency_n(&p, 2) - worst_case_latency(&p).worst_case).abs() < 1e-15
        );
        let e = LatencyParams {
            dt_fps: 0.0,
            dt_c: 0.01,
            mode: LatencyMode::EventTwoShot,
        };
        assert!((worst_case_latency_n(&e, 2) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn advantage_conditions() {
        assert_eq!(event_advantage(0.010, 1.0 / 30.0, 0.005), (true, true));
        assert_eq!(event_advantage(0.040, 1.0 / 30.0, 0.005), (false, false));
        // Boundary case between the two conditions.
        assert_eq!(event_advantage(0.034, 1.0 / 30.0, 0.005), (false, true));
    }

    #[test]
    fn event_never_worse_when_condition_holds() {
        // The two-shot condition compares the same detector cost on both
        // sensor types; the frame pipeline pays the frame interval on top.
        for dt_fps in [0.01, 0.02, 0.0333, 0.1] {
            for dt_c in [0.001, 0.005, 0.009, 0.02, 0.05] {
                let (two_shot, _) = event_advantage(dt_c, dt_fps, dt_c);
                if two_shot {
                    let ev = worst_case_latency(&LatencyParams {
                        dt_fps: 0.0,
                        dt_c,
                        mode: LatencyMode::EventTwoShot,
                    })
                    .worst_case;
                    let fr = worst_case_latency(&frame(dt_fps, dt_c)).worst_case;
                    assert!(ev <= fr, "ev {ev} fr {fr}");
                }
            }
        }
    }

    #[test]
    fn timing_report_accounting() {
        let mut t = PipelineTimings::default();
        for i in 0..100 {
            let c = 0.001 + i as f64 * 1e-5;
            t.cycle_s.push(c);
            t.stage_s[0].push(c * 0.4);
            t.stage_s[1].push(c * 0.3);
            t.stage_s[2].push(c * 0.2);
            t.stage_s[3].push(c * 0.1);
        }
        let r = t.report();
        assert_eq!(r.cycles, 100);
        assert!(r.cycle.p99 >= r.cycle.p50);
        // Stage p50s sum to about the cycle p50.
        let sum = r.segment.p50 + r.cluster.p50 + r.fit.p50 + r.impact.p50;
        assert!((sum - r.cycle.p50).abs() < 1e-9);
    }
}
