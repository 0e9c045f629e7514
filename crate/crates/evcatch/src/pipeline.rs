//! Offline detection pipeline: windows an event stream, segments moving
//! pixels, clusters them, lifts the best candidate to 3D, fits the ballistic
//! trajectory and predicts the catch-plane impact.
//!
//! Every stage is wall-clock instrumented; the whole run is deterministic
//! for a fixed config and input.

use crate::cluster::{dbscan, optical_flow, Cluster, FlowField};
use crate::config::PipelineConfig;
use crate::event::{Event, EventBuffer, ImuSample};
use crate::formats::{DetectionRecord, ImpactRecord, LOG_SCHEMA_VERSION};
use crate::geometry::{body_to_camera_rotation, Frame, RigidTransform, Vec3};
use crate::impact::{intersect, to_body, CatchPlane, MedianFilter};
use crate::latency::{PipelineTimings, StageTimer};
use crate::segment::{
    build_timestamp_image, mean_angular_rate, motion_compensate, normalize, prune_mask,
    threshold, SegmentError, TimestampImage,
};
use crate::simgen::OdometrySample;
use crate::trajectory::{depth_from_size, ransac_fit, ThrowTracker, TrajectoryError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no odometry samples provided")]
    NoOdometry,
    #[error("no IMU samples provided")]
    NoImu,
    #[error("events are not sorted at index {0}")]
    UnsortedEvents(usize),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

pub struct PipelineInput<'a> {
    pub events: &'a [Event],
    pub imu: &'a [ImuSample],
    pub odometry: &'a [OdometrySample],
    /// Stream start, ns.
    pub t_start: u64,
    /// Stream end, ns (exclusive).
    pub t_end: u64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub detections: Vec<DetectionRecord>,
    pub impacts: Vec<ImpactRecord>,
    /// First impact estimate emitted inside the commit horizon.
    pub committed: Option<ImpactRecord>,
    pub timings: PipelineTimings,
    pub windows: usize,
}

fn nearest_odometry<'a>(
    odometry: &'a [OdometrySample],
    t: u64,
) -> Option<&'a OdometrySample> {
    odometry.iter().min_by_key(|s| s.t.abs_diff(t))
}

/// Angular rate for the warp model, camera frame.
///
/// A camera with angular velocity `w_c` sees a static point's bearing evolve
/// as `b(t) = exp(-[w_c] t) b(t0)`, so warping an event back to t0 with the
/// first-order model `(I - [w] dt)` needs `w = -w_c = -R_cb w_body`.
pub fn warp_rate_from_body(omega_body: &Vec3) -> Vec3 {
    -(body_to_camera_rotation() * omega_body)
}

/// Picks the detection candidate among clusters: the most populous cluster
/// whose bounding box is fully inside the sensor.
fn select_cluster<'a>(clusters: &'a [Cluster], width: u32, height: u32) -> Option<&'a Cluster> {
    clusters
        .iter()
        .filter(|c| {
            c.bbox.0 > 0 && c.bbox.1 > 0 && c.bbox.2 < width - 1 && c.bbox.3 < height - 1
        })
        .max_by_key(|c| c.members.len())
}

/// Bounding-box width with the motion smear over the window removed.
///
/// The box circumscribes the pixels swept during the whole window, which is
/// the object extent plus |flow| * window in each axis; a signed fixed
/// correction compensates pixel-noise inflation or mask-pruning erosion.
fn corrected_width(cluster: &Cluster, window: f64, correction_px: f64) -> f64 {
    let w = cluster.width_px() - cluster.mean_flow.0.abs() * window - correction_px;
    w.max(1.5)
}

pub fn run_offline(
    config: &PipelineConfig,
    input: &PipelineInput,
) -> Result<PipelineOutput, PipelineError> {
    if input.odometry.is_empty() {
        return Err(PipelineError::NoOdometry);
    }
    if input.imu.is_empty() {
        return Err(PipelineError::NoImu);
    }
    if let Some(i) = input.events.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(PipelineError::UnsortedEvents(i + 1));
    }

    let intr = &config.intrinsics;
    let window_ns = (config.segmentation.window * 1e9).round() as u64;
    let t_bc = RigidTransform {
        rotation: body_to_camera_rotation().transpose(),
        translation: Vec3::zeros(),
        from_frame: Frame::Camera,
        to_frame: Frame::Body,
    };

    let mut out = PipelineOutput {
        detections: Vec::new(),
        impacts: Vec::new(),
        committed: None,
        timings: PipelineTimings::default(),
        windows: 0,
    };
    let mut tracker = ThrowTracker::new(config.reset_gap_s);
    let mut filter = MedianFilter::new(config.median_window);
    let mut prev_ts: Option<TimestampImage> = None;
    let mut event_idx = 0usize;
    let mut window_idx = 0u64;

    let mut t0 = input.t_start;
    while t0 + window_ns <= input.t_end {
        let t1 = t0 + window_ns;
        let cycle = StageTimer::start();

        // Collect this window's events (stream is sorted).
        let mut events = Vec::new();
        while event_idx < input.events.len() && input.events[event_idx].t < t1 {
            let e = input.events[event_idx];
            event_idx += 1;
            if e.t >= t0 {
                events.push(e);
            }
        }

        // Segmentation.
        let seg_timer = StageTimer::start();
        let omega_body = mean_angular_rate(input.imu, t0, t1)?;
        let omega_warp = warp_rate_from_body(&omega_body);
        let buffer = EventBuffer::from_events(events, t0, window_ns)
            .expect("window-filtered events satisfy the buffer invariant");
        let warped = motion_compensate(&buffer, &omega_warp, intr);
        let ts = build_timestamp_image(&buffer, &warped, intr);
        let norm = normalize(&ts);
        out.timings.stage_s[0].push(seg_timer.stop());

        let mut detection = None;
        if let Ok(norm) = norm {
            let map = prune_mask(
                &threshold(&norm, &omega_warp, &config.segmentation),
                config.segmentation.min_mask_neighbors,
                config.segmentation.prune_radius_px,
            );

            // Clustering.
            let cluster_timer = StageTimer::start();
            let flow = match &prev_ts {
                Some(prev) => optical_flow(prev, &ts, &config.cluster)
                    .expect("pipeline images share dimensions"),
                None => empty_flow(&ts),
            };
            let t_mid = t0 + window_ns / 2;
            let clusters = dbscan(&map, &flow, &norm, &config.cluster, t_mid);
            let best = select_cluster(&clusters, intr.width, intr.height).cloned();
            out.timings.stage_s[1].push(cluster_timer.stop());

            if let Some(cluster) = best {
                let odo = nearest_odometry(input.odometry, t1).expect("odometry non-empty");
                let t_wc = odo.t_wb.compose(&t_bc).expect("frames chain");
                let width_px = corrected_width(
                    &cluster,
                    config.segmentation.window,
                    config.width_correction_px,
                );
                if let Ok(depth) =
                    depth_from_size(intr, width_px, config.object_width_m)
                {
                    let (cx, cy) = cluster.center();
                    let p_camera = intr
                        .back_project(&crate::geometry::Vec2::new(cx, cy), depth)
                        .expect("positive depth");
                    let det = crate::trajectory::Detection3D {
                        t: cluster.t as f64 * 1e-9,
                        p_world: t_wc.transform_point(&p_camera),
                        p_camera,
                        r_wc: t_wc.rotation,
                        width_px,
                    };
                    out.detections.push(DetectionRecord {
                        schema_version: LOG_SCHEMA_VERSION,
                        t: t_mid,
                        center_px: [cx, cy],
                        width_px,
                        depth_m: depth,
                        p_world: det.p_world.into(),
                        cluster_size: cluster.members.len(),
                    });
                    detection = Some(det);
                }
            }
        }
        prev_ts = Some(ts);

        // Trajectory fit.
        let fit_timer = StageTimer::start();
        let mut fit = None;
        if let Some(det) = detection {
            if tracker.push(det) {
                filter.clear();
            }
            let dets = tracker.detections();
            if dets.len() >= config.ransac.min_detections.max(2) {
                match ransac_fit(dets, &config.ransac, config.seed.wrapping_add(window_idx)) {
                    Ok(f) => fit = Some(f),
                    Err(
                        TrajectoryError::NoConsensus { .. }
                        | TrajectoryError::TooFewDetections { .. },
                    ) => {}
                    Err(_) => {}
                }
            }
        }
        out.timings.stage_s[2].push(fit_timer.stop());

        // Impact prediction.
        let impact_timer = StageTimer::start();
        if let Some(f) = fit {
            let odo = nearest_odometry(input.odometry, t1).expect("odometry non-empty");
            let t_bw = odo.t_wb.inverse();
            let body_parabola = to_body(&f.parabola, &t_bw);
            let plane = CatchPlane::from_gravity(&body_parabola.g);
            if let Ok(est) = intersect(&body_parabola, &plane, f.residual_rms) {
                let filtered = filter.push(est);
                let now_s = t1 as f64 * 1e-9;
                let committed = filtered.t_imp - now_s <= config.commit_horizon_s;
                let record = ImpactRecord::from_estimate(
                    t1,
                    &filtered,
                    f.inliers.len(),
                    committed,
                );
                if committed && out.committed.is_none() {
                    out.committed = Some(record.clone());
                }
                out.impacts.push(record);
            }
        }
        out.timings.stage_s[3].push(impact_timer.stop());

        out.timings.cycle_s.push(cycle.stop());
        out.windows += 1;
        window_idx += 1;
        t0 = t1;
    }
    out.timings.stream_duration = (input.t_end - input.t_start) as f64 * 1e-9;
    Ok(out)
}

fn empty_flow(ts: &TimestampImage) -> FlowField {
    let n = ts.width * ts.height;
    FlowField {
        width: ts.width,
        height: ts.height,
        vx: vec![0.0; n],
        vy: vec![0.0; n],
        valid: vec![false; n],
    }
}

/// Aggregated segmentation quality against simulator ground truth.
#[derive(Debug, Clone, Default)]
pub struct SegMetrics {
    /// Pixels newly reached by the ball (all ball events in the last
    /// quarter of a window).
    pub ball_recent_px: usize,
    /// Of those, pixels the binary map marked.
    pub ball_hit_px: usize,
    /// Pixels whose events are all background.
    pub background_px: usize,
    /// Of those, pixels wrongly marked.
    pub background_marked_px: usize,
    pub windows: usize,
}

impl SegMetrics {
    pub fn recall(&self) -> f64 {
        if self.ball_recent_px == 0 {
            return f64::NAN;
        }
        self.ball_hit_px as f64 / self.ball_recent_px as f64
    }

    pub fn false_positive_rate(&self) -> f64 {
        if self.background_px == 0 {
            return f64::NAN;
        }
        self.background_marked_px as f64 / self.background_px as f64
    }
}

/// Runs segmentation alone over a labeled stream and scores it per window.
///
/// Recall counts compensated pixels the ball newly reached in the last
/// quarter of the window (all their ball events are that recent). Pixels
/// also carrying older ball events average to a mid-window mean timestamp
/// that is indistinguishable from background by construction, so they are
/// not part of the denominator. The false-positive denominator is every
/// pixel whose events are exclusively background.
pub fn evaluate_segmentation(
    config: &PipelineConfig,
    events: &[Event],
    labels: &[crate::simgen::EventLabel],
    imu: &[ImuSample],
    t_start: u64,
    t_end: u64,
) -> Result<SegMetrics, PipelineError> {
    use crate::simgen::EventLabel;
    use std::collections::HashMap;
    if imu.is_empty() {
        return Err(PipelineError::NoImu);
    }
    let intr = &config.intrinsics;
    let window_ns = (config.segmentation.window * 1e9).round() as u64;
    let mut metrics = SegMetrics::default();
    let mut idx = 0usize;
    let mut t0 = t_start;
    while t0 + window_ns <= t_end {
        let t1 = t0 + window_ns;
        let mut events_w = Vec::new();
        let mut labels_w = Vec::new();
        while idx < events.len() && events[idx].t < t1 {
            if events[idx].t >= t0 {
                events_w.push(events[idx]);
                labels_w.push(labels[idx]);
            }
            idx += 1;
        }
        if events_w.is_empty() {
            t0 = t1;
            continue;
        }
        let omega_body = mean_angular_rate(imu, t0, t1)?;
        let omega_warp = warp_rate_from_body(&omega_body);
        let buffer = EventBuffer::from_events(events_w, t0, window_ns)
            .expect("window-filtered events satisfy the buffer invariant");
        let warped = motion_compensate(&buffer, &omega_warp, intr);
        let ts = build_timestamp_image(&buffer, &warped, intr);
        let norm = match normalize(&ts) {
            Ok(n) => n,
            Err(_) => {
                t0 = t1;
                continue;
            }
        };
        let map = prune_mask(
            &threshold(&norm, &omega_warp, &config.segmentation),
            config.segmentation.min_mask_neighbors,
            config.segmentation.prune_radius_px,
        );

        // Per-pixel label summary of the compensated raster.
        #[derive(Default)]
        struct PxInfo {
            recent_ball: bool,
            old_ball: bool,
            any_noise: bool,
            any_background: bool,
        }
        let mut px: HashMap<(u32, u32), PxInfo> = HashMap::new();
        let recent_cut = 0.75 * buffer.window_s();
        for (w, l) in warped.iter().zip(&labels_w) {
            if !w.in_bounds {
                continue;
            }
            let (x, y) = (w.x.round() as i64, w.y.round() as i64);
            if x < 0 || y < 0 || x >= intr.width as i64 || y >= intr.height as i64 {
                continue;
            }
            let info = px.entry((x as u32, y as u32)).or_default();
            match l {
                EventLabel::Ball => {
                    if w.rel_t >= recent_cut {
                        info.recent_ball = true;
                    } else {
                        info.old_ball = true;
                    }
                }
                EventLabel::Background => info.any_background = true,
                EventLabel::Noise => info.any_noise = true,
            }
        }
        for ((x, y), info) in &px {
            let marked = map.mask[map.idx(*x as usize, *y as usize)];
            if info.recent_ball && !info.old_ball {
                metrics.ball_recent_px += 1;
                if marked {
                    metrics.ball_hit_px += 1;
                }
            }
            if info.any_background && !info.recent_ball && !info.old_ball && !info.any_noise {
                metrics.background_px += 1;
                if marked {
                    metrics.background_marked_px += 1;
                }
            }
        }
        metrics.windows += 1;
        t0 = t1;
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate, NoiseModel, RotationSegment, SceneConfig, ThrowSpec};

    fn throw_at_robot() -> ThrowSpec {
        ThrowSpec {
            p0_world: [4.0, 0.0, 1.0],
            v0_world: [-7.0, 0.3, 2.5],
            ball_diameter: 0.1,
            launch_time: 0.0,
        }
    }

    fn input_from<'a>(
        out: &'a crate::simgen::SimOutput,
        duration: f64,
    ) -> PipelineInput<'a> {
        PipelineInput {
            events: &out.events,
            imu: &out.imu,
            odometry: &out.odometry,
            t_start: 0,
            t_end: (duration * 1e9) as u64,
        }
    }

    #[test]
    fn static_scene_impact_matches_truth() {
        let mut scene = SceneConfig::vga_default(11);
        scene.duration = 0.6;
        let sim = generate(&scene, &throw_at_robot()).unwrap();
        let config = PipelineConfig::default();
        let out = run_offline(&config, &input_from(&sim, scene.duration)).unwrap();
        assert!(
            out.detections.len() > 20,
            "only {} detections",
            out.detections.len()
        );
        let last = out.impacts.last().expect("impact predicted");
        let truth = sim.ground_truth.impact_point_vec().unwrap();
        let err = (Vec3::from(last.p_imp_body) - truth).norm();
        assert!(err < 0.3, "impact error {err:.3} m (truth {truth:?})");
        let t_err = (last.t_imp_s - sim.ground_truth.impact_time.unwrap()).abs();
        assert!(t_err < 0.1, "impact time error {t_err:.3} s");
    }

    #[test]
    fn depth_estimates_track_truth() {
        let mut scene = SceneConfig::vga_default(13);
        scene.duration = 0.5;
        scene.noise = NoiseModel::none();
        let sim = generate(&scene, &throw_at_robot()).unwrap();
        let config = PipelineConfig::default();
        let out = run_offline(&config, &input_from(&sim, scene.duration)).unwrap();
        let mut errs = Vec::new();
        for d in &out.detections {
            if let Some(proj) = sim.ground_truth.projection_at(d.t) {
                errs.push((d.depth_m - proj.depth) / proj.depth);
            }
        }
        assert!(errs.len() > 10);
        let mean: f64 = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(mean.abs() < 0.15, "relative depth bias {mean:.3}");
    }

    #[test]
    fn rotating_background_is_rejected() {
        let mut scene = SceneConfig::vga_default(17);
        scene.duration = 0.4;
        scene.rotation_profile = vec![RotationSegment {
            start: 0.0,
            omega: [0.0, 0.0, 0.4],
        }];
        // No ball at all.
        let throw = ThrowSpec {
            launch_time: 10.0,
            ..throw_at_robot()
        };
        let sim = generate(&scene, &throw).unwrap();
        let config = PipelineConfig::default();
        let out = run_offline(&config, &input_from(&sim, scene.duration)).unwrap();
        assert!(
            out.detections.len() <= 2,
            "{} spurious detections on a static background",
            out.detections.len()
        );
        assert!(out.impacts.is_empty());
    }

    #[test]
    fn segmentation_metrics_on_rotating_scene() {
        let mut scene = SceneConfig::vga_default(19);
        scene.duration = 0.5;
        scene.rotation_profile = vec![RotationSegment {
            start: 0.0,
            omega: [0.0, 0.0, 0.3],
        }];
        let sim = generate(&scene, &throw_at_robot()).unwrap();
        let config = PipelineConfig::default();
        let m = evaluate_segmentation(
            &config,
            &sim.events,
            &sim.ground_truth.labels,
            &sim.imu,
            0,
            (scene.duration * 1e9) as u64,
        )
        .unwrap();
        assert!(m.windows > 10);
        assert!(m.ball_recent_px > 100);
        assert!(m.recall() > 0.8, "recall {:.3}", m.recall());
        assert!(
            m.false_positive_rate() < 0.05,
            "fp {:.4}",
            m.false_positive_rate()
        );
    }

    #[test]
    fn deterministic_output() {
        let mut scene = SceneConfig::vga_default(23);
        scene.duration = 0.4;
        let sim = generate(&scene, &throw_at_robot()).unwrap();
        let config = PipelineConfig::default();
        let a = run_offline(&config, &input_from(&sim, scene.duration)).unwrap();
        let b = run_offline(&config, &input_from(&sim, scene.duration)).unwrap();
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.impacts, b.impacts);
    }

    #[test]
    fn missing_sensors_are_errors() {
        let scene = SceneConfig::vga_default(1);
        let events: Vec<Event> = Vec::new();
        let config = PipelineConfig::default();
        let err = run_offline(
            &config,
            &PipelineInput {
                events: &events,
                imu: &[],
                odometry: &[],
                t_start: 0,
                t_end: 100,
            },
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::NoOdometry));
        let _ = scene;
    }
}

