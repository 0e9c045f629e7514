//! Synthetic scene generator: event stream, IMU, odometry and ground truth
//! for a thrown ball observed by a yaw-rotating event camera.
//!
//! Events come from per-pixel contrast-edge crossings sampled at a fixed
//! internal rate: the ball disc emits events where its boundary sweeps
//! pixels, background points emit events when their projection moves to a
//! new pixel under camera rotation. The generator is a pure function of
//! (config, throw, seed) and bit-deterministic.

use crate::event::{Event, ImuSample};
use crate::geometry::{
    body_to_camera_rotation, rot_z, CameraIntrinsics, Frame, RigidTransform, Vec2, Vec3,
};
use crate::impact::{intersect, CatchPlane};
use crate::trajectory::Parabola;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Internal simulation rate, Hz.
const SIM_RATE: f64 = 10_000.0;
/// Minimum time the ball must stay in the field of view.
const MIN_VISIBLE_S: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum SimgenError {
    #[error("ball never enters the field of view (visible {visible:.3} s, need {need:.3} s)")]
    NeverVisible { visible: f64, need: f64 },
    #[error("event stream is empty")]
    EmptyStream,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Ground-truth origin of an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLabel {
    Ball,
    Background,
    Noise,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThrowSpec {
    pub p0_world: [f64; 3],
    pub v0_world: [f64; 3],
    /// Ball diameter in meters.
    pub ball_diameter: f64,
    /// Launch time in seconds from scene start.
    pub launch_time: f64,
}

impl ThrowSpec {
    pub fn p0(&self) -> Vec3 {
        Vec3::from(self.p0_world)
    }

    pub fn v0(&self) -> Vec3 {
        Vec3::from(self.v0_world)
    }

    pub fn parabola(&self) -> Parabola {
        Parabola::new(self.p0(), self.v0(), self.launch_time)
    }
}

/// Piecewise-constant body angular rate segment (active from `start` s).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationSegment {
    pub start: f64,
    /// Body-frame angular rate, rad/s (yaw-only profiles use the z entry).
    pub omega: [f64; 3],
}

/// Spurious-event and measurement noise parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Per-pixel rate of spurious events, Hz.
    pub rate_hz_per_px: f64,
    /// Timestamp jitter sigma, microseconds.
    pub timestamp_jitter_us: f64,
    /// Pixel position jitter sigma, px.
    pub pixel_jitter_px: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            rate_hz_per_px: 0.1,
            timestamp_jitter_us: 50.0,
            pixel_jitter_px: 0.3,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            rate_hz_per_px: 0.0,
            timestamp_jitter_us: 0.0,
            pixel_jitter_px: 0.0,
        }
    }
}

/// Random background point cloud on a virtual wall ahead of the robot.
///
/// A point is a high-contrast texture element: while the camera rotates it
/// emits events at `event_rate_hz` at its current projected pixel. A static
/// camera sees no background events.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    pub point_count: usize,
    /// Wall distance range along body x, meters.
    pub distance_min: f64,
    pub distance_max: f64,
    /// Per-point event rate while the camera is rotating, Hz.
    pub event_rate_hz: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            point_count: 1500,
            distance_min: 3.0,
            distance_max: 10.0,
            event_rate_hz: 2000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub intrinsics: CameraIntrinsics,
    /// Piecewise-constant body angular rate profile; empty means static.
    pub rotation_profile: Vec<RotationSegment>,
    pub background: BackgroundConfig,
    pub noise: NoiseModel,
    /// Scene duration in seconds.
    pub duration: f64,
    pub seed: u64,
}

impl SceneConfig {
    pub fn vga_default(seed: u64) -> Self {
        Self {
            intrinsics: CameraIntrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480)
                .expect("valid VGA intrinsics"),
            rotation_profile: Vec::new(),
            background: BackgroundConfig::default(),
            noise: NoiseModel::default(),
            duration: 1.0,
            seed,
        }
    }

    /// Body angular rate at time t.
    pub fn omega_at(&self, t: f64) -> Vec3 {
        let mut w = Vec3::zeros();
        for seg in &self.rotation_profile {
            if t >= seg.start {
                w = Vec3::from(seg.omega);
            }
        }
        w
    }

    /// Integrated yaw angle at time t (yaw-only profiles).
    fn yaw_at(&self, t: f64) -> f64 {
        let mut yaw = 0.0;
        let mut prev_t = 0.0;
        let mut prev_w = 0.0;
        for seg in &self.rotation_profile {
            if seg.start >= t {
                break;
            }
            yaw += prev_w * (seg.start - prev_t);
            prev_t = seg.start;
            prev_w = seg.omega[2];
        }
        yaw + prev_w * (t - prev_t)
    }

    /// World-from-body transform at time t.
    pub fn t_wb(&self, t: f64) -> RigidTransform {
        RigidTransform {
            rotation: rot_z(self.yaw_at(t)),
            translation: Vec3::zeros(),
            from_frame: Frame::Body,
            to_frame: Frame::World,
        }
    }

    /// World-from-camera transform at time t (camera rigid on the body).
    pub fn t_wc(&self, t: f64) -> RigidTransform {
        let t_bc = RigidTransform {
            rotation: body_to_camera_rotation().transpose(),
            translation: Vec3::zeros(),
            from_frame: Frame::Camera,
            to_frame: Frame::Body,
        };
        self.t_wb(t).compose(&t_bc).expect("frames chain")
    }
}

/// Projected ball disc at one ground-truth sample time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BallImageSample {
    pub t: u64,
    pub cx: f64,
    pub cy: f64,
    pub radius_px: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BallStateSample {
    pub t: u64,
    pub p_world: [f64; 3],
    pub p_body: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub throw: ThrowSpec,
    /// True trajectory parameters (world frame).
    pub parabola: Parabola,
    /// True impact time on the catch plane, seconds; None when the throw
    /// never crosses it (or there is no ball in the scene).
    pub impact_time: Option<f64>,
    /// True impact point, body frame at rest.
    pub impact_point: Option<[f64; 3]>,
    /// Ball state sampled at 1 kHz while airborne.
    pub states: Vec<BallStateSample>,
    /// Projected disc sampled at 1 kHz while visible.
    pub projections: Vec<BallImageSample>,
    /// Per-event label, parallel to the event stream.
    pub labels: Vec<EventLabel>,
}

impl GroundTruth {
    /// Projected disc nearest to time t (ns), if the ball was visible then.
    pub fn projection_at(&self, t: u64) -> Option<&BallImageSample> {
        self.projections
            .iter()
            .min_by_key(|s| s.t.abs_diff(t))
            .filter(|s| s.t.abs_diff(t) < 2_000_000)
    }

    pub fn impact_point_vec(&self) -> Option<Vec3> {
        self.impact_point.map(Vec3::from)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdometrySample {
    pub t: u64,
    pub t_wb: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: Vec<Event>,
    pub imu: Vec<ImuSample>,
    pub odometry: Vec<OdometrySample>,
    pub ground_truth: GroundTruth,
}

fn project_point(
    intrinsics: &CameraIntrinsics,
    t_cw: &RigidTransform,
    p_world: &Vec3,
) -> Option<(Vec2, f64)> {
    let p_cam = t_cw.transform_point(p_world);
    if p_cam.z <= 0.1 {
        return None;
    }
    let px = intrinsics.project(&p_cam).ok()?;
    Some((px, p_cam.z))
}

/// Generates the full sensor suite for one throw.
pub fn generate(scene: &SceneConfig, throw: &ThrowSpec) -> Result<SimOutput, SimgenError> {
    if scene.duration <= 0.0 {
        return Err(SimgenError::InvalidScene("duration must be positive".into()));
    }
    if throw.ball_diameter <= 0.0 {
        return Err(SimgenError::InvalidScene(
            "ball diameter must be positive".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(scene.seed);
    let intr = &scene.intrinsics;
    let parabola = throw.parabola();

    // Background cloud on a wall along body x, spread in y/z.
    let wall: Vec<(Vec3, i8)> = (0..scene.background.point_count)
        .map(|_| {
            let x = rng.gen_range(scene.background.distance_min..=scene.background.distance_max);
            let y = rng.gen_range(-6.0..6.0);
            let z = rng.gen_range(-2.0..5.0);
            let polarity: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
            (Vec3::new(x, y, z), polarity)
        })
        .collect();

    let n_ticks = (scene.duration * SIM_RATE).round() as u64;
    let dt = 1.0 / SIM_RATE;
    let px_count = intr.width as u64 * intr.height as u64;
    let noise_per_tick = scene.noise.rate_hz_per_px * px_count as f64 * dt;
    let ts_jitter = Normal::new(0.0, (scene.noise.timestamp_jitter_us * 1e3).max(1e-9)).unwrap();
    let px_jitter = Normal::new(0.0, scene.noise.pixel_jitter_px.max(1e-12)).unwrap();

    struct Raw {
        t: u64,
        x: u16,
        y: u16,
        polarity: i8,
        label: EventLabel,
    }
    let mut raw: Vec<Raw> = Vec::new();

    let mut prev_pose = scene.t_wc(0.0);
    let mut prev_ball: Option<(Vec2, f64)> = None;
    let mut visible_ticks = 0u64;
    let bg_per_tick = scene.background.event_rate_hz * dt;
    let bg_poisson = if bg_per_tick > 0.0 {
        Poisson::new(bg_per_tick).ok()
    } else {
        None
    };

    for tick in 1..=n_ticks {
        let t = tick as f64 * dt;
        let t_ns = (t * 1e9).round() as u64;
        let pose = scene.t_wc(t);
        let t_cw = pose.inverse();
        let pose_changed = (pose.rotation - prev_pose.rotation).norm() > 1e-15;

        // Projected ball disc this tick, used for emission and occlusion.
        let ball_now = if t >= throw.launch_time {
            let p_world = parabola.eval(t);
            project_point(intr, &t_cw, &p_world).map(|(px, depth)| {
                let radius = intr.fx * throw.ball_diameter / 2.0 / depth;
                (px, radius)
            })
        } else {
            None
        };

        // Background texture emits events at its projected pixel while the
        // camera is rotating; points hidden behind the ball are occluded.
        if pose_changed {
            for (p, polarity) in &wall {
                let count = bg_poisson
                    .as_ref()
                    .map(|d| d.sample(&mut rng) as u64)
                    .unwrap_or(0);
                if count == 0 {
                    continue;
                }
                if let Some((px, _)) = project_point(intr, &t_cw, p) {
                    if let Some((c, r)) = ball_now {
                        if (px - c).norm_squared() <= r * r {
                            continue;
                        }
                    }
                    let (x, y) = (px.x.round() as i32, px.y.round() as i32);
                    if x >= 0 && y >= 0 && x < intr.width as i32 && y < intr.height as i32 {
                        for _ in 0..count {
                            raw.push(Raw {
                                t: jittered_time(t_ns, &ts_jitter, &mut rng, scene),
                                x: x as u16,
                                y: y as u16,
                                polarity: *polarity,
                                label: EventLabel::Background,
                            });
                        }
                    }
                }
            }
            prev_pose = pose;
        }

        // Ball: events where disc membership changed since the last tick.
        if ball_now.is_some() {
            visible_ticks += 1;
        }
        if ball_now.is_some() || prev_ball.is_some() {
            let bbox = |b: &Option<(Vec2, f64)>| {
                b.map(|(c, r)| {
                    (
                        (c.x - r - 1.0).floor().max(0.0) as i32,
                        (c.y - r - 1.0).floor().max(0.0) as i32,
                        (c.x + r + 1.0).ceil().min(intr.width as f64 - 1.0) as i32,
                        (c.y + r + 1.0).ceil().min(intr.height as f64 - 1.0) as i32,
                    )
                })
            };
            let union = match (bbox(&ball_now), bbox(&prev_ball)) {
                (Some(a), Some(b)) => Some((
                    a.0.min(b.0),
                    a.1.min(b.1),
                    a.2.max(b.2),
                    a.3.max(b.3),
                )),
                (Some(a), None) => Some(a),
                (None, Some(b)) => Some(b),
                (None, None) => None,
            };
            if let Some((x0, y0, x1, y1)) = union {
                let inside = |b: &Option<(Vec2, f64)>, x: i32, y: i32| {
                    b.map(|(c, r)| {
                        let dx = x as f64 - c.x;
                        let dy = y as f64 - c.y;
                        dx * dx + dy * dy <= r * r
                    })
                    .unwrap_or(false)
                };
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let now = inside(&ball_now, x, y);
                        let was = inside(&prev_ball, x, y);
                        if now != was {
                            let (jx, jy) = if scene.noise.pixel_jitter_px > 0.0 {
                                (
                                    x + px_jitter.sample(&mut rng).round() as i32,
                                    y + px_jitter.sample(&mut rng).round() as i32,
                                )
                            } else {
                                (x, y)
                            };
                            if jx >= 0
                                && jy >= 0
                                && jx < intr.width as i32
                                && jy < intr.height as i32
                            {
                                raw.push(Raw {
                                    t: jittered_time(t_ns, &ts_jitter, &mut rng, scene),
                                    x: jx as u16,
                                    y: jy as u16,
                                    polarity: if now { 1 } else { -1 },
                                    label: EventLabel::Ball,
                                });
                            }
                        }
                    }
                }
            }
        }
        prev_ball = ball_now;

        // Spurious events, Poisson per tick.
        if noise_per_tick > 0.0 {
            let count = Poisson::new(noise_per_tick)
                .map(|d| d.sample(&mut rng) as u64)
                .unwrap_or(0);
            for _ in 0..count {
                raw.push(Raw {
                    t: t_ns.saturating_sub(rng.gen_range(0..(dt * 1e9) as u64)),
                    x: rng.gen_range(0..intr.width) as u16,
                    y: rng.gen_range(0..intr.height) as u16,
                    polarity: if rng.gen_bool(0.5) { 1 } else { -1 },
                    label: EventLabel::Noise,
                });
            }
        }
    }

    // A throw launched after the scene ends means "no ball": background-only
    // scenes are valid. Otherwise the ball must be visible long enough for
    // at least two detection cycles.
    let visible = visible_ticks as f64 * dt;
    if visible < MIN_VISIBLE_S && throw.launch_time < scene.duration {
        return Err(SimgenError::NeverVisible {
            visible,
            need: MIN_VISIBLE_S,
        });
    }

    raw.sort_by_key(|r| r.t);
    let events: Vec<Event> = raw
        .iter()
        .map(|r| Event {
            t: r.t,
            x: r.x,
            y: r.y,
            polarity: r.polarity,
        })
        .collect();
    let labels: Vec<EventLabel> = raw.iter().map(|r| r.label).collect();

    // IMU at 1 kHz: exact rotation profile.
    let imu: Vec<ImuSample> = (0..=(scene.duration * 1000.0) as u64)
        .map(|ms| {
            let t = ms as f64 * 1e-3;
            ImuSample {
                t: (t * 1e9) as u64,
                omega: scene.omega_at(t),
            }
        })
        .collect();

    // Odometry at 200 Hz.
    let odometry: Vec<OdometrySample> = (0..=(scene.duration * 200.0) as u64)
        .map(|k| {
            let t = k as f64 * 5e-3;
            OdometrySample {
                t: (t * 1e9) as u64,
                t_wb: scene.t_wb(t),
            }
        })
        .collect();

    // Ground truth: states, projections, impact on the rest-frame plane.
    let plane = CatchPlane::default();
    let impact = intersect(&parabola, &plane, 0.0).ok();
    let mut states = Vec::new();
    let mut projections = Vec::new();
    for ms in 0..=(scene.duration * 1000.0) as u64 {
        let t = ms as f64 * 1e-3;
        if t < throw.launch_time {
            continue;
        }
        let p_world = parabola.eval(t);
        let t_ns = (t * 1e9) as u64;
        let p_body = scene.t_wb(t).inverse().transform_point(&p_world);
        states.push(BallStateSample {
            t: t_ns,
            p_world: p_world.into(),
            p_body: p_body.into(),
        });
        if let Some((px, depth)) = project_point(intr, &scene.t_wc(t).inverse(), &p_world) {
            projections.push(BallImageSample {
                t: t_ns,
                cx: px.x,
                cy: px.y,
                radius_px: intr.fx * throw.ball_diameter / 2.0 / depth,
                depth,
            });
        }
    }

    Ok(SimOutput {
        events,
        imu,
        odometry,
        ground_truth: GroundTruth {
            throw: *throw,
            parabola,
            impact_time: impact.as_ref().map(|i| i.t_imp),
            impact_point: impact.as_ref().map(|i| i.p_imp.into()),
            states,
            projections,
            labels,
        },
    })
}

fn jittered_time(
    t_ns: u64,
    dist: &Normal<f64>,
    rng: &mut ChaCha20Rng,
    scene: &SceneConfig,
) -> u64 {
    if scene.noise.timestamp_jitter_us <= 0.0 {
        return t_ns;
    }
    let j = dist.sample(rng);
    if j >= 0.0 {
        t_ns.saturating_add(j as u64)
    } else {
        t_ns.saturating_sub((-j) as u64)
    }
}

/// Event rates per ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub total: usize,
    pub ball: usize,
    pub background: usize,
    pub noise: usize,
    pub duration: f64,
}

impl RateStats {
    pub fn ball_rate(&self) -> f64 {
        self.ball as f64 / self.duration
    }
}

pub fn event_rate_stats(
    events: &[Event],
    labels: &[EventLabel],
    duration: f64,
) -> Result<RateStats, SimgenError> {
    if events.is_empty() {
        return Err(SimgenError::EmptyStream);
    }
    let mut stats = RateStats {
        total: events.len(),
        ball: 0,
        background: 0,
        noise: 0,
        duration,
    };
    for l in labels {
        match l {
            EventLabel::Ball => stats.ball += 1,
            EventLabel::Background => stats.background += 1,
            EventLabel::Noise => stats.noise += 1,
        }
    }
    Ok(stats)
}
