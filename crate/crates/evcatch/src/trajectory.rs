//! Ballistic trajectory estimation from cluster detections.
//!
//! Detections are lifted to 3D with the known object size, then a
//! gravity-constrained parabola is fit with RANSAC over random detection
//! pairs and refined with closed-form per-axis least squares. Inlier gating
//! uses an anisotropic norm that trusts the camera z direction less.

use crate::cluster::Cluster;
use crate::geometry::{CameraIntrinsics, Mat3, RigidTransform, Vec2, Vec3, GRAVITY_W};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("bounding box width must be positive")]
    ZeroWidth,
    #[error("no odometry covering t={0} s")]
    NoOdometry(f64),
    #[error("detection times too close ({0} s apart)")]
    DegenerateTimes(f64),
    #[error("need at least {needed} detections, have {have}")]
    TooFewDetections { needed: usize, have: usize },
    #[error("no consensus: best inlier count {best} below minimum {min}")]
    NoConsensus { best: usize, min: usize },
    #[error("least-squares system is rank deficient")]
    RankDeficient,
}

/// A moving-object detection lifted to 3D.
#[derive(Debug, Clone, Copy)]
pub struct Detection3D {
    /// Detection time in seconds (absolute, stream epoch).
    pub t: f64,
    pub p_world: Vec3,
    pub p_camera: Vec3,
    /// Camera-to-world rotation at detection time.
    pub r_wc: Mat3,
    /// Source bounding box width in px.
    pub width_px: f64,
}

/// Gravity-constrained trajectory `p(t) = p0 + v0 (t - t_ref) + g/2 (t - t_ref)^2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Parabola {
    pub p0: Vec3,
    pub v0: Vec3,
    pub g: Vec3,
    pub t_ref: f64,
}

impl Parabola {
    pub fn new(p0: Vec3, v0: Vec3, t_ref: f64) -> Self {
        Self {
            p0,
            v0,
            g: GRAVITY_W,
            t_ref,
        }
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        let tau = t - self.t_ref;
        self.p0 + self.v0 * tau + self.g * (0.5 * tau * tau)
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        self.v0 + self.g * (t - self.t_ref)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold in anisotropic-norm units.
    pub inlier_threshold: f64,
    pub sigma_xy_sq: f64,
    pub sigma_z_sq: f64,
    /// Absolute floor on the required inlier count.
    pub min_inliers: usize,
    /// Fraction of detections additionally required as inliers.
    pub min_inlier_frac: f64,
    pub min_detections: usize,
    /// Use the anisotropic weighting in the refinement too (gating always
    /// uses it); off by default.
    pub weighted_refine: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 0.3,
            sigma_xy_sq: 1.0,
            sigma_z_sq: 5.0,
            min_inliers: 4,
            min_inlier_frac: 0.5,
            min_detections: 2,
            weighted_refine: false,
        }
    }
}

impl RansacConfig {
    pub fn effective_min_inliers(&self, n: usize) -> usize {
        self.min_inliers
            .max((self.min_inlier_frac * n as f64).ceil() as usize)
            .max(2)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub parabola: Parabola,
    pub inliers: Vec<usize>,
    /// RMS of the anisotropic-norm residuals over the inliers.
    pub residual_rms: f64,
}

/// Depth from known metric width: `Z = fx * W_metric / W`.
pub fn depth_from_size(
    intrinsics: &CameraIntrinsics,
    width_px: f64,
    width_metric: f64,
) -> Result<f64, TrajectoryError> {
    if width_px <= 0.0 || width_metric <= 0.0 {
        return Err(TrajectoryError::ZeroWidth);
    }
    Ok(intrinsics.fx * width_metric / width_px)
}

/// Back-projects a cluster's box center to 3D and transforms it to world.
///
/// `t_wc` maps camera to world at the detection time.
pub fn lift(
    cluster: &Cluster,
    intrinsics: &CameraIntrinsics,
    t_wc: &RigidTransform,
    width_metric: f64,
) -> Result<Detection3D, TrajectoryError> {
    let depth = depth_from_size(intrinsics, cluster.width_px(), width_metric)?;
    let (cx, cy) = cluster.center();
    let p_camera = intrinsics
        .back_project(&Vec2::new(cx, cy), depth)
        .map_err(|_| TrajectoryError::ZeroWidth)?;
    Ok(Detection3D {
        t: cluster.t as f64 * 1e-9,
        p_world: t_wc.transform_point(&p_camera),
        p_camera,
        r_wc: t_wc.rotation,
        width_px: cluster.width_px(),
    })
}

/// Exact parabola through two detections at distinct times.
pub fn minimal_solve(d1: &Detection3D, d2: &Detection3D) -> Result<Parabola, TrajectoryError> {
    let dt = d2.t - d1.t;
    if dt.abs() < 1e-6 {
        return Err(TrajectoryError::DegenerateTimes(dt));
    }
    let v0 = (d2.p_world - d1.p_world - GRAVITY_W * (0.5 * dt * dt)) / dt;
    Ok(Parabola::new(d1.p_world, v0, d1.t))
}

/// Anisotropic squared norm of a world-frame residual for one detection:
/// `e' Lambda e` with `Lambda = R_wc diag(1/sxy, 1/sxy, 1/sz) R_wc'`.
fn lambda_norm(residual: &Vec3, r_wc: &Mat3, config: &RansacConfig) -> f64 {
    let e_cam = r_wc.transpose() * residual;
    (e_cam.x * e_cam.x / config.sigma_xy_sq
        + e_cam.y * e_cam.y / config.sigma_xy_sq
        + e_cam.z * e_cam.z / config.sigma_z_sq)
        .sqrt()
}

/// Indices of detections within the inlier threshold of the parabola.
pub fn count_inliers(
    parabola: &Parabola,
    detections: &[Detection3D],
    config: &RansacConfig,
) -> Vec<usize> {
    detections
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            lambda_norm(&(d.p_world - parabola.eval(d.t)), &d.r_wc, config)
                <= config.inlier_threshold
        })
        .map(|(i, _)| i)
        .collect()
}

/// Closed-form least squares for p0, v0 over the given detections.
///
/// Per axis, fits `p - g/2 tau^2` against the basis {1, tau}. The plain
/// euclidean objective is used unless `weighted_refine` is set.
pub fn refine(
    detections: &[Detection3D],
    config: &RansacConfig,
) -> Result<Parabola, TrajectoryError> {
    if detections.len() < 2 {
        return Err(TrajectoryError::TooFewDetections {
            needed: 2,
            have: detections.len(),
        });
    }
    let t_ref = detections[0].t;
    if config.weighted_refine {
        return refine_weighted(detections, t_ref, config);
    }
    // Normal equations of the per-axis 2x2 system; shared across axes.
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    let mut b0 = Vec3::zeros();
    let mut b1 = Vec3::zeros();
    for d in detections {
        let tau = d.t - t_ref;
        let rhs = d.p_world - GRAVITY_W * (0.5 * tau * tau);
        s0 += 1.0;
        s1 += tau;
        s2 += tau * tau;
        b0 += rhs;
        b1 += rhs * tau;
    }
    let det = s0 * s2 - s1 * s1;
    if det.abs() < 1e-12 * (s0 * s2).max(1.0) {
        return Err(TrajectoryError::RankDeficient);
    }
    let p0 = (b0 * s2 - b1 * s1) / det;
    let v0 = (b1 * s0 - b0 * s1) / det;
    Ok(Parabola::new(p0, v0, t_ref))
}

/// Anisotropically weighted refinement; couples the axes through the
/// per-detection weight matrix, solved as a 6x6 system.
fn refine_weighted(
    detections: &[Detection3D],
    t_ref: f64,
    config: &RansacConfig,
) -> Result<Parabola, TrajectoryError> {
    use nalgebra::{SMatrix, SVector};
    let mut a = SMatrix::<f64, 6, 6>::zeros();
    let mut b = SVector::<f64, 6>::zeros();
    for d in detections {
        let tau = d.t - t_ref;
        let rhs = d.p_world - GRAVITY_W * (0.5 * tau * tau);
        let inv_sigma = Mat3::from_diagonal(&Vec3::new(
            1.0 / config.sigma_xy_sq,
            1.0 / config.sigma_xy_sq,
            1.0 / config.sigma_z_sq,
        ));
        let lambda = d.r_wc * inv_sigma * d.r_wc.transpose();
        // Jacobian J = [I, tau I]; accumulate J' Lambda J and J' Lambda rhs.
        for (bi, bj, scale) in [(0, 0, 1.0), (0, 3, tau), (3, 0, tau), (3, 3, tau * tau)] {
            for r in 0..3 {
                for c in 0..3 {
                    a[(bi + r, bj + c)] += lambda[(r, c)] * scale;
                }
            }
        }
        let lr = lambda * rhs;
        for r in 0..3 {
            b[r] += lr[r];
            b[r + 3] += lr[r] * tau;
        }
    }
    let sol = a.lu().solve(&b).ok_or(TrajectoryError::RankDeficient)?;
    Ok(Parabola::new(
        Vec3::new(sol[0], sol[1], sol[2]),
        Vec3::new(sol[3], sol[4], sol[5]),
        t_ref,
    ))
}

/// RANSAC over random detection pairs, refined on the best consensus set.
///
/// Deterministic for a fixed seed; ties in inlier count are broken by lower
/// residual RMS of the minimal solution.
pub fn ransac_fit(
    detections: &[Detection3D],
    config: &RansacConfig,
    seed: u64,
) -> Result<FitResult, TrajectoryError> {
    let n = detections.len();
    if n < config.min_detections.max(2) {
        return Err(TrajectoryError::TooFewDetections {
            needed: config.min_detections.max(2),
            have: n,
        });
    }
    let min_inliers = config.effective_min_inliers(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..config.iterations {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let parabola = match minimal_solve(&detections[i], &detections[j]) {
            Ok(p) => p,
            Err(_) => continue, // degenerate pair: resample
        };
        let inliers = count_inliers(&parabola, detections, config);
        if inliers.len() < 2 {
            continue;
        }
        let rms = residual_rms(&parabola, detections, &inliers, config);
        let better = match &best {
            None => true,
            Some((bi, brms)) => {
                inliers.len() > bi.len() || (inliers.len() == bi.len() && rms < *brms)
            }
        };
        if better {
            best = Some((inliers, rms));
        }
    }
    let (inliers, _) = best.ok_or(TrajectoryError::NoConsensus {
        best: 0,
        min: min_inliers,
    })?;
    if inliers.len() < min_inliers {
        return Err(TrajectoryError::NoConsensus {
            best: inliers.len(),
            min: min_inliers,
        });
    }
    let subset: Vec<Detection3D> = inliers.iter().map(|&i| detections[i]).collect();
    let refined = refine(&subset, config)?;
    let rms = residual_rms(&refined, detections, &inliers, config);
    Ok(FitResult {
        parabola: refined,
        inliers,
        residual_rms: rms,
    })
}

fn residual_rms(
    parabola: &Parabola,
    detections: &[Detection3D],
    inliers: &[usize],
    config: &RansacConfig,
) -> f64 {
    if inliers.is_empty() {
        return f64::INFINITY;
    }
    let sum: f64 = inliers
        .iter()
        .map(|&i| {
            let d = &detections[i];
            let r = lambda_norm(&(d.p_world - parabola.eval(d.t)), &d.r_wc, config);
            r * r
        })
        .sum();
    (sum / inliers.len() as f64).sqrt()
}

/// Per-throw detection accumulator. Detections grow until a gap longer than
/// `reset_gap` arrives, which starts a new throw.
#[derive(Debug, Clone)]
pub struct ThrowTracker {
    detections: Vec<Detection3D>,
    reset_gap: f64,
    last_t: Option<f64>,
}

impl ThrowTracker {
    pub fn new(reset_gap: f64) -> Self {
        Self {
            detections: Vec::new(),
            reset_gap,
            last_t: None,
        }
    }

    /// Returns true when the accumulator was reset by this push.
    pub fn push(&mut self, d: Detection3D) -> bool {
        let reset = matches!(self.last_t, Some(last) if d.t - last > self.reset_gap);
        if reset {
            self.detections.clear();
        }
        self.last_t = Some(d.t);
        self.detections.push(d);
        reset
    }

    pub fn detections(&self) -> &[Detection3D] {
        &self.detections
    }

    pub fn clear(&mut self) {
        self.detections.clear();
        self.last_t = None;
    }
}
