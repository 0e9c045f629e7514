//! Catch-plane intersection, time-to-impact and median filtering of the
//! impact point stream.

use crate::geometry::{RigidTransform, Vec3};
use crate::trajectory::Parabola;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImpactError {
    #[error("trajectory is parallel to the catch plane")]
    ParallelTrajectory,
    #[error("trajectory already crossed the plane {0:.3} s ago")]
    PastImpact(f64),
    #[error("no odometry covering the requested time")]
    NoOdometry,
}

/// The body-frame catch plane, spanned by the body y axis and gravity and
/// passing through the body origin.
#[derive(Debug, Clone, Copy)]
pub struct CatchPlane {
    /// Plane normal, `e_y x g_body` (not normalized).
    pub n_imp: Vec3,
}

impl CatchPlane {
    /// Builds the plane from the current body-frame gravity direction.
    pub fn from_gravity(g_body: &Vec3) -> Self {
        let e_y = Vec3::new(0.0, 1.0, 0.0);
        Self {
            n_imp: e_y.cross(g_body),
        }
    }
}

impl Default for CatchPlane {
    fn default() -> Self {
        Self::from_gravity(&Vec3::new(0.0, 0.0, -9.81))
    }
}

/// Predicted plane crossing of a body-frame parabola.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactEstimate {
    /// Absolute impact time in seconds.
    pub t_imp: f64,
    /// Impact point in the body frame.
    pub p_imp: Vec3,
    /// Residual RMS of the fit the estimate came from.
    pub source_residual: f64,
}

/// Intersects a body-frame parabola with the catch plane.
///
/// With `n_imp = e_y x g` the gravity term has no plane-normal component and
/// the crossing time is the linear solution `-(n.p0)/(n.v0)`; the quadratic
/// term is still handled for generality when `n.g` is non-zero.
pub fn intersect(
    parabola: &Parabola,
    plane: &CatchPlane,
    source_residual: f64,
) -> Result<ImpactEstimate, ImpactError> {
    let n = plane.n_imp;
    let a = 0.5 * n.dot(&parabola.g);
    let b = n.dot(&parabola.v0);
    let c = n.dot(&parabola.p0);
    let tau = if a.abs() < 1e-9 {
        if b.abs() < 1e-9 {
            return Err(ImpactError::ParallelTrajectory);
        }
        let tau = -c / b;
        if tau < 0.0 {
            return Err(ImpactError::PastImpact(-tau));
        }
        tau
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return Err(ImpactError::ParallelTrajectory);
        }
        let sq = disc.sqrt();
        let r1 = (-b - sq) / (2.0 * a);
        let r2 = (-b + sq) / (2.0 * a);
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        if hi < 0.0 {
            return Err(ImpactError::PastImpact(-hi));
        }
        if lo >= 0.0 {
            lo
        } else {
            hi
        }
    };
    Ok(ImpactEstimate {
        t_imp: parabola.t_ref + tau,
        p_imp: parabola.eval(parabola.t_ref + tau),
        source_residual,
    })
}

/// Transforms a world-frame parabola into the body frame.
///
/// Positions are rotated and translated, velocities and gravity rotated only.
pub fn to_body(parabola: &Parabola, t_bw: &RigidTransform) -> Parabola {
    Parabola {
        p0: t_bw.transform_point(&parabola.p0),
        v0: t_bw.transform_vector(&parabola.v0),
        g: t_bw.transform_vector(&parabola.g),
        t_ref: parabola.t_ref,
    }
}

/// Sliding per-component median over the last k impact estimates.
#[derive(Debug, Clone)]
pub struct MedianFilter {
    window: VecDeque<ImpactEstimate>,
    k: usize,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl MedianFilter {
    /// k must be odd.
    pub fn new(k: usize) -> Self {
        assert!(k % 2 == 1, "median window must be odd");
        Self {
            window: VecDeque::with_capacity(k),
            k,
        }
    }

    /// Pushes an estimate and returns the filtered value over the window
    /// (partial windows use whatever is available).
    pub fn push(&mut self, estimate: ImpactEstimate) -> ImpactEstimate {
        if self.window.len() == self.k {
            self.window.pop_front();
        }
        self.window.push_back(estimate);
        let mut xs: Vec<f64> = self.window.iter().map(|e| e.p_imp.x).collect();
        let mut ys: Vec<f64> = self.window.iter().map(|e| e.p_imp.y).collect();
        let mut zs: Vec<f64> = self.window.iter().map(|e| e.p_imp.z).collect();
        let mut ts: Vec<f64> = self.window.iter().map(|e| e.t_imp).collect();
        ImpactEstimate {
            t_imp: median(&mut ts),
            p_imp: Vec3::new(median(&mut xs), median(&mut ys), median(&mut zs)),
            source_residual: estimate.source_residual,
        }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_z, Frame, Mat3};

    #[test]
    fn catch_plane_normal() {
        let plane = CatchPlane::default();
        assert!((plane.n_imp - Vec3::new(-9.81, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn closed_form_impact() {
        let plane = CatchPlane::default();
        let parabola = Parabola::new(Vec3::new(-4.0, 0.0, 1.0), Vec3::new(8.0, 0.0, 2.0), 0.0);
        let est = intersect(&parabola, &plane, 0.0).unwrap();
        assert!((est.t_imp - 0.5).abs() < 1e-12);
        assert!((est.p_imp - Vec3::new(0.0, 0.0, 0.77375)).norm() < 1e-12);
        // Plane membership.
        assert!(plane.n_imp.dot(&est.p_imp).abs() < 1e-9);
    }

    #[test]
    fn start_on_plane() {
        let plane = CatchPlane::default();
        let parabola = Parabola::new(Vec3::new(0.0, 0.3, 1.0), Vec3::new(8.0, 0.0, 2.0), 3.0);
        let est = intersect(&parabola, &plane, 0.0).unwrap();
        assert_eq!(est.t_imp, 3.0);
        assert!((est.p_imp - parabola.p0).norm() < 1e-12);
    }

    #[test]
    fn parallel_and_past_errors() {
        let plane = CatchPlane::default();
        let parallel = Parabola::new(Vec3::new(-1.0, 0.0, 1.0), Vec3::new(0.0, 3.0, 2.0), 0.0);
        assert_eq!(
            intersect(&parallel, &plane, 0.0),
            Err(ImpactError::ParallelTrajectory)
        );
        let past = Parabola::new(Vec3::new(1.0, 0.0, 1.0), Vec3::new(8.0, 0.0, 0.0), 0.0);
        assert!(matches!(
            intersect(&past, &plane, 0.0),
            Err(ImpactError::PastImpact(_))
        ));
    }

    #[test]
    fn quadratic_branch_satisfies_plane_equation() {
        // Tilted plane normal with a gravity component.
        let plane = CatchPlane {
            n_imp: Vec3::new(-9.0, 0.0, 1.0),
        };
        let parabola = Parabola::new(Vec3::new(-4.0, 0.0, 1.0), Vec3::new(8.0, 0.0, 2.0), 0.0);
        let est = intersect(&parabola, &plane, 0.0).unwrap();
        assert!(plane.n_imp.dot(&est.p_imp).abs() < 1e-9);
        assert!(est.t_imp > 0.0);
    }

    #[test]
    fn to_body_identity_and_yaw() {
        let parabola = Parabola::new(Vec3::new(-4.0, 1.0, 1.0), Vec3::new(8.0, -1.0, 2.0), 0.0);
        let id = RigidTransform::identity(Frame::World, Frame::Body);
        let same = to_body(&parabola, &id);
        assert_eq!(same.p0, parabola.p0);
        assert_eq!(same.v0, parabola.v0);
        let yaw180 =
            RigidTransform::new(rot_z(std::f64::consts::PI), Vec3::zeros(), Frame::World, Frame::Body)
                .unwrap();
        let flipped = to_body(&parabola, &yaw180);
        assert!((flipped.p0 - Vec3::new(4.0, -1.0, 1.0)).norm() < 1e-12);
        assert!((flipped.v0 - Vec3::new(-8.0, 1.0, 2.0)).norm() < 1e-12);
        assert!((flipped.g - parabola.g).norm() < 1e-12);
    }

    #[test]
    fn to_body_round_trip() {
        let parabola = Parabola::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 4.0), 0.7);
        let r = rot_z(0.9) * Mat3::new(1.0, 0.0, 0.0, 0.0, 0.96891242171064478, -0.24740395925452294, 0.0, 0.24740395925452294, 0.96891242171064478);
        let t_bw =
            RigidTransform::new(r, Vec3::new(0.2, -0.4, 0.6), Frame::World, Frame::Body).unwrap();
        let back = to_body(&to_body(&parabola, &t_bw), &t_bw.inverse());
        assert!((back.p0 - parabola.p0).norm() < 1e-12);
        assert!((back.v0 - parabola.v0).norm() < 1e-12);
        assert!((back.g - parabola.g).norm() < 1e-12);
    }

    fn est(x: f64, y: f64, z: f64) -> ImpactEstimate {
        ImpactEstimate {
            t_imp: x,
            p_imp: Vec3::new(x, y, z),
            source_residual: 0.0,
        }
    }

    #[test]
    fn median_of_three() {
        let mut f = MedianFilter::new(3);
        f.push(est(1.0, 1.0, 1.0));
        f.push(est(5.0, 5.0, 5.0));
        let out = f.push(est(3.0, 3.0, 3.0));
        assert_eq!(out.p_imp, Vec3::new(3.0, 3.0, 3.0));
    }

    #[test]
    fn single_sample_passes_through() {
        let mut f = MedianFilter::new(5);
        let out = f.push(est(2.0, -1.0, 0.5));
        assert_eq!(out.p_imp, Vec3::new(2.0, -1.0, 0.5));
    }

    #[test]
    fn outlier_rejected_within_window() {
        let mut f = MedianFilter::new(5);
        let samples = [0.1, 0.12, 10.0, 0.11, 0.13];
        let mut last = est(0.0, 0.0, 0.0);
        for s in samples {
            last = f.push(est(s, s, s));
        }
        // Sort-based oracle over the full window.
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(last.p_imp.x, sorted[2]);
        assert!(last.p_imp.x >= 0.1 && last.p_imp.x <= 0.13);
    }

    #[test]
    fn median_is_permutation_invariant() {
        let vals = [0.4, 0.1, 0.9, 0.3, 0.2];
        let mut perms = vec![vals.to_vec()];
        perms.push(vec![0.9, 0.4, 0.2, 0.1, 0.3]);
        perms.push(vec![0.2, 0.3, 0.9, 0.4, 0.1]);
        let mut outputs = Vec::new();
        for p in perms {
            let mut f = MedianFilter::new(5);
            let mut last = est(0.0, 0.0, 0.0);
            for v in p {
                last = f.push(est(v, v, v));
            }
            outputs.push(last.p_imp.x);
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    }
}
