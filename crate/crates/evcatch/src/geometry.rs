//! Shared geometry: coordinate frames, rigid transforms and the pinhole
//! camera model.
//!
//! All math is f64. Frame labels are carried at runtime and checked on every
//! composition; mixing frames is an error, never silent.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec2 = Vector2<f64>;

/// Standard gravity in the world frame (z up).
pub const GRAVITY_W: Vec3 = Vec3::new(0.0, 0.0, -9.81);

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth (z = {0})")]
    NonPositiveDepth(f64),
    #[error("frame mismatch: expected {expected:?}, found {found:?}")]
    FrameMismatch { expected: Frame, found: Frame },
    #[error("rotation matrix is not orthonormal (drift {0:.3e})")]
    InvalidRotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Coordinate frame labels.
///
/// Camera: z forward, x right, y down. Body: x forward, y left, z up.
/// World: inertial, z up, gravity (0, 0, -9.81).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    Camera,
    Body,
    World,
}

/// Pinhole camera without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if cx <= 0.0 || cx >= width as f64 || cy <= 0.0 || cy >= height as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside sensor {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Calibration matrix K.
    pub fn k(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Inverse calibration matrix.
    pub fn k_inv(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Project a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p_camera: &Vec3) -> Result<Vec2, GeometryError> {
        if p_camera.z <= 0.0 {
            return Err(GeometryError::NonPositiveDepth(p_camera.z));
        }
        Ok(Vec2::new(
            self.fx * p_camera.x / p_camera.z + self.cx,
            self.fy * p_camera.y / p_camera.z + self.cy,
        ))
    }

    /// Back-project a pixel along its ray to the given depth.
    pub fn back_project(&self, pixel: &Vec2, depth: f64) -> Result<Vec3, GeometryError> {
        if depth <= 0.0 {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        Ok(Vec3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        ))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// Frame-labeled rigid transform. Applies as `p_to = R * p_from + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub from_frame: Frame,
    pub to_frame: Frame,
}

fn rotation_drift(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

/// Project a near-rotation back onto SO(3) via polar decomposition.
fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut q = u * vt;
    if q.determinant() < 0.0 {
        // Flip the weakest singular direction to stay in SO(3).
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * vt;
    }
    q
}

impl RigidTransform {
    pub fn new(
        rotation: Mat3,
        translation: Vec3,
        from_frame: Frame,
        to_frame: Frame,
    ) -> Result<Self, GeometryError> {
        let drift = rotation_drift(&rotation);
        if drift > 1e-9 || rotation.determinant() < 0.0 {
            return Err(GeometryError::InvalidRotation(drift));
        }
        Ok(Self {
            rotation,
            translation,
            from_frame,
            to_frame,
        })
    }

    pub fn identity(from_frame: Frame, to_frame: Frame) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            from_frame,
            to_frame,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Compose `self ∘ other`: `other` is applied first. Requires
    /// `self.from_frame == other.to_frame`.
    pub fn compose(&self, other: &RigidTransform) -> Result<RigidTransform, GeometryError> {
        if self.from_frame != other.to_frame {
            return Err(GeometryError::FrameMismatch {
                expected: self.from_frame,
                found: other.to_frame,
            });
        }
        let mut rotation = self.rotation * other.rotation;
        if rotation_drift(&rotation) > 1e-9 {
            rotation = orthonormalize(&rotation);
        }
        Ok(RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
            from_frame: other.from_frame,
            to_frame: self.to_frame,
        })
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
            from_frame: self.to_frame,
            to_frame: self.from_frame,
        }
    }
}

/// Rotation about the z axis.
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Fixed body-to-camera rotation for the forward-looking mount:
/// camera z = body x, camera x = -body y, camera y = -body z.
pub fn body_to_camera_rotation() -> Mat3 {
    Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let k = test_intrinsics();
        let px = k.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vec2::new(320.0, 240.0));
    }

    #[test]
    fn off_axis_projection() {
        let k = test_intrinsics();
        let px = k.project(&Vec3::new(0.5, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vec2::new(480.0, 240.0));
    }

    #[test]
    fn behind_camera_is_an_error() {
        let k = test_intrinsics();
        assert_eq!(
            k.project(&Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::NonPositiveDepth(-1.0))
        );
        assert!(k.back_project(&Vec2::new(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn back_project_principal_ray() {
        let k = test_intrinsics();
        let p = k.back_project(&Vec2::new(320.0, 240.0), 2.0).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, 2.0));
        let p = k.back_project(&Vec2::new(480.0, 240.0), 1.0).unwrap();
        assert_eq!(p, Vec3::new(0.5, 0.0, 1.0));
    }

    #[test]
    fn compose_requires_chained_frames() {
        let a = RigidTransform::identity(Frame::Camera, Frame::World);
        let b = RigidTransform::identity(Frame::Body, Frame::Camera);
        assert!(a.compose(&b).is_ok());
        assert!(matches!(
            b.compose(&a),
            Err(GeometryError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn identity_composes_to_identity() {
        let a = RigidTransform::identity(Frame::World, Frame::World);
        let c = a.compose(&a).unwrap();
        assert_eq!(c.rotation, Mat3::identity());
        assert_eq!(c.translation, Vec3::zeros());
    }

    #[test]
    fn transform_times_inverse_is_identity() {
        let t = RigidTransform::new(
            rot_z(0.7),
            Vec3::new(1.0, -2.0, 0.3),
            Frame::Camera,
            Frame::World,
        )
        .unwrap();
        let id = t.compose(&t.inverse()).unwrap();
        assert!((id.rotation - Mat3::identity()).norm() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn rotation_stays_orthonormal_over_long_chains() {
        let step = RigidTransform::new(
            rot_z(0.123) * rot_x(0.371),
            Vec3::new(0.1, 0.2, 0.3),
            Frame::World,
            Frame::World,
        )
        .unwrap();
        let mut acc = RigidTransform::identity(Frame::World, Frame::World);
        for _ in 0..100 {
            acc = acc.compose(&step).unwrap();
        }
        assert!(rotation_drift(&acc.rotation) < 1e-9);
    }

    fn rot_x(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }

    #[test]
    fn body_to_camera_axes() {
        let r = body_to_camera_rotation();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        // Body forward (x) is the camera optical axis (z).
        assert_eq!(r * Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0));
        // Body up (z) is camera -y (up in image).
        assert_eq!(r * Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, -1.0, 0.0));
    }

    proptest! {
        #[test]
        fn project_back_project_round_trip(
            x in 0.0f64..640.0,
            y in 0.0f64..480.0,
            depth in 0.101f64..100.0,
        ) {
            let k = test_intrinsics();
            let p = k.back_project(&Vec2::new(x, y), depth).unwrap();
            prop_assert!((p.z - depth).abs() == 0.0);
            let px = k.project(&p).unwrap();
            prop_assert!((px - Vec2::new(x, y)).norm() < 1e-9);
        }

        #[test]
        fn transform_round_trip_on_points(
            yaw in -3.1f64..3.1,
            pitch in -1.5f64..1.5,
            tx in -10.0f64..10.0,
            ty in -10.0f64..10.0,
            tz in -10.0f64..10.0,
            px in -10.0f64..10.0,
            py in -10.0f64..10.0,
            pz in -10.0f64..10.0,
        ) {
            let r = rot_z(yaw) * rot_x(pitch);
            let t = RigidTransform::new(r, Vec3::new(tx, ty, tz), Frame::Body, Frame::World).unwrap();
            let p = Vec3::new(px, py, pz);
            let back = t.inverse().transform_point(&t.transform_point(&p));
            prop_assert!((back - p).norm() < 1e-12 * (1.0 + p.norm()));
        }
    }
}
