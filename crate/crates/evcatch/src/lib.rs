//! Event-camera perception pipeline for catching thrown objects.
//!
//! The library detects independently moving objects in an event stream by
//! motion-compensated mean timestamp images, clusters moving pixels with
//! DBSCAN, lifts cluster detections to 3D via known object size, fits a
//! gravity-constrained parabola with RANSAC, and intersects it with a
//! robot-centered catch plane. A synthetic scene generator and a simple
//! net-tracking catch simulator close the loop for end-to-end evaluation.
//!
//! Frame conventions (fixed, see [`geometry::Frame`]):
//! - Camera: z forward, x right, y down.
//! - Body: x forward, y left, z up; gravity is (0, 0, -9.81) when level.
//! - World: aligned with the body frame at rest, z up.

pub mod catchsim;
pub mod cluster;
pub mod config;
pub mod event;
pub mod formats;
pub mod geometry;
pub mod impact;
pub mod latency;
pub mod pipeline;
pub mod segment;
pub mod simgen;
pub mod trajectory;

pub use event::{Event, EventBuffer, ImuSample};
pub use geometry::{CameraIntrinsics, Frame, Mat3, RigidTransform, Vec3};
