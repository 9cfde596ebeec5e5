//! Two-frame rigid motion analysis.
//!
//! Given dense optical flow, optical expansion, a depth prior and camera
//! intrinsics, this crate estimates camera egomotion, computes rigidity cost
//! maps, segments the scene into a rigid background and rigidly moving
//! instances, fits a rigid transform per segment and assembles refined depth
//! and scene flow.
//!
//! Conventions used throughout:
//!
//! * Pixel centres: integer pixel `(row i, col j)` has image coordinates
//!   `(u, v) = (j + 0.5, i + 0.5)`.
//! * Camera motion `(R_c, T_c)` maps frame-1 camera coordinates into frame-0
//!   camera coordinates: `P0 = R_c * P1 + T_c`. `T_c` is therefore the centre of
//!   camera 1 expressed in frame 0.
//! * Per-segment rigid fits map frame-0 points to frame-1 points:
//!   `P1 = R_i * P0 + T_i`.
//! * Invalid samples in dense fields are `NaN`.

pub mod costmaps;
pub mod egomotion;
mod error;
pub mod evalkit;
pub mod field;
pub mod fivepoint;
pub mod geometry;
pub mod io;
pub mod rigidfit;
pub mod segment;
mod stats;

pub use error::{Error, Result};
pub use field::{DenseField, FieldKind, Mask};
pub use geometry::{CameraIntrinsics, Pixel, Point3, RigidTransform};
