//! Synthetic two-frame scenes with analytic ground truth.
//!
//! Scenes consist of analytic surfaces (planar quads, boxes, spheres and
//! bounded quadric patches). Frame 0 is rendered by casting a ray through every
//! pixel centre, so every valid pixel carries an exact correspondence: its flow,
//! optical expansion and both depths follow in closed form from the camera motion
//! and the motion of the body that was hit.
//!
//! The world frame is the frame-0 camera. Bodies move by `X' = R_b·X + T_b`; the
//! camera motion `(R_c, T_c)` maps frame-1 camera coordinates to world
//! coordinates, `X = R_c·P1 + T_c`.

mod bundle;
mod corrupt;
mod render;
mod scenarios;
mod scene;

pub use bundle::{load_bundle, write_bundle, Bundle, Manifest, ManifestEntry, MANIFEST_FILE};
pub use corrupt::{corrupt, CorruptedInputs, CONFIDENCE_INLIER, CONFIDENCE_OUTLIER, OUTLIER_RANGE};
pub use render::{render, BodyTruth, GroundTruth};
pub use scenarios::{make_degenerate_scenario, motion_about, ScenarioKind, HEIGHT, WIDTH};
pub use scene::{Body, Geometry, NoiseConfig, PriorModel, SceneDescription};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("render failed: {0}")]
    Render(String),
    #[error("bundle error: {0}")]
    Bundle(String),
    #[error(transparent)]
    Core(#[from] rigidkit_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
