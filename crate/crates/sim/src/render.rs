use nalgebra::Vector3;
use rayon::prelude::*;
use rigidkit_core::field::LABEL_INVALID;
use rigidkit_core::{CameraIntrinsics, DenseField, FieldKind, Mask, Pixel, RigidTransform};
use serde::{Deserialize, Serialize};

use crate::scene::{Geometry, SceneDescription};
use crate::{Result, SimError};

/// Relative slack when comparing a frame-1 ray hit against the rendered depth.
const OCCLUSION_SLACK: f64 = 1e-7;

/// Motion of one body in both conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyTruth {
    pub id: u32,
    /// World-frame motion `X' = R_b·X + T_b`.
    pub motion: RigidTransform,
    /// Frame-0 to frame-1 camera coordinates, `P1 = R_i·P0 + T_i`.
    pub transform: RigidTransform,
}

/// Ground-truth fields for a rendered scene.
///
/// Empty pixels are NaN with confidence 0 and the invalid label. Pixels whose
/// frame-1 position is hidden or off-image keep their true values and are
/// flagged in `occluded`.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub k0: CameraIntrinsics,
    pub k1: CameraIntrinsics,
    pub flow: DenseField,
    pub expansion: DenseField,
    pub z0: DenseField,
    pub z1: DenseField,
    pub labels: DenseField,
    pub confidence: DenseField,
    pub occluded: Mask,
    /// Camera motion, `P0 = R_c·P1 + T_c`.
    pub ego: RigidTransform,
    pub bodies: Vec<BodyTruth>,
}

impl GroundTruth {
    pub fn width(&self) -> usize {
        self.flow.width()
    }

    pub fn height(&self) -> usize {
        self.flow.height()
    }

    /// Frame-0 to frame-1 transform of the pixels carrying `label`.
    pub fn transform_of(&self, label: u32) -> Option<RigidTransform> {
        if label == 0 {
            return Some(self.ego.inverse());
        }
        self.bodies.iter().find(|b| b.id == label).map(|b| b.transform)
    }

    pub fn mask_of(&self, label: u32) -> Mask {
        Mask::from_label(&self.labels, label)
    }

    pub fn valid_mask(&self) -> Mask {
        Mask::valid_of(&self.z0)
    }
}

#[derive(Clone, Copy)]
struct Sample {
    flow: [f64; 2],
    z0: f64,
    z1: f64,
    label: u32,
    occluded: bool,
}

const EMPTY: Sample = Sample {
    flow: [f64::NAN; 2],
    z0: f64::NAN,
    z1: f64::NAN,
    label: LABEL_INVALID,
    occluded: false,
};

struct Owner<'a> {
    label: u32,
    geometry: &'a Geometry,
    motion: RigidTransform,
}

/// Nearest hit among all owners for a ray given in t0 world coordinates of each owner.
fn nearest(owners: &[Owner], o: &Vector3<f64>, d: &Vector3<f64>, moved: bool) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, ow) in owners.iter().enumerate() {
        let t = if moved {
            // undo the owner's motion so the static geometry can be queried
            let rt = ow.motion.rotation.transpose();
            ow.geometry.intersect(&(rt * (o - ow.motion.translation)), &(rt * d))
        } else {
            ow.geometry.intersect(o, d)
        };
        if let Some(t) = t {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
    }
    best
}

/// Ray-casts both frames of `scene`.
pub fn render(scene: &SceneDescription) -> Result<GroundTruth> {
    scene.validate()?;
    let (w, h) = (scene.width, scene.height);
    let ego = scene.camera_motion;
    let rc_t = ego.rotation.transpose();
    let k0inv = scene.k0.inverse_matrix();
    let k1inv = scene.k1.inverse_matrix();

    let mut owners: Vec<Owner> = scene
        .background
        .iter()
        .map(|g| Owner { label: 0, geometry: g, motion: RigidTransform::identity() })
        .collect();
    owners.extend(scene.bodies.iter().map(|b| Owner { label: b.id, geometry: &b.geometry, motion: b.motion }));

    let samples: Vec<std::result::Result<Sample, String>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let p0 = Pixel::center(idx / w, idx % w);
            let d = k0inv * p0.homogeneous().0;
            let Some((t, oi)) = nearest(&owners, &Vector3::zeros(), &d, false) else {
                return Ok(EMPTY);
            };
            let ow = &owners[oi];
            let x = t * d;
            let z0 = x.z;
            let moved = ow.motion.apply(&x);
            let p1c = rc_t * (moved - ego.translation);
            let z1 = p1c.z;
            if !(z0 > 0.0) || !(z1 > 0.0) {
                return Err(format!("point of owner {} has non-positive depth (Z0 {z0}, Z1 {z1})", ow.label));
            }
            let p1h = scene.k1.matrix() * (p1c / z1);
            let p1 = Pixel::new(p1h.x, p1h.y);
            let in_image = p1.u >= 0.0 && p1.v >= 0.0 && p1.u < w as f64 && p1.v < h as f64;
            let occluded = !in_image || {
                let d1 = ego.rotation * (k1inv * p1.homogeneous().0);
                match nearest(&owners, &ego.translation, &d1, true) {
                    Some((t1, _)) => t1 < z1 * (1.0 - OCCLUSION_SLACK),
                    None => false,
                }
            };
            Ok(Sample {
                flow: [p1.u - p0.u, p1.v - p0.v],
                z0,
                z1,
                label: ow.label,
                occluded,
            })
        })
        .collect();

    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        out.push(s.map_err(SimError::Render)?);
    }
    if out.iter().all(|s| s.label == LABEL_INVALID) {
        return Err(SimError::Render("scene has no visible points".into()));
    }

    let flow = DenseField::from_fn(w, h, FieldKind::Flow, |r, c| out[r * w + c].flow);
    let z0 = DenseField::from_fn(w, h, FieldKind::Depth, |r, c| [out[r * w + c].z0]);
    let z1 = DenseField::from_fn(w, h, FieldKind::Depth, |r, c| [out[r * w + c].z1]);
    let expansion = DenseField::from_fn(w, h, FieldKind::Expansion, |r, c| {
        let s = &out[r * w + c];
        [s.z1 / s.z0]
    });
    let labels = DenseField::from_fn(w, h, FieldKind::Label, |r, c| [out[r * w + c].label as f64]);
    let confidence = DenseField::from_fn(w, h, FieldKind::Confidence, |r, c| {
        [if out[r * w + c].label == LABEL_INVALID { 0.0 } else { 1.0 }]
    });
    let occluded = Mask::from_fn(w, h, |r, c| out[r * w + c].occluded);

    let bodies = scene
        .bodies
        .iter()
        .map(|b| BodyTruth {
            id: b.id,
            motion: b.motion,
            transform: RigidTransform::from_approx(
                rc_t * b.motion.rotation,
                rc_t * (b.motion.translation - ego.translation),
            ),
        })
        .collect();

    Ok(GroundTruth {
        k0: scene.k0,
        k1: scene.k1,
        flow,
        expansion,
        z0,
        z1,
        labels,
        confidence,
        occluded,
        ego,
        bodies,
    })
}
