use nalgebra::{Matrix3, Rotation3, Vector3};
use rigidkit_core::{CameraIntrinsics, RigidTransform};
use serde::{Deserialize, Serialize};

use crate::{Result, SimError};

/// Rays hitting a surface closer than this are ignored.
const MIN_HIT: f64 = 1e-9;

/// Analytic surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    /// Parallelogram `corner + a·edge_u + b·edge_v`, `a, b ∈ [0, 1]`.
    Quad {
        corner: [f64; 3],
        edge_u: [f64; 3],
        edge_v: [f64; 3],
    },
    /// Oriented box; `rotation` is an axis-angle vector.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default)]
        rotation: [f64; 3],
    },
    Sphere { center: [f64; 3], radius: f64 },
    /// `Xᵀ·A·X + b·X + c = 0` restricted to an axis-aligned box.
    Quadric {
        a: [[f64; 3]; 3],
        b: [f64; 3],
        c: f64,
        bounds_min: [f64; 3],
        bounds_max: [f64; 3],
    },
}

fn v(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Geometry {
    /// Smallest ray parameter `t > 0` with `o + t·d` on the surface.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match self {
            Geometry::Quad { corner, edge_u, edge_v } => {
                let (c, eu, ev) = (v(*corner), v(*edge_u), v(*edge_v));
                let n = eu.cross(&ev);
                let den = n.dot(d);
                if den.abs() < 1e-300 {
                    return None;
                }
                let t = n.dot(&(c - o)) / den;
                if !(t > MIN_HIT) {
                    return None;
                }
                let rel = o + t * d - c;
                let (uu, uv, vv) = (eu.dot(&eu), eu.dot(&ev), ev.dot(&ev));
                let (ru, rv) = (rel.dot(&eu), rel.dot(&ev));
                let det = uu * vv - uv * uv;
                let a = (ru * vv - rv * uv) / det;
                let b = (rv * uu - ru * uv) / det;
                ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some(t)
            }
            Geometry::Box { center, half_extents, rotation } => {
                let r = Rotation3::new(v(*rotation));
                let lo = r.inverse() * (o - v(*center));
                let ld = r.inverse() * d;
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    let h = half_extents[i];
                    if ld[i].abs() < 1e-300 {
                        if lo[i].abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-h - lo[i]) / ld[i];
                    let t2 = (h - lo[i]) / ld[i];
                    tmin = tmin.max(t1.min(t2));
                    tmax = tmax.min(t1.max(t2));
                }
                if tmax < tmin || !(tmax > MIN_HIT) {
                    return None;
                }
                Some(if tmin > MIN_HIT { tmin } else { tmax })
            }
            Geometry::Sphere { center, radius } => {
                let oc = o - v(*center);
                let a = d.dot(d);
                let b = oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|&t| t > MIN_HIT)
            }
            Geometry::Quadric { a, b, c, bounds_min, bounds_max } => {
                let am = Matrix3::from_row_slice(&a.concat());
                let bv = v(*b);
                let qa = d.dot(&(am * d));
                let qb = o.dot(&(am * d)) + d.dot(&(am * o)) + bv.dot(d);
                let qc = o.dot(&(am * o)) + bv.dot(o) + c;
                let roots: Vec<f64> = if qa.abs() < 1e-300 {
                    if qb.abs() < 1e-300 {
                        return None;
                    }
                    vec![-qc / qb]
                } else {
                    let disc = qb * qb - 4.0 * qa * qc;
                    if disc < 0.0 {
                        return None;
                    }
                    // numerically stable pair
                    let q = -0.5 * (qb + qb.signum() * disc.sqrt());
                    let mut r = vec![q / qa];
                    if q != 0.0 {
                        r.push(qc / q);
                    } else {
                        r.push(0.0);
                    }
                    r.sort_by(f64::total_cmp);
                    r
                };
                let (lo, hi) = (v(*bounds_min), v(*bounds_max));
                roots.into_iter().find(|&t| {
                    let p = o + t * d;
                    t > MIN_HIT && (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
                })
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::InvalidScene(m.to_string()));
        match self {
            Geometry::Quad { edge_u, edge_v, .. } => {
                if v(*edge_u).cross(&v(*edge_v)).norm() < 1e-12 {
                    return bad("quad edges are parallel");
                }
            }
            Geometry::Box { half_extents, .. } => {
                if half_extents.iter().any(|h| !(*h > 0.0)) {
                    return bad("box half extents must be positive");
                }
            }
            Geometry::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad("sphere radius must be positive");
                }
            }
            Geometry::Quadric { bounds_min, bounds_max, .. } => {
                if (0..3).any(|i| !(bounds_min[i] < bounds_max[i])) {
                    return bad("quadric bounds are empty");
                }
            }
        }
        Ok(())
    }
}

/// Rigidly moving object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub id: u32,
    pub geometry: Geometry,
    /// World-frame motion between the two frames.
    pub motion: RigidTransform,
}

/// How the depth prior is derived from the true frame-0 depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PriorModel {
    #[default]
    Exact,
    Scaled { k: f64 },
    /// Multiplier growing linearly from `lo` at the left column to `hi` at the right.
    SmoothRamp { lo: f64, hi: f64 },
    /// Multiplicative log-normal noise.
    Noisy { sigma_log: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub flow_sigma: f64,
    pub expansion_sigma: f64,
    pub prior: PriorModel,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            flow_sigma: 0.0,
            expansion_sigma: 0.0,
            prior: PriorModel::Exact,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// No perturbation of flow, expansion or confidence.
    pub fn is_noise_free(&self) -> bool {
        self.flow_sigma == 0.0 && self.expansion_sigma == 0.0 && self.outlier_fraction == 0.0
    }

    /// Inputs equal the ground truth exactly.
    pub fn is_identity(&self) -> bool {
        self.is_noise_free() && self.prior == PriorModel::Exact
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidScene(m));
        if !(self.flow_sigma >= 0.0) || !(self.expansion_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative".into());
        }
        if !(0.0..=0.5).contains(&self.outlier_fraction) {
            return bad(format!("outlier_fraction {} outside [0, 0.5]", self.outlier_fraction));
        }
        match self.prior {
            PriorModel::Scaled { k } if !(k > 0.0) => bad("prior scale must be positive".into()),
            PriorModel::SmoothRamp { lo, hi } if !(lo > 0.0 && hi > 0.0) => bad("ramp factors must be positive".into()),
            PriorModel::Noisy { sigma_log } if !(sigma_log >= 0.0) => bad("prior noise must be non-negative".into()),
            _ => Ok(()),
        }
    }
}

/// Complete description of a two-frame scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub width: usize,
    pub height: usize,
    pub k0: CameraIntrinsics,
    pub k1: CameraIntrinsics,
    pub camera_motion: RigidTransform,
    /// Static surfaces (label 0).
    pub background: Vec<Geometry>,
    #[serde(default)]
    pub bodies: Vec<Body>,
    #[serde(default)]
    pub noise: NoiseConfig,
}

impl SceneDescription {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SimError::InvalidScene("image dimensions must be positive".into()));
        }
        if self.width * self.height > (1 << 26) {
            return Err(SimError::InvalidScene("image is too large".into()));
        }
        self.k0.validate()?;
        self.k1.validate()?;
        if !self.camera_motion.is_valid() {
            return Err(SimError::InvalidScene("camera motion is not a rigid transform".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for b in &self.bodies {
            if b.id == 0 || b.id >= rigidkit_core::field::LABEL_INVALID {
                return Err(SimError::InvalidScene(format!("body id {} out of range", b.id)));
            }
            if !ids.insert(b.id) {
                return Err(SimError::InvalidScene(format!("duplicate body id {}", b.id)));
            }
            if !b.motion.is_valid() {
                return Err(SimError::InvalidScene(format!("motion of body {} is not rigid", b.id)));
            }
            b.geometry.validate()?;
        }
        for g in &self.background {
            g.validate()?;
        }
        self.noise.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: SceneDescription = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }
}
