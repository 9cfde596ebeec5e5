//! Rectified scene flow and dense rigidity cost maps.
//!
//! Four complementary criteria flag independently moving pixels:
//!
//! * `c_epi`: Sampson distance to the epipolar line (pixel units, squared).
//! * `c_hom`: symmetric transfer error of the rotational homography, used when
//!   the camera translation is degenerate.
//! * `c_pp3d`: component of the rectified 3D flow orthogonal to `-T_c`.
//! * `c_depth`: log contrast between flow-triangulated depth and the aligned prior.

use nalgebra::{Matrix3, Vector3};

use crate::egomotion::{EgomotionEstimate, CONFIDENCE_GATE};
use crate::field::{DenseField, FieldKind};
use crate::geometry::{
    essential_from_motion, fundamental_from_essential, rotational_homography, sampson_error,
    CameraIntrinsics, Pixel,
};
use crate::rigidfit::{triangulate, TriangulationMethod};
use crate::stats::{median, median_in_place};
use crate::{Error, Result};

/// Stabilizer added to the Sampson denominator.
pub const SAMPSON_EPS: f64 = 1e-9;

/// Triangulated depths beyond this (unit-baseline) range are treated as divergent.
const MAX_TRIANGULATED_DEPTH: f64 = 1e8;

/// Camera geometry shared by the cost computations.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionContext {
    pub k0: CameraIntrinsics,
    pub k1: CameraIntrinsics,
    pub ego: EgomotionEstimate,
    /// `K0 · R_c · K1⁻¹`.
    pub h_r: Matrix3<f64>,
    pub gamma: Option<f64>,
}

impl MotionContext {
    pub fn new(k0: CameraIntrinsics, k1: CameraIntrinsics, ego: EgomotionEstimate) -> Self {
        let h_r = rotational_homography(&k0, &k1, &ego.transform.rotation);
        Self { k0, k1, ego, h_r, gamma: None }
    }

    pub fn is_degenerate(&self) -> bool {
        self.ego.degenerate || self.ego.transform.translation.norm() < 1e-12
    }

    fn require_translation(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(Error::DegenerateEgomotion)
        } else {
            Ok(())
        }
    }

    /// Fundamental matrix scaled to unit Frobenius norm.
    pub fn fundamental(&self) -> Result<Matrix3<f64>> {
        self.require_translation()?;
        let t = &self.ego.transform;
        let e = essential_from_motion(&t.rotation, &t.translation)?;
        let f = fundamental_from_essential(&e, &self.k0, &self.k1);
        Ok(f / f.norm())
    }
}

fn check_kind(field: &DenseField, kind: FieldKind, what: &str) -> Result<()> {
    if field.kind() != kind {
        return Err(Error::InvalidInput(format!("{what} must be a {kind:?} field, got {:?}", field.kind())));
    }
    Ok(())
}

/// `T̃ = K0⁻¹(τ·H_R·p̃1 − p̃0)` with `p̃1 = (u1, v1, 1)`.
///
/// For a static point this equals `(R_c·P1 − P0)/Z0 = −T_c/Z0`, so static pixels
/// carry flow along `−T_c` whose length is inversely proportional to depth.
pub fn rectified_scene_flow(
    flow: &DenseField,
    expansion: &DenseField,
    ctx: &MotionContext,
) -> Result<DenseField> {
    check_kind(flow, FieldKind::Flow, "flow")?;
    flow.ensure_same_dims(expansion, "flow vs expansion")?;
    let k0_inv = ctx.k0.inverse_matrix();
    let h = ctx.h_r;
    Ok(DenseField::par_from_index_fn(flow.width(), flow.height(), FieldKind::SceneFlow, |i| {
        let tau = expansion.value(i);
        if !(tau > 0.0) || !tau.is_finite() || !flow.is_valid_at(i) {
            return [f64::NAN; 3];
        }
        let p0 = flow.pixel_center(i).homogeneous().0;
        let p1 = flow.flow_target(i).homogeneous().0;
        let t = k0_inv * (tau * (h * p1) - p0);
        [t.x, t.y, t.z]
    }))
}

/// Per-pixel `c_epi`, squared Sampson error in pixel coordinates.
pub fn cost_epipolar(flow: &DenseField, ctx: &MotionContext) -> Result<DenseField> {
    check_kind(flow, FieldKind::Flow, "flow")?;
    let f = ctx.fundamental()?;
    Ok(DenseField::par_from_index_fn(flow.width(), flow.height(), FieldKind::Cost, |i| {
        if !flow.is_valid_at(i) {
            return [f64::NAN];
        }
        let p0 = flow.pixel_center(i).homogeneous().0;
        let p1 = flow.flow_target(i).homogeneous().0;
        [sampson_error(&f, &p0, &p1, SAMPSON_EPS)]
    }))
}

fn transfer(h: &Matrix3<f64>, p: Pixel) -> Option<Pixel> {
    let q = h * p.homogeneous().0;
    (q.z.abs() > 1e-15).then(|| Pixel::new(q.x / q.z, q.y / q.z))
}

/// Per-pixel `c_hom = d(p0, H_R p1)² + d(p1, H_R⁻¹ p0)²`.
pub fn cost_homography(flow: &DenseField, ctx: &MotionContext) -> Result<DenseField> {
    check_kind(flow, FieldKind::Flow, "flow")?;
    let h = ctx.h_r;
    let h_inv = h
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("rotational homography is singular".into()))?;
    Ok(symmetric_transfer(flow, &h, &h_inv))
}

fn symmetric_transfer(flow: &DenseField, h: &Matrix3<f64>, h_inv: &Matrix3<f64>) -> DenseField {
    DenseField::par_from_index_fn(flow.width(), flow.height(), FieldKind::Cost, |i| {
        if !flow.is_valid_at(i) {
            return [f64::NAN];
        }
        let p0 = flow.pixel_center(i);
        let p1 = flow.flow_target(i);
        match (transfer(h, p1), transfer(h_inv, p0)) {
            (Some(a), Some(b)) => {
                let d0 = p0.distance(&a);
                let d1 = p1.distance(&b);
                [d0 * d0 + d1 * d1]
            }
            _ => [f64::NAN],
        }
    })
}

/// `‖T̃‖ · |sin(min(β, π/2))|`, with `β` the angle between `T̃` and `−T_c`.
pub fn pp3d_cost(t: &Vector3<f64>, minus_tc: &Vector3<f64>) -> f64 {
    let n = t.norm();
    if n < 1e-12 {
        return 0.0;
    }
    let beta = t.cross(minus_tc).norm().atan2(t.dot(minus_tc));
    n * beta.min(std::f64::consts::FRAC_PI_2).sin().abs()
}

/// Per-pixel `c_pp3d` from a rectified scene-flow field.
pub fn cost_pp3d(scene_flow: &DenseField, ctx: &MotionContext) -> Result<DenseField> {
    check_kind(scene_flow, FieldKind::SceneFlow, "scene flow")?;
    ctx.require_translation()?;
    let minus_tc = -ctx.ego.transform.translation;
    Ok(DenseField::par_from_index_fn(scene_flow.width(), scene_flow.height(), FieldKind::Cost, |i| {
        if !scene_flow.is_valid_at(i) {
            return [f64::NAN];
        }
        let s = scene_flow.at(i);
        [pp3d_cost(&Vector3::new(s[0], s[1], s[2]), &minus_tc)]
    }))
}

/// Frame-0 depth from triangulating each flow correspondence under the camera
/// motion scaled to a unit baseline. Failed triangulations are NaN.
pub fn triangulate_rigid_depth(flow: &DenseField, ctx: &MotionContext) -> Result<DenseField> {
    check_kind(flow, FieldKind::Flow, "flow")?;
    ctx.require_translation()?;
    let t = &ctx.ego.transform;
    let unit = t.with_translation(t.translation / t.translation.norm());
    let motion01 = unit.inverse();
    Ok(DenseField::par_from_index_fn(flow.width(), flow.height(), FieldKind::Depth, |i| {
        if !flow.is_valid_at(i) {
            return [f64::NAN];
        }
        match triangulate(
            flow.pixel_center(i),
            flow.flow_target(i),
            &motion01,
            &ctx.k0,
            &ctx.k1,
            TriangulationMethod::Midpoint,
        ) {
            Ok(p) if p.z < MAX_TRIANGULATED_DEPTH => [p.z],
            _ => [f64::NAN],
        }
    }))
}

/// Minimum number of jointly valid pixels for [`align_depth_scale`].
pub const MIN_ALIGN_PIXELS: usize = 100;
/// Upper bound on the Huber threshold in log-depth.
pub const HUBER_DELTA: f64 = 0.1;

/// Robust scale `γ` with `Z_flow ≈ γ · Z_prior`, by Huber IRLS on log-depth
/// differences over pixels with `validity > 0.5` and both depths positive.
///
/// The Huber threshold is `min(0.1, 1.345·σ)` with `σ` the MAD scale of the
/// current residuals, which keeps gross outliers from biasing `γ`.
pub fn align_depth_scale(z_flow: &DenseField, z_prior: &DenseField, validity: &DenseField) -> Result<f64> {
    z_flow.ensure_same_dims(z_prior, "flow depth vs prior depth")?;
    z_flow.ensure_same_dims(validity, "depth vs validity")?;
    let d: Vec<f64> = (0..z_flow.len())
        .filter_map(|i| {
            let (a, b, v) = (z_flow.value(i), z_prior.value(i), validity.value(i));
            let ok = v > CONFIDENCE_GATE && a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite();
            ok.then(|| a.ln() - b.ln())
        })
        .collect();
    if d.len() < MIN_ALIGN_PIXELS {
        return Err(Error::InsufficientData { needed: MIN_ALIGN_PIXELS, got: d.len() });
    }
    let mut g = median(&d).expect("non-empty");
    for _ in 0..100 {
        let mut abs_dev: Vec<f64> = d.iter().map(|x| (x - g).abs()).collect();
        let mad = median_in_place(&mut abs_dev).unwrap_or(0.0);
        let delta = HUBER_DELTA.min(1.345 * 1.4826 * mad);
        if delta <= 0.0 {
            // at least half the samples agree exactly
            break;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for x in &d {
            let r = (x - g).abs();
            let w = if r <= delta { 1.0 } else { delta / r };
            num += w * x;
            den += w;
        }
        let next = num / den;
        let done = (next - g).abs() < 1e-15;
        g = next;
        if done {
            break;
        }
    }
    Ok(g.exp())
}

/// `|log(Z_flow / (γ·Z_prior))|`; NaN where either depth is invalid.
pub fn cost_depth_contrast(z_flow: &DenseField, z_prior: &DenseField, gamma: f64) -> Result<DenseField> {
    z_flow.ensure_same_dims(z_prior, "flow depth vs prior depth")?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidInput(format!("depth scale must be positive, got {gamma}")));
    }
    Ok(DenseField::par_from_index_fn(z_flow.width(), z_flow.height(), FieldKind::Cost, |i| {
        let (a, b) = (z_flow.value(i), z_prior.value(i));
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            [(a / (gamma * b)).ln().abs()]
        } else {
            [f64::NAN]
        }
    }))
}

/// Dense inputs of the cost computation.
#[derive(Debug, Clone, Copy)]
pub struct CostInputs<'a> {
    pub flow: &'a DenseField,
    pub expansion: &'a DenseField,
    pub depth_prior: &'a DenseField,
    pub confidence: &'a DenseField,
}

/// All cost maps available for a given egomotion, with low-confidence pixels
/// (confidence ≤ 0.5) set to NaN.
///
/// A degenerate egomotion yields only `hom`; otherwise all four maps are
/// produced (`depth` only when the prior overlaps enough valid triangulations).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMaps {
    pub epi: Option<DenseField>,
    pub hom: Option<DenseField>,
    pub pp3d: Option<DenseField>,
    pub depth: Option<DenseField>,
    pub scene_flow: DenseField,
    pub z_flow: Option<DenseField>,
    pub gamma: Option<f64>,
}

impl CostMaps {
    /// `(name, map)` pairs of the maps that exist, in a fixed order.
    pub fn available(&self) -> Vec<(&'static str, &DenseField)> {
        [("epi", &self.epi), ("hom", &self.hom), ("pp3d", &self.pp3d), ("depth", &self.depth)]
            .into_iter()
            .filter_map(|(n, m)| m.as_ref().map(|m| (n, m)))
            .collect()
    }
}

fn mask_low_confidence(mut cost: DenseField, confidence: &DenseField) -> DenseField {
    for i in 0..cost.len() {
        if !(confidence.value(i) > CONFIDENCE_GATE) {
            cost.at_mut(i).fill(f64::NAN);
        }
    }
    cost
}

pub fn compute_cost_maps(inputs: CostInputs<'_>, ctx: &mut MotionContext) -> Result<CostMaps> {
    let CostInputs { flow, expansion, depth_prior, confidence } = inputs;
    flow.ensure_same_dims(expansion, "flow vs expansion")?;
    flow.ensure_same_dims(depth_prior, "flow vs depth prior")?;
    flow.ensure_same_dims(confidence, "flow vs confidence")?;
    let scene_flow = rectified_scene_flow(flow, expansion, ctx)?;
    let hom = Some(mask_low_confidence(cost_homography(flow, ctx)?, confidence));
    if ctx.is_degenerate() {
        return Ok(CostMaps {
            epi: None,
            hom,
            pp3d: None,
            depth: None,
            scene_flow,
            z_flow: None,
            gamma: None,
        });
    }
    let epi = mask_low_confidence(cost_epipolar(flow, ctx)?, confidence);
    let pp3d = mask_low_confidence(cost_pp3d(&scene_flow, ctx)?, confidence);
    let z_flow = triangulate_rigid_depth(flow, ctx)?;
    let (depth, gamma) = match align_depth_scale(&z_flow, depth_prior, confidence) {
        Ok(g) => {
            ctx.gamma = Some(g);
            let c = cost_depth_contrast(&z_flow, depth_prior, g)?;
            (Some(mask_low_confidence(c, confidence)), Some(g))
        }
        Err(Error::InsufficientData { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(CostMaps {
        epi: Some(epi),
        hom,
        pp3d: Some(pp3d),
        depth,
        scene_flow,
        z_flow: Some(z_flow),
        gamma,
    })
}
