//! Per-segment rigid fitting, triangulation, depth rescaling, PnP refinement and
//! rigid-body scene flow assembly.

use log::{debug, warn};
use nalgebra::{Matrix3, Matrix4, Matrix6, Rotation3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::egomotion::{estimate_essential_lmeds, CorrespondenceSet, CONFIDENCE_GATE};
use crate::field::{DenseField, FieldKind};
use crate::geometry::{backproject, dehomogenize, project, skew, CameraIntrinsics, Pixel, Point3, RigidTransform};
use crate::stats::median_in_place;
use crate::{Error, Result};

/// Minimum angle between the two viewing rays.
pub const MIN_PARALLAX_ANGLE: f64 = 1e-8;
/// Minimum number of confident pixels for fitting a segment.
pub const MIN_SEGMENT_PIXELS: usize = 50;
/// Default minimum mean rectified flow, in pixels, for a segment to be updated.
pub const PARALLAX_MIN: f64 = 4.0;
/// Minimum fraction of valid pixels for a segment to be updated.
pub const MIN_VALID_FRACTION: f64 = 0.3;

const SCALE_HYPOTHESES: usize = 200;
const SCALE_BAND: f64 = 0.1;
const MIN_SCALE_INLIER_RATIO: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangulationMethod {
    #[default]
    Midpoint,
    Dlt,
}

/// Triangulates a correspondence given the motion `P1 = R·P0 + T`; returns the
/// point in frame-0 coordinates.
pub fn triangulate(
    p0: Pixel,
    p1: Pixel,
    motion01: &RigidTransform,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
    method: TriangulationMethod,
) -> Result<Point3> {
    let (r, t) = (&motion01.rotation, &motion01.translation);
    if t.norm() < 1e-12 {
        return Err(Error::DegenerateTranslation);
    }
    let x0 = k0.normalize(p0);
    let x1 = k1.normalize(p1);
    let d0 = x0;
    let d1 = r.transpose() * x1;
    let angle = d0.cross(&d1).norm().atan2(d0.dot(&d1));
    if angle < MIN_PARALLAX_ANGLE {
        return Err(Error::ZeroParallax);
    }
    let p = match method {
        TriangulationMethod::Midpoint => {
            // camera-1 centre in frame 0
            let c1 = -(r.transpose() * t);
            let (a, b, c) = (d0.dot(&d0), d0.dot(&d1), d1.dot(&d1));
            let (d, e) = (d0.dot(&c1), d1.dot(&c1));
            let den = a * c - b * b;
            let s = (d * c - b * e) / den;
            let u = (b * d - a * e) / den;
            0.5 * (s * d0 + c1 + u * d1)
        }
        TriangulationMethod::Dlt => {
            let rows = [
                dlt_row(x0.x, &Matrix3::identity(), &Vector3::zeros(), 0),
                dlt_row(x0.y, &Matrix3::identity(), &Vector3::zeros(), 1),
                dlt_row(x1.x, r, t, 0),
                dlt_row(x1.y, r, t, 1),
            ];
            let a = Matrix4::from_rows(&rows);
            let svd = (a.transpose() * a).symmetric_eigen();
            let k = svd.eigenvalues.imin();
            let x = svd.eigenvectors.column(k);
            if x[3].abs() < 1e-300 {
                return Err(Error::ZeroParallax);
            }
            Vector3::new(x[0] / x[3], x[1] / x[3], x[2] / x[3])
        }
    };
    let z1 = (r * p + t).z;
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    if !(z1 > 0.0) {
        return Err(Error::BehindCamera(z1));
    }
    Ok(p)
}

/// Row `x·P₃ − P_k` of the DLT system for projection matrix `[R | T]`.
fn dlt_row(x: f64, r: &Matrix3<f64>, t: &Vector3<f64>, k: usize) -> nalgebra::RowVector4<f64> {
    nalgebra::RowVector4::new(
        x * r[(2, 0)] - r[(k, 0)],
        x * r[(2, 1)] - r[(k, 1)],
        x * r[(2, 2)] - r[(k, 2)],
        x * t.z - t[k],
    )
}

/// Rigid motion of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyFit {
    pub id: u32,
    /// `P1 = R·P0 + T`, translation in prior-aligned units.
    pub transform: RigidTransform,
    /// Factor converting unit-baseline triangulations into prior units.
    pub scale: f64,
    pub n_inliers: usize,
    pub mean_parallax: f64,
    pub valid_fraction: f64,
    pub updated: bool,
    pub rms_reprojection: Option<f64>,
    pub pnp_warning: bool,
    /// Why fitting failed, if it did.
    pub failure: Option<String>,
}

impl RigidBodyFit {
    /// A fit that leaves its segment untouched.
    pub fn not_updated(id: u32, valid_fraction: f64, failure: impl Into<String>) -> Self {
        Self {
            id,
            transform: RigidTransform::identity(),
            scale: 1.0,
            n_inliers: 0,
            mean_parallax: 0.0,
            valid_fraction,
            updated: false,
            rms_reprojection: None,
            pnp_warning: false,
            failure: Some(failure.into()),
        }
    }
}

/// Update gate: enough parallax and enough valid pixels.
pub fn gate_update(fit: &RigidBodyFit, parallax_min: f64) -> bool {
    fit.mean_parallax >= parallax_min && fit.valid_fraction >= MIN_VALID_FRACTION
}

/// Inputs shared by the per-segment operations.
#[derive(Debug, Clone, Copy)]
pub struct SegmentInputs<'a> {
    pub labels: &'a DenseField,
    pub flow: &'a DenseField,
    pub confidence: &'a DenseField,
    pub depth_prior: &'a DenseField,
    pub k0: &'a CameraIntrinsics,
    pub k1: &'a CameraIntrinsics,
}

impl SegmentInputs<'_> {
    fn check(&self) -> Result<()> {
        self.flow.ensure_same_dims(self.labels, "flow vs labels")?;
        self.flow.ensure_same_dims(self.confidence, "flow vs confidence")?;
        self.flow.ensure_same_dims(self.depth_prior, "flow vs depth prior")
    }

    /// Pixel indices of the segment and the subset usable for fitting.
    fn segment_pixels(&self, id: u32) -> (usize, Vec<usize>) {
        let mut area = 0;
        let mut valid = Vec::new();
        for i in 0..self.labels.len() {
            if self.labels.label(i) != Some(id) {
                continue;
            }
            area += 1;
            let z = self.depth_prior.value(i);
            if self.confidence.value(i) > CONFIDENCE_GATE && self.flow.is_valid_at(i) && z > 0.0 && z.is_finite() {
                valid.push(i);
            }
        }
        (area, valid)
    }
}

/// Mean distance between `p0` and `p1` after removing the rotation `r` of
/// `P1 = r·P0 + t` through the homography `K0·rᵀ·K1⁻¹`.
fn mean_rectified_parallax(pairs: &[(Pixel, Pixel)], r: &Matrix3<f64>, k0: &CameraIntrinsics, k1: &CameraIntrinsics) -> f64 {
    let h = k0.matrix() * r.transpose() * k1.inverse_matrix();
    let sum: f64 = pairs
        .iter()
        .map(|(p0, p1)| dehomogenize(&(h * p1.homogeneous().0)).distance(p0))
        .sum();
    sum / pairs.len() as f64
}

/// Robust scale from per-pixel ratios: single-sample hypotheses, ±10% inlier
/// band, refined by the inlier median. Returns `(scale, n_inliers)`.
fn scale_ransac(ratios: &[f64], seed: u64) -> Result<(f64, usize)> {
    if ratios.is_empty() {
        return Err(Error::FitFailure("no triangulated pixels for scale alignment".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = |s: f64| ratios.iter().filter(|&&r| (r / s - 1.0).abs() <= SCALE_BAND).count();
    let mut best = (0usize, ratios[0]);
    for _ in 0..SCALE_HYPOTHESES {
        let s = ratios[rng.random_range(0..ratios.len())];
        let c = count(s);
        if c > best.0 {
            best = (c, s);
        }
    }
    let (n, s) = best;
    if (n as f64) < MIN_SCALE_INLIER_RATIO * ratios.len() as f64 {
        return Err(Error::FitFailure(format!(
            "scale RANSAC found {n} inliers out of {}",
            ratios.len()
        )));
    }
    let mut inliers: Vec<f64> = ratios.iter().copied().filter(|&r| (r / s - 1.0).abs() <= SCALE_BAND).collect();
    let refined = median_in_place(&mut inliers).expect("non-empty");
    Ok((refined, n))
}

/// Fits the rigid motion of segment `id`: LMedS essential matrix, cheirality
/// decomposition, midpoint triangulation and RANSAC scale alignment to the prior.
pub fn fit_segment(inputs: &SegmentInputs<'_>, id: u32, seed: u64) -> Result<RigidBodyFit> {
    inputs.check()?;
    let (area, valid) = inputs.segment_pixels(id);
    if valid.len() < MIN_SEGMENT_PIXELS {
        return Err(Error::InsufficientData { needed: MIN_SEGMENT_PIXELS, got: valid.len() });
    }
    let flow = inputs.flow;
    let pairs: Vec<(Pixel, Pixel)> = valid.iter().map(|&i| (flow.pixel_center(i), flow.flow_target(i))).collect();
    let corr = CorrespondenceSet {
        pairs: pairs.clone(),
        weights: Some(valid.iter().map(|&i| inputs.confidence.value(i)).collect()),
    };
    let est = estimate_essential_lmeds(&corr, inputs.k0, inputs.k1, seed)?;
    let unit = est.transform.inverse();

    let ratios: Vec<f64> = valid
        .iter()
        .zip(&pairs)
        .filter_map(|(&i, (p0, p1))| {
            let p = triangulate(*p0, *p1, &unit, inputs.k0, inputs.k1, TriangulationMethod::Midpoint).ok()?;
            Some(inputs.depth_prior.value(i) / p.z)
        })
        .collect();
    let (scale, n_inliers) = scale_ransac(&ratios, seed ^ 0x5ca1e)?;
    let mut fit = RigidBodyFit {
        id,
        transform: unit.with_translation(unit.translation * scale),
        scale,
        n_inliers,
        mean_parallax: mean_rectified_parallax(&pairs, &unit.rotation, inputs.k0, inputs.k1),
        valid_fraction: valid.len() as f64 / area as f64,
        updated: false,
        rms_reprojection: None,
        pnp_warning: false,
        failure: None,
    };
    fit.updated = gate_update(&fit, PARALLAX_MIN);
    debug!(
        "segment {id}: parallax {:.3} px, valid {:.3}, scale {:.4}, updated {}",
        fit.mean_parallax, fit.valid_fraction, fit.scale, fit.updated
    );
    Ok(fit)
}

/// Fits every label id present in `inputs.labels`, in increasing id order.
/// Segments that cannot be fitted are reported as not updated with the reason.
pub fn fit_all_segments(inputs: &SegmentInputs<'_>, seed: u64) -> Result<Vec<RigidBodyFit>> {
    inputs.check()?;
    let mut ids: Vec<u32> = (0..inputs.labels.len()).filter_map(|i| inputs.labels.label(i)).collect();
    ids.sort_unstable();
    ids.dedup();
    Ok(ids
        .par_iter()
        .map(|&id| {
            fit_segment(inputs, id, seed.wrapping_add(id as u64)).unwrap_or_else(|e| {
                let (area, valid) = inputs.segment_pixels(id);
                warn!("segment {id} not fitted: {e}");
                RigidBodyFit::not_updated(id, valid.len() as f64 / area.max(1) as f64, e.to_string())
            })
        })
        .collect())
}

/// Reprojection residuals `project(R·P0 + T, K1) − p1` and their Jacobian rows.
struct PnpProblem<'a> {
    points: Vec<Point3>,
    targets: Vec<Pixel>,
    k1: &'a CameraIntrinsics,
}

impl PnpProblem<'_> {
    fn residuals(&self, t: &RigidTransform) -> Option<Vec<f64>> {
        let mut r = Vec::with_capacity(2 * self.points.len());
        for (p, q) in self.points.iter().zip(&self.targets) {
            let x = project(&t.apply(p), self.k1).ok()?;
            r.push(x.u - q.u);
            r.push(x.v - q.v);
        }
        Some(r)
    }

    /// Gauss-Newton system for the update `R ← exp(ω)·R`, `T ← T + δT`.
    fn normal_equations(&self, t: &RigidTransform, res: &[f64]) -> (Matrix6<f64>, Vector6<f64>) {
        let k = self.k1;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (n, p) in self.points.iter().enumerate() {
            let rp = t.rotation * p;
            let q = rp + t.translation;
            let iz = 1.0 / q.z;
            let dpi = nalgebra::Matrix2x3::new(
                k.fx * iz,
                k.skew * iz,
                -(k.fx * q.x + k.skew * q.y) * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * q.y * iz * iz,
            );
            let mut dq = nalgebra::Matrix3x6::zeros();
            dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rp)));
            dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dpi * dq;
            let r = nalgebra::Vector2::new(res[2 * n], res[2 * n + 1]);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        (jtj, jtr)
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg-Marquardt refinement of a segment's motion against a trusted
/// frame-0 depth, minimizing reprojection error in frame 1.
///
/// Steps are only accepted when they lower the cost, so the RMS never grows. If
/// the first ten damped steps all fail, the input fit is returned with
/// `pnp_warning` set.
pub fn refine_pnp_lm(
    fit: &RigidBodyFit,
    z0: &DenseField,
    flow: &DenseField,
    labels: &DenseField,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
) -> Result<RigidBodyFit> {
    flow.ensure_same_dims(z0, "flow vs depth")?;
    flow.ensure_same_dims(labels, "flow vs labels")?;
    let mut points = Vec::new();
    let mut targets = Vec::new();
    for i in 0..flow.len() {
        if labels.label(i) != Some(fit.id) || !flow.is_valid_at(i) {
            continue;
        }
        if let Ok(p) = backproject(flow.pixel_center(i), z0.value(i), k0) {
            points.push(p);
            targets.push(flow.flow_target(i));
        }
    }
    if points.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: points.len() });
    }
    let problem = PnpProblem { points, targets, k1 };
    let n = problem.points.len() as f64;
    let rms = |c: f64| (c / (2.0 * n)).sqrt();

    let mut current = fit.transform.clone();
    let Some(mut res) = problem.residuals(&current) else {
        return Err(Error::FitFailure("initial pose puts points behind camera 1".into()));
    };
    let mut cost = sum_sq(&res);
    let mut lambda = 1e-3;
    let mut accepted_any = false;
    let mut rejections = 0;
    for _ in 0..200 {
        if rms(cost) < 1e-12 {
            break;
        }
        let (jtj, jtr) = problem.normal_equations(&current, &res);
        if jtr.norm() < 1e-14 * (1.0 + cost) {
            break;
        }
        let mut damped = jtj;
        for d in 0..6 {
            damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            lambda *= 10.0;
            rejections += 1;
            continue;
        };
        let omega = Vector3::new(step[0], step[1], step[2]);
        let candidate = RigidTransform::from_approx(
            Rotation3::new(omega).into_inner() * current.rotation,
            current.translation + Vector3::new(step[3], step[4], step[5]),
        );
        match problem.residuals(&candidate).map(|r| (sum_sq(&r), r)) {
            Some((c, r)) if c < cost => {
                let rel = (cost - c) / cost;
                current = candidate;
                res = r;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                accepted_any = true;
                rejections = 0;
                if rel < 1e-15 {
                    break;
                }
            }
            _ => {
                lambda *= 10.0;
                rejections += 1;
                if rejections >= 10 {
                    if !accepted_any {
                        warn!("PnP refinement of segment {} did not decrease the cost", fit.id);
                        let mut out = fit.clone();
                        out.pnp_warning = true;
                        out.rms_reprojection = Some(rms(cost));
                        return Ok(out);
                    }
                    break;
                }
            }
        }
    }
    let mut out = fit.clone();
    out.transform = current;
    out.rms_reprojection = Some(rms(cost));
    Ok(out)
}

/// Refined depth, flow and frame-1 geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFlowOutput {
    pub z0: DenseField,
    pub z1: DenseField,
    pub flow: DenseField,
    /// Frame-1 camera-coordinate points.
    pub p1: DenseField,
}

/// Applies each updated segment's rigid motion: `P0` from triangulation under the
/// scaled fit, `P1 = R·P0 + T`, refined flow `project(P1, K1) − p0`. Pixels of
/// segments that are not updated, and unlabeled pixels, pass through with
/// `Z0 = Z_prior`, the input flow and `Z1 = Z_prior·τ`.
pub fn assemble_scene_flow(
    labels: &DenseField,
    fits: &[RigidBodyFit],
    depth_prior: &DenseField,
    flow: &DenseField,
    expansion: &DenseField,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
) -> Result<SceneFlowOutput> {
    flow.ensure_same_dims(labels, "flow vs labels")?;
    flow.ensure_same_dims(depth_prior, "flow vs depth prior")?;
    flow.ensure_same_dims(expansion, "flow vs expansion")?;
    for i in 0..labels.len() {
        if let Some(id) = labels.label(i) {
            if !fits.iter().any(|f| f.id == id) {
                return Err(Error::InvalidInput(format!("no fit for label {id}")));
            }
        }
    }
    let (w, h) = flow.dims();
    // z0, z1, flow u, flow v, P1 xyz
    let per_pixel = |i: usize| -> [f64; 7] {
        let z_prior = depth_prior.value(i);
        let f = flow.at(i);
        let p0 = flow.pixel_center(i);
        let pass = || {
            let z1 = z_prior * expansion.value(i);
            let p1 = backproject(flow.flow_target(i), z1, k1)
                .map(|p| [p.x, p.y, p.z])
                .unwrap_or([f64::NAN; 3]);
            [z_prior, z1, f[0], f[1], p1[0], p1[1], p1[2]]
        };
        let Some(fit) = labels.label(i).and_then(|id| fits.iter().find(|f| f.id == id)) else {
            return pass();
        };
        if !fit.updated {
            return pass();
        }
        let p0_3d = if flow.is_valid_at(i) {
            triangulate(p0, flow.flow_target(i), &fit.transform, k0, k1, TriangulationMethod::Midpoint).ok()
        } else {
            None
        }
        .or_else(|| backproject(p0, z_prior, k0).ok());
        let Some(pt0) = p0_3d else { return pass() };
        let pt1 = fit.transform.apply(&pt0);
        let Ok(q) = project(&pt1, k1) else { return pass() };
        [pt0.z, pt1.z, q.u - p0.u, q.v - p0.v, pt1.x, pt1.y, pt1.z]
    };
    let rows: Vec<[f64; 7]> = (0..w * h).into_par_iter().map(per_pixel).collect();
    let pick = |kind: FieldKind, range: std::ops::Range<usize>| {
        let data: Vec<f64> = rows.iter().flat_map(|r| r[range.clone()].to_vec()).collect();
        DenseField::from_data(w, h, kind, data).expect("sizes match")
    };
    Ok(SceneFlowOutput {
        z0: pick(FieldKind::Depth, 0..1),
        z1: pick(FieldKind::Depth, 1..2),
        flow: pick(FieldKind::Flow, 2..4),
        p1: pick(FieldKind::Points, 4..7),
    })
}
