//! Camera egomotion from dense flow: correspondence sampling, five-point RANSAC,
//! LMedS essential fitting, cheirality-based decomposition and the
//! rotation-only degeneracy test.

use log::debug;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::field::DenseField;
use crate::fivepoint::{eight_point, five_point, sampson_distance};
use crate::geometry::{CameraIntrinsics, Pixel, RigidTransform};
use crate::rigidfit::{triangulate, TriangulationMethod};
use crate::stats::{median, median_in_place};
use crate::{Error, Result};

/// Confidence above which a flow vector counts as a valid correspondence.
pub const CONFIDENCE_GATE: f64 = 0.5;

/// Sparse two-frame correspondences `(p0, p1)` with optional confidences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(Pixel, Pixel)>,
    pub weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Pixel, Pixel)>) -> Self {
        Self { pairs, weights: None }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Normalized rays `K0⁻¹ p̃0`, `K1⁻¹ p̃1`.
    pub fn normalized(
        &self,
        k0: &CameraIntrinsics,
        k1: &CameraIntrinsics,
    ) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        self.pairs.iter().map(|(a, b)| (k0.normalize(*a), k1.normalize(*b))).unzip()
    }

    pub fn subset(&self, mask: &[bool]) -> CorrespondenceSet {
        let pairs = self
            .pairs
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(p, _)| *p)
            .collect();
        let weights = self.weights.as_ref().map(|w| {
            w.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect()
        });
        CorrespondenceSet { pairs, weights }
    }
}

/// Result of an egomotion fit.
///
/// `transform` holds the camera motion `(R_c, T_c)` with `P0 = R_c·P1 + T_c`;
/// `‖T_c‖ = 1` unless `degenerate`, in which case `T_c = 0` and the rotation comes
/// from the rotation-only homography model.
#[derive(Debug, Clone, PartialEq)]
pub struct EgomotionEstimate {
    pub transform: RigidTransform,
    /// Unit-norm essential matrix in normalized coordinates (`x1ᵀ E x0 = 0`).
    pub essential: Option<Matrix3<f64>>,
    pub inlier_mask: Vec<bool>,
    /// Median Sampson distance (normalized units) over all correspondences.
    pub residual_median: f64,
    pub degenerate: bool,
}

impl EgomotionEstimate {
    pub fn n_inliers(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }

    /// Camera motion known a priori (e.g. simulator ground truth). Translation is
    /// normalized to unit length; a zero translation yields a degenerate estimate.
    pub fn from_motion(ego: RigidTransform) -> Self {
        let n = ego.translation.norm();
        let degenerate = n < 1e-12;
        let transform = if degenerate {
            ego.with_translation(Vector3::zeros())
        } else {
            ego.with_translation(ego.translation / n)
        };
        let essential = (!degenerate).then(|| {
            let e = transform.rotation.transpose() * crate::geometry::skew(&transform.translation);
            e / e.norm()
        });
        Self {
            transform,
            essential,
            inlier_mask: Vec::new(),
            residual_median: 0.0,
            degenerate,
        }
    }
}

/// RANSAC settings. Thresholds are Sampson distances in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub threshold: f64,
    pub confidence: f64,
    pub seed: u64,
    /// Homography-to-essential inlier ratio at which the scene is called degenerate.
    pub degeneracy_ratio: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 1000,
            threshold: 0.01,
            confidence: 0.999,
            seed: 0,
            degeneracy_ratio: 0.95,
        }
    }
}

/// Draws up to `max_n` correspondences uniformly over pixels whose confidence
/// exceeds 0.5 and whose flow target stays inside the image.
pub fn sample_correspondences(
    flow: &DenseField,
    confidence: &DenseField,
    max_n: usize,
    seed: u64,
) -> Result<CorrespondenceSet> {
    flow.ensure_same_dims(confidence, "flow vs confidence")?;
    let (w, h) = (flow.width() as f64, flow.height() as f64);
    let valid: Vec<usize> = (0..flow.len())
        .filter(|&i| {
            let c = confidence.value(i);
            if !(c > CONFIDENCE_GATE) || !flow.is_valid_at(i) {
                return false;
            }
            let p1 = flow.flow_target(i);
            (0.0..w).contains(&p1.u) && (0.0..h).contains(&p1.v)
        })
        .collect();
    if valid.len() < 5 {
        return Err(Error::InsufficientData { needed: 5, got: valid.len() });
    }
    let chosen: Vec<usize> = if valid.len() <= max_n {
        valid
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks: Vec<usize> = sample(&mut rng, valid.len(), max_n).into_iter().collect();
        picks.sort_unstable();
        picks.into_iter().map(|k| valid[k]).collect()
    };
    let pairs = chosen.iter().map(|&i| (flow.pixel_center(i), flow.flow_target(i))).collect();
    let weights = chosen.iter().map(|&i| confidence.value(i)).collect();
    Ok(CorrespondenceSet { pairs, weights: Some(weights) })
}

/// Five-point minimal solver on pixel correspondences.
pub fn five_point_essential(
    minimal: &[(Pixel, Pixel)],
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
) -> Vec<Matrix3<f64>> {
    if minimal.len() != 5 {
        return Vec::new();
    }
    let (x0, x1): (Vec<_>, Vec<_>) =
        minimal.iter().map(|(a, b)| (k0.normalize(*a), k1.normalize(*b))).unzip();
    five_point(&x0, &x1)
}

struct Scored {
    essential: Matrix3<f64>,
    cost: f64,
    inliers: usize,
    median: f64,
    iteration: usize,
}

impl Scored {
    /// Lowest truncated-quadratic cost, then count, then lower median, then earlier
    /// iteration. A bare count cannot separate the exact model from one a pixel off
    /// once outliers crowd the threshold band.
    fn better_than(&self, other: &Scored) -> bool {
        (self.cost, other.inliers, self.median, self.iteration) < (other.cost, self.inliers, other.median, other.iteration)
    }
}

fn pick_better(a: Option<Scored>, b: Option<Scored>) -> Option<Scored> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.better_than(&a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

fn residuals(e: &Matrix3<f64>, x0: &[Vector3<f64>], x1: &[Vector3<f64>]) -> Vec<f64> {
    x0.iter().zip(x1).map(|(a, b)| sampson_distance(e, a, b)).collect()
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

fn hypotheses(
    iteration: usize,
    seed: u64,
    x0: &[Vector3<f64>],
    x1: &[Vector3<f64>],
) -> Vec<Matrix3<f64>> {
    let n = x0.len();
    let mut rng = iteration_rng(seed, iteration);
    let idx = sample(&mut rng, n, 5);
    let s0: Vec<_> = idx.iter().map(|i| x0[i]).collect();
    let s1: Vec<_> = idx.iter().map(|i| x1[i]).collect();
    let sols = five_point(&s0, &s1);
    if !sols.is_empty() || n < 8 {
        return sols;
    }
    let idx = sample(&mut rng, n, 8);
    let s0: Vec<_> = idx.iter().map(|i| x0[i]).collect();
    let s1: Vec<_> = idx.iter().map(|i| x1[i]).collect();
    eight_point(&s0, &s1, None).into_iter().collect()
}

/// Truncated-quadratic score; lower is better.
fn msac_cost(r: &[f64], threshold: f64) -> f64 {
    let t2 = threshold * threshold;
    r.iter().map(|&v| if v < threshold { v * v } else { t2 }).sum()
}

/// Robustly re-fits `e` on its inliers with Tukey-weighted eight-point
/// iterations, keeping each step only while the truncated score improves.
fn refit_essential(
    e: &Matrix3<f64>,
    x0: &[Vector3<f64>],
    x1: &[Vector3<f64>],
    threshold: f64,
) -> Matrix3<f64> {
    let mut current = *e;
    let mut r = residuals(&current, x0, x1);
    let mut cost = msac_cost(&r, threshold);
    for _ in 0..20 {
        let mut inlier_r: Vec<f64> = r.iter().copied().filter(|&v| v < threshold).collect();
        let Some(med) = median_in_place(&mut inlier_r) else { break };
        let sigma = (1.4826 * med).max(1e-12);
        let c = 4.685 * sigma;
        let w: Vec<f64> = r
            .iter()
            .map(|&v| if v < threshold && v < c { (1.0 - (v / c).powi(2)).powi(2) } else { 0.0 })
            .collect();
        let Some(next) = eight_point(x0, x1, Some(&w)) else { break };
        let next_r = residuals(&next, x0, x1);
        let next_cost = msac_cost(&next_r, threshold);
        if !(next_cost < cost) {
            break;
        }
        current = next;
        r = next_r;
        cost = next_cost;
    }
    current
}

/// Five-point RANSAC on the essential matrix, followed by a robust inlier re-fit,
/// rotation-only degeneracy test and cheirality decomposition.
pub fn estimate_egomotion_ransac(
    corr: &CorrespondenceSet,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<EgomotionEstimate> {
    let n = corr.len();
    if n < 5 {
        return Err(Error::InsufficientData { needed: 5, got: n });
    }
    let (x0, x1) = corr.normalized(k0, k1);
    const BATCH: usize = 64;

    let mut best: Option<Scored> = None;
    let mut done = 0usize;
    let mut required = params.iterations;
    while done < required.min(params.iterations) {
        let end = (done + BATCH).min(params.iterations);
        let batch_best = (done..end)
            .into_par_iter()
            .map(|it| {
                hypotheses(it, params.seed, &x0, &x1)
                    .into_iter()
                    .map(|e| {
                        let mut r = residuals(&e, &x0, &x1);
                        let inliers = r.iter().filter(|&&v| v < params.threshold).count();
                        let cost = msac_cost(&r, params.threshold);
                        let median = median_in_place(&mut r).unwrap_or(f64::INFINITY);
                        Scored { essential: e, cost, inliers, median, iteration: it }
                    })
                    .fold(None, |acc, s| pick_better(acc, Some(s)))
            })
            .reduce(|| None, pick_better);
        best = pick_better(best, batch_best);
        done = end;
        if let Some(b) = &best {
            let w = b.inliers as f64 / n as f64;
            required = adaptive_iterations(w, 5, params.confidence).min(params.iterations);
        }
    }
    debug!("essential RANSAC ran {done} iterations");

    let e_model = best.map(|b| refit_essential(&b.essential, &x0, &x1, params.threshold));
    let rotation_model = fit_rotation_homography(corr, k0, k1, params.threshold, params.seed);

    let (e_mask, e_median) = match &e_model {
        Some(e) => {
            let r = residuals(e, &x0, &x1);
            (r.iter().map(|&v| v < params.threshold).collect::<Vec<_>>(), median(&r).unwrap_or(f64::INFINITY))
        }
        None => (vec![false; n], f64::INFINITY),
    };
    let e_inliers = e_mask.iter().filter(|&&b| b).count();
    let degenerate = detect_degenerate_counts(e_inliers, rotation_model.n_inliers, params.degeneracy_ratio);

    if degenerate {
        let est = EgomotionEstimate {
            transform: RigidTransform::from_approx(rotation_model.rotation, Vector3::zeros()),
            essential: None,
            inlier_mask: rotation_model.inlier_mask.clone(),
            residual_median: rotation_model.residual_median,
            degenerate: true,
        };
        if 2 * rotation_model.n_inliers < n {
            return Err(Error::EstimationFailure {
                inlier_ratio: rotation_model.n_inliers as f64 / n as f64,
                best: Box::new(est),
            });
        }
        return Ok(est);
    }

    let e = e_model.expect("non-degenerate branch has an essential model");
    let mut est = EgomotionEstimate {
        transform: RigidTransform::identity(),
        essential: Some(e),
        inlier_mask: e_mask,
        residual_median: e_median,
        degenerate: false,
    };
    if 2 * e_inliers < n {
        return Err(Error::EstimationFailure {
            inlier_ratio: e_inliers as f64 / n as f64,
            best: Box::new(est),
        });
    }
    est.transform = decompose_essential(&e, &corr.subset(&est.inlier_mask), k0, k1)?;
    Ok(est)
}

fn adaptive_iterations(inlier_ratio: f64, sample_size: i32, confidence: f64) -> usize {
    let p = inlier_ratio.powi(sample_size);
    if p >= 1.0 - 1e-12 {
        return 1;
    }
    if p <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p).ln();
    if k.is_finite() {
        k.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Number of minimal samples drawn by [`estimate_essential_lmeds`].
pub const LMEDS_SAMPLES: usize = 500;

/// Least-median-of-squares essential fit: the minimal-sample model with the
/// smallest median squared Sampson distance, re-fit on the points within 2.5
/// robust standard deviations.
pub fn estimate_essential_lmeds(
    corr: &CorrespondenceSet,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
    seed: u64,
) -> Result<EgomotionEstimate> {
    let n = corr.len();
    if n < 5 {
        return Err(Error::InsufficientData { needed: 5, got: n });
    }
    let (x0, x1) = corr.normalized(k0, k1);
    let best = (0..LMEDS_SAMPLES)
        .into_par_iter()
        .map(|it| {
            hypotheses(it, seed, &x0, &x1)
                .into_iter()
                .map(|e| {
                    let mut r2: Vec<f64> = residuals(&e, &x0, &x1).iter().map(|v| v * v).collect();
                    (median_in_place(&mut r2).unwrap_or(f64::INFINITY), it, e)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
        })
        .reduce(
            || None,
            |a, b| match (a, b) {
                (Some(a), Some(b)) => {
                    Some(if (b.0, b.1) < (a.0, a.1) { b } else { a })
                }
                (a, None) => a,
                (None, b) => b,
            },
        );
    let Some((med2, _, e)) = best else {
        return Err(Error::InsufficientData { needed: 5, got: n });
    };

    let sigma = (1.4826 * (1.0 + 5.0 / (n as f64 - 4.0)) * med2.max(0.0).sqrt()).max(1e-12);
    let band = 2.5 * sigma;
    let e = refit_essential(&e, &x0, &x1, band);
    let r = residuals(&e, &x0, &x1);
    let mask: Vec<bool> = r.iter().map(|&v| v <= band).collect();
    let n_in = mask.iter().filter(|&&b| b).count();
    let mut est = EgomotionEstimate {
        transform: RigidTransform::identity(),
        essential: Some(e),
        inlier_mask: mask,
        residual_median: median(&r).unwrap_or(f64::INFINITY),
        degenerate: false,
    };
    if 2 * n_in < n {
        return Err(Error::EstimationFailure {
            inlier_ratio: n_in as f64 / n as f64,
            best: Box::new(est),
        });
    }
    est.transform = decompose_essential(&e, &corr.subset(&est.inlier_mask), k0, k1)?;
    Ok(est)
}

/// SVD of a 3×3 matrix with singular values sorted in decreasing order.
fn sorted_svd(m: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>, Matrix3<f64>) {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = Matrix3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    let v = Matrix3::from_columns(&[
        vt.row(idx[0]).transpose(),
        vt.row(idx[1]).transpose(),
        vt.row(idx[2]).transpose(),
    ]);
    let s = Vector3::new(
        svd.singular_values[idx[0]],
        svd.singular_values[idx[1]],
        svd.singular_values[idx[2]],
    );
    (u, s, v)
}

/// Scales `e` to unit norm with its largest-magnitude entry positive, so that
/// `e` and `-e` decompose identically.
fn canonical_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let n = e.norm();
    let mut out = e / n;
    let (mut best, mut best_abs) = (0usize, -1.0f64);
    for (k, v) in out.iter().enumerate() {
        if v.abs() > best_abs + 1e-12 {
            best = k;
            best_abs = v.abs();
        }
    }
    if out[best] < 0.0 {
        out = -out;
    }
    out
}

/// Picks, among the four `(R, ±t)` factorizations of `e`, the one under which most
/// correspondences triangulate in front of both cameras. Returns camera motion
/// `(R_c, T_c)` with `‖T_c‖ = 1`.
pub fn decompose_essential(
    e: &Matrix3<f64>,
    corr: &CorrespondenceSet,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
) -> Result<RigidTransform> {
    if !(e.norm() > 0.0) || !e.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("essential matrix is zero or non-finite".into()));
    }
    let e = canonical_essential(e);
    let (mut u, s, mut v) = sorted_svd(&e);
    if (s[0] - s[1]).abs() > 1e-3 * s[0] || s[2] > 1e-3 * s[0] {
        return Err(Error::InvalidInput(format!(
            "matrix lacks essential structure, singular values {:?}",
            s.as_slice()
        )));
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v.determinant() < 0.0 {
        v = -v;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let ra = u * w * v.transpose();
    let rb = u * w.transpose() * v.transpose();
    let t: Vector3<f64> = u.column(2).into();
    let candidates = [(ra, t), (ra, -t), (rb, t), (rb, -t)];

    let total = corr.len();
    let mut best: Option<(usize, RigidTransform)> = None;
    for (r, t) in candidates {
        // candidate maps frame-0 points to frame-1 points
        let motion01 = RigidTransform::from_approx(r, t);
        let votes = corr
            .pairs
            .iter()
            .filter(|(p0, p1)| {
                triangulate(*p0, *p1, &motion01, k0, k1, TriangulationMethod::Midpoint).is_ok()
            })
            .count();
        if best.as_ref().is_none_or(|(b, _)| votes > *b) {
            best = Some((votes, motion01));
        }
    }
    let (votes, motion01) = best.expect("four candidates");
    if 2 * votes <= total {
        return Err(Error::CheiralityFailure { votes, total });
    }
    let ego = motion01.inverse();
    let t = ego.translation / ego.translation.norm();
    Ok(ego.with_translation(t))
}

/// Rotation-only homography `H = K0·R·K1⁻¹` fitted to correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationHomography {
    pub rotation: Matrix3<f64>,
    pub inlier_mask: Vec<bool>,
    pub n_inliers: usize,
    pub residual_median: f64,
}

/// Transfer distance in frame-0 normalized coordinates of `x1` mapped by `r`.
fn rotation_residual(r: &Matrix3<f64>, x0: &Vector3<f64>, x1: &Vector3<f64>) -> f64 {
    let q = r * x1;
    if !(q.z > 0.0) {
        return f64::INFINITY;
    }
    (x0.x / x0.z - q.x / q.z).hypot(x0.y / x0.z - q.y / q.z)
}

/// Rotation aligning bearings `b1` onto `b0` in the least-squares sense.
fn kabsch(b0: &[Vector3<f64>], b1: &[Vector3<f64>], w: Option<&[f64]>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (k, (a, b)) in b0.iter().zip(b1).enumerate() {
        let wk = w.map_or(1.0, |w| w[k]);
        m += wk * a.normalize() * b.normalize().transpose();
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Gauss-Newton refinement of a rotation on transfer residuals.
fn refine_rotation(r: &Matrix3<f64>, x0: &[Vector3<f64>], x1: &[Vector3<f64>]) -> Matrix3<f64> {
    let stack = |r: &Matrix3<f64>| -> Vec<f64> {
        x0.iter()
            .zip(x1)
            .flat_map(|(a, b)| {
                let q = r * b;
                [a.x / a.z - q.x / q.z, a.y / a.z - q.y / q.z]
            })
            .collect()
    };
    let cost = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut current = *r;
    let mut res = stack(&current);
    for _ in 0..10 {
        let h = 1e-7;
        let mut jt_j = nalgebra::Matrix3::<f64>::zeros();
        let mut jt_r = Vector3::<f64>::zeros();
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let mut d = Vector3::zeros();
                d[k] = h;
                let plus = stack(&(Rotation3::new(d).into_inner() * current));
                let minus = stack(&(Rotation3::new(-d).into_inner() * current));
                plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect()
            })
            .collect();
        for i in 0..res.len() {
            for a in 0..3 {
                jt_r[a] += cols[a][i] * res[i];
                for b in 0..3 {
                    jt_j[(a, b)] += cols[a][i] * cols[b][i];
                }
            }
        }
        let Some(step) = jt_j.lu().solve(&(-jt_r)) else { break };
        let next = Rotation3::new(step).into_inner() * current;
        let next_res = stack(&next);
        if cost(&next_res) >= cost(&res) {
            break;
        }
        current = next;
        res = next_res;
        if step.norm() < 1e-14 {
            break;
        }
    }
    current
}

/// Fits a rotation-only homography with two-point RANSAC followed by
/// Gauss-Newton on inlier transfer residuals.
pub fn fit_rotation_homography(
    corr: &CorrespondenceSet,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
    threshold: f64,
    seed: u64,
) -> RotationHomography {
    const ITERATIONS: usize = 200;
    // separate stream range from the essential RANSAC
    const STREAM_OFFSET: usize = 1 << 32;
    let n = corr.len();
    let (x0, x1) = corr.normalized(k0, k1);
    let score = |r: &Matrix3<f64>| -> (Vec<bool>, usize, f64) {
        let res: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| rotation_residual(r, a, b)).collect();
        let mask: Vec<bool> = res.iter().map(|&v| v < threshold).collect();
        let count = mask.iter().filter(|&&b| b).count();
        (mask, count, median(&res).unwrap_or(f64::INFINITY))
    };
    let best = if n >= 2 {
        (0..ITERATIONS)
            .into_par_iter()
            .map(|it| {
                let mut rng = iteration_rng(seed, STREAM_OFFSET + it);
                let idx = sample(&mut rng, n, 2);
                let b0: Vec<_> = idx.iter().map(|i| x0[i]).collect();
                let b1: Vec<_> = idx.iter().map(|i| x1[i]).collect();
                let r = kabsch(&b0, &b1, None);
                let (_, count, med) = score(&r);
                (count, med, it, r)
            })
            .reduce_with(|a, b| {
                let a_wins = a.0 > b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 <= b.2)));
                if a_wins {
                    a
                } else {
                    b
                }
            })
            .map(|(_, _, _, r)| r)
            .unwrap_or_else(Matrix3::identity)
    } else {
        Matrix3::identity()
    };
    let (mask, _, _) = score(&best);
    let in0: Vec<_> = x0.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    let in1: Vec<_> = x1.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| *v).collect();
    let mut rotation = best;
    if in0.len() >= 2 {
        rotation = refine_rotation(&kabsch(&in0, &in1, None), &in0, &in1);
        if score(&rotation).1 < score(&best).1 {
            rotation = best;
        }
    }
    let (inlier_mask, n_inliers, residual_median) = score(&rotation);
    RotationHomography {
        rotation,
        inlier_mask,
        n_inliers,
        residual_median,
    }
}

fn detect_degenerate_counts(essential_inliers: usize, homography_inliers: usize, ratio: f64) -> bool {
    homography_inliers as f64 >= ratio * essential_inliers as f64
}

/// Model-selection test: the translation is treated as degenerate when the
/// rotation-only homography explains at least `ratio` (0.95 by default) as many
/// correspondences as the essential matrix, at the same threshold.
pub fn detect_degenerate_translation(
    corr: &CorrespondenceSet,
    essential: &Matrix3<f64>,
    rotation: &Matrix3<f64>,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
    threshold: f64,
    ratio: f64,
) -> bool {
    let (x0, x1) = corr.normalized(k0, k1);
    let e_count = x0
        .iter()
        .zip(&x1)
        .filter(|(a, b)| sampson_distance(essential, a, b) < threshold)
        .count();
    let h_count = x0
        .iter()
        .zip(&x1)
        .filter(|(a, b)| rotation_residual(rotation, a, b) < threshold)
        .count();
    detect_degenerate_counts(e_count, h_count, ratio)
}
