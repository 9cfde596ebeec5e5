//! Minimal and linear essential-matrix solvers in normalized coordinates.
//!
//! All solvers use the convention `x1ᵀ · E · x0 = 0` where `x0`, `x1` are
//! normalized homogeneous rays (`K⁻¹ p̃`) in frames 0 and 1.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};

/// Number of monomials of degree ≤ 3 in (x, y, z).
const N_MONO: usize = 20;

/// Monomial exponents `(x, y, z)` in the column order used by the elimination:
/// the ten cubic monomials first, then the action-matrix basis
/// `x², xy, xz, y², yz, z², x, y, z, 1`.
const MONOMIALS: [(u8, u8, u8); N_MONO] = [
    (3, 0, 0),
    (2, 1, 0),
    (2, 0, 1),
    (1, 2, 0),
    (1, 1, 1),
    (1, 0, 2),
    (0, 3, 0),
    (0, 2, 1),
    (0, 1, 2),
    (0, 0, 3),
    (2, 0, 0),
    (1, 1, 0),
    (1, 0, 1),
    (0, 2, 0),
    (0, 1, 1),
    (0, 0, 2),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
];

fn monomial_index(e: (u8, u8, u8)) -> usize {
    MONOMIALS
        .iter()
        .position(|&m| m == e)
        .expect("monomial degree exceeds 3")
}

/// Polynomial of total degree ≤ 3 in (x, y, z).
#[derive(Clone, Copy)]
struct Poly([f64; N_MONO]);

impl Poly {
    fn zero() -> Self {
        Poly([0.0; N_MONO])
    }

    fn linear(x: f64, y: f64, z: f64, c: f64) -> Self {
        let mut p = Self::zero();
        p.0[16] = x;
        p.0[17] = y;
        p.0[18] = z;
        p.0[19] = c;
        p
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let ea = MONOMIALS[i];
            for (j, &b) in other.0.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let eb = MONOMIALS[j];
                let e = (ea.0 + eb.0, ea.1 + eb.1, ea.2 + eb.2);
                out.0[monomial_index(e)] += a * b;
            }
        }
        out
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut out = *self;
        for (o, b) in out.0.iter_mut().zip(other.0.iter()) {
            *o += b;
        }
        out
    }

    fn scale(&self, s: f64) -> Poly {
        let mut out = *self;
        out.0.iter_mut().for_each(|v| *v *= s);
        out
    }
}

/// Candidate essential matrices from exactly five correspondences of normalized rays.
///
/// Returns up to ten real solutions, each scaled to unit Frobenius norm. An empty
/// list signals a degenerate configuration.
pub fn five_point(x0: &[Vector3<f64>], x1: &[Vector3<f64>]) -> Vec<Matrix3<f64>> {
    assert_eq!(x0.len(), 5, "five_point needs exactly five correspondences");
    assert_eq!(x1.len(), 5);

    // Epipolar constraints on the row-major entries of E, padded to 9x9 so the SVD
    // yields a full right basis.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for k in 0..5 {
        let (p, q) = (x0[k] / x0[k].z, x1[k] / x1[k].z);
        for i in 0..3 {
            for j in 0..3 {
                a[(k, 3 * i + j)] = q[i] * p[j];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = match svd.v_t {
        Some(vt) => vt,
        None => return Vec::new(),
    };
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s_max = svd.singular_values[order[0]];
    // rank < 5 (repeated or collinear rays) leaves the constraints under-determined
    if !(s_max > 0.0) || svd.singular_values[order[4]] < 1e-10 * s_max {
        return Vec::new();
    }
    let basis: Vec<Matrix3<f64>> = order[5..]
        .iter()
        .map(|&r| Matrix3::from_fn(|i, j| vt[(r, 3 * i + j)]))
        .collect();
    let (bx, by, bz, bw) = (basis[0], basis[1], basis[2], basis[3]);

    let e: [[Poly; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| Poly::linear(bx[(i, j)], by[(i, j)], bz[(i, j)], bw[(i, j)]))
    });

    let mut constraints = DMatrix::<f64>::zeros(10, N_MONO);
    // det(E) = 0
    let minor = |r0: usize, r1: usize, c0: usize, c1: usize| {
        e[r0][c0].mul(&e[r1][c1]).add(&e[r0][c1].mul(&e[r1][c0]).scale(-1.0))
    };
    let det = e[0][0]
        .mul(&minor(1, 2, 1, 2))
        .add(&e[0][1].mul(&minor(1, 2, 0, 2)).scale(-1.0))
        .add(&e[0][2].mul(&minor(1, 2, 0, 1)));
    for (c, v) in det.0.iter().enumerate() {
        constraints[(0, c)] = *v;
    }
    // 2·E·Eᵀ·E − tr(E·Eᵀ)·E = 0
    let eet: [[Poly; 3]; 3] = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            (0..3).fold(Poly::zero(), |acc, k| acc.add(&e[i][k].mul(&e[j][k])))
        })
    });
    let trace = eet[0][0].add(&eet[1][1]).add(&eet[2][2]);
    for i in 0..3 {
        for j in 0..3 {
            let mut p = (0..3).fold(Poly::zero(), |acc, k| acc.add(&eet[i][k].mul(&e[k][j])));
            p = p.scale(2.0).add(&trace.mul(&e[i][j]).scale(-1.0));
            for (c, v) in p.0.iter().enumerate() {
                constraints[(1 + 3 * i + j, c)] = *v;
            }
        }
    }

    if !gauss_jordan_first_block(&mut constraints, 10) {
        return Vec::new();
    }

    // Action matrix for multiplication by x on the quotient-ring basis
    // b = [x², xy, xz, y², yz, z², x, y, z, 1]; it satisfies M·b = x·b.
    let mut action = SMatrix::<f64, 10, 10>::zeros();
    for r in 0..6 {
        for c in 0..10 {
            action[(r, c)] = -constraints[(r, 10 + c)];
        }
    }
    action[(6, 0)] = 1.0; // x·x = x²
    action[(7, 1)] = 1.0; // x·y = xy
    action[(8, 2)] = 1.0; // x·z = xz
    action[(9, 6)] = 1.0; // x·1 = x

    let eigenvalues = action.complex_eigenvalues();
    let mut out: Vec<Matrix3<f64>> = Vec::new();
    for ev in eigenvalues.iter() {
        if !ev.re.is_finite() || ev.im.abs() > 1e-8 * (1.0 + ev.re.abs()) {
            continue;
        }
        let shifted = action - SMatrix::<f64, 10, 10>::identity() * ev.re;
        let svd = shifted.svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let (min_idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let v = vt.row(min_idx);
        if v[9].abs() < 1e-12 {
            continue;
        }
        let (x, y, z) = (v[6] / v[9], v[7] / v[9], v[8] / v[9]);
        let mut em = bx * x + by * y + bz * z + bw;
        let n = em.norm();
        if !(n > 0.0) || !n.is_finite() {
            continue;
        }
        em /= n;
        // repeated roots produce duplicates; keep one representative
        if out.iter().any(|o| (o - em).norm() < 1e-9 || (o + em).norm() < 1e-9) {
            continue;
        }
        out.push(em);
    }
    out
}

/// In-place Gauss-Jordan elimination reducing the leading `n × n` block to the
/// identity, with partial pivoting. Returns false if the block is singular.
fn gauss_jordan_first_block(m: &mut DMatrix<f64>, n: usize) -> bool {
    let cols = m.ncols();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(scale > 0.0) {
        return false;
    }
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if pivot_abs < 1e-14 * scale {
            return false;
        }
        m.swap_rows(col, pivot_row);
        let p = m[(col, col)];
        for c in 0..cols {
            m[(col, c)] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[(r, col)];
            if f != 0.0 {
                for c in 0..cols {
                    m[(r, c)] -= f * m[(col, c)];
                }
            }
        }
    }
    true
}

/// Similarity normalizing a point set to zero mean and mean distance √2.
fn hartley_normalizer(points: &[Vector3<f64>], weights: &[f64]) -> Matrix3<f64> {
    let wsum: f64 = weights.iter().sum();
    let (mut mx, mut my) = (0.0, 0.0);
    for (p, &w) in points.iter().zip(weights) {
        mx += w * p.x / p.z;
        my += w * p.y / p.z;
    }
    mx /= wsum;
    my /= wsum;
    let mut d = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        d += w * (p.x / p.z - mx).hypot(p.y / p.z - my);
    }
    d /= wsum;
    let s = if d > 1e-15 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Weighted linear (normalized eight-point) estimate, projected onto the essential
/// manifold. Needs at least eight correspondences with positive weight.
pub fn eight_point(
    x0: &[Vector3<f64>],
    x1: &[Vector3<f64>],
    weights: Option<&[f64]>,
) -> Option<Matrix3<f64>> {
    let n = x0.len();
    assert_eq!(n, x1.len());
    let ones;
    let w = match weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    if w.iter().filter(|&&v| v > 0.0).count() < 8 {
        return None;
    }
    let t0 = hartley_normalizer(x0, w);
    let t1 = hartley_normalizer(x1, w);
    let rows = n.max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for k in 0..n {
        let sw = w[k].max(0.0).sqrt();
        let p = t0 * (x0[k] / x0[k].z);
        let q = t1 * (x1[k] / x1[k].z);
        for i in 0..3 {
            for j in 0..3 {
                a[(k, 3 * i + j)] = sw * q[i] * p[j];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let e_hat = Matrix3::from_fn(|i, j| vt[(min_idx, 3 * i + j)]);
    let e = t1.transpose() * e_hat * t0;
    let e = enforce_essential(&e)?;
    e.iter().all(|v| v.is_finite()).then_some(e)
}

/// Projects onto matrices with singular values `(1, 1, 0)`.
pub fn enforce_essential(e: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if !(svd.singular_values[idx[0]] > 0.0) {
        return None;
    }
    let mut out = Matrix3::zeros();
    for &k in &idx[..2] {
        out += u.column(k) * vt.row(k);
    }
    Some(out)
}

/// Sampson distance (square root of the first-order geometric error) of a
/// correspondence under `e`, in normalized units.
pub fn sampson_distance(e: &Matrix3<f64>, x0: &Vector3<f64>, x1: &Vector3<f64>) -> f64 {
    let p = x0 / x0.z;
    let q = x1 / x1.z;
    crate::geometry::sampson_error(e, &p, &q, 0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle_between, essential_from_motion, RigidTransform};
    use rand::{Rng, SeedableRng};

    /// Random static scene: returns normalized rays and the true ego motion.
    fn scene(seed: u64, n: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, RigidTransform) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ego = RigidTransform::from_axis_angle(
            Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.0)),
        );
        let inv = ego.inverse();
        let mut x0 = Vec::new();
        let mut x1 = Vec::new();
        while x0.len() < n {
            let p0 = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0), rng.random_range(4.0..20.0));
            let p1 = inv.apply(&p0);
            if p1.z < 0.5 {
                continue;
            }
            x0.push(p0 / p0.z);
            x1.push(p1 / p1.z);
        }
        (x0, x1, ego)
    }

    fn residual(e: &Matrix3<f64>, x0: &[Vector3<f64>], x1: &[Vector3<f64>]) -> f64 {
        x0.iter().zip(x1).map(|(a, b)| (b.transpose() * e * a)[0].abs()).fold(0.0, f64::max)
    }

    #[test]
    fn five_point_recovers_true_essential() {
        for seed in 0..20 {
            let (x0, x1, ego) = scene(seed, 5);
            let sols = five_point(&x0, &x1);
            assert!(!sols.is_empty() && sols.len() <= 10, "seed {seed}: {} solutions", sols.len());
            let truth = essential_from_motion(&ego.rotation, &ego.translation).unwrap();
            let truth = truth / truth.norm();
            let best = sols
                .iter()
                .map(|e| (e - truth).norm().min((e + truth).norm()))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "seed {seed}: closest candidate off by {best}");
            for e in &sols {
                assert!(residual(e, &x0, &x1) < 1e-8);
                let mut s: Vec<f64> = e.singular_values().iter().copied().collect();
                s.sort_by(|a, b| b.total_cmp(a));
                assert!((s[0] - s[1]).abs() <= 1e-6 * s[0], "singular values {s:?}");
                assert!(s[2] <= 1e-6 * s[0]);
            }
        }
    }

    #[test]
    fn five_point_rejects_duplicated_points() {
        let (mut x0, mut x1, _) = scene(3, 5);
        x0[1] = x0[0];
        x1[1] = x1[0];
        x0[3] = x0[2];
        x1[3] = x1[2];
        assert!(five_point(&x0, &x1).is_empty());
    }

    #[test]
    fn eight_point_exact_on_noise_free_data() {
        let (x0, x1, ego) = scene(11, 40);
        let e = eight_point(&x0, &x1, None).unwrap();
        assert!(residual(&e, &x0, &x1) < 1e-10);
        // translation direction is the right null vector of E = R_cᵀ[T_c]×
        let t = e.svd(false, true).v_t.unwrap();
        let s = e.singular_values();
        let k = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        let null = Vector3::new(t[(k, 0)], t[(k, 1)], t[(k, 2)]);
        let ang = angle_between(&null, &ego.translation).min(angle_between(&-null, &ego.translation));
        assert!(ang.to_degrees() < 1e-6);
    }

    #[test]
    fn eight_point_needs_eight_points() {
        let (x0, x1, _) = scene(1, 7);
        assert!(eight_point(&x0, &x1, None).is_none());
    }
}
