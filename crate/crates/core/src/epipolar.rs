//! Calibrated two-view geometry: essential matrix estimation, decomposition and
//! positive-depth pose selection.
//!
//! Conventions follow [`crate::geometry`]: a match pairs a point `x_c` on the
//! normalized plane of the current camera with `x_d` in the desired camera, and
//! the recovered pose maps current-frame points into the desired frame,
//! `Z_d x_d = Z_c R x_c + t`. The essential matrix satisfies `x_dᵀ E x_c = 0`
//! with `E = t^ R`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{skew, vee, Pose};

/// Minimum number of correspondences for the linear 8-point estimator.
pub const MIN_MATCHES: usize = 8;

/// Triangulation gives up above this condition number of the 2x2 normal matrix.
pub const MAX_TRIANGULATION_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpipolarError {
    #[error("need at least {MIN_MATCHES} matches, got {0}")]
    InsufficientMatches(usize),
    #[error("match {0} is not on the normalized image plane (third component must be 1)")]
    NotNormalized(usize),
    #[error("match weights: expected {expected}, got {actual}")]
    WeightCount { expected: usize, actual: usize },
    #[error("correspondences are degenerate for the 8-point estimator")]
    DegenerateConfiguration,
    #[error("essential matrix is rank deficient (second singular value {0:e})")]
    RankDeficient(f64),
    #[error("no pose hypothesis puts enough points in front of both cameras (best fraction {0})")]
    NoValidCandidate(f64),
    #[error("triangulation rays are nearly parallel (condition number {0:e})")]
    IllConditioned(f64),
}

/// Correspondences between the current and desired normalized image planes.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MatchSet {
    pairs: Vec<(Vector3<f64>, Vector3<f64>)>,
    weights: Option<Vec<f64>>,
}

impl MatchSet {
    pub fn new(pairs: Vec<(Vector3<f64>, Vector3<f64>)>) -> Result<Self, EpipolarError> {
        for (i, (xc, xd)) in pairs.iter().enumerate() {
            if xc.z != 1.0 || xd.z != 1.0 {
                return Err(EpipolarError::NotNormalized(i));
            }
        }
        Ok(Self {
            pairs,
            weights: None,
        })
    }

    /// Builds from `(x, y)` coordinates on the two normalized planes.
    pub fn from_planar(pairs: impl IntoIterator<Item = ([f64; 2], [f64; 2])>) -> Self {
        Self {
            pairs: pairs
                .into_iter()
                .map(|(c, d)| (Vector3::new(c[0], c[1], 1.0), Vector3::new(d[0], d[1], 1.0)))
                .collect(),
            weights: None,
        }
    }

    /// Attaches per-match weights, clamped to `[0, 1]`.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, EpipolarError> {
        if weights.len() != self.pairs.len() {
            return Err(EpipolarError::WeightCount {
                expected: self.pairs.len(),
                actual: weights.len(),
            });
        }
        self.weights = Some(weights.into_iter().map(|w| w.clamp(0.0, 1.0)).collect());
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Vector3<f64>, Vector3<f64>)] {
        &self.pairs
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }
}

/// An essential matrix, always stored on the essential manifold (singular values `(σ, σ, 0)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Nearest essential matrix in Frobenius norm: the two largest singular
    /// values are replaced by their mean and the third is zeroed.
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let s = svd.singular_values;
        let sigma = 0.5 * (s[0] + s[1]);
        let d = Matrix3::from_diagonal(&Vector3::new(sigma, sigma, 0.0));
        Self(u * d * v_t)
    }

    /// `t^ R`; already essential.
    pub fn from_pose(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        Self(skew(translation) * rotation)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0 * k)
    }

    pub fn singular_values(&self) -> Vector3<f64> {
        self.0.singular_values()
    }

    /// Algebraic epipolar residual `x_dᵀ E x_c`.
    pub fn residual(&self, xc: &Vector3<f64>, xd: &Vector3<f64>) -> f64 {
        xd.dot(&(self.0 * xc))
    }
}

fn rank2(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let s = svd.singular_values;
    svd.u.unwrap() * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], 0.0)) * svd.v_t.unwrap()
}

/// Isotropic normalization: centroid to the origin, mean distance √2.
fn hartley_transform<'a>(points: impl Iterator<Item = &'a Vector3<f64>> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return None;
    }
    let s = core::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Normalized 8-point estimate of the essential matrix.
///
/// The result is projected onto the essential manifold and scaled to unit
/// singular values, so any translation decomposed from it is a direction.
pub fn estimate_essential(matches: &MatchSet) -> Result<EssentialMatrix, EpipolarError> {
    estimate_essential_with(matches, true)
}

/// [`estimate_essential`] with Hartley normalization optionally disabled.
pub fn estimate_essential_with(matches: &MatchSet, hartley: bool) -> Result<EssentialMatrix, EpipolarError> {
    let n = matches.len();
    if n < MIN_MATCHES {
        return Err(EpipolarError::InsufficientMatches(n));
    }
    let (tc, td) = if hartley {
        let tc = hartley_transform(matches.pairs.iter().map(|p| &p.0));
        let td = hartley_transform(matches.pairs.iter().map(|p| &p.1));
        match (tc, td) {
            (Some(tc), Some(td)) => (tc, td),
            _ => return Err(EpipolarError::DegenerateConfiguration),
        }
    } else {
        (Matrix3::identity(), Matrix3::identity())
    };

    // Zero rows pad the system to 9 rows so the SVD exposes a full right basis.
    let mut a = DMatrix::<f64>::zeros(n.max(9), 9);
    for (i, (xc, xd)) in matches.pairs.iter().enumerate() {
        let w = matches.weight(i);
        let c = tc * xc;
        let d = td * xd;
        for r in 0..3 {
            for k in 0..3 {
                a[(i, 3 * r + k)] = w * d[r] * c[k];
            }
        }
    }
    let svd = a.svd(false, true);
    let s = &svd.singular_values;
    if !(s[0] > 0.0) || (s[7] - s[8]).abs() <= 1e-12 * s[0] {
        return Err(EpipolarError::DegenerateConfiguration);
    }
    let v_t = svd.v_t.unwrap();
    let e = v_t.row(8);
    let e_norm = Matrix3::new(e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8]);
    // Hartley coordinates only preserve rank, not equal singular values.
    let e = td.transpose() * rank2(&e_norm) * tc;
    let e = EssentialMatrix::project(&e);
    let sigma = e.singular_values()[0];
    if !(sigma > 0.0) {
        return Err(EpipolarError::DegenerateConfiguration);
    }
    Ok(e.scaled(1.0 / sigma))
}

/// The four `(R, t)` hypotheses encoded by an essential matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseCandidates {
    /// Ordered as `(R1, t1)`, `(R2, t2)`, `(R1, t2)`, `(R2, t1)` with `t2 = -t1`.
    pub poses: [Pose; 4],
}

impl PoseCandidates {
    pub fn iter(&self) -> impl Iterator<Item = &Pose> {
        self.poses.iter()
    }
}

fn rot_z_quarter(sign: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, -sign, 0.0, sign, 0.0, 0.0, 0.0, 0.0, 1.0)
}

/// Splits `E = U Σ Vᵀ` into the rotation/translation pairs
/// `t1^ = U Rz(π/2) Σ Uᵀ, R1 = U Rz(π/2)ᵀ Vᵀ` and the same with `-π/2`,
/// then adds the sign-flipped translations. `‖t‖` is the mean of the two
/// nonzero singular values.
pub fn decompose_essential(e: &EssentialMatrix) -> Result<PoseCandidates, EpipolarError> {
    let svd = e.matrix().svd(true, true);
    let s = svd.singular_values;
    if !(s[1] >= 1e-12 * s[0].max(1.0)) {
        return Err(EpipolarError::RankDeficient(s[1]));
    }
    let mut u = svd.u.unwrap();
    let mut v = svd.v_t.unwrap().transpose();
    // The third singular vectors multiply σ3 = 0, so flipping them keeps E.
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v.determinant() < 0.0 {
        v.column_mut(2).neg_mut();
    }
    let sigma = 0.5 * (s[0] + s[1]);
    let sig = Matrix3::from_diagonal(&Vector3::new(sigma, sigma, 0.0));
    let mut pairs = [(Matrix3::identity(), Vector3::zeros()); 2];
    for (slot, sign) in pairs.iter_mut().zip([1.0, -1.0]) {
        let rz = rot_z_quarter(sign);
        let t_hat = u * rz * sig * u.transpose();
        let r = u * rz.transpose() * v.transpose();
        *slot = (r, vee(&t_hat));
    }
    let [(r1, t1), (r2, t2)] = pairs;
    Ok(PoseCandidates {
        poses: [
            Pose::new(r1, t1),
            Pose::new(r2, t2),
            Pose::new(r1, t2),
            Pose::new(r2, t1),
        ],
    })
}

/// Least-squares depths `(Z_c, Z_d)` solving `Z_d x_d = Z_c R x_c + t`.
pub fn triangulate(xc: &Vector3<f64>, xd: &Vector3<f64>, desired_from_current: &Pose) -> Result<(f64, f64), EpipolarError> {
    let a = desired_from_current.rotation * xc;
    let b = -xd;
    let t = desired_from_current.translation;
    let (aa, ab, bb) = (a.dot(&a), a.dot(&b), b.dot(&b));
    let half_trace = 0.5 * (aa + bb);
    let det = aa * bb - ab * ab;
    let lambda_max = half_trace + (half_trace * half_trace - det).max(0.0).sqrt();
    let lambda_min = det / lambda_max;
    let cond = if lambda_min > 0.0 { lambda_max / lambda_min } else { f64::INFINITY };
    if !(cond <= MAX_TRIANGULATION_CONDITION) {
        return Err(EpipolarError::IllConditioned(cond));
    }
    // Normal equations [aa ab; ab bb] z = -[a·t; b·t].
    let (ra, rb) = (-a.dot(&t), -b.dot(&t));
    let zc = (bb * ra - ab * rb) / det;
    let zd = (aa * rb - ab * ra) / det;
    Ok((zc, zd))
}

/// Picks the hypothesis with the most matches in front of both cameras.
///
/// Ties go to the larger mean of `min(Z_c, Z_d)`. Returns the pose and the
/// fraction of matches with positive depth in both views.
pub fn select_pose(candidates: &PoseCandidates, matches: &MatchSet) -> Result<(Pose, f64), EpipolarError> {
    if matches.is_empty() {
        return Err(EpipolarError::NoValidCandidate(0.0));
    }
    let mut best: Option<(usize, f64, Pose)> = None;
    for pose in candidates.iter() {
        let mut count = 0usize;
        let mut margin = 0.0;
        for (xc, xd) in matches.pairs() {
            if let Ok((zc, zd)) = triangulate(xc, xd, pose) {
                if zc > 0.0 && zd > 0.0 {
                    count += 1;
                }
                margin += zc.min(zd);
            }
        }
        margin /= matches.len() as f64;
        let better = match &best {
            None => true,
            Some((c, m, _)) => count > *c || (count == *c && margin > *m),
        };
        if better {
            best = Some((count, margin, *pose));
        }
    }
    let (count, _, pose) = best.expect("four candidates");
    let fraction = count as f64 / matches.len() as f64;
    if fraction < 0.5 {
        return Err(EpipolarError::NoValidCandidate(fraction));
    }
    Ok((pose, fraction))
}

/// Estimate, decompose and select in one call. The translation has unit norm.
pub fn recover_pose(matches: &MatchSet) -> Result<(Pose, f64), EpipolarError> {
    let e = estimate_essential(matches)?;
    let candidates = decompose_essential(&e)?;
    select_pose(&candidates, matches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, rotation_distance};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Scene {
        pose: Pose,
        points: Vec<Vector3<f64>>,
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 0.1 && v.norm() <= 1.0 {
                return v.normalize();
            }
        }
    }

    /// Points in front of both cameras for a random relative pose.
    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Scene {
        let r = exp_so3(&(random_unit(rng) * rng.random_range(0.05..0.8)));
        let t = random_unit(rng) * rng.random_range(0.2..1.0);
        let pose = Pose::new(r, t);
        let mut points = Vec::new();
        while points.len() < n {
            let p = Vector3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(2.0..6.0),
            );
            if pose.transform_point(&p).z > 0.5 {
                points.push(p);
            }
        }
        Scene { pose, points }
    }

    fn matches_for(pose: &Pose, points: &[Vector3<f64>]) -> MatchSet {
        let pairs = points
            .iter()
            .map(|p| {
                let d = pose.transform_point(p);
                (p / p.z, d / d.z)
            })
            .collect();
        MatchSet::new(pairs).unwrap()
    }

    #[test]
    fn pure_translation_essential_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pose = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let points: Vec<_> = (0..20)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0)))
            .collect();
        let m = matches_for(&pose, &points);
        let e = estimate_essential(&m).unwrap();
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let sign = if e.matrix()[(2, 1)] > 0.0 { 1.0 } else { -1.0 };
        let scale = expected.norm() / e.matrix().norm();
        let scaled: Matrix3<f64> = e.matrix() * (sign * scale);
        assert!((scaled - expected).norm() < 1e-10);
        for (xc, xd) in m.pairs() {
            assert!(e.residual(xc, xd).abs() < 1e-10);
        }
    }

    #[test]
    fn random_scenes_have_tiny_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let scene = random_scene(&mut rng, 30);
            let m = matches_for(&scene.pose, &scene.points);
            let e = estimate_essential(&m).unwrap();
            let max = m.pairs().iter().map(|(c, d)| e.residual(c, d).abs()).fold(0.0, f64::max);
            assert!(max < 1e-9, "max residual {max}");
            let s = e.singular_values();
            assert!((s[0] - s[1]).abs() < 1e-9 * s[0] && s[2].abs() < 1e-9 * s[0]);
        }
    }

    #[test]
    fn residual_unaffected_by_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let scene = random_scene(&mut rng, 40);
            let m = matches_for(&scene.pose, &scene.points);
            for hartley in [true, false] {
                let e = estimate_essential_with(&m, hartley).unwrap();
                let max = m.pairs().iter().map(|(c, d)| e.residual(c, d).abs()).fold(0.0, f64::max);
                assert!(max < 1e-9);
            }
        }
    }

    #[test]
    fn too_few_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let scene = random_scene(&mut rng, 7);
        let m = matches_for(&scene.pose, &scene.points);
        assert_eq!(estimate_essential(&m), Err(EpipolarError::InsufficientMatches(7)));
    }

    #[test]
    fn coplanar_scene_is_degenerate() {
        // All points on one plane, pure rotation about the centers: null space > 1.
        let r = exp_so3(&Vector3::new(0.1, 0.2, 0.0));
        let pose = Pose::from_rotation(r);
        let points: Vec<_> = (0..12)
            .map(|i| Vector3::new((i % 4) as f64 * 0.3 - 0.4, (i / 4) as f64 * 0.3 - 0.3, 3.0))
            .collect();
        let m = matches_for(&pose, &points);
        assert_eq!(estimate_essential(&m), Err(EpipolarError::DegenerateConfiguration));
    }

    #[test]
    fn rejects_unnormalized_points() {
        let err = MatchSet::new(vec![(Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, 1.0))]);
        assert_eq!(err, Err(EpipolarError::NotNormalized(0)));
    }

    #[test]
    fn decomposition_contains_forward_motion() {
        let e = EssentialMatrix::from_pose(&Matrix3::identity(), &Vector3::new(0.0, 0.0, 1.0));
        let c = decompose_essential(&e).unwrap();
        let hits = c
            .iter()
            .filter(|p| (p.rotation - Matrix3::identity()).norm() < 1e-9 && (p.translation - Vector3::z()).norm() < 1e-9)
            .count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn decomposition_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let scene = random_scene(&mut rng, 1);
        let e = EssentialMatrix::from_pose(&scene.pose.rotation, &scene.pose.translation);
        let a = decompose_essential(&e).unwrap();
        let b = decompose_essential(&e.scaled(5.0)).unwrap();
        for pb in b.iter() {
            let matched = a.iter().any(|pa| {
                (pa.rotation - pb.rotation).norm() < 1e-9 && (pa.translation * 5.0 - pb.translation).norm() < 1e-9
            });
            assert!(matched);
        }
    }

    #[test]
    fn decomposition_exactly_one_candidate_is_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let scene = random_scene(&mut rng, 1);
            let (r, t) = (scene.pose.rotation, scene.pose.translation);
            let c = decompose_essential(&EssentialMatrix::from_pose(&r, &t)).unwrap();
            let hits = c
                .iter()
                .filter(|p| (p.rotation - r).norm() < 1e-9 && (p.translation - t).norm() < 1e-9)
                .count();
            assert_eq!(hits, 1);
            for p in c.iter() {
                assert!((p.rotation.transpose() * p.rotation - Matrix3::identity()).norm() < 1e-9);
                assert!((p.rotation.determinant() - 1.0).abs() < 1e-9);
                assert!((p.translation.norm() - t.norm()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_deficient_essential() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0));
        assert!(matches!(
            decompose_essential(&EssentialMatrix(m)),
            Err(EpipolarError::RankDeficient(_))
        ));
    }

    #[test]
    fn triangulate_examples() {
        let pose = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let p = Vector3::new(0.0, 0.0, 2.0);
        let d = pose.transform_point(&p);
        let (zc, zd) = triangulate(&(p / p.z), &(d / d.z), &pose).unwrap();
        assert!((zc - 2.0).abs() < 1e-10 && (zd - 2.0).abs() < 1e-10);

        let still = Pose::identity();
        assert!(matches!(
            triangulate(&(p / p.z), &(p / p.z), &still),
            Err(EpipolarError::IllConditioned(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..100 {
            let scene = random_scene(&mut rng, 10);
            for p in &scene.points {
                let d = scene.pose.transform_point(p);
                let (zc, zd) = triangulate(&(p / p.z), &(d / d.z), &scene.pose).unwrap();
                assert!((zc - p.z).abs() < 1e-8 * p.z);
                assert!((zd - d.z).abs() < 1e-8 * d.z);
            }
        }
    }

    #[test]
    fn select_recovers_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let scene = random_scene(&mut rng, 30);
            let m = matches_for(&scene.pose, &scene.points);
            let (pose, fraction) = recover_pose(&m).unwrap();
            assert_eq!(fraction, 1.0);
            assert!(rotation_distance(&pose.rotation, &scene.pose.rotation) < 1e-7);
            let cos = pose.translation.normalize().dot(&scene.pose.translation.normalize());
            assert!(cos.min(1.0).acos() < 1e-7);
        }
    }

    #[test]
    fn select_survives_ten_percent_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let scene = random_scene(&mut rng, 90);
        let mut pairs = matches_for(&scene.pose, &scene.points).pairs().to_vec();
        for _ in 0..10 {
            let a = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 1.0);
            let b = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 1.0);
            pairs.push((a, b));
        }
        let m = MatchSet::new(pairs).unwrap();
        let e = EssentialMatrix::from_pose(&scene.pose.rotation, &scene.pose.translation);
        let (pose, fraction) = select_pose(&decompose_essential(&e).unwrap(), &m).unwrap();
        assert!(fraction >= 0.9);
        assert!((pose.rotation - scene.pose.rotation).norm() < 1e-9);
        assert!((pose.translation - scene.pose.translation).norm() < 1e-9);
    }

    #[test]
    fn select_fails_when_no_hypothesis_dominates() {
        // A quarter of the matches is consistent with each hypothesis.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let scene = random_scene(&mut rng, 1);
        let e = EssentialMatrix::from_pose(&scene.pose.rotation, &scene.pose.translation);
        let candidates = decompose_essential(&e).unwrap();
        let mut pairs = Vec::new();
        for pose in candidates.iter() {
            let mut added = 0;
            while added < 10 {
                let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0));
                let d = pose.transform_point(&p);
                if d.z > 0.2 {
                    pairs.push((p / p.z, d / d.z));
                    added += 1;
                }
            }
        }
        let m = MatchSet::new(pairs).unwrap();
        assert!(matches!(select_pose(&candidates, &m), Err(EpipolarError::NoValidCandidate(f)) if f < 0.5));
    }

    #[test]
    fn weights_are_validated() {
        let m = MatchSet::from_planar([([0.0, 0.0], [0.0, 0.0])]);
        assert!(m.clone().with_weights(vec![0.5, 0.5]).is_err());
        assert_eq!(m.with_weights(vec![2.0]).unwrap().weights(), Some(&[1.0][..]));
    }
}
