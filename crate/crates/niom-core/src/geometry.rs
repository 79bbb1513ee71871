//! Relative pose estimation and the pose-error AUC metric.
//!
//! Correspondence convention: a pair `(a, b)` holds normalized image
//! coordinates of the same 3D point seen from camera A and camera B, with
//! camera-B coordinates `X_B = R * X_A + t`. The essential matrix then
//! satisfies `b^T E a = 0` with `E = [t]_x R`.

use nalgebra::{DMatrix, Matrix3, Matrix4, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Pose error assigned to pairs where estimation failed outright.
pub const FAILED_POSE_ERROR_DEG: f64 = 180.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("focal lengths must be positive, got fx={0}, fy={1}")]
    BadIntrinsics(f64, f64),
    #[error("need at least {required} correspondences, got {got}")]
    TooFewCorrespondences { required: usize, got: usize },
    #[error("degenerate correspondence configuration")]
    DegenerateConfiguration,
    #[error("confidence must lie strictly between 0 and 1, got {0}")]
    BadConfidence(f64),
    #[error("inlier threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("no model with at least 8 inliers found")]
    NoModel,
    #[error("no decomposition places any point in front of both cameras")]
    NoPositiveDepth,
    #[error("rotation is not orthonormal with determinant +1")]
    BadRotation,
    #[error("translation must be non-zero")]
    ZeroTranslation,
    #[error("error list must be non-empty with non-negative entries")]
    BadErrorList,
    #[error("thresholds must be positive")]
    BadThresholds,
}

/// Pinhole intrinsics used to normalize pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::BadIntrinsics(fx, fy));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn normalize(&self, p: (f64, f64)) -> Vector2<f64> {
        Vector2::new((p.0 - self.cx) / self.fx, (p.1 - self.cy) / self.fy)
    }

    pub fn denormalize(&self, p: Vector2<f64>) -> (f64, f64) {
        (p.x * self.fx + self.cx, p.y * self.fy + self.cy)
    }
}

/// Map pixel positions into normalized camera coordinates.
pub fn normalize_points(points: &[(f64, f64)], k: &CameraIntrinsics) -> Vec<Vector2<f64>> {
    points.iter().map(|&p| k.normalize(p)).collect()
}

/// Rotation plus unit translation direction (scale is unobservable).
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RelativePose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).norm() > 1e-9 || rotation.determinant() < 0.5 {
            return Err(GeometryError::BadRotation);
        }
        let norm = translation.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GeometryError::ZeroTranslation);
        }
        Ok(Self {
            rotation,
            translation: translation / norm,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `E = [t]_x R` up to scale.
    pub fn essential(&self) -> Matrix3<f64> {
        skew(&self.translation) * self.rotation
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Essential matrix estimate with its provenance.
#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub essential: Matrix3<f64>,
    pub pose: RelativePose,
    pub inlier_indices: Vec<usize>,
    pub num_iterations: usize,
}

/// Correspondence in normalized coordinates: (camera A, camera B).
pub type Correspondence = (Vector2<f64>, Vector2<f64>);

/// Isotropic (Hartley) normalization: centroid at origin, mean distance
/// sqrt(2). Returns the transform and the transformed points.
fn hartley_normalize(
    points: impl Iterator<Item = Vector2<f64>> + Clone,
    n: usize,
) -> Result<(Matrix3<f64>, Vec<Vector2<f64>>), GeometryError> {
    let mut centroid = Vector2::zeros();
    for p in points.clone() {
        centroid += p;
    }
    centroid /= n as f64;
    let mean_dist: f64 = points.clone().map(|p| (p - centroid).norm()).sum::<f64>() / n as f64;
    if mean_dist <= 1e-15 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0);
    let transformed = points.map(|p| (p - centroid) * s).collect();
    Ok((t, transformed))
}

/// Normalized eight-point estimate projected to the essential manifold
/// (singular values averaged to (1, 1, 0), Frobenius norm sqrt(2)).
pub fn essential_8pt(corr: &[Correspondence]) -> Result<Matrix3<f64>, GeometryError> {
    let n = corr.len();
    if n < 8 {
        return Err(GeometryError::TooFewCorrespondences { required: 8, got: n });
    }
    let (t_a, pts_a) = hartley_normalize(corr.iter().map(|c| c.0), n)?;
    let (t_b, pts_b) = hartley_normalize(corr.iter().map(|c| c.1), n)?;

    let mut design = DMatrix::zeros(n, 9);
    for (i, (a, b)) in pts_a.iter().zip(&pts_b).enumerate() {
        design[(i, 0)] = b.x * a.x;
        design[(i, 1)] = b.x * a.y;
        design[(i, 2)] = b.x;
        design[(i, 3)] = b.y * a.x;
        design[(i, 4)] = b.y * a.y;
        design[(i, 5)] = b.y;
        design[(i, 6)] = a.x;
        design[(i, 7)] = a.y;
        design[(i, 8)] = 1.0;
    }
    let svd = design.svd(false, true);
    let sv = &svd.singular_values;
    // Rank < 8 means the nullspace is not one-dimensional.
    if sv[7] <= 1e-12 * sv[0].max(1.0) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let v_t = svd.v_t.expect("requested V^T");
    let e_row = v_t.row(8);
    let e_norm = Matrix3::new(
        e_row[0], e_row[1], e_row[2], e_row[3], e_row[4], e_row[5], e_row[6], e_row[7], e_row[8],
    );
    let e = t_b.transpose() * e_norm * t_a;

    // Project onto the essential manifold.
    let svd3 = e.svd(true, true);
    let u = svd3.u.expect("3x3 svd");
    let v_t = svd3.v_t.expect("3x3 svd");
    Ok(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t)
}

/// First-order geometric (Sampson) distance of a correspondence from the
/// epipolar constraint, in normalized units.
pub fn sampson_distance(e: &Matrix3<f64>, corr: &Correspondence) -> f64 {
    let a = Vector3::new(corr.0.x, corr.0.y, 1.0);
    let b = Vector3::new(corr.1.x, corr.1.y, 1.0);
    let ea = e * a;
    let etb = e.transpose() * b;
    let num = b.dot(&ea);
    let denom = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    num.abs() / denom.sqrt()
}

/// Linear triangulation with P1 = [I|0], P2 = [R|t]. Returns the point in
/// camera-A coordinates.
fn triangulate(a: &Vector2<f64>, b: &Vector2<f64>, r: &Matrix3<f64>, t: &Vector3<f64>) -> Option<Vector3<f64>> {
    let mut m = Matrix4::zeros();
    // Camera A rows: [-1, 0, a.x, 0], [0, -1, a.y, 0].
    m[(0, 0)] = -1.0;
    m[(0, 2)] = a.x;
    m[(1, 1)] = -1.0;
    m[(1, 2)] = a.y;
    // Camera B rows: b.x * P2_row3 - P2_row1 and likewise for y.
    for col in 0..4 {
        let p0 = if col < 3 { r[(0, col)] } else { t.x };
        let p1 = if col < 3 { r[(1, col)] } else { t.y };
        let p2 = if col < 3 { r[(2, col)] } else { t.z };
        m[(2, col)] = b.x * p2 - p0;
        m[(3, col)] = b.y * p2 - p1;
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let row = v_t.row(3);
    let w = row[3];
    if w.abs() < 1e-15 {
        return None;
    }
    Some(Vector3::new(row[0] / w, row[1] / w, row[2] / w))
}

/// Standard four-candidate decomposition; the returned pose triangulates the
/// most correspondences with positive depth in both cameras.
pub fn decompose_essential(
    e: &Matrix3<f64>,
    corr: &[Correspondence],
) -> Result<RelativePose, GeometryError> {
    if corr.is_empty() {
        return Err(GeometryError::TooFewCorrespondences { required: 1, got: 0 });
    }
    let svd = e.svd(true, true);
    let mut u = svd.u.expect("3x3 svd");
    let mut v_t = svd.v_t.expect("3x3 svd");
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned();

    let mut best: Option<(usize, Matrix3<f64>, Vector3<f64>)> = None;
    for (r, tc) in [(r1, t), (r1, -t), (r2, t), (r2, -t)] {
        let mut count = 0usize;
        for (a, b) in corr {
            if let Some(x) = triangulate(a, b, &r, &tc) {
                let x2 = r * x + tc;
                if x.z > 0.0 && x2.z > 0.0 {
                    count += 1;
                }
            }
        }
        if best.as_ref().map_or(true, |(c, _, _)| count > *c) {
            best = Some((count, r, tc));
        }
    }
    let (count, r, tc) = best.expect("four candidates evaluated");
    if count == 0 {
        return Err(GeometryError::NoPositiveDepth);
    }
    RelativePose::new(r, tc)
}

/// RANSAC settings for essential-matrix estimation.
#[derive(Debug, Clone, Copy)]
pub struct RansacConfig {
    /// Sampson-distance inlier threshold in normalized units.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            max_iterations: 2000,
            confidence: 0.999,
        }
    }
}

/// Seeded RANSAC with minimal eight-point samples, Sampson scoring, adaptive
/// iteration count and a final refit over the consensus set.
pub fn ransac_essential(
    corr: &[Correspondence],
    config: &RansacConfig,
    seed: u64,
) -> Result<PoseEstimate, GeometryError> {
    let n = corr.len();
    if n < 8 {
        return Err(GeometryError::TooFewCorrespondences { required: 8, got: n });
    }
    if !(config.confidence > 0.0 && config.confidence < 1.0) {
        return Err(GeometryError::BadConfidence(config.confidence));
    }
    if !(config.threshold > 0.0) {
        return Err(GeometryError::BadThreshold(config.threshold));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut best_model: Option<Matrix3<f64>> = None;
    let mut best_score = f64::INFINITY;
    let mut needed = config.max_iterations;
    let mut iterations = 0usize;

    while iterations < needed {
        iterations += 1;
        let sample_idx = rand::seq::index::sample(&mut rng, n, 8);
        let sample: Vec<Correspondence> = sample_idx.iter().map(|i| corr[i]).collect();
        let Ok(e) = essential_8pt(&sample) else {
            continue;
        };
        let mut inliers = Vec::new();
        let mut score = 0.0;
        for (i, c) in corr.iter().enumerate() {
            let d = sampson_distance(&e, c);
            if d < config.threshold {
                inliers.push(i);
                score += d;
            }
        }
        if inliers.len() > best_inliers.len()
            || (inliers.len() == best_inliers.len() && score < best_score)
        {
            best_inliers = inliers;
            best_model = Some(e);
            best_score = score;
            // Adaptive stopping: enough iterations to hit an all-inlier
            // sample with the requested confidence.
            let w = best_inliers.len() as f64 / n as f64;
            let w8 = w.powi(8);
            if w8 > 1.0 - 1e-12 {
                needed = iterations;
            } else if w8 > 0.0 {
                let est = ((1.0 - config.confidence).ln() / (1.0 - w8).ln()).ceil();
                needed = (est as usize).clamp(iterations, config.max_iterations);
            }
        }
    }

    let mut model = match best_model {
        Some(m) if best_inliers.len() >= 8 => m,
        _ => return Err(GeometryError::NoModel),
    };
    let mut inliers = best_inliers;

    // Refit on the consensus set and rescore once.
    let consensus: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
    if let Ok(refit) = essential_8pt(&consensus) {
        let rescored: Vec<usize> = corr
            .iter()
            .enumerate()
            .filter(|(_, c)| sampson_distance(&refit, c) < config.threshold)
            .map(|(i, _)| i)
            .collect();
        if rescored.len() >= 8 {
            model = refit;
            inliers = rescored;
        }
    }

    let inlier_corr: Vec<Correspondence> = inliers.iter().map(|&i| corr[i]).collect();
    let pose = decompose_essential(&model, &inlier_corr)?;
    Ok(PoseEstimate {
        essential: model,
        pose,
        inlier_indices: inliers,
        num_iterations: iterations,
    })
}

/// Maximum of rotation angle error and translation direction error, degrees.
/// The translation comparison is sign-agnostic.
pub fn pose_error(est: &RelativePose, gt: &RelativePose) -> f64 {
    let cos_rot = ((gt.rotation.transpose() * est.rotation).trace() - 1.0) / 2.0;
    let rot_err = cos_rot.clamp(-1.0, 1.0).acos();
    let cos_trans = gt.translation.dot(&est.translation).abs();
    let trans_err = cos_trans.clamp(0.0, 1.0).acos();
    rot_err.max(trans_err).to_degrees()
}

/// Exact area under the cumulative error curve, normalized per threshold.
///
/// With F the empirical CDF, `AUC@tau = (1/tau) * integral_0^tau F`, which for
/// a step CDF reduces to `(1/(n*tau)) * sum_i max(0, tau - e_i)`.
pub fn auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, GeometryError> {
    if errors.is_empty() || errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(GeometryError::BadErrorList);
    }
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(GeometryError::BadThresholds);
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let area: f64 = errors.iter().map(|&e| (tau - e).max(0.0)).sum();
            area / (n * tau)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Synthetic two-view scene with labeled outliers.
    pub(crate) fn synthetic_scene(
        seed: u64,
        n: usize,
        outlier_fraction: f64,
    ) -> (Vec<Correspondence>, RelativePose, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.gen_range(0.08..0.25);
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        )
        .into_inner();
        let translation = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.3..0.3),
        );

        let mut corr = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        while corr.len() < n {
            let x = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(4.0..8.0),
            );
            let x2 = rotation * x + translation;
            if x2.z <= 0.5 {
                continue;
            }
            let a = Vector2::new(x.x / x.z, x.y / x.z);
            let b = Vector2::new(x2.x / x2.z, x2.y / x2.z);
            if rng.gen_bool(outlier_fraction) {
                let fake = Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                corr.push((a, fake));
                labels.push(false);
            } else {
                corr.push((a, b));
                labels.push(true);
            }
        }
        let gt = RelativePose::new(rotation, translation).unwrap();
        (corr, gt, labels)
    }

    #[test]
    fn normalize_points_matches_affine_map() {
        let k = CameraIntrinsics::new(400.0, 420.0, 320.0, 240.0).unwrap();
        assert_eq!(k.normalize((320.0, 240.0)), Vector2::new(0.0, 0.0));
        assert_eq!(k.normalize((720.0, 240.0)), Vector2::new(1.0, 0.0));
        let p = (123.4, 567.8);
        let round = k.denormalize(k.normalize(p));
        assert!((round.0 - p.0).abs() < 1e-9);
        assert!((round.1 - p.1).abs() < 1e-9);
    }

    #[test]
    fn intrinsics_reject_non_positive_focal() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -2.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn eight_point_recovers_epipolar_constraint() {
        let (corr, gt, _) = synthetic_scene(1, 20, 0.0);
        let e = essential_8pt(&corr).unwrap();
        for c in &corr {
            let a = Vector3::new(c.0.x, c.0.y, 1.0);
            let b = Vector3::new(c.1.x, c.1.y, 1.0);
            let residual = b.dot(&(e * a)).abs();
            assert!(residual < 1e-10, "residual {residual}");
        }
        // Matches [t]x R up to sign and scale.
        let e_gt = gt.essential();
        let e_gt = e_gt / e_gt.norm();
        let e_est = e / e.norm();
        let diff = (e_est - e_gt).norm().min((e_est + e_gt).norm());
        assert!(diff < 1e-6, "difference {diff}");
    }

    #[test]
    fn eight_point_output_is_on_the_manifold() {
        let (corr, _, _) = synthetic_scene(2, 40, 0.0);
        let e = essential_8pt(&corr).unwrap();
        let sv = e.svd(false, false).singular_values;
        assert!((sv[0] - sv[1]).abs() < 1e-6);
        assert!(sv[2].abs() < 1e-6);
        assert!((e.norm() - std::f64::consts::SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn eight_point_rejects_short_and_degenerate_input() {
        let (corr, _, _) = synthetic_scene(3, 7, 0.0);
        assert!(matches!(
            essential_8pt(&corr),
            Err(GeometryError::TooFewCorrespondences { required: 8, got: 7 })
        ));
        let same = vec![(Vector2::new(0.1, 0.2), Vector2::new(0.3, 0.4)); 10];
        assert!(matches!(
            essential_8pt(&same),
            Err(GeometryError::DegenerateConfiguration)
        ));
    }

    #[test]
    fn ransac_recovers_inliers_with_outliers_present() {
        let (corr, _, labels) = synthetic_scene(4, 500, 0.3);
        let est = ransac_essential(&corr, &RansacConfig::default(), 7).unwrap();
        let true_inliers: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| i)
            .collect();
        let found: std::collections::HashSet<usize> =
            est.inlier_indices.iter().copied().collect();
        let recalled = true_inliers.iter().filter(|i| found.contains(i)).count();
        let recall = recalled as f64 / true_inliers.len() as f64;
        assert!(recall >= 0.99, "recall {recall}");
    }

    #[test]
    fn ransac_fails_on_pure_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let corr: Vec<Correspondence> = (0..60)
            .map(|_| {
                (
                    Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
                    Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
                )
            })
            .collect();
        let config = RansacConfig {
            threshold: 1e-6,
            max_iterations: 50,
            confidence: 0.999,
        };
        assert!(matches!(
            ransac_essential(&corr, &config, 3),
            Err(GeometryError::NoModel)
        ));
    }

    #[test]
    fn ransac_is_deterministic_given_seed() {
        let (corr, _, _) = synthetic_scene(5, 300, 0.3);
        let a = ransac_essential(&corr, &RansacConfig::default(), 42).unwrap();
        let b = ransac_essential(&corr, &RansacConfig::default(), 42).unwrap();
        assert_eq!(a.inlier_indices, b.inlier_indices);
        assert_eq!(a.essential, b.essential);
        assert_eq!(a.num_iterations, b.num_iterations);
    }

    #[test]
    fn decompose_recovers_ground_truth() {
        let (corr, gt, _) = synthetic_scene(6, 50, 0.0);
        let e = essential_8pt(&corr).unwrap();
        let pose = decompose_essential(&e, &corr).unwrap();
        assert!(pose_error(&pose, &gt) < 1e-6_f64.to_degrees() + 1e-4);
        // Cheirality must resolve the translation sign (not just |dot|).
        assert!(pose.translation().dot(gt.translation()) > 0.99);
    }

    #[test]
    fn decompose_pure_translation_scene() {
        let mut corr = Vec::new();
        let t = Vector3::new(1.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..40 {
            let x = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(4.0..8.0),
            );
            let x2 = x + t;
            corr.push((
                Vector2::new(x.x / x.z, x.y / x.z),
                Vector2::new(x2.x / x2.z, x2.y / x2.z),
            ));
        }
        let e = essential_8pt(&corr).unwrap();
        let pose = decompose_essential(&e, &corr).unwrap();
        let rot_dev = (pose.rotation() - Matrix3::identity()).norm();
        assert!(rot_dev < 1e-6, "rotation deviation {rot_dev}");
    }

    #[test]
    fn decompose_rejects_points_behind_cameras() {
        // Mirror a valid scene through the origin so every triangulated
        // depth flips negative for the generating pose family.
        let mut corr = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = Vector3::new(0.5, 0.0, 0.0);
        for _ in 0..20 {
            let x = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-8.0..-4.0),
            );
            let x2 = x + t;
            // Project with positive-z convention anyway: points sit behind.
            corr.push((
                Vector2::new(x.x / x.z, x.y / x.z),
                Vector2::new(x2.x / x2.z, x2.y / x2.z),
            ));
        }
        let e = essential_8pt(&corr).unwrap();
        // Either decomposition fails outright or the best candidate sees
        // only a fraction of the mirrored points.
        if let Ok(pose) = decompose_essential(&e, &corr) {
            let ok = corr
                .iter()
                .filter(|(a, b)| {
                    triangulate(a, b, pose.rotation(), pose.translation())
                        .map(|x| {
                            let x2 = pose.rotation() * x + pose.translation();
                            x.z > 0.0 && x2.z > 0.0
                        })
                        .unwrap_or(false)
                })
                .count();
            assert!(ok * 2 <= corr.len());
        }
    }

    #[test]
    fn pose_error_examples() {
        let (_, gt, _) = synthetic_scene(12, 10, 0.0);
        assert!(pose_error(&gt, &gt) < 1e-12);

        let ten_deg = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(Vector3::new(0.3, -0.5, 0.8)),
            10.0f64.to_radians(),
        )
        .into_inner();
        let est = RelativePose::new(gt.rotation() * ten_deg, *gt.translation()).unwrap();
        assert!((pose_error(&est, &gt) - 10.0).abs() < 1e-9);

        let flipped = RelativePose::new(*gt.rotation(), -gt.translation()).unwrap();
        assert!(pose_error(&flipped, &gt) < 1e-6);
    }

    #[test]
    fn pose_error_is_symmetric() {
        let (_, a, _) = synthetic_scene(13, 10, 0.0);
        let (_, b, _) = synthetic_scene(14, 10, 0.0);
        assert!((pose_error(&a, &b) - pose_error(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn auc_trivial_cases() {
        assert_eq!(auc(&[0.0, 0.0], &[5.0, 20.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(auc(&[30.0, 40.0], &[20.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn auc_step_integration_matches_quadrature() {
        let errors = [0.0, 10.0, 20.0, 30.0];
        let tau = 20.0;
        let exact = auc(&errors, &[tau]).unwrap()[0];
        // Dense quadrature oracle over the right-continuous step CDF.
        let steps = 1_000_000usize;
        let mut acc = 0.0f64;
        for i in 0..steps {
            let e = (i as f64 + 0.5) / steps as f64 * tau;
            let f = errors.iter().filter(|&&x| x <= e).count() as f64 / errors.len() as f64;
            acc += f;
        }
        let quad = acc / steps as f64;
        assert!((exact - quad).abs() < 1e-6, "exact {exact}, quad {quad}");
        assert!((exact - 0.375).abs() < 1e-12);
    }

    #[test]
    fn auc_rejects_bad_input() {
        assert!(auc(&[], &[20.0]).is_err());
        assert!(auc(&[1.0], &[]).is_err());
        assert!(auc(&[-1.0], &[20.0]).is_err());
        assert!(auc(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn full_recovery_pipeline_under_outliers() {
        let (corr, gt, _) = synthetic_scene(15, 500, 0.3);
        let est = ransac_essential(&corr, &RansacConfig::default(), 99).unwrap();
        let err = pose_error(&est.pose, &gt);
        assert!(err < 0.5, "pose error {err}");
    }
}
