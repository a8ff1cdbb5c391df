//! Randomized invariant checks over the whole stack, plus the translation
//! equivariance report for particle-to-grid tensors.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};
use servokit_core::control::{
    canonicalize_pose, denormalize_pose, denormalize_velocity, inverse_pbvs, loss_dir, loss_norm, pbvs, sigma,
    sigma_inv,
};
use servokit_core::epipolar::recover_pose;
use servokit_core::geometry::{exp_so3, integrate_twist, log_so3, orthogonality_error, rotation_distance};
use servokit_core::matching::{bspline_kernel, dual_softmax_confidence, expected_match, particles_to_grid};
use servokit_core::{
    CameraIntrinsics, DenormParams, GridDims, MatchSet, Pose, ProbMatchTensor, ScoreMatrix, Twist, VelocityParam,
};

use crate::sim::{run_indexed_episode, ControllerKind, EpisodeConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest observed deviation from the invariant.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed()).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }
}

struct Check {
    name: &'static str,
    tolerance: f64,
    trials: usize,
    run: fn(&mut ChaCha8Rng) -> f64,
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from(UnitSphere.sample(rng))
}

fn rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> nalgebra::Matrix3<f64> {
    exp_so3(&(unit(rng) * rng.random_range(0.0..max_angle)))
}

fn random_scores(rng: &mut ChaCha8Rng, dims: GridDims) -> ScoreMatrix {
    let data = (0..dims.len() * dims.len()).map(|_| rng.random::<f64>().powi(6)).collect();
    ScoreMatrix::from_unnormalized(dims, dims, data).expect("positive rows")
}

fn so3_roundtrip(rng: &mut ChaCha8Rng) -> f64 {
    let v = unit(rng) * rng.random_range(0.0..3.1);
    (log_so3(&exp_so3(&v)) - v).norm()
}

fn integration_orthonormal(rng: &mut ChaCha8Rng) -> f64 {
    let mut pose = Pose::identity();
    for _ in 0..200 {
        let tw = Twist::new(unit(rng) * 0.5, unit(rng));
        pose = integrate_twist(&pose, &tw, 0.05).expect("positive dt");
    }
    orthogonality_error(&pose.rotation)
}

fn epipolar_exact(rng: &mut ChaCha8Rng) -> f64 {
    let rel = Pose::new(rotation(rng, 0.6), unit(rng) * rng.random_range(0.1..0.5));
    let pairs: Vec<_> = (0..40)
        .filter_map(|_| {
            let pc = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0));
            let pd = rel.transform_point(&pc);
            (pd.z > 0.1).then(|| (pc / pc.z, pd / pd.z))
        })
        .collect();
    let (pose, _) = match MatchSet::new(pairs).map_err(|_| ()).and_then(|m| recover_pose(&m).map_err(|_| ())) {
        Ok(v) => v,
        Err(()) => return f64::INFINITY,
    };
    let dir = pose.translation.normalize().dot(&rel.translation.normalize()).clamp(-1.0, 1.0).acos();
    rotation_distance(&pose.rotation, &rel.rotation).max(dir)
}

fn scores_row_stochastic(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_scores(rng, GridDims::new(6, 5));
    (0..s.source().len())
        .map(|i| (s.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn expected_match_in_grid(rng: &mut ChaCha8Rng) -> f64 {
    let dims = GridDims::new(5, 7);
    let s = random_scores(rng, dims);
    expected_match(&s)
        .iter()
        .map(|x| {
            let over = Vector2::new((dims.cols - 1) as f64, (dims.rows - 1) as f64);
            (-x.x).max(-x.y).max(x.x - over.x).max(x.y - over.y).max(0.0)
        })
        .fold(0.0, f64::max)
}

fn confidence_bounded(rng: &mut ChaCha8Rng) -> f64 {
    let dims = GridDims::new(4, 4);
    let (cd, dc) = (random_scores(rng, dims), random_scores(rng, dims));
    let conf = dual_softmax_confidence(&cd, &dc).expect("matching dims");
    conf.values()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let bound = (0..dims.len()).map(|j| dc.get(j, i)).fold(0.0, f64::max);
            (c - bound).max(-c).max(0.0)
        })
        .fold(0.0, f64::max)
}

fn kernel_partition(rng: &mut ChaCha8Rng) -> f64 {
    let a = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let mut sum = 0.0;
    for dy in -2..=2 {
        for dx in -2..=2 {
            sum += bspline_kernel(&(a + Vector2::new(dx as f64, dy as f64)));
        }
    }
    (sum - 1.0).abs()
}

fn p2g_equivariance(rng: &mut ChaCha8Rng) -> f64 {
    let dims = GridDims::new(32, 32);
    let shift = (rng.random_range(-2..=2), rng.random_range(-2..=2));
    let d = (rng.random_range(-1..=1), rng.random_range(-1..=1));
    let s = local_scores(dims, (15, 15), d);
    let t = local_scores(dims, (15 + shift.0, 15 + shift.1), d);
    let (ps, pt) = match (particles_to_grid(&s, 32), particles_to_grid(&t, 32)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return f64::INFINITY,
    };
    cell_deviation(&ps, &pt, dims.index(15, 15), dims.index((15 + shift.0) as usize, (15 + shift.1) as usize))
}

/// Every row a delta at `+d`, except `center` which splits its mass between
/// `+d` and `+d + (1, 0)`.
fn local_scores(dims: GridDims, center: (i64, i64), d: (i64, i64)) -> ScoreMatrix {
    let n = dims.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let c = dims.coord(i);
        let (tx, ty) = (c.x as i64 + d.0, c.y as i64 + d.1);
        let tx = tx.clamp(0, dims.cols as i64 - 2) as usize;
        let ty = ty.clamp(0, dims.rows as i64 - 1) as usize;
        if (c.x as i64, c.y as i64) == center {
            data[i * n + dims.index(tx, ty)] = 0.625;
            data[i * n + dims.index(tx + 1, ty)] = 0.375;
        } else {
            data[i * n + dims.index(tx, ty)] = 1.0;
        }
    }
    ScoreMatrix::new(dims, dims, data).expect("rows sum to one")
}

fn cell_deviation(a: &ProbMatchTensor, b: &ProbMatchTensor, ia: usize, ib: usize) -> f64 {
    let c = a.channels();
    let (ra, ca) = (ia / a.dims().cols, ia % a.dims().cols);
    let (rb, cb) = (ib / b.dims().cols, ib % b.dims().cols);
    let (xa, xb) = (a.cell(ra, ca), b.cell(rb, cb));
    (0..c).map(|j| (xa[j] - xb[j]).abs()).fold(0.0, f64::max)
}

fn pbvs_inverse_roundtrip(rng: &mut ChaCha8Rng) -> f64 {
    let rel = Pose::new(rotation(rng, 3.0), unit(rng) * rng.random_range(0.0..2.0));
    let back = inverse_pbvs(&pbvs(&rel, 1.0), 1.0).expect("angle below pi");
    rotation_distance(&back.rotation, &rel.rotation).max((back.translation - rel.translation).norm())
}

fn denorm_identity(rng: &mut ChaCha8Rng) -> f64 {
    let tw = Twist::new(unit(rng) * 0.3, unit(rng) * rng.random_range(0.0..2.0));
    let out = denormalize_velocity(&tw, &DenormParams::identity(), 1.0).expect("valid twist");
    (out.to_vector() - tw.to_vector()).norm()
}

fn denorm_scale_law(rng: &mut ChaCha8Rng) -> f64 {
    let d = rng.random_range(0.2..3.0);
    let p = DenormParams::new(CameraIntrinsics::canonical(), CameraIntrinsics::canonical(), d).expect("valid");
    let tw = Twist::new(unit(rng) * 0.3, unit(rng) * rng.random_range(0.0..2.0));
    let out = denormalize_velocity(&tw, &p, 1.0).expect("valid twist");
    (out.linear - tw.linear * d).norm().max((out.angular - tw.angular).norm())
}

fn denorm_focal_roundtrip(rng: &mut ChaCha8Rng) -> f64 {
    let f = rng.random_range(200.0..900.0);
    let real = CameraIntrinsics::centered(f, 512).expect("valid focal");
    let p = DenormParams::new(CameraIntrinsics::canonical(), real, rng.random_range(0.5..1.5)).expect("valid");
    let rel = Pose::new(exp_so3(&(Vector3::z() * rng.random_range(-2.0..2.0))), unit(rng) * 0.2);
    let back = denormalize_pose(&canonicalize_pose(&rel, &p).expect("nonzero"), &p).expect("nonzero");
    rotation_distance(&back.rotation, &rel.rotation).max((back.translation - rel.translation).norm())
}

fn sigma_roundtrip(rng: &mut ChaCha8Rng) -> f64 {
    let x = rng.random_range(-20.0..5.0);
    (sigma_inv(sigma(x)).expect("positive") - x).abs()
}

fn losses_at_truth(rng: &mut ChaCha8Rng) -> f64 {
    let tw = Twist::new(unit(rng) * rng.random_range(0.01..1.0), unit(rng) * rng.random_range(0.01..1.0));
    let p = VelocityParam::encode(&tw).expect("nonzero");
    let anti = loss_dir(&tw, &tw.neg()).expect("nonzero");
    loss_norm(&tw, p.log_norm)
        .expect("nonzero")
        .max(loss_dir(&tw, &tw).expect("nonzero"))
        .max((anti - 2.0).abs())
}

fn episode_deterministic(rng: &mut ChaCha8Rng) -> f64 {
    let cfg = EpisodeConfig {
        seed: rng.random(),
        max_steps: 40,
        controller: ControllerKind::Hybrid,
        ..Default::default()
    };
    let (a, b) = (run_indexed_episode(&cfg, 0), run_indexed_episode(&cfg, 0));
    if a == b {
        0.0
    } else {
        1.0
    }
}

const CHECKS: &[Check] = &[
    Check { name: "so3-exp-log-roundtrip", tolerance: 1e-9, trials: 500, run: so3_roundtrip },
    Check { name: "twist-integration-orthonormal", tolerance: 1e-9, trials: 20, run: integration_orthonormal },
    Check { name: "epipolar-exact-recovery", tolerance: 1e-7, trials: 50, run: epipolar_exact },
    Check { name: "score-rows-stochastic", tolerance: 1e-9, trials: 50, run: scores_row_stochastic },
    Check { name: "expected-match-in-grid", tolerance: 1e-12, trials: 50, run: expected_match_in_grid },
    Check { name: "confidence-column-bound", tolerance: 1e-12, trials: 50, run: confidence_bounded },
    Check { name: "bspline-partition-of-unity", tolerance: 1e-12, trials: 2000, run: kernel_partition },
    Check { name: "p2g-translation-equivariance", tolerance: 1e-12, trials: 10, run: p2g_equivariance },
    Check { name: "pbvs-inverse-roundtrip", tolerance: 1e-9, trials: 500, run: pbvs_inverse_roundtrip },
    Check { name: "denorm-identity", tolerance: 1e-9, trials: 200, run: denorm_identity },
    Check { name: "denorm-scale-law", tolerance: 1e-12, trials: 200, run: denorm_scale_law },
    Check { name: "denorm-focal-roundtrip", tolerance: 1e-9, trials: 200, run: denorm_focal_roundtrip },
    Check { name: "sigma-roundtrip", tolerance: 1e-12, trials: 500, run: sigma_roundtrip },
    Check { name: "losses-at-truth-and-antipode", tolerance: 1e-12, trials: 200, run: losses_at_truth },
    Check { name: "episode-determinism", tolerance: 0.0, trials: 3, run: episode_deterministic },
];

pub fn check_names() -> impl Iterator<Item = &'static str> {
    CHECKS.iter().map(|c| c.name)
}

/// Runs every check; trial `t` of check `c` draws from its own stream.
pub fn run_all(seed: u64) -> VerifyReport {
    let checks = CHECKS
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ci as u64);
            let mut worst: f64 = 0.0;
            let mut failures = 0;
            for _ in 0..c.trials {
                let dev = (c.run)(&mut rng);
                if !(dev <= c.tolerance) {
                    failures += 1;
                }
                worst = if dev.is_nan() { f64::NAN } else { worst.max(dev) };
            }
            CheckOutcome {
                name: c.name.to_string(),
                trials: c.trials,
                failures,
                worst,
                tolerance: c.tolerance,
            }
        })
        .collect();
    VerifyReport { seed, checks }
}

/// Translation-equivariance of [`particles_to_grid`] under a whole-grid shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub shift: [i64; 2],
    pub anchors_per_axis: usize,
    /// Cells whose shifted counterpart is in the grid.
    pub compared_cells: usize,
    pub max_deviation: f64,
    /// Cells whose mass sits at least three bandwidths inside the displacement
    /// range of both the original and the shifted cell.
    pub interior_cells: usize,
    pub interior_max_deviation: f64,
}

/// Shifts both views of `s` by `shift` patches; mass leaving the target grid
/// is dropped and rows without a preimage become uniform.
pub fn shift_scores(s: &ScoreMatrix, shift: [i64; 2]) -> ScoreMatrix {
    let (src, tgt) = (s.source(), s.target());
    let moved = |dims: GridDims, i: usize| -> Option<usize> {
        let c = dims.coord(i);
        let (x, y) = (c.x as i64 + shift[0], c.y as i64 + shift[1]);
        (x >= 0 && y >= 0 && (x as usize) < dims.cols && (y as usize) < dims.rows)
            .then(|| dims.index(x as usize, y as usize))
    };
    let m = tgt.len();
    let mut data = vec![0.0; src.len() * m];
    for i in 0..src.len() {
        let Some(i2) = moved(src, i) else { continue };
        let row = &mut data[i2 * m..(i2 + 1) * m];
        let mut lost = false;
        for (k, &p) in s.row(i).iter().enumerate() {
            match moved(tgt, k) {
                Some(k2) => row[k2] = p,
                None => lost |= p > 0.0,
            }
        }
        let sum: f64 = row.iter().sum();
        if lost && sum > 0.0 {
            row.iter_mut().for_each(|p| *p /= sum);
        }
    }
    for row in data.chunks_mut(m) {
        if row.iter().all(|&p| p == 0.0) {
            row.iter_mut().for_each(|p| *p = 1.0 / m as f64);
        }
    }
    ScoreMatrix::new(src, tgt, data).expect("rows stay stochastic")
}

pub fn equivariance_report(s: &ScoreMatrix, tensor: &ProbMatchTensor, shift: [i64; 2]) -> Result<EquivarianceReport, servokit_core::MatchingError> {
    let k = tensor.anchors().per_axis;
    let shifted = particles_to_grid(&shift_scores(s, shift), k)?;
    let (src, tgt) = (s.source(), s.target());
    let margin = 3.0 * tensor.anchors().bandwidth;
    let mut report = EquivarianceReport {
        shift,
        anchors_per_axis: k,
        compared_cells: 0,
        max_deviation: 0.0,
        interior_cells: 0,
        interior_max_deviation: 0.0,
    };
    for i in 0..src.len() {
        let c = src.coord(i);
        let (x, y) = (c.x as i64 + shift[0], c.y as i64 + shift[1]);
        if x < 0 || y < 0 || x as usize >= src.cols || y as usize >= src.rows {
            continue;
        }
        let i2 = src.index(x as usize, y as usize);
        let dev = cell_deviation(tensor, &shifted, i, i2);
        report.compared_cells += 1;
        report.max_deviation = report.max_deviation.max(dev);
        let inside = |xc: Vector2<f64>| {
            s.row(i).iter().enumerate().filter(|(_, &p)| p > 0.0).all(|(kk, _)| {
                let f = tgt.coord(kk) - c;
                (0..2).all(|a| {
                    let lo = -xc[a];
                    let hi = [tgt.cols, tgt.rows][a] as f64 - 1.0 - xc[a];
                    f[a] - lo >= margin[a] && hi - f[a] >= margin[a]
                })
            })
        };
        if inside(c) && inside(src.coord(i2)) {
            report.interior_cells += 1;
            report.interior_max_deviation = report.interior_max_deviation.max(dev);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let report = run_all(3);
        for c in &report.checks {
            assert!(c.passed(), "{} worst {} > {}", c.name, c.worst, c.tolerance);
        }
        assert_eq!(report.passed(), CHECKS.len());
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = check_names().collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), CHECKS.len());
    }

    #[test]
    fn equivariance_report_on_local_scores() {
        let dims = GridDims::new(32, 32);
        let s = local_scores(dims, (15, 15), (1, 0));
        let t = particles_to_grid(&s, 32).unwrap();
        let r = equivariance_report(&s, &t, [2, -1]).unwrap();
        assert_eq!(r.compared_cells, 30 * 31);
        assert!(r.interior_cells > 0);
        assert!(r.interior_max_deviation <= 1e-12, "{}", r.interior_max_deviation);
    }

    #[test]
    fn zero_shift_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_scores(&mut rng, GridDims::new(4, 4));
        let t = particles_to_grid(&s, 4).unwrap();
        let r = equivariance_report(&s, &t, [0, 0]).unwrap();
        assert_eq!(r.max_deviation, 0.0);
        assert_eq!(r.compared_cells, 16);
    }
}
