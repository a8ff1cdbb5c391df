//! Geometric synthesis of matching distributions.
//!
//! Each patch takes its dominant scene point (z-buffered, nearest to the patch
//! center), back-projects the patch center at that point's depth and
//! transports it into the other view. The resulting continuous coordinate is
//! splatted bilinearly onto the target grid, so the expected match of a
//! noise-free row is exactly the transported coordinate.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use servokit_core::epipolar::MatchSet;
use servokit_core::geometry::{normalize_pixel, project, relative_pose, MIN_DEPTH};
use servokit_core::matching::gravity_centers;
use servokit_core::{CameraIntrinsics, ConfidenceMap, GridDims, Pose, ScoreMatrix};

use super::scene::{project_scene, Scene};
use crate::error::SimError;

/// Candidates deeper than the patch's nearest point by more than this factor
/// count as occluded.
pub const ZBUFFER_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraMode {
    /// Offset from the true match, in patches.
    pub offset: [f64; 2],
    pub mass: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Gaussian jitter of the true match, in patches.
    pub match_jitter_sigma: f64,
    /// Probability that a row is replaced by a delta at a random patch.
    pub outlier_ratio: f64,
    pub multimodal: Vec<ExtraMode>,
    /// Gaussian spread of every mode, in patches.
    pub blur_sigma: f64,
    /// Mass shared by the locations of points with the same descriptor id.
    pub repetition_mass: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let finite_nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !finite_nonneg(self.match_jitter_sigma) || !finite_nonneg(self.blur_sigma) {
            return Err(SimError::InvalidConfig("noise sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_ratio) || !(0.0..=1.0).contains(&self.repetition_mass) {
            return Err(SimError::InvalidConfig("outlier ratio and repetition mass must be in [0, 1]".into()));
        }
        if self.multimodal.iter().any(|m| !finite_nonneg(m.mass) || !m.offset.iter().all(|v| v.is_finite())) {
            return Err(SimError::InvalidConfig("extra modes need finite offsets and non-negative mass".into()));
        }
        if self.outlier_ratio + self.extra_mass() > 1.0 + 1e-12 {
            return Err(SimError::InvalidConfig("outlier ratio plus extra-mode mass exceeds 1".into()));
        }
        Ok(())
    }

    fn extra_mass(&self) -> f64 {
        self.multimodal.iter().map(|m| m.mass).sum::<f64>() + self.repetition_mass
    }
}

/// One row of a sparse score matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum ScoreRow {
    /// `1/N` everywhere.
    Uniform,
    /// `(target index, probability)` sorted by index.
    Sparse(Vec<(u32, f64)>),
}

/// Row-stochastic score matrix with mostly sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseScores {
    pub source: GridDims,
    pub target: GridDims,
    pub rows: Vec<ScoreRow>,
}

impl SparseScores {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.rows[i] {
            ScoreRow::Uniform => 1.0 / self.target.len() as f64,
            ScoreRow::Sparse(e) => e
                .binary_search_by_key(&(j as u32), |&(k, _)| k)
                .map_or(0.0, |pos| e[pos].1),
        }
    }

    pub fn to_dense(&self) -> ScoreMatrix {
        let n = self.target.len();
        let mut data = vec![0.0; self.source.len() * n];
        for (row, out) in self.rows.iter().zip(data.chunks_mut(n)) {
            match row {
                ScoreRow::Uniform => out.fill(1.0 / n as f64),
                ScoreRow::Sparse(e) => e.iter().for_each(|&(j, p)| out[j as usize] = p),
            }
        }
        ScoreMatrix::from_unnormalized(self.source, self.target, data).expect("rows are distributions")
    }

    pub fn expected_match(&self) -> Vec<Vector2<f64>> {
        let centroid = self.target.centroid();
        self.rows
            .iter()
            .map(|row| match row {
                ScoreRow::Uniform => centroid,
                ScoreRow::Sparse(e) => e
                    .iter()
                    .fold(Vector2::zeros(), |acc, &(j, p)| acc + self.target.coord(j as usize) * p),
            })
            .collect()
    }

    pub fn expected_flow(&self) -> Vec<Vector2<f64>> {
        self.expected_match()
            .into_iter()
            .enumerate()
            .map(|(i, m)| m - self.source.coord(i))
            .collect()
    }

    /// Sum of every column over the rows.
    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.target.len();
        let uniform_rows = self.rows.iter().filter(|r| matches!(r, ScoreRow::Uniform)).count();
        let mut sums = vec![uniform_rows as f64 / n as f64; n];
        for row in &self.rows {
            if let ScoreRow::Sparse(e) = row {
                e.iter().for_each(|&(j, p)| sums[j as usize] += p);
            }
        }
        sums
    }

    /// Dual-softmax confidence against the reverse-direction scores.
    pub fn confidence(&self, reverse: &SparseScores) -> ConfidenceMap {
        let col = reverse.column_sums();
        let n = self.target.len() as f64;
        let values = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| match row {
                ScoreRow::Uniform => col[i] / n,
                ScoreRow::Sparse(e) => e.iter().map(|&(j, p)| p * reverse.get(j as usize, i)).sum::<f64>(),
            })
            .map(|c| c.min(1.0))
            .collect();
        ConfidenceMap(values)
    }
}

/// Everything a controller may look at for one step.
#[derive(Clone, Debug)]
pub struct Observation {
    pub s_cd: SparseScores,
    pub s_dc: SparseScores,
    /// Current patches whose dominant point has a correspondence in the desired view.
    pub visibility: Vec<bool>,
    /// Noise-free desired coordinate of each visible current patch.
    pub true_matches: Vec<Option<Vector2<f64>>>,
    /// Desired-from-current pose; present only with the oracle channel enabled.
    pub ground_truth: Option<Pose>,
    /// Fraction of scene points inside the current image.
    pub visible_fraction: f64,
}

impl Observation {
    pub fn grid(&self) -> GridDims {
        self.s_cd.source
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|v| **v).count()
    }

    /// Explicit matches of the visible patches, reduced by expectation and
    /// normalized with `intr`, weighted by dual-softmax confidence.
    pub fn explicit_matches(&self, intr: &CameraIntrinsics) -> Result<MatchSet, SimError> {
        let expected = self.s_cd.expected_match();
        let conf = self.s_cd.confidence(&self.s_dc);
        let grid = self.grid();
        let mut pairs = Vec::new();
        let mut weights = Vec::new();
        for (i, _) in self.visibility.iter().enumerate().filter(|(_, v)| **v) {
            let xc = grid.coord(i);
            let pc = intr.patch_center_pixel(xc.x, xc.y);
            let pd = intr.patch_center_pixel(expected[i].x, expected[i].y);
            pairs.push((normalize_pixel(&pc, intr), normalize_pixel(&pd, intr)));
            weights.push(conf.values()[i]);
        }
        Ok(MatchSet::new(pairs)?.with_weights(weights)?)
    }

    /// Explicit matches built from the noise-free correspondences.
    pub fn true_match_set(&self, intr: &CameraIntrinsics) -> Result<MatchSet, SimError> {
        let grid = self.grid();
        let pairs = self
            .true_matches
            .iter()
            .enumerate()
            .filter_map(|(i, m)| {
                let m = (*m)?;
                let xc = grid.coord(i);
                let pc = intr.patch_center_pixel(xc.x, xc.y);
                let pd = intr.patch_center_pixel(m.x, m.y);
                Some((normalize_pixel(&pc, intr), normalize_pixel(&pd, intr)))
            })
            .collect();
        Ok(MatchSet::new(pairs)?)
    }

    /// Confidence-weighted gravity centers `(Xg_c, Xg_d)` in patch units.
    pub fn gravity_centers(&self) -> Result<(Vector2<f64>, Vector2<f64>), SimError> {
        let conf = self.s_cd.confidence(&self.s_dc);
        let flow = self.s_cd.expected_flow();
        Ok(gravity_centers(&conf, &flow, self.grid())?)
    }
}

fn grid_of(intr: &CameraIntrinsics) -> GridDims {
    GridDims::new(intr.grid_rows(), intr.grid_cols())
}

/// Dominant point index per patch.
fn dominant_points(proj: &[Option<(Vector2<f64>, f64)>], intr: &CameraIntrinsics) -> Vec<Option<usize>> {
    let grid = grid_of(intr);
    let p = f64::from(intr.patch_size);
    let patch_of = |px: &Vector2<f64>| {
        let col = ((px.x / p).floor() as usize).min(grid.cols - 1);
        let row = ((px.y / p).floor() as usize).min(grid.rows - 1);
        grid.index(col, row)
    };
    let mut nearest = vec![f64::INFINITY; grid.len()];
    for (px, z) in proj.iter().flatten() {
        let i = patch_of(px);
        nearest[i] = nearest[i].min(*z);
    }
    let mut best: Vec<Option<(usize, f64)>> = vec![None; grid.len()];
    for (k, item) in proj.iter().enumerate() {
        let Some((px, z)) = item else { continue };
        let i = patch_of(px);
        if *z > nearest[i] * (1.0 + ZBUFFER_TOLERANCE) {
            continue;
        }
        let c = grid.coord(i);
        let d2 = (intr.patch_center_pixel(c.x, c.y) - px).norm_squared();
        if best[i].is_none_or(|(_, bd)| d2 < bd) {
            best[i] = Some((k, d2));
        }
    }
    best.into_iter().map(|b| b.map(|(k, _)| k)).collect()
}

/// Continuous target-grid coordinate of every source patch, or `None`.
fn transport(
    from: &Pose,
    to: &Pose,
    from_proj: &[Option<(Vector2<f64>, f64)>],
    to_proj: &[Option<(Vector2<f64>, f64)>],
    intr: &CameraIntrinsics,
) -> (Vec<Option<usize>>, Vec<Option<Vector2<f64>>>) {
    let grid = grid_of(intr);
    let dominant = dominant_points(from_proj, intr);
    let to_from_from = relative_pose(from, to);
    let coords = dominant
        .iter()
        .enumerate()
        .map(|(i, dom)| {
            let k = (*dom)?;
            to_proj[k]?;
            let depth = from_proj[k]?.1;
            let c = grid.coord(i);
            let ray = normalize_pixel(&intr.patch_center_pixel(c.x, c.y), intr);
            let pt = to_from_from.transform_point(&(ray * depth));
            if pt.z <= MIN_DEPTH {
                return None;
            }
            let x = intr.pixel_to_patch(&project(&pt, intr).ok()?);
            grid.contains(&x).then_some(x)
        })
        .collect();
    (dominant, coords)
}

/// Bilinear weights of a continuous in-grid coordinate.
fn splat(x: &Vector2<f64>, grid: GridDims, mass: f64, out: &mut BTreeMap<u32, f64>) {
    let x0 = x.x.floor().clamp(0.0, (grid.cols - 1) as f64);
    let y0 = x.y.floor().clamp(0.0, (grid.rows - 1) as f64);
    let (fx, fy) = (x.x - x0, x.y - y0);
    let (c0, r0) = (x0 as usize, y0 as usize);
    for (dc, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dr, wy) in [(0, 1.0 - fy), (1, fy)] {
            let w = wx * wy * mass;
            if w > 0.0 && c0 + dc < grid.cols && r0 + dr < grid.rows {
                *out.entry(grid.index(c0 + dc, r0 + dr) as u32).or_insert(0.0) += w;
            }
        }
    }
}

fn blur(entries: BTreeMap<u32, f64>, grid: GridDims, sigma: f64) -> BTreeMap<u32, f64> {
    if sigma <= 0.0 {
        return entries;
    }
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<(i64, i64, f64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| (dx, dy, (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()))
        .collect();
    let total: f64 = kernel.iter().map(|k| k.2).sum();
    let mut out = BTreeMap::new();
    for (j, m) in entries {
        let c = grid.coord(j as usize);
        for &(dx, dy, w) in &kernel {
            let (col, row) = (c.x as i64 + dx, c.y as i64 + dy);
            if col >= 0 && row >= 0 && (col as usize) < grid.cols && (row as usize) < grid.rows {
                *out.entry(grid.index(col as usize, row as usize) as u32).or_insert(0.0) += m * w / total;
            }
        }
    }
    out
}

/// Distribution row for a set of `(coordinate, mass)` modes; out-of-grid modes are dropped.
pub fn mode_row(modes: &[(Vector2<f64>, f64)], grid: GridDims, blur_sigma: f64) -> ScoreRow {
    let mut acc = BTreeMap::new();
    for (x, m) in modes {
        if *m > 0.0 && grid.contains(x) {
            splat(x, grid, *m, &mut acc);
        }
    }
    let acc = blur(acc, grid, blur_sigma);
    let sum: f64 = acc.values().sum();
    if !(sum > 0.0) {
        return ScoreRow::Uniform;
    }
    ScoreRow::Sparse(acc.into_iter().map(|(j, p)| (j, p / sum)).collect())
}

/// Shannon entropy (nats) of a row over a grid.
pub fn row_entropy(row: &ScoreRow, grid: GridDims) -> f64 {
    match row {
        ScoreRow::Uniform => (grid.len() as f64).ln(),
        ScoreRow::Sparse(e) => e.iter().filter(|e| e.1 > 0.0).map(|&(_, p)| -p * p.ln()).sum(),
    }
}

struct RowContext<'a> {
    scene: &'a Scene,
    to_proj: &'a [Option<(Vector2<f64>, f64)>],
    intr: &'a CameraIntrinsics,
    noise: &'a NoiseModel,
}

impl RowContext<'_> {
    fn row(&self, truth: &Vector2<f64>, dominant: usize, rng: &mut ChaCha8Rng) -> ScoreRow {
        let grid = grid_of(self.intr);
        let n = self.noise;
        if n.outlier_ratio > 0.0 && rng.random::<f64>() < n.outlier_ratio {
            let j = rng.random_range(0..grid.len());
            return ScoreRow::Sparse(vec![(j as u32, 1.0)]);
        }
        let mut center = *truth;
        if n.match_jitter_sigma > 0.0 {
            let normal = Normal::new(0.0, n.match_jitter_sigma).expect("validated sigma");
            center += Vector2::new(normal.sample(rng), normal.sample(rng));
            center.x = center.x.clamp(0.0, (grid.cols - 1) as f64);
            center.y = center.y.clamp(0.0, (grid.rows - 1) as f64);
        }
        let mut modes = Vec::with_capacity(1 + n.multimodal.len());
        let mut truth_mass = 1.0 - n.multimodal.iter().map(|m| m.mass).sum::<f64>();
        for m in &n.multimodal {
            modes.push((truth + Vector2::new(m.offset[0], m.offset[1]), m.mass));
        }
        if n.repetition_mass > 0.0 {
            let id = self.scene.descriptor_ids[dominant];
            let repeats: Vec<Vector2<f64>> = self
                .scene
                .descriptor_ids
                .iter()
                .enumerate()
                .filter(|&(k, &d)| d == id && k != dominant)
                .filter_map(|(k, _)| self.to_proj[k].map(|(px, _)| self.intr.pixel_to_patch(&px)))
                .collect();
            if !repeats.is_empty() {
                truth_mass -= n.repetition_mass;
                let each = n.repetition_mass / repeats.len() as f64;
                modes.extend(repeats.into_iter().map(|x| (x, each)));
            }
        }
        modes.insert(0, (center, truth_mass.max(0.0)));
        mode_row(&modes, grid, n.blur_sigma)
    }
}

fn scores(
    scene: &Scene,
    from: &Pose,
    to: &Pose,
    from_proj: &[Option<(Vector2<f64>, f64)>],
    to_proj: &[Option<(Vector2<f64>, f64)>],
    intr: &CameraIntrinsics,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> (SparseScores, Vec<Option<Vector2<f64>>>) {
    let grid = grid_of(intr);
    let (dominant, coords) = transport(from, to, from_proj, to_proj, intr);
    let ctx = RowContext {
        scene,
        to_proj,
        intr,
        noise,
    };
    let rows = coords
        .iter()
        .zip(&dominant)
        .map(|(c, d)| match (c, d) {
            (Some(x), Some(k)) => ctx.row(x, *k, rng),
            _ => ScoreRow::Uniform,
        })
        .collect();
    (
        SparseScores {
            source: grid,
            target: grid,
            rows,
        },
        coords,
    )
}

/// Synthesizes both score matrices for the current and desired views.
pub fn observe(
    scene: &Scene,
    current: &Pose,
    desired: &Pose,
    intr: &CameraIntrinsics,
    noise: &NoiseModel,
    oracle: bool,
    seed: u64,
) -> Result<Observation, SimError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cur = project_scene(scene, current, intr);
    let des = project_scene(scene, desired, intr);
    let (s_cd, true_matches) = scores(scene, current, desired, &cur, &des, intr, noise, &mut rng);
    let (s_dc, reverse) = scores(scene, desired, current, &des, &cur, intr, noise, &mut rng);
    if true_matches.iter().all(Option::is_none) || reverse.iter().all(Option::is_none) {
        return Err(SimError::NoVisiblePoints);
    }
    let visible = cur.iter().filter(|p| p.is_some()).count();
    Ok(Observation {
        s_cd,
        s_dc,
        visibility: true_matches.iter().map(Option::is_some).collect(),
        true_matches,
        ground_truth: oracle.then(|| relative_pose(current, desired)),
        visible_fraction: visible as f64 / scene.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::{generate_scene, sample_pose_pair, SamplingConfig, SceneConfig};
    use nalgebra::Vector3;
    use servokit_core::geometry::look_at;
    use servokit_core::matching::{dual_softmax_confidence, expected_match};

    fn setup(seed: u64) -> (Scene, Pose, Pose, CameraIntrinsics) {
        let scene = generate_scene(&SceneConfig::default(), 1.0, seed).unwrap();
        let intr = CameraIntrinsics::canonical();
        let (a, b) = sample_pose_pair(&scene, &intr, &SamplingConfig::default(), seed).unwrap();
        (scene, a, b, intr)
    }

    #[test]
    fn coincident_views_match_themselves() {
        let (scene, _, desired, intr) = setup(1);
        let obs = observe(&scene, &desired, &desired, &intr, &NoiseModel::default(), true, 0).unwrap();
        let flow = obs.s_cd.expected_flow();
        for (i, v) in obs.visibility.iter().enumerate() {
            if *v {
                assert!(flow[i].norm() < 1e-9, "{:?}", flow[i]);
                assert!((obs.s_cd.get(i, i) - 1.0).abs() < 1e-9);
            }
        }
        let (c, d) = obs.gravity_centers().unwrap();
        assert!((c - d).norm() < 0.2);
        assert!(obs.visible_count() > 50);
    }

    #[test]
    fn lateral_shift_of_distant_plane() {
        // fronto-parallel plane 50 m away; the camera moves by 10 patches worth
        // of image motion, so flow is a constant (-10, 0).
        let intr = CameraIntrinsics::canonical();
        let z = 50.0;
        let shift = 10.0 * 16.0 * z / intr.fx;
        let mut points = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                points.push([(i as f64 - 30.0) * 0.9, (j as f64 - 30.0) * 0.9, 0.0]);
            }
        }
        let n = points.len();
        let scene = Scene {
            points,
            descriptor_ids: (0..n as u32).collect(),
            scale: z,
            bounds: crate::sim::scene::Bounds {
                min: [-30.0, -30.0, 0.0],
                max: [30.0, 30.0, 0.0],
            },
        };
        let r = look_at(&Vector3::new(0.0, 0.0, z), &Vector3::zeros(), &Vector3::y(), 0.0);
        let desired = Pose::new(r, Vector3::new(0.0, 0.0, z));
        let current = Pose::new(r, Vector3::new(0.0, 0.0, z) - r * Vector3::new(shift, 0.0, 0.0));
        let obs = observe(&scene, &current, &desired, &intr, &NoiseModel::default(), true, 0).unwrap();
        let flow = obs.s_cd.expected_flow();
        let grid = obs.grid();
        let mut checked = 0;
        for (i, v) in obs.visibility.iter().enumerate() {
            let c = grid.coord(i);
            if *v && c.x >= 12.0 && c.x <= 30.0 && c.y >= 2.0 && c.y <= 29.0 {
                assert!((flow[i] - Vector2::new(-10.0, 0.0)).norm() < 0.5, "{:?}", flow[i]);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn sparse_reductions_match_dense() {
        let (scene, cur, des, intr) = setup(2);
        let noise = NoiseModel {
            blur_sigma: 0.8,
            outlier_ratio: 0.1,
            multimodal: vec![ExtraMode {
                offset: [3.0, -1.0],
                mass: 0.2,
            }],
            ..NoiseModel::default()
        };
        let obs = observe(&scene, &cur, &des, &intr, &noise, false, 9).unwrap();
        let (dcd, ddc) = (obs.s_cd.to_dense(), obs.s_dc.to_dense());
        let dense_match = expected_match(&dcd);
        for (a, b) in dense_match.iter().zip(obs.s_cd.expected_match()) {
            assert!((a - b).norm() < 1e-9);
        }
        let dense_conf = dual_softmax_confidence(&dcd, &ddc).unwrap();
        for (a, b) in dense_conf.values().iter().zip(obs.s_cd.confidence(&obs.s_dc).values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(obs.ground_truth.is_none());
    }

    #[test]
    fn bimodal_rows_shift_expected_match() {
        let (scene, cur, des, intr) = setup(3);
        let noise = NoiseModel {
            multimodal: vec![ExtraMode {
                offset: [4.0, 0.0],
                mass: 0.5,
            }],
            ..NoiseModel::default()
        };
        let obs = observe(&scene, &cur, &des, &intr, &noise, true, 0).unwrap();
        let expected = obs.s_cd.expected_match();
        let grid = obs.grid();
        let mut errors: Vec<f64> = obs
            .true_matches
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|t| (expected[i] - t).norm()))
            .collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[errors.len() / 2] >= 1.9);
        let interior = obs
            .true_matches
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.filter(|t| t.x + 4.0 <= (grid.cols - 1) as f64).map(|t| (i, t)));
        for (i, t) in interior {
            assert!((expected[i] - t - Vector2::new(2.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn repetition_adds_modes() {
        let scene = generate_scene(
            &SceneConfig {
                repetition: 4,
                ..SceneConfig::default()
            },
            1.0,
            4,
        )
        .unwrap();
        let intr = CameraIntrinsics::canonical();
        let (cur, des) = sample_pose_pair(&scene, &intr, &SamplingConfig::default(), 4).unwrap();
        let noise = NoiseModel {
            repetition_mass: 0.3,
            ..NoiseModel::default()
        };
        let obs = observe(&scene, &cur, &des, &intr, &noise, true, 0).unwrap();
        let wide = obs
            .s_cd
            .rows
            .iter()
            .filter(|r| matches!(r, ScoreRow::Sparse(e) if e.len() > 4))
            .count();
        assert!(wide > 0);
    }

    #[test]
    fn noise_validation() {
        let bad = NoiseModel {
            outlier_ratio: 0.6,
            multimodal: vec![ExtraMode {
                offset: [1.0, 0.0],
                mass: 0.5,
            }],
            ..NoiseModel::default()
        };
        assert!(bad.validate().is_err());
        assert!(NoiseModel::default().validate().is_ok());
    }

    #[test]
    fn blur_preserves_interior_mean() {
        let grid = GridDims::new(32, 32);
        let x = Vector2::new(10.3, 17.6);
        let row = mode_row(&[(x, 1.0)], grid, 1.3);
        let ScoreRow::Sparse(e) = &row else { panic!() };
        let m = e.iter().fold(Vector2::zeros(), |acc, &(j, p)| acc + grid.coord(j as usize) * p);
        assert!((m - x).norm() < 1e-12);
        assert!(row_entropy(&row, grid) > row_entropy(&mode_row(&[(x, 1.0)], grid, 0.5), grid));
    }
}
