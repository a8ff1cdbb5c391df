//! Probabilistic patch matching.
//!
//! Patch coordinates are in patch units on the integer grid: patch `i` of a
//! grid with `cols` columns sits at `x = (i % cols, i / cols)`. A
//! [`ScoreMatrix`] holds, for every current patch, a distribution over desired
//! patches. From it this module derives the explicit (expected) match, the
//! dual-softmax confidence, confidence-weighted gravity centers, and the
//! particle-to-grid tensor [`ProbMatchTensor`], which re-expresses each row as
//! values on a fixed set of displacement anchors so that shifting both images
//! shifts the tensor spatially without permuting its channels.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Vector2;
use thiserror::Error;

/// Row sums of a score matrix must be within this of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Anchors whose kernel-weight sum falls below this are reported as 0.
pub const EMPTY_ANCHOR_EPS: f64 = 1e-12;

/// Default number of anchors per axis.
pub const DEFAULT_ANCHORS_PER_AXIS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("row {row} of the score matrix is not a distribution (sum {sum})")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("score matrix has a negative or non-finite entry at ({row}, {col})")]
    InvalidEntry { row: usize, col: usize },
    #[error("feature maps need at least one channel")]
    NoChannels,
    #[error("total confidence is zero")]
    ZeroConfidence,
    #[error("need at least 2 anchors per axis, got {0}")]
    TooFewAnchors(usize),
}

/// Patch-grid size: `rows` = H16, `cols` = W16.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    /// `(col, row)` of patch `i` as patch-unit coordinates.
    pub fn coord(&self, i: usize) -> Vector2<f64> {
        Vector2::new((i % self.cols) as f64, (i / self.cols) as f64)
    }

    pub fn centroid(&self) -> Vector2<f64> {
        Vector2::new((self.cols as f64 - 1.0) / 2.0, (self.rows as f64 - 1.0) / 2.0)
    }

    /// Whether a continuous patch coordinate lies inside `[0, cols-1] x [0, rows-1]`.
    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        x.x >= 0.0 && x.y >= 0.0 && x.x <= self.cols as f64 - 1.0 && x.y <= self.rows as f64 - 1.0
    }
}

/// Per-patch feature vectors, patch-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchFeatureMap {
    dims: GridDims,
    channels: usize,
    data: Vec<f64>,
}

impl PatchFeatureMap {
    pub fn new(dims: GridDims, channels: usize, data: Vec<f64>) -> Result<Self, MatchingError> {
        if channels == 0 {
            return Err(MatchingError::NoChannels);
        }
        if data.len() != dims.len() * channels {
            return Err(MatchingError::DimensionMismatch("feature count must equal rows * cols * channels"));
        }
        Ok(Self { dims, channels, data })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Dense row-stochastic matching distribution from a source grid to a target grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    source: GridDims,
    target: GridDims,
    data: Vec<f64>,
}

impl ScoreMatrix {
    /// Validates non-negativity and unit row sums.
    pub fn new(source: GridDims, target: GridDims, data: Vec<f64>) -> Result<Self, MatchingError> {
        if data.len() != source.len() * target.len() {
            return Err(MatchingError::DimensionMismatch("score data must be source.len() * target.len()"));
        }
        let n = target.len();
        for (row, chunk) in data.chunks(n.max(1)).enumerate() {
            let mut sum = 0.0;
            for (col, &v) in chunk.iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(MatchingError::InvalidEntry { row, col });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(MatchingError::NotRowStochastic { row, sum });
            }
        }
        Ok(Self { source, target, data })
    }

    /// Divides every row by its sum; all-zero rows become uniform.
    pub fn from_unnormalized(source: GridDims, target: GridDims, mut data: Vec<f64>) -> Result<Self, MatchingError> {
        if data.len() != source.len() * target.len() {
            return Err(MatchingError::DimensionMismatch("score data must be source.len() * target.len()"));
        }
        let n = target.len();
        for row in data.chunks_mut(n.max(1)) {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            } else {
                row.iter_mut().for_each(|v| *v = 1.0 / n as f64);
            }
        }
        Self::new(source, target, data)
    }

    pub fn uniform(source: GridDims, target: GridDims) -> Self {
        let v = 1.0 / target.len() as f64;
        Self {
            source,
            target,
            data: vec![v; source.len() * target.len()],
        }
    }

    pub fn source(&self) -> GridDims {
        self.source
    }

    pub fn target(&self) -> GridDims {
        self.target
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.target.len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.target.len() + j]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// `softmax(F̄c F̄dᵀ / √C)` row by row.
pub fn score_matrix(fc: &PatchFeatureMap, fd: &PatchFeatureMap) -> Result<ScoreMatrix, MatchingError> {
    if fc.channels != fd.channels {
        return Err(MatchingError::DimensionMismatch("feature maps have different channel counts"));
    }
    let scale = 1.0 / (fc.channels as f64).sqrt();
    let (n_src, n_dst) = (fc.dims.len(), fd.dims.len());
    let mut data = vec![0.0; n_src * n_dst];
    for (i, row) in data.chunks_mut(n_dst.max(1)).enumerate() {
        let a = fc.feature(i);
        for (j, out) in row.iter_mut().enumerate() {
            let b = fd.feature(j);
            *out = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * scale;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    ScoreMatrix::new(fc.dims, fd.dims, data)
}

/// Probability-weighted desired coordinate for every current patch.
pub fn expected_match(s: &ScoreMatrix) -> Vec<Vector2<f64>> {
    let target = s.target;
    (0..s.source.len())
        .map(|i| {
            s.row(i)
                .iter()
                .enumerate()
                .fold(Vector2::zeros(), |acc, (j, &p)| acc + target.coord(j) * p)
        })
        .collect()
}

/// Flow `x_{c→d} - x_c` of every current patch.
pub fn expected_flow(s: &ScoreMatrix) -> Vec<Vector2<f64>> {
    expected_match(s)
        .into_iter()
        .enumerate()
        .map(|(i, m)| m - s.source.coord(i))
        .collect()
}

/// Per-current-patch mutual matching confidence, each value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap(pub Vec<f64>);

impl ConfidenceMap {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `C_i = Σ_j S_cd[i, j] · S_dc[j, i]`.
///
/// The reverse matrix is read transposed so both factors refer to the same
/// (current `i`, desired `j`) pair.
pub fn dual_softmax_confidence(s_cd: &ScoreMatrix, s_dc: &ScoreMatrix) -> Result<ConfidenceMap, MatchingError> {
    if s_cd.source != s_dc.target || s_cd.target != s_dc.source {
        return Err(MatchingError::DimensionMismatch("reverse score matrix must swap source and target grids"));
    }
    let n_c = s_cd.source.len();
    let conf = (0..n_c)
        .map(|i| {
            s_cd.row(i)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(j, &p)| p * s_dc.get(j, i))
                .sum::<f64>()
                .min(1.0)
        })
        .collect();
    Ok(ConfidenceMap(conf))
}

/// Confidence-weighted gravity centers of the current image and of its matches
/// in the desired image, in patch units.
pub fn gravity_centers(
    conf: &ConfidenceMap,
    flow: &[Vector2<f64>],
    source: GridDims,
) -> Result<(Vector2<f64>, Vector2<f64>), MatchingError> {
    if conf.0.len() != source.len() || flow.len() != source.len() {
        return Err(MatchingError::DimensionMismatch("confidence and flow must cover every patch"));
    }
    let total = conf.total();
    if !(total > 1e-9) {
        return Err(MatchingError::ZeroConfidence);
    }
    let mut current = Vector2::zeros();
    let mut desired = Vector2::zeros();
    for (i, (&c, f)) in conf.0.iter().zip(flow).enumerate() {
        let x = source.coord(i);
        current += x * c;
        desired += (x + f) * c;
    }
    Ok((current / total, desired / total))
}

/// One-dimensional quadratic B-spline.
pub fn bspline_weight(a: f64) -> f64 {
    let a = a.abs();
    if a < 0.5 {
        0.75 - a * a
    } else if a < 1.5 {
        0.5 * (1.5 - a) * (1.5 - a)
    } else {
        0.0
    }
}

/// Separable 2D quadratic B-spline kernel.
pub fn bspline_kernel(a: &Vector2<f64>) -> f64 {
    bspline_weight(a.x) * bspline_weight(a.y)
}

/// Fixed displacement anchors for [`particles_to_grid`].
///
/// `K` anchors per axis span `[-W16, W16] x [-H16, H16]` inclusive; the kernel
/// bandwidth is `g = (2 W16 / K, 2 H16 / K)` and particles count toward an
/// anchor while within `1.5 g` of it on both axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorGrid {
    pub per_axis: usize,
    pub half_extent: Vector2<f64>,
    pub bandwidth: Vector2<f64>,
    pub spacing: Vector2<f64>,
}

impl AnchorGrid {
    pub fn new(dims: GridDims, per_axis: usize) -> Result<Self, MatchingError> {
        if per_axis < 2 {
            return Err(MatchingError::TooFewAnchors(per_axis));
        }
        let half_extent = Vector2::new(dims.cols as f64, dims.rows as f64);
        let k = per_axis as f64;
        Ok(Self {
            per_axis,
            half_extent,
            bandwidth: half_extent * 2.0 / k,
            spacing: half_extent * 2.0 / (k - 1.0),
        })
    }

    pub fn channels(&self) -> usize {
        self.per_axis * self.per_axis
    }

    /// Anchor position of channel `j = jy * K + jx`.
    pub fn position(&self, j: usize) -> Vector2<f64> {
        let (jx, jy) = (j % self.per_axis, j / self.per_axis);
        Vector2::new(self.axis_position(jx, 0), self.axis_position(jy, 1))
    }

    fn axis_position(&self, idx: usize, axis: usize) -> f64 {
        -self.half_extent[axis] + idx as f64 * self.spacing[axis]
    }

    /// Anchor indices along `axis` within the kernel support of `f`.
    fn axis_range(&self, f: f64, axis: usize) -> core::ops::RangeInclusive<usize> {
        let reach = 1.5 * self.bandwidth[axis];
        let lo = ((f - reach + self.half_extent[axis]) / self.spacing[axis]).ceil().max(0.0);
        let hi = ((f + reach + self.half_extent[axis]) / self.spacing[axis])
            .floor()
            .min(self.per_axis as f64 - 1.0);
        if hi < lo {
            // empty range
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        (lo as usize)..=(hi as usize)
    }
}

/// Particle-to-grid tensor of shape `(H16, W16, K*K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatchTensor {
    dims: GridDims,
    anchors: AnchorGrid,
    data: Vec<f64>,
}

impl ProbMatchTensor {
    pub fn from_parts(dims: GridDims, per_axis: usize, data: Vec<f64>) -> Result<Self, MatchingError> {
        let anchors = AnchorGrid::new(dims, per_axis)?;
        if data.len() != dims.len() * anchors.channels() {
            return Err(MatchingError::DimensionMismatch("tensor data must be rows * cols * K * K"));
        }
        Ok(Self { dims, anchors, data })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    pub fn channels(&self) -> usize {
        self.anchors.channels()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel vector of current patch `(row, col)`.
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let c = self.channels();
        let i = self.dims.index(col, row);
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.cell(row, col)[channel]
    }
}

/// Projects every row of `s` onto displacement anchors.
///
/// Each entry `S[i, k]` is a particle at displacement `x_d^k - x_c^i` carrying
/// mass `S[i, k]`. An anchor's value is the kernel-weighted average of the
/// masses of the particles within its support, or 0 when the support is empty.
/// Particles are scattered onto the anchors they reach; per anchor the
/// particles are accumulated in target-index order.
pub fn particles_to_grid(s: &ScoreMatrix, per_axis: usize) -> Result<ProbMatchTensor, MatchingError> {
    let source = s.source;
    let target = s.target;
    let anchors = AnchorGrid::new(source, per_axis)?;
    let channels = anchors.channels();
    let mut data = vec![0.0; source.len() * channels];
    let mut numer = vec![0.0; channels];
    let mut denom = vec![0.0; channels];
    for (i, cell) in data.chunks_mut(channels).enumerate() {
        numer.iter_mut().for_each(|v| *v = 0.0);
        denom.iter_mut().for_each(|v| *v = 0.0);
        let xc = source.coord(i);
        for (k, &mass) in s.row(i).iter().enumerate() {
            let f = target.coord(k) - xc;
            let xs = anchors.axis_range(f.x, 0);
            let ys = anchors.axis_range(f.y, 1);
            for jy in ys {
                for jx in xs.clone() {
                    let j = jy * per_axis + jx;
                    let offset = (f - anchors.position(j)).component_div(&anchors.bandwidth);
                    let w = bspline_kernel(&offset);
                    if w > 0.0 {
                        numer[j] += mass * w;
                        denom[j] += w;
                    }
                }
            }
        }
        for ((out, n), d) in cell.iter_mut().zip(&numer).zip(&denom) {
            *out = if *d < EMPTY_ANCHOR_EPS { 0.0 } else { n / d };
        }
    }
    Ok(ProbMatchTensor { dims: source, anchors, data })
}
