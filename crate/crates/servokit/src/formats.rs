//! On-disk formats: scene JSON, trajectory JSONL and the binary containers for
//! score matrices and probabilistic matching tensors.
//!
//! Binary layout (all integers `u32` little-endian):
//!
//! | offset | score matrix (`SKSM`)         | matching tensor (`SKPT`)      |
//! |--------|-------------------------------|-------------------------------|
//! | 0      | magic                         | magic                         |
//! | 4      | version = 1                   | version = 1                   |
//! | 8      | source rows, source cols      | rows, cols                    |
//! | 16     | target rows, target cols      | anchor grid K, K              |
//! | 24     | `f32` LE payload, row-major   | `f32` LE payload, row-major   |

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use servokit_core::{ControlMode, GridDims, Pose, ProbMatchTensor, ScoreMatrix};

use crate::error::FormatError;
use crate::sim::{Scene, StepRecord};

pub const SCORE_MAGIC: [u8; 4] = *b"SKSM";
pub const TENSOR_MAGIC: [u8; 4] = *b"SKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn write_scene<W: Write>(mut out: W, scene: &Scene) -> Result<(), FormatError> {
    serde_json::to_writer_pretty(&mut out, scene)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_scene<R: Read>(input: R) -> Result<Scene, FormatError> {
    let scene: Scene = serde_json::from_reader(input)?;
    scene.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(scene)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    /// Row-major 3x3.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let r = &p.rotation;
        Self {
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: p.translation.into(),
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Pose {
        Pose::new(
            nalgebra::Matrix3::from_row_slice(&self.rotation),
            nalgebra::Vector3::from(self.translation),
        )
    }
}

/// One JSONL line of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryLine {
    pub step: usize,
    /// World from camera.
    pub pose: PoseRecord,
    /// `[vx, vy, vz, wx, wy, wz]` in the camera frame, after clamping.
    pub twist: [f64; 6],
    pub te_mm: f64,
    pub re_deg: f64,
    /// `"hybrid"`, `"pbvs"` or null for controllers without modes.
    pub mode: Option<String>,
    pub clamped: bool,
}

pub fn mode_name(mode: ControlMode) -> &'static str {
    match mode {
        ControlMode::Hybrid => "hybrid",
        ControlMode::Pbvs => "pbvs",
    }
}

impl From<&StepRecord> for TrajectoryLine {
    fn from(s: &StepRecord) -> Self {
        Self {
            step: s.step,
            pose: PoseRecord::from(&s.pose),
            twist: s.twist.to_vector().into(),
            te_mm: s.te_mm,
            re_deg: s.re_deg,
            mode: s.mode.map(|m| mode_name(m).to_string()),
            clamped: s.clamped,
        }
    }
}

pub fn write_trajectory<W: Write>(mut out: W, steps: &[StepRecord]) -> Result<(), FormatError> {
    for s in steps {
        serde_json::to_writer(&mut out, &TrajectoryLine::from(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory<R: BufRead>(input: R) -> Result<Vec<TrajectoryLine>, FormatError> {
    let mut lines = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line)?);
    }
    Ok(lines)
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<(), FormatError> {
    let v = u32::try_from(v).map_err(|_| FormatError::Invalid(format!("dimension {v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode(magic: [u8; 4], dims: [usize; 4], data: &[f64]) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in dims {
        put_u32(&mut buf, d)?;
    }
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

fn decode(magic: [u8; 4], bytes: &[u8]) -> Result<([usize; 4], Vec<f64>), FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(FormatError::BadMagic(found));
    }
    if word(1) != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(word(1)));
    }
    let dims = [word(2) as usize, word(3) as usize, word(4) as usize, word(5) as usize];
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let expected = count
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| FormatError::Invalid("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((dims, data))
}

pub fn encode_score_matrix(s: &ScoreMatrix) -> Result<Vec<u8>, FormatError> {
    let (src, tgt) = (s.source(), s.target());
    encode(SCORE_MAGIC, [src.rows, src.cols, tgt.rows, tgt.cols], s.data())
}

/// Entries are widened from `f32`; rows must still sum to one within the
/// score matrix tolerance.
pub fn decode_score_matrix(bytes: &[u8]) -> Result<ScoreMatrix, FormatError> {
    let ([sr, sc, tr, tc], data) = decode(SCORE_MAGIC, bytes)?;
    ScoreMatrix::new(GridDims::new(sr, sc), GridDims::new(tr, tc), data).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn encode_tensor(t: &ProbMatchTensor) -> Result<Vec<u8>, FormatError> {
    let d = t.dims();
    let k = t.anchors().per_axis;
    encode(TENSOR_MAGIC, [d.rows, d.cols, k, k], t.data())
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ProbMatchTensor, FormatError> {
    let ([rows, cols, k, k2], data) = decode(TENSOR_MAGIC, bytes)?;
    if k != k2 {
        return Err(FormatError::Invalid(format!("anchor grid {k}x{k2} is not square")));
    }
    ProbMatchTensor::from_parts(GridDims::new(rows, cols), k, data).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_score_matrix<W: Write>(mut out: W, s: &ScoreMatrix) -> Result<(), FormatError> {
    out.write_all(&encode_score_matrix(s)?)?;
    Ok(())
}

pub fn read_score_matrix<R: Read>(mut input: R) -> Result<ScoreMatrix, FormatError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_score_matrix(&bytes)
}

pub fn write_tensor<W: Write>(mut out: W, t: &ProbMatchTensor) -> Result<(), FormatError> {
    out.write_all(&encode_tensor(t)?)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<ProbMatchTensor, FormatError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}
