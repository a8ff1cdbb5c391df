//! Batch metrics, ablation suites and CSV results.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use servokit_core::GridDims;
use sha2::{Digest, Sha256};

use crate::error::BenchError;
use crate::sim::observe::{mode_row, row_entropy};
use crate::sim::{
    run_indexed_episode, CanonicalMode, ControllerKind, EpisodeConfig, EpisodeResult, ExtraMode, ModeOverride,
};

pub const CSV_HEADER: [&str; 9] = [
    "suite", "cell", "SR_num", "SR_den", "TE_mean", "TE_std", "RE_mean", "RE_std", "TT_mean",
];

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

/// Success ratio plus precision statistics over the successful episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub sr_num: usize,
    pub sr_den: usize,
    pub te: Option<MeanStd>,
    pub re: Option<MeanStd>,
    /// Mean steps to convergence.
    pub tt_mean: Option<f64>,
}

impl Stats {
    pub fn success_ratio(&self) -> String {
        format!("{}/{}", self.sr_num, self.sr_den)
    }
}

pub fn summarize(results: &[EpisodeResult]) -> Stats {
    let ok: Vec<&EpisodeResult> = results.iter().filter(|r| r.success).collect();
    let te: Vec<f64> = ok.iter().map(|r| r.te_mm).collect();
    let re: Vec<f64> = ok.iter().map(|r| r.re_deg).collect();
    let tt: Vec<f64> = ok.iter().map(|r| r.tt_steps as f64).collect();
    Stats {
        sr_num: ok.len(),
        sr_den: results.len(),
        te: MeanStd::of(&te),
        re: MeanStd::of(&re),
        tt_mean: MeanStd::of(&tt).map(|m| m.mean),
    }
}

/// Hex SHA-256 of the JSON serialization of `cfg`.
pub fn fingerprint<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub stats: Stats,
    pub fingerprint: String,
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub suite: String,
    pub cell: String,
    pub stats: Stats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    DenormAware,
    DenormUnaware,
    HybridVsPbvs,
    ProbabilisticVsExplicit,
    NoiseSweep,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::DenormAware,
        Suite::DenormUnaware,
        Suite::HybridVsPbvs,
        Suite::ProbabilisticVsExplicit,
        Suite::NoiseSweep,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Suite::DenormAware => "denorm-aware",
            Suite::DenormUnaware => "denorm-unaware",
            Suite::HybridVsPbvs => "hybrid-vs-pbvs",
            Suite::ProbabilisticVsExplicit => "probabilistic-vs-explicit",
            Suite::NoiseSweep => "noise-sweep",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Suite {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.id() == s)
            .ok_or_else(|| BenchError::UnknownSuite(s.to_string()))
    }
}

pub const DENORM_FOCALS: [f64; 3] = [256.0, 512.0, 768.0];
pub const DENORM_SCALES: [f64; 3] = [0.5, 1.0, 1.5];
/// Lower bound of the initial rotation for the large-rotation batch, degrees.
pub const LARGE_ROTATION_DEG: f64 = 120.0;
pub const NOISE_SWEEP_OUTLIERS: [f64; 6] = [0.0, 0.02, 0.05, 0.1, 0.2, 0.5];
/// Distance between the true and the spurious mode, in patches.
pub const BIMODAL_SEPARATION: f64 = 4.0;
pub const BIMODAL_MASS: f64 = 0.5;
pub const BIMODAL_BLUR: f64 = 0.5;

pub fn denorm_cell_name(focal: f64, scale: f64) -> String {
    format!("f={focal},d={scale}")
}

/// Bimodal noise: half the mass of every row sits `BIMODAL_SEPARATION` patches
/// to the right of the true match.
pub fn bimodal_noise(base: &EpisodeConfig) -> crate::sim::NoiseModel {
    let mut noise = base.noise.clone();
    noise.multimodal = vec![ExtraMode {
        offset: [BIMODAL_SEPARATION, 0.0],
        mass: BIMODAL_MASS,
    }];
    noise.blur_sigma = BIMODAL_BLUR;
    noise
}

/// Blur of a single mode whose row entropy equals that of the bimodal row,
/// both measured at the center of a `grid`.
pub fn equal_entropy_sigma(grid: GridDims) -> f64 {
    let center = Vector2::new((grid.cols / 2) as f64, (grid.rows / 2) as f64);
    let bimodal = [
        (center, 1.0 - BIMODAL_MASS),
        (center + Vector2::new(BIMODAL_SEPARATION, 0.0), BIMODAL_MASS),
    ];
    let target = row_entropy(&mode_row(&bimodal, grid, BIMODAL_BLUR), grid);
    let entropy = |sigma: f64| row_entropy(&mode_row(&[(center, 1.0)], grid, sigma), grid);
    let (mut lo, mut hi) = (BIMODAL_BLUR, BIMODAL_BLUR);
    while entropy(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if entropy(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Named configurations of a suite, derived from `base`.
pub fn suite_cells(suite: Suite, base: &EpisodeConfig) -> Result<Vec<(String, EpisodeConfig)>, BenchError> {
    let cells = match suite {
        Suite::DenormAware | Suite::DenormUnaware => {
            let canonical = if suite == Suite::DenormAware {
                CanonicalMode::Aware
            } else {
                CanonicalMode::Unaware
            };
            let mut cells = Vec::with_capacity(9);
            for focal in DENORM_FOCALS {
                for scale in DENORM_SCALES {
                    let mut cfg = base.clone();
                    cfg.camera.focal = focal;
                    cfg.scene_scale = scale;
                    cfg.canonical = canonical;
                    cells.push((denorm_cell_name(focal, scale), cfg));
                }
            }
            cells
        }
        Suite::HybridVsPbvs => {
            let mut cfg = base.clone();
            cfg.controller = ControllerKind::Hybrid;
            cfg.sampling.rotation_deg[0] = cfg.sampling.rotation_deg[0].max(LARGE_ROTATION_DEG);
            let hybrid = EpisodeConfig {
                mode: ModeOverride::Auto,
                ..cfg.clone()
            };
            let pbvs = EpisodeConfig {
                mode: ModeOverride::Pbvs,
                ..cfg
            };
            vec![("hybrid".to_string(), hybrid), ("pbvs".to_string(), pbvs)]
        }
        Suite::ProbabilisticVsExplicit => {
            let intr = base.camera.intrinsics()?;
            let grid = GridDims::new(intr.grid_rows(), intr.grid_cols());
            let mut bimodal = base.clone();
            bimodal.controller = ControllerKind::EpipolarPbvs;
            bimodal.noise = bimodal_noise(base);
            let mut unimodal = bimodal.clone();
            unimodal.noise.multimodal.clear();
            unimodal.noise.blur_sigma = equal_entropy_sigma(grid);
            vec![("bimodal".to_string(), bimodal), ("unimodal".to_string(), unimodal)]
        }
        Suite::NoiseSweep => NOISE_SWEEP_OUTLIERS
            .iter()
            .map(|&ratio| {
                let mut cfg = base.clone();
                cfg.controller = ControllerKind::EpipolarPbvs;
                cfg.noise.outlier_ratio = ratio;
                (format!("outliers={ratio}"), cfg)
            })
            .collect(),
    };
    for (_, cfg) in &cells {
        cfg.validate()?;
    }
    Ok(cells)
}

/// Episodes `0..episodes` of `cfg`, in index order.
pub fn run_batch(cfg: &EpisodeConfig, episodes: usize) -> Vec<EpisodeResult> {
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| run_indexed_episode(cfg, i))
        .collect()
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub name: String,
    pub config: EpisodeConfig,
    pub summary: BatchSummary,
    pub results: Vec<EpisodeResult>,
}

pub fn run_cell(name: &str, cfg: &EpisodeConfig, episodes: usize) -> CellOutcome {
    let results = run_batch(cfg, episodes);
    CellOutcome {
        name: name.to_string(),
        config: cfg.clone(),
        summary: BatchSummary {
            stats: summarize(&results),
            fingerprint: fingerprint(cfg),
        },
        results,
    }
}

pub fn run_ablation(suite: Suite, base: &EpisodeConfig, episodes: usize) -> Result<Vec<CellOutcome>, BenchError> {
    if episodes == 0 {
        return Err(BenchError::Sim(crate::SimError::InvalidConfig("a batch needs at least one episode".into())));
    }
    let cells = suite_cells(suite, base)?;
    Ok(cells
        .par_iter()
        .map(|(name, cfg)| run_cell(name, cfg, episodes))
        .collect())
}

pub fn result_rows(suite: Suite, cells: &[CellOutcome]) -> Vec<ResultRow> {
    cells
        .iter()
        .map(|c| ResultRow {
            suite: suite.id().to_string(),
            cell: c.name.clone(),
            stats: c.summary.stats.clone(),
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_results<W: Write>(out: W, rows: &[ResultRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let s = &r.stats;
        w.write_record([
            r.suite.clone(),
            r.cell.clone(),
            s.sr_num.to_string(),
            s.sr_den.to_string(),
            opt(s.te.map(|m| m.mean)),
            opt(s.te.map(|m| m.std)),
            opt(s.re.map(|m| m.mean)),
            opt(s.re.map(|m| m.std)),
            opt(s.tt_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>, BenchError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(BenchError::SchemaMismatch(format!(
            "expected header {}, found {}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| BenchError::SchemaMismatch(format!("row {}: bad {what}", line + 1));
        let count = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(CSV_HEADER[i]));
        let float = |i: usize| -> Result<Option<f64>, BenchError> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rec[i].parse::<f64>().map(Some).map_err(|_| bad(CSV_HEADER[i]))
            }
        };
        let pair = |m: usize, s: usize| -> Result<Option<MeanStd>, BenchError> {
            match (float(m)?, float(s)?) {
                (Some(mean), Some(std)) => Ok(Some(MeanStd { mean, std })),
                (None, None) => Ok(None),
                _ => Err(bad(CSV_HEADER[s])),
            }
        };
        let stats = Stats {
            sr_num: count(2)?,
            sr_den: count(3)?,
            te: pair(4, 5)?,
            re: pair(6, 7)?,
            tt_mean: float(8)?,
        };
        if stats.sr_num > stats.sr_den {
            return Err(bad("SR_num"));
        }
        rows.push(ResultRow {
            suite: rec[0].to_string(),
            cell: rec[1].to_string(),
            stats,
        });
    }
    Ok(rows)
}

/// Sidecar written next to a results CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultsMeta {
    pub suite: String,
    pub episodes: usize,
    pub std_convention: String,
    pub tt_unit: String,
    pub thresholds_note: String,
    pub cells: Vec<CellMeta>,
    pub effective_config: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellMeta {
    pub cell: String,
    pub fingerprint: String,
}

impl ResultsMeta {
    pub fn new(suite: Suite, episodes: usize, cells: &[CellOutcome], effective_config: serde_json::Value) -> Self {
        let base: EpisodeConfig = Default::default();
        Self {
            suite: suite.id().to_string(),
            episodes,
            std_convention: "population".into(),
            tt_unit: "steps".into(),
            thresholds_note: format!(
                "success thresholds are configuration defaults (TE < {} mm, RE < {} deg), not measured values",
                base.thresholds.te_mm, base.thresholds.re_deg
            ),
            cells: cells
                .iter()
                .map(|c| CellMeta {
                    cell: c.name.clone(),
                    fingerprint: c.summary.fingerprint.clone(),
                })
                .collect(),
            effective_config,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::FailureReason;

    fn result(success: bool, te: f64, re: f64, tt: usize) -> EpisodeResult {
        EpisodeResult {
            success,
            te_mm: te,
            re_deg: re,
            tt_steps: tt,
            diverged: false,
            mode_switch_step: None,
            failure: (!success).then_some(FailureReason::MaxSteps),
            initial_te_mm: 100.0,
            initial_re_deg: 10.0,
            trajectory: Vec::new(),
        }
    }

    #[test]
    fn all_failures_have_no_stats() {
        let s = summarize(&[result(false, 9.0, 9.0, 600), result(false, 8.0, 2.0, 600)]);
        assert_eq!(s.success_ratio(), "0/2");
        assert!(s.te.is_none() && s.re.is_none() && s.tt_mean.is_none());
    }

    #[test]
    fn single_success() {
        let s = summarize(&[result(true, 1.0, 0.1, 40)]);
        assert_eq!(s.te, Some(MeanStd { mean: 1.0, std: 0.0 }));
        assert_eq!(s.re, Some(MeanStd { mean: 0.1, std: 0.0 }));
    }

    #[test]
    fn population_std_by_hand() {
        let s = summarize(&[
            result(true, 1.0, 0.0, 1),
            result(true, 2.0, 0.0, 1),
            result(true, 3.0, 0.0, 1),
            result(false, 50.0, 0.0, 600),
        ]);
        let te = s.te.unwrap();
        assert_eq!(te.mean, 2.0);
        // sqrt(2/3)
        assert!((te.std - 0.816_496_580_927_726).abs() < 1e-12);
        assert_eq!(s.success_ratio(), "3/4");
    }

    #[test]
    fn suite_ids_roundtrip() {
        for s in Suite::ALL {
            assert_eq!(s.id().parse::<Suite>().unwrap(), s);
        }
        assert!(matches!("table-9".parse::<Suite>(), Err(BenchError::UnknownSuite(_))));
    }

    #[test]
    fn denorm_suites_have_nine_cells() {
        let base = EpisodeConfig::default();
        for s in [Suite::DenormAware, Suite::DenormUnaware] {
            let cells = suite_cells(s, &base).unwrap();
            assert_eq!(cells.len(), 9);
            assert!(cells.iter().any(|(n, _)| n == "f=512,d=1"));
        }
    }

    #[test]
    fn equal_entropy_matches_bimodal() {
        let grid = GridDims::new(32, 32);
        let sigma = equal_entropy_sigma(grid);
        let c = Vector2::new(16.0, 16.0);
        let uni = row_entropy(&mode_row(&[(c, 1.0)], grid, sigma), grid);
        let bi = row_entropy(
            &mode_row(&[(c, 0.5), (c + Vector2::new(4.0, 0.0), 0.5)], grid, BIMODAL_BLUR),
            grid,
        );
        assert!((uni - bi).abs() < 1e-9, "{uni} vs {bi}");
        assert!(sigma > BIMODAL_BLUR);
    }

    #[test]
    fn fingerprint_tracks_fields() {
        let a = EpisodeConfig::default();
        let mut b = a.clone();
        assert_eq!(fingerprint(&a), fingerprint(&b));
        b.noise.outlier_ratio = 0.01;
        assert_ne!(fingerprint(&a), fingerprint(&b));
        assert_eq!(fingerprint(&a).len(), 64);
    }

    #[test]
    fn csv_roundtrip_and_empty() {
        let rows = vec![
            ResultRow {
                suite: "noise-sweep".into(),
                cell: "outliers=0.5".into(),
                stats: summarize(&[result(false, 1.0, 1.0, 600)]),
            },
            ResultRow {
                suite: "noise-sweep".into(),
                cell: "f=256,d=0.5".into(),
                stats: summarize(&[result(true, 1.0 / 3.0, 0.123456789123, 81), result(true, 2.5, 0.2, 90)]),
            },
        ];
        let mut buf = Vec::new();
        write_results(&mut buf, &rows).unwrap();
        assert_eq!(read_results(buf.as_slice()).unwrap(), rows);

        let mut empty = Vec::new();
        write_results(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty.clone()).unwrap().lines().count(), 1);
        assert!(read_results(empty.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_schema_mismatch() {
        let text = "suite,cell,SR_num,SR_den,TE_mean,TE_std,RE_mean,RE_std\n";
        assert!(matches!(read_results(text.as_bytes()), Err(BenchError::SchemaMismatch(_))));
    }
}
