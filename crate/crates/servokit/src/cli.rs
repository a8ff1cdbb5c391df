//! `servokit` command line.
//!
//! Every flag has a config-file key. The file is read first, flags override
//! it, and the merged configuration is echoed into each output's metadata.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use servokit_core::matching::{particles_to_grid, DEFAULT_ANCHORS_PER_AXIS};

use crate::bench::{fingerprint, result_rows, run_ablation, write_results, ResultsMeta, Suite};
use crate::formats::{read_score_matrix, write_scene, write_tensor, write_trajectory};
use crate::seeds::EpisodeSeeds;
use crate::sim::{generate_scene, run_indexed_episode, ControllerKind, EpisodeConfig, FailureReason};
use crate::verify::{equivariance_report, run_all};

pub const THREADS_ENV: &str = "SERVOKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "servokit", version, about = "Visual servo simulator and benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scene as JSON.
    GenScene(CommonArgs),
    /// Run one episode; writes the trajectory as JSONL plus a summary.
    Run(CommonArgs),
    /// Run an ablation suite; writes a results CSV plus metadata.
    Ablate(CommonArgs),
    /// Project a serialized score matrix onto anchors and check equivariance.
    InspectP2g(CommonArgs),
    /// Run the invariant checks and report pass/fail counts.
    Verify(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    pub suite: Option<String>,
    #[arg(long, value_name = "N")]
    pub parallel: Option<usize>,
    #[arg(long, value_name = "ID")]
    pub controller: Option<ControllerKind>,
    #[arg(long, value_name = "N")]
    pub episodes: Option<usize>,
    /// Serialized score matrix for inspect-p2g.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Anchors per axis for inspect-p2g.
    #[arg(long, value_name = "K")]
    pub anchors: Option<usize>,
    /// Grid shift used by the equivariance report, `DX,DY`.
    #[arg(long, value_name = "DX,DY", value_parser = parse_shift)]
    pub shift: Option<[i64; 2]>,
}

fn parse_shift(s: &str) -> Result<[i64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected DX,DY")?;
    let p = |v: &str| v.trim().parse::<i64>().map_err(|e| e.to_string());
    Ok([p(a)?, p(b)?])
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub episode: EpisodeConfig,
    pub out: Option<PathBuf>,
    pub suite: Option<String>,
    pub parallel: Option<usize>,
    pub episodes: usize,
    pub input: Option<PathBuf>,
    pub anchors: usize,
    pub shift: [i64; 2],
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::default(),
            out: None,
            suite: None,
            parallel: None,
            episodes: 20,
            input: None,
            anchors: DEFAULT_ANCHORS_PER_AXIS,
            shift: [1, 1],
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, args: &CommonArgs) {
        if let Some(seed) = args.seed {
            self.episode.seed = seed;
        }
        if let Some(c) = args.controller {
            self.episode.controller = c;
        }
        if let Some(out) = &args.out {
            self.out = Some(out.clone());
        }
        if let Some(suite) = &args.suite {
            self.suite = Some(suite.clone());
        }
        if let Some(p) = args.parallel {
            self.parallel = Some(p);
        }
        if let Some(n) = args.episodes {
            self.episodes = n;
        }
        if let Some(input) = &args.input {
            self.input = Some(input.clone());
        }
        if let Some(k) = args.anchors {
            self.anchors = k;
        }
        if let Some(s) = args.shift {
            self.shift = s;
        }
    }

    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(args);
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// `a/b.csv` with `suffix = "meta.json"` becomes `a/b.meta.json`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(runtime)?;
    w.write_all(b"\n").map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn thread_count(requested: Option<usize>) -> Result<Option<usize>, CliError> {
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        ),
        Err(_) => None,
    };
    if requested == Some(0) {
        return Err(CliError::Usage("--parallel must be at least 1".into()));
    }
    Ok(match (requested, cap) {
        (Some(r), Some(c)) => Some(r.min(c)),
        (r, c) => r.or(c),
    })
}

#[derive(Serialize)]
struct RunSummary<'a> {
    success: bool,
    te_mm: f64,
    re_deg: f64,
    tt_steps: usize,
    tt_unit: &'static str,
    diverged: bool,
    mode_switch_step: Option<usize>,
    failure: &'a Option<FailureReason>,
    initial_te_mm: f64,
    initial_re_deg: f64,
    thresholds_note: &'static str,
    fingerprint: String,
    effective_config: &'a CliConfig,
}

const THRESHOLDS_NOTE: &str = "success thresholds are configuration defaults, not measured values";

fn gen_scene(cfg: &CliConfig) -> Result<(), CliError> {
    cfg.episode.scene.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let seeds = EpisodeSeeds::new(cfg.episode.seed, 0);
    let scene = generate_scene(&cfg.episode.scene, cfg.episode.scene_scale, seeds.scene)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("scene.json"));
    let mut w = create(&out)?;
    write_scene(&mut w, &scene).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    println!("wrote {} points to {}", scene.len(), out.display());
    Ok(())
}

fn run(cfg: &CliConfig) -> Result<(), CliError> {
    let result = run_indexed_episode(&cfg.episode, 0);
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("trajectory.jsonl"));
    let mut w = create(&out)?;
    write_trajectory(&mut w, &result.trajectory).map_err(runtime)?;
    let summary = RunSummary {
        success: result.success,
        te_mm: result.te_mm,
        re_deg: result.re_deg,
        tt_steps: result.tt_steps,
        tt_unit: "steps",
        diverged: result.diverged,
        mode_switch_step: result.mode_switch_step,
        failure: &result.failure,
        initial_te_mm: result.initial_te_mm,
        initial_re_deg: result.initial_re_deg,
        thresholds_note: THRESHOLDS_NOTE,
        fingerprint: fingerprint(&cfg.episode),
        effective_config: cfg,
    };
    write_json(&sidecar(&out, "summary.json"), &summary)?;
    println!(
        "{} after {} steps: TE {:.3} mm, RE {:.3} deg",
        if result.success { "converged" } else { "failed" },
        result.tt_steps,
        result.te_mm,
        result.re_deg
    );
    Ok(())
}

fn ablate(cfg: &CliConfig) -> Result<(), CliError> {
    let id = cfg.suite.as_deref().ok_or_else(|| CliError::Usage("ablate needs --suite".into()))?;
    let suite: Suite = id.parse().map_err(|e: crate::BenchError| CliError::Usage(e.to_string()))?;
    if cfg.episodes == 0 {
        return Err(CliError::Usage("episodes must be at least 1".into()));
    }
    let cells = run_ablation(suite, &cfg.episode, cfg.episodes).map_err(|e| match e {
        crate::BenchError::Sim(s) => CliError::Usage(s.to_string()),
        other => runtime(other),
    })?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from(format!("{id}.csv")));
    let rows = result_rows(suite, &cells);
    let mut w = create(&out)?;
    write_results(&mut w, &rows).map_err(runtime)?;
    let config = serde_json::to_value(cfg).map_err(runtime)?;
    write_json(&sidecar(&out, "meta.json"), &ResultsMeta::new(suite, cfg.episodes, &cells, config))?;
    for r in &rows {
        let s = &r.stats;
        let fmt = |m: Option<crate::bench::MeanStd>| m.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<18} SR {:>6}  TE {}  RE {}", r.cell, s.success_ratio(), fmt(s.te), fmt(s.re));
    }
    Ok(())
}

#[derive(Serialize)]
struct InspectReport<'a> {
    input: &'a Path,
    tensor: &'a Path,
    rows: usize,
    cols: usize,
    channels: usize,
    equivariance: crate::verify::EquivarianceReport,
}

fn inspect_p2g(cfg: &CliConfig) -> Result<(), CliError> {
    let input = cfg.input.as_deref().ok_or_else(|| CliError::Usage("inspect-p2g needs --input".into()))?;
    let file = File::open(input).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    let scores = read_score_matrix(std::io::BufReader::new(file)).map_err(|e| CliError::Usage(e.to_string()))?;
    let tensor = particles_to_grid(&scores, cfg.anchors).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = equivariance_report(&scores, &tensor, cfg.shift).map_err(runtime)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("tensor.skpt"));
    let mut w = create(&out)?;
    write_tensor(&mut w, &tensor).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    let d = tensor.dims();
    println!(
        "tensor {}x{}x{}; shift {:?}: max deviation {:e} over {} cells, {:e} over {} interior cells",
        d.rows,
        d.cols,
        tensor.channels(),
        report.shift,
        report.max_deviation,
        report.compared_cells,
        report.interior_max_deviation,
        report.interior_cells
    );
    write_json(
        &sidecar(&out, "report.json"),
        &InspectReport {
            input,
            tensor: &out,
            rows: d.rows,
            cols: d.cols,
            channels: tensor.channels(),
            equivariance: report,
        },
    )
}

fn verify(cfg: &CliConfig) -> Result<(), CliError> {
    let report = run_all(cfg.episode.seed);
    for c in &report.checks {
        println!(
            "{} {:<32} {:>5} trials, worst {:e} (tol {:e})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.trials,
            c.worst,
            c.tolerance
        );
    }
    println!("{} passed, {} failed", report.passed(), report.failed());
    if let Some(out) = &cfg.out {
        write_json(out, &report)?;
    }
    if report.failed() > 0 {
        return Err(CliError::Runtime(format!("{} invariant checks failed", report.failed())));
    }
    Ok(())
}

type Handler = fn(&CliConfig) -> Result<(), CliError>;

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let (args, handler): (&CommonArgs, Handler) = match &cli.command {
        Command::GenScene(a) => (a, gen_scene),
        Command::Run(a) => (a, run),
        Command::Ablate(a) => (a, ablate),
        Command::InspectP2g(a) => (a, inspect_p2g),
        Command::Verify(a) => (a, verify),
    };
    let cfg = CliConfig::resolve(args)?;
    if matches!(cli.command, Command::Run(_)) {
        cfg.episode.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match thread_count(cfg.parallel)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(runtime)?
            .install(|| handler(&cfg)),
        None => handler(&cfg),
    }
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let mut cfg = CliConfig {
            episodes: 5,
            ..Default::default()
        };
        cfg.episode.seed = 3;
        let args = CommonArgs {
            seed: Some(9),
            controller: Some(ControllerKind::OraclePbvs),
            ..Default::default()
        };
        cfg.apply(&args);
        assert_eq!(cfg.episode.seed, 9);
        assert_eq!(cfg.episode.controller, ControllerKind::OraclePbvs);
        assert_eq!(cfg.episodes, 5);
    }

    #[test]
    fn config_file_shape() {
        let cfg: CliConfig = serde_json::from_str(r#"{"episode": {"seed": 4, "dt": 0.01}, "suite": "noise-sweep"}"#).unwrap();
        assert_eq!(cfg.episode.seed, 4);
        assert_eq!(cfg.episode.dt, 0.01);
        assert_eq!(cfg.episodes, 20);
        assert!(serde_json::from_str::<CliConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn shift_parser() {
        assert_eq!(parse_shift("2,-3").unwrap(), [2, -3]);
        assert!(parse_shift("2").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["servokit", "frobnicate"]), 1);
        assert_eq!(main_with_args(["servokit"]), 1);
        assert_eq!(main_with_args(["servokit", "ablate", "--suite", "nope"]), 1);
        assert_eq!(main_with_args(["servokit", "--help"]), 0);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("a/r.csv"), "meta.json"), PathBuf::from("a/r.meta.json"));
    }
}
