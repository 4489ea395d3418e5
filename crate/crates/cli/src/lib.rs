//! Sweep runner behind the `fimcrb` binary.

pub mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use fimcrb_core::ao::{optimize, AoResult, AoSettings, Mode};
use fimcrb_core::model::generate_scenario;
use fimcrb_core::sensing::{beampattern, degree_grid, music_estimate, normalized_db, synthesize_echo, EchoTarget};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use config::{ExperimentConfig, Preset, Sweep, SweepVar, SystemSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn from_core(e: fimcrb_core::Error) -> Self {
        match e {
            fimcrb_core::Error::InvalidConfig { field, reason } => CliError::config(field, reason),
            other => CliError::config("system", other.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Infeasible(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Record wall-clock stage times; otherwise `runtime_s` is written as 0
    /// so that repeated runs give byte-identical files.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 1, timing: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub mode: Mode,
    pub draw: usize,
    pub avg_crb: f64,
    pub crb_stderr: f64,
    pub avg_fisher: f64,
    pub outer_iters: usize,
    pub feasible: bool,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeampatternRow {
    pub angle_deg: f64,
    pub mode: Mode,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MusicOutputRows {
    pub spectrum: Vec<(f64, f64)>,
    pub estimates_deg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub sweep_var: Option<SweepVar>,
    pub rows: Vec<ResultRow>,
    pub beampattern: Vec<BeampatternRow>,
    pub music: Option<MusicOutputRows>,
}

/// Per-draw seeds. Every sweep point and mode sees the same user channels,
/// Monte-Carlo angles and echo noise for a given draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrawSeeds {
    pub scenario: u64,
    pub crb: u64,
    pub echo: u64,
}

pub fn draw_seeds(seed: u64, draw: usize) -> DrawSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    DrawSeeds {
        scenario: rng.next_u64(),
        crb: rng.next_u64(),
        echo: rng.next_u64(),
    }
}

struct Task {
    sweep_index: usize,
    value: f64,
    mode: Mode,
    draw: usize,
}

/// Runs AO and the Monte-Carlo CRB for every (sweep value, mode, draw).
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput, CliError> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for (sweep_index, &value) in cfg.sweep.values.iter().enumerate() {
        for &mode in &cfg.modes {
            for draw in 0..cfg.n_channel_draws {
                tasks.push(Task {
                    sweep_index,
                    value,
                    mode,
                    draw,
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| CliError::config("workers", e.to_string()))?;
    let settings = AoSettings::default();
    let results: Vec<Result<(ResultRow, Option<AoResult>), CliError>> =
        pool.install(|| tasks.par_iter().map(|t| run_task(cfg, t, &settings, opts)).collect());
    let mut rows = Vec::with_capacity(results.len());
    let mut designs = Vec::new();
    for r in results {
        let (row, design) = r?;
        if let Some(d) = design {
            designs.push(d);
        }
        rows.push(row);
    }
    rows.sort_by(|a, b| (a.sweep_index, a.mode, a.draw).cmp(&(b.sweep_index, b.mode, b.draw)));
    if rows.iter().all(|r| !r.feasible) {
        return Err(CliError::Infeasible(
            "no (sweep value, draw) admits a beamformer meeting the SINR targets".into(),
        ));
    }
    let mut out = ExperimentOutput {
        sweep_var: Some(cfg.sweep.var),
        rows,
        ..ExperimentOutput::default()
    };
    if cfg.sensing {
        designs.sort_by_key(|d| d.mode);
        sensing_outputs(cfg, &designs, &mut out)?;
    }
    Ok(out)
}

fn run_task(
    cfg: &ExperimentConfig,
    t: &Task,
    settings: &AoSettings,
    opts: &RunOptions,
) -> Result<(ResultRow, Option<AoResult>), CliError> {
    let sys = cfg.point_system(t.value)?;
    let seeds = draw_seeds(cfg.seed, t.draw);
    let scenario = generate_scenario(&sys, seeds.scenario);
    let start = Instant::now();
    let mut row = ResultRow {
        sweep_index: t.sweep_index,
        sweep_value: t.value,
        mode: t.mode,
        draw: t.draw,
        avg_crb: f64::NAN,
        crb_stderr: f64::NAN,
        avg_fisher: f64::NAN,
        outer_iters: 0,
        feasible: false,
        runtime_s: 0.0,
    };
    let result = match optimize(&sys, &scenario.users, &scenario.targets, t.mode, settings) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{} = {} {} draw {}: {e}", cfg.sweep.var, t.value, t.mode, t.draw);
            return Ok((row, None));
        }
    };
    row.avg_fisher = result.objective();
    row.outer_iters = result.iterations;
    match result.avg_crb(&sys, &scenario.targets, cfg.n_mc_crb, seeds.crb) {
        Ok(est) => {
            row.avg_crb = est.estimate;
            row.crb_stderr = est.std_error;
            row.feasible = true;
        }
        Err(e) => log::warn!("{} = {} {} draw {}: {e}", cfg.sweep.var, t.value, t.mode, t.draw),
    }
    if opts.timing {
        row.runtime_s = start.elapsed().as_secs_f64();
    }
    let keep = cfg.sensing && t.sweep_index == 0 && t.draw == 0;
    Ok((row, keep.then_some(result)))
}

/// Beampatterns of every first-point design and a MUSIC run on the Joint
/// design (or the last mode listed when Joint is absent).
fn sensing_outputs(cfg: &ExperimentConfig, designs: &[AoResult], out: &mut ExperimentOutput) -> Result<(), CliError> {
    let Some(music_design) = designs.iter().find(|d| d.mode == Mode::Joint).or(designs.last()) else {
        return Ok(());
    };
    let sys = cfg.point_system(cfg.sweep.values[0])?;
    let grid = degree_grid(0.0, 180.0, 0.1);
    for d in designs {
        let (tx, _) = d.geometries(&sys).map_err(CliError::from_core)?;
        let db = normalized_db(&beampattern(&d.w.w, &tx, &grid));
        out.beampattern.extend(grid.iter().zip(db).map(|(th, g)| BeampatternRow {
            angle_deg: th.to_degrees(),
            mode: d.mode,
            gain_db: g,
        }));
    }
    let (tx, rx) = music_design.geometries(&sys).map_err(CliError::from_core)?;
    let targets: Vec<EchoTarget> = sys
        .targets
        .iter()
        .map(|p| EchoTarget {
            theta: p.mean,
            alpha: sys.alpha_r,
        })
        .collect();
    let echo = synthesize_echo(&music_design.w, &tx, &rx, &targets, &sys, draw_seeds(cfg.seed, 0).echo)
        .map_err(CliError::from_core)?;
    let music = music_estimate(&echo, &rx, targets.len(), &grid).map_err(CliError::from_core)?;
    let db = normalized_db(&music.spectrum);
    let mut estimates: Vec<f64> = music.angles.iter().map(|a| a.to_degrees()).collect();
    estimates.sort_by(f64::total_cmp);
    out.music = Some(MusicOutputRows {
        spectrum: grid.iter().map(|t| t.to_degrees()).zip(db).collect(),
        estimates_deg: estimates,
    });
    Ok(())
}

/// Floats at 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub const RESULTS_HEADER: &str =
    "sweep_var,sweep_value,mode,draw,avg_crb,crb_stderr,avg_fisher,outer_iters,feasible,runtime_s";

pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let var = out.sweep_var.map(|v| v.name()).unwrap_or("");
    let mut f = BufWriter::new(fs::File::create(dir.join("results.csv")).map_err(io)?);
    writeln!(f, "{RESULTS_HEADER}").map_err(io)?;
    for r in &out.rows {
        writeln!(
            f,
            "{var},{},{},{},{},{},{},{},{},{}",
            fmt_float(r.sweep_value),
            r.mode,
            r.draw,
            fmt_float(r.avg_crb),
            fmt_float(r.crb_stderr),
            fmt_float(r.avg_fisher),
            r.outer_iters,
            r.feasible,
            fmt_float(r.runtime_s)
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)?;
    if !out.beampattern.is_empty() {
        let mut f = BufWriter::new(fs::File::create(dir.join("beampattern.csv")).map_err(io)?);
        writeln!(f, "angle_deg,mode,gain_db").map_err(io)?;
        for r in &out.beampattern {
            writeln!(f, "{},{},{}", fmt_float(r.angle_deg), r.mode, fmt_float(r.gain_db)).map_err(io)?;
        }
        f.flush().map_err(io)?;
    }
    if let Some(m) = &out.music {
        let mut f = BufWriter::new(fs::File::create(dir.join("music.csv")).map_err(io)?);
        writeln!(f, "angle_deg,pseudo_spectrum_db").map_err(io)?;
        for (a, p) in &m.spectrum {
            writeln!(f, "{},{}", fmt_float(*a), fmt_float(*p)).map_err(io)?;
        }
        for a in &m.estimates_deg {
            writeln!(f, "estimated_angle_deg,{}", fmt_float(*a)).map_err(io)?;
        }
        f.flush().map_err(io)?;
    }
    Ok(())
}
