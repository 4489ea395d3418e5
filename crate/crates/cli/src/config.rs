//! Experiment configuration files and the built-in presets.
//!
//! Files are JSON. Powers are given in dBm, lengths in wavelengths and
//! angles in degrees; everything is converted to SI units on load.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fimcrb_core::ao::Mode;
use fimcrb_core::model::{dbm_to_watts, path_gain_amplitude, DerivativeConvention, SystemConfig, TargetPrior};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub n_t: usize,
    pub n_r: usize,
    pub users: usize,
    pub block_len: usize,
    pub wavelength_m: f64,
    pub spacing_wavelengths: f64,
    pub y_min_wavelengths: f64,
    pub y_max_wavelengths: f64,
    pub p_max_dbm: f64,
    pub sigma_r2_dbm: f64,
    pub sigma_k2_dbm: f64,
    /// Per-user rate threshold in bps/Hz.
    pub rate_threshold: f64,
    /// Sets the reflection amplitude through the path-loss model.
    pub target_distance_m: f64,
    pub quad_order: usize,
    pub targets_deg: Vec<f64>,
    /// Prior spreads in radians; empty means the beamwidth rule
    /// `0.4·0.886/(N_t cos θ̄)` for every target.
    pub sigma_theta_rad: Vec<f64>,
    pub convention: DerivativeConvention,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            n_t: 8,
            n_r: 8,
            users: 2,
            block_len: 128,
            wavelength_m: 0.01,
            spacing_wavelengths: 0.5,
            y_min_wavelengths: 0.0,
            y_max_wavelengths: 2.0,
            p_max_dbm: 26.0,
            sigma_r2_dbm: -80.0,
            sigma_k2_dbm: -80.0,
            rate_threshold: 4.0,
            target_distance_m: 50.0,
            quad_order: 5,
            targets_deg: vec![45.0],
            sigma_theta_rad: Vec::new(),
            convention: DerivativeConvention::Exact,
        }
    }
}

impl SystemSpec {
    pub fn to_system(&self) -> Result<SystemConfig, CliError> {
        let lambda = self.wavelength_m;
        if !self.sigma_theta_rad.is_empty() && self.sigma_theta_rad.len() != self.targets_deg.len() {
            return Err(CliError::config(
                "sigma_theta_rad",
                format!("{} spreads for {} targets", self.sigma_theta_rad.len(), self.targets_deg.len()),
            ));
        }
        if !(self.target_distance_m > 0.0) {
            return Err(CliError::config("target_distance_m", "must be positive"));
        }
        let mut targets = Vec::with_capacity(self.targets_deg.len());
        for (i, deg) in self.targets_deg.iter().enumerate() {
            let mean = deg.to_radians();
            let prior = match self.sigma_theta_rad.get(i) {
                Some(&s) => TargetPrior::new(mean, s).map_err(CliError::from_core)?,
                None => {
                    let p = TargetPrior::beamwidth_scaled(mean, self.n_t);
                    TargetPrior::new(p.mean, p.std)
                        .map_err(|_| CliError::config("targets_deg", format!("beamwidth rule undefined at {deg}°")))?
                }
            };
            targets.push(prior);
        }
        let cfg = SystemConfig {
            n_t: self.n_t,
            n_r: self.n_r,
            users: self.users,
            block_len: self.block_len,
            wavelength: lambda,
            spacing: self.spacing_wavelengths * lambda,
            y_min: self.y_min_wavelengths * lambda,
            y_max: self.y_max_wavelengths * lambda,
            p_max: dbm_to_watts(self.p_max_dbm),
            sigma_r2: dbm_to_watts(self.sigma_r2_dbm),
            sigma_k2: dbm_to_watts(self.sigma_k2_dbm),
            rate_threshold: self.rate_threshold,
            alpha_r: Complex64::new(path_gain_amplitude(self.target_distance_m), 0.0),
            quad_order: self.quad_order,
            targets,
            convention: self.convention,
            seed: 0,
        };
        cfg.validate().map_err(CliError::from_core)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    #[serde(rename = "R_th")]
    RateThreshold,
    #[serde(rename = "P_max_dBm")]
    PowerDbm,
    #[serde(rename = "K")]
    Users,
    /// `y_max − y_min` in wavelengths.
    #[serde(rename = "morph_range")]
    MorphRange,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::RateThreshold => "R_th",
            SweepVar::PowerDbm => "P_max_dBm",
            SweepVar::Users => "K",
            SweepVar::MorphRange => "morph_range",
        }
    }

    /// Returns `spec` with the swept quantity set to `value`.
    pub fn apply(self, spec: &SystemSpec, value: f64) -> Result<SystemSpec, CliError> {
        let mut s = spec.clone();
        match self {
            SweepVar::RateThreshold => s.rate_threshold = value,
            SweepVar::PowerDbm => s.p_max_dbm = value,
            SweepVar::Users => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(CliError::config("sweep.values", format!("K = {value} is not a user count")));
                }
                s.users = value as usize;
            }
            SweepVar::MorphRange => {
                if value < 0.0 {
                    return Err(CliError::config("sweep.values", format!("negative morphing range {value}")));
                }
                s.y_max_wavelengths = s.y_min_wavelengths + value;
            }
        }
        Ok(s)
    }
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: SystemSpec,
    pub sweep: Sweep,
    #[serde(default = "all_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_draws")]
    pub n_channel_draws: usize,
    #[serde(default = "default_mc")]
    pub n_mc_crb: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Also emit beampattern and MUSIC outputs.
    #[serde(default)]
    pub sensing: bool,
}

fn all_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

fn default_draws() -> usize {
    20
}

fn default_mc() -> usize {
    2000
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            field: "path".into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config {
            field: "json".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.sweep.values.is_empty() {
            return Err(CliError::config("sweep.values", "empty value list"));
        }
        if self.modes.is_empty() {
            return Err(CliError::config("modes", "empty mode list"));
        }
        if self.n_channel_draws == 0 {
            return Err(CliError::config("n_channel_draws", "need at least one draw"));
        }
        if self.n_mc_crb < 100 {
            return Err(CliError::config("n_mc_crb", "need at least 100 samples"));
        }
        for &v in &self.sweep.values {
            self.point_system(v)?;
        }
        Ok(())
    }

    pub fn point_system(&self, value: f64) -> Result<SystemConfig, CliError> {
        self.sweep.var.apply(&self.system, value)?.to_system()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
    Fig4Morph,
    Fig5,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            "fig4-morph" => Ok(Preset::Fig4Morph),
            "fig5" => Ok(Preset::Fig5),
            _ => Err(format!("unknown preset `{s}` (fig2, fig3, fig4, fig4-morph, fig5)")),
        }
    }
}

impl Preset {
    pub fn config(self) -> ExperimentConfig {
        let range = |a: f64, b: f64, step: f64| -> Vec<f64> {
            let n = ((b - a) / step).round() as usize;
            (0..=n).map(|i| a + step * i as f64).collect()
        };
        let (var, values) = match self {
            Preset::Fig2 => (SweepVar::RateThreshold, range(1.0, 7.0, 1.0)),
            Preset::Fig3 => (SweepVar::PowerDbm, range(20.0, 30.0, 2.0)),
            Preset::Fig4 => (SweepVar::Users, range(1.0, 4.0, 1.0)),
            Preset::Fig4Morph => (SweepVar::MorphRange, range(0.0, 3.0, 0.5)),
            Preset::Fig5 => (SweepVar::RateThreshold, vec![4.0]),
        };
        let mut system = SystemSpec::default();
        let mut modes = all_modes();
        let mut n_channel_draws = default_draws();
        if self == Preset::Fig5 {
            system.targets_deg = vec![35.0, 55.0];
            modes = vec![Mode::Ra, Mode::Joint];
            n_channel_draws = 1;
        }
        ExperimentConfig {
            system,
            sweep: Sweep { var, values },
            modes,
            n_channel_draws,
            n_mc_crb: default_mc(),
            seed: 0,
            out: default_out(),
            sensing: self == Preset::Fig5,
        }
    }
}

/// Quantities derived from a configuration, for `validate-config`.
pub fn derived_report(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let mut out = String::new();
    for &v in &cfg.sweep.values {
        let sys = cfg.point_system(v)?;
        out.push_str(&format!(
            "{} = {v}: delta = {:.6} rad/m, r_th = {:.6}, P_max = {:.6} W, sigma_r2 = {:.3e} W",
            cfg.sweep.var,
            sys.wavenumber(),
            sys.sinr_threshold(),
            sys.p_max,
            sys.sigma_r2
        ));
        for t in &sys.targets {
            out.push_str(&format!(
                ", theta_bar = {:.4} deg sigma_theta = {:.5} rad",
                t.mean.to_degrees(),
                t.std
            ));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "modes: {}, draws: {}, mc samples: {}, seed: {}\n",
        cfg.modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
        cfg.n_channel_draws,
        cfg.n_mc_crb,
        cfg.seed
    ));
    Ok(out)
}
