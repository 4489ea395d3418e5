//! Alternating optimization over the beamformer and the two surface shapes.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::beamform::{optimize_beamformer, BeamformSettings, SensingDirections, SolveReport};
use crate::error::{Error, Result};
use crate::fisher::{avg_crb_mc, avg_fisher_nodes, CrbEstimate};
use crate::model::{realize_all, ArrayGeometry, BeamformerSet, SurfaceShape, SystemConfig, TargetPrior, UserChannel};
use crate::quadrature::{GaussHermiteRule, WeightedAngle};
use crate::rxshape::{solve_fixed_point, RxObjectiveData};
use crate::txshape::{pga, PgaSettings};

/// Which surfaces are reconfigurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Rigid arrays on both sides.
    #[serde(rename = "RA")]
    Ra,
    #[serde(rename = "RXonly")]
    RxOnly,
    #[serde(rename = "TXonly")]
    TxOnly,
    Joint,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Ra, Mode::RxOnly, Mode::TxOnly, Mode::Joint];

    pub fn shapes_rx(self) -> bool {
        matches!(self, Mode::RxOnly | Mode::Joint)
    }

    pub fn shapes_tx(self) -> bool {
        matches!(self, Mode::TxOnly | Mode::Joint)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ra => "RA",
            Mode::RxOnly => "RXonly",
            Mode::TxOnly => "TXonly",
            Mode::Joint => "Joint",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ra" => Ok(Mode::Ra),
            "rxonly" | "rx" => Ok(Mode::RxOnly),
            "txonly" | "tx" => Ok(Mode::TxOnly),
            "joint" => Ok(Mode::Joint),
            _ => Err(Error::InvalidConfig {
                field: "mode",
                reason: format!("unknown mode `{s}` (expected RA, RXonly, TXonly or Joint)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoSettings {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub beamform: BeamformSettings,
    pub pga: PgaSettings,
}

impl Default for AoSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            max_iter: 30,
            beamform: BeamformSettings::default(),
            pga: PgaSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub beamform_s: f64,
    pub rx_s: f64,
    pub tx_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoResult {
    pub mode: Mode,
    pub w: BeamformerSet,
    pub y_r: SurfaceShape,
    pub y_t: SurfaceShape,
    /// Surrogate after the initial beamformer and after every outer iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub timings: StageTimings,
    pub solves: Vec<SolveReport>,
}

impl AoResult {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial value")
    }

    pub fn geometries(&self, cfg: &SystemConfig) -> Result<(ArrayGeometry, ArrayGeometry)> {
        Ok((cfg.tx_geometry(&self.y_t)?, cfg.rx_geometry(&self.y_r)?))
    }

    /// Monte-Carlo average CRB of the final design.
    pub fn avg_crb(&self, cfg: &SystemConfig, targets: &[TargetPrior], n_samples: usize, seed: u64) -> Result<CrbEstimate> {
        let (tx, rx) = self.geometries(cfg)?;
        avg_crb_mc(&self.w, &tx, &rx, targets, n_samples, seed, cfg)
    }
}

struct Stage<'a> {
    cfg: &'a SystemConfig,
    users: &'a [UserChannel],
    nodes: Vec<WeightedAngle>,
    settings: &'a AoSettings,
}

impl Stage<'_> {
    fn surrogate(&self, w: &BeamformerSet, tx: &ArrayGeometry, rx: &ArrayGeometry) -> Result<f64> {
        avg_fisher_nodes(w, tx, rx, &self.nodes, self.cfg)
    }

    fn beamform(&self, tx: &ArrayGeometry, rx: &ArrayGeometry) -> Result<(BeamformerSet, Vec<SolveReport>)> {
        let dirs = SensingDirections::new(tx, rx, &self.nodes, self.cfg.convention);
        let h = realize_all(self.users, tx);
        let (w, it) = optimize_beamformer(&dirs, &h, self.cfg, &self.settings.beamform)?;
        Ok((w, it.solves))
    }
}

/// Runs the AO loop from flat shapes at `y_min`.
///
/// Every stage is accepted only if it does not lower the surrogate, so the
/// trace is non-decreasing. Infeasibility of the very first beamforming
/// stage is returned as `Error::Infeasible`; later stage failures keep the
/// incumbent.
pub fn optimize(
    cfg: &SystemConfig,
    users: &[UserChannel],
    targets: &[TargetPrior],
    mode: Mode,
    settings: &AoSettings,
) -> Result<AoResult> {
    cfg.validate()?;
    if users.len() != cfg.users {
        return Err(Error::Dimension(format!("{} user channels for K = {}", users.len(), cfg.users)));
    }
    let rule = GaussHermiteRule::new(cfg.quad_order)?;
    let stage = Stage {
        cfg,
        users,
        nodes: rule.weighted_angles(targets),
        settings,
    };
    let mut timings = StageTimings::default();
    let mut y_t = cfg.flat_tx();
    let mut y_r = cfg.flat_rx();
    let mut tx = cfg.tx_geometry(&y_t)?;
    let mut rx = cfg.rx_geometry(&y_r)?;

    let t0 = Instant::now();
    let (mut w, mut solves) = stage.beamform(&tx, &rx)?;
    timings.beamform_s += t0.elapsed().as_secs_f64();
    let mut f = stage.surrogate(&w, &tx, &rx)?;
    let mut trace = vec![f];
    let mut iterations = 0;
    let rigid = cfg.y_max <= cfg.y_min;

    // Joint first converges the receive side with the beamformer and only
    // then releases the transmit surface, so it starts its transmit phase
    // from the RXonly design.
    let mut tx_phase = mode == Mode::TxOnly;
    if mode != Mode::Ra && !rigid {
        // The initial beamformer is already optimal for the starting shapes.
        let mut skip_bf = true;
        for iter in 1..=settings.max_iter {
            iterations = iter;
            let f_start = f;
            if !std::mem::take(&mut skip_bf) {
                let t = Instant::now();
                match stage.beamform(&tx, &rx) {
                    Ok((w_new, rep)) => {
                        solves.extend(rep);
                        let f_new = stage.surrogate(&w_new, &tx, &rx)?;
                        if f_new >= f {
                            w = w_new;
                            f = f_new;
                        }
                    }
                    Err(e) => log::debug!("beamforming stage kept incumbent: {e}"),
                }
                timings.beamform_s += t.elapsed().as_secs_f64();
            }
            if mode.shapes_rx() {
                let t = Instant::now();
                let data = RxObjectiveData::from_design(&w, &tx, &rx, &stage.nodes)?;
                let sol = solve_fixed_point(&data, cfg.y_min, cfg.y_max)?;
                let rx_new = rx.with_shape(sol.shape.clone());
                let f_new = stage.surrogate(&w, &tx, &rx_new)?;
                if f_new >= f {
                    y_r = sol.shape;
                    rx = rx_new;
                    f = f_new;
                }
                timings.rx_s += t.elapsed().as_secs_f64();
            }
            if mode.shapes_tx() && tx_phase {
                let t = Instant::now();
                match pga(&w, &y_t, &rx, &stage.nodes, users, cfg, &settings.pga) {
                    Ok(out) if out.objective >= f => {
                        y_t = out.shape;
                        tx = tx.with_shape(y_t.clone());
                        f = out.objective;
                    }
                    Ok(_) => {}
                    Err(e) => log::debug!("transmit-shape stage kept incumbent: {e}"),
                }
                timings.tx_s += t.elapsed().as_secs_f64();
            }
            trace.push(f);
            if (f - f_start) <= settings.rel_tol * f.abs() {
                if mode == Mode::Joint && !tx_phase {
                    tx_phase = true;
                    // The beamformer was just re-solved for these shapes.
                    skip_bf = true;
                    continue;
                }
                break;
            }
        }
    }
    Ok(AoResult {
        mode,
        w,
        y_r,
        y_t,
        trace,
        iterations,
        timings,
        solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_scenario;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("diagonal".parse::<Mode>().is_err());
    }

    #[test]
    fn rigid_box_collapses_modes() {
        let cfg = SystemConfig {
            y_max: 0.0,
            ..SystemConfig::default()
        };
        let sc = generate_scenario(&cfg, 3);
        let ra = optimize(&cfg, &sc.users, &sc.targets, Mode::Ra, &AoSettings::default()).unwrap();
        let joint = optimize(&cfg, &sc.users, &sc.targets, Mode::Joint, &AoSettings::default()).unwrap();
        assert!((ra.objective() - joint.objective()).abs() <= 1e-8 * ra.objective());
    }

    #[test]
    fn modes_are_ordered_and_monotone() {
        let cfg = SystemConfig::default();
        let sc = generate_scenario(&cfg, 7);
        let settings = AoSettings::default();
        let run = |m| optimize(&cfg, &sc.users, &sc.targets, m, &settings).unwrap();
        let (ra, rxo, txo, joint) = (run(Mode::Ra), run(Mode::RxOnly), run(Mode::TxOnly), run(Mode::Joint));
        for r in [&ra, &rxo, &txo, &joint] {
            for pair in r.trace.windows(2) {
                assert!(pair[1] >= pair[0] * (1.0 - 1e-6));
            }
        }
        assert!(rxo.objective() >= ra.objective() * (1.0 - 1e-6));
        assert!(txo.objective() >= ra.objective() * (1.0 - 1e-6));
        assert!(joint.objective() >= rxo.objective() * (1.0 - 1e-6));
    }
}
