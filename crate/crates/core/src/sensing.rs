//! Echo synthesis, transmit beampatterns and MUSIC angle estimation.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{steering, ArrayGeometry, BeamformerSet, CMatrix, SystemConfig};

/// Relative eigenvalue gap below which signal and noise subspaces are
/// considered inseparable.
pub const SUBSPACE_GAP_TOL: f64 = 1e-12;

/// Transmitted symbols: QPSK user streams stacked over Gaussian sensing streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    pub s: CMatrix,
}

impl SignalBlock {
    pub fn draw<R: Rng + ?Sized>(users: usize, sensing: usize, block_len: usize, rng: &mut R) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = CMatrix::from_fn(users + sensing, block_len, |i, _| {
            if i < users {
                let re = if rng.random::<bool>() { h } else { -h };
                let im = if rng.random::<bool>() { h } else { -h };
                Complex64::new(re, im)
            } else {
                complex_gaussian(rng, 1.0)
            }
        });
        Self { s }
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sd, im * sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoTarget {
    pub theta: f64,
    pub alpha: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoBlock {
    /// `N_r × T` received samples.
    pub y: CMatrix,
    pub targets: Vec<EchoTarget>,
}

/// Draws one block of echoes `Σ α b(θ) a(θ)ᴴ W S` plus receiver noise of
/// variance `cfg.sigma_r2` per entry. The block length is `cfg.block_len`.
pub fn synthesize_echo(
    w: &BeamformerSet,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    targets: &[EchoTarget],
    cfg: &SystemConfig,
    seed: u64,
) -> Result<EchoBlock> {
    if w.n_t() != tx.len() {
        return Err(Error::Dimension(format!("beamformer has {} rows for {} transmit elements", w.n_t(), tx.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = cfg.block_len;
    let sig = SignalBlock::draw(w.users, w.w.ncols() - w.users, t, &mut rng);
    let x = &w.w * &sig.s;
    let mut y = CMatrix::zeros(rx.len(), t);
    for tg in targets {
        let a = steering(tx, tg.theta);
        let b = steering(rx, tg.theta);
        // aᴴX first keeps this an outer product of a vector and a row.
        let row = a.ad_mul(&x);
        y += (b * row) * tg.alpha;
    }
    if cfg.sigma_r2 > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(&mut rng, cfg.sigma_r2);
        }
    }
    Ok(EchoBlock {
        y,
        targets: targets.to_vec(),
    })
}

/// Transmit gain `‖a(θ)ᴴW‖²` on each grid angle (radians).
pub fn beampattern(w: &CMatrix, tx: &ArrayGeometry, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&th| steering(tx, th).ad_mul(w).iter().map(|z| z.norm_sqr()).sum())
        .collect()
}

/// `10 log10(g / max g)`.
pub fn normalized_db(values: &[f64]) -> Vec<f64> {
    let peak = values.iter().fold(0.0f64, |m, v| m.max(*v));
    values
        .iter()
        .map(|v| if peak > 0.0 { 10.0 * (v / peak).log10() } else { f64::NEG_INFINITY })
        .collect()
}

/// Trapezoidal integral of `values` sampled on the increasing `grid`,
/// restricted to the union of the closed `regions`.
pub fn integrated_gain(values: &[f64], grid: &[f64], regions: &[(f64, f64)]) -> f64 {
    let inside = |th: f64| regions.iter().any(|&(lo, hi)| th >= lo && th <= hi);
    grid.windows(2)
        .zip(values.windows(2))
        .filter(|(g, _)| inside(g[0]) && inside(g[1]))
        .map(|(g, v)| 0.5 * (v[0] + v[1]) * (g[1] - g[0]))
        .sum()
}

/// Angles from `start` to `stop` degrees inclusive, returned in radians.
pub fn degree_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| (start + i as f64 * step).to_radians()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MusicOutput {
    /// Pseudo-spectrum `1/‖E_nᴴ b(θ)‖²` on the grid.
    pub spectrum: Vec<f64>,
    /// Estimated angles in radians, in decreasing peak order.
    pub angles: Vec<f64>,
}

pub fn music_estimate(echo: &EchoBlock, rx: &ArrayGeometry, n_targets: usize, grid: &[f64]) -> Result<MusicOutput> {
    let (n_r, t) = echo.y.shape();
    if n_r != rx.len() {
        return Err(Error::Dimension(format!("{n_r} echo rows for {} receive elements", rx.len())));
    }
    if t <= n_r || n_targets == 0 || n_targets >= n_r || grid.is_empty() {
        return Err(Error::Dimension(format!(
            "MUSIC needs T > N_r, 0 < targets < N_r and a grid (T = {t}, N_r = {n_r}, targets = {n_targets})"
        )));
    }
    let cov = (&echo.y * echo.y.adjoint()) / Complex64::new(t as f64, 0.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n_r).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]];
    let gap = eig.eigenvalues[order[n_targets - 1]] - eig.eigenvalues[order[n_targets]];
    if !(top > 0.0) || gap < SUBSPACE_GAP_TOL * top {
        return Err(Error::DegenerateSubspace {
            gap: if top > 0.0 { gap / top } else { 0.0 },
        });
    }
    let noise = CMatrix::from_columns(
        &order[n_targets..]
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    let spectrum: Vec<f64> = grid
        .iter()
        .map(|&th| {
            let proj: f64 = noise.ad_mul(&steering(rx, th)).iter().map(|z| z.norm_sqr()).sum();
            1.0 / proj.max(f64::MIN_POSITIVE)
        })
        .collect();
    let angles = pick_peaks(&spectrum, n_targets).into_iter().map(|i| grid[i]).collect();
    Ok(MusicOutput { spectrum, angles })
}

/// Indices of the `n` largest local maxima, at least two samples apart.
/// Falls back to the largest remaining samples when there are too few
/// local maxima.
fn pick_peaks(values: &[f64], n: usize) -> Vec<usize> {
    let len = values.len();
    let is_peak = |i: usize| {
        (i == 0 || values[i] >= values[i - 1]) && (i + 1 == len || values[i] >= values[i + 1])
    };
    let mut by_value: Vec<usize> = (0..len).collect();
    by_value.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    for peaks_only in [true, false] {
        for &i in &by_value {
            if chosen.len() == n {
                return chosen;
            }
            if peaks_only && !is_peak(i) {
                continue;
            }
            if chosen.iter().all(|&c| c.abs_diff(i) > 1) {
                chosen.push(i);
            }
        }
    }
    chosen
}
