//! Fisher information for the target angle.
//!
//! The echo mean is `α b(θ) aᴴ(θ) W S`; with `(1/T) S Sᴴ = I` the 3×3 FIM of
//! `(θ, Re α, Im α)` only sees `R = WWᴴ`. Its θ-block Schur complement has the
//! closed form evaluated by [`efim_theta`]:
//!
//! ```text
//! F(θ) = c (κ(θ) p + N_r q − N_r |g|² / p),   c = 2T|α|²/σ_r²
//! p = ‖aᴴW‖²,  q = ‖ȧᴴW‖²,  g = aᴴ R ȧ,  κ = ζᵀ P ζ,  ζ = sinθ x_r − cosθ y_r
//! ```

use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    steering, steering_derivative, ArrayGeometry, BeamformerSet, CMatrix, CVector, DerivativeConvention,
    SystemConfig, TargetPrior,
};
use crate::quadrature::{GaussHermiteRule, WeightedAngle};

/// Below this `‖aᴴW‖²` the EFIM (and the CRB) is undefined.
pub const SIGNAL_NULL_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetParameters {
    pub theta: f64,
    pub alpha: Complex64,
}

/// Symmetric 3×3 FIM ordered `(θ, Re α, Im α)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherMatrix(pub Matrix3<f64>);

impl FisherMatrix {
    pub fn theta_theta(&self) -> f64 {
        self.0[(0, 0)]
    }

    /// `F_θθ − F_θα F_αα⁻¹ F_αθ`.
    pub fn schur_complement(&self) -> f64 {
        let m = &self.0;
        let faa = m.fixed_view::<2, 2>(1, 1).into_owned();
        let fta = m.fixed_view::<1, 2>(0, 1).into_owned();
        match faa.try_inverse() {
            Some(inv) => m[(0, 0)] - (fta * inv * fta.transpose())[(0, 0)],
            None => m[(0, 0)],
        }
    }
}

/// Receive-side geometry factor at one angle.
#[derive(Debug, Clone, PartialEq)]
pub struct EfimContext {
    /// `ζ(θ) = sinθ x_r − cosθ y_r`.
    pub zeta: Vec<f64>,
    /// `ζᵀ P ζ` with `P = δ²(I − 11ᵀ/N_r)`.
    pub kappa: f64,
}

impl EfimContext {
    pub fn new(rx: &ArrayGeometry, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let zeta: Vec<f64> = rx.x.iter().zip(rx.y()).map(|(x, y)| s * x - c * y).collect();
        let kappa = centered_energy(&zeta) * rx.wavenumber * rx.wavenumber;
        Self { zeta, kappa }
    }
}

/// `vᵀ(I − 11ᵀ/N)v`, computed from the centred vector so it is never negative.
pub(crate) fn centered_energy(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|z| (z - mean) * (z - mean)).sum()
}

/// `2T|α|²/σ_r²`.
pub fn echo_gain(alpha: Complex64, block_len: usize, sigma_r2: f64) -> f64 {
    2.0 * block_len as f64 * alpha.norm_sqr() / sigma_r2
}

/// Transmit-side quantities entering `F(θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamTerms {
    /// `‖aᴴW‖²`
    pub p: f64,
    /// `‖ȧᴴW‖²`
    pub q: f64,
    /// `aᴴ W Wᴴ ȧ`
    pub g: Complex64,
}

impl BeamTerms {
    pub fn new(w: &CMatrix, a: &CVector, adot: &CVector) -> Self {
        let wa = w.ad_mul(a);
        let wd = w.ad_mul(adot);
        Self {
            p: wa.norm_squared(),
            q: wd.norm_squared(),
            g: wa.dotc(&wd),
        }
    }

    /// `κp + N_r q − N_r|g|²/p` (the bracket of `F(θ)`).
    pub fn information(&self, kappa: f64, n_r: usize) -> f64 {
        let nr = n_r as f64;
        kappa * self.p + nr * self.q - nr * self.g.norm_sqr() / self.p
    }
}

fn check_dims(w: &BeamformerSet, tx: &ArrayGeometry) -> Result<()> {
    if w.n_t() != tx.len() {
        return Err(Error::Dimension(format!(
            "beamformer has {} rows, transmit array {} elements",
            w.n_t(),
            tx.len()
        )));
    }
    Ok(())
}

/// Full 3×3 FIM assembled from `A = b aᴴ` and `Ȧ = ḃ aᴴ + b ȧᴴ` with exact
/// derivatives on both arrays.
pub fn fim_full(
    w: &BeamformerSet,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    params: &TargetParameters,
    block_len: usize,
    sigma_r2: f64,
) -> Result<FisherMatrix> {
    check_dims(w, tx)?;
    let theta = params.theta;
    let a = steering(tx, theta);
    let adot = steering_derivative(tx, theta, DerivativeConvention::Exact);
    let b = steering(rx, theta);
    let bdot = steering_derivative(rx, theta, DerivativeConvention::Exact);
    let a_mat = &b * a.adjoint();
    let adot_mat = &bdot * a.adjoint() + &b * adot.adjoint();
    let r = w.covariance();

    let scale = 2.0 * block_len as f64 / sigma_r2;
    let tr = |x: &CMatrix, y: &CMatrix| (x * &r * y.adjoint()).trace();
    let ftt = scale * params.alpha.norm_sqr() * tr(&adot_mat, &adot_mat).re;
    let z = params.alpha.conj() * tr(&a_mat, &adot_mat);
    let fta = [scale * z.re, scale * (Complex64::i() * z).re];
    let faa = scale * tr(&a_mat, &a_mat).re;

    Ok(FisherMatrix(Matrix3::new(
        ftt, fta[0], fta[1], //
        fta[0], faa, 0.0, //
        fta[1], 0.0, faa,
    )))
}

/// Closed-form equivalent Fisher information `F(θ)`.
#[allow(clippy::too_many_arguments)]
pub fn efim_theta(
    w: &BeamformerSet,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    theta: f64,
    alpha: Complex64,
    block_len: usize,
    sigma_r2: f64,
    convention: DerivativeConvention,
) -> Result<f64> {
    check_dims(w, tx)?;
    let a = steering(tx, theta);
    let adot = steering_derivative(tx, theta, convention);
    let terms = BeamTerms::new(&w.w, &a, &adot);
    if terms.p < SIGNAL_NULL_FLOOR {
        return Err(Error::SignalNull {
            theta,
            energy: terms.p,
        });
    }
    let ctx = EfimContext::new(rx, theta);
    Ok(echo_gain(alpha, block_len, sigma_r2) * terms.information(ctx.kappa, rx.len()))
}

fn efim_cfg(w: &BeamformerSet, tx: &ArrayGeometry, rx: &ArrayGeometry, theta: f64, cfg: &SystemConfig) -> Result<f64> {
    efim_theta(w, tx, rx, theta, cfg.alpha_r, cfg.block_len, cfg.sigma_r2, cfg.convention)
}

/// Largest relative residual between the direct traces of `A R Aᴴ`,
/// `A R Ȧᴴ`, `Ȧ R Ȧᴴ` and their closed-form expansions.
pub fn trace_identities_check(w: &BeamformerSet, tx: &ArrayGeometry, rx: &ArrayGeometry, theta: f64) -> Result<f64> {
    check_dims(w, tx)?;
    let a = steering(tx, theta);
    let adot = steering_derivative(tx, theta, DerivativeConvention::Exact);
    let b = steering(rx, theta);
    let bdot = steering_derivative(rx, theta, DerivativeConvention::Exact);
    let a_mat = &b * a.adjoint();
    let adot_mat = &bdot * a.adjoint() + &b * adot.adjoint();
    let r = w.covariance();
    let tr = |x: &CMatrix, y: &CMatrix| (x * &r * y.adjoint()).trace();

    let d = rx.wavenumber;
    let nr = rx.len() as f64;
    let ctx = EfimContext::new(rx, theta);
    let one_zeta: f64 = ctx.zeta.iter().sum();
    let zeta_sq: f64 = ctx.zeta.iter().map(|z| z * z).sum();
    let t = BeamTerms::new(&w.w, &a, &adot);

    let lhs = [tr(&a_mat, &a_mat), tr(&a_mat, &adot_mat), tr(&adot_mat, &adot_mat)];
    let rhs = [
        Complex64::new(nr * t.p, 0.0),
        Complex64::new(0.0, d * t.p * one_zeta) + t.g * nr,
        Complex64::new(d * d * t.p * zeta_sq + nr * t.q + 2.0 * d * t.g.im * one_zeta, 0.0),
    ];
    let mut worst: f64 = 0.0;
    for (l, r) in lhs.iter().zip(rhs.iter()) {
        let scale = l.norm().max(r.norm());
        if scale > 0.0 {
            worst = worst.max((l - r).norm() / scale);
        }
    }
    Ok(worst)
}

/// Surrogate objective: `Σ_u w_u F(θ̃_u)` over a set of weighted angles
/// (the quadrature samples of every target prior).
pub fn avg_fisher_nodes(
    w: &BeamformerSet,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    nodes: &[WeightedAngle],
    cfg: &SystemConfig,
) -> Result<f64> {
    let mut acc = 0.0;
    for n in nodes {
        acc += n.weight * efim_cfg(w, tx, rx, n.theta, cfg)?;
    }
    Ok(acc)
}

/// Sum over targets of the prior-averaged Fisher information.
pub fn avg_fisher(
    w: &BeamformerSet,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    rule: &GaussHermiteRule,
    priors: &[TargetPrior],
    cfg: &SystemConfig,
) -> Result<f64> {
    avg_fisher_nodes(w, tx, rx, &rule.weighted_angles(priors), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrbEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Angles drawn from `N(θ̄, σ²)` truncated to `θ̄ ± 3σ`.
pub fn truncated_prior_samples(prior: &TargetPrior, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let z: f64 = StandardNormal.sample(&mut rng);
        if z.abs() <= 3.0 {
            out.push(prior.mean + prior.std * z);
        }
    }
    out
}

/// Monte-Carlo average CRB `E[1/F(θ)]` under the truncated prior.
///
/// With several targets the per-target averages are themselves averaged;
/// every target uses its own sample stream derived from `seed`.
pub fn avg_crb_mc(
    w: &BeamformerSet,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    priors: &[TargetPrior],
    n_samples: usize,
    seed: u64,
    cfg: &SystemConfig,
) -> Result<CrbEstimate> {
    if n_samples < 100 {
        return Err(Error::InvalidConfig {
            field: "n_mc_crb",
            reason: format!("need at least 100 samples, got {n_samples}"),
        });
    }
    if priors.is_empty() {
        return Err(Error::InvalidConfig {
            field: "targets",
            reason: "no target priors".into(),
        });
    }
    let mut mean_acc = 0.0;
    let mut var_acc = 0.0;
    for (i, prior) in priors.iter().enumerate() {
        let thetas = truncated_prior_samples(prior, n_samples, seed.wrapping_add(i as u64));
        let mut vals = Vec::with_capacity(n_samples);
        for theta in thetas {
            let f = efim_cfg(w, tx, rx, theta, cfg)?;
            if !(f > 0.0) {
                return Err(Error::SignalNull { theta, energy: f });
            }
            vals.push(1.0 / f);
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        mean_acc += mean;
        var_acc += var / n;
    }
    let t = priors.len() as f64;
    Ok(CrbEstimate {
        estimate: mean_acc / t,
        std_error: var_acc.sqrt() / t,
    })
}
