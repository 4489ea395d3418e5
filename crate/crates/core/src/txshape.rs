//! Transmit-surface shape at a fixed beamformer: projected gradient ascent
//! on the averaged Fisher information, with projection onto the box and the
//! users' SINR sets by increasing-penalty dual decomposition (IPDD).
//!
//! The transmit shape moves `a(θ)`, `ȧ(θ)` and every user channel. Only the
//! `n`-th entry of each depends on `y_n`:
//!
//! ```text
//! ∂a_n/∂y_n = jδ sinθ a_n
//! ∂ȧ_n/∂y_n = jδ cosθ a_n + jδ sinθ ȧ_n      (exact derivative)
//! ∂ȧ_n/∂y_n = jδ sinθ ȧ_n                    (flat-transmit ȧ = −jδ x sinθ a)
//! ```

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fisher::{avg_fisher_nodes, echo_gain, EfimContext, SIGNAL_NULL_FLOOR};
use crate::model::{
    channel_realize, sinr, steering, steering_derivative, ArrayGeometry, BeamformerSet, CMatrix, CVector,
    DerivativeConvention, SurfaceShape, SystemConfig, UserChannel,
};
use crate::quadrature::WeightedAngle;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Relative SINR slack accepted as feasible; the beamformer itself is only
/// accurate to the conic solver tolerance.
pub const SINR_FEAS_TOL: f64 = 1e-6;

/// `∇_y Σ_u ω_u F(θ̃_u)` with respect to the transmit shape.
pub fn grad_avg_fisher_yt(
    w: &BeamformerSet,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    nodes: &[WeightedAngle],
    cfg: &SystemConfig,
) -> Result<Vec<f64>> {
    let n = tx.len();
    let d = tx.wavenumber;
    let nr = rx.len() as f64;
    let gain = echo_gain(cfg.alpha_r, cfg.block_len, cfg.sigma_r2);
    let r = w.covariance();
    let mut grad = vec![0.0; n];
    for node in nodes {
        let theta = node.theta;
        let (s, c) = theta.sin_cos();
        let a = steering(tx, theta);
        let ad = steering_derivative(tx, theta, cfg.convention);
        let ra = &r * &a;
        let rd = &r * &ad;
        let p = a.dotc(&ra).re;
        if p < SIGNAL_NULL_FLOOR {
            return Err(Error::SignalNull { theta, energy: p });
        }
        let g = a.dotc(&rd);
        let kappa = EfimContext::new(rx, theta).kappa;
        let scale = node.weight * gain;
        for i in 0..n {
            let da = J * d * s * a[i];
            let dad = match cfg.convention {
                DerivativeConvention::Exact => J * d * c * a[i] + J * d * s * ad[i],
                DerivativeConvention::FlatTransmit => J * d * s * ad[i],
            };
            let dp = 2.0 * (da.conj() * ra[i]).re;
            let dq = 2.0 * (dad.conj() * rd[i]).re;
            let dg = da.conj() * rd[i] + ra[i].conj() * dad;
            let dg2 = 2.0 * (g.conj() * dg).re;
            let dfrac = dg2 / p - g.norm_sqr() * dp / (p * p);
            grad[i] += scale * (kappa * dp + nr * dq - nr * dfrac);
        }
    }
    Ok(grad)
}

/// Channel and the diagonal of its shape Jacobian, `∂h_n/∂y_n`.
fn channel_with_jacobian(user: &UserChannel, tx: &ArrayGeometry) -> (CVector, CVector) {
    let n = tx.len();
    let mut h = CVector::zeros(n);
    let mut dh = CVector::zeros(n);
    for path in &user.paths {
        let a = steering(tx, path.theta);
        let rate = J * tx.wavenumber * path.theta.sin();
        for i in 0..n {
            let v = path.gain * a[i];
            h[i] += v;
            dh[i] += rate * v;
        }
    }
    (h, dh)
}

/// Smallest `SINR_k / r_th` over all users at the given transmit shape.
pub fn min_sinr_ratio(w: &BeamformerSet, users: &[UserChannel], tx: &ArrayGeometry, cfg: &SystemConfig) -> Result<f64> {
    let r_th = cfg.sinr_threshold();
    let mut worst = f64::INFINITY;
    for (k, u) in users.iter().enumerate() {
        worst = worst.min(sinr(w, &channel_realize(u, tx), k, cfg.sigma_k2)? / r_th);
    }
    Ok(worst)
}

fn is_feasible(w: &BeamformerSet, users: &[UserChannel], tx: &ArrayGeometry, cfg: &SystemConfig) -> Result<bool> {
    Ok(min_sinr_ratio(w, users, tx, cfg)? >= 1.0 - SINR_FEAS_TOL)
}

/// Minimizer of `‖h − c‖²` subject to the SINR constraint of user `k`
/// convexified at `h_hat`:
///
/// ```text
/// 2Re{ĥᴴw_k w_kᴴh} − |ĥᴴw_k|² ≥ r_th (hᴴBh + σ²),   B = Σ_{i≠k} w_i w_iᴴ
/// ```
///
/// For a multiplier `λ` the Lagrangian minimizer is
/// `h(λ) = (I + λ r_th B)⁻¹(c + λ b)`, `b = w_k w_kᴴ ĥ`; `λ` is found by
/// bisection on the constraint value, which decreases monotonically in `λ`.
pub fn h_aux_update(c: &CVector, w: &CMatrix, k: usize, h_hat: &CVector, r_th: f64, sigma2: f64) -> Result<CVector> {
    let n = c.len();
    let wk = w.column(k).into_owned();
    let mut bmat = CMatrix::zeros(n, n);
    for i in 0..w.ncols() {
        if i != k {
            let col = w.column(i);
            bmat += &col * col.adjoint();
        }
    }
    let proj = wk.dotc(h_hat);
    let b = &wk * proj;
    let offset = proj.norm_sqr() + r_th * sigma2;
    let value = |h: &CVector| -> f64 { r_th * h.dotc(&(&bmat * h)).re - 2.0 * b.dotc(h).re + offset };
    if value(c) <= 0.0 {
        return Ok(c.clone());
    }

    let b_scale = bmat.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if b_scale <= 1e-14 * wk.norm_squared().max(f64::MIN_POSITIVE) {
        // Half-space Re(bᴴh) ≥ offset/2.
        let bn = b.norm_squared();
        if bn == 0.0 {
            return Err(Error::ConstraintInfeasible { user: k });
        }
        let t = (0.5 * offset - b.dotc(c).re) / bn;
        return Ok(c + &b * Complex64::new(t, 0.0));
    }

    let eig = SymmetricEigen::new((&bmat + bmat.adjoint()) * Complex64::new(0.5, 0.0));
    let v = &eig.eigenvectors;
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let cp = v.ad_mul(c);
    let bp = v.ad_mul(&b);
    let at = |mult: f64| -> CVector {
        let coords = CVector::from_fn(n, |i, _| (cp[i] + bp[i] * mult) / (1.0 + mult * r_th * lam[i]));
        v * coords
    };
    let mut hi = 1.0;
    while value(&at(hi)) > 0.0 {
        hi *= 2.0;
        if hi > 1e30 {
            return Err(Error::ConstraintInfeasible { user: k });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if value(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpddSettings {
    pub mu0: f64,
    pub mu_shrink: f64,
    pub max_rounds: usize,
    pub inner_steps: usize,
    pub violation_tol: f64,
}

impl Default for IpddSettings {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            mu_shrink: 0.8,
            max_rounds: 20,
            inner_steps: 30,
            violation_tol: 1e-6,
        }
    }
}

/// IPDD iterate in normalized units (channels divided by `Σ|α|`, beams by
/// `√P_max`, shapes by `λ`).
#[derive(Debug, Clone, PartialEq)]
pub struct IpddState {
    pub mu: f64,
    pub h_aux: Vec<CVector>,
    pub upsilon: Vec<CVector>,
    pub h_hat: Vec<CVector>,
    pub violation: f64,
}

struct Normalized<'a> {
    users: &'a [UserChannel],
    scales: Vec<f64>,
    w: CMatrix,
    sigma2: Vec<f64>,
    r_th: f64,
    lambda: f64,
    base: &'a ArrayGeometry,
}

impl Normalized<'_> {
    fn geometry(&self, y_norm: &[f64]) -> ArrayGeometry {
        self.base.with_shape(SurfaceShape {
            y: y_norm.iter().map(|v| v * self.lambda).collect(),
        })
    }

    /// Normalized channels and `∂h/∂(y/λ)` diagonals.
    fn channels(&self, y_norm: &[f64]) -> Vec<(CVector, CVector)> {
        let g = self.geometry(y_norm);
        self.users
            .iter()
            .zip(&self.scales)
            .map(|(u, s)| {
                let (h, dh) = channel_with_jacobian(u, &g);
                (h / Complex64::new(*s, 0.0), dh * Complex64::new(self.lambda / s, 0.0))
            })
            .collect()
    }
}

/// Approximate Euclidean projection of `xi` onto the box intersected with
/// every user's SINR set (beamformer held fixed).
///
/// Returns the box clamp when it is already feasible. Otherwise runs IPDD
/// until the auxiliary channels meet the realized ones; if the round budget
/// runs out, the closest SINR-feasible iterate is returned, and
/// `ProjectionFailure` only when no iterate was feasible.
pub fn project_feasible(
    xi: &[f64],
    w: &BeamformerSet,
    users: &[UserChannel],
    base: &ArrayGeometry,
    cfg: &SystemConfig,
    settings: &IpddSettings,
) -> Result<SurfaceShape> {
    let clamp = SurfaceShape::clamped(xi, cfg.y_min, cfg.y_max);
    if users.is_empty() || is_feasible(w, users, &base.with_shape(clamp.clone()), cfg)? {
        return Ok(clamp);
    }
    let lambda = cfg.wavelength;
    let scales: Vec<f64> = users.iter().map(UserChannel::gain_scale).collect();
    if let Some(k) = scales.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::ConstraintInfeasible { user: k });
    }
    let prob = Normalized {
        users,
        w: &w.w / Complex64::new(cfg.p_max.sqrt(), 0.0),
        sigma2: scales.iter().map(|s| cfg.sigma_k2 / (cfg.p_max * s * s)).collect(),
        scales,
        r_th: cfg.sinr_threshold(),
        lambda,
        base,
    };
    let (lo, hi) = (cfg.y_min / lambda, cfg.y_max / lambda);
    let xi_n: Vec<f64> = xi.iter().map(|v| v / lambda).collect();
    let mut y: Vec<f64> = clamp.y.iter().map(|v| v / lambda).collect();

    let start = prob.channels(&y);
    let mut state = IpddState {
        mu: settings.mu0,
        h_aux: Vec::with_capacity(users.len()),
        upsilon: vec![CVector::zeros(base.len()); users.len()],
        h_hat: start.iter().map(|(h, _)| h.clone()).collect(),
        violation: f64::INFINITY,
    };
    for (k, (h, _)) in start.iter().enumerate() {
        state.h_aux.push(h_aux_update(h, &prob.w, k, h, prob.r_th, prob.sigma2[k])?);
    }

    let mut step = 0.5 * settings.mu0;
    let mut best: Option<(f64, SurfaceShape)> = None;
    for round in 0..settings.max_rounds {
        // (21a) projected gradient on the augmented objective over the box.
        let targets: Vec<CVector> = state
            .h_aux
            .iter()
            .zip(&state.upsilon)
            .map(|(h, u)| h + u * Complex64::new(state.mu, 0.0))
            .collect();
        let aug = |y: &[f64], ch: &[(CVector, CVector)]| -> f64 {
            let dist: f64 = y.iter().zip(&xi_n).map(|(a, b)| (a - b) * (a - b)).sum();
            let pen: f64 = ch.iter().zip(&targets).map(|((h, _), t)| (t - h).norm_squared()).sum();
            dist + pen / (2.0 * state.mu)
        };
        let mut ch = prob.channels(&y);
        let mut f = aug(&y, &ch);
        for _ in 0..settings.inner_steps {
            let mut g: Vec<f64> = y.iter().zip(&xi_n).map(|(a, b)| 2.0 * (a - b)).collect();
            for ((h, dh), t) in ch.iter().zip(&targets) {
                for i in 0..g.len() {
                    g[i] -= ((t[i] - h[i]).conj() * dh[i]).re / state.mu;
                }
            }
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = y.iter().zip(&g).map(|(v, gi)| (v - step * gi).clamp(lo, hi)).collect();
                let moved: f64 = cand.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                let ch_c = prob.channels(&cand);
                let f_c = aug(&cand, &ch_c);
                if f_c <= f - moved / (2.0 * step) || moved == 0.0 {
                    accepted = moved > 0.0;
                    y = cand;
                    ch = ch_c;
                    f = f_c;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            step *= 2.0;
        }

        // (21b) auxiliary channels; (21c) dual update.
        let mut violation: f64 = 0.0;
        for (k, (h, _)) in ch.iter().enumerate() {
            let c = h - &state.upsilon[k] * Complex64::new(state.mu, 0.0);
            let aux = h_aux_update(&c, &prob.w, k, &state.h_hat[k], prob.r_th, prob.sigma2[k])?;
            let gap = &aux - h;
            violation = violation.max(gap.norm());
            state.upsilon[k] += gap / Complex64::new(state.mu, 0.0);
            state.h_hat[k] = aux.clone();
            state.h_aux[k] = aux;
        }
        state.violation = violation;
        let shape = SurfaceShape::clamped(&y.iter().map(|v| v * lambda).collect::<Vec<_>>(), cfg.y_min, cfg.y_max);
        let feasible = is_feasible(w, users, &base.with_shape(shape.clone()), cfg)?;
        log::trace!("ipdd round {round}: mu {:.3e}, violation {violation:.3e}, feasible {feasible}", state.mu);
        if feasible && violation <= settings.violation_tol {
            return Ok(shape);
        }
        if feasible {
            let dist: f64 = shape.y.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, shape));
            }
        }
        state.mu *= settings.mu_shrink;
    }
    // The dual iteration oscillates around the boundary; the closest iterate
    // that is feasible for the realized channels is still a valid projection.
    best.map(|(_, s)| s).ok_or(Error::ProjectionFailure {
        violation: state.violation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgaSettings {
    /// Initial step, as a fraction of the wavelength.
    pub step0: f64,
    pub min_step: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub ipdd: IpddSettings,
}

impl Default for PgaSettings {
    fn default() -> Self {
        Self {
            step0: 0.05,
            min_step: 1e-6,
            max_iter: 50,
            rel_tol: 1e-6,
            ipdd: IpddSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgaOutcome {
    pub shape: SurfaceShape,
    pub objective: f64,
    pub iterations: usize,
    pub accepted: usize,
}

/// Largest `t ∈ [0, 1]` (by bisection) with `anchor + t (target − anchor)`
/// SINR-feasible; `anchor` must itself be feasible.
fn feasible_segment(
    anchor: &[f64],
    target: &[f64],
    w: &BeamformerSet,
    users: &[UserChannel],
    base: &ArrayGeometry,
    cfg: &SystemConfig,
) -> Result<SurfaceShape> {
    let point = |t: f64| -> SurfaceShape {
        SurfaceShape::clamped(
            &anchor.iter().zip(target).map(|(a, b)| a + t * (b - a)).collect::<Vec<_>>(),
            cfg.y_min,
            cfg.y_max,
        )
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if is_feasible(w, users, &base.with_shape(point(1.0)), cfg)? {
        return Ok(point(1.0));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if is_feasible(w, users, &base.with_shape(point(mid)), cfg)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(point(lo))
}

/// Projected gradient ascent on the transmit shape with backtracking.
///
/// Steps are normalized by `‖∇‖_∞` so `step` is the largest displacement of
/// any element. A candidate is kept only if it improves the objective; after
/// an accepted step the step length doubles (capped at the initial value).
/// If the IPDD projection fails, the point on the segment from the incumbent
/// to the clamped candidate that remains SINR-feasible is tried instead.
#[allow(clippy::too_many_arguments)]
pub fn pga(
    w: &BeamformerSet,
    init: &SurfaceShape,
    rx: &ArrayGeometry,
    nodes: &[WeightedAngle],
    users: &[UserChannel],
    cfg: &SystemConfig,
    settings: &PgaSettings,
) -> Result<PgaOutcome> {
    let base = cfg.tx_geometry(init)?;
    let objective = |shape: &SurfaceShape| avg_fisher_nodes(w, &base.with_shape(shape.clone()), rx, nodes, cfg);
    let mut y = init.clone();
    let mut f = objective(&y)?;
    let lambda = cfg.wavelength;
    let step0 = settings.step0 * lambda;
    let mut step = step0;
    let mut accepted = 0;
    let mut iterations = 0;
    if cfg.y_max <= cfg.y_min {
        return Ok(PgaOutcome {
            shape: y,
            objective: f,
            iterations,
            accepted,
        });
    }
    'outer: while iterations < settings.max_iter {
        iterations += 1;
        let g = grad_avg_fisher_yt(w, &base.with_shape(y.clone()), rx, nodes, cfg)?;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(gmax > 0.0) {
            break;
        }
        loop {
            let xi: Vec<f64> = y.y.iter().zip(&g).map(|(v, gi)| v + step * gi / gmax).collect();
            let cand = match project_feasible(&xi, w, users, &base, cfg, &settings.ipdd) {
                Ok(s) => s,
                Err(e) => {
                    log::debug!("projection failed ({e}); falling back to a feasible segment");
                    let target = SurfaceShape::clamped(&xi, cfg.y_min, cfg.y_max);
                    feasible_segment(&y.y, &target.y, w, users, &base, cfg)?
                }
            };
            let f_c = objective(&cand)?;
            if f_c > f {
                let change = (f_c - f) / f.abs().max(f64::MIN_POSITIVE);
                y = cand;
                f = f_c;
                accepted += 1;
                step = (2.0 * step).min(step0);
                if change <= settings.rel_tol {
                    break 'outer;
                }
                break;
            }
            step *= 0.5;
            if step < settings.min_step * lambda {
                break 'outer;
            }
        }
    }
    Ok(PgaOutcome {
        shape: y,
        objective: f,
        iterations,
        accepted,
    })
}
