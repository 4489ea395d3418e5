//! Dual-function beamformer at fixed surface shapes.
//!
//! The fractional Fisher term is lifted with a 2×2 Schur block per
//! quadrature angle,
//!
//! ```text
//! [ ȧᴴẼȧ − γ   ȧᴴẼa ]
//! [ aᴴẼȧ       aᴴẼa ]  ⪰ 0   ⇔   γ ≤ ȧᴴẼȧ − |aᴴẼȧ|² / aᴴẼa,
//! ```
//!
//! so maximizing `Σ ω (N_r γ + κ aᴴẼa)` over `Ẽ = Σ E_k + E_R` recovers the
//! averaged `F(θ)` up to the constant echo gain. Communication covariances are
//! driven to rank one by a linearized nuclear-minus-spectral penalty.
//!
//! All covariances are normalized by `P_max` inside the conic problem and the
//! SINR rows are scaled to unit right-hand side; every value returned to the
//! caller is in physical units.

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use crate::conic::{self, hermitian_embed, hermitian_recover, smat, svec, Cone, ConicProblem, Settings, Status};
use crate::error::{Error, Result};
use crate::fisher::{echo_gain, EfimContext};
use crate::model::{
    sinr, steering, steering_derivative, ArrayGeometry, BeamformerSet, CMatrix, CVector, DerivativeConvention,
    SystemConfig,
};
use crate::quadrature::WeightedAngle;

/// Transmit-side data of one quadrature angle.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingNode {
    pub theta: f64,
    pub a: CVector,
    pub adot: CVector,
    pub kappa: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingDirections {
    pub nodes: Vec<SensingNode>,
}

impl SensingDirections {
    pub fn new(tx: &ArrayGeometry, rx: &ArrayGeometry, angles: &[WeightedAngle], convention: DerivativeConvention) -> Self {
        let nodes = angles
            .iter()
            .map(|wa| SensingNode {
                theta: wa.theta,
                a: steering(tx, wa.theta),
                adot: steering_derivative(tx, wa.theta, convention),
                kappa: EfimContext::new(rx, wa.theta).kappa,
                omega: wa.weight,
            })
            .collect();
        Self { nodes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamformSettings {
    /// Initial penalty divisor, in units of the normalized objective.
    pub rho0: f64,
    pub rho_shrink: f64,
    pub max_outer: usize,
    /// Required `λ_max / Tr` of every communication covariance.
    pub rank_ratio: f64,
    pub objective_tol: f64,
    pub solver: Settings,
}

impl Default for BeamformSettings {
    fn default() -> Self {
        Self {
            rho0: 10.0,
            rho_shrink: 0.5,
            max_outer: 15,
            rank_ratio: 0.999,
            objective_tol: 1e-5,
            solver: Settings {
                tol: 1e-8,
                max_iter: 200,
            },
        }
    }
}

/// Residuals of one conic solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub status: Status,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl SolveReport {
    pub fn max_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrIterate {
    /// Communication covariances `E_k` (W).
    pub comm: Vec<CMatrix>,
    /// Aggregate sensing covariance `E_R` (W).
    pub sensing: CMatrix,
    /// Schur auxiliaries `γ_u`, one per sensing node.
    pub gamma: Vec<f64>,
    /// Penalty divisor of the last solve (`∞` when unpenalized).
    pub rho: f64,
    /// `c Σ ω (N_r γ + κ aᴴẼa)`, the averaged Fisher information the SDR certifies.
    pub objective: f64,
    pub outer_iterations: usize,
    pub solves: Vec<SolveReport>,
}

impl SdrIterate {
    pub fn total_covariance(&self) -> CMatrix {
        self.comm.iter().fold(self.sensing.clone(), |acc, e| acc + e)
    }

    /// `λ_max / Tr` of every communication covariance.
    pub fn rank_ratios(&self) -> Vec<f64> {
        self.comm.iter().map(rank_one_ratio).collect()
    }
}

pub fn rank_one_ratio(e: &CMatrix) -> f64 {
    let tr = e.trace().re;
    if tr <= 0.0 {
        return 0.0;
    }
    SymmetricEigen::new(e.clone()).eigenvalues.max() / tr
}

fn dominant_eigenvector(e: &CMatrix) -> CVector {
    let eig = SymmetricEigen::new(e.clone());
    eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned()
}

/// Penalty data: unit dominant directions `v_k` and the divisor `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub directions: Vec<CVector>,
    pub rho: f64,
}

/// Variable layout of the conic problem built by [`build_sdr`].
#[derive(Debug, Clone, PartialEq)]
pub struct SdrLayout {
    pub users: usize,
    pub n_t: usize,
    /// Offsets of `E_1 … E_K, E_R`.
    pub e_offsets: Vec<usize>,
    pub z_offsets: Vec<usize>,
    pub slack_offset: usize,
    pub gamma_offset: usize,
    /// Per-node derivative scaling `t_u` (the block holds `t ȧ`).
    pub t: Vec<f64>,
    /// Normalized objective = physical objective / `objective_scale`.
    pub objective_scale: f64,
    pub p_max: f64,
    /// Objective without the penalty (normalized units).
    pub c_plain: Vec<f64>,
}

/// `svec(embed(M)/2)`, so `⟨·, X⟩ = Re Tr(M E)` for the Hermitian `E`
/// represented by `X`.
fn herm_coef(m: &CMatrix) -> Vec<f64> {
    let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let emb = hermitian_embed(&sym).expect("symmetrized input is Hermitian");
    svec(&(emb * 0.5))
}

fn push_row(triplets: &mut Vec<(usize, usize, f64)>, row: usize, offset: usize, coef: &[f64], scale: f64) {
    for (j, v) in coef.iter().enumerate() {
        if *v != 0.0 {
            triplets.push((row, offset + j, scale * v));
        }
    }
}

/// Builds the (optionally penalized) SDR.
///
/// Rows: one power row, one SINR row per user, and four link rows per
/// sensing node tying its Schur block `Z_u` to `Ẽ` and `γ_u`.
pub fn build_sdr(
    dirs: &SensingDirections,
    channels: &[CVector],
    cfg: &SystemConfig,
    penalty: Option<&Penalty>,
) -> Result<(ConicProblem, SdrLayout)> {
    let k_users = channels.len();
    let n_t = cfg.n_t;
    let n_nodes = dirs.nodes.len();
    if let Some(h) = channels.iter().find(|h| h.len() != n_t) {
        return Err(Error::Dimension(format!("channel of length {} for {n_t} elements", h.len())));
    }
    if let Some(p) = penalty {
        if p.directions.len() != k_users {
            return Err(Error::Dimension("one penalty direction per user required".into()));
        }
    }
    let r_th = cfg.sinr_threshold();

    let e_dim = Cone::Psd(2 * n_t).dim();
    let z_dim = Cone::Psd(4).dim();
    let mut cones = vec![Cone::Psd(2 * n_t); k_users + 1];
    cones.extend(std::iter::repeat(Cone::Psd(4)).take(n_nodes));
    cones.push(Cone::NonNeg(1 + k_users));
    cones.push(Cone::Free(n_nodes));
    let e_offsets: Vec<usize> = (0..=k_users).map(|b| b * e_dim).collect();
    let z_base = (k_users + 1) * e_dim;
    let z_offsets: Vec<usize> = (0..n_nodes).map(|u| z_base + u * z_dim).collect();
    let slack_offset = z_base + n_nodes * z_dim;
    let gamma_offset = slack_offset + 1 + k_users;
    let n_vars = gamma_offset + n_nodes;

    let mut triplets = Vec::new();
    let mut b = Vec::new();

    // Power: Σ Tr Ê_b + s₀ = 1.
    let trace_coef = herm_coef(&CMatrix::identity(n_t, n_t));
    for &off in &e_offsets {
        push_row(&mut triplets, 0, off, &trace_coef, 1.0);
    }
    triplets.push((0, slack_offset, 1.0));
    b.push(1.0);

    // SINR: (hᴴÊ_i h)/r − Σ_{b≠i} hᴴÊ_b h − s_i = σ²/P, scaled to unit rhs.
    for (i, h) in channels.iter().enumerate() {
        let h2 = h.norm_squared();
        if !(h2 > 0.0) {
            return Err(Error::ConstraintInfeasible { user: i });
        }
        let sigma_hat = cfg.sigma_k2 / (cfg.p_max * h2);
        let hh = h * h.adjoint() * Complex64::new(1.0 / (h2 * sigma_hat), 0.0);
        let coef = herm_coef(&hh);
        let row = 1 + i;
        for (bidx, &off) in e_offsets.iter().enumerate() {
            let scale = if bidx == i { 1.0 / r_th } else { -1.0 };
            push_row(&mut triplets, row, off, &coef, scale);
        }
        triplets.push((row, slack_offset + 1 + i, -1.0));
        b.push(1.0);
    }

    // Schur links. Z is the embedded 2×2 Hermitian
    // [[t²ȧᴴẼȧ − γ', t ȧᴴẼa], [t aᴴẼȧ, aᴴẼa]].
    let j = Complex64::new(0.0, 1.0);
    let c2 = |m: [[Complex64; 2]; 2]| CMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]]);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let half = Complex64::new(0.5, 0.0);
    let z_basis = [
        herm_coef(&c2([[one, zero], [zero, zero]])),
        herm_coef(&c2([[zero, zero], [zero, one]])),
        herm_coef(&c2([[zero, half], [half, zero]])),
        herm_coef(&c2([[zero, j * 0.5], [-j * 0.5, zero]])),
    ];
    let mut t = Vec::with_capacity(n_nodes);
    let mut row = 1 + k_users;
    for (u, node) in dirs.nodes.iter().enumerate() {
        let dn = node.adot.norm();
        let tu = if dn > 0.0 { (n_t as f64).sqrt() / dn } else { 1.0 };
        t.push(tu);
        let ad = &node.adot * Complex64::new(tu, 0.0);
        let n_mat = &node.a * ad.adjoint();
        let e_coefs = [
            herm_coef(&(&ad * ad.adjoint())),
            herm_coef(&(&node.a * node.a.adjoint())),
            herm_coef(&((&n_mat + n_mat.adjoint()) * half)),
            herm_coef(&((&n_mat - n_mat.adjoint()) * Complex64::new(0.0, -0.5))),
        ];
        for (r, (zc, ec)) in z_basis.iter().zip(&e_coefs).enumerate() {
            push_row(&mut triplets, row, z_offsets[u], zc, 1.0);
            for &off in &e_offsets {
                push_row(&mut triplets, row, off, ec, -1.0);
            }
            if r == 0 {
                triplets.push((row, gamma_offset + u, 1.0));
            }
            b.push(0.0);
            row += 1;
        }
    }

    // Objective: minimize −Σ ω (N_r γ'/t² + κ aᴴÊa).
    let mut c = vec![0.0; n_vars];
    let mut sens = CMatrix::zeros(n_t, n_t);
    for (u, node) in dirs.nodes.iter().enumerate() {
        sens += &node.a * node.a.adjoint() * Complex64::new(node.omega * node.kappa, 0.0);
        c[gamma_offset + u] = -node.omega * cfg.n_r as f64 / (t[u] * t[u]);
    }
    let sens_coef = herm_coef(&sens);
    for &off in &e_offsets {
        for (jj, v) in sens_coef.iter().enumerate() {
            c[off + jj] -= v;
        }
    }
    let objective_scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for v in &mut c {
        *v /= objective_scale;
    }
    let c_plain = c.clone();
    if let Some(p) = penalty {
        let id = CMatrix::identity(n_t, n_t);
        for (k, v) in p.directions.iter().enumerate() {
            let coef = herm_coef(&(&id - v * v.adjoint()));
            for (jj, val) in coef.iter().enumerate() {
                c[e_offsets[k] + jj] += val / p.rho;
            }
        }
    }

    let problem = ConicProblem { c, b, triplets, cones };
    let layout = SdrLayout {
        users: k_users,
        n_t,
        e_offsets,
        z_offsets,
        slack_offset,
        gamma_offset,
        t,
        objective_scale,
        p_max: cfg.p_max,
        c_plain,
    };
    Ok((problem, layout))
}

fn solve_sdr(
    problem: &ConicProblem,
    layout: &SdrLayout,
    cfg: &SystemConfig,
    settings: &BeamformSettings,
    rho: f64,
) -> Result<SdrIterate> {
    let sol = conic::solve(problem, &settings.solver)?;
    let report = SolveReport {
        status: sol.status,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        gap: sol.gap,
        iterations: sol.iterations,
    };
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => {
            return Err(Error::Infeasible("SINR targets cannot be met within the power budget".into()))
        }
        Status::Unbounded => return Err(Error::NumericalBreakdown("beamforming SDR reported unbounded".into())),
        // Accept a stalled solve only if it is already accurate.
        Status::MaxIter if report.max_residual() <= 1e-6 => {}
        Status::MaxIter => {
            return Err(Error::NumericalBreakdown(format!(
                "beamforming SDR stalled with residual {:.3e}",
                report.max_residual()
            )))
        }
    }
    let n2 = 2 * layout.n_t;
    let block = |off: usize| -> CMatrix {
        let x = smat(&sol.x[off..off + Cone::Psd(n2).dim()], n2);
        hermitian_recover(&x) * Complex64::new(layout.p_max, 0.0)
    };
    let comm: Vec<CMatrix> = layout.e_offsets[..layout.users].iter().map(|&o| block(o)).collect();
    let sensing = block(layout.e_offsets[layout.users]);
    let gamma = layout
        .t
        .iter()
        .enumerate()
        .map(|(u, t)| sol.x[layout.gamma_offset + u] / (t * t) * layout.p_max)
        .collect();
    let plain: f64 = layout.c_plain.iter().zip(&sol.x).map(|(c, x)| c * x).sum();
    let objective = -plain * layout.objective_scale * layout.p_max * echo_gain(cfg.alpha_r, cfg.block_len, cfg.sigma_r2);
    Ok(SdrIterate {
        comm,
        sensing,
        gamma,
        rho,
        objective,
        outer_iterations: 0,
        solves: vec![report],
    })
}

/// Penalty-free SDR solve.
pub fn solve_relaxation(
    dirs: &SensingDirections,
    channels: &[CVector],
    cfg: &SystemConfig,
    settings: &BeamformSettings,
) -> Result<SdrIterate> {
    let (problem, layout) = build_sdr(dirs, channels, cfg, None)?;
    solve_sdr(&problem, &layout, cfg, settings, f64::INFINITY)
}

/// Penalized SCA loop: each round linearizes `‖E_k‖₂` at the dominant
/// eigenvector of the previous iterate, solves, and shrinks `ρ`.
///
/// The first linearization point comes from the penalty-free solution after
/// moving each `E_k` onto its rank-one part (`E_k h hᴴ E_k / hᴴE_k h`) and
/// the remainder into `E_R`, which leaves `Ẽ` and every SINR unchanged.
pub fn penalty_sca_loop(
    dirs: &SensingDirections,
    channels: &[CVector],
    cfg: &SystemConfig,
    settings: &BeamformSettings,
) -> Result<SdrIterate> {
    let mut current = solve_relaxation(dirs, channels, cfg, settings)?;
    if channels.is_empty() {
        return Ok(current);
    }
    let mut solves = current.solves.clone();
    let mut directions: Vec<CVector> = rank_one_parts(&current.comm, channels)
        .into_iter()
        .map(|w| {
            let n = w.norm();
            w / Complex64::new(n, 0.0)
        })
        .collect();
    let mut rho = settings.rho0;
    let mut worst = 0.0;
    for outer in 1..=settings.max_outer {
        let penalty = Penalty {
            directions: directions.clone(),
            rho,
        };
        let (problem, layout) = build_sdr(dirs, channels, cfg, Some(&penalty))?;
        let next = solve_sdr(&problem, &layout, cfg, settings, rho)?;
        solves.extend(next.solves.iter().copied());
        let change = (next.objective - current.objective).abs() / current.objective.abs().max(f64::MIN_POSITIVE);
        let ratios = next.rank_ratios();
        worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        directions = next.comm.iter().map(dominant_eigenvector).collect();
        current = next;
        log::debug!("penalty round {outer}: rho {rho:.3e}, worst rank ratio {worst:.6}, change {change:.3e}");
        if worst >= settings.rank_ratio && change <= settings.objective_tol {
            current.outer_iterations = outer;
            current.solves = solves;
            return Ok(current);
        }
        rho *= settings.rho_shrink;
    }
    Err(Error::RankOneFailure {
        iterations: settings.max_outer,
        worst_ratio: worst,
    })
}

/// `w_k = E_k h_k / √(h_kᴴ E_k h_k)`: equals `√λ v` when `E_k = λ v vᴴ`
/// and preserves `|h_kᴴ w_k|² = h_kᴴ E_k h_k` in general.
fn rank_one_parts(comm: &[CMatrix], channels: &[CVector]) -> Vec<CVector> {
    comm.iter()
        .zip(channels)
        .map(|(e, h)| {
            let eh = e * h;
            let energy = h.dotc(&eh).re.max(f64::MIN_POSITIVE);
            eh / Complex64::new(energy.sqrt(), 0.0)
        })
        .collect()
}

/// Beamformer realizing the iterate: communication columns from the rank-one
/// parts of `E_k`, sensing columns a factor of `Ẽ − Σ w_k w_kᴴ` padded to
/// `N_r` columns. Validates power and SINR on the result.
pub fn extract_beams(iterate: &SdrIterate, channels: &[CVector], cfg: &SystemConfig) -> Result<BeamformerSet> {
    let k_users = channels.len();
    if iterate.comm.len() != k_users {
        return Err(Error::Dimension("one covariance per user required".into()));
    }
    let n_t = iterate.sensing.nrows();
    let comm = rank_one_parts(&iterate.comm, channels);
    let mut rest = iterate.total_covariance();
    for w in &comm {
        rest -= w * w.adjoint();
    }
    let rest = (&rest + rest.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(rest);
    let mut order: Vec<usize> = (0..n_t).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));

    let mut w = CMatrix::zeros(n_t, k_users + cfg.n_r);
    for (k, col) in comm.iter().enumerate() {
        w.set_column(k, col);
    }
    for (slot, &i) in order.iter().take(cfg.n_r).enumerate() {
        let lam = eig.eigenvalues[i].max(0.0);
        if lam > 0.0 {
            let col = eig.eigenvectors.column(i) * Complex64::new(lam.sqrt(), 0.0);
            w.set_column(k_users + slot, &col);
        }
    }
    let bf = BeamformerSet::new(w, k_users)?;
    validate_beams(&bf, channels, cfg)?;
    Ok(bf)
}

/// Power within `1e−6·P_max` and every SINR within `1e−4` (relative) of the threshold.
pub fn validate_beams(bf: &BeamformerSet, channels: &[CVector], cfg: &SystemConfig) -> Result<()> {
    let power = bf.power();
    if power > cfg.p_max * (1.0 + 1e-6) {
        return Err(Error::ValidationFailure(format!("power {power:.6e} W exceeds {:.6e} W", cfg.p_max)));
    }
    let r_th = cfg.sinr_threshold();
    for (k, h) in channels.iter().enumerate() {
        let s = sinr(bf, h, k, cfg.sigma_k2)?;
        if s < r_th * (1.0 - 1e-4) {
            return Err(Error::ValidationFailure(format!("user {k} SINR {s:.6e} below {r_th:.6e}")));
        }
    }
    Ok(())
}

/// Full beamforming stage: penalty loop followed by extraction.
pub fn optimize_beamformer(
    dirs: &SensingDirections,
    channels: &[CVector],
    cfg: &SystemConfig,
    settings: &BeamformSettings,
) -> Result<(BeamformerSet, SdrIterate)> {
    let it = penalty_sca_loop(dirs, channels, cfg, settings)?;
    let bf = extract_beams(&it, channels, cfg)?;
    Ok((bf, it))
}
