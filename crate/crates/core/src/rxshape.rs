//! Receive-surface shape at fixed beamformer and transmit shape.
//!
//! Only `κ(θ) = ζᵀPζ` depends on the receive shape. Collecting the weighted
//! transmit energies `p_u = ‖a_uᴴW‖²` gives
//!
//! ```text
//! Σ_u ω_u p_u κ_u = const + yᵀQy − 2qᵀy,   Q = η₂P,   q = η₁Px
//! η₁ = Σ ω p sinθ cosθ,   η₂ = Σ ω p cos²θ
//! ```
//!
//! a convex quadratic maximized over a box, hence at a vertex
//! `y = y_min + d_y J`, `J ∈ {0,1}^N`. With `m = ΣJ` fixed the objective is
//! linear in `J`:
//!
//! ```text
//! δ² [ Σ β_n J_n − η₂ d_y² m² / N ],   β_n = η₂ d_y² − 2η₁ d_y (x_n − x̄)
//! ```
//!
//! so the optimum takes the `m` largest `β_n`; scanning all `m` is exact.

use crate::error::{Error, Result};
use crate::model::{steering, ArrayGeometry, BeamformerSet, SurfaceShape};
use crate::quadrature::WeightedAngle;

pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RxObjectiveData {
    pub eta1: f64,
    pub eta2: f64,
    /// Receive element abscissae `x^r`.
    pub x: Vec<f64>,
    pub wavenumber: f64,
}

impl RxObjectiveData {
    pub fn new(eta1: f64, eta2: f64, x: Vec<f64>, wavenumber: f64) -> Result<Self> {
        if !(eta1.is_finite() && eta2.is_finite()) || eta2 < 0.0 {
            return Err(Error::NonFinite(format!("η₁ = {eta1}, η₂ = {eta2}")));
        }
        Ok(Self {
            eta1,
            eta2,
            x,
            wavenumber,
        })
    }

    /// Data induced by a beamformer, transmit array and weighted angles.
    pub fn from_design(w: &BeamformerSet, tx: &ArrayGeometry, rx: &ArrayGeometry, nodes: &[WeightedAngle]) -> Result<Self> {
        let (mut eta1, mut eta2) = (0.0, 0.0);
        for n in nodes {
            let p = w.w.ad_mul(&steering(tx, n.theta)).norm_squared();
            let (s, c) = n.theta.sin_cos();
            eta1 += n.weight * p * s * c;
            eta2 += n.weight * p * c * c;
        }
        Self::new(eta1, eta2, rx.x.clone(), rx.wavenumber)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Dense `Q = η₂P`.
    pub fn q_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let d2 = self.wavenumber * self.wavenumber;
        nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            self.eta2 * d2 * (id - 1.0 / n as f64)
        })
    }

    /// `q = η₁Px`.
    pub fn q_vector(&self) -> Vec<f64> {
        let d2 = self.wavenumber * self.wavenumber;
        let mean = mean(&self.x);
        self.x.iter().map(|x| self.eta1 * d2 * (x - mean)).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// `yᵀQy − 2qᵀy`, evaluated from centred vectors.
pub fn rx_objective(y: &[f64], data: &RxObjectiveData) -> f64 {
    let ym = mean(y);
    let xm = mean(&data.x);
    let mut quad = 0.0;
    let mut cross = 0.0;
    for (yi, xi) in y.iter().zip(&data.x) {
        let yc = yi - ym;
        quad += yc * yc;
        cross += (xi - xm) * yc;
    }
    data.wavenumber * data.wavenumber * (data.eta2 * quad - 2.0 * data.eta1 * cross)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexSolution {
    /// `J_n = 1` places element `n` at `y_max`.
    pub j: Vec<bool>,
    /// `η* = m d_y / N`.
    pub eta_star: f64,
    /// Thresholds `τ_n = β_n / (2η₂d_y)`, ascending.
    pub tau: Vec<f64>,
    pub m: usize,
    pub shape: SurfaceShape,
    pub objective: f64,
    /// Whether `J` is the threshold set `{τ_n ≥ η*}` of the saddle condition.
    pub saddle_consistent: bool,
}

fn vertex_shape(j: &[bool], y_min: f64, y_max: f64) -> Vec<f64> {
    j.iter().map(|&b| if b { y_max } else { y_min }).collect()
}

fn check_box(y_min: f64, y_max: f64) -> Result<()> {
    if !(y_min.is_finite() && y_max.is_finite()) || y_min > y_max {
        return Err(Error::InvalidConfig {
            field: "y_min/y_max",
            reason: format!("[{y_min}, {y_max}] is not a box"),
        });
    }
    Ok(())
}

/// Exact maximizer of [`rx_objective`] over the box via the sorted-threshold
/// scan. Ties go to the smaller `ΣJ`.
pub fn solve_fixed_point(data: &RxObjectiveData, y_min: f64, y_max: f64) -> Result<VertexSolution> {
    check_box(y_min, y_max)?;
    let n = data.len();
    let dy = y_max - y_min;
    let xm = mean(&data.x);
    let beta: Vec<f64> = data
        .x
        .iter()
        .map(|x| data.eta2 * dy * dy - 2.0 * data.eta1 * dy * (x - xm))
        .collect();
    let tau_of = |b: f64| {
        if data.eta2 > 0.0 && dy > 0.0 {
            b / (2.0 * data.eta2 * dy)
        } else {
            b.signum() * f64::INFINITY
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    // Descending β; index order breaks ties so the result is deterministic.
    order.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]).then(a.cmp(&b)));

    let mut best: Option<(f64, usize)> = None;
    for m in 0..=n {
        let mut j = vec![false; n];
        for &i in &order[..m] {
            j[i] = true;
        }
        let val = rx_objective(&vertex_shape(&j, y_min, y_max), data);
        // Near-ties (rounding level) keep the smaller m.
        match best {
            Some((v, _)) if val <= v + 1e-13 * v.abs().max(val.abs()) => {}
            _ => best = Some((val, m)),
        }
    }
    let (objective, m) = best.expect("m = 0 is always scored");
    let mut j = vec![false; n];
    for &i in &order[..m] {
        j[i] = true;
    }
    let eta_star = m as f64 * dy / n.max(1) as f64;
    let mut tau: Vec<f64> = beta.iter().map(|b| tau_of(*b)).collect();
    let saddle_consistent = (0..n).all(|i| if j[i] { tau[i] >= eta_star } else { tau[i] <= eta_star });
    tau.sort_by(f64::total_cmp);
    let shape = SurfaceShape::new(vertex_shape(&j, y_min, y_max), y_min, y_max)?;
    Ok(VertexSolution {
        j,
        eta_star,
        tau,
        m,
        shape,
        objective,
        saddle_consistent,
    })
}

/// Exhaustive search over all `2^N` vertices; ties go to the smaller binary
/// value of `J` (bit `n` is element `n`).
pub fn brute_force_rxshape(data: &RxObjectiveData, y_min: f64, y_max: f64) -> Result<VertexSolution> {
    check_box(y_min, y_max)?;
    let n = data.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeGuard {
            limit: BRUTE_FORCE_LIMIT,
            got: n,
        });
    }
    let mut best = (f64::NEG_INFINITY, 0u32);
    for mask in 0u32..(1u32 << n) {
        let j: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let val = rx_objective(&vertex_shape(&j, y_min, y_max), data);
        if val > best.0 {
            best = (val, mask);
        }
    }
    let j: Vec<bool> = (0..n).map(|i| best.1 >> i & 1 == 1).collect();
    let m = j.iter().filter(|b| **b).count();
    let dy = y_max - y_min;
    Ok(VertexSolution {
        shape: SurfaceShape::new(vertex_shape(&j, y_min, y_max), y_min, y_max)?,
        j,
        eta_star: m as f64 * dy / n.max(1) as f64,
        tau: Vec::new(),
        m,
        objective: best.0,
        saddle_consistent: false,
    })
}
