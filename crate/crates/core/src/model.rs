//! Scenario model: configuration, deformable array geometry, steering
//! vectors, user channels and SINR.
//!
//! Angles are measured from the array axis (`x`), so `θ = π/2` is broadside.
//! Every element sits at `(x_n, y_n)` with `x_n = d_x·n` fixed and the
//! transverse displacement `y_n` reconfigurable inside `[y_min, y_max]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Which angle-derivative of the transmit steering vector to use.
///
/// `Exact` differentiates both the `x cosθ` and the `y sinθ` phase terms.
/// `FlatTransmit` keeps only the `x` term, i.e. the derivative of a flat
/// transmit array evaluated with the displaced array's phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeConvention {
    #[default]
    Exact,
    FlatTransmit,
}

/// Gaussian prior on a target angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPrior {
    /// Prior mean (rad).
    pub mean: f64,
    /// Prior standard deviation (rad).
    pub std: f64,
}

impl TargetPrior {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::InvalidConfig {
                field: "sigma_theta",
                reason: format!("prior std must be positive, got {std}"),
            });
        }
        if !mean.is_finite() {
            return Err(Error::InvalidConfig {
                field: "theta_bar",
                reason: "prior mean must be finite".into(),
            });
        }
        Ok(Self { mean, std })
    }

    /// Prior whose spread is 0.4 of the half-power beamwidth `0.886/(N cos θ̄)`.
    pub fn beamwidth_scaled(mean: f64, n_t: usize) -> Self {
        Self {
            mean,
            std: 0.4 * 0.886 / (n_t as f64 * mean.cos()),
        }
    }
}

/// All scenario constants. Powers are in watts, lengths in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub users: usize,
    /// Block length `T` in symbols.
    pub block_len: usize,
    pub wavelength: f64,
    pub spacing: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub p_max: f64,
    pub sigma_r2: f64,
    pub sigma_k2: f64,
    /// Per-user rate threshold in bps/Hz.
    pub rate_threshold: f64,
    pub alpha_r: Complex64,
    pub quad_order: usize,
    pub targets: Vec<TargetPrior>,
    pub convention: DerivativeConvention,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let wavelength = 0.01;
        let n_t = 8;
        Self {
            n_t,
            n_r: 8,
            users: 2,
            block_len: 128,
            wavelength,
            spacing: wavelength / 2.0,
            y_min: 0.0,
            y_max: 2.0 * wavelength,
            p_max: dbm_to_watts(26.0),
            sigma_r2: dbm_to_watts(-80.0),
            sigma_k2: dbm_to_watts(-80.0),
            rate_threshold: 4.0,
            alpha_r: Complex64::new(path_gain_amplitude(50.0), 0.0),
            quad_order: 5,
            targets: vec![TargetPrior::beamwidth_scaled(PI / 4.0, n_t)],
            convention: DerivativeConvention::Exact,
            seed: 0,
        }
    }
}

impl SystemConfig {
    /// `δ = 2π/λ`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// SINR threshold `2^R − 1`.
    pub fn sinr_threshold(&self) -> f64 {
        2f64.powf(self.rate_threshold) - 1.0
    }

    pub fn morph_range(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Result<()> {
            Err(Error::InvalidConfig {
                field,
                reason: reason.into(),
            })
        }
        let finite = [
            ("wavelength", self.wavelength),
            ("spacing", self.spacing),
            ("y_min", self.y_min),
            ("y_max", self.y_max),
            ("p_max", self.p_max),
            ("sigma_r2", self.sigma_r2),
            ("sigma_k2", self.sigma_k2),
            ("rate_threshold", self.rate_threshold),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return bad(field, "must be finite");
            }
        }
        if self.n_t == 0 {
            return bad("n_t", "need at least one transmit element");
        }
        if self.n_r < self.n_t {
            return bad("n_r", format!("N_r = {} must be at least N_t = {}", self.n_r, self.n_t));
        }
        if self.block_len <= self.n_t {
            return bad("block_len", format!("T = {} must exceed N_t = {}", self.block_len, self.n_t));
        }
        if self.wavelength <= 0.0 {
            return bad("wavelength", "must be positive");
        }
        if self.spacing <= 0.0 {
            return bad("spacing", "must be positive");
        }
        if self.y_min > self.y_max {
            return bad("y_min", format!("y_min = {} exceeds y_max = {}", self.y_min, self.y_max));
        }
        if self.p_max <= 0.0 {
            return bad("p_max", "must be positive");
        }
        if self.sigma_r2 <= 0.0 {
            return bad("sigma_r2", "must be positive");
        }
        if self.sigma_k2 <= 0.0 {
            return bad("sigma_k2", "must be positive");
        }
        if self.rate_threshold < 0.0 {
            return bad("rate_threshold", "must be non-negative");
        }
        if !self.alpha_r.re.is_finite() || !self.alpha_r.im.is_finite() {
            return bad("alpha_r", "must be finite");
        }
        if !(1..=50).contains(&self.quad_order) {
            return bad("quad_order", format!("U = {} outside 1..=50", self.quad_order));
        }
        if self.targets.is_empty() {
            return bad("targets", "need at least one target prior");
        }
        for t in &self.targets {
            TargetPrior::new(t.mean, t.std).map_err(|e| match e {
                Error::InvalidConfig { reason, .. } => Error::InvalidConfig { field: "targets", reason },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn tx_geometry(&self, shape: &SurfaceShape) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.spacing, self.wavenumber(), shape.clone())
    }

    pub fn rx_geometry(&self, shape: &SurfaceShape) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.spacing, self.wavenumber(), shape.clone())
    }

    pub fn flat_tx(&self) -> SurfaceShape {
        SurfaceShape::flat(self.n_t, self.y_min)
    }

    pub fn flat_rx(&self) -> SurfaceShape {
        SurfaceShape::flat(self.n_r, self.y_min)
    }
}

/// Transverse displacements of a deformable array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceShape {
    pub y: Vec<f64>,
}

impl SurfaceShape {
    /// Checked constructor: every displacement must lie in `[y_min, y_max]`.
    pub fn new(y: Vec<f64>, y_min: f64, y_max: f64) -> Result<Self> {
        if let Some((n, v)) = y
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= y_min && **v <= y_max))
        {
            return Err(Error::InvalidConfig {
                field: "y",
                reason: format!("y[{n}] = {v} outside [{y_min}, {y_max}]"),
            });
        }
        Ok(Self { y })
    }

    pub fn flat(n: usize, level: f64) -> Self {
        Self { y: vec![level; n] }
    }

    /// Componentwise clamp into the box.
    pub fn clamped(y: &[f64], y_min: f64, y_max: f64) -> Self {
        Self {
            y: y.iter().map(|v| v.clamp(y_min, y_max)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Element positions of a linear deformable array.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub x: Vec<f64>,
    pub shape: SurfaceShape,
    pub wavenumber: f64,
}

impl ArrayGeometry {
    pub fn new(spacing: f64, wavenumber: f64, shape: SurfaceShape) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidConfig {
                field: "spacing",
                reason: "must be positive".into(),
            });
        }
        let x = (0..shape.len()).map(|n| spacing * n as f64).collect();
        Ok(Self { x, shape, wavenumber })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.shape.y
    }

    pub fn with_shape(&self, shape: SurfaceShape) -> Self {
        Self {
            x: self.x.clone(),
            shape,
            wavenumber: self.wavenumber,
        }
    }
}

/// `[a]_n = exp(jδ(x_n cosθ + y_n sinθ))`.
pub fn steering(geom: &ArrayGeometry, theta: f64) -> CVector {
    let (s, c) = theta.sin_cos();
    let d = geom.wavenumber;
    CVector::from_iterator(
        geom.len(),
        geom.x
            .iter()
            .zip(geom.y())
            .map(|(x, y)| Complex64::from_polar(1.0, d * (x * c + y * s))),
    )
}

/// Angle derivative of [`steering`] under the chosen convention.
pub fn steering_derivative(geom: &ArrayGeometry, theta: f64, convention: DerivativeConvention) -> CVector {
    let (s, c) = theta.sin_cos();
    let d = geom.wavenumber;
    CVector::from_iterator(
        geom.len(),
        geom.x.iter().zip(geom.y()).map(|(x, y)| {
            let phase = Complex64::from_polar(1.0, d * (x * c + y * s));
            let rate = match convention {
                DerivativeConvention::Exact => -x * s + y * c,
                DerivativeConvention::FlatTransmit => -x * s,
            };
            J * d * rate * phase
        }),
    )
}

/// One propagation path of a user channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: Complex64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    pub paths: Vec<Path>,
    pub distance: f64,
}

impl UserChannel {
    pub fn single_path(gain: Complex64, theta: f64, distance: f64) -> Self {
        Self {
            paths: vec![Path { gain, theta }],
            distance,
        }
    }

    /// `Σ_ℓ |α_ℓ|`, an upper bound on any entry magnitude of the channel.
    pub fn gain_scale(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm()).sum()
    }
}

/// `h = Σ_ℓ α_ℓ a(y^t, θ_ℓ)`.
pub fn channel_realize(user: &UserChannel, tx: &ArrayGeometry) -> CVector {
    let mut h = CVector::zeros(tx.len());
    for p in &user.paths {
        h += steering(tx, p.theta) * p.gain;
    }
    h
}

pub fn realize_all(users: &[UserChannel], tx: &ArrayGeometry) -> Vec<CVector> {
    users.iter().map(|u| channel_realize(u, tx)).collect()
}

/// Dual-function beamformer: `users` communication columns followed by the
/// sensing columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub w: CMatrix,
    pub users: usize,
}

impl BeamformerSet {
    pub fn new(w: CMatrix, users: usize) -> Result<Self> {
        if users > w.ncols() {
            return Err(Error::Dimension(format!(
                "{users} communication columns requested from a {}-column beamformer",
                w.ncols()
            )));
        }
        Ok(Self { w, users })
    }

    pub fn zeros(n_t: usize, users: usize, n_r: usize) -> Self {
        Self {
            w: CMatrix::zeros(n_t, users + n_r),
            users,
        }
    }

    pub fn n_t(&self) -> usize {
        self.w.nrows()
    }

    /// `WWᴴ`.
    pub fn covariance(&self) -> CMatrix {
        &self.w * self.w.adjoint()
    }

    /// `‖W‖_F²`.
    pub fn power(&self) -> f64 {
        self.w.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn column(&self, i: usize) -> CVector {
        self.w.column(i).into_owned()
    }
}

/// SINR of user `k` (zero based) with interference from every other column.
pub fn sinr(w: &BeamformerSet, h: &CVector, k: usize, sigma2: f64) -> Result<f64> {
    if k >= w.users {
        return Err(Error::UserIndex {
            index: k,
            users: w.users,
        });
    }
    if h.len() != w.n_t() {
        return Err(Error::Dimension(format!(
            "channel length {} vs {} transmit elements",
            h.len(),
            w.n_t()
        )));
    }
    let gains = w.w.ad_mul(h);
    let mut interference = sigma2;
    for (i, g) in gains.iter().enumerate() {
        if i != k {
            interference += g.norm_sqr();
        }
    }
    Ok(gains[k].norm_sqr() / interference)
}

/// Amplitude of the distance-dependent path gain `10⁻³ d^-2.2` (a power gain).
pub fn path_gain_amplitude(distance: f64) -> f64 {
    (1e-3 * distance.powf(-2.2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub users: Vec<UserChannel>,
    pub targets: Vec<TargetPrior>,
}

/// Draws `config.users` single-path users: distance `U[30, 80]` m, angle
/// `U[-π/3, π/3]`, uniform gain phase. Users are drawn one after another
/// from one stream, so the first `k` users agree across different `K`.
pub fn generate_scenario(config: &SystemConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..config.users)
        .map(|_| {
            let distance = rng.random_range(30.0..=80.0);
            let theta = rng.random_range(-PI / 3.0..=PI / 3.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            UserChannel::single_path(Complex64::from_polar(path_gain_amplitude(distance), phase), theta, distance)
        })
        .collect();
    Scenario {
        users,
        targets: config.targets.clone(),
    }
}
