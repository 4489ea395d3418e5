//! Gauss–Hermite rules and prior-weighted averaging over target angles.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::TargetPrior;

pub const MAX_ORDER: usize = 50;

/// `U`-point Gauss–Hermite rule for the weight `e^{-z²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    /// Nodes, ascending and symmetric about zero.
    pub nodes: Vec<f64>,
    /// Raw weights, summing to `√π`.
    pub weights: Vec<f64>,
    /// Weights divided by `√π`, summing to one.
    pub normalized: Vec<f64>,
}

impl GaussHermiteRule {
    pub fn new(order: usize) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::QuadratureOrder(order));
        }
        // Jacobi matrix of the monic recurrence p_{n+1} = z p_n - (n/2) p_{n-1}.
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for n in 1..order {
            let b = (n as f64 / 2.0).sqrt();
            jacobi[(n, n - 1)] = b;
            jacobi[(n - 1, n)] = b;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(f64::total_cmp);
        for i in 0..order / 2 {
            let mag = 0.5 * (nodes[order - 1 - i] - nodes[i]);
            nodes[i] = -mag;
            nodes[order - 1 - i] = mag;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }

        // ω = 2^{U-1} U! √π / (U² H_{U-1}(z)²), evaluated through the
        // orthonormal Hermite functions so the factorials never materialise:
        // the same quantity equals 1 / (U h_{U-1}(z)²).
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&z| {
                let h = orthonormal_hermite(order - 1, z);
                1.0 / (order as f64 * h * h)
            })
            .collect();
        let sqrt_pi = PI.sqrt();
        let normalized = weights.iter().map(|w| w / sqrt_pi).collect();
        Ok(Self {
            nodes,
            weights,
            normalized,
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// `θ̃_u = θ̄ + √2 σ z_u`.
    pub fn angles(&self, prior: &TargetPrior) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|z| prior.mean + std::f64::consts::SQRT_2 * prior.std * z)
            .collect()
    }

    /// Normalised-weight expectation `Σ_u w_u f(θ̃_u)` of `f` under the prior.
    pub fn average<F>(&self, prior: &TargetPrior, mut f: F) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        let mut acc = 0.0;
        for (theta, w) in self.angles(prior).into_iter().zip(&self.normalized) {
            let v = f(theta)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("integrand at θ = {theta}")));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Nodes and normalised weights of this rule mapped onto each prior.
    pub fn weighted_angles(&self, priors: &[TargetPrior]) -> Vec<WeightedAngle> {
        priors
            .iter()
            .flat_map(|p| {
                self.angles(p)
                    .into_iter()
                    .zip(self.normalized.iter().copied())
                    .map(|(theta, weight)| WeightedAngle { theta, weight })
            })
            .collect()
    }
}

/// One quadrature sample: angle and its (normalised) weight. Sets of these
/// concatenated over targets realise the sum-of-averages objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedAngle {
    pub theta: f64,
    pub weight: f64,
}

/// `H_n(z) / sqrt(2^n n! √π)`.
fn orthonormal_hermite(n: usize, z: f64) -> f64 {
    let mut prev = PI.powf(-0.25);
    if n == 0 {
        return prev;
    }
    let mut cur = std::f64::consts::SQRT_2 * z * prev;
    for k in 1..n {
        let kf = k as f64;
        let next = z * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}
