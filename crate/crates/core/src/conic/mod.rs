//! Small dense conic solver: linear objective, linear equalities, and a
//! product of PSD, non-negative and free cones.
//!
//! ```text
//! minimize cᵀx  subject to  Ax = b,  x ∈ K = PSD(n₁) × … × R₊ᵐ × Rᶠ
//! ```
//!
//! PSD blocks are stored as scaled lower-triangular vectorizations
//! (`svec`, column major, off-diagonals multiplied by √2) so that
//! `⟨svec A, svec B⟩ = Tr(AB)`.
//!
//! Complex Hermitian variables enter through [`hermitian_embed`]: a Hermitian
//! `H ⪰ 0` of size `n` is represented by a real PSD block of size `2n`.

mod ipm;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::CMatrix;

pub use ipm::solve;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Psd(usize),
    NonNeg(usize),
    Free(usize),
}

impl Cone {
    /// Number of stacked variables in this block.
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Psd(n) => svec_len(n),
            Cone::NonNeg(n) | Cone::Free(n) => n,
        }
    }

    /// Barrier degree (`n` for PSD(n) and R₊ⁿ, zero for free variables).
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Psd(n) | Cone::NonNeg(n) => n,
            Cone::Free(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    /// `(row, col, value)` entries of `A`; duplicates are summed.
    pub triplets: Vec<(usize, usize, f64)>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn n_vars(&self) -> usize {
        self.cones.iter().map(Cone::dim).sum()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    /// Start offset of every cone block in the stacked variable.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.cones.len());
        let mut acc = 0;
        for c in &self.cones {
            off.push(acc);
            acc += c.dim();
        }
        off
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.c.len() != n {
            return Err(Error::Dimension(format!("objective has {} entries, cones hold {n}", self.c.len())));
        }
        let m = self.n_rows();
        for &(r, col, v) in &self.triplets {
            if r >= m || col >= n {
                return Err(Error::Dimension(format!("triplet ({r}, {col}) outside {m}×{n}")));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("A[{r}, {col}]")));
            }
        }
        if self.c.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective or right-hand side".into()));
        }
        Ok(())
    }

    pub fn dense_a(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_rows(), self.n_vars());
        for &(r, c, v) in &self.triplets {
            a[(r, c)] += v;
        }
        a
    }

    /// Plain-text dump: a header line listing the cones, then one entry per
    /// line (`c col value`, `b row value`, `a row col value`).
    pub fn dump(&self) -> String {
        let mut out = String::from("cones");
        for c in &self.cones {
            let _ = match c {
                Cone::Psd(n) => write!(out, " psd:{n}"),
                Cone::NonNeg(n) => write!(out, " nonneg:{n}"),
                Cone::Free(n) => write!(out, " free:{n}"),
            };
        }
        let _ = writeln!(out, "\nrows {}", self.n_rows());
        for (i, v) in self.c.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(out, "c {i} {v:e}");
            }
        }
        for (i, v) in self.b.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(out, "b {i} {v:e}");
            }
        }
        for (r, c, v) in &self.triplets {
            let _ = writeln!(out, "a {r} {c} {v:e}");
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::InvalidConfig {
            field: "conic dump",
            reason: format!("malformed line `{line}`"),
        };
        let mut cones = Vec::new();
        let mut rows = None;
        let mut c_entries = Vec::new();
        let mut b_entries = Vec::new();
        let mut triplets = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("cones") => {
                    for tok in it {
                        let (kind, n) = tok.split_once(':').ok_or_else(|| bad(line))?;
                        let n: usize = n.parse().map_err(|_| bad(line))?;
                        cones.push(match kind {
                            "psd" => Cone::Psd(n),
                            "nonneg" => Cone::NonNeg(n),
                            "free" => Cone::Free(n),
                            _ => return Err(bad(line)),
                        });
                    }
                }
                Some("rows") => rows = Some(it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?),
                Some(tag @ ("c" | "b")) => {
                    let i: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?;
                    let v: f64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?;
                    if tag == "c" {
                        c_entries.push((i, v));
                    } else {
                        b_entries.push((i, v));
                    }
                }
                Some("a") => {
                    let r: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?;
                    let c: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?;
                    let v: f64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(line))?;
                    triplets.push((r, c, v));
                }
                _ => return Err(bad(line)),
            }
        }
        let n: usize = cones.iter().map(Cone::dim).sum();
        let m = rows.ok_or_else(|| bad("missing `rows` line"))?;
        let mut c = vec![0.0; n];
        for (i, v) in c_entries {
            *c.get_mut(i).ok_or_else(|| bad("objective index out of range"))? = v;
        }
        let mut b = vec![0.0; m];
        for (i, v) in b_entries {
            *b.get_mut(i).ok_or_else(|| bad("rhs index out of range"))? = v;
        }
        let p = Self { c, b, triplets, cones };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub status: Status,
    /// `‖b − Ax‖ / (1 + ‖b‖)`
    pub primal_residual: f64,
    /// `‖c − Aᵀy − s‖ / (1 + ‖c‖)`
    pub dual_residual: f64,
    /// `max(|cᵀx − bᵀy|, ⟨x, s⟩) / (1 + |cᵀx|)`
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn max_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.gap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 200 }
    }
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Index of entry `(i, j)`, `i ≥ j`, inside a column-major lower svec.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    j * n - j * (j + 1) / 2 + i
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in j..n {
            v.push(if i == j { m[(i, j)] } else { std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]) });
        }
    }
    v
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] * std::f64::consts::FRAC_1_SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// `[[Re H, −Im H], [Im H, Re H]]`.
pub fn hermitian_embed(h: &CMatrix) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Dimension(format!("{}×{} is not square", n, h.ncols())));
    }
    let dev = (h - h.adjoint()).iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if dev > 1e-10 {
        return Err(Error::NotHermitian(dev));
    }
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    Ok(out)
}

/// Hermitian matrix represented by a (not necessarily structured) real
/// `2n × 2n` block: `½[(X₁₁ + X₂₂) + j(X₂₁ − X₁₂)]`. Maps PSD to PSD and
/// inverts [`hermitian_embed`].
pub fn hermitian_recover(x: &DMatrix<f64>) -> CMatrix {
    let n = x.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        Complex64::new(
            0.5 * (x[(i, j)] + x[(i + n, j + n)]),
            0.5 * (x[(i + n, j)] - x[(i, j + n)]),
        )
    })
}

/// Euclidean projection onto the PSD cone: negative eigenvalues clipped.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_round_trip_and_isometry() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, -1.0, 0.5, 1.0, 0.3, -1.0, 0.3, 4.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -0.2, 0.1, -0.2, 3.0, 0.7, 0.1, 0.7, 0.5]);
        assert!((smat(&svec(&a), 3) - &a).norm() < 1e-15);
        let inner: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        assert!((inner - (&a * &b).trace()).abs() < 1e-13);
        assert_eq!(svec_index(3, 0, 0), 0);
        assert_eq!(svec_index(3, 2, 0), 2);
        assert_eq!(svec_index(3, 1, 1), 3);
        assert_eq!(svec_index(3, 1, 2), 4);
        assert_eq!(svec_index(3, 2, 2), 5);
    }

    #[test]
    fn embed_identity() {
        let e = hermitian_embed(&CMatrix::identity(2, 2)).unwrap();
        assert_eq!(e, DMatrix::identity(4, 4));
    }

    #[test]
    fn embed_pauli_y_doubles_spectrum() {
        let j = Complex64::new(0.0, 1.0);
        let h = CMatrix::from_row_slice(2, 2, &[Complex64::new(0.0, 0.0), -j, j, Complex64::new(0.0, 0.0)]);
        let e = hermitian_embed(&h).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(e).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_rejects_non_hermitian() {
        let h = CMatrix::from_row_slice(2, 2, &[
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        ]);
        assert!(matches!(hermitian_embed(&h), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn recover_inverts_embed() {
        let h = CMatrix::from_fn(3, 3, |i, j| {
            if i == j {
                Complex64::new(1.0 + i as f64, 0.0)
            } else if i < j {
                Complex64::new(0.1 * (i + j) as f64, 0.2 * j as f64)
            } else {
                Complex64::new(0.1 * (i + j) as f64, -0.2 * i as f64)
            }
        });
        let back = hermitian_recover(&hermitian_embed(&h).unwrap());
        assert!((back - h).norm() < 1e-15);
    }

    #[test]
    fn psd_projection_is_idempotent() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, -1.0, 0.5, 0.0, 0.5, -3.0]);
        let p = project_psd(&m);
        let pp = project_psd(&p);
        assert!((p.clone() - pp).norm() < 1e-12);
        let min_eig = SymmetricEigen::new(p).eigenvalues.min();
        assert!(min_eig > -1e-12);
    }

    #[test]
    fn dump_round_trip() {
        let p = ConicProblem {
            c: vec![1.0, 0.0, 2.0, -1.0, 0.5],
            b: vec![1.0, 0.25],
            triplets: vec![(0, 0, 1.0), (0, 2, 1.0), (1, 3, 1.0), (1, 4, -2.0)],
            cones: vec![Cone::Psd(2), Cone::NonNeg(1), Cone::Free(1)],
        };
        let back = ConicProblem::parse_dump(&p.dump()).unwrap();
        assert_eq!(back, p);
        assert!(ConicProblem::parse_dump("cones psd:2\nrows 1\nq 1 2").is_err());
    }
}
