//! Infeasible-start primal-dual interior-point method with Nesterov–Todd
//! scaling and a Mehrotra predictor-corrector.
//!
//! Free variables are kept out of the normal equations and handled by a
//! bordered system `[[M, A_f], [A_fᵀ, 0]]`, where `M = A_c 𝒲 A_cᵀ` collects
//! the scaled conic columns.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};

use super::{smat, svec, Cone, ConicProblem, ConicSolution, Settings, Status};
use crate::error::{Error, Result};

/// Relative threshold for dropping linearly dependent rows.
const RANK_TOL: f64 = 1e-10;
/// Ratio below which a diverging iterate is taken as an infeasibility certificate.
const CERT_TOL: f64 = 1e-9;
const STEP_FRACTION: f64 = 0.98;

struct Block {
    cone: Cone,
    offset: usize,
    /// Per-row block of `A` as a symmetric matrix (PSD blocks only).
    rows: Vec<Option<DMatrix<f64>>>,
}

enum Scaling {
    Psd {
        r: DMatrix<f64>,
        r_inv: DMatrix<f64>,
        w: DMatrix<f64>,
        lam: DVector<f64>,
    },
    NonNeg {
        d: Vec<f64>,
    },
    Free,
}

struct Workspace<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    c: &'a DVector<f64>,
    blocks: Vec<Block>,
    free_cols: Vec<usize>,
    degree: f64,
}

/// Solves `problem` to relative accuracy `settings.tol`.
///
/// Exhausting `settings.max_iter`, or stalling, yields `Status::MaxIter`
/// together with the last iterate.
pub fn solve(problem: &ConicProblem, settings: &Settings) -> Result<ConicSolution> {
    problem.validate()?;
    let a_full = problem.dense_a();
    let m_full = problem.n_rows();
    let n = problem.n_vars();

    let (keep, consistent) = independent_rows(&a_full, &problem.b);
    if !consistent {
        return Ok(ConicSolution {
            x: vec![0.0; n],
            y: vec![0.0; m_full],
            s: vec![0.0; n],
            status: Status::Infeasible,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            gap: f64::INFINITY,
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            iterations: 0,
        });
    }
    let a = a_full.select_rows(keep.iter());
    let b = DVector::from_iterator(keep.len(), keep.iter().map(|&i| problem.b[i]));
    let c = DVector::from_column_slice(&problem.c);

    let mut blocks = Vec::with_capacity(problem.cones.len());
    let mut free_cols = Vec::new();
    let mut degree = 0.0;
    for (cone, offset) in problem.cones.iter().zip(problem.offsets()) {
        degree += cone.degree() as f64;
        let rows = match *cone {
            Cone::Psd(k) => (0..a.nrows())
                .map(|i| {
                    let seg: Vec<f64> = a.row(i).columns(offset, cone.dim()).iter().copied().collect();
                    if seg.iter().all(|v| *v == 0.0) {
                        None
                    } else {
                        Some(smat(&seg, k))
                    }
                })
                .collect(),
            Cone::Free(k) => {
                free_cols.extend(offset..offset + k);
                Vec::new()
            }
            Cone::NonNeg(_) => Vec::new(),
        };
        blocks.push(Block {
            cone: *cone,
            offset,
            rows,
        });
    }
    let ws = Workspace {
        a: &a,
        b: &b,
        c: &c,
        blocks,
        free_cols,
        degree,
    };
    let (x, y_red, s, status, iterations) = ws.run(settings)?;

    let mut y = vec![0.0; m_full];
    for (k, &i) in keep.iter().enumerate() {
        y[i] = y_red[k];
    }
    let (pres, dres, gap, pobj, dobj) = residuals(
        &a_full,
        &DVector::from_column_slice(&problem.b),
        &c,
        &x,
        &DVector::from_column_slice(&y),
        &s,
    );
    let x: Vec<f64> = x.iter().copied().collect();
    Ok(ConicSolution {
        x,
        y,
        s: s.iter().copied().collect(),
        status,
        primal_residual: pres,
        dual_residual: dres,
        gap,
        primal_objective: pobj,
        dual_objective: dobj,
        iterations,
    })
}

fn residuals(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    s: &DVector<f64>,
) -> (f64, f64, f64, f64, f64) {
    let rp = b - a * x;
    let rd = c - a.tr_mul(y) - s;
    let pobj = c.dot(x);
    let dobj = b.dot(y);
    let pres = rp.norm() / (1.0 + b.norm());
    let dres = rd.norm() / (1.0 + c.norm());
    let gap = (pobj - dobj).abs().max(x.dot(s).abs()) / (1.0 + pobj.abs());
    (pres, dres, gap, pobj, dobj)
}

/// Pivoted Gram–Schmidt over the rows of `A`; returns the kept row indices
/// (in original order) and whether the dropped rows are consistent with `b`.
fn independent_rows(a: &DMatrix<f64>, b: &[f64]) -> (Vec<usize>, bool) {
    let m = a.nrows();
    let mut work: Vec<(DVector<f64>, f64)> = (0..m).map(|i| (a.row(i).transpose(), b[i])).collect();
    let scale = work.iter().map(|(r, _)| r.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut keep = Vec::new();
    while !remaining.is_empty() {
        let (pos, &piv) = remaining
            .iter()
            .enumerate()
            .max_by(|x, y| work[*x.1].0.norm().total_cmp(&work[*y.1].0.norm()))
            .expect("non-empty");
        let norm = work[piv].0.norm();
        if norm <= RANK_TOL * scale {
            break;
        }
        remaining.swap_remove(pos);
        keep.push(piv);
        let q = work[piv].0.clone() / norm;
        let qb = work[piv].1 / norm;
        for &i in &remaining {
            let proj = work[i].0.dot(&q);
            work[i].0.axpy(-proj, &q, 1.0);
            work[i].1 -= proj * qb;
        }
    }
    let consistent = remaining
        .iter()
        .all(|&i| work[i].1.abs() <= 1e-8 * (1.0 + b[i].abs()));
    keep.sort_unstable();
    (keep, consistent)
}

fn frob_dot(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(p, q)| p * q).sum()
}

/// Largest `α` with `I + α G ⪰ 0`.
fn max_step_sym(g: &DMatrix<f64>) -> f64 {
    let sym = (g + g.transpose()) * 0.5;
    let min = SymmetricEigen::new(sym).eigenvalues.min();
    if min < 0.0 {
        -1.0 / min
    } else {
        f64::INFINITY
    }
}

fn diag_scale(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i] * d[j])
}

impl Workspace<'_> {
    fn run(&self, settings: &Settings) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, Status, usize)> {
        let (a, b, c) = (self.a, self.b, self.c);
        let (mut x, mut y, mut s) = self.initial_point();
        let mut stalled = 0;

        for iter in 0..settings.max_iter {
            let rp = b - a * &x;
            let mut rd = c - a.tr_mul(&y) - &s;
            for &j in &self.free_cols {
                // s is identically zero on free coordinates.
                rd[j] = c[j] - a.column(j).dot(&y);
            }
            let (pres, dres, gap, pobj, dobj) = residuals(a, b, c, &x, &y, &s);
            if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
                return Err(Error::NumericalBreakdown(format!("non-finite residuals at iteration {iter}")));
            }
            if pres <= settings.tol && dres <= settings.tol && gap <= settings.tol {
                return Ok((x, y, s, Status::Optimal, iter));
            }
            if dobj > 0.0 && (c - &rd).norm() <= CERT_TOL * dobj {
                return Ok((x, y, s, Status::Infeasible, iter));
            }
            if pobj < 0.0 && (b - &rp).norm() <= CERT_TOL * -pobj {
                return Ok((x, y, s, Status::Unbounded, iter));
            }

            let mu = self.complementarity(&x, &s) / self.degree.max(1.0);
            // Near the boundary the scaling or the Newton system can become
            // numerically singular. The current iterate is then handed back
            // as MaxIter so that callers judge it by its residuals.
            let step = self.scalings(&x, &s).and_then(|sc| {
                let kkt = self.factor(&sc)?;
                let r_xs = self.affine_target(&x);
                let aff = self.direction(&kkt, &sc, &rp, &rd, &r_xs)?;
                Ok((sc, kkt, aff))
            });
            let (scalings, kkt, (dx_a, _, ds_a)) = match step {
                Ok(v) => v,
                Err(e) if iter > 0 => {
                    log::debug!("stopping at iteration {iter}: {e} (pres {pres:.1e}, dres {dres:.1e}, gap {gap:.1e})");
                    return Ok((x, y, s, Status::MaxIter, iter));
                }
                Err(e) => return Err(e),
            };

            // Predictor.
            let ap = self.max_step(&scalings, &x, &dx_a, true).min(1.0);
            let ad = self.max_step(&scalings, &s, &ds_a, false).min(1.0);
            let mu_aff = self.complementarity(&(&x + &dx_a * ap), &(&s + &ds_a * ad)) / self.degree.max(1.0);
            let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

            // Corrector.
            let r_xs = self.corrector_target(&scalings, &x, &s, &dx_a, &ds_a, sigma * mu);
            let (dx, dy, ds) = match self.direction(&kkt, &scalings, &rp, &rd, &r_xs) {
                Ok(d) => d,
                Err(e) => {
                    log::debug!("stopping at iteration {iter}: {e}");
                    return Ok((x, y, s, Status::MaxIter, iter));
                }
            };
            let ap = (STEP_FRACTION * self.max_step(&scalings, &x, &dx, true)).min(1.0);
            let ad = (STEP_FRACTION * self.max_step(&scalings, &s, &ds, false)).min(1.0);
            x.axpy(ap, &dx, 1.0);
            s.axpy(ad, &ds, 1.0);
            y.axpy(ad, &dy, 1.0);

            if ap < 1e-10 && ad < 1e-10 {
                stalled += 1;
                if stalled >= 5 {
                    return Ok((x, y, s, Status::MaxIter, iter + 1));
                }
            } else {
                stalled = 0;
            }
        }
        Ok((x, y, s, Status::MaxIter, settings.max_iter))
    }

    fn initial_point(&self) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.c.len();
        let mut x = DVector::zeros(n);
        let mut s = DVector::zeros(n);
        for blk in &self.blocks {
            let range = blk.offset..blk.offset + blk.cone.dim();
            let k = blk.cone.degree() as f64;
            if k == 0.0 {
                continue;
            }
            let mut max_ratio: f64 = 0.0;
            let mut max_row: f64 = 0.0;
            for i in 0..self.a.nrows() {
                let nrm = self.a.row(i).columns(blk.offset, blk.cone.dim()).norm();
                max_ratio = max_ratio.max((1.0 + self.b[i].abs()) / (1.0 + nrm));
                max_row = max_row.max(nrm);
            }
            let c_norm = self.c.rows(blk.offset, blk.cone.dim()).norm();
            let xi = 10f64.max(k.sqrt()).max(k * max_ratio);
            let eta = 10f64.max(k.sqrt()).max(c_norm.max(max_row));
            match blk.cone {
                Cone::Psd(dim) => {
                    let id = svec(&DMatrix::identity(dim, dim));
                    for (off, v) in range.zip(id) {
                        x[off] = xi * v;
                        s[off] = eta * v;
                    }
                }
                Cone::NonNeg(_) => {
                    for off in range {
                        x[off] = xi;
                        s[off] = eta;
                    }
                }
                Cone::Free(_) => {}
            }
        }
        (x, DVector::zeros(self.b.len()), s)
    }

    fn complementarity(&self, x: &DVector<f64>, s: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .filter(|b| !matches!(b.cone, Cone::Free(_)))
            .map(|b| x.rows(b.offset, b.cone.dim()).dot(&s.rows(b.offset, b.cone.dim())))
            .sum()
    }

    fn scalings(&self, x: &DVector<f64>, s: &DVector<f64>) -> Result<Vec<Scaling>> {
        self.blocks
            .iter()
            .map(|blk| {
                let xs: Vec<f64> = x.rows(blk.offset, blk.cone.dim()).iter().copied().collect();
                let ss: Vec<f64> = s.rows(blk.offset, blk.cone.dim()).iter().copied().collect();
                match blk.cone {
                    Cone::Psd(k) => nt_scaling(&smat(&xs, k), &smat(&ss, k)),
                    Cone::NonNeg(_) => {
                        if xs.iter().chain(&ss).any(|v| !(*v > 0.0)) {
                            return Err(Error::NumericalBreakdown("left the non-negative orthant".into()));
                        }
                        Ok(Scaling::NonNeg {
                            d: xs.iter().zip(&ss).map(|(p, q)| p / q).collect(),
                        })
                    }
                    Cone::Free(_) => Ok(Scaling::Free),
                }
            })
            .collect()
    }

    /// Applies `𝒲` blockwise to a vector over conic coordinates.
    fn apply_w(&self, scalings: &[Scaling], v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (blk, sc) in self.blocks.iter().zip(scalings) {
            let dim = blk.cone.dim();
            match (sc, blk.cone) {
                (Scaling::Psd { w, .. }, Cone::Psd(k)) => {
                    let seg: Vec<f64> = v.rows(blk.offset, dim).iter().copied().collect();
                    let t = w * smat(&seg, k) * w;
                    out.rows_mut(blk.offset, dim).copy_from_slice(&svec(&t));
                }
                (Scaling::NonNeg { d }, _) => {
                    for (i, di) in d.iter().enumerate() {
                        out[blk.offset + i] = di * v[blk.offset + i];
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn factor(&self, scalings: &[Scaling]) -> Result<Kkt> {
        let m = self.b.len();
        let nf = self.free_cols.len();
        let mut big = DMatrix::<f64>::zeros(m + nf, m + nf);
        for (blk, sc) in self.blocks.iter().zip(scalings) {
            match sc {
                Scaling::Psd { w, .. } => {
                    let active: Vec<usize> = (0..m).filter(|&i| blk.rows[i].is_some()).collect();
                    for (jj, &j) in active.iter().enumerate() {
                        let aj = blk.rows[j].as_ref().expect("active");
                        let t = w * aj * w;
                        for &i in &active[..=jj] {
                            let v = frob_dot(blk.rows[i].as_ref().expect("active"), &t);
                            big[(i, j)] += v;
                            if i != j {
                                big[(j, i)] += v;
                            }
                        }
                    }
                }
                Scaling::NonNeg { d } => {
                    let cols = self.a.columns(blk.offset, d.len());
                    for i in 0..m {
                        for j in 0..=i {
                            let v: f64 = (0..d.len()).map(|k| cols[(i, k)] * d[k] * cols[(j, k)]).sum();
                            big[(i, j)] += v;
                            if i != j {
                                big[(j, i)] += v;
                            }
                        }
                    }
                }
                Scaling::Free => {}
            }
        }
        for (k, &col) in self.free_cols.iter().enumerate() {
            for i in 0..m {
                big[(i, m + k)] = self.a[(i, col)];
                big[(m + k, i)] = self.a[(i, col)];
            }
        }
        if big.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite normal matrix".into()));
        }
        // Symmetric diagonal equilibration keeps the LU well conditioned
        // when row scales differ by orders of magnitude.
        let dscale = DVector::from_iterator(
            m + nf,
            (0..m + nf).map(|i| {
                let d = big[(i, i)].abs();
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            }),
        );
        let scaled = diag_scale(&big, &dscale);
        Ok(Kkt {
            lu: scaled.lu(),
            dscale,
            m,
        })
    }

    fn affine_target(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut r = -x.clone();
        for &j in &self.free_cols {
            r[j] = 0.0;
        }
        r
    }

    fn corrector_target(
        &self,
        scalings: &[Scaling],
        x: &DVector<f64>,
        s: &DVector<f64>,
        dx_a: &DVector<f64>,
        ds_a: &DVector<f64>,
        target: f64,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for (blk, sc) in self.blocks.iter().zip(scalings) {
            let dim = blk.cone.dim();
            match (sc, blk.cone) {
                (Scaling::Psd { r, r_inv, lam, .. }, Cone::Psd(k)) => {
                    let seg = |v: &DVector<f64>| -> DMatrix<f64> {
                        smat(&v.rows(blk.offset, dim).iter().copied().collect::<Vec<_>>(), k)
                    };
                    let dxt = r_inv * seg(dx_a) * r_inv.transpose();
                    let dst = r.transpose() * seg(ds_a) * r;
                    let prod = &dxt * &dst;
                    let cterm = (&prod + prod.transpose()) * 0.5;
                    let rc = DMatrix::from_fn(k, k, |i, j| {
                        let diag = if i == j { target - lam[i] * lam[i] } else { 0.0 };
                        2.0 * (diag - cterm[(i, j)]) / (lam[i] + lam[j])
                    });
                    let full = r * rc * r.transpose();
                    out.rows_mut(blk.offset, dim).copy_from_slice(&svec(&full));
                }
                (Scaling::NonNeg { .. }, _) => {
                    for i in blk.offset..blk.offset + dim {
                        out[i] = (target - x[i] * s[i] - dx_a[i] * ds_a[i]) / s[i];
                    }
                }
                _ => {}
            }
        }
        out
    }

    fn direction(
        &self,
        kkt: &Kkt,
        scalings: &[Scaling],
        rp: &DVector<f64>,
        rd: &DVector<f64>,
        r_xs: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let m = kkt.m;
        let nf = self.free_cols.len();
        let mut rd_c = rd.clone();
        for &j in &self.free_cols {
            rd_c[j] = 0.0;
        }
        let rhs1 = rp - self.a * r_xs + self.a * self.apply_w(scalings, &rd_c);
        let mut rhs = DVector::zeros(m + nf);
        rhs.rows_mut(0, m).copy_from(&rhs1);
        for (k, &j) in self.free_cols.iter().enumerate() {
            rhs[m + k] = rd[j];
        }
        let sol = kkt
            .lu
            .solve(&rhs.component_mul(&kkt.dscale))
            .ok_or_else(|| Error::NumericalBreakdown("singular Newton system".into()))?
            .component_mul(&kkt.dscale);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite Newton step".into()));
        }
        let dy = sol.rows(0, m).into_owned();
        let mut ds = &rd_c - self.a.tr_mul(&dy);
        for &j in &self.free_cols {
            ds[j] = 0.0;
        }
        let mut dx = r_xs - self.apply_w(scalings, &ds);
        for (k, &j) in self.free_cols.iter().enumerate() {
            dx[j] = sol[m + k];
        }
        Ok((dx, dy, ds))
    }

    /// Largest step keeping the primal (`primal = true`) or dual iterate in
    /// the cone.
    fn max_step(&self, scalings: &[Scaling], v: &DVector<f64>, d: &DVector<f64>, primal: bool) -> f64 {
        let mut alpha = f64::INFINITY;
        for (blk, sc) in self.blocks.iter().zip(scalings) {
            let dim = blk.cone.dim();
            match (sc, blk.cone) {
                (Scaling::Psd { r, r_inv, lam, .. }, Cone::Psd(k)) => {
                    let dm = smat(&d.rows(blk.offset, dim).iter().copied().collect::<Vec<_>>(), k);
                    let scaled = if primal {
                        r_inv * dm * r_inv.transpose()
                    } else {
                        r.transpose() * dm * r
                    };
                    let inv_sqrt = lam.map(|l| 1.0 / l.sqrt());
                    alpha = alpha.min(max_step_sym(&diag_scale(&scaled, &inv_sqrt)));
                }
                (Scaling::NonNeg { .. }, _) => {
                    for i in blk.offset..blk.offset + dim {
                        if d[i] < 0.0 {
                            alpha = alpha.min(-v[i] / d[i]);
                        }
                    }
                }
                _ => {}
            }
        }
        alpha
    }
}

struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    dscale: DVector<f64>,
    m: usize,
}

/// NT scaling from `X = L_x L_xᵀ`, `S = L_s L_sᵀ`, `L_sᵀ L_x = U Σ Vᵀ`:
/// `R = L_x V Σ^{-1/2}` gives `R⁻¹ X R⁻ᵀ = Rᵀ S R = Σ` and `W = R Rᵀ`.
fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Scaling> {
    let lx = Cholesky::new(x.clone())
        .ok_or_else(|| Error::NumericalBreakdown("primal block lost definiteness".into()))?
        .l();
    let ls = Cholesky::new(s.clone())
        .ok_or_else(|| Error::NumericalBreakdown("dual block lost definiteness".into()))?
        .l();
    let svd = SVD::new(ls.transpose() * &lx, true, true);
    let u = svd.u.ok_or_else(|| Error::NumericalBreakdown("SVD failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::NumericalBreakdown("SVD failed".into()))?;
    let lam = svd.singular_values;
    if lam.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::NumericalBreakdown("degenerate NT scaling".into()));
    }
    let isq = lam.map(|l| 1.0 / l.sqrt());
    let r = &lx * vt.transpose() * DMatrix::from_diagonal(&isq);
    let r_inv = DMatrix::from_diagonal(&isq) * u.transpose() * ls.transpose();
    let w = &r * r.transpose();
    Ok(Scaling::Psd { r, r_inv, w, lam })
}
