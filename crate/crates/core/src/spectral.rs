//! Linear solves and the low-lying spectrum of transported Dirac operators.
//!
//! Solves use restarted GMRES, right-preconditioned with the exact flat
//! resolvent. The spectrum near zero comes from block Krylov iteration on the
//! shift-inverted, weight-symmetrized operator `W^{1/2} (D − σ)⁻¹ W^{-1/2}`,
//! with every reported pair certified by an explicit residual.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bg::DiracOperator;
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative residual target.
    pub tol: f64,
    /// Total Krylov iterations across restarts.
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 500,
            restart: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<Complex64>,
    /// Achieved `‖A x − b‖ / ‖b‖`, recomputed from the final iterate.
    pub residual: f64,
    /// Normwise backward error `‖A x − b‖ / (‖A‖ ‖x‖ + ‖b‖)` with `‖A‖`
    /// estimated from the Krylov vectors.
    pub backward_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).fold(ZERO, |s, (x, y)| s + x.conj() * y)
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    if r == 0.0 {
        return (1.0, ZERO);
    }
    let phase = if a.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { a / a.norm() };
    (a.norm() / r, phase * b.conj() / r)
}

/// Restarted right-preconditioned GMRES for `A x = b` from `x₀ = 0`.
///
/// Converges when `‖A x − b‖ ≤ tol ‖b‖`, or when a whole restart cycle
/// stagnates at a backward error below `tol`; the second case is the
/// rounding floor of nearly singular systems.
pub fn gmres<A, M>(apply: A, precond: M, rhs: &[Complex64], cfg: &SolverConfig) -> SolveReport
where
    A: Fn(&[Complex64]) -> Vec<Complex64>,
    M: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let len = rhs.len();
    let bnorm = norm(rhs);
    let mut x = vec![ZERO; len];
    if bnorm == 0.0 {
        return SolveReport {
            solution: x,
            residual: 0.0,
            backward_error: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let target = cfg.tol * bnorm;
    let restart = cfg.restart.max(1);
    let mut r = rhs.to_vec();
    let mut beta = bnorm;
    let mut total = 0;
    let mut best = (x.clone(), 1.0, 1.0);
    let mut anorm = 0.0f64;
    loop {
        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut precond_basis: Vec<Vec<Complex64>> = Vec::new();
        let mut hess: Vec<Vec<Complex64>> = Vec::new();
        let mut rot: Vec<(f64, Complex64)> = Vec::new();
        let mut g = vec![Complex64::new(beta, 0.0)];
        for j in 0..restart {
            let z = precond(&basis[j]);
            let mut w = apply(&z);
            let zn = norm(&z);
            if zn > 0.0 {
                anorm = anorm.max(norm(&w) / zn);
            }
            precond_basis.push(z);
            let mut col = vec![ZERO; j + 2];
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let h = dot(v, &w);
                    col[i] += h;
                    axpy(-h, v, &mut w);
                }
            }
            let wn = norm(&w);
            col[j + 1] = Complex64::new(wn, 0.0);
            for (i, &(c, s)) in rot.iter().enumerate() {
                let (a, b) = (col[i], col[i + 1]);
                col[i] = c * a + s * b;
                col[i + 1] = -s.conj() * a + c * b;
            }
            let (c, s) = givens(col[j], col[j + 1]);
            col[j] = c * col[j] + s * col[j + 1];
            col[j + 1] = ZERO;
            rot.push((c, s));
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s.conj() * gj);
            hess.push(col);
            total += 1;
            let lucky = wn <= 1e-300;
            if !lucky {
                basis.push(w.iter().map(|v| v / wn).collect());
            }
            if g[j + 1].norm() <= target || total >= cfg.max_iter || lucky {
                break;
            }
        }
        let k = hess.len();
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (jj, yj) in y.iter().enumerate().skip(i + 1) {
                s -= hess[jj][i] * yj;
            }
            y[i] = s / hess[i][i];
        }
        for (yi, z) in y.iter().zip(&precond_basis) {
            axpy(*yi, z, &mut x);
        }
        let ax = apply(&x);
        r = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let previous = beta;
        beta = norm(&r);
        let rel = beta / bnorm;
        let backward = beta / (anorm * norm(&x) + bnorm);
        if rel < best.1 {
            best = (x.clone(), rel, backward);
        }
        let stagnated = beta > 0.5 * previous && backward <= cfg.tol;
        if beta <= target || stagnated {
            return SolveReport {
                solution: x,
                residual: rel,
                backward_error: backward,
                iterations: total,
                converged: true,
            };
        }
        if total >= cfg.max_iter || !beta.is_finite() {
            return SolveReport {
                solution: best.0,
                residual: best.1,
                backward_error: best.2,
                iterations: total,
                converged: false,
            };
        }
    }
}

/// Solves `(D − σ) x = rhs` with the flat resolvent as preconditioner.
pub fn solve_shifted(op: &DiracOperator, rhs: &[Complex64], sigma: f64, cfg: &SolverConfig) -> SolveReport {
    gmres(
        |v| {
            let mut out = op.apply(v);
            if sigma != 0.0 {
                axpy(Complex64::new(-sigma, 0.0), v, &mut out);
            }
            out
        },
        |v| op.flat_resolvent(v, sigma),
        rhs,
        cfg,
    )
}

/// Full report of a solve of `D x = rhs`; never fails on budget exhaustion.
pub fn solve_report(op: &DiracOperator, rhs: &[Complex64], cfg: &SolverConfig) -> Result<SolveReport> {
    crate::bg::check_field(op, rhs)?;
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("right-hand side is not finite".into()));
    }
    if op.is_flat() && op.bundle().has_zero_mode() {
        return Err(Error::NotInvertible {
            gap: 0.0,
            threshold: 0.0,
        });
    }
    Ok(solve_shifted(op, rhs, 0.0, cfg))
}

/// Solves `D x = rhs` to relative residual `tol`.
pub fn solve(op: &DiracOperator, rhs: &[Complex64], tol: f64) -> Result<Vec<Complex64>> {
    let cfg = SolverConfig {
        tol,
        ..SolverConfig::default()
    };
    let rep = solve_report(op, rhs, &cfg)?;
    if rep.converged {
        Ok(rep.solution)
    } else {
        Err(Error::SolveBudget {
            iterations: rep.iterations,
            residual: rep.residual,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenConfig {
    /// Shift of the inverse iteration; slightly off zero so that exact
    /// kernels stay resolvable.
    pub shift: f64,
    /// Extra block vectors beyond the requested count; must cover the
    /// multiplicity of the lowest flat cluster (16 on antiperiodic `T³`).
    pub guard: usize,
    /// Block Krylov depth per restart.
    pub depth: usize,
    pub max_restarts: usize,
    /// Residual certificate `‖Dφ − λφ‖ ≤ eig_tol ‖φ‖` (weighted norms).
    pub eig_tol: f64,
    pub inner_tol: f64,
    /// Cluster tolerance relative to the grid Dirac scale.
    pub cluster_rel: f64,
    pub gap_threshold: f64,
    pub seed: u64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            shift: -1.234_567e-3,
            guard: 16,
            depth: 4,
            max_restarts: 40,
            eig_tol: 1e-8,
            inner_tol: 1e-12,
            cluster_rel: 1e-8,
            gap_threshold: 1e-6,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Sorted by modulus.
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Index groups of `eigenvalues` agreeing within the cluster tolerance.
    pub multiplicity_clusters: Vec<Vec<usize>>,
    pub gap: f64,
    pub invertible: bool,
    pub gap_threshold: f64,
    pub restarts: usize,
    #[serde(skip)]
    pub vectors: Vec<Vec<Complex64>>,
}

impl SpectrumReport {
    /// Number of reported eigenvalues with `|λ| ≤ gap_threshold`.
    pub fn kernel_dim(&self) -> usize {
        self.eigenvalues.iter().filter(|l| l.abs() <= self.gap_threshold).count()
    }
}

fn orthonormalize_against(block: Vec<Vec<Complex64>>, basis: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let mut out: Vec<Vec<Complex64>> = Vec::new();
    for mut v in block {
        let start = norm(&v);
        if start == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in basis.iter().chain(out.iter()) {
                let h = dot(q, &v);
                axpy(-h, q, &mut v);
            }
        }
        let nv = norm(&v);
        if nv > 1e-10 * start {
            v.iter_mut().for_each(|x| *x /= nv);
            out.push(v);
        }
    }
    out
}

fn clusters(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some(last) if (values[i] - values[*last.last().unwrap()]).abs() <= tol => last.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// The `k` eigenvalues of smallest modulus with residual certificates.
pub fn low_spectrum(op: &DiracOperator, k: usize, cfg: &EigenConfig) -> Result<SpectrumReport> {
    let len = op.len();
    if k == 0 || k >= len {
        return Err(Error::Config(format!("need 1 <= k < {len}, got k = {k}")));
    }
    let nodes = op.bundle().num_nodes();
    let ns = op.bundle().spinor_dim();
    let sqrt_w: Vec<f64> = (0..len).map(|i| op.weights()[i % nodes].sqrt()).collect();
    let to_phi = |y: &[Complex64]| -> Vec<Complex64> { y.iter().zip(&sqrt_w).map(|(v, s)| v / s).collect() };
    let from_phi = |p: &[Complex64]| -> Vec<Complex64> { p.iter().zip(&sqrt_w).map(|(v, s)| v * s).collect() };
    let apply_l = |y: &[Complex64]| from_phi(&op.apply(&to_phi(y)));
    let inner = SolverConfig {
        tol: cfg.inner_tol,
        max_iter: 300,
        restart: 100,
    };
    let apply_inv = |y: &[Complex64]| -> Result<Vec<Complex64>> {
        let rep = solve_shifted(op, &to_phi(y), cfg.shift, &inner);
        if !rep.converged && rep.residual > 1e3 * cfg.inner_tol {
            return Err(Error::SolveBudget {
                iterations: rep.iterations,
                residual: rep.residual,
            });
        }
        Ok(from_phi(&rep.solution))
    };

    let p = (k + cfg.guard.max(ns)).min(len);
    let dmax = (p * cfg.depth.max(2)).min(len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start: Vec<Vec<Complex64>> = (0..p)
        .map(|_| (0..len).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
        .collect();
    let mut block = orthonormalize_against(start, &[]);
    let mut worst = f64::INFINITY;

    for restart in 0..cfg.max_restarts {
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        let mut images: Vec<Vec<Complex64>> = Vec::new();
        let mut current = block.clone();
        while basis.len() < dmax {
            let room = dmax - basis.len();
            let mut q = orthonormalize_against(current, &basis);
            q.truncate(room);
            if q.is_empty() {
                break;
            }
            let aq: Vec<Vec<Complex64>> = q.par_iter().map(|v| apply_inv(v)).collect::<Result<_>>()?;
            basis.extend(q);
            images.extend(aq.iter().cloned());
            current = aq;
        }
        let d = basis.len();
        let mut h = DMatrix::<Complex64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] = dot(&basis[i], &images[j]);
            }
        }
        let h = (&h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
        order.truncate(p.min(d));

        let ritz: Vec<(f64, Vec<Complex64>)> = order
            .iter()
            .map(|&c| {
                let theta = eig.eigenvalues[c];
                let mut y = vec![ZERO; len];
                for (j, q) in basis.iter().enumerate() {
                    axpy(eig.eigenvectors[(j, c)], q, &mut y);
                }
                let ny = norm(&y);
                y.iter_mut().for_each(|v| *v /= ny);
                (cfg.shift + 1.0 / theta, y)
            })
            .collect();
        let residuals: Vec<f64> = ritz
            .par_iter()
            .map(|(lam, y)| {
                let ly = apply_l(y);
                ly.iter().zip(y).map(|(a, b)| (a - lam * b).norm_sqr()).sum::<f64>().sqrt()
            })
            .collect();

        let mut by_modulus: Vec<usize> = (0..ritz.len()).collect();
        by_modulus.sort_by(|&a, &b| ritz[a].0.abs().total_cmp(&ritz[b].0.abs()));
        let chosen: Vec<usize> = by_modulus.into_iter().take(k).collect();
        worst = chosen.iter().map(|&i| residuals[i]).fold(0.0, f64::max);
        if chosen.len() == k && worst <= cfg.eig_tol {
            let eigenvalues: Vec<f64> = chosen.iter().map(|&i| ritz[i].0).collect();
            let gap = eigenvalues.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
            let tol = cfg.cluster_rel * op.bundle().dirac_scale().max(1.0);
            return Ok(SpectrumReport {
                multiplicity_clusters: clusters(&eigenvalues, tol),
                residuals: chosen.iter().map(|&i| residuals[i]).collect(),
                vectors: chosen.iter().map(|&i| to_phi(&ritz[i].1)).collect(),
                eigenvalues,
                gap,
                invertible: gap > cfg.gap_threshold,
                gap_threshold: cfg.gap_threshold,
                restarts: restart + 1,
            });
        }
        block = ritz.into_iter().map(|(_, y)| y).collect();
    }
    Err(Error::EigenBudget {
        restarts: cfg.max_restarts,
        residual: worst,
    })
}

/// Certified smallest `|λ|` and whether it exceeds `gap_threshold`.
pub fn is_invertible(op: &DiracOperator, gap_threshold: f64) -> Result<(bool, f64)> {
    if !(gap_threshold > 0.0) {
        return Err(Error::Config("gap threshold must be positive".into()));
    }
    let cfg = EigenConfig {
        gap_threshold,
        ..EigenConfig::default()
    };
    let report = low_spectrum(op, op.bundle().spinor_dim(), &cfg)?;
    Ok((report.invertible, report.gap))
}

/// Dense oracles for small operators.
pub mod dense {
    use super::*;

    /// All eigenvalues of the weight-symmetrized dense operator, ascending.
    pub fn spectrum(op: &DiracOperator) -> Result<Vec<f64>> {
        let mat = op.to_dense()?;
        let nodes = op.bundle().num_nodes();
        let len = op.len();
        let s: Vec<f64> = (0..len).map(|i| op.weights()[i % nodes].sqrt()).collect();
        let sym = DMatrix::from_fn(len, len, |i, j| mat[(i, j)] * (s[i] / s[j]));
        let sym = (&sym + sym.adjoint()) * Complex64::new(0.5, 0.0);
        let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        Ok(eig)
    }

    /// LU solve of the dense operator.
    pub fn solve(op: &DiracOperator, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let mat = op.to_dense()?;
        let b = nalgebra::DVector::from_column_slice(rhs);
        let x = mat.lu().solve(&b).ok_or(Error::NotInvertible {
            gap: 0.0,
            threshold: 0.0,
        })?;
        Ok(x.iter().copied().collect())
    }
}
