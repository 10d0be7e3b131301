//! Regular part of the Green's function at `p` and the mass endomorphism.
//!
//! The Green's function of `D = D^h_g` is split as `G ψ = η S ψ + v`, with
//! `S(x) = −x·/(ω_{n−1}|x|^n)` the flat singular kernel and `η` a cutoff. The
//! regular part is assembled from the flat torus Green's function `G₀`:
//!
//! ```text
//! v = (G₀ − η S) ψ + z,      D z = π ψ − (D − D₀)(G₀ ψ)
//! ```
//!
//! where `π` is the projection onto flat harmonic spinors (present only for
//! the trivial spin structure). `G₀ − η S` is smooth and known in closed form
//! through an Ewald split; the right-hand side for `z` is smooth and supported
//! where the metric differs from the flat one, so neither the delta source nor
//! the `|x|^{1−n}` singularity is ever sampled. Then `α ψ = v(p)`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::bg::DiracOperator;
use crate::clifford::CliffordRep;
use crate::error::{Error, Result};
use crate::spectral::{self, SolverConfig};
use crate::torus::{sphere_volume, CutoffProfile, SpinorBundle};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Gaussian width of the Ewald split.
pub const EWALD_SIGMA: f64 = 0.4;
/// Smallest fine grid used for the smooth Fourier part.
const EWALD_MIN_POINTS: usize = 48;

/// `S(x) = −x·/(ω_{n−1}|x|^n)`.
#[derive(Debug, Clone)]
pub struct SingularKernel {
    n: usize,
    omega: f64,
}

impl SingularKernel {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            omega: sphere_volume(n),
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// `S(x)` as an `N×N` matrix; `x ≠ 0`.
    pub fn evaluate(&self, rep: &CliffordRep, x: &[f64]) -> Result<DMatrix<Complex64>> {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return Err(Error::Config("singular kernel evaluated at p".into()));
        }
        let s = -1.0 / (self.omega * r.powi(self.n as i32));
        let v: Vec<f64> = x.iter().map(|c| c * s).collect();
        rep.vector_matrix(&v)
    }
}

/// `∂_j H` and `∂_j ∂_k H` of the flat torus potential `−ΔH = δ_p − π`,
/// sampled at every grid node, so that `G₀ = Σ γ_j ∂_j H`.
#[derive(Debug, Clone)]
pub struct FlatGreen {
    n: usize,
    /// `grad[node * n + j]`
    grad: Vec<Complex64>,
    /// `hess[(node * n + j) * n + k]`
    hess: Vec<Complex64>,
    /// Same as `grad` but with `η ∂E` removed near `p`, i.e. `G₀ − η S`.
    reg_grad: Vec<Complex64>,
}

struct NearTerms {
    grad: Vec<f64>,
    hess: Vec<f64>,
    /// `Σ_ℓ (−1)^{δ·ℓ} (Q − η) ∂_j E`
    reg: Vec<f64>,
}

/// Short-range part `Σ_ℓ (−1)^{δ·ℓ} K(x − 2πℓ)` with `∂K = Q(r) ∂E`.
fn near_terms(n: usize, delta: &[u8], x: &[f64], eta: &CutoffProfile, sigma: f64) -> NearTerms {
    let omega = sphere_volume(n);
    let s2 = sigma * sigma;
    let a = n as f64 / 2.0;
    let density = (2.0 * std::f64::consts::PI * s2).powf(-a);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut reg = vec![0.0; n];
    let images = 3usize.pow(n as u32);
    for code in 0..images {
        let mut c = code;
        let mut y = vec![0.0; n];
        let mut parity = 0u32;
        for (a_idx, yv) in y.iter_mut().enumerate() {
            let l = (c % 3) as i64 - 1;
            c /= 3;
            parity += (delta[a_idx] as i64 * l).unsigned_abs() as u32;
            *yv = x[a_idx] - 2.0 * std::f64::consts::PI * l as f64;
        }
        let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
        let r2: f64 = y.iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        if r == 0.0 {
            // G₀ − S is odd and smooth: the p term vanishes at p
            continue;
        }
        let u = r2 / (2.0 * s2);
        let q = gamma_ur(a, u);
        if q == 0.0 && eta.value(r) == 0.0 {
            continue;
        }
        let rn = r.powi(n as i32);
        let dq = -density * (-u).exp() * omega * r.powi(n as i32 - 1);
        let de: Vec<f64> = y.iter().map(|v| -v / (omega * rn)).collect();
        for j in 0..n {
            grad[j] += sign * q * de[j];
            for k in 0..n {
                let dd = if j == k { 1.0 } else { 0.0 };
                let dde = -(dd - n as f64 * y[j] * y[k] / r2) / (omega * rn);
                hess[j * n + k] += sign * (dq * y[k] / r * de[j] + q * dde);
            }
        }
        // only the image nearest to p can meet the cutoff support
        let eta_r = eta.value(r);
        let w = if eta_r > 0.0 {
            // Q − η = (1 − η) − P(n/2, u), without cancellation near p
            (1.0 - eta_r) - gamma_lr(a, u)
        } else {
            q
        };
        for j in 0..n {
            reg[j] += sign * w * de[j];
        }
    }
    NearTerms { grad, hess, reg }
}

/// Builds the flat Green's function data on the bundle's grid.
pub fn flat_green(bundle: &SpinorBundle, eta: &CutoffProfile) -> Result<FlatGreen> {
    flat_green_split(bundle, eta, EWALD_SIGMA)
}

fn flat_green_split(bundle: &SpinorBundle, eta: &CutoffProfile, sigma: f64) -> Result<FlatGreen> {
    let n = bundle.dim();
    let m = bundle.points();
    let nodes = bundle.num_nodes();
    let delta = &bundle.torus().delta;
    let fine = m * EWALD_MIN_POINTS.div_ceil(m);
    let ratio = fine / m;
    let fine_len = fine.pow(n as u32);
    let volume = (2.0 * std::f64::consts::PI).powi(n as i32);
    let s2 = sigma * sigma;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(fine);
    let momentum = |idx: usize, axis: usize| -> f64 {
        let k = if 2 * idx >= fine { idx as f64 - fine as f64 } else { idx as f64 };
        k + 0.5 * f64::from(delta[axis])
    };
    // fine-grid multi-index of a coarse node, axis 0 fastest
    let coarse_to_fine = |node: usize| -> usize {
        let mut rem = node;
        let mut idx = 0;
        let mut stride = 1;
        for _ in 0..n {
            idx += (rem % m) * ratio * stride;
            rem /= m;
            stride *= fine;
        }
        idx
    };
    let fine_index = |flat: usize| -> Vec<usize> {
        let mut rem = flat;
        (0..n)
            .map(|_| {
                let i = rem % fine;
                rem /= fine;
                i
            })
            .collect()
    };
    let base: Vec<f64> = (0..fine_len)
        .map(|b| {
            let xi: Vec<f64> = fine_index(b).iter().enumerate().map(|(a, &i)| momentum(i, a)).collect();
            let q: f64 = xi.iter().map(|v| v * v).sum();
            if q == 0.0 {
                0.0
            } else {
                (-0.5 * s2 * q).exp() / (q * volume)
            }
        })
        .collect();
    let evaluate = |mult: &dyn Fn(&[usize]) -> Complex64| -> Vec<Complex64> {
        let mut data: Vec<Complex64> = (0..fine_len).map(|b| base[b] * mult(&fine_index(b))).collect();
        inverse_nd(&mut data, fine, n, &fft);
        (0..nodes)
            .map(|node| data[coarse_to_fine(node)] * bundle.twist(node))
            .collect()
    };

    let mut grad = vec![ZERO; nodes * n];
    let mut hess = vec![ZERO; nodes * n * n];
    for j in 0..n {
        let g = evaluate(&|idx| Complex64::new(0.0, momentum(idx[j], j)));
        for node in 0..nodes {
            grad[node * n + j] = g[node];
        }
        for k in j..n {
            let hk = evaluate(&|idx| Complex64::new(-momentum(idx[j], j) * momentum(idx[k], k), 0.0));
            for node in 0..nodes {
                hess[(node * n + j) * n + k] = hk[node];
                hess[(node * n + k) * n + j] = hk[node];
            }
        }
    }
    let mut reg_grad = grad.clone();
    for node in 0..nodes {
        let x = bundle.coords(node);
        let near = near_terms(n, delta, &x, eta, sigma);
        for j in 0..n {
            grad[node * n + j] += near.grad[j];
            reg_grad[node * n + j] += near.reg[j];
            for k in 0..n {
                hess[(node * n + j) * n + k] += near.hess[j * n + k];
            }
        }
    }
    Ok(FlatGreen {
        n,
        grad,
        hess,
        reg_grad,
    })
}

fn inverse_nd(data: &mut [Complex64], m: usize, n: usize, fft: &std::sync::Arc<dyn rustfft::Fft<f64>>) {
    let len = data.len();
    let mut scratch = vec![ZERO; fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    let mut line = vec![ZERO; m];
    let mut stride = m;
    for _ in 1..n {
        let block = stride * m;
        for base in (0..len).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[start + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    data[start + i * stride] = *v;
                }
            }
        }
        stride = block;
    }
}

impl FlatGreen {
    fn contract(rep: &CliffordRep, coeffs: &[Complex64], psi: &[Complex64]) -> Vec<Complex64> {
        let ns = psi.len();
        let mut out = vec![ZERO; ns];
        for (j, c) in coeffs.iter().enumerate() {
            let g = rep.gamma(j);
            for a in 0..ns {
                for b in 0..ns {
                    out[a] += c * g[(a, b)] * psi[b];
                }
            }
        }
        out
    }

    /// `G₀(x_node) ψ`; not defined at `p`.
    pub fn apply(&self, rep: &CliffordRep, node: usize, psi: &[Complex64]) -> Vec<Complex64> {
        Self::contract(rep, &self.grad[node * self.n..(node + 1) * self.n], psi)
    }

    /// `(G₀ − η S)(x_node) ψ`, smooth across `p`.
    pub fn apply_regular(&self, rep: &CliffordRep, node: usize, psi: &[Complex64]) -> Vec<Complex64> {
        Self::contract(rep, &self.reg_grad[node * self.n..(node + 1) * self.n], psi)
    }

    /// `∂_k (G₀ ψ)` at a node.
    pub fn apply_derivative(&self, rep: &CliffordRep, node: usize, k: usize, psi: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let coeffs: Vec<Complex64> = (0..n).map(|j| self.hess[(node * n + j) * n + k]).collect();
        Self::contract(rep, &coeffs, psi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MassOptions {
    pub solver: SolverConfig,
    /// Certify invertibility first; `None` skips the eigen check.
    pub gap_threshold: Option<f64>,
}

impl Default for MassOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            gap_threshold: Some(spectral::EigenConfig::default().gap_threshold),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GreenData {
    pub psi0: Vec<Complex64>,
    /// `v = (G₀ − ηS) ψ₀ + z`, component-major like every field.
    pub v_field: Vec<Complex64>,
    pub rhs_residual: f64,
    pub eta: CutoffProfile,
    /// Fraction of the spectral energy of `v` in the upper half of the band.
    pub smoothness: f64,
    /// Largest deviation of `v(p)` from the mean of the trigonometric
    /// interpolant at `p ± h/2 e_a`.
    pub interpolation_check: f64,
}

impl GreenData {
    /// `v(p)`, read at the base node.
    pub fn value_at_p(&self, nodes: usize) -> Vec<Complex64> {
        let ns = self.psi0.len();
        (0..ns).map(|c| self.v_field[c * nodes]).collect()
    }
}

fn check_invertible(op: &DiracOperator, opts: &MassOptions) -> Result<()> {
    if op.is_flat() && op.bundle().has_zero_mode() {
        return Err(Error::NotInvertible {
            gap: 0.0,
            threshold: opts.gap_threshold.unwrap_or(0.0),
        });
    }
    if let Some(threshold) = opts.gap_threshold {
        let (ok, gap) = spectral::is_invertible(op, threshold)?;
        if !ok {
            return Err(Error::NotInvertible { gap, threshold });
        }
    }
    Ok(())
}

fn green_with(
    op: &DiracOperator,
    g0: &FlatGreen,
    psi0: &[Complex64],
    eta: &CutoffProfile,
    solver: &SolverConfig,
) -> Result<GreenData> {
    let bundle = op.bundle();
    let rep = bundle.rep();
    let n = bundle.dim();
    let ns = bundle.spinor_dim();
    let nodes = bundle.num_nodes();
    if psi0.len() != ns {
        return Err(Error::Mismatch {
            expected: ns,
            got: psi0.len(),
        });
    }
    if psi0.iter().all(|v| *v == ZERO) {
        return Err(Error::Config("source spinor must be nonzero".into()));
    }
    let harmonic = if bundle.has_zero_mode() {
        1.0 / (2.0 * std::f64::consts::PI).powi(n as i32)
    } else {
        0.0
    };
    let mut rhs = vec![ZERO; op.len()];
    for node in 0..nodes {
        let local = if node == 0 {
            vec![ZERO; ns]
        } else {
            let value = g0.apply(rep, node, psi0);
            let grad: Vec<Vec<Complex64>> = (0..n).map(|k| g0.apply_derivative(rep, node, k, psi0)).collect();
            op.perturbation_at(node, &value, &grad)
        };
        for c in 0..ns {
            rhs[c * nodes + node] = -local[c];
        }
    }
    if harmonic != 0.0 {
        // π ψ₀ is the constant section (trivial spin structure, no twist)
        for node in 0..nodes {
            for c in 0..ns {
                rhs[c * nodes + node] += harmonic * psi0[c];
            }
        }
    }
    let (z, residual) = if rhs.iter().all(|v| *v == ZERO) {
        (vec![ZERO; op.len()], 0.0)
    } else {
        let rep_solve = spectral::solve_shifted(op, &rhs, 0.0, solver);
        if !rep_solve.converged {
            return Err(Error::SolveBudget {
                iterations: rep_solve.iterations,
                residual: rep_solve.residual,
            });
        }
        (rep_solve.solution, rep_solve.residual)
    };
    let mut v = z;
    for node in 0..nodes {
        let reg = g0.apply_regular(rep, node, psi0);
        for c in 0..ns {
            v[c * nodes + node] += reg[c];
        }
    }
    let smoothness = spectral_tail(op, &v);
    let interpolation_check = midpoint_check(op, &v);
    Ok(GreenData {
        psi0: psi0.to_vec(),
        v_field: v,
        rhs_residual: residual,
        eta: *eta,
        smoothness,
        interpolation_check,
    })
}

fn spectral_tail(op: &DiracOperator, v: &[Complex64]) -> f64 {
    let bundle = op.bundle();
    let nodes = bundle.num_nodes();
    let m = bundle.points() as i64;
    let sg = op.spectral();
    let (mut high, mut total) = (0.0, 0.0);
    for c in 0..bundle.spinor_dim() {
        let mut buf = v[c * nodes..(c + 1) * nodes].to_vec();
        sg.forward(&mut buf);
        for (bin, val) in buf.iter().enumerate() {
            let e = val.norm_sqr();
            total += e;
            let top = bundle
                .multi_index(bin)
                .into_iter()
                .map(|i| {
                    let k = i as i64;
                    if 2 * k >= m { m - k } else { k }
                })
                .max()
                .unwrap_or(0);
            if 4 * top >= m {
                high += e;
            }
        }
    }
    if total == 0.0 { 0.0 } else { high / total }
}

fn midpoint_check(op: &DiracOperator, v: &[Complex64]) -> f64 {
    let bundle = op.bundle();
    let n = bundle.dim();
    let nodes = bundle.num_nodes();
    let sg = op.spectral();
    let h = bundle.grid().spacing();
    let mut worst = 0.0f64;
    for c in 0..bundle.spinor_dim() {
        let mut hat = v[c * nodes..(c + 1) * nodes].to_vec();
        sg.forward(&mut hat);
        let at_p = v[c * nodes];
        for a in 0..n {
            let mut mean = ZERO;
            for s in [-0.5, 0.5] {
                let mut acc = ZERO;
                for (bin, coef) in hat.iter().enumerate() {
                    acc += coef * Complex64::from_polar(1.0, sg.momentum(a, bin) * s * h);
                }
                mean += acc / (nodes as f64) * 0.5;
            }
            worst = worst.max((mean - at_p).norm());
        }
    }
    worst
}

/// Regular part of the Green's function for one source spinor.
pub fn green_regular_part(
    op: &DiracOperator,
    psi0: &[Complex64],
    eta: &CutoffProfile,
    opts: &MassOptions,
) -> Result<GreenData> {
    eta.validate(op.metric().flat_radius())?;
    check_invertible(op, opts)?;
    let g0 = flat_green(op.bundle(), eta)?;
    green_with(op, &g0, psi0, eta, &opts.solver)
}

#[derive(Debug, Clone)]
pub struct MassEndomorphism {
    pub alpha: DMatrix<Complex64>,
    /// `‖α − α*‖₂`
    pub hermitian_deviation: f64,
    pub per_column_residuals: Vec<f64>,
    pub n: usize,
    pub delta: Vec<u8>,
    pub points_per_axis: usize,
}

/// JSON form of [`MassEndomorphism`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassRecord {
    pub n: usize,
    pub delta: Vec<u8>,
    pub grid: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub family: Option<crate::metric::FamilyDocument>,
    pub alpha_re: Vec<Vec<f64>>,
    pub alpha_im: Vec<Vec<f64>>,
    pub hermitian_deviation: f64,
    pub residuals: Vec<f64>,
}

impl MassEndomorphism {
    pub fn record(&self, family: Option<crate::metric::FamilyDocument>) -> MassRecord {
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..self.alpha.nrows())
                .map(|i| (0..self.alpha.ncols()).map(|j| f(&self.alpha[(i, j)])).collect())
                .collect()
        };
        MassRecord {
            n: self.n,
            delta: self.delta.clone(),
            grid: self.points_per_axis,
            family,
            alpha_re: rows(|c| c.re),
            alpha_im: rows(|c| c.im),
            hermitian_deviation: self.hermitian_deviation,
            residuals: self.per_column_residuals.clone(),
        }
    }

    /// Operator norm of `α`.
    pub fn norm(&self) -> f64 {
        operator_norm(&self.alpha)
    }
}

fn operator_norm(a: &DMatrix<Complex64>) -> f64 {
    a.clone().svd(false, false).singular_values.max()
}

/// `α` from the `N` basis source spinors.
pub fn mass_endomorphism(op: &DiracOperator, eta: &CutoffProfile, opts: &MassOptions) -> Result<MassEndomorphism> {
    eta.validate(op.metric().flat_radius())?;
    check_invertible(op, opts)?;
    let bundle = op.bundle();
    let ns = bundle.spinor_dim();
    let nodes = bundle.num_nodes();
    let g0 = flat_green(bundle, eta)?;
    let columns: Vec<GreenData> = (0..ns)
        .into_par_iter()
        .map(|c| {
            let mut psi = vec![ZERO; ns];
            psi[c] = Complex64::new(1.0, 0.0);
            green_with(op, &g0, &psi, eta, &opts.solver)
        })
        .collect::<Result<_>>()?;
    let mut alpha = DMatrix::zeros(ns, ns);
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.value_at_p(nodes).into_iter().enumerate() {
            alpha[(i, j)] = v;
        }
    }
    let hermitian_deviation = operator_norm(&(&alpha - alpha.adjoint()));
    Ok(MassEndomorphism {
        hermitian_deviation,
        per_column_residuals: columns.iter().map(|c| c.rhs_residual).collect(),
        alpha,
        n: bundle.dim(),
        delta: bundle.torus().delta.clone(),
        points_per_axis: bundle.points(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSpectrum {
    /// Eigenvalues of `½(α + α*)`, sorted by decreasing modulus.
    pub eigenvalues: Vec<f64>,
    pub norm: f64,
}

pub fn mass_spectrum(alpha: &DMatrix<Complex64>) -> Result<MassSpectrum> {
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("mass endomorphism is not finite".into()));
    }
    let herm = (alpha + alpha.adjoint()) * Complex64::new(0.5, 0.0);
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    Ok(MassSpectrum {
        eigenvalues,
        norm: operator_norm(alpha),
    })
}

/// `‖α_h + α_{P*h}‖` for the inversion `P: x ↦ −x`. Since
/// `P D_h P = −D_{P*h}`, the two masses are exact negatives of each other,
/// and an inversion-invariant metric has `α = 0`.
pub fn inversion_discrepancy(
    bundle: &SpinorBundle,
    h: &crate::metric::MetricField,
    eta: &CutoffProfile,
    opts: &MassOptions,
) -> Result<f64> {
    let op = crate::bg::assemble_bg_dirac(bundle, h)?;
    let flipped = crate::bg::assemble_bg_dirac(bundle, &h.inverted(bundle))?;
    let a = mass_endomorphism(&op, eta, opts)?;
    let b = mass_endomorphism(&flipped, eta, opts)?;
    Ok(operator_norm(&(a.alpha + b.alpha)))
}
