//! The Dirac operator of a perturbed metric `h`, transported to spinors of
//! the flat background metric `g` through the frame map `b` with
//! `h(bX, bY) = g(X, Y)`.
//!
//! In the global flat frame `e_i = ∂_i` the transported operator reads
//!
//! ```text
//! D φ = Σ_i e_i · ∂_{b e_i} φ + Σ_i e_i · T_i · φ,
//! T_i = b⁻¹ ∇^h_{b e_i} b − ∇^g_{b e_i}   (a g-skew endomorphism)
//! ```
//!
//! with `T_i` acting through the spin lift `½ Σ_{j<k} ⟨T e_j, e_k⟩ e_j e_k`.
//! Writing the first-order part as `Σ_j B_j ∂_j` with `B_j = Σ_i b_ji γ_i`,
//! the operator is symmetric for the weight `w = √det h`. It is discretized in
//! the split form
//!
//! ```text
//! D φ ≈ ½ (B_j ∂_j φ + w⁻¹ ∂_j (w B_j φ)) + R φ,   R = Z − ½ w⁻¹ ∂_j(w B_j)
//! ```
//!
//! where `Z` is the zeroth-order part above and `∂_j` is Fourier
//! differentiation. `R` is Hermitian in the continuum; the discrete operator
//! uses its Hermitian part and records the anti-Hermitian residue. The split
//! form is exactly self-adjoint for the discrete weighted inner product.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::SpectralGrid;
use crate::metric::{christoffel, MetricField};
use crate::torus::SpinorBundle;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest field length for which a dense matrix is materialized.
pub const DENSE_LIMIT: usize = 4096;

/// Pointwise frame comparison between `g = Id` and `h`.
#[derive(Debug, Clone)]
pub struct FrameMap {
    n: usize,
    /// `a = h⁻¹`, defined by `g(X, Y) = h(aX, Y)`.
    pub a_field: Vec<f64>,
    /// `b = h^{-1/2}`, the g-self-adjoint positive solution of `h(bX, bY) = g(X, Y)`.
    pub b_field: Vec<f64>,
}

impl FrameMap {
    pub fn a_at(&self, node: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.a_field[node * nn..(node + 1) * nn]
    }

    pub fn b_at(&self, node: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.b_field[node * nn..(node + 1) * nn]
    }

    /// `max |bᵀ h b − Id|` over all nodes.
    pub fn frame_defect(&self, h: &MetricField) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for node in 0..h.num_nodes() {
            let b = DMatrix::from_row_slice(n, n, self.b_at(node));
            let hm = DMatrix::from_row_slice(n, n, h.at(node));
            let e = b.transpose() * hm * &b - DMatrix::<f64>::identity(n, n);
            worst = worst.max(e.amax());
        }
        worst
    }
}

struct NodeFrame {
    b: DMatrix<f64>,
    b_inv: DMatrix<f64>,
    a: DMatrix<f64>,
    /// `∂_l b`
    db: Vec<DMatrix<f64>>,
    /// `√det h`
    weight: f64,
    /// `∂_l w / w`
    dlog_w: Vec<f64>,
}

fn node_frame(h: &MetricField, node: usize) -> Result<NodeFrame> {
    let n = h.dim();
    let hm = DMatrix::from_row_slice(n, n, h.at(node));
    let eig = SymmetricEigen::new(hm);
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::NotPositive { node, min_eig: min });
    }
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let sq: Vec<f64> = lam.iter().map(|l| l.sqrt()).collect();
    let func = |f: &dyn Fn(usize) -> f64| {
        let d = DMatrix::from_fn(n, n, |i, j| if i == j { f(i) } else { 0.0 });
        q * d * q.transpose()
    };
    let b = func(&|i| 1.0 / sq[i]);
    let b_inv = func(&|i| sq[i]);
    let a = func(&|i| 1.0 / lam[i]);
    // Daleckii-Krein: d(h^{-1/2})[H] = Q (F ∘ QᵀHQ) Qᵀ with the divided
    // differences of λ^{-1/2}, written without cancellation.
    let divided = DMatrix::from_fn(n, n, |i, j| -1.0 / (sq[i] * sq[j] * (sq[i] + sq[j])));
    let mut db = Vec::with_capacity(n);
    let mut dlog_w = Vec::with_capacity(n);
    for l in 0..n {
        let dh = DMatrix::from_row_slice(n, n, h.derivative_at(node, l));
        let rotated = q.transpose() * &dh * q;
        db.push(q * rotated.component_mul(&divided) * q.transpose());
        dlog_w.push(0.5 * (&a * &dh).trace());
    }
    Ok(NodeFrame {
        b,
        b_inv,
        a,
        db,
        weight: sq.iter().product(),
        dlog_w,
    })
}

/// Computes the frame fields `a` and `b` of a metric.
pub fn frame_map(h: &MetricField) -> Result<FrameMap> {
    let n = h.dim();
    let mut a_field = Vec::with_capacity(h.num_nodes() * n * n);
    let mut b_field = Vec::with_capacity(h.num_nodes() * n * n);
    for node in 0..h.num_nodes() {
        let f = node_frame(h, node)?;
        for i in 0..n {
            for j in 0..n {
                a_field.push(f.a[(i, j)]);
                b_field.push(f.b[(i, j)]);
            }
        }
    }
    Ok(FrameMap { n, a_field, b_field })
}

/// Matrix-free transported Dirac operator on a discretized spinor bundle.
///
/// Fields are stored component-major: entry `c * nodes + node`.
#[derive(Debug, Clone)]
pub struct DiracOperator {
    bundle: SpinorBundle,
    spectral: Arc<SpectralGrid>,
    metric: MetricField,
    flat: bool,
    weight: Vec<f64>,
    /// `B_j` at `(node * n + j) * N² + row * N + col`
    coeff: Vec<Complex64>,
    /// Hermitian zeroth-order term `R` per node.
    zeroth: Vec<Complex64>,
    /// Continuum zeroth-order term `Z = R + ½ w⁻¹ ∂_j(w B_j)` per node.
    zeroth_full: Vec<Complex64>,
    /// `iξ̸` per Fourier bin.
    symbol: Vec<Complex64>,
    skew_defect: f64,
    hermitian_defect: f64,
}

fn matvec_acc(mat: &[Complex64], x: &[Complex64], scale: Complex64, out: &mut [Complex64]) {
    let nn = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &mat[r * nn..(r + 1) * nn];
        let mut s = ZERO;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *o += scale * s;
    }
}

fn flatten(m: &DMatrix<Complex64>) -> impl Iterator<Item = Complex64> + '_ {
    let (r, c) = m.shape();
    (0..r).flat_map(move |i| (0..c).map(move |j| m[(i, j)]))
}

/// Assembles the transported Dirac operator of `h`.
pub fn assemble_bg_dirac(bundle: &SpinorBundle, h: &MetricField) -> Result<DiracOperator> {
    h.validate(bundle)?;
    let n = bundle.dim();
    let nodes = bundle.num_nodes();
    let rep = bundle.rep();
    let ns = rep.spinor_dim();
    let gam = christoffel(h)?;
    let spectral = Arc::new(SpectralGrid::new(bundle));

    let mut weight = Vec::with_capacity(nodes);
    let mut coeff = Vec::with_capacity(nodes * n * ns * ns);
    let mut zeroth = Vec::with_capacity(nodes * ns * ns);
    let mut zeroth_full = Vec::with_capacity(nodes * ns * ns);
    let mut skew_defect = 0.0f64;
    let mut hermitian_defect = 0.0f64;

    for node in 0..nodes {
        let f = node_frame(h, node)?;
        weight.push(f.weight);
        let vec_mat = |v: &[f64]| rep.vector_matrix(v).expect("dimension checked");
        let mut div_half = DMatrix::<Complex64>::zeros(ns, ns);
        for j in 0..n {
            let row: Vec<f64> = (0..n).map(|i| f.b[(j, i)]).collect();
            let bj = vec_mat(&row);
            let drow: Vec<f64> = (0..n).map(|i| f.db[j][(j, i)]).collect();
            div_half += (&bj * Complex64::new(f.dlog_w[j], 0.0) + vec_mat(&drow)) * Complex64::new(0.5, 0.0);
            coeff.extend(flatten(&bj));
        }
        let gnode = &gam[node * n * n * n..(node + 1) * n * n * n];
        let mut z = DMatrix::<Complex64>::zeros(ns, ns);
        for i in 0..n {
            // X = b e_i
            let x: Vec<f64> = (0..n).map(|l| f.b[(l, i)]).collect();
            let mut dxb = DMatrix::<f64>::zeros(n, n);
            let mut conn = DMatrix::<f64>::zeros(n, n);
            for l in 0..n {
                dxb += &f.db[l] * x[l];
                for k in 0..n {
                    for jj in 0..n {
                        conn[(k, jj)] += gnode[(k * n + l) * n + jj] * x[l];
                    }
                }
            }
            let t = &f.b_inv * (dxb + conn * &f.b);
            skew_defect = skew_defect.max((&t + t.transpose()).amax());
            let t_rows: Vec<f64> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| t[(r, c)]).collect();
            z += rep.gamma(i) * rep.two_form(&t_rows);
        }
        let r = &z - &div_half;
        let herm = (&r + r.adjoint()) * Complex64::new(0.5, 0.0);
        hermitian_defect = hermitian_defect.max((&r - &herm).iter().map(|v| v.norm()).fold(0.0, f64::max));
        zeroth.extend(flatten(&herm));
        zeroth_full.extend(flatten(&(herm + div_half)));
    }

    let mut symbol = Vec::with_capacity(nodes * ns * ns);
    for bin in 0..nodes {
        let xi: Vec<f64> = (0..n).map(|a| spectral.momentum(a, bin)).collect();
        let s = rep.vector_matrix(&xi)? * Complex64::new(0.0, 1.0);
        symbol.extend(flatten(&s));
    }

    Ok(DiracOperator {
        bundle: bundle.clone(),
        spectral,
        metric: h.clone(),
        flat: h.is_flat(),
        weight,
        coeff,
        zeroth,
        zeroth_full,
        symbol,
        skew_defect,
        hermitian_defect,
    })
}

impl DiracOperator {
    pub fn bundle(&self) -> &SpinorBundle {
        &self.bundle
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn spectral(&self) -> &SpectralGrid {
        &self.spectral
    }

    pub fn len(&self) -> usize {
        self.bundle.field_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    /// `max |T_i + T_iᵀ|` over nodes: skewness of the connection term.
    pub fn skew_defect(&self) -> f64 {
        self.skew_defect
    }

    /// Largest anti-Hermitian residue of the zeroth-order term.
    pub fn hermitian_defect(&self) -> f64 {
        self.hermitian_defect
    }

    fn ns(&self) -> usize {
        self.bundle.spinor_dim()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::Mismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// Applies a per-bin `N×N` multiplier to a field in Fourier space.
    fn fourier_multiply(&self, phi: &[Complex64], mult: impl Fn(usize) -> Vec<Complex64>) -> Vec<Complex64> {
        let nodes = self.bundle.num_nodes();
        let ns = self.ns();
        let mut hat = phi.to_vec();
        for c in 0..ns {
            self.spectral.forward(&mut hat[c * nodes..(c + 1) * nodes]);
        }
        let mut out = vec![ZERO; phi.len()];
        let mut x = vec![ZERO; ns];
        let mut y = vec![ZERO; ns];
        for bin in 0..nodes {
            let m = mult(bin);
            for c in 0..ns {
                x[c] = hat[c * nodes + bin];
            }
            y.iter_mut().for_each(|v| *v = ZERO);
            matvec_acc(&m, &x, Complex64::new(1.0, 0.0), &mut y);
            for c in 0..ns {
                out[c * nodes + bin] = y[c];
            }
        }
        for c in 0..ns {
            self.spectral.inverse(&mut out[c * nodes..(c + 1) * nodes]);
        }
        out
    }

    /// Exact flat Dirac operator `Σ γ_j ∂_j` via Fourier multipliers.
    pub fn background_apply(&self, phi: &[Complex64]) -> Vec<Complex64> {
        let nn = self.ns() * self.ns();
        self.fourier_multiply(phi, |bin| self.symbol[bin * nn..(bin + 1) * nn].to_vec())
    }

    /// Flat resolvent `(D_flat − σ)⁻¹`. On a zero mode with `σ = 0` the
    /// multiplier is the identity, so this is a pseudo-inverse suited for
    /// preconditioning.
    pub fn flat_resolvent(&self, phi: &[Complex64], sigma: f64) -> Vec<Complex64> {
        let ns = self.ns();
        let nn = ns * ns;
        self.fourier_multiply(phi, |bin| {
            let xi2 = self.spectral.momentum_sq(bin);
            let den = xi2 - sigma * sigma;
            if xi2 == 0.0 && sigma == 0.0 {
                let mut id = vec![ZERO; nn];
                for c in 0..ns {
                    id[c * ns + c] = Complex64::new(1.0, 0.0);
                }
                return id;
            }
            // (iξ̸ − σ)⁻¹ = (iξ̸ + σ) / (|ξ|² − σ²)
            let mut m: Vec<Complex64> = self.symbol[bin * nn..(bin + 1) * nn].to_vec();
            for c in 0..ns {
                m[c * ns + c] += sigma;
            }
            m.iter_mut().for_each(|v| *v /= den);
            m
        })
    }

    /// `D φ`.
    pub fn apply(&self, phi: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(phi.len(), self.len());
        if self.flat {
            return self.background_apply(phi);
        }
        self.apply_split(phi)
    }

    /// The split-form discretization, also for flat metrics.
    pub fn apply_split(&self, phi: &[Complex64]) -> Vec<Complex64> {
        let n = self.bundle.dim();
        let ns = self.ns();
        let nn = ns * ns;
        let nodes = self.bundle.num_nodes();
        let sg = &self.spectral;

        let mut hat = phi.to_vec();
        for c in 0..ns {
            sg.forward(&mut hat[c * nodes..(c + 1) * nodes]);
        }
        let mut out = vec![ZERO; phi.len()];
        let mut grad = vec![ZERO; nodes];
        let mut chi = vec![ZERO; phi.len()];
        let mut div = vec![ZERO; phi.len()];
        let mut x = vec![ZERO; ns];
        let mut y = vec![ZERO; ns];
        let half = Complex64::new(0.5, 0.0);
        for j in 0..n {
            // ½ B_j ∂_j φ, one spinor component of ∂_j φ at a time
            for b in 0..ns {
                for bin in 0..nodes {
                    grad[bin] = hat[b * nodes + bin] * Complex64::new(0.0, sg.momentum(j, bin));
                }
                sg.inverse(&mut grad);
                for node in 0..nodes {
                    let m = &self.coeff[(node * n + j) * nn..(node * n + j + 1) * nn];
                    for a in 0..ns {
                        out[a * nodes + node] += half * m[a * ns + b] * grad[node];
                    }
                }
            }
            // χ_j = w B_j φ
            for node in 0..nodes {
                let m = &self.coeff[(node * n + j) * nn..(node * n + j + 1) * nn];
                for c in 0..ns {
                    x[c] = phi[c * nodes + node];
                }
                y.iter_mut().for_each(|v| *v = ZERO);
                matvec_acc(m, &x, Complex64::new(self.weight[node], 0.0), &mut y);
                for c in 0..ns {
                    chi[c * nodes + node] = y[c];
                }
            }
            for c in 0..ns {
                let block = &mut chi[c * nodes..(c + 1) * nodes];
                sg.forward(block);
                for (bin, v) in block.iter().enumerate() {
                    div[c * nodes + bin] += v * Complex64::new(0.0, sg.momentum(j, bin));
                }
            }
        }
        for c in 0..ns {
            sg.inverse(&mut div[c * nodes..(c + 1) * nodes]);
        }
        for node in 0..nodes {
            let inv_w = 0.5 / self.weight[node];
            for c in 0..ns {
                x[c] = phi[c * nodes + node];
            }
            y.iter_mut().for_each(|v| *v = ZERO);
            matvec_acc(&self.zeroth[node * nn..(node + 1) * nn], &x, Complex64::new(1.0, 0.0), &mut y);
            for c in 0..ns {
                out[c * nodes + node] += div[c * nodes + node] * inv_w + y[c];
            }
        }
        out
    }

    /// `(D − D_flat) φ` in the continuum form `Σ (B_j − γ_j) ∂_j φ + Z φ`,
    /// from pointwise values and analytic derivatives of `φ`.
    /// `grad[j]` is `∂_j φ` at the node.
    pub fn perturbation_at(&self, node: usize, value: &[Complex64], grad: &[Vec<Complex64>]) -> Vec<Complex64> {
        let n = self.bundle.dim();
        let ns = self.ns();
        let nn = ns * ns;
        let rep = self.bundle.rep();
        let mut y = vec![ZERO; ns];
        if self.flat {
            return y;
        }
        for (j, gj) in grad.iter().enumerate().take(n) {
            let m = &self.coeff[(node * n + j) * nn..(node * n + j + 1) * nn];
            matvec_acc(m, gj, Complex64::new(1.0, 0.0), &mut y);
            let g = rep.gamma(j);
            for a in 0..ns {
                let mut s = ZERO;
                for b in 0..ns {
                    s += g[(a, b)] * gj[b];
                }
                y[a] -= s;
            }
        }
        matvec_acc(&self.zeroth_full[node * nn..(node + 1) * nn], value, Complex64::new(1.0, 0.0), &mut y);
        y
    }

    /// Discrete `⟨φ, ψ⟩` with weight `dv^h = w dx`.
    pub fn weighted_inner(&self, phi: &[Complex64], psi: &[Complex64]) -> Complex64 {
        let nodes = self.bundle.num_nodes();
        let cell = self.bundle.cell_volume();
        let mut s = ZERO;
        for (i, (a, b)) in phi.iter().zip(psi).enumerate() {
            s += a.conj() * b * self.weight[i % nodes];
        }
        s * cell
    }

    /// Dense matrix of the discrete operator (column `j` is `D e_j`).
    pub fn to_dense(&self) -> Result<DMatrix<Complex64>> {
        let len = self.len();
        if len > DENSE_LIMIT {
            return Err(Error::Config(format!(
                "dense materialization limited to {DENSE_LIMIT} unknowns, operator has {len}"
            )));
        }
        let mut mat = DMatrix::zeros(len, len);
        let mut e = vec![ZERO; len];
        for j in 0..len {
            e[j] = Complex64::new(1.0, 0.0);
            let col = self.apply(&e);
            e[j] = ZERO;
            for (i, v) in col.into_iter().enumerate() {
                mat[(i, j)] = v;
            }
        }
        Ok(mat)
    }

    /// Writes the dense matrix row-major as little-endian `(re, im)` f64 pairs.
    pub fn export_dense<W: Write>(&self, mut w: W) -> Result<()> {
        let mat = self.to_dense()?;
        let mut buf = Vec::with_capacity(mat.len() * 16);
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                buf.extend_from_slice(&mat[(i, j)].re.to_le_bytes());
                buf.extend_from_slice(&mat[(i, j)].im.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

pub fn check_field(op: &DiracOperator, phi: &[Complex64]) -> Result<()> {
    op.check_len(phi.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::standard_family;
    use crate::torus::{make_flat_torus, GridSpec, TorusSpec};

    fn bundle(delta: Vec<u8>, m: usize) -> SpinorBundle {
        let n = delta.len();
        make_flat_torus(&TorusSpec::new(n, delta).unwrap(), GridSpec::new(m).unwrap()).unwrap()
    }

    fn smooth_field(b: &SpinorBundle, seed: f64) -> Vec<Complex64> {
        let nodes = b.num_nodes();
        (0..b.field_len())
            .map(|i| {
                let x = b.coords(i % nodes);
                let c = (i / nodes) as f64 + seed;
                let ph: f64 = x.iter().enumerate().map(|(a, v)| (a as f64 + 1.0) * v.cos() * c).sum();
                Complex64::new((ph + c).sin(), (0.5 * ph).cos()) * b.twist(i % nodes)
            })
            .collect()
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn constant_metric(b: &SpinorBundle, h: Vec<f64>) -> MetricField {
        let n = b.dim();
        MetricField::from_fn(b, -1.0, |_| (h.clone(), vec![0.0; n * n * n])).unwrap()
    }

    #[test]
    fn frame_map_examples() {
        let b = bundle(vec![0, 0], 8);
        let cases = [
            (vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 1.0]),
            (vec![4.0, 0.0, 0.0, 4.0], vec![0.5, 0.0, 0.0, 0.5]),
            (vec![4.0, 0.0, 0.0, 1.0], vec![0.5, 0.0, 0.0, 1.0]),
        ];
        for (h, expect) in cases {
            let f = frame_map(&constant_metric(&b, h.clone())).unwrap();
            for node in [0, 17, 63] {
                for (x, y) in f.b_at(node).iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-15);
                }
                let a = f.a_at(node);
                assert!((a[0] - 1.0 / h[0]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn frame_defect_of_standard_family() {
        let b = bundle(vec![0, 0, 0], 8);
        let h = standard_family(&b, 0.5, 3).unwrap().at(&b, 0.9).unwrap();
        assert!(frame_map(&h).unwrap().frame_defect(&h) < 1e-12);
    }

    #[test]
    fn split_form_reproduces_flat_operator() {
        for delta in [vec![0, 1], vec![1, 1, 0]] {
            let b = bundle(delta, 8);
            let op = assemble_bg_dirac(&b, &MetricField::flat(&b)).unwrap();
            let phi = smooth_field(&b, 0.3);
            assert!(max_diff(&op.apply_split(&phi), &op.background_apply(&phi)) < 1e-12);
        }
    }

    #[test]
    fn constant_rescaling_halves_the_operator() {
        let b = bundle(vec![1, 0, 1], 8);
        let mut h = vec![0.0; 9];
        h[0] = 4.0;
        h[4] = 4.0;
        h[8] = 4.0;
        let op = assemble_bg_dirac(&b, &constant_metric(&b, h)).unwrap();
        let phi = smooth_field(&b, 1.1);
        let half: Vec<Complex64> = op.background_apply(&phi).iter().map(|v| v * 0.5).collect();
        assert!(max_diff(&op.apply(&phi), &half) < 1e-12);
    }

    #[test]
    fn connection_terms_are_skew_and_hermitian() {
        for n in [2, 3, 4] {
            let b = bundle(vec![0; n], 8);
            let h = standard_family(&b, 0.5, 11).unwrap().at(&b, 1.0).unwrap();
            let op = assemble_bg_dirac(&b, &h).unwrap();
            assert!(op.skew_defect() < 1e-12, "n={n}: {}", op.skew_defect());
            assert!(op.hermitian_defect() < 1e-12, "n={n}: {}", op.hermitian_defect());
        }
    }

    #[test]
    fn weighted_symmetry() {
        let b = bundle(vec![0, 1, 1], 8);
        let h = standard_family(&b, 0.5, 2).unwrap().at(&b, 0.7).unwrap();
        let op = assemble_bg_dirac(&b, &h).unwrap();
        let phi = smooth_field(&b, 0.2);
        let psi = smooth_field(&b, 2.7);
        let l = op.weighted_inner(&psi, &op.apply(&phi));
        let r = op.weighted_inner(&op.apply(&psi), &phi);
        assert!((l - r).norm() < 1e-11 * l.norm().max(1.0), "{l} vs {r}");
    }

    #[test]
    fn perturbation_vanishes_on_protected_ball() {
        let b = bundle(vec![0, 0, 0], 12);
        let h = standard_family(&b, 0.5, 5).unwrap().at(&b, 1.0).unwrap();
        let op = assemble_bg_dirac(&b, &h).unwrap();
        let ns = b.spinor_dim();
        let value = vec![Complex64::new(1.0, -2.0); ns];
        let grad = vec![vec![Complex64::new(0.5, 3.0); ns]; 3];
        let mut inside = 0;
        for node in 0..b.num_nodes() {
            if b.distance_to_base(node) < h.flat_radius() {
                inside += 1;
                assert!(op.perturbation_at(node, &value, &grad).iter().all(|v| *v == ZERO));
            }
        }
        assert!(inside > 1);
    }

    #[test]
    fn perturbation_is_linear_in_t() {
        let b = bundle(vec![0, 0, 0], 8);
        let fam = standard_family(&b, 0.5, 1).unwrap();
        let phi = smooth_field(&b, 0.9);
        let flat = assemble_bg_dirac(&b, &MetricField::flat(&b)).unwrap().apply(&phi);
        let size = |t: f64| {
            let op = assemble_bg_dirac(&b, &fam.at(&b, t).unwrap()).unwrap();
            let d: Vec<Complex64> = op.apply(&phi).iter().zip(&flat).map(|(a, c)| a - c).collect();
            crate::spectral::norm(&d)
        };
        let (s1, s2) = (size(0.01), size(0.02));
        assert!(((s2 / s1) - 2.0).abs() < 0.02, "{}", s2 / s1);
    }

    #[test]
    fn dense_export_layout() {
        let b = bundle(vec![1, 0], 8);
        let op = assemble_bg_dirac(&b, &MetricField::flat(&b)).unwrap();
        let mat = op.to_dense().unwrap();
        let mut buf = Vec::new();
        op.export_dense(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 * op.len() * op.len());
        let at = |k: usize| f64::from_le_bytes(buf[8 * k..8 * k + 8].try_into().unwrap());
        let (i, j) = (5, 77);
        let k = 2 * (i * op.len() + j);
        assert_eq!(at(k), mat[(i, j)].re);
        assert_eq!(at(k + 1), mat[(i, j)].im);
    }

    #[test]
    fn dense_limit_enforced() {
        let b = bundle(vec![0, 0, 0], 16);
        let op = assemble_bg_dirac(&b, &MetricField::flat(&b)).unwrap();
        assert!(matches!(op.to_dense(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_indefinite_metric() {
        let b = bundle(vec![0, 0], 8);
        let bad = MetricField::from_fn(&b, -1.0, |_| (vec![1.0, 2.0, 2.0, 1.0], vec![0.0; 8]));
        assert!(matches!(bad, Err(Error::NotPositive { .. })));
    }
}
