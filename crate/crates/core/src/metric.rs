//! Grid-sampled metrics on the torus, the seeded bump families that perturb
//! the flat metric away from `p`, and their Levi-Civita connection.
//!
//! Every metric carries analytic first derivatives. Metrics equal the flat
//! metric exactly (bitwise) on the protected ball `U = B(p, r_U)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{CutoffProfile, GridSpec, SpinorBundle, TorusSpec, FLAT_RADIUS};

/// Default support annulus of the standard bump perturbation.
pub const BUMP_INNER: f64 = 0.8;
pub const BUMP_OUTER: f64 = 2.2;
const BUMP_MODES: usize = 3;
const BUMP_WAVE: i32 = 2;
/// `β(s) = (1 − s²)^4`, C³ at the annulus edges.
const BUMP_POWER: i32 = 4;
/// Default family amplitude.
pub const DEFAULT_AMPLITUDE: f64 = 0.95;
/// Sample count for the sup-norm normalization of `P`.
const NORM_SAMPLES: usize = 4096;

/// Symmetric positive-definite 2-tensor sampled on grid nodes, with
/// analytic first derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    n: usize,
    nodes: usize,
    /// `h_ij` at `(node * n + i) * n + j`.
    values: Vec<f64>,
    /// `∂_k h_ij` at `((node * n + k) * n + i) * n + j`.
    derivs: Vec<f64>,
    flat_radius: f64,
}

impl MetricField {
    pub fn flat(bundle: &SpinorBundle) -> Self {
        let n = bundle.dim();
        let nodes = bundle.num_nodes();
        let mut values = vec![0.0; nodes * n * n];
        for node in 0..nodes {
            for i in 0..n {
                values[(node * n + i) * n + i] = 1.0;
            }
        }
        Self {
            n,
            nodes,
            values,
            derivs: vec![0.0; nodes * n * n * n],
            flat_radius: FLAT_RADIUS,
        }
    }

    /// Samples a closed-form metric. `f(d)` receives the minimal-image
    /// displacement from `p` and returns `(h, ∂h)` in the layouts above.
    pub fn from_fn<F>(bundle: &SpinorBundle, flat_radius: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
    {
        let n = bundle.dim();
        let nodes = bundle.num_nodes();
        let mut values = Vec::with_capacity(nodes * n * n);
        let mut derivs = Vec::with_capacity(nodes * n * n * n);
        for node in 0..nodes {
            let (h, dh) = f(&bundle.displacement(node));
            debug_assert_eq!(h.len(), n * n);
            debug_assert_eq!(dh.len(), n * n * n);
            values.extend_from_slice(&h);
            derivs.extend_from_slice(&dh);
        }
        let field = Self {
            n,
            nodes,
            values,
            derivs,
            flat_radius,
        };
        field.validate(bundle)?;
        Ok(field)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    pub fn flat_radius(&self) -> f64 {
        self.flat_radius
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.values[node * nn..(node + 1) * nn]
    }

    /// `∂_k h` at a node, row-major `n×n`.
    pub fn derivative_at(&self, node: usize, k: usize) -> &[f64] {
        let nn = self.n * self.n;
        let start = (node * self.n + k) * nn;
        &self.derivs[start..start + nn]
    }

    pub fn is_identity_at(&self, node: usize) -> bool {
        let n = self.n;
        self.at(node)
            .iter()
            .enumerate()
            .all(|(idx, &v)| v == if idx / n == idx % n { 1.0 } else { 0.0 })
    }

    pub fn is_flat(&self) -> bool {
        (0..self.nodes).all(|node| self.is_identity_at(node)) && self.derivs.iter().all(|&v| v == 0.0)
    }

    pub fn min_eigenvalue_at(&self, node: usize) -> f64 {
        let h = DMatrix::from_row_slice(self.n, self.n, self.at(node));
        SymmetricEigen::new(h).eigenvalues.min()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.nodes)
            .map(|node| self.min_eigenvalue_at(node))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks symmetry, positivity and `h = Id` on the protected ball.
    pub fn validate(&self, bundle: &SpinorBundle) -> Result<()> {
        let n = self.n;
        if bundle.dim() != n || bundle.num_nodes() != self.nodes {
            return Err(Error::Mismatch {
                expected: bundle.num_nodes(),
                got: self.nodes,
            });
        }
        for node in 0..self.nodes {
            let h = self.at(node);
            for i in 0..n {
                for j in 0..i {
                    if (h[i * n + j] - h[j * n + i]).abs() > 1e-14 * (1.0 + h[i * n + j].abs()) {
                        return Err(Error::Config(format!("metric not symmetric at node {node}")));
                    }
                }
            }
            if bundle.distance_to_base(node) <= self.flat_radius && !self.is_identity_at(node) {
                return Err(Error::LeavesFlatRegion(node));
            }
            let min_eig = self.min_eigenvalue_at(node);
            if !(min_eig > 0.0) {
                return Err(Error::NotPositive { node, min_eig });
            }
        }
        Ok(())
    }

    /// Pullback under the inversion `x ↦ -x`: `h'(x) = h(-x)`, `∂h'(x) = -(∂h)(-x)`.
    pub fn inverted(&self, bundle: &SpinorBundle) -> Self {
        let n = self.n;
        let nn = n * n;
        let mut values = vec![0.0; self.values.len()];
        let mut derivs = vec![0.0; self.derivs.len()];
        for node in 0..self.nodes {
            let src = bundle.antipodal_node(node);
            values[node * nn..(node + 1) * nn].copy_from_slice(self.at(src));
            for k in 0..n {
                let start = (node * n + k) * nn;
                for (dst, s) in derivs[start..start + nn].iter_mut().zip(self.derivative_at(src, k)) {
                    *dst = -s;
                }
            }
        }
        Self {
            values,
            derivs,
            ..self.clone()
        }
    }
}

/// Levi-Civita connection `Γ^k_{ij} = ½ h^{kl}(∂_i h_jl + ∂_j h_il − ∂_l h_ij)`
/// at every node, stored at `((node * n + k) * n + i) * n + j`.
pub fn christoffel(h: &MetricField) -> Result<Vec<f64>> {
    let n = h.dim();
    let mut out = vec![0.0; h.num_nodes() * n * n * n];
    for node in 0..h.num_nodes() {
        let hm = DMatrix::from_row_slice(n, n, h.at(node));
        let hinv = hm.try_inverse().ok_or(Error::SingularMetric(node))?;
        let d = |k: usize, i: usize, j: usize| h.derivative_at(node, k)[i * n + j];
        // lowered symbols Γ_{l,ij}
        let mut lower = vec![0.0; n * n * n];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    lower[(l * n + i) * n + j] = 0.5 * (d(i, j, l) + d(j, i, l) - d(l, i, j));
                }
            }
        }
        let block = &mut out[node * n * n * n..(node + 1) * n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    block[(k * n + i) * n + j] = (0..n).map(|l| hinv[(k, l)] * lower[(l * n + i) * n + j]).sum();
                }
            }
        }
    }
    Ok(out)
}

/// A symmetric-matrix-valued bump `B(x) = amplitude · β(|x|) · P(x)`:
/// `β` is a C³ radial bump supported in the annulus `[r_inner, r_outer]`
/// and `P` a trace-free seeded trigonometric polynomial normalized so that the largest
/// `‖P(x)‖₂` over a fixed seeded sample of the torus is 1. Positivity of
/// `Id + t B` is then checked on the grid, not assumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpShape {
    pub seed: u64,
    pub amplitude: f64,
    pub r_inner: f64,
    pub r_outer: f64,
}

#[derive(Debug, Clone)]
struct Mode {
    wave: Vec<f64>,
    coeff: f64,
    phase: f64,
}

/// A sampled-ready closed form of a bump: the radial profile plus the
/// Fourier modes of every matrix entry.
#[derive(Debug, Clone)]
pub struct BumpField {
    n: usize,
    shape: BumpShape,
    /// modes of entry `(i, j)`, `i <= j`, at `i * n + j`
    modes: Vec<Vec<Mode>>,
    scale: f64,
}

impl BumpShape {
    pub fn standard(seed: u64, amplitude: f64) -> Self {
        Self {
            seed,
            amplitude,
            r_inner: BUMP_INNER,
            r_outer: BUMP_OUTER,
        }
    }

    pub fn build(&self, n: usize) -> Result<BumpField> {
        if !(0.0 < self.r_inner && self.r_inner < self.r_outer && self.r_outer < PI) {
            return Err(Error::Config(format!(
                "bump annulus [{}, {}] must satisfy 0 < inner < outer < π",
                self.r_inner, self.r_outer
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::Config("bump amplitude must be finite".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut modes = vec![Vec::new(); n * n];
        for i in 0..n {
            for j in i..n {
                modes[i * n + j] = (0..BUMP_MODES)
                    .map(|_| Mode {
                        wave: (0..n).map(|_| f64::from(rng.gen_range(-BUMP_WAVE..=BUMP_WAVE))).collect(),
                        coeff: rng.gen_range(-1.0..1.0),
                        phase: rng.gen_range(0.0..2.0 * PI),
                    })
                    .collect();
            }
        }
        let mut field = BumpField {
            n,
            shape: self.clone(),
            modes,
            scale: 1.0,
        };
        let mut sup = 0.0f64;
        for _ in 0..NORM_SAMPLES {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-PI..PI)).collect();
            let p = DMatrix::from_row_slice(n, n, &field.polynomial(&x).0);
            sup = sup.max(SymmetricEigen::new(p).eigenvalues.amax());
        }
        field.scale = if sup > 0.0 { self.amplitude / sup } else { 0.0 };
        Ok(field)
    }
}

impl BumpField {
    /// Trace-free `P(x)` and `∂_l P(x)` (at `l * n² + i * n + j`), unscaled.
    fn polynomial(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut p = vec![0.0; n * n];
        let mut dp = vec![0.0; n * n * n];
        for i in 0..n {
            for j in i..n {
                for mode in &self.modes[i * n + j] {
                    let arg: f64 = mode.wave.iter().zip(x).map(|(w, y)| w * y).sum::<f64>() + mode.phase;
                    p[i * n + j] += mode.coeff * arg.cos();
                    let s = mode.coeff * arg.sin();
                    for (l, w) in mode.wave.iter().enumerate() {
                        dp[l * n * n + i * n + j] -= s * w;
                    }
                }
                p[j * n + i] = p[i * n + j];
                for l in 0..n {
                    dp[l * n * n + j * n + i] = dp[l * n * n + i * n + j];
                }
            }
        }
        for l in 0..=n {
            // l < n: ∂_l P, l = n: P itself
            let block = if l < n { &mut dp[l * n * n..(l + 1) * n * n] } else { &mut p[..] };
            let tr = (0..n).map(|i| block[i * n + i]).sum::<f64>() / n as f64;
            for i in 0..n {
                block[i * n + i] -= tr;
            }
        }
        (p, dp)
    }

    pub fn shape(&self) -> &BumpShape {
        &self.shape
    }

    /// Radial profile and its `r`-derivative.
    fn profile(&self, r: f64) -> (f64, f64) {
        let (a, b) = (self.shape.r_inner, self.shape.r_outer);
        if r <= a || r >= b {
            return (0.0, 0.0);
        }
        let s = (2.0 * r - a - b) / (b - a);
        let q = 1.0 - s * s;
        let beta = q.powi(BUMP_POWER);
        let dbeta = f64::from(BUMP_POWER) * q.powi(BUMP_POWER - 1) * (-2.0 * s) * (2.0 / (b - a));
        (beta, dbeta)
    }

    /// Adds `c · B(d)` and `c · ∂B(d)` into the given buffers.
    pub fn accumulate(&self, d: &[f64], c: f64, h: &mut [f64], dh: &mut [f64]) {
        let n = self.n;
        let r = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (beta, dbeta) = self.profile(r);
        if beta == 0.0 || c == 0.0 {
            return;
        }
        let k = c * self.scale;
        let (p, dp) = self.polynomial(d);
        for (hv, pv) in h.iter_mut().zip(&p) {
            *hv += k * beta * pv;
        }
        for l in 0..n {
            for e in 0..n * n {
                dh[l * n * n + e] += k * (dbeta * d[l] / r * p[e] + beta * dp[l * n * n + e]);
            }
        }
    }
}

/// `h = Id + Σ c_i B_i`.
#[derive(Debug, Clone)]
pub struct MetricSpec {
    pub terms: Vec<(f64, BumpShape)>,
}

impl MetricSpec {
    pub fn flat() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn sample(&self, bundle: &SpinorBundle) -> Result<MetricField> {
        let n = bundle.dim();
        let fields: Vec<(f64, BumpField)> = self
            .terms
            .iter()
            .map(|(c, s)| Ok((*c, s.build(n)?)))
            .collect::<Result<_>>()?;
        MetricField::from_fn(bundle, FLAT_RADIUS, |d| {
            let mut h = vec![0.0; n * n];
            let mut dh = vec![0.0; n * n * n];
            for i in 0..n {
                h[i * n + i] = 1.0;
            }
            for (c, f) in &fields {
                f.accumulate(d, *c, &mut h, &mut dh);
            }
            (h, dh)
        })
    }
}

/// The affine family `t ↦ Id + t·B` interpolating from the flat metric.
#[derive(Debug, Clone)]
pub struct MetricFamily {
    pub shape: BumpShape,
}

impl MetricFamily {
    pub fn at(&self, bundle: &SpinorBundle, t: f64) -> Result<MetricField> {
        MetricSpec {
            terms: vec![(t, self.shape.clone())],
        }
        .sample(bundle)
    }

    pub fn spec_at(&self, t: f64) -> MetricSpec {
        MetricSpec {
            terms: vec![(t, self.shape.clone())],
        }
    }
}

/// The seeded standard family on a bundle. Requires `amplitude < 1`, which
/// keeps `Id + t·B` positive definite for all `t ∈ [0, 1]`.
pub fn standard_family(bundle: &SpinorBundle, amplitude: f64, shape_seed: u64) -> Result<MetricFamily> {
    if !(0.0..1.0).contains(&amplitude.abs()) {
        return Err(Error::NotPositive {
            node: 0,
            min_eig: 1.0 - amplitude.abs(),
        });
    }
    let shape = BumpShape::standard(shape_seed, amplitude);
    shape.build(bundle.dim())?;
    Ok(MetricFamily { shape })
}

/// Serialized description of one metric of a standard family: the unit of
/// experiment reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyDocument {
    pub n: usize,
    pub delta: Vec<u8>,
    pub m: usize,
    #[serde(rename = "r_U")]
    pub r_u: f64,
    pub r1: f64,
    pub r2: f64,
    pub amplitude: f64,
    pub shape_seed: u64,
    pub t: f64,
}

impl Default for FamilyDocument {
    fn default() -> Self {
        Self {
            n: 3,
            delta: vec![0, 0, 0],
            m: 12,
            r_u: FLAT_RADIUS,
            r1: 0.2,
            r2: 0.45,
            amplitude: DEFAULT_AMPLITUDE,
            shape_seed: 1,
            t: 0.0,
        }
    }
}

impl FamilyDocument {
    pub fn torus(&self) -> Result<TorusSpec> {
        TorusSpec::new(self.n, self.delta.clone())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.m)
    }

    pub fn cutoff(&self) -> Result<CutoffProfile> {
        let c = CutoffProfile {
            r1: self.r1,
            r2: self.r2,
        };
        c.validate(self.r_u)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.torus()?;
        self.grid()?;
        self.cutoff()?;
        if self.r_u != FLAT_RADIUS {
            return Err(Error::Config(format!("r_U is fixed to {FLAT_RADIUS}, got {}", self.r_u)));
        }
        Ok(())
    }

    pub fn bundle(&self) -> Result<SpinorBundle> {
        crate::torus::make_flat_torus(&self.torus()?, self.grid()?)
    }

    pub fn family(&self, bundle: &SpinorBundle) -> Result<MetricFamily> {
        standard_family(bundle, self.amplitude, self.shape_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::make_flat_torus;

    fn bundle(n: usize, m: usize) -> SpinorBundle {
        make_flat_torus(&TorusSpec::trivial(n), GridSpec::new(m).unwrap()).unwrap()
    }

    #[test]
    fn family_endpoint_is_flat() {
        let b = bundle(3, 12);
        let fam = standard_family(&b, 0.5, 1).unwrap();
        let h = fam.at(&b, 0.0).unwrap();
        assert!(h.is_flat());
        assert_eq!(h, MetricField::flat(&b));
    }

    #[test]
    fn family_is_identity_on_protected_ball() {
        let b = bundle(3, 16);
        for seed in [1, 2, 3, 99] {
            let h = standard_family(&b, 0.5, seed).unwrap().at(&b, 0.3).unwrap();
            let mut inside = 0;
            for node in 0..b.num_nodes() {
                if b.distance_to_base(node) <= 0.6 {
                    assert!(h.is_identity_at(node));
                    assert!(h.derivative_at(node, 0).iter().all(|&v| v == 0.0));
                    inside += 1;
                }
            }
            assert!(inside > 1);
            assert!(!h.is_flat());
        }
    }

    #[test]
    fn golden_min_eigenvalue_seed_one() {
        let b = bundle(3, 12);
        let h = standard_family(&b, 0.5, 1).unwrap().at(&b, 0.3).unwrap();
        // direct eigenvalue scan; the value is frozen below
        let scanned = (0..b.num_nodes())
            .map(|node| {
                let m = DMatrix::from_row_slice(3, 3, h.at(node));
                SymmetricEigen::new(m).eigenvalues.min()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(scanned > 0.0);
        assert!(scanned >= 1.0 - 0.3 * 0.5 - 1e-12);
        assert_eq!(scanned, h.min_eigenvalue());
        assert!((scanned - GOLDEN_MIN_EIG).abs() < 1e-12, "{scanned:.15}");
    }

    const GOLDEN_MIN_EIG: f64 = 0.879093910516656;

    #[test]
    fn amplitude_bound_enforced() {
        let b = bundle(2, 8);
        assert!(matches!(standard_family(&b, 1.2, 0), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn derivatives_match_fourth_order_differences() {
        let b = bundle(3, 8);
        let fam = standard_family(&b, 0.5, 7).unwrap();
        let field = fam.shape.build(3).unwrap();
        let eval = |d: &[f64]| {
            let mut h = vec![0.0; 9];
            let mut dh = vec![0.0; 27];
            field.accumulate(d, 1.0, &mut h, &mut dh);
            (h, dh)
        };
        for d in [[1.0, 0.5, -0.3], [0.2, -1.4, 0.9], [-1.5, 0.1, 0.2]] {
            let (_, dh) = eval(&d);
            let mut errs = Vec::new();
            for step in [1e-2, 5e-3] {
                let mut worst = 0.0f64;
                for l in 0..3 {
                    let shifted = |s: f64| {
                        let mut e = d;
                        e[l] += s * step;
                        eval(&e).0
                    };
                    let (p2, p1, m1, m2) = (shifted(2.0), shifted(1.0), shifted(-1.0), shifted(-2.0));
                    for ij in 0..9 {
                        let fd = (-p2[ij] + 8.0 * p1[ij] - 8.0 * m1[ij] + m2[ij]) / (12.0 * step);
                        worst = worst.max((fd - dh[l * 9 + ij]).abs());
                    }
                }
                errs.push(worst);
            }
            // fourth order: halving the step divides the error by ~16
            assert!(errs[0] < 1e-5, "{errs:?}");
            assert!(errs[1] < errs[0] / 8.0 || errs[1] < 1e-10, "{errs:?}");
        }
    }

    #[test]
    fn christoffel_of_flat_and_constant_metrics_vanish() {
        let b = bundle(2, 8);
        let g = christoffel(&MetricField::flat(&b)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let c2 = MetricField::from_fn(&b, -1.0, |_| (vec![4.0, 0.0, 0.0, 4.0], vec![0.0; 8])).unwrap();
        assert!(christoffel(&c2).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn christoffel_of_diagonal_conformal_direction() {
        // h = diag(e^{2f(x1)}, 1, 1), f = 0.3 sin(x1):
        // Γ^1_11 = f', all other symbols vanish.
        let b = bundle(3, 8);
        let f = |x: f64| 0.3 * x.sin();
        let df = |x: f64| 0.3 * x.cos();
        let h = MetricField::from_fn(&b, 0.0, |d| {
            let mut h = vec![0.0; 9];
            h[0] = (2.0 * f(d[0])).exp();
            h[4] = 1.0;
            h[8] = 1.0;
            let mut dh = vec![0.0; 27];
            dh[0] = 2.0 * df(d[0]) * h[0];
            (h, dh)
        })
        .unwrap();
        let gam = christoffel(&h).unwrap();
        for node in 0..b.num_nodes() {
            let x = b.displacement(node)[0];
            for idx in 0..27 {
                let v = gam[node * 27 + idx];
                let expect = if idx == 0 { df(x) } else { 0.0 };
                assert!((v - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn christoffel_is_metric_compatible() {
        let b = bundle(3, 8);
        let h = standard_family(&b, 0.5, 3).unwrap().at(&b, 0.7).unwrap();
        let gam = christoffel(&h).unwrap();
        let n = 3;
        for node in 0..b.num_nodes() {
            let hv = h.at(node);
            for k in 0..n {
                let dk = h.derivative_at(node, k);
                for i in 0..n {
                    for j in 0..n {
                        let g = |a: usize, bb: usize, c: usize| gam[((node * n + a) * n + bb) * n + c];
                        let mut v = dk[i * n + j];
                        for l in 0..n {
                            v -= g(l, k, i) * hv[l * n + j] + g(l, k, j) * hv[i * n + l];
                        }
                        assert!(v.abs() < 1e-12);
                        assert!((g(k, i, j) - g(k, j, i)).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn inversion_is_an_involution() {
        let b = bundle(2, 8);
        let h = standard_family(&b, 0.5, 4).unwrap().at(&b, 0.5).unwrap();
        assert_eq!(h.inverted(&b).inverted(&b), h);
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let doc = FamilyDocument {
            amplitude: 0.1 + 0.2,
            t: 1.0 / 3.0,
            ..FamilyDocument::default()
        };
        let s = serde_json::to_string(&doc).unwrap();
        assert!(s.contains("\"r_U\""));
        let back: FamilyDocument = serde_json::from_str(&s).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.t.to_bits(), doc.t.to_bits());
    }
}
