//! Complex representations of the Clifford algebra of `R^n`.
//!
//! Convention: a unit vector acts on spinors with square `-1`, so
//! `γ_i γ_j + γ_j γ_i = -2 δ_ij` and every `γ_i` is anti-Hermitian. With this
//! choice `i·Σ ξ_j γ_j` is Hermitian and the Dirac operator has real spectrum.
//!
//! Even dimensions are built by the tensor-product induction `n -> n + 2`
//! starting from `γ_1 = iσ_1, γ_2 = iσ_2`. An odd dimension `n` reuses the
//! `n - 1` gammas and appends `c·γ_1⋯γ_{n-1}` with `c = i` when
//! `n - 1 ≡ 0 (mod 4)` and `c = 1` when `n - 1 ≡ 2 (mod 4)`; this is the
//! unique choice of phase in `{1, i}` that makes the last gamma square to `-1`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// A concrete gamma system acting on `C^N`, `N = 2^⌊n/2⌋`.
#[derive(Debug, Clone, PartialEq)]
pub struct CliffordRep {
    n: usize,
    spinor_dim: usize,
    gammas: Vec<DMatrix<Complex64>>,
}

fn sigma(k: usize) -> DMatrix<Complex64> {
    match k {
        1 => DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        2 => DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        _ => DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    }
}

impl CliffordRep {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Dimension(n));
        }
        let mut gammas = vec![sigma(1) * I, sigma(2) * I];
        let mut dim = 2;
        while dim + 2 <= n {
            let size = gammas[0].nrows();
            let id = DMatrix::<Complex64>::identity(size, size);
            let s3 = sigma(3);
            let mut next: Vec<_> = gammas.iter().map(|g| g.kronecker(&s3)).collect();
            next.push(id.kronecker(&(sigma(1) * I)));
            next.push(id.kronecker(&(sigma(2) * I)));
            gammas = next;
            dim += 2;
        }
        if n % 2 == 1 {
            let k = n - 1;
            let mut vol = gammas[0].clone();
            for g in &gammas[1..] {
                vol = vol * g;
            }
            let phase = if k % 4 == 0 { I } else { ONE };
            gammas.push(vol * phase);
        }
        let spinor_dim = gammas[0].nrows();
        Ok(Self {
            n,
            spinor_dim,
            gammas,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn spinor_dim(&self) -> usize {
        self.spinor_dim
    }

    pub fn gamma(&self, i: usize) -> &DMatrix<Complex64> {
        &self.gammas[i]
    }

    pub fn gammas(&self) -> &[DMatrix<Complex64>] {
        &self.gammas
    }

    /// `Σ v_i γ_i`, the matrix of Clifford multiplication by `v`.
    pub fn vector_matrix(&self, v: &[f64]) -> Result<DMatrix<Complex64>> {
        if v.len() != self.n {
            return Err(Error::Mismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        let mut out = DMatrix::zeros(self.spinor_dim, self.spinor_dim);
        for (g, &c) in self.gammas.iter().zip(v) {
            if c != 0.0 {
                out += g * Complex64::new(c, 0.0);
            }
        }
        Ok(out)
    }

    /// Clifford multiplication `v · ψ`.
    pub fn multiply(&self, v: &[f64], psi: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        if psi.len() != self.spinor_dim {
            return Err(Error::Mismatch {
                expected: self.spinor_dim,
                got: psi.len(),
            });
        }
        Ok(self.vector_matrix(v)? * psi)
    }

    /// Spin action of a skew endomorphism `T` (given as an `n×n` row-major
    /// matrix, `T e_j = Σ_k T[k][j] e_k`): `½ Σ_{j<k} ⟨T e_j, e_k⟩ γ_j γ_k`.
    pub fn two_form(&self, t: &[f64]) -> DMatrix<Complex64> {
        let n = self.n;
        let mut out = DMatrix::zeros(self.spinor_dim, self.spinor_dim);
        for j in 0..n {
            for k in (j + 1)..n {
                let c = t[k * n + j];
                if c != 0.0 {
                    out += (&self.gammas[j] * &self.gammas[k]) * Complex64::new(0.5 * c, 0.0);
                }
            }
        }
        out
    }

    /// Largest entrywise violation of `γ_iγ_j + γ_jγ_i + 2δ_ij = 0` and
    /// `γ_i* + γ_i = 0`.
    pub fn relation_defect(&self) -> f64 {
        let id = DMatrix::<Complex64>::identity(self.spinor_dim, self.spinor_dim);
        let mut worst = 0.0f64;
        for (i, gi) in self.gammas.iter().enumerate() {
            let skew = gi + gi.adjoint();
            worst = worst.max(skew.iter().map(|z| z.norm()).fold(0.0, f64::max));
            for (j, gj) in self.gammas.iter().enumerate() {
                let mut ac = gi * gj + gj * gi;
                if i == j {
                    ac += &id * Complex64::new(2.0, 0.0);
                }
                worst = worst.max(ac.iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        worst
    }
}

/// `N = 2^⌊n/2⌋`.
pub fn spinor_dim(n: usize) -> usize {
    1 << (n / 2)
}
