//! n-dimensional FFTs of twisted-periodic grid fields.
//!
//! A sampled section `φ` of the spin structure is written `φ = e^{iδ·x/2} u`
//! with `u` periodic; `forward` returns the DFT of `u`, whose bin `k` carries
//! momentum `ξ = k + δ/2`. Plans are shared, scratch buffers are per call.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::torus::SpinorBundle;

pub struct SpectralGrid {
    n: usize,
    m: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    twist: Vec<Complex64>,
    /// `ξ_a` for every bin, axis-major: `momenta[a * len + bin]`.
    momenta: Vec<f64>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(bundle: &SpinorBundle) -> Self {
        let n = bundle.dim();
        let m = bundle.points();
        let len = bundle.num_nodes();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let twist = (0..len).map(|node| bundle.twist(node)).collect();
        let mut momenta = vec![0.0; n * len];
        for bin in 0..len {
            for (a, xi) in bundle.momentum(bin).into_iter().enumerate() {
                momenta[a * len + bin] = xi;
            }
        }
        Self {
            n,
            m,
            len,
            fwd,
            inv,
            twist,
            momenta,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Momentum component `ξ_axis` of a bin.
    #[inline]
    pub fn momentum(&self, axis: usize, bin: usize) -> f64 {
        self.momenta[axis * self.len + bin]
    }

    pub fn momentum_sq(&self, bin: usize) -> f64 {
        (0..self.n).map(|a| self.momentum(a, bin).powi(2)).sum()
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len);
        let m = self.m;
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        // axis 0 is contiguous
        fft.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut stride = m;
        for _ in 1..self.n {
            let block = stride * m;
            for base in (0..self.len).step_by(block) {
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

    /// Twisted samples to Fourier coefficients (unnormalized DFT).
    pub fn forward(&self, data: &mut [Complex64]) {
        for (v, t) in data.iter_mut().zip(&self.twist) {
            *v *= t.conj();
        }
        self.transform(data, &self.fwd);
    }

    /// Fourier coefficients back to twisted samples (normalized).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
        let scale = 1.0 / self.len as f64;
        for (v, t) in data.iter_mut().zip(&self.twist) {
            *v *= t * scale;
        }
    }

    /// Spectral derivative `∂_axis` of one scalar field.
    pub fn derivative(&self, field: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut buf = field.to_vec();
        self.forward(&mut buf);
        for (bin, v) in buf.iter_mut().enumerate() {
            *v *= Complex64::new(0.0, self.momentum(axis, bin));
        }
        self.inverse(&mut buf);
        buf
    }
}
