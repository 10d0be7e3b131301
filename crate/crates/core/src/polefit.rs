//! Rational least-squares fits `y ≈ P(t)/Q(t)` with degrees picked by
//! leave-one-out cross-validation, and pole detection from the roots of `Q`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fewest samples accepted by [`pole_fit`].
pub const MIN_SAMPLES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub max_num_degree: usize,
    pub max_den_degree: usize,
    /// Roots of `Q` with `|Im| ≤ real_tol · t_max` count as real.
    pub real_tol: f64,
    /// Roots within `cluster_tol · t_max` of the pole add to its order.
    pub cluster_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_num_degree: 3,
            max_den_degree: 3,
            real_tol: 0.05,
            cluster_tol: 0.1,
        }
    }
}

/// `P` and `Q` in the scaled variable `τ = t / t_max`, ascending powers.
#[derive(Debug, Clone, PartialEq)]
pub struct Rational {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    pub t_scale: f64,
}

impl Rational {
    pub fn eval(&self, t: f64) -> f64 {
        let tau = t / self.t_scale;
        horner(&self.num, tau) / horner(&self.den, tau)
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleReport {
    pub detected: bool,
    /// `t` of the pole, `None` when no pole was detected.
    pub location: Option<f64>,
    pub order: Option<usize>,
    /// RMS relative deviation of the fit on the samples.
    pub residual: f64,
    pub num_degree: usize,
    pub den_degree: usize,
    /// Leave-one-out RMS relative error of the selected degrees.
    pub cv_error: f64,
    pub message: String,
}

/// Fits `P/Q` to `(t, y)` by minimizing `Σ (P(tᵢ)/yᵢ − Q(tᵢ))²` over unit-norm
/// coefficient vectors. Relative weighting makes the fit invariant under
/// `y ↦ c y`.
pub fn fit_rational(t: &[f64], y: &[f64], p: usize, q: usize) -> Result<Rational> {
    let k = t.len();
    if k != y.len() {
        return Err(Error::Mismatch {
            expected: k,
            got: y.len(),
        });
    }
    if p + q + 1 > k {
        return Err(Error::Fit(format!("degrees ({p}, {q}) need more than {k} samples")));
    }
    if y.iter().any(|v| *v == 0.0 || !v.is_finite()) || t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("samples must be finite and nonzero".into()));
    }
    let t_scale = t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if t_scale == 0.0 {
        return Err(Error::Fit("all sample points are zero".into()));
    }
    let cols = p + q + 2;
    let mut a = DMatrix::<f64>::zeros(k.max(cols), cols);
    for (i, (&ti, &yi)) in t.iter().zip(y).enumerate() {
        let tau = ti / t_scale;
        for j in 0..=p {
            a[(i, j)] = tau.powi(j as i32) / yi;
        }
        for j in 0..=q {
            a[(i, p + 1 + j)] = -tau.powi(j as i32);
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Fit("SVD failed".into()))?;
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let coeffs: Vec<f64> = v_t.row(smallest).iter().copied().collect();
    let mut num = coeffs[..=p].to_vec();
    let mut den = coeffs[p + 1..].to_vec();
    // sign convention: largest denominator coefficient positive
    let lead = den.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    if lead < 0.0 {
        num.iter_mut().for_each(|v| *v = -*v);
        den.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(Rational { num, den, t_scale })
}

fn relative_rms(r: &Rational, t: &[f64], y: &[f64]) -> f64 {
    let s: f64 = t.iter().zip(y).map(|(&ti, &yi)| ((r.eval(ti) - yi) / yi).powi(2)).sum();
    (s / t.len() as f64).sqrt()
}

fn loo_error(t: &[f64], y: &[f64], p: usize, q: usize) -> Option<f64> {
    let k = t.len();
    let mut s = 0.0;
    for out in 0..k {
        let ts: Vec<f64> = (0..k).filter(|&i| i != out).map(|i| t[i]).collect();
        let ys: Vec<f64> = (0..k).filter(|&i| i != out).map(|i| y[i]).collect();
        let r = fit_rational(&ts, &ys, p, q).ok()?;
        let e = (r.eval(t[out]) - y[out]) / y[out];
        if !e.is_finite() {
            return None;
        }
        s += e * e;
    }
    Some((s / k as f64).sqrt())
}

/// Roots of `c₀ + c₁x + … + c_d x^d` from the companion matrix.
pub fn polynomial_roots(c: &[f64]) -> Vec<num_complex::Complex64> {
    let mut c = c.to_vec();
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while c.len() > 1 && c.last().is_some_and(|v| v.abs() <= 1e-12 * scale) {
        c.pop();
    }
    let d = c.len() - 1;
    if d == 0 {
        return Vec::new();
    }
    let lead = c[d];
    let companion = DMatrix::from_fn(d, d, |i, j| {
        if j == d - 1 {
            -c[i] / lead
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut roots: Vec<num_complex::Complex64> = companion.complex_eigenvalues().iter().copied().collect();
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    roots
}

/// Selects degrees by leave-one-out cross-validation and reports the real
/// root of `Q` nearest to the sampled interval.
pub fn pole_fit(t: &[f64], y: &[f64], cfg: &FitConfig) -> Result<PoleReport> {
    let k = t.len();
    if k < MIN_SAMPLES {
        return Err(Error::Fit(format!("need at least {MIN_SAMPLES} samples, got {k}")));
    }
    let mut sorted = t.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Fit("sample points must be distinct".into()));
    }
    let mut scored: Vec<(usize, usize, f64)> = Vec::new();
    for q in 0..=cfg.max_den_degree {
        for p in 0..=cfg.max_num_degree {
            // leave-one-out needs an overdetermined fit on k − 1 points
            if p + q + 2 > k - 1 {
                continue;
            }
            if let Some(e) = loo_error(t, y, p, q) {
                scored.push((p, q, e));
            }
        }
    }
    let best = scored
        .iter()
        .map(|s| s.2)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Fit("no admissible degree pair".into()));
    }
    // lowest total degree among the near-optimal pairs
    let accept = (2.0 * best).max(1e-10);
    let &(p, q, cv_error) = scored
        .iter()
        .filter(|s| s.2 <= accept)
        .min_by_key(|s| (s.0 + s.1, s.1))
        .expect("best pair is admissible");
    let fit = fit_rational(t, y, p, q)?;
    let residual = relative_rms(&fit, t, y);
    let (lo, hi) = (sorted[0], sorted[k - 1]);
    let t_max = fit.t_scale;
    let roots: Vec<num_complex::Complex64> = polynomial_roots(&fit.den)
        .into_iter()
        .map(|z| z * t_max)
        .collect();
    let real: Vec<f64> = roots
        .iter()
        .filter(|z| z.im.abs() <= cfg.real_tol * t_max)
        .map(|z| z.re)
        .collect();
    let distance = |x: f64| if x < lo { lo - x } else if x > hi { x - hi } else { 0.0 };
    let nearest = real.iter().copied().min_by(|a, b| distance(*a).total_cmp(&distance(*b)));
    let Some(location) = nearest else {
        return Ok(PoleReport {
            detected: false,
            location: None,
            order: None,
            residual,
            num_degree: p,
            den_degree: q,
            cv_error,
            message: "no pole detected".into(),
        });
    };
    let order = roots
        .iter()
        .filter(|z| (**z - num_complex::Complex64::new(location, 0.0)).norm() <= cfg.cluster_tol * t_max)
        .count();
    Ok(PoleReport {
        detected: true,
        location: Some(location),
        order: Some(order),
        residual,
        num_degree: p,
        den_degree: q,
        cv_error,
        message: format!("pole of order {order} at t = {location}"),
    })
}
