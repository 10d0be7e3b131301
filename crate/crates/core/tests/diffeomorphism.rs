//! The pullback of the flat metric by a diffeomorphism isotopic to the
//! identity has the flat Dirac spectrum.

use massdirac::bg::assemble_bg_dirac;
use massdirac::metric::MetricField;
use massdirac::spectral::{dense, low_spectrum, EigenConfig};
use massdirac::torus::{make_flat_torus, GridSpec, TorusSpec};
use std::f64::consts::PI;

/// `exp(−1/(1−u²))` and its first two derivatives in `x`, centered at `x = π`.
fn bump(d: f64) -> [f64; 3] {
    let x = if d < 0.0 { d + 2.0 * PI } else { d };
    let l = PI - 1.0;
    let u = (x - PI) / l;
    if u.abs() >= 1.0 {
        return [0.0; 3];
    }
    let q = 1.0 - u * u;
    let e = (-1.0 / q).exp();
    let g1 = -2.0 * u / (q * q);
    let g2 = -2.0 / (q * q) - 8.0 * u * u / (q * q * q);
    [e, e * g1 / l, e * (g2 + g1 * g1) / (l * l)]
}

/// `h = Jᵀ J` for `ψ(x) = x + ε φ(x₁) (cos x₂, sin x₂)`.
fn pullback(d: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let [f, f1, f2] = bump(d[0]);
    let (c, s) = (d[1].cos(), d[1].sin());
    // v = (f c, f s); J[k][i] = δ + ε ∂_i v_k; H[k][i][l] = ε ∂_l ∂_i v_k
    let dv = [[f1 * c, -f * s], [f1 * s, f * c]];
    let ddv = [
        [[f2 * c, -f1 * s], [-f1 * s, -f * c]],
        [[f2 * s, f1 * c], [f1 * c, -f * s]],
    ];
    let mut j = [[0.0; 2]; 2];
    for k in 0..2 {
        for i in 0..2 {
            j[k][i] = if k == i { 1.0 } else { 0.0 } + eps * dv[k][i];
        }
    }
    let mut h = vec![0.0; 4];
    let mut dh = vec![0.0; 8];
    for a in 0..2 {
        for b in 0..2 {
            h[a * 2 + b] = (0..2).map(|k| j[k][a] * j[k][b]).sum();
            for l in 0..2 {
                dh[(l * 2 + a) * 2 + b] = (0..2)
                    .map(|k| eps * ddv[k][a][l] * j[k][b] + j[k][a] * eps * ddv[k][b][l])
                    .sum();
            }
        }
    }
    (h, dh)
}

#[test]
fn pulled_back_flat_metric_keeps_the_flat_spectrum() {
    let torus = TorusSpec::new(2, vec![1, 0]).unwrap();
    let b = make_flat_torus(&torus, GridSpec::new(16).unwrap()).unwrap();
    let flat = dense::spectrum(&assemble_bg_dirac(&b, &MetricField::flat(&b)).unwrap()).unwrap();
    let h = MetricField::from_fn(&b, 0.6, |d| pullback(d, 0.15)).unwrap();
    assert!(!h.is_flat());
    let op = assemble_bg_dirac(&b, &h).unwrap();
    let bent = dense::spectrum(&op).unwrap();
    // compare the low part of the spectrum, |λ| ≤ 2.6
    let low = |s: &[f64]| s.iter().copied().filter(|l| l.abs() <= 2.6).collect::<Vec<_>>();
    let (lf, lb) = (low(&flat), low(&bent));
    assert_eq!(lf.len(), lb.len());
    let err = lf.iter().zip(&lb).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
    assert!(err < 1e-4, "max deviation {err:e}");
}

/// `h = Jᵀ J` for `ψ(x) = x + ε φ(x₁) q(x)`, `q = (cos x₂, sin x₃, sin(x₂ + x₃))`.
fn pullback3(d: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let [f, f1, f2] = bump(d[0]);
    let (c2, s2, c3, s3) = (d[1].cos(), d[1].sin(), d[2].cos(), d[2].sin());
    let (c23, s23) = ((d[1] + d[2]).cos(), (d[1] + d[2]).sin());
    let q = [c2, s3, s23];
    // dq[k][i], ddq[k][i][l]
    let dq = [[0.0, -s2, 0.0], [0.0, 0.0, c3], [0.0, c23, c23]];
    let ddq = [
        [[0.0; 3], [0.0, -c2, 0.0], [0.0; 3]],
        [[0.0; 3], [0.0; 3], [0.0, 0.0, -s3]],
        [[0.0; 3], [0.0, -s23, -s23], [0.0, -s23, -s23]],
    ];
    let e1 = |i: usize| if i == 0 { 1.0 } else { 0.0 };
    let mut j = [[0.0; 3]; 3];
    let mut hess = [[[0.0; 3]; 3]; 3];
    for k in 0..3 {
        for i in 0..3 {
            j[k][i] = if k == i { 1.0 } else { 0.0 } + eps * (f1 * e1(i) * q[k] + f * dq[k][i]);
            for l in 0..3 {
                hess[k][i][l] = eps
                    * (f2 * e1(i) * e1(l) * q[k]
                        + f1 * (e1(i) * dq[k][l] + e1(l) * dq[k][i])
                        + f * ddq[k][i][l]);
            }
        }
    }
    let mut h = vec![0.0; 9];
    let mut dh = vec![0.0; 27];
    for a in 0..3 {
        for b in 0..3 {
            h[a * 3 + b] = (0..3).map(|k| j[k][a] * j[k][b]).sum();
            for l in 0..3 {
                dh[(l * 3 + a) * 3 + b] = (0..3).map(|k| hess[k][a][l] * j[k][b] + j[k][a] * hess[k][b][l]).sum();
            }
        }
    }
    (h, dh)
}

#[test]
fn pulled_back_flat_metric_in_three_dimensions() {
    let torus = TorusSpec::antiperiodic(3);
    let b = make_flat_torus(&torus, GridSpec::new(10).unwrap()).unwrap();
    let h = MetricField::from_fn(&b, 0.6, |d| pullback3(d, 0.1)).unwrap();
    assert!(!h.is_flat());
    // the lowest flat cluster: 16 eigenvalues ±√3/2
    let rep = low_spectrum(&assemble_bg_dirac(&b, &h).unwrap(), 16, &EigenConfig::default()).unwrap();
    let expected = 0.75f64.sqrt();
    let err = rep.eigenvalues.iter().map(|l| (l.abs() - expected).abs()).fold(0.0, f64::max);
    let positive = rep.eigenvalues.iter().filter(|l| **l > 0.0).count();
    assert_eq!(positive, 8);
    assert!(err < 1e-3, "max deviation {err:e}");
}
