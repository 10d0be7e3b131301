//! Flat tori `R^n / (2πZ)^n` with a spin structure, their sampling grids and
//! the cutoff profile used around the base point.
//!
//! The base point `p` is the origin node. A spin structure is a vector
//! `delta ∈ {0,1}^n`; component `1` makes spinors antiperiodic along that
//! axis. Fourier momenta of spinor fields are `ξ = k + delta/2`, `k ∈ Z^n`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clifford::CliffordRep;
use crate::error::{Error, Result};

/// Radius of the protected flat ball `U` around `p`.
pub const FLAT_RADIUS: f64 = 0.6;

/// Smallest admissible number of grid points per axis.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusSpec {
    pub n: usize,
    pub delta: Vec<u8>,
}

impl TorusSpec {
    pub fn new(n: usize, delta: Vec<u8>) -> Result<Self> {
        let spec = Self { n, delta };
        spec.validate()?;
        Ok(spec)
    }

    /// The all-periodic ("Lie group") spin structure.
    pub fn trivial(n: usize) -> Self {
        Self {
            n,
            delta: vec![0; n],
        }
    }

    pub fn antiperiodic(n: usize) -> Self {
        Self {
            n,
            delta: vec![1; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Dimension(self.n));
        }
        if self.delta.len() != self.n {
            return Err(Error::Mismatch {
                expected: self.n,
                got: self.delta.len(),
            });
        }
        if self.delta.iter().any(|&d| d > 1) {
            return Err(Error::Config(format!(
                "spin structure entries must be 0 or 1, got {:?}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn is_trivial(&self) -> bool {
        self.delta.iter().all(|&d| d == 0)
    }

    fn shift(&self, axis: usize) -> f64 {
        0.5 * f64::from(self.delta[axis])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn new(points_per_axis: usize) -> Result<Self> {
        let grid = Self { points_per_axis };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.points_per_axis;
        if m < MIN_POINTS {
            return Err(Error::Grid(format!("need at least {MIN_POINTS} points per axis, got {m}")));
        }
        if m % 2 != 0 {
            return Err(Error::Grid(format!("points per axis must be even, got {m}")));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.points_per_axis as f64
    }
}

/// Discretized spinor bundle over a flat torus: node coordinates, Fourier
/// momenta and the fiber representation.
#[derive(Debug, Clone)]
pub struct SpinorBundle {
    torus: TorusSpec,
    grid: GridSpec,
    rep: Arc<CliffordRep>,
    nodes: usize,
}

/// Builds the trivialized spinor bundle of a flat torus.
pub fn make_flat_torus(torus: &TorusSpec, grid: GridSpec) -> Result<SpinorBundle> {
    torus.validate()?;
    grid.validate()?;
    let rep = CliffordRep::new(torus.n)?;
    let nodes = grid
        .points_per_axis
        .checked_pow(torus.n as u32)
        .ok_or_else(|| Error::Grid("grid too large".into()))?;
    Ok(SpinorBundle {
        torus: torus.clone(),
        grid,
        rep: Arc::new(rep),
        nodes,
    })
}

impl SpinorBundle {
    pub fn torus(&self) -> &TorusSpec {
        &self.torus
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn rep(&self) -> &CliffordRep {
        &self.rep
    }

    pub fn dim(&self) -> usize {
        self.torus.n
    }

    pub fn points(&self) -> usize {
        self.grid.points_per_axis
    }

    pub fn spinor_dim(&self) -> usize {
        self.rep.spinor_dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    /// Length of a discretized spinor field (`nodes · N`).
    pub fn field_len(&self) -> usize {
        self.nodes * self.spinor_dim()
    }

    /// Volume of a grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.grid.spacing().powi(self.torus.n as i32)
    }

    /// Multi-index of a node; axis 0 varies fastest.
    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let m = self.points();
        let mut rest = node;
        (0..self.dim())
            .map(|_| {
                let i = rest % m;
                rest /= m;
                i
            })
            .collect()
    }

    pub fn node_of(&self, index: &[usize]) -> usize {
        let m = self.points();
        index.iter().rev().fold(0, |acc, &i| acc * m + (i % m))
    }

    /// Node coordinates in `[0, 2π)^n`.
    pub fn coords(&self, node: usize) -> Vec<f64> {
        let h = self.grid.spacing();
        self.multi_index(node).into_iter().map(|i| i as f64 * h).collect()
    }

    /// Minimal-image displacement from `p`, each component in `[-π, π)`.
    pub fn displacement(&self, node: usize) -> Vec<f64> {
        let m = self.points();
        let h = self.grid.spacing();
        self.multi_index(node)
            .into_iter()
            .map(|i| {
                if 2 * i >= m {
                    (i as f64 - m as f64) * h
                } else {
                    i as f64 * h
                }
            })
            .collect()
    }

    pub fn distance_to_base(&self, node: usize) -> f64 {
        self.displacement(node).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Node of `-x` for the node at `x`.
    pub fn antipodal_node(&self, node: usize) -> usize {
        let m = self.points();
        let idx: Vec<usize> = self.multi_index(node).into_iter().map(|i| (m - i) % m).collect();
        self.node_of(&idx)
    }

    /// Integer frequency along one axis for FFT bin `j` (`-m/2 ..= m/2 - 1`).
    pub fn frequency(&self, j: usize) -> i64 {
        let m = self.points();
        if 2 * j >= m {
            j as i64 - m as i64
        } else {
            j as i64
        }
    }

    /// Momentum component `k + delta_a/2` for FFT bin `j` along `axis`.
    pub fn momentum_component(&self, axis: usize, j: usize) -> f64 {
        self.frequency(j) as f64 + self.torus.shift(axis)
    }

    /// Momentum of a flattened Fourier bin.
    pub fn momentum(&self, bin: usize) -> Vec<f64> {
        self.multi_index(bin)
            .into_iter()
            .enumerate()
            .map(|(axis, j)| self.momentum_component(axis, j))
            .collect()
    }

    /// All momenta resolved by the grid.
    pub fn momenta(&self) -> Vec<Vec<f64>> {
        (0..self.nodes).map(|b| self.momentum(b)).collect()
    }

    pub fn has_zero_mode(&self) -> bool {
        self.torus.is_trivial()
    }

    pub fn smallest_momentum(&self) -> f64 {
        self.momenta()
            .iter()
            .map(|xi| xi.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest symbol norm `|ξ|` on the grid, the natural scale of the
    /// discrete Dirac operator.
    pub fn dirac_scale(&self) -> f64 {
        self.momenta()
            .iter()
            .map(|xi| xi.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `e^{i delta·x / 2}` at a node: the phase that turns periodic samples
    /// into sections of the spin structure.
    pub fn twist(&self, node: usize) -> num_complex::Complex64 {
        let x = self.coords(node);
        let phase: f64 = x
            .iter()
            .enumerate()
            .map(|(a, xa)| self.torus.shift(a) * xa)
            .sum();
        num_complex::Complex64::from_polar(1.0, phase)
    }

    /// Volume `2π^{n/2}/Γ(n/2)` of the unit sphere `S^{n-1}`.
    pub fn sphere_volume(&self) -> f64 {
        sphere_volume(self.dim())
    }
}

/// Volume of the unit sphere `S^{n-1} ⊂ R^n`.
pub fn sphere_volume(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / statrs::function::gamma::gamma(n as f64 / 2.0)
}

/// Radial cutoff `η`: equal to one on `B(p, r1)`, zero outside `B(p, r2)`,
/// with a quintic smoothstep in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub r1: f64,
    pub r2: f64,
}

impl Default for CutoffProfile {
    fn default() -> Self {
        Self { r1: 0.2, r2: 0.45 }
    }
}

impl CutoffProfile {
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        let c = Self { r1, r2 };
        c.validate(FLAT_RADIUS)?;
        Ok(c)
    }

    pub fn validate(&self, flat_radius: f64) -> Result<()> {
        if !(self.r1 > 0.0 && self.r1 < self.r2) {
            return Err(Error::Cutoff(format!(
                "need 0 < r1 < r2, got ({}, {})",
                self.r1, self.r2
            )));
        }
        if self.r2 > flat_radius {
            return Err(Error::Cutoff(format!(
                "support radius {} leaves the flat region of radius {}",
                self.r2, flat_radius
            )));
        }
        Ok(())
    }

    fn unit(&self, r: f64) -> f64 {
        ((r - self.r1) / (self.r2 - self.r1)).clamp(0.0, 1.0)
    }

    pub fn value(&self, r: f64) -> f64 {
        let s = self.unit(r);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }

    /// `dη/dr`.
    pub fn derivative(&self, r: f64) -> f64 {
        let s = self.unit(r);
        -30.0 * s * s * (1.0 - s) * (1.0 - s) / (self.r2 - self.r1)
    }

    /// `sup |dη|` over the nodes of a bundle.
    pub fn max_gradient_on(&self, bundle: &SpinorBundle) -> f64 {
        (0..bundle.num_nodes())
            .map(|node| self.derivative(bundle.distance_to_base(node)).abs())
            .fold(0.0, f64::max)
    }

    /// Grid cells across the transition annulus.
    pub fn cells_across(&self, grid: GridSpec) -> f64 {
        (self.r2 - self.r1) / grid.spacing()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_momentum_half_periodic() {
        let b = make_flat_torus(&TorusSpec::new(2, vec![1, 0]).unwrap(), GridSpec::new(8).unwrap()).unwrap();
        // brute-force enumeration over a lattice window
        let mut best = f64::INFINITY;
        for k1 in -5i32..=5 {
            for k2 in -5i32..=5 {
                let x = (f64::from(k1) + 0.5, f64::from(k2));
                best = best.min((x.0 * x.0 + x.1 * x.1).sqrt());
            }
        }
        assert_eq!(best, 0.5);
        assert_eq!(b.smallest_momentum(), best);
        assert!(b.momenta().iter().all(|xi| (xi[0].fract().abs() - 0.5).abs() < 1e-15 && xi[1].fract() == 0.0));
        assert!(!b.has_zero_mode());
    }

    #[test]
    fn trivial_structure_has_zero_momentum() {
        for n in [2, 3] {
            let b = make_flat_torus(&TorusSpec::trivial(n), GridSpec::new(8).unwrap()).unwrap();
            assert!(b.has_zero_mode());
            assert_eq!(b.smallest_momentum(), 0.0);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(6).is_err());
        assert!(GridSpec::new(9).is_err());
        assert!(GridSpec::new(8).is_ok());
        assert!(TorusSpec::new(2, vec![0, 2]).is_err());
        assert!(TorusSpec::new(3, vec![0, 1]).is_err());
    }

    #[test]
    fn base_point_and_antipode_are_nodes() {
        let b = make_flat_torus(&TorusSpec::trivial(3), GridSpec::new(12).unwrap()).unwrap();
        assert_eq!(b.distance_to_base(0), 0.0);
        let anti = b.node_of(&[6, 6, 6]);
        assert!((b.distance_to_base(anti) - 3f64.sqrt() * PI).abs() < 1e-12);
        assert_eq!(b.antipodal_node(anti), anti);
        let some = b.node_of(&[1, 5, 11]);
        assert_eq!(b.multi_index(b.antipodal_node(some)), vec![11, 7, 1]);
    }

    #[test]
    fn sphere_volumes() {
        assert!((sphere_volume(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_volume(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_volume(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn cutoff_shape_and_gradient_bound() {
        let eta = CutoffProfile::default();
        assert_eq!(eta.value(0.0), 1.0);
        assert_eq!(eta.value(0.2), 1.0);
        assert_eq!(eta.value(0.45), 0.0);
        assert_eq!(eta.value(1.0), 0.0);
        // derivative against central differences
        for &r in &[0.25, 0.3, 0.33, 0.4] {
            let h = 1e-6;
            let fd = (eta.value(r + h) - eta.value(r - h)) / (2.0 * h);
            assert!((fd - eta.derivative(r)).abs() < 1e-6);
        }
        for m in [8, 16, 32, 64, 128] {
            for n in [2, 3] {
                let b = make_flat_torus(&TorusSpec::trivial(n), GridSpec::new(m).unwrap()).unwrap();
                assert!(eta.max_gradient_on(&b) <= 2.0 / (eta.r2 - eta.r1));
            }
        }
    }

    #[test]
    fn cutoff_validation() {
        assert!(CutoffProfile::new(0.3, 0.2).is_err());
        assert!(CutoffProfile::new(0.0, 0.2).is_err());
        assert!(CutoffProfile::new(0.2, 0.7).is_err());
        assert!(CutoffProfile::new(0.15, 0.3).is_ok());
    }
}
