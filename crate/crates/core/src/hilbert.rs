//! Finite-dimensional realizations of the state space `H`.
//!
//! Three kinds of truncation are supported:
//!
//! * **spectral**: coefficients in an orthonormal eigenbasis of the generator,
//!   with the eigenvalue of each mode stored alongside; the norm is Euclidean.
//! * **weighted grid**: samples of a forward curve on increasing maturities,
//!   normed by `|h(0)|^2 + ∫ |h'(x)|^2 e^{βx} dx`.
//! * **product**: factor blocks stored contiguously in declared order.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semigroup::SemigroupModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpaceKind {
    Spectral { eigenvalues: Vec<f64> },
    WeightedGrid { grid: Vec<f64>, beta: f64 },
    Product { factors: Vec<SpaceDescriptor> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    kind: SpaceKind,
    dim: usize,
}

impl SpaceDescriptor {
    pub fn spectral(eigenvalues: Vec<f64>) -> Result<Arc<Self>> {
        if eigenvalues.is_empty() {
            return Err(Error::structural("spectral space needs at least one mode"));
        }
        if eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::structural("eigenvalues must be finite"));
        }
        let dim = eigenvalues.len();
        Ok(Arc::new(Self { kind: SpaceKind::Spectral { eigenvalues }, dim }))
    }

    pub fn weighted_grid(grid: Vec<f64>, beta: f64) -> Result<Arc<Self>> {
        if grid.is_empty() {
            return Err(Error::structural("weighted grid needs at least one node"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::structural(format!("weight exponent must be positive, got {beta}")));
        }
        if grid[0] < 0.0 || grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::structural("grid maturities must be finite and nonnegative"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::structural("grid must be strictly increasing"));
        }
        let dim = grid.len();
        Ok(Arc::new(Self { kind: SpaceKind::WeightedGrid { grid, beta }, dim }))
    }

    pub fn product(factors: Vec<Arc<SpaceDescriptor>>) -> Result<Arc<Self>> {
        if factors.is_empty() {
            return Err(Error::structural("product space needs at least one factor"));
        }
        let dim = factors.iter().map(|f| f.dim).sum();
        let factors = factors.into_iter().map(|f| (*f).clone()).collect();
        Ok(Arc::new(Self { kind: SpaceKind::Product { factors }, dim }))
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coefficient ranges of the factor blocks (a single block for non-product spaces).
    pub fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        match &self.kind {
            SpaceKind::Product { factors } => {
                let mut start = 0;
                factors
                    .iter()
                    .map(|f| {
                        let r = start..start + f.dim;
                        start += f.dim;
                        r
                    })
                    .collect()
            }
            _ => vec![0..self.dim],
        }
    }

    /// Norm of a raw coefficient slice laid out according to this descriptor.
    pub fn norm_of(&self, coeffs: &[f64]) -> f64 {
        debug_assert_eq!(coeffs.len(), self.dim);
        match &self.kind {
            SpaceKind::Spectral { .. } => coeffs.iter().map(|c| c * c).sum::<f64>().sqrt(),
            SpaceKind::WeightedGrid { grid, beta } => {
                crate::hjmm::hbeta_norm_on_grid(grid, *beta, coeffs)
            }
            SpaceKind::Product { factors } => {
                let mut start = 0;
                let mut acc = 0.0;
                for f in factors {
                    let n = f.norm_of(&coeffs[start..start + f.dim]);
                    acc += n * n;
                    start += f.dim;
                }
                acc.sqrt()
            }
        }
    }
}

/// Shared descriptors compare by identity first, then by value.
pub(crate) fn same_space(a: &Arc<SpaceDescriptor>, b: &Arc<SpaceDescriptor>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Coefficient vector over a declared discretization of `H`.
#[derive(Debug, Clone)]
pub struct HVector {
    space: Arc<SpaceDescriptor>,
    coeffs: Vec<f64>,
}

impl PartialEq for HVector {
    fn eq(&self, other: &Self) -> bool {
        same_space(&self.space, &other.space) && self.coeffs == other.coeffs
    }
}

impl HVector {
    pub fn new(space: Arc<SpaceDescriptor>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dim {
            return Err(Error::structural(format!(
                "coefficient length {} does not match space dimension {}",
                coeffs.len(),
                space.dim
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::structural(format!("coefficient {i} is not finite")));
        }
        Ok(Self { space, coeffs })
    }

    /// Skips the finiteness check; used on hot paths whose outputs are checked later.
    pub(crate) fn from_raw(space: Arc<SpaceDescriptor>, coeffs: Vec<f64>) -> Self {
        debug_assert_eq!(coeffs.len(), space.dim);
        Self { space, coeffs }
    }

    pub fn zeros(space: Arc<SpaceDescriptor>) -> Self {
        let coeffs = vec![0.0; space.dim];
        Self { space, coeffs }
    }

    pub fn space(&self) -> &Arc<SpaceDescriptor> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.space.norm_of(&self.coeffs)
    }

    pub fn check_space(&self, space: &Arc<SpaceDescriptor>) -> Result<()> {
        if same_space(&self.space, space) {
            Ok(())
        } else {
            Err(Error::structural("vector does not belong to the expected space"))
        }
    }

    fn check_same(&self, other: &HVector) -> Result<()> {
        if same_space(&self.space, &other.space) {
            Ok(())
        } else {
            Err(Error::structural("arithmetic between vectors of different spaces"))
        }
    }

    pub fn add(&self, other: &HVector) -> Result<HVector> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Self::from_raw(self.space.clone(), coeffs))
    }

    pub fn sub(&self, other: &HVector) -> Result<HVector> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(Self::from_raw(self.space.clone(), coeffs))
    }

    pub fn scale(&self, c: f64) -> HVector {
        Self::from_raw(self.space.clone(), self.coeffs.iter().map(|a| c * a).collect())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &HVector) -> Result<()> {
        self.check_same(x)?;
        for (s, v) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *s += a * v;
        }
        Ok(())
    }

    /// Distance in the space norm.
    pub fn distance(&self, other: &HVector) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    pub fn block(&self, index: usize) -> &[f64] {
        let r = self.space.blocks()[index].clone();
        &self.coeffs[r]
    }
}

/// `sqrt(‖v‖² + ‖Av‖²)` for the generator of `semigroup`.
pub fn graph_norm(v: &HVector, semigroup: &SemigroupModel) -> Result<f64> {
    let av = semigroup.generator_apply(v)?;
    let n = v.norm();
    let an = av.norm();
    Ok((n * n + an * an).sqrt())
}

/// Derivative of grid samples: second-order three-point differences on the
/// (possibly nonuniform) grid, one-sided at both ends.
pub fn grid_derivative(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let n = grid.len();
    debug_assert_eq!(n, values.len());
    match n {
        0 => vec![],
        1 => vec![0.0],
        2 => {
            let s = (values[1] - values[0]) / (grid[1] - grid[0]);
            vec![s, s]
        }
        _ => {
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h1 = grid[i] - grid[i - 1];
                let h2 = grid[i + 1] - grid[i];
                d[i] = -h2 / (h1 * (h1 + h2)) * values[i - 1]
                    + (h2 - h1) / (h1 * h2) * values[i]
                    + h1 / (h2 * (h1 + h2)) * values[i + 1];
            }
            d[0] = one_sided(
                grid[0],
                grid[1],
                grid[2],
                values[0],
                values[1],
                values[2],
            );
            d[n - 1] = one_sided(
                grid[n - 1],
                grid[n - 2],
                grid[n - 3],
                values[n - 1],
                values[n - 2],
                values[n - 3],
            );
            d
        }
    }
}

// Derivative at x0 of the quadratic through (x0,f0), (x1,f1), (x2,f2).
fn one_sided(x0: f64, x1: f64, x2: f64, f0: f64, f1: f64, f2: f64) -> f64 {
    let h1 = x1 - x0;
    let h2 = x2 - x0;
    let c1 = h2 / (h1 * (h2 - h1));
    let c2 = -h1 / (h2 * (h2 - h1));
    -(c1 + c2) * f0 + c1 * f1 + c2 * f2
}
