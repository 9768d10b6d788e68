//! Evaluatable C0-semigroups `S_t` and generator actions `A`.
//!
//! The realization follows the space kind: diagonal exponentials on spectral
//! spaces, right shifts `h(x) -> h(x + t)` on weighted grids (linear
//! interpolation between nodes, last value held beyond the last maturity), and
//! blockwise action on product spaces.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hilbert::{grid_derivative, HVector, SpaceDescriptor, SpaceKind};

/// Extrapolation rule for the shift semigroup beyond the last grid maturity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftExtension {
    HoldLastValue,
}

#[derive(Debug, Clone)]
pub enum SemigroupKind {
    SpectralDiagonal,
    GridShift { extension: ShiftExtension },
    Product { components: Vec<SemigroupModel> },
}

#[derive(Debug, Clone)]
pub struct SemigroupModel {
    space: Arc<SpaceDescriptor>,
    kind: SemigroupKind,
}

// Gauss-Legendre 4-point rule on [-1, 1].
const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_85,
    0.652_145_154_862_546_2,
    0.652_145_154_862_546_2,
    0.347_854_845_137_453_85,
];

impl SemigroupModel {
    /// The natural semigroup of a space: diagonal for spectral spaces, shift
    /// for weighted grids, blockwise for products.
    pub fn new(space: Arc<SpaceDescriptor>) -> Self {
        let kind = match space.kind() {
            SpaceKind::Spectral { .. } => SemigroupKind::SpectralDiagonal,
            SpaceKind::WeightedGrid { .. } => {
                SemigroupKind::GridShift { extension: ShiftExtension::HoldLastValue }
            }
            SpaceKind::Product { factors } => SemigroupKind::Product {
                components: factors
                    .iter()
                    .map(|f| SemigroupModel::new(Arc::new(f.clone())))
                    .collect(),
            },
        };
        Self { space, kind }
    }

    pub fn space(&self) -> &Arc<SpaceDescriptor> {
        &self.space
    }

    pub fn kind(&self) -> &SemigroupKind {
        &self.kind
    }

    /// Whether `S_s S_t = S_{s+t}` holds up to roundoff in this realization.
    /// Interpolated shifts only compose approximately.
    pub fn exact_composition(&self) -> bool {
        match &self.kind {
            SemigroupKind::SpectralDiagonal => true,
            SemigroupKind::GridShift { .. } => false,
            SemigroupKind::Product { components } => components.iter().all(|c| c.exact_composition()),
        }
    }

    pub fn apply(&self, t: f64, v: &HVector) -> Result<HVector> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::argument(format!("semigroup time must be nonnegative, got {t}")));
        }
        v.check_space(&self.space)?;
        if t == 0.0 {
            return Ok(v.clone());
        }
        let mut out = vec![0.0; v.dim()];
        self.apply_raw(t, v.coeffs(), &mut out);
        Ok(HVector::from_raw(self.space.clone(), out))
    }

    pub fn generator_apply(&self, v: &HVector) -> Result<HVector> {
        v.check_space(&self.space)?;
        let mut out = vec![0.0; v.dim()];
        self.generator_raw(v.coeffs(), &mut out);
        Ok(HVector::from_raw(self.space.clone(), out))
    }

    /// `∫_0^τ S_{τ-u} f du`. Exact on spectral blocks; other blocks use
    /// Gauss-Legendre 4-point quadrature on `pieces` equal subintervals.
    pub fn convolve_const(&self, tau: f64, f: &HVector, pieces: usize) -> Result<HVector> {
        f.check_space(&self.space)?;
        let mut out = vec![0.0; f.dim()];
        self.convolve_raw(tau, f.coeffs(), None, pieces.max(1), &mut out);
        Ok(HVector::from_raw(self.space.clone(), out))
    }

    /// `∫_0^τ S_{τ-u} [(1 - u/τ) f0 + (u/τ) f1] du`, the convolution of the
    /// linear interpolant between `f0` at the left end and `f1` at the right end.
    pub fn convolve_linear(
        &self,
        tau: f64,
        f0: &HVector,
        f1: &HVector,
        pieces: usize,
    ) -> Result<HVector> {
        f0.check_space(&self.space)?;
        f1.check_space(&self.space)?;
        let mut out = vec![0.0; f0.dim()];
        self.convolve_raw(tau, f0.coeffs(), Some(f1.coeffs()), pieces.max(1), &mut out);
        Ok(HVector::from_raw(self.space.clone(), out))
    }

    pub(crate) fn apply_raw(&self, t: f64, src: &[f64], dst: &mut [f64]) {
        match (&self.kind, self.space.kind()) {
            (SemigroupKind::SpectralDiagonal, SpaceKind::Spectral { eigenvalues }) => {
                for ((d, s), l) in dst.iter_mut().zip(src).zip(eigenvalues) {
                    *d = s * (l * t).exp();
                }
            }
            (SemigroupKind::GridShift { .. }, SpaceKind::WeightedGrid { grid, .. }) => {
                for (d, x) in dst.iter_mut().zip(grid) {
                    *d = interpolate(grid, src, x + t);
                }
            }
            (SemigroupKind::Product { components }, _) => {
                let mut start = 0;
                for c in components {
                    let n = c.space.dim();
                    c.apply_raw(t, &src[start..start + n], &mut dst[start..start + n]);
                    start += n;
                }
            }
            _ => unreachable!("semigroup kind always matches its space kind"),
        }
    }

    fn generator_raw(&self, src: &[f64], dst: &mut [f64]) {
        match (&self.kind, self.space.kind()) {
            (SemigroupKind::SpectralDiagonal, SpaceKind::Spectral { eigenvalues }) => {
                for ((d, s), l) in dst.iter_mut().zip(src).zip(eigenvalues) {
                    *d = l * s;
                }
            }
            (SemigroupKind::GridShift { .. }, SpaceKind::WeightedGrid { grid, .. }) => {
                dst.copy_from_slice(&grid_derivative(grid, src));
            }
            (SemigroupKind::Product { components }, _) => {
                let mut start = 0;
                for c in components {
                    let n = c.space.dim();
                    c.generator_raw(&src[start..start + n], &mut dst[start..start + n]);
                    start += n;
                }
            }
            _ => unreachable!("semigroup kind always matches its space kind"),
        }
    }

    fn convolve_raw(&self, tau: f64, f0: &[f64], f1: Option<&[f64]>, pieces: usize, dst: &mut [f64]) {
        match (&self.kind, self.space.kind()) {
            (SemigroupKind::SpectralDiagonal, SpaceKind::Spectral { eigenvalues }) => {
                for (k, l) in eigenvalues.iter().enumerate() {
                    let z = l * tau;
                    dst[k] = match f1 {
                        None => (tau * phi1(z)) * f0[k],
                        Some(f1) => {
                            let p2 = phi2(z);
                            tau * ((phi1(z) - p2) * f0[k] + p2 * f1[k])
                        }
                    };
                }
            }
            (SemigroupKind::GridShift { .. }, SpaceKind::WeightedGrid { .. }) => {
                let n = f0.len();
                dst.iter_mut().for_each(|d| *d = 0.0);
                let len = tau / pieces as f64;
                let mut g = vec![0.0; n];
                let mut sg = vec![0.0; n];
                for p in 0..pieces {
                    let a = p as f64 * len;
                    for (xq, wq) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                        let u = a + 0.5 * len * (1.0 + xq);
                        let w = 0.5 * len * wq;
                        match f1 {
                            None => g.copy_from_slice(f0),
                            Some(f1) => {
                                let s = u / tau;
                                for i in 0..n {
                                    g[i] = (1.0 - s) * f0[i] + s * f1[i];
                                }
                            }
                        }
                        self.apply_raw(tau - u, &g, &mut sg);
                        for i in 0..n {
                            dst[i] += w * sg[i];
                        }
                    }
                }
            }
            (SemigroupKind::Product { components }, _) => {
                let mut start = 0;
                for c in components {
                    let n = c.space.dim();
                    let r = start..start + n;
                    c.convolve_raw(tau, &f0[r.clone()], f1.map(|f| &f[r.clone()]), pieces, &mut dst[r]);
                    start += n;
                }
            }
            _ => unreachable!("semigroup kind always matches its space kind"),
        }
    }
}

/// Linear interpolation of grid samples, holding the last value beyond the grid.
pub fn interpolate(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let n = grid.len();
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[n - 1] {
        return values[n - 1];
    }
    let i = grid.partition_point(|g| *g <= x) - 1;
    let w = (x - grid[i]) / (grid[i + 1] - grid[i]);
    if w == 0.0 {
        values[i]
    } else {
        (1.0 - w) * values[i] + w * values[i + 1]
    }
}

/// `(e^z - 1) / z`, equal to 1 at `z = 0`.
pub fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// `(e^z - 1 - z) / z^2`, equal to 1/2 at `z = 0`.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-2 {
        // Taylor series, truncation below 1e-17 for |z| < 1e-2
        0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0 + z * (1.0 / 720.0 + z / 5040.0))))
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Spectral-diagonal semigroup with eigenvalues `scale * λ_k + shift`.
///
/// With Dirichlet sine modes on `(0, π)` (`λ_k = -k²`) this realizes both
/// `Δ - m²` (scale 1, shift `-m²`) and `(λ²Δ - id)/τ` (scale `λ²/τ`, shift `-1/τ`).
pub fn build_perturbed_spectral(base: &[f64], scale: f64, shift: f64) -> Result<SemigroupModel> {
    if !scale.is_finite() || !shift.is_finite() {
        return Err(Error::parameter("scale and shift must be finite"));
    }
    let eig = base.iter().map(|l| scale * l + shift).collect();
    Ok(SemigroupModel::new(SpaceDescriptor::spectral(eig)?))
}

/// `-k²` for `k = 1..=modes`: the Dirichlet Laplacian on `(0, π)` in the `sin(kx)` basis.
pub fn dirichlet_laplacian_eigenvalues(modes: usize) -> Vec<f64> {
    (1..=modes).map(|k| -((k * k) as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spectral(eig: Vec<f64>) -> SemigroupModel {
        SemigroupModel::new(SpaceDescriptor::spectral(eig).unwrap())
    }

    fn uniform_grid(n: usize, dx: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dx).collect()
    }

    #[test]
    fn identity_at_zero() {
        let s = spectral(vec![-1.0, -4.0]);
        let v = HVector::new(s.space().clone(), vec![0.3, -1.2]).unwrap();
        assert_eq!(s.apply(0.0, &v).unwrap(), v);
        let g = SemigroupModel::new(SpaceDescriptor::weighted_grid(vec![0.0, 0.5, 2.0], 1.0).unwrap());
        let w = HVector::new(g.space().clone(), vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.apply(0.0, &w).unwrap(), w);
    }

    #[test]
    fn rejects_negative_time_and_foreign_vectors() {
        let s = spectral(vec![-1.0]);
        let v = HVector::new(s.space().clone(), vec![1.0]).unwrap();
        assert!(matches!(s.apply(-0.1, &v), Err(Error::Argument(_))));
        let other = HVector::new(SpaceDescriptor::spectral(vec![-2.0]).unwrap(), vec![1.0]).unwrap();
        assert!(matches!(s.apply(0.1, &other), Err(Error::Structural(_))));
        assert!(s.generator_apply(&other).is_err());
    }

    #[test]
    fn spectral_decay_halves_at_ln2() {
        let s = spectral(vec![-1.0]);
        let v = HVector::new(s.space().clone(), vec![1.0]).unwrap();
        let out = s.apply(std::f64::consts::LN_2, &v).unwrap();
        assert!((out.coeffs()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shift_of_exponential_curve() {
        let grid = uniform_grid(201, 0.05);
        let s = SemigroupModel::new(SpaceDescriptor::weighted_grid(grid.clone(), 1.0).unwrap());
        let v = HVector::new(s.space().clone(), grid.iter().map(|x| (-x).exp()).collect()).unwrap();
        let out = s.apply(1.0, &v).unwrap();
        // exact where x + 1 stays inside the grid and lands on nodes
        for (x, y) in grid.iter().zip(out.coeffs()) {
            if x + 1.0 <= 10.0 {
                assert!((y - (-(x + 1.0)).exp()).abs() < 1e-12);
            }
        }
        // off-node shift: linear interpolation error ≤ dx²/8 max|h''|
        let out = s.apply(0.33, &v).unwrap();
        for (x, y) in grid.iter().zip(out.coeffs()) {
            if x + 0.33 <= 10.0 {
                assert!((y - (-(x + 0.33)).exp()).abs() < 0.05 * 0.05 / 8.0 + 1e-15);
            }
        }
    }

    #[test]
    fn generator_examples() {
        let s = spectral(vec![-4.0, -9.0]);
        let v = HVector::new(s.space().clone(), vec![1.0, 1.0]).unwrap();
        assert_eq!(s.generator_apply(&v).unwrap().coeffs(), &[-4.0, -9.0]);

        let grid = vec![0.0, 0.5, 1.0, 2.0, 3.5];
        let g = SemigroupModel::new(SpaceDescriptor::weighted_grid(grid.clone(), 1.0).unwrap());
        let w = HVector::new(g.space().clone(), grid.iter().map(|x| 2.0 * x).collect()).unwrap();
        for d in g.generator_apply(&w).unwrap().coeffs()[1..4].iter() {
            assert!((d - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_matches_time_derivative() {
        let s = spectral(vec![-1.0, -4.0, -9.0, 0.5]);
        let v = HVector::new(s.space().clone(), vec![0.7, -0.2, 1.3, 0.4]).unwrap();
        let eps = 1e-7;
        // central difference around t0 = eps (the realization has no negative times)
        let plus = s.apply(2.0 * eps, &v).unwrap();
        let fd = plus.sub(&v).unwrap().scale(1.0 / (2.0 * eps));
        let av = s.generator_apply(&s.apply(eps, &v).unwrap()).unwrap();
        let rel = fd.sub(&av).unwrap().norm() / av.norm();
        assert!(rel < 1e-5, "{rel}");
        let rel0 = fd.sub(&s.generator_apply(&v).unwrap()).unwrap().norm() / av.norm();
        assert!(rel0 < 1e-5, "{rel0}");
    }

    #[test]
    fn perturbed_spectral_examples() {
        let base = dirichlet_laplacian_eigenvalues(3);
        let q0 = build_perturbed_spectral(&base, 1.0, 0.0).unwrap();
        let q2 = build_perturbed_spectral(&base, 1.0, -4.0).unwrap();
        let eig = |s: &SemigroupModel| match s.space().kind() {
            SpaceKind::Spectral { eigenvalues } => eigenvalues.clone(),
            _ => unreachable!(),
        };
        assert_eq!(eig(&q0), vec![-1.0, -4.0, -9.0]);
        assert_eq!(eig(&q2), vec![-5.0, -8.0, -13.0]);
        let (lambda, tau): (f64, f64) = (1.0, 2.0);
        let cable = build_perturbed_spectral(&base[..1], lambda * lambda / tau, -1.0 / tau).unwrap();
        assert_eq!(eig(&cable), vec![-1.0]);
        assert!(build_perturbed_spectral(&base, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn sine_modes_are_dirichlet_eigenfunctions() {
        // second difference of sin(kx) against -k² sin(kx)
        let h = 1e-4;
        for k in 1..=5 {
            let kf = k as f64;
            for x in [0.3, 1.1, 2.7] {
                let f = |y: f64| (kf * y).sin();
                let d2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
                assert!((d2 + kf * kf * f(x)).abs() < 1e-4 * kf * kf);
            }
            assert!((kf * std::f64::consts::PI).sin().abs() < 1e-14);
        }
    }

    #[test]
    fn semigroup_law_spectral() {
        let s = spectral(dirichlet_laplacian_eigenvalues(8));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let v = HVector::new(s.space().clone(), (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let lhs = s.apply(a, &s.apply(b, &v).unwrap()).unwrap();
            let rhs = s.apply(a + b, &v).unwrap();
            assert!(lhs.distance(&rhs).unwrap() <= 1e-10 * v.norm());
            assert!(s.apply(a, &v).unwrap().norm() <= v.norm() + 1e-15);
        }
    }

    #[test]
    fn semigroup_law_grid_shift_within_interpolation_tolerance() {
        let grid = uniform_grid(401, 0.025);
        let s = SemigroupModel::new(SpaceDescriptor::weighted_grid(grid.clone(), 0.5).unwrap());
        let v = HVector::new(s.space().clone(), grid.iter().map(|x| 0.03 + 0.02 * (-x).exp()).collect())
            .unwrap();
        for (a, b) in [(0.013, 0.4), (0.31, 0.27), (1.0, 0.0125)] {
            let lhs = s.apply(a, &s.apply(b, &v).unwrap()).unwrap();
            let rhs = s.apply(a + b, &v).unwrap();
            let max_abs = lhs
                .coeffs()
                .iter()
                .zip(rhs.coeffs())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max_abs < 0.02 * 0.025 * 0.025, "{max_abs}");
        }
    }

    #[test]
    fn time_lipschitz_ratio_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spectral_sg = spectral(dirichlet_laplacian_eigenvalues(12));
        let grid = uniform_grid(121, 0.25);
        let shift_sg = SemigroupModel::new(SpaceDescriptor::weighted_grid(grid.clone(), 0.5).unwrap());
        for sg in [&spectral_sg, &shift_sg] {
            let mut worst: f64 = 0.0;
            for _ in 0..200 {
                let coeffs: Vec<f64> = match sg.space().kind() {
                    SpaceKind::Spectral { .. } => {
                        (1..=12).map(|k| rng.random_range(-1.0..1.0) / (k * k) as f64).collect()
                    }
                    _ => {
                        let (a, c) = (rng.random_range(-0.05..0.05), rng.random_range(0.2..2.0));
                        grid.iter().map(|x| 0.02 + a * (-c * x).exp()).collect()
                    }
                };
                let v = HVector::new(sg.space().clone(), coeffs).unwrap();
                let t1 = rng.random_range(0.0..1.0);
                let t2 = t1 + rng.random_range(1e-3..0.5);
                let d = sg.apply(t2, &v).unwrap().distance(&sg.apply(t1, &v).unwrap()).unwrap();
                let gn = crate::hilbert::graph_norm(&v, sg).unwrap();
                worst = worst.max(d / (gn * (t2 - t1)));
            }
            assert!(worst.is_finite() && worst < 10.0, "ratio {worst}");
        }
    }

    #[test]
    fn spectral_convolutions_match_quadrature() {
        let s = spectral(vec![-7.0, 0.0, -0.001, 2.0]);
        let f0 = HVector::new(s.space().clone(), vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let f1 = HVector::new(s.space().clone(), vec![-0.5, 1.0, 3.0, 0.25]).unwrap();
        let tau = 0.3;
        let exact = s.convolve_linear(tau, &f0, &f1, 1).unwrap();
        // composite midpoint oracle
        let n = 200_000;
        let mut acc = vec![0.0; 4];
        let eig = [-7.0, 0.0, -0.001, 2.0];
        for i in 0..n {
            let u = (i as f64 + 0.5) * tau / n as f64;
            for k in 0..4 {
                let g = (1.0 - u / tau) * f0.coeffs()[k] + (u / tau) * f1.coeffs()[k];
                acc[k] += (eig[k] * (tau - u)).exp() * g * tau / n as f64;
            }
        }
        for k in 0..4 {
            assert!((exact.coeffs()[k] - acc[k]).abs() < 1e-9, "{k}");
        }
        let c = s.convolve_const(tau, &f0, 1).unwrap();
        let l = s.convolve_linear(tau, &f0, &f0, 1).unwrap();
        assert!(c.distance(&l).unwrap() < 1e-14);
    }

    #[test]
    fn phi_functions_are_continuous_at_zero() {
        for z in [1e-12f64, 1e-6, 9e-3, 1.1e-2, -9e-3, -1.1e-2] {
            let p1 = z.exp_m1() / z;
            assert!((phi1(z) - p1).abs() < 1e-12);
            assert!((phi2(z) - (0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0)).abs() < 1e-10);
        }
        assert_eq!(phi1(0.0), 1.0);
        assert_eq!(phi2(0.0), 0.5);
    }
}
