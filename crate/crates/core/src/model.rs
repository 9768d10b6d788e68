//! SPDE model bundles: semigroup, drift, volatilities and their Jacobian
//! actions, plus the Stratonovich correction `ρ(x) = Σ_j Dσ_j(x)[σ_j(x)]`.
//!
//! The stored drift `b` is the one that enters the Wong-Zakai equation. The
//! Itô drift driving the SPDE and the Euler schemes is `b̂ = b + ρ/2`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{HVector, SpaceDescriptor, SpaceKind};
use crate::semigroup::SemigroupModel;

pub type VectorField = Arc<dyn Fn(&HVector) -> HVector + Send + Sync>;
/// `(x, h) -> Dσ(x)[h]`
pub type JacobianAction = Arc<dyn Fn(&HVector, &HVector) -> HVector + Send + Sync>;

#[derive(Clone)]
pub struct Volatility {
    pub field: VectorField,
    pub jacobian: JacobianAction,
}

impl Volatility {
    pub fn new(
        field: impl Fn(&HVector) -> HVector + Send + Sync + 'static,
        jacobian: impl Fn(&HVector, &HVector) -> HVector + Send + Sync + 'static,
    ) -> Self {
        Self { field: Arc::new(field), jacobian: Arc::new(jacobian) }
    }

    /// Constant (additive) volatility with zero Jacobian.
    pub fn constant(value: HVector) -> Self {
        let zero = HVector::zeros(value.space().clone());
        Self::new(move |_| value.clone(), move |_, _| zero.clone())
    }

    /// Volatility whose Jacobian is approximated by central differences with step `eps`.
    pub fn with_finite_difference_jacobian(
        field: impl Fn(&HVector) -> HVector + Send + Sync + 'static,
        eps: f64,
    ) -> Self {
        let field: VectorField = Arc::new(field);
        let f = field.clone();
        let jacobian: JacobianAction = Arc::new(move |x, h| fd_directional(&f, x, h, eps));
        Self { field, jacobian }
    }
}

fn fd_directional(f: &VectorField, x: &HVector, h: &HVector, eps: f64) -> HVector {
    let mut xp = x.clone();
    let mut xm = x.clone();
    for ((p, m), d) in xp.coeffs_mut().iter_mut().zip(xm.coeffs_mut()).zip(h.coeffs()) {
        *p += eps * d;
        *m -= eps * d;
    }
    let fp = f(&xp);
    let fm = f(&xm);
    let coeffs = fp.coeffs().iter().zip(fm.coeffs()).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
    HVector::from_raw(fp.space().clone(), coeffs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianSource {
    Analytic,
    /// Central differences; flagged because `ρ` then carries differencing error.
    FiniteDifference,
}

/// Declared constants, used for documentation and the sampled bound checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    pub drift_lipschitz: Option<f64>,
    pub drift_sup: Option<f64>,
    /// Common bound `C` on `‖σ_j‖`, `‖Dσ_j‖` and `‖D²σ_j‖`.
    pub vol_c2: Option<f64>,
}

#[derive(Clone)]
pub struct SpdeModel {
    name: String,
    semigroup: SemigroupModel,
    drift: VectorField,
    vols: Vec<Volatility>,
    jacobian_source: JacobianSource,
    bounds: DeclaredBounds,
    oracle_only: bool,
}

impl fmt::Debug for SpdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdeModel")
            .field("name", &self.name)
            .field("dim", &self.space().dim())
            .field("noise_dim", &self.vols.len())
            .field("jacobian_source", &self.jacobian_source)
            .field("bounds", &self.bounds)
            .field("oracle_only", &self.oracle_only)
            .finish()
    }
}

impl SpdeModel {
    /// Model whose Wong-Zakai drift is `drift`.
    pub fn new(
        name: impl Into<String>,
        semigroup: SemigroupModel,
        drift: impl Fn(&HVector) -> HVector + Send + Sync + 'static,
        vols: Vec<Volatility>,
    ) -> Result<Self> {
        if vols.is_empty() {
            return Err(Error::parameter("a model needs at least one noise channel"));
        }
        Ok(Self {
            name: name.into(),
            semigroup,
            drift: Arc::new(drift),
            vols,
            jacobian_source: JacobianSource::Analytic,
            bounds: DeclaredBounds::default(),
            oracle_only: false,
        })
    }

    /// Model specified by its Itô drift; the stored drift becomes `ito - ρ/2`.
    pub fn from_ito_drift(
        name: impl Into<String>,
        semigroup: SemigroupModel,
        ito_drift: impl Fn(&HVector) -> HVector + Send + Sync + 'static,
        vols: Vec<Volatility>,
    ) -> Result<Self> {
        let vols_for_rho = vols.clone();
        let drift = move |x: &HVector| {
            let mut out = ito_drift(x);
            let rho = correction_of(&vols_for_rho, x);
            for (o, r) in out.coeffs_mut().iter_mut().zip(rho.coeffs()) {
                *o -= 0.5 * r;
            }
            out
        };
        Self::new(name, semigroup, drift, vols)
    }

    /// Zero drift.
    pub fn driftless(name: impl Into<String>, semigroup: SemigroupModel, vols: Vec<Volatility>) -> Result<Self> {
        let space = semigroup.space().clone();
        let zero = HVector::zeros(space);
        Self::new(name, semigroup, move |_| zero.clone(), vols)
    }

    pub fn with_bounds(mut self, bounds: DeclaredBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_jacobian_source(mut self, source: JacobianSource) -> Self {
        self.jacobian_source = source;
        self
    }

    /// Marks models kept only as exact-solution oracles (e.g. unbounded σ).
    pub fn oracle_only(mut self) -> Self {
        self.oracle_only = true;
        self
    }

    /// Copy whose Jacobian actions are multiplied by `factor`. A factor other
    /// than 1 produces a deliberately wrong model for negative controls.
    pub fn with_scaled_jacobians(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.vols = self
            .vols
            .iter()
            .map(|v| {
                let jac = v.jacobian.clone();
                Volatility {
                    field: v.field.clone(),
                    jacobian: Arc::new(move |x, h| jac(x, h).scale(factor)),
                }
            })
            .collect();
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn semigroup(&self) -> &SemigroupModel {
        &self.semigroup
    }

    pub fn space(&self) -> &Arc<SpaceDescriptor> {
        self.semigroup.space()
    }

    pub fn noise_dim(&self) -> usize {
        self.vols.len()
    }

    pub fn bounds(&self) -> &DeclaredBounds {
        &self.bounds
    }

    pub fn jacobian_source(&self) -> JacobianSource {
        self.jacobian_source
    }

    pub fn is_oracle_only(&self) -> bool {
        self.oracle_only
    }

    pub fn drift(&self, x: &HVector) -> Result<HVector> {
        x.check_space(self.space())?;
        Ok((self.drift)(x))
    }

    pub fn vol(&self, j: usize, x: &HVector) -> Result<HVector> {
        x.check_space(self.space())?;
        let v = self.vols.get(j).ok_or_else(|| Error::argument(format!("no noise channel {j}")))?;
        Ok((v.field)(x))
    }

    pub fn vol_jacobian(&self, j: usize, x: &HVector, direction: &HVector) -> Result<HVector> {
        x.check_space(self.space())?;
        direction.check_space(self.space())?;
        let v = self.vols.get(j).ok_or_else(|| Error::argument(format!("no noise channel {j}")))?;
        Ok((v.jacobian)(x, direction))
    }

    /// `ρ(x) = Σ_j Dσ_j(x)[σ_j(x)]`.
    pub fn stratonovich_correction(&self, x: &HVector) -> Result<HVector> {
        x.check_space(self.space())?;
        Ok(correction_of(&self.vols, x))
    }

    /// `b̂(x) = b(x) + ρ(x)/2`, the Itô drift.
    pub fn drift_hat(&self, x: &HVector) -> Result<HVector> {
        let mut out = self.drift(x)?;
        let rho = correction_of(&self.vols, x);
        for (o, r) in out.coeffs_mut().iter_mut().zip(rho.coeffs()) {
            *o += 0.5 * r;
        }
        Ok(out)
    }
}

fn correction_of(vols: &[Volatility], x: &HVector) -> HVector {
    let mut acc = HVector::zeros(x.space().clone());
    for v in vols {
        let s = (v.field)(x);
        let d = (v.jacobian)(x, &s);
        for (a, b) in acc.coeffs_mut().iter_mut().zip(d.coeffs()) {
            *a += b;
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub passed: bool,
    pub jacobian_source: JacobianSource,
    pub probes: Vec<ProbeResult>,
    /// Sampled constants: sup of Lipschitz ratios and of `‖ρ‖`.
    pub measured_drift_lipschitz: f64,
    pub measured_vol_lipschitz: f64,
    pub measured_rho_sup: f64,
    pub measured_rho_lipschitz: f64,
}

impl ValidationReport {
    pub fn failed_probes(&self) -> impl Iterator<Item = &ProbeResult> {
        self.probes.iter().filter(|p| !p.passed)
    }
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub samples: usize,
    pub seed: u64,
    pub fd_step: f64,
    pub jacobian_tol: f64,
    pub linearity_tol: f64,
    /// Multiplicative slack on declared-bound checks.
    pub bound_slack: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { samples: 64, seed: 0x5eed, fd_step: 1e-5, jacobian_tol: 1e-5, linearity_tol: 1e-10, bound_slack: 1.1 }
    }
}

/// Smooth random probe in `space`: decaying spectral coefficients, smooth
/// exponential curves on grids, blockwise on products.
pub fn random_probe<R: Rng>(space: &Arc<SpaceDescriptor>, scale: f64, rng: &mut R) -> HVector {
    let mut coeffs = Vec::with_capacity(space.dim());
    fill_probe(space, scale, rng, &mut coeffs);
    HVector::from_raw(space.clone(), coeffs)
}

fn fill_probe<R: Rng>(space: &SpaceDescriptor, scale: f64, rng: &mut R, out: &mut Vec<f64>) {
    match space.kind() {
        SpaceKind::Spectral { eigenvalues } => {
            for k in 0..eigenvalues.len() {
                let decay = 1.0 / (1.0 + k as f64);
                out.push(scale * decay * rng.random_range(-1.0..1.0));
            }
        }
        SpaceKind::WeightedGrid { grid, .. } => {
            let level = scale * rng.random_range(-1.0..1.0);
            let amp = scale * rng.random_range(-1.0..1.0);
            let rate = rng.random_range(0.3..2.0);
            out.extend(grid.iter().map(|x| level + amp * (-rate * x).exp()));
        }
        SpaceKind::Product { factors } => {
            for f in factors {
                fill_probe(f, scale, rng, out);
            }
        }
    }
}

/// Sampled checks of the model assumptions: Jacobians against central
/// differences, linearity of Jacobian actions, determinism of all maps,
/// Lipschitz ratios, and (when bounds are declared) `‖ρ‖ ≤ rC²` and
/// `Lip(ρ) ≤ 2rC²`. Failures are reported, never raised.
pub fn validate_model(model: &SpdeModel, opts: &ValidationOptions) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let space = model.space().clone();
    let r = model.noise_dim();

    let mut jac_worst: f64 = 0.0;
    let mut lin_worst: f64 = 0.0;
    let mut deterministic = true;
    let mut finite = true;
    let mut lip_b: f64 = 0.0;
    let mut lip_s: f64 = 0.0;
    let mut lip_rho: f64 = 0.0;
    let mut rho_sup: f64 = 0.0;

    for _ in 0..opts.samples {
        let x = random_probe(&space, 1.0, &mut rng);
        let y = random_probe(&space, 1.0, &mut rng);
        let h1 = random_probe(&space, 1.0, &mut rng);
        let h2 = random_probe(&space, 1.0, &mut rng);
        let (a, c) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));

        let bx = (model.drift)(&x);
        let bx2 = (model.drift)(&x);
        deterministic &= bx.coeffs() == bx2.coeffs();
        finite &= bx.is_finite();
        let by = (model.drift)(&y);
        let dxy = x.distance(&y).unwrap_or(f64::NAN);
        if dxy > 0.0 {
            lip_b = lip_b.max(by.distance(&bx).unwrap_or(f64::NAN) / dxy);
        }

        for v in &model.vols {
            let sx = (v.field)(&x);
            deterministic &= sx.coeffs() == (v.field)(&x).coeffs();
            finite &= sx.is_finite();
            if dxy > 0.0 {
                lip_s = lip_s.max((v.field)(&y).distance(&sx).unwrap_or(f64::NAN) / dxy);
            }

            let analytic = (v.jacobian)(&x, &h1);
            deterministic &= analytic.coeffs() == (v.jacobian)(&x, &h1).coeffs();
            let fd = fd_directional(&v.field, &x, &h1, opts.fd_step);
            let err = fd.distance(&analytic).unwrap_or(f64::NAN);
            let rel = if err == 0.0 { 0.0 } else { err / analytic.norm().max(fd.norm()).max(1e-8) };
            jac_worst = jac_worst.max(if rel.is_nan() { f64::INFINITY } else { rel });

            let mut combo = h1.scale(a);
            combo.axpy(c, &h2).ok();
            let lhs = (v.jacobian)(&x, &combo);
            let mut rhs = analytic.scale(a);
            rhs.axpy(c, &(v.jacobian)(&x, &h2)).ok();
            let err = lhs.distance(&rhs).unwrap_or(f64::NAN);
            let rel = if err == 0.0 { 0.0 } else { err / lhs.norm().max(rhs.norm()).max(1e-12) };
            lin_worst = lin_worst.max(if rel.is_nan() { f64::INFINITY } else { rel });
        }

        let rx = correction_of(&model.vols, &x);
        let ry = correction_of(&model.vols, &y);
        rho_sup = rho_sup.max(rx.norm()).max(ry.norm());
        if dxy > 0.0 {
            lip_rho = lip_rho.max(rx.distance(&ry).unwrap_or(f64::NAN) / dxy);
        }
    }

    let mut probes = vec![
        ProbeResult {
            name: "jacobian-vs-finite-difference".into(),
            passed: jac_worst < opts.jacobian_tol,
            measured: jac_worst,
            threshold: opts.jacobian_tol,
            detail: format!("worst relative error over {} probes, step {}", opts.samples, opts.fd_step),
        },
        ProbeResult {
            name: "jacobian-linearity".into(),
            passed: lin_worst < opts.linearity_tol,
            measured: lin_worst,
            threshold: opts.linearity_tol,
            detail: "Dσ_j(x)[a h1 + c h2] against a Dσ_j(x)[h1] + c Dσ_j(x)[h2]".into(),
        },
        ProbeResult {
            name: "determinism".into(),
            passed: deterministic,
            measured: if deterministic { 0.0 } else { 1.0 },
            threshold: 0.0,
            detail: "repeated evaluations are bit-identical".into(),
        },
        ProbeResult {
            name: "finiteness".into(),
            passed: finite,
            measured: if finite { 0.0 } else { 1.0 },
            threshold: 0.0,
            detail: "drift and volatilities finite on probes".into(),
        },
    ];
    if let Some(c) = model.bounds.vol_c2 {
        let rc2 = r as f64 * c * c;
        probes.push(ProbeResult {
            name: "rho-bounded".into(),
            passed: rho_sup <= opts.bound_slack * rc2,
            measured: rho_sup,
            threshold: opts.bound_slack * rc2,
            detail: "sampled sup ‖ρ(x)‖ against r C²".into(),
        });
        probes.push(ProbeResult {
            name: "rho-lipschitz".into(),
            passed: lip_rho <= opts.bound_slack * 2.0 * rc2,
            measured: lip_rho,
            threshold: opts.bound_slack * 2.0 * rc2,
            detail: "sampled Lipschitz ratio of ρ against 2 r C²".into(),
        });
    }
    if let Some(l) = model.bounds.drift_lipschitz {
        probes.push(ProbeResult {
            name: "drift-lipschitz".into(),
            passed: lip_b <= opts.bound_slack * l,
            measured: lip_b,
            threshold: opts.bound_slack * l,
            detail: "sampled Lipschitz ratio of b".into(),
        });
    }

    ValidationReport {
        model: model.name.clone(),
        passed: probes.iter().all(|p| p.passed),
        jacobian_source: model.jacobian_source,
        probes,
        measured_drift_lipschitz: lip_b,
        measured_vol_lipschitz: lip_s,
        measured_rho_sup: rho_sup,
        measured_rho_lipschitz: lip_rho,
    }
}
