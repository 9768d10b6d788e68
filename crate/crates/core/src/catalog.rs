//! Built-in models and their serializable descriptions.
//!
//! Spectral models live on Dirichlet sine modes `k = 1..=modes` of `(0, π)`.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{HVector, SpaceDescriptor};
use crate::hjmm::{build_hjmm_model, ForwardCurve, HjmmParams, HjmmState};
use crate::model::{DeclaredBounds, SpdeModel, Volatility};
use crate::semigroup::{build_perturbed_spectral, dirichlet_laplacian_eigenvalues, SemigroupModel};

fn check_modes(modes: usize, channels: usize) -> Result<()> {
    if modes == 0 {
        return Err(Error::parameter("need at least one mode"));
    }
    if channels == 0 {
        return Err(Error::parameter("need at least one noise channel"));
    }
    Ok(())
}

/// Additive noise coefficients `c_{j,k} = ± amplitude / ((j + 1) k²)`; channel
/// `j` flips the sign of every other mode when `j` is odd so channels are not
/// collinear.
fn additive_coefficients(modes: usize, j: usize, amplitude: f64) -> Vec<f64> {
    (1..=modes)
        .map(|k| {
            let sign = if j % 2 == 1 && k % 2 == 0 { -1.0 } else { 1.0 };
            sign * amplitude / ((j + 1) as f64 * (k * k) as f64)
        })
        .collect()
}

fn additive_model(name: &str, semigroup: SemigroupModel, channels: usize, amplitude: f64) -> Result<SpdeModel> {
    let space = semigroup.space().clone();
    let modes = space.dim();
    let vols = (0..channels)
        .map(|j| Ok(Volatility::constant(HVector::new(space.clone(), additive_coefficients(modes, j, amplitude))?)))
        .collect::<Result<Vec<_>>>()?;
    let c = (0..channels)
        .map(|j| HVector::from_raw(space.clone(), additive_coefficients(modes, j, amplitude)).norm())
        .fold(0.0, f64::max);
    Ok(SpdeModel::driftless(name, semigroup, vols)?.with_bounds(DeclaredBounds {
        drift_lipschitz: Some(0.0),
        drift_sup: Some(0.0),
        vol_c2: Some(c),
    }))
}

/// `dX = (Δ - mass²)X dt + Σ_j c_j dB^j`. With `mass = 0` this is the additive
/// stochastic heat equation.
pub fn quantization(modes: usize, mass: f64, channels: usize, amplitude: f64) -> Result<SpdeModel> {
    check_modes(modes, channels)?;
    let sg = build_perturbed_spectral(&dirichlet_laplacian_eigenvalues(modes), 1.0, -mass * mass)?;
    additive_model("quantization", sg, channels, amplitude)
}

/// Cable equation `τ ∂_t V = λ² ∂_xx V - V + noise`, eigenvalues `(λ²(-k²) - 1)/τ`.
pub fn cable(modes: usize, length_constant: f64, time_constant: f64, channels: usize, amplitude: f64) -> Result<SpdeModel> {
    check_modes(modes, channels)?;
    if !(time_constant > 0.0) {
        return Err(Error::parameter("time constant must be positive"));
    }
    let scale = length_constant * length_constant / time_constant;
    let sg = build_perturbed_spectral(&dirichlet_laplacian_eigenvalues(modes), scale, -1.0 / time_constant)?;
    additive_model("cable", sg, channels, amplitude)
}

/// Scalar `dX = σX ∘ dB` with `A = 0`: Stratonovich solution `x0 e^{σB}`.
/// Unbounded volatility, so only usable as a closed-form oracle.
pub fn geometric(sigma: f64) -> Result<SpdeModel> {
    if !sigma.is_finite() {
        return Err(Error::parameter("sigma must be finite"));
    }
    let space = SpaceDescriptor::spectral(vec![0.0])?;
    let vol = Volatility::new(move |x: &HVector| x.scale(sigma), move |_, h: &HVector| h.scale(sigma));
    Ok(SpdeModel::driftless("geometric", SemigroupModel::new(space), vec![vol])?.oracle_only())
}

fn nemytskii_coefficients(modes: usize, channels: usize, amplitude: f64) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|j| (1..=modes).map(|k| amplitude / ((j + 1) as f64 * k as f64)).collect())
        .collect()
}

/// Heat equation with multiplicative noise `σ_j(x)_k = c_{j,k} tanh(x_k)`,
/// `c_{j,k} = amplitude / ((j + 1) k)`, and no drift.
pub fn nemytskii_heat(modes: usize, channels: usize, amplitude: f64) -> Result<SpdeModel> {
    nemytskii_heat_with_drift(modes, channels, amplitude, 0.0)
}

/// As [`nemytskii_heat`] plus the bounded drift `b(x)_k = drift · sin(x_k) / k`.
pub fn nemytskii_heat_with_drift(modes: usize, channels: usize, amplitude: f64, drift: f64) -> Result<SpdeModel> {
    check_modes(modes, channels)?;
    let space = SpaceDescriptor::spectral(dirichlet_laplacian_eigenvalues(modes))?;
    let coeffs = nemytskii_coefficients(modes, channels, amplitude);
    let vols = coeffs
        .iter()
        .map(|c| {
            let (c1, c2) = (c.clone(), c.clone());
            let (s1, s2) = (space.clone(), space.clone());
            Volatility::new(
                move |x: &HVector| {
                    HVector::from_raw(s1.clone(), x.coeffs().iter().zip(&c1).map(|(x, c)| c * x.tanh()).collect())
                },
                move |x: &HVector, h: &HVector| {
                    let out = x
                        .coeffs()
                        .iter()
                        .zip(h.coeffs())
                        .zip(&c2)
                        .map(|((x, h), c)| {
                            let t = x.tanh();
                            c * (1.0 - t * t) * h
                        })
                        .collect();
                    HVector::from_raw(s2.clone(), out)
                },
            )
        })
        .collect();
    // ‖σ_j‖ ≤ ‖c_j‖; ‖Dσ_j‖, ‖D²σ_j‖ ≤ max_k |c_{j,k}| ≤ ‖c_j‖.
    let c_bound = coeffs.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let sp = space.clone();
    let b = move |x: &HVector| {
        let out = x.coeffs().iter().enumerate().map(|(i, v)| drift * v.sin() / (i + 1) as f64).collect();
        HVector::from_raw(sp.clone(), out)
    };
    let drift_sup = drift.abs() * (1..=modes).map(|k| 1.0 / (k * k) as f64).sum::<f64>().sqrt();
    Ok(SpdeModel::new("nemytskii_heat", SemigroupModel::new(space), b, vols)?.with_bounds(DeclaredBounds {
        drift_lipschitz: Some(drift.abs()),
        drift_sup: Some(drift_sup),
        vol_c2: Some(c_bound),
    }))
}

fn d_modes() -> usize {
    8
}
fn d_channels() -> usize {
    2
}
fn d_amplitude() -> f64 {
    0.5
}
fn d_one() -> f64 {
    1.0
}
fn d_two() -> f64 {
    2.0
}
fn d_sigma() -> f64 {
    0.3
}
fn d_nem_modes() -> usize {
    16
}
fn d_nem_drift() -> f64 {
    0.5
}

/// Model selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Quantization {
        #[serde(default = "d_modes")]
        modes: usize,
        #[serde(default)]
        mass: f64,
        #[serde(default = "d_channels")]
        channels: usize,
        #[serde(default = "d_amplitude")]
        amplitude: f64,
    },
    Cable {
        #[serde(default = "d_modes")]
        modes: usize,
        #[serde(default = "d_one")]
        length_constant: f64,
        #[serde(default = "d_two")]
        time_constant: f64,
        #[serde(default = "d_channels")]
        channels: usize,
        #[serde(default = "d_amplitude")]
        amplitude: f64,
    },
    Geometric {
        #[serde(default = "d_sigma")]
        sigma: f64,
    },
    NemytskiiHeat {
        #[serde(default = "d_nem_modes")]
        modes: usize,
        #[serde(default = "d_channels")]
        channels: usize,
        #[serde(default = "d_one")]
        amplitude: f64,
        #[serde(default = "d_nem_drift")]
        drift: f64,
    },
    Hjmm(HjmmParams),
}

impl ModelConfig {
    /// Every built-in with default parameters.
    pub fn builtins() -> Vec<ModelConfig> {
        vec![
            ModelConfig::Quantization { modes: d_modes(), mass: 0.0, channels: d_channels(), amplitude: d_amplitude() },
            ModelConfig::Quantization { modes: d_modes(), mass: 1.0, channels: d_channels(), amplitude: d_amplitude() },
            ModelConfig::Cable {
                modes: d_modes(),
                length_constant: 1.0,
                time_constant: 2.0,
                channels: d_channels(),
                amplitude: d_amplitude(),
            },
            ModelConfig::Geometric { sigma: d_sigma() },
            ModelConfig::NemytskiiHeat { modes: d_nem_modes(), channels: d_channels(), amplitude: 1.0, drift: d_nem_drift() },
            ModelConfig::Hjmm(HjmmParams::default()),
        ]
    }

    pub fn default_nemytskii() -> ModelConfig {
        ModelConfig::NemytskiiHeat { modes: d_nem_modes(), channels: d_channels(), amplitude: 1.0, drift: d_nem_drift() }
    }

    pub fn build(&self) -> Result<SpdeModel> {
        match self {
            ModelConfig::Quantization { modes, mass, channels, amplitude } => quantization(*modes, *mass, *channels, *amplitude),
            ModelConfig::Cable { modes, length_constant, time_constant, channels, amplitude } => {
                cable(*modes, *length_constant, *time_constant, *channels, *amplitude)
            }
            ModelConfig::Geometric { sigma } => geometric(*sigma),
            ModelConfig::NemytskiiHeat { modes, channels, amplitude, drift } => {
                nemytskii_heat_with_drift(*modes, *channels, *amplitude, *drift)
            }
            ModelConfig::Hjmm(params) => build_hjmm_model(params),
        }
    }

    /// Initial state in the model space.
    pub fn initial_state(&self, model: &SpdeModel, init: &InitialState) -> Result<HVector> {
        let space = model.space().clone();
        match (init, self) {
            (InitialState::Default, ModelConfig::Geometric { .. }) => HVector::new(space, vec![1.0]),
            (InitialState::Default, ModelConfig::Hjmm(params)) => HjmmState::default_initial(params)?.to_hvector(&space),
            (InitialState::Default, _) => {
                HVector::new(space.clone(), (1..=space.dim()).map(|k| 1.0 / (k * k) as f64).collect())
            }
            (InitialState::Coefficients { values }, _) => HVector::new(space, values.clone()),
            (InitialState::CurveFile { path, v0 }, ModelConfig::Hjmm(params)) => {
                let pts = ForwardCurve::read_points(BufReader::new(File::open(path)?))?;
                let curve = ForwardCurve::from_points(params.curve_space()?, &pts)?;
                HjmmState { curve, v: *v0 }.to_hvector(&space)
            }
            (InitialState::CurveFile { .. }, _) => Err(Error::argument("curve files only apply to the hjmm model")),
        }
    }

    pub fn noise_channels(&self) -> usize {
        match self {
            ModelConfig::Quantization { channels, .. }
            | ModelConfig::Cable { channels, .. }
            | ModelConfig::NemytskiiHeat { channels, .. } => *channels,
            ModelConfig::Geometric { .. } => 1,
            ModelConfig::Hjmm(params) => params.factors.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// `x0_k = 1/k²` on spectral models, `1` for the geometric model, the
    /// default upward-sloping curve with `v0 = 0` for HJMM.
    #[default]
    Default,
    Coefficients { values: Vec<f64> },
    /// `maturity,rate` CSV interpolated onto the model grid.
    CurveFile { path: PathBuf, #[serde(default)] v0: f64 },
}

/// Convenience for tests and tools: model plus its default initial state.
pub fn build_with_default_state(choice: &ModelConfig) -> Result<(SpdeModel, HVector)> {
    let model = choice.build()?;
    let x0 = choice.initial_state(&model, &InitialState::Default)?;
    Ok((model, x0))
}
