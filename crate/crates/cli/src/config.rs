use std::path::Path;

use serde::{Deserialize, Serialize};
use wz_spde::catalog::{InitialState, ModelConfig};
use wz_spde::schemes::SchemeKind;
use wz_spde::study::Pair;

use crate::CliError;

/// Environment variable that replaces `monte_carlo.base_seed`.
pub const SEED_ENV: &str = "SPDE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Omitted only by `validate` (checks every built-in) and synthetic `converge` runs.
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub x0: InitialState,
    #[serde(default)]
    pub scheme: SchemeBlock,
    #[serde(default)]
    pub monte_carlo: MonteCarloBlock,
    #[serde(default)]
    pub output: OutputBlock,
    /// Replaces simulation in `converge` by injected power-law estimates.
    pub synthetic: Option<SyntheticBlock>,
    #[serde(default)]
    pub validation: ValidationBlock,
}

fn d_horizon() -> f64 {
    1.0
}
fn d_m_fine() -> usize {
    1024
}
fn d_p() -> f64 {
    2.0
}
fn d_one() -> usize {
    1
}
fn d_schemes() -> Vec<SchemeKind> {
    vec![SchemeKind::WongZakai, SchemeKind::EulerMaruyama, SchemeKind::Reference]
}
fn d_pair() -> Pair {
    Pair::WzVsRef
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeBlock {
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    #[serde(default = "d_m_fine")]
    pub m_fine: usize,
    /// Coarse step count for `simulate`.
    pub m: Option<usize>,
    /// Coarse step counts for `converge`.
    pub m_list: Option<Vec<usize>>,
    /// Wong-Zakai substeps per coarse cell (`simulate`).
    pub inner_steps: Option<usize>,
    /// Wong-Zakai substeps per fine lattice cell (`converge`).
    #[serde(default = "d_one")]
    pub inner_refinement: usize,
    #[serde(default = "d_p")]
    pub p: f64,
    #[serde(default = "d_schemes")]
    pub schemes: Vec<SchemeKind>,
    #[serde(default = "d_pair")]
    pub pair: Pair,
}

impl Default for SchemeBlock {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

fn d_paths() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloBlock {
    #[serde(default = "d_paths")]
    pub paths: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Lattice stream used by `simulate`.
    #[serde(default)]
    pub stream: u64,
}

impl Default for MonteCarloBlock {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeFormat {
    Csv,
    Binary,
}

fn d_report_json() -> String {
    "report.json".into()
}
fn d_report_csv() -> String {
    "report.csv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// File names inside the `--out` directory.
    #[serde(default = "d_report_json")]
    pub report_json: String,
    #[serde(default = "d_report_csv")]
    pub report_csv: String,
    /// Also dump the Brownian lattice used by `simulate`.
    pub lattice: Option<LatticeFormat>,
    /// Bond maturities priced off terminal HJMM curves.
    pub bond_maturities: Option<Vec<f64>>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlock {
    /// Estimates are `constant · m^{-rate} · (1 + relative_noise · u)`, `u` uniform in `[-1, 1]`.
    pub constant: f64,
    pub rate: f64,
    pub m_list: Vec<usize>,
    #[serde(default)]
    pub relative_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_scale() -> f64 {
    1.0
}
fn d_samples() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationBlock {
    /// Multiplies every Jacobian action; anything but 1 injects a fault.
    #[serde(default = "d_scale")]
    pub jacobian_scale: f64,
    #[serde(default = "d_samples")]
    pub samples: usize,
}

impl Default for ValidationBlock {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Schema(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.monte_carlo.base_seed = seed
                .trim()
                .parse()
                .map_err(|_| CliError::Schema(format!("{SEED_ENV} must be an unsigned integer, got {seed:?}")))?;
        }
        Ok(cfg)
    }

    pub fn require_model(&self) -> Result<&ModelConfig, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Schema("missing model block".into()))
    }
}
