//! Coupled Monte Carlo convergence studies: every level `m` and the reference
//! run on the same lattice per path, and `E[sup_t ‖A(t) - B(t)‖^{2p}]` is
//! estimated per `m` and fitted against `log m`.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{InitialState, ModelConfig};
use crate::error::{Error, Result};
use crate::hilbert::HVector;
use crate::model::SpdeModel;
use crate::noise::BrownianLattice;
use crate::schemes::{euler_maruyama, reference_solution, wong_zakai, SchemeConfig, Trajectory};
use crate::stats::{mean_estimate, MeanEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pair {
    WzVsRef,
    EmVsRef,
    WzVsEm,
}

fn d_p() -> f64 {
    2.0
}
fn d_refinement() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub x0: InitialState,
    pub horizon: f64,
    /// Moment half-order; the estimated moment is `2p`.
    #[serde(default = "d_p")]
    pub p: f64,
    pub m_list: Vec<usize>,
    pub m_fine: usize,
    pub paths: usize,
    pub base_seed: u64,
    pub pair: Pair,
    /// Wong-Zakai substeps per fine lattice cell.
    #[serde(default = "d_refinement")]
    pub inner_refinement: usize,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) {
            return Err(Error::argument(format!(
                "p = {} gives predicted rate p - 1 <= 0, which cannot be tested; use p > 1",
                self.p
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::argument("horizon must be positive"));
        }
        if self.m_fine == 0 || !self.m_fine.is_power_of_two() {
            return Err(Error::argument("m_fine must be a power of two"));
        }
        if self.m_list.is_empty() {
            return Err(Error::argument("m_list is empty"));
        }
        if self.m_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::argument("m_list must be strictly increasing"));
        }
        for &m in &self.m_list {
            if m == 0 || self.m_fine % m != 0 {
                return Err(Error::argument(format!("m = {m} does not divide m_fine = {}", self.m_fine)));
            }
        }
        if *self.m_list.last().unwrap() > self.m_fine / 4 {
            return Err(Error::argument("largest m must be at most m_fine / 4 so the reference stays separated"));
        }
        if self.paths < 2 {
            return Err(Error::argument("need at least two paths for a standard error"));
        }
        if self.inner_refinement == 0 {
            return Err(Error::argument("inner_refinement must be at least 1"));
        }
        Ok(())
    }
}

/// `(max_n ‖A(t_n) - B(t_n)‖)^{2p}` over the shared monitoring grid.
pub fn sup_error_moment(a: &Trajectory, b: &Trajectory, p: f64) -> Result<f64> {
    Ok(sup_distance(a, b)?.powf(2.0 * p))
}

pub fn sup_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.times() != b.times() {
        return Err(Error::structural("trajectories have different monitoring grids"));
    }
    let mut worst = 0.0f64;
    for (x, y) in a.states().iter().zip(b.states()) {
        worst = worst.max(x.distance(y)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    /// Estimate of `log C`.
    pub intercept: f64,
    pub max_residual: f64,
    /// False when some standard error was zero and the fit fell back to equal weights.
    pub weighted: bool,
}

/// Weighted least squares of `log estimate` on `log m` with weights
/// `(estimate / stderr)²`. Points are `(m, estimate, stderr)`.
pub fn fit_rate(points: &[(f64, f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::argument("rate fit needs at least three points"));
    }
    if let Some(p) = points.iter().find(|p| !(p.1 > 0.0) || !(p.0 > 0.0)) {
        return Err(Error::argument(format!("cannot take logs of point {p:?}")));
    }
    let weighted = points.iter().all(|p| p.2 > 0.0 && p.2.is_finite());
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let ws: Vec<f64> = points.iter().map(|p| if weighted { (p.1 / p.2).powi(2) } else { 1.0 }).collect();
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(&ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxy: f64 = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::argument("rate fit needs at least two distinct m values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    Ok(RateFit { slope, intercept, max_residual, weighted })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub delta_m: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub study: Option<StudyConfig>,
    pub rows: Vec<ConvergenceRow>,
    pub fit: Option<RateFit>,
    /// Every estimate is at round-off level, so no rate can be read off.
    pub degenerate: bool,
    /// Fraction of paths whose sup error is non-increasing along `m_list`.
    pub monotone_path_fraction: f64,
    pub version: String,
    /// Metadata only; excluded from any numeric comparison.
    pub wall_time_seconds: f64,
}

/// Estimates at or below this level of `sup‖·‖` are treated as round-off.
pub const DEGENERATE_SUP: f64 = 1e-8;

impl ConvergenceReport {
    /// Assembles a report from per-`m` estimates; used by studies and by
    /// synthetic self-tests.
    pub fn from_estimates(
        study: Option<StudyConfig>,
        horizon: f64,
        p: f64,
        m_list: &[usize],
        estimates: &[MeanEstimate],
        monotone_path_fraction: f64,
        wall_time_seconds: f64,
    ) -> Self {
        let rows: Vec<ConvergenceRow> = m_list
            .iter()
            .zip(estimates)
            .map(|(m, e)| ConvergenceRow {
                m: *m,
                delta_m: horizon / *m as f64,
                estimate: e.mean,
                stderr: e.stderr,
                paths: e.samples,
            })
            .collect();
        let floor = DEGENERATE_SUP.powf(2.0 * p);
        let mut degenerate = rows.iter().all(|r| r.estimate <= floor);
        let fit = if degenerate || rows.len() < 3 {
            None
        } else {
            let pts: Vec<_> = rows.iter().map(|r| (r.m as f64, r.estimate, r.stderr)).collect();
            match fit_rate(&pts) {
                Ok(f) => Some(f),
                Err(_) => {
                    degenerate = true;
                    None
                }
            }
        };
        Self {
            study,
            rows,
            fit,
            degenerate,
            monotone_path_fraction,
            version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            wall_time_seconds,
        }
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.estimate).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].estimate < w[0].estimate)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Format(e.to_string()))
    }

    /// `m,delta_m,estimate,stderr,paths`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "m,delta_m,estimate,stderr,paths")?;
        for r in &self.rows {
            writeln!(w, "{},{:e},{:e},{:e},{}", r.m, r.delta_m, r.estimate, r.stderr, r.paths)?;
        }
        Ok(())
    }
}

/// Per-path sup distances, one per entry of `m_list`, for the pair under study.
pub fn path_sup_distances(
    model: &SpdeModel,
    x0: &HVector,
    lattice: &BrownianLattice,
    m_list: &[usize],
    pair: Pair,
    inner_refinement: usize,
) -> Result<Vec<f64>> {
    let reference = match pair {
        Pair::WzVsRef | Pair::EmVsRef => Some(reference_solution(model, x0, lattice).map_err(|e| wrap(lattice, lattice.m_fine(), e))?),
        Pair::WzVsEm => None,
    };
    m_list
        .iter()
        .map(|&m| {
            let per_cell = lattice.m_fine() / m;
            let cfg = SchemeConfig::new(m).with_inner_steps(per_cell * inner_refinement);
            let run = || -> Result<f64> {
                match pair {
                    Pair::WzVsRef => sup_distance(&wong_zakai(model, x0, lattice, &cfg)?, reference.as_ref().unwrap()),
                    Pair::EmVsRef => sup_distance(&euler_maruyama(model, x0, lattice, &cfg)?, reference.as_ref().unwrap()),
                    Pair::WzVsEm => {
                        sup_distance(&wong_zakai(model, x0, lattice, &cfg)?, &euler_maruyama(model, x0, lattice, &cfg)?)
                    }
                }
            };
            run().map_err(|e| wrap(lattice, m, e))
        })
        .collect()
}

fn wrap(lattice: &BrownianLattice, m: usize, e: Error) -> Error {
    match e {
        Error::Path { .. } => e,
        other => Error::Path { seed: lattice.seed(), stream: lattice.stream(), m, source: Box::new(other) },
    }
}

/// Runs the study on `workers` threads (all cores when `None`). Results do not
/// depend on the worker count: per-path values are collected in path order and
/// summed with compensation.
pub fn run_study(study: &StudyConfig, workers: Option<usize>) -> Result<ConvergenceReport> {
    study.validate()?;
    let start = Instant::now();
    let model = study.model.build()?;
    let x0 = study.model.initial_state(&model, &study.x0)?;
    let channels = model.noise_dim();
    let per_path = |i: usize| -> Result<Vec<f64>> {
        let lattice = BrownianLattice::generate(study.base_seed, i as u64, channels, study.horizon, study.m_fine)?;
        path_sup_distances(&model, &x0, &lattice, &study.m_list, study.pair, study.inner_refinement)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::argument(format!("cannot start worker pool: {e}")))?;
    let sups: Vec<Vec<f64>> = pool.install(|| (0..study.paths).into_par_iter().map(per_path).collect::<Result<_>>())?;

    let estimates: Vec<MeanEstimate> = (0..study.m_list.len())
        .map(|i| {
            let vals: Vec<f64> = sups.iter().map(|s| s[i].powf(2.0 * study.p)).collect();
            mean_estimate(&vals)
        })
        .collect();
    let monotone = sups.iter().filter(|s| s.windows(2).all(|w| w[1] <= w[0])).count() as f64 / study.paths as f64;
    Ok(ConvergenceReport::from_estimates(
        Some(study.clone()),
        study.horizon,
        study.p,
        &study.m_list,
        &estimates,
        monotone,
        start.elapsed().as_secs_f64(),
    ))
}
