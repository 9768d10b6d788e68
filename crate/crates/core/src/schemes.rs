//! Time integrators on a shared Brownian lattice.
//!
//! All schemes report states on the fine lattice grid `n T / m_fine`, whatever
//! the coarse step count `m`, so sup-norm differences are taken over common
//! monitoring times.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::HVector;
use crate::model::SpdeModel;
use crate::noise::BrownianLattice;

pub const MIN_CORRECTOR_SWEEPS: usize = 2;
pub const MAX_CORRECTOR_SWEEPS: usize = 8;
/// Relative change at which the corrector sweeps stop.
pub const CORRECTOR_TOL: f64 = 1e-10;
/// States with a larger norm abort the path.
pub const BLOW_UP_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[serde(alias = "wz")]
    WongZakai,
    #[serde(alias = "em")]
    EulerMaruyama,
    #[serde(alias = "ee")]
    ExponentialEuler,
    #[serde(alias = "ref")]
    Reference,
}

impl SchemeKind {
    pub fn tag(self) -> &'static str {
        match self {
            SchemeKind::WongZakai => "wz",
            SchemeKind::EulerMaruyama => "em",
            SchemeKind::ExponentialEuler => "ee",
            SchemeKind::Reference => "ref",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<HVector>,
    scheme: SchemeKind,
    m: usize,
    seed: u64,
    stream: u64,
}

impl Trajectory {
    /// Trajectory from explicit samples; used for imported or synthetic paths.
    pub fn from_parts(
        times: Vec<f64>,
        states: Vec<HVector>,
        scheme: SchemeKind,
        m: usize,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::structural("times and states must be non-empty and of equal length"));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::structural("times must start at 0 and increase"));
        }
        for s in &states[1..] {
            s.check_space(states[0].space())?;
        }
        Ok(Self { times, states, scheme, m, seed, stream })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[HVector] {
        &self.states
    }

    pub fn scheme(&self) -> SchemeKind {
        self.scheme
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn terminal(&self) -> &HVector {
        self.states.last().unwrap()
    }

    /// Header line `# scheme=<tag>,m=<m>,seed=<seed>,stream=<stream>`, then
    /// `time,coeff_0,...,coeff_{d-1}` and one row per monitoring time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# scheme={},m={},seed={},stream={}", self.scheme.tag(), self.m, self.seed, self.stream)?;
        write!(w, "time")?;
        for i in 0..self.states[0].dim() {
            write!(w, ",coeff_{i}")?;
        }
        writeln!(w)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{t:e}")?;
            for c in x.coeffs() {
                write!(w, ",{c:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Coarse steps on `[0, T]`.
    pub m: usize,
    /// Wong-Zakai substeps per coarse cell; defaults to `m_fine / m`. Must be a
    /// multiple of `m_fine / m` so every monitoring time is a substep boundary.
    pub inner_steps: Option<usize>,
}

impl SchemeConfig {
    pub fn new(m: usize) -> Self {
        Self { m, inner_steps: None }
    }

    pub fn with_inner_steps(mut self, inner_steps: usize) -> Self {
        self.inner_steps = Some(inner_steps);
        self
    }
}

/// Which drift enters the Wong-Zakai cell equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WzDrift {
    /// The model drift `b`; converges to the Itô solution with drift `b̂`.
    Plain,
    /// `b̂ = b + ρ/2`: double-counts the correction. Only useful as a negative control.
    Corrected,
}

fn prepare(model: &SpdeModel, x0: &HVector, lattice: &BrownianLattice, m: usize) -> Result<usize> {
    x0.check_space(model.space())?;
    if lattice.channels() != model.noise_dim() {
        return Err(Error::argument(format!(
            "lattice has {} channels, model has {} noise channels",
            lattice.channels(),
            model.noise_dim()
        )));
    }
    guard(x0, 0.0)?;
    lattice.check_level(m)
}

fn guard(x: &HVector, time: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Numeric { time, message: "non-finite state".into() });
    }
    let n = x.norm();
    if n > BLOW_UP_NORM {
        return Err(Error::Numeric { time, message: format!("state norm {n:e} exceeds blow-up guard") });
    }
    Ok(())
}

fn trajectory(lattice: &BrownianLattice, states: Vec<HVector>, scheme: SchemeKind, m: usize) -> Trajectory {
    let times = (0..states.len()).map(|n| lattice.time(n)).collect();
    Trajectory { times, states, scheme, m, seed: lattice.seed(), stream: lattice.stream() }
}

/// Noise contributions `g_i = Σ_j σ_j ΔB^j_i` for the fine increments of cell `k`.
fn cell_kicks(sig: &[HVector], lattice: &BrownianLattice, per_cell: usize, k: usize) -> Vec<Vec<f64>> {
    (0..per_cell)
        .map(|i| {
            let n = k * per_cell + i;
            let mut g = vec![0.0; sig[0].dim()];
            for (j, s) in sig.iter().enumerate() {
                let db = lattice.increments(j)[n];
                for (gi, si) in g.iter_mut().zip(s.coeffs()) {
                    *gi += si * db;
                }
            }
            g
        })
        .collect()
}

fn frozen_coefficients(model: &SpdeModel, left: &HVector) -> Result<(HVector, Vec<HVector>)> {
    let bh = model.drift_hat(left)?;
    let sig = (0..model.noise_dim()).map(|j| model.vol(j, left)).collect::<Result<Vec<_>>>()?;
    Ok((bh, sig))
}

/// States of the accelerated exponential Euler-Maruyama scheme at the fine
/// times `kδ + n h`, `n = 1..=m_fine/m`, given the state `left` at `kδ`:
///
/// `S_τ left + ∫_0^τ S_{τ-u} b̂(left) du + Σ_{i<n} S_{τ-ih} Σ_j σ_j(left) ΔB^j_i`, `τ = n h`.
pub fn euler_maruyama_cell(
    model: &SpdeModel,
    left: &HVector,
    lattice: &BrownianLattice,
    m: usize,
    k: usize,
) -> Result<Vec<HVector>> {
    let per_cell = lattice.check_level(m)?;
    if k >= m {
        return Err(Error::argument(format!("cell {k} out of range for m = {m}")));
    }
    let sg = model.semigroup();
    let h = lattice.fine_step();
    let (bh, sig) = frozen_coefficients(model, left)?;
    let kicks = cell_kicks(&sig, lattice, per_cell, k);
    let d = left.dim();
    let mut out = Vec::with_capacity(per_cell);
    let mut stoch = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    let mut st = vec![0.0; d];
    for n in 1..=per_cell {
        let tau = n as f64 * h;
        if sg.exact_composition() {
            for i in 0..d {
                tmp[i] = stoch[i] + kicks[n - 1][i];
            }
            sg.apply_raw(h, &tmp, &mut stoch);
        } else {
            stoch.iter_mut().for_each(|s| *s = 0.0);
            for (i, g) in kicks[..n].iter().enumerate() {
                sg.apply_raw(tau - i as f64 * h, g, &mut tmp);
                for (s, v) in stoch.iter_mut().zip(&tmp) {
                    *s += v;
                }
            }
        }
        sg.apply_raw(tau, left.coeffs(), &mut st);
        let conv = sg.convolve_const(tau, &bh, n)?;
        let coeffs: Vec<f64> = st.iter().zip(conv.coeffs()).zip(&stoch).map(|((a, b), c)| (a + b) + c).collect();
        let x = HVector::from_raw(left.space().clone(), coeffs);
        guard(&x, lattice.time(k * per_cell + n))?;
        out.push(x);
    }
    Ok(out)
}

pub fn euler_maruyama(model: &SpdeModel, x0: &HVector, lattice: &BrownianLattice, cfg: &SchemeConfig) -> Result<Trajectory> {
    em_run(model, x0, lattice, cfg.m, SchemeKind::EulerMaruyama)
}

fn em_run(model: &SpdeModel, x0: &HVector, lattice: &BrownianLattice, m: usize, tag: SchemeKind) -> Result<Trajectory> {
    prepare(model, x0, lattice, m)?;
    let mut states = Vec::with_capacity(lattice.m_fine() + 1);
    states.push(x0.clone());
    for k in 0..m {
        let left = states.last().unwrap().clone();
        states.extend(euler_maruyama_cell(model, &left, lattice, m, k)?);
    }
    Ok(trajectory(lattice, states, tag, m))
}

/// Exponential Euler: within a cell the semigroup factor is frozen at the
/// left endpoint, `Y(kδ + τ) = S_τ (Y(kδ) + τ b̂ + Σ_{i<n} Σ_j σ_j ΔB^j_i)`.
pub fn exponential_euler(model: &SpdeModel, x0: &HVector, lattice: &BrownianLattice, cfg: &SchemeConfig) -> Result<Trajectory> {
    let per_cell = prepare(model, x0, lattice, cfg.m)?;
    let sg = model.semigroup();
    let h = lattice.fine_step();
    let d = x0.dim();
    let mut states = Vec::with_capacity(lattice.m_fine() + 1);
    states.push(x0.clone());
    let mut tmp = vec![0.0; d];
    for k in 0..cfg.m {
        let left = states.last().unwrap().clone();
        let (bh, sig) = frozen_coefficients(model, &left)?;
        let kicks = cell_kicks(&sig, lattice, per_cell, k);
        let mut acc = vec![0.0; d];
        for n in 1..=per_cell {
            let tau = n as f64 * h;
            for (a, g) in acc.iter_mut().zip(&kicks[n - 1]) {
                *a += g;
            }
            for i in 0..d {
                tmp[i] = (left.coeffs()[i] + (tau * 1.0) * bh.coeffs()[i]) + acc[i];
            }
            let mut out = vec![0.0; d];
            sg.apply_raw(tau, &tmp, &mut out);
            let x = HVector::from_raw(left.space().clone(), out);
            guard(&x, lattice.time(k * per_cell + n))?;
            states.push(x);
        }
    }
    Ok(trajectory(lattice, states, SchemeKind::ExponentialEuler, cfg.m))
}

/// Wong-Zakai approximation: on each coarse cell solves
/// `ξ(t) = S_{t-kδ} ξ(kδ) + ∫ S_{t-s} (b(ξ(s)) + Σ_j σ_j(ξ(s)) Ḃ^j) ds` with the
/// constant cell slopes `Ḃ^j`, using exponential substeps with linear-in-time
/// integrand and fixed-point corrector sweeps.
pub fn wong_zakai(model: &SpdeModel, x0: &HVector, lattice: &BrownianLattice, cfg: &SchemeConfig) -> Result<Trajectory> {
    wong_zakai_with(model, x0, lattice, cfg, WzDrift::Plain)
}

pub fn wong_zakai_with(
    model: &SpdeModel,
    x0: &HVector,
    lattice: &BrownianLattice,
    cfg: &SchemeConfig,
    drift: WzDrift,
) -> Result<Trajectory> {
    let m = cfg.m;
    let per_cell = prepare(model, x0, lattice, m)?;
    let sub = cfg.inner_steps.unwrap_or(per_cell);
    if sub == 0 || sub % per_cell != 0 {
        return Err(Error::argument(format!(
            "inner_steps = {sub} must be a positive multiple of m_fine / m = {per_cell}"
        )));
    }
    let per_monitor = sub / per_cell;
    let delta = lattice.horizon() / m as f64;
    let hs = delta / sub as f64;
    let coarse = lattice.coarsen(m)?;
    let r = model.noise_dim();
    let sg = model.semigroup();
    let space = x0.space().clone();

    let field = |x: &HVector, slopes: &[f64]| -> Result<HVector> {
        let mut f = match drift {
            WzDrift::Plain => model.drift(x)?,
            WzDrift::Corrected => model.drift_hat(x)?,
        };
        for (j, s) in slopes.iter().enumerate() {
            f.axpy(*s, &model.vol(j, x)?)?;
        }
        Ok(f)
    };

    let mut states = Vec::with_capacity(lattice.m_fine() + 1);
    states.push(x0.clone());
    let mut xi = x0.clone();
    let mut sh = vec![0.0; x0.dim()];
    for k in 0..m {
        let slopes: Vec<f64> = (0..r).map(|j| coarse[j * m + k] / delta).collect();
        for step in 0..sub {
            let t = (k * sub + step + 1) as f64 * hs;
            sg.apply_raw(hs, xi.coeffs(), &mut sh);
            let shifted = HVector::from_raw(space.clone(), sh.clone());
            let f0 = field(&xi, &slopes)?;
            let mut next = shifted.add(&sg.convolve_linear(hs, &f0, &f0, 1)?)?;
            let mut converged = false;
            for sweep in 0..MAX_CORRECTOR_SWEEPS {
                guard(&next, t)?;
                let f1 = field(&next, &slopes)?;
                let candidate = shifted.add(&sg.convolve_linear(hs, &f0, &f1, 1)?)?;
                let change = candidate.distance(&next)?;
                let scale = candidate.norm().max(1.0);
                next = candidate;
                if sweep + 1 >= MIN_CORRECTOR_SWEEPS && change <= CORRECTOR_TOL * scale {
                    converged = true;
                    break;
                }
            }
            guard(&next, t)?;
            if !converged {
                return Err(Error::Numeric { time: t, message: "corrector sweeps did not converge".into() });
            }
            xi = next;
            if (step + 1) % per_monitor == 0 {
                states.push(xi.clone());
            }
        }
    }
    Ok(trajectory(lattice, states, SchemeKind::WongZakai, m))
}

/// Euler-Maruyama on the finest level `m = m_fine`, used as the stand-in for
/// the exact solution.
pub fn reference_solution(model: &SpdeModel, x0: &HVector, lattice: &BrownianLattice) -> Result<Trajectory> {
    em_run(model, x0, lattice, lattice.m_fine(), SchemeKind::Reference)
}

pub fn run_scheme(
    kind: SchemeKind,
    model: &SpdeModel,
    x0: &HVector,
    lattice: &BrownianLattice,
    cfg: &SchemeConfig,
) -> Result<Trajectory> {
    match kind {
        SchemeKind::WongZakai => wong_zakai(model, x0, lattice, cfg),
        SchemeKind::EulerMaruyama => euler_maruyama(model, x0, lattice, cfg),
        SchemeKind::ExponentialEuler => exponential_euler(model, x0, lattice, cfg),
        SchemeKind::Reference => reference_solution(model, x0, lattice),
    }
}
