//! Forward-rate curves in the weighted space `H_β`, the HJMM equation with a
//! stochastic-volatility factor, and its Wong-Zakai integral equations.
//!
//! Curves are sampled on a maturity grid (Musiela parametrization). The shift
//! semigroup, derivatives and integrals act on those samples: linear
//! interpolation with the last value held for shifts, three-point differences
//! for `h'`, trapezoid sums for integrals.
//!
//! Volatility family: `γ_j(h, v)(x) = λ̃(v) c_j e^{-a_j x}` with
//! `λ̃(v) = 1 + s tanh(v)`, vol-of-vol `λ_j(v) = ν_j / (1 + v²)` and drift
//! `μ(v) = κ(θ - tanh v)`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{grid_derivative, HVector, SpaceDescriptor, SpaceKind};
use crate::model::{DeclaredBounds, SpdeModel, Volatility};
use crate::noise::BrownianLattice;
use crate::semigroup::{interpolate, SemigroupModel};

/// `sqrt(|h(0)|² + ∫ |h'(x)|² e^{βx} dx)` on grid samples; nothing is added
/// beyond the last node (flat tail).
pub fn hbeta_norm_on_grid(grid: &[f64], beta: f64, values: &[f64]) -> f64 {
    let d = grid_derivative(grid, values);
    let f: Vec<f64> = d.iter().zip(grid).map(|(di, x)| di * di * (beta * x).exp()).collect();
    (values[0] * values[0] + trapezoid(grid, &f)).sqrt()
}

fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2).zip(f.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// One piece of a piecewise-uniform maturity grid: nodes every `1/per_year`
/// years up to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSegment {
    pub to: f64,
    pub per_year: u32,
}

pub fn default_grid_segments() -> Vec<GridSegment> {
    vec![
        GridSegment { to: 1.0, per_year: 24 },
        GridSegment { to: 5.0, per_year: 12 },
        GridSegment { to: 10.0, per_year: 4 },
        GridSegment { to: 30.0, per_year: 1 },
    ]
}

pub fn build_grid(segments: &[GridSegment]) -> Result<Vec<f64>> {
    let mut grid = vec![0.0];
    let mut from = 0.0;
    for s in segments {
        if s.per_year == 0 || !(s.to > from) {
            return Err(Error::parameter(format!("bad grid segment {s:?}")));
        }
        let n = ((s.to - from) * s.per_year as f64).round() as usize;
        if n == 0 || ((from + n as f64 / s.per_year as f64) - s.to).abs() > 1e-9 {
            return Err(Error::parameter(format!("segment {s:?} is not a whole number of steps")));
        }
        for i in 1..=n {
            grid.push(if i == n { s.to } else { from + i as f64 / s.per_year as f64 });
        }
        from = s.to;
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCurve {
    space: Arc<SpaceDescriptor>,
    values: Vec<f64>,
}

impl ForwardCurve {
    pub fn new(space: Arc<SpaceDescriptor>, values: Vec<f64>) -> Result<Self> {
        if !matches!(space.kind(), SpaceKind::WeightedGrid { .. }) {
            return Err(Error::structural("forward curves live on weighted-grid spaces"));
        }
        HVector::new(space.clone(), values.clone())?;
        Ok(Self { space, values })
    }

    pub fn from_fn(space: Arc<SpaceDescriptor>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid_of(&space).iter().map(|x| f(*x)).collect();
        Self::new(space, values)
    }

    /// Linear interpolation of `(maturity, rate)` points onto the space grid,
    /// flat beyond either end.
    pub fn from_points(space: Arc<SpaceDescriptor>, points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::argument("no curve points"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::argument("curve maturities must be strictly increasing"));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        Self::from_fn(space, |x| interpolate(&xs, &ys, x))
    }

    pub fn space(&self) -> &Arc<SpaceDescriptor> {
        &self.space
    }

    pub fn grid(&self) -> &[f64] {
        grid_of(&self.space)
    }

    pub fn beta(&self) -> f64 {
        match self.space.kind() {
            SpaceKind::WeightedGrid { beta, .. } => *beta,
            _ => unreachable!(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Long-end value, the proxy for `h(∞)`.
    pub fn long_end(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn to_hvector(&self) -> HVector {
        HVector::from_raw(self.space.clone(), self.values.clone())
    }

    pub fn from_hvector(v: &HVector) -> Result<Self> {
        Self::new(v.space().clone(), v.coeffs().to_vec())
    }

    /// Value at maturity `x` (linear interpolation, flat tail).
    pub fn at(&self, x: f64) -> f64 {
        interpolate(self.grid(), &self.values, x)
    }

    /// Reads `maturity,rate` rows; a non-numeric first line is treated as a header.
    pub fn read_points<R: BufRead>(reader: R) -> Result<Vec<(f64, f64)>> {
        let mut pts = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (a, b) = (parts.next(), parts.next());
            match (a.and_then(|s| s.parse::<f64>().ok()), b.and_then(|s| s.parse::<f64>().ok())) {
                (Some(x), Some(y)) => pts.push((x, y)),
                _ if i == 0 => continue,
                _ => return Err(Error::Format(format!("line {}: expected maturity,rate", i + 1))),
            }
        }
        Ok(pts)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "maturity,rate")?;
        for (x, y) in self.grid().iter().zip(&self.values) {
            writeln!(w, "{x},{y:e}")?;
        }
        Ok(())
    }
}

fn grid_of(space: &SpaceDescriptor) -> &[f64] {
    match space.kind() {
        SpaceKind::WeightedGrid { grid, .. } => grid,
        _ => panic!("not a weighted-grid space"),
    }
}

pub fn hbeta_norm(curve: &ForwardCurve) -> f64 {
    hbeta_norm_on_grid(curve.grid(), curve.beta(), &curve.values)
}

/// `(I h)(x) = ∫_0^x h(η) dη` by cumulative trapezoid sums; zero at 0.
pub fn integral_operator(curve: &ForwardCurve) -> ForwardCurve {
    ForwardCurve { space: curve.space.clone(), values: cumulative_trapezoid(curve.grid(), &curve.values) }
}

fn cumulative_trapezoid(grid: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..f.len() {
        acc += 0.5 * (grid[i] - grid[i - 1]) * (f[i] + f[i - 1]);
        out.push(acc);
    }
    out
}

/// Pointwise product `m(h, g) = hg`.
pub fn multiply(h: &ForwardCurve, g: &ForwardCurve) -> Result<ForwardCurve> {
    if h.space != g.space {
        return Err(Error::structural("curves on different grids"));
    }
    Ok(ForwardCurve {
        space: h.space.clone(),
        values: h.values.iter().zip(&g.values).map(|(a, b)| a * b).collect(),
    })
}

/// Zero-coupon price `exp(-∫_0^T h(x) dx)` from today's Musiela curve.
pub fn bond_price(curve: &ForwardCurve, maturity: f64) -> Result<f64> {
    let grid = curve.grid();
    let last = *grid.last().unwrap();
    if !(maturity >= 0.0 && maturity <= last) {
        return Err(Error::argument(format!("maturity {maturity} outside [0, {last}]")));
    }
    let mut acc = 0.0;
    for i in 1..grid.len() {
        let (a, b) = (grid[i - 1], grid[i]);
        if a >= maturity {
            break;
        }
        let hi = b.min(maturity);
        let fa = curve.values[i - 1];
        let fb = if hi == b { curve.values[i] } else { curve.at(hi) };
        acc += 0.5 * (hi - a) * (fa + fb);
    }
    Ok((-acc).exp())
}

pub fn bond_term_structure(curve: &ForwardCurve, maturities: &[f64]) -> Result<Vec<(f64, f64)>> {
    maturities.iter().map(|t| Ok((*t, bond_price(curve, *t)?))).collect()
}

pub fn write_bond_csv<W: Write>(prices: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "maturity,price")?;
    for (t, p) in prices {
        writeln!(w, "{t},{p:e}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolFactor {
    /// level `c_j`
    pub c: f64,
    /// decay rate `a_j`
    pub a: f64,
    /// vol-of-vol scale `ν_j`
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjmmParams {
    pub beta: f64,
    pub beta_prime: f64,
    pub grid: Vec<GridSegment>,
    pub factors: Vec<VolFactor>,
    /// `s` in `λ̃(v) = 1 + s tanh(v)`
    pub stoch_vol_amplitude: f64,
    pub kappa: f64,
    pub theta: f64,
}

impl Default for HjmmParams {
    fn default() -> Self {
        Self {
            beta: 0.5,
            beta_prime: 1.0,
            grid: default_grid_segments(),
            factors: vec![VolFactor { c: 0.01, a: 1.0, nu: 0.3 }, VolFactor { c: 0.02, a: 1.5, nu: 0.2 }],
            stoch_vol_amplitude: 0.5,
            kappa: 1.0,
            theta: 0.0,
        }
    }
}

impl HjmmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta_prime > self.beta) {
            return Err(Error::parameter(format!(
                "need 0 < beta < beta_prime, got beta = {}, beta_prime = {}",
                self.beta, self.beta_prime
            )));
        }
        if self.factors.is_empty() {
            return Err(Error::parameter("at least one volatility factor is required"));
        }
        for (j, f) in self.factors.iter().enumerate() {
            if !(f.a > self.beta_prime / 2.0) {
                return Err(Error::parameter(format!(
                    "factor {j}: decay a = {} must exceed beta_prime / 2 = {}",
                    f.a,
                    self.beta_prime / 2.0
                )));
            }
            if !f.c.is_finite() || !f.nu.is_finite() {
                return Err(Error::parameter(format!("factor {j}: non-finite parameters")));
            }
        }
        if !(self.stoch_vol_amplitude.abs() < 1.0) {
            return Err(Error::parameter("stoch_vol_amplitude must lie in (-1, 1)"));
        }
        Ok(())
    }

    pub fn curve_space(&self) -> Result<Arc<SpaceDescriptor>> {
        SpaceDescriptor::weighted_grid(build_grid(&self.grid)?, self.beta)
    }

    /// `H_β × ℝ`: curve block followed by the volatility factor.
    pub fn state_space(&self) -> Result<Arc<SpaceDescriptor>> {
        SpaceDescriptor::product(vec![self.curve_space()?, SpaceDescriptor::spectral(vec![0.0])?])
    }

    fn level(&self, v: f64) -> f64 {
        1.0 + self.stoch_vol_amplitude * v.tanh()
    }

    fn level_prime(&self, v: f64) -> f64 {
        let t = v.tanh();
        self.stoch_vol_amplitude * (1.0 - t * t)
    }

    pub fn mu(&self, v: f64) -> f64 {
        self.kappa * (self.theta - v.tanh())
    }

    pub fn vol_of_vol(&self, j: usize, v: f64) -> f64 {
        self.factors[j].nu / (1.0 + v * v)
    }

    pub fn vol_of_vol_prime(&self, j: usize, v: f64) -> f64 {
        let d = 1.0 + v * v;
        -2.0 * self.factors[j].nu * v / (d * d)
    }

    fn shape(&self, j: usize, grid: &[f64]) -> Vec<f64> {
        let f = &self.factors[j];
        grid.iter().map(|x| f.c * (-f.a * x).exp()).collect()
    }

    /// `γ_j(h, v)` on the grid.
    pub fn gamma(&self, j: usize, grid: &[f64], v: f64) -> Vec<f64> {
        let l = self.level(v);
        self.shape(j, grid).into_iter().map(|s| l * s).collect()
    }
}

/// HJM drift `α(h, v) = Σ_j γ_j(h, v) · I γ_j(h, v)`.
pub fn hjm_drift(params: &HjmmParams, curve: &ForwardCurve, v: f64) -> ForwardCurve {
    let grid = curve.grid();
    let mut alpha = vec![0.0; grid.len()];
    for j in 0..params.factors.len() {
        let g = params.gamma(j, grid, v);
        let ig = cumulative_trapezoid(grid, &g);
        for ((a, gi), ii) in alpha.iter_mut().zip(&g).zip(&ig) {
            *a += gi * ii;
        }
    }
    ForwardCurve { space: curve.space.clone(), values: alpha }
}

/// Wong-Zakai correction: curve part `½ Σ_j (D_h γ_j[γ_j] + D_v γ_j · λ_j)`
/// and scalar part `½ Σ_j λ_j λ_j'`. The family has no `h` dependence, so the
/// `D_h` term vanishes.
pub fn wz_beta_correction(params: &HjmmParams, curve: &ForwardCurve, v: f64) -> (ForwardCurve, f64) {
    let grid = curve.grid();
    let lp = params.level_prime(v);
    let mut out = vec![0.0; grid.len()];
    let mut scalar = 0.0;
    for j in 0..params.factors.len() {
        let lam = params.vol_of_vol(j, v);
        for (o, s) in out.iter_mut().zip(params.shape(j, grid)) {
            *o += 0.5 * lp * s * lam;
        }
        scalar += 0.5 * lam * params.vol_of_vol_prime(j, v);
    }
    (ForwardCurve { space: curve.space.clone(), values: out }, scalar)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjmmState {
    pub curve: ForwardCurve,
    pub v: f64,
}

impl HjmmState {
    pub fn to_hvector(&self, state_space: &Arc<SpaceDescriptor>) -> Result<HVector> {
        let mut c = self.curve.values.clone();
        c.push(self.v);
        HVector::new(state_space.clone(), c)
    }

    pub fn from_hvector(x: &HVector) -> Result<Self> {
        match x.space().kind() {
            SpaceKind::Product { factors } if factors.len() == 2 => {
                let n = factors[0].dim();
                let curve = ForwardCurve::new(Arc::new(factors[0].clone()), x.coeffs()[..n].to_vec())?;
                Ok(Self { curve, v: x.coeffs()[n] })
            }
            _ => Err(Error::structural("not an HJMM state vector")),
        }
    }

    /// `r_0(x) = 0.02 + 0.015 (1 - e^{-x/2})`, `v_0 = 0`.
    pub fn default_initial(params: &HjmmParams) -> Result<Self> {
        let curve = ForwardCurve::from_fn(params.curve_space()?, |x| 0.02 + 0.015 * (1.0 - (-0.5 * x).exp()))?;
        Ok(Self { curve, v: 0.0 })
    }
}

/// Assembles the HJMM equation on `H_β × ℝ`: shift semigroup on the curve,
/// identity on the volatility factor, Itô drift `(α, μ)`, volatilities
/// `(γ_j, λ_j)`. The Wong-Zakai drift is `(α, μ) - ρ/2`.
pub fn build_hjmm_model(params: &HjmmParams) -> Result<SpdeModel> {
    params.validate()?;
    let space = params.state_space()?;
    let curve_space = params.curve_space()?;
    let grid = grid_of(&curve_space).to_vec();
    let n = grid.len();
    let semigroup = SemigroupModel::new(space.clone());

    let p = params.clone();
    let (sp, cs) = (space.clone(), curve_space.clone());
    let ito = move |x: &HVector| {
        let v = x.coeffs()[n];
        let curve = ForwardCurve { space: cs.clone(), values: x.coeffs()[..n].to_vec() };
        let mut out = hjm_drift(&p, &curve, v).values;
        out.push(p.mu(v));
        HVector::from_raw(sp.clone(), out)
    };

    let vols = (0..params.factors.len())
        .map(|j| {
            let (p1, p2) = (params.clone(), params.clone());
            let (g1, g2) = (grid.clone(), grid.clone());
            let (s1, s2) = (space.clone(), space.clone());
            Volatility::new(
                move |x: &HVector| {
                    let v = x.coeffs()[n];
                    let mut out = p1.gamma(j, &g1, v);
                    out.push(p1.vol_of_vol(j, v));
                    HVector::from_raw(s1.clone(), out)
                },
                move |x: &HVector, h: &HVector| {
                    let v = x.coeffs()[n];
                    let dv = h.coeffs()[n];
                    let lp = p2.level_prime(v);
                    let mut out: Vec<f64> = p2.shape(j, &g2).into_iter().map(|s| lp * s * dv).collect();
                    out.push(p2.vol_of_vol_prime(j, v) * dv);
                    HVector::from_raw(s2.clone(), out)
                },
            )
        })
        .collect();

    // C bounds γ_j, λ_j and their first two derivatives in the product norm.
    let c2 = params
        .factors
        .iter()
        .map(|f| {
            let shape_norm = f.c * (1.0 + f.a * f.a / (2.0 * f.a - params.beta)).sqrt();
            (1.0 + params.stoch_vol_amplitude.abs()) * shape_norm + f.nu.abs() * 2.0
        })
        .fold(0.0, f64::max);
    let model = SpdeModel::from_ito_drift("hjmm", semigroup, ito, vols)?
        .with_bounds(DeclaredBounds { vol_c2: Some(c2), ..Default::default() });
    Ok(model)
}

/// Wong-Zakai approximation of the HJMM equation written directly as the
/// pointwise integral equations for `(ϱ_m, ζ_m)`:
///
/// `ϱ(t, x) = ϱ(kδ, x + t - kδ) + ∫_{kδ}^t (α - β + Σ_j Ḃ_j γ_j)(ϱ(s), ζ(s))(x + t - s) ds`
///
/// `ζ(t) = ζ(kδ) + ∫_{kδ}^t (μ - ½ Σ_j λ_j λ_j' + Σ_j Ḃ_j λ_j)(ζ(s)) ds`
///
/// Each substep interpolates the integrand linearly in time, evaluates the
/// curve integral with 4-point Gauss-Legendre nodes, and resolves the implicit
/// endpoint by fixed-point sweeps. Returns the states at the fine monitoring
/// times `0, T/m_fine, ..., T`.
pub fn hjmm_wz_stepper(
    params: &HjmmParams,
    x0: &HjmmState,
    lattice: &BrownianLattice,
    m: usize,
    inner_steps: Option<usize>,
) -> Result<Vec<HjmmState>> {
    params.validate()?;
    let per_cell = lattice.check_level(m)?;
    let sub = inner_steps.unwrap_or(per_cell);
    if sub == 0 || sub % per_cell != 0 {
        return Err(Error::argument("inner_steps must be a positive multiple of m_fine / m"));
    }
    if lattice.channels() != params.factors.len() {
        return Err(Error::argument("lattice channels must equal the number of factors"));
    }
    let per_monitor = sub / per_cell;
    let delta = lattice.horizon() / m as f64;
    let hs = delta / sub as f64;
    let coarse = lattice.coarsen(m)?;
    let grid = x0.curve.grid().to_vec();
    let space = x0.curve.space.clone();
    let r = params.factors.len();

    let integrand = |rho: &[f64], zeta: f64, slopes: &[f64]| -> (Vec<f64>, f64) {
        let curve = ForwardCurve { space: space.clone(), values: rho.to_vec() };
        let alpha = hjm_drift(params, &curve, zeta);
        let (beta_c, beta_s) = wz_beta_correction(params, &curve, zeta);
        let mut g: Vec<f64> = alpha.values.iter().zip(&beta_c.values).map(|(a, b)| a - b).collect();
        let mut s = params.mu(zeta) - beta_s;
        for (j, bdot) in slopes.iter().enumerate() {
            for (gi, gam) in g.iter_mut().zip(params.gamma(j, &grid, zeta)) {
                *gi += bdot * gam;
            }
            s += bdot * params.vol_of_vol(j, zeta);
        }
        (g, s)
    };

    let nodes = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    let weights = [0.347_854_845_137_453_85, 0.652_145_154_862_546_2, 0.652_145_154_862_546_2, 0.347_854_845_137_453_85];

    let mut rho = x0.curve.values.clone();
    let mut zeta = x0.v;
    let mut out = vec![x0.clone()];
    let mut t = 0.0;
    for k in 0..m {
        let slopes: Vec<f64> = (0..r).map(|j| coarse[j * m + k] / delta).collect();
        for step in 0..sub {
            let shifted: Vec<f64> = grid.iter().map(|x| interpolate(&grid, &rho, x + hs)).collect();
            let (g0, s0) = integrand(&rho, zeta, &slopes);
            let advance = |g1: &[f64], s1: f64| -> (Vec<f64>, f64) {
                let mut next = shifted.clone();
                let mut gu = vec![0.0; grid.len()];
                for (xq, wq) in nodes.iter().zip(weights) {
                    let u = 0.5 * hs * (1.0 + xq);
                    let w = 0.5 * hs * wq;
                    let a = u / hs;
                    for i in 0..grid.len() {
                        gu[i] = (1.0 - a) * g0[i] + a * g1[i];
                    }
                    for (nx, x) in next.iter_mut().zip(&grid) {
                        *nx += w * interpolate(&grid, &gu, x + hs - u);
                    }
                }
                (next, zeta + hs * (0.5 * s0 + 0.5 * s1))
            };
            let (mut rn, mut zn) = advance(&g0, s0);
            let mut converged = false;
            for sweep in 0..crate::schemes::MAX_CORRECTOR_SWEEPS {
                let (g1, s1) = integrand(&rn, zn, &slopes);
                let (r2, z2) = advance(&g1, s1);
                let mut diff: Vec<f64> = r2.iter().zip(&rn).map(|(a, b)| a - b).collect();
                let dz = z2 - zn;
                let dn = hbeta_norm_on_grid(&grid, params.beta, &diff).hypot(dz);
                diff.clear();
                let scale = hbeta_norm_on_grid(&grid, params.beta, &r2).hypot(z2).max(1.0);
                rn = r2;
                zn = z2;
                if sweep + 1 >= crate::schemes::MIN_CORRECTOR_SWEEPS && dn <= crate::schemes::CORRECTOR_TOL * scale {
                    converged = true;
                    break;
                }
            }
            t += hs;
            if !converged {
                return Err(Error::Numeric { time: t, message: "inner fixed point did not converge".into() });
            }
            rho = rn;
            zeta = zn;
            if (step + 1) % per_monitor == 0 {
                let curve = ForwardCurve::new(space.clone(), rho.clone())
                    .map_err(|_| Error::Numeric { time: t, message: "non-finite curve".into() })?;
                out.push(HjmmState { curve, v: zeta });
            }
        }
    }
    Ok(out)
}
