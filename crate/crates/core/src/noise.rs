//! Brownian lattices, bracket operators, polygonal noise and Gaussian moment
//! utilities.
//!
//! A [`BrownianLattice`] stores `r` channels of increments on the finest
//! dyadic grid. Every coarser path is obtained by summing blocks of fine
//! increments, so all approximation levels share one driving path.
//!
//! Streams: a lattice is identified by `(seed, stream)`. The generator is
//! ChaCha20 seeded from `seed` and positioned on ChaCha stream `stream`; Monte
//! Carlo studies use the path index as the stream. Normals are drawn channel
//! by channel, cell by cell.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::stats::{mean_estimate, MeanEstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianLattice {
    channels: usize,
    horizon: f64,
    m_fine: usize,
    seed: u64,
    stream: u64,
    /// channel-major: `increments[j * m_fine + i]`
    increments: Vec<f64>,
}

impl BrownianLattice {
    pub fn generate(seed: u64, stream: u64, channels: usize, horizon: f64, m_fine: usize) -> Result<Self> {
        check_shape(channels, horizon, m_fine)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let scale = (horizon / m_fine as f64).sqrt();
        let increments = (0..channels * m_fine)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Ok(Self { channels, horizon, m_fine, seed, stream, increments })
    }

    /// Lattice with caller-supplied increments (channel-major). Seed and stream are zero.
    pub fn from_increments(channels: usize, horizon: f64, m_fine: usize, increments: Vec<f64>) -> Result<Self> {
        check_shape(channels, horizon, m_fine)?;
        if increments.len() != channels * m_fine {
            return Err(Error::argument(format!(
                "expected {} increments, got {}",
                channels * m_fine,
                increments.len()
            )));
        }
        if increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("increments must be finite"));
        }
        Ok(Self { channels, horizon, m_fine, seed: 0, stream: 0, increments })
    }

    pub fn zeroed(channels: usize, horizon: f64, m_fine: usize) -> Result<Self> {
        Self::from_increments(channels, horizon, m_fine, vec![0.0; channels * m_fine])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn m_fine(&self) -> usize {
        self.m_fine
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn fine_step(&self) -> f64 {
        self.horizon / self.m_fine as f64
    }

    /// Fine increments of channel `j` (0-based).
    pub fn increments(&self, j: usize) -> &[f64] {
        &self.increments[j * self.m_fine..(j + 1) * self.m_fine]
    }

    /// `n`-th fine monitoring time, `n * T / m_fine`.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.horizon / self.m_fine as f64
    }

    pub fn check_level(&self, m: usize) -> Result<usize> {
        if m == 0 || self.m_fine % m != 0 {
            return Err(Error::argument(format!("m = {m} does not divide m_fine = {}", self.m_fine)));
        }
        Ok(self.m_fine / m)
    }

    /// Channel-major `channels × m` increments over the cells of level `m`,
    /// each the sum of its fine increments in index order.
    pub fn coarsen(&self, m: usize) -> Result<Vec<f64>> {
        let block = self.check_level(m)?;
        let mut out = Vec::with_capacity(self.channels * m);
        for j in 0..self.channels {
            let inc = self.increments(j);
            for k in 0..m {
                out.push(inc[k * block..(k + 1) * block].iter().sum());
            }
        }
        Ok(out)
    }

    /// Cell-constant slope of the polygonal path of channel `j` at time `t`.
    pub fn polygonal_derivative(&self, m: usize, j: usize, t: f64) -> Result<f64> {
        let block = self.check_level(m)?;
        if j >= self.channels {
            return Err(Error::argument(format!("channel {j} out of range ({} channels)", self.channels)));
        }
        let (lo, _) = bracket(t, m, self.horizon)?;
        let delta = self.horizon / m as f64;
        let k = ((lo / delta).round() as usize).min(m - 1);
        let inc: f64 = self.increments(j)[k * block..(k + 1) * block].iter().sum();
        Ok(inc / delta)
    }

    /// Brownian value `B^j(n T / m_fine)` at fine node `n`.
    pub fn path_value(&self, j: usize, n: usize) -> f64 {
        self.increments(j)[..n].iter().sum()
    }

    /// CSV dump with header `channel,cell,increment`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "channel,cell,increment")?;
        for j in 0..self.channels {
            for (i, v) in self.increments(j).iter().enumerate() {
                writeln!(w, "{j},{i},{v:e}")?;
            }
        }
        Ok(())
    }

    /// Binary dump: magic `BLAT`, then little-endian `u64` channels, `u64`
    /// m_fine, `f64` horizon, `u64` seed, `u64` stream, followed by the
    /// channel-major increments as little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"BLAT")?;
        w.write_all(&(self.channels as u64).to_le_bytes())?;
        w.write_all(&(self.m_fine as u64).to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.stream.to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"BLAT" {
            return Err(Error::Format("not a lattice dump".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let channels = u64::from_le_bytes(next(&mut r)?) as usize;
        let m_fine = u64::from_le_bytes(next(&mut r)?) as usize;
        let horizon = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let stream = u64::from_le_bytes(next(&mut r)?);
        check_shape(channels, horizon, m_fine)?;
        let mut increments = Vec::with_capacity(channels * m_fine);
        for _ in 0..channels * m_fine {
            increments.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(Self { channels, horizon, m_fine, seed, stream, increments })
    }
}

fn check_shape(channels: usize, horizon: f64, m_fine: usize) -> Result<()> {
    if channels == 0 {
        return Err(Error::argument("at least one noise channel is required"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::argument(format!("horizon must be positive, got {horizon}")));
    }
    if m_fine == 0 || !m_fine.is_power_of_two() {
        return Err(Error::argument(format!("m_fine must be a power of two, got {m_fine}")));
    }
    Ok(())
}

/// `([t]_m^-, [t]_m^+)` for the uniform partition of `[0, T]` into `m` cells.
/// `t = T` belongs to the last cell.
pub fn bracket(t: f64, m: usize, horizon: f64) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::argument("m must be positive"));
    }
    if !(t >= 0.0 && t <= horizon) {
        return Err(Error::argument(format!("t = {t} outside [0, {horizon}]")));
    }
    let delta = horizon / m as f64;
    let mut k = (t / delta).floor() as usize;
    // guard against roundoff in t / delta near cell boundaries
    while k > 0 && k as f64 * delta > t {
        k -= 1;
    }
    while k + 1 < m && (k + 1) as f64 * delta <= t {
        k += 1;
    }
    let k = k.min(m - 1);
    let hi = if k + 1 == m { horizon } else { (k + 1) as f64 * delta };
    Ok((k as f64 * delta, hi))
}

/// `E|X|^{2q}` for `X ~ N(0, sigma2)`: `2^q Γ(q + 1/2) / Γ(1/2) sigma2^q`.
pub fn gaussian_even_moment(q: f64, sigma2: f64) -> Result<f64> {
    if !(q > 0.0 && q.is_finite()) || !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::argument(format!("need q > 0 and sigma2 > 0, got q = {q}, sigma2 = {sigma2}")));
    }
    if q.fract() == 0.0 && q <= 170.0 {
        // (2q - 1)!! exactly for integer orders
        let mut df = 1.0;
        let mut k = 2.0 * q - 1.0;
        while k > 1.0 {
            df *= k;
            k -= 2.0;
        }
        return Ok(df * sigma2.powf(q));
    }
    let ln = q * std::f64::consts::LN_2 + ln_gamma(q + 0.5) - ln_gamma(0.5) + q * sigma2.ln();
    Ok(ln.exp())
}

/// Per-path values `max_k |ΔB_k / δ_m|^{2q}` over all channels of every
/// lattice, and their Monte Carlo mean.
pub fn sup_derivative_moment(ensemble: &[BrownianLattice], m: usize, q: f64) -> Result<MeanEstimate> {
    if ensemble.is_empty() {
        return Err(Error::argument("empty lattice ensemble"));
    }
    if !(q > 0.0) {
        return Err(Error::argument("q must be positive"));
    }
    let samples: Vec<Vec<f64>> = ensemble
        .par_iter()
        .map(|lat| -> Result<Vec<f64>> {
            let coarse = lat.coarsen(m)?;
            let delta = lat.horizon / m as f64;
            Ok(coarse
                .chunks(m)
                .map(|ch| ch.iter().map(|d| (d / delta).abs()).fold(0.0, f64::max).powf(2.0 * q))
                .collect())
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = samples.into_iter().flatten().collect();
    Ok(mean_estimate(&flat))
}

/// Lattices for streams `0..paths` of `seed`, generated in parallel.
pub fn ensemble(seed: u64, paths: usize, channels: usize, horizon: f64, m_fine: usize) -> Result<Vec<BrownianLattice>> {
    (0..paths as u64)
        .into_par_iter()
        .map(|s| BrownianLattice::generate(seed, s, channels, horizon, m_fine))
        .collect()
}
