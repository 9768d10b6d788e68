use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wz_spde::catalog::ModelConfig;
use wz_spde::hilbert::HVector;
use wz_spde::hjmm::{bond_term_structure, write_bond_csv, HjmmState};
use wz_spde::model::{validate_model, ProbeResult, SpdeModel, ValidationOptions, ValidationReport};
use wz_spde::noise::{gaussian_even_moment, BrownianLattice};
use wz_spde::schemes::{run_scheme, SchemeConfig, SchemeKind};
use wz_spde::semigroup::SemigroupKind;
use wz_spde::stats::MeanEstimate;
use wz_spde::study::{run_study, ConvergenceReport, StudyConfig};

use crate::config::{ExperimentConfig, LatticeFormat};
use crate::CliError;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Runs each requested scheme on one shared lattice and writes
/// `trajectory_<tag>.csv` per scheme. HJMM runs also write the terminal curve
/// and bond prices.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let choice = cfg.require_model()?;
    let m = cfg.scheme.m.ok_or_else(|| CliError::Schema("simulate needs scheme.m".into()))?;
    if cfg.scheme.schemes.is_empty() {
        return Err(CliError::Schema("scheme.schemes is empty".into()));
    }
    let model = choice.build()?;
    let x0 = choice.initial_state(&model, &cfg.x0)?;
    let (seed, stream) = (cfg.monte_carlo.base_seed, cfg.monte_carlo.stream);
    let lattice = BrownianLattice::generate(seed, stream, model.noise_dim(), cfg.scheme.horizon, cfg.scheme.m_fine)?;
    let scheme_cfg = SchemeConfig { m, inner_steps: cfg.scheme.inner_steps };
    ensure_dir(out)?;
    match cfg.output.lattice {
        Some(LatticeFormat::Csv) => lattice.write_csv(create(out, "lattice.csv")?)?,
        Some(LatticeFormat::Binary) => lattice.write_binary(create(out, "lattice.bin")?)?,
        None => {}
    }
    for &kind in &cfg.scheme.schemes {
        let traj = run_scheme(kind, &model, &x0, &lattice, &scheme_cfg).map_err(|e| match e {
            wz_spde::Error::Numeric { .. } => CliError::Numeric(format!("seed {seed}, stream {stream}, scheme {}: {e}", kind.tag())),
            other => other.into(),
        })?;
        traj.write_csv(create(out, &format!("trajectory_{}.csv", kind.tag()))?)?;
        if let ModelConfig::Hjmm(_) = choice {
            write_hjmm_extras(cfg, out, kind, traj.terminal())?;
        }
        println!("{}: {} monitoring times written", kind.tag(), traj.times().len());
    }
    Ok(())
}

fn write_hjmm_extras(cfg: &ExperimentConfig, out: &Path, kind: SchemeKind, terminal: &HVector) -> Result<(), CliError> {
    let state = HjmmState::from_hvector(terminal)?;
    state.curve.write_csv(create(out, &format!("curve_{}.csv", kind.tag()))?)?;
    let maturities = cfg.output.bond_maturities.clone().unwrap_or_else(|| vec![1.0, 2.0, 5.0, 10.0, 20.0, 30.0]);
    let prices = bond_term_structure(&state.curve, &maturities)?;
    write_bond_csv(&prices, create(out, &format!("bonds_{}.csv", kind.tag()))?)?;
    Ok(())
}

fn synthetic_report(cfg: &ExperimentConfig) -> Result<ConvergenceReport, CliError> {
    let syn = cfg.synthetic.as_ref().unwrap();
    if syn.m_list.len() < 3 {
        return Err(CliError::Schema("synthetic.m_list needs at least three values".into()));
    }
    if !(syn.constant > 0.0) || syn.m_list.contains(&0) {
        return Err(CliError::Schema("synthetic estimates must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(syn.seed);
    let estimates: Vec<MeanEstimate> = syn
        .m_list
        .iter()
        .map(|&m| {
            let u: f64 = if syn.relative_noise > 0.0 { rng.random_range(-1.0..=1.0) } else { 0.0 };
            let mean = syn.constant * (m as f64).powf(-syn.rate) * (1.0 + syn.relative_noise * u);
            MeanEstimate { mean, stderr: 0.01 * mean, samples: 1 }
        })
        .collect();
    Ok(ConvergenceReport::from_estimates(
        None,
        cfg.scheme.horizon,
        cfg.scheme.p,
        &syn.m_list,
        &estimates,
        1.0,
        0.0,
    ))
}

/// Runs a convergence study (or the synthetic self-test) and writes the JSON
/// report and the per-`m` CSV table.
pub fn converge(cfg: &ExperimentConfig, workers: Option<usize>, out: &Path) -> Result<ConvergenceReport, CliError> {
    let report = if cfg.synthetic.is_some() {
        synthetic_report(cfg)?
    } else {
        let m_list = cfg.scheme.m_list.clone().ok_or_else(|| CliError::Schema("converge needs scheme.m_list".into()))?;
        if m_list.len() < 3 {
            return Err(CliError::Schema("converge needs at least three m values to fit a rate".into()));
        }
        let study = StudyConfig {
            model: cfg.require_model()?.clone(),
            x0: cfg.x0.clone(),
            horizon: cfg.scheme.horizon,
            p: cfg.scheme.p,
            m_list,
            m_fine: cfg.scheme.m_fine,
            paths: cfg.monte_carlo.paths,
            base_seed: cfg.monte_carlo.base_seed,
            pair: cfg.scheme.pair,
            inner_refinement: cfg.scheme.inner_refinement,
        };
        run_study(&study, workers)?
    };
    ensure_dir(out)?;
    report.write_json(create(out, &cfg.output.report_json)?)?;
    report.write_csv(create(out, &cfg.output.report_csv)?)?;
    for r in &report.rows {
        println!("m={} delta_m={:e} estimate={:e} stderr={:e} paths={}", r.m, r.delta_m, r.estimate, r.stderr, r.paths);
    }
    match report.fit {
        Some(f) => println!("slope {:.6} intercept {:.6} max_residual {:.3e}", f.slope, f.intercept, f.max_residual),
        None => println!("slope degenerate"),
    }
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct ModelValidation {
    pub report: ValidationReport,
    pub semigroup: Vec<ProbeResult>,
}

#[derive(Debug, Serialize)]
pub struct ValidationSummary {
    pub passed: bool,
    pub models: Vec<ModelValidation>,
    pub moments: Vec<ProbeResult>,
}

fn probe(name: &str, measured: f64, threshold: f64, detail: impl Into<String>) -> ProbeResult {
    ProbeResult { name: name.into(), passed: measured <= threshold, measured, threshold, detail: detail.into() }
}

fn semigroup_probes(model: &SpdeModel, x: &HVector) -> Result<Vec<ProbeResult>, CliError> {
    let sg = model.semigroup();
    let scale = x.norm().max(1e-300);
    let mut out = vec![probe("semigroup-identity", sg.apply(0.0, x)?.distance(x)? / scale, 0.0, "S_0 x = x")];
    let two = sg.apply(0.3, &sg.apply(0.2, x)?)?;
    let one = sg.apply(0.5, x)?;
    let law = two.distance(&one)? / scale;
    // Grid shifts interpolate twice. The weighted norm includes the derivative,
    // which linear interpolation only gets to first order on the coarse tail cells.
    let (tol, detail) = if sg.exact_composition() {
        (1e-12, "S_0.3 S_0.2 x = S_0.5 x")
    } else {
        (1e-2, "S_0.3 S_0.2 x = S_0.5 x up to interpolation")
    };
    out.push(probe("semigroup-law", law, tol, detail));
    if matches!(sg.kind(), SemigroupKind::SpectralDiagonal) {
        let eps = 1e-7;
        let ax = sg.generator_apply(x)?;
        let fd = sg.apply(eps, x)?.sub(x)?.scale(1.0 / eps);
        let rel = fd.distance(&ax)? / ax.norm().max(1e-300);
        out.push(probe("generator-consistency", if ax.norm() == 0.0 { fd.norm() } else { rel }, 1e-4, "(S_ε x - x)/ε ≈ Ax"));
    }
    Ok(out)
}

fn moment_probes() -> Result<Vec<ProbeResult>, CliError> {
    let mut out = Vec::new();
    for (q, exact) in [(1.0, 1.0), (2.0, 3.0), (3.0, 15.0)] {
        let got = gaussian_even_moment(q, 1.0)?;
        out.push(probe(&format!("gaussian-moment-q{q}"), (got - exact).abs(), 1e-12, format!("E[Z^{}] = {exact}", 2.0 * q)));
    }
    // Non-integer orders go through the Gamma function; check the recursion
    // E|Z|^{2q+2} = (2q + 1) E|Z|^{2q}.
    let q = 1.5;
    let rec = (gaussian_even_moment(q + 1.0, 1.0)? - (2.0 * q + 1.0) * gaussian_even_moment(q, 1.0)?).abs();
    out.push(probe("gaussian-moment-recursion", rec / gaussian_even_moment(q + 1.0, 1.0)?, 1e-12, "q = 1.5"));
    let scaled = (gaussian_even_moment(2.0, 0.25)? - 3.0 * 0.0625).abs();
    out.push(probe("gaussian-moment-variance-scaling", scaled, 1e-15, "E[(σZ)^4] = 3σ^4"));
    Ok(out)
}

/// Runs the model probe suite on the configured model (every built-in if
/// none is given), the semigroup checks and the Gaussian moment checks.
pub fn validate(cfg: &ExperimentConfig, out: &Path) -> Result<ValidationSummary, CliError> {
    let choices = match &cfg.model {
        Some(m) => vec![m.clone()],
        None => ModelConfig::builtins(),
    };
    let opts = ValidationOptions { samples: cfg.validation.samples, ..Default::default() };
    let mut models = Vec::new();
    for choice in &choices {
        let mut model = choice.build()?;
        if cfg.validation.jacobian_scale != 1.0 {
            model = model.with_scaled_jacobians(cfg.validation.jacobian_scale);
        }
        let x0 = choice.initial_state(&model, &cfg.x0)?;
        let report = validate_model(&model, &opts);
        let semigroup = semigroup_probes(&model, &x0)?;
        for p in report.failed_probes().chain(semigroup.iter().filter(|p| !p.passed)) {
            println!("{}: probe {} FAILED ({:e} > {:e})", model.name(), p.name, p.measured, p.threshold);
        }
        models.push(ModelValidation { report, semigroup });
    }
    let moments = moment_probes()?;
    let passed = models.iter().all(|m| m.report.passed && m.semigroup.iter().all(|p| p.passed))
        && moments.iter().all(|p| p.passed);
    let summary = ValidationSummary { passed, models, moments };
    ensure_dir(out)?;
    serde_json::to_writer_pretty(create(out, "validation.json")?, &summary)
        .map_err(|e| CliError::Io(e.to_string()))?;
    println!("validation {}", if passed { "passed" } else { "FAILED" });
    Ok(summary)
}
