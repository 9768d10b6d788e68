use proptest::prelude::*;
use wz_spde::catalog::{self, InitialState, ModelConfig};
use wz_spde::hilbert::{HVector, SpaceDescriptor};
use wz_spde::noise::{bracket, gaussian_even_moment, BrownianLattice};
use wz_spde::schemes::{euler_maruyama, exponential_euler, run_scheme, SchemeConfig, SchemeKind};
use wz_spde::semigroup::SemigroupModel;
use wz_spde::study::{fit_rate, run_study, Pair, StudyConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coarse_increments_are_nested_sums(seed in any::<u64>(), level in 0u32..6) {
        let lat = BrownianLattice::generate(seed, 0, 2, 1.0, 64).unwrap();
        let m = 1usize << level;
        let coarse = lat.coarsen(m).unwrap();
        for j in 0..2 {
            let total: f64 = coarse[j * m..(j + 1) * m].iter().sum();
            prop_assert!((total - lat.path_value(j, 64)).abs() < 1e-12);
        }
        if m > 1 {
            let half = lat.coarsen(m / 2).unwrap();
            for (k, h) in half.iter().enumerate() {
                prop_assert!((coarse[2 * k] + coarse[2 * k + 1] - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bracket_contains_point(t in 0.0f64..=2.0, m in 1usize..200) {
        let (lo, hi) = bracket(t, m, 2.0).unwrap();
        prop_assert!(lo <= t && t <= hi);
        prop_assert!((hi - lo - 2.0 / m as f64).abs() < 1e-12);
    }

    #[test]
    fn spectral_semigroup_composes(
        eig in prop::collection::vec(0.0f64..50.0, 1..8),
        s in 0.0f64..1.0,
        t in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let eigenvalues: Vec<f64> = eig.iter().map(|e| -e).collect();
        let n = eigenvalues.len();
        let space = SpaceDescriptor::spectral(eigenvalues).unwrap();
        let sg = SemigroupModel::new(space.clone());
        let coeffs: Vec<f64> = (0..n).map(|k| ((seed >> (k % 60)) & 0xff) as f64 / 255.0 - 0.5).collect();
        let x = HVector::new(space, coeffs).unwrap();
        let two = sg.apply(t, &sg.apply(s, &x).unwrap()).unwrap();
        let one = sg.apply(s + t, &x).unwrap();
        prop_assert!(two.distance(&one).unwrap() <= 1e-12 * x.norm().max(1.0));
        prop_assert!(one.norm() <= x.norm() * (1.0 + 1e-15));
    }

    #[test]
    fn exponential_euler_equals_euler_maruyama_without_linear_part(seed in any::<u64>(), level in 0u32..5) {
        let model = catalog::geometric(0.4).unwrap();
        let x0 = ModelConfig::Geometric { sigma: 0.4 }.initial_state(&model, &InitialState::Default).unwrap();
        let lat = BrownianLattice::generate(seed, 1, 1, 1.0, 64).unwrap();
        let cfg = SchemeConfig::new(1 << level);
        let em = euler_maruyama(&model, &x0, &lat, &cfg).unwrap();
        let ee = exponential_euler(&model, &x0, &lat, &cfg).unwrap();
        prop_assert_eq!(em.states(), ee.states());
    }

    #[test]
    fn trajectories_share_the_fine_grid(seed in any::<u64>(), kind in prop::sample::select(vec![
        SchemeKind::WongZakai, SchemeKind::EulerMaruyama, SchemeKind::ExponentialEuler, SchemeKind::Reference,
    ])) {
        let model = catalog::quantization(4, 0.5, 2, 0.3).unwrap();
        let x0 = HVector::zeros(model.space().clone());
        let lat = BrownianLattice::generate(seed, 0, 2, 0.5, 32).unwrap();
        let traj = run_scheme(kind, &model, &x0, &lat, &SchemeConfig::new(4)).unwrap();
        prop_assert_eq!(traj.times().len(), 33);
        for (n, t) in traj.times().iter().enumerate() {
            prop_assert_eq!(*t, lat.time(n));
        }
        prop_assert_eq!(traj.states()[0].coeffs(), x0.coeffs());
    }

    #[test]
    fn rate_fit_recovers_exact_power_laws(c in 1e-6f64..1e3, rate in 0.1f64..3.0) {
        let pts: Vec<(f64, f64, f64)> = [4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&m: &f64| (m, c * m.powf(-rate), 0.01 * c * m.powf(-rate)))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        prop_assert!((fit.slope + rate).abs() < 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
        prop_assert!(fit.max_residual < 1e-10);
    }

    #[test]
    fn gaussian_moments_follow_the_recursion(q in 0.1f64..20.0, s2 in 0.01f64..10.0) {
        let lo = gaussian_even_moment(q, s2).unwrap();
        let hi = gaussian_even_moment(q + 1.0, s2).unwrap();
        prop_assert!((hi / (lo * s2) - (2.0 * q + 1.0)).abs() < 1e-9 * (2.0 * q + 1.0));
    }
}

#[test]
fn study_is_independent_of_worker_count() {
    let study = StudyConfig {
        model: ModelConfig::default_nemytskii(),
        x0: InitialState::Default,
        horizon: 1.0,
        p: 2.0,
        m_list: vec![4, 8, 16],
        m_fine: 128,
        paths: 24,
        base_seed: 77,
        pair: Pair::WzVsEm,
        inner_refinement: 1,
    };
    let a = run_study(&study, Some(1)).unwrap();
    let b = run_study(&study, Some(5)).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.fit, b.fit);
    assert_eq!(a.monotone_path_fraction, b.monotone_path_fraction);
}
