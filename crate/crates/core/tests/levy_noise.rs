use levylab_core::levy_noise::*;
use levylab_core::quadrature::{log_edges, uniform_edges, GaussLegendre};
use levylab_core::rng::SeedTree;
use levylab_core::stats::{hill_estimator, ks_two_sample, mean_and_stderr};
use proptest::prelude::*;

fn alpha(a: f64) -> StabilityIndex {
    StabilityIndex::new(a).unwrap()
}

fn draws(sampler: &StableSampler, dt: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeedTree::new(seed).stream(0);
    (0..n).map(|_| sampler.increment(dt, &mut rng)[0]).collect()
}

#[test]
fn empirical_characteristic_function_1d() {
    let sampler = StableSampler::new(1.5, 1, &SpectralMeasure::Isotropic).unwrap();
    let xs = draws(&sampler, 1.0, 200_000, 1);
    let c = stable_constant(1.5);
    for k in 1..=10 {
        let xi = 0.25 * k as f64;
        let cosines: Vec<f64> = xs.iter().map(|x| (xi * x).cos()).collect();
        let (m, se) = mean_and_stderr(&cosines);
        let exact = (-c * xi.powf(1.5)).exp();
        assert!((m - exact).abs() < 4.0 * se, "xi={xi}: {m} vs {exact} (se {se})");
    }
}

#[test]
fn self_similarity_two_sample() {
    let sampler = StableSampler::new(1.3, 1, &SpectralMeasure::Isotropic).unwrap();
    let unit = draws(&sampler, 1.0, 20_000, 2);
    let dt: f64 = 0.05;
    let scaled: Vec<f64> = draws(&sampler, dt, 20_000, 3)
        .into_iter()
        .map(|x| x / dt.powf(1.0 / 1.3))
        .collect();
    let ks = ks_two_sample(&unit, &scaled);
    assert!(ks.p_value > 0.01, "{ks:?}");
}

#[test]
fn isotropic_2d_projection_has_stable_law() {
    let d = 2;
    let a = 1.6;
    let sampler = StableSampler::new(a, d, &SpectralMeasure::Isotropic).unwrap();
    let spec = LevyNoiseSpec::stable(alpha(a), d, SpectralMeasure::Isotropic).unwrap();
    let mut rng = SeedTree::new(4).stream(0);
    let xs: Vec<Vec<f64>> = (0..100_000).map(|_| sampler.increment(1.0, &mut rng)).collect();
    for xi in [[0.7, 0.0], [0.0, -0.7], [0.5, 0.5], [1.1, -0.4]] {
        let c: Vec<f64> = xs.iter().map(|x| (xi[0] * x[0] + xi[1] * x[1]).cos()).collect();
        let (m, se) = mean_and_stderr(&c);
        let exact = spec.stable_symbol(&xi).exp();
        assert!((m - exact).abs() < 4.0 * se, "{xi:?}: {m} vs {exact}");
    }
}

#[test]
fn discrete_atoms_characteristic_function() {
    let mu = SpectralMeasure::DiscreteAtoms {
        atoms: vec![
            SpectralAtom {
                direction: vec![1.0, 0.0],
                weight: 1.0,
            },
            SpectralAtom {
                direction: vec![1.0, 1.0],
                weight: 0.5,
            },
        ],
    };
    let spec = LevyNoiseSpec::stable(alpha(1.4), 2, mu.clone()).unwrap();
    let sampler = StableSampler::from_spec(&spec).unwrap();
    let mut rng = SeedTree::new(5).stream(0);
    let xs: Vec<Vec<f64>> = (0..100_000).map(|_| sampler.increment(0.5, &mut rng)).collect();
    for xi in [[0.6, 0.2], [-0.3, 0.9]] {
        let c: Vec<f64> = xs.iter().map(|x| (xi[0] * x[0] + xi[1] * x[1]).cos()).collect();
        let (m, se) = mean_and_stderr(&c);
        let exact = (0.5 * spec.stable_symbol(&xi)).exp();
        assert!((m - exact).abs() < 4.0 * se, "{xi:?}: {m} vs {exact}");
    }
}

#[test]
fn q_modulated_stable_family_reduces_to_stable() {
    let spec = LevyNoiseSpec::stable(alpha(1.5), 1, SpectralMeasure::Isotropic).unwrap();
    let q = QModulatedSampler::new(&spec, 0.02, SmallJumpPolicy::GaussianCorrection).unwrap();
    let s = StableSampler::from_spec(&spec).unwrap();
    let n = 20_000;
    let mut rng = SeedTree::new(6).stream(0);
    let mut buf = [0.0];
    let a: Vec<f64> = (0..n)
        .map(|_| {
            q.increment_into(1.0, &mut rng, &mut buf).unwrap();
            buf[0]
        })
        .collect();
    let b = draws(&s, 1.0, n, 7);
    let ks = ks_two_sample(&a, &b);
    assert!(ks.p_value > 0.01, "{ks:?}");
}

#[test]
fn truncated_family_never_jumps_beyond_radius() {
    let spec = LevyNoiseSpec::new(
        alpha(1.5),
        2,
        SpectralMeasure::Cylindrical,
        QFamily::Truncated { r0: 0.8 },
        1.0,
    )
    .unwrap();
    let q = QModulatedSampler::new(&spec, 0.01, SmallJumpPolicy::Drop).unwrap();
    let mut rng = SeedTree::new(8).stream(0);
    let jumps = q.large_jumps(20.0, &mut rng).unwrap();
    assert!(jumps.len() > 1000);
    let max = jumps
        .iter()
        .map(|j| j.size.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    assert!(max <= 0.8, "{max}");
}

#[test]
fn tempered_jump_counts_match_tail_mass() {
    let rate = 0.5;
    let a = 1.5;
    let spec = LevyNoiseSpec::new(
        alpha(a),
        1,
        SpectralMeasure::Isotropic,
        QFamily::Tempered { rate },
        1.0,
    )
    .unwrap();
    let q = QModulatedSampler::new(&spec, 0.1, SmallJumpPolicy::Drop).unwrap();
    let mut rng = SeedTree::new(9).stream(0);
    let horizon = 400.0;
    let jumps = q.large_jumps(horizon, &mut rng).unwrap();
    let g = GaussLegendre::new(30);
    for radius in [0.5f64, 2.0, 5.0] {
        // Tail mass ∫_R^∞ e^{-λr} r^{-1-α} dr by panel quadrature.
        let tail = g.integrate_panels(&log_edges(radius, radius * 1e3, 20), |r| {
            (-rate * r).exp() * r.powf(-1.0 - a)
        });
        let expected = tail * horizon;
        let observed = jumps.iter().filter(|j| j.size[0].abs() > radius).count() as f64;
        assert!(
            (observed - expected).abs() < 4.0 * expected.sqrt() + 1.0,
            "R={radius}: {observed} vs {expected}"
        );
        let stable_expected = radius.powf(-a) / a * horizon;
        if radius >= 2.0 {
            assert!(observed < 0.5 * stable_expected);
        }
    }
}

#[test]
fn hill_estimator_recovers_index() {
    let sampler = StableSampler::new(1.5, 1, &SpectralMeasure::Isotropic).unwrap();
    let xs = draws(&sampler, 1.0, 200_000, 10);
    let k = (xs.len() as f64).sqrt() as usize;
    let est = hill_estimator(&xs, k);
    assert!((est - 1.5).abs() < 0.1, "{est}");
}

// Independent oracle: plain panel quadrature to a radius where Q is below 1e-20.
fn relativistic_oracle(a: f64, xi: f64) -> f64 {
    let power = a / 2.0;
    let q = |r: f64| (1.0 + r).powf(power) * (-r).exp();
    let f = |r: f64| -2.0 * (0.5 * xi * r).sin().powi(2) * q(r) * r.powf(-1.0 - a);
    let g = GaussLegendre::new(30);
    let mut edges = log_edges(1e-10, 1.0, 12);
    edges.extend(uniform_edges(1.0, 70.0, 0.25).into_iter().skip(1));
    let origin = -xi * xi * 1e-10f64.powf(2.0 - a) / (2.0 * (2.0 - a));
    origin + g.integrate_panels(&edges, f)
}

#[test]
fn relativistic_symbol_matches_oracle() {
    let spec = LevyNoiseSpec::new(
        alpha(1.5),
        1,
        SpectralMeasure::Isotropic,
        QFamily::Relativistic,
        QFamily::Relativistic.natural_sup(1.5, 1),
    )
    .unwrap();
    let v = levy_symbol(&spec, &[1.0], &SymbolQuadrature::default()).unwrap();
    let oracle = relativistic_oracle(1.5, 1.0);
    assert!((v - oracle).abs() < 1e-6, "{v} vs {oracle}");
}

#[test]
fn q_density_examples() {
    let stable = LevyNoiseSpec::stable(alpha(1.5), 2, SpectralMeasure::Isotropic).unwrap();
    assert_eq!(stable.q_density(&[0.3, -2.0]).unwrap(), 1.0);
    let trunc = LevyNoiseSpec::new(alpha(1.5), 1, SpectralMeasure::Isotropic, QFamily::Truncated { r0: 1.0 }, 1.0)
        .unwrap();
    assert_eq!(trunc.q_density(&[2.0]).unwrap(), 0.0);
}

#[test]
fn degenerate_spectral_measure_rejected() {
    let mu = SpectralMeasure::DiscreteAtoms {
        atoms: vec![SpectralAtom {
            direction: vec![1.0, 0.0],
            weight: 1.0,
        }],
    };
    assert!(LevyNoiseSpec::stable(alpha(1.5), 2, mu).is_err());
}

fn family_strategy() -> impl Strategy<Value = QFamily> {
    prop_oneof![
        Just(QFamily::Stable),
        (0.2f64..3.0).prop_map(|r0| QFamily::Truncated { r0 }),
        (0.1f64..2.0).prop_map(|rate| QFamily::Tempered { rate }),
        Just(QFamily::Relativistic),
        (1.95f64..3.0, 0.3f64..2.0).prop_map(|(beta, r0)| QFamily::Layered { beta, r0 }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn symbol_is_nonpositive(fam in family_strategy(), a in 1.1f64..1.9, xi in -50.0f64..50.0) {
        let sup = fam.natural_sup(a, 1);
        let spec = LevyNoiseSpec::new(alpha(a), 1, SpectralMeasure::Isotropic, fam, sup).unwrap();
        let v = levy_symbol(&spec, &[xi], &SymbolQuadrature::default()).unwrap();
        prop_assert!(v <= 0.0);
    }

    #[test]
    fn stable_symbol_homogeneity(a in 1.1f64..1.9, x in 0.01f64..20.0, y in -20.0f64..20.0) {
        let cfg = SymbolQuadrature::default();
        for (d, xi) in [(1usize, vec![x]), (2, vec![x, y])] {
            let spec = LevyNoiseSpec::stable(alpha(a), d, SpectralMeasure::Isotropic).unwrap();
            let one = levy_symbol(&spec, &xi, &cfg).unwrap();
            let two: Vec<f64> = xi.iter().map(|v| 2.0 * v).collect();
            let two = levy_symbol(&spec, &two, &cfg).unwrap();
            prop_assert!((two / one - 2f64.powf(a)).abs() < 1e-6);
        }
    }

    #[test]
    fn stable_samples_are_symmetric(a in 1.1f64..1.9, seed in any::<u64>()) {
        let sampler = StableSampler::new(a, 1, &SpectralMeasure::Isotropic).unwrap();
        let xs = draws(&sampler, 1.0, 20_000, seed);
        // Bounded odd functionals have finite variance under heavy tails.
        for f in [|x: f64| x.atan(), |x: f64| x.sin(), |x: f64| x.signum()] {
            let v: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
            let (m, se) = mean_and_stderr(&v);
            prop_assert!(m.abs() < 4.0 * se, "{m} {se}");
        }
    }
}
