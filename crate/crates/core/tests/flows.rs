use levylab_core::flows::*;
use levylab_core::quadrature::GaussLegendre;
use levylab_core::rng::SeedTree;
use levylab_core::scale_geometry::{ChainMatrix, ChainShape, Resolvent};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn scalar(n: usize) -> ChainShape {
    ChainShape::scalar(n).unwrap()
}

fn tight() -> FlowConfig {
    FlowConfig {
        tol: 1e-11,
        ..Default::default()
    }
}

fn smooth_drift() -> DriftSpec {
    DriftSpec::new(
        scalar(2),
        |t, x, o| {
            o[0] = (x[0] + x[1]).sin() + 0.2 * t;
            o[1] = 0.5 * x[1].cos();
        },
        vec![1.0, 1.0],
        1.0,
        "smooth",
    )
    .unwrap()
}

fn chain_matrix() -> ChainMatrix {
    ChainMatrix::constant(scalar(2), DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 1.0, -0.3])).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn linear_flow_matches_rotation_exponential() {
    // Oracle: exp(u A) for A = [[0, -1], [1, 0]] is the rotation by angle u.
    let a = ChainMatrix::constant(scalar(2), DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
    let xi = [0.4, -1.3];
    for integrator in [FlowIntegrator::Rk4Doubling, FlowIntegrator::Rk4Fixed, FlowIntegrator::Dopri] {
        let cfg = FlowConfig {
            integrator,
            ..tight()
        };
        for until in [1.7, -0.9] {
            let sol = solve_flow(&DriftSpec::zero(scalar(2)), &a, 0.2, &xi, until, &cfg).unwrap();
            assert_eq!(sol.values[0], xi.to_vec());
            let u: f64 = until - 0.2;
            let exact = [u.cos() * xi[0] - u.sin() * xi[1], u.sin() * xi[0] + u.cos() * xi[1]];
            assert!(dist(sol.end_value(), &exact) < 1e-8, "{integrator:?}: {:?}", sol.end_value());
        }
    }
}

#[test]
fn nilpotent_flow_matches_finite_series() {
    let sh = scalar(3);
    let a = ChainMatrix::nilpotent(sh.clone());
    let xi = [1.0, -2.0, 0.5];
    let sol = solve_flow(&DriftSpec::zero(sh), &a, 0.0, &xi, 2.0, &tight()).unwrap();
    let u = 2.0;
    let exact = [xi[0], xi[1] + u * xi[0], xi[2] + u * xi[1] + 0.5 * u * u * xi[0]];
    assert!(dist(sol.end_value(), &exact) < 1e-9);
}

#[test]
fn peano_escape_follows_extremal_solution() {
    let beta = 0.5;
    let sh = scalar(2);
    let drift = DriftSpec::peano(sh.clone(), 2, 2, beta).unwrap();
    let a = ChainMatrix::constant(sh, DMatrix::zeros(2, 2)).unwrap();
    let c = (1.0 - beta).powf(1.0 / (1.0 - beta));
    for m in [1e4, 1e8] {
        let xi0: f64 = 1.0 / m;
        let sol = solve_flow(&drift, &a, 0.0, &[0.0, xi0], 1.0, &tight()).unwrap();
        // Exact solution from a positive start, and its limit c t^{1/(1-β)}.
        let exact = ((1.0 - beta) + xi0.powf(1.0 - beta)).powf(1.0 / (1.0 - beta));
        // Start errors are amplified by (x_t / x_0)^β along the escaping branch.
        assert!((sol.end_value()[1] - exact).abs() < 1e-6 * exact, "{} {exact}", sol.end_value()[1]);
        assert!((sol.end_value()[1] - c).abs() < 2.0 * xi0.powf(1.0 - beta));
    }
}

#[test]
fn frozen_shift_without_drift_is_resolvent() {
    let a = chain_matrix();
    let r = Resolvent::new(&a, 1e-12).between(0.8, 0.1).unwrap();
    let x = [0.3, 1.0];
    let m = frozen_shift(&DriftSpec::zero(scalar(2)), &a, 0.5, &[2.0, 2.0], 0.1, 0.8, &x, &tight()).unwrap();
    let exact = &r * nalgebra::DVector::from_column_slice(&x);
    assert!(dist(&m, exact.as_slice()) < 1e-10);
}

#[test]
fn identification_identities() {
    let drift = smooth_drift();
    let a = chain_matrix();
    let cfg = tight();
    let mut rng = SeedTree::new(11).stream(0);
    let resolvent = Resolvent::new(&a, 1e-12);
    for _ in 0..20 {
        let t = rng.random::<f64>();
        let s = t + 0.05 + rng.random::<f64>();
        let x = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
        let y = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
        let theta_st = solve_flow(&drift, &a, t, &x, s, &cfg).unwrap();
        let m = frozen_shift(&drift, &a, t, &x, t, s, &x, &cfg).unwrap();
        assert!(dist(&m, theta_st.end_value()) < 1e-8, "{}", dist(&m, theta_st.end_value()));

        let theta_ts = solve_flow(&drift, &a, s, &y, t, &cfg).unwrap();
        let m = frozen_shift(&drift, &a, s, &y, t, s, &x, &cfg).unwrap();
        let lhs: Vec<f64> = y.iter().zip(&m).map(|(a, b)| a - b).collect();
        let r = resolvent.between(s, t).unwrap();
        let gap = nalgebra::DVector::from_iterator(2, theta_ts.end_value().iter().zip(&x).map(|(a, b)| a - b));
        let rhs = &r * gap;
        assert!(dist(&lhs, rhs.as_slice()) < 1e-8);
    }
}

#[test]
fn literal_second_identity_without_linear_part() {
    let drift = smooth_drift();
    let a = ChainMatrix::constant(scalar(2), DMatrix::zeros(2, 2)).unwrap();
    let (t, s) = (0.2, 0.9);
    let (x, y) = ([0.4, -0.1], [1.5, 0.7]);
    let theta_ts = solve_flow(&drift, &a, s, &y, t, &tight()).unwrap();
    let m = frozen_shift(&drift, &a, s, &y, t, s, &x, &tight()).unwrap();
    for k in 0..2 {
        assert!(((y[k] - m[k]) - (theta_ts.end_value()[k] - x[k])).abs() < 1e-8);
    }
}

#[test]
fn liouville_determinant() {
    let a = chain_matrix();
    let md = mollify_drift(
        &DriftSpec::zero(scalar(2)),
        1.5,
        0.5,
        MollifierSchedule::JacobianControl,
        &MollifierConstants::default(),
    )
    .unwrap();
    let (t, s) = (0.1, 0.6);
    let det = flow_jacobian_det(&md, &a, t, s, &[0.3, -0.4], 1e-11).unwrap();
    let exact = ((t - s) * (0.1 - 0.3f64)).exp();
    assert!((det - exact).abs() < 1e-9, "{det} vs {exact}");
    let nil = ChainMatrix::nilpotent(scalar(2));
    let det = flow_jacobian_det(&md, &nil, t, s, &[0.3, -0.4], 1e-11).unwrap();
    assert!((det - 1.0).abs() < 1e-10);
}

// Independent oracle for the smoothed Peano component: panels graded towards the cusp.
fn smoothed_power(x: f64, delta: f64, beta: f64) -> f64 {
    let g = GaussLegendre::new(20);
    let cusp = x / delta;
    let rho = |w: f64| (-0.5 * w * w).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |w: f64| {
        let y = x - delta * w;
        y.signum() * y.abs().powf(beta) * rho(w)
    };
    let mut total = 0.0;
    for (lo, hi) in [(-6.0, cusp), (cusp, 6.0)] {
        let len: f64 = hi - lo;
        let mut edges: Vec<f64> = (0..=40).map(|k| len * 2f64.powi(-k)).collect();
        edges.push(0.0);
        edges.reverse();
        // Distances from the cusp, mapped back onto [lo, hi].
        let pts: Vec<f64> = if hi == cusp {
            edges.iter().rev().map(|e| cusp - e).collect()
        } else {
            edges.iter().map(|e| cusp + e).collect()
        };
        total += g.integrate_panels(&pts, f);
    }
    total
}

#[test]
fn mollified_drift_matches_oracle() {
    let beta = 0.5;
    let drift = DriftSpec::peano(scalar(2), 2, 2, beta).unwrap();
    let md = mollify_drift(&drift, 1.5, 0.1, MollifierSchedule::JacobianControl, &MollifierConstants::default())
        .unwrap();
    let fine_constants = MollifierConstants {
        node_budget: 1 << 16,
        ..Default::default()
    };
    let fine = mollify_drift(&drift, 1.5, 0.1, MollifierSchedule::JacobianControl, &fine_constants).unwrap();
    let delta = md.radius(2, 2);
    assert!((delta - 10.0 * 0.1f64.powf(4.0 / 3.0)).abs() < 1e-14);
    let h = 1e-5;
    for x2 in [0.05, -0.3, 0.0, 1.2] {
        let x = [0.2, x2];
        let mut out = [0.0; 2];
        md.eval(0.0, &x, &mut out);
        let exact = smoothed_power(x2, delta, beta);
        assert!((out[1] - exact).abs() < 2e-3, "{x2}: {} vs {exact}", out[1]);
        fine.eval(0.0, &x, &mut out);
        assert!((out[1] - exact).abs() < 5e-4, "{x2}: {} vs {exact}", out[1]);
        let slope = (smoothed_power(x2 + h, delta, beta) - smoothed_power(x2 - h, delta, beta)) / (2.0 * h);
        let j = md.jacobian(0.0, &x);
        assert!((j[(1, 1)] - slope).abs() < 1e-3 * slope.abs(), "{x2}: {} vs {slope}", j[(1, 1)]);
        assert!(j[(1, 0)].abs() < 1e-12 && j[(0, 0)].abs() < 1e-12);
    }
}

#[test]
fn lipschitz_drift_mollification_gap_is_linear_in_radius() {
    let drift = DriftSpec::new(
        scalar(2),
        |_, x, o| {
            o[0] = 0.0;
            o[1] = x[1].abs();
        },
        vec![1.0, 1.0],
        1.0,
        "abs",
    )
    .unwrap();
    let points: Vec<Vec<f64>> = (-50..=50).map(|k| vec![0.0, k as f64 * 0.01]).collect();
    let mut ratios = vec![];
    for h in [0.1, 0.01, 0.001] {
        let md = mollify_drift(&drift, 1.5, h, MollifierSchedule::FlowControl, &MollifierConstants::default()).unwrap();
        let (gap, scale) = md.approximation_gap(0.0, &points)[1];
        assert!(gap > 0.0);
        ratios.push(gap / scale);
    }
    // Gap of |x| under Gaussian smoothing is δ·sqrt(2/π) at the kink.
    for r in &ratios {
        assert!((r - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-3, "{ratios:?}");
    }
}

#[test]
fn holder_mollification_gap_bounded_by_radius_power() {
    let drift = DriftSpec::peano(scalar(2), 2, 2, 0.4).unwrap();
    let points: Vec<Vec<f64>> = (-200..=200).map(|k| vec![0.0, k as f64 * 1e-3]).collect();
    let mut ratios = vec![];
    for h in [0.5, 0.1, 0.05] {
        let md = mollify_drift(&drift, 1.5, h, MollifierSchedule::FlowControl, &MollifierConstants::default()).unwrap();
        let (gap, scale) = md.approximation_gap(0.0, &points)[1];
        ratios.push(gap / scale);
    }
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(max < 1.5, "{ratios:?}");
}

#[test]
fn determinant_floor_on_peano_chain() {
    let drift = DriftSpec::peano(scalar(2), 2, 2, 0.5).unwrap();
    let nil = ChainMatrix::nilpotent(scalar(2));
    let mut floor = f64::INFINITY;
    for h in [1.0, 0.1, 0.01] {
        let md =
            mollify_drift(&drift, 1.5, h, MollifierSchedule::JacobianControl, &MollifierConstants::default()).unwrap();
        for y in [[0.0, 0.0], [0.5, -0.2], [-1.0, 0.01]] {
            floor = floor.min(flow_jacobian_det(&md, &nil, 0.0, h, &y, 1e-9).unwrap());
        }
    }
    assert!(floor > 0.0, "{floor}");
}

#[test]
fn identity_flows_give_equal_lipschitz_sides() {
    let sh = scalar(2);
    let a = ChainMatrix::constant(sh.clone(), DMatrix::zeros(2, 2)).unwrap();
    let p = approximate_lipschitz_diagnostic(&DriftSpec::zero(sh), &a, 1.5, 0.0, 0.3, &[1.0, 2.0], &[-0.5, 0.1], &tight())
        .unwrap();
    assert_eq!(p.lhs, p.rhs);
    let (c, c_prime) = fit_lipschitz_constants(&[p]);
    assert_eq!((c, c_prime), (1.0, 0.0));
}

#[test]
fn thresholds_reported_per_level() {
    let drift = DriftSpec::peano(scalar(3), 2, 3, 0.6).unwrap();
    let verdicts = drift.thresholds(1.5);
    assert_eq!(verdicts.len(), 2);
    assert!(verdicts[0].satisfied);
    // Level 3 threshold (1 + 1.5) / (1 + 3) = 0.625.
    assert!((verdicts[1].threshold - 0.625).abs() < 1e-15);
    assert!(!verdicts[1].satisfied);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn endpoint_condition_is_exact(tau in 0.0f64..1.0, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, until in 0.0f64..1.0) {
        let sol = solve_flow(&smooth_drift(), &chain_matrix(), tau, &[x0, x1], until, &FlowConfig::default()).unwrap();
        prop_assert_eq!(&sol.values[0], &vec![x0, x1]);
        prop_assert_eq!(sol.at(tau), vec![x0, x1]);
    }

    #[test]
    fn frozen_shift_is_affine(lambda in 0.0f64..1.0, x0 in -2.0f64..2.0, x1 in -2.0f64..2.0) {
        let drift = smooth_drift();
        let a = chain_matrix();
        let cfg = tight();
        let x = [x0, x1];
        let xp = [0.7, -1.1];
        let mix = [lambda * x0 + (1.0 - lambda) * xp[0], lambda * x1 + (1.0 - lambda) * xp[1]];
        let m = |p: &[f64]| frozen_shift(&drift, &a, 0.4, &[0.1, 0.2], 0.1, 0.6, p, &cfg).unwrap();
        let (mx, mxp, mmix) = (m(&x), m(&xp), m(&mix));
        for k in 0..2 {
            prop_assert!((mmix[k] - (lambda * mx[k] + (1.0 - lambda) * mxp[k])).abs() < 1e-9);
        }
    }
}
