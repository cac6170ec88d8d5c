use std::f64::consts::PI;

use fracbous::calculus::{grad, inverse_laplacian, leray_project, nonzero_modes};
use fracbous::imex::{imex_evolve, ImexOptions};
use fracbous::synth::{complete_state, heat_flow, manufactured_state, ManufacturedSpec};
use fracbous::verify::*;
use fracbous::{Complex64, Error, IntervalSet, ReynoldsQuadruple, Shape, SpectralField, TimeField, TimeGrid};
use proptest::prelude::*;

fn zero_state(shape: Shape, grid: TimeGrid, intervals: IntervalSet) -> ReynoldsQuadruple {
    let z = |rank| TimeField::zeros(grid.clone(), &SpectralField::zeros(shape, rank));
    ReynoldsQuadruple::new(z(1), z(0), z(0), z(2), z(1), intervals, 1.2).unwrap()
}

#[test]
fn steady_zero_state_has_zero_residual() {
    let shape = Shape::new(2, 16).unwrap();
    let st = zero_state(shape, TimeGrid::uniform(1.0, 8).unwrap(), IntervalSet::whole(1.0, 0.5));
    let rep = residual(&st).unwrap();
    assert_eq!((rep.momentum, rep.temperature, rep.incompressibility), (0.0, 0.0, 0.0));
    assert_eq!(rep.terms.len(), 10);
}

#[test]
fn quadruple_rejects_mismatched_members() {
    let shape = Shape::new(2, 8).unwrap();
    let g1 = TimeGrid::uniform(1.0, 4).unwrap();
    let g2 = TimeGrid::uniform(1.0, 5).unwrap();
    let z = |g: &TimeGrid, rank| TimeField::zeros(g.clone(), &SpectralField::zeros(shape, rank));
    let iv = IntervalSet::whole(1.0, 0.5);
    let bad_grid = ReynoldsQuadruple::new(z(&g1, 1), z(&g2, 0), z(&g1, 0), z(&g1, 2), z(&g1, 1), iv.clone(), 1.2);
    assert!(matches!(bad_grid, Err(Error::GridMismatch)));
    let bad_rank = ReynoldsQuadruple::new(z(&g1, 1), z(&g1, 1), z(&g1, 0), z(&g1, 2), z(&g1, 1), iv, 1.2);
    assert!(matches!(bad_rank, Err(Error::Rank { .. })));
}

#[test]
fn completed_states_have_vanishing_residual() {
    let shape = Shape::new(2, 32).unwrap();
    let grid = TimeGrid::uniform(1.0, 40).unwrap();
    let iv = IntervalSet::new(vec![(0.2, 0.8)], 0.05, 0.7, 1.0).unwrap();
    let spec = ManufacturedSpec { support: (0.3, 0.7), amp_u: 0.3, amp_theta: 0.2, kmax: 4, alpha: 1.2 };
    let st = manufactured_state(shape, grid, &spec, iv, &mut rng(4)).unwrap();
    let rep = residual(&st).unwrap();
    assert!(rep.momentum <= 1e-12 && rep.temperature <= 1e-12, "{rep:?}");
    assert!(rep.incompressibility <= 1e-12);
}

/// Residual of solver output for `∂_tθ + (−Δ)^α θ = 0`, `u = 0`, `∇p = θe₂`
/// with the stresses left at zero; only time differencing enters.
fn heat_residual(dt: f64) -> ResidualReport {
    let shape = Shape::new(2, 16).unwrap();
    let alpha = 1.2;
    let theta0 = SpectralField::from_fn(shape, 0, |x, out| out[0] = 0.3 * (2.0 * PI * x[1]).cos());
    let horizon = 0.2;
    let steps = (horizon / dt).round() as usize;
    let mut thetas = Vec::new();
    imex_evolve(
        &[theta0],
        0.0,
        alpha,
        |_, y| Ok(vec![SpectralField::zeros(y[0].shape(), 0)]),
        ImexOptions::new(dt, steps),
        |_, _, y| thetas.push(y[0].clone()),
    )
    .unwrap();
    let grid = TimeGrid::uniform(horizon, steps).unwrap();
    let p: Vec<SpectralField> = thetas.iter().map(|t| inverse_laplacian(&grad(t).unwrap().component(1))).collect();
    let z = |rank| TimeField::zeros(grid.clone(), &SpectralField::zeros(shape, rank));
    let st = ReynoldsQuadruple::new(
        z(1),
        TimeField::new(grid.clone(), thetas).unwrap(),
        TimeField::new(grid.clone(), p).unwrap(),
        z(2),
        z(1),
        IntervalSet::whole(horizon, 0.5),
        alpha,
    )
    .unwrap();
    residual(&st).unwrap()
}

#[test]
fn imex_output_is_a_near_solution() {
    let coarse = heat_residual(1e-3);
    let fine = heat_residual(5e-4);
    assert!(coarse.momentum <= 1e-12 && fine.momentum <= 1e-12, "{coarse:?}");
    // at least second order under step halving, with λ dt ≈ 0.08
    let lam_dt = (4.0 * PI * PI).powf(1.2) * 1e-3;
    assert!(coarse.temperature <= lam_dt * lam_dt + 1e-8, "{coarse:?}");
    assert!(fine.temperature <= coarse.temperature / 4.0 + 1e-8, "{} vs {}", fine.temperature, coarse.temperature);
}

#[test]
fn energy_monitor_examples() {
    let shape = Shape::new(2, 16).unwrap();
    let mut theta0 = SpectralField::zeros(shape, 0);
    theta0.set_coeff(0, &[0, 1], Complex64::new(0.5, 0.0)).unwrap();
    let steps = 2000;
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let (u, theta) = heat_flow(&theta0, 1.2, grid.clone()).unwrap();
    // trapezoid error of ∫ 2λ‖θ₀‖² e^{−2λt}: (2λ dt)²/12 of the dissipated energy
    let lam = (4.0 * PI * PI).powf(1.2);
    let gap = (2.0 * lam / steps as f64).powi(2) / 12.0 * theta0.l2_norm().powi(2);
    let rep = energy_monitor(&u, &theta, 1.2, 2.0 * gap).unwrap();
    assert!(rep.temperature_excess.abs() <= 1.5 * gap, "{} vs {gap}", rep.temperature_excess);
    assert!(rep.first_temperature_violation.is_none() && rep.first_velocity_violation.is_none());

    let jumped = TimeField::new(
        grid.clone(),
        theta.fields().iter().zip(grid.nodes()).map(|(f, &t)| if t >= 0.02 - 1e-12 { f.scale(10.0) } else { f.clone() }).collect(),
    )
    .unwrap();
    let rep = energy_monitor(&u, &jumped, 1.2, 2.0 * gap).unwrap();
    let first = rep.first_temperature_violation.unwrap();
    assert!((first - 0.02).abs() < 1e-12, "{first}");
    assert!(rep.violated(1e-3));

    let zero = TimeField::zeros(grid.clone(), &SpectralField::zeros(shape, 0));
    let rep = energy_monitor(&u, &zero, 1.2, 0.0).unwrap();
    assert!(!rep.violated(0.0));
    let other = TimeField::zeros(TimeGrid::uniform(1.0, 3).unwrap(), &SpectralField::zeros(shape, 0));
    assert!(matches!(energy_monitor(&u, &other, 1.2, 0.0), Err(Error::GridMismatch)));
}

#[test]
fn energy_gap_is_second_order_in_time() {
    let shape = Shape::new(2, 16).unwrap();
    let mut theta0 = SpectralField::zeros(shape, 0);
    theta0.set_coeff(0, &[1, 1], Complex64::new(0.5, 0.0)).unwrap();
    let dts = [1.0 / 200.0, 1.0 / 400.0, 1.0 / 800.0];
    let gaps: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let (u, th) = heat_flow(&theta0, 1.2, TimeGrid::uniform(1.0, (1.0 / dt) as usize).unwrap()).unwrap();
            energy_monitor(&u, &th, 1.2, 0.0).unwrap().records.iter().map(|r| (r.temperature_lhs - r.temperature_rhs).abs()).fold(0.0, f64::max)
        })
        .collect();
    let fit = fit_power_law(&dts, &gaps).unwrap();
    assert!((fit.exponent - 2.0).abs() < 0.1, "{gaps:?}");
}

fn stress_state(shape: Shape, grid: TimeGrid, iv: IntervalSet, at: &[f64]) -> ReynoldsQuadruple {
    let mut st = zero_state(shape, grid, iv);
    let bump = SpectralField::from_fn(shape, 2, |x, out| {
        out[0] = (2.0 * PI * x[0]).cos();
        out[3] = -(2.0 * PI * x[0]).cos();
    });
    let nodes = st.grid().nodes().to_vec();
    for (j, t) in nodes.iter().enumerate() {
        if at.iter().any(|a| (a - t).abs() < 1e-12) {
            *st.r.field_mut(j) = bump.clone();
        }
    }
    st
}

#[test]
fn support_check_examples() {
    let shape = Shape::new(2, 8).unwrap();
    let grid = TimeGrid::uniform(1.0, 20).unwrap();
    let iv = IntervalSet::new(vec![(0.2, 0.8)], 0.1, 0.5, 1.0).unwrap();
    assert!(support_check(&zero_state(shape, grid.clone(), iv.clone())).pass);
    assert!(support_check(&stress_state(shape, grid.clone(), iv.clone(), &[0.5])).pass);
    let edge = support_check(&stress_state(shape, grid.clone(), iv.clone(), &[0.25]));
    assert!(!edge.pass);
    assert_eq!(edge.offending.len(), 1);
    assert!((edge.offending[0].0 - 0.25).abs() < 1e-12);
    let outside = support_check(&stress_state(shape, grid.clone(), iv.clone(), &[0.9]));
    assert!(!outside.pass);
    let wide = support_check_with(&stress_state(shape, grid, iv.clone(), &[0.5]).r, &zero_state(shape, TimeGrid::uniform(1.0, 20).unwrap(), iv.clone()).s, &iv, 0.35);
    assert!(!wide.pass);
}

/// Nested families with two children per parent and `τ` shrinking by 4:
/// the box-counting slope is `ln 2 / ln 4`.
fn cantor_levels(levels: usize) -> Vec<IntervalSet> {
    let mut out: Vec<IntervalSet> = vec![IntervalSet::new(vec![(0.1, 0.6)], 0.1, 0.5, 1.0).unwrap()];
    for n in 1..levels {
        let prev = &out[n - 1];
        let tau = prev.tau / 4.0;
        let raw: Vec<(f64, f64)> =
            prev.intervals.iter().flat_map(|&(a, b)| [(a, a + 5.0 * tau), (b - 5.0 * tau, b)]).collect();
        out.push(IntervalSet::new(raw, tau, 0.5, 1.0).unwrap());
    }
    out
}

#[test]
fn hausdorff_examples() {
    let levels = cantor_levels(5);
    let est = hausdorff_estimate(&levels, 0.5).unwrap();
    assert!((est.slope - 0.5).abs() < 1e-12, "{est:?}");
    assert!(est.pass);
    assert_eq!(est.covers.last().unwrap().1, 16);

    let single: Vec<IntervalSet> =
        (0..4).map(|n| IntervalSet::new(vec![(0.3, 0.3 + 5.0 * 0.5f64.powi(n + 3))], 0.5f64.powi(n + 3), 0.5, 1.0).unwrap()).collect();
    assert!(hausdorff_estimate(&single, 0.1).unwrap().slope.abs() < 1e-12);

    assert!(matches!(hausdorff_estimate(&levels[..1], 0.5), Err(Error::Precondition(_))));
    let mut swapped = levels.clone();
    swapped.swap(1, 2);
    assert!(matches!(hausdorff_estimate(&swapped, 0.5), Err(Error::NotNested(_))));
}

#[test]
fn power_law_fits() {
    let xs = [1.0, 2.0, 4.0, 8.0];
    let fit = scaling_probe(&xs, |x| Ok(x * x)).unwrap();
    assert!((fit.exponent - 2.0).abs() < 1e-14 && fit.stderr < 1e-14);
    assert!(scaling_probe(&xs[..2], |x| Ok(x)).is_err());
    assert!(matches!(scaling_probe(&xs, |x| Ok(x - 1.0)), Err(Error::NonPositive(_))));
    assert!(fit_power_law(&[2.0, 2.0], &[1.0, 3.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn completed_random_states_are_exact(seed in any::<u64>(), amp in 0.01f64..1.0) {
        let shape = Shape::new(2, 16).unwrap();
        let grid = TimeGrid::uniform(1.0, 12).unwrap();
        let mut r = rng(seed);
        let u = TimeField::from_fn(grid.clone(), |t| {
            nonzero_modes(&leray_project(&random_field(shape, 1, 3, &mut rng(seed ^ 1))).unwrap()).scale(amp * (1.0 + t))
        }).unwrap();
        // means of D_t u − θe_d and D_t θ cannot be balanced by ∇p, div R, div S
        let th0 = nonzero_modes(&random_field(shape, 0, 3, &mut r));
        let th = TimeField::from_fn(grid.clone(), |t| th0.scale(amp * (2.0 - t * t))).unwrap();
        let st = complete_state(u, th, 1.2, IntervalSet::whole(1.0, 0.5)).unwrap();
        let rep = residual(&st).unwrap();
        prop_assert!(rep.momentum <= 1e-12 && rep.temperature <= 1e-12, "{:?}", rep);
    }

    #[test]
    fn power_law_fit_recovers_exponents(e in -3.0f64..3.0, c in 0.1f64..10.0) {
        let xs = [1.0, 3.0, 9.0, 27.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| c * x.powf(e)).collect();
        let fit = fit_power_law(&xs, &ys).unwrap();
        prop_assert!((fit.exponent - e).abs() <= 1e-12);
        prop_assert!((fit.log_prefactor - c.ln()).abs() <= 1e-12);
    }
}
