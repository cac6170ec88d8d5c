use std::f64::consts::PI;

use fracbous::blocks::GluingCutoffs;
use fracbous::gluing::{glue, local_solve, GlueOptions};
use fracbous::synth::{graded_nodes, manufactured_state, ManufacturedSpec};
use fracbous::verify::{rng, support_check, support_check_with};
use fracbous::{Error, IntervalSet, ReynoldsQuadruple, Shape, SpectralField, TimeField, TimeGrid};

fn zero_fields(grid: &TimeGrid, shape: Shape, rank: usize) -> TimeField {
    TimeField::zeros(grid.clone(), &SpectralField::zeros(shape, rank))
}

/// `u = θ = 0` with a steady stress whose divergence is `−F₀ sin(2πx₁) e₂`.
fn shear_forced_state(shape: Shape, f0: f64) -> ReynoldsQuadruple {
    let grid = TimeGrid::uniform(1.0, 10).unwrap();
    let r = SpectralField::from_fn(shape, 2, |x, out| {
        let c = f0 * (2.0 * PI * x[0]).cos() / (2.0 * PI);
        out[1] = c;
        out[2] = c;
    });
    ReynoldsQuadruple::new(
        zero_fields(&grid, shape, 1),
        zero_fields(&grid, shape, 0),
        zero_fields(&grid, shape, 0),
        TimeField::from_fn(grid.clone(), |_| r.clone()).unwrap(),
        zero_fields(&grid, shape, 1),
        IntervalSet::whole(1.0, 0.7),
        1.2,
    )
    .unwrap()
}

#[test]
fn local_solve_matches_linear_response() {
    let shape = Shape::new(2, 16).unwrap();
    let f0 = 0.3;
    let state = shear_forced_state(shape, f0);
    let (tau_bar, eps) = (2e-3, 0.7);
    let cutoffs = GluingCutoffs::new(1.0, tau_bar, eps).unwrap();
    let i = 3;
    let (t0, t1) = (cutoffs.points[i], cutoffs.points[i + 1]);
    let times: Vec<f64> = (1..=8).map(|k| t0 + (t1 - t0) * k as f64 / 8.0).collect();
    let opts = GlueOptions::new(tau_bar, eps, (t1 - t0) / 400.0);
    let sol = local_solve(&state, &cutoffs, i, &opts, &times).unwrap();
    assert!(!sol.is_zero());
    // v(t) = F₀ (1 − e^{−λ(t−t_i)})/λ sin(2πx₁) e₂ with λ = |2π|^{2α}; the
    // self-advection div(v⊗v) vanishes since v depends on x₁ only
    let lam = (4.0 * PI * PI).powf(1.2);
    for &t in &times {
        let [v, phi] = sol.sample(t).unwrap();
        let a = f0 * (1.0 - (-lam * (t - t0)).exp()) / lam;
        let expect = SpectralField::from_fn(shape, 1, |x, out| {
            out[0] = 0.0;
            out[1] = a * (2.0 * PI * x[0]).sin();
        });
        let err = v.sub(&expect).unwrap().max_coeff();
        assert!(err <= 1e-6 * expect.max_coeff(), "t = {t}: {err:e} vs {:e}", expect.max_coeff());
        assert_eq!(phi.max_coeff(), 0.0);
    }
}

#[test]
fn local_solve_without_stress_is_zero() {
    let shape = Shape::new(2, 16).unwrap();
    let state = shear_forced_state(shape, 0.0);
    let cutoffs = GluingCutoffs::new(1.0, 2e-3, 0.7).unwrap();
    let sol = local_solve(&state, &cutoffs, 0, &GlueOptions::new(2e-3, 0.7, 1e-4), &[0.01]).unwrap();
    assert!(sol.is_zero());
    let [v, phi] = sol.sample(0.01).unwrap();
    assert_eq!(v.max_coeff() + phi.max_coeff(), 0.0);
}

#[test]
fn stress_free_state_is_unchanged() {
    let shape = Shape::new(2, 16).unwrap();
    let state = shear_forced_state(shape, 0.0);
    let (out, rep) = glue(&state, &GlueOptions::new(2e-3, 0.7, 1e-4)).unwrap();
    assert_eq!(rep.nonzero_pieces, 0);
    assert_eq!(rep.du_hd + rep.dtheta_hd, 0.0);
    assert!(out.stress_free());
    assert!(out.intervals.is_empty());
    assert!(rep.support_pass && rep.nested && rep.endpoints_free);
}

#[test]
fn preconditions_are_enforced() {
    let shape = Shape::new(2, 16).unwrap();
    let grid = TimeGrid::uniform(1.0, 40).unwrap();
    let iv = IntervalSet::new(vec![(0.3, 0.7)], 0.05, 0.7, 1.0).unwrap();
    let spec = ManufacturedSpec { support: (0.4, 0.6), amp_u: 0.05, amp_theta: 0.05, kmax: 2, alpha: 1.2 };
    let state = manufactured_state(shape, grid.clone(), &spec, iv, &mut rng(1)).unwrap();
    // 10 τ̄^ε must stay below τ
    assert!(matches!(glue(&state, &GlueOptions::new(1e-2, 0.7, 1e-4)), Err(Error::Precondition(_))));
    let tight = IntervalSet::new(vec![(0.38, 0.62)], 0.05, 0.7, 1.0).unwrap();
    let unprepared = manufactured_state(shape, grid, &spec, tight, &mut rng(1)).unwrap();
    assert!(!support_check(&unprepared).pass);
    let err = glue(&unprepared, &GlueOptions::new(5e-4, 0.7, 1e-4)).unwrap_err();
    assert!(err.to_string().contains("well prepared"), "{err}");
}

#[test]
fn glued_state_is_well_prepared_and_nested() {
    let shape = Shape::new(2, 16).unwrap();
    let (tau_bar, eps) = (1e-3, 0.7);
    let grid = TimeGrid::new(1.0, graded_nodes(1.0, 0.02, &[(0.38, 0.62, 2e-3)])).unwrap();
    let iv = IntervalSet::new(vec![(0.3, 0.7)], 0.08, eps, 1.0).unwrap();
    let spec = ManufacturedSpec { support: (0.4, 0.6), amp_u: 0.05, amp_theta: 0.05, kmax: 2, alpha: 1.2 };
    let state = manufactured_state(shape, grid, &spec, iv.clone(), &mut rng(7)).unwrap();
    let opts = GlueOptions { solver_nodes: false, transition_nodes: 4, ..GlueOptions::new(tau_bar, eps, 2.5e-4) };
    let (out, rep) = glue(&state, &opts).unwrap();
    assert!(rep.support_pass && rep.nested && rep.endpoints_free);
    assert!(out.intervals.is_subset_of(&iv));
    assert!(!out.intervals.touches_endpoints());
    assert!(out.intervals.len() as f64 <= out.intervals.count_bound());
    assert!(rep.c_r.is_finite() && rep.c_s.is_finite());
    let margin = support_check_with(&out.r, &out.s, &out.intervals, 1.5 * rep.tau_bar);
    assert!(margin.pass && margin.checked > 0, "{margin:?}");
    // ū − u and θ̄ − θ vanish outside I
    for (j, &t) in out.grid().nodes().iter().enumerate() {
        if iv.contains(t) {
            continue;
        }
        let du = out.u.field(j).sub(&state.u.sample(t)).unwrap().max_coeff();
        let dth = out.theta.field(j).sub(&state.theta.sample(t)).unwrap().max_coeff();
        assert!(du.max(dth) <= 1e-14, "t = {t}: {du:e} {dth:e}");
    }
}
