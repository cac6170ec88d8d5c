use fracbous::blocks::TemporalProfile;
use fracbous::convex::{check_time_grid, clamp_scales, perturb, perturbation_nodes, PerturbConfig, ScaleChoice, ScaleLimits};
use fracbous::synth::{manufactured_state, ManufacturedSpec};
use fracbous::verify::rng;
use fracbous::{DirectionFamily, Error, IntervalSet, ReynoldsQuadruple, Shape, SpectralField, TimeField, TimeGrid};

fn config(scales: ScaleChoice) -> PerturbConfig {
    PerturbConfig { scales, rho_floor: 1e-3, r: 1.1, p: 1.0, q: 10.0, check_grid: true, check_residual: true }
}

fn small_problem(shape: Shape, family: &DirectionFamily) -> (ReynoldsQuadruple, ScaleChoice) {
    let (scales, _) = clamp_scales((2.0, 2.0, 8.0, 4.0), shape, family, ScaleLimits::default()).unwrap();
    let intervals = IntervalSet::new(vec![(0.25, 0.75)], 0.1, 0.7, 1.0).unwrap();
    let profile = TemporalProfile::new(scales.l, scales.nu, 1.0).unwrap();
    let nodes = perturbation_nodes(&TimeGrid::uniform(1.0, 50).unwrap(), &intervals, &profile);
    let grid = TimeGrid::new(1.0, nodes).unwrap();
    let spec = ManufacturedSpec { support: (0.4, 0.6), amp_u: 0.05, amp_theta: 0.05, kmax: 3, alpha: 1.2 };
    (manufactured_state(shape, grid, &spec, intervals, &mut rng(3)).unwrap(), scales)
}

#[test]
fn clamping_fits_the_grid() {
    let shape = Shape::new(2, 32).unwrap();
    let family = DirectionFamily::build(2).unwrap();
    let (s, rep) = clamp_scales((2.0, 2.0, 8.0, 4.0), shape, &family, ScaleLimits::default()).unwrap();
    // |k| ≤ √2 for the planar family, so μ ≤ ⌊(32/σ)/(6√2)⌋, which reaches
    // min_mu = 2 only at σ = 1
    assert_eq!(s, ScaleChoice { nu: 2, l: 2, sigma: 1, mu: 3 });
    assert!(shape.n() % s.sigma == 0);
    assert!(rep.clamped.iter().any(|c| c.starts_with("sigma")));
    let (big, rep) = clamp_scales((1e3, 1e9, 1e20, 1e6), shape, &family, ScaleLimits::default()).unwrap();
    assert_eq!((big.nu, big.l), (4, 4));
    assert!(big.mu as f64 * 6.0 * 2f64.sqrt() <= (shape.n() / big.sigma) as f64);
    assert_eq!(rep.clamped.len(), 4);
    let coarse = Shape::new(2, 4).unwrap();
    assert!(matches!(clamp_scales((1.0, 1.0, 1.0, 1.0), coarse, &family, ScaleLimits::default()), Err(Error::Band(_))));
}

#[test]
fn coarse_time_grid_is_rejected() {
    let intervals = IntervalSet::new(vec![(0.25, 0.75)], 0.1, 0.7, 1.0).unwrap();
    let profile = TemporalProfile::new(2, 2, 1.0).unwrap();
    let coarse = TimeGrid::uniform(1.0, 50).unwrap();
    assert!(matches!(check_time_grid(&coarse, &intervals, &profile), Err(Error::TimeGridTooCoarse(_))));
    let fine = TimeGrid::new(1.0, perturbation_nodes(&coarse, &intervals, &profile)).unwrap();
    check_time_grid(&fine, &intervals, &profile).unwrap();
}

#[test]
fn stress_free_input_short_circuits() {
    let shape = Shape::new(2, 16).unwrap();
    let family = DirectionFamily::build(2).unwrap();
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let z = |rank| TimeField::zeros(grid.clone(), &SpectralField::zeros(shape, rank));
    let state =
        ReynoldsQuadruple::new(z(1), z(0), z(0), z(2), z(1), IntervalSet::whole(1.0, 0.7), 1.2).unwrap();
    let (out, rep) = perturb(&state, &family, &config(ScaleChoice { nu: 1, l: 1, sigma: 1, mu: 1 })).unwrap();
    assert!(rep.short_circuit);
    assert_eq!(rep.stress_l1, 0.0);
    for j in 0..out.len() {
        assert_eq!(out.u.field(j).max_coeff() + out.theta.field(j).max_coeff(), 0.0);
    }
}

#[test]
fn perturbation_only_moves_the_discrete_residual_by_roundoff() {
    let shape = Shape::new(2, 32).unwrap();
    let family = DirectionFamily::build(2).unwrap();
    let (state, scales) = small_problem(shape, &family);
    let (out, rep) = perturb(&state, &family, &config(scales)).unwrap();
    assert!(!rep.short_circuit);
    assert!(rep.residual_defect.unwrap() <= 1e-10, "{:?}", rep.residual_defect);
    assert!(rep.support_in_intervals);
    assert!(rep.oscillation_identity <= 1e-10, "{}", rep.oscillation_identity);
    assert!(rep.div_w <= 1e-12 && rep.div_wt <= 1e-12, "{} {}", rep.div_w, rep.div_wt);
    assert!(rep.kappa_mean.abs() <= 1e-12);
    assert_eq!(rep.error_terms.len(), 10);
    assert!(rep.perturbation_l2 > 0.0 && rep.perturbation_critical.is_some());
    // nodes outside Ī keep the input velocity and temperature
    for (j, &t) in out.grid().nodes().iter().enumerate() {
        if !state.intervals.contains(t) {
            assert_eq!(out.u.field(j).sub(state.u.field(j)).unwrap().max_coeff(), 0.0, "t = {t}");
            assert_eq!(out.theta.field(j).sub(state.theta.field(j)).unwrap().max_coeff(), 0.0, "t = {t}");
        }
    }
}

#[test]
fn family_dimension_must_match() {
    let shape = Shape::new(2, 32).unwrap();
    let (state, scales) = small_problem(shape, &DirectionFamily::build(2).unwrap());
    let f3 = DirectionFamily::build(3).unwrap();
    assert!(matches!(perturb(&state, &f3, &config(scales)), Err(Error::ShapeMismatch)));
}
