use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fracbous::blocks::TemporalProfile;
use fracbous::convex::{clamp_params, perturb, perturbation_nodes, PerturbConfig, ScaleLimits};
use fracbous::driver::{iterate, report_bundle, IterateReport, RunConfig};
use fracbous::gluing::{glue, GlueOptions};
use fracbous::params::{beta_constraints, build_params, check_inequalities, feasible_beta_r, Case, Problem};
use fracbous::suites::*;
use fracbous::synth::{graded_nodes, manufactured_state, ManufacturedSpec};
use fracbous::verify::{hausdorff_estimate, rng, support_check};
use fracbous::{DirectionFamily, IntervalSet, Shape, TimeGrid};

fn report(name: &str, pass: bool, elapsed: Duration, limit: Option<Duration>, detail: String) {
    let timed = limit.is_none_or(|l| elapsed <= l);
    let verdict = if pass && timed { "PASS" } else { "FAIL" };
    let bound = limit.map(|l| format!(" (limit {:.0?})", l)).unwrap_or_default();
    println!("[{verdict}] {name}: {detail}; {:.2?}{bound}", elapsed);
    assert!(pass, "{name} failed: {detail}");
    assert!(timed, "{name} exceeded its runtime budget: {elapsed:.2?}{bound}");
}

fn failing(suites: &[&SuiteReport]) -> String {
    let bad: Vec<String> = suites
        .iter()
        .flat_map(|s| s.checks.iter().filter(|c| !c.pass).map(move |c| format!("{}/{} = {:.3e} vs {:.1e}", s.name, c.name, c.value, c.tolerance)))
        .collect();
    if bad.is_empty() {
        "all checks within tolerance".into()
    } else {
        bad.join(", ")
    }
}

#[test]
fn operator_identities() {
    let t = Instant::now();
    let a = operator_suite(Shape::new(2, 64).unwrap(), 100, &mut rng(11)).unwrap();
    let b = operator_suite(Shape::new(3, 32).unwrap(), 100, &mut rng(12)).unwrap();
    for s in [&a, &b] {
        for c in &s.checks {
            assert!(c.tolerance <= 1e-10, "{} tolerance {}", c.name, c.tolerance);
        }
    }
    report("operator identities", a.pass && b.pass, t.elapsed(), Some(Duration::from_secs(120)), failing(&[&a, &b]));
}

#[test]
fn geometric_decomposition() {
    let t = Instant::now();
    let a = geometry_suite(2, 1000, &mut rng(21)).unwrap();
    let b = geometry_suite(3, 1000, &mut rng(22)).unwrap();
    report("geometric decomposition", a.pass && b.pass, t.elapsed(), Some(Duration::from_secs(10)), failing(&[&a, &b]));
}

#[test]
fn mikado_scaling_laws() {
    let t = Instant::now();
    let (suite, records) =
        mikado_suite(Shape::new(2, 256).unwrap(), &[4.0, 8.0, 16.0, 32.0], &[1.0, 4.0, f64::INFINITY]).unwrap();
    let fits: Vec<String> = records.iter().map(|r| format!("{} p={} exponent {:.3} (expected {:.3})", r.quantity, r.p, r.exponent, r.expected)).collect();
    report("mikado scaling laws", suite.pass, t.elapsed(), Some(Duration::from_secs(300)), format!("{}; {}", failing(&[&suite]), fits.join(", ")));
}

#[test]
fn temporal_profiles() {
    let t = Instant::now();
    let (suite, records) = temporal_suite(&[4, 16, 64], 2).unwrap();
    let fits: Vec<String> = records.iter().map(|r| format!("{} exponent {:.3} (expected {:.3})", r.quantity, r.exponent, r.expected)).collect();
    report("temporal profiles", suite.pass, t.elapsed(), Some(Duration::from_secs(60)), format!("{}; {}", failing(&[&suite]), fits.join(", ")));
}

#[test]
fn gluing_support_and_closeness() {
    let t = Instant::now();
    let (eps, tau, tau_bar, delta) = (0.7, 0.2, 6e-5, 0.5);
    let shape = Shape::new(2, 128).unwrap();
    let grid = TimeGrid::new(1.0, graded_nodes(1.0, 0.02, &[(0.47, 0.53, 1e-3)])).unwrap();
    let intervals = IntervalSet::new(vec![(0.0, 1.0)], tau, eps, 1.0).unwrap();
    let spec = ManufacturedSpec { support: (0.48, 0.52), amp_u: 0.025, amp_theta: 0.025, kmax: 1, alpha: 1.2 };
    let state = manufactured_state(shape, grid, &spec, intervals.clone(), &mut rng(31)).unwrap();
    let size = (0..state.len()).map(|j| state.u.field(j).sobolev_norm(2.0)).fold(0.0, f64::max);
    let opts = GlueOptions {
        delta,
        solver_nodes: false,
        transition_nodes: 2,
        ..GlueOptions::new(tau_bar, eps, 0.25 * tau_bar)
    };
    let (out, rep) = glue(&state, &opts).unwrap();
    let support = support_check(&out);
    let ratio_r = rep.r_norm_out / rep.r_norm_in;
    let pass = rep.support_pass
        && support.pass
        && out.intervals.is_subset_of(&intervals)
        && rep.nested
        && ratio_r.is_finite()
        && rep.within_delta
        && rep.du_hd.max(rep.dtheta_hd) < delta;
    let detail = format!(
        "τ̄ {:.1e}, {} intervals, {} nodes, C_R {:.3e}, C_S {:.3e}, ‖ū−u‖ {:.3e}, ‖θ̄−θ‖ {:.3e} vs δ {delta} (‖u‖ {size:.3})",
        rep.tau_bar,
        out.intervals.len(),
        out.len(),
        rep.c_r,
        rep.c_s,
        rep.du_hd,
        rep.dtheta_hd
    );
    report("gluing support and closeness", pass, t.elapsed(), Some(Duration::from_secs(600)), detail);
}

#[test]
fn convex_step_exactness() {
    let t = Instant::now();
    let shape = Shape::new(2, 128).unwrap();
    let family = DirectionFamily::build(2).unwrap();
    let problem = Problem { d: 2, alpha: 1.2, p: 1.0, q: 10.0 };
    let choice = feasible_beta_r(&problem).unwrap();
    let params = build_params(&problem, 64.0, choice.beta, choice.r).unwrap();
    let (scales, _) = clamp_params(&params, shape, &family, ScaleLimits::default()).unwrap();
    let intervals = IntervalSet::new(vec![(0.3, 0.7)], 0.1, 0.7, 1.0).unwrap();
    let profile = TemporalProfile::new(scales.l, scales.nu, 1.0).unwrap();
    let nodes = perturbation_nodes(&TimeGrid::uniform(1.0, 50).unwrap(), &intervals, &profile);
    let grid = TimeGrid::new(1.0, nodes).unwrap();
    let spec = ManufacturedSpec { support: (0.4, 0.6), amp_u: 0.05, amp_theta: 0.05, kmax: 3, alpha: 1.2 };
    let state = manufactured_state(shape, grid, &spec, intervals.clone(), &mut rng(41)).unwrap();
    let cfg = PerturbConfig { scales, rho_floor: 1e-3, r: choice.r, p: 1.0, q: 10.0, check_grid: true, check_residual: true };
    let (out, rep) = perturb(&state, &family, &cfg).unwrap();
    let out_res = rep.output_residual.as_ref().unwrap();
    let defect = rep.residual_defect.unwrap();
    let relative = out_res.momentum.max(out_res.temperature);
    let pass = defect <= 1e-8
        && relative <= 1e-8
        && out_res.incompressibility <= 1e-10
        && rep.div_w <= 1e-10
        && rep.support_in_intervals
        && rep.kappa_mean <= 1e-14
        && out.intervals == intervals;
    let detail = format!(
        "scales {:?}, {} nodes, relative residual {relative:.3e}, residual defect {:.3e}, div w {:.3e}, mean κ {:.3e}, support {}",
        rep.scales, rep.nodes, defect, rep.div_w, rep.kappa_mean, rep.support_in_intervals
    );
    report("convex step exactness", pass, t.elapsed(), Some(Duration::from_secs(600)), detail);
}

#[test]
fn parameter_schedule_three_dimensions() {
    let t = Instant::now();
    let problem = Problem { d: 3, alpha: 1.2, p: 1.0, q: 10.0 };
    let choice = feasible_beta_r(&problem).unwrap();
    let beta = choice.beta;
    let constraints = beta_constraints(&problem, beta).unwrap();
    let slack_ok = choice.case == Case::A && constraints.iter().all(|c| c.slack > 0.0);
    // hand evaluation at d = 3, α = 1.2
    let (le, se) = (12.0 - 31.0 * beta, 4.0 - 12.5 * beta);
    let params = build_params(&problem, 1e6, beta, choice.r).unwrap();
    let exps_ok = (params.exponents.l - le).abs() < 1e-12 && (params.exponents.sigma - se).abs() < 1e-12;
    let ineq = check_inequalities(&params);
    let names: Vec<&str> = ineq.records.iter().map(|r| r.name.as_str()).collect();
    let lemma_ok = ["principal", "corrector", "dissipative", "far_field", "temporal"]
        .iter()
        .all(|n| ineq.records.iter().any(|r| r.name == *n && r.pass));
    let detail = format!("β = {beta}, r = {:.5}, l-exponent {:.4}, σ-exponent {:.4}, inequalities {names:?} all pass {}", choice.r, le, se, ineq.all_pass);
    report("parameter schedule (d = 3)", slack_ok && exps_ok && lemma_ok, t.elapsed(), Some(Duration::from_secs(1)), detail);
}

#[test]
fn energy_monitor() {
    let t = Instant::now();
    let (suite, gaps) = energy_suite(1.2, &[1.0 / 400.0, 1.0 / 800.0, 1.0 / 1600.0]).unwrap();
    let g: Vec<String> = gaps.iter().map(|g| format!("dt {:.2e} gap {:.3e}", g.dt, g.gap)).collect();
    report("energy monitor", suite.pass, t.elapsed(), Some(Duration::from_secs(60)), format!("{}; {}", failing(&[&suite]), g.join(", ")));
}

/// Default two-round iterate, shared by the bookkeeping and determinism checks.
fn default_run() -> &'static (IterateReport, Vec<(String, String)>) {
    static RUN: OnceLock<(IterateReport, Vec<(String, String)>)> = OnceLock::new();
    RUN.get_or_init(|| {
        let out = iterate(&RunConfig::default()).unwrap();
        let bundle = report_bundle(&serde_json::to_value(&out.report).unwrap()).unwrap();
        (out.report, bundle)
    })
}

#[test]
fn hausdorff_bookkeeping() {
    let (run, _) = default_run();
    let t = Instant::now();
    let synthetic = hausdorff_suite(0.3).unwrap();
    let eps = run.config.scheme.epsilon;
    let est = hausdorff_estimate(&run.levels, eps).unwrap();
    let nested = run.levels.windows(2).all(|w| w[1].is_subset_of(&w[0]));
    let pass = synthetic.pass && nested && est.slope <= eps && run.levels.len() == run.config.scheme.rounds + 1;
    let detail = format!("{}; iterate levels {}, slope {:.3} vs ε {eps}", failing(&[&synthetic]), run.levels.len(), est.slope);
    report("hausdorff bookkeeping", pass, t.elapsed(), Some(Duration::from_secs(1)), detail);
}

#[test]
fn iterate_determinism() {
    let (run, first) = default_run();
    let t = Instant::now();
    let again = iterate(&RunConfig::default()).unwrap();
    let second = report_bundle(&serde_json::to_value(&again.report).unwrap()).unwrap();
    let identical = first == &second;
    let bytes: usize = first.iter().map(|(_, c)| c.len()).sum();
    let detail = format!("{} files, {bytes} bytes, identical {identical}, run pass {}", first.len(), run.pass);
    report("iterate determinism", identical, t.elapsed(), None, detail);
}
