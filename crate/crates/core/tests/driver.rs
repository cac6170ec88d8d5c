use fracbous::convex::ScaleChoice;
use fracbous::driver::*;
use fracbous::params::Case;
use fracbous::Error;
use serde_json::Value;

fn point(lambda: f64, stress_out: f64) -> SweepPoint {
    SweepPoint {
        lambda,
        nominal: (1.0, 1.0, 1.0, 1.0),
        scales: ScaleChoice { nu: 1, l: 1, sigma: 1, mu: 1 },
        stress_out,
        residual_defect: None,
    }
}

#[test]
fn sweep_threshold() {
    assert_eq!(non_increasing_from(&[]), None);
    let pts: Vec<_> = [(1.0, 3.0), (2.0, 5.0), (4.0, 4.0), (8.0, 4.0), (16.0, 1.0)].map(|(l, s)| point(l, s)).into();
    assert_eq!(non_increasing_from(&pts), Some(2.0));
    let rising: Vec<_> = [(1.0, 1.0), (2.0, 2.0)].map(|(l, s)| point(l, s)).into();
    assert_eq!(non_increasing_from(&rising), Some(2.0));
}

#[test]
fn admissible_tau_bar_meets_every_constraint() {
    for (tau, eps) in [(0.2, 0.7), (0.05, 0.5), (1e-3, 0.9)] {
        let tb = admissible_tau_bar(tau, eps, 1.0);
        let rel = 1e-12;
        assert!(10.0 * tb.powf(eps) <= tau * (1.0 + rel));
        assert!(tb <= 0.5 * tau && 5.0 * tb <= tb.powf(eps) * (1.0 + rel));
        // one of the three is active
        let active = [10.0 * tb.powf(eps) / tau, 2.0 * tb / tau, 5.0 * tb / tb.powf(eps)];
        assert!(active.iter().any(|a| (a - 1.0).abs() < 1e-9), "{active:?}");
        assert_eq!(admissible_tau_bar(tau, eps, 0.5), 0.5 * tb);
    }
}

#[test]
fn validation_rejects_bad_configs() {
    let ok = RunConfig::default();
    assert_eq!(ok.validate().unwrap(), Case::A);
    let mut c = ok.clone();
    c.scheme.case = Some(Case::B);
    assert!(matches!(c.validate(), Err(Error::Precondition(_))));
    let edits: Vec<fn(&mut RunConfig)> = vec![
        |c| c.problem.n = 31,
        |c| c.problem.alpha = 1.6,
        |c| c.problem.horizon = 0.0,
        |c| c.scheme.epsilon = 1.0,
        |c| c.scheme.lambda = 0.5,
        |c| c.scheme.r = Some(2.0),
        |c| c.scheme.interval = (0.6, 0.4),
        |c| c.scheme.tau_safety = 1.5,
        |c| c.solver.fine_dt = 0.0,
        |c| c.scheme.lambda_sweep = vec![f64::NAN],
        |c| c.initial.support = (0.9, 1.1),
        |c| c.target.p = 2.0,
    ];
    for (k, edit) in edits.iter().enumerate() {
        let mut c = ok.clone();
        edit(&mut c);
        assert!(c.validate().is_err(), "edit {k}");
    }
}

#[test]
fn config_round_trips_through_json() {
    let mut c = RunConfig::default();
    c.scheme.lambda_sweep = vec![16.0, 64.0];
    c.initial.profile = InitialProfile::TaylorGreen;
    c.scheme.case = Some(Case::A);
    let text = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    assert!(text.contains("\"taylor-green\""));
    let partial: RunConfig = serde_json::from_str(r#"{"seed": 3, "problem": {"n": 16}}"#).unwrap();
    assert_eq!((partial.seed, partial.problem.n, partial.problem.d), (3, 16, 2));
    assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 3}"#).is_err());
}

#[test]
fn zero_amplitude_run_short_circuits() {
    let mut c = RunConfig::default();
    c.initial.amp_u = 0.0;
    c.initial.amp_theta = 0.0;
    let out = iterate(&c).unwrap();
    let rep = &out.report;
    assert_eq!(rep.initial_stress, 0.0);
    assert_eq!(rep.rounds.len(), 2);
    assert!(rep.rounds.iter().all(|r| r.short_circuit && r.pass && r.stress_out == 0.0));
    assert_eq!(rep.levels.len(), 1);
    assert!(rep.hausdorff.is_none() && rep.pass);

    let bundle = report_bundle(&serde_json::to_value(rep).unwrap()).unwrap();
    let names: Vec<&str> = bundle.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["run.json", "rounds.csv", "error_terms.csv", "lambda_sweep.csv", "intervals.json", "plot.csv"]);
    for (name, body) in &bundle {
        if name == "error_terms.csv" || name == "lambda_sweep.csv" {
            assert_eq!(body.lines().count(), 1, "{name}");
        }
    }
    let rounds = &bundle[1].1;
    assert_eq!(rounds.lines().count(), 3);
    assert!(rounds.lines().nth(1).unwrap().starts_with("1,"));
}

#[test]
fn report_bundle_is_deterministic() {
    let run: Value = serde_json::json!({
        "rounds": [{"round": 1, "tau_bar": 1e-3, "stress_in": 1.0, "stress_out": 0.5, "initial_data_gap": 0.0, "pass": true,
                    "perturb": {"perturbation_l2": 0.1, "error_terms": [{"name": "far", "l2": 0.2}]}}],
        "sweep": [],
        "levels": [{"intervals": [[0.0, 1.0]], "tau": 0.2}, {"intervals": [[0.1, 0.2], [0.5, 0.6]], "tau": 0.01}],
        "hausdorff": {"covers": [[0.2, 1.0], [0.01, 2.0]]},
    });
    let a = report_bundle(&run).unwrap();
    assert_eq!(a, report_bundle(&run).unwrap());
    let terms = &a.iter().find(|(n, _)| n == "error_terms.csv").unwrap().1;
    assert_eq!(terms, "round,term,l1_lr\n1,far,0.2\n");
    let plot = &a.iter().find(|(n, _)| n == "plot.csv").unwrap().1;
    assert_eq!(plot.lines().filter(|l| l.ends_with("cover_count")).count(), 2);
    let manifest: Value = serde_json::from_str(&a.iter().find(|(n, _)| n == "intervals.json").unwrap().1).unwrap();
    assert_eq!(manifest[1]["count"], 2);
}

#[test]
fn taylor_green_single_round() {
    let mut c = RunConfig::default();
    c.initial.profile = InitialProfile::TaylorGreen;
    c.scheme.rounds = 1;
    let out = iterate(&c).unwrap();
    let rep = &out.report;
    assert!(rep.initial_stress > 0.0);
    let round = &rep.rounds[0];
    assert!(!round.short_circuit, "{round:?}");
    assert!(round.pass, "{round:?}");
    assert!(round.initial_data_gap <= INITIAL_DATA_TOL);
    assert_eq!(rep.levels.len(), 2);
    assert!(rep.levels[1].is_subset_of(&rep.levels[0]));
    assert!(out.last.intervals.is_subset_of(&out.initial.intervals));
}
