use fracbous::params::*;
use fracbous::Error;
use proptest::prelude::*;

fn problem(d: usize, alpha: f64, p: f64, q: f64) -> Problem {
    Problem { d, alpha, p, q }
}

/// Largest `k/1024` under the binding Case A constraints, solved by hand.
fn case_a_beta_oracle(d: usize, alpha: f64, p: f64, q: f64) -> f64 {
    let d1 = d as f64 - 1.0;
    let g = 6.0 + 5.0 / (alpha - 1.0);
    let a0 = 2.0 * alpha / (2.0 * alpha - 2.0) * d1;
    // (1/2 − 1/p)(a0 − gβ) + d1/2 < −β
    let principal = ((1.0 / p - 0.5) * a0 - 0.5 * d1) / (1.0 + (1.0 / p - 0.5) * g);
    // c g β − d1/q < −β with c = (2α−1)/(2α) − 1/2
    let c = (2.0 * alpha - 1.0) / (2.0 * alpha) - 0.5;
    let critical = (d1 / q) / (1.0 + c * g);
    let bound = principal.min(critical).min(0.5);
    let k = (bound * 1024.0).ceil() - 1.0;
    k / 1024.0
}

#[test]
fn three_dimensional_beta_matches_hand_solution() {
    let pr = problem(3, 1.2, 1.0, 10.0);
    let choice = feasible_beta_r(&pr).unwrap();
    assert_eq!(choice.case, Case::A);
    assert_eq!(choice.beta, case_a_beta_oracle(3, 1.2, 1.0, 10.0));
    assert_eq!(choice.beta, 57.0 / 1024.0);
    assert!(3.0 - 3.0 / choice.r < choice.beta);
    assert!(choice.r > 1.0 && choice.r < 2.0);
    assert!(choice.constraints.iter().all(|c| c.pass && c.slack > 0.0));
}

#[test]
fn dissipation_one_uses_the_dimension_margin() {
    let pr = problem(3, 1.0, 1.0, 10.0);
    let choice = feasible_beta_r(&pr).unwrap();
    assert_eq!(choice.case, Case::B);
    // 10β < d − 1 = 2
    assert_eq!(choice.beta, 204.0 / 1024.0);
    let params = build_params(&pr, 1e4, choice.beta, choice.r).unwrap();
    // l = λ^{max{2, (d−1+2β)/(2(1/p−1/2))}} = λ^{max{2, 2+2β}}
    assert!((params.exponents.l - (2.0 + 2.0 * choice.beta)).abs() < 1e-14);
    let expect_sigma = (params.l.sqrt() * params.mu.powf(-1.0 + 2.0 * choice.beta) + 0.5).floor();
    assert_eq!(params.sigma, expect_sigma.max(1.0));
    assert_eq!(params.mu, 1e4);
    assert!(check_inequalities(&params).records.iter().all(|r| r.name != "critical_lq"));
}

#[test]
fn parameter_range_is_gated() {
    // 2α/(2α−1) = 2.4/1.4
    assert!(matches!(feasible_beta_r(&problem(3, 1.2, 1.8, 10.0)), Err(Error::Precondition(_))));
    assert!(feasible_beta_r(&problem(3, 1.2, 1.7, 10.0)).is_ok());
    assert!(problem(3, 2.0, 1.0, 10.0).validate().is_err());
    assert!(problem(2, 0.9, 1.0, 10.0).validate().is_err());
    assert!(problem(1, 1.2, 1.0, 10.0).validate().is_err());
    assert!(problem(3, 1.2, 1.0, f64::INFINITY).validate().is_err());
    assert!(problem(3, 1.0, 1.99999999999, 10.0).validate().is_err());
    let pr = problem(3, 1.2, 1.0, 10.0);
    assert!(build_params(&pr, 0.5, 0.05, 1.01).is_err());
}

#[test]
fn unit_scale_is_degenerate() {
    let pr = problem(3, 1.2, 1.0, 10.0);
    let choice = feasible_beta_r(&pr).unwrap();
    let params = build_params(&pr, 1.0, choice.beta, choice.r).unwrap();
    assert_eq!((params.nu, params.l, params.sigma, params.mu), (1.0, 1.0, 1.0, 1.0));
    let rep = check_inequalities(&params);
    assert!(!rep.all_pass);
    for r in &rep.records {
        assert!(!r.pass);
        assert_eq!(r.slack, 0.0, "{}", r.name);
        assert_eq!(r.lhs, 1.0);
    }
}

#[test]
fn large_scale_passes_every_inequality() {
    for (d, alpha) in [(3, 1.2), (3, 1.5), (2, 1.2)] {
        let pr = problem(d, alpha, 1.0, 10.0);
        let choice = feasible_beta_r(&pr).unwrap();
        let params = build_params(&pr, 1e6, choice.beta, choice.r).unwrap();
        let rep = check_inequalities(&params);
        assert_eq!(rep.records.len(), 6);
        assert!(rep.all_pass, "d = {d}, α = {alpha}: {rep:?}");
    }
}

#[test]
fn rounded_values_are_half_up() {
    let pr = problem(3, 1.2, 1.0, 10.0);
    let beta = 57.0 / 1024.0;
    let lam: f64 = 1e6;
    let p = build_params(&pr, lam, beta, 1.01).unwrap();
    assert_eq!(p.nu, (lam.powf(beta) + 0.5).floor());
    // l ≈ 1e61 and σ ≈ 1e22; the hand exponents agree only up to an ulp
    let l = (lam.powf(12.0 - 31.0 * beta) + 0.5).floor();
    assert!((p.l - l).abs() <= 1e-12 * l);
    let sigma = (lam.powf(4.0 - 12.5 * beta) + 0.5).floor();
    assert!((p.sigma - sigma).abs() <= 1e-12 * sigma);
    assert_eq!(p.mu, lam);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn case_a_exponent_identities(d in 2usize..4, frac in 0.05f64..0.95, beta in 0.0f64..0.1) {
        let alpha = 1.0 + frac * (0.5 * (d as f64 + 1.0) - 1.0);
        for v in case_a_identities(d, alpha, beta) {
            prop_assert!((v + 2.0 * beta).abs() <= 1e-12 * (1.0 + v.abs()), "{} vs {}", v, -2.0 * beta);
        }
    }

    #[test]
    fn rounding_flips_are_reported(log_lambda in 4.0f64..14.0) {
        let pr = problem(3, 1.2, 1.0, 10.0);
        let choice = feasible_beta_r(&pr).unwrap();
        let params = build_params(&pr, 10f64.powf(log_lambda), choice.beta, choice.r).unwrap();
        let rep = check_inequalities(&params);
        for r in &rep.records {
            let guarded = r.unrounded_slack.abs() >= 10.0 / rep.lambda;
            let flipped = (r.slack > 0.0) != (r.unrounded_slack > 0.0);
            prop_assert_eq!(r.rounding_flip, guarded && flipped);
            prop_assert!(!r.rounding_flip, "{} flipped at λ = {}", r.name, rep.lambda);
        }
    }
}
