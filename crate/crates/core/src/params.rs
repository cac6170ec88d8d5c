//! Parameter schedule of the perturbation step: feasible `(β, r)`, the
//! λ-power choices of `ν, l, σ, μ` in the two dissipation regimes, and the
//! power-law inequalities those choices must satisfy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// `1 < α < (d+1)/2`.
    A,
    /// `α = 1`.
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Problem {
    pub d: usize,
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
}

impl Problem {
    pub fn case(&self) -> Result<Case> {
        let d = self.d as f64;
        if self.d < 2 {
            return Err(Error::Precondition(format!("dimension d = {} must be at least 2", self.d)));
        }
        if self.alpha == 1.0 {
            Ok(Case::B)
        } else if self.alpha > 1.0 && self.alpha < 0.5 * (d + 1.0) {
            Ok(Case::A)
        } else {
            Err(Error::Precondition(format!("α = {} must satisfy 1 ≤ α < (d+1)/2", self.alpha)))
        }
    }

    pub fn validate(&self) -> Result<Case> {
        let case = self.case()?;
        let pmax = 2.0 * self.alpha / (2.0 * self.alpha - 1.0);
        if !(self.p >= 1.0) {
            return Err(Error::Precondition(format!("p = {} must be at least 1", self.p)));
        }
        if self.p >= pmax || (case == Case::B && self.p >= 2.0 - 1e-9) {
            return Err(Error::Precondition(format!("p = {} violates p < 2α/(2α−1) = {pmax}", self.p)));
        }
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(Error::Precondition(format!("q = {} must be finite and at least 1", self.q)));
        }
        Ok(case)
    }
}

/// A strict constraint `lhs < rhs` evaluated at one `β`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Constraint {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

fn constraint(name: &str, lhs: f64, rhs: f64) -> Constraint {
    Constraint { name: name.to_string(), lhs, rhs, slack: rhs - lhs, pass: lhs < rhs }
}

/// `(2α/(2α−2))(d−1) − (6 + 5/(α−1))β`.
pub fn case_a_l_exponent(d: usize, alpha: f64, beta: f64) -> f64 {
    let d1 = d as f64 - 1.0;
    2.0 * alpha / (2.0 * alpha - 2.0) * d1 - (6.0 + 5.0 / (alpha - 1.0)) * beta
}

/// `(d−1)/(2α−2) − 1 − 5β/(2α−2)`.
pub fn case_a_sigma_exponent(d: usize, alpha: f64, beta: f64) -> f64 {
    let d1 = d as f64 - 1.0;
    d1 / (2.0 * alpha - 2.0) - 1.0 - 5.0 * beta / (2.0 * alpha - 2.0)
}

/// `max{2, (d−1+2β)/(2(1/p−1/2))}`.
pub fn case_b_l_exponent(d: usize, p: f64, beta: f64) -> f64 {
    let d1 = d as f64 - 1.0;
    ((d1 + 2.0 * beta) / (2.0 * (1.0 / p - 0.5))).max(2.0)
}

/// The `β` constraints of the regime, each with its slack.
pub fn beta_constraints(problem: &Problem, beta: f64) -> Result<Vec<Constraint>> {
    let case = problem.validate()?;
    let d = problem.d;
    let d1 = d as f64 - 1.0;
    let (alpha, p, q) = (problem.alpha, problem.p, problem.q);
    let mut out = Vec::new();
    match case {
        Case::A => {
            let lexp = case_a_l_exponent(d, alpha, beta);
            out.push(constraint("principal_lp_decay", (0.5 - 1.0 / p) * lexp + 0.5 * d1, -beta));
            let g = 6.0 + 5.0 / (alpha - 1.0);
            out.push(constraint(
                "critical_time_integrability",
                -(0.5 - (2.0 * alpha - 1.0) / (2.0 * alpha)) * g * beta - d1 / q,
                -beta,
            ));
            out.push(constraint("temporal_concentration_growth", 2.0 * beta, lexp));
            out.push(constraint("oscillation_growth", 2.0 * beta, case_a_sigma_exponent(d, alpha, beta)));
        }
        Case::B => {
            out.push(constraint("dimension_margin", 10.0 * beta, d1));
        }
    }
    out.push(constraint("beta_range", beta, 0.5));
    out.push(constraint("beta_positive", 0.0, beta));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BetaChoice {
    pub case: Case,
    pub beta: f64,
    pub r: f64,
    pub constraints: Vec<Constraint>,
    /// `β − (d − d/r)`.
    pub r_slack: f64,
}

/// Grid resolution of the `β` search: `β ∈ {k/1024}`.
pub const BETA_GRID: u32 = 1024;

/// Largest `β = k/1024` satisfying every constraint strictly, and
/// `r = d/(d − β/2)` so that `d − d/r = β/2 < β`.
pub fn feasible_beta_r(problem: &Problem) -> Result<BetaChoice> {
    let case = problem.validate()?;
    for k in (1..BETA_GRID / 2).rev() {
        let beta = k as f64 / BETA_GRID as f64;
        let constraints = beta_constraints(problem, beta)?;
        if constraints.iter().all(|c| c.pass) {
            let d = problem.d as f64;
            let r = d / (d - 0.5 * beta);
            return Ok(BetaChoice { case, beta, r, constraints, r_slack: beta - (d - d / r) });
        }
    }
    Err(Error::Precondition("no feasible β on the search grid".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Exponents {
    pub nu: f64,
    pub l: f64,
    pub sigma: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationParams {
    pub problem: Problem,
    pub case: Case,
    pub lambda: f64,
    pub beta: f64,
    pub r: f64,
    /// Real exponents of λ before rounding.
    pub exponents: Exponents,
    /// Rounded (half-up) values; kept as `f64` since `l` overflows integers.
    pub nu: f64,
    pub l: f64,
    pub sigma: f64,
    pub mu: f64,
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

pub fn build_params(problem: &Problem, lambda: f64, beta: f64, r: f64) -> Result<IterationParams> {
    let case = problem.validate()?;
    if !(lambda >= 1.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!("λ = {lambda} must be at least 1")));
    }
    let d = problem.d;
    let (nu, l, sigma, mu, exponents) = match case {
        Case::A => {
            let e = Exponents {
                nu: beta,
                l: case_a_l_exponent(d, problem.alpha, beta),
                sigma: case_a_sigma_exponent(d, problem.alpha, beta),
                mu: 1.0,
            };
            (
                round_half_up(lambda.powf(e.nu)),
                round_half_up(lambda.powf(e.l)),
                round_half_up(lambda.powf(e.sigma)),
                round_half_up(lambda),
                e,
            )
        }
        Case::B => {
            let le = case_b_l_exponent(d, problem.p, beta);
            let l = round_half_up(lambda.powf(le));
            let mu = round_half_up(lambda);
            let sigma = round_half_up(l.sqrt() * mu.powf(-1.0 + 2.0 * beta));
            let e = Exponents { nu: beta, l: le, sigma: 0.5 * le - 1.0 + 2.0 * beta, mu: 1.0 };
            (round_half_up(lambda.powf(beta)), l, sigma, mu, e)
        }
    };
    Ok(IterationParams {
        problem: *problem,
        case,
        lambda,
        beta,
        r,
        exponents,
        nu: nu.max(1.0),
        l: l.max(1.0),
        sigma: sigma.max(1.0),
        mu: mu.max(1.0),
    })
}

/// One power-law inequality `LHS ≤ λ^{−β}` in natural-log form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Inequality {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `ln rhs − ln lhs` on the rounded values.
    pub slack: f64,
    /// Same with the unrounded λ-powers.
    pub unrounded_slack: f64,
    /// Rounding changed the sign of a slack whose size is at least `10/λ`.
    pub rounding_flip: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityReport {
    pub lambda: f64,
    pub case: Case,
    pub records: Vec<Inequality>,
    pub all_pass: bool,
}

/// Natural logs of the left sides at `(ln ν, ln l, ln σ, ln μ)`.
fn lhs_logs(problem: &Problem, r: f64, lnu: f64, ll: f64, ls: f64, lm: f64) -> Vec<(&'static str, f64)> {
    let d1 = problem.d as f64 - 1.0;
    let (alpha, p, q) = (problem.alpha, problem.p, problem.q);
    let mut v = vec![
        ("principal", (0.5 - 1.0 / p) * ll + 0.5 * d1 * lm),
        ("corrector", -ls + lnu + ll - 0.5 * ll + (-1.0 + 0.5 * d1 - d1 / r) * lm),
        ("dissipative", -0.5 * ll + (2.0 * alpha - 1.0) * (ls + lm) + (0.5 * d1 - d1 / r) * lm),
        ("far_field", -ls + (d1 - d1 / r) * lm),
        ("temporal", -0.5 * ll),
    ];
    if alpha > 1.0 {
        v.push(("critical_lq", (0.5 - (2.0 * alpha - 1.0) / (2.0 * alpha)) * ll + (0.5 * d1 - d1 / q) * lm));
    }
    v
}

pub const SLACK_TOL: f64 = 1e-12;

pub fn check_inequalities(params: &IterationParams) -> InequalityReport {
    let lam = params.lambda;
    let ln_l = lam.ln();
    let rhs = -params.beta * ln_l;
    let rounded = lhs_logs(&params.problem, params.r, params.nu.ln(), params.l.ln(), params.sigma.ln(), params.mu.ln());
    let e = params.exponents;
    let exact = lhs_logs(&params.problem, params.r, e.nu * ln_l, e.l * ln_l, e.sigma * ln_l, ln_l);
    let records: Vec<Inequality> = rounded
        .iter()
        .zip(&exact)
        .map(|(&(name, lr), &(_, le))| {
            let slack = rhs - lr;
            let unrounded_slack = rhs - le;
            let rounding_flip = unrounded_slack.abs() >= 10.0 / lam && (slack > 0.0) != (unrounded_slack > 0.0);
            Inequality {
                name: name.to_string(),
                lhs: lr.exp(),
                rhs: rhs.exp(),
                slack,
                unrounded_slack,
                rounding_flip,
                pass: lam > 1.0 && slack >= -SLACK_TOL,
            }
        })
        .collect();
    let all_pass = records.iter().all(|r| r.pass);
    InequalityReport { lambda: lam, case: params.case, records, all_pass }
}

/// The two exact exponent identities of the regime-A choice (each should
/// equal `−2β`): the corrector and dissipative exponents without the `r` terms.
pub fn case_a_identities(d: usize, alpha: f64, beta: f64) -> [f64; 2] {
    let d1 = d as f64 - 1.0;
    let le = case_a_l_exponent(d, alpha, beta);
    let se = case_a_sigma_exponent(d, alpha, beta);
    let corrector = -se + beta + 0.5 * le - 1.0 - 0.5 * d1;
    let dissipative = -0.5 * le + (se + 1.0) * (2.0 * alpha - 1.0) - 0.5 * d1;
    [corrector, dissipative]
}
