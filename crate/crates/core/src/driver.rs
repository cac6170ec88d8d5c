//! The iteration loop: glue, refine the time grid inside the new interval
//! set, perturb, and repeat, together with the run configuration and the
//! deterministic report bundle.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::blocks::TemporalProfile;
use crate::convex::{
    clamp_params, perturb, perturbation_nodes, resample_state, ClampReport, PerturbConfig, PerturbReport, ScaleChoice, ScaleLimits,
};
use crate::error::{Error, Result};
use crate::field::Shape;
use crate::geometry::DirectionFamily;
use crate::gluing::{glue, GlueOptions, GlueReport};
use crate::intervals::IntervalSet;
use crate::params::{build_params, feasible_beta_r, Case, IterationParams, Problem};
use crate::state::ReynoldsQuadruple;
use crate::synth::{graded_nodes, manufactured_from, manufactured_state, taylor_green, ManufacturedSpec};
use crate::time::{joint_mixed_norm, MixedNormSpec, TimeGrid};
use crate::verify::{hausdorff_estimate, rng, HausdorffEstimate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    pub n: usize,
    pub alpha: f64,
    pub horizon: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig { d: 2, n: 32, alpha: 1.2, horizon: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub p: f64,
    pub q: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { p: 1.0, q: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub epsilon: f64,
    /// Spatial exponent of the stress norm; derived from `β` when absent.
    pub r: Option<f64>,
    pub lambda: f64,
    /// Must agree with the regime implied by `α` when given.
    pub case: Option<Case>,
    pub rounds: usize,
    /// Initial interval set `I₀` and its length scale `τ₀`.
    pub interval: (f64, f64),
    pub tau0: f64,
    /// Explicit `τ̄_n` per round; missing entries follow `tau_safety`.
    pub tau_bars: Vec<f64>,
    /// Automatic `τ̄_{n+1}` as this fraction of the largest admissible value.
    pub tau_safety: f64,
    /// `δ_n = 2^{−n} δ₀` bounds `‖ū − u‖_{L^∞H^d}` in round `n`.
    pub delta0: f64,
    pub max_nu: u64,
    pub max_l: u64,
    pub min_mu: u64,
    /// Extra first-round perturbations at these `λ` on the same glued state.
    pub lambda_sweep: Vec<f64>,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            epsilon: 0.7,
            r: None,
            lambda: 64.0,
            case: None,
            rounds: 2,
            interval: (0.0, 1.0),
            tau0: 0.2,
            tau_bars: vec![],
            tau_safety: 0.5,
            delta0: 1.0,
            max_nu: 4,
            max_l: 4,
            min_mu: 2,
            lambda_sweep: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Local solver step as a fraction of `τ̄`.
    pub dt_ratio: f64,
    pub rho_floor: f64,
    pub transition_nodes: usize,
    pub solver_nodes: bool,
    /// Spacing of the initial time grid, refined to `fine_dt` around the support.
    pub coarse_dt: f64,
    pub fine_dt: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { dt_ratio: 0.25, rho_floor: 1e-3, transition_nodes: 32, solver_nodes: false, coarse_dt: 0.02, fine_dt: 5e-4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialProfile {
    /// Random band-limited profiles up to mode `kmax`, drawn from the seed.
    Random,
    TaylorGreen,
}

/// Manufactured initial trajectory; zero amplitudes give an exact solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub profile: InitialProfile,
    pub support: (f64, f64),
    pub amp_u: f64,
    pub amp_theta: f64,
    pub kmax: i64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig { profile: InitialProfile::Random, support: (0.5, 0.506), amp_u: 0.05, amp_theta: 0.05, kmax: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    /// Also write field snapshots of the final state.
    pub snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "run".into(), snapshots: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub problem: ProblemConfig,
    pub target: TargetConfig,
    pub scheme: SchemeConfig,
    pub solver: SolverConfig,
    pub initial: InitialConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            problem: ProblemConfig::default(),
            target: TargetConfig::default(),
            scheme: SchemeConfig::default(),
            solver: SolverConfig::default(),
            initial: InitialConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn problem(&self) -> Problem {
        Problem { d: self.problem.d, alpha: self.problem.alpha, p: self.target.p, q: self.target.q }
    }

    /// Range checks against the preconditions of every stage.
    pub fn validate(&self) -> Result<Case> {
        let bad = |m: String| Err(Error::Precondition(m));
        Shape::new(self.problem.d, self.problem.n)?;
        let case = self.problem().validate()?;
        if let Some(c) = self.scheme.case {
            if c != case {
                return bad(format!("case {c:?} does not match α = {}", self.problem.alpha));
            }
        }
        let s = &self.scheme;
        let t = self.problem.horizon;
        if !(t > 0.0) {
            return bad(format!("horizon {t} must be positive"));
        }
        if !(s.epsilon > 0.0 && s.epsilon < 1.0) {
            return bad(format!("ε = {} must lie in (0, 1)", s.epsilon));
        }
        if !(s.lambda >= 1.0) {
            return bad(format!("λ = {} must be at least 1", s.lambda));
        }
        if let Some(r) = s.r {
            if !(r > 1.0 && r < 2.0) {
                return bad(format!("r = {r} must lie in (1, 2)"));
            }
        }
        let (a, b) = s.interval;
        if !(0.0 <= a && a < b && b <= t) || !(s.tau0 > 0.0) {
            return bad("initial interval or τ₀ malformed".into());
        }
        if !(s.tau_safety > 0.0 && s.tau_safety <= 1.0) || !(s.delta0 > 0.0) {
            return bad("tau_safety must lie in (0, 1] and delta0 be positive".into());
        }
        let v = &self.solver;
        if !(v.dt_ratio > 0.0 && v.rho_floor > 0.0 && v.coarse_dt > 0.0 && v.fine_dt > 0.0) {
            return bad("solver steps and ρ floor must be positive".into());
        }
        if s.lambda_sweep.iter().any(|&l| !(l >= 1.0 && l.is_finite())) {
            return bad("every swept λ must be at least 1".into());
        }
        let (sa, sb) = self.initial.support;
        if !(a <= sa && sa < sb && sb <= b) {
            return bad("initial support must lie in the initial interval".into());
        }
        Ok(case)
    }
}

/// Largest `τ̄` allowed after a state of scale `τ`: `10τ̄^ε < τ`, `τ̄ < τ/2`
/// and `5τ̄ < τ̄^ε`, scaled by `safety`.
pub fn admissible_tau_bar(tau: f64, epsilon: f64, safety: f64) -> f64 {
    let a = (tau / 10.0).powf(1.0 / epsilon);
    let b = 0.5 * tau;
    let c = 5f64.powf(-1.0 / (1.0 - epsilon));
    safety * a.min(b).min(c)
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub short_circuit: bool,
    pub tau_bar: f64,
    pub delta: f64,
    pub stress_in: f64,
    pub stress_out: f64,
    pub intervals: IntervalSet,
    pub glue: Option<GlueReport>,
    pub clamp: Option<ClampReport>,
    pub perturb: Option<PerturbReport>,
    pub nodes: usize,
    /// `‖(u_n − u₀, θ_n − θ₀)(0)‖_{L²}`.
    pub initial_data_gap: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterateReport {
    pub config: RunConfig,
    pub case: Case,
    pub beta: f64,
    pub r: f64,
    pub params: IterationParams,
    pub initial_stress: f64,
    pub initial_nodes: usize,
    pub rounds: Vec<RoundReport>,
    /// `I₀ ⊃ Ī₁ ⊃ …`.
    pub levels: Vec<IntervalSet>,
    pub hausdorff: Option<HausdorffEstimate>,
    /// First-round output stress across `scheme.lambda_sweep`.
    pub sweep: Vec<SweepPoint>,
    /// Smallest swept `λ` from which the output stress is non-increasing.
    pub sweep_threshold: Option<f64>,
    pub initial_data_preserved: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    /// `(ν, l, σ, μ)` before clamping.
    pub nominal: (f64, f64, f64, f64),
    pub scales: ScaleChoice,
    pub stress_out: f64,
    pub residual_defect: Option<f64>,
}

/// Smallest `λ` (in sweep order) after which `stress_out` never increases.
pub fn non_increasing_from(points: &[SweepPoint]) -> Option<f64> {
    let mut start = points.len().checked_sub(1)?;
    while start > 0 && points[start - 1].stress_out >= points[start].stress_out {
        start -= 1;
    }
    Some(points[start].lambda)
}

struct Stepper<'a> {
    cfg: &'a RunConfig,
    shape: Shape,
    family: &'a DirectionFamily,
    limits: ScaleLimits,
    r: f64,
}

impl Stepper<'_> {
    /// Clamp the scales, refine the grid inside `Ī` and perturb.
    fn perturb(&self, glued: &ReynoldsQuadruple, params: &IterationParams) -> Result<(ReynoldsQuadruple, ClampReport, PerturbReport)> {
        let (scales, clamp) = clamp_params(params, self.shape, self.family, self.limits)?;
        let profile = TemporalProfile::new(scales.l, scales.nu, self.cfg.problem.horizon)?;
        let nodes = perturbation_nodes(glued.grid(), &glued.intervals, &profile);
        let refined = resample_state(glued, nodes)?;
        let pcfg = PerturbConfig {
            scales,
            rho_floor: self.cfg.solver.rho_floor,
            r: self.r,
            p: self.cfg.target.p,
            q: self.cfg.target.q,
            check_grid: true,
            check_residual: true,
        };
        let (next, rep) = perturb(&refined, self.family, &pcfg)?;
        Ok((next, clamp, rep))
    }
}

pub struct IterateOutput {
    pub initial: ReynoldsQuadruple,
    pub last: ReynoldsQuadruple,
    pub report: IterateReport,
}

pub const INITIAL_DATA_TOL: f64 = 1e-10;
pub const DIVERGENCE_TOL: f64 = 1e-10;
pub const RESIDUAL_TOL: f64 = 1e-8;

pub fn initial_state(cfg: &RunConfig) -> Result<ReynoldsQuadruple> {
    let shape = Shape::new(cfg.problem.d, cfg.problem.n)?;
    let t = cfg.problem.horizon;
    let (a, b) = cfg.initial.support;
    let pad = 0.25 * (b - a) + 2.0 * cfg.solver.fine_dt;
    let grid = TimeGrid::new(t, graded_nodes(t, cfg.solver.coarse_dt, &[(a - pad, b + pad, cfg.solver.fine_dt)]))?;
    let (ia, ib) = cfg.scheme.interval;
    let intervals = IntervalSet::new(vec![(ia, ib)], cfg.scheme.tau0, cfg.scheme.epsilon, t)?;
    let spec = ManufacturedSpec {
        support: cfg.initial.support,
        amp_u: cfg.initial.amp_u,
        amp_theta: cfg.initial.amp_theta,
        kmax: cfg.initial.kmax,
        alpha: cfg.problem.alpha,
    };
    if spec.amp_u == 0.0 && spec.amp_theta == 0.0 {
        let zero = crate::time::TimeField::zeros(grid.clone(), &crate::field::SpectralField::zeros(shape, 1));
        let zs = crate::time::TimeField::zeros(grid, &crate::field::SpectralField::zeros(shape, 0));
        return crate::synth::complete_state(zero, zs, spec.alpha, intervals);
    }
    match cfg.initial.profile {
        InitialProfile::Random => manufactured_state(shape, grid, &spec, intervals, &mut rng(cfg.seed)),
        InitialProfile::TaylorGreen => {
            let (u, th) = taylor_green(shape)?;
            manufactured_from(&u, &th, grid, &spec, intervals)
        }
    }
}

fn stress_norm(state: &ReynoldsQuadruple, r: f64) -> Result<f64> {
    joint_mixed_norm(&[&state.r, &state.s], MixedNormSpec::new(1.0, r)?)
}

fn initial_gap(a: &ReynoldsQuadruple, b: &ReynoldsQuadruple) -> Result<f64> {
    let du = a.u.field(0).sub(b.u.field(0))?.l2_norm();
    let dt = a.theta.field(0).sub(b.theta.field(0))?.l2_norm();
    Ok((du * du + dt * dt).sqrt())
}

/// Alternate gluing and perturbation for `rounds` rounds.
pub fn iterate(cfg: &RunConfig) -> Result<IterateOutput> {
    let case = cfg.validate()?;
    let problem = cfg.problem();
    let choice = feasible_beta_r(&problem)?;
    let r = cfg.scheme.r.unwrap_or(choice.r);
    let params = build_params(&problem, cfg.scheme.lambda, choice.beta, r)?;
    let family = DirectionFamily::build(cfg.problem.d)?;
    let shape = Shape::new(cfg.problem.d, cfg.problem.n)?;
    let limits = ScaleLimits { max_nu: cfg.scheme.max_nu, max_l: cfg.scheme.max_l, min_mu: cfg.scheme.min_mu };

    let initial = initial_state(cfg).map_err(|e| e.in_stage("initial state"))?;
    let initial_stress = stress_norm(&initial, r)?;
    let mut state = initial.clone();
    let mut levels = vec![initial.intervals.clone()];
    let mut rounds = Vec::new();
    let mut sweep = Vec::new();
    for n in 0..cfg.scheme.rounds {
        let stage = |what: &str| format!("round {}: {what}", n + 1);
        let tau = state.intervals.tau;
        let tau_bar = cfg
            .scheme
            .tau_bars
            .get(n)
            .copied()
            .unwrap_or_else(|| admissible_tau_bar(tau, cfg.scheme.epsilon, cfg.scheme.tau_safety));
        let delta = cfg.scheme.delta0 * 0.5f64.powi(n as i32 + 1);
        let stress_in = stress_norm(&state, r)?;
        if state.stress_free() {
            rounds.push(RoundReport {
                round: n + 1,
                short_circuit: true,
                tau_bar,
                delta,
                stress_in,
                stress_out: stress_in,
                intervals: state.intervals.clone(),
                glue: None,
                clamp: None,
                perturb: None,
                nodes: state.len(),
                initial_data_gap: initial_gap(&state, &initial)?,
                pass: true,
            });
            continue;
        }
        let opts = GlueOptions {
            r,
            delta,
            transition_nodes: cfg.solver.transition_nodes,
            solver_nodes: cfg.solver.solver_nodes,
            ..GlueOptions::new(tau_bar, cfg.scheme.epsilon, cfg.solver.dt_ratio * tau_bar)
        };
        let (glued, glue_report) = glue(&state, &opts).map_err(|e| e.in_stage(stage("glue")))?;
        let stepper = Stepper { cfg, shape, family: &family, limits, r };
        let (next, clamp, prep) = stepper.perturb(&glued, &params).map_err(|e| e.in_stage(stage("perturb")))?;
        if n == 0 && !cfg.scheme.lambda_sweep.is_empty() {
            for &lam in &cfg.scheme.lambda_sweep {
                let swept = build_params(&problem, lam, choice.beta, r)?;
                let (_, c, rep) = stepper.perturb(&glued, &swept).map_err(|e| e.in_stage(stage(&format!("sweep λ = {lam}"))))?;
                sweep.push(SweepPoint {
                    lambda: lam,
                    nominal: (c.nominal_nu, c.nominal_l, c.nominal_sigma, c.nominal_mu),
                    scales: c.effective,
                    stress_out: rep.stress_out,
                    residual_defect: rep.residual_defect,
                });
            }
        }
        let gap = initial_gap(&next, &initial)?;
        let pass = glue_report.support_pass
            && glue_report.nested
            && glue_report.endpoints_free
            && prep.support_in_intervals
            && prep.div_w <= DIVERGENCE_TOL
            && prep.kappa_mean <= 1e-12
            && prep.residual_defect.is_some_and(|v| v <= RESIDUAL_TOL)
            && gap <= INITIAL_DATA_TOL;
        levels.push(glued.intervals.clone());
        rounds.push(RoundReport {
            round: n + 1,
            short_circuit: false,
            tau_bar: glue_report.tau_bar,
            delta,
            stress_in,
            stress_out: prep.stress_out,
            intervals: glued.intervals.clone(),
            glue: Some(glue_report),
            clamp: Some(clamp),
            perturb: Some(prep),
            nodes: next.len(),
            initial_data_gap: gap,
            pass,
        });
        state = next;
    }
    let hausdorff = if levels.len() >= 2 { Some(hausdorff_estimate(&levels, cfg.scheme.epsilon)?) } else { None };
    let sweep_threshold = non_increasing_from(&sweep);
    let initial_data_preserved = rounds.iter().all(|r| r.initial_data_gap <= INITIAL_DATA_TOL);
    let pass = rounds.iter().all(|r| r.pass) && initial_data_preserved && hausdorff.as_ref().is_none_or(|h| h.pass);
    let report = IterateReport {
        config: cfg.clone(),
        case,
        beta: choice.beta,
        r,
        params,
        initial_stress,
        initial_nodes: initial.len(),
        rounds,
        levels,
        hausdorff,
        sweep,
        sweep_threshold,
        initial_data_preserved,
        pass,
    };
    Ok(IterateOutput { initial, last: state, report })
}

// ---------------------------------------------------------------------------
// Report bundle

fn csv_field(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv(header: &[&str], rows: &[Vec<Value>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(csv_field).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn arr(v: &Value) -> &[Value] {
    v.as_array().map(Vec::as_slice).unwrap_or(&[])
}

/// Files `(name, contents)` derived from a serialized run report; the same
/// input always gives the same bytes.
pub fn report_bundle(run: &Value) -> Result<Vec<(String, String)>> {
    let rounds = arr(&run["rounds"]);
    let mut files = Vec::new();
    let pretty = |v: &Value| serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Error::Format(e.to_string()));
    files.push(("run.json".to_string(), pretty(run)?));

    let round_rows: Vec<Vec<Value>> = rounds
        .iter()
        .map(|r| {
            let p = &r["perturb"];
            vec![
                r["round"].clone(),
                r["tau_bar"].clone(),
                r["stress_in"].clone(),
                r["stress_out"].clone(),
                p["perturbation_l2"].clone(),
                p["perturbation_lp_linf"].clone(),
                p["perturbation_critical"].clone(),
                p["residual_defect"].clone(),
                r["initial_data_gap"].clone(),
                r["pass"].clone(),
            ]
        })
        .collect();
    files.push((
        "rounds.csv".into(),
        csv(
            &[
                "round",
                "tau_bar",
                "stress_in",
                "stress_out",
                "perturbation_l2",
                "perturbation_lp_linf",
                "perturbation_critical",
                "residual_defect",
                "initial_data_gap",
                "pass",
            ],
            &round_rows,
        ),
    ));

    let mut term_rows = Vec::new();
    for r in rounds {
        for t in arr(&r["perturb"]["error_terms"]) {
            term_rows.push(vec![r["round"].clone(), t["name"].clone(), t["l2"].clone()]);
        }
    }
    files.push(("error_terms.csv".into(), csv(&["round", "term", "l1_lr"], &term_rows)));

    let sweep_rows: Vec<Vec<Value>> = arr(&run["sweep"])
        .iter()
        .map(|p| {
            let e = &p["scales"];
            vec![p["lambda"].clone(), e["nu"].clone(), e["l"].clone(), e["sigma"].clone(), e["mu"].clone(), p["stress_out"].clone(), p["residual_defect"].clone()]
        })
        .collect();
    files.push(("lambda_sweep.csv".into(), csv(&["lambda", "nu", "l", "sigma", "mu", "stress_out", "residual_defect"], &sweep_rows)));

    let levels = arr(&run["levels"]);
    let manifest: Vec<Value> = levels
        .iter()
        .enumerate()
        .map(|(n, lv)| json!({ "level": n, "endpoints": lv["intervals"], "tau": lv["tau"], "count": arr(&lv["intervals"]).len() }))
        .collect();
    files.push(("intervals.json".into(), pretty(&Value::Array(manifest))?));

    let mut plot = Vec::new();
    for r in rounds {
        plot.push(vec![r["round"].clone(), r["stress_out"].clone(), Value::from("stress")]);
        plot.push(vec![r["round"].clone(), r["perturb"]["perturbation_l2"].clone(), Value::from("perturbation_l2")]);
    }
    if let Some(h) = run.get("hausdorff").filter(|h| !h.is_null()) {
        for c in arr(&h["covers"]) {
            plot.push(vec![c[0].clone(), c[1].clone(), Value::from("cover_count")]);
        }
    }
    files.push(("plot.csv".into(), csv(&["x", "y", "series"], &plot)));
    Ok(files)
}
