use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use fracbous::driver::{admissible_tau_bar, initial_state, iterate, report_bundle, RunConfig};
use fracbous::gluing::{glue, GlueOptions};
use fracbous::params::{beta_constraints, build_params, check_inequalities, feasible_beta_r, Case, Problem};
use fracbous::snapshot::{read_state, write_state};
use fracbous::suites::{geometry_suite, mikado_suite, operator_suite, temporal_suite, ScalingRecord, SuiteReport};
use fracbous::verify::{residual, rng, support_check};
use fracbous::Shape;

/// Thread count of the parallel stages; defaults to all cores.
const THREADS_VAR: &str = "FRACBOUS_THREADS";

#[derive(Parser)]
#[command(name = "fracbous", version, about = "Convex-integration toolkit for the fractionally dissipative Boussinesq system")]
struct Cli {
    /// Seed for randomized suites and initial data; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Operator identities and the geometric decomposition on random inputs.
    VerifyOps {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1000)]
        geometry_samples: usize,
        #[arg(long, default_value = "verify-ops")]
        out: PathBuf,
    },
    /// Mikado and temporal-profile scaling fits.
    MikadoScaling {
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
        mus: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,4,inf")]
        ps: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "4,16,64")]
        ls: Vec<u64>,
        #[arg(long, default_value = "mikado-scaling")]
        out: PathBuf,
    },
    /// One gluing step on the configured initial state.
    Glue {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        tau_bar: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Local solver step; defaults to `dt_ratio · τ̄`.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// One glue-and-perturb round with the given scheme parameters.
    Perturb {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_parser = parse_case)]
        case: Option<Case>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        /// Also write field snapshots of the perturbed state.
        #[arg(long)]
        snapshot: bool,
    },
    /// Feasible β, the λ-power schedule and its inequalities.
    ParamsCheck {
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 1.2)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 10.0)]
        q: f64,
        #[arg(long, default_value_t = 1e6)]
        lambda: f64,
        #[arg(long, value_parser = parse_case)]
        case: Option<Case>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The full glue/perturb iteration and its report bundle.
    Iterate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rebuild the report bundle from a saved `run.json`.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Residual of a state snapshot written with `--snapshot`.
    Residual {
        /// Snapshot prefix, e.g. `run/final`.
        #[arg(long)]
        input: PathBuf,
        /// Fail unless the relative momentum and temperature residuals are below this.
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn parse_case(s: &str) -> Result<Case, String> {
    match s {
        "A" | "a" => Ok(Case::A),
        "B" | "b" => Ok(Case::B),
        _ => Err(format!("unknown case {s:?}; expected A or B")),
    }
}

type Failure = Box<dyn std::error::Error>;

fn load_config(run: &RunArgs, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg: RunConfig = match &run.config {
        Some(path) => toml::from_str(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(out) = &run.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    for (name, contents) in files {
        fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x > 0.0 {
        "inf".into()
    } else {
        format!("{x}")
    }
}

fn print_suites(suites: &[&SuiteReport]) {
    for s in suites {
        for c in &s.checks {
            let verdict = if c.pass { "pass" } else { "FAIL" };
            println!("{verdict} {}/{}: {:.3e} (tolerance {:.1e})", s.name, c.name, c.value, c.tolerance);
        }
    }
}

fn scaling_csv(records: &[ScalingRecord]) -> String {
    let mut out = String::from("quantity,p,param,norm\n");
    for r in records {
        for (x, y) in r.params.iter().zip(&r.values) {
            out.push_str(&format!("{},{},{},{}\n", r.quantity, num(r.p), x, y));
        }
    }
    out
}

fn fits_json(records: &[ScalingRecord]) -> Value {
    Value::Array(
        records
            .iter()
            .map(|r| {
                json!({
                    "quantity": r.quantity, "p": num(r.p), "exponent": r.exponent, "stderr": r.stderr,
                    "expected": r.expected, "relative_error": r.relative_error,
                })
            })
            .collect(),
    )
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let seed = cli.seed;
    match cli.command {
        Command::VerifyOps { samples, geometry_samples, out } => {
            let mut r = rng(seed.unwrap_or(1));
            let suites = vec![
                operator_suite(Shape::new(2, 64)?, samples, &mut r)?,
                operator_suite(Shape::new(3, 32)?, samples, &mut r)?,
                geometry_suite(2, geometry_samples, &mut r)?,
                geometry_suite(3, geometry_samples, &mut r)?,
            ];
            print_suites(&suites.iter().collect::<Vec<_>>());
            let pass = suites.iter().all(|s| s.pass);
            write_files(&out, &[("verify_ops.json".into(), pretty(&serde_json::to_value(&suites)?))])?;
            Ok(pass)
        }
        Command::MikadoScaling { n, mus, ps, ls, out } => {
            let (mikado, mrec) = mikado_suite(Shape::new(2, n)?, &mus, &ps)?;
            let (temporal, trec) = temporal_suite(&ls, 2)?;
            print_suites(&[&mikado, &temporal]);
            let all: Vec<ScalingRecord> = mrec.into_iter().chain(trec).collect();
            for r in &all {
                println!("fit {} p={}: exponent {:.4} expected {:.4}", r.quantity, num(r.p), r.exponent, r.expected);
            }
            let suites = json!({ "mikado": mikado, "temporal": temporal, "fits": fits_json(&all) });
            write_files(&out, &[("scaling.csv".into(), scaling_csv(&all)), ("scaling.json".into(), pretty(&suites))])?;
            Ok(mikado.pass && temporal.pass)
        }
        Command::Glue { run, tau_bar, epsilon, dt } => {
            let mut cfg = load_config(&run, seed)?;
            if let Some(e) = epsilon {
                cfg.scheme.epsilon = e;
            }
            let problem = cfg.problem();
            cfg.validate()?;
            let r = match cfg.scheme.r {
                Some(r) => r,
                None => feasible_beta_r(&problem)?.r,
            };
            let state = initial_state(&cfg)?;
            let tb = tau_bar.unwrap_or_else(|| admissible_tau_bar(state.intervals.tau, cfg.scheme.epsilon, cfg.scheme.tau_safety));
            let opts = GlueOptions {
                r,
                delta: 0.5 * cfg.scheme.delta0,
                transition_nodes: cfg.solver.transition_nodes,
                solver_nodes: cfg.solver.solver_nodes,
                ..GlueOptions::new(tb, cfg.scheme.epsilon, dt.unwrap_or(cfg.solver.dt_ratio * tb))
            };
            let (out, rep) = glue(&state, &opts)?;
            let manifest = json!({
                "endpoints": out.intervals.intervals, "tau_bar": rep.tau_bar, "count": out.intervals.len(),
                "epsilon": rep.epsilon, "nested": rep.nested,
            });
            let norms = format!(
                "quantity,value\nr_norm_in,{}\nr_norm_out,{}\ns_norm_in,{}\ns_norm_out,{}\nc_r,{}\nc_s,{}\ndu_hd,{}\ndtheta_hd,{}\ndelta,{}\n",
                rep.r_norm_in, rep.r_norm_out, rep.s_norm_in, rep.s_norm_out, rep.c_r, rep.c_s, rep.du_hd, rep.dtheta_hd, rep.delta
            );
            let support = support_check(&out);
            println!(
                "glued {} pieces ({} nonzero) into {} intervals; C_R {:.3e}, C_S {:.3e}; support {}",
                rep.pieces,
                rep.nonzero_pieces,
                out.intervals.len(),
                rep.c_r,
                rep.c_s,
                support.pass
            );
            let pass = rep.support_pass && support.pass && rep.nested && rep.endpoints_free;
            write_files(
                Path::new(&cfg.output.dir),
                &[
                    ("intervals.json".into(), pretty(&manifest)),
                    ("glue_norms.csv".into(), norms),
                    ("glue.json".into(), pretty(&serde_json::to_value(&rep)?)),
                ],
            )?;
            Ok(pass)
        }
        Command::Perturb { run, lambda, case, p, q, r, snapshot } => {
            let mut cfg = load_config(&run, seed)?;
            cfg.scheme.rounds = 1;
            cfg.scheme.case = case.or(cfg.scheme.case);
            cfg.scheme.r = r.or(cfg.scheme.r);
            cfg.scheme.lambda = lambda.unwrap_or(cfg.scheme.lambda);
            cfg.target.p = p.unwrap_or(cfg.target.p);
            cfg.target.q = q.unwrap_or(cfg.target.q);
            let out = iterate(&cfg)?;
            let dir = PathBuf::from(&cfg.output.dir);
            let mut files = Vec::new();
            let mut csv = String::from("term,l1_lr\n");
            if let Some(round) = out.report.rounds.first() {
                if let Some(prep) = &round.perturb {
                    for t in &prep.error_terms {
                        csv.push_str(&format!("{},{}\n", t.name, t.l2));
                    }
                    println!(
                        "perturbed at scales {:?}: stress {:.3e} -> {:.3e}, residual defect {:?}",
                        prep.scales, prep.stress_in, prep.stress_out, prep.residual_defect
                    );
                }
            }
            files.push(("error_terms.csv".into(), csv));
            files.push(("perturb.json".into(), pretty(&serde_json::to_value(&out.report)?)));
            write_files(&dir, &files)?;
            if snapshot || cfg.output.snapshots {
                write_state(&dir.join("perturbed"), &out.last)?;
            }
            Ok(out.report.pass)
        }
        Command::ParamsCheck { d, alpha, p, q, lambda, case, out } => {
            let problem = Problem { d, alpha, p, q };
            let actual = problem.validate()?;
            if let Some(c) = case {
                if c != actual {
                    return Err(format!("case {c:?} does not match α = {alpha}").into());
                }
            }
            let choice = feasible_beta_r(&problem)?;
            let params = build_params(&problem, lambda, choice.beta, choice.r)?;
            let ineq = check_inequalities(&params);
            let report = json!({
                "problem": problem,
                "case": actual,
                "beta": choice.beta,
                "r": choice.r,
                "beta_constraints": beta_constraints(&problem, choice.beta)?,
                "exponents": params.exponents,
                "values": { "nu": params.nu, "l": params.l, "sigma": params.sigma, "mu": params.mu },
                "inequalities": ineq.records,
                "all_pass": ineq.all_pass,
            });
            let text = pretty(&report);
            print!("{text}");
            if let Some(path) = out {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                fs::write(path, &text)?;
            }
            Ok(ineq.all_pass && choice.constraints.iter().all(|c| c.pass))
        }
        Command::Iterate { run } => {
            let cfg = load_config(&run, seed)?;
            let out = iterate(&cfg)?;
            let files = report_bundle(&serde_json::to_value(&out.report)?)?;
            let dir = PathBuf::from(&cfg.output.dir);
            write_files(&dir, &files)?;
            if cfg.output.snapshots {
                write_state(&dir.join("final"), &out.last)?;
            }
            for r in &out.report.rounds {
                println!(
                    "round {}: τ̄ {:.3e}, stress {:.3e} -> {:.3e}, {} intervals, pass {}",
                    r.round,
                    r.tau_bar,
                    r.stress_in,
                    r.stress_out,
                    r.intervals.len(),
                    r.pass
                );
            }
            if let Some(h) = &out.report.hausdorff {
                println!("hausdorff slope {:.3} (ε = {})", h.slope, h.epsilon);
            }
            Ok(out.report.pass)
        }
        Command::Report { input, out } => {
            let run: Value = serde_json::from_str(&fs::read_to_string(&input)?)?;
            write_files(&out, &report_bundle(&run)?)?;
            Ok(true)
        }
        Command::Residual { input, tol } => {
            let state = read_state(&input)?;
            let res = residual(&state)?;
            print!("{}", pretty(&serde_json::to_value(&res)?));
            Ok(tol.is_none_or(|t| res.momentum.max(res.temperature) <= t))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = std::env::var(THREADS_VAR).ok().filter(|s| !s.is_empty()) {
        let count = match threads.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                eprintln!("error: {THREADS_VAR} must be a positive integer, got {threads:?}");
                return ExitCode::from(2);
            }
        };
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(count).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more invariant checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
