//! Measured checks: residuals of the relaxed Boussinesq system, the energy
//! inequalities, support conditions, box-counting of interval covers and
//! log-log scaling fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{div, frac_laplacian, frac_symbol, grad};
use crate::error::{Error, Result};
use crate::field::{lq_of_samples, Complex64, Shape, SpectralField};
use crate::intervals::IntervalSet;
use crate::products::{outer_product, product};
use crate::state::ReynoldsQuadruple;
use crate::time::TimeField;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermNorm {
    pub name: String,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `‖momentum residual‖_{L²_{t,x}}` over the largest term norm.
    pub momentum: f64,
    /// `‖div u‖_{L²_{t,x}} / ‖∇u‖_{L²_{t,x}}`.
    pub incompressibility: f64,
    pub temperature: f64,
    pub momentum_abs: f64,
    pub temperature_abs: f64,
    pub terms: Vec<TermNorm>,
}

fn relative(abs: f64, scale: f64) -> f64 {
    if abs == 0.0 {
        0.0
    } else if scale > 0.0 {
        abs / scale
    } else {
        abs
    }
}

/// Residual fields of the momentum and temperature equations at node `j`,
/// with the per-term `L²_x` norms.
pub fn node_residual(state: &ReynoldsQuadruple, j: usize) -> Result<(SpectralField, SpectralField, Vec<f64>)> {
    let u = state.u.field(j);
    let th = state.theta.field(j);
    let d = u.d();
    let dtu = state.u.derivative(j);
    let adv = div(&outer_product(u, u)?)?;
    let gp = grad(state.p.field(j))?;
    let lap = frac_laplacian(u, state.alpha);
    let mut buoy = SpectralField::zeros(u.shape(), 1);
    buoy.comp_mut(d - 1).copy_from_slice(th.comp(0));
    let dr = div(state.r.field(j))?;
    let mut m = dtu.clone();
    m.axpy(1.0, &adv)?;
    m.axpy(1.0, &gp)?;
    m.axpy(1.0, &lap)?;
    m.axpy(-1.0, &buoy)?;
    m.axpy(-1.0, &dr)?;
    let dtt = state.theta.derivative(j);
    let tadv = div(&product(th, u)?)?;
    let tlap = frac_laplacian(th, state.alpha);
    let ds = div(state.s.field(j))?;
    let mut t = dtt.clone();
    t.axpy(1.0, &tadv)?;
    t.axpy(1.0, &tlap)?;
    t.axpy(-1.0, &ds)?;
    let norms = [&dtu, &adv, &gp, &lap, &buoy, &dr, &dtt, &tadv, &tlap, &ds]
        .iter()
        .map(|f| f.l2_norm())
        .collect();
    Ok((m, t, norms))
}

const TERM_NAMES: [&str; 10] = [
    "dt_u", "div_uu", "grad_p", "frac_lap_u", "buoyancy", "div_R", "dt_theta", "div_u_theta",
    "frac_lap_theta", "div_S",
];

pub fn residual(state: &ReynoldsQuadruple) -> Result<ResidualReport> {
    let n = state.len();
    let per_node: Vec<(f64, f64, f64, f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let (m, t, norms) = node_residual(state, j)?;
            let ddiv = div(state.u.field(j))?.l2_norm();
            let dgrad = grad(state.u.field(j))?.l2_norm();
            Ok((m.l2_norm(), t.l2_norm(), ddiv, dgrad, norms))
        })
        .collect::<Result<_>>()?;
    let w = state.grid().weights();
    let l2t = |f: &dyn Fn(&(f64, f64, f64, f64, Vec<f64>)) -> f64| -> f64 {
        per_node.iter().zip(w).map(|(x, wj)| wj * f(x).powi(2)).sum::<f64>().sqrt()
    };
    let m_abs = l2t(&|x| x.0);
    let t_abs = l2t(&|x| x.1);
    let div_abs = l2t(&|x| x.2);
    let grad_abs = l2t(&|x| x.3);
    let terms: Vec<TermNorm> = TERM_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| TermNorm { name: name.to_string(), l2: l2t(&|x| x.4[k]) })
        .collect();
    let m_scale = terms[..6].iter().map(|t| t.l2).fold(0.0, f64::max);
    let t_scale = terms[6..].iter().map(|t| t.l2).fold(0.0, f64::max);
    let report = ResidualReport {
        momentum: relative(m_abs, m_scale),
        incompressibility: relative(div_abs, grad_abs),
        temperature: relative(t_abs, t_scale),
        momentum_abs: m_abs,
        temperature_abs: t_abs,
        terms,
    };
    if !(report.momentum.is_finite() && report.temperature.is_finite() && report.incompressibility.is_finite()) {
        return Err(Error::NonFinite("residual"));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Energy inequalities

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub t: f64,
    /// `‖u(t)‖² + 2∫₀ᵗ ‖(−Δ)^{α/2}u‖²`.
    pub velocity_lhs: f64,
    /// `‖u₀‖² + 2∫₀ᵗ ∫ θ u_d`.
    pub velocity_rhs: f64,
    pub temperature_lhs: f64,
    pub temperature_rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub records: Vec<EnergyRecord>,
    /// Largest `lhs − rhs` over nodes for each inequality.
    pub velocity_excess: f64,
    pub temperature_excess: f64,
    pub first_velocity_violation: Option<f64>,
    pub first_temperature_violation: Option<f64>,
}

impl EnergyReport {
    /// Strict violation of either inequality by more than `margin`.
    pub fn violated(&self, margin: f64) -> bool {
        self.velocity_excess > margin || self.temperature_excess > margin
    }
}

fn dissipation(f: &SpectralField, symbol: &[f64]) -> f64 {
    let shape = f.shape();
    let modes = shape.modes();
    let mut s = 0.0;
    for c in 0..f.ncomp() {
        for ((v, sym), mode) in f.comp(c).iter().zip(symbol).zip(modes.iter()) {
            s += shape.weight(mode) * sym * v.norm_sqr();
        }
    }
    s
}

/// Both energy inequalities at every node, trapezoid in time; violations
/// are flagged when the excess exceeds `tol`.
pub fn energy_monitor(u: &TimeField, theta: &TimeField, alpha: f64, tol: f64) -> Result<EnergyReport> {
    if u.grid() != theta.grid() {
        return Err(Error::GridMismatch);
    }
    let shape = u.shape();
    let d = shape.d();
    let symbol = frac_symbol(shape, alpha);
    let nodes = u.grid().nodes();
    let n = nodes.len();
    let diss_u: Vec<f64> = u.fields().iter().map(|f| dissipation(f, &symbol)).collect();
    let diss_t: Vec<f64> = theta.fields().iter().map(|f| dissipation(f, &symbol)).collect();
    let work: Vec<f64> = (0..n)
        .map(|j| theta.field(j).inner(&u.field(j).component(d - 1)))
        .collect::<Result<_>>()?;
    let e_u: Vec<f64> = u.fields().iter().map(|f| f.l2_norm().powi(2)).collect();
    let e_t: Vec<f64> = theta.fields().iter().map(|f| f.l2_norm().powi(2)).collect();
    let (mut iu, mut it, mut iw) = (0.0, 0.0, 0.0);
    let mut records = Vec::with_capacity(n);
    let mut report =
        EnergyReport { records: vec![], velocity_excess: f64::NEG_INFINITY, temperature_excess: f64::NEG_INFINITY, first_velocity_violation: None, first_temperature_violation: None };
    for j in 0..n {
        if j > 0 {
            let h = nodes[j] - nodes[j - 1];
            iu += 0.5 * h * (diss_u[j] + diss_u[j - 1]);
            it += 0.5 * h * (diss_t[j] + diss_t[j - 1]);
            iw += 0.5 * h * (work[j] + work[j - 1]);
        }
        let rec = EnergyRecord {
            t: nodes[j],
            velocity_lhs: e_u[j] + 2.0 * iu,
            velocity_rhs: e_u[0] + 2.0 * iw,
            temperature_lhs: e_t[j] + 2.0 * it,
            temperature_rhs: e_t[0],
        };
        let xv = rec.velocity_lhs - rec.velocity_rhs;
        let xt = rec.temperature_lhs - rec.temperature_rhs;
        report.velocity_excess = report.velocity_excess.max(xv);
        report.temperature_excess = report.temperature_excess.max(xt);
        if xv > tol && report.first_velocity_violation.is_none() {
            report.first_velocity_violation = Some(rec.t);
        }
        if xt > tol && report.first_temperature_violation.is_none() {
            report.first_temperature_violation = Some(rec.t);
        }
        records.push(rec);
    }
    report.records = records;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Support of the stresses

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportReport {
    pub pass: bool,
    pub margin: f64,
    /// `(t, ‖R(t)‖_∞, ‖S(t)‖_∞)` at offending nodes.
    pub offending: Vec<(f64, f64, f64)>,
    pub checked: usize,
}

pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// `R = S = 0` (sup norm on the grid below 1e-12) at every node with
/// `dist(t, I^c) ≤ margin`.
pub fn support_check_with(r: &TimeField, s: &TimeField, intervals: &IntervalSet, margin: f64) -> SupportReport {
    let mut offending = Vec::new();
    let mut checked = 0;
    for (j, &t) in r.grid().nodes().iter().enumerate() {
        if intervals.dist_to_complement(t) > margin {
            continue;
        }
        checked += 1;
        let n = r.shape().n();
        let rs = r.field(j).to_grid(n).max_abs();
        let ss = s.field(j).to_grid(n).max_abs();
        if rs > SUPPORT_THRESHOLD || ss > SUPPORT_THRESHOLD {
            offending.push((t, rs, ss));
        }
    }
    SupportReport { pass: offending.is_empty(), margin, offending, checked }
}

/// Well-preparedness check against the state's own `(I, τ)`.
pub fn support_check(state: &ReynoldsQuadruple) -> SupportReport {
    support_check_with(&state.r, &state.s, &state.intervals, state.intervals.tau)
}

// ---------------------------------------------------------------------------
// Box counting

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HausdorffEstimate {
    /// `(5τ_n, N_n)` per level.
    pub covers: Vec<(f64, usize)>,
    pub slope: f64,
    pub stderr: f64,
    pub epsilon: f64,
    /// Slope within `ε + 0.05`.
    pub pass: bool,
}

pub fn hausdorff_estimate(levels: &[IntervalSet], epsilon: f64) -> Result<HausdorffEstimate> {
    if levels.len() < 2 {
        return Err(Error::Precondition("box counting needs at least two levels".into()));
    }
    for (n, w) in levels.windows(2).enumerate() {
        if !w[1].is_subset_of(&w[0]) {
            return Err(Error::NotNested(n + 1));
        }
    }
    let covers: Vec<(f64, usize)> = levels
        .iter()
        .map(|lv| {
            let s = 5.0 * lv.tau;
            (s, lv.cover_count(s))
        })
        .collect();
    let xs: Vec<f64> = covers.iter().map(|(s, _)| 1.0 / s).collect();
    let ys: Vec<f64> = covers.iter().map(|&(_, c)| c.max(1) as f64).collect();
    let fit = fit_power_law(&xs, &ys)?;
    Ok(HausdorffEstimate { covers, slope: fit.exponent, stderr: fit.stderr, epsilon, pass: fit.exponent <= epsilon + 0.05 })
}

// ---------------------------------------------------------------------------
// Improved Hölder probe

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HolderPoint {
    pub sigma: usize,
    /// ‖g·f(σ·)‖_p
    pub lhs: f64,
    /// ‖g‖_p ‖f‖_p
    pub main: f64,
    /// σ^{-1/p} ‖g‖_{C¹} ‖f‖_p
    pub correction: f64,
    /// lhs / (main + correction)
    pub constant: f64,
    /// (lhs − main) / correction, the constant on the correction alone
    pub excess: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderProbe {
    pub p: f64,
    pub points: Vec<HolderPoint>,
    pub mean_constant: f64,
    /// max |constant − mean| / mean
    pub spread: f64,
    pub pass: bool,
}

/// Measure the constant in `‖g f(σ·)‖_p ≲ ‖g‖_p‖f‖_p + σ^{-1/p}‖g‖_{C¹}‖f‖_p`
/// for each σ; passes when the constants agree to within `spread_tol`.
pub fn improved_holder_probe(g: &SpectralField, f: &SpectralField, sigmas: &[usize], p: f64, spread_tol: f64) -> Result<HolderProbe> {
    if g.rank() != 0 || f.rank() != 0 || g.shape() != f.shape() {
        return Err(Error::ShapeMismatch);
    }
    if sigmas.is_empty() {
        return Err(Error::Precondition("Hölder probe needs at least one σ".into()));
    }
    if f.mean()[0].abs() > 1e-12 * f.max_coeff().max(1e-300) {
        return Err(Error::Precondition("Hölder probe needs a mean-free f".into()));
    }
    let shape = g.shape();
    let m = 2 * shape.n();
    let gg = g.to_grid(m);
    let c1 = gg.max_abs() + grad(g)?.to_grid(m).lq_norm(f64::INFINITY)?;
    let gp = g.lq_norm(p)?;
    let fp = f.lq_norm(p)?;
    let mut points = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let fs = f.dilate(sigma, shape)?.to_grid(m);
        let prod: Vec<f64> = gg.comps[0].iter().zip(&fs.comps[0]).map(|(a, b)| a * b).collect();
        let lhs = lq_of_samples(&prod, p)?;
        let main = gp * fp;
        let correction = (sigma as f64).powf(-1.0 / p) * c1 * fp;
        points.push(HolderPoint { sigma, lhs, main, correction, constant: lhs / (main + correction), excess: (lhs - main) / correction });
    }
    let mean_constant = points.iter().map(|q| q.constant).sum::<f64>() / points.len() as f64;
    let spread = points.iter().map(|q| (q.constant - mean_constant).abs()).fold(0.0, f64::max) / mean_constant;
    Ok(HolderProbe { p, points, mean_constant, spread, pass: spread <= spread_tol && mean_constant.is_finite() })
}

// ---------------------------------------------------------------------------
// Scaling fits

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub stderr: f64,
    pub log_prefactor: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Precondition("power-law fit needs matching samples".into()));
    }
    if let Some(&bad) = xs.iter().chain(ys).find(|v| !(**v > 0.0)) {
        return Err(Error::NonPositive(bad));
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("power-law fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(PowerFit { exponent: slope, stderr, log_prefactor: icpt })
}

/// Evaluate `quantity` at each parameter (at least three) and fit the exponent.
pub fn scaling_probe<F>(params: &[f64], quantity: F) -> Result<PowerFit>
where
    F: Fn(f64) -> Result<f64>,
{
    if params.len() < 3 {
        return Err(Error::Precondition("scaling probe needs at least three parameters".into()));
    }
    let ys: Vec<f64> = params.iter().map(|&p| quantity(p)).collect::<Result<_>>()?;
    fit_power_law(params, &ys)
}

// ---------------------------------------------------------------------------
// Random fields for property suites

/// Real band-limited field with coefficients up to `|n_a| ≤ kmax`, i.i.d.
/// Gaussian-like amplitudes decaying like `(1+|n|²)^{-1}`.
pub fn random_field(shape: Shape, rank: usize, kmax: i64, rng: &mut ChaCha8Rng) -> SpectralField {
    let d = shape.d();
    let mut f = SpectralField::zeros(shape, rank);
    let modes = shape.modes();
    let kmax = kmax.min(shape.kmax());
    for c in 0..f.ncomp() {
        for (idx, mode) in modes.iter().enumerate() {
            if mode[..d].iter().any(|v| v.abs() > kmax) {
                continue;
            }
            let n2: i64 = mode[..d].iter().map(|v| v * v).sum();
            let amp = 1.0 / (1.0 + n2 as f64);
            let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * amp;
            f.comp_mut(c)[idx] = v;
        }
    }
    hermitize(&mut f);
    f
}

/// Enforce `c(−n) = conj c(n)` on the self-conjugate plane of the half layout.
pub fn hermitize(f: &mut SpectralField) {
    let shape = f.shape();
    let d = shape.d();
    let modes = shape.modes();
    for c in 0..f.ncomp() {
        for (idx, mode) in modes.iter().enumerate() {
            if mode[d - 1] != 0 {
                continue;
            }
            let neg = [-mode[0], -mode[1], -mode[2]];
            let (j, _) = match shape.slot(&neg) {
                Some(s) => s,
                None => {
                    f.comp_mut(c)[idx] = Complex64::default();
                    continue;
                }
            };
            if j == idx {
                let v = f.comp(c)[idx];
                f.comp_mut(c)[idx] = Complex64::new(v.re, 0.0);
            } else if j > idx {
                let v = f.comp(c)[idx];
                f.comp_mut(c)[j] = v.conj();
            }
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
