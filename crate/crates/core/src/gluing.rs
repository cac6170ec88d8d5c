//! Gluing: exact local corrector solves on the partition `t_i = iτ̄^ε`,
//! cutoff assembly of `(ū, θ̄, p̄, R̄, S̄)` and the new interval set `Ī`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::GluingCutoffs;
use crate::calculus::{antidiv_g, antidiv_r, div, inverse_laplacian, leray_project};
use crate::error::{Error, Result};
use crate::field::SpectralField;
use crate::imex::{imex_evolve, ImexOptions};
use crate::intervals::IntervalSet;
use crate::products::{outer_product, product};
use crate::state::ReynoldsQuadruple;
use crate::time::{lagrange_weights, mixed_norm, MixedNormSpec, TimeField, TimeGrid};
use crate::verify::{residual, support_check, ResidualReport};

/// Window node offsets around an active gluing point, in units of `τ̄`:
/// `m` uniform intervals across the transition `[1/2, 1]` plus a coarse ramp.
fn window_offsets(m: usize) -> Vec<f64> {
    let mut w = vec![0.0, 0.25];
    w.extend((0..=m).map(|k| 0.5 + 0.5 * k as f64 / m as f64));
    w.extend([1.125, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5]);
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GlueOptions {
    pub tau_bar: f64,
    pub epsilon: f64,
    /// Target step of the local solves (rounded down to divide each piece).
    pub dt: f64,
    /// Spatial exponent `r` of the `L¹L^r` norm report.
    pub r: f64,
    /// Bound `δ` on `‖ū − u‖_{L^∞H^d}`.
    pub delta: f64,
    /// Relative tolerance of the step-halving comparison; `None` skips it.
    pub step_tol: Option<f64>,
    pub growth_factor: f64,
    /// Re-measure the residual of input and output.
    pub check_residual: bool,
    /// Add the solver step times of nonzero pieces to the output grid.
    pub solver_nodes: bool,
    /// Output nodes across each cutoff transition.
    pub transition_nodes: usize,
}

impl GlueOptions {
    pub fn new(tau_bar: f64, epsilon: f64, dt: f64) -> Self {
        GlueOptions {
            tau_bar,
            epsilon,
            dt,
            r: 1.5,
            delta: 1.0,
            step_tol: None,
            growth_factor: 1e3,
            check_residual: true,
            solver_nodes: true,
            transition_nodes: 32,
        }
    }
}

/// Local corrector `(v_i, φ_i)` on one piece, kept at the uniform solver steps
/// needed to interpolate at requested times.
#[derive(Clone, Debug)]
pub struct LocalSolution {
    pub piece: usize,
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub steps: usize,
    /// Solver time of the first nonzero state; `None` if identically zero.
    pub first_nonzero: Option<f64>,
    stored: BTreeMap<usize, [SpectralField; 2]>,
    template: [SpectralField; 2],
}

impl LocalSolution {
    fn stencil(&self, t: f64) -> usize {
        let s = ((t - self.t0) / self.dt).floor().max(0.0) as usize;
        s.saturating_sub(1).min(self.steps - 3)
    }

    pub fn is_zero(&self) -> bool {
        self.first_nonzero.is_none()
    }

    /// `(v, φ)` at `t` by four-point Lagrange interpolation of solver steps.
    pub fn sample(&self, t: f64) -> Result<[SpectralField; 2]> {
        if self.is_zero() {
            return Ok(self.template.clone());
        }
        let start = self.stencil(t);
        let xs: Vec<f64> = (start..start + 4).map(|s| self.t0 + s as f64 * self.dt).collect();
        let w = lagrange_weights(t, &xs);
        let mut out = self.template.clone();
        for (k, wk) in w.iter().enumerate() {
            let y = self.stored.get(&(start + k)).ok_or_else(|| {
                Error::Precondition(format!("local solution not stored near t = {t}"))
            })?;
            if *wk != 0.0 {
                out[0].axpy(*wk, &y[0])?;
                out[1].axpy(*wk, &y[1])?;
            }
        }
        Ok(out)
    }
}

/// Unprojected right-hand side of the corrector system at `t`:
/// `(−div P_N(vu + uv + vv) + φ e_d − div R, −div P_N(vθ + uφ + vφ) − div S)`.
fn corrector_forcing(state: &ReynoldsQuadruple, t: f64, y: &[SpectralField]) -> Result<(SpectralField, SpectralField)> {
    let [u, th, _, r, s] = state.at(t);
    let (v, phi) = (&y[0], &y[1]);
    let d = u.d();
    let vu = outer_product(v, &u)?;
    let mut m = vu.add(&vu.transpose()?)?;
    m.axpy(1.0, &outer_product(v, v)?)?;
    let mut gv = div(&m)?.scale(-1.0);
    let mut buoy = SpectralField::zeros(u.shape(), 1);
    buoy.comp_mut(d - 1).copy_from_slice(phi.comp(0));
    gv.axpy(1.0, &buoy)?;
    gv.axpy(-1.0, &div(&r)?)?;
    let mut flux = product(&th.add(phi)?, v)?;
    flux.axpy(1.0, &product(phi, &u)?)?;
    let mut gp = div(&flux)?.scale(-1.0);
    gp.axpy(-1.0, &div(&s)?)?;
    Ok((gv, gp))
}

/// Pressure `q = Δ^{-1} div` of the unprojected velocity forcing.
pub fn corrector_pressure(state: &ReynoldsQuadruple, t: f64, v: &SpectralField, phi: &SpectralField) -> Result<SpectralField> {
    let (gv, _) = corrector_forcing(state, t, &[v.clone(), phi.clone()])?;
    Ok(inverse_laplacian(&div(&gv)?))
}

fn stress_nonzero(state: &ReynoldsQuadruple) -> Vec<bool> {
    (0..state.len()).map(|j| state.r.field(j).max_coeff() > 0.0 || state.s.field(j).max_coeff() > 0.0).collect()
}

fn node_range(nodes: &[f64], a: f64, b: f64, pad: usize) -> (usize, usize) {
    let lo = nodes.partition_point(|&t| t < a).saturating_sub(pad);
    let hi = (nodes.partition_point(|&t| t <= b) + pad).min(nodes.len());
    (lo, hi)
}

fn run_piece(
    state: &ReynoldsQuadruple,
    t0: f64,
    steps: usize,
    dt: f64,
    growth: f64,
    mut keep: impl FnMut(usize) -> bool,
) -> Result<(BTreeMap<usize, [SpectralField; 2]>, Option<f64>, [SpectralField; 2])> {
    let shape = state.shape();
    let init = vec![SpectralField::zeros(shape, 1), SpectralField::zeros(shape, 0)];
    let mut stored = BTreeMap::new();
    let mut first = None;
    let rhs = |t: f64, y: &[SpectralField]| -> Result<Vec<SpectralField>> {
        let (gv, gp) = corrector_forcing(state, t, y)?;
        Ok(vec![leray_project(&gv)?, gp])
    };
    let mut opts = ImexOptions::new(dt, steps);
    opts.growth_factor = growth;
    let end = imex_evolve(&init, t0, state.alpha, rhs, opts, |k, t, y| {
        if first.is_none() && y.iter().any(|f| f.max_coeff() > 0.0) {
            first = Some(t);
        }
        if keep(k) {
            stored.insert(k, [y[0].clone(), y[1].clone()]);
        }
    })?;
    Ok((stored, first, [end[0].clone(), end[1].clone()]))
}

fn piece_steps(len: f64, dt: f64) -> usize {
    ((len / dt) * (1.0 - 1e-12)).ceil().max(3.0) as usize
}

fn step_times(t0: f64, t1: f64, dt: f64) -> impl Iterator<Item = f64> {
    let steps = piece_steps(t1 - t0, dt);
    let h = (t1 - t0) / steps as f64;
    (0..=steps).map(move |k| t0 + k as f64 * h)
}

/// Solve the corrector system on piece `i` with zero data at `t_i`, keeping
/// what is needed to interpolate at `keep_times`.
pub fn local_solve(
    state: &ReynoldsQuadruple,
    cutoffs: &GluingCutoffs,
    i: usize,
    opts: &GlueOptions,
    keep_times: &[f64],
) -> Result<LocalSolution> {
    let (t0, t1) = (cutoffs.points[i], cutoffs.points[i + 1]);
    let len = t1 - t0;
    if !(opts.dt > 0.0) {
        return Err(Error::NonPositive(opts.dt));
    }
    let steps = piece_steps(len, opts.dt);
    let dt = len / steps as f64;
    let shape = state.shape();
    let template = [SpectralField::zeros(shape, 1), SpectralField::zeros(shape, 0)];
    let mut sol =
        LocalSolution { piece: i, t0, t1, dt, steps, first_nonzero: None, stored: BTreeMap::new(), template };

    let nodes = state.grid().nodes();
    let (a, _) = state.grid().interpolation_stencil(t0);
    let (b, wb) = state.grid().interpolation_stencil(t1);
    let nz = stress_nonzero(state);
    if !nz[a..b + wb.len()].iter().any(|&x| x) {
        return Ok(sol);
    }
    debug_assert!(nodes.len() >= 4);

    let mut needed = std::collections::BTreeSet::new();
    for &t in keep_times {
        let s = sol.stencil(t);
        needed.extend(s..s + 4);
    }
    let (stored, first, end) = run_piece(state, t0, steps, dt, opts.growth_factor, |k| needed.contains(&k))?;
    sol.stored = stored;
    sol.first_nonzero = first;

    if let (Some(tol), Some(_)) = (opts.step_tol, first) {
        let (_, _, fine) = run_piece(state, t0, 2 * steps, 0.5 * dt, opts.growth_factor, |_| false)?;
        let scale = (end[0].l2_norm().powi(2) + end[1].l2_norm().powi(2)).sqrt();
        let diff = (end[0].sub(&fine[0])?.l2_norm().powi(2) + end[1].sub(&fine[1])?.l2_norm().powi(2)).sqrt();
        let discrepancy = if scale > 0.0 { diff / scale } else { diff };
        if discrepancy > tol {
            return Err(Error::StepTooCoarse { discrepancy, tol });
        }
    }
    Ok(sol)
}

#[derive(Clone, Debug, Serialize)]
pub struct GlueReport {
    /// Effective `τ̄` after making `T/τ̄^ε` an integer.
    pub tau_bar: f64,
    pub epsilon: f64,
    pub pieces: usize,
    pub nonzero_pieces: usize,
    pub active_points: Vec<usize>,
    pub intervals: IntervalSet,
    /// `Ī ⊂ I`.
    pub nested: bool,
    /// `0, T ∉ Ī`.
    pub endpoints_free: bool,
    pub r: f64,
    /// `‖R̄‖_{L¹L^r} / ‖R‖_{L¹L^r}` and the `S` analogue (0 when both vanish).
    pub c_r: f64,
    pub c_s: f64,
    pub r_norm_in: f64,
    pub r_norm_out: f64,
    pub s_norm_in: f64,
    pub s_norm_out: f64,
    /// `‖ū − u‖_{L^∞H^d}` and `‖θ̄ − θ‖_{L^∞H^d}` over output nodes.
    pub du_hd: f64,
    pub dtheta_hd: f64,
    pub delta: f64,
    pub within_delta: bool,
    /// `ū − u` and `θ̄ − θ` vanish at output nodes outside `I`.
    pub perturbation_in_i: bool,
    pub output_nodes: usize,
    pub support_pass: bool,
    pub input_residual: Option<ResidualReport>,
    pub output_residual: Option<ResidualReport>,
}

fn ratio(out: f64, inp: f64) -> f64 {
    if out == 0.0 {
        0.0
    } else if inp > 0.0 {
        out / inp
    } else {
        f64::INFINITY
    }
}

/// Glue local exact solutions into `(ū, θ̄, p̄, R̄, S̄)` well prepared for `(Ī, τ̄)`.
pub fn glue(state: &ReynoldsQuadruple, opts: &GlueOptions) -> Result<(ReynoldsQuadruple, GlueReport)> {
    let horizon = state.horizon();
    let tau = state.intervals.tau;
    let cutoffs = GluingCutoffs::new(horizon, opts.tau_bar, opts.epsilon)?;
    let tb = cutoffs.tau_bar;
    let piece_len = cutoffs.points[1] - cutoffs.points[0];
    if !(10.0 * piece_len < tau) {
        return Err(Error::Precondition(format!("10τ̄^ε = {:.4e} must be below τ = {tau:.4e}", 10.0 * piece_len)));
    }
    if !(tb < 0.5 * tau) {
        return Err(Error::Precondition(format!("τ̄ = {tb:.4e} must be below τ/2")));
    }
    let prepared = support_check(state);
    if !prepared.pass {
        return Err(Error::Precondition(format!(
            "input not well prepared: {} nodes carry stress within τ of I^c",
            prepared.offending.len()
        )));
    }
    let n = cutoffs.len();
    let nodes = state.grid().nodes().to_vec();
    let offsets = window_offsets(opts.transition_nodes.max(2));
    let window = |i: usize| -> Vec<f64> {
        let c = cutoffs.points[i];
        let mut w: Vec<f64> = offsets.iter().flat_map(|&o| [c - o * tb, c + o * tb]).collect();
        w.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        w.dedup();
        w
    };

    // candidate output times per piece: its input nodes and the windows at both ends
    let solutions: Vec<LocalSolution> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (a, b) = (cutoffs.points[i], cutoffs.points[i + 1]);
            let mut keep: Vec<f64> = nodes.iter().copied().filter(|&t| a <= t && t <= b).collect();
            if opts.solver_nodes {
                keep.extend(step_times(a, b, opts.dt));
            }
            for p in [i, i + 1] {
                if p >= 1 && p < n {
                    keep.extend(window(p).into_iter().filter(|&t| a <= t && t <= b));
                }
            }
            local_solve(state, &cutoffs, i, opts, &keep).map_err(|e| e.in_stage(format!("local solve {i}")))
        })
        .collect::<Result<_>>()?;

    let nz = stress_nonzero(state);
    let active: Vec<usize> = (1..n)
        .filter(|&i| {
            let c = cutoffs.points[i];
            let left = !solutions[i - 1].is_zero();
            let right = solutions[i].first_nonzero.is_some_and(|t| t <= c + tb + 3.0 * solutions[i].dt);
            let (lo, hi) = node_range(&nodes, c - tb, c + tb, 2);
            left || right || nz[lo..hi].iter().any(|&x| x)
        })
        .collect();

    let windows: Vec<(f64, f64)> = active
        .iter()
        .map(|&i| (cutoffs.points[i] - 2.5 * tb, cutoffs.points[i] + 2.5 * tb))
        .collect();
    let new_intervals = IntervalSet::new(windows.clone(), tb, opts.epsilon, horizon)?;
    let mut out_nodes: Vec<f64> = nodes
        .iter()
        .copied()
        .filter(|&t| !windows.iter().any(|&(a, b)| a < t && t < b))
        .collect();
    if opts.solver_nodes {
        for sol in solutions.iter().filter(|s| !s.is_zero()) {
            out_nodes.extend(
                step_times(sol.t0, sol.t1, opts.dt).filter(|&t| !windows.iter().any(|&(a, b)| a < t && t < b)),
            );
        }
    }
    for &i in &active {
        out_nodes.extend(window(i));
    }
    let grid = TimeGrid::new(horizon, out_nodes)?;

    let assembled: Vec<[SpectralField; 5]> = grid
        .nodes()
        .par_iter()
        .map(|&t| assemble_node(state, &cutoffs, &solutions, t))
        .collect::<Result<_>>()?;
    let mut parts: [Vec<SpectralField>; 5] = Default::default();
    let mut du_hd = 0.0f64;
    let mut dth_hd = 0.0f64;
    let mut outside_clean = true;
    let d = state.shape().d() as f64;
    for (fields, &t) in assembled.into_iter().zip(grid.nodes()) {
        let [u, th, p, r, s] = fields;
        let base = state.at(t);
        let du = u.sub(&base[0])?;
        let dth = th.sub(&base[1])?;
        du_hd = du_hd.max(du.sobolev_norm(d));
        dth_hd = dth_hd.max(dth.sobolev_norm(d));
        if !state.intervals.contains(t) && (du.max_coeff() > 0.0 || dth.max_coeff() > 0.0) {
            outside_clean = false;
        }
        for (slot, f) in parts.iter_mut().zip([u, th, p, r, s]) {
            slot.push(f);
        }
    }
    let [pu, pth, pp, pr, ps] = parts;
    let out = ReynoldsQuadruple::new(
        TimeField::new(grid.clone(), pu)?,
        TimeField::new(grid.clone(), pth)?,
        TimeField::new(grid.clone(), pp)?,
        TimeField::new(grid.clone(), pr)?,
        TimeField::new(grid, ps)?,
        new_intervals.clone(),
        state.alpha,
    )?;

    let spec = MixedNormSpec::new(1.0, opts.r)?;
    let r_in = mixed_norm(&state.r, spec)?;
    let s_in = mixed_norm(&state.s, spec)?;
    let r_out = mixed_norm(&out.r, spec)?;
    let s_out = mixed_norm(&out.s, spec)?;
    let support = crate::verify::support_check_with(&out.r, &out.s, &new_intervals, 1.5 * tb);
    let (input_residual, output_residual) = if opts.check_residual {
        (Some(residual(state)?), Some(residual(&out)?))
    } else {
        (None, None)
    };
    let report = GlueReport {
        tau_bar: tb,
        epsilon: opts.epsilon,
        pieces: n,
        nonzero_pieces: solutions.iter().filter(|s| !s.is_zero()).count(),
        active_points: active,
        nested: new_intervals.is_subset_of(&state.intervals),
        endpoints_free: !new_intervals.touches_endpoints(),
        intervals: new_intervals,
        r: opts.r,
        c_r: ratio(r_out, r_in),
        c_s: ratio(s_out, s_in),
        r_norm_in: r_in,
        r_norm_out: r_out,
        s_norm_in: s_in,
        s_norm_out: s_out,
        du_hd,
        dtheta_hd: dth_hd,
        delta: opts.delta,
        within_delta: du_hd.max(dth_hd) <= opts.delta,
        perturbation_in_i: outside_clean,
        output_nodes: out.len(),
        support_pass: support.pass,
        input_residual,
        output_residual,
    };
    Ok((out, report))
}

/// Assembly at one time, where at most one `χ_j` is nonzero:
/// `ū = u + χv`, `θ̄ = θ + χφ`, `p̄ = p + χq`,
/// `R̄ = (1−χ)R + χ′R(v) + (χ²−χ)P_N(vv)`, `S̄ = (1−χ)S + χ′G(φ) + (χ²−χ)P_N(vφ)`.
fn assemble_node(
    state: &ReynoldsQuadruple,
    cutoffs: &GluingCutoffs,
    solutions: &[LocalSolution],
    t: f64,
) -> Result<[SpectralField; 5]> {
    let [u, th, p, r, s] = state.at(t);
    let j = cutoffs.piece(t);
    let chi = cutoffs.chi(j, t);
    let dchi = cutoffs.dchi(j, t);
    let sol = &solutions[j];
    if sol.is_zero() || (chi == 0.0 && dchi == 0.0) {
        let keep = 1.0 - chi;
        let (r, s) = if keep == 1.0 { (r, s) } else { (r.scale(keep), s.scale(keep)) };
        return Ok([u, th, p, r, s]);
    }
    let [v, phi] = sol.sample(t)?;
    let q = corrector_pressure(state, t, &v, &phi)?;
    let mut ub = u;
    ub.axpy(chi, &v)?;
    let mut thb = th;
    thb.axpy(chi, &phi)?;
    let mut pb = p;
    pb.axpy(chi, &q)?;
    let quad = chi * chi - chi;
    let mut rb = r.scale(1.0 - chi);
    let mut sb = s.scale(1.0 - chi);
    if dchi != 0.0 {
        rb.axpy(dchi, &antidiv_r(&v)?)?;
        sb.axpy(dchi, &antidiv_g(&phi)?)?;
    }
    if quad != 0.0 {
        rb.axpy(quad, &outer_product(&v, &v)?)?;
        sb.axpy(quad, &product(&phi, &v)?)?;
    }
    Ok([ub, thb, pb, rb.with_symmetric(true), sb])
}
