//! Perturbation step: amplitudes, the principal, corrector and temporal
//! perturbations, the error decomposition `R̃ = R_far + R_osc,x + R_osc,t +
//! R_cor + R_lin` (and its temperature counterpart), and the new pressure.
//!
//! All time derivatives are the grid's discrete `D_t`, every product is an
//! exact band projection and every antidivergence acts on a mean-free field,
//! so the new state has the same discrete residual as the input to round-off.

use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::{build_family_blocks, stress_l1, AmplitudeCutoff, PreparednessCutoff, TemporalProfile};
use crate::calculus::{
    antidiv_g, antidiv_r, bilinear_b, bilinear_btilde, div, frac_laplacian, grad, inverse_laplacian_divdiv,
    leray_project,
};
use crate::error::{Error, Result};
use crate::field::{PhysicalField, Shape, SpectralField};
use crate::geometry::DirectionFamily;
use crate::params::IterationParams;
use crate::products::{lift, lower, outer_product, product};
use crate::state::ReynoldsQuadruple;
use crate::time::{combine, joint_lq, temporal_norm, TimeField, TimeGrid};
use crate::verify::{node_residual, residual, ResidualReport, TermNorm};

/// Integer scales actually used: temporal frequency `ν`, concentration `l`,
/// oscillation `σ` and Mikado concentration `μ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ScaleChoice {
    pub nu: u64,
    pub l: u64,
    pub sigma: usize,
    pub mu: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClampReport {
    pub nominal_nu: f64,
    pub nominal_l: f64,
    pub nominal_sigma: f64,
    pub nominal_mu: f64,
    pub effective: ScaleChoice,
    pub clamped: Vec<String>,
}

/// Limits imposed by the grid and the time-node budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScaleLimits {
    pub max_nu: u64,
    pub max_l: u64,
    /// Smallest Mikado concentration worth keeping when shrinking `σ`.
    pub min_mu: u64,
}

impl Default for ScaleLimits {
    fn default() -> Self {
        ScaleLimits { max_nu: 4, max_l: 4, min_mu: 2 }
    }
}

fn max_direction_norm(family: &DirectionFamily) -> f64 {
    family
        .directions()
        .iter()
        .map(|k| (k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt())
        .fold(0.0, f64::max)
}

/// Fit nominal real scales onto the grid: `σ` a divisor of `N` and
/// `μ ≤ (N/σ)/(6 max|k|)` so every dilated block stays in the band.
pub fn clamp_scales(
    nominal: (f64, f64, f64, f64),
    shape: Shape,
    family: &DirectionFamily,
    limits: ScaleLimits,
) -> Result<(ScaleChoice, ClampReport)> {
    let (nu0, l0, s0, m0) = nominal;
    let n = shape.n();
    let kmax = max_direction_norm(family);
    let mu_cap = |sigma: usize| ((n / sigma) as f64 / (6.0 * kmax)).floor() as u64;
    let mut clamped = Vec::new();
    let nu = (nu0.round().max(1.0) as u64).min(limits.max_nu.max(1));
    if (nu as f64) < nu0.round() {
        clamped.push(format!("nu {nu0} -> {nu}"));
    }
    let l = (l0.round().max(1.0).min(u64::MAX as f64) as u64).min(limits.max_l.max(1));
    if (l as f64) < l0.round() {
        clamped.push(format!("l {l0:.4e} -> {l}"));
    }
    let want_mu = (m0.round().max(1.0).min(u64::MAX as f64) as u64).max(1);
    let floor_mu = want_mu.min(limits.min_mu.max(1));
    let sigma = (1..=n)
        .rev()
        .find(|s| n % s == 0 && (*s as f64) <= s0.max(1.0) && mu_cap(*s) >= floor_mu)
        .ok_or_else(|| Error::Band(format!("no σ dividing N = {n} leaves room for μ = {floor_mu}")))?;
    if (sigma as f64) < s0.round() {
        clamped.push(format!("sigma {s0:.4e} -> {sigma}"));
    }
    let mu = want_mu.min(mu_cap(sigma)).max(1);
    if mu < want_mu {
        clamped.push(format!("mu {m0} -> {mu}"));
    }
    if mu_cap(sigma) < 1 {
        return Err(Error::Band(format!("grid N = {n} too coarse for the direction family")));
    }
    let effective = ScaleChoice { nu, l, sigma, mu };
    Ok((
        effective,
        ClampReport { nominal_nu: nu0, nominal_l: l0, nominal_sigma: s0, nominal_mu: m0, effective, clamped },
    ))
}

pub fn clamp_params(
    params: &IterationParams,
    shape: Shape,
    family: &DirectionFamily,
    limits: ScaleLimits,
) -> Result<(ScaleChoice, ClampReport)> {
    clamp_scales((params.nu, params.l, params.sigma, params.mu), shape, family, limits)
}

// ---------------------------------------------------------------------------
// Time grid

/// Spacing required between consecutive nodes of `Ī`: `τ̄/16`, and `1/32` of a temporal bump
/// wherever a bump is active.
pub fn check_time_grid(grid: &TimeGrid, state_intervals: &crate::IntervalSet, profile: &TemporalProfile) -> Result<()> {
    let tb = state_intervals.tau;
    let dur = profile.bump_duration();
    let period = profile.period();
    for w in grid.nodes().windows(2) {
        let (a, b) = (w[0], w[1]);
        if !state_intervals.contains(a) || !state_intervals.contains(b) || !state_intervals.contains(0.5 * (a + b)) {
            continue;
        }
        let h = b - a;
        if h > tb / 16.0 * (1.0 + 1e-9) {
            return Err(Error::TimeGridTooCoarse(format!("spacing {h:.3e} at t = {a:.6} exceeds τ̄/16")));
        }
        let pa = (a / period).floor();
        let in_bump = (b - pa * period) > 0.0 && (a - pa * period) < dur || (b / period).floor() > pa;
        if in_bump && h > dur / 32.0 * (1.0 + 1e-9) {
            return Err(Error::TimeGridTooCoarse(format!("spacing {h:.3e} at t = {a:.6} exceeds bump/32")));
        }
    }
    Ok(())
}

/// Nodes of `grid` outside `Ī` plus a resolving set inside it.
pub fn perturbation_nodes(grid: &TimeGrid, intervals: &crate::IntervalSet, profile: &TemporalProfile) -> Vec<f64> {
    let tb = intervals.tau;
    let gap = tb / 16.0;
    let per_bump = ((profile.bump_duration() / gap).ceil() as usize).max(32);
    let mut nodes: Vec<f64> = grid.nodes().iter().copied().filter(|&t| !intervals.contains(t)).collect();
    for &(a, b) in &intervals.intervals {
        nodes.extend(profile.recommended_nodes(a, b, per_bump, gap));
    }
    nodes
}

/// Cubic resampling of every field onto `nodes`.
pub fn resample_state(state: &ReynoldsQuadruple, nodes: Vec<f64>) -> Result<ReynoldsQuadruple> {
    let grid = TimeGrid::new(state.horizon(), nodes)?;
    let sampled: Vec<[SpectralField; 5]> = grid.nodes().par_iter().map(|&t| state.at(t)).collect();
    let mut parts: [Vec<SpectralField>; 5] = Default::default();
    for fields in sampled {
        for (slot, f) in parts.iter_mut().zip(fields) {
            slot.push(f);
        }
    }
    let [u, th, p, r, s] = parts;
    ReynoldsQuadruple::new(
        TimeField::new(grid.clone(), u)?,
        TimeField::new(grid.clone(), th)?,
        TimeField::new(grid.clone(), p)?,
        TimeField::new(grid.clone(), r)?,
        TimeField::new(grid, s)?,
        state.intervals.clone(),
        state.alpha,
    )
}

// ---------------------------------------------------------------------------
// Blocks on the fine grid

struct DilatedBlock {
    e: Vec<f64>,
    psi: SpectralField,
    psi_grid: PhysicalField,
    omega_grid: PhysicalField,
    /// `P_{≠0} P_N(Ψ(σ·)²)`.
    psi_sq_osc: SpectralField,
    /// `P_{≠0} P_N(Ψ(σ·)²) e ⊗ e`.
    psi_sq_tensor: SpectralField,
}

fn dilated_blocks(family: &DirectionFamily, shape: Shape, sigma: usize, mu: f64) -> Result<Vec<DilatedBlock>> {
    let n = shape.n();
    if n % sigma != 0 {
        return Err(Error::Band(format!("σ = {sigma} must divide N = {n}")));
    }
    let coarse = Shape::new(shape.d(), n / sigma)?;
    let blocks = build_family_blocks(family, mu, coarse)?;
    blocks
        .iter()
        .map(|b| {
            let (psi, omega) = b.dilated(sigma, shape)?;
            let osc = product(&psi, &psi)?.nonzero_modes();
            let d = shape.d();
            let parts: Vec<SpectralField> = (0..d * d).map(|c| osc.scale(b.e[c / d] * b.e[c % d])).collect();
            Ok(DilatedBlock {
                e: b.e.clone(),
                psi_grid: lift(&psi),
                omega_grid: lift(&omega),
                psi,
                psi_sq_tensor: SpectralField::from_scalars(&parts, 2)?.with_symmetric(true),
                psi_sq_osc: osc,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Amplitudes

/// Pointwise amplitudes on the dealiasing grid at one time.
pub struct NodeAmplitudes {
    pub gf: f64,
    pub rho: PhysicalField,
    /// `a_k`, `b_k` sampled on the grid.
    pub a: Vec<PhysicalField>,
    pub b: Vec<PhysicalField>,
}

/// `ρ = ξ(|(R̄,S̄)|)`, `a_k = g f ρ^{1/2} Γ_k(Id − R̄/ρ)`,
/// `b_k = g f ρ^{1/2} γ_k(−S̄/ρ) / Γ_k(Id − R̄/ρ)`.
pub fn amplitudes(
    r: &SpectralField,
    s: &SpectralField,
    gf: f64,
    xi: &AmplitudeCutoff,
    family: &DirectionFamily,
) -> Result<NodeAmplitudes> {
    let d = r.d();
    let rg = lift(r);
    let sg = lift(s);
    let len = rg.len();
    let m = rg.m;
    let kn = family.len();
    let mut rho = PhysicalField::zeros(d, m, 0);
    let mut a: Vec<PhysicalField> = (0..kn).map(|_| PhysicalField::zeros(d, m, 0)).collect();
    let mut b: Vec<PhysicalField> = (0..kn).map(|_| PhysicalField::zeros(d, m, 0)).collect();
    let mut mat = vec![0.0; d * d];
    let mut vec_s = vec![0.0; d];
    for p in 0..len {
        let mut mag2 = 0.0;
        for c in 0..d * d {
            mat[c] = rg.comps[c][p];
            mag2 += mat[c] * mat[c];
        }
        for c in 0..d {
            vec_s[c] = sg.comps[c][p];
            mag2 += vec_s[c] * vec_s[c];
        }
        let rh = xi.eval(mag2.sqrt());
        rho.comps[0][p] = rh;
        if gf == 0.0 {
            continue;
        }
        for i in 0..d {
            for j in 0..d {
                mat[i * d + j] = if i == j { 1.0 } else { 0.0 } - mat[i * d + j] / rh;
            }
        }
        for v in vec_s.iter_mut() {
            *v = -*v / rh;
        }
        let gamma = family.gamma_coeffs(&mat)?;
        let small = family.vector_coeffs(&vec_s);
        let sr = rh.sqrt();
        for k in 0..kn {
            a[k].comps[0][p] = gf * sr * gamma[k];
            b[k].comps[0][p] = gf * sr * small[k] / gamma[k];
        }
    }
    Ok(NodeAmplitudes { gf, rho, a, b })
}

// ---------------------------------------------------------------------------
// Perturbation

#[derive(Clone, Debug)]
pub struct PerturbationParts {
    pub omega_p: SpectralField,
    pub omega_c: SpectralField,
    pub omega_t: SpectralField,
    pub kappa_p: SpectralField,
    pub kappa_t: SpectralField,
}

impl PerturbationParts {
    /// `ω = ω_p + ω_c + ω_t`.
    pub fn omega(&self) -> SpectralField {
        let mut w = self.omega_p.add(&self.omega_c).expect("same shape");
        w.axpy(1.0, &self.omega_t).expect("same shape");
        w
    }

    /// `κ = P_{≠0} κ_p + κ_t`.
    pub fn kappa(&self) -> SpectralField {
        self.kappa_p.nonzero_modes().add(&self.kappa_t).expect("same shape")
    }

    /// `W = ω_p + ω_c`.
    pub fn w(&self) -> SpectralField {
        self.omega_p.add(&self.omega_c).expect("same shape")
    }
}

struct Context<'a> {
    state: &'a ReynoldsQuadruple,
    family: &'a DirectionFamily,
    blocks: Vec<DilatedBlock>,
    profile: TemporalProfile,
    f: PreparednessCutoff,
    xi: AmplitudeCutoff,
    sigma: f64,
}

impl Context<'_> {
    fn gf(&self, t: f64) -> f64 {
        self.profile.g(t) * self.f.eval(t)
    }

    fn amps(&self, j: usize) -> Result<(NodeAmplitudes, Vec<SpectralField>, Vec<SpectralField>)> {
        let t = self.state.grid().nodes()[j];
        let shape = self.state.shape();
        let am = amplitudes(self.state.r.field(j), self.state.s.field(j), self.gf(t), &self.xi, self.family)?;
        let ab: Vec<SpectralField> = am.a.iter().map(|g| lower(g, shape)).collect();
        let bb: Vec<SpectralField> = am.b.iter().map(|g| lower(g, shape)).collect();
        Ok((am, ab, bb))
    }

    fn parts(&self, j: usize) -> Result<PerturbationParts> {
        let state = self.state;
        let t = state.grid().nodes()[j];
        let shape = state.shape();
        let d = shape.d();
        let (_, ab, bb) = self.amps(j)?;
        let m = self.blocks[0].psi_grid.m;
        let mut wp = PhysicalField::zeros(d, m, 1);
        let mut wc = PhysicalField::zeros(d, m, 1);
        let mut kp = PhysicalField::zeros(d, m, 0);
        for ((blk, a), b) in self.blocks.iter().zip(&ab).zip(&bb) {
            if a.max_coeff() == 0.0 && b.max_coeff() == 0.0 {
                continue;
            }
            let ag = lift(a);
            let bg = lift(b);
            let ga = lift(&grad(a)?);
            let psi = &blk.psi_grid.comps[0];
            for p in 0..ag.len() {
                let ap = ag.comps[0][p] * psi[p];
                for i in 0..d {
                    wp.comps[i][p] += ap * blk.e[i];
                }
                kp.comps[0][p] += bg.comps[0][p] * psi[p];
                for i in 0..d {
                    let mut acc = 0.0;
                    for jj in 0..d {
                        acc += ga.comps[jj][p] * blk.omega_grid.comps[i * d + jj][p];
                    }
                    wc.comps[i][p] += acc / self.sigma;
                }
            }
        }
        let h = self.profile.h(t) / self.profile.nu as f64;
        Ok(PerturbationParts {
            omega_p: lower(&wp, shape),
            omega_c: lower(&wc, shape),
            omega_t: leray_project(&div(state.r.field(j))?)?.scale(h),
            kappa_p: lower(&kp, shape),
            kappa_t: div(state.s.field(j))?.scale(h),
        })
    }
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Clone, Debug)]
pub struct ErrorBundle {
    pub r_far: SpectralField,
    pub r_osc_x: SpectralField,
    pub r_osc_t: SpectralField,
    pub r_cor: SpectralField,
    pub r_lin: SpectralField,
    pub s_far: SpectralField,
    pub s_osc_x: SpectralField,
    pub s_osc_t: SpectralField,
    pub s_cor: SpectralField,
    pub s_lin: SpectralField,
    pub pressure: SpectralField,
}

pub const ERROR_TERM_NAMES: [&str; 10] =
    ["R_far", "R_osc_x", "R_osc_t", "R_cor", "R_lin", "S_far", "S_osc_x", "S_osc_t", "S_cor", "S_lin"];

impl ErrorBundle {
    pub fn terms(&self) -> [&SpectralField; 10] {
        [
            &self.r_far, &self.r_osc_x, &self.r_osc_t, &self.r_cor, &self.r_lin, &self.s_far, &self.s_osc_x,
            &self.s_osc_t, &self.s_cor, &self.s_lin,
        ]
    }

    pub fn r_total(&self) -> SpectralField {
        let mut r = self.r_far.clone();
        for x in [&self.r_osc_x, &self.r_osc_t, &self.r_cor, &self.r_lin] {
            r.axpy(1.0, x).expect("same shape");
        }
        r.with_symmetric(true)
    }

    pub fn s_total(&self) -> SpectralField {
        let mut s = self.s_far.clone();
        for x in [&self.s_osc_x, &self.s_osc_t, &self.s_cor, &self.s_lin] {
            s.axpy(1.0, x).expect("same shape");
        }
        s
    }
}

fn diag_tensor(scalars: &[SpectralField], blocks: &[DilatedBlock]) -> Result<SpectralField> {
    let shape = scalars[0].shape();
    let d = shape.d();
    let mut out = SpectralField::zeros(shape, 2);
    for (s, blk) in scalars.iter().zip(blocks) {
        for i in 0..d {
            for j in 0..d {
                let w = blk.e[i] * blk.e[j];
                if w != 0.0 {
                    let c = out.comp_mut(i * d + j);
                    for (o, v) in c.iter_mut().zip(s.comp(0)) {
                        *o += v * w;
                    }
                }
            }
        }
    }
    Ok(out.with_symmetric(true))
}

fn diag_vector(scalars: &[SpectralField], blocks: &[DilatedBlock]) -> SpectralField {
    let shape = scalars[0].shape();
    let d = shape.d();
    let mut out = SpectralField::zeros(shape, 1);
    for (s, blk) in scalars.iter().zip(blocks) {
        for i in 0..d {
            let c = out.comp_mut(i);
            for (o, v) in c.iter_mut().zip(s.comp(0)) {
                *o += v * blk.e[i];
            }
        }
    }
    out
}

/// Per-node diagnostics gathered during assembly.
#[derive(Clone, Debug, Default)]
struct NodeDiagnostics {
    div_w: f64,
    grad_w: f64,
    div_wt: f64,
    kappa_mean: f64,
    oscillation: f64,
    oscillation_scale: f64,
    amplitude_ratio: f64,
}

impl Context<'_> {
    #[allow(clippy::type_complexity)]
    fn node(
        &self,
        j: usize,
        parts: &[PerturbationParts],
        quiet: &[bool],
    ) -> Result<([SpectralField; 5], ErrorBundle, NodeDiagnostics)> {
        let state = self.state;
        let grid = state.grid();
        let t = grid.nodes()[j];
        let shape = state.shape();
        let d = shape.d();
        let nu = self.profile.nu as f64;
        let here = &parts[j];
        let (start, w) = grid.derivative_stencil(j);
        if quiet[start..start + w.len()].iter().all(|&q| q) {
            return Ok(self.unchanged(j));
        }
        let (am, ab, bb) = self.amps(j)?;
        let gf2 = am.gf * am.gf;
        let (ub, thb, pb, rb, sb) =
            (state.u.field(j), state.theta.field(j), state.p.field(j), state.r.field(j), state.s.field(j));

        let big_a: Vec<SpectralField> =
            ab.iter().zip(&self.blocks).map(|(a, blk)| product(a, &blk.psi)).collect::<Result<_>>()?;
        let big_b: Vec<SpectralField> =
            bb.iter().zip(&self.blocks).map(|(b, blk)| product(b, &blk.psi)).collect::<Result<_>>()?;
        let q: Vec<SpectralField> = am
            .a
            .iter()
            .map(|g| lower(&crate::products::scalar_mul(g, g).expect("same grid"), shape))
            .collect();
        let s_k: Vec<SpectralField> = am
            .a
            .iter()
            .zip(&am.b)
            .map(|(a, b)| lower(&crate::products::scalar_mul(a, b).expect("same grid"), shape))
            .collect();
        let rho_hat = lower(&am.rho, shape);

        let omega = here.omega();
        let kappa = here.kappa();
        let wp = &here.omega_p;
        let kp = &here.kappa_p;

        // velocity
        let wpwp = outer_product(wp, wp)?;
        let a_sq: Vec<SpectralField> = big_a.iter().map(|a| product(a, a)).collect::<Result<_>>()?;
        let diag_a = diag_tensor(&a_sq, &self.blocks)?;
        let r_far = antidiv_r(&div(&wpwp.sub(&diag_a)?)?)?;
        let osc: Vec<SpectralField> = a_sq.iter().zip(&q).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
        let mut literal = SpectralField::zeros(shape, 2);
        for (qk, blk) in q.iter().zip(&self.blocks) {
            if qk.max_coeff() == 0.0 {
                continue;
            }
            literal.axpy(1.0, &bilinear_b(&grad(qk)?, &blk.psi_sq_tensor)?)?;
        }
        let closure = div(&diag_tensor(&osc, &self.blocks)?)?.sub(&div(&literal)?)?;
        let r_osc_x = literal.add(&antidiv_r(&closure)?)?;

        let idx: Vec<usize> = (start..start + w.len()).collect();
        let hr: Vec<SpectralField> = idx.iter().map(|&s| state.r.field(s).scale(self.profile.h(grid.nodes()[s]))).collect();
        let big_q = combine(&hr, &w).scale(1.0 / nu);
        let r_osc_t = big_q.sub(&rb.scale(gf2 - 1.0))?;

        let r_cor = antidiv_r(&div(&outer_product(&omega, &omega)?.sub(&wpwp)?)?)?;

        let ws: Vec<SpectralField> = idx.iter().map(|&s| parts[s].w()).collect();
        let mut lin = combine(&ws, &w);
        lin.axpy(1.0, &frac_laplacian(&omega, state.alpha))?;
        let uo = outer_product(ub, &omega)?;
        lin.axpy(1.0, &div(&uo.add(&uo.transpose()?)?)?)?;
        for (a, b) in lin.comp_mut(d - 1).iter_mut().zip(kappa.comp(0)) {
            *a -= b;
        }
        let r_lin = antidiv_r(&lin)?;

        // temperature
        let wpkp = product(kp, wp)?;
        let ab_k: Vec<SpectralField> = big_a.iter().zip(&big_b).map(|(a, b)| product(a, b)).collect::<Result<_>>()?;
        let s_far = wpkp.sub(&diag_vector(&ab_k, &self.blocks))?;
        let osc_s: Vec<SpectralField> = ab_k.iter().zip(&s_k).map(|(a, b)| a.sub(b)).collect::<Result<_>>()?;
        let mut literal_s = SpectralField::zeros(shape, 1);
        for (sk, blk) in s_k.iter().zip(&self.blocks) {
            if sk.max_coeff() == 0.0 {
                continue;
            }
            let gs = grad(sk)?;
            let mut along = SpectralField::zeros(shape, 0);
            for i in 0..d {
                along.axpy(blk.e[i], &gs.component(i))?;
            }
            literal_s.axpy(1.0, &bilinear_btilde(&along, &blk.psi_sq_osc)?)?;
        }
        let closure_s = div(&diag_vector(&osc_s, &self.blocks))?.sub(&div(&literal_s)?)?;
        let s_osc_x = literal_s.add(&antidiv_g(&closure_s)?)?;

        let hs: Vec<SpectralField> = idx.iter().map(|&s| state.s.field(s).scale(self.profile.h(grid.nodes()[s]))).collect();
        let big_qs = combine(&hs, &w).scale(1.0 / nu);
        let s_osc_t = big_qs.sub(&sb.scale(gf2 - 1.0))?;

        let s_cor = antidiv_g(&div(&product(&kappa, &omega)?.sub(&wpkp)?)?)?;

        let kps: Vec<SpectralField> = idx.iter().map(|&s| parts[s].kappa_p.nonzero_modes()).collect();
        let mut lin_s = combine(&kps, &w);
        lin_s.axpy(1.0, &frac_laplacian(&kappa, state.alpha))?;
        let mut flux = product(&kappa, ub)?;
        flux.axpy(1.0, &product(thb, &omega)?)?;
        lin_s.axpy(1.0, &div(&flux)?)?;
        let s_lin = antidiv_g(&lin_s)?;

        // pressure: p̃ = p̄ − g²f²ρ̂ + Δ^{-1} div div Q
        let mut pressure = pb.sub(&rho_hat.scale(gf2))?;
        pressure.axpy(1.0, &inverse_laplacian_divdiv(&big_q)?)?;

        // oscillation identity: div(P_N(ω_pω_p) + R̄) + D_tω_t + ∇(p̃ − p̄) − div(R_far + R_osc,t + R_osc,x)
        let wts: Vec<SpectralField> = idx.iter().map(|&s| parts[s].omega_t.clone()).collect();
        let dwt = combine(&wts, &w);
        let terms = [div(&wpwp)?, div(rb)?, dwt, grad(&pressure.sub(pb)?)?];
        let mut ident = terms[0].add(&terms[1])?;
        ident.axpy(1.0, &terms[2])?;
        ident.axpy(1.0, &terms[3])?;
        let stress_part = r_far.add(&r_osc_t)?.add(&r_osc_x)?;
        ident.axpy(-1.0, &div(&stress_part)?)?;
        let osc_scale = terms.iter().map(|f| f.l2_norm()).fold(0.0, f64::max);

        let wsum = here.w();
        let rho_int = am.rho.comps[0].iter().sum::<f64>() / am.rho.len() as f64;
        let amp_l2 = am
            .a
            .iter()
            .chain(&am.b)
            .map(|g| g.comps[0].iter().map(|v| v * v).sum::<f64>() / g.len() as f64)
            .sum::<f64>()
            .sqrt();
        let g = self.profile.g(t);
        let diag = NodeDiagnostics {
            div_w: div(&wsum)?.l2_norm(),
            grad_w: grad(&wsum)?.l2_norm(),
            div_wt: div(&here.omega_t)?.l2_norm(),
            kappa_mean: kappa.mean()[0].abs(),
            oscillation: ident.l2_norm(),
            oscillation_scale: osc_scale,
            amplitude_ratio: if g > 0.0 && rho_int > 0.0 { amp_l2 / (g * rho_int.sqrt()) } else { 0.0 },
        };

        let bundle = ErrorBundle {
            r_far: r_far.with_symmetric(true),
            r_osc_x: r_osc_x.with_symmetric(true),
            r_osc_t: r_osc_t.with_symmetric(true),
            r_cor: r_cor.with_symmetric(true),
            r_lin: r_lin.with_symmetric(true),
            s_far,
            s_osc_x,
            s_osc_t,
            s_cor,
            s_lin,
            pressure,
        };
        let fields = [
            ub.add(&omega)?,
            thb.add(&kappa)?,
            bundle.pressure.clone(),
            bundle.r_total(),
            bundle.s_total(),
        ];
        Ok((fields, bundle, diag))
    }
}

impl Context<'_> {
    /// Output at a node whose whole stencil carries neither stress nor
    /// perturbation: every error term vanishes and the fields are kept.
    fn unchanged(&self, j: usize) -> ([SpectralField; 5], ErrorBundle, NodeDiagnostics) {
        let st = self.state;
        let shape = st.shape();
        let zr = SpectralField::zeros(shape, 2).with_symmetric(true);
        let zs = SpectralField::zeros(shape, 1);
        let bundle = ErrorBundle {
            r_far: zr.clone(),
            r_osc_x: zr.clone(),
            r_osc_t: zr.clone(),
            r_cor: zr.clone(),
            r_lin: zr.clone(),
            s_far: zs.clone(),
            s_osc_x: zs.clone(),
            s_osc_t: zs.clone(),
            s_cor: zs.clone(),
            s_lin: zs,
            pressure: st.p.field(j).clone(),
        };
        let fields = [
            st.u.field(j).clone(),
            st.theta.field(j).clone(),
            st.p.field(j).clone(),
            st.r.field(j).clone(),
            st.s.field(j).clone(),
        ];
        (fields, bundle, NodeDiagnostics::default())
    }
}

// ---------------------------------------------------------------------------
// Driver

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PerturbConfig {
    pub scales: ScaleChoice,
    /// Floor `ρ_min` of the amplitude cutoff.
    pub rho_floor: f64,
    /// Exponents of the norm report: `L¹L^r` for stresses, `L^pL^∞` and
    /// `L^{2α/(2α−1)}L^q` for the perturbation.
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub check_grid: bool,
    pub check_residual: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbReport {
    pub short_circuit: bool,
    pub scales: ScaleChoice,
    pub stress_l1: f64,
    pub amplitude_level: f64,
    pub nodes: usize,
    /// `L¹L^r` norm of each error term.
    pub error_terms: Vec<TermNorm>,
    pub stress_in: f64,
    pub stress_out: f64,
    pub perturbation_l2: f64,
    pub perturbation_lp_linf: f64,
    /// `L^{2α/(2α−1)}_T L^q_x` (only for `α > 1`).
    pub perturbation_critical: Option<f64>,
    /// `‖(ω,κ)‖_{L²} / ‖(R̄,S̄)‖_{L¹}` and the same against `‖(R̄,S̄)‖_{L¹}^{1/2}`.
    pub m_linear: f64,
    pub m_sqrt: f64,
    /// `max_t ‖div(ω_p + ω_c)‖ / ‖∇(ω_p + ω_c)‖`.
    pub div_w: f64,
    pub div_wt: f64,
    pub kappa_mean: f64,
    /// `ω = κ = 0` at nodes outside `Ī`.
    pub support_in_intervals: bool,
    /// Relative defect of the oscillation cancellation identity.
    pub oscillation_identity: f64,
    /// Measured `max_t ‖(a_k, b_k)(t)‖_{L²} / (g(νt)(∫ρ)^{1/2})`.
    pub amplitude_constant: f64,
    pub input_residual: Option<ResidualReport>,
    pub output_residual: Option<ResidualReport>,
    /// `max_t ‖Res(out) − Res(in)‖ / max_t (largest term of the output residual)`:
    /// the perturbation leaves the discrete residual of every node unchanged.
    pub residual_defect: Option<f64>,
}

fn stress_norms(state: &ReynoldsQuadruple, r: f64) -> Result<f64> {
    crate::time::joint_mixed_norm(&[&state.r, &state.s], crate::time::MixedNormSpec::new(1.0, r)?)
}

/// Add the perturbation `(ω, κ)` to a state well prepared for `(Ī, τ̄)`.
pub fn perturb(
    state: &ReynoldsQuadruple,
    family: &DirectionFamily,
    cfg: &PerturbConfig,
) -> Result<(ReynoldsQuadruple, PerturbReport)> {
    let shape = state.shape();
    if family.d() != shape.d() {
        return Err(Error::ShapeMismatch);
    }
    let ScaleChoice { nu, l, sigma, mu } = cfg.scales;
    let l1 = stress_l1(&state.r, &state.s)?;
    let stress_in = stress_norms(state, cfg.r)?;
    let mut report = PerturbReport {
        short_circuit: false,
        scales: cfg.scales,
        stress_l1: l1,
        amplitude_level: 0.0,
        nodes: state.len(),
        error_terms: vec![],
        stress_in,
        stress_out: stress_in,
        perturbation_l2: 0.0,
        perturbation_lp_linf: 0.0,
        perturbation_critical: None,
        m_linear: 0.0,
        m_sqrt: 0.0,
        div_w: 0.0,
        div_wt: 0.0,
        kappa_mean: 0.0,
        support_in_intervals: true,
        oscillation_identity: 0.0,
        amplitude_constant: 0.0,
        input_residual: None,
        output_residual: None,
        residual_defect: None,
    };
    if l1 == 0.0 {
        report.short_circuit = true;
        return Ok((state.clone(), report));
    }
    let profile = TemporalProfile::new(l, nu, state.horizon())?;
    if cfg.check_grid {
        check_time_grid(state.grid(), &state.intervals, &profile)?;
    }
    let xi = AmplitudeCutoff::new(l1, family.r0(), cfg.rho_floor);
    report.amplitude_level = xi.level;
    let ctx = Context {
        state,
        family,
        blocks: dilated_blocks(family, shape, sigma, mu as f64).map_err(|e| e.in_stage("mikado blocks"))?,
        profile,
        f: PreparednessCutoff { intervals: state.intervals.clone(), tau_bar: state.intervals.tau },
        xi,
        sigma: sigma as f64,
    };
    let n = state.len();
    let parts: Vec<PerturbationParts> =
        (0..n).into_par_iter().map(|j| ctx.parts(j)).collect::<Result<_>>().map_err(|e| e.in_stage("perturbation"))?;
    let quiet: Vec<bool> = (0..n)
        .map(|j| {
            let p = &parts[j];
            state.r.field(j).max_coeff() == 0.0
                && state.s.field(j).max_coeff() == 0.0
                && [&p.omega_p, &p.omega_c, &p.omega_t, &p.kappa_p, &p.kappa_t].iter().all(|f| f.max_coeff() == 0.0)
        })
        .collect();
    let assembled: Vec<([SpectralField; 5], ErrorBundle, NodeDiagnostics)> =
        (0..n).into_par_iter().map(|j| ctx.node(j, &parts, &quiet)).collect::<Result<_>>().map_err(|e| e.in_stage("errors"))?;

    let weights = state.grid().weights();
    let mut per_term: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 10];
    let mut fields: [Vec<SpectralField>; 5] = Default::default();
    let (mut l2v, mut linf, mut crit) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (j, (out, bundle, diag)) in assembled.into_iter().enumerate() {
        for (k, term) in bundle.terms().iter().enumerate() {
            per_term[k].push(term.lq_norm(cfg.r)?);
        }
        let omega = parts[j].omega();
        let kappa = parts[j].kappa();
        l2v.push(joint_lq(&[&omega, &kappa], 2.0)?);
        linf.push(joint_lq(&[&omega, &kappa], f64::INFINITY)?);
        if state.alpha > 1.0 {
            crit.push(joint_lq(&[&omega, &kappa], cfg.q)?);
        }
        let t = state.grid().nodes()[j];
        if !state.intervals.contains(t) && (omega.max_coeff() > 0.0 || kappa.max_coeff() > 0.0) {
            report.support_in_intervals = false;
        }
        if diag.grad_w > 0.0 {
            report.div_w = report.div_w.max(diag.div_w / diag.grad_w);
        }
        report.div_wt = report.div_wt.max(diag.div_wt);
        report.kappa_mean = report.kappa_mean.max(diag.kappa_mean);
        if diag.oscillation_scale > 0.0 {
            report.oscillation_identity = report.oscillation_identity.max(diag.oscillation / diag.oscillation_scale);
        }
        report.amplitude_constant = report.amplitude_constant.max(diag.amplitude_ratio);
        for (slot, f) in fields.iter_mut().zip(out) {
            slot.push(f);
        }
    }
    report.error_terms = ERROR_TERM_NAMES
        .iter()
        .zip(&per_term)
        .map(|(name, v)| Ok(TermNorm { name: name.to_string(), l2: temporal_norm(v, weights, 1.0)? }))
        .collect::<Result<_>>()?;
    report.perturbation_l2 = temporal_norm(&l2v, weights, 2.0)?;
    report.perturbation_lp_linf = temporal_norm(&linf, weights, cfg.p)?;
    report.m_linear = report.perturbation_l2 / l1;
    report.m_sqrt = report.perturbation_l2 / l1.sqrt();
    if state.alpha > 1.0 {
        let e = 2.0 * state.alpha / (2.0 * state.alpha - 1.0);
        report.perturbation_critical = Some(temporal_norm(&crit, weights, e)?);
    }
    let grid = state.grid().clone();
    let [u, th, p, r, s] = fields;
    let out = ReynoldsQuadruple::new(
        TimeField::new(grid.clone(), u)?,
        TimeField::new(grid.clone(), th)?,
        TimeField::new(grid.clone(), p)?,
        TimeField::new(grid.clone(), r)?,
        TimeField::new(grid, s)?,
        state.intervals.clone(),
        state.alpha,
    )?;
    report.stress_out = stress_norms(&out, cfg.r)?;
    if cfg.check_residual {
        report.input_residual = Some(residual(state)?);
        report.output_residual = Some(residual(&out)?);
        let per_node: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|j| {
                let (mi, ti, _) = node_residual(state, j)?;
                let (mo, to, norms) = node_residual(&out, j)?;
                let gap = mo.sub(&mi)?.l2_norm().max(to.sub(&ti)?.l2_norm());
                Ok((gap, norms.iter().copied().fold(0.0, f64::max)))
            })
            .collect::<Result<_>>()?;
        let gap = per_node.iter().map(|p| p.0).fold(0.0, f64::max);
        let scale = per_node.iter().map(|p| p.1).fold(0.0, f64::max);
        report.residual_defect = Some(if scale > 0.0 { gap / scale } else { gap });
    }
    Ok((out, report))
}
