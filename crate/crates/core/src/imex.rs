//! Exponential time differencing (second-order Runge–Kutta) for
//! `∂_t y = −(−Δ)^α y + F(t, y)`.
//!
//! Per mode, with `L = |2πn|^{2α}`, `E = e^{−L dt}`, `φ₁(z) = (e^z − 1)/z`
//! and `φ₂(z) = (e^z − 1 − z)/z²` at `z = −L dt`:
//! `a = E y + dt φ₁ F(t, y)`, `y⁺ = a + dt φ₂ (F(t + dt, a) − F(t, y))`.
//! The linear part is exact and time-independent forcing is integrated
//! exactly, so stiff forced modes relax to the right quasi-static state.

use crate::calculus::frac_symbol;
use crate::error::{Error, Result};
use crate::field::SpectralField;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImexOptions {
    pub dt: f64,
    pub steps: usize,
    /// Abort when the norm grows by more than this factor in one step
    /// (relative to `1 + running maximum`).
    pub growth_factor: f64,
}

impl ImexOptions {
    pub fn new(dt: f64, steps: usize) -> Self {
        ImexOptions { dt, steps, growth_factor: 1e3 }
    }
}

fn total_norm(y: &[SpectralField]) -> f64 {
    y.iter().map(|f| f.l2_norm().powi(2)).sum::<f64>().sqrt()
}

fn apply_factor(y: &mut SpectralField, factor: &[f64]) {
    for c in 0..y.ncomp() {
        for (v, e) in y.comp_mut(c).iter_mut().zip(factor) {
            *v *= *e;
        }
    }
}

pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-2 {
        0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Evolve `state` from `t0`; `observe(step, t, y)` sees the initial state and
/// every completed step.
pub fn imex_evolve<F, O>(
    state: &[SpectralField],
    t0: f64,
    alpha: f64,
    mut rhs: F,
    opts: ImexOptions,
    mut observe: O,
) -> Result<Vec<SpectralField>>
where
    F: FnMut(f64, &[SpectralField]) -> Result<Vec<SpectralField>>,
    O: FnMut(usize, f64, &[SpectralField]),
{
    let mut y: Vec<SpectralField> = state.to_vec();
    observe(0, t0, &y);
    if opts.steps == 0 {
        return Ok(y);
    }
    let shape = y.first().ok_or(Error::EmptyGrid)?.shape();
    let symbol = frac_symbol(shape, alpha);
    let factor: Vec<f64> = symbol.iter().map(|s| (-s * opts.dt).exp()).collect();
    let w1: Vec<f64> = symbol.iter().map(|s| opts.dt * phi1(-s * opts.dt)).collect();
    let w2: Vec<f64> = symbol.iter().map(|s| opts.dt * phi2(-s * opts.dt)).collect();
    let mut running = total_norm(&y);
    for step in 0..opts.steps {
        let t = t0 + opts.dt * step as f64;
        let f0 = rhs(t, &y)?;
        let mut pred = y.clone();
        for (p, f) in pred.iter_mut().zip(&f0) {
            apply_factor(p, &factor);
            let mut g = f.clone();
            apply_factor(&mut g, &w1);
            p.axpy(1.0, &g)?;
        }
        let f1 = rhs(t + opts.dt, &pred)?;
        for ((yi, mut p), (a, b)) in y.iter_mut().zip(pred).zip(f0.iter().zip(&f1)) {
            let mut g = b.sub(a)?;
            apply_factor(&mut g, &w2);
            p.axpy(1.0, &g)?;
            *yi = p;
        }
        let norm = total_norm(&y);
        let limit = opts.growth_factor * (1.0 + running);
        if !norm.is_finite() || norm > limit {
            return Err(Error::BlowUp { t: t + opts.dt, norm, limit });
        }
        running = running.max(norm);
        observe(step + 1, t + opts.dt, &y);
    }
    Ok(y)
}
