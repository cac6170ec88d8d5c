//! Manufactured states: velocity and temperature fields closed into exact
//! solutions of the relaxed system by defining `(p, R, S)` from the defect,
//! plus the linear heat flow used by the energy monitor checks.

use rand_chacha::ChaCha8Rng;

use crate::blocks::bump;
use crate::calculus::{antidiv_g, antidiv_r, div, frac_laplacian, frac_symbol, inverse_laplacian, leray_project};
use crate::error::{Error, Result};
use crate::field::{Complex64, PhysicalField, Shape, SpectralField};
use crate::intervals::IntervalSet;
use crate::products::{outer_product, product};
use crate::state::ReynoldsQuadruple;
use crate::time::{TimeField, TimeGrid};
use crate::verify::random_field;

/// Close `(u, θ)` into a state with zero discrete residual:
/// `p = −Δ^{-1}div M`, `R = R(P_H M)`, `S = G(M_θ)` where
/// `M = D_t u + div P_N(uu) + Λu − θe_d` and `M_θ = D_t θ + div P_N(uθ) + Λθ`.
pub fn complete_state(u: TimeField, theta: TimeField, alpha: f64, intervals: IntervalSet) -> Result<ReynoldsQuadruple> {
    if u.grid() != theta.grid() {
        return Err(Error::GridMismatch);
    }
    let d = u.shape().d();
    let n = u.len();
    let mut p = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for j in 0..n {
        let uj = u.field(j);
        let tj = theta.field(j);
        let mut m = u.derivative(j);
        m.axpy(1.0, &div(&outer_product(uj, uj)?)?)?;
        m.axpy(1.0, &frac_laplacian(uj, alpha))?;
        for (a, b) in m.comp_mut(d - 1).iter_mut().zip(tj.comp(0)) {
            *a -= b;
        }
        let mut mt = theta.derivative(j);
        mt.axpy(1.0, &div(&product(tj, uj)?)?)?;
        mt.axpy(1.0, &frac_laplacian(tj, alpha))?;
        p.push(inverse_laplacian(&div(&m)?).scale(-1.0));
        r.push(antidiv_r(&leray_project(&m)?)?);
        s.push(antidiv_g(&mt)?);
    }
    let grid = u.grid().clone();
    ReynoldsQuadruple::new(
        u,
        theta,
        TimeField::new(grid.clone(), p)?,
        TimeField::new(grid.clone(), r)?,
        TimeField::new(grid, s)?,
        intervals,
        alpha,
    )
}

/// Parameters of a manufactured state `u = a_u b(t) U(x)`, `θ = a_θ b(t) c(t) Θ(x)`
/// with `b` a unit-peak bump on `support` and `c(t) = 1 + sin(2π(t−a)/(b−a))/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManufacturedSpec {
    pub support: (f64, f64),
    pub amp_u: f64,
    pub amp_theta: f64,
    /// Largest mode index of the random spatial profiles.
    pub kmax: i64,
    pub alpha: f64,
}

pub fn temporal_envelope(support: (f64, f64), t: f64) -> f64 {
    let (a, b) = support;
    bump((t - a) / (b - a)) / bump(0.5)
}

/// Divergence-free, mean-free random velocity with unit `L²` norm.
pub fn random_velocity(shape: Shape, kmax: i64, rng: &mut ChaCha8Rng) -> Result<SpectralField> {
    let mut v = leray_project(&random_field(shape, 1, kmax, rng))?;
    for c in 0..v.ncomp() {
        v.comp_mut(c)[0] = Complex64::default();
    }
    let norm = v.l2_norm();
    if norm == 0.0 {
        return Err(Error::Precondition("random velocity vanished".into()));
    }
    Ok(v.scale(1.0 / norm))
}

/// Mean-free random scalar with unit `L²` norm.
pub fn random_scalar(shape: Shape, kmax: i64, rng: &mut ChaCha8Rng) -> Result<SpectralField> {
    let mut f = random_field(shape, 0, kmax, rng);
    f.comp_mut(0)[0] = Complex64::default();
    let norm = f.l2_norm();
    if norm == 0.0 {
        return Err(Error::Precondition("random scalar vanished".into()));
    }
    Ok(f.scale(1.0 / norm))
}

pub fn manufactured_state(
    shape: Shape,
    grid: TimeGrid,
    spec: &ManufacturedSpec,
    intervals: IntervalSet,
    rng: &mut ChaCha8Rng,
) -> Result<ReynoldsQuadruple> {
    let uu = random_velocity(shape, spec.kmax, rng)?;
    let tt = random_scalar(shape, spec.kmax, rng)?;
    manufactured_from(&uu, &tt, grid, spec, intervals)
}

/// Manufactured state with given spatial profiles `U`, `Θ`.
pub fn manufactured_from(
    uu: &SpectralField,
    tt: &SpectralField,
    grid: TimeGrid,
    spec: &ManufacturedSpec,
    intervals: IntervalSet,
) -> Result<ReynoldsQuadruple> {
    let (a, b) = spec.support;
    let u = TimeField::from_fn(grid.clone(), |t| uu.scale(spec.amp_u * temporal_envelope(spec.support, t)))?;
    let theta = TimeField::from_fn(grid, |t| {
        let c = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * (t - a) / (b - a)).sin();
        tt.scale(spec.amp_theta * temporal_envelope(spec.support, t) * c)
    })?;
    complete_state(u, theta, spec.alpha, intervals)
}

/// Unit-`L²` Taylor–Green velocity `(sin x₁ cos x₂, −cos x₁ sin x₂, 0…)·Π_{i>2} cos x_i`
/// and scalar `Π cos x_i`, with `x_i = 2π` times the coordinate.
pub fn taylor_green(shape: Shape) -> Result<(SpectralField, SpectralField)> {
    let (d, n) = (shape.d(), shape.n());
    let tp = 2.0 * std::f64::consts::PI;
    let mut vel = PhysicalField::zeros(d, n, 1);
    let mut sca = PhysicalField::zeros(d, n, 0);
    for idx in 0..shape.grid_len() {
        let mut rest = idx;
        let mut x = vec![0.0; d];
        for a in (0..d).rev() {
            x[a] = tp * (rest % n) as f64 / n as f64;
            rest /= n;
        }
        let tail: f64 = x[2..].iter().map(|v| v.cos()).product();
        vel.comps[0][idx] = x[0].sin() * x[1].cos() * tail;
        vel.comps[1][idx] = -x[0].cos() * x[1].sin() * tail;
        sca.comps[0][idx] = x.iter().map(|v| v.cos()).product();
    }
    let u = SpectralField::from_physical(&vel, shape)?;
    let th = SpectralField::from_physical(&sca, shape)?;
    let (nu, nt) = (u.l2_norm(), th.l2_norm());
    Ok((u.scale(1.0 / nu), th.scale(1.0 / nt)))
}

/// Exact linear heat flow `θ(t) = e^{−t(−Δ)^α}θ₀` with `u = 0`.
pub fn heat_flow(theta0: &SpectralField, alpha: f64, grid: TimeGrid) -> Result<(TimeField, TimeField)> {
    theta0.expect_rank(0)?;
    let shape = theta0.shape();
    let symbol = frac_symbol(shape, alpha);
    let theta = TimeField::from_fn(grid.clone(), |t| {
        let mut f = theta0.clone();
        for (v, s) in f.comp_mut(0).iter_mut().zip(&symbol) {
            *v *= (-s * t).exp();
        }
        f
    })?;
    let u = TimeField::zeros(grid, &SpectralField::zeros(shape, 1));
    Ok((u, theta))
}

/// Uniform spacing `coarse` on `[0, T]`, refined to `fine` on each `(a, b, fine)`.
pub fn graded_nodes(horizon: f64, coarse: f64, refinements: &[(f64, f64, f64)]) -> Vec<f64> {
    fn push_uniform(a: f64, b: f64, h: f64, out: &mut Vec<f64>) {
        let m = ((b - a) / h * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        out.extend((0..=m).map(|j| if j == m { b } else { a + (b - a) * j as f64 / m as f64 }));
    }
    let mut nodes = Vec::new();
    push_uniform(0.0, horizon, coarse, &mut nodes);
    for &(a, b, h) in refinements {
        let (a, b) = (a.max(0.0), b.min(horizon));
        nodes.retain(|&t| t < a || t > b);
        push_uniform(a, b, h, &mut nodes);
    }
    nodes.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    nodes
}
