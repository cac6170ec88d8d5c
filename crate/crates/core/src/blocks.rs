//! Building blocks: concentrated Mikado flows, the intermittent temporal
//! profile `g_l`, its corrector `h_l`, and the smooth cutoffs used by the
//! gluing and perturbation steps.

use std::f64::consts::PI;

use rustfft::FftPlanner;

use crate::calculus::{grad, inverse_laplacian};
use crate::error::{Error, Result};
use crate::field::{Complex64, Shape, SpectralField};
use crate::geometry::DirectionFamily;
use crate::intervals::IntervalSet;
use crate::time::{joint_mixed_norm, MixedNormSpec, TimeField};

/// Standard bump `exp(−1/(y(1−y)))` on `(0, 1)`.
pub fn bump(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        0.0
    } else {
        (-1.0 / (y * (1.0 - y))).exp()
    }
}

/// Derivative of [`bump`].
pub fn bump_deriv(y: f64) -> f64 {
    if y <= 0.0 || y >= 1.0 {
        return 0.0;
    }
    let u = y * (1.0 - y);
    bump(y) * (1.0 - 2.0 * y) / (u * u)
}

/// Smooth step: 0 for `x ≤ 0`, 1 for `x ≥ 1`, `C^∞` in between.
pub fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

pub fn smoothstep_deriv(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    let da = a / (x * x);
    let db = -b / ((1.0 - x) * (1.0 - x));
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

// ---------------------------------------------------------------------------
// Mikado flows

#[derive(Clone, Debug)]
pub struct MikadoBlock {
    pub k: Vec<i64>,
    pub e: Vec<f64>,
    pub mu: f64,
    /// Scalar profile `Ψ`, mean-free, unit `L²` norm, constant along `e`.
    pub psi: SpectralField,
    /// `Φ = Δ^{-1} Ψ`.
    pub phi: SpectralField,
    /// `Ω = e ⊗ ∇Φ − ∇Φ ⊗ e`, so `div Ω = Ψ e`.
    pub omega: SpectralField,
}

/// Integer basis of the lattice `{n ∈ Z^d : n·k = 0}`.
pub fn transverse_basis(k: &[i64]) -> Result<Vec<Vec<i64>>> {
    let g = k.iter().fold(0i64, |a, &b| gcd(a, b.abs()));
    if g != 1 {
        return Err(Error::Precondition(format!("direction {k:?} is not primitive")));
    }
    match k.len() {
        2 => Ok(vec![vec![-k[1], k[0]]]),
        3 => {
            let k2: i64 = k.iter().map(|v| v * v).sum();
            let r = 3i64;
            let mut cands: Vec<Vec<i64>> = Vec::new();
            for a in -r..=r {
                for b in -r..=r {
                    for c in -r..=r {
                        let v = vec![a, b, c];
                        if (a, b, c) != (0, 0, 0) && a * k[0] + b * k[1] + c * k[2] == 0 {
                            cands.push(v);
                        }
                    }
                }
            }
            cands.sort_by_key(|v| (v.iter().map(|x| x * x).sum::<i64>(), v.clone()));
            for (i, b1) in cands.iter().enumerate() {
                for b2 in &cands[i + 1..] {
                    let cr = [
                        b1[1] * b2[2] - b1[2] * b2[1],
                        b1[2] * b2[0] - b1[0] * b2[2],
                        b1[0] * b2[1] - b1[1] * b2[0],
                    ];
                    if cr.iter().map(|x| x * x).sum::<i64>() == k2 {
                        return Ok(vec![b1.clone(), b2.clone()]);
                    }
                }
            }
            Err(Error::Precondition(format!("no small transverse basis for {k:?}")))
        }
        d => Err(Error::Precondition(format!("dimension {d} not supported"))),
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Fourier coefficients `c_m`, `|m| ≤ mmax`, of the 1-periodic bump of
/// width `1/μ` centred at 0.
fn bump_coefficients(mu: f64, mmax: usize) -> Vec<f64> {
    let len = (4096.0 * mu.max(1.0)).max(8.0 * mmax as f64).log2().ceil().exp2() as usize;
    let mut buf: Vec<Complex64> = (0..len)
        .map(|p| {
            let mut s = p as f64 / len as f64;
            if s > 0.5 {
                s -= 1.0;
            }
            Complex64::new(bump(mu * s + 0.5), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    (0..=mmax).map(|m| buf[m].re / len as f64).collect()
}

/// Concentrated Mikado block for direction `k` with concentration `μ`.
pub fn build_mikado(k: &[i64], mu: f64, shape: Shape) -> Result<MikadoBlock> {
    let d = shape.d();
    if k.len() != d {
        return Err(Error::Precondition("direction has wrong dimension".into()));
    }
    if !(mu >= 1.0) {
        return Err(Error::Precondition(format!("concentration {mu} must be at least 1")));
    }
    let knorm = (k.iter().map(|v| (v * v) as f64).sum::<f64>()).sqrt();
    if 2.0 * mu * knorm > shape.n() as f64 / 3.0 {
        return Err(Error::Precondition(format!(
            "resolution {} too coarse for μ = {mu}, |k| = {knorm:.3}",
            shape.n()
        )));
    }
    let basis = transverse_basis(k)?;
    let kmax = shape.kmax();
    let mmax = 2 * kmax as usize;
    let c = bump_coefficients(mu, mmax);
    let coef = |m: i64| c[m.unsigned_abs() as usize];
    let mut psi = SpectralField::zeros(shape, 0);
    let range = -(mmax as i64)..=(mmax as i64);
    let mut place = |n: [i64; 3], v: f64| {
        if shape.in_band(&n) && n != [0, 0, 0] {
            psi.set_coeff(0, &n[..d], Complex64::new(v, 0.0)).expect("in band");
        }
    };
    if d == 2 {
        for m in range {
            let n = [m * basis[0][0], m * basis[0][1], 0];
            place(n, coef(m));
        }
    } else {
        for m1 in range.clone() {
            for m2 in range.clone() {
                let mut n = [0i64; 3];
                for a in 0..3 {
                    n[a] = m1 * basis[0][a] + m2 * basis[1][a];
                }
                place(n, coef(m1) * coef(m2));
            }
        }
    }
    let norm = psi.l2_norm();
    if !(norm > 0.0) {
        return Err(Error::Precondition("Mikado profile vanished after truncation".into()));
    }
    psi.scale_in_place(1.0 / norm);
    let e: Vec<f64> = k.iter().map(|&v| v as f64 / knorm).collect();
    let phi = inverse_laplacian(&psi);
    let gphi = grad(&phi)?;
    let mut omega = SpectralField::zeros(shape, 2);
    for i in 0..d {
        for j in 0..d {
            let mut comp = gphi.comp(j).to_vec();
            for (v, w) in comp.iter_mut().zip(gphi.comp(i)) {
                *v = *v * e[i] - w * e[j];
            }
            omega.comp_mut(i * d + j).copy_from_slice(&comp);
        }
    }
    Ok(MikadoBlock { k: k.to_vec(), e, mu, psi, phi, omega })
}

impl MikadoBlock {
    /// `W = Ψ e`.
    pub fn velocity(&self) -> SpectralField {
        let parts: Vec<SpectralField> = self.e.iter().map(|&a| self.psi.scale(a)).collect();
        SpectralField::from_scalars(&parts, 1).expect("scalar parts share a shape")
    }

    /// `(Ψ(σ·), Ω(σ·))` on the grid `target`.
    pub fn dilated(&self, sigma: usize, target: Shape) -> Result<(SpectralField, SpectralField)> {
        Ok((self.psi.dilate(sigma, target)?, self.omega.dilate(sigma, target)?))
    }
}

/// One block per direction of `family`.
pub fn build_family_blocks(family: &DirectionFamily, mu: f64, shape: Shape) -> Result<Vec<MikadoBlock>> {
    family.directions().iter().map(|k| build_mikado(k, mu, shape)).collect()
}

// ---------------------------------------------------------------------------
// Temporal profile

const TABLE_PANELS: usize = 512;

#[derive(Clone, Debug)]
pub struct TemporalProfile {
    pub l: u64,
    pub nu: u64,
    pub horizon: f64,
    /// Normalization of `g = c·bump(t/T)` so that `∫₀ᵀ g² = T`.
    norm: f64,
    /// Cumulative `∫₀^{x} bump²` at panel edges `x = j / TABLE_PANELS`.
    table: Vec<f64>,
    gl: (Vec<f64>, Vec<f64>),
}

impl TemporalProfile {
    pub fn new(l: u64, nu: u64, horizon: f64) -> Result<Self> {
        if l < 1 || nu < 1 {
            return Err(Error::Precondition(format!("l = {l}, ν = {nu} must be at least 1")));
        }
        if !(horizon > 0.0) {
            return Err(Error::NonPositive(horizon));
        }
        let gl = gauss_legendre(10);
        let mut table = vec![0.0; TABLE_PANELS + 1];
        for j in 0..TABLE_PANELS {
            let a = j as f64 / TABLE_PANELS as f64;
            let b = (j + 1) as f64 / TABLE_PANELS as f64;
            table[j + 1] = table[j] + panel(&gl, a, b);
        }
        let norm = 1.0 / table[TABLE_PANELS].sqrt();
        Ok(TemporalProfile { l, nu, horizon, norm, table, gl })
    }

    /// Base profile `g(s)`, `s ∈ [0, T]`.
    pub fn base(&self, s: f64) -> f64 {
        self.norm * bump(s / self.horizon)
    }

    fn base_deriv(&self, s: f64) -> f64 {
        self.norm * bump_deriv(s / self.horizon) / self.horizon
    }

    /// `∫₀^y g²` for `y ∈ [0, T]`.
    fn cumulative(&self, y: f64) -> f64 {
        let x = (y / self.horizon).clamp(0.0, 1.0);
        let j = ((x * TABLE_PANELS as f64) as usize).min(TABLE_PANELS - 1);
        let a = j as f64 / TABLE_PANELS as f64;
        let partial = self.table[j] + panel(&self.gl, a, x);
        self.norm * self.norm * self.horizon * partial
    }

    /// Phase `τ = νt mod T`.
    fn phase(&self, t: f64) -> f64 {
        (self.nu as f64 * t).rem_euclid(self.horizon)
    }

    /// `g_l(νt)`.
    pub fn g(&self, t: f64) -> f64 {
        let tau = self.phase(t);
        let l = self.l as f64;
        if l * tau < self.horizon {
            l.sqrt() * self.base(l * tau)
        } else {
            0.0
        }
    }

    /// `d/dt g_l(νt)`.
    pub fn dg(&self, t: f64) -> f64 {
        let tau = self.phase(t);
        let l = self.l as f64;
        if l * tau < self.horizon {
            self.nu as f64 * l.powf(1.5) * self.base_deriv(l * tau)
        } else {
            0.0
        }
    }

    /// `h_l(νt)` with `h_l(s) = ∫₀ˢ (g_l² − 1)`.
    pub fn h(&self, t: f64) -> f64 {
        let tau = self.phase(t);
        let l = self.l as f64;
        self.cumulative((l * tau).min(self.horizon)) - tau
    }

    /// `d/dt h_l(νt) = ν (g_l(νt)² − 1)`.
    pub fn dh(&self, t: f64) -> f64 {
        let g = self.g(t);
        self.nu as f64 * (g * g - 1.0)
    }

    /// Duration `T/(νl)` of one temporal bump.
    pub fn bump_duration(&self) -> f64 {
        self.horizon / (self.nu * self.l) as f64
    }

    pub fn period(&self) -> f64 {
        self.horizon / self.nu as f64
    }

    /// Nodes in `[a, b]` resolving every bump with `per_bump` (at least 32)
    /// intervals and the quiet stretches with spacing at most `gap`.
    pub fn recommended_nodes(&self, a: f64, b: f64, per_bump: usize, gap: f64) -> Vec<f64> {
        let per_bump = per_bump.max(32);
        let dur = self.bump_duration();
        let period = self.period();
        let mut nodes = vec![a, b];
        let first = (a / period).floor() as i64;
        let last = (b / period).ceil() as i64;
        for p in first..=last {
            let s = p as f64 * period;
            for j in 0..=per_bump {
                nodes.push(s + dur * j as f64 / per_bump as f64);
            }
            let quiet = period - dur;
            let m = (quiet / gap).ceil().max(1.0) as usize;
            for j in 1..m {
                nodes.push(s + dur + quiet * j as f64 / m as f64);
            }
        }
        nodes.retain(|t| *t >= a && *t <= b);
        nodes.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        nodes
    }
}

fn panel(gl: &(Vec<f64>, Vec<f64>), a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    gl.0.iter().zip(&gl.1).map(|(x, w)| w * bump(c + h * x).powi(2)).sum::<f64>() * h
}

// ---------------------------------------------------------------------------
// Cutoffs

/// Gluing partition `t_i = iT/n` and cutoffs `χ_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct GluingCutoffs {
    pub points: Vec<f64>,
    pub tau_bar: f64,
}

impl GluingCutoffs {
    /// Partition with `n = ceil(T/τ̄^ε)` pieces; `τ̄` is lowered to
    /// `(T/n)^{1/ε}` so the piece length is exactly `τ̄^ε`.
    pub fn new(horizon: f64, tau_bar: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Precondition(format!("ε = {epsilon} must lie in (0, 1)")));
        }
        if !(tau_bar > 0.0) {
            return Err(Error::NonPositive(tau_bar));
        }
        let n = ((horizon / tau_bar.powf(epsilon)) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let len = horizon / n as f64;
        let tau_bar = len.powf(1.0 / epsilon);
        if len <= 5.0 * tau_bar {
            return Err(Error::Precondition(format!(
                "piece length {len:.3e} must exceed 5τ̄ = {:.3e}",
                5.0 * tau_bar
            )));
        }
        let points = (0..=n).map(|i| if i == n { horizon } else { i as f64 * len }).collect();
        Ok(GluingCutoffs { points, tau_bar })
    }

    /// Number of pieces.
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rising(&self, i: usize, t: f64) -> (f64, f64) {
        if i == 0 {
            return (1.0, 0.0);
        }
        let s = 0.5 * self.tau_bar;
        let x = (t - self.points[i] - s) / s;
        (smoothstep(x), smoothstep_deriv(x) / s)
    }

    fn falling(&self, i: usize, t: f64) -> (f64, f64) {
        if i + 1 == self.len() {
            return (1.0, 0.0);
        }
        let s = 0.5 * self.tau_bar;
        let x = (self.points[i + 1] - s - t) / s;
        (smoothstep(x), -smoothstep_deriv(x) / s)
    }

    pub fn chi(&self, i: usize, t: f64) -> f64 {
        if t < self.points[i] || t > self.points[i + 1] {
            return 0.0;
        }
        self.rising(i, t).0 * self.falling(i, t).0
    }

    pub fn dchi(&self, i: usize, t: f64) -> f64 {
        if t < self.points[i] || t > self.points[i + 1] {
            return 0.0;
        }
        let (a, da) = self.rising(i, t);
        let (b, db) = self.falling(i, t);
        da * b + a * db
    }

    /// Piece containing `t` (the left one at partition points).
    pub fn piece(&self, t: f64) -> usize {
        let n = self.len();
        let j = self.points.partition_point(|&p| p <= t);
        j.saturating_sub(1).min(n - 1)
    }
}

/// Well-preparedness cutoff `f`: 0 where `dist(t, Ī^c) ≤ 5τ̄/4`, 1 where
/// `dist ≥ 3τ̄/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparednessCutoff {
    pub intervals: IntervalSet,
    pub tau_bar: f64,
}

impl PreparednessCutoff {
    pub fn eval(&self, t: f64) -> f64 {
        let dist = self.intervals.dist_to_complement(t);
        if dist.is_infinite() {
            return 1.0;
        }
        let start = 1.25 * self.tau_bar;
        smoothstep((dist - start) / (0.25 * self.tau_bar))
    }
}

/// Amplitude cutoff `ξ`: plateau `2L/r0` for `x ≤ L`, linear `2x/r0` for
/// `x ≥ 2L`, joined by a monotone `C²` quintic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudeCutoff {
    pub level: f64,
    pub r0: f64,
}

impl AmplitudeCutoff {
    /// `level = max(‖(R̄,S̄)‖_{L¹}, ρ_min·r0/2)`.
    pub fn new(stress_l1: f64, r0: f64, rho_min: f64) -> Self {
        AmplitudeCutoff { level: stress_l1.max(0.5 * rho_min * r0), r0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.abs();
        let l = self.level;
        if l == 0.0 {
            return 2.0 * x / self.r0;
        }
        if x <= l {
            2.0 * l / self.r0
        } else if x >= 2.0 * l {
            2.0 * x / self.r0
        } else {
            let s = (x - l) / l;
            2.0 * l / self.r0 * (1.0 + s * s * s * (6.0 - 8.0 * s + 3.0 * s * s))
        }
    }
}

#[derive(Clone, Debug)]
pub struct CutoffSet {
    pub gluing: GluingCutoffs,
    pub f: PreparednessCutoff,
    pub xi: AmplitudeCutoff,
    pub stress_l1: f64,
}

/// `‖(R, S)‖_{L¹_{t,x}}` of the pointwise joint magnitude.
pub fn stress_l1(r: &TimeField, s: &TimeField) -> Result<f64> {
    joint_mixed_norm(&[r, s], MixedNormSpec { p: 1.0, q: 1.0 })
}

pub fn build_cutoffs(
    intervals: &IntervalSet,
    tau_bar: f64,
    epsilon: f64,
    r: &TimeField,
    s: &TimeField,
    family: &DirectionFamily,
    rho_min: f64,
) -> Result<CutoffSet> {
    for &(a, b) in &intervals.intervals {
        let inner = (a > 0.0) as u8 as f64 + (b < intervals.horizon) as u8 as f64;
        if b - a < 1.5 * tau_bar * inner.max(1.0) {
            return Err(Error::Precondition(format!(
                "interval [{a}, {b}] too short for τ̄ = {tau_bar}"
            )));
        }
    }
    let gluing = GluingCutoffs::new(intervals.horizon, tau_bar, epsilon)?;
    let l1 = stress_l1(r, s)?;
    Ok(CutoffSet {
        gluing,
        f: PreparednessCutoff { intervals: intervals.clone(), tau_bar },
        xi: AmplitudeCutoff::new(l1, family.r0(), rho_min),
        stress_l1: l1,
    })
}
