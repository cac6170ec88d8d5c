//! Fourier multipliers and the bilinear antidivergence lifts.
//!
//! Conventions: `(∇v)_{ij} = ∂_j v_i`, `(div A)_i = Σ_j ∂_j A_{ij}`, matrix
//! components stored row-major.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::{Complex64, PhysicalField, SpectralField};
use crate::products::{lift, lower};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn wavevector(mode: &[i64; 3], d: usize) -> [f64; 3] {
    let mut k = [0.0; 3];
    for a in 0..d {
        k[a] = 2.0 * PI * mode[a] as f64;
    }
    k
}

fn norm2(k: &[f64; 3]) -> f64 {
    k.iter().map(|v| v * v).sum()
}

pub fn grad(f: &SpectralField) -> Result<SpectralField> {
    if f.rank() > 1 {
        return Err(Error::Rank { expected: 1, found: f.rank() });
    }
    let shape = f.shape();
    let d = shape.d();
    let modes = shape.modes();
    let mut out = SpectralField::zeros(shape, f.rank() + 1);
    for i in 0..f.ncomp() {
        let src = f.comp(i);
        for j in 0..d {
            let dst = out.comp_mut(i * d + j);
            for (idx, mode) in modes.iter().enumerate() {
                dst[idx] = I * wavevector(mode, d)[j] * src[idx];
            }
        }
    }
    Ok(out)
}

pub fn div(f: &SpectralField) -> Result<SpectralField> {
    if f.rank() == 0 {
        return Err(Error::Rank { expected: 1, found: 0 });
    }
    let shape = f.shape();
    let d = shape.d();
    let modes = shape.modes();
    let mut out = SpectralField::zeros(shape, f.rank() - 1);
    for i in 0..out.ncomp() {
        for j in 0..d {
            let src = f.comp(i * d + j).to_vec();
            let dst = out.comp_mut(i);
            for (idx, mode) in modes.iter().enumerate() {
                dst[idx] += I * wavevector(mode, d)[j] * src[idx];
            }
        }
    }
    Ok(out)
}

fn scalar_multiplier<F: Fn(&[f64; 3]) -> f64>(f: &SpectralField, symbol: F) -> SpectralField {
    let shape = f.shape();
    let modes = shape.modes();
    let mut out = f.clone();
    for c in 0..out.ncomp() {
        for (v, mode) in out.comp_mut(c).iter_mut().zip(modes.iter()) {
            *v *= symbol(&wavevector(mode, shape.d()));
        }
    }
    out
}

pub fn laplacian(f: &SpectralField) -> SpectralField {
    scalar_multiplier(f, |k| -norm2(k))
}

/// Inverse Laplacian on mean-free content; the zero mode maps to 0.
pub fn inverse_laplacian(f: &SpectralField) -> SpectralField {
    scalar_multiplier(f, |k| {
        let k2 = norm2(k);
        if k2 == 0.0 {
            0.0
        } else {
            -1.0 / k2
        }
    })
}

/// `(−Δ)^α` with symbol `|2πn|^{2α}`; the zero mode is annihilated for every α.
pub fn frac_laplacian(f: &SpectralField, alpha: f64) -> SpectralField {
    scalar_multiplier(f, |k| {
        let k2 = norm2(k);
        if k2 == 0.0 {
            0.0
        } else {
            k2.powf(alpha)
        }
    })
}

/// Symbol of `(−Δ)^α` at each slot, for integrating factors.
pub fn frac_symbol(shape: crate::field::Shape, alpha: f64) -> Vec<f64> {
    shape
        .modes()
        .iter()
        .map(|mode| {
            let k2 = norm2(&wavevector(mode, shape.d()));
            if k2 == 0.0 {
                0.0
            } else {
                k2.powf(alpha)
            }
        })
        .collect()
}

pub fn leray_project(v: &SpectralField) -> Result<SpectralField> {
    v.expect_rank(1)?;
    let shape = v.shape();
    let d = shape.d();
    let modes = shape.modes();
    let mut out = v.clone();
    for (idx, mode) in modes.iter().enumerate() {
        let k = wavevector(mode, d);
        let k2 = norm2(&k);
        if k2 == 0.0 {
            continue;
        }
        let mut kv = Complex64::default();
        for a in 0..d {
            kv += v.comp(a)[idx] * k[a];
        }
        for a in 0..d {
            out.comp_mut(a)[idx] -= kv * (k[a] / k2);
        }
    }
    Ok(out)
}

/// Symmetric antidivergence: for each mode the minimum-Frobenius symmetric
/// matrix `M` with `i2π M n = v̂(n)`; the zero mode is dropped.
pub fn antidiv_r(v: &SpectralField) -> Result<SpectralField> {
    v.expect_rank(1)?;
    let shape = v.shape();
    let d = shape.d();
    let modes = shape.modes();
    let mut out = SpectralField::zeros(shape, 2);
    for (idx, mode) in modes.iter().enumerate() {
        let n: Vec<f64> = mode[..d].iter().map(|&a| a as f64).collect();
        let n2: f64 = n.iter().map(|a| a * a).sum();
        if n2 == 0.0 {
            continue;
        }
        let b: Vec<Complex64> = (0..d).map(|a| v.comp(a)[idx] / (I * 2.0 * PI)).collect();
        let bn: Complex64 = b.iter().zip(&n).map(|(x, y)| x * y).sum();
        for i in 0..d {
            for j in 0..d {
                let val = (b[i] * n[j] + b[j] * n[i]) / n2 - bn * (n[i] * n[j] / (n2 * n2));
                out.comp_mut(i * d + j)[idx] = val;
            }
        }
    }
    Ok(out.with_symmetric(true))
}

/// `∇Δ^{-1}(f − mean f)`.
pub fn antidiv_g(f: &SpectralField) -> Result<SpectralField> {
    f.expect_rank(0)?;
    grad(&inverse_laplacian(f))
}

/// `Δ^{-1} div div A` (pressure-type scalar of a matrix field).
pub fn inverse_laplacian_divdiv(a: &SpectralField) -> Result<SpectralField> {
    a.expect_rank(2)?;
    Ok(inverse_laplacian(&div(&div(a)?)?))
}

/// Rows of a matrix field as vector fields.
fn rows(a: &SpectralField) -> Vec<SpectralField> {
    let d = a.d();
    (0..d)
        .map(|i| {
            let parts: Vec<SpectralField> = (0..d).map(|j| a.component(i * d + j)).collect();
            SpectralField::from_scalars(&parts, 1).expect("row components share a shape")
        })
        .collect()
}

/// `B(v, A) = v·R(A) − R(∇v·R(A))` with `R` acting on the rows of the
/// mean-free part of `A`; `div B = vA − mean(vA)`, output symmetric.
pub fn bilinear_b(v: &SpectralField, a: &SpectralField) -> Result<SpectralField> {
    v.expect_rank(1)?;
    a.expect_rank(2)?;
    if v.shape() != a.shape() {
        return Err(Error::ShapeMismatch);
    }
    let shape = v.shape();
    let d = shape.d();
    let rows = rows(&a.nonzero_modes());
    let ms: Vec<PhysicalField> = rows.iter().map(|r| antidiv_r(r).map(|m| lift(&m))).collect::<Result<_>>()?;
    let vg = lift(v);
    let gv = lift(&grad(v)?);
    let len = vg.len();
    let mut e = PhysicalField::zeros(d, vg.m, 2);
    let mut w = PhysicalField::zeros(d, vg.m, 1);
    for i in 0..d {
        let vi = &vg.comps[i];
        for j in 0..d {
            for m in 0..d {
                let mij = &ms[i].comps[j * d + m];
                let ejm = &mut e.comps[j * d + m];
                for p in 0..len {
                    ejm[p] += vi[p] * mij[p];
                }
                let dvim = &gv.comps[i * d + m];
                let wj = &mut w.comps[j];
                for p in 0..len {
                    wj[p] += dvim[p] * mij[p];
                }
            }
        }
    }
    let e = lower(&e, shape);
    let rw = antidiv_r(&lower(&w, shape))?;
    Ok(e.sub(&rw)?.with_symmetric(true))
}

/// `B̃(f, g) = f·G(g) − G(∇f·G(g))`; `div B̃ = fg − mean(fg)` for mean-free `g`.
pub fn bilinear_btilde(f: &SpectralField, g: &SpectralField) -> Result<SpectralField> {
    f.expect_rank(0)?;
    g.expect_rank(0)?;
    if f.shape() != g.shape() {
        return Err(Error::ShapeMismatch);
    }
    let shape = f.shape();
    let d = shape.d();
    let gg = lift(&antidiv_g(g)?);
    let fg = lift(f);
    let gf = lift(&grad(f)?);
    let len = fg.len();
    let mut e = PhysicalField::zeros(d, fg.m, 1);
    let mut w = PhysicalField::zeros(d, fg.m, 0);
    for j in 0..d {
        for p in 0..len {
            e.comps[j][p] = fg.comps[0][p] * gg.comps[j][p];
            w.comps[0][p] += gf.comps[j][p] * gg.comps[j][p];
        }
    }
    let e = lower(&e, shape);
    let gw = antidiv_g(&lower(&w, shape))?;
    e.sub(&gw)
}

pub fn nonzero_modes(f: &SpectralField) -> SpectralField {
    f.nonzero_modes()
}

/// Symmetric matrix with scalar `s` on the diagonal.
pub fn scalar_identity(s: &SpectralField) -> Result<SpectralField> {
    s.expect_rank(0)?;
    let d = s.d();
    let zero = SpectralField::zeros(s.shape(), 0);
    let parts: Vec<SpectralField> =
        (0..d * d).map(|c| if c / d == c % d { s.clone() } else { zero.clone() }).collect();
    Ok(SpectralField::from_scalars(&parts, 2)?.with_symmetric(true))
}
