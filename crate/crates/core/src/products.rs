//! Exactly dealiased pointwise products.
//!
//! Factors in the band are evaluated on a `3N/2` grid; any quadratic
//! combination formed there and projected back equals the band projection of
//! the true product, so `∂ P_N(fg) = P_N(∂f g) + P_N(f ∂g)` holds exactly.

use crate::error::{Error, Result};
use crate::field::{PhysicalField, Shape, SpectralField};

pub fn dealias_size(shape: Shape) -> usize {
    3 * shape.n() / 2
}

pub fn lift(f: &SpectralField) -> PhysicalField {
    f.to_grid(dealias_size(f.shape()))
}

pub fn lower(g: &PhysicalField, shape: Shape) -> SpectralField {
    SpectralField::from_physical(g, shape).expect("grid built for this shape")
}

fn check(a: &PhysicalField, b: &PhysicalField) -> Result<()> {
    if a.d != b.d || a.m != b.m {
        Err(Error::ShapeMismatch)
    } else {
        Ok(())
    }
}

/// Scalar times field of any rank.
pub fn scalar_mul(s: &PhysicalField, x: &PhysicalField) -> Result<PhysicalField> {
    check(s, x)?;
    if s.rank != 0 {
        return Err(Error::Rank { expected: 0, found: s.rank });
    }
    let comps = x
        .comps
        .iter()
        .map(|c| c.iter().zip(&s.comps[0]).map(|(a, b)| a * b).collect())
        .collect();
    Ok(PhysicalField { d: x.d, m: x.m, rank: x.rank, comps })
}

/// `u ⊗ v` for vectors.
pub fn outer(u: &PhysicalField, v: &PhysicalField) -> Result<PhysicalField> {
    check(u, v)?;
    if u.rank != 1 || v.rank != 1 {
        return Err(Error::Rank { expected: 1, found: u.rank.max(v.rank) });
    }
    let d = u.d;
    let mut comps = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            comps.push(u.comps[i].iter().zip(&v.comps[j]).map(|(a, b)| a * b).collect());
        }
    }
    Ok(PhysicalField { d, m: u.m, rank: 2, comps })
}

/// Euclidean contraction of two vectors.
pub fn dot(u: &PhysicalField, v: &PhysicalField) -> Result<PhysicalField> {
    check(u, v)?;
    if u.rank != 1 || v.rank != 1 {
        return Err(Error::Rank { expected: 1, found: u.rank.max(v.rank) });
    }
    let mut out = vec![0.0; u.len()];
    for (a, b) in u.comps.iter().zip(&v.comps) {
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o += x * y;
        }
    }
    Ok(PhysicalField { d: u.d, m: u.m, rank: 0, comps: vec![out] })
}

/// `P_N(f g)` for two band fields, `f` scalar.
pub fn product(f: &SpectralField, g: &SpectralField) -> Result<SpectralField> {
    if f.shape() != g.shape() {
        return Err(Error::ShapeMismatch);
    }
    f.expect_rank(0)?;
    Ok(lower(&scalar_mul(&lift(f), &lift(g))?, f.shape()))
}

/// `P_N(u ⊗ v)`.
pub fn outer_product(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    if u.shape() != v.shape() {
        return Err(Error::ShapeMismatch);
    }
    Ok(lower(&outer(&lift(u), &lift(v))?, u.shape()))
}

/// Accumulate `a * x` into `acc` componentwise.
pub fn accumulate(acc: &mut PhysicalField, a: f64, x: &PhysicalField) {
    for (c, xc) in acc.comps.iter_mut().zip(&x.comps) {
        for (v, w) in c.iter_mut().zip(xc) {
            *v += a * w;
        }
    }
}
