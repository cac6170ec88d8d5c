//! Direction families for decomposing matrices near the identity into
//! positive combinations of rank-one tensors `e_k ⊗ e_k`.
//!
//! `Γ_k²` is the minimum-norm linear solution of `Σ_k w_k e_k⊗e_k = R`, so the
//! reconstruction is exact for every symmetric `R`; positivity holds on a
//! Frobenius ball around `Id` whose radius is computed in closed form.
//! `γ_k` is the canonical dual frame of `{e_k}`.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionFamily {
    d: usize,
    dirs: Vec<Vec<i64>>,
    units: Vec<Vec<f64>>,
    /// `Γ_k²(Id)`.
    calibration: Vec<f64>,
    /// `Γ_k²(R) = ⟨L_k, R⟩_F`, each `L_k` a symmetric `d×d` matrix.
    linear: Vec<Vec<f64>>,
    /// `γ_k(f) = dual_k · f`.
    dual: Vec<Vec<f64>>,
    r0: f64,
    c0: f64,
}

fn default_directions(d: usize) -> Result<Vec<Vec<i64>>> {
    match d {
        2 => Ok(vec![vec![1, 0], vec![0, 1], vec![1, 1], vec![1, -1]]),
        3 => Ok(vec![
            vec![1, 0, 0],
            vec![0, 1, 0],
            vec![0, 0, 1],
            vec![1, 1, 0],
            vec![1, -1, 0],
            vec![1, 0, 1],
            vec![1, 0, -1],
            vec![0, 1, 1],
            vec![0, 1, -1],
        ]),
        _ => Err(Error::Precondition(format!("direction family needs d in {{2,3}}, got {d}"))),
    }
}

/// Orthonormal basis of symmetric matrices for the Frobenius product.
fn sym_basis(d: usize) -> Vec<Vec<f64>> {
    let mut basis = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut b = vec![0.0; d * d];
            if i == j {
                b[i * d + i] = 1.0;
            } else {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                b[i * d + j] = s;
                b[j * d + i] = s;
            }
            basis.push(b);
        }
    }
    basis
}

fn frob(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pseudo_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let gram = m * m.transpose();
    let inv = gram.try_inverse().ok_or_else(|| Error::Singular(what.into()))?;
    Ok(m.transpose() * inv)
}

impl DirectionFamily {
    pub fn build(d: usize) -> Result<Self> {
        Self::with_directions(d, default_directions(d)?)
    }

    pub fn with_directions(d: usize, dirs: Vec<Vec<i64>>) -> Result<Self> {
        if dirs.is_empty() || dirs.iter().any(|k| k.len() != d || k.iter().all(|&v| v == 0)) {
            return Err(Error::Precondition("directions must be nonzero vectors of length d".into()));
        }
        let units: Vec<Vec<f64>> = dirs
            .iter()
            .map(|k| {
                let n = (k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt();
                k.iter().map(|&v| v as f64 / n).collect()
            })
            .collect();
        let basis = sym_basis(d);
        let s = basis.len();
        let kn = dirs.len();
        let moment = DMatrix::from_fn(s, kn, |a, k| {
            let e = &units[k];
            let mut ee = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    ee[i * d + j] = e[i] * e[j];
                }
            }
            frob(&ee, &basis[a])
        });
        let p = pseudo_inverse(&moment, "rank-one tensors do not span symmetric matrices")?;
        let linear: Vec<Vec<f64>> = (0..kn)
            .map(|k| {
                let mut l = vec![0.0; d * d];
                for (a, b) in basis.iter().enumerate() {
                    for (li, bi) in l.iter_mut().zip(b) {
                        *li += p[(k, a)] * bi;
                    }
                }
                l
            })
            .collect();
        let mut id = vec![0.0; d * d];
        for i in 0..d {
            id[i * d + i] = 1.0;
        }
        let calibration: Vec<f64> = linear.iter().map(|l| frob(l, &id)).collect();
        let min_cal = calibration.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_cal > 0.0) {
            return Err(Error::Singular("calibration at the identity is not positive".into()));
        }
        let c0_sq = 0.5 * min_cal;
        // min of ⟨L_k, Id + E⟩ over ‖E‖_F ≤ r is calibration_k − r‖L_k‖_F
        let r0 = linear
            .iter()
            .zip(&calibration)
            .map(|(l, c)| (c - c0_sq) / frob(l, l).sqrt())
            .fold(f64::INFINITY, f64::min);
        let frame = DMatrix::from_fn(d, kn, |i, k| units[k][i]);
        let dual_m = pseudo_inverse(&frame, "directions do not span R^d")?;
        let dual = (0..kn).map(|k| (0..d).map(|i| dual_m[(k, i)]).collect()).collect();
        Ok(DirectionFamily { d, dirs, units, calibration, linear, dual, r0, c0: c0_sq.sqrt() })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn directions(&self) -> &[Vec<i64>] {
        &self.dirs
    }

    pub fn unit(&self, k: usize) -> &[f64] {
        &self.units[k]
    }

    pub fn calibration(&self) -> &[f64] {
        &self.calibration
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// Linear functional `L_k` giving `Γ_k²`.
    pub fn linear(&self, k: usize) -> &[f64] {
        &self.linear[k]
    }

    pub fn dual(&self, k: usize) -> &[f64] {
        &self.dual[k]
    }

    /// `Γ_k²(R)` without the ball check (`R` row-major, symmetric).
    pub fn gamma_sq_unchecked(&self, r: &[f64]) -> Vec<f64> {
        self.linear.iter().map(|l| frob(l, r)).collect()
    }

    pub fn distance_from_identity(&self, r: &[f64]) -> f64 {
        let d = self.d;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                let v = r[i * d + j] - if i == j { 1.0 } else { 0.0 };
                s += v * v;
            }
        }
        s.sqrt()
    }

    /// `Γ_k(R)` for `R ∈ B_{r0}(Id)`.
    pub fn gamma_coeffs(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.d * self.d {
            return Err(Error::Precondition("matrix has wrong size".into()));
        }
        let dist = self.distance_from_identity(r);
        if dist > self.r0 * (1.0 + 1e-12) {
            return Err(Error::OutOfBall { dist, r0: self.r0 });
        }
        Ok(self.gamma_sq_unchecked(r).into_iter().map(|v| v.max(0.0).sqrt()).collect())
    }

    /// `γ_k(f)`.
    pub fn vector_coeffs(&self, f: &[f64]) -> Vec<f64> {
        self.dual.iter().map(|g| g.iter().zip(f).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn reconstruct_matrix(&self, gamma_sq: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d * d];
        for (e, w) in self.units.iter().zip(gamma_sq) {
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += w * e[i] * e[j];
                }
            }
        }
        out
    }

    pub fn reconstruct_vector(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (e, c) in self.units.iter().zip(coeffs) {
            for (o, v) in out.iter_mut().zip(e) {
                *o += c * v;
            }
        }
        out
    }

    /// Upper bound on the Lipschitz constant of `R ↦ Γ_k(R)` on the ball.
    pub fn lipschitz_bound(&self) -> f64 {
        self.linear.iter().map(|l| frob(l, l).sqrt()).fold(0.0, f64::max) / (2.0 * self.c0)
    }

    /// Text manifest: directions, calibration rows, `r0`, `c0`.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        writeln!(s, "d {}", self.d).unwrap();
        let dirs: Vec<String> =
            self.dirs.iter().map(|k| k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")).collect();
        writeln!(s, "directions {}", dirs.join(" ")).unwrap();
        for (k, l) in self.linear.iter().enumerate() {
            let row: Vec<String> = l.iter().map(|v| format!("{v:e}")).collect();
            writeln!(s, "calibration {} {}", k, row.join(" ")).unwrap();
        }
        writeln!(s, "r0 {:e}", self.r0).unwrap();
        writeln!(s, "c0 {:e}", self.c0).unwrap();
        s
    }

    /// Rebuild from a manifest and check the stored constants.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut d = None;
        let mut dirs = None;
        for line in text.lines() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("d") => d = parts.next().and_then(|v| v.parse::<usize>().ok()),
                Some("directions") => {
                    let parsed: Option<Vec<Vec<i64>>> =
                        parts.map(|t| t.split(',').map(|v| v.parse().ok()).collect()).collect();
                    dirs = parsed;
                }
                _ => {}
            }
        }
        let (d, dirs) = match (d, dirs) {
            (Some(d), Some(dirs)) => (d, dirs),
            _ => return Err(Error::Format("manifest lacks d or directions".into())),
        };
        let family = Self::with_directions(d, dirs)?;
        if family.to_manifest() != text {
            return Err(Error::Format("manifest constants disagree with rebuilt family".into()));
        }
        Ok(family)
    }
}
