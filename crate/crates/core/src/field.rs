//! Real fields on the unit torus `[0,1)^d`, stored by Fourier coefficients.
//!
//! A field `f(x) = Σ c_n exp(2πi n·x)` keeps `c_n` for the band
//! `|n_a| < N/2`; the Nyquist planes are held at zero so that the band is
//! closed under negation and exact dealiased products stay inside it.
//! Coefficients are normalized so that `c_0` is the spatial mean.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    d: usize,
    n: usize,
}

type ModeTable = Arc<Vec<[i64; 3]>>;

fn mode_cache() -> &'static Mutex<HashMap<Shape, ModeTable>> {
    static CACHE: OnceLock<Mutex<HashMap<Shape, ModeTable>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

type EmbedMap = Arc<Vec<usize>>;

fn embed_cache() -> &'static Mutex<HashMap<(Shape, usize), EmbedMap>> {
    static CACHE: OnceLock<Mutex<HashMap<(Shape, usize), EmbedMap>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Shape {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(2..=3).contains(&d) {
            return Err(Error::Shape(format!("dimension {d} not in {{2,3}}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::Shape(format!("resolution {n} must be even and at least 4")));
        }
        Ok(Shape { d, n })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn spec_len(&self) -> usize {
        self.n.pow(self.d as u32 - 1) * self.half()
    }

    pub fn grid_len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn ncomp(&self, rank: usize) -> usize {
        self.d.pow(rank as u32)
    }

    /// Largest retained |n_a|.
    pub fn kmax(&self) -> i64 {
        self.n as i64 / 2 - 1
    }

    /// Integer mode vector of every half-layout slot (unused axes are 0).
    pub fn modes(&self) -> ModeTable {
        let mut guard = mode_cache().lock().expect("mode cache poisoned");
        guard
            .entry(*self)
            .or_insert_with(|| {
                let (n, h) = (self.n, self.half());
                let mut table = Vec::with_capacity(self.spec_len());
                for idx in 0..self.spec_len() {
                    let mut mode = [0i64; 3];
                    mode[self.d - 1] = (idx % h) as i64;
                    let mut rest = idx / h;
                    for a in (0..self.d - 1).rev() {
                        let i = rest % n;
                        rest /= n;
                        mode[a] = if i <= n / 2 { i as i64 } else { i as i64 - n as i64 };
                    }
                    table.push(mode);
                }
                Arc::new(table)
            })
            .clone()
    }

    pub fn in_band(&self, mode: &[i64; 3]) -> bool {
        let k = self.kmax();
        mode[..self.d].iter().all(|v| v.abs() <= k)
    }

    /// Multiplicity of a half-layout slot in full-spectrum sums.
    pub fn weight(&self, mode: &[i64; 3]) -> f64 {
        if mode[self.d - 1] == 0 {
            1.0
        } else {
            2.0
        }
    }

    /// Slot holding mode `n`, and whether the stored value is its conjugate.
    pub fn slot(&self, mode: &[i64]) -> Option<(usize, bool)> {
        let mut m = [0i64; 3];
        m[..self.d].copy_from_slice(&mode[..self.d]);
        let conj = m[self.d - 1] < 0;
        if conj {
            for v in m.iter_mut() {
                *v = -*v;
            }
        }
        if !self.in_band(&m) {
            return None;
        }
        let (n, h) = (self.n as i64, self.half());
        let mut idx = 0usize;
        for a in 0..self.d - 1 {
            idx = idx * self.n + m[a].rem_euclid(n) as usize;
        }
        idx = idx * h + m[self.d - 1] as usize;
        Some((idx, conj))
    }

    /// Map from this band into the half layout of an `m`-point grid.
    fn embed(&self, m: usize) -> EmbedMap {
        let mut guard = embed_cache().lock().expect("embed cache poisoned");
        guard
            .entry((*self, m))
            .or_insert_with(|| {
                let modes = self.modes();
                let hm = m / 2 + 1;
                let map = modes
                    .iter()
                    .map(|mode| {
                        if !self.in_band(mode) {
                            return usize::MAX;
                        }
                        let mut idx = 0usize;
                        for a in 0..self.d - 1 {
                            idx = idx * m + mode[a].rem_euclid(m as i64) as usize;
                        }
                        idx * hm + mode[self.d - 1] as usize
                    })
                    .collect();
                Arc::new(map)
            })
            .clone()
    }
}

/// Grid samples of a field on an `m^d` grid, points `x = i/m`, row-major
/// with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    pub d: usize,
    pub m: usize,
    pub rank: usize,
    pub comps: Vec<Vec<f64>>,
}

impl PhysicalField {
    pub fn zeros(d: usize, m: usize, rank: usize) -> Self {
        let len = m.pow(d as u32);
        PhysicalField { d, m, rank, comps: vec![vec![0.0; len]; d.pow(rank as u32)] }
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of grid point `p`.
    pub fn point(&self, p: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut rest = p;
        for a in (0..self.d).rev() {
            x[a] = (rest % self.m) as f64 / self.m as f64;
            rest /= self.m;
        }
        x
    }

    /// Pointwise Euclidean (Frobenius for matrices) magnitude.
    pub fn magnitude(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for c in &self.comps {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v * v;
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
        out
    }

    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        lq_of_samples(&self.magnitude(), q)
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// `L^q` norm of equally weighted samples on the unit torus.
pub fn lq_of_samples(values: &[f64], q: f64) -> Result<f64> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lq norm"));
    }
    check_exponent(q)?;
    if values.is_empty() {
        return Ok(0.0);
    }
    if q.is_infinite() {
        return Ok(values.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = values.iter().map(|v| (v.abs() / scale).powf(q)).sum();
    Ok(scale * (s / values.len() as f64).powf(1.0 / q))
}

pub fn check_exponent(q: f64) -> Result<()> {
    if q.is_nan() || q < 1.0 {
        Err(Error::Exponent(q))
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    shape: Shape,
    rank: usize,
    symmetric: bool,
    comps: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn zeros(shape: Shape, rank: usize) -> Self {
        let comps = vec![vec![Complex64::default(); shape.spec_len()]; shape.ncomp(rank)];
        SpectralField { shape, rank, symmetric: false, comps }
    }

    pub fn from_comps(shape: Shape, rank: usize, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        if comps.len() != shape.ncomp(rank) || comps.iter().any(|c| c.len() != shape.spec_len()) {
            return Err(Error::Shape("component layout does not match shape".into()));
        }
        Ok(SpectralField { shape, rank, symmetric: false, comps })
    }

    /// Interpolate a function sampled on the native `N^d` grid.
    pub fn from_fn<F>(shape: Shape, rank: usize, f: F) -> Self
    where
        F: Fn(&[f64; 3], &mut [f64]),
    {
        Self::from_fn_on(shape, rank, shape.n, f)
    }

    /// Sample `f` on an `m^d` grid (`m ≥ N`) and keep the band of the result.
    pub fn from_fn_on<F>(shape: Shape, rank: usize, m: usize, f: F) -> Self
    where
        F: Fn(&[f64; 3], &mut [f64]),
    {
        let nc = shape.ncomp(rank);
        let mut grid = PhysicalField::zeros(shape.d, m, rank);
        let mut buf = vec![0.0; nc];
        for p in 0..grid.len() {
            let x = grid.point(p);
            f(&x, &mut buf);
            for c in 0..nc {
                grid.comps[c][p] = buf[c];
            }
        }
        Self::from_physical(&grid, shape).expect("grid built for this shape")
    }

    pub fn from_scalars(parts: &[SpectralField], rank: usize) -> Result<Self> {
        let first = parts.first().ok_or(Error::Shape("no components".into()))?;
        let shape = first.shape;
        if parts.len() != shape.ncomp(rank) {
            return Err(Error::Shape("wrong number of components".into()));
        }
        let mut comps = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape != shape {
                return Err(Error::ShapeMismatch);
            }
            p.expect_rank(0)?;
            comps.push(p.comps[0].clone());
        }
        Ok(SpectralField { shape, rank, symmetric: false, comps })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn d(&self) -> usize {
        self.shape.d
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn with_symmetric(mut self, flag: bool) -> Self {
        self.symmetric = flag && self.rank == 2;
        self
    }

    pub fn comp(&self, c: usize) -> &[Complex64] {
        &self.comps[c]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.comps[c]
    }

    pub fn comps(&self) -> &[Vec<Complex64>] {
        &self.comps
    }

    pub fn component(&self, c: usize) -> SpectralField {
        SpectralField { shape: self.shape, rank: 0, symmetric: false, comps: vec![self.comps[c].clone()] }
    }

    pub fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.rank == rank {
            Ok(())
        } else {
            Err(Error::Rank { expected: rank, found: self.rank })
        }
    }

    fn expect_compatible(&self, other: &SpectralField) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch);
        }
        if self.rank != other.rank {
            return Err(Error::Rank { expected: self.rank, found: other.rank });
        }
        Ok(())
    }

    /// Coefficient of mode `n` in component `c` (zero outside the band).
    pub fn coeff(&self, c: usize, mode: &[i64]) -> Complex64 {
        match self.shape.slot(mode) {
            Some((idx, false)) => self.comps[c][idx],
            Some((idx, true)) => self.comps[c][idx].conj(),
            None => Complex64::default(),
        }
    }

    /// Store the coefficient of mode `n`; for modes on the self-conjugate
    /// plane the caller is responsible for also setting `-n`.
    pub fn set_coeff(&mut self, c: usize, mode: &[i64], value: Complex64) -> Result<()> {
        match self.shape.slot(mode) {
            Some((idx, conj)) => {
                self.comps[c][idx] = if conj { value.conj() } else { value };
                Ok(())
            }
            None => Err(Error::Band(format!("mode {:?} outside band", &mode[..self.d()]))),
        }
    }

    pub fn to_grid(&self, m: usize) -> PhysicalField {
        assert!(m >= self.shape.n, "grid coarser than band");
        let plan = fft::plan(self.shape.d, m);
        let map = self.shape.embed(m);
        let comps = self
            .comps
            .iter()
            .map(|c| {
                let mut big = vec![Complex64::default(); plan.spec_len()];
                for (idx, &slot) in map.iter().enumerate() {
                    if slot != usize::MAX {
                        big[slot] = c[idx];
                    }
                }
                plan.inverse(&big)
            })
            .collect();
        PhysicalField { d: self.shape.d, m, rank: self.rank, comps }
    }

    /// Project grid samples onto the band of `shape` (exact band-limited
    /// projection of the trigonometric interpolant).
    pub fn from_physical(grid: &PhysicalField, shape: Shape) -> Result<Self> {
        if grid.d != shape.d || grid.m < shape.n {
            return Err(Error::ShapeMismatch);
        }
        let plan = fft::plan(shape.d, grid.m);
        let map = shape.embed(grid.m);
        let scale = 1.0 / grid.len() as f64;
        let comps = grid
            .comps
            .iter()
            .map(|g| {
                let big = plan.forward(g);
                map.iter()
                    .map(|&slot| if slot == usize::MAX { Complex64::default() } else { big[slot] * scale })
                    .collect()
            })
            .collect();
        Ok(SpectralField { shape, rank: grid.rank, symmetric: false, comps })
    }

    pub fn mean(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c[0].re).collect()
    }

    pub fn nonzero_modes(&self) -> SpectralField {
        let mut out = self.clone();
        for c in out.comps.iter_mut() {
            c[0] = Complex64::default();
        }
        out
    }

    pub fn scale(&self, a: f64) -> SpectralField {
        let mut out = self.clone();
        out.scale_in_place(a);
        out
    }

    pub fn scale_in_place(&mut self, a: f64) {
        for c in self.comps.iter_mut() {
            c.iter_mut().for_each(|v| *v *= a);
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) -> Result<()> {
        self.expect_compatible(other)?;
        for (c, o) in self.comps.iter_mut().zip(&other.comps) {
            for (v, w) in c.iter_mut().zip(o) {
                *v += w * a;
            }
        }
        self.symmetric = self.symmetric && other.symmetric;
        Ok(())
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn transpose(&self) -> Result<SpectralField> {
        self.expect_rank(2)?;
        let d = self.d();
        let mut out = self.clone();
        for i in 0..d {
            for j in 0..d {
                out.comps[i * d + j] = self.comps[j * d + i].clone();
            }
        }
        Ok(out)
    }

    /// Real `L²` inner product computed spectrally.
    pub fn inner(&self, other: &SpectralField) -> Result<f64> {
        self.expect_compatible(other)?;
        let modes = self.shape.modes();
        let mut s = 0.0;
        for (c, o) in self.comps.iter().zip(&other.comps) {
            for ((v, w), mode) in c.iter().zip(o).zip(modes.iter()) {
                s += self.shape.weight(mode) * (v * w.conj()).re;
            }
        }
        Ok(s)
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// `(Σ_n (1+|2πn|²)^s |c_n|²)^{1/2}` summed over all components.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let modes = self.shape.modes();
        let tp = 2.0 * std::f64::consts::PI;
        let mut acc = 0.0;
        for c in &self.comps {
            for (v, mode) in c.iter().zip(modes.iter()) {
                let k2: f64 = mode[..self.d()].iter().map(|&a| (tp * a as f64).powi(2)).sum();
                let w = if s == 0.0 { 1.0 } else { (1.0 + k2).powf(s) };
                acc += self.shape.weight(mode) * w * v.norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// Largest coefficient modulus, used for exactness checks.
    pub fn max_coeff(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |a, v| a.max(v.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Spatial `L^q` norm of the pointwise magnitude, by quadrature on the
    /// twice-refined grid (spectral Parseval for q = 2).
    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        if !self.is_finite() {
            return Err(Error::NonFinite("lq norm"));
        }
        check_exponent(q)?;
        if q == 2.0 {
            return Ok(self.l2_norm());
        }
        self.to_grid(2 * self.shape.n).lq_norm(q)
    }

    /// Composition with `x ↦ σx` realized by moving mode `n` to `σn`.
    pub fn dilate(&self, sigma: usize, target: Shape) -> Result<SpectralField> {
        if target.d != self.d() || sigma == 0 {
            return Err(Error::ShapeMismatch);
        }
        let modes = self.shape.modes();
        let used = modes
            .iter()
            .enumerate()
            .filter(|(idx, _)| self.comps.iter().any(|c| c[*idx].norm() > 0.0))
            .map(|(_, m)| m[..self.d()].iter().map(|a| a.abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0);
        if sigma as i64 * used > target.kmax() {
            return Err(Error::Band(format!(
                "dilation by {sigma} moves mode {used} past {}",
                target.kmax()
            )));
        }
        let mut out = SpectralField::zeros(target, self.rank).with_symmetric(self.symmetric);
        for (c, comp) in self.comps.iter().enumerate() {
            for (v, mode) in comp.iter().zip(modes.iter()) {
                if !self.shape.in_band(mode) || v.norm() == 0.0 {
                    continue;
                }
                let mut m = [0i64; 3];
                for a in 0..self.d() {
                    m[a] = mode[a] * sigma as i64;
                }
                if let Some((idx, conj)) = target.slot(&m) {
                    out.comps[c][idx] = if conj { v.conj() } else { *v };
                }
            }
        }
        Ok(out)
    }

    /// Re-express on a different resolution (truncating or zero-padding).
    pub fn resample(&self, target: Shape) -> Result<SpectralField> {
        if target.d != self.d() {
            return Err(Error::ShapeMismatch);
        }
        let mut out = SpectralField::zeros(target, self.rank).with_symmetric(self.symmetric);
        let modes = target.modes();
        for c in 0..self.ncomp() {
            for (idx, mode) in modes.iter().enumerate() {
                if target.in_band(mode) {
                    out.comps[c][idx] = self.coeff(c, &mode[..]);
                }
            }
        }
        Ok(out)
    }

    /// Largest `|c(-n) - conj(c(n))|` over the self-conjugate plane.
    pub fn hermitian_defect(&self) -> f64 {
        let modes = self.shape.modes();
        let mut worst = 0.0f64;
        for c in 0..self.ncomp() {
            for (idx, mode) in modes.iter().enumerate() {
                if mode[self.d() - 1] != 0 || !self.shape.in_band(mode) {
                    continue;
                }
                let neg = [-mode[0], -mode[1], -mode[2]];
                let (j, _) = self.shape.slot(&neg).expect("band closed under negation");
                worst = worst.max((self.comps[c][j] - self.comps[c][idx].conj()).norm());
            }
        }
        worst
    }

    /// Largest coefficient of `A - Aᵀ`.
    pub fn symmetry_defect(&self) -> Result<f64> {
        self.expect_rank(2)?;
        let d = self.d();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i + 1..d {
                for (a, b) in self.comps[i * d + j].iter().zip(&self.comps[j * d + i]) {
                    worst = worst.max((a - b).norm());
                }
            }
        }
        Ok(worst)
    }
}
