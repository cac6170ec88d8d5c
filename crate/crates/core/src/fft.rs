//! Cached multi-dimensional real FFTs on `m^d` grids.
//!
//! Spectra use the half layout: every axis but the last is stored in full
//! (`m` entries, wrap-around order) and the last axis keeps `m/2 + 1`
//! non-negative frequencies. Transforms are unnormalized.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Plan {
    d: usize,
    m: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

type PlanCache = Mutex<HashMap<(usize, usize), Arc<Plan>>>;

fn cache() -> &'static PlanCache {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub(crate) fn plan(d: usize, m: usize) -> Arc<Plan> {
    let mut guard = cache().lock().expect("fft plan cache poisoned");
    guard
        .entry((d, m))
        .or_insert_with(|| {
            let mut real = RealFftPlanner::<f64>::new();
            let mut cplx = FftPlanner::<f64>::new();
            Arc::new(Plan {
                d,
                m,
                r2c: real.plan_fft_forward(m),
                c2r: real.plan_fft_inverse(m),
                fwd: cplx.plan_fft_forward(m),
                inv: cplx.plan_fft_inverse(m),
            })
        })
        .clone()
}

impl Plan {
    pub fn half(&self) -> usize {
        self.m / 2 + 1
    }

    pub fn spec_len(&self) -> usize {
        self.m.pow(self.d as u32 - 1) * self.half()
    }

    pub fn grid_len(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn forward(&self, real: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(real.len(), self.grid_len());
        let (m, h) = (self.m, self.half());
        let rows = real.len() / m;
        let mut out = vec![Complex64::default(); rows * h];
        let mut row_in = vec![0.0; m];
        let mut scratch = self.r2c.make_scratch_vec();
        for r in 0..rows {
            row_in.copy_from_slice(&real[r * m..(r + 1) * m]);
            self.r2c
                .process_with_scratch(&mut row_in, &mut out[r * h..(r + 1) * h], &mut scratch)
                .expect("r2c length mismatch");
        }
        for axis in 0..self.d - 1 {
            self.lines(&mut out, axis, &self.fwd);
        }
        out
    }

    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(spec.len(), self.spec_len());
        let (m, h) = (self.m, self.half());
        let mut work = spec.to_vec();
        for axis in 0..self.d - 1 {
            self.lines(&mut work, axis, &self.inv);
        }
        let rows = work.len() / h;
        let mut out = vec![0.0; rows * m];
        let mut scratch = self.c2r.make_scratch_vec();
        for r in 0..rows {
            let row = &mut work[r * h..(r + 1) * h];
            row[0].im = 0.0;
            if m % 2 == 0 {
                row[h - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(row, &mut out[r * m..(r + 1) * m], &mut scratch)
                .expect("c2r length mismatch");
        }
        out
    }

    /// Complex transform along one of the full-length axes of the half layout.
    fn lines(&self, data: &mut [Complex64], axis: usize, fft: &Arc<dyn Fft<f64>>) {
        let m = self.m;
        let mut sizes = vec![m; self.d];
        sizes[self.d - 1] = self.half();
        let stride: usize = sizes[axis + 1..].iter().product();
        let outer: usize = sizes[..axis].iter().product();
        let mut buf = vec![Complex64::default(); stride * m];
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        for o in 0..outer {
            let base = o * m * stride;
            for k in 0..m {
                let src = &data[base + k * stride..base + (k + 1) * stride];
                for (inner, v) in src.iter().enumerate() {
                    buf[inner * m + k] = *v;
                }
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..m {
                let dst = &mut data[base + k * stride..base + (k + 1) * stride];
                for (inner, v) in dst.iter_mut().enumerate() {
                    *v = buf[inner * m + k];
                }
            }
        }
    }
}
