//! Time grids, time-indexed fields, mixed space-time norms and the discrete
//! time derivative.

use crate::error::{Error, Result};
use crate::field::{check_exponent, SpectralField};

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    /// Sorted, deduplicated nodes in `[0, T]` with composite trapezoid
    /// weights. The end points 0 and T are always included.
    pub fn new(horizon: f64, nodes: impl IntoIterator<Item = f64>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Precondition(format!("horizon {horizon} must be positive")));
        }
        let mut v: Vec<f64> = nodes.into_iter().filter(|t| t.is_finite()).collect();
        v.push(0.0);
        v.push(horizon);
        v.retain(|t| (0.0..=horizon).contains(t));
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite nodes"));
        let tol = 1e-15 * horizon;
        let mut nodes: Vec<f64> = Vec::with_capacity(v.len());
        for t in v {
            match nodes.last() {
                Some(&last) if t - last <= tol => {}
                _ => nodes.push(t),
            }
        }
        // keep the exact end point after deduplication
        *nodes.last_mut().expect("nonempty") = horizon;
        let weights = trapezoid(&nodes);
        Ok(TimeGrid { horizon, nodes, weights })
    }

    pub fn uniform(horizon: f64, intervals: usize) -> Result<Self> {
        let n = intervals.max(1);
        Self::new(horizon, (0..=n).map(|j| horizon * j as f64 / n as f64))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fourth-order first-derivative stencil at node `j`: start index and
    /// weights over five consecutive nodes (fewer when the grid is short).
    pub fn derivative_stencil(&self, j: usize) -> (usize, Vec<f64>) {
        let n = self.len();
        let width = n.min(5);
        let start = j.saturating_sub(width / 2).min(n - width);
        let xs = &self.nodes[start..start + width];
        (start, fornberg_first(self.nodes[j], xs))
    }

    /// Four-point Lagrange interpolation stencil at time `t`.
    pub fn interpolation_stencil(&self, t: f64) -> (usize, Vec<f64>) {
        let n = self.len();
        let width = n.min(4);
        let pos = self.nodes.partition_point(|&x| x <= t);
        let start = pos.saturating_sub(width / 2).min(n - width);
        let xs = &self.nodes[start..start + width];
        (start, lagrange_weights(t, xs))
    }
}

/// Lagrange interpolation weights at `t` for distinct nodes `xs`.
pub fn lagrange_weights(t: f64, xs: &[f64]) -> Vec<f64> {
    let width = xs.len();
    if let Some(k) = xs.iter().position(|&x| x == t) {
        let mut w = vec![0.0; width];
        w[k] = 1.0;
        return w;
    }
    let mut w = vec![1.0; width];
    for (a, wa) in w.iter_mut().enumerate() {
        for (b, &xb) in xs.iter().enumerate() {
            if a != b {
                *wa *= (t - xb) / (xs[a] - xb);
            }
        }
    }
    w
}

fn trapezoid(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for j in 0..n.saturating_sub(1) {
        let h = nodes[j + 1] - nodes[j];
        w[j] += 0.5 * h;
        w[j + 1] += 0.5 * h;
    }
    w
}

/// Finite-difference weights for the first derivative at `x0` (Fornberg).
pub fn fornberg_first(x0: f64, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    // c[j][k]: weight of node j for the k-th derivative, k ∈ {0, 1}
    let mut c = vec![[0.0f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(1);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|w| w[1]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeField {
    grid: TimeGrid,
    fields: Vec<SpectralField>,
}

impl TimeField {
    pub fn new(grid: TimeGrid, fields: Vec<SpectralField>) -> Result<Self> {
        if fields.is_empty() || grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if fields.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        let (shape, rank) = (fields[0].shape(), fields[0].rank());
        if fields.iter().any(|f| f.shape() != shape || f.rank() != rank) {
            return Err(Error::ShapeMismatch);
        }
        Ok(TimeField { grid, fields })
    }

    pub fn zeros(grid: TimeGrid, template: &SpectralField) -> Self {
        let z = SpectralField::zeros(template.shape(), template.rank()).with_symmetric(template.is_symmetric());
        let fields = vec![z; grid.len()];
        TimeField { grid, fields }
    }

    pub fn from_fn<F>(grid: TimeGrid, f: F) -> Result<Self>
    where
        F: Fn(f64) -> SpectralField,
    {
        let fields = grid.nodes().iter().map(|&t| f(t)).collect();
        Self::new(grid, fields)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn fields(&self) -> &[SpectralField] {
        &self.fields
    }

    pub fn field(&self, j: usize) -> &SpectralField {
        &self.fields[j]
    }

    pub fn field_mut(&mut self, j: usize) -> &mut SpectralField {
        &mut self.fields[j]
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.fields[0].rank()
    }

    pub fn shape(&self) -> crate::field::Shape {
        self.fields[0].shape()
    }

    pub fn into_fields(self) -> Vec<SpectralField> {
        self.fields
    }

    /// Fourth-order discrete `∂_t` at node `j`.
    pub fn derivative(&self, j: usize) -> SpectralField {
        let (start, w) = self.grid.derivative_stencil(j);
        combine(&self.fields[start..start + w.len()], &w)
    }

    /// Cubic Lagrange interpolation in time.
    pub fn sample(&self, t: f64) -> SpectralField {
        let (start, w) = self.grid.interpolation_stencil(t);
        combine(&self.fields[start..start + w.len()], &w)
    }

    pub fn map<F>(&self, f: F) -> Result<TimeField>
    where
        F: Fn(f64, &SpectralField) -> SpectralField,
    {
        let fields = self.grid.nodes().iter().zip(&self.fields).map(|(&t, x)| f(t, x)).collect();
        TimeField::new(self.grid.clone(), fields)
    }
}

/// `Σ_j w_j f_j`.
pub fn combine(fields: &[SpectralField], w: &[f64]) -> SpectralField {
    let mut out = fields[0].scale(w[0]);
    for (f, &a) in fields.iter().zip(w).skip(1) {
        if a != 0.0 {
            out.axpy(a, f).expect("one time field");
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixedNormSpec {
    pub p: f64,
    pub q: f64,
}

impl MixedNormSpec {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        check_exponent(p)?;
        check_exponent(q)?;
        Ok(MixedNormSpec { p, q })
    }
}

/// Temporal `L^p` of weighted per-node values.
pub fn temporal_norm(values: &[f64], weights: &[f64], p: f64) -> Result<f64> {
    check_exponent(p)?;
    if values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("temporal norm"));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    let s: f64 = values.iter().zip(weights).map(|(v, w)| w * v.abs().powf(p)).sum();
    Ok(s.powf(1.0 / p))
}

/// `(Σ_j w_j ‖f(t_j)‖_q^p)^{1/p}` with max for infinite exponents.
pub fn mixed_norm(f: &TimeField, spec: MixedNormSpec) -> Result<f64> {
    let spatial: Vec<f64> = f.fields().iter().map(|x| x.lq_norm(spec.q)).collect::<Result<_>>()?;
    temporal_norm(&spatial, f.grid().weights(), spec.p)
}

/// Nodes of `grid` with their per-node spatial norms, combined for several
/// time fields sharing the grid (pointwise magnitude over all components).
pub fn joint_mixed_norm(parts: &[&TimeField], spec: MixedNormSpec) -> Result<f64> {
    let first = parts.first().ok_or(Error::EmptyGrid)?;
    let n = first.len();
    if parts.iter().any(|p| p.grid() != first.grid()) {
        return Err(Error::GridMismatch);
    }
    let mut spatial = Vec::with_capacity(n);
    for j in 0..n {
        let fields: Vec<&SpectralField> = parts.iter().map(|p| p.field(j)).collect();
        spatial.push(joint_lq(&fields, spec.q)?);
    }
    temporal_norm(&spatial, first.grid().weights(), spec.p)
}

/// Spatial `L^q` of the pointwise magnitude of several fields together.
pub fn joint_lq(fields: &[&SpectralField], q: f64) -> Result<f64> {
    check_exponent(q)?;
    if q == 2.0 {
        return Ok(fields.iter().map(|f| f.l2_norm().powi(2)).sum::<f64>().sqrt());
    }
    let m = 2 * fields[0].shape().n();
    let mut mag2: Vec<f64> = vec![0.0; m.pow(fields[0].d() as u32)];
    for f in fields {
        for c in f.to_grid(m).comps {
            for (a, v) in mag2.iter_mut().zip(c) {
                *a += v * v;
            }
        }
    }
    let mag: Vec<f64> = mag2.into_iter().map(f64::sqrt).collect();
    crate::field::lq_of_samples(&mag, q)
}
