//! The iteration state: a solution of the relaxed Boussinesq system with
//! stress errors `(R, S)` and its well-preparedness metadata.

use crate::error::{Error, Result};
use crate::field::{Shape, SpectralField};
use crate::intervals::IntervalSet;
use crate::time::{TimeField, TimeGrid};

#[derive(Clone, Debug)]
pub struct ReynoldsQuadruple {
    pub u: TimeField,
    pub theta: TimeField,
    pub p: TimeField,
    pub r: TimeField,
    pub s: TimeField,
    /// Interval set `I` with scale `τ` (`intervals.tau`).
    pub intervals: IntervalSet,
    /// Dissipation exponent `α` of `(−Δ)^α`.
    pub alpha: f64,
}

impl ReynoldsQuadruple {
    pub fn new(
        u: TimeField,
        theta: TimeField,
        p: TimeField,
        r: TimeField,
        s: TimeField,
        intervals: IntervalSet,
        alpha: f64,
    ) -> Result<Self> {
        let grid = u.grid();
        if [&theta, &p, &r, &s].iter().any(|f| f.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        let shape = u.shape();
        if [&theta, &p, &r, &s].iter().any(|f| f.shape() != shape) {
            return Err(Error::ShapeMismatch);
        }
        for (f, rank) in [(&u, 1), (&theta, 0), (&p, 0), (&r, 2), (&s, 1)] {
            if f.rank() != rank {
                return Err(Error::Rank { expected: rank, found: f.rank() });
            }
        }
        if (intervals.horizon - grid.horizon()).abs() > 1e-12 * grid.horizon() {
            return Err(Error::Precondition("interval horizon differs from the time grid".into()));
        }
        Ok(ReynoldsQuadruple { u, theta, p, r, s, intervals, alpha })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.u.grid()
    }

    pub fn shape(&self) -> Shape {
        self.u.shape()
    }

    pub fn horizon(&self) -> f64 {
        self.grid().horizon()
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `(R, S)` vanish identically at every node.
    pub fn stress_free(&self) -> bool {
        self.r.fields().iter().chain(self.s.fields()).all(|f| f.max_coeff() == 0.0)
    }

    /// All five fields at time `t`: exact at nodes, cubic in time otherwise.
    pub fn at(&self, t: f64) -> [SpectralField; 5] {
        [self.u.sample(t), self.theta.sample(t), self.p.sample(t), self.r.sample(t), self.s.sample(t)]
    }
}
