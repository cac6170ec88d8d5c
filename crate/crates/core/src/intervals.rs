//! Finite unions of closed time intervals with an associated length scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    /// Disjoint, sorted closed intervals.
    pub intervals: Vec<(f64, f64)>,
    /// Length scale τ (nominal interval length is 5τ).
    pub tau: f64,
    /// Count exponent ε for the bound `count ≤ ceil(τ^{−ε})`.
    pub epsilon: f64,
    pub horizon: f64,
}

impl IntervalSet {
    /// Sort and merge overlapping or touching intervals.
    pub fn new(mut raw: Vec<(f64, f64)>, tau: f64, epsilon: f64, horizon: f64) -> Result<Self> {
        if raw.iter().any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Precondition("malformed interval".into()));
        }
        raw.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite"));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (a, b) in raw {
            let (a, b) = (a.max(0.0), b.min(horizon));
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        Ok(IntervalSet { intervals: merged, tau, epsilon, horizon })
    }

    pub fn whole(horizon: f64, epsilon: f64) -> Self {
        IntervalSet { intervals: vec![(0.0, horizon)], tau: horizon / 5.0, epsilon, horizon }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= t && t <= b)
    }

    /// Distance from `t` to `[0, T] \ I`; infinite when `I` covers `[0, T]`.
    pub fn dist_to_complement(&self, t: f64) -> f64 {
        for &(a, b) in &self.intervals {
            if a <= t && t <= b {
                let left = if a <= 0.0 { f64::INFINITY } else { t - a };
                let right = if b >= self.horizon { f64::INFINITY } else { b - t };
                return left.min(right);
            }
        }
        0.0
    }

    /// Every interval of `self` lies inside one interval of `other`.
    pub fn is_subset_of(&self, other: &IntervalSet) -> bool {
        self.intervals.iter().all(|&(a, b)| other.intervals.iter().any(|&(c, e)| c <= a && b <= e))
    }

    pub fn count_bound(&self) -> f64 {
        self.tau.powf(-self.epsilon).ceil()
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn touches_endpoints(&self) -> bool {
        self.contains(0.0) || self.contains(self.horizon)
    }

    /// Number of boxes of side `s` needed to cover the set.
    pub fn cover_count(&self, s: f64) -> usize {
        self.intervals.iter().map(|(a, b)| (((b - a) / s) * (1.0 - 1e-12)).ceil().max(1.0) as usize).sum()
    }
}
