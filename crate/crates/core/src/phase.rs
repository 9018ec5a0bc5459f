//! Phase-space points and batches.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// A single point `s = (q, p)` of phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl StateVector {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::contract(format!(
                "position and momentum lengths differ ({} vs {})",
                q.len(),
                p.len()
            )));
        }
        Ok(StateVector { q, p })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Concatenated `(q, p)`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.q.iter().chain(&self.p).copied().collect()
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if !s.len().is_multiple_of(2) {
            return Err(Error::contract("phase-space vector must have even length"));
        }
        let d = s.len() / 2;
        Self::new(s[..d].to_vec(), s[d..].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `n` phase-space points stored as two `n × d` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseBatch {
    pub q: Array2<f64>,
    pub p: Array2<f64>,
}

impl PhaseBatch {
    pub fn new(q: Array2<f64>, p: Array2<f64>) -> Result<Self> {
        if q.dim() != p.dim() {
            return Err(Error::contract(format!(
                "position batch {:?} and momentum batch {:?} differ",
                q.dim(),
                p.dim()
            )));
        }
        Ok(PhaseBatch { q, p })
    }

    pub fn from_states(states: &[StateVector]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::contract("empty state list"))?;
        let d = first.dim();
        if states.iter().any(|s| s.dim() != d) {
            return Err(Error::contract("states of mixed dimension"));
        }
        let q = Array2::from_shape_fn((states.len(), d), |(i, j)| states[i].q[j]);
        let p = Array2::from_shape_fn((states.len(), d), |(i, j)| states[i].p[j]);
        Ok(PhaseBatch { q, p })
    }

    pub fn single(s: &StateVector) -> Self {
        PhaseBatch {
            q: Array2::from_shape_vec((1, s.dim()), s.q.clone()).expect("1 × d"),
            p: Array2::from_shape_vec((1, s.dim()), s.p.clone()).expect("1 × d"),
        }
    }

    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn state(&self, i: usize) -> StateVector {
        StateVector {
            q: self.q.row(i).to_vec(),
            p: self.p.row(i).to_vec(),
        }
    }

    pub fn states(&self) -> impl Iterator<Item = StateVector> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    /// The `n × 2d` matrix `[q | p]`.
    pub fn joined(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.q.view(), self.p.view()]).expect("equal rows")
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|x| x.is_finite())
    }
}

/// Rotation of the `(0, 1)` coordinate plane applied to every row.
pub fn rotate_rows(x: &Array2<f64>, angle: f64) -> Array2<f64> {
    let (c, s) = (angle.cos(), angle.sin());
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let (a, b) = (row[0], row[1]);
        row[0] = c * a - s * b;
        row[1] = s * a + c * b;
    }
    out
}
