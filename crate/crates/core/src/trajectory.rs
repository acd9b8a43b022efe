//! Fixed-length trajectories stored as row-major `steps × dim` arrays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    steps: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn from_flat(steps: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if steps == 0 || dim == 0 {
            return Err(Error::config("trajectory needs at least one step and one dimension"));
        }
        if data.len() != steps * dim {
            return Err(Error::config(format!(
                "trajectory of shape {steps}x{dim} needs {} values, got {}",
                steps * dim,
                data.len()
            )));
        }
        Ok(Self { steps, dim, data })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::config("trajectory points have differing dimensions"));
        }
        Self::from_flat(points.len(), dim, points.concat())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.steps, self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn point(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn final_point(&self) -> &[f64] {
        self.point(self.steps - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Returns a copy shifted by `offset` at every step.
    pub fn translated(&self, offset: &[f64]) -> Self {
        assert_eq!(offset.len(), self.dim, "offset dimension mismatch");
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + offset[i % self.dim])
            .collect();
        Self {
            steps: self.steps,
            dim: self.dim,
            data,
        }
    }

    /// Squared Euclidean distance between the flattened arrays.
    pub fn squared_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// Mean over time of the per-step Euclidean distance.
    pub fn mean_step_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        let total: f64 = self.points().zip(other.points()).map(|(a, b)| euclidean(a, b)).sum();
        total / self.steps as f64
    }

    /// Euclidean distance between the final positions.
    pub fn final_distance(&self, other: &Self) -> f64 {
        euclidean(self.final_point(), other.final_point())
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
