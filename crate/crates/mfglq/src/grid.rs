use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid on `[0, T]` with `steps` intervals (`steps + 1` nodes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::config(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::config(format!("grid needs at least 2 steps, got {steps}")));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.horizon * j as f64 / self.steps as f64
    }

    /// Number of grid nodes (`steps + 1`).
    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nodes()).map(|j| self.node(j)).collect()
    }
}

/// Build a uniform grid; errors on a degenerate horizon or too few steps.
pub fn build_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_partition() {
        let g = build_grid(1.0, 4).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(), 0.25);
    }

    #[test]
    fn fine_grid_step() {
        let g = build_grid(1.0, 1000).unwrap();
        assert!((g.dt() - 0.001).abs() < 1e-18);
        assert_eq!(g.node(g.steps), 1.0);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(build_grid(0.0, 10).is_err());
        assert!(build_grid(-1.0, 10).is_err());
        assert!(build_grid(1.0, 1).is_err());
    }
}
