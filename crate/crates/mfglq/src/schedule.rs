//! Grid-sampled coefficient schedules.
//!
//! A schedule holds either one constant value (broadcast over the grid) or
//! one sample per grid node, and is interpreted as left-constant on each
//! interval `[t_j, t_{j+1})`: every solver and simulator evaluation inside
//! interval `j` uses sample `j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum MatSchedule {
    Constant(DMatrix<f64>),
    Samples(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum VecSchedule {
    Constant(DVector<f64>),
    Samples(Vec<DVector<f64>>),
}

impl MatSchedule {
    pub fn constant(m: DMatrix<f64>) -> Self {
        MatSchedule::Constant(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatSchedule::Constant(DMatrix::zeros(rows, cols))
    }

    pub fn scalar(v: f64) -> Self {
        MatSchedule::Constant(DMatrix::from_element(1, 1, v))
    }

    /// Sample used on interval `j` (and at node `j`).
    pub fn at(&self, j: usize) -> &DMatrix<f64> {
        match self {
            MatSchedule::Constant(m) => m,
            MatSchedule::Samples(v) => &v[j],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatSchedule::Constant(m) => m.shape(),
            MatSchedule::Samples(v) => v[0].shape(),
        }
    }

    pub fn check(&self, rows: usize, cols: usize, nodes: usize, name: &str) -> Result<()> {
        match self {
            MatSchedule::Constant(m) => {
                if m.shape() != (rows, cols) {
                    return Err(Error::config(format!(
                        "{name}: expected {rows}x{cols}, found {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
            MatSchedule::Samples(v) => {
                if v.len() != nodes {
                    return Err(Error::config(format!(
                        "{name}: expected {nodes} samples, found {}",
                        v.len()
                    )));
                }
                for (j, m) in v.iter().enumerate() {
                    if m.shape() != (rows, cols) {
                        return Err(Error::config(format!(
                            "{name}[{j}]: expected {rows}x{cols}, found {}x{}",
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        match self {
            MatSchedule::Constant(m) => m.iter().all(|x| x.is_finite()),
            MatSchedule::Samples(v) => v.iter().all(|m| m.iter().all(|x| x.is_finite())),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let fold = |m: &DMatrix<f64>| m.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        match self {
            MatSchedule::Constant(m) => fold(m),
            MatSchedule::Samples(v) => v.iter().map(fold).fold(0.0, f64::max),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }
}

impl VecSchedule {
    pub fn constant(v: DVector<f64>) -> Self {
        VecSchedule::Constant(v)
    }

    pub fn zeros(dim: usize) -> Self {
        VecSchedule::Constant(DVector::zeros(dim))
    }

    pub fn scalar(v: f64) -> Self {
        VecSchedule::Constant(DVector::from_element(1, v))
    }

    pub fn at(&self, j: usize) -> &DVector<f64> {
        match self {
            VecSchedule::Constant(v) => v,
            VecSchedule::Samples(v) => &v[j],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VecSchedule::Constant(v) => v.len(),
            VecSchedule::Samples(v) => v[0].len(),
        }
    }

    pub fn check(&self, dim: usize, nodes: usize, name: &str) -> Result<()> {
        match self {
            VecSchedule::Constant(v) => {
                if v.len() != dim {
                    return Err(Error::config(format!(
                        "{name}: expected dim {dim}, found {}",
                        v.len()
                    )));
                }
            }
            VecSchedule::Samples(samples) => {
                if samples.len() != nodes {
                    return Err(Error::config(format!(
                        "{name}: expected {nodes} samples, found {}",
                        samples.len()
                    )));
                }
                for (j, v) in samples.iter().enumerate() {
                    if v.len() != dim {
                        return Err(Error::config(format!(
                            "{name}[{j}]: expected dim {dim}, found {}",
                            v.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        match self {
            VecSchedule::Constant(v) => v.iter().all(|x| x.is_finite()),
            VecSchedule::Samples(s) => s.iter().all(|v| v.iter().all(|x| x.is_finite())),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let fold = |v: &DVector<f64>| v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        match self {
            VecSchedule::Constant(v) => fold(v),
            VecSchedule::Samples(s) => s.iter().map(fold).fold(0.0, f64::max),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }

    /// Pointwise scaling (the non-homogeneous data enter the backward
    /// equations linearly; tests rely on this).
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            VecSchedule::Constant(v) => VecSchedule::Constant(v * factor),
            VecSchedule::Samples(s) => VecSchedule::Samples(s.iter().map(|v| v * factor).collect()),
        }
    }
}

// ---------------------------------------------------------------------------
// JSON representation.
//
// A matrix is a number (1x1) or nested row-major rows; a vector is a number
// (dim 1) or a flat array. A schedule is one such value (constant) or an
// array of node samples. Ambiguous flat forms are resolved against the
// expected dimensions, preferring the constant reading.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatRepr {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatScheduleRepr {
    One(MatRepr),
    Many(Vec<MatRepr>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VecScheduleRepr {
    Scalar(f64),
    Flat(Vec<f64>),
    Many(Vec<Vec<f64>>),
}

/// Resolve a single matrix representation against its expected shape.
pub fn resolve_matrix(repr: &MatRepr, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
    matrix_from_repr(repr, rows, cols, name)
}

fn matrix_from_repr(repr: &MatRepr, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
    match repr {
        MatRepr::Scalar(v) => {
            if (rows, cols) != (1, 1) {
                return Err(Error::config(format!(
                    "{name}: scalar given where a {rows}x{cols} matrix is required"
                )));
            }
            Ok(DMatrix::from_element(1, 1, *v))
        }
        MatRepr::Rows(r) => {
            if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                return Err(Error::config(format!(
                    "{name}: expected {rows}x{cols} row-major matrix"
                )));
            }
            let flat: Vec<f64> = r.iter().flatten().copied().collect();
            Ok(DMatrix::from_row_slice(rows, cols, &flat))
        }
    }
}

pub fn matrix_to_repr(m: &DMatrix<f64>) -> MatRepr {
    if m.shape() == (1, 1) {
        MatRepr::Scalar(m[(0, 0)])
    } else {
        MatRepr::Rows(
            (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
                .collect(),
        )
    }
}

impl MatScheduleRepr {
    pub fn resolve(&self, rows: usize, cols: usize, nodes: usize, name: &str) -> Result<MatSchedule> {
        match self {
            MatScheduleRepr::One(repr) => {
                Ok(MatSchedule::Constant(matrix_from_repr(repr, rows, cols, name)?))
            }
            MatScheduleRepr::Many(samples) => {
                if samples.len() != nodes {
                    return Err(Error::config(format!(
                        "{name}: schedule has {} samples, grid has {nodes} nodes",
                        samples.len()
                    )));
                }
                let mats = samples
                    .iter()
                    .map(|r| matrix_from_repr(r, rows, cols, name))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MatSchedule::Samples(mats))
            }
        }
    }

    pub fn from_schedule(s: &MatSchedule) -> Self {
        match s {
            MatSchedule::Constant(m) => MatScheduleRepr::One(matrix_to_repr(m)),
            MatSchedule::Samples(v) => {
                MatScheduleRepr::Many(v.iter().map(matrix_to_repr).collect())
            }
        }
    }
}

impl VecScheduleRepr {
    pub fn resolve(&self, dim: usize, nodes: usize, name: &str) -> Result<VecSchedule> {
        match self {
            VecScheduleRepr::Scalar(v) => {
                if dim != 1 {
                    return Err(Error::config(format!(
                        "{name}: scalar given where a dim-{dim} vector is required"
                    )));
                }
                Ok(VecSchedule::Constant(DVector::from_element(1, *v)))
            }
            VecScheduleRepr::Flat(v) => {
                if v.len() == dim {
                    Ok(VecSchedule::Constant(DVector::from_row_slice(v)))
                } else if dim == 1 && v.len() == nodes {
                    Ok(VecSchedule::Samples(
                        v.iter().map(|&x| DVector::from_element(1, x)).collect(),
                    ))
                } else {
                    Err(Error::config(format!(
                        "{name}: flat array of length {} fits neither dim {dim} nor {nodes} scalar samples",
                        v.len()
                    )))
                }
            }
            VecScheduleRepr::Many(samples) => {
                if samples.len() != nodes {
                    return Err(Error::config(format!(
                        "{name}: schedule has {} samples, grid has {nodes} nodes",
                        samples.len()
                    )));
                }
                let vecs = samples
                    .iter()
                    .map(|s| {
                        if s.len() != dim {
                            Err(Error::config(format!("{name}: sample dim {} != {dim}", s.len())))
                        } else {
                            Ok(DVector::from_row_slice(s))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(VecSchedule::Samples(vecs))
            }
        }
    }

    pub fn from_schedule(s: &VecSchedule) -> Self {
        match s {
            VecSchedule::Constant(v) if v.len() == 1 => VecScheduleRepr::Scalar(v[0]),
            VecSchedule::Constant(v) => VecScheduleRepr::Flat(v.iter().copied().collect()),
            VecSchedule::Samples(samples) => {
                VecScheduleRepr::Many(samples.iter().map(|v| v.iter().copied().collect()).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_schedule_broadcasts() {
        let s = MatSchedule::scalar(2.5);
        assert_eq!(s.at(0)[(0, 0)], 2.5);
        assert_eq!(s.at(999)[(0, 0)], 2.5);
    }

    #[test]
    fn flat_vector_prefers_constant_reading() {
        let repr: VecScheduleRepr = serde_json::from_str("[1.0, 2.0]").unwrap();
        let v = repr.resolve(2, 5, "f").unwrap();
        assert!(matches!(v, VecSchedule::Constant(_)));
        let s = repr.resolve(1, 2, "f").unwrap();
        assert!(matches!(s, VecSchedule::Samples(_)));
    }

    #[test]
    fn sampled_matrix_schedule_round_trips() {
        let mats = vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.25, -0.5, 3.0]),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]),
        ];
        let sched = MatSchedule::Samples(mats);
        let repr = MatScheduleRepr::from_schedule(&sched);
        let json = serde_json::to_string(&repr).unwrap();
        let back: MatScheduleRepr = serde_json::from_str(&json).unwrap();
        let resolved = back.resolve(2, 2, 3, "a").unwrap();
        assert_eq!(resolved, sched);
    }

    #[test]
    fn wrong_sample_count_is_rejected() {
        let repr: MatScheduleRepr = serde_json::from_str("[1.0, 2.0, 3.0]").unwrap();
        assert!(repr.resolve(1, 1, 5, "q").is_err());
    }
}
