//! Small dense linear-algebra helpers shared by the backward solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `(m + mᵀ) / 2`, replacing `m`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let mt = m.transpose();
    *m += mt;
    *m *= 0.5;
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Smallest singular value of `m`.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Inverse of a weight matrix that an assumption requires to be positive
/// definite. The symmetric-part eigenvalue floor is checked first so a failed
/// assumption surfaces as a solvability error (tagged with the grid time `t`)
/// rather than a silent near-singular inverse.
pub fn invert_weight(m: &DMatrix<f64>, floor: f64, t: f64, what: &str) -> Result<DMatrix<f64>> {
    let lambda = min_sym_eigenvalue(m);
    if !(lambda > floor) {
        return Err(Error::Solvability {
            time: t,
            what: format!("{what} has min eigenvalue {lambda:.3e} (floor {floor:.3e})"),
        });
    }
    m.clone().try_inverse().ok_or_else(|| Error::Solvability {
        time: t,
        what: format!("{what} is numerically singular"),
    })
}

pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Frobenius norm distance.
pub fn mat_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// Deterministic, summation-order-invariant mean of `values`.
///
/// The values are sorted into a canonical order before a compensated
/// (Neumaier) sum, so relabelling agents permutes simulated trajectories
/// bitwise instead of perturbing the shared average in its last ulp.
pub fn canonical_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values.iter() {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    (sum + comp) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_averages() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 3.0);
    }

    #[test]
    fn invert_weight_rejects_indefinite() {
        let m = DMatrix::from_row_slice(1, 1, &[-2.0]);
        let err = invert_weight(&m, 1e-9, 0.25, "weight").unwrap_err();
        match err {
            Error::Solvability { time, .. } => assert_eq!(time, 0.25),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn canonical_mean_is_permutation_invariant() {
        let base = [1.0e8, -3.25, 7.5e-9, 2.5, -1.0e8, 0.125];
        let mut a = base;
        let mut b = base;
        b.swap(0, 4);
        b.swap(1, 5);
        b.reverse();
        assert_eq!(canonical_mean(&mut a).to_bits(), canonical_mean(&mut b).to_bits());
    }
}
