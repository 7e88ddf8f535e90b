//! Backward Riccati/Lyapunov systems: the mean-field limit equations, the
//! coupled finite-population system, positivity checks, solvability
//! criteria, and the asymptotic gap study.

mod finite;
mod gap;
mod limit;
mod solvability;

pub use finite::{solve_finite_n, FiniteNRiccatiSolutions};
pub use gap::{asymptotic_gap_study, GapEntry, GapFit, GapReport, GapRow};
pub use limit::{
    solve_limit, solve_limit_k, solve_limit_p, solve_limit_pi_s_m, LimitKSolution,
    LimitRiccatiSolutions,
};
pub use solvability::{
    solvability_fundamental_matrix, solvability_standard_riccati, FundamentalMatrixCheck,
    StandardRiccatiCheck,
};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg;
use crate::model::GameConfig;

/// Full limit stack (matrices plus offsets) for the offsets module.
pub(crate) fn integrate_limit_full(cfg: &GameConfig) -> Result<limit::LimitRaw> {
    limit::integrate_raw(cfg, limit::Level::Full)
}

/// Full finite-N stack (matrices plus offsets) for the offsets module.
pub(crate) fn integrate_finite_full(cfg: &GameConfig, agents: usize) -> Result<finite::FiniteRaw> {
    finite::integrate_finite_raw(cfg, agents, true)
}

/// Schedule of matrices, one per grid node.
pub type MatPath = Vec<DMatrix<f64>>;
/// Schedule of vectors, one per grid node.
pub type VecPath = Vec<DVector<f64>>;

pub(crate) fn read_mat(buf: &[f64], at: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, &buf[at..at + n * n])
}

pub(crate) fn write_mat(buf: &mut [f64], at: usize, m: &DMatrix<f64>) {
    buf[at..at + m.len()].copy_from_slice(m.as_slice());
}

pub(crate) fn read_vec(buf: &[f64], at: usize, n: usize) -> DVector<f64> {
    DVector::from_column_slice(&buf[at..at + n])
}

pub(crate) fn write_vec(buf: &mut [f64], at: usize, v: &DVector<f64>) {
    buf[at..at + v.len()].copy_from_slice(v.as_slice())
}

/// Per-node positivity margins of the two control-weight matrices an
/// equilibrium construction must invert (smallest eigenvalue of the
/// symmetric part at every node).
#[derive(Debug, Clone, serde::Serialize)]
pub struct PositivityReport {
    pub times: Vec<f64>,
    /// min eig of R + D'PD + D0'PD0 (resp. its finite-N analogue).
    pub min_eig_weight: Vec<f64>,
    /// min eig of the same matrix plus D0'KD0.
    pub min_eig_weight_mean: Vec<f64>,
    /// First grid node where either margin drops to the threshold or below.
    pub first_violation: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
}

pub(crate) fn positivity_scan(
    times: Vec<f64>,
    weight: Vec<f64>,
    weight_mean: Vec<f64>,
    threshold: f64,
) -> PositivityReport {
    let mut first_violation = None;
    for (j, t) in times.iter().enumerate() {
        if weight[j] <= threshold || weight_mean[j] <= threshold {
            first_violation = Some(*t);
            break;
        }
    }
    PositivityReport {
        pass: first_violation.is_none(),
        times,
        min_eig_weight: weight,
        min_eig_weight_mean: weight_mean,
        first_violation,
        threshold,
    }
}

/// Positivity margins for the limit system.
pub fn check_positivity_limit(cfg: &GameConfig, sols: &LimitRiccatiSolutions) -> PositivityReport {
    let nodes = cfg.grid.nodes();
    let mut weight = Vec::with_capacity(nodes);
    let mut weight_mean = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let cj = cfg.coeffs_at(j);
        let r_eff = &sols.r_eff[j];
        let r_eff_mean = r_eff + cj.d0.transpose() * &sols.k[j] * cj.d0;
        weight.push(linalg::min_sym_eigenvalue(r_eff));
        weight_mean.push(linalg::min_sym_eigenvalue(&r_eff_mean));
    }
    positivity_scan(cfg.grid.times(), weight, weight_mean, cfg.weight_floor())
}

/// Positivity margins for the finite-N system.
pub fn check_positivity_finite(
    cfg: &GameConfig,
    sols: &FiniteNRiccatiSolutions,
) -> PositivityReport {
    let nodes = cfg.grid.nodes();
    let mut weight = Vec::with_capacity(nodes);
    let mut weight_mean = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let cj = cfg.coeffs_at(j);
        let r_eff = &sols.r_eff[j];
        let r_eff_mean = r_eff + cj.d0.transpose() * &sols.k[j] * cj.d0;
        weight.push(linalg::min_sym_eigenvalue(r_eff));
        weight_mean.push(linalg::min_sym_eigenvalue(&r_eff_mean));
    }
    positivity_scan(cfg.grid.times(), weight, weight_mean, cfg.weight_floor())
}
