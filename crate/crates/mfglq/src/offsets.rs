//! Backward offset (non-homogeneous) equations for the limit and finite-N
//! systems, under the deterministic-coefficient reduction.
//!
//! With deterministic data the unique adapted solutions of the two backward
//! equations are deterministic, so their martingale integrands vanish
//! identically; the pair (phi, psi) then solves coupled linear ODEs that are
//! advanced jointly with the matrix unknowns (see the riccati module docs
//! for the drifts). The control-space aggregate assembled here is
//!
//! ```text
//! Phi = B'phi + D'P g + D0'(P+K) g0 - R eta2            (limit)
//! Phi = B'phi + D'(P + K/N) g + D0'(P+K) g0 - R eta2    (finite N)
//! ```

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::GameConfig;
use crate::riccati::{FiniteNRiccatiSolutions, LimitRiccatiSolutions, MatPath, VecPath};
use crate::{linalg, riccati};

/// Which system an offset solution belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OffsetVariant {
    Limit,
    FiniteN { agents: usize },
}

/// Offset pair with its martingale coefficients (identically zero in the
/// deterministic reduction) and the control-space aggregate.
#[derive(Debug, Clone)]
pub struct NonhomogeneousSolution {
    pub variant: OffsetVariant,
    pub phi: VecPath,
    pub psi: VecPath,
    /// dW0 integrand of phi; zero under deterministic coefficients.
    pub beta: VecPath,
    /// dW0 integrand of psi; zero under deterministic coefficients.
    pub zeta: VecPath,
    /// Control-space aggregate Phi, one k-vector per node.
    pub phi_ctrl: VecPath,
}

fn check_matches(cfg: &GameConfig, given: &MatPath, internal: &MatPath, what: &str) -> Result<()> {
    if given.len() != internal.len() {
        return Err(Error::GridMismatch(format!(
            "{what}: schedule has {} nodes, expected {}",
            given.len(),
            internal.len()
        )));
    }
    let scale = cfg.cost.terminal_weight.norm().max(1.0);
    for idx in [0, internal.len() / 2, internal.len() - 1] {
        if linalg::mat_dist(&given[idx], &internal[idx]) > 1e-8 * scale {
            return Err(Error::config(format!(
                "{what}: supplied solutions do not match this configuration"
            )));
        }
    }
    Ok(())
}

fn zero_paths(nodes: usize, dim: usize) -> VecPath {
    vec![DVector::zeros(dim); nodes]
}

/// Solve the limit offset pair given solved limit matrices.
pub fn solve_limit_phi_psi(
    cfg: &GameConfig,
    sols: &LimitRiccatiSolutions,
) -> Result<NonhomogeneousSolution> {
    let raw = riccati::integrate_limit_full(cfg)?;
    check_matches(cfg, &sols.p, &raw.p, "limit P")?;
    check_matches(cfg, &sols.k, raw.k.as_ref().expect("level"), "limit K")?;
    let phi = raw.phi.expect("level");
    let psi = raw.psi.expect("level");
    let nodes = cfg.grid.nodes();
    let mut phi_ctrl = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let co = cfg.coeffs_at(j);
        let n_sum = &sols.p[j] + &sols.k[j];
        phi_ctrl.push(
            co.b.transpose() * &phi[j]
                + co.d.transpose() * &sols.p[j] * co.g
                + co.d0.transpose() * &n_sum * co.g0
                - co.r * co.eta2,
        );
    }
    Ok(NonhomogeneousSolution {
        variant: OffsetVariant::Limit,
        phi,
        psi,
        beta: zero_paths(nodes, cfg.dims.state),
        zeta: zero_paths(nodes, cfg.dims.state),
        phi_ctrl,
    })
}

/// Solve the finite-N offset pair given the solved finite-N matrices. The
/// two equations reference each other through the mean-interaction channel
/// and are stepped jointly.
pub fn solve_finite_n_phi_psi(
    cfg: &GameConfig,
    sols: &FiniteNRiccatiSolutions,
) -> Result<NonhomogeneousSolution> {
    let raw = riccati::integrate_finite_full(cfg, sols.agents)?;
    check_matches(cfg, &sols.p, &raw.p, "finite-N P")?;
    check_matches(cfg, &sols.k, &raw.k, "finite-N K")?;
    let phi = raw.phi.expect("offsets requested");
    let psi = raw.psi.expect("offsets requested");
    let nodes = cfg.grid.nodes();
    let v = 1.0 / sols.agents as f64;
    let mut phi_ctrl = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let co = cfg.coeffs_at(j);
        let y_eff = &sols.p[j] + &sols.k[j] * v;
        let n_sum = &sols.p[j] + &sols.k[j];
        phi_ctrl.push(
            co.b.transpose() * &phi[j]
                + co.d.transpose() * &y_eff * co.g
                + co.d0.transpose() * &n_sum * co.g0
                - co.r * co.eta2,
        );
    }
    Ok(NonhomogeneousSolution {
        variant: OffsetVariant::FiniteN { agents: sols.agents },
        phi,
        psi,
        beta: zero_paths(nodes, cfg.dims.state),
        zeta: zero_paths(nodes, cfg.dims.state),
        phi_ctrl,
    })
}
