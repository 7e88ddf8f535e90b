//! Constructive solvability criteria for the K equation, via the transformed
//! unknown `N = P + K`:
//!
//! ```text
//! N' + N(A+E) + A'N + C'P(C+F) + C0'N(C0+F0) + Q - Q G1
//!    - (NB + C'PD + C0'N D0) (R + D'PD + D0'N D0)^{-1}
//!      (B'N + D'P(C+F) + D0'N(C0+F0)) = 0,         N(T) = G - G G0.
//! ```
//!
//! Under `D0 = 0`, `F0 = d1 I`, `C0 = d2 I` this is a nonsymmetric Riccati
//! equation whose global existence is equivalent (Radon's lemma) to the
//! invertibility of the top block of the fundamental matrix of the
//! associated 2n-dimensional linear system. Under `F = F0 = 0`, `E = d3 I`,
//! `G1 = d4 I`, `G0 = d5 I` with the deltas in (0, 1] it becomes a standard
//! Riccati equation with nonnegative weights, solvable directly.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{read_mat, write_mat, MatPath};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::GameConfig;
use crate::rk4;
use crate::schedule::MatSchedule;

/// Tolerance on the structural preconditions (schedules equal to delta*I).
const STRUCT_TOL: f64 = 1e-12;
/// Singular-value threshold declaring the test matrix nonsingular.
const NONSINGULAR_TOL: f64 = 1e-9;

fn schedule_is_scaled_identity(s: &MatSchedule, n: usize, nodes: usize, scale: f64) -> bool {
    let id = DMatrix::<f64>::identity(n, n) * scale;
    (0..nodes).all(|j| (s.at(j) - &id).norm() <= STRUCT_TOL * scale.abs().max(1.0))
}

/// Fundamental-matrix (Radon) solvability check.
#[derive(Debug, Clone, Serialize)]
pub struct FundamentalMatrixCheck {
    pub delta1: f64,
    pub delta2: f64,
    /// Smallest singular value of the test matrix per grid node.
    pub test_sigma_min: Vec<f64>,
    /// First node time at which the test matrix is numerically singular.
    pub first_singular: Option<f64>,
    pub nonsingular: bool,
}

/// Checks well-posedness of the K equation when the common-noise coefficients
/// are `D0 = 0`, `F0 = delta1 * I`, `C0 = delta2 * I`.
///
/// Integrates the 2n-dimensional linear system for the fundamental matrix
/// `Psi` backward from `Psi(T) = I` (jointly with P, whose values enter the
/// blocks) and reports the smallest singular value of
/// `[I 0] Psi(t) [I; G - G G0]` at every node.
pub fn solvability_fundamental_matrix(
    cfg: &GameConfig,
    delta1: f64,
    delta2: f64,
) -> Result<FundamentalMatrixCheck> {
    cfg.ensure_valid()?;
    let n = cfg.dims.state;
    let nodes = cfg.grid.nodes();
    if delta1 <= 0.0 || delta2 <= 0.0 {
        return Err(Error::Precondition("deltas must be positive".into()));
    }
    if !cfg.dynamics.common_noise.control.is_zero() {
        return Err(Error::Precondition(
            "fundamental-matrix check requires a control-free common diffusion (D0 = 0)".into(),
        ));
    }
    if !schedule_is_scaled_identity(&cfg.dynamics.common_noise.mean, n, nodes, delta1) {
        return Err(Error::Precondition(format!(
            "common-noise mean coefficient must equal {delta1} * I"
        )));
    }
    if !schedule_is_scaled_identity(&cfg.dynamics.common_noise.state, n, nodes, delta2) {
        return Err(Error::Precondition(format!(
            "common-noise state coefficient must equal {delta2} * I"
        )));
    }

    let floor = cfg.weight_floor();
    let nn = n * n;
    let two_n = 2 * n;
    let dim = nn + two_n * two_n;

    // Terminal: P(T) = G, Psi(T) = identity.
    let mut terminal = DVector::zeros(dim);
    write_mat(terminal.as_mut_slice(), 0, &cfg.cost.terminal_weight);
    write_mat(terminal.as_mut_slice(), nn, &DMatrix::<f64>::identity(two_n, two_n));

    let shift = delta1 * delta2 + delta2 * delta2;
    let nodes_out = rk4::integrate_backward(
        &cfg.grid,
        terminal,
        |j, t, y, dy| {
            let co = cfg.coeffs_at(j);
            let p = read_mat(y.as_slice(), 0, n);
            let psi = read_mat_rect(y.as_slice(), nn, two_n);

            // P equation (same as the limit system with D0 = 0).
            let r_eff = co.r + co.d.transpose() * &p * co.d;
            let r_inv = linalg::invert_weight(&r_eff, floor, t, "R + D'PD")?;
            let p_tilde = co.b.transpose() * &p + co.d.transpose() * &p * co.c;
            let br_p = &p * co.b + co.c.transpose() * &p * co.d;
            let dp = -(&p * co.a
                + co.a.transpose() * &p
                + co.c.transpose() * &p * co.c
                + &p * (delta2 * delta2)
                - &br_p * (&r_inv * &p_tilde)
                + co.q);
            write_mat(dy.as_mut_slice(), 0, &dp);

            // Hamiltonian blocks at the current P.
            let c_cf = co.c + co.fm; // C + F
            let p_ccf = &p * &c_cf;
            let d_rinv = co.d * &r_inv;
            let a1 = co.a + co.e - co.b * &r_inv * co.d.transpose() * &p_ccf;
            let a2 = -(co.b * &r_inv * co.b.transpose());
            let a3 = co.c.transpose() * &p * &d_rinv * co.d.transpose() * &p_ccf
                - co.c.transpose() * &p_ccf
                - co.q
                + co.q * co.gamma1;
            let a4 = -co.a.transpose() - DMatrix::<f64>::identity(n, n) * shift
                + co.c.transpose() * &p * &d_rinv * co.b.transpose();

            let mut h = DMatrix::zeros(two_n, two_n);
            h.view_mut((0, 0), (n, n)).copy_from(&a1);
            h.view_mut((0, n), (n, n)).copy_from(&a2);
            h.view_mut((n, 0), (n, n)).copy_from(&a3);
            h.view_mut((n, n), (n, n)).copy_from(&a4);

            let dpsi = &h * &psi;
            write_mat(dy.as_mut_slice(), nn, &dpsi);
            Ok(())
        },
        |_, y| {
            let mut p = read_mat(y.as_slice(), 0, n);
            linalg::symmetrize(&mut p);
            write_mat(y.as_mut_slice(), 0, &p);
            Ok(())
        },
    )?;

    let g = &cfg.cost.terminal_weight;
    let tail = g - g * &cfg.cost.terminal_coupling; // G - G G0
    let mut test_sigma_min = Vec::with_capacity(nodes);
    for y in &nodes_out {
        let psi = read_mat_rect(y.as_slice(), nn, two_n);
        let psi11 = psi.view((0, 0), (n, n)).clone_owned();
        let psi12 = psi.view((0, n), (n, n)).clone_owned();
        let test = psi11 + psi12 * &tail;
        test_sigma_min.push(linalg::min_singular_value(&test));
    }
    let first_singular = test_sigma_min
        .iter()
        .position(|&s| s <= NONSINGULAR_TOL)
        .map(|j| cfg.grid.node(j));
    Ok(FundamentalMatrixCheck {
        delta1,
        delta2,
        nonsingular: first_singular.is_none(),
        test_sigma_min,
        first_singular,
    })
}

fn read_mat_rect(buf: &[f64], at: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, &buf[at..at + n * n])
}

/// Standard-Riccati solvability check.
#[derive(Debug, Clone)]
pub struct StandardRiccatiCheck {
    pub delta3: f64,
    pub delta4: f64,
    pub delta5: f64,
    pub solvable: bool,
    /// K = N - P recovered from the transformed equation.
    pub k: MatPath,
}

/// Checks well-posedness of the K equation when `F = F0 = 0`, `E = delta3 I`,
/// `G1 = delta4 I`, `G0 = delta5 I` with deltas in (0, 1], by solving the
/// transformed equation directly (its weights `(1-delta4) Q` and
/// `(1-delta5) G` are nonnegative, making it a standard Riccati equation).
pub fn solvability_standard_riccati(
    cfg: &GameConfig,
    delta3: f64,
    delta4: f64,
    delta5: f64,
) -> Result<StandardRiccatiCheck> {
    cfg.ensure_valid()?;
    let n = cfg.dims.state;
    let nodes = cfg.grid.nodes();
    for (name, d) in [("delta3", delta3), ("delta4", delta4), ("delta5", delta5)] {
        if !(d > 0.0 && d <= 1.0) {
            return Err(Error::Precondition(format!("{name} must lie in (0, 1], got {d}")));
        }
    }
    if !cfg.dynamics.own_noise.mean.is_zero() || !cfg.dynamics.common_noise.mean.is_zero() {
        return Err(Error::Precondition(
            "standard-Riccati check requires F = 0 and F0 = 0".into(),
        ));
    }
    if !schedule_is_scaled_identity(&cfg.dynamics.drift.mean, n, nodes, delta3) {
        return Err(Error::Precondition(format!("drift mean coefficient must equal {delta3} * I")));
    }
    if !schedule_is_scaled_identity(&cfg.cost.mean_coupling, n, nodes, delta4) {
        return Err(Error::Precondition(format!("cost mean coupling must equal {delta4} * I")));
    }
    let id = DMatrix::<f64>::identity(n, n) * delta5;
    if (&cfg.cost.terminal_coupling - &id).norm() > STRUCT_TOL * delta5.max(1.0) {
        return Err(Error::Precondition(format!("terminal coupling must equal {delta5} * I")));
    }

    let floor = cfg.weight_floor();
    let nn = n * n;
    let mut terminal = DVector::zeros(2 * nn);
    write_mat(terminal.as_mut_slice(), 0, &cfg.cost.terminal_weight);
    write_mat(
        terminal.as_mut_slice(),
        nn,
        &(&cfg.cost.terminal_weight * (1.0 - delta5)),
    );

    let out = rk4::integrate_backward(
        &cfg.grid,
        terminal,
        |j, t, y, dy| {
            let co = cfg.coeffs_at(j);
            let p = read_mat(y.as_slice(), 0, n);
            let nmat = read_mat(y.as_slice(), nn, n);

            let r_eff = co.r + co.d.transpose() * &p * co.d + co.d0.transpose() * &p * co.d0;
            let r_inv = linalg::invert_weight(&r_eff, floor, t, "R + D'PD + D0'PD0")?;
            let p_tilde =
                co.b.transpose() * &p + co.d.transpose() * &p * co.c + co.d0.transpose() * &p * co.c0;
            let br_p = &p * co.b + co.c.transpose() * &p * co.d + co.c0.transpose() * &p * co.d0;
            let dp = -(&p * co.a
                + co.a.transpose() * &p
                + co.c.transpose() * &p * co.c
                + co.c0.transpose() * &p * co.c0
                - &br_p * (&r_inv * &p_tilde)
                + co.q);
            write_mat(dy.as_mut_slice(), 0, &dp);

            let weight = co.r + co.d.transpose() * &p * co.d + co.d0.transpose() * &nmat * co.d0;
            let w_inv = linalg::invert_weight(&weight, floor, t, "R + D'PD + D0'ND0")?;
            let left = &nmat * co.b + co.c0.transpose() * &nmat * co.d0 + co.c.transpose() * &p * co.d;
            let right = co.b.transpose() * &nmat
                + co.d.transpose() * &p * co.c
                + co.d0.transpose() * &nmat * co.c0;
            let dn = -(&nmat * co.a
                + co.a.transpose() * &nmat
                + &nmat * delta3
                + co.c.transpose() * &p * co.c
                + co.c0.transpose() * &nmat * co.c0
                + co.q * (1.0 - delta4)
                - &left * (&w_inv * &right));
            write_mat(dy.as_mut_slice(), nn, &dn);
            Ok(())
        },
        |_, y| {
            for at in [0, nn] {
                let mut m = read_mat(y.as_slice(), at, n);
                linalg::symmetrize(&mut m);
                write_mat(y.as_mut_slice(), at, &m);
            }
            Ok(())
        },
    )?;

    let k = out
        .iter()
        .map(|y| read_mat(y.as_slice(), nn, n) - read_mat(y.as_slice(), 0, n))
        .collect();
    Ok(StandardRiccatiCheck { delta3, delta4, delta5, solvable: true, k })
}
