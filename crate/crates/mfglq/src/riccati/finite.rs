//! Coupled finite-population backward system.
//!
//! The five matrix unknowns (P, K, Pi, S, M) of the N-agent costate
//! representation are mutually coupled through the population-size-weighted
//! combinations below and are advanced as one stacked state. With
//! `v = 1/N`, `u = (N-1)/N`:
//!
//! ```text
//! Y  = P + vK                     (effective own-state weight)
//! W1 = vP + u Pi - vS             (average-costate own coefficient)
//! W2 = vK + S + u M               (average-costate mean coefficient)
//! V1 = v (P + vK - S - vM)        (average own-noise pairing, own part)
//! V2 = vP + v^2 K + u S + u v M   (average own-noise pairing, mean part)
//! U3 = vP + vK + u (Pi + S + M)   (average common-noise pairing)
//! ```
//!
//! Effective weights `Re = R + D'YD + D0'PD0`, `Rm = Re + D0'KD0`,
//! numerators `Pt = B'P + D'YC + D0'PC0`,
//! `Kt = B'K + D'YF + D0'PF0 + D0'K(C0+F0)`, gain kernels `Ge = Re^{-1}Pt`,
//! `Gm = Rm^{-1}(Pt+Kt)`. The offset pair (phi, psi) for this system is
//! solved through the same stack by the sibling module.

use nalgebra::{DMatrix, DVector};

use super::{read_mat, read_vec, write_mat, write_vec, MatPath, VecPath};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::GameConfig;
use crate::rk4;

/// Solutions of the finite-population system with its derived schedules.
#[derive(Debug, Clone)]
pub struct FiniteNRiccatiSolutions {
    pub agents: usize,
    pub p: MatPath,
    pub k: MatPath,
    pub pi: MatPath,
    pub s: MatPath,
    pub m: MatPath,
    pub r_eff: MatPath,
    pub p_tilde: MatPath,
    pub k_tilde: MatPath,
}

pub(crate) struct FiniteRaw {
    pub p: MatPath,
    pub k: MatPath,
    pub pi: MatPath,
    pub s: MatPath,
    pub m: MatPath,
    pub phi: Option<VecPath>,
    pub psi: Option<VecPath>,
}

fn terminal_state(cfg: &GameConfig, agents: usize, with_offsets: bool) -> DVector<f64> {
    let n = cfg.dims.state;
    let nn = n * n;
    let v = 1.0 / agents as f64;
    let g = &cfg.cost.terminal_weight;
    let g0 = &cfg.cost.terminal_coupling;
    let eta0 = &cfg.cost.terminal_target;
    let eye = DMatrix::<f64>::identity(n, n);
    let lead = (&eye - g0 * v).transpose() * g; // (I - G0/N)' G

    let dim = 5 * nn + if with_offsets { 2 * n } else { 0 };
    let mut buf = DVector::zeros(dim);
    write_mat(buf.as_mut_slice(), 0, &lead);
    write_mat(buf.as_mut_slice(), nn, &(-(&lead * g0)));
    write_mat(buf.as_mut_slice(), 2 * nn, &(-(g0.transpose() * g * v)));
    // S(T) = 0 already.
    write_mat(buf.as_mut_slice(), 4 * nn, &(g0.transpose() * g * g0 * v));
    if with_offsets {
        write_vec(buf.as_mut_slice(), 5 * nn, &(-(&lead * eta0)));
        write_vec(buf.as_mut_slice(), 5 * nn + n, &(g0.transpose() * g * eta0 * v));
    }
    buf
}

#[allow(clippy::too_many_arguments)]
fn finite_rhs(
    cfg: &GameConfig,
    agents: usize,
    with_offsets: bool,
    floor: f64,
    j: usize,
    t: f64,
    y: &DVector<f64>,
    dy: &mut DVector<f64>,
) -> Result<()> {
    let n = cfg.dims.state;
    let nn = n * n;
    let v = 1.0 / agents as f64;
    let u = 1.0 - v;
    let co = cfg.coeffs_at(j);
    let (a, b, e) = (co.a, co.b, co.e);
    let (c, d, fm) = (co.c, co.d, co.fm);
    let (c0, d0, f0) = (co.c0, co.d0, co.f0);
    let (q, gamma1) = (co.q, co.gamma1);
    let eye = DMatrix::<f64>::identity(n, n);
    let lead1 = (&eye - gamma1 * v).transpose(); // (I - G1/N)'

    let buf = y.as_slice();
    let p = read_mat(buf, 0, n);
    let k = read_mat(buf, nn, n);
    let pi = read_mat(buf, 2 * nn, n);
    let s = read_mat(buf, 3 * nn, n);
    let m = read_mat(buf, 4 * nn, n);

    let y_eff = &p + &k * v;
    let w1 = &p * v + &pi * u - &s * v;
    let w2 = &k * v + &s + &m * u;
    let v1 = (&p + &k * v - &s - &m * v) * v;
    let v2 = &p * v + &k * (v * v) + &s * u + &m * (u * v);
    let u3 = &p * v + &k * v + (&pi + &s + &m) * u;

    let r_eff = co.r + d.transpose() * &y_eff * d + d0.transpose() * &p * d0;
    let r_inv = linalg::invert_weight(&r_eff, floor, t, "finite-N control weight")?;
    let p_tilde = b.transpose() * &p + d.transpose() * &y_eff * c + d0.transpose() * &p * c0;
    let k_tilde = b.transpose() * &k
        + d.transpose() * &y_eff * fm
        + d0.transpose() * &p * f0
        + d0.transpose() * &k * (c0 + f0);
    let r_mean = &r_eff + d0.transpose() * &k * d0;
    let lam = linalg::invert_weight(&r_mean, floor, t, "finite-N mean control weight")?;
    let gain_self = &r_inv * &p_tilde;
    let gain_mean = &lam * (&p_tilde + &k_tilde);

    let at = a.transpose();
    let et = e.transpose();
    let fmt = fm.transpose();
    let f0t = f0.transpose();
    let br_p = &p * b + c.transpose() * &y_eff * d + c0.transpose() * &p * d0;
    let br_n = &br_p + &k * b + c0.transpose() * &k * d0;
    // Effective closed-loop noise loadings shared by the P and Pi equations.
    let c_cl = c - d * &gain_self;
    let c0_cl = c0 - d0 * &gain_self;

    // P equation.
    let dp = -(&p * a
        + &at * &p
        + c.transpose() * &y_eff * c
        + c0.transpose() * &p * c0
        - &br_p * &gain_self
        + &et * &w1
        + &fmt * &v1 * &c_cl
        + &f0t * &w1 * &c0_cl
        + &lead1 * q);
    write_mat(dy.as_mut_slice(), 0, &dp);

    // K equation.
    let dk = -(&k * (a + e)
        + &p * e
        + &at * &k
        + c.transpose() * &y_eff * fm
        + c0.transpose() * &p * f0
        + c0.transpose() * &k * (c0 + f0)
        + &br_p * &gain_self
        - &br_n * &gain_mean
        + &et * &w2
        + &fmt * (&s + &m * v) * c
        + &fmt * &v2 * fm
        + &fmt * &v1 * d * &gain_self
        - &fmt * &v2 * d * &gain_mean
        + &f0t * &w2 * c0
        + &f0t * &u3 * f0
        + &f0t * &w1 * d0 * &gain_self
        - &f0t * &u3 * d0 * &gain_mean
        - &lead1 * q * gamma1);
    write_mat(dy.as_mut_slice(), nn, &dk);

    // Pi equation.
    let dpi = -(&pi * a
        + &at * &pi
        + c0.transpose() * &pi * c0
        - (&pi * b + c0.transpose() * &pi * d0) * &gain_self
        + &et * &w1
        + &fmt * &v1 * &c_cl
        + &f0t * &w1 * &c0_cl
        - gamma1.transpose() * q * v);
    write_mat(dy.as_mut_slice(), 2 * nn, &dpi);

    // S equation.
    let s_m = &s + &m * v;
    let ds = -(&s * a
        + &at * &s
        + c.transpose() * &s_m * c
        + c0.transpose() * &s * c0
        - (&s * b + c.transpose() * &s_m * d + c0.transpose() * &s * d0) * &gain_self);
    write_mat(dy.as_mut_slice(), 3 * nn, &ds);

    // M equation.
    let pi_s = &pi + &s;
    let dm = -(&at * &m
        + &m * (a + e)
        + &pi_s * e
        + c.transpose() * &s_m * fm
        + c0.transpose() * &pi_s * f0
        + c0.transpose() * &m * (c0 + f0)
        + &et * &w2
        + &fmt * &s_m * c
        + &fmt * &v2 * fm
        + &f0t * &w2 * c0
        + &f0t * &u3 * f0
        + (&pi_s * b
            + c.transpose() * &s_m * d
            + c0.transpose() * &pi_s * d0
            + &fmt * &v1 * d
            + &f0t * &w1 * d0)
            * &gain_self
        - (&pi_s * b
            + &m * b
            + c.transpose() * &s_m * d
            + c0.transpose() * (&pi_s + &m) * d0
            + &fmt * &v2 * d
            + &f0t * &u3 * d0)
            * &gain_mean
        + gamma1.transpose() * q * gamma1 * v);
    write_mat(dy.as_mut_slice(), 4 * nn, &dm);

    if !with_offsets {
        return Ok(());
    }

    let phi = read_vec(buf, 5 * nn, n);
    let psi = read_vec(buf, 5 * nn + n, n);
    let (f, g, g0v) = (co.f, co.g, co.g0);
    let (eta1, eta2) = (co.eta1, co.eta2);
    let n_sum = &p + &k;

    let phi_ctrl =
        b.transpose() * &phi + d.transpose() * &y_eff * g + d0.transpose() * &n_sum * g0v
            - co.r * eta2;
    let lam_phi = &lam * &phi_ctrl;

    // phi equation.
    let dphi = -((&at + &et * v) * &phi
        + &et * &psi * u
        + &n_sum * f
        - (&n_sum * b
            + c.transpose() * &y_eff * d
            + c0.transpose() * &n_sum * d0
            + &fmt * &v2 * d
            + &f0t * &u3 * d0)
            * &lam_phi
        + (c.transpose() * &y_eff + &fmt * &v2) * g
        + (c0.transpose() * &n_sum + &f0t * &u3) * g0v
        - &lead1 * q * eta1);
    write_vec(dy.as_mut_slice(), 5 * nn, &dphi);

    // psi equation.
    let pi_s_m = &pi + &s + &m;
    let dpsi = -((&at + &et * u) * &psi
        + &et * &phi * v
        + &pi_s_m * (f - b * &lam_phi)
        + (c.transpose() * &s_m + &fmt * &v2) * (g - d * &lam_phi)
        + (c0.transpose() * &pi_s_m + &f0t * &u3) * (g0v - d0 * &lam_phi)
        + gamma1.transpose() * q * eta1 * v);
    write_vec(dy.as_mut_slice(), 5 * nn + n, &dpsi);
    Ok(())
}

pub(crate) fn integrate_finite_raw(
    cfg: &GameConfig,
    agents: usize,
    with_offsets: bool,
) -> Result<FiniteRaw> {
    cfg.ensure_valid()?;
    if agents < 2 {
        return Err(Error::config(format!("finite-N solve needs N >= 2, got {agents}")));
    }
    let floor = cfg.weight_floor();
    let n = cfg.dims.state;
    let nn = n * n;
    let terminal = terminal_state(cfg, agents, with_offsets);
    let nodes = rk4::integrate_backward(
        &cfg.grid,
        terminal,
        |j, t, y, dy| finite_rhs(cfg, agents, with_offsets, floor, j, t, y, dy),
        |_, _| Ok(()),
    )?;
    let take_mat =
        |idx: usize| -> MatPath { nodes.iter().map(|y| read_mat(y.as_slice(), idx * nn, n)).collect() };
    let take_vec =
        |at: usize| -> VecPath { nodes.iter().map(|y| read_vec(y.as_slice(), at, n)).collect() };
    Ok(FiniteRaw {
        p: take_mat(0),
        k: take_mat(1),
        pi: take_mat(2),
        s: take_mat(3),
        m: take_mat(4),
        phi: with_offsets.then(|| take_vec(5 * nn)),
        psi: with_offsets.then(|| take_vec(5 * nn + n)),
    })
}

pub(crate) fn derived_finite(
    cfg: &GameConfig,
    agents: usize,
    p: &MatPath,
    k: &MatPath,
) -> (MatPath, MatPath, MatPath) {
    let v = 1.0 / agents as f64;
    let nodes = cfg.grid.nodes();
    let mut r_eff = Vec::with_capacity(nodes);
    let mut p_tilde = Vec::with_capacity(nodes);
    let mut k_tilde = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let co = cfg.coeffs_at(j);
        let y_eff = &p[j] + &k[j] * v;
        r_eff.push(co.r + co.d.transpose() * &y_eff * co.d + co.d0.transpose() * &p[j] * co.d0);
        p_tilde.push(
            co.b.transpose() * &p[j]
                + co.d.transpose() * &y_eff * co.c
                + co.d0.transpose() * &p[j] * co.c0,
        );
        k_tilde.push(
            co.b.transpose() * &k[j]
                + co.d.transpose() * &y_eff * co.fm
                + co.d0.transpose() * &p[j] * co.f0
                + co.d0.transpose() * &k[j] * (co.c0 + co.f0),
        );
    }
    (r_eff, p_tilde, k_tilde)
}

/// Solve the five coupled finite-N equations for the given agent count.
pub fn solve_finite_n(cfg: &GameConfig, agents: usize) -> Result<FiniteNRiccatiSolutions> {
    let raw = integrate_finite_raw(cfg, agents, false)?;
    let (r_eff, p_tilde, k_tilde) = derived_finite(cfg, agents, &raw.p, &raw.k);
    Ok(FiniteNRiccatiSolutions {
        agents,
        p: raw.p,
        k: raw.k,
        pi: raw.pi,
        s: raw.s,
        m: raw.m,
        r_eff,
        p_tilde,
        k_tilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::production_preset;
    use crate::riccati::limit::solve_limit;
    use crate::schedule::MatSchedule;
    use nalgebra::DMatrix;

    #[test]
    fn decoupled_system_matches_limit_for_every_n() {
        let mut cfg = production_preset(10, 200, 0);
        cfg.dynamics.drift.mean = MatSchedule::scalar(0.0);
        cfg.cost.mean_coupling = MatSchedule::scalar(0.0);
        let limit = solve_limit(&cfg).unwrap();
        for agents in [2usize, 7, 64] {
            let fin = solve_finite_n(&cfg, agents).unwrap();
            for j in 0..cfg.grid.nodes() {
                assert!((fin.p[j][(0, 0)] - limit.p[j][(0, 0)]).abs() < 1e-10);
                assert_eq!(fin.k[j][(0, 0)], 0.0);
                assert_eq!(fin.pi[j][(0, 0)], 0.0);
                assert_eq!(fin.s[j][(0, 0)], 0.0);
                assert_eq!(fin.m[j][(0, 0)], 0.0);
            }
        }
    }

    #[test]
    fn terminal_conditions_exact() {
        let mut cfg = production_preset(10, 100, 0);
        cfg.cost.terminal_coupling = DMatrix::from_element(1, 1, 0.5);
        let agents = 2;
        let fin = solve_finite_n(&cfg, agents).unwrap();
        let g = cfg.cost.terminal_weight[(0, 0)];
        let g0 = 0.5;
        let v = 0.5;
        let last = cfg.grid.nodes() - 1;
        assert_eq!(fin.p[last][(0, 0)], (1.0 - v * g0) * g);
        assert_eq!(fin.k[last][(0, 0)], -(1.0 - v * g0) * g * g0);
        assert_eq!(fin.pi[last][(0, 0)], -v * g0 * g);
        assert_eq!(fin.s[last][(0, 0)], 0.0);
        assert_eq!(fin.m[last][(0, 0)], v * g0 * g * g0);
    }

    #[test]
    fn production_terminal_with_zero_coupling() {
        // G0 = 0 in the production preset: P_N(T) = G exactly for any N.
        let cfg = production_preset(10, 100, 0);
        let fin = solve_finite_n(&cfg, 2).unwrap();
        let last = cfg.grid.nodes() - 1;
        assert_eq!(fin.p[last][(0, 0)], 1.0);
        assert_eq!(fin.k[last][(0, 0)], 0.0);
    }

    #[test]
    fn rejects_single_agent() {
        let cfg = production_preset(10, 100, 0);
        assert!(solve_finite_n(&cfg, 1).is_err());
    }

    #[test]
    fn s_vanishes_in_production_preset() {
        // C = 0 kills every source term of the S equation here.
        let cfg = production_preset(10, 300, 0);
        let fin = solve_finite_n(&cfg, 300).unwrap();
        let max_s = fin.s.iter().map(|m| m.norm()).fold(0.0, f64::max);
        assert_eq!(max_s, 0.0);
    }
}
