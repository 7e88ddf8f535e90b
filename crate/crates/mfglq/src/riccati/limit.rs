//! Mean-field limit backward system.
//!
//! Unknowns, all matrix-valued on the grid with terminal data at `T`:
//!
//! ```text
//! P' = -( PA + A'P + C'PC + C0'PC0 - (PB + C'PD + C0'PD0) Ge + Q ),        P(T) = G
//! K' = -( K(A+E) + PE + A'K + C'P F + C0'(P+K)F0 + C0'K C0
//!         + (PB + C'PD + C0'PD0) Ge - (NB + C'PD + C0'N D0) Gm - Q G1 ),   K(T) = -G G0
//! Pi' = -( Pi A + A'Pi + C0'Pi C0 + E'(P+Pi) + F'PC + F0'(P+Pi)C0
//!         - (Pi B + C0'Pi D0 + F'PD + F0'(P+Pi)D0) Ge - G1'Q ),            Pi(T) = -G0'G
//! S' = -( SA + A'S + C'SC + C0'SC0 - (SB + C'SD + C0'SD0) Ge ),            S(T) = 0
//! M' = -( A'M + M(A+E) + C0'Pi F0 + C0'M(C0+F0) + Pi E + E'(K+M) + F'PF
//!         + F0'(K+M)C0 + F0'(P+K+Pi+M)F0
//!         + (Pi B + F'PD + C0'Pi D0 + F0'(P+Pi)D0) Ge
//!         - (Pi B + MB + C0'(Pi+M)D0 + F'PD + F0'(P+K+Pi+M)D0) Gm
//!         + G1'Q G1 ),                                                     M(T) = G0'G G0
//! ```
//!
//! with `N := P + K`, effective weights `Re = R + D'PD + D0'PD0`,
//! `Rm = Re + D0'K D0`, numerators `Pt = B'P + D'PC + D0'PC0`,
//! `Kt = B'K + D'PF + D0'PF0 + D0'K(C0+F0)`, and gain kernels
//! `Ge = Re^{-1} Pt`, `Gm = Rm^{-1}(Pt + Kt)`.
//!
//! The offset pair (solved by the sibling module through the same stack) is
//!
//! ```text
//! phi' = -( A'phi + Nf - (NB + C'PD + C0'N D0) Rm^{-1} Phi
//!           + C'P g + C0'N g0 - Q eta1 ),                                  phi(T) = -G eta0
//! psi' = -( (A'+E')psi + E'phi + (Pi+M)(f - B Rm^{-1} Phi)
//!           + F'P(g - D Rm^{-1} Phi)
//!           + (C0'(Pi+M) + F0'(N+Pi+M))(g0 - D0 Rm^{-1} Phi)
//!           + G1'Q eta1 ),                                                 psi(T) = G0'G eta0
//! ```
//!
//! with `Phi = B'phi + D'P g + D0'N g0 - R eta2`. Everything is advanced as
//! one stacked RK4 state so that stage values of the coupled unknowns stay
//! mutually consistent and the scheme keeps its order.

use nalgebra::DVector;

use super::{read_mat, read_vec, write_mat, write_vec, MatPath, VecPath};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::GameConfig;
use crate::rk4;

/// How much of the stacked system a solve advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd)]
pub(crate) enum Level {
    /// P only.
    P,
    /// P and K.
    Pk,
    /// All five matrix unknowns.
    Matrices,
    /// Matrices plus the offset pair (phi, psi).
    Full,
}

impl Level {
    fn mats(self) -> usize {
        match self {
            Level::P => 1,
            Level::Pk => 2,
            Level::Matrices | Level::Full => 5,
        }
    }

    fn vecs(self) -> usize {
        if self == Level::Full {
            2
        } else {
            0
        }
    }

    fn dim(self, n: usize) -> usize {
        self.mats() * n * n + self.vecs() * n
    }
}

pub(crate) struct LimitRaw {
    pub p: MatPath,
    pub k: Option<MatPath>,
    pub pi: Option<MatPath>,
    pub s: Option<MatPath>,
    pub m: Option<MatPath>,
    pub phi: Option<VecPath>,
    pub psi: Option<VecPath>,
}

fn terminal_state(cfg: &GameConfig, level: Level) -> DVector<f64> {
    let n = cfg.dims.state;
    let g = &cfg.cost.terminal_weight;
    let g0 = &cfg.cost.terminal_coupling;
    let eta0 = &cfg.cost.terminal_target;
    let mut buf = DVector::zeros(level.dim(n));
    let nn = n * n;
    write_mat(buf.as_mut_slice(), 0, g);
    if level >= Level::Pk {
        write_mat(buf.as_mut_slice(), nn, &(-(g * g0)));
    }
    if level >= Level::Matrices {
        write_mat(buf.as_mut_slice(), 2 * nn, &(-(g0.transpose() * g)));
        // S(T) = 0 already.
        write_mat(buf.as_mut_slice(), 4 * nn, &(g0.transpose() * g * g0));
    }
    if level == Level::Full {
        write_vec(buf.as_mut_slice(), 5 * nn, &(-(g * eta0)));
        write_vec(buf.as_mut_slice(), 5 * nn + n, &(g0.transpose() * g * eta0));
    }
    buf
}

fn limit_rhs(
    cfg: &GameConfig,
    level: Level,
    floor: f64,
    j: usize,
    t: f64,
    y: &DVector<f64>,
    dy: &mut DVector<f64>,
) -> Result<()> {
    let n = cfg.dims.state;
    let nn = n * n;
    let co = cfg.coeffs_at(j);
    let (a, b, e) = (co.a, co.b, co.e);
    let (c, d, fm) = (co.c, co.d, co.fm);
    let (c0, d0, f0) = (co.c0, co.d0, co.f0);
    let (q, gamma1) = (co.q, co.gamma1);

    let buf = y.as_slice();
    let p = read_mat(buf, 0, n);

    let at = a.transpose();
    let ct_p = c.transpose() * &p;
    let c0t_p = c0.transpose() * &p;

    let r_eff = co.r + d.transpose() * &p * d + d0.transpose() * &p * d0;
    let r_inv = linalg::invert_weight(&r_eff, floor, t, "R + D'PD + D0'PD0")?;
    let p_tilde = b.transpose() * &p + d.transpose() * &p * c + d0.transpose() * &p * c0;
    let gain_self = &r_inv * &p_tilde;
    let br_p = &p * b + c.transpose() * &p * d + c0.transpose() * &p * d0;

    // P equation.
    let dp = -(&p * a
        + &at * &p
        + &ct_p * c
        + &c0t_p * c0
        - &br_p * &gain_self
        + q);
    write_mat(dy.as_mut_slice(), 0, &dp);
    if level == Level::P {
        return Ok(());
    }

    let k = read_mat(buf, nn, n);
    let n_sum = &p + &k;
    let k_tilde = b.transpose() * &k
        + d.transpose() * &p * fm
        + d0.transpose() * &p * f0
        + d0.transpose() * &k * (c0 + f0);
    let r_mean = &r_eff + d0.transpose() * &k * d0;
    let lam = linalg::invert_weight(&r_mean, floor, t, "R + D'PD + D0'(P+K)D0")?;
    let gain_mean = &lam * (&p_tilde + &k_tilde);
    let br_n = &br_p + &k * b + c0.transpose() * &k * d0;

    // K equation.
    let dk = -(&k * (a + e)
        + &p * e
        + &at * &k
        + &ct_p * fm
        + c0.transpose() * &n_sum * f0
        + c0.transpose() * &k * c0
        + &br_p * &gain_self
        - &br_n * &gain_mean
        - q * gamma1);
    write_mat(dy.as_mut_slice(), nn, &dk);
    if level == Level::Pk {
        return Ok(());
    }

    let pi = read_mat(buf, 2 * nn, n);
    let s = read_mat(buf, 3 * nn, n);
    let m = read_mat(buf, 4 * nn, n);
    let p_pi = &p + &pi;
    let fmt_p = fm.transpose() * &p;
    let f0t = f0.transpose();

    // Pi equation.
    let dpi = -(&pi * a
        + &at * &pi
        + c0.transpose() * &pi * c0
        + e.transpose() * &p_pi
        + &fmt_p * c
        + &f0t * &p_pi * c0
        - (&pi * b + c0.transpose() * &pi * d0 + &fmt_p * d + &f0t * &p_pi * d0) * &gain_self
        - gamma1.transpose() * q);
    write_mat(dy.as_mut_slice(), 2 * nn, &dpi);

    // S equation.
    let ds = -(&s * a
        + &at * &s
        + c.transpose() * &s * c
        + c0.transpose() * &s * c0
        - (&s * b + c.transpose() * &s * d + c0.transpose() * &s * d0) * &gain_self);
    write_mat(dy.as_mut_slice(), 3 * nn, &ds);

    // M equation.
    let k_m = &k + &m;
    let all = &n_sum + &pi + &m;
    let dm = -(&at * &m
        + &m * (a + e)
        + c0.transpose() * &pi * f0
        + c0.transpose() * &m * (c0 + f0)
        + &pi * e
        + e.transpose() * &k_m
        + &fmt_p * fm
        + &f0t * &k_m * c0
        + &f0t * &all * f0
        + (&pi * b + &fmt_p * d + c0.transpose() * &pi * d0 + &f0t * &p_pi * d0) * &gain_self
        - (&pi * b + &m * b + c0.transpose() * (&pi + &m) * d0 + &fmt_p * d + &f0t * &all * d0)
            * &gain_mean
        + gamma1.transpose() * q * gamma1);
    write_mat(dy.as_mut_slice(), 4 * nn, &dm);
    if level == Level::Matrices {
        return Ok(());
    }

    let phi = read_vec(buf, 5 * nn, n);
    let psi = read_vec(buf, 5 * nn + n, n);
    let (f, g, g0v) = (co.f, co.g, co.g0);
    let (eta1, eta2) = (co.eta1, co.eta2);

    let phi_ctrl =
        b.transpose() * &phi + d.transpose() * &p * g + d0.transpose() * &n_sum * g0v - co.r * eta2;
    let lam_phi = &lam * &phi_ctrl;

    // phi equation.
    let dphi = -(&at * &phi + &n_sum * f
        - (&n_sum * b + c.transpose() * &p * d + c0.transpose() * &n_sum * d0) * &lam_phi
        + c.transpose() * &p * g
        + c0.transpose() * &n_sum * g0v
        - q * eta1);
    write_vec(dy.as_mut_slice(), 5 * nn, &dphi);

    // psi equation.
    let pi_m = &pi + &m;
    let dpsi = -((&at + e.transpose()) * &psi
        + e.transpose() * &phi
        + &pi_m * (f - b * &lam_phi)
        + &fmt_p * (g - d * &lam_phi)
        + (c0.transpose() * &pi_m + &f0t * &all) * (g0v - d0 * &lam_phi)
        + gamma1.transpose() * q * eta1);
    write_vec(dy.as_mut_slice(), 5 * nn + n, &dpsi);
    Ok(())
}

fn integrate(cfg: &GameConfig, level: Level) -> Result<Vec<DVector<f64>>> {
    cfg.ensure_valid()?;
    let floor = cfg.weight_floor();
    let n = cfg.dims.state;
    let terminal = terminal_state(cfg, level);
    rk4::integrate_backward(
        &cfg.grid,
        terminal,
        |j, t, y, dy| limit_rhs(cfg, level, floor, j, t, y, dy),
        |_j, y| {
            // P stays symmetric in exact arithmetic; enforce it per node.
            let mut p = read_mat(y.as_slice(), 0, n);
            linalg::symmetrize(&mut p);
            write_mat(y.as_mut_slice(), 0, &p);
            Ok(())
        },
    )
}

pub(crate) fn integrate_raw(cfg: &GameConfig, level: Level) -> Result<LimitRaw> {
    let n = cfg.dims.state;
    let nn = n * n;
    let nodes = integrate(cfg, level)?;
    let take_mat = |idx: usize| -> MatPath {
        nodes.iter().map(|y| read_mat(y.as_slice(), idx * nn, n)).collect()
    };
    let take_vec = |at: usize| -> VecPath {
        nodes.iter().map(|y| read_vec(y.as_slice(), at, n)).collect()
    };
    Ok(LimitRaw {
        p: take_mat(0),
        k: (level >= Level::Pk).then(|| take_mat(1)),
        pi: (level >= Level::Matrices).then(|| take_mat(2)),
        s: (level >= Level::Matrices).then(|| take_mat(3)),
        m: (level >= Level::Matrices).then(|| take_mat(4)),
        phi: (level == Level::Full).then(|| take_vec(5 * nn)),
        psi: (level == Level::Full).then(|| take_vec(5 * nn + n)),
    })
}

/// Grid-sampled solutions of the limit system, with the derived control-space
/// quantities the feedback construction needs.
#[derive(Debug, Clone)]
pub struct LimitRiccatiSolutions {
    pub p: MatPath,
    pub k: MatPath,
    pub pi: MatPath,
    pub s: MatPath,
    pub m: MatPath,
    /// Re = R + D'PD + D0'PD0 per node.
    pub r_eff: MatPath,
    /// Pt = B'P + D'PC + D0'PC0 per node.
    pub p_tilde: MatPath,
    /// Kt = B'K + D'PF + D0'PF0 + D0'K(C0+F0) per node.
    pub k_tilde: MatPath,
}

pub(crate) fn derived_limit(
    cfg: &GameConfig,
    p: &MatPath,
    k: &MatPath,
) -> (MatPath, MatPath, MatPath) {
    let nodes = cfg.grid.nodes();
    let mut r_eff = Vec::with_capacity(nodes);
    let mut p_tilde = Vec::with_capacity(nodes);
    let mut k_tilde = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let co = cfg.coeffs_at(j);
        let (pj, kj) = (&p[j], &k[j]);
        r_eff.push(co.r + co.d.transpose() * pj * co.d + co.d0.transpose() * pj * co.d0);
        p_tilde.push(
            co.b.transpose() * pj + co.d.transpose() * pj * co.c + co.d0.transpose() * pj * co.c0,
        );
        k_tilde.push(
            co.b.transpose() * kj
                + co.d.transpose() * pj * co.fm
                + co.d0.transpose() * pj * co.f0
                + co.d0.transpose() * kj * (co.c0 + co.f0),
        );
    }
    (r_eff, p_tilde, k_tilde)
}

/// Solve all five limit matrix equations and assemble the derived schedules.
pub fn solve_limit(cfg: &GameConfig) -> Result<LimitRiccatiSolutions> {
    let raw = integrate_raw(cfg, Level::Matrices)?;
    let (p, k) = (raw.p, raw.k.expect("level"));
    let (r_eff, p_tilde, k_tilde) = derived_limit(cfg, &p, &k);
    Ok(LimitRiccatiSolutions {
        p,
        k,
        pi: raw.pi.expect("level"),
        s: raw.s.expect("level"),
        m: raw.m.expect("level"),
        r_eff,
        p_tilde,
        k_tilde,
    })
}

/// Solve the standalone P equation.
pub fn solve_limit_p(cfg: &GameConfig) -> Result<MatPath> {
    Ok(integrate_raw(cfg, Level::P)?.p)
}

/// K together with the transformed unknown N = P + K.
#[derive(Debug, Clone)]
pub struct LimitKSolution {
    pub k: MatPath,
    pub n_sum: MatPath,
}

/// Solve the K equation given an already-solved P schedule.
///
/// P is re-advanced internally as part of the stacked state (K's stage
/// values need P between nodes); the argument is cross-checked against the
/// internal solution so a stale or foreign P is rejected.
pub fn solve_limit_k(cfg: &GameConfig, p: &MatPath) -> Result<LimitKSolution> {
    let raw = integrate_raw(cfg, Level::Pk)?;
    check_consistent_p(cfg, p, &raw.p)?;
    let k = raw.k.expect("level");
    let n_sum = raw.p.iter().zip(k.iter()).map(|(a, b)| a + b).collect();
    Ok(LimitKSolution { k, n_sum })
}

/// Solve the linear Pi, S, M equations given P and K.
pub fn solve_limit_pi_s_m(
    cfg: &GameConfig,
    p: &MatPath,
    k: &MatPath,
) -> Result<(MatPath, MatPath, MatPath)> {
    let raw = integrate_raw(cfg, Level::Matrices)?;
    check_consistent_p(cfg, p, &raw.p)?;
    check_consistent_p(cfg, k, raw.k.as_ref().expect("level"))?;
    Ok((raw.pi.expect("level"), raw.s.expect("level"), raw.m.expect("level")))
}

fn check_consistent_p(cfg: &GameConfig, given: &MatPath, internal: &MatPath) -> Result<()> {
    if given.len() != internal.len() {
        return Err(Error::GridMismatch(format!(
            "schedule has {} nodes, grid has {}",
            given.len(),
            internal.len()
        )));
    }
    let scale = cfg.cost.terminal_weight.norm().max(1.0);
    for idx in [0, internal.len() / 2, internal.len() - 1] {
        if linalg::mat_dist(&given[idx], &internal[idx]) > 1e-8 * scale {
            return Err(Error::config(
                "supplied schedule does not solve this configuration's backward system",
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{production_preset, CostCoefficients, Dimensions, DynamicsCoefficients, GameConfig, InitialStateLaw};
    use crate::grid::TimeGrid;
    use crate::schedule::MatSchedule;
    use nalgebra::{DMatrix, DVector};

    fn bare_config(n: usize) -> GameConfig {
        GameConfig::new(
            Dimensions::new(n, 1, 4).unwrap(),
            TimeGrid::new(1.0, 64).unwrap(),
            DynamicsCoefficients::zero(n, 1),
            CostCoefficients::zero(n, 1),
            InitialStateLaw::point(DVector::zeros(n)),
            0,
        )
        .unwrap()
    }

    #[test]
    fn stationary_terminal_value() {
        // All dynamics zero, Q = 0, G = I: P stays at the identity.
        let mut cfg = bare_config(2);
        cfg.cost.control_weight = MatSchedule::scalar(1.0);
        cfg.cost.terminal_weight = DMatrix::identity(2, 2);
        let p = solve_limit_p(&cfg).unwrap();
        for pj in &p {
            assert_eq!(pj, &DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn pure_accumulation_of_state_weight() {
        // P' = -Q with Q = 1, G = 0: P(t) = T - t.
        let mut cfg = bare_config(1);
        cfg.cost.control_weight = MatSchedule::scalar(1.0);
        cfg.cost.state_weight = MatSchedule::scalar(1.0);
        let p = solve_limit_p(&cfg).unwrap();
        for (j, pj) in p.iter().enumerate() {
            let t = cfg.grid.node(j);
            assert!((pj[(0, 0)] - (1.0 - t)).abs() < 1e-12);
        }
    }

    #[test]
    fn k_vanishes_without_coupling() {
        let mut cfg = production_preset(10, 200, 0);
        cfg.dynamics.drift.mean = MatSchedule::scalar(0.0);
        cfg.cost.mean_coupling = MatSchedule::scalar(0.0);
        let p = solve_limit_p(&cfg).unwrap();
        let sol = solve_limit_k(&cfg, &p).unwrap();
        for kj in &sol.k {
            assert_eq!(kj[(0, 0)], 0.0);
        }
    }

    #[test]
    fn k_terminal_condition_exact() {
        let mut cfg = production_preset(10, 100, 0);
        cfg.cost.terminal_coupling = DMatrix::from_element(1, 1, 1.0);
        let p = solve_limit_p(&cfg).unwrap();
        let sol = solve_limit_k(&cfg, &p).unwrap();
        let g = cfg.cost.terminal_weight[(0, 0)];
        assert_eq!(sol.k.last().unwrap()[(0, 0)], -g);
    }

    #[test]
    fn s_is_identically_zero() {
        let cfg = production_preset(300, 500, 0);
        let sols = solve_limit(&cfg).unwrap();
        let max_s = sols.s.iter().map(|m| m.norm()).fold(0.0, f64::max);
        assert!(max_s < 1e-12, "max |S| = {max_s}");
    }

    #[test]
    fn pi_m_vanish_without_coupling() {
        let mut cfg = production_preset(10, 200, 0);
        cfg.dynamics.drift.mean = MatSchedule::scalar(0.0);
        cfg.cost.mean_coupling = MatSchedule::scalar(0.0);
        let sols = solve_limit(&cfg).unwrap();
        for j in 0..cfg.grid.nodes() {
            assert_eq!(sols.pi[j][(0, 0)], 0.0);
            assert_eq!(sols.m[j][(0, 0)], 0.0);
        }
    }

    #[test]
    fn grid_refinement_is_fourth_order() {
        let p0 = |steps: usize| {
            let cfg = production_preset(300, steps, 0);
            solve_limit_p(&cfg).unwrap()[0][(0, 0)]
        };
        let (c, f, ff) = (p0(50), p0(100), p0(200));
        let ratio = (c - f).abs() / (f - ff).abs();
        assert!((8.0..40.0).contains(&ratio), "refinement ratio {ratio}");
    }

    #[test]
    fn indefinite_weight_fails_at_the_terminal_time() {
        // R = -10 makes the effective control weight indefinite from the
        // start of the backward sweep; the failure carries t = T.
        let mut cfg = production_preset(10, 100, 0);
        cfg.cost.control_weight = MatSchedule::scalar(-10.0);
        match solve_limit_p(&cfg) {
            Err(crate::error::Error::Solvability { time, .. }) => {
                assert!((time - 1.0).abs() < 1e-12, "violation time {time}")
            }
            other => panic!("expected solvability failure, got {other:?}"),
        }
    }

    #[test]
    fn positive_weight_without_noise_loading_passes_margins() {
        // D = D0 = 0 and R > 0: both margin matrices equal R everywhere.
        let mut cfg = production_preset(10, 100, 0);
        cfg.dynamics.own_noise.control = MatSchedule::scalar(0.0);
        let sols = solve_limit(&cfg).unwrap();
        let report = crate::riccati::check_positivity_limit(&cfg, &sols);
        assert!(report.pass);
        assert!(report.first_violation.is_none());
        assert!(report.min_eig_weight.iter().all(|&e| (e - 10.0).abs() < 1e-12));
    }

    #[test]
    fn stale_p_argument_rejected() {
        let cfg = production_preset(10, 100, 0);
        let other = {
            let mut c2 = cfg.clone();
            c2.cost.state_weight = MatSchedule::scalar(3.0);
            solve_limit_p(&c2).unwrap()
        };
        assert!(solve_limit_k(&cfg, &other).is_err());
    }
}
