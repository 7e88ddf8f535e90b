//! Feedback strategies: precomputed gain schedules for the centralized and
//! decentralized equilibria, costate reconstruction along simulated
//! trajectories, and the first-order optimality residual.
//!
//! A strategy is `u = self_gain * x + mf_gain * xavg + offset`, per node:
//!
//! ```text
//! self_gain = -Re^{-1} Pt
//! mf_gain   =  Re^{-1} Pt - Rm^{-1} (Pt + Kt)
//! offset    = -Rm^{-1} Phi
//! ```
//!
//! with the effective weights/numerators of the corresponding system (limit
//! or finite-N). Gains are plain arrays rather than closures over solver
//! state so the simulation hot loop stays allocation-free and scenarios can
//! run in parallel.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::GameConfig;
use crate::offsets::{NonhomogeneousSolution, OffsetVariant};
use crate::riccati::{
    check_positivity_finite, check_positivity_limit, FiniteNRiccatiSolutions,
    LimitRiccatiSolutions, MatPath, VecPath,
};
use crate::sim::TrajectoryBundle;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GainKind {
    Centralized { agents: usize },
    Decentralized,
    /// Decentralized strategy assembled from the consistency-condition route.
    FixedPoint,
}

/// Time-indexed feedback coefficients; sample `j` applies on `[t_j, t_{j+1})`.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    pub kind: GainKind,
    /// k x n coefficient of the agent's own state.
    pub self_gain: MatPath,
    /// k x n coefficient of the mean-field / average term.
    pub mf_gain: MatPath,
    /// k-vector offset.
    pub offset: VecPath,
}

impl GainSchedule {
    pub fn nodes(&self) -> usize {
        self.self_gain.len()
    }

    /// Control at node `j` for own state `x` and average `xavg`.
    pub fn control(&self, j: usize, x: &DVector<f64>, xavg: &DVector<f64>) -> DVector<f64> {
        let mut u = self.offset[j].clone();
        u.gemv(1.0, &self.self_gain[j], x, 1.0);
        u.gemv(1.0, &self.mf_gain[j], xavg, 1.0);
        u
    }

    pub(crate) fn control_into(
        &self,
        j: usize,
        x: &DVector<f64>,
        xavg: &DVector<f64>,
        u: &mut DVector<f64>,
    ) {
        u.copy_from(&self.offset[j]);
        u.gemv(1.0, &self.self_gain[j], x, 1.0);
        u.gemv(1.0, &self.mf_gain[j], xavg, 1.0);
    }

    /// Sup over nodes of the entrywise distance to another schedule.
    pub fn sup_distance(&self, other: &GainSchedule) -> f64 {
        let mut sup: f64 = 0.0;
        for j in 0..self.nodes() {
            sup = sup.max((&self.self_gain[j] - &other.self_gain[j]).norm());
            sup = sup.max((&self.mf_gain[j] - &other.mf_gain[j]).norm());
            sup = sup.max((&self.offset[j] - &other.offset[j]).norm());
        }
        sup
    }
}

fn assemble(
    cfg: &GameConfig,
    kind: GainKind,
    r_eff: &MatPath,
    p_tilde: &MatPath,
    k_tilde: &MatPath,
    k: &MatPath,
    phi_ctrl: &VecPath,
) -> Result<GainSchedule> {
    let nodes = cfg.grid.nodes();
    let floor = cfg.weight_floor();
    let mut self_gain = Vec::with_capacity(nodes);
    let mut mf_gain = Vec::with_capacity(nodes);
    let mut offset = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let t = cfg.grid.node(j);
        let co = cfg.coeffs_at(j);
        let r_inv = linalg::invert_weight(&r_eff[j], floor, t, "control weight")?;
        let r_mean = &r_eff[j] + co.d0.transpose() * &k[j] * co.d0;
        let lam = linalg::invert_weight(&r_mean, floor, t, "mean control weight")?;
        let self_g = -(&r_inv * &p_tilde[j]);
        let mf = &r_inv * &p_tilde[j] - &lam * (&p_tilde[j] + &k_tilde[j]);
        let off = -(&lam * &phi_ctrl[j]);
        self_gain.push(self_g);
        mf_gain.push(mf);
        offset.push(off);
    }
    Ok(GainSchedule { kind, self_gain, mf_gain, offset })
}

/// Feedback representation of the centralized equilibrium for the finite-N
/// system. Requires the finite-N positivity margins to hold.
pub fn centralized_gains(
    cfg: &GameConfig,
    sols: &FiniteNRiccatiSolutions,
    off: &NonhomogeneousSolution,
) -> Result<GainSchedule> {
    match off.variant {
        OffsetVariant::FiniteN { agents } if agents == sols.agents => {}
        _ => {
            return Err(Error::config(
                "centralized gains need finite-N offsets for the same agent count",
            ))
        }
    }
    let pos = check_positivity_finite(cfg, sols);
    if !pos.pass {
        return Err(Error::Solvability {
            time: pos.first_violation.unwrap_or(0.0),
            what: "finite-N control weight loses positivity".into(),
        });
    }
    assemble(
        cfg,
        GainKind::Centralized { agents: sols.agents },
        &sols.r_eff,
        &sols.p_tilde,
        &sols.k_tilde,
        &sols.k,
        &off.phi_ctrl,
    )
}

/// Feedback representation of the decentralized strategy from the limit
/// system. Requires the limit positivity margins to hold.
pub fn decentralized_gains(
    cfg: &GameConfig,
    sols: &LimitRiccatiSolutions,
    off: &NonhomogeneousSolution,
) -> Result<GainSchedule> {
    if off.variant != OffsetVariant::Limit {
        return Err(Error::config("decentralized gains need limit offsets"));
    }
    let pos = check_positivity_limit(cfg, sols);
    if !pos.pass {
        return Err(Error::Solvability {
            time: pos.first_violation.unwrap_or(0.0),
            what: "limit control weight loses positivity".into(),
        });
    }
    assemble(
        cfg,
        GainKind::Decentralized,
        &sols.r_eff,
        &sols.p_tilde,
        &sols.k_tilde,
        &sols.k,
        &off.phi_ctrl,
    )
}

// ---------------------------------------------------------------------------
// Costate reconstruction and the stationarity residual.
// ---------------------------------------------------------------------------

/// Costate and diffusion-integrand paths reconstructed along one simulated
/// scenario via the affine representation, for a fixed agent pair (i, j).
#[derive(Debug, Clone)]
pub struct AdjointPath {
    /// Own costate p_i at every node.
    pub p_own: VecPath,
    /// Cross costate p_j (viewed by agent i) at every node.
    pub p_cross: VecPath,
    /// Own-noise integrand paired with the agent's own Brownian motion.
    pub q_own: VecPath,
    /// Own-noise integrand paired with another agent's Brownian motion.
    pub q_cross: VecPath,
    /// Common-noise integrand.
    pub q_common: VecPath,
    /// Sup over nodes of |p_own(T) - terminal datum| over the checked agents.
    pub terminal_residual: f64,
}

/// Reconstructs the finite-N costates for `agent` (own) and `other` (cross)
/// along a centralized bundle.
pub fn reconstruct_adjoints(
    cfg: &GameConfig,
    sols: &FiniteNRiccatiSolutions,
    off: &NonhomogeneousSolution,
    bundle: &TrajectoryBundle,
    agent: usize,
    other: usize,
) -> Result<AdjointPath> {
    let agents = bundle.states.len();
    if agent >= agents || other >= agents || agent == other {
        return Err(Error::MissingPath(format!(
            "agent pair ({agent}, {other}) not available in a bundle of {agents} agents"
        )));
    }
    if sols.agents != agents {
        return Err(Error::config("solutions and bundle disagree on the agent count"));
    }
    let nodes = cfg.grid.nodes();
    let v = 1.0 / agents as f64;
    let mut p_own = Vec::with_capacity(nodes);
    let mut p_cross = Vec::with_capacity(nodes);
    let mut q_own = Vec::with_capacity(nodes);
    let mut q_cross = Vec::with_capacity(nodes);
    let mut q_common = Vec::with_capacity(nodes);

    for j in 0..nodes {
        let co = cfg.coeffs_at(j);
        let x_i = &bundle.states[agent][j];
        let x_o = &bundle.states[other][j];
        let xavg = &bundle.mean_state[j];
        let u_i = &bundle.controls[agent][j];
        let u_o = &bundle.controls[other][j];

        p_own.push(&sols.p[j] * x_i + &sols.k[j] * xavg + &off.phi[j]);
        p_cross.push(&sols.pi[j] * x_i + &sols.s[j] * x_o + &sols.m[j] * xavg + &off.psi[j]);

        // Own diffusion loading of agent i and of the cross agent.
        let load_i = co.c * x_i + co.d * u_i + co.fm * xavg + co.g;
        let load_o = co.c * x_o + co.d * u_o + co.fm * xavg + co.g;
        q_own.push((&sols.p[j] + &sols.k[j] * v) * &load_i);
        q_cross.push(&sols.k[j] * v * &load_o);

        // Common diffusion: the average control comes from the gain
        // representation, not from averaging simulated controls.
        let r_mean = &sols.r_eff[j] + co.d0.transpose() * &sols.k[j] * co.d0;
        let lam =
            linalg::invert_weight(&r_mean, cfg.weight_floor(), cfg.grid.node(j), "mean weight")?;
        let u_avg = -(&lam * ((&sols.p_tilde[j] + &sols.k_tilde[j]) * xavg + &off.phi_ctrl[j]));
        let load_common = co.c0 * x_i + co.d0 * u_i + co.f0 * xavg + co.g0;
        let load_common_avg = (co.c0 + co.f0) * xavg + co.d0 * &u_avg + co.g0;
        q_common.push(&sols.p[j] * &load_common + &sols.k[j] * &load_common_avg);
    }

    // Terminal identity: p_i(T) = (I - G0/N)' G (x_i(T) - G0 xavg(T) - eta0).
    let last = nodes - 1;
    let eye = DMatrix::<f64>::identity(cfg.dims.state, cfg.dims.state);
    let lead = (&eye - &cfg.cost.terminal_coupling * v).transpose() * &cfg.cost.terminal_weight;
    let datum = &lead
        * (&bundle.states[agent][last]
            - &cfg.cost.terminal_coupling * &bundle.mean_state[last]
            - &cfg.cost.terminal_target);
    let terminal_residual = (&p_own[last] - &datum).norm();

    Ok(AdjointPath { p_own, p_cross, q_own, q_cross, q_common, terminal_residual })
}

/// Per-node first-order optimality defect along one simulated scenario:
/// `B'p + D'q + D0'q0 + R u - R eta2`.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualStats {
    pub sup: f64,
    pub rms: f64,
}

pub fn stationarity_residual(
    cfg: &GameConfig,
    adjoints: &AdjointPath,
    bundle: &TrajectoryBundle,
    agent: usize,
) -> ResidualStats {
    let nodes = cfg.grid.nodes();
    let mut sup: f64 = 0.0;
    let mut sq = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let co = cfg.coeffs_at(j);
        let u = &bundle.controls[agent][j];
        let res = co.b.transpose() * &adjoints.p_own[j]
            + co.d.transpose() * &adjoints.q_own[j]
            + co.d0.transpose() * &adjoints.q_common[j]
            + co.r * u
            - co.r * co.eta2;
        let norm = res.norm();
        sup = sup.max(norm);
        sq.push(norm * norm);
    }
    ResidualStats { sup, rms: stats::mean(&sq).sqrt() }
}

/// Sup distance between a centralized and a decentralized schedule for a
/// list of agent counts, with the fitted decay slope.
#[derive(Debug, Clone, Serialize)]
pub struct GainConvergence {
    pub agents: Vec<usize>,
    pub sup_distance: Vec<f64>,
    pub slope: Option<f64>,
}

pub fn gain_convergence(
    cfg: &GameConfig,
    counts: &[usize],
    decentralized: &GainSchedule,
) -> Result<GainConvergence> {
    let mut sup = Vec::with_capacity(counts.len());
    for &agents in counts {
        let fin = crate::riccati::solve_finite_n(cfg, agents)?;
        let off = crate::offsets::solve_finite_n_phi_psi(cfg, &fin)?;
        let gains = centralized_gains(cfg, &fin, &off)?;
        sup.push(gains.sup_distance(decentralized));
    }
    let ns: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let slope = stats::loglog_slope(&ns, &sup);
    Ok(GainConvergence { agents: counts.to_vec(), sup_distance: sup, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{production_preset, GameConfig};
    use crate::offsets::{solve_finite_n_phi_psi, solve_limit_phi_psi};
    use crate::riccati::{solve_finite_n, solve_limit};
    use crate::schedule::{MatSchedule, VecSchedule};
    use crate::sim::{simulate_centralized, NoiseBundle};

    fn centralized_pipeline(cfg: &GameConfig, agents: usize) -> GainSchedule {
        let fin = solve_finite_n(cfg, agents).unwrap();
        let off = solve_finite_n_phi_psi(cfg, &fin).unwrap();
        centralized_gains(cfg, &fin, &off).unwrap()
    }

    #[test]
    fn control_decoupled_dynamics_leave_only_the_target_offset() {
        // B = D = D0 = 0: both state gains vanish and the offset reduces to
        // the control target.
        let mut cfg = production_preset(10, 150, 0);
        cfg.dynamics.drift.control = MatSchedule::scalar(0.0);
        cfg.dynamics.own_noise.control = MatSchedule::scalar(0.0);
        let gains = centralized_pipeline(&cfg, 10);
        for j in 0..cfg.grid.nodes() {
            assert_eq!(gains.self_gain[j][(0, 0)], 0.0);
            assert_eq!(gains.mf_gain[j][(0, 0)], 0.0);
            assert!((gains.offset[j][0] - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_vanishes_without_targets() {
        let mut cfg = production_preset(10, 150, 0);
        cfg.dynamics.drift.offset = VecSchedule::scalar(0.0);
        cfg.dynamics.own_noise.offset = VecSchedule::scalar(0.0);
        cfg.dynamics.common_noise.offset = VecSchedule::scalar(0.0);
        cfg.cost.control_target = VecSchedule::scalar(0.0);
        cfg.cost.terminal_target = DVector::zeros(1);
        let sols = solve_limit(&cfg).unwrap();
        let off = solve_limit_phi_psi(&cfg, &sols).unwrap();
        let gains = decentralized_gains(&cfg, &sols, &off).unwrap();
        assert!(gains.offset.iter().all(|o| o[0] == 0.0));
    }

    #[test]
    fn decoupled_population_collapses_the_mean_gain() {
        let mut cfg = production_preset(10, 150, 0);
        cfg.dynamics.drift.mean = MatSchedule::scalar(0.0);
        cfg.cost.mean_coupling = MatSchedule::scalar(0.0);
        let sols = solve_limit(&cfg).unwrap();
        let off = solve_limit_phi_psi(&cfg, &sols).unwrap();
        let dec = decentralized_gains(&cfg, &sols, &off).unwrap();
        for agents in [2usize, 16, 128] {
            let cen = centralized_pipeline(&cfg, agents);
            for j in 0..cfg.grid.nodes() {
                assert!(
                    (cen.self_gain[j][(0, 0)] - dec.self_gain[j][(0, 0)]).abs() < 1e-10,
                    "self gains must agree for every population size"
                );
                assert_eq!(dec.mf_gain[j][(0, 0)], 0.0);
            }
        }
    }

    #[test]
    fn stationarity_residual_is_roundoff_for_exact_gains() {
        let agents = 20;
        let cfg = production_preset(agents, 300, 5);
        let fin = solve_finite_n(&cfg, agents).unwrap();
        let off = solve_finite_n_phi_psi(&cfg, &fin).unwrap();
        let gains = centralized_gains(&cfg, &fin, &off).unwrap();
        let bundle = simulate_centralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, 0)).unwrap();
        let adj = reconstruct_adjoints(&cfg, &fin, &off, &bundle, 0, 1).unwrap();
        let res = stationarity_residual(&cfg, &adj, &bundle, 0);
        assert!(res.sup < 1e-10, "sup residual {}", res.sup);
        assert!(adj.terminal_residual < 1e-10, "terminal residual {}", adj.terminal_residual);
    }

    #[test]
    fn perturbed_gains_break_stationarity() {
        let agents = 20;
        let cfg = production_preset(agents, 300, 5);
        let fin = solve_finite_n(&cfg, agents).unwrap();
        let off = solve_finite_n_phi_psi(&cfg, &fin).unwrap();
        let mut gains = centralized_gains(&cfg, &fin, &off).unwrap();
        gains.self_gain.iter_mut().for_each(|g| *g *= 1.01);
        let bundle = simulate_centralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, 0)).unwrap();
        let adj = reconstruct_adjoints(&cfg, &fin, &off, &bundle, 0, 1).unwrap();
        let res = stationarity_residual(&cfg, &adj, &bundle, 0);
        assert!(res.sup > 1e-4, "sup residual {}", res.sup);
    }

    #[test]
    fn residual_is_exactly_zero_when_control_is_decoupled() {
        let mut cfg = production_preset(6, 100, 2);
        cfg.dynamics.drift.control = MatSchedule::scalar(0.0);
        cfg.dynamics.own_noise.control = MatSchedule::scalar(0.0);
        let fin = solve_finite_n(&cfg, 6).unwrap();
        let off = solve_finite_n_phi_psi(&cfg, &fin).unwrap();
        let gains = centralized_gains(&cfg, &fin, &off).unwrap();
        let bundle = simulate_centralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, 0)).unwrap();
        let adj = reconstruct_adjoints(&cfg, &fin, &off, &bundle, 0, 1).unwrap();
        let res = stationarity_residual(&cfg, &adj, &bundle, 0);
        assert_eq!(res.sup, 0.0);
    }

    #[test]
    fn identically_seeded_agents_share_their_costate() {
        let cfg = production_preset(2, 100, 8);
        let fin = solve_finite_n(&cfg, 2).unwrap();
        let off = solve_finite_n_phi_psi(&cfg, &fin).unwrap();
        let gains = centralized_gains(&cfg, &fin, &off).unwrap();
        let mut noise = NoiseBundle::for_config(&cfg, 0);
        noise.own[1] = noise.own[0].clone();
        noise.agent_ids[1] = noise.agent_ids[0];
        let bundle = simulate_centralized(&cfg, &gains, &noise).unwrap();
        let adj_a = reconstruct_adjoints(&cfg, &fin, &off, &bundle, 0, 1).unwrap();
        let adj_b = reconstruct_adjoints(&cfg, &fin, &off, &bundle, 1, 0).unwrap();
        for j in 0..cfg.grid.nodes() {
            assert_eq!(adj_a.p_own[j][0].to_bits(), adj_b.p_own[j][0].to_bits());
        }
    }

    #[test]
    fn centralized_gains_approach_decentralized_at_first_order() {
        let cfg = production_preset(10, 200, 0);
        let sols = solve_limit(&cfg).unwrap();
        let off = solve_limit_phi_psi(&cfg, &sols).unwrap();
        let dec = decentralized_gains(&cfg, &sols, &off).unwrap();
        let conv = gain_convergence(&cfg, &[8, 16, 32, 64, 128], &dec).unwrap();
        let slope = conv.slope.expect("slope");
        assert!((-1.3..=-0.7).contains(&slope), "gain slope {slope}");
        for w in conv.sup_distance.windows(2) {
            assert!(w[1] < w[0], "gain distance should shrink with N");
        }
    }
}
