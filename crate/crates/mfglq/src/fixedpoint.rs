//! Consistency-condition route to the decentralized strategy.
//!
//! The mean-field term is frozen as an exogenous common-noise-adapted
//! process, one representative agent's control problem is solved, and the
//! frozen process is pinned by requiring it to equal the conditional mean of
//! the optimal state. Matching coefficients in the resulting costate
//! representation `m = Pc x + Kc z + pc` yields a closed backward system for
//! `(Pc, Kc, pc)`; no numerical fixed-point iteration is needed.
//!
//! This module deliberately assembles its equations independently of the
//! direct-route solvers (different composition of the same drift matching):
//! the agreement of the two routes is used as a cross-validation oracle, so
//! they must not share an implementation path.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feedback::{GainKind, GainSchedule};
use crate::linalg;
use crate::model::GameConfig;
use crate::offsets::NonhomogeneousSolution;
use crate::riccati::{LimitRiccatiSolutions, MatPath, VecPath};
use crate::rk4;
use crate::sim::{run_scenarios, simulate_decentralized, Execution, NoiseBundle};
use crate::stats;

/// Solutions of the consistency-condition backward system with the derived
/// control-space schedules.
#[derive(Debug, Clone)]
pub struct CCSolutions {
    pub p: MatPath,
    pub k: MatPath,
    pub phi: VecPath,
    /// Martingale integrand of phi; zero under deterministic coefficients.
    pub beta: VecPath,
    pub r_eff: MatPath,
    pub p_tilde: MatPath,
    pub k_tilde: MatPath,
    pub phi_ctrl: VecPath,
}

/// Solve the consistency-condition system.
pub fn solve_cc_system(cfg: &GameConfig) -> Result<CCSolutions> {
    solve_cc_inner(cfg, 0.0)
}

/// Test hook: solve with the terminal value of the mean coefficient shifted
/// by `k_shift * I`, to let fault-injection checks watch the method-identity
/// verdict fail.
pub fn solve_cc_system_perturbed(cfg: &GameConfig, k_shift: f64) -> Result<CCSolutions> {
    solve_cc_inner(cfg, k_shift)
}

fn solve_cc_inner(cfg: &GameConfig, k_shift: f64) -> Result<CCSolutions> {
    cfg.ensure_valid()?;
    let n = cfg.dims.state;
    let nn = n * n;
    let floor = cfg.weight_floor();

    let g = &cfg.cost.terminal_weight;
    let g0 = &cfg.cost.terminal_coupling;
    let mut terminal = DVector::zeros(2 * nn + n);
    terminal.as_mut_slice()[0..nn].copy_from_slice(g.as_slice());
    let k_term = -(g * g0) + DMatrix::<f64>::identity(n, n) * k_shift;
    terminal.as_mut_slice()[nn..2 * nn].copy_from_slice(k_term.as_slice());
    let phi_term = -(g * &cfg.cost.terminal_target);
    terminal.as_mut_slice()[2 * nn..].copy_from_slice(phi_term.as_slice());

    let out = rk4::integrate_backward(
        &cfg.grid,
        terminal,
        |j, t, y, dy| cc_rhs(cfg, floor, j, t, y, dy),
        |_, y| {
            let mut pc = DMatrix::from_column_slice(n, n, &y.as_slice()[0..nn]);
            linalg::symmetrize(&mut pc);
            y.as_mut_slice()[0..nn].copy_from_slice(pc.as_slice());
            Ok(())
        },
    )?;

    let nodes = cfg.grid.nodes();
    let mut sol = CCSolutions {
        p: Vec::with_capacity(nodes),
        k: Vec::with_capacity(nodes),
        phi: Vec::with_capacity(nodes),
        beta: vec![DVector::zeros(n); nodes],
        r_eff: Vec::with_capacity(nodes),
        p_tilde: Vec::with_capacity(nodes),
        k_tilde: Vec::with_capacity(nodes),
        phi_ctrl: Vec::with_capacity(nodes),
    };
    for (j, y) in out.iter().enumerate() {
        let pc = DMatrix::from_column_slice(n, n, &y.as_slice()[0..nn]);
        let kc = DMatrix::from_column_slice(n, n, &y.as_slice()[nn..2 * nn]);
        let phic = DVector::from_column_slice(&y.as_slice()[2 * nn..]);
        let co = cfg.coeffs_at(j);
        let kernels = ControlKernels::at(&co, &pc, &kc);
        sol.r_eff.push(kernels.weight.clone());
        sol.p_tilde.push(kernels.own_numerator.clone());
        sol.k_tilde.push(kernels.mean_numerator.clone());
        sol.phi_ctrl.push(kernels.offset_numerator(&co, &pc, &kc, &phic));
        sol.p.push(pc);
        sol.k.push(kc);
        sol.phi.push(phic);
    }
    Ok(sol)
}

/// Control-space quantities of the frozen-mean-field problem at one node.
struct ControlKernels {
    /// R + D'PD + D0'PD0.
    weight: DMatrix<f64>,
    /// Same weight shifted by D0'KD0 (acts on the conditional mean).
    weight_mean: DMatrix<f64>,
    /// B'P + D'PC + D0'PC0.
    own_numerator: DMatrix<f64>,
    /// B'K + D'PF + D0'PF0 + D0'K(C0+F0).
    mean_numerator: DMatrix<f64>,
}

impl ControlKernels {
    fn at(co: &crate::model::CoeffsAt<'_>, pc: &DMatrix<f64>, kc: &DMatrix<f64>) -> Self {
        let dt_p = co.d.transpose() * pc;
        let d0t_p = co.d0.transpose() * pc;
        let d0t_k = co.d0.transpose() * kc;
        ControlKernels {
            weight: co.r + &dt_p * co.d + &d0t_p * co.d0,
            weight_mean: co.r + &dt_p * co.d + &d0t_p * co.d0 + &d0t_k * co.d0,
            own_numerator: co.b.transpose() * pc + &dt_p * co.c + &d0t_p * co.c0,
            mean_numerator: co.b.transpose() * kc
                + &dt_p * co.fm
                + &d0t_p * co.f0
                + &d0t_k * (co.c0 + co.f0),
        }
    }

    fn offset_numerator(
        &self,
        co: &crate::model::CoeffsAt<'_>,
        pc: &DMatrix<f64>,
        kc: &DMatrix<f64>,
        phic: &DVector<f64>,
    ) -> DVector<f64> {
        co.b.transpose() * phic + co.d.transpose() * (pc * co.g)
            + co.d0.transpose() * ((pc + kc) * co.g0)
            - co.r * co.eta2
    }
}

fn cc_rhs(
    cfg: &GameConfig,
    floor: f64,
    j: usize,
    t: f64,
    y: &DVector<f64>,
    dy: &mut DVector<f64>,
) -> Result<()> {
    let n = cfg.dims.state;
    let nn = n * n;
    let co = cfg.coeffs_at(j);
    let pc = DMatrix::from_column_slice(n, n, &y.as_slice()[0..nn]);
    let kc = DMatrix::from_column_slice(n, n, &y.as_slice()[nn..2 * nn]);
    let phic = DVector::from_column_slice(&y.as_slice()[2 * nn..]);

    let kernels = ControlKernels::at(&co, &pc, &kc);
    let w_inv = linalg::invert_weight(&kernels.weight, floor, t, "frozen-problem control weight")?;
    let wm_inv =
        linalg::invert_weight(&kernels.weight_mean, floor, t, "frozen-problem mean weight")?;
    // Optimal-feedback kernels of the frozen problem.
    let u_self = -(&w_inv * &kernels.own_numerator);
    let u_mean_sum = -(&wm_inv * (&kernels.own_numerator + &kernels.mean_numerator));
    let u_off = -(&wm_inv * kernels.offset_numerator(&co, &pc, &kc, &phic));

    let n_sum = &pc + &kc;
    let load_own = &pc * co.b + co.c.transpose() * &pc * co.d + co.c0.transpose() * &pc * co.d0;
    let load_sum = &n_sum * co.b
        + co.c.transpose() * &pc * co.d
        + co.c0.transpose() * &n_sum * co.d0;

    let dp = -(co.a.transpose() * &pc
        + &pc * co.a
        + co.c.transpose() * &pc * co.c
        + co.c0.transpose() * &pc * co.c0
        + co.q
        + &load_own * &u_self);
    dy.as_mut_slice()[0..nn].copy_from_slice(dp.as_slice());

    let dk = -(co.a.transpose() * &kc
        + &kc * (co.a + co.e)
        + &pc * co.e
        + co.c.transpose() * &pc * co.fm
        + co.c0.transpose() * &n_sum * co.f0
        + co.c0.transpose() * &kc * co.c0
        - &load_own * &u_self
        + &load_sum * &u_mean_sum
        - co.q * co.gamma1);
    dy.as_mut_slice()[nn..2 * nn].copy_from_slice(dk.as_slice());

    let dphi = -(co.a.transpose() * &phic
        + &n_sum * co.f
        + &load_sum * &u_off
        + co.c.transpose() * (&pc * co.g)
        + co.c0.transpose() * (&n_sum * co.g0)
        - co.q * co.eta1);
    dy.as_mut_slice()[2 * nn..].copy_from_slice(dphi.as_slice());
    Ok(())
}

/// Decentralized gains assembled from the consistency-condition route.
pub fn fixed_point_gains(cfg: &GameConfig, cc: &CCSolutions) -> Result<GainSchedule> {
    let nodes = cfg.grid.nodes();
    let floor = cfg.weight_floor();
    let mut self_gain = Vec::with_capacity(nodes);
    let mut mf_gain = Vec::with_capacity(nodes);
    let mut offset = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let t = cfg.grid.node(j);
        let co = cfg.coeffs_at(j);
        let w_inv = linalg::invert_weight(&cc.r_eff[j], floor, t, "control weight")?;
        let wm = &cc.r_eff[j] + co.d0.transpose() * &cc.k[j] * co.d0;
        let wm_inv = linalg::invert_weight(&wm, floor, t, "mean control weight")?;
        self_gain.push(-(&w_inv * &cc.p_tilde[j]));
        mf_gain.push(&w_inv * &cc.p_tilde[j] - &wm_inv * (&cc.p_tilde[j] + &cc.k_tilde[j]));
        offset.push(-(&wm_inv * &cc.phi_ctrl[j]));
    }
    Ok(GainSchedule { kind: GainKind::FixedPoint, self_gain, mf_gain, offset })
}

/// Positivity margins of the consistency-condition weights (the analogue of
/// the limit-system report; identical node-by-node when the two routes
/// agree).
pub fn check_positivity_cc(cfg: &GameConfig, cc: &CCSolutions) -> crate::riccati::PositivityReport {
    let nodes = cfg.grid.nodes();
    let mut weight = Vec::with_capacity(nodes);
    let mut weight_mean = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let co = cfg.coeffs_at(j);
        let wm = &cc.r_eff[j] + co.d0.transpose() * &cc.k[j] * co.d0;
        weight.push(linalg::min_sym_eigenvalue(&cc.r_eff[j]));
        weight_mean.push(linalg::min_sym_eigenvalue(&wm));
    }
    crate::riccati::positivity_scan(cfg.grid.times(), weight, weight_mean, cfg.weight_floor())
}

/// Sup-norm agreement between the direct and consistency-condition routes.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub sup_p: f64,
    pub sup_k: f64,
    pub sup_phi: f64,
    pub sup_gain: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Method-identity tolerance: the two routes integrate the same equations,
/// so they must agree to rounding accumulation.
pub const IDENTITY_TOL: f64 = 1e-10;

pub fn compare_methods(
    cfg: &GameConfig,
    limit: &LimitRiccatiSolutions,
    limit_off: &NonhomogeneousSolution,
    cc: &CCSolutions,
) -> Result<IdentityReport> {
    if limit.p.len() != cc.p.len() {
        return Err(Error::GridMismatch(format!(
            "direct route has {} nodes, consistency route {}",
            limit.p.len(),
            cc.p.len()
        )));
    }
    let mut sup_p: f64 = 0.0;
    let mut sup_k: f64 = 0.0;
    let mut sup_phi: f64 = 0.0;
    for j in 0..cc.p.len() {
        sup_p = sup_p.max((&limit.p[j] - &cc.p[j]).norm());
        sup_k = sup_k.max((&limit.k[j] - &cc.k[j]).norm());
        sup_phi = sup_phi.max((&limit_off.phi[j] - &cc.phi[j]).norm());
    }
    let direct_gains = crate::feedback::decentralized_gains(cfg, limit, limit_off)?;
    let cc_gains = fixed_point_gains(cfg, cc)?;
    let sup_gain = direct_gains.sup_distance(&cc_gains);
    let pass = sup_p < IDENTITY_TOL
        && sup_k < IDENTITY_TOL
        && sup_phi < IDENTITY_TOL
        && sup_gain < IDENTITY_TOL;
    Ok(IdentityReport { sup_p, sup_k, sup_phi, sup_gain, tolerance: IDENTITY_TOL, pass })
}

/// Conditional-mean (law-of-large-numbers) statistic: per common-noise path,
/// the cross-agent average of the auxiliary states against the simulated
/// mean-field state.
#[derive(Debug, Clone, Serialize)]
pub struct SllnReport {
    pub agents: Vec<usize>,
    pub scenarios: usize,
    /// E sup_t |average - mean field|^2 with standard error, per count.
    pub gap: Vec<(f64, f64)>,
    pub slope: Option<f64>,
}

pub fn conditional_mean_check(
    cfg: &GameConfig,
    agent_counts: &[usize],
    scenarios: u64,
    gains: &GainSchedule,
) -> Result<SllnReport> {
    let mut gap = Vec::with_capacity(agent_counts.len());
    for &agents in agent_counts {
        let cfg_n = cfg.with_agents(agents)?;
        let sup_sq: Vec<Result<f64>> = run_scenarios(scenarios, Execution::auto(), |s| {
            let bundle =
                simulate_decentralized(&cfg_n, gains, &NoiseBundle::for_config(&cfg_n, s))?;
            let aux = bundle.aux.as_ref().expect("decentralized bundle");
            let mut sup: f64 = 0.0;
            for j in 0..cfg_n.grid.nodes() {
                sup = sup.max((&aux.aux_mean[j] - &aux.mean_field[j]).norm_squared());
            }
            Ok(sup)
        });
        let vals = sup_sq.into_iter().collect::<Result<Vec<f64>>>()?;
        gap.push(stats::mean_stderr(&vals));
    }
    let ns: Vec<f64> = agent_counts.iter().map(|&n| n as f64).collect();
    let means: Vec<f64> = gap.iter().map(|&(m, _)| m).collect();
    let slope = if means.iter().all(|&m| m > 0.0) {
        stats::loglog_slope(&ns, &means)
    } else {
        None
    };
    Ok(SllnReport { agents: agent_counts.to_vec(), scenarios: scenarios as usize, gap, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::decentralized_gains;
    use crate::model::{production_preset, InitialStateLaw};
    use crate::offsets::solve_limit_phi_psi;
    use crate::riccati::{check_positivity_limit, solve_limit};
    use crate::schedule::{MatSchedule, VecSchedule};

    #[test]
    fn homogeneous_data_gives_zero_offset() {
        let mut cfg = production_preset(10, 150, 0);
        cfg.dynamics.drift.offset = VecSchedule::scalar(0.0);
        cfg.dynamics.own_noise.offset = VecSchedule::scalar(0.0);
        cfg.dynamics.common_noise.offset = VecSchedule::scalar(0.0);
        cfg.cost.control_target = VecSchedule::scalar(0.0);
        cfg.cost.terminal_target = nalgebra::DVector::zeros(1);
        let cc = solve_cc_system(&cfg).unwrap();
        assert!(cc.phi.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn strongly_degenerate_system_is_identically_zero() {
        // Q = G = 0 and B = D = D0 = 0, A = C = C0 = 0: P solves a trivial
        // equation and stays zero.
        let mut cfg = production_preset(10, 100, 0);
        cfg.dynamics.drift.state = MatSchedule::scalar(0.0);
        cfg.dynamics.drift.control = MatSchedule::scalar(0.0);
        cfg.dynamics.own_noise.control = MatSchedule::scalar(0.0);
        cfg.dynamics.common_noise.state = MatSchedule::scalar(0.0);
        cfg.cost.state_weight = MatSchedule::scalar(0.0);
        cfg.cost.terminal_weight = nalgebra::DMatrix::zeros(1, 1);
        let cc = solve_cc_system(&cfg).unwrap();
        assert!(cc.p.iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn methods_agree_on_the_production_preset() {
        let cfg = production_preset(50, 400, 0);
        let limit = solve_limit(&cfg).unwrap();
        let off = solve_limit_phi_psi(&cfg, &limit).unwrap();
        let cc = solve_cc_system(&cfg).unwrap();
        let report = compare_methods(&cfg, &limit, &off, &cc).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn injected_terminal_fault_breaks_identity() {
        let cfg = production_preset(50, 200, 0);
        let limit = solve_limit(&cfg).unwrap();
        let off = solve_limit_phi_psi(&cfg, &limit).unwrap();
        let cc = solve_cc_system_perturbed(&cfg, 1e-3).unwrap();
        let report = compare_methods(&cfg, &limit, &off, &cc).unwrap();
        assert!(!report.pass);
        assert!(report.sup_k >= 1e-3);
    }

    #[test]
    fn positivity_reports_agree_between_routes() {
        let cfg = production_preset(50, 300, 0);
        let limit = solve_limit(&cfg).unwrap();
        let cc = solve_cc_system(&cfg).unwrap();
        let a = check_positivity_limit(&cfg, &limit);
        let b = check_positivity_cc(&cfg, &cc);
        assert_eq!(a.pass, b.pass);
        for j in 0..a.times.len() {
            assert!((a.min_eig_weight[j] - b.min_eig_weight[j]).abs() < 1e-9);
            assert!((a.min_eig_weight_mean[j] - b.min_eig_weight_mean[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn slln_gap_vanishes_without_idiosyncratic_randomness() {
        let mut cfg = production_preset(10, 100, 2);
        cfg.dynamics.own_noise.control = MatSchedule::scalar(0.0);
        cfg.dynamics.own_noise.offset = VecSchedule::scalar(0.0);
        cfg.initial = InitialStateLaw::point(nalgebra::DVector::from_element(1, 3.0));
        let limit = solve_limit(&cfg).unwrap();
        let off = solve_limit_phi_psi(&cfg, &limit).unwrap();
        let gains = decentralized_gains(&cfg, &limit, &off).unwrap();
        let report = conditional_mean_check(&cfg, &[4, 16], 6, &gains).unwrap();
        for &(m, _) in &report.gap {
            assert!(m < 1e-20, "gap {m}");
        }
        assert!(report.slope.is_none());
    }

    #[test]
    fn singleton_count_reports_gap_only() {
        let cfg = production_preset(8, 100, 1);
        let limit = solve_limit(&cfg).unwrap();
        let off = solve_limit_phi_psi(&cfg, &limit).unwrap();
        let gains = decentralized_gains(&cfg, &limit, &off).unwrap();
        let report = conditional_mean_check(&cfg, &[8], 4, &gains).unwrap();
        assert_eq!(report.gap.len(), 1);
        assert!(report.slope.is_none());
    }
}
