//! Seeded Euler-Maruyama simulation of the closed-loop population systems:
//! the centralized N-agent dynamics, the common-noise mean-field state, the
//! decentralized auxiliary states, and the realized states they induce.
//!
//! All randomness is derived from `(master seed, scenario, stream)` keys
//! (see `rng`), making every bundle a pure function of the configuration and
//! seed. Agent averages are computed with a canonical-order mean so that
//! relabelling agents permutes trajectories bitwise.

pub mod engine;

pub use engine::{run_scenarios, Execution};

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feedback::GainSchedule;
use crate::linalg::canonical_mean;
use crate::model::{CoeffsAt, GameConfig, InitialStateLaw};
use crate::riccati::VecPath;
use crate::rng;

/// Brownian increments for one scenario: one common stream plus one stream
/// per agent slot, each Normal(0, dt) per step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub master_seed: u64,
    pub scenario: u64,
    pub steps: usize,
    pub dt: f64,
    /// Common-noise increments, length `steps`.
    pub common: Vec<f64>,
    /// Own-noise increments per agent slot, `agents x steps`.
    pub own: Vec<Vec<f64>>,
    /// Identity behind each agent slot; slot `i` draws its noise and its
    /// initial state from streams keyed by `agent_ids[i]`.
    pub agent_ids: Vec<u64>,
}

impl NoiseBundle {
    /// Generate the increments for `agents` slots with identities `0..agents`.
    pub fn generate(
        master_seed: u64,
        scenario: u64,
        agents: usize,
        steps: usize,
        dt: f64,
    ) -> Self {
        let mut common_rng = rng::stream_rng(master_seed, scenario, rng::COMMON_STREAM);
        let common = rng::brownian_increments(&mut common_rng, steps, dt);
        let own = (0..agents)
            .map(|i| {
                let mut r = rng::stream_rng(master_seed, scenario, rng::agent_stream(i as u64));
                rng::brownian_increments(&mut r, steps, dt)
            })
            .collect();
        NoiseBundle {
            master_seed,
            scenario,
            steps,
            dt,
            common,
            own,
            agent_ids: (0..agents as u64).collect(),
        }
    }

    pub fn for_config(cfg: &GameConfig, scenario: u64) -> Self {
        Self::generate(cfg.seed, scenario, cfg.dims.agents, cfg.grid.steps, cfg.grid.dt())
    }

    pub fn agents(&self) -> usize {
        self.own.len()
    }

    /// Relabel agents: slot `i` of the result carries the noise and identity
    /// of slot `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.agents());
        NoiseBundle {
            master_seed: self.master_seed,
            scenario: self.scenario,
            steps: self.steps,
            dt: self.dt,
            common: self.common.clone(),
            own: perm.iter().map(|&p| self.own[p].clone()).collect(),
            agent_ids: perm.iter().map(|&p| self.agent_ids[p]).collect(),
        }
    }
}

/// Which closed-loop system a bundle was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BundleKind {
    Centralized,
    Decentralized,
}

/// Auxiliary decentralized paths.
#[derive(Debug, Clone)]
pub struct DecentralizedPaths {
    /// Mean-field state driven by the common noise only.
    pub mean_field: VecPath,
    /// Per-agent auxiliary states feeding the decentralized controls.
    pub aux_states: Vec<VecPath>,
    /// Average of the auxiliary states.
    pub aux_mean: VecPath,
}

/// One simulated scenario: per-agent states and controls, the realized
/// average, optional decentralized auxiliaries, and the noise that produced
/// them.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub scenario: u64,
    pub kind: BundleKind,
    /// Realized states per agent per node.
    pub states: Vec<VecPath>,
    /// Controls per agent per node (node `j` applies on `[t_j, t_{j+1})`).
    pub controls: Vec<VecPath>,
    /// Realized agent average per node.
    pub mean_state: VecPath,
    pub aux: Option<DecentralizedPaths>,
    pub noise: NoiseBundle,
}

/// I.i.d. initial draws for `agents` slots plus the law mean (the initial
/// datum of the mean-field state).
pub fn sample_initials(
    law: &InitialStateLaw,
    agents: usize,
    master_seed: u64,
    scenario: u64,
) -> (Vec<DVector<f64>>, DVector<f64>) {
    let draws = (0..agents as u64)
        .map(|i| {
            let mut r = rng::stream_rng(master_seed, scenario, rng::initial_stream(i));
            law.sample(&mut r)
        })
        .collect();
    (draws, law.mean())
}

fn initials_for_bundle(law: &InitialStateLaw, noise: &NoiseBundle) -> Vec<DVector<f64>> {
    noise
        .agent_ids
        .iter()
        .map(|&id| {
            let mut r = rng::stream_rng(noise.master_seed, noise.scenario, rng::initial_stream(id));
            law.sample(&mut r)
        })
        .collect()
}

/// One Euler-Maruyama update of the generic agent dynamics.
#[inline]
pub(crate) fn euler_step_into(
    co: &CoeffsAt<'_>,
    dt: f64,
    dw_own: f64,
    dw_common: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    xavg: &DVector<f64>,
    out: &mut DVector<f64>,
) {
    out.copy_from(x);
    // Drift.
    out.gemv(dt, co.a, x, 1.0);
    out.gemv(dt, co.b, u, 1.0);
    out.gemv(dt, co.e, xavg, 1.0);
    out.axpy(dt, co.f, 1.0);
    // Own noise.
    out.gemv(dw_own, co.c, x, 1.0);
    out.gemv(dw_own, co.d, u, 1.0);
    out.gemv(dw_own, co.fm, xavg, 1.0);
    out.axpy(dw_own, co.g, 1.0);
    // Common noise.
    out.gemv(dw_common, co.c0, x, 1.0);
    out.gemv(dw_common, co.d0, u, 1.0);
    out.gemv(dw_common, co.f0, xavg, 1.0);
    out.axpy(dw_common, co.g0, 1.0);
}

pub(crate) fn check_state_finite(x: &DVector<f64>, t: f64) -> Result<()> {
    for &v in x.iter() {
        if !v.is_finite() || v.abs() > 1e12 {
            return Err(Error::Divergence { time: t, what: format!("simulated state hit {v:.3e}") });
        }
    }
    Ok(())
}

/// Canonical-order mean over agents, per state component.
pub(crate) fn agent_mean(states: &[DVector<f64>], scratch: &mut Vec<f64>) -> DVector<f64> {
    let dim = states[0].len();
    let mut out = DVector::zeros(dim);
    for comp in 0..dim {
        scratch.clear();
        scratch.extend(states.iter().map(|s| s[comp]));
        out[comp] = canonical_mean(scratch);
    }
    out
}

/// Simulate the centralized closed-loop system: every agent applies the
/// centralized gains to its own state and the realized average, which is
/// recomputed from the population at every step.
pub fn simulate_centralized(
    cfg: &GameConfig,
    gains: &GainSchedule,
    noise: &NoiseBundle,
) -> Result<TrajectoryBundle> {
    let agents = noise.agents();
    if agents != cfg.dims.agents {
        return Err(Error::config(format!(
            "noise bundle has {agents} agents, config expects {}",
            cfg.dims.agents
        )));
    }
    if gains.nodes() != cfg.grid.nodes() {
        return Err(Error::GridMismatch("gain schedule does not match the grid".into()));
    }
    let steps = cfg.grid.steps;
    let nodes = steps + 1;
    let n = cfg.dims.state;
    let k = cfg.dims.control;
    let dt = cfg.grid.dt();

    let initials = initials_for_bundle(&cfg.initial, noise);
    let mut states: Vec<VecPath> = (0..agents).map(|_| Vec::with_capacity(nodes)).collect();
    let mut controls: Vec<VecPath> = (0..agents).map(|_| Vec::with_capacity(nodes)).collect();
    let mut mean_state: VecPath = Vec::with_capacity(nodes);

    let mut current: Vec<DVector<f64>> = initials;
    let mut scratch = Vec::with_capacity(agents);
    let mut u = DVector::zeros(k);
    let mut next = DVector::zeros(n);

    mean_state.push(agent_mean(&current, &mut scratch));
    for (i, x) in current.iter().enumerate() {
        states[i].push(x.clone());
    }

    for j in 0..steps {
        let co = cfg.coeffs_at(j);
        let xavg = mean_state[j].clone();
        let t_next = cfg.grid.node(j + 1);
        for i in 0..agents {
            gains.control_into(j, &current[i], &xavg, &mut u);
            controls[i].push(u.clone());
            euler_step_into(&co, dt, noise.own[i][j], noise.common[j], &current[i], &u, &xavg, &mut next);
            check_state_finite(&next, t_next)?;
            current[i].copy_from(&next);
            states[i].push(next.clone());
        }
        mean_state.push(agent_mean(&current, &mut scratch));
    }
    // Terminal-node controls for completeness of the schedule.
    let xavg = mean_state[steps].clone();
    for i in 0..agents {
        controls[i].push(gains.control(steps, &current[i], &xavg));
    }

    Ok(TrajectoryBundle {
        scenario: noise.scenario,
        kind: BundleKind::Centralized,
        states,
        controls,
        mean_state,
        aux: None,
        noise: noise.clone(),
    })
}

/// Simulate the mean-field state (driven by the common noise only) under the
/// decentralized gains.
pub fn simulate_mean_field(
    cfg: &GameConfig,
    gains: &GainSchedule,
    noise: &NoiseBundle,
) -> Result<VecPath> {
    let steps = cfg.grid.steps;
    let dt = cfg.grid.dt();
    let mut path = Vec::with_capacity(steps + 1);
    let mut x = cfg.initial.mean();
    let mut u = DVector::zeros(cfg.dims.control);
    let mut next = DVector::zeros(cfg.dims.state);
    path.push(x.clone());
    for j in 0..steps {
        let co = cfg.coeffs_at(j);
        gains.control_into(j, &x, &x, &mut u);
        euler_step_into(&co, dt, 0.0, noise.common[j], &x, &u, &x, &mut next);
        check_state_finite(&next, cfg.grid.node(j + 1))?;
        x.copy_from(&next);
        path.push(x.clone());
    }
    Ok(path)
}

/// Simulate the decentralized system with one noise bundle: the auxiliary
/// per-agent states feed the controls, and the realized states are driven by
/// those controls together with the true realized average.
pub fn simulate_decentralized(
    cfg: &GameConfig,
    gains: &GainSchedule,
    noise: &NoiseBundle,
) -> Result<TrajectoryBundle> {
    let agents = noise.agents();
    if agents != cfg.dims.agents {
        return Err(Error::config(format!(
            "noise bundle has {agents} agents, config expects {}",
            cfg.dims.agents
        )));
    }
    if gains.nodes() != cfg.grid.nodes() {
        return Err(Error::GridMismatch("gain schedule does not match the grid".into()));
    }
    let steps = cfg.grid.steps;
    let nodes = steps + 1;
    let n = cfg.dims.state;
    let k = cfg.dims.control;
    let dt = cfg.grid.dt();

    let initials = initials_for_bundle(&cfg.initial, noise);
    let mut realized: Vec<VecPath> = (0..agents).map(|_| Vec::with_capacity(nodes)).collect();
    let mut aux: Vec<VecPath> = (0..agents).map(|_| Vec::with_capacity(nodes)).collect();
    let mut controls: Vec<VecPath> = (0..agents).map(|_| Vec::with_capacity(nodes)).collect();
    let mut mean_state: VecPath = Vec::with_capacity(nodes);
    let mut aux_mean: VecPath = Vec::with_capacity(nodes);
    let mut mean_field: VecPath = Vec::with_capacity(nodes);

    let mut cur_real = initials.clone();
    let mut cur_aux = initials;
    let mut mf = cfg.initial.mean();
    let mut scratch = Vec::with_capacity(agents);
    let mut u = DVector::zeros(k);
    let mut next = DVector::zeros(n);

    for i in 0..agents {
        realized[i].push(cur_real[i].clone());
        aux[i].push(cur_aux[i].clone());
    }
    mean_state.push(agent_mean(&cur_real, &mut scratch));
    aux_mean.push(agent_mean(&cur_aux, &mut scratch));
    mean_field.push(mf.clone());

    for j in 0..steps {
        let co = cfg.coeffs_at(j);
        let t_next = cfg.grid.node(j + 1);
        let xavg_real = mean_state[j].clone();
        let dw0 = noise.common[j];

        for i in 0..agents {
            // Decentralized control reads the auxiliary state and the
            // mean-field path only.
            gains.control_into(j, &cur_aux[i], &mf, &mut u);
            controls[i].push(u.clone());

            euler_step_into(&co, dt, noise.own[i][j], dw0, &cur_real[i], &u, &xavg_real, &mut next);
            check_state_finite(&next, t_next)?;
            cur_real[i].copy_from(&next);
            realized[i].push(next.clone());

            euler_step_into(&co, dt, noise.own[i][j], dw0, &cur_aux[i], &u, &mf, &mut next);
            check_state_finite(&next, t_next)?;
            cur_aux[i].copy_from(&next);
            aux[i].push(next.clone());
        }

        gains.control_into(j, &mf, &mf, &mut u);
        euler_step_into(&co, dt, 0.0, dw0, &mf, &u, &mf, &mut next);
        check_state_finite(&next, t_next)?;
        mf.copy_from(&next);
        mean_field.push(mf.clone());

        mean_state.push(agent_mean(&cur_real, &mut scratch));
        aux_mean.push(agent_mean(&cur_aux, &mut scratch));
    }
    for i in 0..agents {
        controls[i].push(gains.control(steps, &cur_aux[i], &mf));
    }

    Ok(TrajectoryBundle {
        scenario: noise.scenario,
        kind: BundleKind::Decentralized,
        states: realized,
        controls,
        mean_state,
        aux: Some(DecentralizedPaths { mean_field, aux_states: aux, aux_mean }),
        noise: noise.clone(),
    })
}

#[cfg(test)]
mod tests;
