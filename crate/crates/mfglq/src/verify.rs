//! Equilibrium verification: cost evaluation, convexity probing, the
//! population-size convergence study, and parametric deviation tests that
//! bound the equilibrium gap empirically.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feedback::GainSchedule;
use crate::model::GameConfig;
use crate::riccati::VecPath;
use crate::rng;
use crate::sim::{
    self, agent_mean, check_state_finite, euler_step_into, run_scenarios, Execution, NoiseBundle,
    TrajectoryBundle,
};
use crate::stats;

// ---------------------------------------------------------------------------
// Cost functional.
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of one agent's cost with its decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub agent: usize,
    pub scenarios: usize,
    pub total: f64,
    pub stderr: f64,
    pub running_state: f64,
    pub running_control: f64,
    pub terminal: f64,
}

pub(crate) struct CostParts {
    pub total: f64,
    pub state: f64,
    pub control: f64,
    pub terminal: f64,
}

fn quad_form(w: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (w * v).dot(v)
}

/// Cost of one agent's path against a population average path: left-endpoint
/// quadrature of the running terms (matching the Euler discretization) plus
/// the terminal term, with the one-half prefactor.
pub(crate) fn path_cost(
    cfg: &GameConfig,
    states: &VecPath,
    controls: &VecPath,
    mean: &VecPath,
) -> CostParts {
    let steps = cfg.grid.steps;
    let dt = cfg.grid.dt();
    let mut state_term = 0.0;
    let mut control_term = 0.0;
    for j in 0..steps {
        let co = cfg.coeffs_at(j);
        let dev_x = &states[j] - co.gamma1 * &mean[j] - co.eta1;
        let dev_u = &controls[j] - co.eta2;
        state_term += dt * quad_form(co.q, &dev_x);
        control_term += dt * quad_form(co.r, &dev_u);
    }
    let dev_t = &states[steps] - &cfg.cost.terminal_coupling * &mean[steps]
        - &cfg.cost.terminal_target;
    let terminal = quad_form(&cfg.cost.terminal_weight, &dev_t);
    CostParts {
        total: 0.5 * (state_term + control_term + terminal),
        state: 0.5 * state_term,
        control: 0.5 * control_term,
        terminal: 0.5 * terminal,
    }
}

/// Average the cost of `agent` over a set of simulated scenarios.
pub fn evaluate_cost(
    cfg: &GameConfig,
    bundles: &[TrajectoryBundle],
    agent: usize,
) -> Result<CostReport> {
    if bundles.is_empty() {
        return Err(Error::MissingPath("no scenarios supplied".into()));
    }
    let mut totals = Vec::with_capacity(bundles.len());
    let mut state = Vec::with_capacity(bundles.len());
    let mut control = Vec::with_capacity(bundles.len());
    let mut terminal = Vec::with_capacity(bundles.len());
    for b in bundles {
        if agent >= b.states.len() {
            return Err(Error::MissingPath(format!("agent {agent} not in bundle")));
        }
        let parts = path_cost(cfg, &b.states[agent], &b.controls[agent], &b.mean_state);
        totals.push(parts.total);
        state.push(parts.state);
        control.push(parts.control);
        terminal.push(parts.terminal);
    }
    let (total, stderr) = stats::mean_stderr(&totals);
    Ok(CostReport {
        agent,
        scenarios: bundles.len(),
        total,
        stderr,
        running_state: stats::mean(&state),
        running_control: stats::mean(&control),
        terminal: stats::mean(&terminal),
    })
}

// ---------------------------------------------------------------------------
// Convexity probe.
// ---------------------------------------------------------------------------

/// Sampled lower bound on the cost functional's quadratic form in the
/// control perturbation.
#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub trials: usize,
    pub scenarios_per_trial: usize,
    /// Sampled quadratic-form values, one per unit-normalized trial control.
    pub values: Vec<f64>,
    /// Minimum sampled value (uniform-convexity evidence).
    pub min_value: f64,
    pub pass: bool,
}

/// Tolerance on sampled convexity values.
pub const CONVEXITY_TOL: f64 = 1e-8;
const CONVEXITY_SCENARIOS: u64 = 8;
const CONTROL_STREAM_TAG: u64 = 1 << 33;

/// Simulates the homogeneous variational population (a unit control pushes
/// one agent, the others react only through the average) and evaluates the
/// second-order expansion of the cost for `trials` random piecewise-constant
/// unit controls. All sampled values nonnegative (within tolerance) is the
/// convexity verdict; the minimum is the uniform-convexity margin.
pub fn convexity_probe(cfg: &GameConfig, trials: usize) -> Result<ConvexityReport> {
    cfg.ensure_valid()?;
    // Homogeneous system: strip the offsets, keep all multiplicative terms.
    let mut hcfg = cfg.clone();
    hcfg.dynamics.drift.offset = crate::schedule::VecSchedule::zeros(cfg.dims.state);
    hcfg.dynamics.own_noise.offset = crate::schedule::VecSchedule::zeros(cfg.dims.state);
    hcfg.dynamics.common_noise.offset = crate::schedule::VecSchedule::zeros(cfg.dims.state);

    let steps = cfg.grid.steps;
    let dt = cfg.grid.dt();
    let k = cfg.dims.control;
    let agents = cfg.dims.agents;

    let values = run_scenarios(trials as u64, Execution::auto(), |trial| {
        // Piecewise-constant control, unit-normalized in L2([0,T]).
        let mut crng = rng::stream_rng(cfg.seed, trial, CONTROL_STREAM_TAG);
        let mut control: Vec<DVector<f64>> = (0..steps)
            .map(|_| {
                DVector::from_iterator(
                    k,
                    (0..k).map(|_| {
                        use rand_distr::Distribution;
                        <rand_distr::StandardNormal as Distribution<f64>>::sample(
                            &rand_distr::StandardNormal,
                            &mut crng,
                        )
                    }),
                )
            })
            .collect();
        let norm_sq: f64 = control.iter().map(|u| dt * u.norm_squared()).sum();
        let scale = 1.0 / norm_sq.sqrt();
        control.iter_mut().for_each(|u| *u *= scale);

        let mut per_scenario = Vec::with_capacity(CONVEXITY_SCENARIOS as usize);
        for s in 0..CONVEXITY_SCENARIOS {
            let noise = NoiseBundle::generate(cfg.seed ^ 0x5eed, s, agents, steps, dt);
            per_scenario.push(variational_form(&hcfg, &control, &noise));
        }
        stats::mean(&per_scenario)
    });
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport {
        trials,
        scenarios_per_trial: CONVEXITY_SCENARIOS as usize,
        min_value,
        pass: min_value >= -CONVEXITY_TOL,
        values,
    })
}

/// One pathwise evaluation of the variational quadratic form.
fn variational_form(hcfg: &GameConfig, control: &[DVector<f64>], noise: &NoiseBundle) -> f64 {
    let n = hcfg.dims.state;
    let agents = hcfg.dims.agents;
    let steps = hcfg.grid.steps;
    let dt = hcfg.grid.dt();
    let zero_u = DVector::zeros(hcfg.dims.control);

    let mut y: Vec<DVector<f64>> = vec![DVector::zeros(n); agents];
    let mut next = DVector::zeros(n);
    let mut scratch = Vec::with_capacity(agents);
    let mut yavg = agent_mean(&y, &mut scratch);

    let mut running = 0.0;
    for j in 0..steps {
        let co = hcfg.coeffs_at(j);
        let dev = &y[0] - co.gamma1 * &yavg;
        running += dt * (quad_form(co.q, &dev) + quad_form(co.r, &control[j]));
        for (i, yi) in y.iter_mut().enumerate() {
            let u = if i == 0 { &control[j] } else { &zero_u };
            euler_step_into(&co, dt, noise.own[i][j], noise.common[j], yi, u, &yavg, &mut next);
            yi.copy_from(&next);
        }
        yavg = agent_mean(&y, &mut scratch);
    }
    let dev_t = &y[0] - &hcfg.cost.terminal_coupling * &yavg;
    running + quad_form(&hcfg.cost.terminal_weight, &dev_t)
}

// ---------------------------------------------------------------------------
// Convergence study.
// ---------------------------------------------------------------------------

/// Monte Carlo estimates of the three population-coupling gaps per agent
/// count, with their fitted decay slopes:
/// auxiliary-average vs mean field, realized-average vs mean field, and
/// realized vs auxiliary state of one agent (all sup-square over time).
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub agents: Vec<usize>,
    pub scenarios: usize,
    pub aux_mean_gap: Vec<(f64, f64)>,
    pub realized_mean_gap: Vec<(f64, f64)>,
    pub agent_gap: Vec<(f64, f64)>,
    /// log-log slopes of the three gap means against N.
    pub slopes: [Option<f64>; 3],
}

/// Runs the decentralized pipeline for each agent count with common random
/// numbers (shared common-noise and per-agent streams across counts).
pub fn convergence_study(
    cfg: &GameConfig,
    agent_counts: &[usize],
    scenarios: u64,
    gains: &GainSchedule,
) -> Result<ConvergenceReport> {
    let mut aux_gap = Vec::with_capacity(agent_counts.len());
    let mut real_gap = Vec::with_capacity(agent_counts.len());
    let mut agent_gap = Vec::with_capacity(agent_counts.len());

    for &agents in agent_counts {
        let cfg_n = cfg.with_agents(agents)?;
        let results: Vec<Result<(f64, f64, f64)>> =
            run_scenarios(scenarios, Execution::auto(), |s| {
                let noise = NoiseBundle::for_config(&cfg_n, s);
                let bundle = sim::simulate_decentralized(&cfg_n, gains, &noise)?;
                let aux = bundle.aux.as_ref().expect("decentralized bundle");
                let mut sup_aux: f64 = 0.0;
                let mut sup_real: f64 = 0.0;
                let mut sup_agent: f64 = 0.0;
                for j in 0..cfg_n.grid.nodes() {
                    sup_aux = sup_aux
                        .max((&aux.aux_mean[j] - &aux.mean_field[j]).norm_squared());
                    sup_real = sup_real
                        .max((&bundle.mean_state[j] - &aux.mean_field[j]).norm_squared());
                    sup_agent = sup_agent
                        .max((&bundle.states[0][j] - &aux.aux_states[0][j]).norm_squared());
                }
                Ok((sup_aux, sup_real, sup_agent))
            });
        let mut a = Vec::with_capacity(scenarios as usize);
        let mut r = Vec::with_capacity(scenarios as usize);
        let mut g = Vec::with_capacity(scenarios as usize);
        for res in results {
            let (x, y, z) = res?;
            a.push(x);
            r.push(y);
            g.push(z);
        }
        aux_gap.push(stats::mean_stderr(&a));
        real_gap.push(stats::mean_stderr(&r));
        agent_gap.push(stats::mean_stderr(&g));
    }

    let ns: Vec<f64> = agent_counts.iter().map(|&n| n as f64).collect();
    let slope_of = |v: &[(f64, f64)]| {
        let means: Vec<f64> = v.iter().map(|&(m, _)| m).collect();
        if agent_counts.len() < 2 || means.iter().any(|&m| m <= 0.0) {
            None
        } else {
            stats::loglog_slope(&ns, &means)
        }
    };
    let slopes = [slope_of(&aux_gap), slope_of(&real_gap), slope_of(&agent_gap)];
    Ok(ConvergenceReport {
        agents: agent_counts.to_vec(),
        scenarios: scenarios as usize,
        aux_mean_gap: aux_gap,
        realized_mean_gap: real_gap,
        agent_gap,
        slopes,
    })
}

// ---------------------------------------------------------------------------
// Deviation test.
// ---------------------------------------------------------------------------

/// Parametric control perturbation applied to one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DeviationFamily {
    /// Constant control shift.
    ConstantShift,
    /// Shift growing linearly in time.
    TimeRamp,
    /// Proportional feedback on the agent's own realized state.
    StateFeedback,
}

impl DeviationFamily {
    pub const ALL: [DeviationFamily; 3] =
        [DeviationFamily::ConstantShift, DeviationFamily::TimeRamp, DeviationFamily::StateFeedback];

    pub fn name(&self) -> &'static str {
        match self {
            DeviationFamily::ConstantShift => "constant-shift",
            DeviationFamily::TimeRamp => "time-ramp",
            DeviationFamily::StateFeedback => "state-feedback",
        }
    }

    /// Direction vector at time fraction `tau` for own state `x`.
    fn direction(&self, k: usize, n: usize, tau: f64, x: &DVector<f64>) -> DVector<f64> {
        match self {
            DeviationFamily::ConstantShift => {
                DVector::from_element(k, 1.0 / (k as f64).sqrt())
            }
            DeviationFamily::TimeRamp => {
                DVector::from_element(k, tau / (k as f64).sqrt())
            }
            DeviationFamily::StateFeedback => {
                let m = DMatrix::from_element(k, n, 1.0 / ((k * n) as f64).sqrt());
                m * x
            }
        }
    }
}

/// Cost deltas of unilateral deviations by agent 0 around the decentralized
/// equilibrium, with common random numbers across amplitudes and families.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub agents: usize,
    pub scenarios: usize,
    pub amplitudes: Vec<f64>,
    pub families: Vec<String>,
    /// deltas[family][amplitude] = (mean cost delta, stderr).
    pub deltas: Vec<Vec<(f64, f64)>>,
    /// Minimum mean delta over families and amplitudes.
    pub min_delta: f64,
    /// Standard error at the minimizing (family, amplitude) cell.
    pub min_delta_stderr: f64,
    /// Implied equilibrium-gap estimate max(0, -min_delta).
    pub epsilon: f64,
    /// Per-family least-squares fit of delta = a d^2 + b d (a, b, se_b).
    pub fits: Vec<(f64, f64, f64)>,
    /// Largest |b| across families: the measurable first-order
    /// deviation-response rate.
    pub linear_rate: f64,
}

/// Re-simulates the realized population with agent 0's control perturbed by
/// `amplitude * family direction`; all other agents keep their decentralized
/// controls, and the realized average feeds back through the dynamics.
pub fn deviation_test(
    cfg: &GameConfig,
    gains: &GainSchedule,
    families: &[DeviationFamily],
    amplitudes: &[f64],
    scenarios: u64,
) -> Result<DeviationReport> {
    let agents = cfg.dims.agents;
    let n = cfg.dims.state;
    let k = cfg.dims.control;
    let steps = cfg.grid.steps;
    let dt = cfg.grid.dt();
    let horizon = cfg.grid.horizon;

    // Per scenario: delta[family][amplitude].
    type ScenarioDeltas = Vec<Vec<f64>>;
    let results: Vec<Result<ScenarioDeltas>> = run_scenarios(scenarios, Execution::auto(), |s| {
        let noise = NoiseBundle::for_config(cfg, s);
        let bundle = sim::simulate_decentralized(cfg, gains, &noise)?;
        let eq_cost = path_cost(cfg, &bundle.states[0], &bundle.controls[0], &bundle.mean_state);

        let mut out = vec![vec![0.0; amplitudes.len()]; families.len()];
        let mut states: Vec<DVector<f64>> = Vec::with_capacity(agents);
        let mut next = DVector::zeros(n);
        let mut scratch = Vec::with_capacity(agents);
        let mut dev_states: VecPath = Vec::with_capacity(steps + 1);
        let mut dev_controls: VecPath = Vec::with_capacity(steps + 1);
        let mut dev_mean: VecPath = Vec::with_capacity(steps + 1);

        for (fi, fam) in families.iter().enumerate() {
            for (ai, &amp) in amplitudes.iter().enumerate() {
                states.clear();
                states.extend((0..agents).map(|i| bundle.states[i][0].clone()));
                dev_states.clear();
                dev_controls.clear();
                dev_mean.clear();
                dev_states.push(states[0].clone());
                let mut mean = agent_mean(&states, &mut scratch);
                dev_mean.push(mean.clone());

                for j in 0..steps {
                    let co = cfg.coeffs_at(j);
                    let tau = cfg.grid.node(j) / horizon;
                    let dir = fam.direction(k, n, tau, &states[0]);
                    let u0 = &bundle.controls[0][j] + &dir * amp;
                    dev_controls.push(u0.clone());
                    let t_next = cfg.grid.node(j + 1);
                    for i in 0..agents {
                        let u = if i == 0 { &u0 } else { &bundle.controls[i][j] };
                        euler_step_into(
                            &co,
                            dt,
                            noise.own[i][j],
                            noise.common[j],
                            &states[i],
                            u,
                            &mean,
                            &mut next,
                        );
                        check_state_finite(&next, t_next)?;
                        states[i].copy_from(&next);
                    }
                    mean = agent_mean(&states, &mut scratch);
                    dev_states.push(states[0].clone());
                    dev_mean.push(mean.clone());
                }
                dev_controls.push(dev_controls[steps - 1].clone());

                let dev_cost = path_cost(cfg, &dev_states, &dev_controls, &dev_mean);
                out[fi][ai] = dev_cost.total - eq_cost.total;
            }
        }
        Ok(out)
    });

    let mut per_family: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::with_capacity(scenarios as usize); amplitudes.len()]; families.len()];
    for res in results {
        let sc = res?;
        for (fi, fam_deltas) in sc.iter().enumerate() {
            for (ai, &d) in fam_deltas.iter().enumerate() {
                per_family[fi][ai].push(d);
            }
        }
    }

    let mut deltas = Vec::with_capacity(families.len());
    let mut min_delta = f64::INFINITY;
    let mut min_delta_stderr = 0.0;
    let mut fits = Vec::with_capacity(families.len());
    let mut linear_rate: f64 = 0.0;
    for fam_data in &per_family {
        let row: Vec<(f64, f64)> = fam_data.iter().map(|v| stats::mean_stderr(v)).collect();
        for &(m, se) in &row {
            if m < min_delta {
                min_delta = m;
                min_delta_stderr = se;
            }
        }
        let (a, b, se_b) = fit_quadratic_through_origin(amplitudes, fam_data);
        linear_rate = linear_rate.max(b.abs());
        fits.push((a, b, se_b));
        deltas.push(row);
    }

    Ok(DeviationReport {
        agents,
        scenarios: scenarios as usize,
        amplitudes: amplitudes.to_vec(),
        families: families.iter().map(|f| f.name().to_string()).collect(),
        deltas,
        min_delta,
        min_delta_stderr,
        epsilon: (-min_delta).max(0.0),
        fits,
        linear_rate,
    })
}

/// Least squares of `delta = a d^2 + b d` (no intercept: delta(0) = 0 by
/// construction), plus a plug-in standard error for `b` from the
/// scenario-level spread.
fn fit_quadratic_through_origin(amplitudes: &[f64], data: &[Vec<f64>]) -> (f64, f64, f64) {
    let means: Vec<f64> = data.iter().map(|v| stats::mean(v)).collect();
    let (mut s4, mut s3, mut s2) = (0.0, 0.0, 0.0);
    let (mut r2, mut r1) = (0.0, 0.0);
    for (&d, &m) in amplitudes.iter().zip(means.iter()) {
        s4 += d.powi(4);
        s3 += d.powi(3);
        s2 += d * d;
        r2 += d * d * m;
        r1 += d * m;
    }
    let det = s4 * s2 - s3 * s3;
    if det.abs() < 1e-300 {
        return (0.0, 0.0, 0.0);
    }
    let a = (r2 * s2 - s3 * r1) / det;
    let b = (s4 * r1 - s3 * r2) / det;
    // Propagate per-amplitude standard errors through the linear solve.
    let mut var_b = 0.0;
    for (&d, v) in amplitudes.iter().zip(data.iter()) {
        let (_, se) = stats::mean_stderr(v);
        let w = (s4 * d - s3 * d * d) / det;
        var_b += w * w * se * se;
    }
    (a, b, var_b.sqrt())
}

// ---------------------------------------------------------------------------
// Pinned verdict bands and the multi-N deviation study.
// ---------------------------------------------------------------------------

/// Acceptance band for deterministic ODE-gap decay slopes.
pub const SLOPE_BAND_ODE: (f64, f64) = (-1.3, -0.7);
/// Acceptance band for Monte Carlo gap decay slopes.
pub const SLOPE_BAND_MC: (f64, f64) = (-1.4, -0.6);
/// Gap magnitude treated as exactly reproduced.
pub const EXACT_GAP: f64 = 1e-12;

pub fn slope_in_band(slope: f64, band: (f64, f64)) -> bool {
    slope >= band.0 && slope <= band.1
}

/// Deviation tests across a list of population sizes, with the fitted decay
/// of the measured equilibrium gap.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationStudy {
    pub counts: Vec<usize>,
    pub reports: Vec<DeviationReport>,
    /// Negative part of the minimum delta per count.
    pub negative_part: Vec<f64>,
    /// Whether the negative part is statistically indistinguishable from 0.
    pub stat_zero: Vec<bool>,
    /// Fit of log(negative part) vs log(N) over significant points.
    pub epsilon_slope: Option<f64>,
    /// Fit of log |linear response| vs log(N) over measurable points.
    pub linear_slope: Option<f64>,
    pub pass: bool,
    pub note: String,
}

/// Runs `deviation_test` for each count (the decentralized gains come from
/// the population-independent limit system, so one schedule serves all
/// counts) and applies the pinned decay verdict: deviation gains must either
/// be statistically zero or decay with a log-log slope in the Monte Carlo
/// band, and the same must hold for the measurable first-order response.
pub fn deviation_study(
    cfg: &GameConfig,
    counts: &[usize],
    amplitudes: &[f64],
    scenarios: u64,
    gains: &GainSchedule,
) -> Result<DeviationStudy> {
    let mut reports = Vec::with_capacity(counts.len());
    for &agents in counts {
        let cfg_n = cfg.with_agents(agents)?;
        reports.push(deviation_test(&cfg_n, gains, &DeviationFamily::ALL, amplitudes, scenarios)?);
    }

    let mut negative_part = Vec::with_capacity(counts.len());
    let mut stat_zero = Vec::with_capacity(counts.len());
    for rep in &reports {
        let neg = (-rep.min_delta).max(0.0);
        negative_part.push(neg);
        stat_zero.push(neg <= 2.0 * rep.min_delta_stderr);
    }

    // Decay of the measured gap, over statistically significant points.
    let sig: Vec<(f64, f64)> = counts
        .iter()
        .zip(negative_part.iter().zip(stat_zero.iter()))
        .filter(|(_, (_, &z))| !z)
        .map(|(&n, (&g, _))| (n as f64, g))
        .collect();
    let epsilon_slope = if sig.len() >= 2 {
        let ns: Vec<f64> = sig.iter().map(|v| v.0).collect();
        let gs: Vec<f64> = sig.iter().map(|v| v.1).collect();
        stats::loglog_slope(&ns, &gs)
    } else {
        None
    };

    // Diagnostic only: decay of the fitted first-order response |b|. At the
    // pinned amplitude grid the quadratic fit absorbs higher-order response
    // terms, so |b| is reported but never gates the verdict.
    let lin: Vec<(f64, f64)> = counts
        .iter()
        .zip(reports.iter())
        .filter_map(|(&n, rep)| {
            let (b, se) = rep
                .fits
                .iter()
                .map(|&(_, b, se_b)| (b.abs(), se_b))
                .fold((0.0f64, 0.0f64), |acc, v| if v.0 > acc.0 { v } else { acc });
            (b > 3.0 * se).then_some((n as f64, b))
        })
        .collect();
    let linear_slope = if lin.len() >= 3 {
        let ns: Vec<f64> = lin.iter().map(|v| v.0).collect();
        let bs: Vec<f64> = lin.iter().map(|v| v.1).collect();
        stats::loglog_slope(&ns, &bs)
    } else {
        None
    };

    // Verdict: unilateral improvements are either statistically absent at
    // every population size (the measured gap bound is zero) or they decay
    // with the expected rate. A strategy that is wrong at O(1) produces
    // improvements that neither vanish nor decay, and fails here.
    let all_zero = stat_zero.iter().all(|&z| z);
    let pass = all_zero
        || match epsilon_slope {
            Some(s) => slope_in_band(s, SLOPE_BAND_MC),
            None => false,
        };
    let note = if all_zero {
        "no statistically measurable unilateral improvement at any population size; the gap bound holds with epsilon = 0".to_string()
    } else {
        format!("measured unilateral improvement decays with slope {epsilon_slope:?} (band {SLOPE_BAND_MC:?})")
    };
    Ok(DeviationStudy {
        counts: counts.to_vec(),
        reports,
        negative_part,
        stat_zero,
        epsilon_slope,
        linear_slope,
        pass,
        note,
    })
}

impl ConvergenceReport {
    /// All three gaps either exactly reproduced or decaying in the Monte
    /// Carlo band.
    pub fn pass(&self) -> bool {
        let gaps = [&self.aux_mean_gap, &self.realized_mean_gap, &self.agent_gap];
        gaps.iter().zip(self.slopes.iter()).all(|(gap, slope)| {
            let exact = gap.iter().all(|&(m, _)| m < EXACT_GAP);
            exact || matches!(slope, Some(s) if slope_in_band(*s, SLOPE_BAND_MC))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::decentralized_gains;
    use crate::model::{production_preset, InitialStateLaw};
    use crate::offsets::solve_limit_phi_psi;
    use crate::riccati::solve_limit;
    use crate::schedule::{MatSchedule, VecSchedule};

    fn decentralized(cfg: &GameConfig) -> GainSchedule {
        let sols = solve_limit(cfg).unwrap();
        let off = solve_limit_phi_psi(cfg, &sols).unwrap();
        decentralized_gains(cfg, &sols, &off).unwrap()
    }

    #[test]
    fn zero_paths_zero_targets_cost_zero() {
        let mut cfg = production_preset(4, 50, 0);
        cfg.cost.state_target = VecSchedule::scalar(0.0);
        cfg.cost.control_target = VecSchedule::scalar(0.0);
        cfg.cost.terminal_target = nalgebra::DVector::zeros(1);
        let nodes = cfg.grid.nodes();
        let zero: VecPath = vec![nalgebra::DVector::zeros(1); nodes];
        let parts = path_cost(&cfg, &zero, &zero, &zero);
        assert_eq!(parts.total, 0.0);
    }

    #[test]
    fn constant_path_unit_weight_gives_half() {
        // x = 1, u = 0, Q = 1, no coupling/targets, R = 0, G = 0, T = 1.
        let mut cfg = production_preset(4, 1000, 0);
        cfg.cost.state_weight = MatSchedule::scalar(1.0);
        cfg.cost.control_weight = MatSchedule::scalar(0.0);
        cfg.cost.mean_coupling = MatSchedule::scalar(0.0);
        cfg.cost.state_target = VecSchedule::scalar(0.0);
        cfg.cost.control_target = VecSchedule::scalar(0.0);
        cfg.cost.terminal_weight = nalgebra::DMatrix::zeros(1, 1);
        cfg.cost.terminal_target = nalgebra::DVector::zeros(1);
        let nodes = cfg.grid.nodes();
        let ones: VecPath = vec![nalgebra::DVector::from_element(1, 1.0); nodes];
        let zeros: VecPath = vec![nalgebra::DVector::zeros(1); nodes];
        let parts = path_cost(&cfg, &ones, &zeros, &zeros);
        assert!((parts.total - 0.5).abs() < 1e-12, "{}", parts.total);
    }

    #[test]
    fn cost_terms_nonnegative_at_equilibrium() {
        let cfg = production_preset(20, 200, 3);
        let gains = decentralized(&cfg);
        let bundles: Vec<TrajectoryBundle> = (0..16)
            .map(|s| {
                sim::simulate_decentralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, s))
                    .unwrap()
            })
            .collect();
        let report = evaluate_cost(&cfg, &bundles, 0).unwrap();
        assert!(report.running_state >= 0.0);
        assert!(report.running_control >= 0.0);
        assert!(report.terminal >= 0.0);
        let total = report.running_state + report.running_control + report.terminal;
        assert!((report.total - total).abs() < 1e-10);
    }

    #[test]
    fn disjoint_scenario_batches_estimate_the_same_cost() {
        let cfg = production_preset(30, 300, 6);
        let gains = decentralized(&cfg);
        let run = |range: std::ops::Range<u64>| -> (f64, f64) {
            let bundles: Vec<TrajectoryBundle> = range
                .map(|s| {
                    sim::simulate_decentralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, s))
                        .unwrap()
                })
                .collect();
            let rep = evaluate_cost(&cfg, &bundles, 0).unwrap();
            (rep.total, rep.stderr)
        };
        let (a, se_a) = run(0..128);
        let (b, se_b) = run(128..1152);
        let band = 3.0 * (se_a * se_a + se_b * se_b).sqrt();
        assert!((a - b).abs() <= band, "batch means {a} vs {b}, band {band}");
    }

    #[test]
    fn convexity_passes_on_definite_data() {
        let cfg = production_preset(12, 200, 1);
        let report = convexity_probe(&cfg, 10).unwrap();
        assert!(report.pass, "min {}", report.min_value);
        // R = 10 and a unit control: the quadratic form is at least 10.
        assert!(report.min_value >= 10.0 * (1.0 - 1e-6), "min {}", report.min_value);
    }

    #[test]
    fn convexity_fails_on_negative_control_weight() {
        let mut cfg = production_preset(6, 100, 1);
        cfg.cost.control_weight = MatSchedule::scalar(-1.0);
        cfg.cost.state_weight = MatSchedule::scalar(0.0);
        cfg.cost.terminal_weight = nalgebra::DMatrix::zeros(1, 1);
        cfg.dynamics.own_noise.control = MatSchedule::scalar(0.0);
        let report = convexity_probe(&cfg, 5).unwrap();
        assert!(!report.pass);
        assert!((report.min_value + 1.0).abs() < 1e-9, "form should be -1 exactly");
    }

    #[test]
    fn degenerate_config_has_exactly_zero_gaps() {
        let mut cfg = production_preset(10, 100, 2);
        cfg.dynamics.own_noise.control = MatSchedule::scalar(0.0);
        cfg.dynamics.own_noise.offset = VecSchedule::scalar(0.0);
        cfg.initial = InitialStateLaw::point(nalgebra::DVector::from_element(1, 3.0));
        let gains = decentralized(&cfg);
        let report = convergence_study(&cfg, &[4, 8], 8, &gains).unwrap();
        for row in report.aux_mean_gap.iter().chain(&report.realized_mean_gap) {
            assert!(row.0 < 1e-12, "gap {}", row.0);
        }
        assert!(report.slopes[0].is_none());
    }

    #[test]
    fn singleton_count_gives_no_slopes() {
        let cfg = production_preset(8, 100, 2);
        let gains = decentralized(&cfg);
        let report = convergence_study(&cfg, &[8], 4, &gains).unwrap();
        assert!(report.slopes.iter().all(|s| s.is_none()));
    }

    #[test]
    fn zero_amplitude_gives_exactly_zero_delta() {
        let cfg = production_preset(10, 150, 4);
        let gains = decentralized(&cfg);
        let report =
            deviation_test(&cfg, &gains, &DeviationFamily::ALL, &[0.0, 0.25], 6).unwrap();
        for fam in &report.deltas {
            assert_eq!(fam[0].0, 0.0, "delta at amplitude 0 must vanish exactly");
            assert_eq!(fam[0].1, 0.0);
        }
    }

    #[test]
    fn pure_control_penalty_penalizes_any_deviation() {
        let mut cfg = production_preset(8, 150, 4);
        cfg.cost.state_weight = MatSchedule::scalar(0.0);
        cfg.cost.terminal_weight = nalgebra::DMatrix::zeros(1, 1);
        cfg.cost.control_target = VecSchedule::scalar(0.0);
        cfg.cost.terminal_target = nalgebra::DVector::zeros(1);
        let gains = decentralized(&cfg);
        let report = deviation_test(
            &cfg,
            &gains,
            &DeviationFamily::ALL,
            &[-0.5, -0.1, 0.1, 0.5],
            8,
        )
        .unwrap();
        assert!(report.min_delta > 0.0, "min delta {}", report.min_delta);
        assert_eq!(report.epsilon, 0.0);
    }

    #[test]
    fn deviation_deltas_are_convex_shaped() {
        let cfg = production_preset(25, 200, 5);
        let gains = decentralized(&cfg);
        let report = deviation_test(
            &cfg,
            &gains,
            &DeviationFamily::ALL,
            &[-0.5, -0.25, -0.1, 0.1, 0.25, 0.5],
            32,
        )
        .unwrap();
        for &(a, _, _) in &report.fits {
            assert!(a > 0.0, "quadratic coefficient {a} should be positive");
        }
    }
}
