use nalgebra::DVector;

use super::*;
use crate::feedback::{centralized_gains, decentralized_gains};
use crate::model::{
    production_preset, CostCoefficients, Dimensions, DynamicsCoefficients, GameConfig,
    InitialStateLaw,
};
use crate::offsets::{solve_finite_n_phi_psi, solve_limit_phi_psi};
use crate::riccati::{solve_finite_n, solve_limit};
use crate::schedule::{MatSchedule, VecSchedule};
use crate::stats;
use crate::TimeGrid;

fn decentralized_pipeline(cfg: &GameConfig) -> crate::feedback::GainSchedule {
    let sols = solve_limit(cfg).unwrap();
    let off = solve_limit_phi_psi(cfg, &sols).unwrap();
    decentralized_gains(cfg, &sols, &off).unwrap()
}

fn centralized_pipeline(cfg: &GameConfig, agents: usize) -> crate::feedback::GainSchedule {
    let sols = solve_finite_n(cfg, agents).unwrap();
    let off = solve_finite_n_phi_psi(cfg, &sols).unwrap();
    centralized_gains(cfg, &sols, &off).unwrap()
}

fn zeroed(cfg: &GameConfig, scenario: u64) -> NoiseBundle {
    let mut noise = NoiseBundle::for_config(cfg, scenario);
    noise.common.iter_mut().for_each(|v| *v = 0.0);
    noise.own.iter_mut().for_each(|s| s.iter_mut().for_each(|v| *v = 0.0));
    noise
}

#[test]
fn point_mass_initials() {
    let law = InitialStateLaw::point(DVector::from_element(1, 3.0));
    let (draws, mean) = sample_initials(&law, 5, 1, 0);
    assert!(draws.iter().all(|d| d[0] == 3.0));
    assert_eq!(mean[0], 3.0);
}

#[test]
fn degenerate_gaussian_is_zero() {
    let law = InitialStateLaw::Gaussian { mean: DVector::zeros(2), std: DVector::zeros(2) };
    let (draws, _) = sample_initials(&law, 4, 9, 0);
    assert!(draws.iter().all(|d| d.iter().all(|&x| x == 0.0)));
}

#[test]
fn uniform_initials_concentrate_for_most_seeds() {
    // Uniform [2.5, 3.5]: sample mean of 300 draws within 3 sigma/sqrt(300)
    // of 3.0 for at least 99 of 100 seeds.
    let law = InitialStateLaw::UniformBox {
        lo: DVector::from_element(1, 2.5),
        hi: DVector::from_element(1, 3.5),
    };
    let band = 3.0 * (1.0 / 12.0f64.sqrt()) / (300.0f64).sqrt();
    let mut hits = 0;
    for seed in 0..100u64 {
        let (draws, _) = sample_initials(&law, 300, seed, 0);
        let mean: f64 = draws.iter().map(|d| d[0]).sum::<f64>() / 300.0;
        if (mean - 3.0).abs() <= band {
            hits += 1;
        }
    }
    assert!(hits >= 99, "only {hits}/100 seeds inside the CLT band");
}

#[test]
fn zero_noise_zero_data_stays_at_origin() {
    let mut cfg = production_preset(6, 100, 3);
    cfg.dynamics.drift.offset = VecSchedule::scalar(0.0);
    cfg.dynamics.own_noise.offset = VecSchedule::scalar(0.0);
    cfg.dynamics.common_noise.offset = VecSchedule::scalar(0.0);
    cfg.cost.control_target = VecSchedule::scalar(0.0);
    cfg.cost.terminal_target = DVector::zeros(1);
    cfg.initial = InitialStateLaw::point(DVector::zeros(1));
    let gains = centralized_pipeline(&cfg, 6);
    let bundle = simulate_centralized(&cfg, &gains, &zeroed(&cfg, 0)).unwrap();
    for path in &bundle.states {
        assert!(path.iter().all(|x| x[0] == 0.0));
    }
    for path in &bundle.controls {
        assert!(path.iter().all(|u| u[0] == 0.0));
    }
}

#[test]
fn bundles_are_reproducible() {
    let cfg = production_preset(8, 120, 11);
    let gains = centralized_pipeline(&cfg, 8);
    let a = simulate_centralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, 2)).unwrap();
    let b = simulate_centralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, 2)).unwrap();
    for i in 0..8 {
        for j in 0..cfg.grid.nodes() {
            assert_eq!(a.states[i][j][0].to_bits(), b.states[i][j][0].to_bits());
        }
    }
}

#[test]
fn stored_average_matches_recomputation() {
    let cfg = production_preset(8, 120, 11);
    let gains = centralized_pipeline(&cfg, 8);
    let bundle = simulate_centralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, 0)).unwrap();
    let mut scratch = Vec::new();
    for j in 0..cfg.grid.nodes() {
        let snapshot: Vec<DVector<f64>> =
            (0..8).map(|i| bundle.states[i][j].clone()).collect();
        let mean = agent_mean(&snapshot, &mut scratch);
        assert!((mean[0] - bundle.mean_state[j][0]).abs() <= 1e-12);
    }
}

#[test]
fn permuting_agents_permutes_trajectories_exactly() {
    let cfg = production_preset(5, 80, 21);
    let gains = centralized_pipeline(&cfg, 5);
    let noise = NoiseBundle::for_config(&cfg, 4);
    let perm = [3usize, 0, 4, 1, 2];
    let base = simulate_centralized(&cfg, &gains, &noise).unwrap();
    let permuted = simulate_centralized(&cfg, &gains, &noise.permuted(&perm)).unwrap();
    for i in 0..5 {
        for j in 0..cfg.grid.nodes() {
            assert_eq!(
                permuted.states[i][j][0].to_bits(),
                base.states[perm[i]][j][0].to_bits(),
                "agent {i} node {j}"
            );
        }
    }
    for j in 0..cfg.grid.nodes() {
        assert_eq!(permuted.mean_state[j][0].to_bits(), base.mean_state[j][0].to_bits());
    }
}

#[test]
fn mean_field_ignores_common_noise_without_exposure() {
    let mut cfg = production_preset(4, 100, 5);
    cfg.dynamics.common_noise.state = MatSchedule::scalar(0.0);
    cfg.dynamics.common_noise.offset = VecSchedule::scalar(0.0);
    let gains = decentralized_pipeline(&cfg);
    let a = simulate_mean_field(&cfg, &gains, &NoiseBundle::for_config(&cfg, 0)).unwrap();
    let b = simulate_mean_field(&cfg, &gains, &NoiseBundle::for_config(&cfg, 99)).unwrap();
    for j in 0..cfg.grid.nodes() {
        assert_eq!(a[j][0].to_bits(), b[j][0].to_bits());
    }
}

#[test]
fn monte_carlo_moments_match_closed_form() {
    // Gains vanish (Q = G = 0, eta2 = 0), leaving the scalar linear SDE
    // dx = (a x + f) dt + (s0 x + g0) dW0 through the mean-field simulator.
    // First and second moments solve a closed 2x2 linear ODE.
    let dims = Dimensions::new(1, 1, 2).unwrap();
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let mut dynamics = DynamicsCoefficients::zero(1, 1);
    dynamics.drift.state = MatSchedule::scalar(-0.5);
    dynamics.drift.offset = VecSchedule::scalar(0.2);
    dynamics.common_noise.state = MatSchedule::scalar(0.4);
    dynamics.common_noise.offset = VecSchedule::scalar(0.3);
    let mut cost = CostCoefficients::zero(1, 1);
    cost.control_weight = MatSchedule::scalar(1.0);
    let cfg = GameConfig::new(
        dims,
        grid,
        dynamics,
        cost,
        InitialStateLaw::point(DVector::from_element(1, 1.0)),
        77,
    )
    .unwrap();
    let gains = decentralized_pipeline(&cfg);
    assert!(gains.offset.iter().all(|o| o[0] == 0.0));

    let scenarios = 10_000u64;
    let terminal: Vec<(f64, f64)> = run_scenarios(scenarios, Execution::auto(), |s| {
        let noise = NoiseBundle::generate(cfg.seed, s, 0, cfg.grid.steps, cfg.grid.dt());
        let path = simulate_mean_field(&cfg, &gains, &noise).unwrap();
        let x = path.last().unwrap()[0];
        (x, x * x)
    });
    let firsts: Vec<f64> = terminal.iter().map(|v| v.0).collect();
    let seconds: Vec<f64> = terminal.iter().map(|v| v.1).collect();
    let (m1, se1) = stats::mean_stderr(&firsts);
    let (m2, se2) = stats::mean_stderr(&seconds);

    // Fine forward RK4 of m1' = a m1 + f, m2' = (2a + s0^2) m2
    //   + 2(f + s0 g0) m1 + g0^2.
    let (a, f, s0, g0) = (-0.5, 0.2, 0.4, 0.3);
    let rhs = |m: [f64; 2]| {
        [
            a * m[0] + f,
            (2.0 * a + s0 * s0) * m[1] + 2.0 * (f + s0 * g0) * m[0] + g0 * g0,
        ]
    };
    let mut m = [1.0, 1.0];
    let fine = 100_000;
    let h = 1.0 / fine as f64;
    for _ in 0..fine {
        let k1 = rhs(m);
        let k2 = rhs([m[0] + 0.5 * h * k1[0], m[1] + 0.5 * h * k1[1]]);
        let k3 = rhs([m[0] + 0.5 * h * k2[0], m[1] + 0.5 * h * k2[1]]);
        let k4 = rhs([m[0] + h * k3[0], m[1] + h * k3[1]]);
        m[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        m[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    }
    assert!(
        (m1 - m[0]).abs() <= 3.0 * se1 + 2e-3,
        "first moment {m1} vs {} (se {se1})",
        m[0]
    );
    assert!(
        (m2 - m[1]).abs() <= 3.0 * se2 + 4e-3,
        "second moment {m2} vs {} (se {se2})",
        m[1]
    );
}

#[test]
fn centralized_population_mean_tracks_its_moment_recursion() {
    // The expectation of the Euler chain obeys an exact deterministic
    // recursion; the Monte Carlo average must match it within pure
    // sampling error.
    let agents = 40;
    let cfg = production_preset(agents, 400, 13);
    let gains = centralized_pipeline(&cfg, agents);

    let mut m = cfg.initial.mean()[0];
    let dt = cfg.grid.dt();
    for j in 0..cfg.grid.steps {
        let co = cfg.coeffs_at(j);
        let gain_sum = gains.self_gain[j][(0, 0)] + gains.mf_gain[j][(0, 0)];
        let u_mean = gain_sum * m + gains.offset[j][0];
        m += dt * ((co.a[(0, 0)] + co.e[(0, 0)]) * m + co.b[(0, 0)] * u_mean + co.f[0]);
    }

    let scenarios = 2000u64;
    let means: Vec<f64> = run_scenarios(scenarios, Execution::auto(), |s| {
        let noise = NoiseBundle::for_config(&cfg, s);
        let bundle = simulate_centralized(&cfg, &gains, &noise).unwrap();
        bundle.mean_state.last().unwrap()[0]
    });
    let (mc, se) = stats::mean_stderr(&means);
    assert!((mc - m).abs() <= 3.5 * se, "mc {mc} vs recursion {m} (se {se})");
}

#[test]
fn mean_field_expectation_matches_its_moment_recursion() {
    // E of the Euler chain obeys an exact deterministic recursion with the
    // combined gain; 1000 common-noise draws must agree within pure Monte
    // Carlo error.
    let cfg = production_preset(10, 500, 19);
    let gains = decentralized_pipeline(&cfg);
    let mut m = cfg.initial.mean()[0];
    let dt = cfg.grid.dt();
    for j in 0..cfg.grid.steps {
        let co = cfg.coeffs_at(j);
        let u = (gains.self_gain[j][(0, 0)] + gains.mf_gain[j][(0, 0)]) * m + gains.offset[j][0];
        m += dt * ((co.a[(0, 0)] + co.e[(0, 0)]) * m + co.b[(0, 0)] * u + co.f[0]);
    }
    let terminal: Vec<f64> = run_scenarios(1000, Execution::auto(), |s| {
        let noise = NoiseBundle::generate(cfg.seed, s, 0, cfg.grid.steps, cfg.grid.dt());
        simulate_mean_field(&cfg, &gains, &noise).unwrap().last().unwrap()[0]
    });
    let (mc, se) = stats::mean_stderr(&terminal);
    assert!((mc - m).abs() <= 3.5 * se, "mc {mc} vs recursion {m} (se {se})");
}

#[test]
fn realized_average_tracks_mean_field() {
    let agents = 300;
    let cfg = production_preset(agents, 500, 7);
    let gains = decentralized_pipeline(&cfg);
    let bundle = simulate_decentralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, 0)).unwrap();
    let aux = bundle.aux.as_ref().unwrap();
    let mut sup: f64 = 0.0;
    for j in 0..cfg.grid.nodes() {
        sup = sup.max((bundle.mean_state[j][0] - aux.mean_field[j][0]).abs());
    }
    // O(1/sqrt(N)) coupling at N = 300; generous deterministic band for the
    // fixed seed.
    assert!(sup < 0.2, "sup gap {sup}");
}

#[test]
fn doubling_population_shrinks_mean_field_gap() {
    let cfg_small = production_preset(50, 300, 17);
    let cfg_large = production_preset(200, 300, 17);
    let gains_small = decentralized_pipeline(&cfg_small);
    let gains_large = decentralized_pipeline(&cfg_large);
    let sup_sq = |cfg: &GameConfig, gains: &crate::feedback::GainSchedule| {
        let vals: Vec<f64> = run_scenarios(64, Execution::auto(), |s| {
            let bundle =
                simulate_decentralized(cfg, gains, &NoiseBundle::for_config(cfg, s)).unwrap();
            let aux = bundle.aux.as_ref().unwrap();
            let mut sup: f64 = 0.0;
            for j in 0..cfg.grid.nodes() {
                sup = sup.max((bundle.mean_state[j][0] - aux.mean_field[j][0]).abs());
            }
            sup * sup
        });
        stats::mean(&vals)
    };
    let small = sup_sq(&cfg_small, &gains_small);
    let large = sup_sq(&cfg_large, &gains_large);
    assert!(large < small, "E sup^2 should shrink: {small} -> {large}");
}

#[test]
fn mismatched_noise_bundle_rejected() {
    let cfg = production_preset(8, 100, 0);
    let gains = centralized_pipeline(&cfg, 8);
    let noise = NoiseBundle::generate(cfg.seed, 0, 5, cfg.grid.steps, cfg.grid.dt());
    assert!(simulate_centralized(&cfg, &gains, &noise).is_err());
}

#[test]
fn single_agent_population_rejected_at_construction() {
    assert!(Dimensions::new(1, 1, 1).is_err());
}
