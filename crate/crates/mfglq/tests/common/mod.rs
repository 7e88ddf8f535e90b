//! Shared helpers for the integration suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use mfglq::grid::TimeGrid;
use mfglq::model::{
    CostCoefficients, Dimensions, DynamicsCoefficients, GameConfig, InitialStateLaw, TermGroup,
};
use mfglq::rng::stream_rng;
use mfglq::schedule::{MatSchedule, VecSchedule};

fn mat(r: &mut ChaCha12Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| (r.random::<f64>() - 0.5) * 2.0 * scale)
}

fn vec(r: &mut ChaCha12Rng, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| (r.random::<f64>() - 0.5) * 2.0 * scale)
}

fn psd(m: DMatrix<f64>) -> DMatrix<f64> {
    &m * m.transpose()
}

/// Deterministic randomized valid problem instance: moderate coefficient
/// magnitudes, strictly positive control weight, positive semidefinite state
/// weights. Solvable over the unit horizon for every seed used by the
/// suites.
pub fn random_valid_config(seed: u64) -> GameConfig {
    let r = &mut stream_rng(seed, 0, 0xC0FFEE);
    let n = if r.random::<f64>() < 0.5 { 1 } else { 2 };
    let k = if r.random::<f64>() < 0.5 { 1 } else { 2 };
    let steps = 120;

    let dynamics = DynamicsCoefficients {
        drift: TermGroup {
            state: MatSchedule::constant(mat(r, n, n, 0.4)),
            control: MatSchedule::constant(mat(r, n, k, 0.4)),
            mean: MatSchedule::constant(mat(r, n, n, 0.3)),
            offset: VecSchedule::constant(vec(r, n, 0.5)),
        },
        own_noise: TermGroup {
            state: MatSchedule::constant(mat(r, n, n, 0.3)),
            control: MatSchedule::constant(mat(r, n, k, 0.3)),
            mean: MatSchedule::constant(mat(r, n, n, 0.2)),
            offset: VecSchedule::constant(vec(r, n, 0.4)),
        },
        common_noise: TermGroup {
            state: MatSchedule::constant(mat(r, n, n, 0.3)),
            control: MatSchedule::constant(mat(r, n, k, 0.3)),
            mean: MatSchedule::constant(mat(r, n, n, 0.2)),
            offset: VecSchedule::constant(vec(r, n, 0.4)),
        },
    };

    let q = psd(mat(r, n, n, 0.7));
    let g = psd(mat(r, n, n, 0.7));
    let r_noise = mat(r, k, k, 0.2);
    let r_weight = DMatrix::identity(k, k) * (1.0 + r.random::<f64>())
        + (&r_noise + r_noise.transpose()) * 0.5;
    let cost = CostCoefficients {
        state_weight: MatSchedule::constant(q),
        control_weight: MatSchedule::constant(r_weight),
        mean_coupling: MatSchedule::constant(mat(r, n, n, 0.5)),
        state_target: VecSchedule::constant(vec(r, n, 1.0)),
        control_target: VecSchedule::constant(vec(r, k, 1.0)),
        terminal_weight: g,
        terminal_coupling: mat(r, n, n, 0.5),
        terminal_target: vec(r, n, 1.0),
    };
    let initial = InitialStateLaw::Gaussian {
        mean: vec(r, n, 1.0),
        std: DVector::from_element(n, 0.5),
    };
    GameConfig::new(
        Dimensions::new(n, k, 8).unwrap(),
        TimeGrid::new(1.0, steps).unwrap(),
        dynamics,
        cost,
        initial,
        seed,
    )
    .unwrap()
}
