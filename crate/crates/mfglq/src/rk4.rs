//! Classical fourth-order Runge-Kutta integration of backward (terminal
//! value) systems on the solver grid.
//!
//! Coefficient schedules are left-constant per interval, so all four stage
//! evaluations inside interval `j` use coefficient sample `j`. Coupled
//! unknowns are stacked into one flat state vector and stepped together;
//! staggered stepping of mutually coupled equations would break the order of
//! the scheme.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Hard cap on state magnitude; beyond it the integration is declared
/// divergent instead of running to infinity.
const DIVERGENCE_LIMIT: f64 = 1e12;

/// Integrate `dy/dt = rhs(j, t, y)` backward from `y(T) = terminal`, one RK4
/// step per grid interval. Returns the state at every node, indexed by node.
///
/// `rhs(j, t, y, dy)` writes the time derivative at `t` (inside interval `j`)
/// into `dy`. `on_node(j, y)` runs after each node value is produced
/// (including the terminal node) and may adjust it in place (e.g. enforce
/// symmetry) or reject it.
pub fn integrate_backward<F, G>(
    grid: &TimeGrid,
    terminal: DVector<f64>,
    mut rhs: F,
    mut on_node: G,
) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(usize, f64, &DVector<f64>, &mut DVector<f64>) -> Result<()>,
    G: FnMut(usize, &mut DVector<f64>) -> Result<()>,
{
    let steps = grid.steps;
    let dim = terminal.len();
    let mut nodes: Vec<DVector<f64>> = vec![DVector::zeros(dim); steps + 1];

    let mut y = terminal;
    on_node(steps, &mut y)?;
    nodes[steps] = y.clone();

    let mut k1 = DVector::zeros(dim);
    let mut k2 = DVector::zeros(dim);
    let mut k3 = DVector::zeros(dim);
    let mut k4 = DVector::zeros(dim);
    let mut stage = DVector::zeros(dim);

    for j in (0..steps).rev() {
        let t1 = grid.node(j + 1);
        let h = grid.node(j) - t1; // negative step
        let tm = t1 + 0.5 * h;
        let t0 = grid.node(j);

        rhs(j, t1, &y, &mut k1)?;
        stage.copy_from(&y);
        stage.axpy(0.5 * h, &k1, 1.0);
        rhs(j, tm, &stage, &mut k2)?;
        stage.copy_from(&y);
        stage.axpy(0.5 * h, &k2, 1.0);
        rhs(j, tm, &stage, &mut k3)?;
        stage.copy_from(&y);
        stage.axpy(h, &k3, 1.0);
        rhs(j, t0, &stage, &mut k4)?;

        let w = h / 6.0;
        y.axpy(w, &k1, 1.0);
        y.axpy(2.0 * w, &k2, 1.0);
        y.axpy(2.0 * w, &k3, 1.0);
        y.axpy(w, &k4, 1.0);

        check_finite(&y, t0)?;
        on_node(j, &mut y)?;
        nodes[j] = y.clone();
    }
    Ok(nodes)
}

fn check_finite(y: &DVector<f64>, t: f64) -> Result<()> {
    for &v in y.iter() {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                time: t,
                what: format!("state component reached {v:.3e}"),
            });
        }
    }
    Ok(())
}
