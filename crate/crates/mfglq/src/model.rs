//! Problem description: dimensions, coefficient schedules, assumption checks,
//! and the built-in production-planning preset.
//!
//! The agent state follows
//!
//! ```text
//! dx_i = (A x_i + B u_i + E xavg + f) dt
//!      + (C x_i + D u_i + F xavg + g) dW_i
//!      + (C0 x_i + D0 u_i + F0 xavg + g0) dW_0
//! ```
//!
//! where `xavg` is the population state average, `W_i` the agent's own noise
//! and `W_0` the common noise. Cost per agent:
//!
//! ```text
//! J_i = 1/2 E[ int_0^T ( |x_i - G1 xavg - eta1|^2_Q + |u_i - eta2|^2_R ) dt
//!            + |x_i(T) - G0 xavg(T) - eta0|^2_G ]
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg;
use crate::schedule::{MatSchedule, MatScheduleRepr, VecSchedule, VecScheduleRepr};

/// Relative eigenvalue tolerance for the positive-semidefiniteness checks.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// State dimension n.
    pub state: usize,
    /// Control dimension k.
    pub control: usize,
    /// Agent count N.
    pub agents: usize,
}

impl Dimensions {
    pub fn new(state: usize, control: usize, agents: usize) -> Result<Self> {
        if state < 1 || control < 1 {
            return Err(Error::config("state and control dimensions must be >= 1"));
        }
        if agents < 2 {
            return Err(Error::config(format!("agent count must be >= 2, got {agents}")));
        }
        Ok(Dimensions { state, control, agents })
    }
}

/// One linear term group of the state equation: `state x + control u + mean xavg + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGroup {
    pub state: MatSchedule,
    pub control: MatSchedule,
    pub mean: MatSchedule,
    pub offset: VecSchedule,
}

impl TermGroup {
    pub fn zero(n: usize, k: usize) -> Self {
        TermGroup {
            state: MatSchedule::zeros(n, n),
            control: MatSchedule::zeros(n, k),
            mean: MatSchedule::zeros(n, n),
            offset: VecSchedule::zeros(n),
        }
    }

    fn check(&self, n: usize, k: usize, nodes: usize, tag: &str) -> Result<()> {
        self.state.check(n, n, nodes, &format!("{tag}.state"))?;
        self.control.check(n, k, nodes, &format!("{tag}.control"))?;
        self.mean.check(n, n, nodes, &format!("{tag}.mean"))?;
        self.offset.check(n, nodes, &format!("{tag}.offset"))?;
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.state.all_finite()
            && self.control.all_finite()
            && self.mean.all_finite()
            && self.offset.all_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsCoefficients {
    pub drift: TermGroup,
    pub own_noise: TermGroup,
    pub common_noise: TermGroup,
}

impl DynamicsCoefficients {
    pub fn zero(n: usize, k: usize) -> Self {
        DynamicsCoefficients {
            drift: TermGroup::zero(n, k),
            own_noise: TermGroup::zero(n, k),
            common_noise: TermGroup::zero(n, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostCoefficients {
    /// Q: running state weight, symmetric, >= 0.
    pub state_weight: MatSchedule,
    /// R: running control weight, symmetric, possibly indefinite.
    pub control_weight: MatSchedule,
    /// G1: coupling of the state average into the running state penalty.
    pub mean_coupling: MatSchedule,
    /// eta1: running state target.
    pub state_target: VecSchedule,
    /// eta2: running control target.
    pub control_target: VecSchedule,
    /// G: terminal weight, symmetric, >= 0.
    pub terminal_weight: DMatrix<f64>,
    /// G0: coupling of the state average into the terminal penalty.
    pub terminal_coupling: DMatrix<f64>,
    /// eta0: terminal target.
    pub terminal_target: DVector<f64>,
}

impl CostCoefficients {
    pub fn zero(n: usize, k: usize) -> Self {
        CostCoefficients {
            state_weight: MatSchedule::zeros(n, n),
            control_weight: MatSchedule::zeros(k, k),
            mean_coupling: MatSchedule::zeros(n, n),
            state_target: VecSchedule::zeros(n),
            control_target: VecSchedule::zeros(k),
            terminal_weight: DMatrix::zeros(n, n),
            terminal_coupling: DMatrix::zeros(n, n),
            terminal_target: DVector::zeros(n),
        }
    }
}

/// I.i.d. initial state distribution shared by all agents.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStateLaw {
    PointMass { value: DVector<f64> },
    UniformBox { lo: DVector<f64>, hi: DVector<f64> },
    Gaussian { mean: DVector<f64>, std: DVector<f64> },
}

impl InitialStateLaw {
    pub fn point(value: DVector<f64>) -> Self {
        InitialStateLaw::PointMass { value }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialStateLaw::PointMass { value } => value.len(),
            InitialStateLaw::UniformBox { lo, .. } => lo.len(),
            InitialStateLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Distribution mean, used as the initial datum of the mean-field state.
    pub fn mean(&self) -> DVector<f64> {
        match self {
            InitialStateLaw::PointMass { value } => value.clone(),
            InitialStateLaw::UniformBox { lo, hi } => (lo + hi) * 0.5,
            InitialStateLaw::Gaussian { mean, .. } => mean.clone(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            InitialStateLaw::PointMass { value } => value.clone(),
            InitialStateLaw::UniformBox { lo, hi } => {
                DVector::from_iterator(
                    lo.len(),
                    lo.iter()
                        .zip(hi.iter())
                        .map(|(&l, &h)| l + (h - l) * rng.random::<f64>()),
                )
            }
            InitialStateLaw::Gaussian { mean, std } => {
                DVector::from_iterator(
                    mean.len(),
                    mean.iter().zip(std.iter()).map(|(&m, &s)| {
                        m + s * rng.sample::<f64, _>(rand_distr::StandardNormal)
                    }),
                )
            }
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::config(format!(
                "initial law dimension {} != state dimension {n}",
                self.dim()
            )));
        }
        match self {
            InitialStateLaw::PointMass { value } => {
                if !linalg::all_finite_vec(value) {
                    return Err(Error::config("initial point mass must be finite"));
                }
            }
            InitialStateLaw::UniformBox { lo, hi } => {
                if hi.len() != lo.len() {
                    return Err(Error::config("uniform box bounds have mismatched dims"));
                }
                if !linalg::all_finite_vec(lo) || !linalg::all_finite_vec(hi) {
                    return Err(Error::config("uniform box bounds must be finite"));
                }
                if lo.iter().zip(hi.iter()).any(|(&l, &h)| l > h) {
                    return Err(Error::config("uniform box needs lo <= hi"));
                }
            }
            InitialStateLaw::Gaussian { mean, std } => {
                if std.len() != mean.len() {
                    return Err(Error::config("gaussian parameters have mismatched dims"));
                }
                if !linalg::all_finite_vec(mean) || !linalg::all_finite_vec(std) {
                    return Err(Error::config("gaussian parameters must be finite"));
                }
                if std.iter().any(|&s| s < 0.0) {
                    return Err(Error::config("gaussian std must be nonnegative"));
                }
            }
        }
        Ok(())
    }
}

/// Complete, dimension-checked problem instance. Immutable after
/// construction; shared freely across solver and simulation tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct GameConfig {
    pub dims: Dimensions,
    pub grid: TimeGrid,
    pub dynamics: DynamicsCoefficients,
    pub cost: CostCoefficients,
    pub initial: InitialStateLaw,
    pub seed: u64,
}

/// Borrowed view of every coefficient on grid interval `j`.
#[derive(Clone, Copy)]
pub struct CoeffsAt<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub e: &'a DMatrix<f64>,
    pub f: &'a DVector<f64>,
    pub c: &'a DMatrix<f64>,
    pub d: &'a DMatrix<f64>,
    pub fm: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    pub c0: &'a DMatrix<f64>,
    pub d0: &'a DMatrix<f64>,
    pub f0: &'a DMatrix<f64>,
    pub g0: &'a DVector<f64>,
    pub q: &'a DMatrix<f64>,
    pub r: &'a DMatrix<f64>,
    pub gamma1: &'a DMatrix<f64>,
    pub eta1: &'a DVector<f64>,
    pub eta2: &'a DVector<f64>,
}

impl GameConfig {
    pub fn new(
        dims: Dimensions,
        grid: TimeGrid,
        dynamics: DynamicsCoefficients,
        cost: CostCoefficients,
        initial: InitialStateLaw,
        seed: u64,
    ) -> Result<Self> {
        let (n, k, nodes) = (dims.state, dims.control, grid.nodes());
        dynamics.drift.check(n, k, nodes, "dynamics.drift")?;
        dynamics.own_noise.check(n, k, nodes, "dynamics.own_noise")?;
        dynamics.common_noise.check(n, k, nodes, "dynamics.common_noise")?;
        cost.state_weight.check(n, n, nodes, "cost.state_weight")?;
        cost.control_weight.check(k, k, nodes, "cost.control_weight")?;
        cost.mean_coupling.check(n, n, nodes, "cost.mean_coupling")?;
        cost.state_target.check(n, nodes, "cost.state_target")?;
        cost.control_target.check(k, nodes, "cost.control_target")?;
        if cost.terminal_weight.shape() != (n, n) {
            return Err(Error::config("cost.terminal_weight must be n x n"));
        }
        if cost.terminal_coupling.shape() != (n, n) {
            return Err(Error::config("cost.terminal_coupling must be n x n"));
        }
        if cost.terminal_target.len() != n {
            return Err(Error::config("cost.terminal_target must have dim n"));
        }
        initial.check(n)?;
        Ok(GameConfig { dims, grid, dynamics, cost, initial, seed })
    }

    pub fn coeffs_at(&self, j: usize) -> CoeffsAt<'_> {
        let dy = &self.dynamics;
        let co = &self.cost;
        CoeffsAt {
            a: dy.drift.state.at(j),
            b: dy.drift.control.at(j),
            e: dy.drift.mean.at(j),
            f: dy.drift.offset.at(j),
            c: dy.own_noise.state.at(j),
            d: dy.own_noise.control.at(j),
            fm: dy.own_noise.mean.at(j),
            g: dy.own_noise.offset.at(j),
            c0: dy.common_noise.state.at(j),
            d0: dy.common_noise.control.at(j),
            f0: dy.common_noise.mean.at(j),
            g0: dy.common_noise.offset.at(j),
            q: co.state_weight.at(j),
            r: co.control_weight.at(j),
            gamma1: co.mean_coupling.at(j),
            eta1: co.state_target.at(j),
            eta2: co.control_target.at(j),
        }
    }

    /// Scale floor used by the positive-definiteness guards of the backward
    /// solvers: `1e-9 * max_t ||R(t)||`.
    pub fn weight_floor(&self) -> f64 {
        1e-9 * self.cost.control_weight.max_abs()
    }

    /// Errors unless every validation clause passes.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_config(self);
        if report.pass {
            Ok(())
        } else {
            Err(Error::config(format!("config fails validation:\n{report}")))
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RawGameConfig::from_config(self))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawGameConfig = serde_json::from_str(s)?;
        raw.into_config()
    }

    pub fn to_json_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Same problem on a different grid (constant-coefficient configs only;
    /// sampled schedules cannot be re-gridded without resampling).
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        let has_samples = |g: &TermGroup| {
            matches!(g.state, MatSchedule::Samples(_))
                || matches!(g.control, MatSchedule::Samples(_))
                || matches!(g.mean, MatSchedule::Samples(_))
                || matches!(g.offset, VecSchedule::Samples(_))
        };
        if has_samples(&self.dynamics.drift)
            || has_samples(&self.dynamics.own_noise)
            || has_samples(&self.dynamics.common_noise)
        {
            return Err(Error::config("cannot re-grid a config with sampled schedules"));
        }
        let mut cfg = self.clone();
        cfg.grid = TimeGrid::new(self.grid.horizon, steps)?;
        Ok(cfg)
    }

    /// Same problem with a different agent count.
    pub fn with_agents(&self, agents: usize) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.dims = Dimensions::new(self.dims.state, self.dims.control, agents)?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Validation report.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clause {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub clauses: Vec<Clause>,
    pub pass: bool,
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.clauses {
            writeln!(f, "[{}] {}: {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.detail)?;
        }
        write!(f, "overall: {}", if self.pass { "pass" } else { "FAIL" })
    }
}

fn sym_defect(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

fn schedule_sym_defect(s: &MatSchedule, nodes: usize) -> f64 {
    match s {
        MatSchedule::Constant(m) => sym_defect(m),
        MatSchedule::Samples(_) => (0..nodes).map(|j| sym_defect(s.at(j))).fold(0.0, f64::max),
    }
}

fn schedule_min_eig(s: &MatSchedule, nodes: usize) -> f64 {
    match s {
        MatSchedule::Constant(m) => linalg::min_sym_eigenvalue(m),
        MatSchedule::Samples(_) => (0..nodes)
            .map(|j| linalg::min_sym_eigenvalue(s.at(j)))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Checks each clause of the standing coefficient assumptions and reports
/// them individually; never errors.
pub fn validate_config(cfg: &GameConfig) -> ValidationReport {
    let nodes = cfg.grid.nodes();
    let mut clauses = Vec::new();
    let mut push = |name: &str, pass: bool, detail: String| {
        clauses.push(Clause { name: name.to_string(), pass, detail });
    };

    let dyn_finite = cfg.dynamics.drift.all_finite()
        && cfg.dynamics.own_noise.all_finite()
        && cfg.dynamics.common_noise.all_finite();
    push("dynamics finite", dyn_finite, "all dynamics schedules bounded".into());

    let cost_finite = cfg.cost.state_weight.all_finite()
        && cfg.cost.control_weight.all_finite()
        && cfg.cost.mean_coupling.all_finite()
        && cfg.cost.state_target.all_finite()
        && cfg.cost.control_target.all_finite()
        && linalg::all_finite_mat(&cfg.cost.terminal_weight)
        && linalg::all_finite_mat(&cfg.cost.terminal_coupling)
        && linalg::all_finite_vec(&cfg.cost.terminal_target);
    push("cost finite", cost_finite, "all cost schedules bounded".into());

    let scale_q = cfg.cost.state_weight.max_abs().max(1.0);
    let dq = schedule_sym_defect(&cfg.cost.state_weight, nodes);
    push("Q symmetric", dq <= PSD_TOL * scale_q, format!("max asymmetry {dq:.3e}"));

    let scale_r = cfg.cost.control_weight.max_abs().max(1.0);
    let dr = schedule_sym_defect(&cfg.cost.control_weight, nodes);
    push("R symmetric", dr <= PSD_TOL * scale_r, format!("max asymmetry {dr:.3e}"));

    let scale_g = cfg.cost.terminal_weight.norm().max(1.0);
    let dg = sym_defect(&cfg.cost.terminal_weight);
    push("G symmetric", dg <= PSD_TOL * scale_g, format!("asymmetry {dg:.3e}"));

    let q_min = schedule_min_eig(&cfg.cost.state_weight, nodes);
    push(
        "Q(.) >= 0",
        q_min >= -PSD_TOL * scale_q,
        format!("min eigenvalue {q_min:.3e}"),
    );

    let g_min = linalg::min_sym_eigenvalue(&cfg.cost.terminal_weight);
    push(
        "G >= 0",
        g_min >= -PSD_TOL * scale_g,
        format!("min eigenvalue {g_min:.3e}"),
    );

    let law = cfg.initial.check(cfg.dims.state);
    push(
        "initial law valid",
        law.is_ok(),
        law.err().map(|e| e.to_string()).unwrap_or_else(|| "i.i.d. with finite second moment".into()),
    );

    let pass = clauses.iter().all(|c| c.pass);
    ValidationReport { clauses, pass }
}

// ---------------------------------------------------------------------------
// Production-planning preset.
// ---------------------------------------------------------------------------

/// Scalar production-planning model: inventories track a common average
/// under demand, inventory sharing, and productivity/environment noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductionParams {
    /// Instantaneous inventory loss rate r (> 0).
    pub loss_rate: f64,
    /// Productivity adjustment coefficient c (> 0).
    pub productivity: f64,
    /// Inventory sharing rate m towards the market average.
    pub sharing_rate: f64,
    /// Constant demand d.
    pub demand: f64,
    /// Productivity volatility coefficient (own noise, control-proportional).
    pub control_vol: f64,
    /// Own-noise volatility offset.
    pub own_noise_offset: f64,
    /// Environment volatility coefficient (common noise, inventory-proportional).
    pub common_state_vol: f64,
    /// Common-noise volatility offset.
    pub common_noise_offset: f64,
    /// Running weight on the deviation from the average inventory.
    pub state_weight: f64,
    /// Running weight on the deviation from the reference productivity.
    pub control_weight: f64,
    /// Reference productivity benchmark.
    pub control_target: f64,
    /// Terminal weight on missing the inventory target.
    pub terminal_weight: f64,
    /// Target inventory at the terminal time.
    pub target_inventory: f64,
    /// Horizon T.
    pub horizon: f64,
    /// Initial inventory, uniform on [initial_lo, initial_hi].
    pub initial_lo: f64,
    pub initial_hi: f64,
}

impl Default for ProductionParams {
    fn default() -> Self {
        ProductionParams {
            loss_rate: 0.1,
            productivity: 0.5,
            sharing_rate: 0.3,
            demand: 2.0,
            control_vol: 0.1,
            own_noise_offset: 0.5,
            common_state_vol: 0.1,
            common_noise_offset: 0.5,
            state_weight: 1.0,
            control_weight: 10.0,
            control_target: 6.0,
            terminal_weight: 1.0,
            target_inventory: 2.5,
            horizon: 1.0,
            initial_lo: 2.5,
            initial_hi: 3.5,
        }
    }
}

/// Builds the scalar GameConfig for the production-planning model.
///
/// Inventory dynamics `dI_i = (-r I_i + c u_i + m (Iavg - I_i) - d) dt
/// + (bv u_i + go) dW_i + (av I_i + gc) dW_0` map onto the generic state
/// equation as `A = -(r+m)`, `B = c`, `E = m`, `f = -d`, `D = bv`, `g = go`,
/// `C0 = av`, `g0 = gc`, with mean-tracking running cost (`G1 = 1`) and an
/// absolute terminal target (`G0 = 0`, `eta0 = target`).
pub fn production_planning_config(
    params: &ProductionParams,
    agents: usize,
    steps: usize,
    seed: u64,
) -> Result<GameConfig> {
    if params.loss_rate <= 0.0 {
        return Err(Error::config("loss_rate must be positive"));
    }
    if params.productivity <= 0.0 {
        return Err(Error::config("productivity must be positive"));
    }
    let dims = Dimensions::new(1, 1, agents)?;
    let grid = TimeGrid::new(params.horizon, steps)?;
    let dynamics = DynamicsCoefficients {
        drift: TermGroup {
            state: MatSchedule::scalar(-(params.loss_rate + params.sharing_rate)),
            control: MatSchedule::scalar(params.productivity),
            mean: MatSchedule::scalar(params.sharing_rate),
            offset: VecSchedule::scalar(-params.demand),
        },
        own_noise: TermGroup {
            state: MatSchedule::scalar(0.0),
            control: MatSchedule::scalar(params.control_vol),
            mean: MatSchedule::scalar(0.0),
            offset: VecSchedule::scalar(params.own_noise_offset),
        },
        common_noise: TermGroup {
            state: MatSchedule::scalar(params.common_state_vol),
            control: MatSchedule::scalar(0.0),
            mean: MatSchedule::scalar(0.0),
            offset: VecSchedule::scalar(params.common_noise_offset),
        },
    };
    let cost = CostCoefficients {
        state_weight: MatSchedule::scalar(params.state_weight),
        control_weight: MatSchedule::scalar(params.control_weight),
        mean_coupling: MatSchedule::scalar(1.0),
        state_target: VecSchedule::scalar(0.0),
        control_target: VecSchedule::scalar(params.control_target),
        terminal_weight: DMatrix::from_element(1, 1, params.terminal_weight),
        terminal_coupling: DMatrix::from_element(1, 1, 0.0),
        terminal_target: DVector::from_element(1, params.target_inventory),
    };
    let initial = InitialStateLaw::UniformBox {
        lo: DVector::from_element(1, params.initial_lo),
        hi: DVector::from_element(1, params.initial_hi),
    };
    GameConfig::new(dims, grid, dynamics, cost, initial, seed)
}

/// Production preset with the default parameter set.
pub fn production_preset(agents: usize, steps: usize, seed: u64) -> GameConfig {
    production_planning_config(&ProductionParams::default(), agents, steps, seed)
        .expect("default production parameters are valid")
}

// ---------------------------------------------------------------------------
// JSON wire format.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTermGroup {
    state: MatScheduleRepr,
    control: MatScheduleRepr,
    mean: MatScheduleRepr,
    offset: VecScheduleRepr,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawDynamics {
    drift: RawTermGroup,
    own_noise: RawTermGroup,
    common_noise: RawTermGroup,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawCost {
    state_weight: MatScheduleRepr,
    control_weight: MatScheduleRepr,
    mean_coupling: MatScheduleRepr,
    state_target: VecScheduleRepr,
    control_target: VecScheduleRepr,
    terminal_weight: crate::schedule::MatRepr,
    terminal_coupling: crate::schedule::MatRepr,
    terminal_target: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawInitialLaw {
    PointMass { value: Vec<f64> },
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawGameConfig {
    dims: Dimensions,
    grid: TimeGrid,
    dynamics: RawDynamics,
    cost: RawCost,
    initial: RawInitialLaw,
    seed: u64,
}

impl RawGameConfig {
    fn from_config(cfg: &GameConfig) -> Self {
        let group = |g: &TermGroup| RawTermGroup {
            state: MatScheduleRepr::from_schedule(&g.state),
            control: MatScheduleRepr::from_schedule(&g.control),
            mean: MatScheduleRepr::from_schedule(&g.mean),
            offset: VecScheduleRepr::from_schedule(&g.offset),
        };
        RawGameConfig {
            dims: cfg.dims,
            grid: cfg.grid,
            dynamics: RawDynamics {
                drift: group(&cfg.dynamics.drift),
                own_noise: group(&cfg.dynamics.own_noise),
                common_noise: group(&cfg.dynamics.common_noise),
            },
            cost: RawCost {
                state_weight: MatScheduleRepr::from_schedule(&cfg.cost.state_weight),
                control_weight: MatScheduleRepr::from_schedule(&cfg.cost.control_weight),
                mean_coupling: MatScheduleRepr::from_schedule(&cfg.cost.mean_coupling),
                state_target: VecScheduleRepr::from_schedule(&cfg.cost.state_target),
                control_target: VecScheduleRepr::from_schedule(&cfg.cost.control_target),
                terminal_weight: crate::schedule::matrix_to_repr(&cfg.cost.terminal_weight),
                terminal_coupling: crate::schedule::matrix_to_repr(&cfg.cost.terminal_coupling),
                terminal_target: cfg.cost.terminal_target.iter().copied().collect(),
            },
            initial: match &cfg.initial {
                InitialStateLaw::PointMass { value } => RawInitialLaw::PointMass {
                    value: value.iter().copied().collect(),
                },
                InitialStateLaw::UniformBox { lo, hi } => RawInitialLaw::UniformBox {
                    lo: lo.iter().copied().collect(),
                    hi: hi.iter().copied().collect(),
                },
                InitialStateLaw::Gaussian { mean, std } => RawInitialLaw::Gaussian {
                    mean: mean.iter().copied().collect(),
                    std: std.iter().copied().collect(),
                },
            },
            seed: cfg.seed,
        }
    }

    fn into_config(self) -> Result<GameConfig> {
        let (n, k) = (self.dims.state, self.dims.control);
        let grid = TimeGrid::new(self.grid.horizon, self.grid.steps)?;
        let nodes = grid.nodes();
        let group = |g: &RawTermGroup, tag: &str| -> Result<TermGroup> {
            Ok(TermGroup {
                state: g.state.resolve(n, n, nodes, &format!("{tag}.state"))?,
                control: g.control.resolve(n, k, nodes, &format!("{tag}.control"))?,
                mean: g.mean.resolve(n, n, nodes, &format!("{tag}.mean"))?,
                offset: g.offset.resolve(n, nodes, &format!("{tag}.offset"))?,
            })
        };
        let dynamics = DynamicsCoefficients {
            drift: group(&self.dynamics.drift, "dynamics.drift")?,
            own_noise: group(&self.dynamics.own_noise, "dynamics.own_noise")?,
            common_noise: group(&self.dynamics.common_noise, "dynamics.common_noise")?,
        };
        let terminal_weight =
            crate::schedule::resolve_matrix(&self.cost.terminal_weight, n, n, "cost.terminal_weight")?;
        let terminal_coupling = crate::schedule::resolve_matrix(
            &self.cost.terminal_coupling,
            n,
            n,
            "cost.terminal_coupling",
        )?;
        if self.cost.terminal_target.len() != n {
            return Err(Error::config("cost.terminal_target must have dim n"));
        }
        let cost = CostCoefficients {
            state_weight: self.cost.state_weight.resolve(n, n, nodes, "cost.state_weight")?,
            control_weight: self.cost.control_weight.resolve(k, k, nodes, "cost.control_weight")?,
            mean_coupling: self.cost.mean_coupling.resolve(n, n, nodes, "cost.mean_coupling")?,
            state_target: self.cost.state_target.resolve(n, nodes, "cost.state_target")?,
            control_target: self.cost.control_target.resolve(k, nodes, "cost.control_target")?,
            terminal_weight,
            terminal_coupling,
            terminal_target: DVector::from_row_slice(&self.cost.terminal_target),
        };
        let initial = match self.initial {
            RawInitialLaw::PointMass { value } => InitialStateLaw::PointMass {
                value: DVector::from_row_slice(&value),
            },
            RawInitialLaw::UniformBox { lo, hi } => InitialStateLaw::UniformBox {
                lo: DVector::from_row_slice(&lo),
                hi: DVector::from_row_slice(&hi),
            },
            RawInitialLaw::Gaussian { mean, std } => InitialStateLaw::Gaussian {
                mean: DVector::from_row_slice(&mean),
                std: DVector::from_row_slice(&std),
            },
        };
        GameConfig::new(self.dims, grid, dynamics, cost, initial, self.seed)
    }
}
