use std::path::{Path, PathBuf};

use levy_mfg::coupling::{CouplingSpec, DerivativeVersion};
use levy_mfg::grid::Grid;
use levy_mfg::levy::LevyTriplet;
use levy_mfg::measure::Measure;
use levy_mfg::mfg::{InitialGuess, IterationOptions};
use levy_mfg::stepping::{StepOptions, TimeGrid};
use serde::Deserialize;

/// Config rejected before any artifact is written.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub operator: String,
    pub grid: GridSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default = "default_hamiltonian")]
    pub hamiltonian: String,
    #[serde(default)]
    pub coupling: CouplingPair,
    #[serde(default)]
    pub m0: Option<M0Spec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub kernel: KernelTask,
    #[serde(default)]
    pub hjb: HjbTask,
    #[serde(default)]
    pub fp: FpTask,
    #[serde(default)]
    pub linsys: LinsysTask,
    #[serde(default)]
    pub master: MasterTask,
    #[serde(default)]
    pub check: CheckTask,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_hamiltonian() -> String {
    "quadratic".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "one")]
    pub dims: usize,
    pub n: usize,
    pub half_width: f64,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { horizon: 0.5, steps: 64 }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingPair {
    pub f: Option<CouplingSpec>,
    pub g: Option<CouplingSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    #[serde(default = "unit")]
    pub weight: f64,
    pub centre: Vec<f64>,
    pub sigma: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum M0Spec {
    Bumps(Vec<Bump>),
    /// Binary field file, relative paths resolved against the config.
    File(PathBuf),
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitialSpec {
    Frozen,
    HeatFlow,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub damping: f64,
    pub max_iters: usize,
    pub tol_d0: f64,
    pub patience: usize,
    pub d0_cells: usize,
    pub picard_sweeps: usize,
    pub budget_factor: Option<f64>,
    pub initial: InitialSpec,
    pub lin_max_iters: usize,
    pub lin_tol: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let it = IterationOptions::default();
        let st = StepOptions::default();
        SolverSpec {
            damping: it.damping,
            max_iters: it.max_iters,
            tol_d0: it.tol_d0,
            patience: it.patience,
            d0_cells: it.d0_cells,
            picard_sweeps: st.picard_sweeps,
            budget_factor: st.budget_factor,
            initial: InitialSpec::Frozen,
            lin_max_iters: 200,
            lin_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub kernel_slope: f64,
    pub mass: f64,
    pub boundary_mass: f64,
    pub spectral_tail: f64,
    pub duality_gap: f64,
    pub quadratic_floor: f64,
    pub derivative_slope: f64,
    pub shift_invariance: f64,
    pub residual: f64,
    pub flow_factor: f64,
    pub m1: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            kernel_slope: 0.02,
            mass: 1e-10,
            boundary_mass: 1e-6,
            spectral_tail: 1e-8,
            duality_gap: 1e-4,
            quadratic_floor: -1e-8,
            derivative_slope: 1.2,
            shift_invariance: 1e-12,
            residual: 5e-2,
            flow_factor: 20.0,
            m1: -1e-10,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelTask {
    pub beta: Vec<usize>,
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
    /// Times at which kernel fields are written.
    pub dump: Vec<f64>,
}

impl Default for KernelTask {
    fn default() -> Self {
        KernelTask { beta: vec![1, 2], t_min: 0.1, t_max: 1.0, samples: 7, dump: vec![0.1, 1.0] }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbTask {
    /// Terminal profile, e.g. `gauss(0.7)`.
    pub terminal: String,
    /// Include `F(m0)` as a frozen running cost.
    pub frozen_cost: bool,
}

impl Default for HjbTask {
    fn default() -> Self {
        HjbTask { terminal: "gauss(1)".into(), frozen_cost: false }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpTask {
    /// Constant drift per axis; missing entries are zero.
    pub drift: Vec<f64>,
    /// Optional profile multiplying the first drift component.
    pub profile: Option<String>,
}

impl Default for FpTask {
    fn default() -> Self {
        FpTask { drift: vec![], profile: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinsysTask {
    pub z_terminal: Option<String>,
    pub rho0: Option<String>,
    /// Source profile `b`, constant in time.
    pub source: Option<String>,
    pub c_gamma: Option<f64>,
    /// Also compute the full `J` kernel (one linear solve per node).
    pub kernel: bool,
}

impl Default for LinsysTask {
    fn default() -> Self {
        LinsysTask { z_terminal: Some("gauss(0.7)".into()), rho0: Some("odd(0.5)".into()), source: None, c_gamma: None, kernel: false }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasterTask {
    pub t0: f64,
    /// Perturbed initial measure; empty means one bump at `-0.5` on the first axis.
    pub perturbation: Vec<Bump>,
    pub h: Vec<f64>,
    pub samples: Vec<f64>,
    /// Time of the residual evaluation; defaults to the middle of the window.
    pub residual_t0: Option<f64>,
    pub restart: Option<f64>,
    pub offset_steps: usize,
}

impl Default for MasterTask {
    fn default() -> Self {
        MasterTask {
            t0: 0.0,
            perturbation: vec![],
            h: vec![0.2, 0.1, 0.05, 0.025],
            samples: vec![-1.0, 0.0, 0.5, 1.0],
            residual_t0: None,
            restart: None,
            offset_steps: 2,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckTask {
    pub trials: usize,
    pub m2_derivative: DerivativeVersion,
    /// Measure for the (M2) spectrum; defaults to a mollified Dirac at the origin.
    pub at: Option<Vec<Bump>>,
    pub hamiltonian_probes: usize,
}

impl Default for CheckTask {
    fn default() -> Self {
        CheckTask { trials: 50, m2_derivative: DerivativeVersion::Raw, at: None, hamiltonian_probes: 200 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        if let Some(M0Spec::File(p)) = &mut cfg.m0 {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenario.trim().is_empty() {
            return bad("scenario must be non-empty");
        }
        if !(1..=2).contains(&self.grid.dims) {
            return bad("grid.dims must be 1 or 2");
        }
        let triplet = self.triplet()?;
        let alpha = triplet.order_alpha().map_err(|e| ConfigError(format!("operator: {e}")))?;
        if !(alpha > 1.0 && alpha <= 2.0) {
            return bad(format!("operator order {alpha} outside (1, 2]"));
        }
        self.grid()?;
        if !(self.time.horizon > 0.0 && self.time.horizon.is_finite()) || self.time.steps == 0 {
            return bad("time.horizon must be positive and time.steps at least 1");
        }
        levy_mfg::hamiltonian::from_catalog(&self.hamiltonian).map_err(|e| ConfigError(format!("hamiltonian: {e}")))?;
        let s = &self.solver;
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return bad("solver.damping must lie in (0, 1]");
        }
        if s.max_iters == 0 || s.lin_max_iters == 0 || s.patience == 0 {
            return bad("iteration counts must be positive");
        }
        if !(s.tol_d0 > 0.0) || !(s.lin_tol > 0.0) {
            return bad("solver tolerances must be positive");
        }
        if s.picard_sweeps > 8 {
            return bad("solver.picard_sweeps must be at most 8");
        }
        let k = &self.kernel;
        if k.beta.is_empty() || k.beta.iter().any(|b| *b == 0 || *b > 4) {
            return bad("kernel.beta entries must lie in 1..=4");
        }
        if !(k.t_min > 0.0 && k.t_max > k.t_min) || k.samples < 2 {
            return bad("kernel needs 0 < t_min < t_max and at least two samples");
        }
        if k.dump.iter().any(|t| !(*t > 0.0)) {
            return bad("kernel.dump times must be positive");
        }
        if self.fp.drift.len() > self.grid.dims {
            return bad("fp.drift has more entries than axes");
        }
        let m = &self.master;
        if m.h.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return bad("master.h entries must lie in (0, 1]");
        }
        if !(m.t0 >= 0.0 && m.t0 < self.time.horizon) {
            return bad("master.t0 must lie in [0, horizon)");
        }
        if self.check.trials == 0 {
            return bad("check.trials must be positive");
        }
        for b in self.bumps_all() {
            if b.centre.len() != self.grid.dims || !(b.sigma > 0.0) || !(b.weight > 0.0) {
                return bad("bumps need positive weight and sigma and one centre coordinate per axis");
            }
        }
        Ok(())
    }

    fn bumps_all(&self) -> Vec<&Bump> {
        let mut out: Vec<&Bump> = self.master.perturbation.iter().collect();
        if let Some(M0Spec::Bumps(b)) = &self.m0 {
            out.extend(b);
        }
        if let Some(b) = &self.check.at {
            out.extend(b);
        }
        out
    }

    pub fn triplet(&self) -> Result<LevyTriplet, ConfigError> {
        LevyTriplet::from_catalog(&self.operator, self.grid.dims).map_err(|e| ConfigError(format!("operator: {e}")))
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        let g = &self.grid;
        Grid::new(&vec![g.n; g.dims], &vec![g.half_width; g.dims]).map_err(|e| ConfigError(format!("grid: {e}")))
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::new(0.0, self.time.horizon, self.time.steps).expect("validated")
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            picard_sweeps: self.solver.picard_sweeps,
            budget_factor: self.solver.budget_factor,
            ..StepOptions::default()
        }
    }

    pub fn iteration(&self) -> IterationOptions {
        let s = &self.solver;
        IterationOptions {
            damping: s.damping,
            max_iters: s.max_iters,
            tol_d0: s.tol_d0,
            d0_cells: s.d0_cells,
            patience: s.patience,
        }
    }

    pub fn initial(&self) -> InitialGuess {
        match self.solver.initial {
            InitialSpec::Frozen => InitialGuess::Frozen,
            InitialSpec::HeatFlow => InitialGuess::HeatFlow,
        }
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(0)
    }
}

pub fn bumps_measure(grid: &Grid, bumps: &[Bump]) -> levy_mfg::error::Result<Measure> {
    let b: Vec<(f64, [f64; 2], f64)> = bumps
        .iter()
        .map(|b| {
            let mut c = [0.0; 2];
            c[..b.centre.len()].copy_from_slice(&b.centre);
            (b.weight, c, b.sigma)
        })
        .collect();
    Measure::gaussian_mixture(grid, &b)
}
