//! Time grids, trajectories, and the exponential integrator shared by the
//! backward and forward solvers.
//!
//! One step of `v' = -Psi v + N(v)` reads
//! `v+ = e^{-dt Psi} v + dt [phi_1 N(v) + phi_2 (N(v+) - N(v))]`;
//! with zero correction sweeps the last term is dropped (exponential Euler).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::heat_kernel::KernelCache;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::InvalidParameter(format!("time window [{t0}, {t_end}] is empty")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("need at least one time step".into()));
        }
        Ok(TimeGrid { t0, t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    /// Same step, restarted at slice `k`.
    pub fn tail_from(&self, k: usize) -> Result<Self> {
        if k >= self.steps {
            return Err(Error::InvalidParameter(format!("restart slice {k} out of range")));
        }
        Ok(TimeGrid { t0: self.time(k), t_end: self.t_end, steps: self.steps - k })
    }
}

/// Scalar fields on a uniform time grid; slice `k` sits at `t0 + k dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub time: TimeGrid,
    pub slices: Vec<Field>,
}

impl Trajectory {
    pub fn new(time: TimeGrid, slices: Vec<Field>) -> Result<Self> {
        if slices.len() != time.steps + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} slices for {} steps",
                slices.len(),
                time.steps
            )));
        }
        Ok(Trajectory { time, slices })
    }

    pub fn constant(time: TimeGrid, f: &Field) -> Self {
        Trajectory { time, slices: vec![f.clone(); time.steps + 1] }
    }

    pub fn grid(&self) -> &Grid {
        self.slices[0].grid()
    }

    pub fn first(&self) -> &Field {
        &self.slices[0]
    }

    pub fn last(&self) -> &Field {
        self.slices.last().expect("nonempty")
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn max_diff(&self, other: &Trajectory) -> f64 {
        self.slices.iter().zip(&other.slices).map(|(a, b)| a.max_diff(b)).fold(0.0, f64::max)
    }

    /// Trapezoidal time quadrature of a per-slice scalar.
    pub fn time_integral<F: Fn(usize) -> f64>(time: &TimeGrid, f: F) -> f64 {
        let n = time.steps;
        let mut acc = 0.5 * (f(0) + f(n));
        for k in 1..n {
            acc += f(k);
        }
        acc * time.dt()
    }

    pub fn map<F: Fn(usize, &Field) -> Field>(&self, f: F) -> Trajectory {
        Trajectory {
            time: self.time,
            slices: self.slices.iter().enumerate().map(|(k, s)| f(k, s)).collect(),
        }
    }
}

/// Vector fields on a time grid, one component list per slice.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorTrajectory {
    pub time: TimeGrid,
    pub slices: Vec<Vec<Field>>,
}

impl VectorTrajectory {
    pub fn zeros(time: TimeGrid, grid: &Grid) -> Self {
        VectorTrajectory { time, slices: vec![vec![Field::zeros(grid); grid.dims()]; time.steps + 1] }
    }

    pub fn constant(time: TimeGrid, v: &[Field]) -> Self {
        VectorTrajectory { time, slices: vec![v.to_vec(); time.steps + 1] }
    }

    pub fn sup_norm(&self) -> f64 {
        self.slices.iter().flatten().map(Field::max_abs).fold(0.0, f64::max)
    }
}

/// Integrator knobs shared by every time-dependent solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepOptions {
    /// Corrector sweeps per step; 0 gives first order, 2 gives second order.
    pub picard_sweeps: usize,
    /// Enforce `dt <= factor * dx_min^alpha` when set.
    pub budget_factor: Option<f64>,
    /// Sup-norm growth factor treated as blow-up.
    pub blowup: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { picard_sweeps: 2, budget_factor: Some(0.5), blowup: 1e6 }
    }
}

impl StepOptions {
    pub fn first_order() -> Self {
        StepOptions { picard_sweeps: 0, ..Default::default() }
    }
}

/// Rejects time steps beyond `factor * dx_min^alpha` and operators of order <= 1.
pub fn check_budget(kernel: &KernelCache, time: &TimeGrid, opts: &StepOptions) -> Result<()> {
    let dt = time.dt();
    if (dt - kernel.dt()).abs() > 1e-12 * dt {
        return Err(Error::InvalidParameter(format!(
            "time grid step {dt} differs from kernel step {}",
            kernel.dt()
        )));
    }
    let alpha = kernel.triplet().order_alpha()?;
    if alpha <= 1.0 {
        return Err(Error::InvalidParameter(format!("solvers need order > 1, got {alpha}")));
    }
    if let Some(factor) = opts.budget_factor {
        let limit = factor * kernel.grid().dx_min().powf(alpha);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepBudget { dt, limit });
        }
    }
    Ok(())
}

/// Runs `steps` exponential steps from `init`. `nonlinear(j, v)` is the
/// forcing at stepping index `j`. Returns all states in stepping order.
pub(crate) fn integrate<N>(
    kernel: &KernelCache,
    adjoint: bool,
    init: &Field,
    steps: usize,
    opts: &StepOptions,
    nonlinear: N,
) -> Result<Vec<Field>>
where
    N: Fn(usize, &Field) -> Result<Field>,
{
    let grid = kernel.grid();
    let c = kernel.etd(adjoint);
    let dt = kernel.dt();
    let scale = init.max_abs().max(1.0);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(init.clone());
    let mut v = init.clone();
    let mut vh = v.spectrum();
    let mut n_cur = nonlinear(0, &v)?;
    for j in 0..steps {
        let nh = n_cur.spectrum();
        let base: Vec<Complex64> = (0..grid.len())
            .map(|i| c.exp[i] * vh[i] + dt * c.phi1[i] * nh[i])
            .collect();
        let mut next = Field::raw(grid, grid.inverse_real(base.clone()));
        let mut n_next = nonlinear(j + 1, &next)?;
        for _ in 0..opts.picard_sweeps {
            let nnh = n_next.spectrum();
            let corrected: Vec<Complex64> =
                (0..grid.len()).map(|i| base[i] + dt * c.phi2[i] * (nnh[i] - nh[i])).collect();
            next = Field::raw(grid, grid.inverse_real(corrected));
            n_next = nonlinear(j + 1, &next)?;
        }
        let norm = next.max_abs();
        if !norm.is_finite() || norm > opts.blowup * scale {
            return Err(Error::Divergence {
                slice: j,
                reason: format!("sup norm {norm:.3e} after step {}", j + 1),
            });
        }
        // Re-transform the real field so spectra stay Hermitian.
        vh = next.spectrum();
        v = next;
        n_cur = n_next;
        states.push(v.clone());
    }
    Ok(states)
}
