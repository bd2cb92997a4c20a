//! Master field `U(t0, x, m0) = u(t0, x)`, its measure derivative through the
//! kernel `J`, the master-equation residual and restart consistency.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::hamiltonian;
use crate::heat_kernel::loglog_slope;
use crate::linearized::{j_kernel, JKernel, LinOptions, LinSystem};
use crate::measure::{d0_norm_with, Measure};
use crate::mfg::{solve_mfg, MfgProblem, MfgSolution};
use crate::parallel::par_map;

fn converged(problem: &MfgProblem) -> Result<MfgSolution> {
    let sol = solve_mfg(problem)?;
    if !sol.converged {
        return Err(Error::Divergence {
            slice: 0,
            reason: format!("MFG iteration stalled at gap {:.3e}", sol.final_gap()),
        });
    }
    Ok(sol)
}

fn at_terminal(problem: &MfgProblem, t0: f64) -> bool {
    (problem.time.t_end - t0).abs() <= 1e-12 * problem.time.t_end.abs().max(1.0)
}

/// `U(t0, ., m0)`, with the solution that produced it (`None` at `t0 = T`).
pub fn eval_u(problem: &MfgProblem, t0: f64, m0: &Measure) -> Result<(Field, Option<MfgSolution>)> {
    if at_terminal(problem, t0) {
        return Ok((problem.g.eval(m0.density())?, None));
    }
    let sol = converged(&problem.restart(t0, m0.clone())?)?;
    Ok((sol.u.first().clone(), Some(sol)))
}

/// `J(t0, ., m0, .)` from the linearization around the flow started at `(t0, m0)`.
pub fn measure_derivative(problem: &MfgProblem, t0: f64, m0: &Measure, opts: &LinOptions) -> Result<JKernel> {
    let p = problem.restart(t0, m0.clone())?;
    let sol = converged(&p)?;
    j_kernel(&LinSystem::around(&p, &sol)?, opts)
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeRow {
    pub h: f64,
    pub defect: f64,
    /// Defect with `J + 1` in place of `J`.
    pub defect_shifted: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeTable {
    pub rows: Vec<DerivativeRow>,
    pub slope: f64,
    pub max_shift_change: f64,
    pub pass: bool,
}

/// `|U((1 - h) m0 + h m0') - U(m0) - h <J, m0' - m0>|_inf` over `h`, with a log-log slope fit.
pub fn derivative_check(
    problem: &MfgProblem,
    t0: f64,
    m0: &Measure,
    m0_prime: &Measure,
    h_list: &[f64],
    opts: &LinOptions,
) -> Result<DerivativeTable> {
    if h_list.is_empty() || h_list.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
        return Err(Error::InvalidParameter("h values must lie in (0, 1]".into()));
    }
    if h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("h values must decrease".into()));
    }
    let w = m0_prime.density().sub(m0.density());
    if d0_norm_with(&w, problem.iteration.d0_cells)?.upper < 1e-12 {
        return Err(Error::Precondition("m0' coincides with m0".into()));
    }
    let (u0, _) = eval_u(problem, t0, m0)?;
    let j = if at_terminal(problem, t0) {
        None
    } else {
        Some(measure_derivative(problem, t0, m0, opts)?)
    };
    let (lin, lin_shifted) = match &j {
        Some(j) => (j.pair(&w), j.shifted(1.0).pair(&w)),
        None => {
            let d = problem.g.dm_apply(m0.density(), &w)?;
            (d.clone(), d.add(&Field::constant(w.grid(), w.integral())))
        }
    };
    let mixes = h_list.iter().map(|h| m0.mix(m0_prime, *h)).collect::<Result<Vec<_>>>()?;
    let fields = par_map(&mixes, |m| eval_u(problem, t0, m).map(|r| r.0)).into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(h_list.len());
    for (h, uh) in h_list.iter().zip(&fields) {
        let base = uh.sub(&u0);
        rows.push(DerivativeRow {
            h: *h,
            defect: base.sub(&lin.scale(*h)).max_abs(),
            defect_shifted: base.sub(&lin_shifted.scale(*h)).max_abs(),
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.defect > 0.0).map(|r| (r.h, r.defect)).collect();
    let slope = if pts.len() >= 2 { loglog_slope(&pts) } else { f64::INFINITY };
    let max_shift_change = rows.iter().map(|r| (r.defect - r.defect_shifted).abs()).fold(0.0, f64::max);
    let negligible = rows.iter().all(|r| r.defect <= 1e-10);
    Ok(DerivativeTable { rows, slope, max_shift_change, pass: negligible || slope >= 1.2 })
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualTerms {
    pub dt_u: f64,
    pub l_u: f64,
    pub hamiltonian: f64,
    pub l_y: f64,
    pub transport: f64,
    pub coupling: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub samples: Vec<usize>,
    /// `dU/dt + L_x U - H(x, D_xU) + int L_y J dm + F(x, m0) - int D_yJ . D_pH(y, D_yU) dm`.
    pub residual: Vec<f64>,
    pub terms: Vec<ResidualTerms>,
    pub max_abs: f64,
    /// Time offset of the central difference.
    pub delta_t: f64,
    /// `|L_y 1|_inf`.
    pub constant_defect: f64,
    /// Set at `t0 = T`, where the residual is replaced by `|U - G|_inf`.
    pub terminal_defect: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualOptions {
    /// Central-difference offset in time steps.
    pub offset_steps: usize,
    /// Largest nodes per axis for the `y` batch.
    pub max_nodes: usize,
    pub lin: LinOptions,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions { offset_steps: 2, max_nodes: 128, lin: LinOptions::default() }
    }
}

pub fn master_residual(
    problem: &MfgProblem,
    t0: f64,
    m0: &Measure,
    samples: &[usize],
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    let grid = problem.kernel.grid();
    if samples.iter().any(|s| *s >= grid.len()) {
        return Err(Error::InvalidParameter("sample index outside the grid".into()));
    }
    let constant_defect = problem.kernel.generator(&Field::constant(grid, 1.0))?.max_abs();
    if constant_defect > 1e-12 {
        return Err(Error::Precondition(format!("L applied to a constant gives {constant_defect:.3e}")));
    }
    if at_terminal(problem, t0) {
        let (u, _) = eval_u(problem, t0, m0)?;
        let g = problem.g.eval(m0.density())?;
        return Ok(ResidualReport {
            samples: samples.to_vec(),
            residual: vec![0.0; samples.len()],
            terms: vec![],
            max_abs: 0.0,
            delta_t: 0.0,
            constant_defect,
            terminal_defect: Some(u.max_diff(&g)),
        });
    }
    if (0..grid.dims()).any(|a| grid.n(a) > opts.max_nodes) {
        return Err(Error::SizeGuard(format!("y batch limited to {} nodes per axis", opts.max_nodes)));
    }
    let delta = opts.offset_steps.max(1) as f64 * problem.time.dt();
    if t0 - delta < -1e-12 || t0 + delta > problem.time.t_end + 1e-12 {
        return Err(Error::InvalidParameter(format!("t0 +- {delta} leaves the time window")));
    }
    let times = [t0 - delta, t0, t0 + delta];
    let evals = par_map(&times, |t| eval_u(problem, *t, m0)).into_iter().collect::<Result<Vec<_>>>()?;
    let dt_u = evals[2].0.sub(&evals[0].0).scale(0.5 / delta);
    let u = &evals[1].0;
    let h = problem.hamiltonian.as_ref();
    let du = u.gradient();
    let l_u = problem.kernel.generator(u)?;
    let ham = hamiltonian::eval_field(h, u, &du);
    let coupling = problem.f.eval(m0.density())?;
    let (l_y, transport) = if problem.f.is_zero() && problem.g.is_zero() {
        (Field::zeros(grid), Field::zeros(grid))
    } else {
        let j = measure_derivative(problem, t0, m0, &opts.lin)?;
        let l_y = j.pair(&problem.kernel.adjoint_generator(m0.density())?);
        let flux: Vec<Field> = hamiltonian::dp_field(h, u, &du).iter().map(|b| b.mul(m0.density())).collect();
        (l_y, j.pair_central_gradient(&flux))
    };
    let total = dt_u.add(&l_u).sub(&ham).add(&l_y).add(&coupling).sub(&transport);
    let residual: Vec<f64> = samples.iter().map(|&i| total.values()[i]).collect();
    let terms = samples
        .iter()
        .map(|&i| ResidualTerms {
            dt_u: dt_u.values()[i],
            l_u: l_u.values()[i],
            hamiltonian: ham.values()[i],
            l_y: l_y.values()[i],
            transport: transport.values()[i],
            coupling: coupling.values()[i],
        })
        .collect();
    let max_abs = residual.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(ResidualReport { samples: samples.to_vec(), residual, terms, max_abs, delta_t: delta, constant_defect, terminal_defect: None })
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowReport {
    pub s: f64,
    pub u_gap: f64,
    pub m_gap: f64,
    /// `sup_t (|u_fresh - u_base|_inf + d0(m_fresh, m_base))` over `[s, T]`.
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Restarts the game at `(s, m(s))` and compares with the base flow on `[s, T]`.
pub fn flow_consistency(problem: &MfgProblem, t0: f64, m0: &Measure, s: f64) -> Result<FlowReport> {
    let base_problem = problem.restart(t0, m0.clone())?;
    let time = base_problem.time;
    if !(s >= time.t0 - 1e-12 && s < time.t_end) {
        return Err(Error::InvalidParameter(format!("restart time {s} outside [{}, {})", time.t0, time.t_end)));
    }
    let base = converged(&base_problem)?;
    let k = ((s - time.t0) / time.dt()).round() as usize;
    let (ms, _) = Measure::from_signed_clamped(&base.m.slices[k])?;
    let fresh = converged(&base_problem.restart(s, ms)?)?;
    let cells = problem.iteration.d0_cells;
    let mut gap = 0.0f64;
    let mut u_gap = 0.0f64;
    let mut m_gap = 0.0f64;
    for (j, (uf, mf)) in fresh.u.slices.iter().zip(&fresh.m.slices).enumerate() {
        let du = uf.max_diff(&base.u.slices[k + j]);
        let dm = d0_norm_with(&mf.sub(&base.m.slices[k + j]), cells)?.upper;
        u_gap = u_gap.max(du);
        m_gap = m_gap.max(dm);
        gap = gap.max(du + dm);
    }
    let tolerance = 20.0 * problem.iteration.tol_d0;
    Ok(FlowReport { s: time.time(k), u_gap, m_gap, gap, tolerance, pass: gap <= tolerance })
}

#[derive(Clone, Debug, Serialize)]
pub struct T0Stability {
    /// `(h, |U(t0) - U(t0 - h)|_inf, ratio / h^{1/2})`.
    pub rows: Vec<(f64, f64, f64)>,
}

pub fn t0_stability(problem: &MfgProblem, t0: f64, m0: &Measure, hs: &[f64]) -> Result<T0Stability> {
    let (u0, _) = eval_u(problem, t0, m0)?;
    let fields = par_map(hs, |h| eval_u(problem, t0 - h, m0).map(|r| r.0)).into_iter().collect::<Result<Vec<_>>>()?;
    let rows = hs
        .iter()
        .zip(&fields)
        .map(|(h, f)| {
            let d = f.max_diff(&u0);
            (*h, d, d / h.sqrt())
        })
        .collect();
    Ok(T0Stability { rows })
}
