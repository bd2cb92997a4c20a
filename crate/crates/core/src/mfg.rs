//! The coupled system `-u_t - L u + H(x, u, Du) = F(x, m)`, `u(T) = G(x, m(T))`,
//! `m_t = L* m + div(m D_pH(x, u, Du))`, `m(t0) = m0`, solved by damped Picard
//! iteration on the measure flow.

use std::sync::Arc;

use serde::Serialize;

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::fokker_planck::{mass_report, solve_fp, tightness_report};
use crate::grid::Field;
use crate::hamiltonian::{self, Hamiltonian};
use crate::heat_kernel::KernelCache;
use crate::hjb::{solve_hjb, Source};
use crate::measure::{d0_norm_with, Measure, TightnessFn};
use crate::parallel::par_map;
use crate::stepping::{StepOptions, TimeGrid, Trajectory, VectorTrajectory};

#[derive(Clone, Debug, Serialize)]
pub struct IterationOptions {
    /// Relaxation `lambda` in `mu <- (1 - lambda) mu + lambda S(mu)`.
    pub damping: f64,
    pub max_iters: usize,
    pub tol_d0: f64,
    /// Block budget of the d0 solver in 2D.
    pub d0_cells: usize,
    /// Consecutive gap increases that trigger halving `lambda`.
    pub patience: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions { damping: 0.5, max_iters: 60, tol_d0: 1e-6, d0_cells: 256, patience: 5 }
    }
}

/// Starting flow of the iteration.
#[derive(Clone, Debug, Default)]
pub enum InitialGuess {
    /// `m0` frozen in time.
    #[default]
    Frozen,
    /// `m0` carried by the driftless forward equation.
    HeatFlow,
    Given(Trajectory),
}

#[derive(Clone, Debug)]
pub struct MfgProblem {
    pub kernel: KernelCache,
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub f: Coupling,
    pub g: Coupling,
    pub m0: Measure,
    pub time: TimeGrid,
    pub iteration: IterationOptions,
    pub step: StepOptions,
    pub initial: InitialGuess,
}

impl MfgProblem {
    pub fn validate(&self) -> Result<()> {
        let it = &self.iteration;
        if !(it.damping > 0.0 && it.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!("damping {} outside (0, 1]", it.damping)));
        }
        if !(it.tol_d0 > 0.0) {
            return Err(Error::InvalidParameter("tol_d0 must be positive".into()));
        }
        if it.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        self.kernel.grid().same(self.m0.grid())?;
        self.f.validate()?;
        self.g.validate()
    }

    pub fn is_decoupled(&self) -> bool {
        self.f.is_zero() && self.g.is_zero()
    }

    /// Same data on `[t0, T]` from `m0`; `T - t0` must be a whole number of steps.
    pub fn restart(&self, t0: f64, m0: Measure) -> Result<MfgProblem> {
        let dt = self.time.dt();
        let t_end = self.time.t_end;
        let steps = ((t_end - t0) / dt).round();
        if steps < 1.0 || ((t_end - t0) - steps * dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "restart time {t0} is not on the step lattice of width {dt} ending at {t_end}"
            )));
        }
        let mut p = self.clone();
        p.time = TimeGrid::new(t_end - steps * dt, t_end, steps as usize)?;
        p.m0 = m0;
        p.initial = InitialGuess::Frozen;
        Ok(p)
    }

    /// One application of the best-response map: HJB against `mu`, then FP with the optimal drift.
    pub fn best_response(&self, mu: &Trajectory) -> Result<(Trajectory, Trajectory)> {
        let source = if self.f.is_zero() {
            Source::Zero
        } else {
            let slices = mu.slices.iter().map(|m| self.f.eval(m)).collect::<Result<Vec<_>>>()?;
            Source::Slices(Trajectory::new(self.time, slices)?)
        };
        let terminal = self.g.eval(mu.last())?;
        let u = solve_hjb(&self.kernel, self.hamiltonian.as_ref(), &source, &terminal, &self.time, &self.step)?;
        let drift = optimal_drift(self.hamiltonian.as_ref(), &u);
        let m = solve_fp(&self.kernel, &drift, self.m0.density(), None, &self.time, &self.step)?;
        Ok((u, m))
    }

    fn initial_flow(&self) -> Result<Trajectory> {
        match &self.initial {
            InitialGuess::Frozen => Ok(Trajectory::constant(self.time, self.m0.density())),
            InitialGuess::HeatFlow => {
                let zero = VectorTrajectory::zeros(self.time, self.kernel.grid());
                solve_fp(&self.kernel, &zero, self.m0.density(), None, &self.time, &self.step)
            }
            InitialGuess::Given(t) => {
                if t.slices.len() != self.time.steps + 1 {
                    return Err(Error::InvalidParameter("initial flow length mismatch".into()));
                }
                Ok(t.clone())
            }
        }
    }
}

/// `D_pH(x, u, Du)` along a value trajectory.
pub fn optimal_drift(h: &dyn Hamiltonian, u: &Trajectory) -> VectorTrajectory {
    let slices = u.slices.iter().map(|s| hamiltonian::dp_field(h, s, &s.gradient())).collect();
    VectorTrajectory { time: u.time, slices }
}

/// `sup_t d0(a(t), b(t))`, using block-coarsened upper bounds in 2D.
pub fn sup_d0(a: &Trajectory, b: &Trajectory, cells: usize) -> Result<f64> {
    let mut best = 0.0f64;
    for (x, y) in a.slices.iter().zip(&b.slices) {
        best = best.max(d0_norm_with(&y.sub(x), cells)?.upper);
    }
    Ok(best)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MfgDiagnostics {
    /// `(iteration, new lambda)` for each automatic halving.
    pub damping_changes: Vec<(usize, f64)>,
    pub max_mass_defect: f64,
    pub max_undershoot: f64,
    /// Mass removed when clipping the final flow to measures.
    pub clamp_change: f64,
    pub tightness_bound: f64,
    pub tight_every_iterate: bool,
    /// Geometric mean of successive gap ratios over the last iterations.
    pub observed_rate: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct MfgSolution {
    pub u: Trajectory,
    pub m: Trajectory,
    pub measures: Vec<Measure>,
    pub iterations: usize,
    pub gaps: Vec<f64>,
    pub converged: bool,
    pub diagnostics: MfgDiagnostics,
}

impl MfgSolution {
    pub fn final_gap(&self) -> f64 {
        self.gaps.last().copied().unwrap_or(f64::INFINITY)
    }
}

pub fn solve_mfg(problem: &MfgProblem) -> Result<MfgSolution> {
    problem.validate()?;
    let it = &problem.iteration;
    let psi = TightnessFn::new(problem.kernel.grid());
    let triplet = problem.kernel.triplet();
    let mut diag = MfgDiagnostics { tight_every_iterate: true, ..Default::default() };
    let record = |u: &Trajectory, m: &Trajectory, diag: &mut MfgDiagnostics| {
        let mr = mass_report(m);
        diag.max_mass_defect = diag.max_mass_defect.max(mr.max_defect);
        diag.max_undershoot = diag.max_undershoot.max(mr.undershoot);
        let drift_sup = optimal_drift(problem.hamiltonian.as_ref(), u).sup_norm();
        let tr = tightness_report(m, &psi, triplet, drift_sup);
        diag.tightness_bound = tr.bound;
        diag.tight_every_iterate &= tr.within;
    };

    if problem.is_decoupled() {
        let (u, m) = problem.best_response(&Trajectory::constant(problem.time, problem.m0.density()))
            .map_err(|e| e.tagged("iteration 1"))?;
        record(&u, &m, &mut diag);
        return finish(u, m, 1, vec![0.0], true, diag);
    }

    let mut mu = problem.initial_flow()?;
    let mut lambda = it.damping;
    let mut gaps: Vec<f64> = Vec::new();
    let mut rising = 0usize;
    let mut converged = false;
    for k in 1..=it.max_iters {
        let (u, m) = problem.best_response(&mu).map_err(|e| e.tagged(format!("iteration {k}")))?;
        record(&u, &m, &mut diag);
        let next = Trajectory::new(
            mu.time,
            mu.slices.iter().zip(&m.slices).map(|(a, b)| a.scale(1.0 - lambda).add(&b.scale(lambda))).collect(),
        )?;
        let gap = sup_d0(&mu, &next, it.d0_cells)?;
        if let Some(prev) = gaps.last() {
            rising = if gap > *prev { rising + 1 } else { 0 };
        }
        gaps.push(gap);
        mu = next;
        if gap < it.tol_d0 {
            converged = true;
            break;
        }
        if rising >= it.patience {
            lambda *= 0.5;
            rising = 0;
            diag.damping_changes.push((k, lambda));
        }
    }
    let iterations = gaps.len();
    if !converged {
        diag.warnings.push(format!(
            "no convergence in {} iterations; final gap {:.3e}",
            iterations,
            gaps.last().copied().unwrap_or(f64::NAN)
        ));
    }
    let tail: Vec<f64> = gaps.iter().rev().take(6).cloned().collect();
    if tail.len() >= 3 && tail.iter().all(|g| *g > 0.0) {
        let r = (tail[0] / tail[tail.len() - 1]).powf(1.0 / (tail.len() - 1) as f64);
        diag.observed_rate = Some(r);
    }
    let (u, m) = problem.best_response(&mu).map_err(|e| e.tagged("final response"))?;
    record(&u, &m, &mut diag);
    finish(u, m, iterations, gaps, converged, diag)
}

fn finish(
    u: Trajectory,
    m: Trajectory,
    iterations: usize,
    gaps: Vec<f64>,
    converged: bool,
    mut diagnostics: MfgDiagnostics,
) -> Result<MfgSolution> {
    let mut measures = Vec::with_capacity(m.slices.len());
    for s in &m.slices {
        let (meas, change) = Measure::from_signed_clamped(s)?;
        diagnostics.clamp_change = diagnostics.clamp_change.max(change);
        measures.push(meas);
    }
    Ok(MfgSolution { u, m, measures, iterations, gaps, converged, diagnostics })
}

#[derive(Clone, Debug, Serialize)]
pub struct LasryLionsReport {
    /// The Bregman-type structure integral on the left.
    pub cross_term: f64,
    pub rhs: f64,
    /// `int (G(m1(T)) - G(m2(T))) (m1 - m2)(T) + int int (F(m1) - F(m2)) (m1 - m2)`.
    pub coupling_terms: f64,
    /// `|lhs - (rhs - coupling_terms)|`: discretization error of the energy identity.
    pub identity_defect: f64,
    /// Smallest margin of the split positive-part bound over `s`, for `u`-dependent Hamiltonians.
    pub split_margin: Option<f64>,
    pub pass: bool,
}

fn compatible(a: &MfgSolution, b: &MfgSolution) -> Result<()> {
    a.u.grid().same(b.u.grid())?;
    let (ta, tb) = (a.u.time, b.u.time);
    if ta.steps != tb.steps || (ta.t0 - tb.t0).abs() > 1e-12 || (ta.t_end - tb.t_end).abs() > 1e-12 {
        return Err(Error::InvalidParameter("solutions live on different time grids".into()));
    }
    Ok(())
}

/// Per-slice `int B(u_i, u_j) m_j` with `B = H(x, w, Du_i) - H(x, w, Du_j) - D_pH(x, w, Du_j)(Du_i - Du_j)`
/// and `w = u_j` (the Hamiltonian is frozen at the other solution's value).
fn structure_slice(h: &dyn Hamiltonian, ui: &Field, uj: &Field, mj: &Field) -> f64 {
    let g = ui.grid();
    let gi = ui.gradient();
    let gj = uj.gradient();
    let vals: Vec<f64> = (0..g.len())
        .map(|n| {
            let x = g.point(n);
            let w = uj.values()[n];
            let pi = hamiltonian::point_of(&gi, n);
            let pj = hamiltonian::point_of(&gj, n);
            let dp = h.dp(x, w, pj);
            let lin: f64 = (0..g.dims()).map(|a| dp[a] * (pi[a] - pj[a])).sum();
            (h.h(x, w, pi) - h.h(x, w, pj) - lin) * mj.values()[n]
        })
        .collect();
    vals.iter().sum::<f64>() * g.cell()
}

/// Monotonicity estimate for two solutions of the same problem with different
/// initial measures. For `H(x, p)` the right side is `int (u1 - u2)(t0) (m0^1 - m0^2)`;
/// for `H = H_1(x, p) + H_2(x, u)` the split bound
/// `phi(s) + c2 int_s^T phi >= J(s)`, `phi = int u^+ m^+ + u^- m^-`, is checked at every slice.
pub fn lasry_lions_check(problem: &MfgProblem, a: &MfgSolution, b: &MfgSolution) -> Result<LasryLionsReport> {
    compatible(a, b)?;
    let h = problem.hamiltonian.as_ref();
    let time = a.u.time;
    let n = time.steps;
    let per_slice: Vec<f64> = (0..=n)
        .map(|k| {
            structure_slice(h, &a.u.slices[k], &b.u.slices[k], &b.m.slices[k])
                + structure_slice(h, &b.u.slices[k], &a.u.slices[k], &a.m.slices[k])
        })
        .collect();
    let cross_term = Trajectory::time_integral(&time, |k| per_slice[k]);
    let du0 = a.u.first().sub(b.u.first());
    let dm0 = a.m.first().sub(b.m.first());
    let rhs = du0.dot(&dm0);
    let mut coupling_terms = 0.0;
    if !problem.g.is_zero() {
        let dg = problem.g.eval(a.m.last())?.sub(&problem.g.eval(b.m.last())?);
        coupling_terms += dg.dot(&a.m.last().sub(b.m.last()));
    }
    if !problem.f.is_zero() {
        let mut pf = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let df = problem.f.eval(&a.m.slices[k])?.sub(&problem.f.eval(&b.m.slices[k])?);
            pf.push(df.dot(&a.m.slices[k].sub(&b.m.slices[k])));
        }
        coupling_terms += Trajectory::time_integral(&time, |k| pf[k]);
    }
    if !h.depends_on_u() {
        let identity_defect = (cross_term - (rhs - coupling_terms)).abs();
        let pass = cross_term >= -1e-8 && cross_term <= rhs + 1e-7;
        return Ok(LasryLionsReport { cross_term, rhs, coupling_terms, identity_defect, split_margin: None, pass });
    }
    // split bound for u-dependent Hamiltonians
    let g = a.u.grid();
    let mut c2 = 0.0f64;
    let phi: Vec<f64> = (0..=n)
        .map(|k| {
            let du = a.u.slices[k].sub(&b.u.slices[k]);
            let dm = a.m.slices[k].sub(&b.m.slices[k]);
            du.zip_map(&dm, |u, m| u.max(0.0) * m.max(0.0) + (-u).max(0.0) * (-m).max(0.0)).integral()
        })
        .collect();
    for k in 0..=n {
        for sol in [a, b] {
            let s = &sol.u.slices[k];
            let grad = s.gradient();
            for i in 0..g.len() {
                c2 = c2.max(h.du(g.point(i), s.values()[i], hamiltonian::point_of(&grad, i)));
            }
        }
    }
    let dt = time.dt();
    let mut margin = f64::INFINITY;
    let mut j_tail = 0.0;
    let mut phi_tail = 0.0;
    for s in (0..=n).rev() {
        if s < n {
            j_tail += 0.5 * dt * (per_slice[s] + per_slice[s + 1]);
            phi_tail += 0.5 * dt * (phi[s] + phi[s + 1]);
        }
        margin = margin.min(phi[s] + c2 * phi_tail - j_tail);
    }
    let rhs_split = phi[0] + c2 * phi_tail;
    let identity_defect = f64::NAN;
    let pass = cross_term >= -1e-8 && margin >= -1e-7;
    Ok(LasryLionsReport {
        cross_term,
        rhs: rhs_split,
        coupling_terms,
        identity_defect,
        split_margin: Some(margin),
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityPoint {
    pub d0_initial: f64,
    pub sup_d0_m: f64,
    pub sup_u: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityLadder {
    pub points: Vec<StabilityPoint>,
    /// `max ratio / min ratio`.
    pub band: f64,
    pub pass: bool,
}

fn require_u_free(problem: &MfgProblem) -> Result<()> {
    if problem.hamiltonian.depends_on_u() {
        return Err(Error::Precondition("stability probes need a Hamiltonian independent of u".into()));
    }
    Ok(())
}

fn compare(problem: &MfgProblem, base: &MfgSolution, m0_prime: &Measure) -> Result<StabilityPoint> {
    let cells = problem.iteration.d0_cells;
    let d0_initial = d0_norm_with(&m0_prime.density().sub(problem.m0.density()), cells)?.upper;
    if d0_initial < 1e-12 {
        return Err(Error::Precondition(format!("degenerate perturbation, d0 = {d0_initial:.3e}")));
    }
    let mut p = problem.clone();
    p.m0 = m0_prime.clone();
    let other = solve_mfg(&p)?;
    let sup_d0_m = sup_d0(&base.m, &other.m, cells)?;
    let sup_u = base.u.max_diff(&other.u);
    Ok(StabilityPoint { d0_initial, sup_d0_m, sup_u, ratio: (sup_d0_m + sup_u) / d0_initial })
}

/// `(sup_t d0(m, m') + sup_t |u - u'|_inf) / d0(m0, m0')` for one perturbation.
pub fn lipschitz_stability_probe(problem: &MfgProblem, m0_prime: &Measure) -> Result<StabilityPoint> {
    require_u_free(problem)?;
    let base = solve_mfg(problem)?;
    compare(problem, &base, m0_prime)
}

/// Probe over a perturbation ladder; passes when the ratios stay within a factor 10.
pub fn stability_ladder(problem: &MfgProblem, perturbations: &[Measure]) -> Result<StabilityLadder> {
    require_u_free(problem)?;
    let base = solve_mfg(problem)?;
    let points = par_map(perturbations, |m| compare(problem, &base, m))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let hi = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
    let lo = points.iter().map(|p| p.ratio).fold(f64::INFINITY, f64::min);
    let band = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    Ok(StabilityLadder { points, band, pass: band <= 10.0 })
}
