//! Forward-backward linear system
//!
//! `-z_t - L z + V . Dz = <dF/dm(x, m(t)), rho(t)> + b`, `z(T) = <dG/dm(x, m(T)), rho(T)> + z_T`,
//! `rho_t = L* rho + div(rho V + m Gamma Dz + c)`, `rho(t0) = rho0`,
//!
//! and the kernel `J(t0, x, m0, y) = z_y(t0, x)` obtained with `rho0 = delta_y`.

use serde::Serialize;

use crate::coupling::{Coupling, DerivativeVersion};
use crate::error::{Error, Result};
use crate::fokker_planck::solve_fp;
use crate::grid::{Field, Grid};
use crate::hamiltonian::{self, Hamiltonian};
use crate::heat_kernel::KernelCache;
use crate::hjb::{solve_linear_backward, Source};
use crate::measure::{d0_norm_with, mollify_field};
use crate::mfg::{optimal_drift, MfgProblem, MfgSolution};
use crate::parallel::par_map;
use crate::stepping::{StepOptions, TimeGrid, Trajectory, VectorTrajectory};

/// `d x d` component fields per time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixTrajectory {
    pub time: TimeGrid,
    pub slices: Vec<Vec<Vec<Field>>>,
}

impl MatrixTrajectory {
    pub fn identity(time: TimeGrid, grid: &Grid, scale: f64) -> Self {
        let d = grid.dims();
        let slice: Vec<Vec<Field>> = (0..d)
            .map(|a| (0..d).map(|b| Field::constant(grid, if a == b { scale } else { 0.0 })).collect())
            .collect();
        MatrixTrajectory { time, slices: vec![slice; time.steps + 1] }
    }

    /// `D_ppH(x, Du)` along `u`.
    pub fn hessian_of(h: &dyn Hamiltonian, u: &Trajectory) -> Self {
        let slices = u.slices.iter().map(|s| hamiltonian::dpp_field(h, s, &s.gradient())).collect();
        MatrixTrajectory { time: u.time, slices }
    }

    /// `Gamma v` at slice `k`.
    pub fn apply(&self, k: usize, v: &[Field]) -> Vec<Field> {
        self.slices[k]
            .iter()
            .map(|row| {
                let mut acc = Field::zeros(v[0].grid());
                for (g, vb) in row.iter().zip(v) {
                    acc = acc.add(&g.mul(vb));
                }
                acc
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct LinSystem {
    pub kernel: KernelCache,
    pub time: TimeGrid,
    pub v: VectorTrajectory,
    pub gamma: MatrixTrajectory,
    pub b: Source,
    pub c: Option<VectorTrajectory>,
    pub z_t: Field,
    pub rho0: Field,
    pub m: Trajectory,
    pub f: Coupling,
    pub g: Coupling,
    pub version: DerivativeVersion,
    pub step: StepOptions,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinOptions {
    pub damping: f64,
    pub max_iters: usize,
    /// Relative tolerance on the change of `(z, rho)` between alternations.
    pub tol: f64,
    /// Ellipticity constant `c_Gamma`; `None` skips the check.
    pub c_gamma: Option<f64>,
}

impl Default for LinOptions {
    fn default() -> Self {
        LinOptions { damping: 1.0, max_iters: 200, tol: 1e-12, c_gamma: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DualityReport {
    /// `int int Dz . Gamma Dz m`.
    pub energy: f64,
    /// `<z(t0), rho0> - <z_T, rho(T)> - int <b, rho> - int <Dz, c> - Q_F - Q_G`.
    pub rhs: f64,
    pub relative_gap: f64,
    /// `int <<dF/dm, rho>, rho> dt`.
    pub q_f: f64,
    /// `<<dG/dm, rho(T)>, rho(T)>`.
    pub q_g: f64,
    /// Smallest per-slice value of the F quadratic term.
    pub q_f_min: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinReport {
    pub iterations: usize,
    pub gaps: Vec<f64>,
    pub converged: bool,
    pub rho0_mass: f64,
    /// `(sup |z| + sup |rho|_1) / M` with `M = |z_T| + |rho0|_1 + T sup |b| + T sup |c|_1`.
    pub a_priori_ratio: f64,
    pub duality: DualityReport,
}

impl LinSystem {
    /// Linearization around an MFG solution with zero data.
    pub fn around(problem: &MfgProblem, sol: &MfgSolution) -> Result<Self> {
        let h = problem.hamiltonian.as_ref();
        if h.depends_on_u() {
            return Err(Error::Precondition("linearization needs a Hamiltonian independent of u".into()));
        }
        let grid = problem.kernel.grid();
        Ok(LinSystem {
            kernel: problem.kernel.clone(),
            time: sol.u.time,
            v: optimal_drift(h, &sol.u),
            gamma: MatrixTrajectory::hessian_of(h, &sol.u),
            b: Source::Zero,
            c: None,
            z_t: Field::zeros(grid),
            rho0: Field::zeros(grid),
            m: sol.m.clone(),
            f: problem.f.clone(),
            g: problem.g.clone(),
            version: DerivativeVersion::Raw,
            step: problem.step.clone(),
        })
    }

    fn grid(&self) -> &Grid {
        self.kernel.grid()
    }

    pub fn validate(&self, c_gamma: Option<f64>) -> Result<()> {
        let n = self.time.steps + 1;
        if self.v.slices.len() != n || self.gamma.slices.len() != n || self.m.slices.len() != n {
            return Err(Error::InvalidParameter("trajectory lengths differ from the time grid".into()));
        }
        if let Some(index) = self.rho0.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let d = self.grid().dims();
        for (k, s) in self.gamma.slices.iter().enumerate() {
            for i in 0..self.grid().len() {
                let e = |a: usize, b: usize| s[a][b].values()[i];
                if d == 2 && (e(0, 1) - e(1, 0)).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("Gamma not symmetric at slice {k}")));
                }
                if let Some(cg) = c_gamma {
                    let (lo, hi) = if d == 1 {
                        (e(0, 0), e(0, 0))
                    } else {
                        let tr = e(0, 0) + e(1, 1);
                        let det = e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0);
                        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
                        (0.5 * tr - disc, 0.5 * tr + disc)
                    };
                    if lo < 1.0 / cg - 1e-12 || hi > cg + 1e-12 {
                        return Err(Error::InvalidParameter(format!(
                            "Gamma eigenvalues [{lo:.4}, {hi:.4}] leave [{:.4}, {cg}] at slice {k}",
                            1.0 / cg
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn coupled(&self) -> bool {
        !(self.f.is_zero() && self.g.is_zero())
    }

    fn backward(&self, rho: Option<&Trajectory>) -> Result<Trajectory> {
        let n = self.time.steps;
        let (source, terminal) = match rho.filter(|_| self.coupled()) {
            None => (self.b.clone(), self.z_t.clone()),
            Some(rho) => {
                let mut slices = Vec::with_capacity(n + 1);
                for k in 0..=n {
                    let mut s = self.f.dm_apply_version(&self.m.slices[k], &rho.slices[k], self.version)?;
                    if let Some(b) = self.b.at(k) {
                        s.axpy(1.0, b);
                    }
                    slices.push(s);
                }
                let terminal = self.g.dm_apply_version(self.m.last(), rho.last(), self.version)?.add(&self.z_t);
                (Source::Slices(Trajectory::new(self.time, slices)?), terminal)
            }
        };
        solve_linear_backward(&self.kernel, &self.v, &source, &terminal, &self.time, &self.step)
    }

    fn forward(&self, z: Option<&Trajectory>) -> Result<Trajectory> {
        let flux = match z {
            None => self.c.clone(),
            Some(z) => {
                let slices = (0..=self.time.steps)
                    .map(|k| {
                        let gdz = self.gamma.apply(k, &z.slices[k].gradient());
                        gdz.iter()
                            .enumerate()
                            .map(|(a, f)| {
                                let mut s = f.mul(&self.m.slices[k]);
                                if let Some(c) = &self.c {
                                    s.axpy(1.0, &c.slices[k][a]);
                                }
                                s
                            })
                            .collect()
                    })
                    .collect();
                Some(VectorTrajectory { time: self.time, slices })
            }
        };
        solve_fp(&self.kernel, &self.v, &self.rho0, flux.as_ref(), &self.time, &self.step)
    }

    /// `<<dF/dm(m(t)), rho(t)>, rho(t)>` per slice.
    fn quadratic_f(&self, rho: &Trajectory) -> Result<Vec<f64>> {
        (0..=self.time.steps)
            .map(|k| Ok(self.f.dm_apply_version(&self.m.slices[k], &rho.slices[k], self.version)?.dot(&rho.slices[k])))
            .collect()
    }

    pub fn duality(&self, z: &Trajectory, rho: &Trajectory) -> Result<DualityReport> {
        let n = self.time.steps;
        let time = &self.time;
        let mut energy_k = Vec::with_capacity(n + 1);
        let mut b_k = Vec::with_capacity(n + 1);
        let mut c_k = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let dz = z.slices[k].gradient();
            let gdz = self.gamma.apply(k, &dz);
            let mut e = Field::zeros(self.grid());
            for (a, g) in dz.iter().zip(&gdz) {
                e = e.add(&a.mul(g));
            }
            energy_k.push(e.dot(&self.m.slices[k]));
            b_k.push(self.b.at(k).map_or(0.0, |b| b.dot(&rho.slices[k])));
            c_k.push(self.c.as_ref().map_or(0.0, |c| dz.iter().zip(&c.slices[k]).map(|(a, b)| a.dot(b)).sum()));
        }
        let qf_k = self.quadratic_f(rho)?;
        let energy = Trajectory::time_integral(time, |k| energy_k[k]);
        let q_f = Trajectory::time_integral(time, |k| qf_k[k]);
        let q_g = self.g.dm_apply_version(self.m.last(), rho.last(), self.version)?.dot(rho.last());
        let rhs = z.first().dot(&self.rho0)
            - self.z_t.dot(rho.last())
            - Trajectory::time_integral(time, |k| b_k[k])
            - Trajectory::time_integral(time, |k| c_k[k])
            - q_f
            - q_g;
        let scale = energy.abs().max(rhs.abs()).max(1e-300);
        Ok(DualityReport {
            energy,
            rhs,
            relative_gap: (energy - rhs).abs() / scale,
            q_f,
            q_g,
            q_f_min: qf_k.iter().cloned().fold(f64::INFINITY, f64::min),
        })
    }

    fn data_norm(&self) -> f64 {
        let horizon = self.time.t_end - self.time.t0;
        let b_sup = (0..=self.time.steps).filter_map(|k| self.b.at(k)).map(|b| b.max_abs()).fold(0.0, f64::max);
        let c_sup = self.c.as_ref().map_or(0.0, |c| {
            c.slices.iter().map(|s| s.iter().map(|f| f.l1()).sum::<f64>()).fold(0.0, f64::max)
        });
        self.z_t.max_abs() + self.rho0.l1() + horizon * (b_sup + c_sup)
    }
}

fn rel_change(a: &Trajectory, b: &Trajectory, sup_l1: bool) -> f64 {
    let mut diff = 0.0f64;
    let mut size = 0.0f64;
    for (x, y) in a.slices.iter().zip(&b.slices) {
        let d = y.sub(x);
        if sup_l1 {
            diff = diff.max(d.l1());
            size = size.max(y.l1());
        } else {
            diff = diff.max(d.max_abs());
            size = size.max(y.max_abs());
        }
    }
    if size == 0.0 {
        diff
    } else {
        diff / size
    }
}

/// Damped alternation: `z` from `rho`, then `rho` from `z`, until the relative
/// change of both falls below `opts.tol`. Non-convergence is reported, not raised.
pub fn solve_linear_system(sys: &LinSystem, opts: &LinOptions) -> Result<(Trajectory, Trajectory, LinReport)> {
    sys.validate(opts.c_gamma)?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) || opts.max_iters == 0 {
        return Err(Error::InvalidParameter("damping must lie in (0, 1] and max_iters be positive".into()));
    }
    let mut rho = sys.forward(None)?;
    let mut z = sys.backward(Some(&rho))?;
    let mut gaps = Vec::new();
    let mut converged = false;
    if !sys.coupled() {
        rho = sys.forward(Some(&z))?;
        gaps.push(0.0);
        converged = true;
    } else {
        for _ in 0..opts.max_iters {
            let fresh = sys.forward(Some(&z))?;
            let next = if opts.damping == 1.0 {
                fresh
            } else {
                fresh.map(|k, f| rho.slices[k].scale(1.0 - opts.damping).add(&f.scale(opts.damping)))
            };
            let z_next = sys.backward(Some(&next))?;
            let gap = rel_change(&rho, &next, true).max(rel_change(&z, &z_next, false));
            rho = next;
            z = z_next;
            gaps.push(gap);
            if gap < opts.tol {
                converged = true;
                break;
            }
        }
    }
    let duality = sys.duality(&z, &rho)?;
    let sup_z = z.slices.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
    let sup_rho = rho.slices.iter().map(|s| s.l1()).fold(0.0, f64::max);
    let m = sys.data_norm();
    let report = LinReport {
        iterations: gaps.len(),
        gaps,
        converged,
        rho0_mass: sys.rho0.integral(),
        a_priori_ratio: if m > 0.0 { (sup_z + sup_rho) / m } else { 0.0 },
        duality,
    };
    Ok((z, rho, report))
}

/// Grid delta at node `y` smoothed by the mollifier of width `2 dx`.
pub fn mollified_delta(grid: &Grid, y: usize) -> Result<Field> {
    let eps = 2.0 * (0..grid.dims()).map(|a| grid.dx(a)).fold(0.0, f64::max);
    mollify_field(&Field::delta(grid, y), eps)
}

/// `z_y(t0, .)` for `rho0 = delta_y`, with the system's own data replaced by zeros.
pub fn j_field(base: &LinSystem, y: usize, opts: &LinOptions) -> Result<Field> {
    j_field_for(base, mollified_delta(base.grid(), y)?, opts).map_err(|e| e.tagged(format!("y = {y}")))
}

/// `z(t0, .)` for a given initial density.
pub fn j_field_for(base: &LinSystem, rho0: Field, opts: &LinOptions) -> Result<Field> {
    let mut sys = base.clone();
    sys.rho0 = rho0;
    sys.b = Source::Zero;
    sys.c = None;
    sys.z_t = Field::zeros(base.grid());
    let (z, _, report) = solve_linear_system(&sys, opts)?;
    if !report.converged {
        return Err(Error::Divergence {
            slice: 0,
            reason: format!("linear system did not converge, last gap {:.3e}", report.gaps.last().unwrap_or(&f64::NAN)),
        });
    }
    Ok(z.slices[0].clone())
}

/// `J(t0, x, m0, y)` stored column by column (`columns[j]` is `x -> J(x, y_j)`).
#[derive(Clone, Debug)]
pub struct JKernel {
    pub grid: Grid,
    pub columns: Vec<Field>,
}

impl JKernel {
    /// `<J(x, .), w>_y`.
    pub fn pair(&self, w: &Field) -> Field {
        let mut acc = Field::zeros(&self.grid);
        let cell = self.grid.cell();
        for (col, wy) in self.columns.iter().zip(w.values()) {
            if *wy != 0.0 {
                acc.axpy(wy * cell, col);
            }
        }
        acc
    }

    /// Row `y -> J(x_i, y)`.
    pub fn row(&self, i: usize) -> Field {
        Field::new(&self.grid, self.columns.iter().map(|c| c.values()[i]).collect())
            .unwrap_or_else(|_| Field::zeros(&self.grid))
    }

    /// `int D_yJ(x, y) . w(y) dy` with `D_y` the periodic central difference on the grid.
    pub fn pair_central_gradient(&self, w: &[Field]) -> Field {
        let g = &self.grid;
        let mut acc = Field::zeros(g);
        for (a, wa) in w.iter().enumerate().take(g.dims()) {
            let n = g.n(a);
            let vals = (0..g.len())
                .map(|j| {
                    let mi = g.multi_index(j);
                    let mut lo = mi;
                    let mut hi = mi;
                    lo[a] = (mi[a] + n - 1) % n;
                    hi[a] = (mi[a] + 1) % n;
                    (wa.values()[g.flat_index(lo)] - wa.values()[g.flat_index(hi)]) / (2.0 * g.dx(a))
                })
                .collect();
            acc = acc.add(&self.pair(&Field::new(g, vals).unwrap_or_else(|_| Field::zeros(g))));
        }
        acc
    }

    pub fn shifted(&self, c: f64) -> JKernel {
        JKernel { grid: self.grid.clone(), columns: self.columns.iter().map(|f| f.map(|v| v + c)).collect() }
    }

    /// Row-major `n x n` matrix with `x` as the row index.
    pub fn to_matrix(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n * n];
        for (j, col) in self.columns.iter().enumerate() {
            for (i, v) in col.values().iter().enumerate() {
                out[i * n + j] = *v;
            }
        }
        out
    }
}

/// All columns of `J`, solved in parallel.
pub fn j_kernel(base: &LinSystem, opts: &LinOptions) -> Result<JKernel> {
    let nodes: Vec<usize> = (0..base.grid().len()).collect();
    let columns = par_map(&nodes, |&y| j_field(base, y, opts)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(JKernel { grid: base.grid().clone(), columns })
}

/// Dual-norm distance used by reports: `sup_t d0(rho_a(t) - rho_b(t))`.
pub fn sup_dual_gap(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    let mut best = 0.0f64;
    for (x, y) in a.slices.iter().zip(&b.slices) {
        best = best.max(d0_norm_with(&y.sub(x), 256)?.upper);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::profile;
    use crate::levy::LevyTriplet;
    use crate::grid::periodic_convolve;
    use crate::measure::Measure;

    fn base(f: Coupling, g: Coupling, steps: usize) -> LinSystem {
        let grid = Grid::line(128, 4.0).unwrap();
        let time = TimeGrid::new(0.0, 0.5, steps).unwrap();
        let triplet = LevyTriplet::fractional(1, 1.5).unwrap();
        let m0 = Measure::gaussian_mixture(&grid, &[(1.0, [0.0, 0.0], 0.4)]).unwrap();
        let v = VectorTrajectory::constant(time, &[Field::from_fn(&grid, |p| 0.3 * (p[0]).sin())]);
        LinSystem {
            kernel: KernelCache::new(&grid, &triplet, time.dt()).unwrap(),
            time,
            v,
            gamma: MatrixTrajectory::identity(time, &grid, 2.0),
            b: Source::Zero,
            c: None,
            z_t: Field::zeros(&grid),
            rho0: Field::zeros(&grid),
            m: Trajectory::constant(time, m0.density()),
            f,
            g,
            version: DerivativeVersion::Raw,
            step: StepOptions { budget_factor: None, ..Default::default() },
        }
    }

    fn gauss(grid: &Grid, s: &str) -> Coupling {
        Coupling::Conv { phi: profile(grid, s).unwrap() }
    }

    #[test]
    fn zero_data_gives_zero() {
        let sys = base(Coupling::Zero, Coupling::Zero, 64);
        let (z, rho, r) = solve_linear_system(&sys, &LinOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(z.slices.iter().map(|s| s.max_abs()).fold(0.0, f64::max), 0.0);
        assert_eq!(rho.slices.iter().map(|s| s.max_abs()).fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn one_way_coupling_matches_standalone() {
        let mut sys = base(Coupling::Zero, Coupling::Zero, 64);
        let g = sys.grid().clone();
        sys.z_t = Field::from_fn(&g, |p| (-p[0] * p[0]).exp());
        sys.b = Source::Constant(Field::from_fn(&g, |p| 0.1 * p[0].cos()));
        let (z, rho, _) = solve_linear_system(&sys, &LinOptions::default()).unwrap();
        let z_alone = solve_linear_backward(&sys.kernel, &sys.v, &sys.b, &sys.z_t, &sys.time, &sys.step).unwrap();
        assert_eq!(z, z_alone);
        let rho_alone = sys.forward(Some(&z_alone)).unwrap();
        assert_eq!(rho, rho_alone);
    }

    fn data(sys: &mut LinSystem, s: f64) {
        let g = sys.grid().clone();
        sys.z_t = Field::from_fn(&g, |p| s * (-(p[0] - 0.5).powi(2)).exp());
        sys.b = Source::Constant(Field::from_fn(&g, |p| s * 0.2 * (-p[0] * p[0]).exp()));
        sys.rho0 = Field::from_fn(&g, |p| s * p[0] * (-2.0 * p[0] * p[0]).exp());
        sys.c = Some(VectorTrajectory::constant(sys.time, &[Field::from_fn(&g, |p| s * 0.1 * (-p[0] * p[0]).exp())]));
    }

    #[test]
    fn duality_identity_and_sign() {
        let g = Grid::line(128, 4.0).unwrap();
        let mut sys = base(gauss(&g, "gauss(0.5)"), gauss(&g, "gauss(0.7)"), 256);
        data(&mut sys, 1.0);
        let (_, _, r) = solve_linear_system(&sys, &LinOptions::default()).unwrap();
        assert!(r.converged, "{:?}", r.gaps);
        assert!(r.duality.relative_gap <= 1e-4, "{:?}", r.duality);
        assert!(r.duality.q_f_min >= -1e-8 && r.duality.q_g >= -1e-8);
        assert!(r.a_priori_ratio.is_finite());
    }

    #[test]
    fn linear_in_data() {
        let g = Grid::line(128, 4.0).unwrap();
        let mut one = base(gauss(&g, "gauss(0.5)"), gauss(&g, "gauss(0.7)"), 64);
        data(&mut one, 1.0);
        let (z1, r1, _) = solve_linear_system(&one, &LinOptions::default()).unwrap();
        for s in [2.0, 4.0] {
            let mut sc = one.clone();
            data(&mut sc, s);
            let (zs, rs, _) = solve_linear_system(&sc, &LinOptions::default()).unwrap();
            assert!(zs.max_diff(&z1.map(|_, f| f.scale(s))) <= 1e-9 * s);
            assert!(rs.max_diff(&r1.map(|_, f| f.scale(s))) <= 1e-9 * s);
        }
    }

    #[test]
    fn decoupled_j_vanishes_and_superposes() {
        let sys = base(Coupling::Zero, Coupling::Zero, 64);
        assert_eq!(j_field(&sys, 40, &LinOptions::default()).unwrap().max_abs(), 0.0);
        let g = sys.grid().clone();
        let coupled = base(gauss(&g, "gauss(0.5)"), Coupling::Zero, 64);
        let opts = LinOptions::default();
        let a = j_field(&coupled, 50, &opts).unwrap();
        let b = j_field(&coupled, 70, &opts).unwrap();
        let avg = mollified_delta(&g, 50).unwrap().add(&mollified_delta(&g, 70).unwrap()).scale(0.5);
        let j = j_field_for(&coupled, avg, &opts).unwrap();
        assert!(j.max_diff(&a.add(&b).scale(0.5)) <= 1e-10);
    }

    #[test]
    fn first_iterate_matches_duhamel() {
        let g = Grid::line(128, 4.0).unwrap();
        let phi = profile(&g, "gauss(0.5)").unwrap();
        let mut sys = base(Coupling::Conv { phi: phi.clone() }, Coupling::Zero, 8);
        sys.v = VectorTrajectory::zeros(sys.time, &g);
        sys.rho0 = mollified_delta(&g, 72).unwrap();
        // Gamma = 0 freezes rho to the z = 0 flow, so z is the first iterate
        sys.gamma = MatrixTrajectory::identity(sys.time, &g, 0.0);
        let (z1, _, _) = solve_linear_system(&sys, &LinOptions::default()).unwrap();
        let k = &sys.kernel;
        let nodes = 64;
        let h = 0.5 / nodes as f64;
        let mut oracle = Field::zeros(&g);
        for i in 0..=nodes {
            let s = i as f64 * h;
            let w = if i == 0 || i == nodes { 0.5 * h } else { h };
            let rho = k.apply_adjoint(s, &sys.rho0).unwrap();
            let f = periodic_convolve(&rho, &phi).unwrap();
            oracle.axpy(w, &k.apply(s, &f).unwrap());
        }
        assert!(z1.first().max_diff(&oracle) <= 5e-3, "{}", z1.first().max_diff(&oracle));
    }

    #[test]
    fn gamma_checks() {
        let g = Grid::line(128, 4.0).unwrap();
        let sys = base(gauss(&g, "gauss(0.5)"), Coupling::Zero, 64);
        assert!(sys.validate(Some(2.0)).is_ok());
        assert!(sys.validate(Some(1.5)).is_err());
    }

    #[test]
    fn kernel_pairing_and_shift() {
        let g = Grid::line(32, 4.0).unwrap();
        let cols: Vec<Field> = (0..32).map(|j| Field::from_fn(&g, |p| p[0] * j as f64)).collect();
        let k = JKernel { grid: g.clone(), columns: cols };
        let w = Field::delta(&g, 3).sub(&Field::delta(&g, 5));
        assert!(k.pair(&w).max_diff(&k.shifted(1.0).pair(&w)) < 1e-12);
        assert_eq!(k.row(2).values()[7], g.coord(0, 2) * 7.0);
        // J(x, y) = x y: central differences in y are exact for linear profiles away from the wrap
        let w = Field::from_fn(&g, |p| (-4.0 * p[0] * p[0]).exp());
        let direct: f64 = (1..31).map(|j| g.coord(0, 5) * w.values()[j] * g.dx(0)).sum();
        let lin = JKernel { grid: g.clone(), columns: vec![Field::from_fn(&g, |p| p[0]); 32] };
        let mut alt = lin.clone();
        for (j, c) in alt.columns.iter_mut().enumerate() {
            *c = Field::from_fn(&g, |p| p[0] * g.coord(0, j));
        }
        let v = alt.pair_central_gradient(&[w.clone()]).values()[5];
        assert!((v - direct).abs() < 1e-6, "{v} {direct}");
        assert!(lin.pair_central_gradient(&[w]).max_abs() < 1e-6);
    }

}
