use std::sync::Arc;

use levy_mfg::coupling::{check_m1, check_m2, profile, Coupling};
use levy_mfg::error::Error;
use levy_mfg::fokker_planck::{mass_report, solve_fp, tightness_report};
use levy_mfg::grid::{Field, Grid};
use levy_mfg::hamiltonian::{self, Hamiltonian};
use levy_mfg::heat_kernel::{log_times, verify_k_assumption, KernelCache};
use levy_mfg::hjb::{gradient_bound_report, solve_hjb, spectral_tail, Source};
use levy_mfg::linearized::{j_kernel, solve_linear_system, LinOptions, LinSystem};
use levy_mfg::master::{derivative_check, flow_consistency, master_residual, ResidualOptions};
use levy_mfg::measure::{mollify, Measure, TightnessFn};
use levy_mfg::mfg::{solve_mfg, MfgProblem, MfgSolution};
use levy_mfg::stepping::{Trajectory, VectorTrajectory};
use serde::Serialize;

use crate::config::{bumps_measure, Bump, M0Spec, RunConfig};
use crate::report::{Artifacts, Bound};
use crate::{Command, Failure};

pub struct Context {
    pub cfg: RunConfig,
    pub grid: Grid,
    pub seed: u64,
}

pub fn run(cmd: Command, ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    match cmd {
        Command::Kernel => kernel(ctx, art),
        Command::Hjb => hjb(ctx, art),
        Command::Fp => fp(ctx, art),
        Command::Mfg => mfg(ctx, art),
        Command::Linsys => linsys(ctx, art),
        Command::Master => master(ctx, art),
        Command::Check => check(ctx, art),
    }
}

/// Builds every config-derived object so that config errors surface before any file is written.
pub fn preflight(ctx: &Context) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    coupling(ctx, 'f')?;
    coupling(ctx, 'g')?;
    hamiltonian(ctx)?;
    initial_measure(ctx)?;
    config_profile(ctx, "hjb.terminal", &cfg.hjb.terminal)?;
    let profiles = [("fp.profile", &cfg.fp.profile), ("linsys.z_terminal", &cfg.linsys.z_terminal), ("linsys.rho0", &cfg.linsys.rho0), ("linsys.source", &cfg.linsys.source)];
    for (key, spec) in profiles {
        if let Some(s) = spec {
            config_profile(ctx, key, s)?;
        }
    }
    Ok(())
}

fn coupling(ctx: &Context, which: char) -> Result<Coupling, Failure> {
    let spec = if which == 'f' { &ctx.cfg.coupling.f } else { &ctx.cfg.coupling.g };
    match spec {
        None => Ok(Coupling::Zero),
        Some(s) => s.build(&ctx.grid).map_err(|e| Failure::Config(format!("coupling.{which}: {e}"))),
    }
}

fn hamiltonian(ctx: &Context) -> Result<Arc<dyn Hamiltonian>, Failure> {
    hamiltonian::from_catalog(&ctx.cfg.hamiltonian).map_err(|e| Failure::Config(format!("hamiltonian: {e}")))
}

fn config_profile(ctx: &Context, key: &str, spec: &str) -> Result<Field, Failure> {
    profile(&ctx.grid, spec).map_err(|e| Failure::Config(format!("{key}: {e}")))
}

fn initial_measure(ctx: &Context) -> Result<Measure, Failure> {
    match &ctx.cfg.m0 {
        None => Ok(bumps_measure(&ctx.grid, &[Bump { weight: 1.0, centre: vec![0.0; ctx.grid.dims()], sigma: 0.4 }])?),
        Some(M0Spec::Bumps(b)) => bumps_measure(&ctx.grid, b).map_err(|e| Failure::Config(format!("m0: {e}"))),
        Some(M0Spec::File(p)) => {
            let mut r = std::fs::File::open(p).map_err(|e| Failure::Config(format!("m0 file {}: {e}", p.display())))?;
            let f = levy_mfg::io::read_field(&mut r).map_err(|e| Failure::Config(format!("m0 file: {e}")))?;
            if f.grid() != &ctx.grid {
                return Err(Failure::Config("m0 file grid differs from config grid".into()));
            }
            Measure::new(f).map_err(|e| Failure::Config(format!("m0 file: {e}")))
        }
    }
}

fn problem(ctx: &Context) -> Result<MfgProblem, Failure> {
    let cfg = &ctx.cfg;
    let time = cfg.time_grid();
    let p = MfgProblem {
        kernel: KernelCache::new(&ctx.grid, &cfg.triplet()?, time.dt())?,
        hamiltonian: hamiltonian(ctx)?,
        f: coupling(ctx, 'f')?,
        g: coupling(ctx, 'g')?,
        m0: initial_measure(ctx)?,
        time,
        iteration: cfg.iteration(),
        step: cfg.step_options(),
        initial: cfg.initial(),
    };
    p.validate()?;
    Ok(p)
}

fn lin_options(ctx: &Context) -> LinOptions {
    LinOptions {
        max_iters: ctx.cfg.solver.lin_max_iters,
        tol: ctx.cfg.solver.lin_tol,
        c_gamma: ctx.cfg.linsys.c_gamma,
        ..LinOptions::default()
    }
}

/// Flags wrap-around risk; fatal only under `--strict`.
fn boundary_check(art: &mut Artifacts, ctx: &Context, what: &str, t: &Trajectory) {
    let worst = t.slices.iter().map(Field::boundary_mass).fold(0.0, f64::max);
    let limit = ctx.cfg.tolerances.boundary_mass;
    if worst >= limit {
        art.warn(format!("{what}: boundary-shell mass {worst:.3e} exceeds {limit:.1e}; enlarge the box"));
    }
}

#[derive(Serialize)]
struct KernelJson {
    alpha: f64,
    beta: usize,
    #[serde(rename = "K_hat")]
    k_hat: f64,
    slope: f64,
    expected_slope: f64,
    pass: bool,
    decade_slopes: Vec<(f64, f64, f64)>,
}

#[derive(Serialize)]
struct NormRow {
    beta: usize,
    t: f64,
    l1: f64,
}

fn kernel(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let k = &ctx.cfg.kernel;
    let triplet = ctx.cfg.triplet()?;
    let times = log_times(k.t_min, k.t_max, k.samples);
    let mut reports = vec![];
    let mut rows = vec![];
    for &b in &k.beta {
        let mut beta = vec![b];
        if ctx.grid.dims() == 2 {
            beta.push(0);
        }
        let r = verify_k_assumption(&triplet, &ctx.grid, &beta, &times)?;
        rows.extend(r.norms.iter().map(|&(t, l1)| NormRow { beta: b, t, l1 }));
        art.verdict(
            &format!("slope_beta{b}"),
            (r.slope - r.expected_slope).abs(),
            ctx.cfg.tolerances.kernel_slope,
            Bound::AtMost,
            "kernel derivative decay t^(-|beta|/alpha)",
        );
        reports.push(KernelJson {
            alpha: r.alpha,
            beta: r.beta,
            k_hat: r.k_hat,
            slope: r.slope,
            expected_slope: r.expected_slope,
            pass: r.pass,
            decade_slopes: r.decade_slopes,
        });
    }
    art.json("kernel_report.json", &reports)?;
    art.csv("kernel_norms.csv", &rows)?;
    if !k.dump.is_empty() {
        let t_min = k.dump.iter().copied().fold(f64::INFINITY, f64::min);
        let cache = KernelCache::new(&ctx.grid, &triplet, t_min)?;
        let fields: Vec<Field> = k.dump.iter().map(|&t| cache.kernel_field(t)).collect::<Result<_, _>>()?;
        let mass = fields.iter().map(|f| (f.integral() - 1.0).abs()).fold(0.0, f64::max);
        art.verdict("kernel_mass", mass, ctx.cfg.tolerances.mass, Bound::AtMost, "heat kernel is a probability density");
        art.fields("kernel_fields.lmfg", &fields.iter().collect::<Vec<_>>())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct HjbRow {
    t: f64,
    sup: f64,
    sup_grad: f64,
    sup_hess: f64,
    l1: f64,
}

fn hjb(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let time = cfg.time_grid();
    let cache = KernelCache::new(&ctx.grid, &cfg.triplet()?, time.dt())?;
    let terminal = config_profile(ctx, "hjb.terminal", &cfg.hjb.terminal)?;
    let source = if cfg.hjb.frozen_cost {
        Source::Constant(coupling(ctx, 'f')?.eval(initial_measure(ctx)?.density())?)
    } else {
        Source::Zero
    };
    let h = hamiltonian(ctx)?;
    let u = solve_hjb(&cache, h.as_ref(), &source, &terminal, &time, &cfg.step_options())?;
    art.trajectory("u.lmfg", &u)?;
    let grad = gradient_bound_report(&u)?;
    let rows: Vec<HjbRow> = u
        .slices
        .iter()
        .zip(&grad.per_slice)
        .enumerate()
        .map(|(k, (s, g))| HjbRow { t: time.time(k), sup: g[0], sup_grad: g[1], sup_hess: g[2], l1: s.l1() })
        .collect();
    art.csv("hjb_norms.csv", &rows)?;
    let tail = u.slices.iter().map(spectral_tail).fold(0.0, f64::max);
    art.verdict("spectral_tail", tail, cfg.tolerances.spectral_tail, Bound::AtMost, "classical solution resolved on the grid");
    Ok(())
}

#[derive(Serialize)]
struct MassRow {
    t: f64,
    mass: f64,
    defect: f64,
    min: f64,
    moment: f64,
    boundary_mass: f64,
}

fn fp(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let time = cfg.time_grid();
    let triplet = cfg.triplet()?;
    let cache = KernelCache::new(&ctx.grid, &triplet, time.dt())?;
    let shape = match &cfg.fp.profile {
        Some(p) => config_profile(ctx, "fp.profile", p)?,
        None => Field::constant(&ctx.grid, 1.0),
    };
    let b: Vec<Field> = (0..ctx.grid.dims())
        .map(|a| {
            let v = cfg.fp.drift.get(a).copied().unwrap_or(0.0);
            if a == 0 {
                shape.scale(v)
            } else {
                Field::constant(&ctx.grid, v)
            }
        })
        .collect();
    let drift = VectorTrajectory::constant(time, &b);
    let m0 = initial_measure(ctx)?;
    let rho = solve_fp(&cache, &drift, m0.density(), None, &time, &cfg.step_options())?;
    art.trajectory("m.lmfg", &rho)?;
    let psi = TightnessFn::new(&ctx.grid);
    let mass = mass_report(&rho);
    let rows: Vec<MassRow> = rho
        .slices
        .iter()
        .enumerate()
        .map(|(k, s)| MassRow {
            t: time.time(k),
            mass: mass.masses[k],
            defect: mass.masses[k] - mass.masses[0],
            min: s.min(),
            moment: s.dot(&psi.psi),
            boundary_mass: s.boundary_mass(),
        })
        .collect();
    art.csv("fp_mass.csv", &rows)?;
    let tight = tightness_report(&rho, &psi, &triplet, drift.sup_norm());
    art.verdict("mass_defect", mass.max_defect, cfg.tolerances.mass, Bound::AtMost, "mass conservation of the forward equation");
    let top = tight.series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    art.verdict("tightness", top, tight.bound, Bound::AtMost, "generalized moment bound");
    boundary_check(art, ctx, "density", &rho);
    Ok(())
}

#[derive(Serialize)]
struct GapRow {
    iteration: usize,
    gap: f64,
}

#[derive(Serialize)]
struct MfgJson<'a> {
    iterations: usize,
    converged: bool,
    final_gap: f64,
    diagnostics: &'a levy_mfg::mfg::MfgDiagnostics,
}

fn solve_and_record(ctx: &Context, art: &mut Artifacts, p: &MfgProblem) -> Result<MfgSolution, Failure> {
    let sol = solve_mfg(p)?;
    art.trajectory("u.lmfg", &sol.u)?;
    art.trajectory("m.lmfg", &sol.m)?;
    let rows: Vec<GapRow> = sol.gaps.iter().enumerate().map(|(i, g)| GapRow { iteration: i + 1, gap: *g }).collect();
    art.csv("gaps.csv", &rows)?;
    art.json(
        "mfg_diagnostics.json",
        &MfgJson { iterations: sol.iterations, converged: sol.converged, final_gap: sol.final_gap(), diagnostics: &sol.diagnostics },
    )?;
    for w in &sol.diagnostics.warnings {
        art.warn(w.clone());
    }
    art.verdict("fixed_point_gap", sol.final_gap(), p.iteration.tol_d0, Bound::AtMost, "existence of the fixed point");
    if sol.final_gap() > p.iteration.tol_d0 {
        art.warn(format!("fixed point not reached in {} iterations", sol.iterations));
    }
    art.verdict("mass_defect", sol.diagnostics.max_mass_defect, ctx.cfg.tolerances.mass, Bound::AtMost, "m(t) stays a probability measure");
    boundary_check(art, ctx, "equilibrium density", &sol.m);
    Ok(sol)
}

fn mfg(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let p = problem(ctx)?;
    solve_and_record(ctx, art, &p).map(|_| ())
}

fn linsys(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let p = problem(ctx)?;
    let sol = solve_and_record(ctx, art, &p)?;
    let mut sys = LinSystem::around(&p, &sol)?;
    let opts = lin_options(ctx);
    if cfg.linsys.kernel {
        if ctx.grid.dims() == 1 {
            let j = j_kernel(&sys, &opts)?;
            art.matrix("j_kernel.lmfg", &ctx.grid, j.to_matrix())?;
        } else {
            art.warn("J kernel output is limited to one dimension");
        }
    }
    if let Some(s) = &cfg.linsys.z_terminal {
        sys.z_t = config_profile(ctx, "linsys.z_terminal", s)?;
    }
    if let Some(s) = &cfg.linsys.rho0 {
        sys.rho0 = config_profile(ctx, "linsys.rho0", s)?;
    }
    if let Some(s) = &cfg.linsys.source {
        sys.b = Source::Constant(config_profile(ctx, "linsys.source", s)?);
    }
    let (z, rho, rep) = solve_linear_system(&sys, &opts)?;
    art.trajectory("z.lmfg", &z)?;
    art.trajectory("rho.lmfg", &rho)?;
    let rows: Vec<GapRow> = rep.gaps.iter().enumerate().map(|(i, g)| GapRow { iteration: i + 1, gap: *g }).collect();
    art.csv("linsys_gaps.csv", &rows)?;
    art.json("linsys_report.json", &rep)?;
    let last = rep.gaps.last().copied().unwrap_or(0.0);
    art.verdict("linear_fixed_point", last, opts.tol, Bound::AtMost, "well-posedness of the linearized system");
    let t = &cfg.tolerances;
    art.verdict("duality_gap", rep.duality.relative_gap, t.duality_gap, Bound::AtMost, "duality identity of the linearized system");
    art.verdict("q_f", rep.duality.q_f_min, t.quadratic_floor, Bound::AtLeast, "(M2) quadratic term of F");
    art.verdict("q_g", rep.duality.q_g, t.quadratic_floor, Bound::AtLeast, "(M2) quadratic term of G");
    Ok(())
}

#[derive(Serialize)]
struct ResidualRow {
    x: f64,
    residual: f64,
    dt_u: f64,
    l_u: f64,
    hamiltonian: f64,
    l_y: f64,
    transport: f64,
    coupling: f64,
}

fn master(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let mt = &cfg.master;
    let p = problem(ctx)?;
    let opts = lin_options(ctx);
    let perturbed = if mt.perturbation.is_empty() {
        let mut centre = vec![0.0; ctx.grid.dims()];
        centre[0] = -0.5;
        bumps_measure(&ctx.grid, &[Bump { weight: 1.0, centre, sigma: 0.3 }])?
    } else {
        bumps_measure(&ctx.grid, &mt.perturbation)?
    };
    let table = derivative_check(&p, mt.t0, &p.m0, &perturbed, &mt.h, &opts)?;
    art.csv("derivative.csv", &table.rows)?;
    let t = &cfg.tolerances;
    let degenerate = table.rows.iter().all(|r| r.defect <= 1e-10);
    if degenerate {
        let worst = table.rows.iter().map(|r| r.defect).fold(0.0, f64::max);
        art.verdict("derivative_defect", worst, 1e-10, Bound::AtMost, "measure derivative expansion");
    } else {
        art.verdict("derivative_slope", table.slope, t.derivative_slope, Bound::AtLeast, "measure derivative expansion");
    }
    art.verdict("shift_invariance", table.max_shift_change, t.shift_invariance, Bound::AtMost, "derivative defined up to constants");

    let samples: Vec<usize> = mt
        .samples
        .iter()
        .map(|x| {
            let mut p = [0.0; 2];
            p[0] = *x;
            ctx.grid.nearest(p)
        })
        .collect();
    let ropts = ResidualOptions { offset_steps: mt.offset_steps, lin: opts.clone(), ..ResidualOptions::default() };
    let time = cfg.time_grid();
    let residual_t0 = mt.residual_t0.unwrap_or_else(|| time.time(time.steps / 2));
    let res = master_residual(&p, residual_t0, &p.m0, &samples, &ropts)?;
    let rows: Vec<ResidualRow> = res
        .samples
        .iter()
        .zip(&res.residual)
        .zip(&res.terms)
        .map(|((i, r), tm)| ResidualRow {
            x: ctx.grid.point(*i)[0],
            residual: *r,
            dt_u: tm.dt_u,
            l_u: tm.l_u,
            hamiltonian: tm.hamiltonian,
            l_y: tm.l_y,
            transport: tm.transport,
            coupling: tm.coupling,
        })
        .collect();
    art.csv("residual.csv", &rows)?;
    art.json("master_report.json", &(&table, &res))?;
    art.verdict("master_residual", res.max_abs, t.residual, Bound::AtMost, "master equation residual");

    let s = match mt.restart {
        Some(s) => s,
        None => {
            let k0 = (mt.t0 / time.dt()).round() as usize;
            time.time((k0 + time.steps) / 2)
        }
    };
    let flow = flow_consistency(&p, mt.t0, &p.m0, s)?;
    art.json("flow.json", &flow)?;
    art.verdict("flow_consistency", flow.gap, t.flow_factor * p.iteration.tol_d0, Bound::AtMost, "uniqueness along the optimal flow");
    Ok(())
}

#[derive(Serialize)]
struct CheckJson {
    which: &'static str,
    positive_definite: bool,
    smoothness_orders: usize,
    m1: levy_mfg::coupling::M1Report,
    m2: levy_mfg::coupling::M2Report,
}

fn check(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let cfg = &ctx.cfg;
    let ct = &cfg.check;
    let at = match &ct.at {
        Some(b) => bumps_measure(&ctx.grid, b)?,
        None => mollify(&Measure::dirac(&ctx.grid, [0.0, 0.0]), 2.0 * ctx.grid.dx_min())?,
    };
    let mut reports = vec![];
    for (which, suffix) in [('f', ""), ('g', "_G")] {
        let spec = if which == 'f' { &cfg.coupling.f } else { &cfg.coupling.g };
        if spec.is_none() {
            continue;
        }
        let c = coupling(ctx, which)?;
        let m1 = check_m1(&c, &ctx.grid, ct.trials, ctx.seed)?;
        let m2 = check_m2(&c, at.density(), ct.m2_derivative)?;
        art.verdict(&format!("M1{suffix}"), m1.min_value, cfg.tolerances.m1, Bound::AtLeast, "(M1) monotonicity");
        art.verdict(&format!("M2{suffix}"), m2.min_eig, cfg.tolerances.quadratic_floor, Bound::AtLeast, "(M2) derivative monotonicity");
        reports.push(CheckJson {
            which: if which == 'f' { "F" } else { "G" },
            positive_definite: c.is_positive_definite(),
            smoothness_orders: c.smoothness_budget(),
            m1,
            m2,
        });
    }
    if reports.is_empty() {
        art.warn("no coupling configured; only the Hamiltonian was checked");
    }
    art.json("check_report.json", &reports)?;
    let h = hamiltonian(ctx)?;
    let hr = hamiltonian::validate(h.as_ref(), &ctx.grid, ct.hamiltonian_probes, ctx.seed, None, None);
    art.verdict("hamiltonian_dp", hr.max_dp_mismatch, 1e-6, Bound::AtMost, "D_pH consistent with H");
    art.json("hamiltonian_report.json", &hr)?;
    Ok(())
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e.root() {
            Error::StepBudget { .. } | Error::SizeGuard(_) | Error::Unresolved { .. } | Error::Resolution(_) => Failure::Budget(msg),
            Error::InvalidParameter(_) | Error::Parse(_) | Error::Precondition(_) | Error::InvalidGrid(_) => Failure::Config(msg),
            Error::Io(_) => Failure::Io(msg),
            _ => Failure::Solver(msg),
        }
    }
}

impl From<crate::config::ConfigError> for Failure {
    fn from(e: crate::config::ConfigError) -> Self {
        Failure::Config(e.0)
    }
}
