//! Forward Fokker–Planck solver `rho_t = L* rho + div(b rho + c)` with the
//! adjoint semigroup, plus weak-form, tightness and time-continuity diagnostics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{divergence, Field};
use crate::heat_kernel::KernelCache;
use crate::levy::LevyTriplet;
use crate::measure::{d0_norm_with, psi_value, TightnessFn, SUBADDITIVITY_SLACK};
use crate::stepping::{check_budget, integrate, StepOptions, TimeGrid, Trajectory, VectorTrajectory};

/// Mass drift that aborts a forward solve.
pub const MASS_DRIFT_LIMIT: f64 = 1e-6;

fn check_len(v: &VectorTrajectory, time: &TimeGrid, what: &str) -> Result<()> {
    if v.slices.len() != time.steps + 1 {
        return Err(Error::InvalidParameter(format!(
            "{what} has {} slices, time grid needs {}",
            v.slices.len(),
            time.steps + 1
        )));
    }
    Ok(())
}

pub fn solve_fp(
    kernel: &KernelCache,
    drift: &VectorTrajectory,
    rho0: &Field,
    source: Option<&VectorTrajectory>,
    time: &TimeGrid,
    opts: &StepOptions,
) -> Result<Trajectory> {
    let g = kernel.grid();
    g.same(rho0.grid())?;
    if let Some(index) = rho0.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    check_len(drift, time, "drift")?;
    if let Some(c) = source {
        check_len(c, time, "source")?;
    }
    check_budget(kernel, time, opts)?;
    let states = integrate(kernel, true, rho0, time.steps, opts, |k, rho| {
        let flux: Vec<Field> = (0..g.dims())
            .map(|a| {
                let mut f = drift.slices[k][a].mul(rho);
                if let Some(c) = source {
                    f.axpy(1.0, &c.slices[k][a]);
                }
                f
            })
            .collect();
        divergence(&flux)
    })?;
    let m0 = rho0.integral();
    for (k, s) in states.iter().enumerate() {
        let drift = (s.integral() - m0).abs();
        if drift > MASS_DRIFT_LIMIT * m0.abs().max(1.0) {
            return Err(Error::Divergence {
                slice: k,
                reason: format!("mass drift {drift:.3e}; reduce dt"),
            });
        }
    }
    Trajectory::new(*time, states)
}

#[derive(Clone, Debug, Serialize)]
pub struct MassReport {
    pub masses: Vec<f64>,
    pub max_defect: f64,
    /// Largest `-min(rho) / max(rho)` over slices.
    pub undershoot: f64,
}

pub fn mass_report(rho: &Trajectory) -> MassReport {
    let masses: Vec<f64> = rho.slices.iter().map(Field::integral).collect();
    let m0 = masses[0];
    let max_defect = masses.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max);
    let undershoot = rho
        .slices
        .iter()
        .map(|s| {
            let top = s.max();
            if top > 0.0 {
                (-s.min() / top).max(0.0)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    MassReport { masses, max_defect, undershoot }
}

/// Defect of the weak identity at slice `k` for a time-independent test
/// function `phi`: `<phi, rho(t_k)> - <phi, rho_0> - int <L phi - Dphi.b, rho> - <Dphi, c>`.
pub fn weak_residual(
    kernel: &KernelCache,
    rho: &Trajectory,
    drift: &VectorTrajectory,
    source: Option<&VectorTrajectory>,
    phi: &Field,
    k: usize,
) -> Result<f64> {
    if k >= rho.len() {
        return Err(Error::InvalidParameter(format!("slice {k} out of range")));
    }
    let lphi = kernel.generator(phi)?;
    let dphi = phi.gradient();
    let integrand = |i: usize| -> f64 {
        let mut v = lphi.dot(&rho.slices[i]);
        for (a, d) in dphi.iter().enumerate() {
            v -= d.mul(&drift.slices[i][a]).dot(&rho.slices[i]);
            if let Some(c) = source {
                v -= d.dot(&c.slices[i][a]);
            }
        }
        v
    };
    let rhs = if k == 0 {
        0.0
    } else {
        let sub = TimeGrid::new(rho.time.t0, rho.time.time(k), k)?;
        Trajectory::time_integral(&sub, integrand)
    };
    Ok(phi.dot(&rho.slices[k]) - phi.dot(&rho.slices[0]) - rhs)
}

#[derive(Clone, Debug, Serialize)]
pub struct TightnessReport {
    pub series: Vec<f64>,
    /// Right-hand side of the affine-in-time bound with constant `c`.
    pub bound: f64,
    pub c: f64,
    pub within: bool,
}

/// `t -> int psi m(t)` against
/// `int psi m_0 + |Dpsi| (2 + c T (|A| + |B| + |b| + int_{|z|<1} |z|^2 nu)) + T int_{|z|>=1} psi nu`.
///
/// `c` covers the diffusion and small-jump contributions through the Hessian
/// bound of psi; the large-jump term carries the subadditivity slack.
pub fn tightness_report(
    m: &Trajectory,
    psi: &TightnessFn,
    triplet: &LevyTriplet,
    drift_sup: f64,
) -> TightnessReport {
    let series: Vec<f64> = m.slices.iter().map(|s| s.dot(&psi.psi)).collect();
    let d = m.grid().dims() as f64;
    let c = (d * psi.hess_bound / psi.grad_bound).max(1.0);
    let horizon = m.time.t_end - m.time.t0;
    let tail_psi = triplet.tail_integral(&psi_value);
    let tail_mass = triplet.tail_integral(&|_| 1.0);
    let bound = series[0]
        + psi.grad_bound
            * (2.0
                + c * horizon
                    * (triplet.diffusion_norm()
                        + triplet.drift_norm()
                        + drift_sup
                        + triplet.small_jump_moment()))
        + horizon * (tail_psi + SUBADDITIVITY_SLACK * tail_mass);
    let within = series.iter().all(|v| *v <= bound);
    TightnessReport { series, bound, c, within }
}

/// Largest `d0(m(s), m(t)) / ((1 + |b|) |s - t|^{1/2})` over dyadic lags.
pub fn holder_constant(m: &Trajectory, drift_sup: f64) -> Result<f64> {
    let n = m.time.steps;
    let stride = (n / 32).max(1);
    let mut best = 0.0f64;
    let mut lag = 1;
    while lag <= n {
        for s in (0..=n - lag).step_by(stride) {
            let w = m.slices[s + lag].sub(&m.slices[s]);
            let d0 = d0_norm_with(&w, 16 * 16)?.upper;
            let dt = lag as f64 * m.time.dt();
            best = best.max(d0 / ((1.0 + drift_sup) * dt.sqrt()));
        }
        lag *= 2;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::measure::{mollify, Measure};
    use proptest::prelude::*;

    fn setup(n: usize, l: f64, steps: usize, triplet: &LevyTriplet) -> (Grid, KernelCache, TimeGrid) {
        let g = Grid::line(n, l).unwrap();
        let time = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let k = KernelCache::new(&g, triplet, time.dt()).unwrap();
        (g, k, time)
    }

    fn bump(g: &Grid) -> Field {
        Measure::gaussian_mixture(g, &[(1.0, [0.3, 0.0], 0.5)]).unwrap().into_density()
    }

    #[test]
    fn zero_drift_is_heat_flow() {
        let (g, k, time) = setup(128, 10.0, 100, &LevyTriplet::laplacian(1));
        let rho0 = bump(&g);
        let b = VectorTrajectory::zeros(time, &g);
        let rho = solve_fp(&k, &b, &rho0, None, &time, &StepOptions::default()).unwrap();
        for (i, s) in rho.slices.iter().enumerate() {
            assert!(s.max_diff(&k.apply_adjoint(time.time(i), &rho0).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn constant_drift_translates() {
        let (g, k, time) = setup(512, 20.0, 400, &LevyTriplet::laplacian(1));
        let rho0 = bump(&g);
        let v0 = 0.8;
        let b = VectorTrajectory::constant(time, &[Field::constant(&g, v0)]);
        let rho = solve_fp(&k, &b, &rho0, None, &time, &StepOptions::default()).unwrap();
        // rho_t = rho_xx + v0 rho_x moves mass to the left at speed v0
        let s2 = 0.25 + 2.0;
        let expect = Field::from_fn(&g, |p| {
            let y = p[0] + v0 - 0.3;
            (-0.5 * y * y / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
        });
        assert!(rho.last().max_diff(&expect) <= 1e-6, "{}", rho.last().max_diff(&expect));
        let r = mass_report(&rho);
        assert!(r.max_defect <= 1e-10);
        assert!(r.undershoot <= 1e-7);
    }

    #[test]
    fn fractional_mass_and_positivity() {
        let t = LevyTriplet::fractional(1, 1.5).unwrap();
        let (g, k, time) = setup(256, 16.0, 100, &t);
        let rho0 = bump(&g);
        let b = VectorTrajectory::constant(time, &[Field::from_fn(&g, |p| (p[0]).sin())]);
        let rho = solve_fp(&k, &b, &rho0, None, &time, &StepOptions::default()).unwrap();
        let r = mass_report(&rho);
        assert!(r.max_defect <= 1e-10 && r.undershoot <= 1e-7, "{r:?}");
    }

    #[test]
    fn weak_residual_of_constant_is_mass_defect() {
        let (g, k, time) = setup(128, 10.0, 100, &LevyTriplet::laplacian(1));
        let rho0 = bump(&g);
        let b = VectorTrajectory::constant(time, &[Field::from_fn(&g, |p| 0.3 * p[0].cos())]);
        let rho = solve_fp(&k, &b, &rho0, None, &time, &StepOptions::default()).unwrap();
        let r = weak_residual(&k, &rho, &b, None, &Field::constant(&g, 1.0), 100).unwrap();
        assert!(r.abs() <= 1e-10);
    }

    #[test]
    fn weak_residual_single_mode() {
        // <phi, rho(t)> = a e^{-t psi}; the trapezoid error of the time integral is explicit
        let (g, k, time) = setup(128, 8.0, 200, &LevyTriplet::laplacian(1));
        let xi = std::f64::consts::PI / 8.0 * 3.0;
        let phi = Field::from_fn(&g, |p| (xi * p[0]).cos());
        let rho0 = bump(&g);
        let b = VectorTrajectory::zeros(time, &g);
        let rho = solve_fp(&k, &b, &rho0, None, &time, &StepOptions::default()).unwrap();
        let a = phi.dot(&rho0);
        let psi = xi * xi;
        let kk = 120;
        let tk = time.time(kk);
        let dt = time.dt();
        let trap: f64 = (0..=kk)
            .map(|i| {
                let w = if i == 0 || i == kk { 0.5 } else { 1.0 };
                w * (-psi * i as f64 * dt).exp()
            })
            .sum::<f64>()
            * dt;
        let expect = a * ((-psi * tk).exp() - 1.0) + psi * a * trap;
        let got = weak_residual(&k, &rho, &b, None, &phi, kk).unwrap();
        assert!((got - expect).abs() <= 1e-8, "{got} vs {expect}");
    }

    #[test]
    fn weak_residual_shrinks_under_refinement() {
        let mut res = vec![];
        for (n, steps) in [(64usize, 50usize), (128, 100)] {
            let (g, k, time) = setup(n, 8.0, steps, &LevyTriplet::laplacian(1));
            let rho0 = bump(&g);
            let b = VectorTrajectory::constant(time, &[Field::from_fn(&g, |p| 0.5 * (0.5 * p[0]).sin())]);
            let phi = Field::from_fn(&g, |p| (-p[0] * p[0] / 2.0).exp());
            let opts = StepOptions { budget_factor: None, ..Default::default() };
            let rho = solve_fp(&k, &b, &rho0, None, &time, &opts).unwrap();
            res.push(weak_residual(&k, &rho, &b, None, &phi, steps).unwrap().abs());
        }
        assert!(res[0] >= 1.8 * res[1], "{res:?}");
    }

    #[test]
    fn tightness_series_for_heat_flow() {
        let (g, k, time) = setup(256, 16.0, 200, &LevyTriplet::laplacian(1));
        let m0 = mollify(&Measure::dirac(&g, [0.0, 0.0]), 0.25).unwrap();
        let b = VectorTrajectory::zeros(time, &g);
        let rho = solve_fp(&k, &b, m0.density(), None, &time, &StepOptions::default()).unwrap();
        let psi = TightnessFn::new(&g);
        let r = tightness_report(&rho, &psi, k.triplet(), 0.0);
        assert_eq!(r.series[0], m0.density().dot(&psi.psi));
        assert!(r.series.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.within, "{:?} vs {}", r.series.last(), r.bound);
    }

    #[test]
    fn tightness_series_fractional() {
        let t = LevyTriplet::fractional(1, 1.5).unwrap();
        let (g, k, time) = setup(1024, 64.0, 100, &t);
        let m0 = Measure::gaussian_mixture(&g, &[(1.0, [0.0, 0.0], 0.5)]).unwrap();
        let b = VectorTrajectory::zeros(time, &g);
        let rho = solve_fp(&k, &b, m0.density(), None, &time, &StepOptions::default()).unwrap();
        let psi = TightnessFn::new(&g);
        let r = tightness_report(&rho, &psi, k.triplet(), 0.0);
        assert!(r.series.iter().all(|v| v.is_finite()));
        assert!(r.within, "{:?} vs {}", r.series.last(), r.bound);
        // per-slice quadrature against the analytic psi
        let direct: f64 = (0..g.len()).map(|i| psi_value(g.coord(0, i).abs()) * rho.last().values()[i]).sum::<f64>() * g.dx(0);
        assert!((direct - r.series[100]).abs() <= 1e-12);
    }

    #[test]
    fn holder_constant_is_stable() {
        let mut cs = vec![];
        for steps in [128, 256] {
            let (g, k, time) = setup(128, 8.0, steps, &LevyTriplet::laplacian(1));
            let rho0 = bump(&g);
            let b = VectorTrajectory::constant(time, &[Field::constant(&g, 0.5)]);
            let rho = solve_fp(&k, &b, &rho0, None, &time, &StepOptions::default()).unwrap();
            cs.push(holder_constant(&rho, 0.5).unwrap());
        }
        assert!(cs[0] > 0.0 && (cs[0] - cs[1]).abs() <= 0.25 * cs[1], "{cs:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn superposition(a in -2.0f64..2.0, a2 in -2.0f64..2.0) {
            let (g, k, time) = setup(64, 6.0, 60, &LevyTriplet::laplacian(1));
            let b = VectorTrajectory::constant(time, &[Field::from_fn(&g, |p| 0.4 * p[0].sin())]);
            let r1 = bump(&g);
            let r2 = Field::from_fn(&g, |p| (-(p[0] + 1.0).powi(2)).exp() * p[0]);
            let c1 = VectorTrajectory::constant(time, &[Field::from_fn(&g, |p| (-p[0] * p[0]).exp())]);
            let c2 = VectorTrajectory::constant(time, &[Field::from_fn(&g, |p| (-(p[0] - 1.0).powi(2)).exp())]);
            let cmix = VectorTrajectory::constant(time, &[c1.slices[0][0].scale(a).add(&c2.slices[0][0].scale(a2))]);
            let opts = StepOptions::default();
            let s1 = solve_fp(&k, &b, &r1, Some(&c1), &time, &opts).unwrap();
            let s2 = solve_fp(&k, &b, &r2, Some(&c2), &time, &opts).unwrap();
            let mix = solve_fp(&k, &b, &r1.scale(a).add(&r2.scale(a2)), Some(&cmix), &time, &opts).unwrap();
            for i in 0..=time.steps {
                let lin = s1.slices[i].scale(a).add(&s2.slices[i].scale(a2));
                prop_assert!(mix.slices[i].max_diff(&lin) <= 1e-11);
            }
        }
    }
}
