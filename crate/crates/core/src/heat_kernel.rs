//! Heat kernels `K_t = F^{-1} e^{-t Psi}` on a periodic grid, their adjoints,
//! exponential-integrator coefficients, and the empirical check of
//! `||D^beta K_t||_1 <= C t^{-|beta|/alpha}`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{kernel_from_multiplier, Field, Grid};
use crate::levy::LevyTriplet;

/// Nyquist amplitude above which a kernel counts as unresolved.
pub const RESOLUTION_TOL: f64 = 1e-12;

/// `phi_1(z) = (e^z - 1)/z` and `phi_2(z) = (e^z - 1 - z)/z^2`.
pub fn phi_functions(z: Complex64) -> (Complex64, Complex64) {
    if z.norm() < 0.5 {
        let mut p1 = Complex64::new(0.0, 0.0);
        let mut p2 = Complex64::new(0.0, 0.0);
        let mut pow = Complex64::new(1.0, 0.0);
        let mut fact = 1.0f64;
        // fact tracks (k+1)!
        for k in 0..24 {
            fact *= (k + 1) as f64;
            p1 += pow / fact;
            p2 += pow / (fact * (k + 2) as f64);
            pow *= z;
        }
        (p1, p2)
    } else {
        let ez = z.exp();
        ((ez - 1.0) / z, (ez - 1.0 - z) / (z * z))
    }
}

/// Per-slot multipliers of one exponential step of length `dt`.
#[derive(Clone, Debug)]
pub struct EtdCoefficients {
    pub exp: Vec<Complex64>,
    pub phi1: Vec<Complex64>,
    pub phi2: Vec<Complex64>,
}

impl EtdCoefficients {
    fn new(psi: &[Complex64], dt: f64, adjoint: bool) -> Self {
        let mut exp = Vec::with_capacity(psi.len());
        let mut phi1 = Vec::with_capacity(psi.len());
        let mut phi2 = Vec::with_capacity(psi.len());
        for p in psi {
            let p = if adjoint { p.conj() } else { *p };
            let z = -dt * p;
            let (a, b) = phi_functions(z);
            exp.push(z.exp());
            phi1.push(a);
            phi2.push(b);
        }
        EtdCoefficients { exp, phi1, phi2 }
    }
}

/// Symbol and step multipliers for one `(triplet, grid, dt)`.
#[derive(Clone, Debug)]
pub struct KernelCache {
    grid: Grid,
    triplet: LevyTriplet,
    dt: f64,
    psi: Vec<Complex64>,
    forward: EtdCoefficients,
    adjoint: EtdCoefficients,
}

impl KernelCache {
    pub fn new(grid: &Grid, triplet: &LevyTriplet, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        let psi = triplet.symbol_eval(grid)?;
        let forward = EtdCoefficients::new(&psi, dt, false);
        let adjoint = EtdCoefficients::new(&psi, dt, true);
        Ok(KernelCache { grid: grid.clone(), triplet: triplet.clone(), dt, psi, forward, adjoint })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn symbol(&self) -> &[Complex64] {
        &self.psi
    }

    pub fn etd(&self, adjoint: bool) -> &EtdCoefficients {
        if adjoint {
            &self.adjoint
        } else {
            &self.forward
        }
    }

    /// `e^{-t Psi}` (or `e^{-t conj Psi}` for the adjoint).
    pub fn multiplier(&self, t: f64, adjoint: bool) -> Vec<Complex64> {
        if t == self.dt {
            return self.etd(adjoint).exp.clone();
        }
        self.psi
            .iter()
            .map(|p| {
                let p = if adjoint { p.conj() } else { *p };
                (-t * p).exp()
            })
            .collect()
    }

    fn check_field(&self, f: &Field) -> Result<()> {
        if f.grid() != &self.grid {
            Err(Error::GridMismatch)
        } else {
            Ok(())
        }
    }

    /// `K_t * f`.
    pub fn apply(&self, t: f64, f: &Field) -> Result<Field> {
        self.apply_inner(t, f, false)
    }

    /// `K*_t * f`.
    pub fn apply_adjoint(&self, t: f64, f: &Field) -> Result<Field> {
        self.apply_inner(t, f, true)
    }

    fn apply_inner(&self, t: f64, f: &Field, adjoint: bool) -> Result<Field> {
        self.check_field(f)?;
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("negative time {t}")));
        }
        if t == 0.0 {
            return Ok(f.clone());
        }
        Ok(f.apply_multiplier(&self.multiplier(t, adjoint)))
    }

    /// `L f` via the multiplier `-Psi`.
    pub fn generator(&self, f: &Field) -> Result<Field> {
        self.check_field(f)?;
        let m: Vec<Complex64> = self.psi.iter().map(|p| -p).collect();
        Ok(f.apply_multiplier(&m))
    }

    /// `L* f` via the multiplier `-conj(Psi)`.
    pub fn adjoint_generator(&self, f: &Field) -> Result<Field> {
        self.check_field(f)?;
        let m: Vec<Complex64> = self.psi.iter().map(|p| -p.conj()).collect();
        Ok(f.apply_multiplier(&m))
    }

    /// Largest multiplier amplitude on any Nyquist slot.
    pub fn nyquist_tail(&self, t: f64) -> f64 {
        let g = &self.grid;
        let mut worst = 0.0f64;
        for i in 0..g.len() {
            let mi = g.multi_index(i);
            if (0..g.dims()).any(|a| g.is_nyquist(a, mi[a])) {
                worst = worst.max((-t * self.psi[i].re).exp());
            }
        }
        worst
    }

    fn required_n(&self, t: f64) -> usize {
        let g = &self.grid;
        let mut n = g.n(0);
        while n < (1 << 26) {
            n *= 2;
            let mut xi = [0.0; 2];
            xi[0] = std::f64::consts::PI * (n / 2) as f64 / g.half_width(0);
            match self.triplet.symbol_at(xi) {
                Ok(p) if (-t * p.re).exp() < RESOLUTION_TOL => return n,
                Ok(_) => {}
                Err(_) => return n,
            }
        }
        n
    }

    pub fn check_resolved(&self, t: f64) -> Result<()> {
        let tail = self.nyquist_tail(t);
        if tail >= RESOLUTION_TOL {
            return Err(Error::Unresolved { t, tail, required_n: self.required_n(t) });
        }
        Ok(())
    }

    /// Real-space kernel `K_t`, origin at the central node.
    pub fn kernel_field(&self, t: f64) -> Result<Field> {
        self.kernel_derivative(t, None, false)
    }

    /// Real-space adjoint kernel `K*_t(x) = K_t(-x)`.
    pub fn adjoint_kernel_field(&self, t: f64) -> Result<Field> {
        self.kernel_derivative(t, None, true)
    }

    /// `D^beta K_t` (or of the adjoint kernel).
    pub fn kernel_derivative(&self, t: f64, beta: Option<&[usize]>, adjoint: bool) -> Result<Field> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("kernel time {t} must be positive")));
        }
        self.check_resolved(t)?;
        let mut m = self.multiplier(t, adjoint);
        if let Some(beta) = beta {
            let d = self.grid.derivative_multiplier(beta)?;
            for (a, b) in m.iter_mut().zip(d) {
                *a *= b;
            }
        }
        Ok(kernel_from_multiplier(&self.grid, &m))
    }
}

/// Outcome of the empirical `(K)` check.
#[derive(Clone, Debug, Serialize)]
pub struct KReport {
    pub alpha: f64,
    pub beta: usize,
    pub k_hat: f64,
    pub slope: f64,
    pub expected_slope: f64,
    pub pass: bool,
    pub norms: Vec<(f64, f64)>,
    pub decade_slopes: Vec<(f64, f64, f64)>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Fits the decay of `||D^beta K_t||_1` over `times` and compares it with
/// `-|beta|/alpha` (tolerance 0.02).
pub fn verify_k_assumption(
    triplet: &LevyTriplet,
    grid: &Grid,
    beta: &[usize],
    times: &[f64],
) -> Result<KReport> {
    if times.len() < 2 {
        return Err(Error::InvalidParameter("need at least two times".into()));
    }
    let alpha = triplet.order_alpha()?;
    let order: usize = beta.iter().sum();
    let t_min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let cache = KernelCache::new(grid, triplet, t_min)?;
    cache.check_resolved(t_min).map_err(|e| e.tagged("smallest time outside resolved range"))?;
    let norms: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| Ok((t, cache.kernel_derivative(t, Some(beta), false)?.l1())))
        .collect::<Result<_>>()?;
    let expected = -(order as f64) / alpha;
    let slope = loglog_slope(&norms);
    let k_hat = norms
        .iter()
        .map(|&(t, v)| v * t.powf(order as f64 / alpha))
        .fold(0.0f64, f64::max);
    let mut sorted = norms.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut decade_slopes = Vec::new();
    let mut start = 0;
    while start + 1 < sorted.len() {
        let t0 = sorted[start].0;
        let mut end = start + 1;
        while end + 1 < sorted.len() && sorted[end].0 < 10.0 * t0 * (1.0 - 1e-12) {
            end += 1;
        }
        let s = loglog_slope(&sorted[start..=end]);
        decade_slopes.push((t0, sorted[end].0, s));
        start = end;
    }
    Ok(KReport {
        alpha,
        beta: order,
        k_hat,
        slope,
        expected_slope: expected,
        pass: (slope - expected).abs() <= 0.02,
        norms,
        decade_slopes,
    })
}

/// `n` log-spaced times spanning `[a, b]`.
pub fn log_times(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (a.ln() + (b.ln() - a.ln()) * k as f64 / (n - 1) as f64).exp())
        .collect()
}
