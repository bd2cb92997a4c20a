//! Couplings `F(x, m)` and `G(x, m)`, their flat derivatives in the measure,
//! and numerical validators for the monotonicity conditions.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{periodic_convolve, Field, Grid};
use crate::measure::{mollify, Measure};

/// Largest node count for which the derivative kernel is materialized.
pub const MATRIX_GUARD: usize = 4096;

/// Scalar map `Phi(z, s)` of a local composite coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScalarMap {
    /// `Phi(s) = s`.
    Identity,
    /// `Phi(s) = sign(s) |s|^p / p`, `p >= 1`.
    Power(f64),
}

impl ScalarMap {
    pub fn value(&self, s: f64) -> f64 {
        match self {
            ScalarMap::Identity => s,
            ScalarMap::Power(p) => s.signum() * s.abs().powf(*p) / p,
        }
    }

    pub fn ds(&self, s: f64) -> f64 {
        match self {
            ScalarMap::Identity => 1.0,
            ScalarMap::Power(p) => s.abs().powf(p - 1.0),
        }
    }

    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if spec == "identity" {
            return Ok(ScalarMap::Identity);
        }
        let p = call_arg(spec, "power")?;
        if !(p >= 1.0) {
            return Err(Error::Parse(format!("power map needs p >= 1, got {p}")));
        }
        Ok(ScalarMap::Power(p))
    }
}

fn call_arg(spec: &str, name: &str) -> Result<f64> {
    spec.strip_prefix(name)
        .and_then(|r| r.strip_prefix('('))
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::Parse(format!("expected {name}(..), got '{spec}'")))?
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("'{spec}': {e}")))
}

/// Convolution profiles centred at the grid origin:
/// `gauss(s)` is `exp(-|x|^2 / 2 s^2)`, `odd(s)` is `(x_1/s) e^{1/2} exp(-|x|^2 / 2 s^2)`
/// (sup norm 1), `bump(r)` is `exp(-1 / (1 - |x/r|^2))` on the ball of radius `r`.
pub fn profile(grid: &Grid, spec: &str) -> Result<Field> {
    let spec = spec.trim();
    let r2 = |p: [f64; 2]| -> f64 { (0..grid.dims()).map(|a| p[a] * p[a]).sum() };
    if spec.starts_with("gauss") {
        let s = call_arg(spec, "gauss")?;
        positive(s, spec)?;
        Ok(Field::from_fn(grid, |p| (-0.5 * r2(p) / (s * s)).exp()))
    } else if spec.starts_with("odd") {
        let s = call_arg(spec, "odd")?;
        positive(s, spec)?;
        let c = 0.5f64.exp();
        Ok(Field::from_fn(grid, |p| c * p[0] / s * (-0.5 * r2(p) / (s * s)).exp()))
    } else if spec.starts_with("bump") {
        let r = call_arg(spec, "bump")?;
        positive(r, spec)?;
        Ok(Field::from_fn(grid, |p| {
            let q = r2(p) / (r * r);
            if q < 1.0 {
                (-1.0 / (1.0 - q)).exp()
            } else {
                0.0
            }
        }))
    } else {
        Err(Error::Parse(format!("unknown profile '{spec}'")))
    }
}

fn positive(v: f64, spec: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parse(format!("'{spec}' needs a positive width")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    Zero,
    /// `F(x, m) = (phi * m)(x)`.
    Conv { phi: Field },
    /// `F(x, m) = int Phi((phi2 * m)(z)) phi2(x - z) dz`.
    Local { map: ScalarMap, phi2: Field },
}

/// Config form of a coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum CouplingSpec {
    Zero,
    Conv {
        phi: String,
    },
    Local {
        #[serde(rename = "Phi")]
        map: String,
        phi2: String,
    },
}

impl CouplingSpec {
    pub fn build(&self, grid: &Grid) -> Result<Coupling> {
        match self {
            CouplingSpec::Zero => Ok(Coupling::Zero),
            CouplingSpec::Conv { phi } => Ok(Coupling::Conv { phi: profile(grid, phi)? }),
            CouplingSpec::Local { map, phi2 } => {
                let phi2 = profile(grid, phi2)?;
                let c = Coupling::Local { map: ScalarMap::parse(map)?, phi2 };
                c.validate()?;
                Ok(c)
            }
        }
    }
}

/// Which representative of the flat derivative is used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeVersion {
    #[default]
    Raw,
    /// Shifted so that `int dF/dm(x, m, y) m(dy) = 0`.
    Normalized,
}

fn kernel_index(grid: &Grid, i: usize, j: usize) -> usize {
    let a = grid.multi_index(i);
    let b = grid.multi_index(j);
    let mut out = [0usize; 2];
    for ax in 0..grid.dims() {
        let n = grid.n(ax);
        out[ax] = (a[ax] + n + n / 2 - b[ax]) % n;
    }
    grid.flat_index(out)
}

impl Coupling {
    pub fn is_zero(&self) -> bool {
        matches!(self, Coupling::Zero)
    }

    pub fn validate(&self) -> Result<()> {
        if let Coupling::Local { phi2, .. } = self {
            if phi2.min() < 0.0 {
                return Err(Error::InvalidParameter("phi2 must be nonnegative".into()));
            }
            if phi2.max_diff(&phi2.reflect()) > 1e-12 * phi2.max_abs() {
                return Err(Error::InvalidParameter("phi2 must be even".into()));
            }
        }
        Ok(())
    }

    /// Bochner test on the grid: the profile's DFT is real and nonnegative.
    pub fn is_positive_definite(&self) -> bool {
        match self {
            Coupling::Zero => true,
            Coupling::Conv { phi } => {
                let g = phi.grid();
                let s = phi.spectrum();
                let scale = s.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
                s.iter().enumerate().all(|(i, c)| {
                    let c = c * g.centre_phase(i);
                    c.re >= -1e-12 * scale && c.im.abs() <= 1e-10 * scale
                })
            }
            Coupling::Local { .. } => false,
        }
    }

    /// Number of derivatives (up to 4) of the profile whose spectrum stays
    /// below `1e-8` of the peak in the top fifth of the band.
    pub fn smoothness_budget(&self) -> usize {
        let phi = match self {
            Coupling::Zero => return 4,
            Coupling::Conv { phi } => phi,
            Coupling::Local { phi2, .. } => phi2,
        };
        let g = phi.grid();
        let mut order = 0;
        for k in 1..=4 {
            let mut beta = vec![0; g.dims()];
            beta[0] = k;
            match phi.spectral_derivative(&beta) {
                Ok(f) if crate::hjb::spectral_tail(&f) <= 1e-8 => order = k,
                _ => break,
            }
        }
        order
    }

    pub fn eval(&self, m: &Field) -> Result<Field> {
        match self {
            Coupling::Zero => Ok(Field::zeros(m.grid())),
            Coupling::Conv { phi } => periodic_convolve(m, phi),
            Coupling::Local { map, phi2 } => {
                let s = periodic_convolve(m, phi2)?;
                periodic_convolve(&s.map(|v| map.value(v)), phi2)
            }
        }
    }

    /// `<dF/dm(x, m, .), rho>` with the raw derivative.
    pub fn dm_apply(&self, m: &Field, rho: &Field) -> Result<Field> {
        match self {
            Coupling::Zero => Ok(Field::zeros(m.grid())),
            Coupling::Conv { phi } => periodic_convolve(rho, phi),
            Coupling::Local { map, phi2 } => {
                let s = periodic_convolve(m, phi2)?.map(|v| map.ds(v));
                let r = periodic_convolve(rho, phi2)?;
                periodic_convolve(&s.mul(&r), phi2)
            }
        }
    }

    pub fn dm_apply_version(&self, m: &Field, rho: &Field, version: DerivativeVersion) -> Result<Field> {
        let raw = self.dm_apply(m, rho)?;
        match version {
            DerivativeVersion::Raw => Ok(raw),
            DerivativeVersion::Normalized => {
                let mean = self.dm_apply(m, m)?;
                Ok(raw.sub(&mean.scale(rho.integral())))
            }
        }
    }

    /// Row-major kernel `M[x][y] = dF/dm(x, m, y)`.
    pub fn dm_matrix(&self, m: &Field, version: DerivativeVersion) -> Result<Vec<f64>> {
        let g = m.grid();
        let n = g.len();
        if n > MATRIX_GUARD {
            return Err(Error::SizeGuard(format!("{n} nodes exceed the matrix guard {MATRIX_GUARD}")));
        }
        let mut out = vec![0.0; n * n];
        match self {
            Coupling::Zero => {}
            Coupling::Conv { phi } => {
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = phi.values()[kernel_index(g, i, j)];
                    }
                }
            }
            Coupling::Local { .. } => {
                let inv = 1.0 / g.cell();
                for j in 0..n {
                    let mut delta = vec![0.0; n];
                    delta[j] = inv;
                    let col = self.dm_apply(m, &Field::new(g, delta)?)?;
                    for i in 0..n {
                        out[i * n + j] = col.values()[i];
                    }
                }
            }
        }
        if version == DerivativeVersion::Normalized {
            let mean = self.dm_apply(m, m)?;
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] -= mean.values()[i];
                }
            }
        }
        Ok(out)
    }

    /// Sup bound of `|F(., m)|_{C^2}` valid for every probability `m`, when available.
    pub fn c2_bound(&self) -> Option<f64> {
        match self {
            Coupling::Zero => Some(0.0),
            Coupling::Conv { phi } => {
                let g = phi.grid();
                let mut b = phi.max_abs();
                for order in 1..=2 {
                    for a in 0..g.dims() {
                        let mut beta = vec![0; g.dims()];
                        beta[a] = order;
                        b = b.max(phi.spectral_derivative(&beta).ok()?.max_abs());
                    }
                }
                Some(b)
            }
            Coupling::Local { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct M1Report {
    pub values: Vec<f64>,
    pub min_value: f64,
    pub max_abs: f64,
    pub pass: bool,
}

/// Random probability densities: mollified mixtures of up to three bumps.
pub fn random_measure(grid: &Grid, rng: &mut ChaCha8Rng) -> Result<Measure> {
    let k = rng.gen_range(1..=3);
    let bumps: Vec<(f64, [f64; 2], f64)> = (0..k)
        .map(|_| {
            let mut c = [0.0; 2];
            for (a, v) in c.iter_mut().enumerate().take(grid.dims()) {
                let l = grid.half_width(a);
                *v = rng.gen_range(-0.4 * l..0.4 * l);
            }
            let w = grid.half_width(0);
            (rng.gen_range(0.1..1.0), c, rng.gen_range(0.03 * w..0.15 * w))
        })
        .collect();
    let m = Measure::gaussian_mixture(grid, &bumps)?;
    let dx = (0..grid.dims()).map(|a| grid.dx(a)).fold(0.0, f64::max);
    mollify(&m, 2.0 * dx)
}

/// Samples `int (F(m') - F(m)) (m' - m)`; passes when every value is `>= -1e-10`.
pub fn check_m1(c: &Coupling, grid: &Grid, trials: usize, seed: u64) -> Result<M1Report> {
    if trials == 0 {
        return Err(Error::Precondition("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let m = random_measure(grid, &mut rng)?;
        let mp = random_measure(grid, &mut rng)?;
        let df = c.eval(mp.density())?.sub(&c.eval(m.density())?);
        values.push(df.dot(&mp.density().sub(m.density())));
    }
    let min_value = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(M1Report { values, min_value, max_abs, pass: min_value >= -1e-10 })
}

#[derive(Clone, Debug, Serialize)]
pub struct M2Report {
    pub min_eig: f64,
    pub max_eig: f64,
    pub version: DerivativeVersion,
    pub pass: bool,
}

/// Spectrum of `Q = (M + M^T) / 2`, i.e. the quadratic form
/// `<<dF/dm, rho>, rho>` on combinations of unit-mass grid deltas.
pub fn check_m2(c: &Coupling, m: &Field, version: DerivativeVersion) -> Result<M2Report> {
    let n = m.grid().len();
    let mat = c.dm_matrix(m, version)?;
    let q = DMatrix::from_fn(n, n, |i, j| 0.5 * (mat[i * n + j] + mat[j * n + i]));
    let eig = q.symmetric_eigenvalues();
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_eig = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(M2Report { min_eig, max_eig, version, pass: min_eig >= -1e-10 })
}

/// `max_x |F(m + h w) - F(m) - h <dF/dm, w>|` with `w = m' - m`.
pub fn directional_defect(c: &Coupling, m: &Field, m_prime: &Field, h: f64) -> Result<f64> {
    let w = m_prime.sub(m);
    let mut moved = m.clone();
    moved.axpy(h, &w);
    let lin = c.dm_apply(m, &w)?.scale(h);
    Ok(c.eval(&moved)?.sub(&c.eval(m)?).sub(&lin).max_abs())
}

/// `max_x |F(m') - F(m) - int_0^1 <dF/dm(m + l (m' - m)), m' - m> dl|` by 16-point Gauss–Legendre.
pub fn fundamental_theorem_defect(c: &Coupling, m: &Field, m_prime: &Field) -> Result<f64> {
    let rule = GaussLegendre::new(NonZeroUsize::new(16).expect("nonzero"));
    let w = m_prime.sub(m);
    let mut acc = Field::zeros(m.grid());
    for &(x, wt) in rule.as_node_weight_pairs() {
        let mut ml = m.clone();
        ml.axpy(0.5 * (x + 1.0), &w);
        acc.axpy(0.5 * wt, &c.dm_apply(&ml, &w)?);
    }
    Ok(c.eval(m_prime)?.sub(&c.eval(m)?).max_diff(&acc))
}
