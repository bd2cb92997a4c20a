//! Lévy triplets `(B, A, nu)` and their symbols
//!
//! `Psi(xi) = -i B.xi + xi.A xi + int (1 - e^{i xi z} + i xi z 1_{|z|<1}) nu(dz)`.
//!
//! The generator `L` acts as the Fourier multiplier `-Psi`; its adjoint as
//! `-conj(Psi)`.

use std::fmt;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Tabulated or closed-form one-dimensional jump density.
#[derive(Clone)]
pub struct NumericDensity {
    pub density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Jumps beyond `|z| > cutoff` are dropped; tail mass must be negligible.
    pub cutoff: f64,
    /// Declared order; required when the density enters a solver.
    pub alpha: Option<f64>,
    pub label: String,
}

impl fmt::Debug for NumericDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NumericDensity({}, cutoff={})", self.label, self.cutoff)
    }
}

#[derive(Clone, Debug)]
pub enum JumpSpec {
    /// `|xi|^alpha`.
    FractionalLaplacian { alpha: f64 },
    /// `sum_i |xi_i|^{alpha_i}`.
    AnisotropicStable { alphas: Vec<f64> },
    /// One-sided density `1_{z>0} z^{-1-alpha}` on the line.
    RieszFeller { alpha: f64 },
    /// Tempered stable: `C e^{-G|z|}|z|^{-1-Y}` for `z<0`, `C e^{-Mz} z^{-1-Y}` for `z>0`.
    Cgmy { c: f64, g: f64, m: f64, y: f64 },
    NumericDensity(NumericDensity),
}

impl JumpSpec {
    fn order(&self) -> Result<f64> {
        match self {
            JumpSpec::FractionalLaplacian { alpha } | JumpSpec::RieszFeller { alpha } => Ok(*alpha),
            JumpSpec::AnisotropicStable { alphas } => {
                Ok(alphas.iter().copied().fold(f64::INFINITY, f64::min))
            }
            JumpSpec::Cgmy { y, .. } => Ok(*y),
            JumpSpec::NumericDensity(nd) => nd.alpha.ok_or_else(|| {
                Error::InvalidParameter(format!("density {} has no declared order", nd.label))
            }),
        }
    }

    fn is_even(&self) -> bool {
        match self {
            JumpSpec::FractionalLaplacian { .. } | JumpSpec::AnisotropicStable { .. } => true,
            JumpSpec::RieszFeller { .. } => false,
            JumpSpec::Cgmy { g, m, .. } => g == m,
            JumpSpec::NumericDensity(_) => false,
        }
    }

    fn validate(&self, dims: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            JumpSpec::FractionalLaplacian { alpha } => {
                if !(*alpha > 0.0 && *alpha <= 2.0) {
                    return bad(format!("fractional order {alpha} outside (0, 2]"));
                }
            }
            JumpSpec::AnisotropicStable { alphas } => {
                if alphas.len() != dims {
                    return bad(format!("{} anisotropic orders on a {dims}-d grid", alphas.len()));
                }
                if alphas.iter().any(|a| !(*a > 0.0 && *a <= 2.0)) {
                    return bad(format!("anisotropic orders {alphas:?} outside (0, 2]"));
                }
            }
            JumpSpec::RieszFeller { alpha } => {
                if dims != 1 {
                    return bad("Riesz-Feller operator is one-dimensional".into());
                }
                if !(*alpha > 1.0 && *alpha < 2.0) {
                    return bad(format!("Riesz-Feller order {alpha} outside (1, 2)"));
                }
            }
            JumpSpec::Cgmy { c, g, m, y } => {
                if dims != 1 {
                    return bad("CGMY operator is one-dimensional".into());
                }
                if !(*c > 0.0 && *g > 0.0 && *m > 0.0) {
                    return bad("CGMY parameters C, G, M must be positive".into());
                }
                if !(*y > 0.0 && *y < 2.0) || (*y - 1.0).abs() < 1e-9 {
                    return bad(format!("CGMY index {y} outside (0,1) u (1,2)"));
                }
            }
            JumpSpec::NumericDensity(nd) => {
                if dims != 1 {
                    return bad("numeric densities are one-dimensional".into());
                }
                if !(nd.cutoff > 1.0) {
                    return bad("numeric density cutoff must exceed 1".into());
                }
            }
        }
        Ok(())
    }

    /// Jump part of the symbol at `xi`.
    fn symbol(&self, xi: [f64; 2], dims: usize) -> Result<Complex64> {
        let norm = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        match self {
            JumpSpec::FractionalLaplacian { alpha } => Ok(Complex64::new(norm.powf(*alpha), 0.0)),
            JumpSpec::AnisotropicStable { alphas } => Ok(Complex64::new(
                (0..dims).map(|a| xi[a].abs().powf(alphas[a])).sum(),
                0.0,
            )),
            JumpSpec::RieszFeller { alpha } => Ok(riesz_feller_symbol(xi[0], *alpha)),
            JumpSpec::Cgmy { c, g, m, y } => Ok(cgmy_symbol(xi[0], *c, *g, *m, *y)),
            JumpSpec::NumericDensity(nd) => numeric_symbol(xi[0], nd),
        }
    }

    fn small_jump_second_moment(&self, dims: usize) -> f64 {
        let q = |f: &dyn Fn(f64) -> f64| {
            quadrature::double_exponential::integrate(f, 0.0, 1.0, 1e-13).integral
        };
        match self {
            JumpSpec::FractionalLaplacian { alpha } => {
                stable_constant(dims, *alpha) * sphere_area(dims) / (2.0 - alpha)
            }
            JumpSpec::AnisotropicStable { alphas } => {
                alphas.iter().map(|a| 2.0 * stable_constant(1, *a) / (2.0 - a)).sum()
            }
            JumpSpec::RieszFeller { alpha } => 1.0 / (2.0 - alpha),
            JumpSpec::Cgmy { c, g, m, y } => {
                q(&|z| c * z.powf(1.0 - y) * (-m * z).exp()) + q(&|z| c * z.powf(1.0 - y) * (-g * z).exp())
            }
            JumpSpec::NumericDensity(nd) => {
                let d = nd.density.clone();
                q(&|z| z * z * d(z)) + q(&|z| z * z * d(-z))
            }
        }
    }

    /// `int_{|z|>=1} w(|z|) nu(dz)` for a radial weight `w`.
    fn tail_integral(&self, dims: usize, weight: &dyn Fn(f64) -> f64) -> f64 {
        let q = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            quadrature::double_exponential::integrate(f, a, b, 1e-13).integral
        };
        // int_1^inf w(r) r^{-1-a} dr after r = 1/s
        let power_tail = |a: f64| {
            q(&|s: f64| if s > 0.0 { weight(1.0 / s) * s.powf(a - 1.0) } else { 0.0 }, 0.0, 1.0)
        };
        match self {
            JumpSpec::FractionalLaplacian { alpha } => {
                stable_constant(dims, *alpha) * sphere_area(dims) * power_tail(*alpha)
            }
            JumpSpec::AnisotropicStable { alphas } => {
                alphas.iter().map(|a| 2.0 * stable_constant(1, *a) * power_tail(*a)).sum()
            }
            JumpSpec::RieszFeller { alpha } => power_tail(*alpha),
            JumpSpec::Cgmy { c, g, m, y } => {
                let r = 1.0 + 60.0 / g.min(*m);
                q(&|z| weight(z) * c * z.powf(-1.0 - y) * (-m * z).exp(), 1.0, r)
                    + q(&|z| weight(z) * c * z.powf(-1.0 - y) * (-g * z).exp(), 1.0, r)
            }
            JumpSpec::NumericDensity(nd) => {
                let d = nd.density.clone();
                q(&|z| weight(z) * d(z), 1.0, nd.cutoff) + q(&|z| weight(z) * d(-z), 1.0, nd.cutoff)
            }
        }
    }
}

/// Density constant of `(-Delta)^{a/2}` on `R^d`: `nu(dz) = c |z|^{-d-a} dz`.
fn stable_constant(dims: usize, a: f64) -> f64 {
    if a >= 2.0 {
        return 0.0;
    }
    let d = dims as f64;
    a * 2f64.powf(a - 1.0) * gamma((d + a) / 2.0)
        / (std::f64::consts::PI.powf(d / 2.0) * gamma(1.0 - a / 2.0))
}

fn sphere_area(dims: usize) -> f64 {
    if dims == 1 {
        2.0
    } else {
        2.0 * std::f64::consts::PI
    }
}

impl fmt::Display for JumpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpSpec::FractionalLaplacian { alpha } => write!(f, "frac{{{alpha}}}"),
            JumpSpec::AnisotropicStable { alphas } => {
                let s: Vec<String> = alphas.iter().map(|a| a.to_string()).collect();
                write!(f, "aniso{{{}}}", s.join(","))
            }
            JumpSpec::RieszFeller { alpha } => write!(f, "riesz_feller{{{alpha}}}"),
            JumpSpec::Cgmy { c, g, m, y } => write!(f, "cgmy{{{c},{g},{m},{y}}}"),
            JumpSpec::NumericDensity(nd) => write!(f, "density{{{}}}", nd.label),
        }
    }
}

/// `-Gamma(-a)(-i xi)^a - i xi/(a-1)`: the compensated one-sided stable symbol.
fn riesz_feller_symbol(xi: f64, alpha: f64) -> Complex64 {
    if xi == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let base = Complex64::new(0.0, -xi).powf(alpha);
    -gamma(-alpha) * base - Complex64::new(0.0, xi / (alpha - 1.0))
}

fn cgmy_tail_mean(c: f64, g: f64, m: f64, y: f64) -> f64 {
    let q = |rate: f64| {
        let r = 1.0 + 60.0 / rate;
        quadrature::double_exponential::integrate(|z: f64| z.powf(-y) * (-rate * z).exp(), 1.0, r, 1e-15)
            .integral
    };
    c * (q(m) - q(g))
}

fn cgmy_symbol(xi: f64, c: f64, g: f64, m: f64, y: f64) -> Complex64 {
    if xi == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let i_xi = Complex64::new(0.0, xi);
    let pos = (m - i_xi).powf(y) - m.powf(y) + i_xi * y * m.powf(y - 1.0);
    let neg = (g + i_xi).powf(y) - g.powf(y) - i_xi * y * g.powf(y - 1.0);
    let full = c * gamma(-y) * (pos + neg);
    -full - i_xi * cgmy_tail_mean(c, g, m, y)
}

/// Compensated Lévy–Khintchine integral of a tabulated density: dyadic shells
/// towards the origin, oscillation-adapted panels elsewhere.
fn numeric_symbol(xi: f64, nd: &NumericDensity) -> Result<Complex64> {
    if xi == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let tail: f64 = {
        let q = |a: f64, b: f64| {
            let d = nd.density.clone();
            quadrature::double_exponential::integrate(move |z| d(z).abs(), a, b, 1e-16).integral
        };
        q(nd.cutoff, 2.0 * nd.cutoff) + q(-2.0 * nd.cutoff, -nd.cutoff)
    };
    if !tail.is_finite() || tail > 1e-12 {
        return Err(Error::Quadrature(format!(
            "density {} keeps mass {tail:.2e} beyond cutoff {}",
            nd.label, nd.cutoff
        )));
    }
    let rule = GaussLegendre::new(16.try_into().expect("nonzero"));
    let integrand = |z: f64| -> Complex64 {
        let nu = (nd.density)(z);
        let x = xi * z;
        let half = (0.5 * x).sin();
        let odd = if z.abs() < 1.0 { x_minus_sin(x) } else { -x.sin() };
        Complex64::new(2.0 * half * half * nu, odd * nu)
    };
    let panel = |a: f64, b: f64| -> Complex64 {
        let pieces = (((b - a).abs() * xi.abs() / 2.0).ceil() as usize).max(1);
        let h = (b - a) / pieces as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..pieces {
            let lo = a + k as f64 * h;
            let re = rule.integrate(lo, lo + h, |z| integrand(z).re);
            let im = rule.integrate(lo, lo + h, |z| integrand(z).im);
            acc += Complex64::new(re, im);
        }
        acc
    };
    let mut total = panel(1.0, nd.cutoff) + panel(-nd.cutoff, -1.0);
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let lo = hi * 0.5;
        let shell = panel(lo, hi) + panel(-hi, -lo);
        total += shell;
        hi = lo;
        if shell.norm() <= 1e-17 * total.norm().max(1e-300) && hi < 1e-6 {
            break;
        }
    }
    if !(total.re.is_finite() && total.im.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite symbol at xi = {xi}")));
    }
    Ok(total)
}

/// `x - sin x` without cancellation near zero.
fn x_minus_sin(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    } else {
        x - x.sin()
    }
}

/// Constant-coefficient Lévy operator on `R^d`, `d` in {1, 2}.
#[derive(Clone, Debug)]
pub struct LevyTriplet {
    dims: usize,
    drift: [f64; 2],
    diffusion: [[f64; 2]; 2],
    jumps: Vec<JumpSpec>,
    alpha_low: Option<f64>,
}

impl LevyTriplet {
    pub fn new(
        dims: usize,
        drift: [f64; 2],
        diffusion: [[f64; 2]; 2],
        jumps: Vec<JumpSpec>,
    ) -> Result<Self> {
        let t = LevyTriplet { dims, drift, diffusion, jumps, alpha_low: None };
        t.validate()?;
        Ok(t)
    }

    pub fn laplacian(dims: usize) -> Self {
        Self::new(dims, [0.0; 2], identity(dims, 1.0), vec![]).expect("valid")
    }

    pub fn fractional(dims: usize, alpha: f64) -> Result<Self> {
        Self::new(dims, [0.0; 2], [[0.0; 2]; 2], vec![JumpSpec::FractionalLaplacian { alpha }])
    }

    /// Overrides the order reported by [`LevyTriplet::order_alpha`].
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha <= 2.0) {
            return Err(Error::InvalidParameter(format!("alpha {alpha} outside (1, 2]")));
        }
        self.alpha_low = Some(alpha);
        Ok(self)
    }

    /// Sum of two operators on the same space.
    pub fn plus(&self, other: &LevyTriplet) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::InvalidParameter("operators live on different spaces".into()));
        }
        let mut drift = self.drift;
        let mut diffusion = self.diffusion;
        for i in 0..2 {
            drift[i] += other.drift[i];
            for j in 0..2 {
                diffusion[i][j] += other.diffusion[i][j];
            }
        }
        let mut jumps = self.jumps.clone();
        jumps.extend(other.jumps.iter().cloned());
        Self::new(self.dims, drift, diffusion, jumps)
    }

    /// Parses a catalog name such as `laplacian`, `frac{1.5}`,
    /// `aniso{1.4,1.8}`, `riesz_feller{1.5}`, `cgmy{1,5,5,1.5}`,
    /// `drift{0.5}` or `mix{frac{1.5}+laplacian}`.
    pub fn from_catalog(spec: &str, dims: usize) -> Result<Self> {
        let spec = spec.trim();
        let (head, args) = match spec.find('{') {
            Some(i) if spec.ends_with('}') => (&spec[..i], Some(&spec[i + 1..spec.len() - 1])),
            Some(_) => return Err(Error::Parse(format!("unbalanced braces in '{spec}'"))),
            None => (spec, None),
        };
        let nums = |s: Option<&str>| -> Result<Vec<f64>> {
            let s = s.ok_or_else(|| Error::Parse(format!("'{head}' needs parameters")))?;
            s.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{t}': {e}"))))
                .collect()
        };
        let one = |v: Vec<f64>| -> Result<f64> {
            if v.len() == 1 {
                Ok(v[0])
            } else {
                Err(Error::Parse(format!("'{head}' takes one parameter")))
            }
        };
        let zero = [[0.0; 2]; 2];
        match head {
            "laplacian" => {
                let s = match args {
                    Some(a) => one(nums(Some(a))?)?,
                    None => 1.0,
                };
                Self::new(dims, [0.0; 2], identity(dims, s), vec![])
            }
            "frac" => Self::fractional(dims, one(nums(args)?)?),
            "aniso" => Self::new(
                dims,
                [0.0; 2],
                zero,
                vec![JumpSpec::AnisotropicStable { alphas: nums(args)? }],
            ),
            "riesz_feller" => Self::new(
                dims,
                [0.0; 2],
                zero,
                vec![JumpSpec::RieszFeller { alpha: one(nums(args)?)? }],
            ),
            "cgmy" => {
                let v = nums(args)?;
                if v.len() != 4 {
                    return Err(Error::Parse("cgmy takes C,G,M,Y".into()));
                }
                Self::new(dims, [0.0; 2], zero, vec![JumpSpec::Cgmy { c: v[0], g: v[1], m: v[2], y: v[3] }])
            }
            "drift" => {
                let v = nums(args)?;
                if v.len() != dims {
                    return Err(Error::Parse(format!("drift needs {dims} components")));
                }
                let mut b = [0.0; 2];
                b[..dims].copy_from_slice(&v);
                Self::new(dims, b, zero, vec![])
            }
            "mix" => {
                let inner = args.ok_or_else(|| Error::Parse("mix needs operands".into()))?;
                let parts = split_top_level(inner, '+')?;
                let mut acc: Option<LevyTriplet> = None;
                for p in parts {
                    let t = Self::from_catalog(p, dims)?;
                    acc = Some(match acc {
                        None => t,
                        Some(a) => a.plus(&t)?,
                    });
                }
                acc.ok_or_else(|| Error::Parse("empty mix".into()))
            }
            other => Err(Error::Parse(format!("unknown operator '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dims) {
            return Err(Error::InvalidParameter(format!("dimension {}", self.dims)));
        }
        let a = &self.diffusion;
        if (a[0][1] - a[1][0]).abs() > 1e-14 {
            return Err(Error::InvalidParameter("diffusion matrix not symmetric".into()));
        }
        if self.diffusion_min_eig() < -1e-12 {
            return Err(Error::InvalidParameter("diffusion matrix not positive semidefinite".into()));
        }
        if self.dims == 1 && (a[0][1] != 0.0 || a[1][1] != 0.0 || self.drift[1] != 0.0) {
            return Err(Error::InvalidParameter("second-axis data on a 1-d operator".into()));
        }
        if self.drift.iter().chain(a.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite triplet entry".into()));
        }
        for j in &self.jumps {
            j.validate(self.dims)?;
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn drift(&self) -> [f64; 2] {
        self.drift
    }

    pub fn diffusion(&self) -> [[f64; 2]; 2] {
        self.diffusion
    }

    pub fn jumps(&self) -> &[JumpSpec] {
        &self.jumps
    }

    fn diffusion_min_eig(&self) -> f64 {
        let a = &self.diffusion;
        if self.dims == 1 {
            a[0][0]
        } else {
            let tr = a[0][0] + a[1][1];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt())
        }
    }

    /// Operator norm of the diffusion matrix.
    pub fn diffusion_norm(&self) -> f64 {
        let a = &self.diffusion;
        if self.dims == 1 {
            a[0][0].abs()
        } else {
            let tr = a[0][0] + a[1][1];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())
        }
    }

    pub fn drift_norm(&self) -> f64 {
        (self.drift[0].powi(2) + self.drift[1].powi(2)).sqrt()
    }

    /// True when `B = 0` and every jump density is even, so `Psi` is real.
    pub fn is_symmetric(&self) -> bool {
        self.drift == [0.0; 2] && self.jumps.iter().all(JumpSpec::is_even)
    }

    /// Order used for step budgets and kernel certification.
    pub fn order_alpha(&self) -> Result<f64> {
        if let Some(a) = self.alpha_low {
            return Ok(a);
        }
        if self.diffusion_min_eig() > 1e-12 {
            return Ok(2.0);
        }
        let mut best: Option<f64> = None;
        for j in &self.jumps {
            let o = j.order()?;
            best = Some(best.map_or(o, |b: f64| b.min(o)));
        }
        best.ok_or_else(|| {
            Error::InvalidParameter("operator has neither nondegenerate diffusion nor jumps".into())
        })
    }

    /// Symbol at a single wave vector.
    pub fn symbol_at(&self, xi: [f64; 2]) -> Result<Complex64> {
        let d = self.dims;
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..d {
            im -= self.drift[i] * xi[i];
            for j in 0..d {
                re += xi[i] * self.diffusion[i][j] * xi[j];
            }
        }
        let mut psi = Complex64::new(re, im);
        for j in &self.jumps {
            psi += j.symbol(xi, d)?;
        }
        Ok(psi)
    }

    /// Symbol on every spectral slot of `grid`, made Hermitian on Nyquist
    /// slots so that the induced semigroup maps real fields to real fields.
    pub fn symbol_eval(&self, grid: &Grid) -> Result<Vec<Complex64>> {
        if grid.dims() != self.dims {
            return Err(Error::InvalidParameter(format!(
                "{}-d operator on {}-d grid",
                self.dims,
                grid.dims()
            )));
        }
        let raw: Vec<Complex64> =
            (0..grid.len()).map(|i| self.symbol_at(grid.xi(i))).collect::<Result<_>>()?;
        let mut out = raw.clone();
        for (i, v) in out.iter_mut().enumerate() {
            let j = grid.negated_slot(i);
            if j != i || raw[i].im != 0.0 {
                *v = 0.5 * (raw[i] + raw[j].conj());
            }
        }
        out[0] = Complex64::new(0.0, 0.0);
        for (i, v) in out.iter().enumerate() {
            if v.re < -1e-12 * v.norm().max(1.0) {
                return Err(Error::Quadrature(format!(
                    "symbol has negative real part {:.3e} at slot {i}",
                    v.re
                )));
            }
        }
        Ok(out)
    }

    /// `int_{|z|<1} |z|^2 nu(dz)`.
    pub fn small_jump_moment(&self) -> f64 {
        self.jumps.iter().map(|j| j.small_jump_second_moment(self.dims)).sum()
    }

    /// `int_{|z|>=1} w(|z|) nu(dz)` for a radial weight.
    pub fn tail_integral(&self, weight: &dyn Fn(f64) -> f64) -> f64 {
        self.jumps.iter().map(|j| j.tail_integral(self.dims, weight)).sum()
    }
}

impl fmt::Display for LevyTriplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.diffusion != [[0.0; 2]; 2] {
            parts.push(format!("A={:?}", &self.diffusion[..self.dims]));
        }
        if self.drift != [0.0; 2] {
            parts.push(format!("B={:?}", &self.drift[..self.dims]));
        }
        for j in &self.jumps {
            parts.push(j.to_string());
        }
        write!(f, "{}", parts.join(" + "))
    }
}

fn identity(dims: usize, s: f64) -> [[f64; 2]; 2] {
    if dims == 1 {
        [[s, 0.0], [0.0, 0.0]]
    } else {
        [[s, 0.0], [0.0, s]]
    }
}

fn split_top_level(s: &str, sep: char) -> Result<Vec<&str>> {
    let mut depth = 0i32;
    let mut start = 0;
    let mut out = Vec::new();
    for (i, ch) in s.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(Error::Parse(format!("unbalanced braces in '{s}'")));
        }
    }
    if depth != 0 {
        return Err(Error::Parse(format!("unbalanced braces in '{s}'")));
    }
    out.push(s[start..].trim());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn laplacian_and_fractional_symbols() {
        let g = Grid::line(64, 5.0).unwrap();
        let lap = LevyTriplet::laplacian(1).symbol_eval(&g).unwrap();
        let frac = LevyTriplet::fractional(1, 1.5).unwrap().symbol_eval(&g).unwrap();
        for i in 0..64 {
            let xi = g.xi(i)[0];
            assert!((lap[i].re - xi * xi).abs() <= 1e-12 * xi * xi);
            assert_eq!(lap[i].im, 0.0);
            assert!((frac[i].re - xi.abs().powf(1.5)).abs() <= 1e-12 * xi.abs().powf(1.5));
        }
        assert_eq!(lap[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn orders() {
        assert_eq!(LevyTriplet::laplacian(1).order_alpha().unwrap(), 2.0);
        let an = LevyTriplet::from_catalog("aniso{1.4,1.8}", 2).unwrap();
        assert_eq!(an.order_alpha().unwrap(), 1.4);
        let mix = LevyTriplet::from_catalog("mix{frac{1.5}+laplacian}", 1).unwrap();
        assert_eq!(mix.order_alpha().unwrap(), 2.0);
        let cg = LevyTriplet::from_catalog("cgmy{1,5,5,1.5}", 1).unwrap();
        assert_eq!(cg.order_alpha().unwrap(), 1.5);
        assert!(LevyTriplet::from_catalog("drift{1}", 1).unwrap().order_alpha().is_err());
        let nd = NumericDensity {
            density: Arc::new(|z: f64| (-z * z).exp()),
            cutoff: 10.0,
            alpha: None,
            label: "g".into(),
        };
        let t = LevyTriplet::new(1, [0.0; 2], [[0.0; 2]; 2], vec![JumpSpec::NumericDensity(nd)])
            .unwrap();
        assert!(t.order_alpha().is_err());
        assert_eq!(t.with_alpha(1.3).unwrap().order_alpha().unwrap(), 1.3);
    }

    #[test]
    fn catalog_parsing_errors() {
        assert!(LevyTriplet::from_catalog("frac{1.5", 1).is_err());
        assert!(LevyTriplet::from_catalog("unknown", 1).is_err());
        assert!(LevyTriplet::from_catalog("cgmy{1,2}", 1).is_err());
        assert!(LevyTriplet::from_catalog("riesz_feller{1.5}", 2).is_err());
        assert!(LevyTriplet::from_catalog("aniso{1.4}", 2).is_err());
        assert!(LevyTriplet::from_catalog("mix{laplacian+frac{1.2}+drift{0.3}}", 1).is_ok());
    }

    #[test]
    fn rejects_indefinite_diffusion() {
        assert!(LevyTriplet::new(2, [0.0; 2], [[1.0, 2.0], [2.0, 1.0]], vec![]).is_err());
        assert!(LevyTriplet::new(2, [0.0; 2], [[1.0, 0.5], [0.4, 1.0]], vec![]).is_err());
    }

    #[test]
    fn riesz_feller_has_nonnegative_real_part_and_is_asymmetric() {
        let t = LevyTriplet::from_catalog("riesz_feller{1.5}", 1).unwrap();
        assert!(!t.is_symmetric());
        let g = Grid::line(128, 10.0).unwrap();
        let s = t.symbol_eval(&g).unwrap();
        assert!(s.iter().all(|v| v.re >= 0.0));
        assert!(s.iter().any(|v| v.im.abs() > 1e-3));
    }

    #[test]
    fn numeric_density_reproduces_closed_form_cgmy() {
        let (c, gg, m, y) = (1.0, 5.0, 5.0, 1.5);
        let nd = NumericDensity {
            density: Arc::new(move |z: f64| {
                if z > 0.0 {
                    c * (-m * z).exp() * z.powf(-1.0 - y)
                } else if z < 0.0 {
                    c * (-gg * z.abs()).exp() * z.abs().powf(-1.0 - y)
                } else {
                    0.0
                }
            }),
            cutoff: 12.0,
            alpha: Some(y),
            label: "cgmy".into(),
        };
        for &xi in &[0.3, 1.0, 7.0, 40.0] {
            let a = numeric_symbol(xi, &nd).unwrap();
            let b = cgmy_symbol(xi, c, gg, m, y);
            assert!((a - b).norm() <= 1e-8 * b.norm(), "xi={xi}: {a} vs {b}");
        }
    }

    #[test]
    fn numeric_density_rejects_heavy_tails() {
        let nd = NumericDensity {
            density: Arc::new(|z: f64| z.abs().powf(-2.5)),
            cutoff: 5.0,
            alpha: Some(1.5),
            label: "stable".into(),
        };
        assert!(matches!(numeric_symbol(1.0, &nd), Err(Error::Quadrature(_))));
    }

    #[test]
    fn symmetric_triplets_have_real_symbols_on_grid() {
        let g = Grid::square(16, 3.0).unwrap();
        for spec in ["laplacian", "frac{1.3}", "aniso{1.2,1.9}", "mix{frac{1.5}+laplacian}"] {
            let t = LevyTriplet::from_catalog(spec, 2).unwrap();
            assert!(t.is_symmetric());
            let s = t.symbol_eval(&g).unwrap();
            assert!(s.iter().all(|v| v.im.abs() <= 1e-12), "{spec}");
        }
        let cg = LevyTriplet::from_catalog("cgmy{1,3,3,1.2}", 1).unwrap();
        let s = cg.symbol_eval(&Grid::line(64, 4.0).unwrap()).unwrap();
        assert!(s.iter().all(|v| v.im.abs() <= 1e-12 * v.norm().max(1.0)));
    }

    #[test]
    fn hermitian_on_grid() {
        let g = Grid::square(16, 2.0).unwrap();
        let t = LevyTriplet::from_catalog("mix{drift{0.3,-1}+frac{1.5}}", 2).unwrap();
        let s = t.symbol_eval(&g).unwrap();
        for i in 0..g.len() {
            let j = g.negated_slot(i);
            assert!((s[i] - s[j].conj()).norm() <= 1e-14);
        }
    }

    proptest! {
        #[test]
        fn stable_scaling(alpha in 0.5f64..2.0, k in 1usize..16) {
            let g = Grid::line(64, 2.0).unwrap();
            let t = LevyTriplet::fractional(1, alpha).unwrap();
            let s = t.symbol_eval(&g).unwrap();
            // slot 2k holds wavenumber 2 xi_k
            let lam = 2.0f64;
            prop_assert!((s[2 * k].re - lam.powf(alpha) * s[k].re).abs() <= 1e-12 * s[2 * k].re);
        }

        #[test]
        fn cgmy_real_part_nonnegative(xi in -200.0f64..200.0, y in 0.2f64..1.9, g in 0.5f64..8.0, m in 0.5f64..8.0) {
            prop_assume!((y - 1.0).abs() > 0.05);
            let s = cgmy_symbol(xi, 1.0, g, m, y);
            prop_assert!(s.re >= -1e-12 * s.norm().max(1.0));
        }
    }
}
