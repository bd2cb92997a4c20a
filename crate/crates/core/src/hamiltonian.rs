//! Hamiltonians `H(x, u, p)` with their derivatives, and probe-based
//! validators for smoothness, uniform convexity and monotonicity in `u`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub trait Hamiltonian: Send + Sync + fmt::Debug {
    fn h(&self, x: Point, u: f64, p: Point) -> f64;
    fn dp(&self, x: Point, u: f64, p: Point) -> Point;
    fn dpp(&self, x: Point, u: f64, p: Point) -> Mat2;
    fn du(&self, _x: Point, _u: f64, _p: Point) -> f64 {
        0.0
    }
    fn depends_on_u(&self) -> bool {
        false
    }
    fn name(&self) -> String;
}

/// `H = c |p|^2`.
#[derive(Clone, Copy, Debug)]
pub struct Quadratic {
    pub scale: f64,
}

impl Default for Quadratic {
    fn default() -> Self {
        Quadratic { scale: 1.0 }
    }
}

impl Hamiltonian for Quadratic {
    fn h(&self, _x: Point, _u: f64, p: Point) -> f64 {
        self.scale * (p[0] * p[0] + p[1] * p[1])
    }
    fn dp(&self, _x: Point, _u: f64, p: Point) -> Point {
        [2.0 * self.scale * p[0], 2.0 * self.scale * p[1]]
    }
    fn dpp(&self, _x: Point, _u: f64, _p: Point) -> Mat2 {
        let s = 2.0 * self.scale;
        [[s, 0.0], [0.0, s]]
    }
    fn name(&self) -> String {
        if self.scale == 1.0 {
            "quadratic".into()
        } else {
            format!("quadratic{{{}}}", self.scale)
        }
    }
}

type H1Fn = Arc<dyn Fn(Point, Point) -> (f64, Point, Mat2) + Send + Sync>;
type H2Fn = Arc<dyn Fn(Point, f64) -> (f64, f64) + Send + Sync>;

/// `H = H_1(x, p) + H_2(x, u)`; each callback returns the value with its derivatives.
#[derive(Clone)]
pub struct Separable {
    pub h1: H1Fn,
    pub h2: H2Fn,
    pub label: String,
}

impl fmt::Debug for Separable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Separable({})", self.label)
    }
}

impl Separable {
    /// `c |p|^2 + gamma u`.
    pub fn damped_quadratic(scale: f64, gamma: f64) -> Self {
        Separable {
            h1: Arc::new(move |_x, p| {
                let s = 2.0 * scale;
                (scale * (p[0] * p[0] + p[1] * p[1]), [s * p[0], s * p[1]], [[s, 0.0], [0.0, s]])
            }),
            h2: Arc::new(move |_x, u| (gamma * u, gamma)),
            label: format!("damped{{{scale},{gamma}}}"),
        }
    }
}

impl Hamiltonian for Separable {
    fn h(&self, x: Point, u: f64, p: Point) -> f64 {
        (self.h1)(x, p).0 + (self.h2)(x, u).0
    }
    fn dp(&self, x: Point, _u: f64, p: Point) -> Point {
        (self.h1)(x, p).1
    }
    fn dpp(&self, x: Point, _u: f64, p: Point) -> Mat2 {
        (self.h1)(x, p).2
    }
    fn du(&self, x: Point, u: f64, _p: Point) -> f64 {
        (self.h2)(x, u).1
    }
    fn depends_on_u(&self) -> bool {
        true
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Parses `quadratic`, `quadratic{c}` or `damped{c,gamma}`.
pub fn from_catalog(spec: &str) -> Result<Arc<dyn Hamiltonian>> {
    let spec = spec.trim();
    let (head, args) = match spec.find('{') {
        Some(i) if spec.ends_with('}') => (&spec[..i], Some(&spec[i + 1..spec.len() - 1])),
        Some(_) => return Err(Error::Parse(format!("unbalanced braces in '{spec}'"))),
        None => (spec, None),
    };
    let nums: Vec<f64> = match args {
        Some(a) => a
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{t}': {e}"))))
            .collect::<Result<_>>()?,
        None => vec![],
    };
    match (head, nums.as_slice()) {
        ("quadratic", []) => Ok(Arc::new(Quadratic::default())),
        ("quadratic", [c]) if *c > 0.0 => Ok(Arc::new(Quadratic { scale: *c })),
        ("damped", [c, g]) if *c > 0.0 && *g >= 0.0 => Ok(Arc::new(Separable::damped_quadratic(*c, *g))),
        _ => Err(Error::Parse(format!("unknown Hamiltonian '{spec}'"))),
    }
}

/// `H(x, u, Du)` on the grid.
pub fn eval_field(h: &dyn Hamiltonian, u: &Field, grad: &[Field]) -> Field {
    let g = u.grid();
    let vals = (0..g.len())
        .map(|i| h.h(g.point(i), u.values()[i], point_of(grad, i)))
        .collect();
    Field::new(g, vals).unwrap_or_else(|_| Field::constant(g, f64::NAN))
}

/// `D_p H(x, u, Du)` on the grid, one field per axis.
pub fn dp_field(h: &dyn Hamiltonian, u: &Field, grad: &[Field]) -> Vec<Field> {
    let g = u.grid();
    let d = g.dims();
    let mut comps = vec![Vec::with_capacity(g.len()); d];
    for i in 0..g.len() {
        let v = h.dp(g.point(i), u.values()[i], point_of(grad, i));
        for (a, c) in comps.iter_mut().enumerate() {
            c.push(v[a]);
        }
    }
    comps.into_iter().map(|c| Field::raw(g, c)).collect()
}

/// `D_pp H(x, u, Du)` on the grid as `d x d` component fields.
pub fn dpp_field(h: &dyn Hamiltonian, u: &Field, grad: &[Field]) -> Vec<Vec<Field>> {
    let g = u.grid();
    let d = g.dims();
    let mut comps = vec![vec![Vec::with_capacity(g.len()); d]; d];
    for i in 0..g.len() {
        let m = h.dpp(g.point(i), u.values()[i], point_of(grad, i));
        for a in 0..d {
            for b in 0..d {
                comps[a][b].push(m[a][b]);
            }
        }
    }
    comps.into_iter().map(|row| row.into_iter().map(|c| Field::raw(g, c)).collect()).collect()
}

pub(crate) fn point_of(grad: &[Field], i: usize) -> Point {
    let mut p = [0.0; 2];
    for (a, f) in grad.iter().enumerate() {
        p[a] = f.values()[i];
    }
    p
}

#[derive(Clone, Debug, Serialize)]
pub struct HamiltonianReport {
    pub max_dp_mismatch: f64,
    pub dp_pass: bool,
    pub min_curvature: f64,
    pub max_curvature: f64,
    pub convex_pass: Option<bool>,
    pub min_du: f64,
    pub monotone_pass: Option<bool>,
}

/// Random probes of `(x, u, p)`: checks `D_pH` against central differences,
/// optional `c1^{-1} <= D_ppH <= c1`, optional `D_uH >= gamma`.
pub fn validate(
    h: &dyn Hamiltonian,
    grid: &Grid,
    probes: usize,
    seed: u64,
    c1: Option<f64>,
    gamma: Option<f64>,
) -> HamiltonianReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dims();
    let tol = 1e-6;
    let mut mismatch = 0.0f64;
    let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut min_du = f64::INFINITY;
    for _ in 0..probes {
        let mut x = [0.0; 2];
        let mut p = [0.0; 2];
        for a in 0..d {
            x[a] = rng.gen_range(-grid.half_width(a)..grid.half_width(a));
            p[a] = rng.gen_range(-5.0..5.0);
        }
        let u = rng.gen_range(-5.0..5.0);
        let dp = h.dp(x, u, p);
        for a in 0..d {
            let step = 1e-5 * (1.0 + p[a].abs());
            let mut pp = p;
            let mut pm = p;
            pp[a] += step;
            pm[a] -= step;
            let fd = (h.h(x, u, pp) - h.h(x, u, pm)) / (2.0 * step);
            mismatch = mismatch.max((fd - dp[a]).abs() / dp[a].abs().max(1.0));
        }
        let m = h.dpp(x, u, p);
        let (lo, hi) = sym_eigs(m, d);
        cmin = cmin.min(lo);
        cmax = cmax.max(hi);
        min_du = min_du.min(h.du(x, u, p));
    }
    let ctol = 1e-9;
    HamiltonianReport {
        max_dp_mismatch: mismatch,
        dp_pass: mismatch <= tol,
        min_curvature: cmin,
        max_curvature: cmax,
        convex_pass: c1.map(|c| cmin >= 1.0 / c - ctol && cmax <= c + ctol),
        min_du,
        monotone_pass: gamma.map(|g| min_du >= g - ctol),
    }
}

fn sym_eigs(m: Mat2, d: usize) -> (f64, f64) {
    if d == 1 {
        return (m[0][0], m[0][0]);
    }
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr - disc, 0.5 * tr + disc)
}
