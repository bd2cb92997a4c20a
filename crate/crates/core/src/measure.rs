//! Probability densities on the grid, the bounded-Lipschitz metric d0,
//! mollification and the tightness function psi.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{periodic_convolve, Field, Grid};
use crate::transport::{chain_lp, min_cost_transport};

pub const MASS_TOL: f64 = 1e-9;
const CLAMP: f64 = 1e-14;
const NEG_TOL: f64 = 1e-12;
/// Mass mismatch beyond which d0 refuses to compare two densities.
pub const D0_MASS_TOL: f64 = 1e-8;
/// Largest cell count solved exactly in two dimensions.
pub const EXACT_CELLS_2D: usize = 32 * 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Measure {
    density: Field,
}

impl Measure {
    pub fn new(density: Field) -> Result<Self> {
        let density = density.map(|v| if v.abs() < CLAMP { 0.0 } else { v });
        if let Some(index) = density.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let min = density.min();
        if min < -NEG_TOL {
            return Err(Error::NotAMeasure(format!("minimum {min:.3e}")));
        }
        let mass = density.integral();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::NotAMeasure(format!("mass {mass:.12}")));
        }
        Ok(Measure { density })
    }

    /// Clips negative values and renormalizes; returns the absolute mass change.
    pub fn from_signed_clamped(density: &Field) -> Result<(Self, f64)> {
        let clipped = density.map(|v| v.max(0.0));
        let mass = clipped.integral();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::NotAMeasure(format!("cannot normalize mass {mass}")));
        }
        let change = (mass - density.integral()).abs() + (mass - 1.0).abs();
        Ok((Measure::new(clipped.scale(1.0 / mass))?, change))
    }

    /// Normalized sum of Gaussian bumps `(weight, centre, sigma)`.
    pub fn gaussian_mixture(grid: &Grid, bumps: &[(f64, [f64; 2], f64)]) -> Result<Self> {
        if bumps.is_empty() || bumps.iter().any(|b| !(b.0 > 0.0 && b.2 > 0.0)) {
            return Err(Error::InvalidParameter("bumps need positive weights and widths".into()));
        }
        let f = Field::from_fn(grid, |p| {
            bumps
                .iter()
                .map(|(w, c, s)| {
                    let r2: f64 = (0..grid.dims()).map(|a| (p[a] - c[a]).powi(2)).sum();
                    w * (-0.5 * r2 / (s * s)).exp()
                })
                .sum()
        });
        let mass = f.integral();
        Measure::new(f.scale(1.0 / mass))
    }

    /// Grid delta at the node nearest to `x`.
    pub fn dirac(grid: &Grid, x: [f64; 2]) -> Self {
        Measure { density: Field::delta(grid, grid.nearest(x)) }
    }

    pub fn density(&self) -> &Field {
        &self.density
    }

    pub fn into_density(self) -> Field {
        self.density
    }

    pub fn grid(&self) -> &Grid {
        self.density.grid()
    }

    pub fn mass(&self) -> f64 {
        self.density.integral()
    }

    /// Periodic translation by whole cells.
    pub fn shift(&self, cells: [i64; 2]) -> Self {
        let g = self.grid();
        let vals = (0..g.len())
            .map(|i| {
                let mi = g.multi_index(i);
                let mut src = [0usize; 2];
                for a in 0..g.dims() {
                    let n = g.n(a) as i64;
                    src[a] = (mi[a] as i64 - cells[a]).rem_euclid(n) as usize;
                }
                self.density.values()[g.flat_index(src)]
            })
            .collect();
        Measure { density: Field::new(g, vals).expect("finite") }
    }

    /// `(1 - h) self + h other`.
    pub fn mix(&self, other: &Measure, h: f64) -> Result<Self> {
        self.grid().same(other.grid())?;
        Measure::new(self.density.scale(1.0 - h).add(&other.density.scale(h)))
    }

    pub fn summary(&self, psi: &TightnessFn) -> MeasureSummary {
        MeasureSummary {
            mass: self.mass(),
            min: self.density.min(),
            psi_moment: generalized_moment(self, psi),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeasureSummary {
    pub mass: f64,
    pub min: f64,
    pub psi_moment: f64,
}

/// Enclosure of d0; `lower == upper` when computed exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct D0Bounds {
    pub lower: f64,
    pub upper: f64,
    pub exact: bool,
}

impl D0Bounds {
    pub fn value(&self) -> f64 {
        self.upper
    }
}

/// `d0(m, m')` for densities of equal mass; the upper end of the enclosure in 2D.
pub fn d0_distance(m: &Field, m_prime: &Field) -> Result<f64> {
    Ok(d0_bounds(m, m_prime)?.value())
}

pub fn d0_bounds(m: &Field, m_prime: &Field) -> Result<D0Bounds> {
    m.grid().same(m_prime.grid())?;
    d0_norm(&m_prime.sub(m))
}

/// d0 of a signed density with zero total mass.
pub fn d0_norm(w: &Field) -> Result<D0Bounds> {
    d0_norm_with(w, EXACT_CELLS_2D)
}

/// As [`d0_norm`], solving exactly on at most `max_cells` blocks in 2D.
pub fn d0_norm_with(w: &Field, max_cells: usize) -> Result<D0Bounds> {
    let g = w.grid();
    let defect = w.integral();
    if defect.abs() > D0_MASS_TOL {
        return Err(Error::MassMismatch(defect));
    }
    let cell = g.cell();
    let weights: Vec<f64> = w.values().iter().map(|v| v * cell).collect();
    if g.dims() == 1 {
        let v = chain_lp(&weights, g.dx(0)).max(0.0);
        return Ok(D0Bounds { lower: v, upper: v, exact: true });
    }
    let total: f64 = weights.iter().map(|v| v.abs()).sum();
    let (nodes, coarse, radius) = coarsen(g, &weights, max_cells.clamp(4, EXACT_CELLS_2D));
    let value = transport_2d(&nodes, &coarse);
    let slack = radius * total;
    let exact = radius == 0.0;
    Ok(D0Bounds {
        lower: (value - slack).max(0.0),
        upper: (value + slack).min(total),
        exact,
    })
}

/// Aggregates weights into at most `max_cells` blocks placed at block
/// centres; also returns the largest node-to-centre distance.
fn coarsen(g: &Grid, weights: &[f64], max_cells: usize) -> (Vec<[f64; 2]>, Vec<f64>, f64) {
    let side = (max_cells as f64).sqrt() as usize;
    let bx = g.n(0).div_ceil(side);
    let by = g.n(1).div_ceil(side);
    if bx == 1 && by == 1 {
        return ((0..g.len()).map(|i| g.point(i)).collect(), weights.to_vec(), 0.0);
    }
    let cx = g.n(0).div_ceil(bx);
    let cy = g.n(1).div_ceil(by);
    let mut acc = vec![0.0; cx * cy];
    let mut centre = vec![[0.0f64; 2]; cx * cy];
    let mut count = vec![0usize; cx * cy];
    for (i, w) in weights.iter().enumerate() {
        let mi = g.multi_index(i);
        let b = (mi[0] / bx) * cy + mi[1] / by;
        acc[b] += w;
        let p = g.point(i);
        centre[b][0] += p[0];
        centre[b][1] += p[1];
        count[b] += 1;
    }
    for (c, k) in centre.iter_mut().zip(&count) {
        c[0] /= *k as f64;
        c[1] /= *k as f64;
    }
    let mut radius = 0.0f64;
    for i in 0..g.len() {
        let mi = g.multi_index(i);
        let b = (mi[0] / bx) * cy + mi[1] / by;
        let p = g.point(i);
        radius = radius.max(((p[0] - centre[b][0]).powi(2) + (p[1] - centre[b][1]).powi(2)).sqrt());
    }
    (centre, acc, radius)
}

fn transport_2d(nodes: &[[f64; 2]], w: &[f64]) -> f64 {
    let mut sp = vec![];
    let mut sm = vec![];
    let mut ps = vec![];
    let mut pm = vec![];
    for (p, v) in nodes.iter().zip(w) {
        if *v > 0.0 {
            sp.push(*v);
            ps.push(*p);
        } else if *v < 0.0 {
            sm.push(-*v);
            pm.push(*p);
        }
    }
    let tp: f64 = sp.iter().sum();
    let tm: f64 = sm.iter().sum();
    if tp == 0.0 || tm == 0.0 {
        return 0.0;
    }
    // absorb the admissible rounding defect into the demand side
    let r = tp / tm;
    for v in &mut sm {
        *v *= r;
    }
    min_cost_transport(&sp, &sm, |i, j| {
        let d = ((ps[i][0] - pm[j][0]).powi(2) + (ps[i][1] - pm[j][1]).powi(2)).sqrt();
        d.min(2.0)
    })
}

/// Grid total variation `dx^d sum |m' - m| / 2`.
pub fn total_variation(m: &Field, m_prime: &Field) -> f64 {
    0.5 * m_prime.sub(m).l1()
}

/// Normalized bump `exp(-1 / (1 - |x/eps|^2))` centred at the grid origin.
pub fn mollifier(grid: &Grid, eps: f64) -> Result<Field> {
    let dx = (0..grid.dims()).map(|a| grid.dx(a)).fold(0.0, f64::max);
    if !(eps >= 2.0 * dx) {
        return Err(Error::Resolution(format!("mollifier width {eps} below 2 dx = {}", 2.0 * dx)));
    }
    if (0..grid.dims()).any(|a| eps >= grid.half_width(a)) {
        return Err(Error::Resolution(format!("mollifier width {eps} exceeds the box")));
    }
    let f = Field::from_fn(grid, |p| {
        let r2: f64 = (0..grid.dims()).map(|a| p[a] * p[a]).sum::<f64>() / (eps * eps);
        if r2 < 1.0 {
            (-1.0 / (1.0 - r2)).exp()
        } else {
            0.0
        }
    });
    let mass = f.integral();
    Ok(f.scale(1.0 / mass))
}

pub fn mollify(m: &Measure, eps: f64) -> Result<Measure> {
    mollify_field(m.density(), eps).and_then(Measure::new)
}

/// Mollification of an arbitrary (possibly signed) density.
pub fn mollify_field(f: &Field, eps: f64) -> Result<Field> {
    let eta = mollifier(f.grid(), eps)?;
    periodic_convolve(f, &eta)
}

/// `psi(x) = log(1 + sqrt(1 + |x|^2)) - log 2` with sup bounds of its derivatives.
#[derive(Clone, Debug)]
pub struct TightnessFn {
    pub psi: Field,
    pub grad_bound: f64,
    pub hess_bound: f64,
}

pub fn psi_value(r: f64) -> f64 {
    (1.0 + (1.0 + r * r).sqrt()).ln() - 2f64.ln()
}

fn psi_radial_derivatives(r: f64) -> (f64, f64) {
    let s = (1.0 + r * r).sqrt();
    let d1 = r / (s * (1.0 + s));
    let num = s * (1.0 + s) - r * r * (1.0 + 2.0 * s) / s;
    let d2 = num / (s * (1.0 + s)).powi(2);
    (d1, d2)
}

impl TightnessFn {
    pub fn new(grid: &Grid) -> Self {
        let psi = Field::from_fn(grid, |p| psi_value((p[0] * p[0] + p[1] * p[1]).sqrt()));
        let mut grad = 0.0f64;
        let mut hess = 0.0f64;
        for k in 0..=20_000 {
            let r = k as f64 * 1e-3;
            let (d1, d2) = psi_radial_derivatives(r);
            grad = grad.max(d1.abs());
            let tangential = if r > 0.0 { d1 / r } else { d2 };
            hess = hess.max(d2.abs()).max(tangential.abs());
        }
        TightnessFn { psi, grad_bound: grad, hess_bound: hess }
    }

    /// `psi(x + y) - psi(x) - psi(y)`, bounded above by the smoothing slack.
    pub fn subadditivity_defect(x: [f64; 2], y: [f64; 2]) -> f64 {
        let r = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        psi_value(r([x[0] + y[0], x[1] + y[1]])) - psi_value(r(x)) - psi_value(r(y))
    }
}

/// Additive slack in `psi(x + y) <= psi(x) + psi(y) + SLACK`.
pub const SUBADDITIVITY_SLACK: f64 = 0.7;

pub fn generalized_moment(m: &Measure, psi: &TightnessFn) -> f64 {
    m.density().dot(&psi.psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense single-phase simplex for `max c.x` s.t. `A x <= b`, `x >= 0`, `b >= 0`.
    fn simplex(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
        let m = a.len();
        let n = c.len();
        let cols = n + m + 1;
        let mut t = vec![vec![0.0; cols]; m + 1];
        for i in 0..m {
            t[i][..n].copy_from_slice(&a[i]);
            t[i][n + i] = 1.0;
            t[i][cols - 1] = b[i];
        }
        for j in 0..n {
            t[m][j] = -c[j];
        }
        loop {
            // Bland's rule
            let Some(pc) = (0..cols - 1).find(|&j| t[m][j] < -1e-12) else { break };
            let mut pr = usize::MAX;
            let mut best = f64::INFINITY;
            for i in 0..m {
                if t[i][pc] > 1e-12 {
                    let r = t[i][cols - 1] / t[i][pc];
                    if r < best - 1e-15 {
                        best = r;
                        pr = i;
                    }
                }
            }
            assert!(pr != usize::MAX, "unbounded");
            let piv = t[pr][pc];
            for v in t[pr].iter_mut() {
                *v /= piv;
            }
            let row = t[pr].clone();
            for (i, r) in t.iter_mut().enumerate() {
                if i != pr && r[pc] != 0.0 {
                    let f = r[pc];
                    for (x, y) in r.iter_mut().zip(&row) {
                        *x -= f * y;
                    }
                }
            }
        }
        t[m][cols - 1]
    }

    /// d0 via the full pairwise LP on `psi = phi + 1 in [0, 2]`.
    fn dense_lp(g: &Grid, w: &Field) -> f64 {
        let n = g.len();
        let cell = g.cell();
        let c: Vec<f64> = w.values().iter().map(|v| v * cell).collect();
        let mut a = vec![];
        let mut b = vec![];
        for j in 0..n {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            a.push(row);
            b.push(2.0);
        }
        for j in 0..n {
            for k in 0..n {
                if j != k {
                    let mut row = vec![0.0; n];
                    row[j] = 1.0;
                    row[k] = -1.0;
                    let (pj, pk) = (g.point(j), g.point(k));
                    a.push(row);
                    b.push(((pj[0] - pk[0]).powi(2) + (pj[1] - pk[1]).powi(2)).sqrt());
                }
            }
        }
        simplex(&a, &b, &c)
    }

    fn random_density(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
        let f = Field::new(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let m = f.integral();
        f.scale(1.0 / m)
    }

    #[test]
    fn chain_lp_matches_dense_lp() {
        let g = Grid::line(32, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a = random_density(&g, &mut rng);
            let b = random_density(&g, &mut rng);
            let chain = d0_distance(&a, &b).unwrap();
            let lp = dense_lp(&g, &b.sub(&a));
            assert!((chain - lp).abs() <= 1e-9, "{chain} vs {lp}");
        }
    }

    #[test]
    fn transport_matches_dense_lp_in_2d() {
        let g = Grid::square(8, 2.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..4 {
            let a = random_density(&g, &mut rng);
            let b = random_density(&g, &mut rng);
            let bounds = d0_bounds(&a, &b).unwrap();
            assert!(bounds.exact);
            let lp = dense_lp(&g, &b.sub(&a));
            assert!((bounds.value() - lp).abs() <= 1e-9, "{bounds:?} vs {lp}");
        }
    }

    #[test]
    fn dirac_pairs() {
        let g = Grid::line(512, 5.0).unwrap();
        for (ia, ib) in [(256usize, 266usize), (100, 300), (50, 52), (0, 511)] {
            let a = Field::delta(&g, ia);
            let b = Field::delta(&g, ib);
            let dist = (g.coord(0, ia) - g.coord(0, ib)).abs();
            assert_eq!(d0_distance(&a, &b).unwrap(), dist.min(2.0));
        }
        let g2 = Grid::square(16, 2.0).unwrap();
        let a = Field::delta(&g2, g2.flat_index([3, 4]));
        let b = Field::delta(&g2, g2.flat_index([7, 1]));
        let d = (16.0f64 + 9.0).sqrt() * g2.dx(0);
        assert!((d0_distance(&a, &b).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn self_distance_is_zero() {
        let g = Grid::line(64, 3.0).unwrap();
        let m = Measure::gaussian_mixture(&g, &[(1.0, [0.3, 0.0], 0.4)]).unwrap();
        assert_eq!(d0_distance(m.density(), m.density()).unwrap(), 0.0);
    }

    #[test]
    fn unequal_mass_rejected() {
        let g = Grid::line(64, 3.0).unwrap();
        let a = Field::constant(&g, 1.0 / 6.0);
        let b = a.scale(1.001);
        assert!(matches!(d0_distance(&a, &b), Err(Error::MassMismatch(_))));
    }

    #[test]
    fn coarsened_2d_bracket_contains_fine_value() {
        let g = Grid::square(64, 3.0).unwrap();
        let a = Measure::gaussian_mixture(&g, &[(1.0, [0.5, 0.0], 0.4)]).unwrap();
        let b = Measure::gaussian_mixture(&g, &[(1.0, [-0.5, 0.2], 0.5)]).unwrap();
        let bounds = d0_bounds(a.density(), b.density()).unwrap();
        assert!(!bounds.exact);
        assert!(bounds.lower <= bounds.upper);
        assert!(bounds.upper <= 2.0 * total_variation(a.density(), b.density()) + 1e-12);
        // the shift is about 1.02, well inside the bracket
        assert!(bounds.lower < 1.02 && bounds.upper > 1.0, "{bounds:?}");
    }

    #[test]
    fn mollifier_support_and_mass() {
        let g = Grid::line(512, 4.0).unwrap();
        let eps = 0.1;
        let m = mollify(&Measure::dirac(&g, [0.0, 0.0]), eps).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-12);
        for i in 0..g.len() {
            if m.density().values()[i] > 0.0 {
                assert!(g.coord(0, i).abs() <= eps + g.dx(0));
            }
        }
        assert!(matches!(mollify(&m, 0.01), Err(Error::Resolution(_))));
    }

    #[test]
    fn mollifier_bound() {
        let g = Grid::line(512, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let bumps: Vec<_> = (0..3)
                .map(|_| (rng.gen_range(0.2..1.0), [rng.gen_range(-2.0..2.0), 0.0], rng.gen_range(0.05..0.5)))
                .collect();
            let m = Measure::gaussian_mixture(&g, &bumps).unwrap();
            let mm = mollify(&m, 0.1).unwrap();
            assert!(d0_distance(m.density(), mm.density()).unwrap() <= 0.1 + g.dx(0));
        }
    }

    #[test]
    fn double_mollification_is_associative() {
        let g = Grid::line(256, 4.0).unwrap();
        let m = Measure::gaussian_mixture(&g, &[(1.0, [0.2, 0.0], 0.3)]).unwrap();
        let twice = mollify(&mollify(&m, 0.2).unwrap(), 0.2).unwrap();
        let eta = mollifier(&g, 0.2).unwrap();
        let eta2 = periodic_convolve(&eta, &eta).unwrap();
        let once = periodic_convolve(m.density(), &eta2).unwrap();
        assert!(twice.density().max_diff(&once) <= 1e-12);
    }

    #[test]
    fn psi_properties() {
        let g = Grid::square(32, 4.0).unwrap();
        let psi = TightnessFn::new(&g);
        assert!(psi.psi.min() >= 0.0);
        assert_eq!(psi_value(0.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let s = 10f64.powf(rng.gen_range(-2.0..3.0));
            let x = [rng.gen_range(-s..s), rng.gen_range(-s..s)];
            let y = [rng.gen_range(-s..s), rng.gen_range(-s..s)];
            assert!(TightnessFn::subadditivity_defect(x, y) <= SUBADDITIVITY_SLACK);
        }
        assert!(psi.grad_bound > 0.0 && psi.grad_bound < 0.5);
        assert!(psi.hess_bound <= 0.5 + 1e-12);
    }

    #[test]
    fn moment_of_dirac_vanishes() {
        let g = Grid::line(64, 3.0).unwrap();
        let psi = TightnessFn::new(&g);
        assert_eq!(generalized_moment(&Measure::dirac(&g, [0.0, 0.0]), &psi), 0.0);
    }

    #[test]
    fn moment_of_uniform_density() {
        use quadrature::double_exponential::integrate;
        // x = +-1 are nodes; half weights there make the grid sum a trapezoid rule
        let n = 1 << 18;
        let g = Grid::line(2 * n, 2.0).unwrap();
        let f = Field::from_fn(&g, |p| {
            let x = p[0];
            if x.abs() < 1.0 - 1e-12 {
                0.5
            } else if (x.abs() - 1.0).abs() <= 1e-12 {
                0.25
            } else {
                0.0
            }
        });
        let m = Measure::new(f).unwrap();
        let psi = TightnessFn::new(&g);
        let exact = integrate(|x| 0.5 * psi_value(x.abs()), -1.0, 1.0, 1e-14).integral;
        assert!((generalized_moment(&m, &psi) - exact).abs() <= 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn triangle_inequality(seed in 0u64..1000) {
            let g = Grid::line(64, 3.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_density(&g, &mut rng);
            let b = random_density(&g, &mut rng);
            let c = random_density(&g, &mut rng);
            let ab = d0_distance(&a, &b).unwrap();
            let bc = d0_distance(&b, &c).unwrap();
            let ac = d0_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!((ab - d0_distance(&b, &a).unwrap()).abs() <= 1e-12);
            prop_assert!(ab <= 2.0 * total_variation(&a, &b) + 1e-12);
        }

        #[test]
        fn translation_moment(cells in -40i64..40) {
            let g = Grid::line(256, 8.0).unwrap();
            let psi = TightnessFn::new(&g);
            let m = Measure::gaussian_mixture(&g, &[(1.0, [0.5, 0.0], 0.3)]).unwrap();
            let shifted = m.shift([cells, 0]);
            let a = cells as f64 * g.dx(0);
            prop_assert!(generalized_moment(&shifted, &psi)
                <= generalized_moment(&m, &psi) + psi_value(a.abs()) + SUBADDITIVITY_SLACK);
        }
    }
}
