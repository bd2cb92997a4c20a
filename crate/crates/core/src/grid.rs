//! Periodic grids on `[-L, L)^d` for `d` in {1, 2}, fields, and the spectral
//! toolkit (transforms, derivatives, convolution).
//!
//! Layout is row-major with axis 0 slowest: node `(i0, i1)` lives at flat
//! index `i0 * n1 + i1`. Every file format in this crate inherits this order.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

struct Axis {
    n: usize,
    half_width: f64,
    dx: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid. Cheap to clone; FFT plans are shared.
#[derive(Clone)]
pub struct Grid {
    axes: Arc<Vec<Axis>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let desc: Vec<String> =
            self.axes.iter().map(|a| format!("n={} L={}", a.n, a.half_width)).collect();
        write!(f, "Grid[{}]", desc.join(", "))
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.axes, &other.axes)
            || (self.axes.len() == other.axes.len()
                && self
                    .axes
                    .iter()
                    .zip(other.axes.iter())
                    .all(|(a, b)| a.n == b.n && a.half_width.to_bits() == b.half_width.to_bits()))
    }
}

impl Grid {
    pub fn new(n: &[usize], half_width: &[f64]) -> Result<Self> {
        if n.is_empty() || n.len() > 2 || n.len() != half_width.len() {
            return Err(Error::InvalidGrid(format!(
                "need 1 or 2 axes with matching half-widths, got {} and {}",
                n.len(),
                half_width.len()
            )));
        }
        let mut planner = FftPlanner::new();
        let mut axes = Vec::with_capacity(n.len());
        for (&ni, &li) in n.iter().zip(half_width) {
            if ni < 8 || !ni.is_power_of_two() {
                return Err(Error::InvalidGrid(format!("n = {ni} must be a power of two >= 8")));
            }
            if !(li.is_finite() && li > 0.0) {
                return Err(Error::InvalidGrid(format!("half-width {li} must be positive")));
            }
            axes.push(Axis {
                n: ni,
                half_width: li,
                dx: 2.0 * li / ni as f64,
                fwd: planner.plan_fft_forward(ni),
                inv: planner.plan_fft_inverse(ni),
            });
        }
        Ok(Grid { axes: Arc::new(axes) })
    }

    pub fn line(n: usize, half_width: f64) -> Result<Self> {
        Self::new(&[n], &[half_width])
    }

    pub fn square(n: usize, half_width: f64) -> Result<Self> {
        Self::new(&[n, n], &[half_width, half_width])
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn n(&self, axis: usize) -> usize {
        self.axes[axis].n
    }

    pub fn half_width(&self, axis: usize) -> f64 {
        self.axes[axis].half_width
    }

    pub fn dx(&self, axis: usize) -> f64 {
        self.axes[axis].dx
    }

    pub fn dx_min(&self) -> f64 {
        self.axes.iter().map(|a| a.dx).fold(f64::INFINITY, f64::min)
    }

    /// Quadrature weight `dx_0 * ... * dx_{d-1}`.
    pub fn cell(&self) -> f64 {
        self.axes.iter().map(|a| a.dx).product()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.half_width).collect()
    }

    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        let a = &self.axes[axis];
        -a.half_width + j as f64 * a.dx
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dims() == 1 {
            [idx, 0]
        } else {
            let n1 = self.axes[1].n;
            [idx / n1, idx % n1]
        }
    }

    pub fn flat_index(&self, mi: [usize; 2]) -> usize {
        if self.dims() == 1 {
            mi[0]
        } else {
            mi[0] * self.axes[1].n + mi[1]
        }
    }

    /// Physical coordinates of node `idx`; unused components are zero.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let mut p = [0.0; 2];
        for a in 0..self.dims() {
            p[a] = self.coord(a, mi[a]);
        }
        p
    }

    /// Nearest node to a physical point.
    pub fn nearest(&self, p: [f64; 2]) -> usize {
        let mut mi = [0usize; 2];
        for a in 0..self.dims() {
            let ax = &self.axes[a];
            let j = ((p[a] + ax.half_width) / ax.dx).round() as i64;
            mi[a] = j.rem_euclid(ax.n as i64) as usize;
        }
        self.flat_index(mi)
    }

    /// Signed integer mode for FFT slot `k` along `axis`, in `[-n/2, n/2)`.
    pub fn signed_mode(&self, axis: usize, k: usize) -> i64 {
        let n = self.axes[axis].n;
        if k < n / 2 {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    pub fn is_nyquist(&self, axis: usize, k: usize) -> bool {
        k == self.axes[axis].n / 2
    }

    pub fn wavenumber(&self, axis: usize, k: usize) -> f64 {
        std::f64::consts::PI * self.signed_mode(axis, k) as f64 / self.axes[axis].half_width
    }

    /// Wave vector of spectral slot `idx`.
    pub fn xi(&self, idx: usize) -> [f64; 2] {
        let mi = self.multi_index(idx);
        let mut v = [0.0; 2];
        for a in 0..self.dims() {
            v[a] = self.wavenumber(a, mi[a]);
        }
        v
    }

    /// Slot holding the wave vector `-xi(idx)` (modulo the grid).
    pub fn negated_slot(&self, idx: usize) -> usize {
        let mi = self.multi_index(idx);
        let mut out = [0usize; 2];
        for a in 0..self.dims() {
            let n = self.axes[a].n;
            out[a] = (n - mi[a]) % n;
        }
        self.flat_index(out)
    }

    /// `(-1)^(k_0 + k_1)`: phase that recentres the origin at node `n/2`.
    pub fn centre_phase(&self, idx: usize) -> f64 {
        let mi = self.multi_index(idx);
        if (mi[0] + mi[1]) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let d = self.dims();
        let last = &self.axes[d - 1];
        let plan = if inverse { &last.inv } else { &last.fwd };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for row in data.chunks_exact_mut(last.n) {
            plan.process_with_scratch(row, &mut scratch);
        }
        if d == 2 {
            let (n0, n1) = (self.axes[0].n, self.axes[1].n);
            let plan = if inverse { &self.axes[0].inv } else { &self.axes[0].fwd };
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            let mut col = vec![Complex64::new(0.0, 0.0); n0];
            for j in 0..n1 {
                for i in 0..n0 {
                    col[i] = data[i * n1 + j];
                }
                plan.process_with_scratch(&mut col, &mut scratch);
                for i in 0..n0 {
                    data[i * n1 + j] = col[i];
                }
            }
        }
        if inverse {
            let s = 1.0 / self.len() as f64;
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Unnormalized forward DFT of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    /// Normalized inverse DFT; returns the complex result.
    pub fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut spectrum, true);
        spectrum
    }

    /// Normalized inverse DFT keeping the real part.
    pub fn inverse_real(&self, spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse(spectrum).into_iter().map(|c| c.re).collect()
    }

    /// Evaluates `f(xi)` on every spectral slot.
    pub fn spectral_map<F: Fn([f64; 2]) -> Complex64>(&self, f: F) -> Vec<Complex64> {
        (0..self.len()).map(|i| f(self.xi(i))).collect()
    }

    /// Multiplier of `D^beta`, with odd orders zeroed on Nyquist slots so
    /// that real fields map to real fields.
    pub fn derivative_multiplier(&self, beta: &[usize]) -> Result<Vec<Complex64>> {
        let order: usize = beta.iter().sum();
        if order > 4 {
            return Err(Error::UnsupportedOrder(order));
        }
        if beta.len() != self.dims() {
            return Err(Error::InvalidParameter(format!(
                "multi-index has {} entries on a {}-d grid",
                beta.len(),
                self.dims()
            )));
        }
        Ok((0..self.len())
            .map(|idx| {
                let mi = self.multi_index(idx);
                let mut m = Complex64::new(1.0, 0.0);
                for (a, &b) in beta.iter().enumerate() {
                    if b == 0 {
                        continue;
                    }
                    if b % 2 == 1 && self.is_nyquist(a, mi[a]) {
                        return Complex64::new(0.0, 0.0);
                    }
                    let ik = Complex64::new(0.0, self.wavenumber(a, mi[a]));
                    m *= ik.powu(b as u32);
                }
                m
            })
            .collect())
    }

    pub fn same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Real samples on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Field { grid: grid.clone(), values })
    }

    /// Builds a field without the finiteness scan; callers guarantee length.
    pub(crate) fn raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid: grid.clone(), values }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Field::raw(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Field::raw(grid, vec![c; grid.len()])
    }

    pub fn from_fn<F: Fn([f64; 2]) -> f64>(grid: &Grid, f: F) -> Self {
        Field::raw(grid, (0..grid.len()).map(|i| f(grid.point(i))).collect())
    }

    /// Unit-mass grid delta at node `idx`.
    pub fn delta(grid: &Grid, idx: usize) -> Self {
        let mut v = vec![0.0; grid.len()];
        v[idx] = 1.0 / grid.cell();
        Field::raw(grid, v)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn integral(&self) -> f64 {
        self.grid.cell() * self.values.iter().sum::<f64>()
    }

    pub fn l1(&self) -> f64 {
        self.grid.cell() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Quadrature pairing `dx^d * sum f g`.
    pub fn dot(&self, other: &Field) -> f64 {
        debug_assert!(self.grid == other.grid);
        self.grid.cell() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field::raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64>(&self, other: &Field, f: F) -> Field {
        debug_assert!(self.grid == other.grid);
        Field::raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Field) {
        debug_assert!(self.grid == other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn max_diff(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Reflection `x -> -x` on the grid (node `j` maps to `n - j mod n`).
    pub fn reflect(&self) -> Field {
        Field::raw(
            &self.grid,
            (0..self.grid.len()).map(|i| self.values[reflect_index(&self.grid, i)]).collect(),
        )
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.grid.forward(&self.values)
    }

    /// Applies a Fourier multiplier and keeps the real part.
    pub fn apply_multiplier(&self, mult: &[Complex64]) -> Field {
        let mut s = self.spectrum();
        for (a, m) in s.iter_mut().zip(mult) {
            *a *= m;
        }
        Field::raw(&self.grid, self.grid.inverse_real(s))
    }

    pub fn dft_roundtrip(&self) -> Result<Field> {
        if let Some(index) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Field::raw(&self.grid, self.grid.inverse_real(self.spectrum())))
    }

    pub fn spectral_derivative(&self, beta: &[usize]) -> Result<Field> {
        Ok(self.spectral_derivative_with_residue(beta)?.0)
    }

    /// Derivative plus the largest discarded imaginary part.
    pub fn spectral_derivative_with_residue(&self, beta: &[usize]) -> Result<(Field, f64)> {
        let mult = self.grid.derivative_multiplier(beta)?;
        let mut s = self.spectrum();
        for (a, m) in s.iter_mut().zip(&mult) {
            *a *= m;
        }
        let out = self.grid.inverse(s);
        let residue = out.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        Ok((Field::raw(&self.grid, out.into_iter().map(|c| c.re).collect()), residue))
    }

    /// Spectral gradient, one field per axis.
    pub fn gradient(&self) -> Vec<Field> {
        let s = self.spectrum();
        (0..self.grid.dims())
            .map(|a| {
                let mut beta = vec![0; self.grid.dims()];
                beta[a] = 1;
                let mult = self.grid.derivative_multiplier(&beta).expect("order 1");
                let spec: Vec<Complex64> = s.iter().zip(&mult).map(|(x, m)| x * m).collect();
                Field::raw(&self.grid, self.grid.inverse_real(spec))
            })
            .collect()
    }

    /// Share of absolute mass sitting in the outer 10% shell of the box.
    pub fn boundary_mass(&self) -> f64 {
        let total: f64 = self.values.iter().map(|v| v.abs()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let g = &self.grid;
        let mut shell = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let p = g.point(i);
            let outer = (0..g.dims()).any(|a| p[a].abs() >= 0.9 * g.half_width(a));
            if outer {
                shell += v.abs();
            }
        }
        shell / total
    }
}

/// Spectral divergence of a vector field given as one component per axis.
pub fn divergence(components: &[Field]) -> Result<Field> {
    let first = components
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty vector field".into()))?;
    let g = first.grid().clone();
    if components.len() != g.dims() {
        return Err(Error::InvalidParameter("vector field has wrong arity".into()));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); g.len()];
    for (a, c) in components.iter().enumerate() {
        g.same(c.grid())?;
        let mut beta = vec![0; g.dims()];
        beta[a] = 1;
        let mult = g.derivative_multiplier(&beta)?;
        for ((acc, s), m) in acc.iter_mut().zip(c.spectrum()).zip(&mult) {
            *acc += s * m;
        }
    }
    Ok(Field::raw(&g, g.inverse_real(acc)))
}

/// `dx^d`-weighted periodic convolution `(f * g)(x_i) = sum_j f(x_j) g(x_i - x_j) dx^d`.
pub fn periodic_convolve(f: &Field, g: &Field) -> Result<Field> {
    f.grid().same(g.grid())?;
    let grid = f.grid();
    let cell = grid.cell();
    let fs = f.spectrum();
    let gs = g.spectrum();
    let prod: Vec<Complex64> = fs
        .iter()
        .zip(&gs)
        .enumerate()
        .map(|(i, (a, b))| a * b * (cell * grid.centre_phase(i)))
        .collect();
    Ok(Field::raw(grid, grid.inverse_real(prod)))
}

/// Real-space kernel whose Fourier transform is `mult` (origin at node n/2).
pub fn kernel_from_multiplier(grid: &Grid, mult: &[Complex64]) -> Field {
    let inv_cell = 1.0 / grid.cell();
    let spec: Vec<Complex64> =
        mult.iter().enumerate().map(|(i, m)| m * (grid.centre_phase(i) * inv_cell)).collect();
    Field::raw(grid, grid.inverse_real(spec))
}

/// Node holding `-x` for node `i` (the origin is node n/2 on each axis).
pub fn reflect_index(grid: &Grid, i: usize) -> usize {
    let mi = grid.multi_index(i);
    let mut out = [0usize; 2];
    for a in 0..grid.dims() {
        let n = grid.n(a);
        out[a] = (n - mi[a]) % n;
    }
    grid.flat_index(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn gauss(s2: f64) -> impl Fn([f64; 2]) -> f64 {
        move |p| (-p[0] * p[0] / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::line(12, 1.0).is_err());
        assert!(Grid::line(4, 1.0).is_err());
        assert!(Grid::line(16, 0.0).is_err());
        assert!(Grid::new(&[8, 8, 8], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn node_spacing_is_exact() {
        let g = Grid::line(64, 3.0).unwrap();
        assert_eq!(g.dx(0) * 64.0, 6.0);
        assert_eq!(g.coord(0, 32), 0.0);
        assert_eq!(g.wavenumber(0, 32), -PI * 32.0 / 3.0);
    }

    #[test]
    fn roundtrip_constant_cosine_random() {
        let g = Grid::line(64, 2.0).unwrap();
        let one = Field::constant(&g, 1.0);
        assert!(one.dft_roundtrip().unwrap().max_diff(&one) <= 1e-12);
        let c = Field::from_fn(&g, |p| (PI * p[0] / 2.0).cos());
        assert!(c.dft_roundtrip().unwrap().max_diff(&c) <= 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let r = Field::new(&g, (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert!(r.dft_roundtrip().unwrap().max_diff(&r) <= 1e-12);
    }

    #[test]
    fn roundtrip_rejects_nan() {
        let g = Grid::line(8, 1.0).unwrap();
        let mut f = Field::zeros(&g);
        f.values_mut()[3] = f64::NAN;
        assert!(matches!(f.dft_roundtrip(), Err(Error::NonFinite { index: 3 })));
    }

    #[test]
    fn derivative_of_sine() {
        let g = Grid::line(64, 2.0).unwrap();
        let s = Field::from_fn(&g, |p| (PI * p[0] / 2.0).sin());
        let (d, res) = s.spectral_derivative_with_residue(&[1]).unwrap();
        let exact = Field::from_fn(&g, |p| PI / 2.0 * (PI * p[0] / 2.0).cos());
        assert!(d.max_diff(&exact) <= 1e-10);
        assert!(res <= 1e-10);
        let c = Field::constant(&g, 3.0);
        for b in 1..=4 {
            assert!(c.spectral_derivative(&[b]).unwrap().max_abs() <= 1e-12);
        }
        assert!(matches!(c.spectral_derivative(&[5]), Err(Error::UnsupportedOrder(5))));
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        for &n in &[128usize, 256] {
            let g = Grid::line(n, 8.0).unwrap();
            let f = Field::from_fn(&g, gauss(1.0));
            let d2 = f.spectral_derivative(&[2]).unwrap();
            let h = g.dx(0);
            let v = f.values();
            let mut err: f64 = 0.0;
            for i in 1..n - 1 {
                let fd = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
                err = err.max((fd - d2.values()[i]).abs());
            }
            // second-order consistency: error/h^2 bounded by sup|f''''|/12
            assert!(err / (h * h) < 0.1, "n={n} err={err}");
        }
    }

    #[test]
    fn gaussian_convolution_adds_variances() {
        let g = Grid::line(512, 20.0).unwrap();
        let a = Field::from_fn(&g, gauss(0.8));
        let b = Field::from_fn(&g, gauss(1.5));
        let c = periodic_convolve(&a, &b).unwrap();
        let exact = Field::from_fn(&g, gauss(2.3));
        assert!(c.max_diff(&exact) <= 1e-8);
    }

    #[test]
    fn convolution_with_delta_and_commutativity() {
        let g = Grid::line(64, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Field::new(&g, (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let d = Field::delta(&g, 32);
        assert!(periodic_convolve(&f, &d).unwrap().max_diff(&f) <= 1e-12);
        let h = Field::new(&g, (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert_eq!(periodic_convolve(&f, &h).unwrap(), periodic_convolve(&h, &f).unwrap());
        let other = Grid::line(64, 5.0).unwrap();
        assert!(periodic_convolve(&f, &Field::zeros(&other)).is_err());
    }

    #[test]
    fn two_dimensional_transforms() {
        let g = Grid::square(32, 3.0).unwrap();
        let f = Field::from_fn(&g, |p| (PI * p[0] / 3.0).sin() * (2.0 * PI * p[1] / 3.0).cos());
        assert!(f.dft_roundtrip().unwrap().max_diff(&f) <= 1e-12);
        let dy = f.spectral_derivative(&[0, 1]).unwrap();
        let exact = Field::from_fn(&g, |p| {
            -(2.0 * PI / 3.0) * (PI * p[0] / 3.0).sin() * (2.0 * PI * p[1] / 3.0).sin()
        });
        assert!(dy.max_diff(&exact) <= 1e-10);
        let d = Field::delta(&g, g.flat_index([16, 16]));
        assert!(periodic_convolve(&f, &d).unwrap().max_diff(&f) <= 1e-12);
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let g = Grid::square(64, 7.0).unwrap();
        let f = Field::from_fn(&g, |p| (-(p[0] * p[0] + p[1] * p[1])).exp());
        let lap = divergence(&f.gradient()).unwrap();
        let direct =
            f.spectral_derivative(&[2, 0]).unwrap().add(&f.spectral_derivative(&[0, 2]).unwrap());
        assert!(lap.max_diff(&direct) <= 1e-10, "{}", lap.max_diff(&direct));
    }

    #[test]
    fn kernel_from_unit_multiplier_is_delta() {
        let g = Grid::line(16, 1.0).unwrap();
        let k = kernel_from_multiplier(&g, &vec![Complex64::new(1.0, 0.0); 16]);
        assert!(k.max_diff(&Field::delta(&g, 8)) <= 1e-12);
    }

    #[test]
    fn boundary_monitor() {
        let g = Grid::line(64, 10.0).unwrap();
        let inner = Field::from_fn(&g, gauss(1.0));
        assert!(inner.boundary_mass() < 1e-6);
        let edge = Field::delta(&g, 1);
        assert_eq!(edge.boundary_mass(), 1.0);
    }

    fn random_field(seed: u64, g: &Grid) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn parseval(seed in any::<u64>(), log_n in 3usize..8) {
            let n = 1usize << log_n;
            let g = Grid::line(n, 2.5).unwrap();
            let f = random_field(seed, &g);
            let energy = f.dot(&f);
            let spec: f64 = f.spectrum().iter().map(|c| c.norm_sqr()).sum::<f64>()
                * g.cell() / n as f64;
            prop_assert!((energy - spec).abs() <= 1e-12 * energy.max(1e-300));
        }

        #[test]
        fn derivative_commutes_with_convolution(seed in any::<u64>()) {
            let g = Grid::line(64, 3.0).unwrap();
            let f = random_field(seed, &g);
            let h = Field::from_fn(&g, gauss(0.3));
            let lhs = periodic_convolve(&f, &h).unwrap().spectral_derivative(&[1]).unwrap();
            let rhs = periodic_convolve(&f.spectral_derivative(&[1]).unwrap(), &h).unwrap();
            prop_assert!(lhs.max_diff(&rhs) <= 1e-10);
        }

        #[test]
        fn roundtrip_random(seed in any::<u64>()) {
            let g = Grid::square(16, 1.0).unwrap();
            let f = random_field(seed, &g);
            prop_assert!(f.dft_roundtrip().unwrap().max_diff(&f) <= 1e-12);
        }
    }
}
