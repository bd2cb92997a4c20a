//! Backward Hamilton–Jacobi solver `-u_t - L u + H(x, u, Du) = f`, `u(T) = g`.
//!
//! The equation is integrated forward in reversed time `s = T - t`, where it
//! reads `v_s = L v + f - H(x, v, Dv)`. Trajectories are indexed in physical time.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::hamiltonian::{self, Hamiltonian};
use crate::heat_kernel::KernelCache;
use crate::stepping::{check_budget, integrate, StepOptions, TimeGrid, Trajectory, VectorTrajectory};

/// Running source `f(t, x)`.
#[derive(Clone, Debug, Default)]
pub enum Source {
    #[default]
    Zero,
    Constant(Field),
    Slices(Trajectory),
}

impl Source {
    pub fn at(&self, k: usize) -> Option<&Field> {
        match self {
            Source::Zero => None,
            Source::Constant(f) => Some(f),
            Source::Slices(t) => t.slices.get(k),
        }
    }

    fn check(&self, time: &TimeGrid) -> Result<()> {
        if let Source::Slices(t) = self {
            if t.slices.len() != time.steps + 1 {
                return Err(Error::InvalidParameter(format!(
                    "source has {} slices, time grid needs {}",
                    t.slices.len(),
                    time.steps + 1
                )));
            }
        }
        Ok(())
    }
}

/// Generic backward solve: `forcing(k, u_k)` is the right-hand side
/// `f - H` at physical slice `k`.
pub fn solve_backward<N>(
    kernel: &KernelCache,
    terminal: &Field,
    time: &TimeGrid,
    opts: &StepOptions,
    forcing: N,
) -> Result<Trajectory>
where
    N: Fn(usize, &Field) -> Result<Field>,
{
    kernel.grid().same(terminal.grid())?;
    if let Some(index) = terminal.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    check_budget(kernel, time, opts)?;
    let n = time.steps;
    let mut states = integrate(kernel, false, terminal, n, opts, |j, v| forcing(n - j, v)).map_err(
        |e| match e {
            Error::Divergence { slice, reason } => Error::Divergence { slice: n - slice, reason },
            e => e,
        },
    )?;
    states.reverse();
    Trajectory::new(*time, states)
}

pub fn solve_hjb(
    kernel: &KernelCache,
    h: &dyn Hamiltonian,
    source: &Source,
    terminal: &Field,
    time: &TimeGrid,
    opts: &StepOptions,
) -> Result<Trajectory> {
    source.check(time)?;
    solve_backward(kernel, terminal, time, opts, |k, v| {
        let grad = v.gradient();
        let mut rhs = hamiltonian::eval_field(h, v, &grad).scale(-1.0);
        if let Some(f) = source.at(k) {
            rhs.axpy(1.0, f);
        }
        Ok(rhs)
    })
}

/// `-z_t - L z + V . Dz = source`, `z(T) = terminal`.
pub fn solve_linear_backward(
    kernel: &KernelCache,
    drift: &VectorTrajectory,
    source: &Source,
    terminal: &Field,
    time: &TimeGrid,
    opts: &StepOptions,
) -> Result<Trajectory> {
    source.check(time)?;
    if drift.slices.len() != time.steps + 1 {
        return Err(Error::InvalidParameter("drift trajectory length mismatch".into()));
    }
    solve_backward(kernel, terminal, time, opts, |k, v| {
        let grad = v.gradient();
        let mut rhs = match source.at(k) {
            Some(f) => f.clone(),
            None => Field::zeros(v.grid()),
        };
        for (vc, dc) in drift.slices[k].iter().zip(&grad) {
            rhs = rhs.sub(&vc.mul(dc));
        }
        Ok(rhs)
    })
}

/// Largest spectral coefficient in the top fifth of the band, relative to the peak.
pub fn spectral_tail(f: &Field) -> f64 {
    let g = f.grid();
    let s = f.spectrum();
    let peak = s.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let mut tail = 0.0f64;
    for (i, c) in s.iter().enumerate() {
        let mi = g.multi_index(i);
        let high = (0..g.dims()).any(|a| {
            let k = g.signed_mode(a, mi[a]).unsigned_abs() as f64;
            k > 0.8 * (g.n(a) / 2) as f64
        });
        if high {
            tail = tail.max(c.norm());
        }
    }
    tail / peak
}

/// Warning text when `f` carries more than `tol` relative energy near Nyquist.
pub fn resolution_warning(f: &Field, tol: f64) -> Option<String> {
    let tail = spectral_tail(f);
    (tail > tol).then(|| format!("terminal data under-resolved: spectral tail {tail:.2e} > {tol:.0e}"))
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientReport {
    /// Per slice: sup norms of `u`, `Du`, `D^2u`, `D^3u`.
    pub per_slice: Vec<[f64; 4]>,
    pub sup: [f64; 4],
    pub sup_c1: f64,
}

fn multi_indices(dims: usize, order: usize) -> Vec<Vec<usize>> {
    if dims == 1 {
        return vec![vec![order]];
    }
    (0..=order).map(|a| vec![a, order - a]).collect()
}

pub fn gradient_bound_report(u: &Trajectory) -> Result<GradientReport> {
    let d = u.grid().dims();
    let mut per_slice = Vec::with_capacity(u.len());
    for s in &u.slices {
        let mut row = [s.max_abs(), 0.0, 0.0, 0.0];
        for (order, slot) in row.iter_mut().enumerate().skip(1) {
            for beta in multi_indices(d, order) {
                *slot = slot.max(s.spectral_derivative(&beta)?.max_abs());
            }
        }
        per_slice.push(row);
    }
    let mut sup = [0.0f64; 4];
    for row in &per_slice {
        for (a, b) in sup.iter_mut().zip(row) {
            *a = a.max(*b);
        }
    }
    let sup_c1 = per_slice.iter().map(|r| r[0] + r[1]).fold(0.0, f64::max);
    Ok(GradientReport { per_slice, sup, sup_c1 })
}
