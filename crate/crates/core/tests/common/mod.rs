#![allow(dead_code)]

use std::sync::Arc;

use levy_mfg::coupling::{profile, Coupling};
use levy_mfg::grid::{Field, Grid};
use levy_mfg::hamiltonian::Quadratic;
use levy_mfg::heat_kernel::KernelCache;
use levy_mfg::levy::LevyTriplet;
use levy_mfg::measure::Measure;
use levy_mfg::mfg::{InitialGuess, IterationOptions, MfgProblem};
use levy_mfg::stepping::{StepOptions, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense single-phase simplex for `max c.x` s.t. `A x <= b`, `x >= 0`, `b >= 0` (Bland's rule).
pub fn simplex(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
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

/// d0 of a zero-mass density as the LP over `psi = phi + 1 in [0, 2]` with every pairwise Lipschitz constraint.
pub fn dense_lp(g: &Grid, w: &Field) -> f64 {
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

pub fn random_density(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
    let f = Field::new(g, (0..g.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let m = f.integral();
    f.scale(1.0 / m)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `u(t) = -log(K_{T-t} * exp(-g))` for `H = |p|^2`, `L = Laplacian`.
pub fn cole_hopf(k: &KernelCache, g: &Field, tau: f64) -> Field {
    k.apply(tau, &g.map(|v| (-v).exp())).unwrap().map(|w| -w.ln())
}

pub fn gaussian(grid: &Grid, centre: f64, sigma: f64) -> Measure {
    Measure::gaussian_mixture(grid, &[(1.0, [centre, 0.0], sigma)]).unwrap()
}

/// Convolution-coupled game on `[0, 1/2]` with `H = |p|^2` and the order-1.5 fractional Laplacian.
pub fn conv_game(n: usize, steps: usize, tol: f64) -> MfgProblem {
    let grid = Grid::line(n, 4.0).unwrap();
    let time = TimeGrid::new(0.0, 0.5, steps).unwrap();
    let triplet = LevyTriplet::fractional(1, 1.5).unwrap();
    let c = |s: &str| Coupling::Conv { phi: profile(&grid, s).unwrap() };
    MfgProblem {
        kernel: KernelCache::new(&grid, &triplet, time.dt()).unwrap(),
        hamiltonian: Arc::new(Quadratic::default()),
        f: c("gauss(0.5)"),
        g: c("gauss(0.7)"),
        m0: gaussian(&grid, 0.2, 0.4),
        time,
        iteration: IterationOptions { tol_d0: tol, max_iters: 200, ..Default::default() },
        step: StepOptions::default(),
        initial: InitialGuess::Frozen,
    }
}

pub fn decoupled(mut p: MfgProblem) -> MfgProblem {
    p.f = Coupling::Zero;
    p.g = Coupling::Zero;
    p
}
