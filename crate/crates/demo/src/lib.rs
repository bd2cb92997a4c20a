//! Browser bindings: heat-kernel profiles, a small coupled game and the
//! monotonicity validators. Everything runs single-threaded on a 1D grid.

use std::sync::Arc;

use levy_mfg::coupling::{check_m1, check_m2, profile, Coupling, DerivativeVersion};
use levy_mfg::grid::Grid;
use levy_mfg::hamiltonian::Quadratic;
use levy_mfg::heat_kernel::KernelCache;
use levy_mfg::levy::LevyTriplet;
use levy_mfg::measure::{mollify, Measure};
use levy_mfg::mfg::{solve_mfg, IterationOptions, MfgProblem};
use levy_mfg::stepping::{StepOptions, TimeGrid};
use wasm_bindgen::prelude::*;

const MAX_NODES: usize = 512;

fn js(e: levy_mfg::error::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn grid(n: usize, half_width: f64) -> Result<Grid, JsError> {
    if n > MAX_NODES {
        return Err(JsError::new(&format!("at most {MAX_NODES} nodes in the browser")));
    }
    Grid::line(n, half_width).map_err(js)
}

fn abscissa(g: &Grid) -> Vec<f64> {
    (0..g.n(0)).map(|j| g.coord(0, j)).collect()
}

#[wasm_bindgen]
pub struct KernelView {
    x: Vec<f64>,
    values: Vec<f64>,
    mass: f64,
    min: f64,
}

#[wasm_bindgen]
impl KernelView {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn mass(&self) -> f64 {
        self.mass
    }
    #[wasm_bindgen(getter)]
    pub fn min(&self) -> f64 {
        self.min
    }
}

/// Heat kernel `K_t` of a catalog operator, e.g. `frac{1.5}` or `cgmy{1,5,5,1.5}`.
#[wasm_bindgen]
pub fn kernel_profile(operator: &str, t: f64, n: usize, half_width: f64) -> Result<KernelView, JsError> {
    let g = grid(n, half_width)?;
    let triplet = LevyTriplet::from_catalog(operator, 1).map_err(js)?;
    let k = KernelCache::new(&g, &triplet, t).map_err(js)?.kernel_field(t).map_err(js)?;
    Ok(KernelView { x: abscissa(&g), mass: k.integral(), min: k.min(), values: k.into_values() })
}

#[wasm_bindgen]
pub struct GameView {
    x: Vec<f64>,
    m_initial: Vec<f64>,
    m_final: Vec<f64>,
    u_initial: Vec<f64>,
    gaps: Vec<f64>,
    converged: bool,
}

#[wasm_bindgen]
impl GameView {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn m_initial(&self) -> Vec<f64> {
        self.m_initial.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn m_final(&self) -> Vec<f64> {
        self.m_final.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn u_initial(&self) -> Vec<f64> {
        self.u_initial.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn gaps(&self) -> Vec<f64> {
        self.gaps.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }
}

/// Crowd-averse game with `F = G = gauss(width) * m` and fractional order `alpha`.
#[wasm_bindgen]
pub fn solve_game(alpha: f64, width: f64, centre: f64, horizon: f64) -> Result<GameView, JsError> {
    let g = grid(64, 4.0)?;
    let time = TimeGrid::new(0.0, horizon, (64.0 * horizon).ceil() as usize).map_err(js)?;
    let triplet = LevyTriplet::fractional(1, alpha).map_err(js)?;
    let phi = profile(&g, &format!("gauss({width})")).map_err(js)?;
    let m0 = Measure::gaussian_mixture(&g, &[(1.0, [centre, 0.0], 0.4)]).map_err(js)?;
    let problem = MfgProblem {
        kernel: KernelCache::new(&g, &triplet, time.dt()).map_err(js)?,
        hamiltonian: Arc::new(Quadratic::default()),
        f: Coupling::Conv { phi: phi.clone() },
        g: Coupling::Conv { phi },
        m0,
        time,
        iteration: IterationOptions { max_iters: 100, ..IterationOptions::default() },
        step: StepOptions::default(),
        initial: Default::default(),
    };
    let sol = solve_mfg(&problem).map_err(js)?;
    Ok(GameView {
        x: abscissa(&g),
        m_initial: sol.m.first().values().to_vec(),
        m_final: sol.m.last().values().to_vec(),
        u_initial: sol.u.first().values().to_vec(),
        gaps: sol.gaps.clone(),
        converged: sol.converged,
    })
}

#[wasm_bindgen]
pub struct MonotoneView {
    m1_min: f64,
    m1_max_abs: f64,
    m2_min_eig: f64,
    positive_definite: bool,
}

#[wasm_bindgen]
impl MonotoneView {
    #[wasm_bindgen(getter)]
    pub fn m1_min(&self) -> f64 {
        self.m1_min
    }
    #[wasm_bindgen(getter)]
    pub fn m1_max_abs(&self) -> f64 {
        self.m1_max_abs
    }
    #[wasm_bindgen(getter)]
    pub fn m2_min_eig(&self) -> f64 {
        self.m2_min_eig
    }
    #[wasm_bindgen(getter)]
    pub fn positive_definite(&self) -> bool {
        self.positive_definite
    }
}

/// (M1) and (M2) for `F = phi * m`, with `phi` given as `gauss(s)`, `odd(s)` or `bump(r)`.
#[wasm_bindgen]
pub fn monotonicity(phi: &str, normalized: bool, seed: u32) -> Result<MonotoneView, JsError> {
    let g = grid(64, 4.0)?;
    let c = Coupling::Conv { phi: profile(&g, phi).map_err(js)? };
    let m1 = check_m1(&c, &g, 30, seed as u64).map_err(js)?;
    let at = mollify(&Measure::dirac(&g, [0.0, 0.0]), 2.0 * g.dx(0)).map_err(js)?;
    let version = if normalized { DerivativeVersion::Normalized } else { DerivativeVersion::Raw };
    let m2 = check_m2(&c, at.density(), version).map_err(js)?;
    Ok(MonotoneView {
        m1_min: m1.min_value,
        m1_max_abs: m1.max_abs,
        m2_min_eig: m2.min_eig,
        positive_definite: c.is_positive_definite(),
    })
}
