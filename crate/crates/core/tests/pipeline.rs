#![allow(dead_code)]

mod common;

use common::*;
use levy_mfg::grid::{Field, Grid};
use levy_mfg::io::{read_fields, write_fields};
use levy_mfg::master::flow_consistency;
use levy_mfg::measure::d0_distance;
use levy_mfg::mfg::{lasry_lions_check, solve_mfg};
use proptest::prelude::*;

#[test]
fn trajectory_roundtrips_through_binary_file() {
    let p = conv_game(64, 32, 1e-8);
    let sol = solve_mfg(&p).unwrap();
    let mut buf = vec![];
    write_fields(&mut buf, &sol.m.slices.iter().collect::<Vec<_>>()).unwrap();
    let back = read_fields(&mut buf.as_slice()).unwrap();
    assert_eq!(back.len(), sol.m.len());
    for (a, b) in back.iter().zip(&sol.m.slices) {
        assert_eq!(a.values(), b.values());
    }
}

#[test]
fn decoupled_game_is_a_heat_flow() {
    let p = decoupled(conv_game(64, 32, 1e-8));
    let sol = solve_mfg(&p).unwrap();
    assert_eq!(sol.iterations, 1);
    assert_eq!(sol.gaps, vec![0.0]);
    assert!(sol.u.slices.iter().all(|s| s.max_abs() == 0.0));
    let expect = p.kernel.apply_adjoint(p.time.t_end, p.m0.density()).unwrap();
    assert!(sol.m.last().max_diff(&expect) < 1e-10);
}

#[test]
fn restart_and_energy_identity() {
    let p = conv_game(64, 32, 1e-10);
    let flow = flow_consistency(&p, 0.0, &p.m0, 0.25).unwrap();
    assert!(flow.pass, "restart gap {}", flow.gap);
    let defect = |steps: usize| {
        let p = conv_game(64, steps, 1e-10);
        let a = solve_mfg(&p).unwrap();
        let mut q = p.clone();
        q.m0 = gaussian(p.kernel.grid(), -0.3, 0.4);
        let b = solve_mfg(&q).unwrap();
        let r = lasry_lions_check(&p, &a, &b).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.identity_defect <= 1e-3 * r.rhs, "{r:?}");
        r.identity_defect
    };
    let (coarse, fine) = (defect(32), defect(64));
    assert!(coarse / fine >= 2.0, "energy identity defect {coarse:.3e} -> {fine:.3e}");
}

fn pair(seed: u64) -> (Field, Field, Field) {
    let g = Grid::line(32, 2.0).unwrap();
    let mut r = rng(seed);
    (random_density(&g, &mut r), random_density(&g, &mut r), random_density(&g, &mut r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn d0_is_a_metric(seed in 0u64..10_000) {
        let (a, b, c) = pair(seed);
        let ab = d0_distance(&a, &b).unwrap();
        let ba = d0_distance(&b, &a).unwrap();
        let ac = d0_distance(&a, &c).unwrap();
        let cb = d0_distance(&c, &b).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert!(d0_distance(&a, &a).unwrap().abs() <= 1e-14);
        prop_assert!((ab - dense_lp(a.grid(), &b.sub(&a))).abs() <= 1e-9);
    }
}
