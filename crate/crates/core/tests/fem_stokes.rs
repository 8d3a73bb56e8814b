mod common;

use homog_core::closed_form::{rotation, AnnulusSpec};
use homog_core::fem_stokes::*;
use homog_core::homog_lab::scenarios::{manufactured, Settings};
use homog_core::mesh::{disk_cell, perforated_lattice, periodic_cell, structured_square, GradingSpec, PointLocator};
use homog_core::quadrature::QuadPoint;
use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;

fn opts() -> StokesOptions {
    StokesOptions::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn perturbed_solves_satisfy_the_identities(n in 3usize..10, a in -30.0..30.0f64, k in 1.0..30.0f64, c in -2.0..2.0f64) {
        let mesh = structured_square(n, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let v = move |q: &QuadPoint| [a * (k * q.x[1]).cos(), c * q.x[0] * q.x[1]];
        let f = move |q: &QuadPoint| [1.0 - q.x[1] + c, (k * q.x[0]).sin()];
        let sol = solve_perturbed(&mesh, DriftSpec::Smooth(&v), &f, &opts()).unwrap();
        prop_assert!(sol.energy_residual <= 1e-8, "{}", sol.energy_residual);
        prop_assert!(sol.divergence_residual <= 1e-8);
        prop_assert!(sol.field.pressure_mean().abs() <= 1e-10);
    }

    #[test]
    fn drift_blocks_are_exactly_skew(n in 2usize..8, a in -30.0..30.0f64, k in 1.0..30.0f64, frac in 0.01..0.5f64) {
        let mesh = structured_square(n, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let v = move |q: &QuadPoint| [a * (k * q.x[1]).cos(), q.x[0] * (k * q.x[0]).sin()];
        let mut problem = StokesProblem::new(VelocityBc::NoSlip);
        problem.drift = DriftSpec::Smooth(&v);
        let sys = assemble_stokes(&mesh, &problem).unwrap();
        prop_assert!(sys.drift.max_abs() > 0.0);
        for (i, j, x) in sys.drift.triplets() {
            prop_assert_eq!(x, -sys.drift.get(j, i));
        }
        let ann = AnnulusSpec::new(0.8, 0.8 * frac).unwrap();
        let lattice = perforated_lattice([0.0, 0.0], [1.0, 1.0], 0.5, &ann, 1.0, &GradingSpec { layers: 200, ratio: 1.5, target_h: 0.3 }).unwrap();
        let mut problem = StokesProblem::new(VelocityBc::NoSlip);
        problem.drift = DriftSpec::concentrated_for(&lattice).unwrap();
        let sys = assemble_stokes(&lattice, &problem).unwrap();
        prop_assert!(sys.drift.max_abs() > 0.0);
        for (i, j, x) in sys.drift.triplets() {
            prop_assert_eq!(x, -sys.drift.get(j, i));
        }
    }

    #[test]
    fn brinkman_family_matches_direct_assembly(g00 in -5.0..5.0f64, g01 in -5.0..5.0f64, g10 in -5.0..5.0f64, g11 in 0.0..5.0f64) {
        let mesh = structured_square(6, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let f = |q: &QuadPoint| [q.x[1] - 0.5, 0.5 - q.x[0] + q.x[0] * q.x[1]];
        let family = BrinkmanFamily::new(&mesh, 0.25, &f, Matrix2::new(1.0, 0.0, 0.0, 1.0), &opts()).unwrap();
        let g = Matrix2::new(g00, g01, g10, g11);
        let a = family.solve(&g).unwrap();
        let b = solve_brinkman(&mesh, 0.25, g, &f, &opts()).unwrap();
        let flat = |s: &StokesSolution| s.field.velocity.iter().flat_map(|u| *u).collect::<Vec<f64>>();
        prop_assert!(common::max_abs_diff(&flat(&a), &flat(&b)) <= 1e-10);
        prop_assert!((a.energy_residual - b.energy_residual).abs() <= 1e-10);
    }
}

#[test]
fn taylor_hood_orders() {
    let settings = Settings::default();
    let ns = [4usize, 8, 16, 32];
    let (mut h, mut ev, mut eh, mut ep) = (vec![], vec![], vec![], vec![]);
    for &n in &ns {
        let o = manufactured("mms", n, &settings).unwrap();
        assert!(o.row.energy_residual.unwrap() <= 1e-8);
        assert!(o.extras["divergence_residual"] <= 1e-8);
        h.push(1.0 / n as f64);
        ev.push(o.row.err_velocity.unwrap());
        eh.push(o.extras["err_velocity_h1"]);
        ep.push(o.row.err_pressure.unwrap());
    }
    assert!(common::observed_order(&h, &ev) >= 2.7, "{ev:?}");
    assert!(common::observed_order(&h, &eh) >= 1.9, "{eh:?}");
    assert!(common::observed_order(&h, &ep) >= 1.9, "{ep:?}");
}

#[test]
fn concentrated_drift_on_a_lattice() {
    let ann = AnnulusSpec::new(0.8, 0.05).unwrap();
    let g = GradingSpec { layers: 200, ratio: 1.4, target_h: 0.2 };
    let mesh = perforated_lattice([0.0, 0.0], [1.0, 1.0], 0.5, &ann, 1.0, &g).unwrap();
    let drift = DriftSpec::concentrated_for(&mesh).unwrap();
    let f = |q: &QuadPoint| [(3.0 * q.x[1]).sin() + q.x[0], q.x[0] * q.x[1] - 0.2];
    let sol = solve_perturbed(&mesh, drift, &f, &opts()).unwrap();
    assert!(sol.energy_residual <= 1e-8, "{}", sol.energy_residual);
    assert!(sol.divergence_residual <= 1e-8);
    assert!(DriftSpec::concentrated_for(&structured_square(4, [0.0, 0.0], [1.0, 1.0], false).unwrap()).is_err());
}

#[test]
fn quarter_turn_equivariance() {
    // The lattice is invariant under the quarter turn about its centre and J commutes with J.
    let ann = AnnulusSpec::new(0.8, 0.05).unwrap();
    let g = GradingSpec { layers: 200, ratio: 1.4, target_h: 0.2 };
    let mesh = perforated_lattice([0.0, 0.0], [1.0, 1.0], 0.5, &ann, 1.0, &g).unwrap();
    let drift = DriftSpec::concentrated_for(&mesh).unwrap();
    let c = 0.5;
    // R^{-1} (x - c) + c, the preimage under the quarter turn.
    let back = move |x: [f64; 2]| [c + (x[1] - c), c - (x[0] - c)];
    let f0 = |x: [f64; 2]| [(3.0 * x[1]).sin() + x[0] * x[0], x[0] * x[1] - 0.2];
    let f = |q: &QuadPoint| f0(q.x);
    let f_rot = |q: &QuadPoint| {
        let v = f0(back(q.x));
        [-v[1], v[0]]
    };
    let u = solve_perturbed(&mesh, drift, &f, &opts()).unwrap();
    let u_rot = solve_perturbed(&mesh, drift, &f_rot, &opts()).unwrap();
    let loc = PointLocator::new(&mesh);
    let scale = u.field.velocity.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for (i, x) in mesh.vertices.iter().enumerate() {
        let (t, l) = loc.locate(back(*x)).unwrap();
        let v = u.field.velocity_at(t, &l);
        let want = [-v[1], v[0]];
        let got = u_rot.field.velocity[i];
        worst = worst.max((want[0] - got[0]).hypot(want[1] - got[1]));
    }
    assert!(worst <= 1e-6 * scale, "{worst:e} vs {scale:e}");
}

#[test]
fn annulus_cell_matches_the_exact_energy() {
    let g = GradingSpec { layers: 400, ratio: 1.2, target_h: 0.05 };
    for r in [0.2, 0.05] {
        let mesh = disk_cell(1.0, &g, Some(r)).unwrap();
        let (sol, gamma) = solve_cell_v(&mesh, 0, &opts()).unwrap();
        let exact = common::annulus_v_energy(r);
        assert!((gamma / exact - 1.0).abs() <= 2e-3, "r={r}: {gamma} vs {exact}");
        assert!(sol.divergence_residual <= 1e-8);
        let (_, gamma_y) = solve_cell_v(&mesh, 1, &opts()).unwrap();
        assert!((gamma_y / gamma - 1.0).abs() <= 1e-3);
    }
    assert!(solve_cell_v(&disk_cell(1.0, &g, Some(0.2)).unwrap(), 2, &opts()).is_err());
}

#[test]
fn periodic_cell_energy_equals_forcing() {
    let ann = AnnulusSpec::new(0.8, 0.05).unwrap();
    let mesh = periodic_cell(&ann, 1.0, &GradingSpec { layers: 200, ratio: 1.3, target_h: 0.1 }).unwrap();
    for (eps, theta) in [(1.0, 0.0), (0.5, 1.0), (0.25, 2.5)] {
        let lambda = Vector2::new(f64::cos(theta), f64::sin(theta));
        let w = solve_cell_wsharp(&mesh, eps, lambda, &opts()).unwrap();
        assert!((w.energy - w.forcing).abs() <= 1e-10 * w.energy.abs(), "{} vs {}", w.energy, w.forcing);
        assert!(w.forcing > 0.0);
        // M is quadratic: the quarter-turned lambda gives the same value.
        let w2 = solve_cell_wsharp(&mesh, eps, rotation() * lambda, &opts()).unwrap();
        assert!((w2.m_quadratic / w.m_quadratic - 1.0).abs() <= 1e-8);
    }
    assert!(solve_cell_wsharp(&structured_square(4, [0.0, 0.0], [1.0, 1.0], false).unwrap(), 1.0, Vector2::x(), &opts()).is_err());
}
