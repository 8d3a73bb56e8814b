mod common;

use std::f64::consts::PI;

use homog_core::closed_form::{scalar_radius, z_profile, AnnulusSpec};
use homog_core::fem_scalar::*;
use homog_core::homog_lab::energy_identity_residual;
use homog_core::mesh::{disk_cell, structured_square, GradingSpec, Mesh};
use homog_core::quadrature::QuadPoint;
use proptest::prelude::*;

fn unit(n: usize) -> Mesh {
    structured_square(n, [0.0, 0.0], [1.0, 1.0], false).unwrap()
}

fn direct() -> ScalarOptions {
    ScalarOptions { direct: true, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn drift_matrix_is_exactly_skew(n in 2usize..10, a in -5.0..5.0f64, k in 0.5..20.0f64, periodic in any::<bool>()) {
        let mesh = structured_square(n, [0.0, 0.0], [1.0, 1.0], periodic).unwrap();
        let b = move |q: &QuadPoint| [a * (k * q.x[1]).cos() + q.x[0] * q.x[1], (k * q.x[0]).sin() - a * q.x[1]];
        for bc in [ScalarBc::Dirichlet, ScalarBc::Neumann, if periodic { ScalarBc::Periodic } else { ScalarBc::Dirichlet }] {
            let forms = assemble_scalar_forms(&mesh, None, Some(&b), None, bc, &AssemblyOptions::default()).unwrap();
            for (i, j, v) in forms.drift.triplets() {
                prop_assert_eq!(v, -forms.drift.get(j, i));
            }
        }
    }

    #[test]
    fn drift_solves_satisfy_the_energy_identity(n in 4usize..24, a in -20.0..20.0f64, k in 1.0..40.0f64, c in -3.0..3.0f64) {
        let mesh = unit(n);
        let b = move |q: &QuadPoint| [a * (k * q.x[1]).cos(), a * q.x[0] * (k * q.x[0]).sin()];
        let f = move |q: &QuadPoint| 1.0 + c * q.x[0] - q.x[1] * q.x[1];
        for opts in [ScalarOptions::default(), direct()] {
            let sol = solve_drift(&mesh, &b, &f, &opts).unwrap();
            prop_assert!(sol.energy_residual <= 1e-8, "{}", sol.energy_residual);
        }
    }

    #[test]
    fn lumped_potential_problem_keeps_sign(n in 3usize..20, v0 in 0.0..1e4f64, k in 1.0..30.0f64, g0 in 0.0..5.0f64) {
        let mesh = unit(n);
        let v = move |q: &QuadPoint| v0 * (k * q.x[0]).sin().powi(2) * (q.x[1] + 0.1);
        let g = move |q: &QuadPoint| g0 * (k * q.x[1]).cos().abs() + if q.x[0] > 0.5 { 1.0 } else { 0.0 };
        let opts = ScalarOptions { assembly: AssemblyOptions { lumped_mass: true, annulus_rule: false }, ..direct() };
        let sol = solve_potential(&mesh, &v, &g, &opts).unwrap();
        prop_assert!(sol.field.values.iter().all(|&x| x >= -1e-12));
    }
}

#[test]
fn symmetrized_drift_breaks_the_energy_identity() {
    let mesh = unit(16);
    let b = |q: &QuadPoint| [10.0 * q.x[0] * q.x[0], 5.0 * q.x[1]];
    let div_b = |q: &QuadPoint| 20.0 * q.x[0] + 5.0;
    let f = |_: &QuadPoint| 1.0;
    let opts = AssemblyOptions::default();
    let forms = assemble_scalar_forms(&mesh, Some(&div_b), Some(&b), Some(&f), ScalarBc::Dirichlet, &opts).unwrap();
    // `int (b . grad u) v` alone, whose symmetric part is `-(1/2) int div(b) u v`.
    let one_sided = forms.drift.add(0.5, &forms.mass, -0.5);
    let broken = forms.stiffness.add(1.0, &one_sided, 2.0);
    let (u, _) = homog_core::sparse_la::solve_direct(&broken, &forms.load).unwrap();
    assert!(energy_identity_residual(&forms.stiffness, &forms.load, &u) > 1e-3);
    let good = forms.stiffness.add(1.0, &forms.drift, 1.0);
    let (u, _) = homog_core::sparse_la::solve_direct(&good, &forms.load).unwrap();
    assert!(energy_identity_residual(&forms.stiffness, &forms.load, &u) <= 1e-12);
}

#[test]
fn manufactured_drift_problem_is_second_order() {
    // u = sin(pi x) sin(pi y), b = (1 + y, x^2): f = 2 pi^2 u + 2 b . grad u + div(b) u.
    let exact = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let b = |q: &QuadPoint| [1.0 + q.x[1], q.x[0] * q.x[0]];
    let f = |q: &QuadPoint| {
        let (s0, s1, c0, c1) = ((PI * q.x[0]).sin(), (PI * q.x[1]).sin(), (PI * q.x[0]).cos(), (PI * q.x[1]).cos());
        let [b0, b1] = [1.0 + q.x[1], q.x[0] * q.x[0]];
        2.0 * PI * PI * s0 * s1 + 2.0 * PI * (b0 * c0 * s1 + b1 * s0 * c1)
    };
    let ns = [8usize, 16, 32, 64];
    let mut errs = Vec::new();
    for &n in &ns {
        let mesh = unit(n);
        let sol = solve_drift(&mesh, &b, &f, &ScalarOptions::default()).unwrap();
        assert!(sol.energy_residual <= 1e-8);
        errs.push(sol.field.l2_error(exact));
    }
    let h: Vec<f64> = ns.iter().map(|&n| 1.0 / n as f64).collect();
    assert!(common::observed_order(&h, &errs) >= 1.9, "{errs:?}");
    for w in errs.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
    }
}

#[test]
fn cell_problem_matches_the_radial_profile_at_second_order() {
    let (mu, eps) = (50.0, 0.125);
    let r = scalar_radius(mu, eps, 0.4).unwrap();
    let ann = AnnulusSpec::new(0.4, r).unwrap();
    let z = z_profile(eps, &ann).unwrap();
    let mut mesh = disk_cell(0.4, &GradingSpec { layers: 400, ratio: 1.6, target_h: 0.1 }, Some(r)).unwrap();
    let mut errs = Vec::new();
    for _ in 0..3 {
        let sol = solve_z_cell(&mesh, eps, &ann, &direct()).unwrap();
        assert!(sol.energy_residual <= 1e-8);
        let e = mesh
            .vertices
            .iter()
            .zip(&sol.field.values)
            .map(|(p, v)| (v - z.value(p[0].hypot(p[1]))).abs())
            .fold(0.0, f64::max);
        errs.push(e);
        mesh = mesh.refine_uniform().unwrap();
    }
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 3.5, "{errs:?}");
    }
    let scale = z.value(0.4).abs();
    assert!(errs[2] <= 1e-3 * scale, "{errs:?}");
}

#[test]
fn periodic_potential_problem_integrates_the_source() {
    let mesh = structured_square(12, [0.0, 0.0], [1.0, 1.0], true).unwrap();
    let one = |_: &QuadPoint| 1.0;
    let g = |q: &QuadPoint| 1.0 + (2.0 * PI * q.x[0]).sin();
    let forms = assemble_scalar_forms(&mesh, Some(&one), None, Some(&g), ScalarBc::Periodic, &AssemblyOptions::default()).unwrap();
    let a = forms.stiffness.add(1.0, &forms.mass, 1.0);
    let (x, _) = homog_core::sparse_la::solve_direct(&a, &forms.load).unwrap();
    let field = ScalarField::new(&mesh, forms.dofs.scatter(&x));
    // The constant mode sees the mean of g.
    assert!((field.integral() - 1.0).abs() < 1e-12);
    for &(s, m) in &mesh.periodic_pairs {
        assert_eq!(field.values[s], field.values[m]);
    }
}
