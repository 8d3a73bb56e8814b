mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use homog_core::closed_form::*;
use homog_core::quadrature::gauss_legendre;
use nalgebra::Vector2;
use proptest::prelude::*;

fn annulus() -> impl Strategy<Value = AnnulusSpec> {
    (0.1..0.49f64, 1e-8..0.5f64).prop_map(|(outer, frac)| AnnulusSpec::new(outer, outer * frac).unwrap())
}

proptest! {
    #[test]
    fn scalar_constants(mu in 1e-3..1e4f64) {
        prop_assert!((gamma_scalar(mu) / mu - 0.57122).abs() <= 1e-4);
        prop_assert!((zbar_limit(mu) * gamma_scalar(mu) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn energy_gap(gamma in 1e-3..1e3f64, theta in 0.0..2.0 * PI, len in 1e-3..1e3f64) {
        let l = Vector2::new(theta.cos(), theta.sin()) * len;
        let g = brinkman_matrix(gamma).dot(&(l * l.transpose()));
        let m = tartar_matrix(gamma).dot(&(l * l.transpose()));
        prop_assert!(g < m);
        let want = gamma * gamma / (gamma * gamma + 1.0);
        prop_assert!((g / m - want).abs() <= 1e-12);
    }

    #[test]
    fn brinkman_splits_into_symmetric_and_rotation(gamma in 1e-3..1e3f64) {
        let g = brinkman_matrix(gamma);
        let d = 4.0 * (gamma * gamma + 1.0);
        let sym = (g + g.transpose()) * 0.5;
        let skew = (g - g.transpose()) * 0.5;
        prop_assert!((sym - nalgebra::Matrix2::identity() * (gamma / d)).abs().max() <= 1e-15);
        prop_assert!((skew + rotation() / d).abs().max() <= 1e-15);
    }

    #[test]
    fn corrector_coeffs_solve_rotated_system(gamma in 1e-2..1e2f64, u0 in -5.0..5.0f64, u1 in -5.0..5.0f64) {
        let u = Vector2::new(u0, u1);
        let v = stokes_corrector_coeffs(u, gamma);
        // (I - gamma J) v = -u
        let back = v - rotation() * v * gamma;
        prop_assert!((back + u).norm() <= 1e-12 * (1.0 + u.norm()));
    }

    #[test]
    fn z_profile_transmission_residuals(eps in 0.02..1.0f64, ann in annulus()) {
        let z = z_profile(eps, &ann).unwrap();
        for r in z.residuals() {
            prop_assert!(r.abs() < 1e-10, "{:?}", z.residuals());
        }
    }

    #[test]
    fn w_profile_is_monotone_and_bounded(ann in annulus(), n in 5usize..50) {
        let mut last = -1.0;
        for k in 0..=n {
            let r = ann.inner * (ann.outer / ann.inner).powf(k as f64 / n as f64);
            let (w, g) = w_profile(r, &ann);
            prop_assert!(w >= last - 1e-15 && (-1e-15..=1.0 + 1e-15).contains(&w));
            prop_assert!(g >= 0.0);
            last = w;
        }
        prop_assert_eq!(w_profile(0.5 * ann.inner, &ann).0, 0.0);
        prop_assert_eq!(w_profile(ann.outer * 1.01, &ann).0, 1.0);
    }

    #[test]
    fn dirichlet_energy_matches_quadrature(ann in annulus()) {
        // int 2 pi r |W'|^2 dr in s = ln r.
        let (x, w) = gauss_legendre(20);
        let (a, b) = (ann.inner.ln(), ann.outer.ln());
        let q: f64 = x.iter().zip(&w).map(|(x, w)| {
            let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
            let r = s.exp();
            let g = w_profile(r, &ann).1;
            0.5 * (b - a) * w * 2.0 * PI * r * r * g * g
        }).sum();
        prop_assert!((q - cell_dirichlet_energy(&ann).unwrap()).abs() <= 1e-10 * q);
    }

    #[test]
    fn radii_follow_their_laws(mu in 1.0..100.0f64, eps in 0.1..0.5f64) {
        if let Ok(r) = scalar_radius(mu, eps, 0.4) {
            prop_assert!((mu * eps * eps * r.ln().abs() - 2.0 * PI).abs() <= 1e-10);
        }
        let r = stokes_radius(mu, eps).unwrap();
        prop_assert!((stokes_gamma_asymptotic(r) - mu * eps * eps).abs() <= 1e-10 * mu);
    }
}

#[test]
fn capacity_tends_to_mu() {
    let (mu, outer) = (50.0, 0.4);
    let mut last = f64::INFINITY;
    for log_r in [5.0, 20.0, 80.0, 320.0, 640.0] {
        let eps = (2.0 * PI / (mu * log_r)).sqrt();
        let r = scalar_radius(mu, eps, outer).unwrap();
        let ann = AnnulusSpec::new(outer, r).unwrap();
        let cap = cell_dirichlet_energy(&ann).unwrap() / (eps * eps);
        assert!(cap > mu && cap < last);
        last = cap;
    }
    assert!((last / mu - 1.0).abs() < 0.002);
}

#[test]
fn domain_errors() {
    assert!(AnnulusSpec::new(0.4, 0.4).is_err());
    assert!(AnnulusSpec::new(0.4, -1.0).is_err());
    assert!(scalar_radius(50.0, 1.0, 0.4).is_err());
    assert!(stokes_radius(-1.0, 0.5).is_err());
    let ann = AnnulusSpec { outer: 0.4, inner: 0.4 };
    assert!(cell_dirichlet_energy(&ann).is_err());
    assert!(z_profile(0.0, &AnnulusSpec::new(0.4, 0.1).unwrap()).is_err());
}

#[test]
fn fd_oracle_matches_closed_form_profile() {
    for (mu, eps) in [(50.0, 0.25), (50.0, 0.125), (10.0, 0.3)] {
        let r = scalar_radius(mu, eps, 0.4).unwrap();
        let ann = AnnulusSpec::new(0.4, r).unwrap();
        let exact = z_profile(eps, &ann).unwrap();
        let fd = common::radial_fd(eps, 0.4, r, 0.005, 25.0);
        assert_relative_eq!(fd.cell_average(0.5), exact.cell_average(0.5), max_relative = 1e-4);
        for rho in [r * 0.5, r, (r * 0.4).sqrt(), 0.4] {
            assert_relative_eq!(fd.value_at(rho), exact.value(rho), max_relative = 1e-4);
        }
    }
}

#[test]
fn fd_oracle_is_second_order() {
    let (eps, r) = (0.25, scalar_radius(50.0, 0.25, 0.4).unwrap());
    let exact = z_profile(eps, &AnnulusSpec::new(0.4, r).unwrap()).unwrap().cell_average(0.5);
    let e: Vec<f64> =
        [0.04, 0.02, 0.01].iter().map(|&h| (common::radial_fd(eps, 0.4, r, h, 25.0).cell_average(0.5) - exact).abs()).collect();
    assert!(e[0] / e[1] > 3.5 && e[1] / e[2] > 3.5, "{e:?}");
}

#[test]
fn radial_cell_average_tends_to_coth_one() {
    let mu = 50.0;
    let v: Vec<f64> = [50.0, 100.0, 200.0].iter().map(|&l| common::mu_zbar_fd(mu, l, 0.4)).collect();
    let limit = mu * zbar_limit_radial_ode(mu);
    assert_relative_eq!(limit, 1.0 / 1f64.tanh(), max_relative = 1e-14);
    assert!(v[0] < v[1] && v[1] < v[2], "{v:?}");
    assert!((v[2] - limit).abs() < 0.02 * limit, "{v:?}");
    // The two closed-form limits differ by exactly 4/3.
    assert_relative_eq!(zbar_limit(mu) / zbar_limit_radial_ode(mu), 4.0 / 3.0, max_relative = 1e-14);
}
