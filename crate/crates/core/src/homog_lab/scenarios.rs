//! End-to-end pipelines: mesh, epsilon solve, homogenized references, fits and
//! diagnostics for one ladder point of each scenario kind.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::*;
use crate::closed_form::{
    brinkman_matrix, gamma_scalar, scalar_radius, stokes_gamma_asymptotic, stokes_radius, tartar_matrix, z_profile,
};
use crate::fem_scalar::{solve_drift, solve_z_cell};
use crate::fem_stokes::{
    solve_brinkman, solve_cell_v, solve_cell_w_smooth, solve_cell_wsharp, solve_perturbed, DriftSpec,
};
use crate::mesh::{disk_cell, perforated_lattice, periodic_cell, structured_square, GradingSpec};
use crate::quadrature::QuadPoint;

/// Right-hand side: a named preset or polynomial coefficients `c[i][j] x^i y^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Scalar constant; for Stokes the swirl times the constant.
    Constant(f64),
    /// `(-(y - 1/2), x - 1/2)`; scalar problems use `1`.
    Swirl,
    /// One coefficient table for scalar problems, two for Stokes.
    Polynomial(Vec<Vec<Vec<f64>>>),
}

impl Default for Source {
    fn default() -> Self {
        Source::Constant(1.0)
    }
}

fn poly(c: &[Vec<f64>], x: Point) -> f64 {
    let mut s = 0.0;
    for (i, row) in c.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            s += v * x[0].powi(i as i32) * x[1].powi(j as i32);
        }
    }
    s
}

impl Source {
    pub fn validate(&self, vector: bool) -> std::result::Result<(), String> {
        match self {
            Source::Polynomial(t) if t.len() != if vector { 2 } else { 1 } => {
                Err(format!("polynomial source needs {} coefficient table(s), got {}", if vector { 2 } else { 1 }, t.len()))
            }
            Source::Constant(c) if !c.is_finite() => Err(format!("constant source {c}")),
            _ => Ok(()),
        }
    }

    pub fn scalar(&self, x: Point) -> f64 {
        match self {
            Source::Constant(c) => *c,
            Source::Swirl => 1.0,
            Source::Polynomial(t) => poly(&t[0], x),
        }
    }

    pub fn vector(&self, x: Point) -> [f64; 2] {
        match self {
            Source::Constant(c) => [-c * (x[1] - 0.5), c * (x[0] - 0.5)],
            Source::Swirl => [-(x[1] - 0.5), x[0] - 0.5],
            Source::Polynomial(t) => [poly(&t[0], x), poly(&t[1], x)],
        }
    }
}

/// Discretization and diagnostic settings shared by all pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Structured elements per unit length of the reference (homogenized) mesh.
    pub hom_n: usize,
    /// Elements per period for the structured epsilon meshes.
    pub elements_per_eps: f64,
    pub grading: GradingSpec,
    pub interior_margin: f64,
    /// Exponent of the scalar corrector norm.
    pub corrector_p: f64,
    pub tol: f64,
    /// Sparse direct factorization instead of preconditioned Krylov iterations.
    pub direct: bool,
    /// Outer circle of the Stokes lattice cells, inside `(-1, 1)^2`.
    pub stokes_mesh_radius: f64,
    #[serde(skip)]
    pub vtk_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            hom_n: 40,
            elements_per_eps: 10.0,
            grading: GradingSpec { layers: 400, ratio: 1.3, target_h: 0.05 },
            interior_margin: 0.1,
            corrector_p: 1.5,
            tol: 1e-10,
            direct: true,
            stokes_mesh_radius: 0.8,
            vtk_dir: None,
        }
    }
}

impl Settings {
    pub fn scalar_opts(&self) -> ScalarOptions {
        ScalarOptions { tol: self.tol, direct: self.direct, ..ScalarOptions::default() }
    }

    pub fn stokes_opts(&self) -> StokesOptions {
        StokesOptions { tol: self.tol, direct: self.direct, ..StokesOptions::default() }
    }

    fn vtk_path(&self, name: &str) -> Option<PathBuf> {
        self.vtk_dir.as_ref().map(|d| d.join(format!("{name}.vtk")))
    }
}

/// A report row plus the quantities that do not go into the CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub row: EffectiveReport,
    pub fit: Option<FitResult>,
    pub extras: BTreeMap<String, f64>,
}

impl Outcome {
    fn new(row: EffectiveReport) -> Self {
        Outcome { row, fit: None, extras: BTreeMap::new() }
    }
}

fn write_vtk_file(path: &Path, write: impl FnOnce(BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| LabError::Input(format!("{}: {e}", path.display())))?;
    write(BufWriter::new(file)).map_err(|e| LabError::Input(format!("{}: {e}", path.display())))
}

fn structured_n(eps: f64, per_eps: f64) -> usize {
    ((per_eps / eps).ceil() as usize).max(4)
}

fn scalar_tail(
    mut out: Outcome,
    u_eps: &crate::fem_scalar::ScalarSolution,
    mesh: &Mesh,
    drift: DriftField,
    gamma_limit: f64,
    mu: f64,
    source: &Source,
    settings: &Settings,
    started: Instant,
    tag: &str,
) -> Result<Outcome> {
    let f = |q: &QuadPoint| source.scalar(q.x);
    let opts = settings.scalar_opts();
    let fit = fit_gamma_scalar(&u_eps.field, mesh, &f, mu, settings.interior_margin, &opts)?;
    let c = move |_: &QuadPoint| gamma_limit;
    let u_hom = solve_homogenized_scalar(mesh, Some(&c), None, &f, &opts)?;
    let p = settings.corrector_p;
    let with = corrector_norm_scalar(&u_eps.field, &u_hom.field, Some(drift), p, settings.interior_margin)?;
    let without = corrector_norm_scalar(&u_eps.field, &u_hom.field, None, p, settings.interior_margin)?;
    if let Some(path) = settings.vtk_path(tag) {
        write_vtk_file(&path, |w| u_eps.field.write_vtk(w, "u"))?;
    }
    out.row.dofs = Some(u_eps.field.values.len());
    out.row.h_min = Some(mesh.h_min());
    out.row.energy_residual = Some(u_eps.energy_residual);
    out.row.gamma_eff = fit.parameters.first().copied();
    out.row.corrector_norm = Some(with);
    out.row.solver_iters = Some(u_eps.report.iterations);
    out.extras.insert("corrector_baseline".into(), without);
    out.extras.insert("gamma_limit".into(), gamma_limit);
    out.extras.insert("fit_objective".into(), fit.objective);
    out.fit = Some(fit);
    out.row.wall_seconds = Some(started.elapsed().as_secs_f64());
    Ok(out)
}

/// `b_eps = a cos(2 pi x1/eps) e1`; the limit coefficient is `a^2/2`.
pub fn scalar_smooth(name: &str, eps: f64, a: f64, source: &Source, settings: &Settings) -> Result<Outcome> {
    let started = Instant::now();
    let mesh = structured_square(structured_n(eps, settings.elements_per_eps), [0.0, 0.0], [1.0, 1.0], false)?;
    let drift = smooth_scalar_drift(eps, a);
    let f = |q: &QuadPoint| source.scalar(q.x);
    let u_eps = solve_drift(&mesh, &drift, &f, &settings.scalar_opts())?;
    let mu = 0.5 * a * a;
    let mut out = Outcome::new(EffectiveReport { eps: Some(eps), ..EffectiveReport::new(name) });
    out.extras.insert("mu".into(), mu);
    scalar_tail(out, &u_eps, &mesh, &drift, mu, mu, source, settings, started, &format!("{name}_eps{eps}"))
}

/// Whole-cell lattice with logarithmic profiles in the annuli `r_eps < |y| < R`.
pub fn scalar_concentrated(
    name: &str,
    eps: f64,
    mu: f64,
    outer: f64,
    source: &Source,
    settings: &Settings,
) -> Result<Outcome> {
    let started = Instant::now();
    let r = scalar_radius(mu, eps, outer)?;
    let ann = AnnulusSpec::new(outer, r)?;
    let mesh = perforated_lattice([0.0, 0.0], [1.0, 1.0], eps, &ann, 0.5, &settings.grading)?;
    let lattice = mesh.lattice.expect("lattice mesh");
    let drift = concentrated_scalar_drift(lattice, ann);
    let f = |q: &QuadPoint| source.scalar(q.x);
    let u_eps = solve_drift(&mesh, &drift, &f, &settings.scalar_opts())?;
    let probe = weak_limit_probe(&lattice, &ann, |_| 1.0, |c| in_interior(c, 0.0));
    let mut out = Outcome::new(EffectiveReport {
        eps: Some(eps),
        r_eps: Some(r),
        probe_ratio: Some(probe.ratio()),
        ..EffectiveReport::new(name)
    });
    out.extras.insert("mu".into(), mu);
    out.extras.insert("cell_mass".into(), probe.cell_mass);
    out.extras.insert("cell_mass_exact".into(), probe.cell_mass_exact);
    scalar_tail(out, &u_eps, &mesh, &drift, gamma_scalar(mu), mu, source, settings, started, &format!("{name}_eps{eps}"))
}

/// Average of `(Dw)^T v` for the smooth Stokes cell problem with direction `lambda`.
pub fn stokes_smooth_cell(eps: f64, a: f64, lambda: Vector2<f64>, n: usize, opts: &StokesOptions) -> Result<Vector2<f64>> {
    let mesh = structured_square(n, [0.0, 0.0], [eps, eps], true)?;
    let v = smooth_stokes_drift(eps, a);
    Ok(solve_cell_w_smooth(&mesh, &v, lambda, opts)?.1)
}

/// `v_eps = a cos(2 pi x2/eps) e1`: full-domain fit of `s I + t J + m e2 (x) e2` and the cell value.
pub fn stokes_smooth(name: &str, eps: f64, a: f64, source: &Source, settings: &Settings) -> Result<Outcome> {
    let started = Instant::now();
    let opts = settings.stokes_opts();
    let mesh = structured_square(structured_n(eps, settings.elements_per_eps), [0.0, 0.0], [1.0, 1.0], false)?;
    let v = smooth_stokes_drift(eps, a);
    let f = |q: &QuadPoint| source.vector(q.x);
    let u_eps = solve_perturbed(&mesh, DriftSpec::Smooth(&v), &f, &opts)?;
    let hom_mesh = structured_square(settings.hom_n, [0.0, 0.0], [1.0, 1.0], false)?;
    let m22 = 0.5 * a * a;
    let spec = BrinkmanFitSpec { start: vec![0.0, 0.0, m22], scale: m22.max(1e-3), max_sweeps: 30 };
    let sampler =
        BrinkmanSampler::new(&hom_mesh, settings.interior_margin, &f, 0.0, ansatz_matrix(&spec.start), &opts)?;
    let fit = fit_brinkman_matrix(&u_eps.field, &sampler, &spec)?;
    let cell = stokes_smooth_cell(eps, a, Vector2::new(0.0, 1.0), 24, &opts)?;
    let cell1 = stokes_smooth_cell(eps, a, Vector2::new(1.0, 0.0), 24, &opts)?;
    if let Some(path) = settings.vtk_path(&format!("{name}_eps{eps}")) {
        write_vtk_file(&path, |w| u_eps.field.write_vtk(w))?;
    }
    let p = &fit.parameters;
    let mut out = Outcome::new(EffectiveReport {
        eps: Some(eps),
        dofs: Some(u_eps.dofs),
        h_min: Some(mesh.h_min()),
        energy_residual: Some(u_eps.energy_residual),
        s: Some(p[0]),
        t: Some(p[1]),
        m22: Some(p[0] + p[2]),
        cell_value: Some(cell[1]),
        solver_iters: Some(u_eps.report.iterations),
        ..EffectiveReport::new(name)
    });
    out.extras.insert("cell_m_e2_x".into(), cell[0]);
    out.extras.insert("cell_m_e1_x".into(), cell1[0]);
    out.extras.insert("cell_m_e1_y".into(), cell1[1]);
    out.extras.insert("divergence_residual".into(), u_eps.divergence_residual);
    out.fit = Some(fit);
    out.row.wall_seconds = Some(started.elapsed().as_secs_f64());
    Ok(out)
}

/// Lattice of pitch `2 eps` with rotating cores of radius `eps r_eps`.
pub fn stokes_concentrated(name: &str, eps: f64, gamma: f64, source: &Source, settings: &Settings) -> Result<Outcome> {
    let started = Instant::now();
    let opts = settings.stokes_opts();
    let r = stokes_radius(gamma, eps)?;
    let ann = AnnulusSpec::new(settings.stokes_mesh_radius, r)?;
    let mesh = perforated_lattice([0.0, 0.0], [1.0, 1.0], 2.0 * eps, &ann, 1.0, &settings.grading)?;
    let lattice = mesh.lattice.expect("lattice mesh");
    let f = |q: &QuadPoint| source.vector(q.x);
    let drift = DriftSpec::concentrated_for(&mesh)?;
    let u_eps = solve_perturbed(&mesh, drift, &f, &opts)?;

    let hom_mesh = structured_square(settings.hom_n, [0.0, 0.0], [1.0, 1.0], false)?;
    let scale = gamma / (4.0 * (gamma * gamma + 1.0));
    let spec = BrinkmanFitSpec { start: vec![scale, 0.0], scale, max_sweeps: 40 };
    let sampler =
        BrinkmanSampler::new(&hom_mesh, settings.interior_margin, &f, 0.25, ansatz_matrix(&spec.start), &opts)?;
    let fit = fit_brinkman_matrix(&u_eps.field, &sampler, &spec)?;
    let target = sampler.samples.sample_velocity(&u_eps.field);
    let obj_gamma = sampler.objective(&target, &brinkman_matrix(gamma))?;
    let obj_tartar = sampler.objective(&target, &tartar_matrix(gamma))?;

    // Corrector with the tiled annulus cell velocities.
    let cell_mesh = disk_cell(1.0, &settings.grading, Some(r))?;
    let (v1, gamma_cell) = solve_cell_v(&cell_mesh, 0, &opts)?;
    let (v2, _) = solve_cell_v(&cell_mesh, 1, &opts)?;
    let tiled = TiledCell::new(&v1.field, &v2.field, lattice)?;
    let u_hom = solve_brinkman(&mesh, 0.25, brinkman_matrix(gamma), &f, &opts)?;
    let with = corrector_norm_stokes(&u_eps.field, &u_hom.field, Some(&tiled), gamma)?;
    let without = corrector_norm_stokes(&u_eps.field, &u_hom.field, None, gamma)?;
    if let Some(path) = settings.vtk_path(&format!("{name}_eps{eps}")) {
        write_vtk_file(&path, |w| u_eps.field.write_vtk(w))?;
    }
    let mut out = Outcome::new(EffectiveReport {
        eps: Some(eps),
        r_eps: Some(r),
        dofs: Some(u_eps.dofs),
        h_min: Some(mesh.h_min()),
        energy_residual: Some(u_eps.energy_residual),
        s: Some(fit.parameters[0]),
        t: Some(fit.parameters[1]),
        corrector_norm: Some(with),
        cell_value: Some(gamma_cell),
        solver_iters: Some(u_eps.report.iterations),
        ..EffectiveReport::new(name)
    });
    out.extras.insert("objective_gamma".into(), obj_gamma);
    out.extras.insert("objective_tartar".into(), obj_tartar);
    out.extras.insert("corrector_baseline".into(), without);
    out.extras.insert("divergence_residual".into(), u_eps.divergence_residual);
    out.extras.insert("fit_objective".into(), fit.objective);
    out.fit = Some(fit);
    out.row.wall_seconds = Some(started.elapsed().as_secs_f64());
    Ok(out)
}

/// FEM radial cell problem on `Q_R` with `r_eps` from `(mu, eps, R)`; the cell value
/// is `mu` times the average of `Z_h` over `(-1/2, 1/2)^2` extended by `Z_h(R)`.
pub fn cell_z(name: &str, eps: f64, mu: f64, outer: f64, settings: &Settings) -> Result<Outcome> {
    let started = Instant::now();
    let r = scalar_radius(mu, eps, outer)?;
    let ann = AnnulusSpec::new(outer, r)?;
    let mesh = disk_cell(outer, &settings.grading, Some(r))?;
    let sol = solve_z_cell(&mesh, eps, &ann, &settings.scalar_opts())?;
    let on = mesh.boundary_vertices();
    let rim: Vec<f64> = sol.field.values.iter().zip(&on).filter(|(_, &b)| b).map(|(v, _)| *v).collect();
    let z_rim = rim.iter().sum::<f64>() / rim.len() as f64;
    let average = sol.field.integral() + (1.0 - mesh.total_area()) * z_rim;
    let exact = z_profile(eps, &ann)?.cell_average(0.5);
    let mut out = Outcome::new(EffectiveReport {
        eps: Some(eps),
        r_eps: Some(r),
        dofs: Some(mesh.num_vertices()),
        h_min: Some(mesh.h_min()),
        energy_residual: Some(sol.energy_residual),
        cell_value: Some(mu * average),
        solver_iters: Some(sol.report.iterations),
        ..EffectiveReport::new(name)
    });
    out.extras.insert("closed_form".into(), mu * exact);
    out.row.wall_seconds = Some(started.elapsed().as_secs_f64());
    Ok(out)
}

/// `int |DV|^2` for the annulus cell `r < |y| < 1`; the cell value is its ratio to `4 pi / |ln r|`.
pub fn cell_v(name: &str, r: f64, eps: Option<f64>, settings: &Settings) -> Result<Outcome> {
    let started = Instant::now();
    let mesh = disk_cell(1.0, &settings.grading, Some(r))?;
    let (sol, gamma_cell) = solve_cell_v(&mesh, 0, &settings.stokes_opts())?;
    let l = (1.0 / r).ln();
    let exact = 4.0 * std::f64::consts::PI / (l - (1.0 - r * r) / (1.0 + r * r));
    let mut out = Outcome::new(EffectiveReport {
        eps,
        r_eps: Some(r),
        dofs: Some(sol.dofs),
        h_min: Some(mesh.h_min()),
        energy_residual: Some(sol.energy_residual),
        gamma_eff: Some(gamma_cell),
        cell_value: Some(gamma_cell / stokes_gamma_asymptotic(r)),
        solver_iters: Some(sol.report.iterations),
        ..EffectiveReport::new(name)
    });
    out.extras.insert("annulus_exact".into(), exact);
    out.row.wall_seconds = Some(started.elapsed().as_secs_f64());
    Ok(out)
}

/// Periodic concentrated cell with `lambda = e1`. With `eps = None` the cell is
/// taken at `eps = 1`, so that `1/gamma = |ln r| / (4 pi)`. The cell value is
/// `4 gamma M_quadratic` (one in the limit).
pub fn cell_wsharp(name: &str, r: f64, eps: Option<f64>, settings: &Settings) -> Result<Outcome> {
    let started = Instant::now();
    let e = eps.unwrap_or(1.0);
    let gamma = 4.0 * std::f64::consts::PI / (e * e * (1.0 / r).ln());
    let ann = AnnulusSpec::new(settings.stokes_mesh_radius, r)?;
    let mesh = periodic_cell(&ann, 1.0, &settings.grading)?;
    let lambda = Vector2::new(1.0, 0.0);
    let w = solve_cell_wsharp(&mesh, e, lambda, &settings.stokes_opts())?;
    let expected = -(crate::closed_form::rotation() * lambda) / gamma;
    let angle = (w.wbar.perp(&expected)).atan2(w.wbar.dot(&expected)).to_degrees();
    let mut out = Outcome::new(EffectiveReport {
        eps,
        r_eps: Some(r),
        dofs: Some(w.solution.dofs),
        h_min: Some(mesh.h_min()),
        energy_residual: Some(w.solution.energy_residual),
        gamma_eff: Some(gamma),
        cell_value: Some(4.0 * gamma * w.m_quadratic),
        solver_iters: Some(w.solution.report.iterations),
        ..EffectiveReport::new(name)
    });
    out.extras.insert("wbar_norm_ratio".into(), w.wbar.norm() / expected.norm());
    out.extras.insert("wbar_angle_deg".into(), angle);
    out.extras.insert("energy".into(), w.energy);
    out.extras.insert("forcing".into(), w.forcing);
    out.row.wall_seconds = Some(started.elapsed().as_secs_f64());
    Ok(out)
}

fn g4(x: f64) -> [f64; 4] {
    [
        x * x * (1.0 - x).powi(2),
        2.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
        2.0 * (1.0 - 6.0 * x + 6.0 * x * x),
        12.0 * (2.0 * x - 1.0),
    ]
}

/// Stream-function solution `u = (g(x) g'(y), -g'(x) g(y))`, `p = x - 1/2`, `g = x^2 (1-x)^2`.
pub fn manufactured_velocity(x: Point) -> [f64; 2] {
    let (a, b) = (g4(x[0]), g4(x[1]));
    [a[0] * b[1], -a[1] * b[0]]
}

pub fn manufactured_velocity_gradient(x: Point) -> [[f64; 2]; 2] {
    let (a, b) = (g4(x[0]), g4(x[1]));
    [[a[1] * b[1], a[0] * b[2]], [-a[2] * b[0], -a[1] * b[1]]]
}

pub fn manufactured_force(x: Point) -> [f64; 2] {
    let (a, b) = (g4(x[0]), g4(x[1]));
    [-a[2] * b[1] - a[0] * b[3] + 1.0, a[3] * b[0] + a[1] * b[2]]
}

/// Taylor-Hood errors on the structured `n x n` mesh, and the P1 error of the
/// Poisson problem with solution `sin(pi x) sin(pi y)` on the same mesh.
pub fn manufactured(name: &str, n: usize, settings: &Settings) -> Result<Outcome> {
    use std::f64::consts::PI;
    let started = Instant::now();
    let mesh = structured_square(n, [0.0, 0.0], [1.0, 1.0], false)?;
    let f = |q: &QuadPoint| manufactured_force(q.x);
    let sol = solve_perturbed(&mesh, DriftSpec::None, &f, &settings.stokes_opts())?;
    let fs = |q: &QuadPoint| 2.0 * PI * PI * (PI * q.x[0]).sin() * (PI * q.x[1]).sin();
    let scalar = solve_homogenized_scalar(&mesh, None, None, &fs, &settings.scalar_opts())?;
    let mut out = Outcome::new(EffectiveReport {
        eps: Some(1.0 / n as f64),
        dofs: Some(sol.dofs),
        h_min: Some(mesh.h_min()),
        energy_residual: Some(sol.energy_residual),
        err_velocity: Some(sol.field.velocity_l2_error(manufactured_velocity)),
        err_pressure: Some(sol.field.pressure_l2_error(|x| x[0] - 0.5)),
        cell_value: Some(scalar.field.l2_error(|x| (PI * x[0]).sin() * (PI * x[1]).sin())),
        solver_iters: Some(sol.report.iterations),
        ..EffectiveReport::new(name)
    });
    out.extras.insert("err_velocity_h1".into(), sol.field.velocity_h1_error(manufactured_velocity_gradient));
    out.extras.insert("divergence_residual".into(), sol.divergence_residual);
    out.row.wall_seconds = Some(started.elapsed().as_secs_f64());
    Ok(out)
}
