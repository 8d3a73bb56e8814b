//! P1 finite elements for the scalar problems: drift equations in skew weak
//! form, Schroedinger-type potential problems, the radial cell problem on a
//! disk, and homogenized equations with a zero-order term.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::closed_form::AnnulusSpec;
use crate::mesh::{Mesh, SubdomainTag};
use crate::quadrature::{map_point, p1_gradients, QuadPoint, TriangleRule, DEGREE2, DEGREE5};
use crate::sparse_la::{self, CsrMatrix, SolveReport, SolverError};

#[derive(Debug, Error, Clone)]
pub enum FemError {
    #[error("callback returned {value} at {point:?} (triangle {triangle})")]
    CallbackDomain { triangle: usize, point: [f64; 2], value: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, FemError>;

pub type Coefficient<'a> = &'a (dyn Fn(&QuadPoint) -> f64 + Sync);
pub type DriftField<'a> = &'a (dyn Fn(&QuadPoint) -> [f64; 2] + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarBc {
    /// Homogeneous Dirichlet on every boundary vertex.
    Dirichlet,
    /// Slave vertices merged into their masters.
    Periodic,
    Neumann,
}

/// Vertex to unknown numbering after constraints.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub vertex_dof: Vec<Option<usize>>,
    pub n_dofs: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, bc: ScalarBc) -> Result<Self> {
        let nv = mesh.num_vertices();
        let mut vertex_dof = vec![None; nv];
        let mut n = 0;
        match bc {
            ScalarBc::Dirichlet => {
                let on = mesh.boundary_vertices();
                for v in 0..nv {
                    if !on[v] {
                        vertex_dof[v] = Some(n);
                        n += 1;
                    }
                }
            }
            ScalarBc::Neumann => {
                for (v, d) in vertex_dof.iter_mut().enumerate() {
                    *d = Some(v);
                }
                n = nv;
            }
            ScalarBc::Periodic => {
                if mesh.periodic_pairs.is_empty() {
                    return Err(FemError::Input("periodic conditions on a mesh without pairs".into()));
                }
                let mut master = (0..nv).collect::<Vec<_>>();
                for &(s, m) in &mesh.periodic_pairs {
                    master[s] = m;
                }
                for v in 0..nv {
                    if master[v] == v {
                        vertex_dof[v] = Some(n);
                        n += 1;
                    }
                }
                for v in 0..nv {
                    let mut m = master[v];
                    while master[m] != m {
                        m = master[m];
                    }
                    vertex_dof[v] = vertex_dof[m];
                }
            }
        }
        Ok(DofMap { vertex_dof, n_dofs: n })
    }

    /// Nodal values from unknowns; constrained vertices get zero.
    pub fn scatter(&self, x: &[f64]) -> Vec<f64> {
        self.vertex_dof.iter().map(|d| d.map_or(0.0, |i| x[i])).collect()
    }

    /// Unknowns from nodal values (last writer wins on merged vertices).
    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_dofs];
        for (v, d) in self.vertex_dof.iter().enumerate() {
            if let Some(i) = d {
                x[*i] = values[v];
            }
        }
        x
    }
}

/// Assembled forms over the constrained unknowns.
#[derive(Debug, Clone)]
pub struct ScalarForms {
    pub dofs: DofMap,
    /// `int grad u . grad v`.
    pub stiffness: CsrMatrix,
    /// `int c u v`.
    pub mass: CsrMatrix,
    /// `int (b . grad u) v - int (b . grad v) u`.
    pub drift: CsrMatrix,
    pub load: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Row-sum lumping of the weighted mass.
    pub lumped_mass: bool,
    /// Degree-5 rule on annulus triangles.
    pub annulus_rule: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { lumped_mass: false, annulus_rule: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    pub direct: bool,
    pub assembly: AssemblyOptions,
}

impl Default for ScalarOptions {
    fn default() -> Self {
        ScalarOptions { tol: 1e-10, max_iter: 20_000, restart: 60, direct: false, assembly: AssemblyOptions::default() }
    }
}

fn rule_for(tag: SubdomainTag, opts: &AssemblyOptions) -> TriangleRule {
    if opts.annulus_rule && tag == SubdomainTag::Annulus {
        DEGREE5
    } else {
        DEGREE2
    }
}

fn checked(value: f64, q: &QuadPoint) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(FemError::CallbackDomain { triangle: q.triangle, point: q.x, value })
    }
}

type Triplets = Vec<(usize, usize, f64)>;

#[derive(Default)]
struct LocalBuffers {
    k: Triplets,
    m: Triplets,
    b: Triplets,
    f: Vec<(usize, f64)>,
}

const CHUNK: usize = 2048;

pub fn assemble_scalar_forms(
    mesh: &Mesh,
    c: Option<Coefficient>,
    b: Option<DriftField>,
    f: Option<Coefficient>,
    bc: ScalarBc,
    opts: &AssemblyOptions,
) -> Result<ScalarForms> {
    let dofs = DofMap::new(mesh, bc)?;
    let nt = mesh.num_triangles();
    let chunks: Vec<Result<LocalBuffers>> = (0..nt.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let mut buf = LocalBuffers::default();
            for t in ci * CHUNK..((ci + 1) * CHUNK).min(nt) {
                assemble_triangle(mesh, t, c, b, f, &dofs, opts, &mut buf)?;
            }
            Ok(buf)
        })
        .collect();
    let (mut k, mut m, mut bt) = (Vec::new(), Vec::new(), Vec::new());
    let mut load = vec![0.0; dofs.n_dofs];
    for chunk in chunks {
        let chunk = chunk?;
        k.extend(chunk.k);
        m.extend(chunk.m);
        bt.extend(chunk.b);
        for (i, v) in chunk.f {
            load[i] += v;
        }
    }
    let n = dofs.n_dofs;
    Ok(ScalarForms {
        stiffness: CsrMatrix::from_triplets(n, &k),
        mass: CsrMatrix::from_triplets(n, &m),
        drift: CsrMatrix::from_triplets(n, &bt),
        load,
        dofs,
    })
}

#[allow(clippy::too_many_arguments)]
fn assemble_triangle(
    mesh: &Mesh,
    t: usize,
    c: Option<Coefficient>,
    b: Option<DriftField>,
    f: Option<Coefficient>,
    dofs: &DofMap,
    opts: &AssemblyOptions,
    buf: &mut LocalBuffers,
) -> Result<()> {
    let tri = mesh.triangles[t];
    let p = mesh.triangle_points(t);
    let (g, area) = p1_gradients(&p);
    let tag = mesh.subdomains[t];
    let rule = rule_for(tag, opts);
    let mut kl = [[0.0; 3]; 3];
    let mut ml = [[0.0; 3]; 3];
    let mut cl = [[0.0; 3]; 3];
    let mut fl = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            kl[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    for (l, w) in rule.points.iter().zip(rule.weights) {
        let q = QuadPoint { x: map_point(&p, l), tag, triangle: t };
        let wa = w * area;
        if let Some(c) = c {
            let cv = checked(c(&q), &q)?;
            for i in 0..3 {
                for j in 0..3 {
                    ml[i][j] += wa * cv * l[i] * l[j];
                }
            }
        }
        if let Some(b) = b {
            let bv = b(&q);
            checked(bv[0], &q)?;
            checked(bv[1], &q)?;
            for i in 0..3 {
                for j in 0..3 {
                    cl[i][j] += wa * (bv[0] * g[j][0] + bv[1] * g[j][1]) * l[i];
                }
            }
        }
        if let Some(f) = f {
            let fv = checked(f(&q), &q)?;
            for i in 0..3 {
                fl[i] += wa * fv * l[i];
            }
        }
    }
    if opts.lumped_mass {
        for (i, row) in ml.iter_mut().enumerate() {
            let s: f64 = row.iter().sum();
            *row = [0.0; 3];
            row[i] = s;
        }
    }
    for i in 0..3 {
        let Some(di) = dofs.vertex_dof[tri[i]] else { continue };
        if f.is_some() {
            buf.f.push((di, fl[i]));
        }
        for j in 0..3 {
            let Some(dj) = dofs.vertex_dof[tri[j]] else { continue };
            buf.k.push((di, dj, kl[i][j]));
            if c.is_some() {
                buf.m.push((di, dj, ml[i][j]));
            }
            if b.is_some() {
                buf.b.push((di, dj, cl[i][j] - cl[j][i]));
            }
        }
    }
    Ok(())
}

/// Nodal P1 field on a mesh.
#[derive(Debug, Clone)]
pub struct ScalarField<'m> {
    pub mesh: &'m Mesh,
    pub values: Vec<f64>,
}

impl<'m> ScalarField<'m> {
    pub fn new(mesh: &'m Mesh, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), mesh.num_vertices());
        ScalarField { mesh, values }
    }

    pub fn interpolate(mesh: &'m Mesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        ScalarField { mesh, values: mesh.vertices.iter().map(|&x| f(x)).collect() }
    }

    pub fn eval(&self, t: usize, bary: &[f64; 3]) -> f64 {
        let tri = self.mesh.triangles[t];
        (0..3).map(|i| bary[i] * self.values[tri[i]]).sum()
    }

    pub fn gradient(&self, t: usize) -> [f64; 2] {
        let tri = self.mesh.triangles[t];
        let (g, _) = p1_gradients(&self.mesh.triangle_points(t));
        let mut out = [0.0; 2];
        for i in 0..3 {
            out[0] += self.values[tri[i]] * g[i][0];
            out[1] += self.values[tri[i]] * g[i][1];
        }
        out
    }

    /// `int |u - exact|^2` over the selected triangles, degree-5 quadrature.
    pub fn l2_error_sq_on(&self, exact: impl Fn([f64; 2]) -> f64, keep: impl Fn(usize) -> bool) -> f64 {
        let mut s = 0.0;
        for t in (0..self.mesh.num_triangles()).filter(|&t| keep(t)) {
            let p = self.mesh.triangle_points(t);
            let area = self.mesh.signed_area(t);
            for (l, w) in DEGREE5.points.iter().zip(DEGREE5.weights) {
                let d = self.eval(t, l) - exact(map_point(&p, l));
                s += w * area * d * d;
            }
        }
        s
    }

    pub fn l2_error(&self, exact: impl Fn([f64; 2]) -> f64) -> f64 {
        self.l2_error_sq_on(exact, |_| true).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_error(|_| 0.0)
    }

    /// `int |grad u|^2` over the selected triangles.
    pub fn dirichlet_energy_on(&self, keep: impl Fn(usize) -> bool) -> f64 {
        (0..self.mesh.num_triangles())
            .filter(|&t| keep(t))
            .map(|t| {
                let g = self.gradient(t);
                self.mesh.signed_area(t) * (g[0] * g[0] + g[1] * g[1])
            })
            .sum()
    }

    pub fn h1_norm(&self) -> f64 {
        (self.l2_norm().powi(2) + self.dirichlet_energy_on(|_| true)).sqrt()
    }

    /// `int u` over the whole mesh.
    pub fn integral(&self) -> f64 {
        (0..self.mesh.num_triangles()).map(|t| self.mesh.signed_area(t) * self.eval(t, &[1.0 / 3.0; 3])).sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "vertex,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v:.17e}")?;
        }
        Ok(())
    }

    pub fn write_vtk<W: Write>(&self, out: W, name: &str) -> io::Result<()> {
        self.mesh.write_vtk(out, &[(name, &self.values)])
    }
}

#[derive(Debug, Clone)]
pub struct ScalarSolution<'m> {
    pub field: ScalarField<'m>,
    pub report: SolveReport,
    /// `|a(u,u) - <f,u>| / |<f,u>|` with the symmetric part of the operator.
    pub energy_residual: f64,
}

fn quad(a: &CsrMatrix, x: &[f64]) -> f64 {
    sparse_la::dot(x, &a.matvec(x))
}

fn finish<'m>(
    mesh: &'m Mesh,
    forms: &ScalarForms,
    symmetric: &CsrMatrix,
    x: Vec<f64>,
    report: SolveReport,
) -> ScalarSolution<'m> {
    let fu = sparse_la::dot(&forms.load, &x);
    let au = quad(symmetric, &x);
    let energy_residual = if fu != 0.0 { (au - fu).abs() / fu.abs() } else { au.abs() };
    ScalarSolution { field: ScalarField::new(mesh, forms.dofs.scatter(&x)), report, energy_residual }
}

fn solve_spd_system(a: &CsrMatrix, b: &[f64], opts: &ScalarOptions) -> Result<(Vec<f64>, SolveReport)> {
    if opts.direct {
        return Ok(sparse_la::solve_direct(a, b)?);
    }
    Ok(sparse_la::solve_spd(a, b, opts.tol, opts.max_iter)?)
}

fn solve_general_system(a: &CsrMatrix, b: &[f64], opts: &ScalarOptions) -> Result<(Vec<f64>, SolveReport)> {
    if opts.direct {
        return Ok(sparse_la::solve_direct(a, b)?);
    }
    Ok(sparse_la::solve_general(a, b, opts.tol, opts.restart, opts.max_iter)?)
}

/// `-Delta u + b . grad u + div(b u) = f` with homogeneous Dirichlet data.
pub fn solve_drift<'m>(
    mesh: &'m Mesh,
    b: DriftField,
    f: Coefficient,
    opts: &ScalarOptions,
) -> Result<ScalarSolution<'m>> {
    solve_homogenized_scalar(mesh, None, Some(b), f, opts)
}

/// `-Delta v + V v = g` with homogeneous Dirichlet data.
pub fn solve_potential<'m>(
    mesh: &'m Mesh,
    potential: Coefficient,
    g: Coefficient,
    opts: &ScalarOptions,
) -> Result<ScalarSolution<'m>> {
    solve_homogenized_scalar(mesh, Some(potential), None, g, opts)
}

/// `-Delta u + b . grad u + div(b u) + c u = f` with homogeneous Dirichlet data.
pub fn solve_homogenized_scalar<'m>(
    mesh: &'m Mesh,
    zero_order: Option<Coefficient>,
    b: Option<DriftField>,
    f: Coefficient,
    opts: &ScalarOptions,
) -> Result<ScalarSolution<'m>> {
    let forms = assemble_scalar_forms(mesh, zero_order, b, Some(f), ScalarBc::Dirichlet, &opts.assembly)?;
    let symmetric = if zero_order.is_some() { forms.stiffness.add(1.0, &forms.mass, 1.0) } else { forms.stiffness.clone() };
    let (x, report) = if b.is_some() {
        let a = symmetric.add(1.0, &forms.drift, 1.0);
        solve_general_system(&a, &forms.load, opts)?
    } else {
        solve_spd_system(&symmetric, &forms.load, opts)?
    };
    Ok(finish(mesh, &forms, &symmetric, x, report))
}

/// Radial cell problem `-(1/eps^2) Delta Z + (1/eps^2) |grad W|^2 Z = 1/|Q_R|` on a
/// disk mesh with a natural outer boundary; `|grad W|^2 = alpha^2 / r^2` on annulus
/// triangles and zero on the core.
pub fn solve_z_cell<'m>(
    mesh: &'m Mesh,
    eps: f64,
    annulus: &AnnulusSpec,
    opts: &ScalarOptions,
) -> Result<ScalarSolution<'m>> {
    if !(eps > 0.0) {
        return Err(FemError::Input(format!("eps = {eps}")));
    }
    let alpha = annulus.alpha();
    let potential = move |q: &QuadPoint| match q.tag {
        SubdomainTag::Annulus => alpha * alpha / (q.x[0] * q.x[0] + q.x[1] * q.x[1]),
        _ => 0.0,
    };
    let source = 1.0 / (std::f64::consts::PI * annulus.outer * annulus.outer);
    let rhs = move |_: &QuadPoint| source;
    let forms = assemble_scalar_forms(mesh, Some(&potential), None, Some(&rhs), ScalarBc::Neumann, &opts.assembly)?;
    let inv = 1.0 / (eps * eps);
    let a = forms.stiffness.add(inv, &forms.mass, inv);
    let (x, report) = solve_spd_system(&a, &forms.load, opts)?;
    Ok(finish(mesh, &forms, &a, x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::structured_square;
    use std::f64::consts::PI;

    #[test]
    fn two_triangle_stiffness() {
        let mesh = structured_square(2, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let forms = assemble_scalar_forms(&mesh, None, None, None, ScalarBc::Neumann, &AssemblyOptions::default()).unwrap();
        // Unit square split along the (0,0)-(1,1) diagonal into right triangles:
        // the centre vertex couples only to its four axis neighbours.
        assert!((forms.stiffness.get(4, 4) - 4.0).abs() < 1e-14);
        assert!((forms.stiffness.get(4, 1) + 1.0).abs() < 1e-14);
        assert!(forms.stiffness.get(4, 0).abs() < 1e-14);
        assert!((forms.stiffness.get(0, 0) - 1.0).abs() < 1e-14);
        let one = |_: &QuadPoint| 1.0;
        let forms = assemble_scalar_forms(&mesh, Some(&one), None, None, ScalarBc::Neumann, &AssemblyOptions::default()).unwrap();
        let total: f64 = forms.mass.triplets().iter().map(|t| t.2).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert_eq!(forms.drift.nnz(), 0);
    }

    #[test]
    fn drift_is_exactly_skew() {
        let mesh = structured_square(6, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let b = |q: &QuadPoint| [(7.0 * q.x[1]).sin() + q.x[0], (3.0 * q.x[0]).cos() * q.x[1]];
        let forms = assemble_scalar_forms(&mesh, None, Some(&b), None, ScalarBc::Dirichlet, &AssemblyOptions::default()).unwrap();
        for (i, j, v) in forms.drift.triplets() {
            assert_eq!(v, -forms.drift.get(j, i));
        }
    }

    #[test]
    fn manufactured_poisson() {
        let f = |q: &QuadPoint| 2.0 * PI * PI * (PI * q.x[0]).sin() * (PI * q.x[1]).sin();
        let exact = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let mesh = structured_square(n, [0.0, 0.0], [1.0, 1.0], false).unwrap();
            let sol = solve_homogenized_scalar(&mesh, None, None, &f, &ScalarOptions::default()).unwrap();
            errs.push(sol.field.l2_error(exact));
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }

    #[test]
    fn callback_domain_error() {
        let mesh = structured_square(2, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let bad = |_: &QuadPoint| f64::NAN;
        let r = assemble_scalar_forms(&mesh, Some(&bad), None, None, ScalarBc::Dirichlet, &AssemblyOptions::default());
        assert!(matches!(r, Err(FemError::CallbackDomain { .. })));
    }

    #[test]
    fn periodic_dofs_merge() {
        let mesh = structured_square(4, [0.0, 0.0], [1.0, 1.0], true).unwrap();
        let d = DofMap::new(&mesh, ScalarBc::Periodic).unwrap();
        assert_eq!(d.n_dofs, 16);
    }
}
