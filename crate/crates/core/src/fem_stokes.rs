//! Taylor-Hood (P2 velocity, P1 pressure) elements for perturbed Stokes
//! systems, Brinkman limits and the periodic or annular cell problems.

use std::collections::HashMap;
use std::io::{self, Write};

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::closed_form::rotation;
use crate::fem_scalar::{FemError, Result};
use crate::mesh::{EdgeTopology, Mesh, Point, SubdomainTag};
use crate::quadrature::{map_point, p1_gradients, p2_gradients, p2_values, QuadPoint, DEGREE5};
use crate::sparse_la::{self, CsrMatrix, SolveReport};

pub type VectorField<'a> = &'a (dyn Fn(&QuadPoint) -> [f64; 2] + Sync);
pub type MatrixField<'a> = &'a (dyn Fn(&QuadPoint) -> [[f64; 2]; 2] + Sync);
pub type Prescribed<'a> = &'a (dyn Fn(Point) -> [f64; 2] + Sync);

/// First-order perturbation of the Stokes operator.
#[derive(Clone, Copy)]
pub enum DriftSpec<'a> {
    None,
    /// `curl(v) J u` through `int (Du)^T v . phi - int (v (x) u) : D phi`.
    Smooth(VectorField<'a>),
    /// `weight * 1_{DISK_CORE} J u`.
    Concentrated { weight: f64 },
}

impl DriftSpec<'_> {
    /// Weight `1/|Q_r|` in cell units, taken from the discrete core area so that
    /// every cell carries mass exactly `scale^2`.
    pub fn concentrated_for(mesh: &Mesh) -> Result<DriftSpec<'static>> {
        let lat = mesh.lattice.ok_or_else(|| FemError::Input("concentrated drift needs a lattice mesh".into()))?;
        let cells = (lat.cells[0] * lat.cells[1]) as f64;
        let core = mesh.subdomain_area(SubdomainTag::DiskCore) / cells;
        if !(core > 0.0) {
            return Err(FemError::Input("lattice has no disk cores".into()));
        }
        Ok(DriftSpec::Concentrated { weight: lat.scale() * lat.scale() / core })
    }
}

#[derive(Clone, Copy)]
pub enum VelocityBc<'a> {
    NoSlip,
    /// Periodic velocity and pressure with zero-mean velocity.
    Periodic,
    /// Dirichlet data on the boundary of the active region; also fills inactive nodes.
    Prescribed(Prescribed<'a>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesOptions {
    pub direct: bool,
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for StokesOptions {
    fn default() -> Self {
        StokesOptions { direct: true, tol: 1e-10, restart: 100, max_iter: 5000 }
    }
}

/// Everything that enters one Stokes-type solve.
#[derive(Clone, Copy)]
pub struct StokesProblem<'a> {
    pub bc: VelocityBc<'a>,
    pub drift: DriftSpec<'a>,
    /// `int G u . phi`.
    pub zero_order: Option<MatrixField<'a>>,
    /// `int f . phi`.
    pub force: Option<VectorField<'a>>,
    /// `int F : D phi`.
    pub stress: Option<MatrixField<'a>>,
    /// Flow region; `None` means every triangle.
    pub active: Option<&'a (dyn Fn(usize) -> bool + Sync)>,
}

impl<'a> StokesProblem<'a> {
    pub fn new(bc: VelocityBc<'a>) -> Self {
        StokesProblem { bc, drift: DriftSpec::None, zero_order: None, force: None, stress: None, active: None }
    }
}

/// Taylor-Hood numbering. P2 node `v < nv` is a vertex, `nv + e` the midpoint of edge `e`.
pub struct TaylorHood<'m> {
    pub mesh: &'m Mesh,
    pub topo: EdgeTopology,
    pub active: Vec<bool>,
    pub vel_dof: Vec<Option<usize>>,
    pub vel_fixed: Vec<Option<[f64; 2]>>,
    pub pres_dof: Vec<Option<usize>>,
    pub n_vel: usize,
    pub n_pres: usize,
    pub velocity_means: bool,
}

impl<'m> TaylorHood<'m> {
    pub fn num_nodes(&self) -> usize {
        self.mesh.num_vertices() + self.topo.edges.len()
    }

    pub fn node_position(&self, k: usize) -> Point {
        let nv = self.mesh.num_vertices();
        if k < nv {
            self.mesh.vertices[k]
        } else {
            let [a, b] = self.topo.edges[k - nv];
            let (p, q) = (self.mesh.vertices[a], self.mesh.vertices[b]);
            [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
        }
    }

    pub fn local_nodes(&self, t: usize) -> [usize; 6] {
        let tri = self.mesh.triangles[t];
        let te = self.topo.tri_edges[t];
        let nv = self.mesh.num_vertices();
        [tri[0], tri[1], tri[2], nv + te[0], nv + te[1], nv + te[2]]
    }

    /// Unknowns: velocity pairs, then pressures.
    pub fn n_unknowns(&self) -> usize {
        2 * self.n_vel + self.n_pres
    }

    /// Unknowns held at zero to remove the constant kernels; the pressure (and, for
    /// periodic problems, the velocity) is shifted to zero mean after the solve.
    pub fn pinned(&self) -> Vec<usize> {
        let mut p = vec![self.pressure_offset()];
        if self.velocity_means && self.n_vel > 0 {
            p.extend([0, 1]);
        }
        p
    }

    fn pressure_offset(&self) -> usize {
        2 * self.n_vel
    }

    pub fn new(mesh: &'m Mesh, bc: VelocityBc, active: Option<&(dyn Fn(usize) -> bool + Sync)>) -> Result<Self> {
        let topo = mesh.edge_topology();
        let nt = mesh.num_triangles();
        let nv = mesh.num_vertices();
        let active: Vec<bool> = (0..nt).map(|t| active.is_none_or(|f| f(t))).collect();
        let n_nodes = nv + topo.edges.len();
        let mut touched = vec![false; n_nodes];
        let mut edge_use = vec![0u8; topo.edges.len()];
        let mut vertex_touched = vec![false; nv];
        for t in (0..nt).filter(|&t| active[t]) {
            for (l, &e) in topo.tri_edges[t].iter().enumerate() {
                edge_use[e] += 1;
                touched[nv + e] = true;
                let v = mesh.triangles[t][l];
                touched[v] = true;
                vertex_touched[v] = true;
            }
        }
        let mut boundary = vec![false; n_nodes];
        for (e, &u) in edge_use.iter().enumerate() {
            if u == 1 {
                boundary[nv + e] = true;
                boundary[topo.edges[e][0]] = true;
                boundary[topo.edges[e][1]] = true;
            }
        }
        let mut vel_fixed = vec![None; n_nodes];
        let mut master: Vec<usize> = (0..n_nodes).collect();
        let mut pres_master: Vec<usize> = (0..nv).collect();
        let velocity_means = matches!(bc, VelocityBc::Periodic);
        let node_pos = |k: usize| -> Point {
            if k < nv {
                mesh.vertices[k]
            } else {
                let [a, b] = topo.edges[k - nv];
                let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
                [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
            }
        };
        match bc {
            VelocityBc::NoSlip => {
                for k in 0..n_nodes {
                    if boundary[k] || !touched[k] {
                        vel_fixed[k] = Some([0.0, 0.0]);
                    }
                }
            }
            VelocityBc::Prescribed(g) => {
                for k in 0..n_nodes {
                    if boundary[k] || !touched[k] {
                        vel_fixed[k] = Some(g(node_pos(k)));
                    }
                }
            }
            VelocityBc::Periodic => {
                let period = mesh.period.ok_or_else(|| FemError::Input("periodic Stokes on a non-periodic mesh".into()))?;
                for &(s, m) in &mesh.periodic_pairs {
                    master[s] = m;
                    pres_master[s] = m;
                }
                // Edge midpoints: right -> left, top -> bottom.
                let (lo, hi) = bounding_box(mesh);
                let q = |x: f64, d: usize| (x / (1e-9 * period[d])).round() as i64;
                let mut by_mid: HashMap<(i64, i64), usize> = HashMap::new();
                for e in 0..topo.edges.len() {
                    if topo.multiplicity[e] == 1 {
                        let p = node_pos(nv + e);
                        by_mid.insert((q(p[0], 0), q(p[1], 1)), e);
                    }
                }
                let tol = 1e-9;
                for e in 0..topo.edges.len() {
                    if topo.multiplicity[e] != 1 {
                        continue;
                    }
                    let p = node_pos(nv + e);
                    let image = if (p[0] - hi[0]).abs() <= tol * period[0] {
                        Some([p[0] - period[0], p[1]])
                    } else if (p[1] - hi[1]).abs() <= tol * period[1] {
                        Some([p[0], p[1] - period[1]])
                    } else {
                        None
                    };
                    if let Some(im) = image {
                        let m = by_mid.get(&(q(im[0], 0), q(im[1], 1))).ok_or_else(|| {
                            FemError::Input(format!("periodic edge at {p:?} has no image (box {lo:?}..{hi:?})"))
                        })?;
                        master[nv + e] = nv + m;
                    }
                }
            }
        }
        let resolve = |m: &[usize], mut k: usize| {
            while m[k] != k {
                k = m[k];
            }
            k
        };
        let mut vel_dof = vec![None; n_nodes];
        let mut n_vel = 0;
        for k in 0..n_nodes {
            if vel_fixed[k].is_none() && touched[k] && resolve(&master, k) == k {
                vel_dof[k] = Some(n_vel);
                n_vel += 1;
            }
        }
        for k in 0..n_nodes {
            if vel_fixed[k].is_none() && touched[k] {
                vel_dof[k] = vel_dof[resolve(&master, k)];
            }
        }
        let mut pres_dof = vec![None; nv];
        let mut n_pres = 0;
        for v in 0..nv {
            if vertex_touched[v] && resolve(&pres_master, v) == v {
                pres_dof[v] = Some(n_pres);
                n_pres += 1;
            }
        }
        for v in 0..nv {
            if vertex_touched[v] {
                pres_dof[v] = pres_dof[resolve(&pres_master, v)];
            }
        }
        Ok(TaylorHood { mesh, topo, active, vel_dof, vel_fixed, pres_dof, n_vel, n_pres, velocity_means })
    }
}

fn bounding_box(mesh: &Mesh) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for v in &mesh.vertices {
        for d in 0..2 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    (lo, hi)
}

/// Assembled saddle-point system.
pub struct StokesSystem<'m> {
    pub space: TaylorHood<'m>,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Symmetric energy part of the velocity block (viscous + sym zero-order), for identities.
    pub energy: CsrMatrix,
    /// Velocity load alone (without eliminated data), for identities.
    pub load: Vec<f64>,
    /// Discrete divergence rows `-int q div u` over free velocity unknowns.
    pub divergence: CsrMatrix,
    /// Skew first-order part of the velocity block.
    pub drift: CsrMatrix,
}

fn check(v: f64, q: &QuadPoint) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FemError::CallbackDomain { triangle: q.triangle, point: q.x, value: v })
    }
}

#[derive(Default)]
struct Buffers {
    a: Vec<(usize, usize, f64)>,
    e: Vec<(usize, usize, f64)>,
    d: Vec<(usize, usize, f64)>,
    s: Vec<(usize, usize, f64)>,
    rhs: Vec<(usize, f64)>,
    load: Vec<(usize, f64)>,
}

const CHUNK: usize = 1024;

pub fn assemble_stokes<'m>(mesh: &'m Mesh, problem: &StokesProblem) -> Result<StokesSystem<'m>> {
    let space = TaylorHood::new(mesh, problem.bc, problem.active)?;
    let n = space.n_unknowns();
    let nt = mesh.num_triangles();
    let parts: Vec<Result<Buffers>> = (0..nt.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut buf = Buffers::default();
            for t in c * CHUNK..((c + 1) * CHUNK).min(nt) {
                if space.active[t] {
                    assemble_element(&space, t, problem, &mut buf)?;
                }
            }
            Ok(buf)
        })
        .collect();
    let mut a = Vec::new();
    let mut e = Vec::new();
    let mut d = Vec::new();
    let mut sk = Vec::new();
    let mut rhs = vec![0.0; n];
    let mut load = vec![0.0; n];
    for k in space.pinned() {
        a.push((k, k, 1.0));
    }
    for p in parts {
        let p = p?;
        a.extend(p.a);
        e.extend(p.e);
        d.extend(p.d);
        sk.extend(p.s);
        for (i, v) in p.rhs {
            rhs[i] += v;
        }
        for (i, v) in p.load {
            load[i] += v;
        }
    }
    Ok(StokesSystem {
        matrix: CsrMatrix::from_triplets(n, &a),
        energy: CsrMatrix::from_triplets(n, &e),
        divergence: CsrMatrix::from_triplets(n, &d),
        drift: CsrMatrix::from_triplets(n, &sk),
        rhs,
        load,
        space,
    })
}

fn assemble_element(space: &TaylorHood, t: usize, problem: &StokesProblem, buf: &mut Buffers) -> Result<()> {
    let mesh = space.mesh;
    let p = mesh.triangle_points(t);
    let (g1, area) = p1_gradients(&p);
    let tag = mesh.subdomains[t];
    let nodes = space.local_nodes(t);
    let verts = mesh.triangles[t];
    // Local unknown (a, c) -> 2a + c for velocity, 12 + k for pressure.
    let mut kv = [[0.0; 12]; 12];
    let mut ke = [[0.0; 12]; 12];
    let mut tr = [[0.0; 12]; 12];
    let mut sk = [[0.0; 12]; 12];
    let mut bdiv = [[0.0; 12]; 3];
    let mut fl = [0.0; 12];
    let concentrated = match problem.drift {
        DriftSpec::Concentrated { weight } if tag == SubdomainTag::DiskCore => Some(weight),
        _ => None,
    };
    for (l, w) in DEGREE5.points.iter().zip(DEGREE5.weights) {
        let wa = w * area;
        let q = QuadPoint { x: map_point(&p, l), tag, triangle: t };
        let nval = p2_values(l);
        let ng = p2_gradients(l, &g1);
        for a in 0..6 {
            for b in 0..6 {
                let s = wa * (ng[a][0] * ng[b][0] + ng[a][1] * ng[b][1]);
                for c in 0..2 {
                    kv[2 * b + c][2 * a + c] += s;
                    ke[2 * b + c][2 * a + c] += s;
                }
            }
            for k in 0..3 {
                for c in 0..2 {
                    bdiv[k][2 * a + c] -= wa * l[k] * ng[a][c];
                }
            }
        }
        let mut gmat = [[0.0; 2]; 2];
        if let Some(zf) = problem.zero_order {
            let gm = zf(&q);
            for r in 0..2 {
                for c in 0..2 {
                    gmat[r][c] += check(gm[r][c], &q)?;
                }
            }
        }
        let mut skew = [[0.0; 2]; 2];
        if let Some(wt) = concentrated {
            skew = [[0.0, -wt], [wt, 0.0]];
        }
        for a in 0..6 {
            for b in 0..6 {
                let m = wa * nval[a.min(b)] * nval[a.max(b)];
                for d in 0..2 {
                    for c in 0..2 {
                        kv[2 * b + d][2 * a + c] += gmat[d][c] * m;
                        ke[2 * b + d][2 * a + c] += 0.5 * (gmat[d][c] + gmat[c][d]) * m;
                        sk[2 * b + d][2 * a + c] += skew[d][c] * m;
                    }
                }
            }
        }
        if let DriftSpec::Smooth(vf) = problem.drift {
            let v = vf(&q);
            check(v[0], &q)?;
            check(v[1], &q)?;
            for a in 0..6 {
                for b in 0..6 {
                    for c in 0..2 {
                        for d in 0..2 {
                            tr[2 * b + d][2 * a + c] += wa * v[c] * ng[a][d] * nval[b];
                        }
                    }
                }
            }
        }
        if let Some(ff) = problem.force {
            let f = ff(&q);
            for b in 0..6 {
                for d in 0..2 {
                    fl[2 * b + d] += wa * check(f[d], &q)? * nval[b];
                }
            }
        }
        if let Some(sf) = problem.stress {
            let s = sf(&q);
            for b in 0..6 {
                for d in 0..2 {
                    fl[2 * b + d] += wa * (check(s[d][0], &q)? * ng[b][0] + check(s[d][1], &q)? * ng[b][1]);
                }
            }
        }
    }
    for i in 0..12 {
        for j in 0..12 {
            sk[i][j] += tr[i][j] - tr[j][i];
            kv[i][j] += sk[i][j];
        }
    }
    // Global numbering of the 12 velocity and 3 pressure local unknowns.
    let mut vel_global = [None; 12];
    let mut vel_value = [0.0; 12];
    for (a, &node) in nodes.iter().enumerate() {
        for c in 0..2 {
            if let Some(fx) = space.vel_fixed[node] {
                vel_value[2 * a + c] = fx[c];
            } else {
                vel_global[2 * a + c] = space.vel_dof[node].map(|i| 2 * i + c).filter(|&g| !(space.velocity_means && g < 2));
            }
        }
    }
    let po = space.pressure_offset();
    let pres_global: Vec<Option<usize>> =
        verts.iter().map(|&v| space.pres_dof[v].filter(|&k| k > 0).map(|k| po + k)).collect();
    for i in 0..12 {
        let Some(gi) = vel_global[i] else { continue };
        buf.rhs.push((gi, fl[i]));
        buf.load.push((gi, fl[i]));
        for j in 0..12 {
            match vel_global[j] {
                Some(gj) => {
                    buf.a.push((gi, gj, kv[i][j]));
                    buf.e.push((gi, gj, ke[i][j]));
                    buf.s.push((gi, gj, sk[i][j]));
                }
                None => buf.rhs.push((gi, -kv[i][j] * vel_value[j])),
            }
        }
        for k in 0..3 {
            if let Some(gk) = pres_global[k] {
                buf.a.push((gi, gk, bdiv[k][i]));
            }
        }
    }
    for k in 0..3 {
        let Some(gk) = pres_global[k] else { continue };
        for j in 0..12 {
            match vel_global[j] {
                Some(gj) => {
                    buf.a.push((gk, gj, bdiv[k][j]));
                    buf.d.push((gk, gj, bdiv[k][j]));
                }
                None => buf.rhs.push((gk, -bdiv[k][j] * vel_value[j])),
            }
        }
    }
    Ok(())
}

/// Velocity on P2 nodes and pressure on vertices.
#[derive(Clone)]
pub struct StokesField<'m> {
    pub mesh: &'m Mesh,
    pub nodes: Vec<[usize; 6]>,
    pub velocity: Vec<[f64; 2]>,
    pub pressure: Vec<f64>,
    pub active: Vec<bool>,
}

impl<'m> StokesField<'m> {
    pub fn velocity_at(&self, t: usize, l: &[f64; 3]) -> [f64; 2] {
        let n = p2_values(l);
        let mut u = [0.0; 2];
        for (a, &k) in self.nodes[t].iter().enumerate() {
            u[0] += n[a] * self.velocity[k][0];
            u[1] += n[a] * self.velocity[k][1];
        }
        u
    }

    /// `Du[i][j] = d u_i / d x_j`.
    pub fn gradient_at(&self, t: usize, l: &[f64; 3]) -> [[f64; 2]; 2] {
        let (g1, _) = p1_gradients(&self.mesh.triangle_points(t));
        let ng = p2_gradients(l, &g1);
        let mut du = [[0.0; 2]; 2];
        for (a, &k) in self.nodes[t].iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    du[i][j] += self.velocity[k][i] * ng[a][j];
                }
            }
        }
        du
    }

    pub fn pressure_at(&self, t: usize, l: &[f64; 3]) -> f64 {
        let tri = self.mesh.triangles[t];
        (0..3).map(|i| l[i] * self.pressure[tri[i]]).sum()
    }

    fn integrate(&self, keep: impl Fn(usize) -> bool, f: impl Fn(usize, &[f64; 3], Point) -> f64) -> f64 {
        let mut s = 0.0;
        for t in (0..self.mesh.num_triangles()).filter(|&t| keep(t)) {
            let p = self.mesh.triangle_points(t);
            let area = self.mesh.signed_area(t);
            for (l, w) in DEGREE5.points.iter().zip(DEGREE5.weights) {
                s += w * area * f(t, l, map_point(&p, l));
            }
        }
        s
    }

    /// `int |Du|^2` over the selected triangles.
    pub fn dirichlet_energy_on(&self, keep: impl Fn(usize) -> bool) -> f64 {
        self.integrate(keep, |t, l, _| {
            let d = self.gradient_at(t, l);
            d[0][0] * d[0][0] + d[0][1] * d[0][1] + d[1][0] * d[1][0] + d[1][1] * d[1][1]
        })
    }

    pub fn dirichlet_energy(&self) -> f64 {
        self.dirichlet_energy_on(|_| true)
    }

    pub fn velocity_integral_on(&self, keep: impl Fn(usize) -> bool) -> [f64; 2] {
        let a = self.integrate(&keep, |t, l, _| self.velocity_at(t, l)[0]);
        let b = self.integrate(&keep, |t, l, _| self.velocity_at(t, l)[1]);
        [a, b]
    }

    pub fn velocity_l2_sq_on(&self, keep: impl Fn(usize) -> bool) -> f64 {
        self.integrate(keep, |t, l, _| {
            let u = self.velocity_at(t, l);
            u[0] * u[0] + u[1] * u[1]
        })
    }

    pub fn velocity_l2_error(&self, exact: impl Fn(Point) -> [f64; 2]) -> f64 {
        self.integrate(|_| true, |t, l, x| {
            let u = self.velocity_at(t, l);
            let e = exact(x);
            (u[0] - e[0]).powi(2) + (u[1] - e[1]).powi(2)
        })
        .sqrt()
    }

    pub fn velocity_h1_error(&self, exact_grad: impl Fn(Point) -> [[f64; 2]; 2]) -> f64 {
        self.integrate(|_| true, |t, l, x| {
            let d = self.gradient_at(t, l);
            let e = exact_grad(x);
            (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (d[i][j] - e[i][j]).powi(2)).sum()
        })
        .sqrt()
    }

    pub fn pressure_l2_error(&self, exact: impl Fn(Point) -> f64) -> f64 {
        self.integrate(|t| self.active[t], |t, l, x| (self.pressure_at(t, l) - exact(x)).powi(2)).sqrt()
    }

    pub fn pressure_mean(&self) -> f64 {
        self.integrate(|t| self.active[t], |t, l, _| self.pressure_at(t, l))
    }

    pub fn write_vtk<W: Write>(&self, out: W) -> io::Result<()> {
        let nv = self.mesh.num_vertices();
        let ux: Vec<f64> = self.velocity[..nv].iter().map(|u| u[0]).collect();
        let uy: Vec<f64> = self.velocity[..nv].iter().map(|u| u[1]).collect();
        self.mesh.write_vtk(out, &[("u_x", &ux), ("u_y", &uy), ("p", &self.pressure)])
    }
}

#[derive(Clone)]
pub struct StokesSolution<'m> {
    pub field: StokesField<'m>,
    pub report: SolveReport,
    /// `|a_sym(u,u) - <f,u>| / |<f,u>|` over the free unknowns.
    pub energy_residual: f64,
    /// Euclidean norm of the discrete divergence defect `B u - g`.
    pub divergence_residual: f64,
    pub dofs: usize,
}

pub fn solve_system<'m>(system: StokesSystem<'m>, opts: &StokesOptions) -> Result<StokesSolution<'m>> {
    let (x, report) = if opts.direct {
        sparse_la::solve_direct(&system.matrix, &system.rhs)?
    } else {
        sparse_la::solve_general(&system.matrix, &system.rhs, opts.tol, opts.restart, opts.max_iter)?
    };
    Ok(finish(&system.space, &system.energy, &system.load, &system.divergence, &system.rhs, &x, report))
}

fn finish<'m>(
    space: &TaylorHood<'m>,
    energy: &CsrMatrix,
    load: &[f64],
    divergence: &CsrMatrix,
    rhs: &[f64],
    x: &[f64],
    report: SolveReport,
) -> StokesSolution<'m> {
    let nv = space.mesh.num_vertices();
    let mut velocity = vec![[0.0; 2]; space.num_nodes()];
    for (k, u) in velocity.iter_mut().enumerate() {
        if let Some(fx) = space.vel_fixed[k] {
            *u = fx;
        } else if let Some(i) = space.vel_dof[k] {
            *u = [x[2 * i], x[2 * i + 1]];
        }
    }
    let po = space.pressure_offset();
    let pressure: Vec<f64> = (0..nv).map(|v| space.pres_dof[v].map_or(0.0, |k| x[po + k])).collect();
    let mut ux = vec![0.0; x.len()];
    ux[..po].copy_from_slice(&x[..po]);
    let au = sparse_la::dot(&ux, &energy.matvec(&ux));
    let fu = sparse_la::dot(&ux, load);
    let energy_residual = if fu != 0.0 { (au - fu).abs() / fu.abs() } else { au.abs() };
    // Eliminated boundary data enters the pressure rows of the right-hand side.
    let bu = divergence.matvec(&ux);
    let divergence_residual = sparse_la::norm(&bu[po..].iter().zip(&rhs[po..]).map(|(a, b)| a - b).collect::<Vec<_>>());
    let nodes = (0..space.mesh.num_triangles()).map(|t| space.local_nodes(t)).collect();
    let mut field = StokesField { mesh: space.mesh, nodes, velocity, pressure, active: space.active.clone() };
    let area: f64 = (0..space.mesh.num_triangles()).filter(|&t| space.active[t]).map(|t| space.mesh.signed_area(t)).sum();
    let shift = field.pressure_mean() / area;
    for (v, p) in field.pressure.iter_mut().enumerate() {
        if space.pres_dof[v].is_some() {
            *p -= shift;
        }
    }
    if space.velocity_means {
        let m = field.velocity_integral_on(|_| true);
        for u in field.velocity.iter_mut() {
            u[0] -= m[0] / area;
            u[1] -= m[1] / area;
        }
    }
    StokesSolution {
        field,
        report,
        energy_residual,
        divergence_residual,
        dofs: x.len(),
    }
}

pub fn solve_stokes_problem<'m>(
    mesh: &'m Mesh,
    problem: &StokesProblem,
    opts: &StokesOptions,
) -> Result<StokesSolution<'m>> {
    solve_system(assemble_stokes(mesh, problem)?, opts)
}

/// `-Delta u + curl(v) J u + grad p = f`, `div u = 0`, `u = 0` on the boundary.
pub fn solve_perturbed<'m>(
    mesh: &'m Mesh,
    drift: DriftSpec,
    f: VectorField,
    opts: &StokesOptions,
) -> Result<StokesSolution<'m>> {
    let mut problem = StokesProblem::new(VelocityBc::NoSlip);
    problem.drift = drift;
    problem.force = Some(f);
    solve_stokes_problem(mesh, &problem, opts)
}

/// `-Delta u + c J u + grad p + G u = f`, `div u = 0`, `u = 0` on the boundary.
pub fn solve_brinkman<'m>(
    mesh: &'m Mesh,
    curl_const: f64,
    g: Matrix2<f64>,
    f: VectorField,
    opts: &StokesOptions,
) -> Result<StokesSolution<'m>> {
    solve_system(brinkman_system(mesh, curl_const, g, f)?, opts)
}

fn brinkman_system<'m>(mesh: &'m Mesh, curl_const: f64, g: Matrix2<f64>, f: VectorField) -> Result<StokesSystem<'m>> {
    let m = g + rotation() * curl_const;
    let coef = [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]];
    let zero = move |_: &QuadPoint| coef;
    let mut problem = StokesProblem::new(VelocityBc::NoSlip);
    problem.zero_order = Some(&zero);
    problem.force = Some(f);
    assemble_stokes(mesh, &problem)
}

/// Brinkman problems for many matrices `G` on one mesh and force: the system is affine
/// in `G`, so it is assembled once, and one factorization near the expected `G`
/// serves all solves through iterative refinement.
pub struct BrinkmanFamily<'m> {
    base: StokesSystem<'m>,
    matrix_parts: Vec<CsrMatrix>,
    energy_parts: Vec<CsrMatrix>,
    factor: sparse_la::DirectFactor,
    tol: f64,
}

impl<'m> BrinkmanFamily<'m> {
    pub fn new(mesh: &'m Mesh, curl_const: f64, f: VectorField, near: Matrix2<f64>, opts: &StokesOptions) -> Result<Self> {
        let base = brinkman_system(mesh, curl_const, Matrix2::zeros(), f)?;
        let mut matrix_parts = Vec::with_capacity(4);
        let mut energy_parts = Vec::with_capacity(4);
        for k in 0..4 {
            let mut e = Matrix2::zeros();
            e[(k / 2, k % 2)] = 1.0;
            let s = brinkman_system(mesh, curl_const, e, f)?;
            matrix_parts.push(s.matrix.add(1.0, &base.matrix, -1.0));
            energy_parts.push(s.energy.add(1.0, &base.energy, -1.0));
        }
        let mut family = BrinkmanFamily {
            factor: sparse_la::DirectFactor::new(&base.matrix)?,
            base,
            matrix_parts,
            energy_parts,
            tol: opts.tol.min(1e-12),
        };
        family.factor = sparse_la::DirectFactor::new(&family.combine(&near, true))?;
        Ok(family)
    }

    fn combine(&self, g: &Matrix2<f64>, matrix: bool) -> CsrMatrix {
        let (mut acc, parts) =
            if matrix { (self.base.matrix.clone(), &self.matrix_parts) } else { (self.base.energy.clone(), &self.energy_parts) };
        for (k, part) in parts.iter().enumerate() {
            let c = g[(k / 2, k % 2)];
            if c != 0.0 {
                acc = acc.add(1.0, part, c);
            }
        }
        acc
    }

    pub fn solve(&self, g: &Matrix2<f64>) -> Result<StokesSolution<'m>> {
        let a = self.combine(g, true);
        let (x, report) = match sparse_la::solve_refined(&a, &self.factor, &self.base.rhs, self.tol, 40) {
            Ok(done) => done,
            Err(sparse_la::SolverError::NotConverged { .. }) => sparse_la::solve_direct(&a, &self.base.rhs)?,
            Err(e) => return Err(e.into()),
        };
        let energy = self.combine(g, false);
        Ok(finish(&self.base.space, &energy, &self.base.load, &self.base.divergence, &self.base.rhs, &x, report))
    }
}

/// Cell function `V^i`: `e_i` on the core, zero on the outer circle, Stokes flow
/// in the annulus. Returns the solution and `int |DV|^2`.
pub fn solve_cell_v<'m>(mesh: &'m Mesh, i: usize, opts: &StokesOptions) -> Result<(StokesSolution<'m>, f64)> {
    if i > 1 {
        return Err(FemError::Input(format!("cell direction {i}")));
    }
    let inner = mesh
        .circles
        .iter()
        .map(|c| c.radius)
        .fold(f64::INFINITY, f64::min);
    let outer = mesh.circles.iter().map(|c| c.radius).fold(0.0, f64::max);
    if mesh.circles.len() < 2 || !(inner < outer) {
        return Err(FemError::Input("cell V needs a disk mesh with an inner circle".into()));
    }
    let split = 0.5 * (inner + outer);
    let data = move |x: Point| {
        if x[0].hypot(x[1]) < split {
            let mut e = [0.0; 2];
            e[i] = 1.0;
            e
        } else {
            [0.0; 2]
        }
    };
    let annulus = |t: usize| mesh.subdomains[t] == SubdomainTag::Annulus;
    let mut problem = StokesProblem::new(VelocityBc::Prescribed(&data));
    problem.active = Some(&annulus);
    let sol = solve_stokes_problem(mesh, &problem, opts)?;
    let gamma = sol.field.dirichlet_energy_on(|t| mesh.subdomains[t] == SubdomainTag::Annulus);
    Ok((sol, gamma))
}

/// Output of the periodic concentrated cell problem.
pub struct WsharpResult<'m> {
    pub solution: StokesSolution<'m>,
    /// `eps` times the average of `W` over the core.
    pub wbar: Vector2<f64>,
    /// `(1/4) (J wbar) . lambda`.
    pub m_quadratic: f64,
    /// `int |DW|^2` and `-eps avg_core (J lambda . W)`.
    pub energy: f64,
    pub forcing: f64,
}

/// `-Delta W + eps (1_core/|core| - 1/|Y|) J lambda + grad Q = 0`, `div W = 0`,
/// periodic with zero-mean velocity. `|Y|` is the cell area (4 on `(-1,1)^2`).
pub fn solve_cell_wsharp<'m>(
    mesh: &'m Mesh,
    eps: f64,
    lambda: Vector2<f64>,
    opts: &StokesOptions,
) -> Result<WsharpResult<'m>> {
    let period = mesh.period.ok_or_else(|| FemError::Input("W cell needs a periodic mesh".into()))?;
    let cell_area = period[0] * period[1];
    let core = mesh.subdomain_area(SubdomainTag::DiskCore);
    if !(core > 0.0) {
        return Err(FemError::Input("W cell mesh has no core".into()));
    }
    let jl = rotation() * lambda;
    let force = move |q: &QuadPoint| {
        let ind = if q.tag == SubdomainTag::DiskCore { 1.0 / core } else { 0.0 };
        let s = -eps * (ind - 1.0 / cell_area);
        [s * jl[0], s * jl[1]]
    };
    let mut problem = StokesProblem::new(VelocityBc::Periodic);
    problem.force = Some(&force);
    let solution = solve_stokes_problem(mesh, &problem, opts)?;
    let in_core = |t: usize| mesh.subdomains[t] == SubdomainTag::DiskCore;
    let w_core = solution.field.velocity_integral_on(in_core);
    let wbar = Vector2::new(w_core[0], w_core[1]) * (eps / core);
    let m_quadratic = 0.25 * (rotation() * wbar).dot(&lambda);
    let energy = solution.field.dirichlet_energy();
    let forcing = -jl.dot(&wbar);
    Ok(WsharpResult { solution, wbar, m_quadratic, energy, forcing })
}

/// Periodic `-Delta w + Div(v (x) lambda) + grad q = 0`; returns the solution and
/// the cell average of `(Dw)^T v`.
pub fn solve_cell_w_smooth<'m>(
    mesh: &'m Mesh,
    v: VectorField,
    lambda: Vector2<f64>,
    opts: &StokesOptions,
) -> Result<(StokesSolution<'m>, Vector2<f64>)> {
    let period = mesh.period.ok_or_else(|| FemError::Input("smooth cell needs a periodic mesh".into()))?;
    // Weak form: int Dw : D phi - int q div phi = int (v (x) lambda) : D phi.
    let stress = move |q: &QuadPoint| {
        let vv = v(q);
        [[vv[0] * lambda[0], vv[0] * lambda[1]], [vv[1] * lambda[0], vv[1] * lambda[1]]]
    };
    let mut problem = StokesProblem::new(VelocityBc::Periodic);
    problem.stress = Some(&stress);
    let sol = solve_stokes_problem(mesh, &problem, opts)?;
    let mut m = Vector2::zeros();
    for t in 0..mesh.num_triangles() {
        let p = mesh.triangle_points(t);
        let area = mesh.signed_area(t);
        for (l, w) in DEGREE5.points.iter().zip(DEGREE5.weights) {
            let q = QuadPoint { x: map_point(&p, l), tag: mesh.subdomains[t], triangle: t };
            let vv = v(&q);
            let d = sol.field.gradient_at(t, l);
            for j in 0..2 {
                m[j] += w * area * (d[0][j] * vv[0] + d[1][j] * vv[1]);
            }
        }
    }
    Ok((sol, m / (period[0] * period[1])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::structured_square;

    #[test]
    fn smooth_drift_cancels_on_diagonal() {
        let mesh = structured_square(4, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let v = |q: &QuadPoint| [(6.0 * q.x[1]).cos(), q.x[0] * q.x[1]];
        let mut problem = StokesProblem::new(VelocityBc::NoSlip);
        problem.drift = DriftSpec::Smooth(&v);
        let with = assemble_stokes(&mesh, &problem).unwrap();
        let without = assemble_stokes(&mesh, &StokesProblem::new(VelocityBc::NoSlip)).unwrap();
        for (i, j, x) in with.drift.triplets() {
            assert_eq!(x, -with.drift.get(j, i), "({i},{j})");
        }
        assert_eq!(without.drift.max_abs(), 0.0);
        let diff = with.matrix.add(1.0, &without.matrix, -1.0).add(1.0, &with.drift, -1.0);
        assert!(diff.max_abs() < 1e-14);
    }

    #[test]
    fn plain_stokes_driven_flow_energy() {
        let mesh = structured_square(6, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let f = |q: &QuadPoint| [-(q.x[1] - 0.5), q.x[0] - 0.5];
        let sol = solve_perturbed(&mesh, DriftSpec::None, &f, &StokesOptions::default()).unwrap();
        assert!(sol.energy_residual < 1e-10, "{}", sol.energy_residual);
        assert!(sol.divergence_residual < 1e-10);
        assert!(sol.field.pressure_mean().abs() < 1e-10);
    }

    #[test]
    fn periodic_smooth_cell_matches_fourier_oracle() {
        let eps = 1.0;
        let mesh = structured_square(8, [0.0, 0.0], [eps, eps], true).unwrap();
        let v = move |q: &QuadPoint| [(2.0 * std::f64::consts::PI * q.x[1] / eps).cos(), 0.0];
        let (_, m) = solve_cell_w_smooth(&mesh, &v, Vector2::new(0.0, 1.0), &StokesOptions::default()).unwrap();
        assert!((m[1] - 0.5).abs() < 0.01 && m[0].abs() < 1e-8, "{m}");
    }
}
