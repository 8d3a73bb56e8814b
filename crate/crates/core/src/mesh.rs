//! Deterministic triangulations: structured squares, graded disks, periodic
//! cells with concentric circles, and whole-cell perforated lattices.
//!
//! Circles are inscribed polygons whose vertices lie exactly on the circle,
//! and every triangle carries a [`SubdomainTag`] so that coefficients
//! supported on disks or annuli are evaluated by tag, not by point tests.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::closed_form::AnnulusSpec;

pub type Point = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("grading cannot span the annulus: {0}")]
    Grading(String),
    #[error("periodic pairing failed: {0}")]
    Pairing(String),
    #[error("unresolvable geometry: {0}")]
    Resolution(String),
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MeshError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubdomainTag {
    DiskCore,
    Annulus,
    Exterior,
}

impl SubdomainTag {
    pub fn code(self) -> u8 {
        match self {
            SubdomainTag::DiskCore => 0,
            SubdomainTag::Annulus => 1,
            SubdomainTag::Exterior => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Outer,
    InnerCircle,
    SideLeft,
    SideRight,
    SideTop,
    SideBottom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

/// Placement of a whole-cell tiling: cell `(i, j)` covers
/// `lower + pitch * [i, i+1] x [j, j+1]` and is the image of `(-h, h)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub lower: Point,
    pub pitch: f64,
    pub half_width: f64,
    pub cells: [usize; 2],
}

impl Lattice {
    /// Center of the cell containing `x`.
    pub fn cell_center(&self, x: Point) -> Point {
        let mut c = [0.0; 2];
        for d in 0..2 {
            let i = ((x[d] - self.lower[d]) / self.pitch).floor().clamp(0.0, (self.cells[d] - 1) as f64);
            c[d] = self.lower[d] + (i + 0.5) * self.pitch;
        }
        c
    }

    /// Physical length per unit of cell coordinate.
    pub fn scale(&self) -> f64 {
        self.pitch / (2.0 * self.half_width)
    }

    /// Cell coordinates of `x` relative to the cell center `center`.
    pub fn to_cell(&self, x: Point, center: Point) -> Point {
        let s = self.scale();
        [(x[0] - center[0]) / s, (x[1] - center[1]) / s]
    }
}

/// Radial grading of the rings between an inner circle and an outer one.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradingSpec {
    /// Upper bound on the number of geometric rings.
    pub layers: usize,
    /// Ring radius growth factor.
    pub ratio: f64,
    /// Far-field element size, in the coordinates of the mesh being built.
    pub target_h: f64,
}

impl Default for GradingSpec {
    fn default() -> Self {
        GradingSpec { layers: 64, ratio: 1.3, target_h: 0.05 }
    }
}

impl GradingSpec {
    fn check(&self) -> Result<()> {
        if self.layers == 0 || !(self.ratio > 1.0) || !(self.target_h > 0.0) {
            return Err(MeshError::Argument(format!("bad grading {self:?}")));
        }
        Ok(())
    }

    /// Ring radii from `inner` to `outer` (both included).
    pub fn ring_radii(&self, inner: f64, outer: f64) -> Result<Vec<f64>> {
        self.check()?;
        let needed = ((outer / inner).ln() / self.ratio.ln()).ceil() as usize;
        if (self.layers as f64) * self.ratio.ln() < (outer / inner).ln() * (1.0 - 1e-12) {
            return Err(MeshError::Grading(format!(
                "{} layers of ratio {} reach {:.3e}, need {needed} to span {inner:.3e}..{outer:.3e}",
                self.layers,
                self.ratio,
                inner * self.ratio.powi(self.layers as i32)
            )));
        }
        let mut radii = vec![inner];
        loop {
            let r = *radii.last().unwrap();
            let next = (r * self.ratio).min(r + self.target_h);
            if next >= outer * (1.0 - 1e-12) {
                break;
            }
            radii.push(next);
        }
        // Merge a thin last ring into its neighbour.
        if radii.len() >= 2 {
            let n = radii.len();
            let last_gap = outer - radii[n - 1];
            let prev_gap = radii[n - 1] - radii[n - 2];
            if last_gap < 0.3 * prev_gap {
                radii.pop();
            }
        }
        radii.push(outer);
        Ok(radii)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub subdomains: Vec<SubdomainTag>,
    pub edge_tags: Vec<([usize; 2], BoundaryTag)>,
    /// `(slave, master)` vertex pairs.
    pub periodic_pairs: Vec<(usize, usize)>,
    /// Period lengths along x and y, when the mesh is periodic.
    pub period: Option<[f64; 2]>,
    pub circles: Vec<Circle>,
    pub lattice: Option<Lattice>,
}

/// Unique edges and the triangle-to-edge map; local edge `l` joins local
/// vertices `l` and `(l + 1) % 3`.
#[derive(Debug, Clone)]
pub struct EdgeTopology {
    pub edges: Vec<[usize; 2]>,
    pub tri_edges: Vec<[usize; 3]>,
    /// Number of triangles sharing each edge.
    pub multiplicity: Vec<u8>,
}

impl Mesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        signed_area(self.triangle_points(t))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let p = self.triangle_points(t);
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.signed_area(t)).sum()
    }

    pub fn subdomain_area(&self, tag: SubdomainTag) -> f64 {
        (0..self.num_triangles()).filter(|&t| self.subdomains[t] == tag).map(|t| self.signed_area(t)).sum()
    }

    pub fn edge_topology(&self) -> EdgeTopology {
        let mut index: HashMap<[usize; 2], usize> = HashMap::with_capacity(self.triangles.len() * 2);
        let mut edges = Vec::new();
        let mut multiplicity = Vec::new();
        let mut tri_edges = Vec::with_capacity(self.triangles.len());
        for tri in &self.triangles {
            let mut te = [0; 3];
            for l in 0..3 {
                let (a, b) = (tri[l], tri[(l + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                let id = *index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    multiplicity.push(0u8);
                    edges.len() - 1
                });
                multiplicity[id] = multiplicity[id].saturating_add(1);
                te[l] = id;
            }
            tri_edges.push(te);
        }
        EdgeTopology { edges, tri_edges, multiplicity }
    }

    /// Vertices on edges owned by a single triangle.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let topo = self.edge_topology();
        let mut on = vec![false; self.num_vertices()];
        for (e, &m) in topo.edges.iter().zip(&topo.multiplicity) {
            if m == 1 {
                on[e[0]] = true;
                on[e[1]] = true;
            }
        }
        on
    }

    pub fn edge_length_range(&self) -> (f64, f64) {
        let topo = self.edge_topology();
        topo.edges.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), e| {
            let l = dist(self.vertices[e[0]], self.vertices[e[1]]);
            (lo.min(l), hi.max(l))
        })
    }

    pub fn h_min(&self) -> f64 {
        self.edge_length_range().0
    }

    pub fn h_max(&self) -> f64 {
        self.edge_length_range().1
    }

    /// Red refinement: every triangle splits into four through its edge midpoints.
    /// Midpoints of chords of a tagged circle are pushed onto the circle.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        if self.period.is_some() || !self.periodic_pairs.is_empty() {
            return Err(MeshError::Argument("uniform refinement of periodic meshes".into()));
        }
        let topo = self.edge_topology();
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        let mut index = HashMap::with_capacity(topo.edges.len());
        for (e, &[a, b]) in topo.edges.iter().enumerate() {
            let (p, q) = (self.vertices[a], self.vertices[b]);
            let mut m = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            let on = |x: Point, c: &Circle| ((x[0] - c.center[0]).hypot(x[1] - c.center[1]) - c.radius).abs() <= 1e-10 * c.radius.max(1.0);
            if let Some(c) = self.circles.iter().find(|c| on(p, c) && on(q, c)) {
                let d = (m[0] - c.center[0]).hypot(m[1] - c.center[1]);
                m = [c.center[0] + (m[0] - c.center[0]) * c.radius / d, c.center[1] + (m[1] - c.center[1]) * c.radius / d];
            }
            vertices.push(m);
            index.insert([a.min(b), a.max(b)], nv + e);
        }
        let mid = |a: usize, b: usize| index[&[a.min(b), a.max(b)]];
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut subdomains = Vec::with_capacity(4 * self.triangles.len());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
            triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            subdomains.extend([self.subdomains[t]; 4]);
        }
        let edge_tags = self
            .edge_tags
            .iter()
            .flat_map(|&([a, b], tag)| {
                let m = mid(a, b);
                [([a, m], tag), ([m, b], tag)]
            })
            .collect();
        let mesh = Mesh {
            vertices,
            triangles,
            subdomains,
            edge_tags,
            periodic_pairs: Vec::new(),
            period: None,
            circles: self.circles.clone(),
            lattice: self.lattice,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Checks orientation, edge manifoldness, circle conformity and periodic congruence.
    pub fn validate(&self) -> Result<()> {
        if self.subdomains.len() != self.triangles.len() {
            return Err(MeshError::Invalid("subdomain tags do not match triangles".into()));
        }
        for t in 0..self.num_triangles() {
            let a = self.signed_area(t);
            if !(a > 0.0) {
                return Err(MeshError::Invalid(format!("triangle {t} has signed area {a:e}")));
            }
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for l in 0..3 {
                let key = (tri[l], tri[(l + 1) % 3]);
                let c = directed.entry(key).or_insert(0);
                *c += 1;
                if *c > 1 {
                    return Err(MeshError::Invalid(format!("directed edge {key:?} repeated")));
                }
            }
        }
        for circle in &self.circles {
            let tol = 1e-12 * circle.radius.max(1.0);
            for (t, tri) in self.triangles.iter().enumerate() {
                let d: Vec<f64> = tri.iter().map(|&v| dist(self.vertices[v], circle.center) - circle.radius).collect();
                let inside = d.iter().all(|&x| x <= tol);
                let outside = d.iter().all(|&x| x >= -tol);
                if !inside && !outside {
                    return Err(MeshError::Invalid(format!("triangle {t} crosses circle {circle:?}")));
                }
            }
        }
        if !self.periodic_pairs.is_empty() {
            let period = self.period.ok_or_else(|| MeshError::Invalid("periodic pairs without period".into()))?;
            for &(s, m) in &self.periodic_pairs {
                if s == m {
                    return Err(MeshError::Invalid(format!("vertex {s} paired with itself")));
                }
                let d = [self.vertices[s][0] - self.vertices[m][0], self.vertices[s][1] - self.vertices[m][1]];
                let ok = [0.0, period[0]].iter().any(|&px| (d[0] - px).abs() <= 1e-12 * period[0].max(1.0))
                    && [0.0, period[1]].iter().any(|&py| (d[1] - py).abs() <= 1e-12 * period[1].max(1.0))
                    && (d[0] != 0.0 || d[1] != 0.0);
                if !ok {
                    return Err(MeshError::Invalid(format!("pair ({s},{m}) offset {d:?} is not a period")));
                }
            }
        }
        Ok(())
    }

    /// `vertices N triangles M`, one `x y` line per vertex, one `i j k tag` line per triangle.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "vertices {} triangles {}", self.num_vertices(), self.num_triangles())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", v[0], v[1])?;
        }
        for (tri, tag) in self.triangles.iter().zip(&self.subdomains) {
            writeln!(out, "{} {} {} {}", tri[0], tri[1], tri[2], tag.code())?;
        }
        Ok(())
    }

    /// Legacy ASCII VTK with optional point data.
    pub fn write_vtk<W: Write>(&self, mut out: W, point_data: &[(&str, &[f64])]) -> io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0\nhomog mesh\nASCII\nDATASET UNSTRUCTURED_GRID");
        let _ = writeln!(s, "POINTS {} double", self.num_vertices());
        for v in &self.vertices {
            let _ = writeln!(s, "{} {} 0", v[0], v[1]);
        }
        let _ = writeln!(s, "CELLS {} {}", self.num_triangles(), 4 * self.num_triangles());
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "CELL_TYPES {}", self.num_triangles());
        for _ in &self.triangles {
            let _ = writeln!(s, "5");
        }
        let _ = writeln!(s, "CELL_DATA {}\nSCALARS subdomain int 1\nLOOKUP_TABLE default", self.num_triangles());
        for tag in &self.subdomains {
            let _ = writeln!(s, "{}", tag.code());
        }
        if !point_data.is_empty() {
            let _ = writeln!(s, "POINT_DATA {}", self.num_vertices());
            for (name, values) in point_data {
                let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for v in values.iter().take(self.num_vertices()) {
                    let _ = writeln!(s, "{v}");
                }
            }
        }
        out.write_all(s.as_bytes())
    }
}

pub fn signed_area(p: [Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Default)]
struct Builder {
    mesh: Mesh,
}

impl Builder {
    fn vertex(&mut self, p: Point) -> usize {
        self.mesh.vertices.push(p);
        self.mesh.vertices.len() - 1
    }

    fn triangle(&mut self, mut t: [usize; 3], tag: SubdomainTag) {
        let v = &self.mesh.vertices;
        if signed_area([v[t[0]], v[t[1]], v[t[2]]]) < 0.0 {
            t.swap(1, 2);
        }
        self.mesh.triangles.push(t);
        self.mesh.subdomains.push(tag);
    }

    /// Splits quad `a b c d` (cyclic) along its shorter diagonal.
    fn quad(&mut self, q: [usize; 4], tag: SubdomainTag) {
        let v = &self.mesh.vertices;
        if dist(v[q[0]], v[q[2]]) <= dist(v[q[1]], v[q[3]]) * (1.0 + 1e-9) {
            self.triangle([q[0], q[1], q[2]], tag);
            self.triangle([q[0], q[2], q[3]], tag);
        } else {
            self.triangle([q[0], q[1], q[3]], tag);
            self.triangle([q[1], q[2], q[3]], tag);
        }
    }

    fn loop_vertices(&mut self, points: &[Point]) -> Vec<usize> {
        points.iter().map(|&p| self.vertex(p)).collect()
    }

    /// Quad ring between two closed loops with equal point counts.
    fn ring(&mut self, inner: &[usize], outer: &[usize], tag: SubdomainTag) {
        let m = inner.len();
        for j in 0..m {
            let k = (j + 1) % m;
            self.quad([inner[j], inner[k], outer[k], outer[j]], tag);
        }
    }

    /// Transition ring between `m/2` inner points and `m` outer points.
    fn halving_ring(&mut self, inner: &[usize], outer: &[usize], tag: SubdomainTag) {
        let h = inner.len();
        debug_assert_eq!(outer.len(), 2 * h);
        for i in 0..h {
            let (i0, i1) = (inner[i], inner[(i + 1) % h]);
            let (o0, o1, o2) = (outer[2 * i], outer[2 * i + 1], outer[(2 * i + 2) % (2 * h)]);
            self.triangle([i0, o0, o1], tag);
            self.triangle([o1, o2, i1], tag);
            self.triangle([i0, o1, i1], tag);
        }
    }

    fn tag_loop_edges(&mut self, lp: &[usize], tag: BoundaryTag) {
        let m = lp.len();
        for j in 0..m {
            self.mesh.edge_tags.push(([lp[j], lp[(j + 1) % m]], tag));
        }
    }
}

/// Points of a circle loop starting at angle -pi/4 (the lower-right diagonal).
fn circle_loop(center: Point, radius: f64, m: usize) -> Vec<Point> {
    (0..m)
        .map(|j| {
            let th = -PI / 4.0 + 2.0 * PI * j as f64 / m as f64;
            [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
        })
        .collect()
}

/// Coordinate of grid line `i` of `k` on `[-h, h]`; shared by opposite sides.
fn level(h: f64, k: usize, i: usize) -> f64 {
    -h + (2.0 * h) * (i as f64) / (k as f64)
}

/// Square loop of `4k` points, counterclockwise from the lower-right corner.
fn square_loop(h: f64, k: usize) -> Vec<Point> {
    let mut pts = Vec::with_capacity(4 * k);
    for t in 0..k {
        pts.push([h, level(h, k, t)]);
    }
    for t in 0..k {
        pts.push([level(h, k, k - t), h]);
    }
    for t in 0..k {
        pts.push([-h, level(h, k, k - t)]);
    }
    for t in 0..k {
        pts.push([level(h, k, t), -h]);
    }
    pts
}

fn blend(a: &[Point], b: &[Point], t: f64) -> Vec<Point> {
    a.iter().zip(b).map(|(p, q)| [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]).collect()
}

/// Angular segment count: a multiple of 16, at least 96, so that the inscribed
/// polygon loses less than 0.1% of the disk area.
fn angular_segments(perimeter: f64, target_h: f64) -> usize {
    let m = (perimeter / target_h).ceil().max(96.0) as usize;
    m.div_ceil(16) * 16
}

/// Fills the disk of radius `r` centered at the origin; returns the outer loop.
fn fill_core(b: &mut Builder, r: f64, m: usize, tag: SubdomainTag) -> Vec<usize> {
    let kc = m / 16;
    let s0 = 0.25 * r;
    // Central kc x kc grid.
    let mut grid = vec![vec![0usize; kc + 1]; kc + 1];
    for (j, row) in grid.iter_mut().enumerate() {
        for (i, slot) in row.iter_mut().enumerate() {
            *slot = b.vertex([level(s0, kc, i), level(s0, kc, j)]);
        }
    }
    for j in 0..kc {
        for i in 0..kc {
            b.quad([grid[j][i], grid[j][i + 1], grid[j + 1][i + 1], grid[j + 1][i]], tag);
        }
    }
    // Its boundary in square_loop order.
    let mut sq = Vec::with_capacity(4 * kc);
    for t in 0..kc {
        sq.push(grid[t][kc]);
    }
    for t in 0..kc {
        sq.push(grid[kc][kc - t]);
    }
    for t in 0..kc {
        sq.push(grid[kc - t][0]);
    }
    for t in 0..kc {
        sq.push(grid[0][t]);
    }
    let c1 = b.loop_vertices(&circle_loop([0.0, 0.0], 0.5 * r, m / 4));
    b.ring(&sq, &c1, tag);
    let c2 = b.loop_vertices(&circle_loop([0.0, 0.0], 0.68 * r, m / 2));
    b.halving_ring(&c1, &c2, tag);
    let c3 = b.loop_vertices(&circle_loop([0.0, 0.0], 0.84 * r, m));
    b.halving_ring(&c2, &c3, tag);
    let c4 = b.loop_vertices(&circle_loop([0.0, 0.0], r, m));
    b.ring(&c3, &c4, tag);
    c4
}

fn annulus_rings(b: &mut Builder, start: Vec<usize>, radii: &[f64], m: usize, tag: SubdomainTag) -> Vec<usize> {
    let mut prev = start;
    for &r in &radii[1..] {
        let next = b.loop_vertices(&circle_loop([0.0, 0.0], r, m));
        b.ring(&prev, &next, tag);
        prev = next;
    }
    prev
}

/// Structured `n x n` square split into `2 n^2` congruent right triangles.
pub fn structured_square(n: usize, lower: Point, upper: Point, periodic: bool) -> Result<Mesh> {
    if n < 2 || !(upper[0] > lower[0] && upper[1] > lower[1]) {
        return Err(MeshError::Argument(format!("structured square n={n}, box {lower:?}..{upper:?}")));
    }
    let mut b = Builder::default();
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    for j in 0..=n {
        for i in 0..=n {
            let x = lower[0] + (upper[0] - lower[0]) * (i as f64) / (n as f64);
            let y = lower[1] + (upper[1] - lower[1]) * (j as f64) / (n as f64);
            b.vertex([x, y]);
        }
    }
    for j in 0..n {
        for i in 0..n {
            let (a, bb, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            b.triangle([a, bb, c], SubdomainTag::Exterior);
            b.triangle([a, c, d], SubdomainTag::Exterior);
        }
    }
    for t in 0..n {
        b.mesh.edge_tags.push(([idx(t, 0), idx(t + 1, 0)], BoundaryTag::SideBottom));
        b.mesh.edge_tags.push(([idx(n, t), idx(n, t + 1)], BoundaryTag::SideRight));
        b.mesh.edge_tags.push(([idx(t, n), idx(t + 1, n)], BoundaryTag::SideTop));
        b.mesh.edge_tags.push(([idx(0, t), idx(0, t + 1)], BoundaryTag::SideLeft));
    }
    let mut mesh = b.mesh;
    if periodic {
        for t in 1..n {
            mesh.periodic_pairs.push((idx(n, t), idx(0, t)));
            mesh.periodic_pairs.push((idx(t, n), idx(t, 0)));
        }
        for corner in [idx(n, 0), idx(n, n), idx(0, n)] {
            mesh.periodic_pairs.push((corner, idx(0, 0)));
        }
        mesh.period = Some([upper[0] - lower[0], upper[1] - lower[1]]);
    }
    Ok(mesh)
}

/// Graded disk of radius `outer`, optionally conforming to an inner circle.
pub fn disk_cell(outer: f64, grading: &GradingSpec, inner: Option<f64>) -> Result<Mesh> {
    grading.check()?;
    if !(outer > 0.0) {
        return Err(MeshError::Argument(format!("disk radius {outer}")));
    }
    let m = angular_segments(2.0 * PI * outer, grading.target_h);
    let mut b = Builder::default();
    match inner {
        None => {
            let lp = fill_core(&mut b, outer, m, SubdomainTag::DiskCore);
            b.tag_loop_edges(&lp, BoundaryTag::Outer);
            b.mesh.circles.push(Circle { center: [0.0, 0.0], radius: outer });
        }
        Some(ri) => {
            if !(ri > 0.0 && ri < outer) {
                return Err(MeshError::Argument(format!("inner radius {ri} not in (0, {outer})")));
            }
            let radii = grading.ring_radii(ri, outer)?;
            let core = fill_core(&mut b, ri, m, SubdomainTag::DiskCore);
            b.tag_loop_edges(&core, BoundaryTag::InnerCircle);
            let lp = annulus_rings(&mut b, core, &radii, m, SubdomainTag::Annulus);
            b.tag_loop_edges(&lp, BoundaryTag::Outer);
            b.mesh.circles.push(Circle { center: [0.0, 0.0], radius: ri });
            b.mesh.circles.push(Circle { center: [0.0, 0.0], radius: outer });
        }
    }
    Ok(b.mesh)
}

/// Smallest `a * 2^j >= max(need, 24)` with `a` in `{16, 20, 24, 28}`, as `(a, 2^j)`.
/// The set is closed under doubling, so halving the target size doubles the count.
fn side_segments(need: f64) -> (usize, usize) {
    let need = need.max(24.0);
    let mut scale = 1usize;
    loop {
        for a in [16, 20, 24, 28] {
            if (a * scale) as f64 >= need {
                return (a, scale);
            }
        }
        scale *= 2;
    }
}

fn cell_geometry(annulus: &AnnulusSpec, half_width: f64, grading: &GradingSpec) -> Result<Mesh> {
    grading.check()?;
    if !(annulus.inner > 0.0 && annulus.inner < annulus.outer && annulus.outer < half_width) {
        return Err(MeshError::Argument(format!(
            "cell needs 0 < r_eps < R < half_width, got {annulus:?}, half_width={half_width}"
        )));
    }
    let (base, scale) = side_segments(2.0 * half_width / grading.target_h);
    let k = base * scale;
    let m = 4 * k;
    let radii = grading.ring_radii(annulus.inner, annulus.outer)?;
    let mut b = Builder::default();
    let core = fill_core(&mut b, annulus.inner, m, SubdomainTag::DiskCore);
    let outer_circle = annulus_rings(&mut b, core, &radii, m, SubdomainTag::Annulus);
    let circle_pts: Vec<Point> = outer_circle.iter().map(|&v| b.mesh.vertices[v]).collect();
    let square_pts = square_loop(half_width, k);
    let spacing = 0.5 * (2.0 * PI * annulus.outer / m as f64 + 2.0 * half_width / k as f64);
    let layers = (((half_width - annulus.outer) / (spacing * scale as f64)).round() as usize).max(1) * scale;
    let mut prev = outer_circle;
    for l in 1..=layers {
        let pts = if l == layers { square_pts.clone() } else { blend(&circle_pts, &square_pts, l as f64 / layers as f64) };
        let next = b.loop_vertices(&pts);
        b.ring(&prev, &next, SubdomainTag::Exterior);
        prev = next;
    }
    for t in 0..k {
        let side = |s: usize| [prev[s * k + t], prev[(s * k + t + 1) % m]];
        b.mesh.edge_tags.push((side(0), BoundaryTag::SideRight));
        b.mesh.edge_tags.push((side(1), BoundaryTag::SideTop));
        b.mesh.edge_tags.push((side(2), BoundaryTag::SideLeft));
        b.mesh.edge_tags.push((side(3), BoundaryTag::SideBottom));
    }
    b.mesh.circles.push(Circle { center: [0.0, 0.0], radius: annulus.inner });
    b.mesh.circles.push(Circle { center: [0.0, 0.0], radius: annulus.outer });
    Ok(b.mesh)
}

/// Periodic square cell `(-h, h)^2` resolving the circles `r_eps` and `R`.
pub fn periodic_cell(annulus: &AnnulusSpec, half_width: f64, grading: &GradingSpec) -> Result<Mesh> {
    let mut mesh = cell_geometry(annulus, half_width, grading)?;
    let h = half_width;
    let key = |p: Point| ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits());
    let mut by_pos = HashMap::new();
    for (i, p) in mesh.vertices.iter().enumerate() {
        if p[0].abs() == h || p[1].abs() == h {
            by_pos.insert(key(*p), i);
        }
    }
    let mut pairs = Vec::new();
    for (i, p) in mesh.vertices.iter().enumerate() {
        if !(p[0] == h || p[1] == h) {
            continue;
        }
        let target = [if p[0] == h { -h } else { p[0] }, if p[1] == h { -h } else { p[1] }];
        match by_pos.get(&key(target)) {
            Some(&m) => pairs.push((i, m)),
            None => return Err(MeshError::Pairing(format!("no image of boundary vertex {p:?}"))),
        }
    }
    pairs.sort_unstable();
    mesh.periodic_pairs = pairs;
    mesh.period = Some([2.0 * h, 2.0 * h]);
    Ok(mesh)
}

/// Whole-cell tiling of the box `lower..upper` by cells of side `pitch`, each
/// the image of the periodic cell `(-h, h)^2` with the given annulus.
pub fn perforated_lattice(
    lower: Point,
    upper: Point,
    pitch: f64,
    annulus: &AnnulusSpec,
    half_width: f64,
    grading: &GradingSpec,
) -> Result<Mesh> {
    if !(pitch > 0.0 && upper[0] > lower[0] && upper[1] > lower[1]) {
        return Err(MeshError::Argument(format!("lattice pitch {pitch}, box {lower:?}..{upper:?}")));
    }
    let mut cells = [0usize; 2];
    for d in 0..2 {
        let len = upper[d] - lower[d];
        let n = (len / pitch).round();
        if n < 1.0 || (n * pitch - len).abs() > 1e-12 * len.max(1.0) {
            return Err(MeshError::Argument(format!("pitch {pitch} does not divide side length {len}")));
        }
        cells[d] = n as usize;
    }
    let scale = pitch / (2.0 * half_width);
    if annulus.inner * scale < 1e-7 * pitch {
        return Err(MeshError::Resolution(format!(
            "physical inner radius {:e} below 1e-7 * pitch",
            annulus.inner * scale
        )));
    }
    let cell = cell_geometry(annulus, half_width, grading)?;
    let mut mesh = Mesh::default();
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut local = vec![0usize; cell.num_vertices()];
    for cj in 0..cells[1] {
        for ci in 0..cells[0] {
            for (v, p) in cell.vertices.iter().enumerate() {
                let x = lower[0] + (ci as f64 + (p[0] + half_width) / (2.0 * half_width)) * pitch;
                let y = lower[1] + (cj as f64 + (p[1] + half_width) / (2.0 * half_width)) * pitch;
                let on_side = p[0].abs() == half_width || p[1].abs() == half_width;
                local[v] = if on_side {
                    *index.entry(((x + 0.0).to_bits(), (y + 0.0).to_bits())).or_insert_with(|| {
                        mesh.vertices.push([x, y]);
                        mesh.vertices.len() - 1
                    })
                } else {
                    mesh.vertices.push([x, y]);
                    mesh.vertices.len() - 1
                };
            }
            for (t, tag) in cell.triangles.iter().zip(&cell.subdomains) {
                mesh.triangles.push([local[t[0]], local[t[1]], local[t[2]]]);
                mesh.subdomains.push(*tag);
            }
            for (e, tag) in &cell.edge_tags {
                let outer = match tag {
                    BoundaryTag::SideLeft => ci == 0,
                    BoundaryTag::SideRight => ci + 1 == cells[0],
                    BoundaryTag::SideBottom => cj == 0,
                    BoundaryTag::SideTop => cj + 1 == cells[1],
                    _ => false,
                };
                if outer {
                    mesh.edge_tags.push(([local[e[0]], local[e[1]]], BoundaryTag::Outer));
                }
            }
            let center = [lower[0] + (ci as f64 + 0.5) * pitch, lower[1] + (cj as f64 + 0.5) * pitch];
            for c in &cell.circles {
                mesh.circles.push(Circle { center, radius: c.radius * scale });
            }
        }
    }
    mesh.lattice = Some(Lattice { lower, pitch, half_width, cells });
    Ok(mesh)
}

/// Bucket grid for locating points in a triangulation.
pub struct PointLocator<'a> {
    mesh: &'a Mesh,
    lower: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &mesh.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let side = ((mesh.num_triangles() as f64).sqrt().ceil() as usize).max(1);
        let dims = [side, side];
        let cell = [((hi[0] - lo[0]) / side as f64).max(1e-300), ((hi[1] - lo[1]) / side as f64).max(1e-300)];
        let mut buckets = vec![Vec::new(); side * side];
        for t in 0..mesh.num_triangles() {
            let p = mesh.triangle_points(t);
            let (mut bl, mut bh) = ([usize::MAX; 2], [0usize; 2]);
            for d in 0..2 {
                let mn = p.iter().map(|q| q[d]).fold(f64::INFINITY, f64::min);
                let mx = p.iter().map(|q| q[d]).fold(f64::NEG_INFINITY, f64::max);
                bl[d] = (((mn - lo[d]) / cell[d]).floor().max(0.0) as usize).min(dims[d] - 1);
                bh[d] = (((mx - lo[d]) / cell[d]).floor().max(0.0) as usize).min(dims[d] - 1);
            }
            for j in bl[1]..=bh[1] {
                for i in bl[0]..=bh[0] {
                    buckets[j * dims[0] + i].push(t);
                }
            }
        }
        PointLocator { mesh, lower: lo, cell, dims, buckets }
    }

    /// Triangle containing `x` and its barycentric coordinates; points outside
    /// the mesh snap to the triangle of the nearest bucket with the least violation.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 3])> {
        let mut i = ((x[0] - self.lower[0]) / self.cell[0]).floor();
        let mut j = ((x[1] - self.lower[1]) / self.cell[1]).floor();
        i = i.clamp(0.0, (self.dims[0] - 1) as f64);
        j = j.clamp(0.0, (self.dims[1] - 1) as f64);
        let (i, j) = (i as usize, j as usize);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for ring in 0..3usize {
            let (j0, j1) = (j.saturating_sub(ring), (j + ring).min(self.dims[1] - 1));
            let (i0, i1) = (i.saturating_sub(ring), (i + ring).min(self.dims[0] - 1));
            for jj in j0..=j1 {
                for ii in i0..=i1 {
                    for &t in &self.buckets[jj * self.dims[0] + ii] {
                        let bc = barycentric(self.mesh.triangle_points(t), x);
                        let viol = bc.iter().fold(0.0f64, |a, &l| a.max(-l));
                        if viol <= 1e-12 {
                            return Some((t, bc));
                        }
                        if best.as_ref().is_none_or(|b| viol < b.2) {
                            best = Some((t, bc, viol));
                        }
                    }
                }
            }
            if best.is_some() && ring >= 1 {
                break;
            }
        }
        best.map(|(t, bc, _)| (t, bc))
    }
}

pub fn barycentric(p: [Point; 3], x: Point) -> [f64; 3] {
    let a = signed_area(p);
    let l1 = signed_area([x, p[1], p[2]]) / a;
    let l2 = signed_area([p[0], x, p[2]]) / a;
    [l1, l2, 1.0 - l1 - l2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn structured_counts() {
        let m = structured_square(2, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_triangles(), 8);
        assert_relative_eq!(m.total_area(), 1.0, epsilon = 1e-14);
        m.validate().unwrap();
        for n in [3, 7, 16] {
            let m = structured_square(n, [-0.5, 0.25], [1.5, 1.0], false).unwrap();
            assert!((m.total_area() - 1.5).abs() < 1e-12);
        }
        assert!(structured_square(1, [0.0, 0.0], [1.0, 1.0], false).is_err());
        assert!(structured_square(4, [0.0, 0.0], [0.0, 1.0], false).is_err());
    }

    #[test]
    fn structured_periodic_pairs() {
        let n = 5;
        let m = structured_square(n, [0.0, 0.0], [2.0, 1.0], true).unwrap();
        m.validate().unwrap();
        // 4n boundary vertices, masters: left interior, bottom interior, one corner.
        assert_eq!(m.periodic_pairs.len(), 4 * n - (2 * (n - 1) + 1));
        let slaves: std::collections::HashSet<_> = m.periodic_pairs.iter().map(|p| p.0).collect();
        let masters: std::collections::HashSet<_> = m.periodic_pairs.iter().map(|p| p.1).collect();
        assert!(slaves.is_disjoint(&masters));
    }

    #[test]
    fn grading_radii() {
        let g = GradingSpec { layers: 12, ratio: 1.25, target_h: 1.0 };
        let r = g.ring_radii(0.05, 0.4).unwrap();
        assert_relative_eq!(r[1] - r[0], 0.05 * 0.25, epsilon = 1e-15);
        assert_eq!(*r.last().unwrap(), 0.4);
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        let short = GradingSpec { layers: 3, ratio: 1.25, target_h: 1.0 };
        assert!(matches!(short.ring_radii(0.05, 0.4), Err(MeshError::Grading(_))));
    }

    #[test]
    fn disk_cell_geometry() {
        let g = GradingSpec { layers: 12, ratio: 1.25, target_h: 0.02 };
        let m = disk_cell(0.4, &g, Some(0.05)).unwrap();
        m.validate().unwrap();
        let core = m.subdomain_area(SubdomainTag::DiskCore);
        assert!((core / (PI * 0.05 * 0.05) - 1.0).abs() < 1e-3);
        assert!((m.total_area() / (PI * 0.16) - 1.0).abs() < 1e-3);
        let plain = disk_cell(0.4, &g, None).unwrap();
        plain.validate().unwrap();
        assert!(plain.subdomains.iter().all(|&t| t == SubdomainTag::DiskCore));
    }

    #[test]
    fn scalar_periodic_cell() {
        let ann = AnnulusSpec::new(0.4, 0.05).unwrap();
        let g = GradingSpec { layers: 20, ratio: 1.3, target_h: 0.04 };
        let m = periodic_cell(&ann, 0.5, &g).unwrap();
        m.validate().unwrap();
        let rel = |a: f64, b: f64| (a / b - 1.0).abs();
        assert!(rel(m.subdomain_area(SubdomainTag::DiskCore), PI * 0.0025) < 1e-3);
        assert!(rel(m.subdomain_area(SubdomainTag::Annulus), PI * (0.16 - 0.0025)) < 1e-3);
        assert!(rel(m.subdomain_area(SubdomainTag::Exterior), 1.0 - PI * 0.16) < 1e-3);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        let boundary = m.boundary_vertices().iter().filter(|&&b| b).count();
        let masters: std::collections::HashSet<_> = m.periodic_pairs.iter().map(|p| p.1).collect();
        assert_eq!(m.periodic_pairs.len(), boundary - masters.len());
    }

    #[test]
    fn lattice_counts() {
        let ann = AnnulusSpec::new(0.4, 0.1339).unwrap();
        let g = GradingSpec { layers: 20, ratio: 1.3, target_h: 0.05 };
        let m = perforated_lattice([0.0, 0.0], [1.0, 1.0], 0.25, &ann, 0.5, &g).unwrap();
        m.validate().unwrap();
        assert_eq!(m.circles.len(), 32);
        assert!((m.total_area() - 1.0).abs() < 1e-10);
        assert!(perforated_lattice([0.0, 0.0], [1.0, 1.0], 1.0 / 3.0, &ann, 0.5, &g).is_ok());
        assert!(matches!(
            perforated_lattice([0.0, 0.0], [1.0, 1.0], 0.3, &ann, 0.5, &g),
            Err(MeshError::Argument(_))
        ));
        let tiny = AnnulusSpec::new(0.4, 1e-8).unwrap();
        let g = GradingSpec { layers: 200, ratio: 1.3, target_h: 0.05 };
        assert!(matches!(
            perforated_lattice([0.0, 0.0], [1.0, 1.0], 0.25, &tiny, 0.5, &g),
            Err(MeshError::Resolution(_))
        ));
    }

    #[test]
    fn locator_finds_points() {
        let m = structured_square(8, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let loc = PointLocator::new(&m);
        for x in [[0.0, 0.0], [0.33, 0.71], [1.0, 1.0], [0.5, 0.5]] {
            let (t, bc) = loc.locate(x).unwrap();
            let p = m.triangle_points(t);
            let y = [
                bc[0] * p[0][0] + bc[1] * p[1][0] + bc[2] * p[2][0],
                bc[0] * p[0][1] + bc[1] * p[1][1] + bc[2] * p[2][1],
            ];
            assert!((y[0] - x[0]).abs() < 1e-12 && (y[1] - x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn text_dump_header() {
        let m = structured_square(2, [0.0, 0.0], [1.0, 1.0], false).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("vertices 9 triangles 8\n"));
        assert_eq!(s.lines().count(), 1 + 9 + 8);
    }
}
