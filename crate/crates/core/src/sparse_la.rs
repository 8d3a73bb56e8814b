//! Compressed-row matrices and the linear solvers used by the finite element
//! modules: Jacobi-preconditioned CG, restarted GMRES with ILU(0), and a
//! direct path (reverse Cuthill-McKee + banded LU, or a sparse LU for wide bands).

use std::collections::VecDeque;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Method {
    Cg,
    Gmres,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub method: Method,
}

#[derive(Debug, Error, Clone)]
pub enum SolverError {
    #[error("not converged: {report:?}")]
    NotConverged { x: Vec<f64>, report: SolveReport },
    #[error("matrix is not symmetric (relative defect {0:e})")]
    Asymmetry(f64),
    #[error("singular matrix (pivot {pivot} at step {step})")]
    SingularMatrix { step: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

const PAR_ROWS: usize = 4096;

impl CsrMatrix {
    /// Builds an `n x n` matrix, summing duplicate entries. Explicit zeros are kept
    /// so that the sparsity pattern does not depend on cancellation.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in triplets {
            assert!(i < n && j < n, "triplet ({i},{j}) outside {n}x{n}");
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut raw = vec![(0usize, 0.0f64); triplets.len()];
        for &(i, j, v) in triplets {
            raw[next[i]] = (j, v);
            next[i] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        offsets.push(0);
        for i in 0..n {
            let row = &mut raw[counts[i]..counts[i + 1]];
            row.sort_by_key(|e| e.0);
            for &(j, v) in row.iter() {
                if cols.len() > offsets[i] && *cols.last().unwrap() == j {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                }
            }
            offsets.push(cols.len());
        }
        CsrMatrix { n, offsets, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix { n, offsets: (0..=n).collect(), cols: (0..n).collect(), vals: vec![1.0; n] }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let mut t = Vec::new();
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|k| v[k]).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                row[j] += x;
            }
        }
        d
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            let (c, v) = self.row(i);
            t.extend(c.iter().zip(v).map(|(&j, &x)| (i, j, x)));
        }
        t
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n, &t)
    }

    /// `alpha * self + beta * other`.
    pub fn add(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        assert_eq!(self.n, other.n);
        let mut t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (i, j, alpha * v)).collect();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, beta * v)));
        Self::from_triplets(self.n, &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let row = |i: usize| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum::<f64>()
        };
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            y.iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// Relative defect `max |a_ij - a_ji| / max |a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    /// Coordinate dump, one `i j value` line per stored entry.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
    let nb = norm(b);
    if nb == 0.0 {
        norm(&r)
    } else {
        norm(&r) / nb
    }
}

fn check_dims(a: &CsrMatrix, b: &[f64]) -> Result<()> {
    if a.n != b.len() {
        return Err(SolverError::Dimension(format!("matrix {} vs rhs {}", a.n, b.len())));
    }
    Ok(())
}

/// Preconditioned CG with Jacobi scaling; calls `observe(k, x)` after each iterate.
pub fn solve_spd_observed(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(a, b)?;
    let defect = a.asymmetry();
    if defect > 1e-12 {
        return Err(SolverError::Asymmetry(defect));
    }
    let n = a.n;
    let nb = norm(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok((x, SolveReport { iterations: 0, relative_residual: 0.0, method: Method::Cg }));
    }
    let dinv: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = 1.0;
    for k in 1..=max_iter {
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        observe(k, &x);
        rel = norm(&r) / nb;
        if rel <= tol {
            let report = SolveReport { iterations: k, relative_residual: rel, method: Method::Cg };
            return Ok((x, report));
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let report = SolveReport { iterations: max_iter, relative_residual: rel, method: Method::Cg };
    Err(SolverError::NotConverged { x, report })
}

/// Conjugate gradients with Jacobi preconditioning for symmetric positive definite systems.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    solve_spd_observed(a, b, tol, max_iter, |_, _| {})
}

/// Zero-fill incomplete LU factors stored in the pattern of `A`.
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            let (c, _) = a.row(i);
            match c.binary_search(&i) {
                Ok(k) => *d = a.offsets[i] + k,
                Err(_) => return Err(SolverError::SingularMatrix { step: i, pivot: 0.0 }),
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.offsets[i], lu.offsets[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for k in start..diag[i] {
                let j = lu.cols[k];
                let pivot = lu.vals[diag[j]];
                if pivot.abs() < 1e-300 {
                    return Err(SolverError::SingularMatrix { step: j, pivot });
                }
                let l = lu.vals[k] / pivot;
                lu.vals[k] = l;
                for m in diag[j] + 1..lu.offsets[j + 1] {
                    let p = pos[lu.cols[m]];
                    if p != usize::MAX {
                        lu.vals[p] -= l * lu.vals[m];
                    }
                }
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
            let d = lu.vals[diag[i]];
            if d.abs() < 1e-14 * a.max_abs() || !d.is_finite() {
                return Err(SolverError::SingularMatrix { step: i, pivot: d });
            }
        }
        Ok(Ilu0 { lu, diag })
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        let mut y = r.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in self.lu.offsets[i]..self.diag[i] {
                s -= self.lu.vals[k] * y[self.lu.cols[k]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in self.diag[i] + 1..self.lu.offsets[i + 1] {
                s -= self.lu.vals[k] * y[self.lu.cols[k]];
            }
            y[i] = s / self.lu.vals[self.diag[i]];
        }
        y
    }
}

/// Right-preconditioned restarted GMRES.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    precond: &Ilu0,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(a, b)?;
    let n = a.n;
    let m = restart.max(1);
    let nb = norm(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok((x, SolveReport { iterations: 0, relative_residual: 0.0, method: Method::Gmres }));
    }
    let mut total = 0;
    let mut rel = 1.0;
    let mut stalled = 0;
    while total < max_iter {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, y)| b - y).collect();
        let beta = norm(&r);
        rel = beta / nb;
        if rel <= tol {
            break;
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|x| x / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            if total >= max_iter {
                break;
            }
            total += 1;
            let z = precond.apply(&v[k]);
            let mut w = a.matvec(&z);
            for j in 0..=k {
                h[j][k] = dot(&w, &v[j]);
                for (wi, vi) in w.iter_mut().zip(&v[j]) {
                    *wi -= h[j][k] * vi;
                }
            }
            h[k + 1][k] = norm(&w);
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            if d == 0.0 {
                break;
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            let hk1 = h[k + 1][k];
            h[k][k] = d;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if hk1 != 0.0 {
                v.push(w.iter().map(|x| x / hk1).collect());
            }
            if g[k + 1].abs() / nb <= tol * 0.5 || hk1 == 0.0 {
                break;
            }
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for (u, vj) in update.iter_mut().zip(&v[j]) {
                *u += yj * vj;
            }
        }
        let dz = precond.apply(&update);
        for (xi, d) in x.iter_mut().zip(&dz) {
            *xi += d;
        }
        let new_rel = relative_residual(a, &x, b);
        if new_rel > 0.99 * rel {
            stalled += 1;
            if stalled >= 3 {
                rel = new_rel;
                break;
            }
        } else {
            stalled = 0;
        }
        rel = new_rel;
    }
    let report = SolveReport { iterations: total, relative_residual: rel, method: Method::Gmres };
    if rel <= tol {
        Ok((x, report))
    } else {
        Err(SolverError::NotConverged { x, report })
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern; `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let (c, _) = a.row(i);
        for &j in c {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, visited: &[bool]| -> (Vec<usize>, usize) {
        let mut level = vec![usize::MAX; n];
        let mut q = VecDeque::from([start]);
        level[start] = 0;
        let mut last = start;
        while let Some(u) = q.pop_front() {
            last = u;
            for &w in &adj[u] {
                if !visited[w] && level[w] == usize::MAX {
                    level[w] = level[u] + 1;
                    q.push_back(w);
                }
            }
        }
        (level, last)
    };
    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by_key(|&i| (deg[i], i));
    for &seed in &seeds {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start: a few sweeps to the far end of the component.
        let mut start = seed;
        let mut depth = 0;
        for _ in 0..4 {
            let (level, last) = bfs_levels(start, &visited);
            if level[last] <= depth {
                break;
            }
            depth = level[last];
            start = last;
        }
        let mut q = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (deg[w], w));
            for w in nb {
                visited[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Banded LU with partial pivoting: row `r` stores columns `r - kl ..= r + kl + ku`.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    fn width(kl: usize, ku: usize) -> usize {
        2 * kl + ku + 1
    }

    /// Lower and upper bandwidths of `A`.
    pub fn bandwidths(a: &CsrMatrix) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..a.n {
            let (c, _) = a.row(i);
            if let (Some(&f), Some(&l)) = (c.first(), c.last()) {
                kl = kl.max(i.saturating_sub(f));
                ku = ku.max(l.saturating_sub(i));
            }
        }
        (kl, ku)
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        r * Self::width(self.kl, self.ku) + (c + self.kl - r)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = Self::bandwidths(a);
        let w = Self::width(kl, ku);
        let mut lu = BandedLu { n, kl, ku, data: vec![0.0; n * w], pivots: vec![0; n] };
        for i in 0..n {
            let (c, v) = a.row(i);
            for (&j, &x) in c.iter().zip(v) {
                let s = lu.slot(i, j);
                lu.data[s] += x;
            }
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            let last_row = (i + kl).min(n - 1);
            let last_col = (i + kl + ku).min(n - 1);
            let mut p = i;
            let mut best = lu.data[lu.slot(i, i)].abs();
            for q in i + 1..=last_row {
                let v = lu.data[lu.slot(q, i)].abs();
                if v > best {
                    best = v;
                    p = q;
                }
            }
            if best <= 1e-14 * scale {
                return Err(SolverError::SingularMatrix { step: i, pivot: best });
            }
            lu.pivots[i] = p;
            if p != i {
                for c in i..=last_col {
                    let (s1, s2) = (lu.slot(i, c), lu.slot(p, c));
                    lu.data.swap(s1, s2);
                }
            }
            let d = lu.data[lu.slot(i, i)];
            for q in i + 1..=last_row {
                let sq = lu.slot(q, i);
                let l = lu.data[sq] / d;
                lu.data[sq] = l;
                if l != 0.0 {
                    for c in i + 1..=last_col {
                        let (si, sc) = (lu.slot(i, c), lu.slot(q, c));
                        lu.data[sc] -= l * lu.data[si];
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            x.swap(i, self.pivots[i]);
            let last_row = (i + self.kl).min(n - 1);
            for q in i + 1..=last_row {
                x[q] -= self.data[self.slot(q, i)] * x[i];
            }
        }
        for i in (0..n).rev() {
            let last_col = (i + self.kl + self.ku).min(n - 1);
            let mut s = x[i];
            for c in i + 1..=last_col {
                s -= self.data[self.slot(i, c)] * x[c];
            }
            x[i] = s / self.data[self.slot(i, i)];
        }
        x
    }

    /// Dense `L` (unit lower, pivots applied incrementally) and `U`, for checks.
    pub fn dense_factors(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>) {
        let n = self.n;
        let mut u = vec![vec![0.0; n]; n];
        for (i, row) in u.iter_mut().enumerate() {
            for (c, slot) in row.iter_mut().enumerate().take((i + self.kl + self.ku + 1).min(n)).skip(i) {
                *slot = self.data[self.slot(i, c)];
            }
        }
        // Row permutation of the whole elimination, with L rows permuted accordingly.
        let mut perm: Vec<usize> = (0..n).collect();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            let p = self.pivots[i];
            perm.swap(i, p);
            l.swap(i, p);
            for q in i + 1..=(i + self.kl).min(n - 1) {
                l[q][i] = self.data[self.slot(q, i)];
            }
        }
        for (i, row) in l.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        (l, u, perm)
    }
}

const BAND_ENTRY_LIMIT: usize = 40_000_000;
const BAND_FLOP_LIMIT: f64 = 2e9;

fn permute(a: &CsrMatrix, perm: &[usize]) -> CsrMatrix {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let t: Vec<_> = a.triplets().into_iter().map(|(i, j, v)| (inv[i], inv[j], v)).collect();
    CsrMatrix::from_triplets(a.n, &t)
}

/// Reusable LU factorization: RCM-reordered banded LU, or a sparse LU when the band is too wide.
pub enum DirectFactor {
    Banded { perm: Vec<usize>, lu: BandedLu },
    Sparse { n: usize, lu: Box<faer::sparse::linalg::solvers::Lu<usize, f64>> },
}

impl DirectFactor {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        for i in 0..a.n {
            if a.row(i).1.iter().all(|&v| v == 0.0) {
                return Err(SolverError::SingularMatrix { step: i, pivot: 0.0 });
            }
        }
        let perm = rcm_ordering(a);
        let pa = permute(a, &perm);
        let (kl, ku) = BandedLu::bandwidths(&pa);
        let flops = a.n as f64 * kl as f64 * (kl + ku) as f64;
        if a.n * BandedLu::width(kl, ku) <= BAND_ENTRY_LIMIT && flops <= BAND_FLOP_LIMIT {
            return Ok(DirectFactor::Banded { lu: BandedLu::factor(&pa)?, perm });
        }
        use faer::sparse::{SparseColMat, Triplet};
        let t: Vec<Triplet<usize, usize, f64>> =
            a.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.n, a.n, &t)
            .map_err(|e| SolverError::Dimension(format!("{e:?}")))?;
        let lu = m.sp_lu().map_err(|_| SolverError::SingularMatrix { step: 0, pivot: 0.0 })?;
        Ok(DirectFactor::Sparse { n: a.n, lu: Box::new(lu) })
    }

    pub fn n(&self) -> usize {
        match self {
            DirectFactor::Banded { perm, .. } => perm.len(),
            DirectFactor::Sparse { n, .. } => *n,
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n() {
            return Err(SolverError::Dimension(format!("factor of size {} vs rhs {}", self.n(), b.len())));
        }
        let x = match self {
            DirectFactor::Banded { perm, lu } => {
                let pb: Vec<f64> = perm.iter().map(|&o| b[o]).collect();
                let y = lu.solve(&pb);
                let mut x = vec![0.0; b.len()];
                for (new, &old) in perm.iter().enumerate() {
                    x[old] = y[new];
                }
                x
            }
            DirectFactor::Sparse { n, lu } => {
                use faer::prelude::*;
                let rhs = Mat::<f64>::from_fn(*n, 1, |i, _| b[i]);
                let x = lu.solve(&rhs);
                (0..*n).map(|i| x[(i, 0)]).collect()
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::SingularMatrix { step: 0, pivot: f64::NAN });
        }
        Ok(x)
    }
}

/// Direct solve through a one-shot [`DirectFactor`].
pub fn solve_direct(a: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(a, b)?;
    let x = DirectFactor::new(a)?.solve(b)?;
    let rel = relative_residual(a, &x, b);
    Ok((x, SolveReport { iterations: 1, relative_residual: rel, method: Method::Direct }))
}

/// Solves `A x = b` by iterative refinement against the factorization of a nearby matrix.
pub fn solve_refined(
    a: &CsrMatrix,
    near: &DirectFactor,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(a, b)?;
    if near.n() != a.n {
        return Err(SolverError::Dimension(format!("factor of size {} vs matrix {}", near.n(), a.n)));
    }
    let nb = norm(b);
    let mut x = vec![0.0; a.n];
    if nb == 0.0 {
        return Ok((x, SolveReport { iterations: 0, relative_residual: 0.0, method: Method::Direct }));
    }
    let mut r = b.to_vec();
    let mut last = f64::INFINITY;
    for it in 1..=max_iter {
        let dx = near.solve(&r)?;
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        a.matvec_into(&x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let rel = norm(&r) / nb;
        if rel <= tol {
            return Ok((x, SolveReport { iterations: it, relative_residual: rel, method: Method::Direct }));
        }
        if !(rel < 0.5 * last) {
            let report = SolveReport { iterations: it, relative_residual: rel, method: Method::Direct };
            return Err(SolverError::NotConverged { x, report });
        }
        last = rel;
    }
    let report = SolveReport { iterations: max_iter, relative_residual: last, method: Method::Direct };
    Err(SolverError::NotConverged { x, report })
}

/// GMRES(restart) with ILU(0); falls back to the direct path on stagnation or a
/// failed incomplete factorization.
pub fn solve_general(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    check_dims(a, b)?;
    let iterative = Ilu0::new(a).map(|p| gmres(a, b, &p, tol, restart, max_iter));
    let failed = match iterative {
        Ok(Ok(done)) => return Ok(done),
        Ok(Err(e)) => e,
        Err(e) => e,
    };
    log::debug!("GMRES path failed ({failed}); switching to direct");
    let (x, report) = solve_direct(a, b)?;
    if report.relative_residual <= tol.max(1e-12) {
        Ok((x, report))
    } else {
        Err(SolverError::NotConverged { x, report })
    }
}
