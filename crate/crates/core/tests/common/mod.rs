#![allow(dead_code)]

use std::f64::consts::PI;

/// Radial cell problem `-Z_ss + q(s) Z = eps^2 e^{2s} / (pi R^2)` in `s = ln r`, with
/// `q = 1/ln(R/r)^2` on the annulus and `0` in the core, Neumann at both ends.
/// Second-order finite differences; the interface sits on a node.
pub struct RadialFd {
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    pub outer: f64,
}

pub fn radial_fd(eps: f64, outer: f64, inner: f64, h_target: f64, core_depth: f64) -> RadialFd {
    let ann = (outer / inner).ln();
    let alpha2 = 1.0 / (ann * ann);
    let m_ann = (ann / h_target).ceil() as usize;
    let h = ann / m_ann as f64;
    let m_core = (core_depth / h).ceil() as usize;
    let n = m_core + m_ann + 1;
    let s0 = inner.ln() - m_core as f64 * h;
    let s: Vec<f64> = (0..n).map(|k| s0 + k as f64 * h).collect();
    let q = |k: usize| {
        if k < m_core {
            0.0
        } else if k == m_core {
            0.5 * alpha2
        } else {
            alpha2
        }
    };
    let g = |k: usize| eps * eps * (2.0 * s[k]).exp() / (PI * outer * outer);
    let h2 = h * h;
    let (mut lo, mut di, mut up, mut rhs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        di[k] = 2.0 / h2 + q(k);
        rhs[k] = g(k);
        if k == 0 {
            up[k] = -2.0 / h2;
        } else if k == n - 1 {
            lo[k] = -2.0 / h2;
        } else {
            lo[k] = -1.0 / h2;
            up[k] = -1.0 / h2;
        }
    }
    // Thomas elimination.
    for k in 1..n {
        let w = lo[k] / di[k - 1];
        di[k] -= w * up[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    let mut z = vec![0.0; n];
    z[n - 1] = rhs[n - 1] / di[n - 1];
    for k in (0..n - 1).rev() {
        z[k] = (rhs[k] - up[k] * z[k + 1]) / di[k];
    }
    RadialFd { s, z, outer }
}

impl RadialFd {
    /// `int_{Q_R} Z dy` by the trapezoid rule in `s` (with `dy = 2 pi r^2 ds`).
    pub fn disk_integral(&self) -> f64 {
        let f: Vec<f64> = self.s.iter().zip(&self.z).map(|(s, z)| 2.0 * PI * (2.0 * s).exp() * z).collect();
        let h = self.s[1] - self.s[0];
        let inner_cap = PI * (2.0 * self.s[0]).exp() * self.z[0];
        inner_cap + h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[f.len() - 1]))
    }

    /// Average over `(-h, h)^2` of `Z` extended by `Z(R)` outside the disk.
    pub fn cell_average(&self, half_width: f64) -> f64 {
        let area = 4.0 * half_width * half_width;
        let rim = *self.z.last().unwrap();
        (self.disk_integral() + (area - PI * self.outer * self.outer) * rim) / area
    }

    pub fn value_at(&self, r: f64) -> f64 {
        let s = r.ln();
        let h = self.s[1] - self.s[0];
        let k = (((s - self.s[0]) / h).floor().max(0.0) as usize).min(self.s.len() - 2);
        let t = (s - self.s[k]) / h;
        (1.0 - t) * self.z[k] + t * self.z[k + 1]
    }
}

/// `mu` times the FD cell average at the radius law `|ln r_eps| = log_r`.
pub fn mu_zbar_fd(mu: f64, log_r: f64, outer: f64) -> f64 {
    let eps = (2.0 * PI / (mu * log_r)).sqrt();
    let fd = radial_fd(eps, outer, (-log_r).exp(), 0.01, 25.0);
    mu * fd.cell_average(0.5)
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for i in 0..n {
        let p = (i..n).max_by(|&x, &y| a[x][i].abs().total_cmp(&a[y][i].abs())).unwrap();
        a.swap(i, p);
        b.swap(i, p);
        for r in i + 1..n {
            let l = a[r][i] / a[i][i];
            if l != 0.0 {
                for c in i..n {
                    a[r][c] -= l * a[i][c];
                }
                b[r] -= l * b[i];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|c| a[i][c] * x[c]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-squares slope of `ln e` against `ln h`.
pub fn observed_order(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Exact `int |DV|^2` for Stokes flow in `r < |y| < 1` driven by a unit translation of the inner disk.
pub fn annulus_v_energy(r: f64) -> f64 {
    4.0 * PI / ((1.0 / r).ln() - (1.0 - r * r) / (1.0 + r * r))
}
