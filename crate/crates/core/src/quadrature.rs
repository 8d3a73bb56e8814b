//! Triangle quadrature rules, Gauss-Legendre nodes, and P1/P2 shape functions.

use crate::mesh::{Point, SubdomainTag};

/// Barycentric points and weights normalized to sum to one.
#[derive(Debug, Clone, Copy)]
pub struct TriangleRule {
    pub points: &'static [[f64; 3]],
    pub weights: &'static [f64],
}

const THIRD: f64 = 1.0 / 3.0;

static P3: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];
static W3: [f64; 3] = [THIRD, THIRD, THIRD];

const B1: f64 = 0.470_142_064_105_115_1;
const A1: f64 = 1.0 - 2.0 * B1;
const B2: f64 = 0.101_286_507_323_456_34;
const A2: f64 = 1.0 - 2.0 * B2;
const V1: f64 = 0.132_394_152_788_506_2;
const V2: f64 = 0.125_939_180_544_827_15;

static P7: [[f64; 3]; 7] = [
    [THIRD, THIRD, THIRD],
    [A1, B1, B1],
    [B1, A1, B1],
    [B1, B1, A1],
    [A2, B2, B2],
    [B2, A2, B2],
    [B2, B2, A2],
];
static W7: [f64; 7] = [0.225, V1, V1, V1, V2, V2, V2];

/// Exact for quadratics.
pub const DEGREE2: TriangleRule = TriangleRule { points: &P3, weights: &W3 };
/// Dunavant's 7-point rule, exact for quintics.
pub const DEGREE5: TriangleRule = TriangleRule { points: &P7, weights: &W7 };

/// Quadrature point handed to coefficient callbacks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub x: Point,
    pub tag: SubdomainTag,
    pub triangle: usize,
}

pub fn map_point(p: &[Point; 3], bary: &[f64; 3]) -> Point {
    [
        bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
        bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
    ]
}

/// Constant gradients of the three P1 hat functions and the triangle area.
pub fn p1_gradients(p: &[Point; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[i] = [(p[j][1] - p[k][1]) / det, (p[k][0] - p[j][0]) / det];
    }
    (g, 0.5 * det)
}

/// P2 basis values: vertices 0..3, then edge midpoints of local edges (0,1), (1,2), (2,0).
pub fn p2_values(l: &[f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

/// P2 basis gradients given the P1 gradients `g`.
pub fn p2_gradients(l: &[f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut out = [[0.0; 2]; 6];
    for d in 0..2 {
        out[0][d] = (4.0 * l[0] - 1.0) * g[0][d];
        out[1][d] = (4.0 * l[1] - 1.0) * g[1][d];
        out[2][d] = (4.0 * l[2] - 1.0) * g[2][d];
        out[3][d] = 4.0 * (l[0] * g[1][d] + l[1] * g[0][d]);
        out[4][d] = 4.0 * (l[1] * g[2][d] + l[2] * g[1][d]);
        out[5][d] = 4.0 * (l[2] * g[0][d] + l[0] * g[2][d]);
    }
    out
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(rule: &TriangleRule, f: impl Fn(f64, f64) -> f64) -> f64 {
        // Reference triangle (0,0),(1,0),(0,1), area 1/2.
        rule.points.iter().zip(rule.weights).map(|(l, w)| w * f(l[1], l[2])).sum::<f64>() * 0.5
    }

    #[test]
    fn rules_integrate_monomials() {
        // int x^a y^b over the reference triangle = a! b! / (a+b+2)!
        let fact = |n: u32| (1..=n).product::<u32>().max(1) as f64;
        for (rule, deg) in [(DEGREE2, 2), (DEGREE5, 5)] {
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let exact = fact(a) * fact(b) / fact(a + b + 2);
                    let q = integrate(&rule, |x, y| x.powi(a as i32) * y.powi(b as i32));
                    assert!((q - exact).abs() < 1e-14, "deg {deg} x^{a} y^{b}: {q} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for k in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn p2_partition_of_unity() {
        let p = [[0.1, 0.2], [1.3, 0.1], [0.4, 0.9]];
        let (g, _) = p1_gradients(&p);
        for l in DEGREE5.points {
            let v = p2_values(l);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let dg = p2_gradients(l, &g);
            for d in 0..2 {
                assert!(dg.iter().map(|q| q[d]).sum::<f64>().abs() < 1e-12);
            }
        }
    }
}
