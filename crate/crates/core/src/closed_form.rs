//! Closed-form radii, periodic profiles and effective constants of the two
//! concentration counter-examples and of the smooth Stokes drift.
//!
//! Everything here is a pure function of its arguments. Two cell geometries
//! appear: the scalar cell `Y = (-1/2, 1/2)^2` with annulus `r_eps < |y| < R`,
//! and the Stokes cell `Y = (-1, 1)^2` with the unit disk `Q` and the small
//! disk `Q_{r_eps}`.

use std::f64::consts::{E, PI};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosedFormError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular transmission system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },
}

pub type Result<T> = std::result::Result<T, ClosedFormError>;

/// Minimal admissible gap `R - r_eps` before an annulus is considered degenerate.
const DEGENERATE_GAP: f64 = 1e-12;

/// The rotation by a right angle, `J = [[0, -1], [1, 0]]`.
pub fn rotation() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// Concentric annulus `inner < r < outer` in cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusSpec {
    pub outer: f64,
    pub inner: f64,
}

impl AnnulusSpec {
    pub fn new(outer: f64, inner: f64) -> Result<Self> {
        if !(inner > 0.0 && outer.is_finite() && inner < outer) {
            return Err(ClosedFormError::Domain(format!(
                "annulus needs 0 < r_eps < R, got r_eps={inner}, R={outer}"
            )));
        }
        if outer - inner < DEGENERATE_GAP {
            return Err(ClosedFormError::Domain(format!(
                "degenerate annulus: R - r_eps = {:e}",
                outer - inner
            )));
        }
        Ok(AnnulusSpec { outer, inner })
    }

    /// `ln(R / r_eps)`.
    pub fn log_ratio(&self) -> f64 {
        (self.outer / self.inner).ln()
    }

    /// `alpha_eps = 1 / ln(R / r_eps)`.
    pub fn alpha(&self) -> f64 {
        1.0 / self.log_ratio()
    }
}

/// Inner radius of the scalar counter-example, `r_eps = exp(-2 pi / (mu eps^2))`.
pub fn scalar_radius(mu: f64, eps: f64, outer: f64) -> Result<f64> {
    if !(mu > 0.0 && eps > 0.0) {
        return Err(ClosedFormError::Domain(format!(
            "scalar radius needs mu > 0 and eps > 0, got mu={mu}, eps={eps}"
        )));
    }
    let r = (-2.0 * PI / (mu * eps * eps)).exp();
    if r >= outer {
        return Err(ClosedFormError::Domain(format!(
            "r_eps = {r} is not below R = {outer} (mu={mu}, eps={eps})"
        )));
    }
    Ok(r)
}

/// Radius of the small disks of the Stokes lattice, `r_eps = exp(-4 pi / (gamma eps^2))`.
pub fn stokes_radius(gamma: f64, eps: f64) -> Result<f64> {
    if !(gamma > 0.0 && eps > 0.0) {
        return Err(ClosedFormError::Domain(format!(
            "stokes radius needs gamma > 0 and eps > 0, got gamma={gamma}, eps={eps}"
        )));
    }
    let r = (-4.0 * PI / (gamma * eps * eps)).exp();
    if r >= 1.0 {
        return Err(ClosedFormError::Domain(format!("r_eps = {r} is not inside the unit disk")));
    }
    Ok(r)
}

/// Logarithmic cell profile `W_eps(r)` and `|grad W_eps|` at radius `r`.
pub fn w_profile(r: f64, annulus: &AnnulusSpec) -> (f64, f64) {
    if r <= annulus.inner {
        (0.0, 0.0)
    } else if r >= annulus.outer {
        (1.0, 0.0)
    } else {
        let alpha = annulus.alpha();
        ((r / annulus.inner).ln() * alpha, alpha / r)
    }
}

/// `int_Y |grad W_eps|^2 dy = 2 pi / ln(R / r_eps)`.
pub fn cell_dirichlet_energy(annulus: &AnnulusSpec) -> Result<f64> {
    if annulus.outer - annulus.inner < DEGENERATE_GAP || annulus.inner <= 0.0 {
        return Err(ClosedFormError::Domain("degenerate annulus".into()));
    }
    Ok(2.0 * PI / annulus.log_ratio())
}

/// Radial solution of the Neumann cell problem
/// `-(1/eps^2) Lap Z + (1/eps^2) |grad W|^2 Z = 1/|Q_R|` on the disk `Q_R`.
///
/// Inside `r <= r_eps` the profile is `core * r^2 + c`, on the annulus it is
/// `a r^alpha + b r^-alpha + particular * r^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZProfile {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub eps: f64,
    pub annulus: AnnulusSpec,
    /// `r^2` coefficient on the annulus: `eps^2 / (pi R^2 (alpha^2 - 4))`.
    pub particular: f64,
    /// `r^2` coefficient in the core: `-eps^2 / (4 pi R^2)`.
    pub core: f64,
}

impl ZProfile {
    pub fn value(&self, r: f64) -> f64 {
        let r = r.min(self.annulus.outer);
        if r <= self.annulus.inner {
            self.core * r * r + self.c
        } else {
            self.a * r.powf(self.alpha) + self.b * r.powf(-self.alpha) + self.particular * r * r
        }
    }

    /// `r * dZ/dr`, taken from the annulus branch for `r > r_eps`.
    pub fn radial_flux(&self, r: f64) -> f64 {
        if r <= self.annulus.inner {
            2.0 * self.core * r * r
        } else if r > self.annulus.outer {
            0.0
        } else {
            self.alpha * (self.a * r.powf(self.alpha) - self.b * r.powf(-self.alpha))
                + 2.0 * self.particular * r * r
        }
    }

    /// Residuals of `R Z'(R) = 0`, value continuity and flux continuity at `r_eps`.
    pub fn residuals(&self) -> [f64; 3] {
        let (ri, ro) = (self.annulus.inner, self.annulus.outer);
        let al = self.alpha;
        let ann_value = self.a * ri.powf(al) + self.b * ri.powf(-al) + self.particular * ri * ri;
        let ann_flux = al * (self.a * ri.powf(al) - self.b * ri.powf(-al)) + 2.0 * self.particular * ri * ri;
        let outer_flux = al * (self.a * ro.powf(al) - self.b * ro.powf(-al)) + 2.0 * self.particular * ro * ro;
        [
            outer_flux,
            ann_value - (self.core * ri * ri + self.c),
            ann_flux - 2.0 * self.core * ri * ri,
        ]
    }

    /// `int_{Q_R} Z dy`.
    pub fn disk_integral(&self) -> f64 {
        let (ri, ro) = (self.annulus.inner, self.annulus.outer);
        let al = self.alpha;
        let core = 2.0 * PI * (self.core * ri.powi(4) / 4.0 + self.c * ri * ri / 2.0);
        let ann = 2.0
            * PI
            * (self.a * (ro.powf(al + 2.0) - ri.powf(al + 2.0)) / (al + 2.0)
                + self.b * (ro.powf(2.0 - al) - ri.powf(2.0 - al)) / (2.0 - al)
                + self.particular * (ro.powi(4) - ri.powi(4)) / 4.0);
        core + ann
    }

    /// Average over the square cell `(-h, h)^2` of the profile extended by `Z(R)` outside `Q_R`.
    pub fn cell_average(&self, half_width: f64) -> f64 {
        let area = 4.0 * half_width * half_width;
        let ro = self.annulus.outer;
        (self.disk_integral() + (area - PI * ro * ro) * self.value(ro)) / area
    }
}

/// Solves the three transmission conditions for the radial profile `Z_eps`.
pub fn z_profile(eps: f64, annulus: &AnnulusSpec) -> Result<ZProfile> {
    if !(eps > 0.0) {
        return Err(ClosedFormError::Domain(format!("eps must be positive, got {eps}")));
    }
    let annulus = AnnulusSpec::new(annulus.outer, annulus.inner)?;
    let (ri, ro) = (annulus.inner, annulus.outer);
    let al = annulus.alpha();
    let scale = eps * eps / (PI * ro * ro);
    // -(A'' + A'/r) r^2-part: -4A + alpha^2 A = eps^2 / (pi R^2).
    let particular = scale / (al * al - 4.0);
    let core = -scale / 4.0;

    // Unknowns (a, b, c). Flux rows are multiplied by r to stay O(1).
    let m = Matrix3::new(
        al * ro.powf(al), -al * ro.powf(-al), 0.0,
        ri.powf(al), ri.powf(-al), -1.0,
        al * ri.powf(al), -al * ri.powf(-al), 0.0,
    );
    let rhs = Vector3::new(
        -2.0 * particular * ro * ro,
        (core - particular) * ri * ri,
        2.0 * (core - particular) * ri * ri,
    );
    let inv = m.try_inverse().ok_or(ClosedFormError::SingularSystem { condition: f64::INFINITY })?;
    let condition = m.abs().row_sum().max() * inv.abs().row_sum().max();
    if !condition.is_finite() || condition > 1e14 {
        return Err(ClosedFormError::SingularSystem { condition });
    }
    let sol = inv * rhs;
    Ok(ZProfile { a: sol[0], b: sol[1], c: sol[2], alpha: al, eps, annulus, particular, core })
}

/// `4 (e^2 + 1) / (3 (e^2 - 1)) / mu`.
pub fn zbar_limit(mu: f64) -> f64 {
    let e2 = E * E;
    4.0 * (e2 + 1.0) / (3.0 * (e2 - 1.0)) / mu
}

/// `3 (e^2 - 1) / (4 (e^2 + 1)) mu`.
pub fn gamma_scalar(mu: f64) -> f64 {
    let e2 = E * E;
    3.0 * (e2 - 1.0) / (4.0 * (e2 + 1.0)) * mu
}

/// Limit of the cell average of `Z_eps` obtained from the radial equation itself,
/// `(e^2 + 1) / ((e^2 - 1) mu)`. Differs from [`zbar_limit`] by the factor 4/3.
pub fn zbar_limit_radial_ode(mu: f64) -> f64 {
    let e2 = E * E;
    (e2 + 1.0) / (e2 - 1.0) / mu
}

/// `Gamma = (gamma I - J) / (4 (gamma^2 + 1))`.
pub fn brinkman_matrix(gamma: f64) -> Matrix2<f64> {
    (Matrix2::identity() * gamma - rotation()) / (4.0 * (gamma * gamma + 1.0))
}

/// `M = I / (4 gamma)`.
pub fn tartar_matrix(gamma: f64) -> Matrix2<f64> {
    Matrix2::identity() / (4.0 * gamma)
}

/// `4 pi / |ln r_eps|`.
pub fn stokes_gamma_asymptotic(r_eps: f64) -> f64 {
    4.0 * PI / r_eps.ln().abs()
}

/// Effective matrix `(a^2 / 2) e2 (x) e2` of the drift `a cos(2 pi x2 / eps) e1`.
pub fn smooth_stokes_m(a: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, 0.0, 0.0, 0.5 * a * a)
}

/// Corrector coefficients `v = -(I + gamma J) u / (gamma^2 + 1)`.
pub fn stokes_corrector_coeffs(u: Vector2<f64>, gamma: f64) -> Vector2<f64> {
    let d = gamma * gamma + 1.0;
    Vector2::new((-u[0] + gamma * u[1]) / d, (-u[1] - gamma * u[0]) / d)
}

/// The effective constants of both counter-examples for given intensities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveConstants {
    pub mu: f64,
    pub gamma_scalar: f64,
    pub zbar: f64,
    pub brinkman: Matrix2<f64>,
    pub tartar: Matrix2<f64>,
}

impl EffectiveConstants {
    pub fn new(mu: f64, gamma: f64) -> Self {
        EffectiveConstants {
            mu,
            gamma_scalar: gamma_scalar(mu),
            zbar: zbar_limit(mu),
            brinkman: brinkman_matrix(gamma),
            tartar: tartar_matrix(gamma),
        }
    }
}
