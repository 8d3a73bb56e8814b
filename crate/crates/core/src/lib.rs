//! Numerical laboratory for periodic homogenization of elliptic and Stokes
//! problems whose drift concentrates on small disks.

pub mod closed_form;
pub mod mesh;
pub mod sparse_la;
pub mod quadrature;
pub mod fem_scalar;
pub mod fem_stokes;
pub mod homog_lab;
