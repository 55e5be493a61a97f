//! Small dense complex linear-algebra helpers shared by the solvers.
//!
//! Matrices here are tiny (at most a few dozen rows), so everything is built
//! on nalgebra's dense decompositions rather than an external LAPACK.

use nalgebra::SymmetricEigen;

use crate::{C64, CMat, CVec};

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Hermitian symmetrization, (A + A^H) / 2.
#[must_use]
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Eigendecomposition of a Hermitian matrix: returns real eigenvalues and the
/// unitary eigenvector matrix (columns). The input is symmetrized first so
/// that round-off never leaks complex eigenvalues.
#[must_use]
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let se = SymmetricEigen::new(hermitian_part(a));
    (se.eigenvalues.iter().copied().collect(), se.eigenvectors)
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `PINV_RELATIVE_CUTOFF * sigma_max` treated as zero.
#[must_use]
pub fn pseudo_inverse(a: &CMat) -> CMat {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = PINV_RELATIVE_CUTOFF * smax;
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let mut inv_s = CMat::zeros(vt.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            inv_s[(i, i)] = C64::new(1.0 / s, 0.0);
        }
    }
    vt.adjoint() * inv_s * u.adjoint()
}

/// Real part of the quadratic form x^H A x. For Hermitian A this is the exact
/// value of the form.
#[must_use]
pub fn quad_form(a: &CMat, x: &CVec) -> f64 {
    let ax = a * x;
    x.dotc(&ax).re
}

/// Solves A x = b for Hermitian positive definite A via Cholesky.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Option<CMat> {
    hermitian_part(a).cholesky().map(|c| c.solve(b))
}

/// Largest absolute entry of v - u.
#[must_use]
pub fn linf_diff(v: &CVec, u: &CVec) -> f64 {
    v.iter()
        .zip(u.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}
