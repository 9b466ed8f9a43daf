//! Random matrix generators shared by the scene simulator, tests and the
//! acceptance suite.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::hpd::{CMatrix, HermitianMatrix, HpdMatrix};

/// Circularly-symmetric complex normal with unit variance:
/// `(g₁ + i·g₂)/√2`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Dense matrix with i.i.d. unit complex-normal entries.
pub fn random_complex_matrix<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
    CMatrix::from_fn(dim, |_, _| complex_normal(rng))
}

/// Random invertible matrix, kept away from singularity by a diagonal shift.
pub fn random_invertible<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
    let mut a = random_complex_matrix(rng, dim);
    for i in 0..dim {
        let v = a.get(i, i);
        a.set(i, i, v + Complex64::new(1.5, 0.0));
    }
    a
}

/// Random Hermitian matrix with entries of roughly the given scale.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> HermitianMatrix {
    let a = random_complex_matrix(rng, dim).scale(scale);
    HermitianMatrix::from_matrix(&a)
}

/// Random HPD matrix `A·A^H/d + 0.25·I` (condition number of a few tens).
pub fn random_hpd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> HpdMatrix {
    let a = random_complex_matrix(rng, dim);
    let mut g = a.matmul(&a.adjoint()).scale(1.0 / dim as f64);
    for i in 0..dim {
        let v = g.get(i, i);
        g.set(i, i, v + 0.25);
    }
    HpdMatrix::assume_hpd(g)
}
