//! Hermitian positive-definite matrices and the affine-invariant
//! Riemannian metric (AIRM).
//!
//! [`HpdMatrix`] can only be obtained through validation ([`validate_hpd`])
//! or through operations that preserve positive definiteness (spectral
//! functions, congruences, retractions), so downstream code can take logs
//! and inverse square roots without re-checking.

mod eigen;
mod matrix;
mod metric;

pub use eigen::{herm_eig, herm_eig_with_limit, HermEigen, DEFAULT_MAX_SWEEPS};
pub use matrix::CMatrix;
pub use metric::{airm_distance, airm_inner};

use num_complex::Complex64;
use thiserror::Error;

/// Relative eigenvalue floor: eigenvalues in (0, floor·λ_max] are lifted.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Default tolerance on Hermitian deviation for [`validate_hpd`].
pub const DEFAULT_HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpdError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (deviation {deviation:.3e} > tol {tol:.3e})")]
    NotHermitian { deviation: f64, tol: f64 },
    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("Hermitian eigensolver did not converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// A Hermitian matrix with unconstrained spectrum (matrix logs, tangent
/// vectors, gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Symmetrizes `m` as `(m + m^H)/2` without checking the deviation.
    pub fn from_matrix(m: &CMatrix) -> Self {
        Self(m.hermitian_part())
    }

    /// Accepts `m` only if it is Hermitian within `tol`.
    pub fn new(m: CMatrix, tol: f64) -> Result<Self, HpdError> {
        let deviation = m.hermitian_deviation();
        if !(deviation <= tol) {
            return Err(HpdError::NotHermitian { deviation, tol });
        }
        Ok(Self(m.hermitian_part()))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self(CMatrix::from_diag(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    /// Linear combination `a·self + b·other`; stays Hermitian.
    pub fn combine(&self, a: f64, other: &HermitianMatrix, b: f64) -> Self {
        let mut m = self.0.scale(a);
        m.add_scaled(b, &other.0);
        Self(m)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.frobenius_norm()
    }

    pub fn eig(&self) -> Result<HermEigen, HpdError> {
        herm_eig(self)
    }

    /// Matrix exponential; always HPD.
    pub fn exp(&self) -> Result<HpdMatrix, HpdError> {
        let e = self.eig()?;
        let m = e.map(f64::exp);
        if !m.is_finite() || e.values.iter().any(|&l| !l.exp().is_normal()) {
            return Err(HpdError::NotPositiveDefinite {
                min_eigenvalue: e.min().exp(),
            });
        }
        Ok(HpdMatrix(m))
    }
}

/// A validated Hermitian positive-definite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HpdMatrix(CMatrix);

/// Validates a raw complex matrix as HPD.
///
/// The matrix is symmetrized to `(A + A^H)/2`. Eigenvalues at or below
/// zero are rejected; a positive minimum eigenvalue below
/// `EIGEN_FLOOR · λ_max` is lifted by adding `EIGEN_FLOOR · λ_max · I`.
pub fn validate_hpd(raw: &CMatrix, tol: f64) -> Result<HpdMatrix, HpdError> {
    let h = HermitianMatrix::new(raw.clone(), tol)?;
    let e = h.eig()?;
    let (lo, hi) = (e.min(), e.max());
    if !(lo > 0.0) {
        return Err(HpdError::NotPositiveDefinite { min_eigenvalue: lo });
    }
    let floor = EIGEN_FLOOR * hi;
    let mut m = h.into_matrix();
    if lo <= floor {
        for i in 0..m.dim() {
            let v = m.get(i, i);
            m.set(i, i, v + floor);
        }
    }
    Ok(HpdMatrix(m))
}

/// Which scalar function [`spectral_fn`] applies to the eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralFn {
    Log,
    Exp,
    Sqrt,
    InvSqrt,
}

/// `V · diag(f(λ)) · V^H` for an HPD input.
pub fn spectral_fn(x: &HpdMatrix, f: SpectralFn) -> Result<HermitianMatrix, HpdError> {
    let e = x.eig()?;
    if f != SpectralFn::Exp && !(e.min() > 0.0) {
        return Err(HpdError::NotPositiveDefinite {
            min_eigenvalue: e.min(),
        });
    }
    let m = match f {
        SpectralFn::Log => e.map(f64::ln),
        SpectralFn::Exp => e.map(f64::exp),
        SpectralFn::Sqrt => e.map(f64::sqrt),
        SpectralFn::InvSqrt => e.map(|l| 1.0 / l.sqrt()),
    };
    Ok(HermitianMatrix(m))
}

impl HpdMatrix {
    /// Wraps a matrix already known to be HPD (products and spectral maps
    /// of HPD inputs). Symmetrizes to absorb rounding drift.
    pub(crate) fn assume_hpd(m: CMatrix) -> Self {
        Self(m.hermitian_part())
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim))
    }

    /// Diagonal HPD matrix; every entry must be positive.
    pub fn from_diag(diag: &[f64]) -> Result<Self, HpdError> {
        validate_hpd(&CMatrix::from_diag(diag), DEFAULT_HERMITIAN_TOL)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn as_hermitian(&self) -> HermitianMatrix {
        HermitianMatrix(self.0.clone())
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.0.get(r, c)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn eig(&self) -> Result<HermEigen, HpdError> {
        herm_eig_with_limit(&self.0, DEFAULT_MAX_SWEEPS)
    }

    pub fn log(&self) -> Result<HermitianMatrix, HpdError> {
        spectral_fn(self, SpectralFn::Log)
    }

    pub fn sqrt(&self) -> Result<HpdMatrix, HpdError> {
        spectral_fn(self, SpectralFn::Sqrt).map(|h| HpdMatrix(h.0))
    }

    pub fn inv_sqrt(&self) -> Result<HpdMatrix, HpdError> {
        spectral_fn(self, SpectralFn::InvSqrt).map(|h| HpdMatrix(h.0))
    }

    pub fn inverse(&self) -> Result<HpdMatrix, HpdError> {
        let e = self.eig()?;
        Ok(HpdMatrix(e.map(|l| 1.0 / l)))
    }

    /// Lower-triangular Cholesky factor `L` with `self = L·L^H`.
    pub fn cholesky(&self) -> Result<CMatrix, HpdError> {
        let d = self.dim();
        let mut l = CMatrix::zeros(d);
        for j in 0..d {
            let mut s = self.get(j, j).re;
            for k in 0..j {
                s -= l.get(j, k).norm_sqr();
            }
            if !(s > 0.0) {
                return Err(HpdError::NotPositiveDefinite { min_eigenvalue: s });
            }
            let ljj = s.sqrt();
            l.set(j, j, Complex64::new(ljj, 0.0));
            for i in (j + 1)..d {
                let mut v = self.get(i, j);
                for k in 0..j {
                    v -= l.get(i, k) * l.get(j, k).conj();
                }
                l.set(i, j, v / ljj);
            }
        }
        Ok(l)
    }

    /// `a · self · a^H`, HPD for invertible `a`.
    pub fn congruence(&self, a: &CMatrix) -> HpdMatrix {
        HpdMatrix::assume_hpd(a.congruence(&self.0))
    }

    /// `w · self · w` for Hermitian `w`.
    pub fn whiten(&self, w: &HpdMatrix) -> HpdMatrix {
        HpdMatrix::assume_hpd(self.0.sandwich(&w.0))
    }

    pub fn scale(&self, s: f64) -> HpdMatrix {
        assert!(s > 0.0, "HPD scale must be positive");
        HpdMatrix(self.0.scale(s))
    }
}
