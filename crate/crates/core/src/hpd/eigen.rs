//! Cyclic Jacobi eigendecomposition for complex Hermitian matrices.
//!
//! Each rotation first removes the phase of the pivot entry with a
//! diagonal unitary, then applies the classical real Jacobi rotation to
//! the resulting real symmetric 2×2 block. For the small matrices used here
//! this converges quadratically to full double precision.

use num_complex::Complex64;

use super::matrix::CMatrix;
use super::{HermitianMatrix, HpdError};

/// Sweep cap for [`herm_eig`]. Well-conditioned 3×3 inputs need 4–6.
pub const DEFAULT_MAX_SWEEPS: usize = 60;

/// Eigen-decomposition `X = V · diag(λ) · V^H` with ascending `λ`.
#[derive(Clone, Debug)]
pub struct HermEigen {
    pub values: Vec<f64>,
    /// Columns are eigenvectors.
    pub vectors: CMatrix,
}

impl HermEigen {
    /// `V · diag(f(λ)) · V^H`, Hermitian by construction.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let d = self.values.len();
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        CMatrix::from_fn(d, |r, c| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..d {
                acc += v.get(r, k) * v.get(c, k).conj() * fl[k];
            }
            if r == c {
                Complex64::new(acc.re, 0.0)
            } else {
                acc
            }
        })
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Eigendecomposition of a Hermitian matrix.
pub fn herm_eig(x: &HermitianMatrix) -> Result<HermEigen, HpdError> {
    herm_eig_with_limit(x.as_matrix(), DEFAULT_MAX_SWEEPS)
}

/// Same as [`herm_eig`] on a raw matrix (symmetrized first) with an
/// explicit sweep cap.
pub fn herm_eig_with_limit(x: &CMatrix, max_sweeps: usize) -> Result<HermEigen, HpdError> {
    if !x.is_finite() {
        return Err(HpdError::ConvergenceFailure { sweeps: 0 });
    }
    let d = x.dim();
    let mut a = x.hermitian_part();
    let mut v = CMatrix::identity(d);

    let scale: f64 = a.frobenius_norm();
    let mut sweeps = 0;
    loop {
        let off: f64 = off_diagonal_norm_sqr(&a);
        if off <= (f64::EPSILON * scale).powi(2) * 1e-4 || off == 0.0 {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(HpdError::ConvergenceFailure { sweeps });
        }
        for p in 0..d {
            for q in (p + 1)..d {
                rotate(&mut a, &mut v, p, q);
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a.get(i, i).re.total_cmp(&a.get(j, j).re));
    let values = order.iter().map(|&i| a.get(i, i).re).collect();
    let vectors = CMatrix::from_fn(d, |r, c| v.get(r, order[c]));
    Ok(HermEigen { values, vectors })
}

fn off_diagonal_norm_sqr(a: &CMatrix) -> f64 {
    let d = a.dim();
    let mut s = 0.0;
    for r in 0..d {
        for c in 0..d {
            if r != c {
                s += a.get(r, c).norm_sqr();
            }
        }
    }
    s
}

fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let d = a.dim();
    let app = a.get(p, p).re;
    let aqq = a.get(q, q).re;
    // phase u with a_pq = r·u; J = diag(1, ū) · [[c, s], [-s, c]]
    let u = apq / r;
    let theta = (aqq - app) / (2.0 * r);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let j00 = Complex64::new(c, 0.0);
    let j01 = Complex64::new(s, 0.0);
    let j10 = -u.conj() * s;
    let j11 = u.conj() * c;

    // A ← A·J
    for k in 0..d {
        let akp = a.get(k, p);
        let akq = a.get(k, q);
        a.set(k, p, akp * j00 + akq * j10);
        a.set(k, q, akp * j01 + akq * j11);
    }
    // A ← J^H·A
    for k in 0..d {
        let apk = a.get(p, k);
        let aqk = a.get(q, k);
        a.set(p, k, j00.conj() * apk + j10.conj() * aqk);
        a.set(q, k, j01.conj() * apk + j11.conj() * aqk);
    }
    a.set(p, q, Complex64::new(0.0, 0.0));
    a.set(q, p, Complex64::new(0.0, 0.0));
    a.set(p, p, Complex64::new(app - t * r, 0.0));
    a.set(q, q, Complex64::new(aqq + t * r, 0.0));

    for k in 0..d {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, vkp * j00 + vkq * j10);
        v.set(k, q, vkp * j01 + vkq * j11);
    }
}
