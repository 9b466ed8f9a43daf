//! Small dense complex matrices.
//!
//! Everything in the pipeline works on d×d covariance-sized matrices
//! (d = 3 for full-polarimetric data), so storage is a plain row-major
//! `Vec<Complex64>` and all products are naive triple loops.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use super::HpdError;

/// A square complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    /// Builds a matrix from explicit rows; fails unless every row has
    /// exactly as many entries as there are rows.
    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self, HpdError> {
        let dim = rows.len();
        if dim == 0 {
            return Err(HpdError::NotSquare { rows: 0, cols: 0 });
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(HpdError::NotSquare {
                    rows: dim,
                    cols: row.len(),
                });
            }
            data.extend(row);
        }
        Ok(Self { dim, data })
    }

    /// Row-major flat data; length must be a perfect square.
    pub fn from_flat(dim: usize, data: Vec<Complex64>) -> Result<Self, HpdError> {
        if data.len() != dim * dim || dim == 0 {
            return Err(HpdError::NotSquare {
                rows: dim,
                cols: if dim == 0 { 0 } else { data.len() / dim },
            });
        }
        Ok(Self { dim, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.dim + c] = v;
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self.get(c, r).conj())
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "matmul dimension mismatch");
        let d = self.dim;
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        for r in 0..d {
            for k in 0..d {
                let a = self.data[r * d + k];
                for c in 0..d {
                    out[r * d + c] += a * rhs.data[k * d + c];
                }
            }
        }
        CMatrix { dim: d, data: out }
    }

    /// `self · middle · self^H`
    pub fn congruence(&self, middle: &CMatrix) -> CMatrix {
        self.matmul(middle).matmul(&self.adjoint())
    }

    /// `a · self · a` for Hermitian `a`, avoiding the adjoint.
    pub fn sandwich(&self, a: &CMatrix) -> CMatrix {
        a.matmul(self).matmul(a)
    }

    pub fn scale(&self, s: f64) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, s: f64, other: &CMatrix) {
        assert_eq!(self.dim, other.dim, "add_scaled dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Re Tr(self · other), computed without forming the product.
    pub fn re_trace_product(&self, other: &CMatrix) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for r in 0..d {
            for k in 0..d {
                let a = self.data[r * d + k];
                let b = other.data[k * d + r];
                acc += a.re * b.re - a.im * b.im;
            }
        }
        acc
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in r..self.dim {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// `(A + A^H) / 2`
    pub fn hermitian_part(&self) -> CMatrix {
        Self::from_fn(self.dim, |r, c| {
            if r == c {
                Complex64::new(self.get(r, r).re, 0.0)
            } else {
                (self.get(r, c) + self.get(c, r).conj()) * 0.5
            }
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Relative Frobenius distance ‖self − other‖ / max(‖other‖, tiny).
    pub fn relative_error(&self, reference: &CMatrix) -> f64 {
        (self - reference).frobenius_norm() / reference.frobenius_norm().max(f64::MIN_POSITIVE)
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "add dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, rhs.dim, "sub dimension mismatch");
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}
