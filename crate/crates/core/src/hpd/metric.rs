//! Affine-invariant Riemannian metric on the HPD cone.

use super::{HermitianMatrix, HpdError, HpdMatrix};

fn check_dims(a: usize, b: usize) -> Result<(), HpdError> {
    if a == b {
        Ok(())
    } else {
        Err(HpdError::DimensionMismatch { left: a, right: b })
    }
}

/// Geodesic distance `‖log(X^{-1/2} Y X^{-1/2})‖_F`.
pub fn airm_distance(x: &HpdMatrix, y: &HpdMatrix) -> Result<f64, HpdError> {
    check_dims(x.dim(), y.dim())?;
    let w = x.inv_sqrt()?;
    let z = y.whiten(&w);
    let e = z.eig()?;
    if !(e.min() > 0.0) {
        return Err(HpdError::NotPositiveDefinite {
            min_eigenvalue: e.min(),
        });
    }
    Ok(e.values.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

/// Metric `⟨u, v⟩_p = Re Tr(p^{-1} u p^{-1} v)`.
pub fn airm_inner(p: &HpdMatrix, u: &HermitianMatrix, v: &HermitianMatrix) -> Result<f64, HpdError> {
    check_dims(p.dim(), u.dim())?;
    check_dims(p.dim(), v.dim())?;
    let inv = p.inverse()?;
    let a = inv.as_matrix().matmul(u.as_matrix());
    let b = inv.as_matrix().matmul(v.as_matrix());
    Ok(a.re_trace_product(&b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_hermitian, random_hpd, random_invertible};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_of_identity_to_itself_is_zero() {
        let i = HpdMatrix::identity(3);
        assert_eq!(airm_distance(&i, &i).unwrap(), 0.0);
    }

    #[test]
    fn distance_to_scaled_identity() {
        let i = HpdMatrix::identity(3);
        let e2 = i.scale(std::f64::consts::E.powi(2));
        let d = airm_distance(&i, &e2).unwrap();
        assert!((d - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = HpdMatrix::identity(2);
        let b = HpdMatrix::identity(3);
        assert!(matches!(
            airm_distance(&a, &b),
            Err(HpdError::DimensionMismatch { .. })
        ));
        let u = HermitianMatrix::identity(3);
        assert!(airm_inner(&a, &u, &u).is_err());
    }

    #[test]
    fn affine_invariance_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let x = random_hpd(&mut rng, 3);
            let y = random_hpd(&mut rng, 3);
            let a = random_invertible(&mut rng, 3);
            let d0 = airm_distance(&x, &y).unwrap();
            let d1 = airm_distance(&x.congruence(&a), &y.congruence(&a)).unwrap();
            assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
        }
    }

    #[test]
    fn inner_product_at_identity() {
        let i = HpdMatrix::identity(3);
        let u = HermitianMatrix::identity(3);
        assert!((airm_inner(&i, &u, &u).unwrap() - 3.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_hermitian(&mut rng, 3, 1.0);
        let v = random_hermitian(&mut rng, 3, 1.0);
        let direct = u.as_matrix().matmul(v.as_matrix()).trace().re;
        assert!((airm_inner(&i, &u, &v).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn inner_product_is_positive_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let p = random_hpd(&mut rng, 3);
            let u = random_hermitian(&mut rng, 3, 1.0);
            let val = airm_inner(&p, &u, &u).unwrap();
            // oracle: ⟨u,u⟩_p = ‖p^{-1/2} u p^{-1/2}‖_F², strictly positive when the
            // congruence-transformed u has a nonzero eigenvalue
            let w = p.inv_sqrt().unwrap();
            let t = HermitianMatrix::from_matrix(&u.as_matrix().sandwich(w.as_matrix()));
            let eig = t.eig().unwrap();
            let oracle: f64 = eig.values.iter().map(|l| l * l).sum();
            assert!(oracle > 0.0 && val > 0.0);
            assert!((val - oracle).abs() < 1e-9 * oracle);
        }
    }
}
