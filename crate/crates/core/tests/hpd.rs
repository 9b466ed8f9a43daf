use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srsr_core::hpd::airm_distance;
use srsr_core::sampling::{random_hpd, random_invertible};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_a_congruence_invariant_metric(seed in any::<u64>(), d in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, z) = (random_hpd(&mut rng, d), random_hpd(&mut rng, d), random_hpd(&mut rng, d));
        let g = random_invertible(&mut rng, d);
        let dxy = airm_distance(&x, &y).unwrap();
        let tol = 1e-9 * dxy.max(1.0);
        prop_assert!((airm_distance(&y, &x).unwrap() - dxy).abs() < tol);
        prop_assert!((airm_distance(&x.congruence(&g), &y.congruence(&g)).unwrap() - dxy).abs() < tol);
        let via = airm_distance(&x, &z).unwrap() + airm_distance(&z, &y).unwrap();
        prop_assert!(dxy <= via + tol);
    }

    #[test]
    fn log_and_exp_are_inverse(seed in any::<u64>(), d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_hpd(&mut rng, d);
        let back = x.log().unwrap().exp().unwrap();
        prop_assert!(back.as_matrix().relative_error(x.as_matrix()) < 1e-10);
    }
}
