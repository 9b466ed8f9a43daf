use proptest::prelude::*;
use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use srsr_core::coding::{
    ista_solve, ista_step, objective, spg_init, Dictionary, EncodingProblem, SolveStop, SparseCode,
    SrsrConfig,
};
use srsr_core::hpd::HpdMatrix;
use srsr_core::sampling::random_hpd;

fn instance(seed: u64, d: usize, n: usize) -> (EncodingProblem, Dictionary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms: Vec<HpdMatrix> = (0..n).map(|_| random_hpd(&mut rng, d)).collect();
    let dict = Dictionary::new(atoms, vec![1; n]).unwrap();
    (EncodingProblem::new(random_hpd(&mut rng, d)).unwrap(), dict)
}

#[test]
fn small_instances_reach_the_grid_minimum() {
    for seed in 0..3 {
        let (p, dict) = instance(100 + seed, 2, 3);
        let cfg = SrsrConfig {
            step: 0.05,
            ..SrsrConfig::default()
        };
        let start = spg_init(&p, &dict, &cfg);
        let stop = SolveStop {
            max_iterations: 20_000,
            ..SolveStop::default()
        };
        let solved = ista_solve(&p, &start, &dict, &cfg, &stop);
        let f = *solved.trace.last().unwrap();

        let grid_min = (0..=200)
            .into_par_iter()
            .map(|i| {
                let mut best = f64::INFINITY;
                for j in 0..=200 {
                    for k in 0..=200 {
                        let a = SparseCode::new(vec![i as f64 * 0.01, j as f64 * 0.01, k as f64 * 0.01]).unwrap();
                        if let Ok(v) = objective(&p, &a, &dict, cfg.lambda) {
                            best = best.min(v);
                        }
                    }
                }
                best
            })
            .reduce(|| f64::INFINITY, f64::min);
        assert!(f <= grid_min + 1e-3, "seed {seed}: ista {f} vs grid {grid_min}");
    }
}

#[test]
fn safeguarded_runs_are_monotone() {
    for seed in 0..10 {
        let (p, dict) = instance(200 + seed, 3, 8);
        let cfg = SrsrConfig {
            step: 0.5,
            ..SrsrConfig::default()
        };
        let run = ista_solve(&p, &SparseCode::uniform(8), &dict, &cfg, &SolveStop::default());
        for w in run.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_produced_code_is_feasible(seed in 0u64..10_000, step in 1e-4f64..5.0, lambda in 0.0f64..2.0) {
        let (p, dict) = instance(seed, 3, 6);
        let cfg = SrsrConfig { step, lambda, ..SrsrConfig::default() };
        let a0 = spg_init(&p, &dict, &cfg);
        prop_assert!(a0.as_slice().iter().all(|v| *v >= 0.0 && v.is_finite()));
        let a1 = ista_step(&p, &a0, &dict, &cfg).code;
        prop_assert!(a1.as_slice().iter().all(|v| *v >= 0.0 && v.is_finite()));
    }
}
