//! Property tests for the structural invariants.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use entreg::harness::{generate_instance, io, BMode};
use entreg::kernel::{evaluate, ProblemInstance};
use entreg::sketch::{subsample_with_budget, verify_spectral};

fn arb_problem() -> impl Strategy<Value = (ProblemInstance, Vec<f64>)> {
    (2usize..12, 1usize..4, 0.0f64..=1.0, any::<u64>()).prop_flat_map(|(n, extra_d, gamma, seed)| {
        let d = extra_d.min(n);
        let problem =
            generate_instance(n, d, 1.5, seed, BMode::SimplexRandom, 10.0, 1.0, gamma).unwrap();
        (
            Just(problem),
            proptest::collection::vec(-1.0f64..1.0, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // The prediction stays on the simplex and the entropy quantities stay in
    // their proven ranges at every finite point.
    #[test]
    fn evaluation_invariants_hold((problem, x_raw) in arb_problem()) {
        let x = DVector::from_vec(x_raw);
        let e = evaluate(&problem, &x).unwrap();
        let n = problem.n() as f64;
        prop_assert!((e.f.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(e.f.norm() <= 1.0 + 1e-12);
        prop_assert!(e.l_ent >= -1e-12 && e.l_ent <= n.ln() + 1e-10);
        prop_assert!(e.h.iter().all(|&hi| (-1.0 - 1e-12..=1e-12).contains(&hi)));
        prop_assert!(e.h.iter().map(|v| v.abs()).sum::<f64>() <= n.ln() + 1e-10);
        // Bitwise purity.
        let e2 = evaluate(&problem, &x).unwrap();
        prop_assert_eq!(e.l_total.to_bits(), e2.l_total.to_bits());
    }

    // Instances survive the JSON schema bit for bit.
    #[test]
    fn instance_json_roundtrip((problem, _) in arb_problem()) {
        let dir = std::env::temp_dir()
            .join(format!("entreg-prop-{}-{:x}", std::process::id(), problem.metadata.seed.unwrap_or(0)));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.json");
        io::save_instance(&problem, &path).unwrap();
        let loaded = io::load_instance(&path).unwrap();
        prop_assert_eq!(&loaded, &problem);
        std::fs::remove_dir_all(&dir).ok();
    }

    // The sampled diagonal is deterministic in the seed, respects the
    // budget, and its whitened spectrum is positive.
    #[test]
    fn sketch_determinism_and_sparsity(seed in any::<u64>(), budget in 4usize..40) {
        let a = DMatrix::from_fn(24, 3, |i, j| (((i + 2) * (j + 1)) as f64 * 0.61).sin());
        let q = DVector::from_fn(24, |i, _| 1.0 + 0.1 * (i as f64 * 0.9).cos().abs());
        let s1 = subsample_with_budget(&a, &q, budget, 0.1, 0.05, seed).unwrap();
        let s2 = subsample_with_budget(&a, &q, budget, 0.1, 0.05, seed).unwrap();
        prop_assert_eq!(&s1, &s2);
        prop_assert!(s1.nnz() <= budget);
        prop_assert!(s1.values.iter().all(|&v| v > 0.0));
        let (lo, _, _) = verify_spectral(&a, &q, &s1).unwrap();
        prop_assert!(lo >= 0.0);
    }
}
