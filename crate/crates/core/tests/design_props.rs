mod common;

use common::{grid, random_orthonormal, random_waveform};
use proptest::prelude::*;
use whofdm::design::{
    block_params_of, freq_leakage, objective, optimize, time_leakage, DesignObjective, Init, OptimizeOptions,
    Parameterization,
};
use whofdm::weyl_heisenberg::orthonormality_defect;

fn small_options(seed: u64) -> OptimizeOptions {
    OptimizeOptions {
        budget: 150,
        restarts: 3,
        master_seed: seed,
        jitter: 0.3,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_splits_into_leakages(gi in 0usize..5, len in 4usize..200, lambda in 0.0f64..=1.0, seed: u64) {
        let g = grid(gi);
        let v = if seed % 2 == 0 { random_waveform(&g, len, seed) } else { random_orthonormal(&g, 1, seed) };
        let mut obj = DesignObjective::new(&g).with_lambda(lambda);
        obj.mainlobe_len = obj.mainlobe_len.min(v.len());
        let f = freq_leakage(&v, &obj);
        let t = time_leakage(&v, &obj).unwrap();
        let j = objective(&v, &obj).unwrap();
        prop_assert!((j - (lambda * f + (1.0 - lambda) * t)).abs() <= 1e-15 * j.abs().max(1.0));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f) && (0.0..=1.0 + 1e-12).contains(&t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn iterates_stay_orthonormal_and_runs_repeat(gi in 0usize..4, degree in 0usize..2, random in any::<bool>(), seed: u64) {
        let g = grid(gi);
        let obj = DesignObjective::new(&g).with_lambda(0.4);
        let init = if random { Init::Random } else { Init::Rectangular };
        let opts = small_options(seed);
        let a = optimize(&g, Parameterization::Blocks { degree }, &init, &obj, &opts).unwrap();
        prop_assert!(a.defect < 1e-9);
        prop_assert!(orthonormality_defect(&a.waveform) < 1e-9);
        prop_assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        let b = optimize(&g, Parameterization::Blocks { degree }, &init, &obj, &opts).unwrap();
        prop_assert_eq!(a.params, b.params);
        prop_assert_eq!(a.history, b.history);
        prop_assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
        prop_assert_eq!(a.waveform, b.waveform);
        prop_assert_eq!((a.iterations, a.evaluations, a.restart), (b.iterations, b.evaluations, b.restart));
    }
}

#[test]
fn block_optimum_never_worse_than_short_window_optimum() {
    for gi in [0usize, 1, 2, 3] {
        let g = grid(gi);
        assert!(g.k <= 2 * g.n);
        let obj = DesignObjective::new(&g).with_lambda(0.5);
        let opts = OptimizeOptions {
            budget: 400,
            restarts: 4,
            master_seed: 11,
            jitter: 0.3,
        };
        let short = optimize(&g, Parameterization::ShortWindow, &Init::Rectangular, &obj, &opts).unwrap();
        let (degree, start) = (0..3)
            .find_map(|d| block_params_of(&short.waveform, d).ok().map(|x| (d, x)))
            .unwrap();
        let blocks = optimize(&g, Parameterization::Blocks { degree }, &Init::Given(start), &obj, &opts).unwrap();
        assert!(
            blocks.objective_value <= short.objective_value + 1e-6,
            "N={} K={}: blocks {} short {}",
            g.n,
            g.k,
            blocks.objective_value,
            short.objective_value
        );
        assert!(blocks.defect < 1e-9 && short.defect < 1e-9);
    }
}
