use proptest::prelude::*;

use prodmix::{
    draw_samples, identify, model_distance, random_model, IdentifyOptions, MixtureModel, MomentOracle, SearchMode,
    SeparatedRows, Subset,
};

fn options(strategy: prodmix::Strategy, search: SearchMode) -> IdentifyOptions {
    IdentifyOptions { strategy, search, ..Default::default() }
}

/// Every moment of sets up to size 3, by direct summation.
fn low_order_moments(model: &MixtureModel) -> Vec<(Subset, f64)> {
    let ground: Vec<usize> = (0..model.n()).collect();
    Subset::power_set(&ground)
        .into_iter()
        .filter(|s| s.len() <= 3)
        .map(|s| {
            let v = (0..model.k()).map(|j| model.pi()[j] * s.iter().map(|i| model.row(i)[j]).product::<f64>()).sum();
            (s, v)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recovered_model_reproduces_moments(seed in any::<u64>(), k in 1usize..=3, extra in 0usize..3) {
        let n = prodmix::Strategy::Doubling.min_rows(k) + extra;
        let truth = random_model(k, n, 0.15, 0.1, SeparatedRows::All, seed).unwrap();
        let rec = identify(&MomentOracle::exact(truth.clone()), k, 0.15, 0.1, &IdentifyOptions::default()).unwrap();
        let fitted = low_order_moments(&rec.model);
        for ((s, want), (_, got)) in low_order_moments(&truth).iter().zip(&fitted) {
            prop_assert!((want - got).abs() < 1e-9, "{s}: {want} vs {got}");
        }
    }

    #[test]
    fn relabelled_components_give_the_same_model(seed in any::<u64>(), k in 2usize..=3) {
        let truth = random_model(k, 3 * k - 2, 0.15, 0.1, SeparatedRows::All, seed).unwrap();
        let perm: Vec<usize> = (0..k).rev().collect();
        let swapped = truth.permuted(&perm).unwrap();
        let opts = IdentifyOptions::default();
        let a = identify(&MomentOracle::exact(truth), k, 0.15, 0.1, &opts).unwrap();
        let b = identify(&MomentOracle::exact(swapped), k, 0.15, 0.1, &opts).unwrap();
        prop_assert!(model_distance(&a.model, &b.model).unwrap().max_param_error < 1e-9);
    }

    #[test]
    fn search_modes_agree_when_all_rows_are_separated(seed in any::<u64>(), k in 2usize..=3, seq in any::<bool>()) {
        let strategy = if seq { prodmix::Strategy::Sequential } else { prodmix::Strategy::Doubling };
        let truth = random_model(k, strategy.min_rows(k) + 1, 0.15, 0.1, SeparatedRows::All, seed).unwrap();
        let oracle = MomentOracle::exact(truth);
        let fast = identify(&oracle, k, 0.15, 0.1, &options(strategy, SearchMode::AllSeparated)).unwrap();
        let full = identify(&oracle, k, 0.15, 0.1, &options(strategy, SearchMode::Exhaustive)).unwrap();
        prop_assert_eq!(&fast.diagnostics.selection, &full.diagnostics.selection);
        prop_assert_eq!(fast.model, full.model);
    }

    #[test]
    fn noise_error_scales_with_eps(seed in any::<u64>()) {
        let truth = random_model(2, 4, 0.3, 0.2, SeparatedRows::All, seed).unwrap();
        let err = |eps: f64| {
            let oracle = MomentOracle::perturbed(truth.clone(), eps, seed).unwrap();
            let rec = identify(&oracle, 2, 0.3, 0.2, &IdentifyOptions::default()).unwrap();
            model_distance(&truth, &rec.model).unwrap().max_param_error
        };
        // same perturbation direction, so the first-order error is linear in eps
        let ratio = err(1e-7) / err(1e-9);
        prop_assert!((50.0..=200.0).contains(&ratio), "ratio {}", ratio);
    }
}

#[test]
fn rows_outside_the_triple_are_recovered() {
    // Rows beyond the 3k−3 used by the triple come from a single solve each.
    let truth = random_model(3, 12, 0.15, 0.1, SeparatedRows::Count(6), 21).unwrap();
    let rec = identify(&MomentOracle::exact(truth.clone()), 3, 0.15, 0.1, &IdentifyOptions::default()).unwrap();
    assert!(model_distance(&truth, &rec.model).unwrap().max_param_error < 1e-8);
    assert_eq!(rec.model.n(), 12);
}

#[test]
fn empirical_error_shrinks_with_samples() {
    let truth = random_model(2, 3, 0.5, 0.3, SeparatedRows::All, 4).unwrap();
    let err = |n: usize| -> f64 {
        let errs: Vec<f64> = (0..5u64)
            .map(|s| {
                let oracle = MomentOracle::empirical(draw_samples(&truth, n, s).unwrap());
                let rec = identify(&oracle, 2, 0.5, 0.3, &IdentifyOptions::default()).unwrap();
                model_distance(&truth, &rec.model).unwrap().max_param_error
            })
            .collect();
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let (small, large) = (err(10_000), err(1_000_000));
    // 100× the samples: about 10× smaller error
    assert!(small / large > 4.0, "{small} vs {large}");
}
