use pim_core::objective::Scoring;
use pim_core::dataset::generate_synthetic;
use pim_core::init::init_prototypes;
use pim_core::pim::{estimate_k, lambda_grid, partition, Sequential};
use pim_core::{AblationFlags, FeatureSet, InitStrategy, Objective, PimConfig, ScoreKind, SynthSpec, Tail};
use proptest::prelude::*;

fn small(seed: u64, k_total: usize, k_old: usize) -> (FeatureSet, Vec<usize>) {
    let spec = SynthSpec {
        k_total,
        k_old,
        dim: 4,
        samples_per_class_base: 12,
        tail: Tail::Uniform,
        separation: 4.0,
        noise_sigma: 1.0,
        labeled_fraction: 0.5,
        seed,
    };
    let (fs, truth) = generate_synthetic(&spec).unwrap();
    (fs.l2_normalized().unwrap(), truth)
}

fn quick(seed: u64) -> PimConfig {
    PimConfig {
        lambda_grid: lambda_grid(4, 0.05, 1.0),
        epochs_partition: 30,
        epochs_ksearch: 20,
        sskm_max_iters: 20,
        seed,
        ..PimConfig::default()
    }
}

fn score_kind() -> impl Strategy<Value = ScoreKind> {
    prop_oneof![Just(ScoreKind::Dot), Just(ScoreKind::NegSqdist)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fit_is_deterministic_and_descends(seed in any::<u64>(), lambda in 0.05f64..1.0, score in score_kind()) {
        let (fs, _) = small(seed, 4, 2);
        let config = quick(seed);
        let init = init_prototypes(&fs, 4, InitStrategy::SsKm, 20, seed).unwrap();
        let objective = Objective::Constrained { lambda, flags: AblationFlags::default() };
        let scoring = Scoring { kind: score, temperature: 1.0 };
        let a = pim_core::optimizer::fit(&fs, &init, objective, scoring, config.adam, 40).unwrap();
        let b = pim_core::optimizer::fit(&fs, &init, objective, scoring, config.adam, 40).unwrap();
        let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.trace), bits(&b.trace));
        prop_assert_eq!(a.model.prototypes(), b.model.prototypes());
        prop_assert!(a.trace.iter().all(|v| v.is_finite()));
        prop_assert!(a.final_loss.total <= a.trace[0] + 1e-12);
    }

    #[test]
    fn every_ablation_row_partitions(seed in any::<u64>(), row in 0usize..6, score in score_kind()) {
        let (fs, truth) = small(seed, 4, 2);
        let config = PimConfig { flags: AblationFlags::ABLATION_ROWS[row], score, ..quick(seed) };
        let p = partition(&fs, 4, &config, Some(&truth), &Sequential).unwrap();
        prop_assert_eq!(p.labels.len(), fs.len());
        prop_assert!(p.labels.iter().all(|&c| c < 4));
        prop_assert!(p.trace.iter().all(|v| v.is_finite()));
        let best = p.search.per_lambda.iter().map(|t| t.labeled_acc).fold(f64::MIN, f64::max);
        let chosen = p.search.per_lambda.iter().find(|t| t.lambda == p.search.lambda_opt).unwrap();
        prop_assert_eq!(chosen.labeled_acc, best);
        let r = p.report.unwrap();
        for acc in [r.acc_all, r.acc_old, r.acc_new, p.labeled_acc] {
            prop_assert!((0.0..=1.0).contains(&acc));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn k_search_probes_each_k_once(seed in any::<u64>(), k_max in prop_oneof![Just(8usize), Just(20usize)]) {
        let (fs, _) = small(seed, 4, 2);
        let config = PimConfig { k_max: Some(k_max), ..quick(seed) };
        let est = estimate_k(&fs, &config).unwrap();
        let mut ks: Vec<usize> = est.trace.iter().map(|p| p.k).collect();
        prop_assert_eq!(est.fits, ks.len());
        ks.sort_unstable();
        ks.dedup();
        prop_assert_eq!(ks.len(), est.trace.len());
        prop_assert!(ks.iter().all(|&k| k > 2 && k < k_max));
        prop_assert!(ks.contains(&est.k_hat));
        let top = est.trace.iter().map(|p| p.labeled_acc).fold(f64::MIN, f64::max);
        let hat = est.trace.iter().find(|p| p.k == est.k_hat).unwrap();
        prop_assert_eq!(hat.labeled_acc, top);
        if k_max == 8 {
            prop_assert_eq!(est.trace.len(), 5);
        }
    }
}
