mod common;

use common::*;
use oodkit::metrics::{aupr, auroc, dtacc, scored, tnr_at_tpr, MetricsReport, Positive};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

#[test]
fn metrics_match_brute_force_on_random_instances() {
    for seed in 0..50 {
        let (id, ood) = random_instance(seed);
        let s = scored(&id, &ood);
        assert!((auroc(&s).unwrap() - pairwise_auroc(&id, &ood)).abs() < TOL, "auroc seed {seed}");
        assert!((dtacc(&s).unwrap() - exhaustive_dtacc(&id, &ood)).abs() < TOL, "dtacc seed {seed}");
        assert!(
            (aupr(&s, Positive::Out).unwrap() - exhaustive_aupr_out(&id, &ood)).abs() < TOL,
            "aupr-out seed {seed}"
        );
        assert!((aupr(&s, Positive::In).unwrap() - exhaustive_aupr_in(&id, &ood)).abs() < TOL, "aupr-in seed {seed}");
        assert!((tnr_at_tpr(&s, 0.95).unwrap() - exhaustive_tnr(&id, &ood, 0.95)).abs() < TOL, "tnr seed {seed}");
    }
}

#[test]
fn metrics_are_invariant_under_monotone_transforms() {
    for seed in 0..50 {
        let (id, ood) = random_instance(seed);
        let a = MetricsReport::from_scores(&id, &ood, 0.95).unwrap();
        let b = MetricsReport::from_scores(&monotone(&id), &monotone(&ood), 0.95).unwrap();
        for (x, y) in [
            (a.tnr_at_tpr, b.tnr_at_tpr),
            (a.auroc, b.auroc),
            (a.dtacc, b.dtacc),
            (a.aupr_in, b.aupr_in),
            (a.aupr_out, b.aupr_out),
        ] {
            assert!((x - y).abs() < TOL, "seed {seed}: {x} vs {y}");
        }
    }
}

#[test]
fn brute_force_hand_case() {
    let id = [0.1, 0.2, 0.3, 0.4];
    let ood = [0.35, 0.5];
    assert_eq!(pairwise_auroc(&id, &ood), 7.0 / 8.0);
    // t = 0.3 keeps 3/4 iD and rejects both OOD rows.
    assert_eq!(exhaustive_dtacc(&id, &ood), 0.5 * 0.75 + 0.5);
    // Ranking 0.5+, 0.4-, 0.35+: precision 1 at recall ½, then 2/3 at recall 1.
    assert!((exhaustive_aupr_out(&id, &ood) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn dtacc_and_aupr_match_enumeration(
        id in prop::collection::vec(-20i32..20, 1..40),
        ood in prop::collection::vec(-20i32..20, 1..40),
    ) {
        let id: Vec<f64> = id.into_iter().map(|v| f64::from(v) / 8.0).collect();
        let ood: Vec<f64> = ood.into_iter().map(|v| f64::from(v) / 8.0).collect();
        let s = scored(&id, &ood);
        prop_assert!((dtacc(&s).unwrap() - exhaustive_dtacc(&id, &ood)).abs() < TOL);
        prop_assert!((aupr(&s, Positive::Out).unwrap() - exhaustive_aupr_out(&id, &ood)).abs() < TOL);
        prop_assert!((aupr(&s, Positive::In).unwrap() - exhaustive_aupr_in(&id, &ood)).abs() < TOL);
    }
}
