use cail_core::confidence::ConfidenceTable;
use cail_core::demo::mixture_counts;
use cail_core::harness::{parse_config, serialize, spearman, ExperimentConfig};
use cail_core::mdp::{expected_return, occupancy_measure, random_mdp, random_policy};
use cail_core::ranking::{rk, rk_slope, RankingLossConfig};
use cail_core::rng::{sample_categorical, seeded};
use proptest::prelude::*;

fn betas() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, 1..40)
}

proptest! {
    #[test]
    fn normalized_weights_average_one(beta in betas()) {
        let table = ConfidenceTable::from_values(beta.clone()).unwrap();
        let slots: Vec<usize> = (0..beta.len()).collect();
        let w = table.normalized_weights(&slots).unwrap();
        prop_assert!((w.iter().sum::<f64>() / w.len() as f64 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rescale_preserves_weights(beta in betas()) {
        let table = ConfidenceTable::from_values(beta.clone()).unwrap();
        let slots: Vec<usize> = (0..beta.len()).collect();
        let before = table.normalized_weights(&slots).unwrap();
        let after = table.rescaled_to_mean_one().unwrap().normalized_weights(&slots).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn step_stays_nonnegative(beta in betas(), g in prop::collection::vec(-50.0f64..50.0, 40), alpha in 0.0f64..10.0) {
        let table = ConfidenceTable::from_values(beta.clone()).unwrap();
        let slots: Vec<usize> = (0..beta.len()).collect();
        let next = table.step(&slots, &g[..beta.len()], alpha);
        prop_assert!(next.values().iter().all(|b| *b >= 0.0));
    }

    #[test]
    fn ranking_loss_nonnegative_and_continuous(z in -1e-3f64..1e-3, ind in prop_oneof![Just(-1.0), Just(1.0)], eps in 1e-6f64..1e-3) {
        let cfg = RankingLossConfig::new(eps, 0.9).unwrap();
        prop_assert!(rk(z, 0.0, ind, &cfg) >= 0.0);
        for seam in [-eps, eps] {
            let l = rk(seam * (1.0 - 1e-12), 0.0, ind, &cfg);
            let r = rk(seam * (1.0 + 1e-12), 0.0, ind, &cfg);
            prop_assert!((l - r).abs() < 1e-12);
            let dl = rk_slope(seam * (1.0 - 1e-9), ind, eps);
            let dr = rk_slope(seam * (1.0 + 1e-9), ind, eps);
            prop_assert!((dl - dr).abs() < 1e-6);
        }
    }

    #[test]
    fn mixture_counts_sum_to_total(raw in prop::collection::vec(1u32..100, 1..6), extra in 0usize..300) {
        let s: u32 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|r| *r as f64 / s as f64).collect();
        let total = raw.len() + extra;
        let counts = mixture_counts(&p, total).unwrap();
        prop_assert_eq!(counts.iter().sum::<usize>(), total);
    }

    #[test]
    fn occupancy_mass_and_return(seed in 0u64..1000, ns in 2usize..12, na in 1usize..4, gamma in 0.5f64..0.95) {
        let mut rng = seeded(seed);
        let mdp = random_mdp(&mut rng, ns, na, gamma);
        let pi = random_policy(&mut rng, ns, na);
        let occ = occupancy_measure(&mdp, &pi, 1e-12).unwrap();
        let mass: f64 = occ.rho.iter().sum();
        prop_assert!((mass - 1.0 / (1.0 - gamma)).abs() < 1e-6);
        let weighted: f64 = occ.rho.iter().zip(mdp.rewards()).map(|(r, x)| r * x).sum();
        prop_assert!((weighted - expected_return(&mdp, &pi).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn categorical_never_picks_zero_mass(seed in 0u64..500, probs in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let s: f64 = probs.iter().sum();
        prop_assume!(s > 1e-6);
        let p: Vec<f64> = probs.iter().map(|x| x / s).collect();
        let mut rng = seeded(seed);
        for _ in 0..50 {
            let i = sample_categorical(&p, &mut rng);
            prop_assert!(p[i] > 0.0);
        }
    }

    #[test]
    fn spearman_is_bounded(a in prop::collection::vec(-5.0f64..5.0, 3..10)) {
        let b: Vec<f64> = a.iter().map(|x| x * x).collect();
        let r = spearman(&a, &b);
        prop_assert!(r.is_nan() || (-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!(spearman(&a, &a).is_nan() || (spearman(&a, &a) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn default_config_round_trips() {
    let cfg = ExperimentConfig::default();
    assert_eq!(parse_config(&serialize(&cfg)).unwrap(), cfg);
}
