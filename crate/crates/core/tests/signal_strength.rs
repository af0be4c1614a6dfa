//! Cross-validated AUC grows with the planted signal.

use abmil_core::bagio::{make_splits, SplitScheme};
use abmil_core::harness::{run_cv, CvOptions, TrainConfig};
use abmil_core::synth::{generate_cohort_with, CohortSpec, SignalSpec};

const EFFECTS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 5.0];
const SEEDS: u64 = 5;
const SLACK: f64 = 0.03;

fn mean_pooled_auc(effect: f64) -> f64 {
    let total: f64 = (0..SEEDS)
        .map(|seed| {
            let spec = CohortSpec {
                signal: SignalSpec {
                    effect,
                    fraction: 0.3,
                },
                seed,
                ..CohortSpec::default()
            };
            let c = generate_cohort_with(&spec, 0).unwrap();
            let plan = make_splits(&c.cohort.manifest, SplitScheme::KFold { k: 5 }, seed).unwrap();
            let cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            run_cv(&cfg, &plan, c.bags(), CvOptions::default())
                .unwrap()
                .summary
                .pooled_auc
        })
        .sum();
    total / SEEDS as f64
}

#[test]
fn auc_non_decreasing_in_effect_size() {
    let aucs: Vec<f64> = EFFECTS.iter().map(|&e| mean_pooled_auc(e)).collect();
    eprintln!("mean pooled AUC by effect {EFFECTS:?}: {aucs:.3?}");
    for w in aucs.windows(2) {
        assert!(w[1] >= w[0] - SLACK, "{aucs:?}");
    }
    assert!(aucs[4] >= 0.95, "{aucs:?}");
}
