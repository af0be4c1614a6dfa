use std::path::Path;

use super::*;
use crate::bagio::{make_splits, FeatureBag, Label, SplitScheme};
use crate::mil::ClamConfig;
use crate::synth::{generate_cohort_with, CohortSpec, SignalSpec};

fn cohort(seed: u64) -> Vec<FeatureBag> {
    let spec = CohortSpec {
        patients: 20,
        slides_per_patient: (1, 2),
        regions_per_slide: (13, 30),
        feature_dim: 8,
        signal: SignalSpec {
            effect: 3.0,
            fraction: 0.3,
        },
        seed,
        ..CohortSpec::default()
    };
    generate_cohort_with(&spec, 0).unwrap().cohort.bags
}

fn quick() -> TrainConfig {
    TrainConfig {
        dropout: 0.25,
        l2_weight: 1e-3,
        attention_dim: 8,
        patches_per_slide: 10,
        max_epochs: 4,
        patience: 4,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn plan(bags: &[FeatureBag], k: usize) -> crate::bagio::SplitPlan {
    let m = crate::bagio::CohortManifest::from_bags(bags).unwrap();
    make_splits(&m, SplitScheme::KFold { k }, 1).unwrap()
}

#[test]
fn cv_pools_every_bag_once_and_ignores_worker_count() {
    let bags = cohort(1);
    let plan = plan(&bags, 4);
    let one = run_cv(
        &quick(),
        &plan,
        &bags,
        CvOptions {
            workers: 1,
            test_view: None,
        },
    )
    .unwrap();
    let many = run_cv(
        &quick(),
        &plan,
        &bags,
        CvOptions {
            workers: 3,
            test_view: None,
        },
    )
    .unwrap();
    assert_eq!(one.pooled, many.pooled);
    assert_eq!(one.summary, many.summary);
    let mut ids: Vec<&str> = one.pooled.iter().map(|p| p.slide_id.as_str()).collect();
    ids.sort_unstable();
    let mut all: Vec<&str> = bags.iter().map(|b| b.slide_id.as_str()).collect();
    all.sort_unstable();
    assert_eq!(ids, all);
    for f in &one.folds {
        for p in &f.test_predictions {
            assert_eq!(plan.part_of(&p.patient_id), Some(f.fold));
        }
    }
    let report = one.report(&quick());
    assert_eq!(report.folds.len(), 4);
    assert_eq!(report.pooled_test_auc, one.summary.pooled_auc);
}

#[test]
fn fold_seeds_differ() {
    let s: std::collections::BTreeSet<u64> = (0..5).map(|f| fold_seed(3, f)).collect();
    assert_eq!(s.len(), 5);
}

#[test]
fn shipped_stage_files_have_the_documented_size() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let counts: Vec<(usize, usize)> = (1..=3)
        .map(|s| {
            let t = load_tune_file(&dir.join(format!("table1_stage{s}.toml"))).unwrap();
            assert_eq!(t.folds, 5);
            (t.num_configs(), t.num_runs())
        })
        .collect();
    assert_eq!(counts, vec![(243, 729), (243, 729), (192, 576)]);
    let t = load_tune_file(&dir.join("table1_stage1.toml")).unwrap();
    let configs = t.stages[0].configs(&t.base);
    assert_eq!(configs[0].learning_rate, 1e-3);
    assert_eq!(configs[0].patches_per_slide, 25);
    assert_eq!(configs[1].patches_per_slide, 50);
    assert_eq!(configs[81].learning_rate, 1e-4);
    let final_cfg: TrainConfig =
        toml::from_str(&std::fs::read_to_string(dir.join("final.toml")).unwrap()).unwrap();
    assert_eq!(final_cfg, TrainConfig::default());
}

#[test]
fn tune_file_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.toml");
    std::fs::write(
        &p,
        "[[stages]]\nname='a'\nlearning_rate=[1e-3]\ndropout=[0.5, 1.5]\nl2_weight=[0.1]\nattention_dim=[8]\npatches_per_slide=[5]\n",
    )
    .unwrap();
    let err = load_tune_file(&p).unwrap_err().to_string();
    assert!(err.contains("stages[0].dropout"), "{err}");
    std::fs::write(&p, "[[stages]]\nname='a'\nlr=[1e-3]\n").unwrap();
    assert!(matches!(
        load_tune_file(&p),
        Err(HarnessError::ConfigFile(_))
    ));
    let j = dir.path().join("t.json");
    std::fs::write(
        &j,
        r#"{"folds": 3, "stages": [{"name": "a", "learning_rate": [0.001], "dropout": [0.5],
            "l2_weight": [0.1], "attention_dim": [8], "patches_per_slide": [5], "clam_b": [2, 4]}]}"#,
    )
    .unwrap();
    let t = load_tune_file(&j).unwrap();
    assert_eq!(t.num_runs(), 6);
    assert_eq!(
        t.stages[0].configs(&t.base)[1].clam,
        Some(ClamConfig::new(4, 0.3).unwrap())
    );
}

fn small_tune(repeats: usize) -> TuneFile {
    TuneFile {
        base: quick(),
        folds: 3,
        stages: vec![GridStage {
            name: "s".into(),
            learning_rate: vec![1e-2, 1e-5],
            dropout: vec![0.25],
            l2_weight: vec![1e-3],
            attention_dim: vec![8],
            patches_per_slide: vec![10],
            clam_b: None,
            repeats,
        }],
    }
}

#[test]
fn grid_ranks_by_validation_loss_and_is_worker_independent() {
    let bags = cohort(2);
    let plan = plan(&bags, 3);
    let tune = small_tune(2);
    let a = grid_search(
        &tune,
        &plan,
        &bags,
        GridOptions {
            workers: 1,
            test_view: None,
        },
    )
    .unwrap();
    let b = grid_search(
        &tune,
        &plan,
        &bags,
        GridOptions {
            workers: 4,
            test_view: None,
        },
    )
    .unwrap();
    assert_eq!(a.results, b.results);
    assert_eq!(a.runs.len(), 4);
    assert!(a
        .results
        .windows(2)
        .all(|w| w[0].mean_val_loss <= w[1].mean_val_loss));
    assert_eq!(a.winner, a.results[0].config);
    let dir = tempfile::tempdir().unwrap();
    write_tuning_csv(&dir.path().join("t.csv"), &a.results).unwrap();
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn single_option_grid_selects_it() {
    let bags = cohort(3);
    let plan = plan(&bags, 3);
    let mut tune = small_tune(1);
    tune.stages[0].learning_rate = vec![1e-3];
    let r = grid_search(&tune, &plan, &bags, GridOptions::default()).unwrap();
    assert_eq!(r.results.len(), 1);
    assert_eq!(r.winner.learning_rate, 1e-3);
}

#[test]
fn poisoned_test_features_do_not_change_selection() {
    let bags = cohort(4);
    let plan = plan(&bags, 3);
    let tune = small_tune(1);
    // replace test features with the label itself: any leak would be obvious
    let poison = |_fold: usize, b: &FeatureBag| {
        let mut out = b.clone();
        let v = if b.label == Some(Label::Effective) {
            50.0
        } else {
            -50.0
        };
        out.features.data_mut().iter_mut().for_each(|x| *x = v);
        out
    };
    let clean = grid_search(&tune, &plan, &bags, GridOptions::default()).unwrap();
    let dirty = grid_search(
        &tune,
        &plan,
        &bags,
        GridOptions {
            workers: 1,
            test_view: Some(&poison),
        },
    )
    .unwrap();
    assert_eq!(clean.winner, dirty.winner);
    let losses = |r: &GridSearchResult| {
        r.results
            .iter()
            .map(|t| t.mean_val_loss)
            .collect::<Vec<_>>()
    };
    assert_eq!(losses(&clean), losses(&dirty));
    assert_ne!(
        clean
            .runs
            .iter()
            .map(|r| r.pooled_test_auc)
            .collect::<Vec<_>>(),
        dirty
            .runs
            .iter()
            .map(|r| r.pooled_test_auc)
            .collect::<Vec<_>>()
    );
}

#[test]
fn ensemble_members_cover_disjoint_validation_parts() {
    let bags = cohort(5);
    let e = train_ensemble(&quick(), &bags, DEFAULT_ENSEMBLE_MEMBERS, 2).unwrap();
    assert_eq!(e.members.len(), 4);
    let again = train_ensemble(&quick(), &bags, 4, 1).unwrap();
    assert_eq!(e.members, again.members);
    assert_ne!(e.members[0], e.members[1]);
    let p = ensemble_predict(&e.members, &bags[0]).unwrap();
    let mean = e
        .members
        .iter()
        .map(|m| crate::mil::predict_proba(&bags[0].features, m).unwrap())
        .sum::<f64>()
        / 4.0;
    assert!((p - mean).abs() < 1e-15);
    let same = vec![e.members[0].clone(); 3];
    assert_eq!(
        ensemble_predict(&same, &bags[0]).unwrap(),
        crate::mil::predict_proba(&bags[0].features, &e.members[0]).unwrap()
    );
}

#[test]
fn zero_workers_is_a_config_error() {
    assert!(matches!(
        with_workers(0, || ()),
        Err(HarnessError::InvalidConfig { .. })
    ));
}
