use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_one, with_workers, HarnessError, TrainConfig};
use crate::bagio::{cv_roles, FeatureBag, SplitPlan};
use crate::metrics::{auc, cv_auc_summary, CvAucSummary, Prediction};
use crate::mil::{predict_proba, MilModelParams};
use crate::seed::{derive_seed, tags};

/// Transformation applied to a fold's test bags before they are scored.
/// Test bags are only ever seen through this view, which lets an audit poison
/// them and check that nothing upstream changes.
pub type TestView<'a> = &'a (dyn Fn(usize, &FeatureBag) -> FeatureBag + Sync);

#[derive(Clone, Copy)]
pub struct CvOptions<'a> {
    pub workers: usize,
    pub test_view: Option<TestView<'a>>,
}

impl Default for CvOptions<'_> {
    fn default() -> Self {
        Self {
            workers: 1,
            test_view: None,
        }
    }
}

/// Seed of fold `fold` in a cross-validation run seeded with `base`.
pub fn fold_seed(base: u64, fold: usize) -> u64 {
    derive_seed(base, &[tags::CV, fold as u64])
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub params: MilModelParams,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_auc: Option<f64>,
    pub test_predictions: Vec<Prediction>,
    pub test_auc: Option<f64>,
}

fn predictions(
    params: &MilModelParams,
    bags: &[FeatureBag],
) -> Result<Vec<Prediction>, HarnessError> {
    bags.iter()
        .map(|b| {
            Ok(Prediction {
                slide_id: b.slide_id.clone(),
                patient_id: b.patient_id.clone(),
                label: b.require_label()?,
                prob_effective: predict_proba(&b.features, params)?,
            })
        })
        .collect()
}

/// Trains on the rotation's train parts, early-stops on its validation part,
/// then scores the test part through `test_view`.
pub(crate) fn run_fold(
    config: &TrainConfig,
    plan: &SplitPlan,
    bags: &[FeatureBag],
    fold: usize,
    test_view: Option<TestView<'_>>,
) -> Result<FoldResult, HarnessError> {
    let roles = cv_roles(plan.parts(), fold);
    let pick = |parts: &[usize]| -> Vec<&FeatureBag> {
        plan.bag_indices(bags, parts)
            .into_iter()
            .map(|i| &bags[i])
            .collect()
    };
    let train = pick(&roles.train);
    let val = pick(&[roles.val]);
    let outcome = train_one(config, &train, &val)?;

    let val_owned: Vec<FeatureBag> = val.into_iter().cloned().collect();
    let val_auc = auc(&predictions(&outcome.params, &val_owned)?).ok();

    let test_part = roles.test.expect("cv rotation has a test part");
    let test: Vec<FeatureBag> = pick(&[test_part])
        .into_iter()
        .map(|b| match test_view {
            Some(view) => view(fold, b),
            None => b.clone(),
        })
        .collect();
    if test.is_empty() {
        return Err(HarnessError::EmptySplit("test"));
    }
    let test_predictions = predictions(&outcome.params, &test)?;
    Ok(FoldResult {
        fold,
        test_auc: auc(&test_predictions).ok(),
        params: outcome.params,
        best_val_loss: outcome.best_val_loss,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.epochs_run,
        val_auc,
        test_predictions,
    })
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    /// All folds' test predictions, concatenated in fold order.
    pub pooled: Vec<Prediction>,
    pub summary: CvAucSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub pooled_test_auc: f64,
    pub mean_fold_test_auc: Option<f64>,
}

impl CvResult {
    pub fn report(&self, config: &TrainConfig) -> CvReport {
        CvReport {
            config: config.clone(),
            folds: self
                .folds
                .iter()
                .map(|f| FoldReport {
                    fold: f.fold,
                    best_val_loss: f.best_val_loss,
                    best_epoch: f.best_epoch,
                    epochs_run: f.epochs_run,
                    val_auc: f.val_auc,
                    test_auc: f.test_auc,
                    n_test: f.test_predictions.len(),
                })
                .collect(),
            pooled_test_auc: self.summary.pooled_auc,
            mean_fold_test_auc: self.summary.mean_fold_auc,
        }
    }
}

/// One model per fold (fold `i` tests, fold `i+1` validates, the rest
/// train). Fold `i` trains with seed `fold_seed(config.seed, i)`.
pub fn run_cv(
    config: &TrainConfig,
    plan: &SplitPlan,
    bags: &[FeatureBag],
    opts: CvOptions<'_>,
) -> Result<CvResult, HarnessError> {
    config.validate()?;
    let k = plan.parts();
    if k < 3 {
        return Err(HarnessError::config("folds", format!("{k} < 3")));
    }
    let folds: Vec<FoldResult> = with_workers(opts.workers, || {
        (0..k)
            .into_par_iter()
            .map(|fold| {
                let cfg = TrainConfig {
                    seed: fold_seed(config.seed, fold),
                    ..config.clone()
                };
                run_fold(&cfg, plan, bags, fold, opts.test_view)
            })
            .collect::<Result<Vec<_>, _>>()
    })??;
    let per_fold: Vec<Vec<Prediction>> = folds.iter().map(|f| f.test_predictions.clone()).collect();
    let summary = cv_auc_summary(&per_fold)?;
    Ok(CvResult {
        pooled: per_fold.into_iter().flatten().collect(),
        folds,
        summary,
    })
}
