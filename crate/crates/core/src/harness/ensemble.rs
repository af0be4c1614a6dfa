use rayon::prelude::*;

use super::{train_one, with_workers, HarnessError, TrainConfig, TrainOutcome};
use crate::bagio::{holdout_roles, make_patient_splits, CohortManifest, FeatureBag, SplitScheme};
use crate::mil::{ensemble_proba, MilModelParams};
use crate::seed::{derive_seed, tags};

pub const DEFAULT_ENSEMBLE_MEMBERS: usize = 4;

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config: TrainConfig,
    pub members: Vec<MilModelParams>,
    pub outcomes: Vec<TrainOutcome>,
}

/// Trains `k` models on a stratified k-way patient partition of all labelled
/// bags; member `m` validates (and early-stops) on part `m` and trains on the
/// rest. Member seeds are derived from `config.seed` and the member index.
pub fn train_ensemble(
    config: &TrainConfig,
    bags: &[FeatureBag],
    k: usize,
    workers: usize,
) -> Result<Ensemble, HarnessError> {
    config.validate()?;
    if k < 2 {
        return Err(HarnessError::config("members", format!("{k} < 2")));
    }
    let patients = CohortManifest::from_bags(bags)?.patient_labels();
    let plan = make_patient_splits(
        &patients,
        SplitScheme::KFold { k },
        derive_seed(config.seed, &[tags::ENSEMBLE]),
    )?;
    let outcomes = with_workers(workers, || {
        (0..k)
            .into_par_iter()
            .map(|m| {
                let roles = holdout_roles(k, m);
                let pick = |parts: &[usize]| -> Vec<&FeatureBag> {
                    plan.bag_indices(bags, parts)
                        .into_iter()
                        .map(|i| &bags[i])
                        .collect()
                };
                let cfg = TrainConfig {
                    seed: derive_seed(config.seed, &[tags::ENSEMBLE, m as u64 + 1]),
                    ..config.clone()
                };
                train_one(&cfg, &pick(&roles.train), &pick(&[roles.val]))
            })
            .collect::<Result<Vec<_>, _>>()
    })??;
    Ok(Ensemble {
        config: config.clone(),
        members: outcomes.iter().map(|o| o.params.clone()).collect(),
        outcomes,
    })
}

/// Mean of the members' effective-class probabilities.
pub fn ensemble_predict(members: &[MilModelParams], bag: &FeatureBag) -> Result<f64, HarnessError> {
    Ok(ensemble_proba(&bag.features, members)?)
}
