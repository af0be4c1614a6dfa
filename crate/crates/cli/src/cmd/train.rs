use anyhow::Context;
use serde::Serialize;

use abmil_core::bagio::{make_splits, SplitPlan, SplitScheme};
use abmil_core::harness::{
    ensemble_predict, run_cv, save_model, train_ensemble, CvOptions, TrainConfig,
};
use abmil_core::metrics::{auc, write_predictions_csv, Prediction};

use super::{create_dir, load_cohort, load_train_config, write_json};
use crate::args::{EnsembleArgs, GlobalArgs, TrainArgs};
use crate::exit;

pub fn train(global: &GlobalArgs, a: TrainArgs) -> anyhow::Result<()> {
    let cfg = load_train_config(a.config.as_deref(), global)?;
    let cohort = load_cohort(&a.cohort)?;
    let plan = match &a.splits {
        Some(p) => {
            let plan =
                SplitPlan::read_csv(p).with_context(|| format!("reading {}", p.display()))?;
            if plan.parts() != a.folds {
                return Err(exit::validation(format!(
                    "--folds {} but {} has {} parts",
                    a.folds,
                    p.display(),
                    plan.parts()
                )));
            }
            plan
        }
        None => make_splits(
            &cohort.manifest,
            SplitScheme::KFold { k: a.folds },
            cfg.seed,
        )?,
    };
    let result = run_cv(
        &cfg,
        &plan,
        &cohort.bags,
        CvOptions {
            workers: global.workers,
            test_view: None,
        },
    )?;

    create_dir(&a.out.join("models"))?;
    plan.write_csv(&a.out.join("splits.csv"))?;
    write_predictions_csv(&a.out.join("predictions.csv"), &result.pooled)?;
    write_json(&a.out.join("cv_report.json"), &result.report(&cfg))?;
    for f in &result.folds {
        let cfg = TrainConfig {
            seed: abmil_core::harness::fold_seed(cfg.seed, f.fold),
            ..cfg.clone()
        };
        save_model(
            &a.out.join("models").join(format!("fold_{}", f.fold)),
            &f.params,
            &cfg,
        )?;
    }
    println!(
        "pooled test AUC {:.4} over {} slides ({} folds); outputs in {}",
        result.summary.pooled_auc,
        result.pooled.len(),
        result.folds.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MemberReport {
    member: usize,
    best_val_loss: f64,
    best_epoch: usize,
    epochs_run: usize,
}

#[derive(Serialize)]
struct EnsembleReport {
    config: TrainConfig,
    members: Vec<MemberReport>,
    test_auc: Option<f64>,
}

pub fn ensemble(global: &GlobalArgs, a: EnsembleArgs) -> anyhow::Result<()> {
    let cfg = load_train_config(a.config.as_deref(), global)?;
    let cohort = load_cohort(&a.cohort)?;
    let test = a.test_cohort.as_deref().map(load_cohort).transpose()?;
    let ens = train_ensemble(&cfg, &cohort.bags, a.members, global.workers)?;

    let dir = a.out.join("members");
    create_dir(&dir)?;
    for (m, params) in ens.members.iter().enumerate() {
        save_model(&dir.join(format!("member_{m}")), params, &cfg)?;
    }
    let mut test_auc = None;
    if let Some(test) = test {
        let preds = test
            .bags
            .iter()
            .map(|b| {
                Ok(Prediction {
                    slide_id: b.slide_id.clone(),
                    patient_id: b.patient_id.clone(),
                    label: b.require_label()?,
                    prob_effective: ensemble_predict(&ens.members, b)?,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        write_predictions_csv(&a.out.join("predictions.csv"), &preds)?;
        test_auc = auc(&preds).ok();
    }
    let report = EnsembleReport {
        config: cfg,
        members: ens
            .outcomes
            .iter()
            .enumerate()
            .map(|(member, o)| MemberReport {
                member,
                best_val_loss: o.best_val_loss,
                best_epoch: o.best_epoch,
                epochs_run: o.epochs_run,
            })
            .collect(),
        test_auc,
    };
    write_json(&a.out.join("ensemble.json"), &report)?;
    match test_auc {
        Some(v) => println!("{} members; test AUC {v:.4}", ens.members.len()),
        None => println!("{} members written to {}", ens.members.len(), dir.display()),
    }
    Ok(())
}
