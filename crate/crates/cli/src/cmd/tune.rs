use anyhow::Context;

use abmil_core::bagio::{make_splits, SplitScheme};
use abmil_core::fsutil::write_atomic;
use abmil_core::harness::{grid_search, load_tune_file, write_tuning_csv, GridOptions, TuneRun};

use super::{create_dir, load_cohort};
use crate::args::{GlobalArgs, TuneArgs};

/// One row per fold of every cross-validation run.
fn write_runs_csv(
    path: &std::path::Path,
    runs: &[TuneRun],
    names: &[String],
) -> anyhow::Result<()> {
    write_atomic(path, |w| {
        writeln!(
            w,
            "stage,config_index,repeat,fold,val_loss,run_mean_val_loss,run_pooled_test_auc"
        )?;
        for r in runs {
            for (fold, loss) in r.fold_val_losses.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    names[r.stage],
                    r.config_index,
                    r.repeat,
                    fold,
                    loss,
                    r.mean_val_loss,
                    r.pooled_test_auc.map_or(String::new(), |a| a.to_string())
                )?;
            }
        }
        Ok(())
    })
    .with_context(|| format!("writing {}", path.display()))
}

pub fn run(global: &GlobalArgs, a: TuneArgs) -> anyhow::Result<()> {
    let mut tune = load_tune_file(&a.grid)?;
    if let Some(seed) = global.seed {
        tune.base.seed = seed;
    }
    let cohort = load_cohort(&a.cohort)?;
    let plan = make_splits(
        &cohort.manifest,
        SplitScheme::KFold { k: tune.folds },
        tune.base.seed,
    )?;
    log::info!(
        "{} configurations, {} cross-validation runs",
        tune.num_configs(),
        tune.num_runs()
    );
    let result = grid_search(
        &tune,
        &plan,
        &cohort.bags,
        GridOptions {
            workers: global.workers,
            test_view: None,
        },
    )?;
    create_dir(&a.out)?;
    plan.write_csv(&a.out.join("splits.csv"))?;
    write_tuning_csv(&a.out.join("tuning.csv"), &result.results)?;
    let names: Vec<String> = tune.stages.iter().map(|s| s.name.clone()).collect();
    write_runs_csv(&a.out.join("runs.csv"), &result.runs, &names)?;
    let winner = toml::to_string(&result.winner)?;
    abmil_core::fsutil::write_atomic_bytes(&a.out.join("winner.toml"), winner.as_bytes())?;
    print!("{winner}");
    Ok(())
}
