use anyhow::Context;

use abmil_core::metrics::{
    evaluate, read_predictions_csv, write_report_json, write_roc_csv, BootstrapOptions,
    MetricOptions, ResampleLevel,
};

use super::create_dir;
use crate::args::{EvalArgs, GlobalArgs, LevelArg};
use crate::exit;

pub fn run(global: &GlobalArgs, a: EvalArgs) -> anyhow::Result<()> {
    if !a.predictions.is_file() {
        return Err(exit::input(format!(
            "{} not found",
            a.predictions.display()
        )));
    }
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(exit::validation(format!(
            "--threshold {} outside [0, 1]",
            a.threshold
        )));
    }
    let preds = read_predictions_csv(&a.predictions)
        .with_context(|| format!("reading {}", a.predictions.display()))?;
    let options = MetricOptions {
        threshold: a.threshold,
        ..MetricOptions::default()
    };
    let boot = BootstrapOptions {
        iterations: a.iterations,
        seed: global.seed.unwrap_or(0),
        level: match a.level {
            LevelArg::Slide => ResampleLevel::Slide,
            LevelArg::Patient => ResampleLevel::Patient,
        },
    };
    let (report, roc) = evaluate(&preds, options, &boot)?;
    create_dir(&a.out)?;
    write_report_json(&a.out.join("metrics.json"), &report)?;
    write_roc_csv(&a.out.join("roc.csv"), &roc)?;
    let b = &report.auc.bootstrap;
    println!(
        "AUC {:.4} (bootstrap mean {:.4}, 95% CI {:.4}-{:.4}); balanced accuracy {:.4}; n = {}",
        report.auc.point,
        b.mean,
        b.ci_low,
        b.ci_high,
        report.balanced_accuracy.point,
        report.n_predictions
    );
    Ok(())
}
