use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{run_fold, TestView};
use super::{with_workers, HarnessError, TrainConfig};
use crate::bagio::{FeatureBag, SplitPlan};
use crate::fsutil::write_atomic;
use crate::metrics::{auc, Prediction};
use crate::mil::{ClamConfig, DEFAULT_INSTANCE_LOSS_WEIGHT};
use crate::seed::{derive_seed, tags};

/// One stage of the search: the Cartesian product of the listed values, each
/// configuration cross-validated `repeats` times with different seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridStage {
    pub name: String,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
    pub l2_weight: Vec<f64>,
    pub attention_dim: Vec<usize>,
    pub patches_per_slide: Vec<usize>,
    /// CLAM instance count B; absent means plain attention MIL.
    #[serde(default)]
    pub clam_b: Option<Vec<usize>>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    3
}

impl GridStage {
    /// Configurations in row-major order, learning rate outermost.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let clam_opts: Vec<Option<usize>> = match &self.clam_b {
            Some(bs) => bs.iter().map(|&b| Some(b)).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &dropout in &self.dropout {
                for &l2_weight in &self.l2_weight {
                    for &attention_dim in &self.attention_dim {
                        for &patches_per_slide in &self.patches_per_slide {
                            for b in &clam_opts {
                                let clam = b.map(|b| ClamConfig {
                                    b,
                                    instance_loss_weight: base
                                        .clam
                                        .map_or(DEFAULT_INSTANCE_LOSS_WEIGHT, |c| {
                                            c.instance_loss_weight
                                        }),
                                });
                                out.push(TrainConfig {
                                    learning_rate,
                                    dropout,
                                    l2_weight,
                                    attention_dim,
                                    patches_per_slide,
                                    clam: clam.or(base.clam),
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn num_configs(&self) -> usize {
        self.learning_rate.len()
            * self.dropout.len()
            * self.l2_weight.len()
            * self.attention_dim.len()
            * self.patches_per_slide.len()
            * self.clam_b.as_ref().map_or(1, Vec::len)
    }

    /// Cross-validation runs the stage performs (configs times repeats).
    pub fn num_runs(&self) -> usize {
        self.num_configs() * self.repeats
    }

    fn validate(&self, i: usize, base: &TrainConfig) -> Result<(), HarnessError> {
        let key = |field: &str| format!("stages[{i}].{field}");
        let lists = [
            ("learning_rate", self.learning_rate.len()),
            ("dropout", self.dropout.len()),
            ("l2_weight", self.l2_weight.len()),
            ("attention_dim", self.attention_dim.len()),
            ("patches_per_slide", self.patches_per_slide.len()),
            ("clam_b", self.clam_b.as_ref().map_or(1, Vec::len)),
        ];
        for (field, len) in lists {
            if len == 0 {
                return Err(HarnessError::config(
                    key(field),
                    "must list at least one value",
                ));
            }
        }
        if self.repeats == 0 {
            return Err(HarnessError::config(key("repeats"), "must be at least 1"));
        }
        for cfg in self.configs(base) {
            cfg.validate().map_err(|e| match e {
                HarnessError::InvalidConfig { key: k, message } => {
                    HarnessError::config(key(if k == "clam" { "clam_b" } else { &k }), message)
                }
                other => other,
            })?;
        }
        Ok(())
    }
}

/// A tuning specification: shared settings plus one or more stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneFile {
    #[serde(default)]
    pub base: TrainConfig,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub stages: Vec<GridStage>,
}

fn default_folds() -> usize {
    5
}

impl TuneFile {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.base.validate()?;
        if self.folds < 3 {
            return Err(HarnessError::config("folds", format!("{} < 3", self.folds)));
        }
        if self.stages.is_empty() {
            return Err(HarnessError::EmptyGrid);
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate(i, &self.base)?;
        }
        Ok(())
    }

    pub fn num_configs(&self) -> usize {
        self.stages.iter().map(GridStage::num_configs).sum()
    }

    pub fn num_runs(&self) -> usize {
        self.stages.iter().map(GridStage::num_runs).sum()
    }
}

/// Reads a tuning file: `.json` as JSON, anything else as TOML.
pub fn load_tune_file(path: &Path) -> Result<TuneFile, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let parsed: Result<TuneFile, String> = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        _ => toml::from_str(&text).map_err(|e| e.to_string()),
    };
    let tune = parsed.map_err(|e| HarnessError::ConfigFile(format!("{}: {e}", path.display())))?;
    tune.validate()?;
    Ok(tune)
}

/// Training seed of one fold of one repeat of one configuration.
pub fn run_seed(seed: u64, stage: usize, config: usize, repeat: usize, fold: usize) -> u64 {
    derive_seed(
        seed,
        &[
            tags::TUNE,
            stage as u64,
            config as u64,
            repeat as u64,
            fold as u64,
        ],
    )
}

#[derive(Clone, Copy)]
pub struct GridOptions<'a> {
    pub workers: usize,
    pub test_view: Option<TestView<'a>>,
}

impl Default for GridOptions<'_> {
    fn default() -> Self {
        Self {
            workers: 1,
            test_view: None,
        }
    }
}

/// One cross-validated repeat of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRun {
    pub stage: usize,
    pub config_index: usize,
    pub repeat: usize,
    pub fold_val_losses: Vec<f64>,
    pub mean_val_loss: f64,
    /// Reported only; never used for selection.
    pub pooled_test_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub stage: usize,
    pub stage_name: String,
    pub config_index: usize,
    pub config: TrainConfig,
    /// Mean validation loss over all repeats and folds; the selection score.
    pub mean_val_loss: f64,
    pub std_val_loss: f64,
    pub mean_test_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    /// Ranked by mean validation loss, ties by stage then config index.
    pub results: Vec<TuneResult>,
    pub runs: Vec<TuneRun>,
    pub winner: TrainConfig,
}

/// Cross-validates every configuration of every stage and selects the one
/// with the lowest mean validation loss. Test parts are scored for reporting
/// but never enter the ranking.
pub fn grid_search(
    tune: &TuneFile,
    plan: &SplitPlan,
    bags: &[FeatureBag],
    opts: GridOptions<'_>,
) -> Result<GridSearchResult, HarnessError> {
    tune.validate()?;
    if plan.parts() != tune.folds {
        return Err(HarnessError::config(
            "folds",
            format!(
                "split plan has {} parts, tuning file asks for {}",
                plan.parts(),
                tune.folds
            ),
        ));
    }
    let configs: Vec<Vec<TrainConfig>> =
        tune.stages.iter().map(|s| s.configs(&tune.base)).collect();
    let mut tasks = Vec::new();
    for (s, stage) in tune.stages.iter().enumerate() {
        for c in 0..configs[s].len() {
            for r in 0..stage.repeats {
                for f in 0..tune.folds {
                    tasks.push((s, c, r, f));
                }
            }
        }
    }
    let seed = tune.base.seed;
    let folds = with_workers(opts.workers, || {
        tasks
            .par_iter()
            .map(|&(s, c, r, f)| {
                let cfg = TrainConfig {
                    seed: run_seed(seed, s, c, r, f),
                    ..configs[s][c].clone()
                };
                run_fold(&cfg, plan, bags, f, opts.test_view)
            })
            .collect::<Result<Vec<_>, _>>()
    })??;

    let mut runs = Vec::new();
    for (chunk, key) in folds.chunks(tune.folds).zip(tasks.chunks(tune.folds)) {
        let (s, c, r, _) = key[0];
        let losses: Vec<f64> = chunk.iter().map(|f| f.best_val_loss).collect();
        let pooled: Vec<Prediction> = chunk
            .iter()
            .flat_map(|f| f.test_predictions.iter().cloned())
            .collect();
        runs.push(TuneRun {
            stage: s,
            config_index: c,
            repeat: r,
            mean_val_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            fold_val_losses: losses,
            pooled_test_auc: auc(&pooled).ok(),
        });
    }

    let mut results = Vec::new();
    for (s, stage) in tune.stages.iter().enumerate() {
        for (c, cfg) in configs[s].iter().enumerate() {
            let mine: Vec<&TuneRun> = runs
                .iter()
                .filter(|r| r.stage == s && r.config_index == c)
                .collect();
            let losses: Vec<f64> = mine
                .iter()
                .flat_map(|r| r.fold_val_losses.iter().copied())
                .collect();
            let n = losses.len() as f64;
            let mean = losses.iter().sum::<f64>() / n;
            let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
            let aucs: Vec<f64> = mine.iter().filter_map(|r| r.pooled_test_auc).collect();
            results.push(TuneResult {
                stage: s,
                stage_name: stage.name.clone(),
                config_index: c,
                config: cfg.clone(),
                mean_val_loss: mean,
                std_val_loss: var.sqrt(),
                mean_test_auc: (!aucs.is_empty())
                    .then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            });
        }
    }
    results.sort_by(|a, b| {
        a.mean_val_loss
            .total_cmp(&b.mean_val_loss)
            .then(a.stage.cmp(&b.stage))
            .then(a.config_index.cmp(&b.config_index))
    });
    let winner = results
        .first()
        .ok_or(HarnessError::EmptyGrid)?
        .config
        .clone();
    Ok(GridSearchResult {
        results,
        runs,
        winner,
    })
}

/// One row per configuration in rank order.
pub fn write_tuning_csv(path: &Path, results: &[TuneResult]) -> Result<(), HarnessError> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| std::io::Error::other(e);
        out.write_record([
            "rank",
            "stage",
            "config_index",
            "learning_rate",
            "dropout",
            "l2_weight",
            "attention_dim",
            "patches_per_slide",
            "clam_b",
            "mean_val_loss",
            "std_val_loss",
            "mean_test_auc",
        ])
        .map_err(io)?;
        for (rank, r) in results.iter().enumerate() {
            let c = &r.config;
            out.write_record([
                (rank + 1).to_string(),
                r.stage_name.clone(),
                r.config_index.to_string(),
                c.learning_rate.to_string(),
                c.dropout.to_string(),
                c.l2_weight.to_string(),
                c.attention_dim.to_string(),
                c.patches_per_slide.to_string(),
                c.clam.map_or(String::new(), |c| c.b.to_string()),
                r.mean_val_loss.to_string(),
                r.std_val_loss.to_string(),
                r.mean_test_auc.map_or(String::new(), |a| a.to_string()),
            ])
            .map_err(io)?;
        }
        out.flush()
    })?;
    Ok(())
}
