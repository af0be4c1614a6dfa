use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{validate_predictions, Metric, MetricOptions, MetricsError, Prediction, ScoredSet};
use crate::seed::{stream, tags};

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleLevel {
    /// Resample individual predictions.
    Slide,
    /// Resample patients, taking all of a drawn patient's slides.
    Patient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub iterations: usize,
    pub seed: u64,
    pub level: ResampleLevel,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            seed: 0,
            level: ResampleLevel::Slide,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Population standard deviation over the retained resamples.
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub iterations: usize,
    /// Resamples skipped because they contained one class only.
    pub skipped_single_class: usize,
}

/// Multiplicity vector of iteration `i`. Each iteration owns an RNG stream
/// derived from `(seed, i)`, so results do not depend on how iterations are
/// scheduled across threads.
fn draw_counts(n: usize, groups: Option<&[Vec<usize>]>, seed: u64, i: usize) -> Vec<u32> {
    let mut rng = stream(seed, &[tags::BOOTSTRAP, i as u64]);
    let mut counts = vec![0u32; n];
    match groups {
        None => {
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
        }
        Some(groups) => {
            for _ in 0..groups.len() {
                for &j in &groups[rng.random_range(0..groups.len())] {
                    counts[j] += 1;
                }
            }
        }
    }
    counts
}

fn patient_groups(preds: &[Prediction]) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        map.entry(p.patient_id.as_str()).or_default().push(i);
    }
    map.into_values().collect()
}

fn summarize(mut values: Vec<f64>, iterations: usize) -> Result<BootstrapSummary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::AllResamplesDegenerate);
    }
    let m = values.len() as f64;
    // shifted by the first value: exact for constant metrics, and better
    // conditioned than a raw sum
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    values.sort_by(f64::total_cmp);
    Ok(BootstrapSummary {
        mean,
        std: var.sqrt(),
        ci_low: percentile(&values, 0.025),
        ci_high: percentile(&values, 0.975),
        iterations,
        skipped_single_class: iterations - values.len(),
    })
}

/// Linear interpolation between closest ranks of sorted `values`.
pub(crate) fn percentile(values: &[f64], q: f64) -> f64 {
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        values[lo]
    } else {
        values[lo] + (values[hi] - values[lo]) * frac
    }
}

fn run(
    set: &ScoredSet,
    metrics: &[Metric],
    counts_of: impl Fn(usize) -> Vec<u32> + Sync,
    iterations: usize,
) -> Result<Vec<BootstrapSummary>, MetricsError> {
    if iterations == 0 {
        return Err(MetricsError::NoIterations);
    }
    let per_iter: Vec<Option<Vec<f64>>> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let counts = counts_of(i);
            let (pos, neg) = set.class_totals(&counts);
            if pos == 0 || neg == 0 {
                return None;
            }
            Some(
                metrics
                    .iter()
                    .map(|&m| set.metric(m, &counts).expect("two classes present"))
                    .collect(),
            )
        })
        .collect();
    let kept: Vec<&Vec<f64>> = per_iter.iter().flatten().collect();
    if kept.len() < iterations {
        log::warn!(
            "bootstrap: skipped {} single-class resamples of {iterations}",
            iterations - kept.len()
        );
    }
    (0..metrics.len())
        .map(|k| summarize(kept.iter().map(|v| v[k]).collect(), iterations))
        .collect()
}

pub fn bootstrap_all(
    preds: &[Prediction],
    options: MetricOptions,
    boot: &BootstrapOptions,
) -> Result<BTreeMap<Metric, BootstrapSummary>, MetricsError> {
    validate_predictions(preds)?;
    let set = ScoredSet::new(preds, options);
    let groups = (boot.level == ResampleLevel::Patient).then(|| patient_groups(preds));
    let n = set.len();
    let summaries = run(
        &set,
        &Metric::ALL,
        |i| draw_counts(n, groups.as_deref(), boot.seed, i),
        boot.iterations,
    )?;
    Ok(Metric::ALL.into_iter().zip(summaries).collect())
}

pub fn bootstrap(
    preds: &[Prediction],
    metric: Metric,
    options: MetricOptions,
    boot: &BootstrapOptions,
) -> Result<BootstrapSummary, MetricsError> {
    validate_predictions(preds)?;
    let set = ScoredSet::new(preds, options);
    let groups = (boot.level == ResampleLevel::Patient).then(|| patient_groups(preds));
    let n = set.len();
    let mut s = run(
        &set,
        &[metric],
        |i| draw_counts(n, groups.as_deref(), boot.seed, i),
        boot.iterations,
    )?;
    Ok(s.remove(0))
}

/// Bootstrap over caller-supplied resamples (lists of prediction indices).
pub fn bootstrap_with_resamples(
    preds: &[Prediction],
    metric: Metric,
    options: MetricOptions,
    resamples: &[Vec<usize>],
) -> Result<BootstrapSummary, MetricsError> {
    validate_predictions(preds)?;
    let set = ScoredSet::new(preds, options);
    let n = set.len();
    let mut s = run(
        &set,
        &[metric],
        |i| {
            let mut counts = vec![0u32; n];
            for &j in &resamples[i] {
                counts[j] += 1;
            }
            counts
        },
        resamples.len(),
    )?;
    Ok(s.remove(0))
}
