//! Evaluation metrics: Mann–Whitney AUC, ROC curves, balanced accuracy,
//! accuracy and F1, with seeded bootstrap summaries.
//!
//! Every metric is computed from per-prediction *multiplicities*, so a
//! bootstrap resample is just a count vector over the original predictions and
//! never needs re-sorting.

mod bootstrap;
mod io;

use serde::{Deserialize, Serialize};

use crate::bagio::Label;

pub use bootstrap::{
    bootstrap, bootstrap_all, bootstrap_with_resamples, BootstrapOptions, BootstrapSummary,
    ResampleLevel, DEFAULT_BOOTSTRAP_ITERATIONS,
};
pub use io::{read_predictions_csv, write_predictions_csv, write_report_json, write_roc_csv};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("metric undefined: predictions contain only {0} examples")]
    SingleClass(Label),
    #[error("no predictions")]
    Empty,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("every bootstrap resample was single-class")]
    AllResamplesDegenerate,
    #[error("bootstrap needs at least one iteration")]
    NoIterations,
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub slide_id: String,
    pub patient_id: String,
    pub label: Label,
    /// Predicted probability of the "effective" class.
    pub prob_effective: f64,
}

impl Prediction {
    pub fn predicted_label(&self, threshold: f64) -> Label {
        if self.prob_effective >= threshold {
            Label::Effective
        } else {
            Label::Invalid
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    BalancedAccuracy,
    Accuracy,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Auc,
        Metric::BalancedAccuracy,
        Metric::Accuracy,
        Metric::F1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
        }
    }
}

/// Operating point for the thresholded metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub threshold: f64,
    pub f1_positive: Label,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            f1_positive: Label::Effective,
        }
    }
}

pub fn validate_predictions(preds: &[Prediction]) -> Result<(), MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(p) = preds
        .iter()
        .find(|p| !(0.0..=1.0).contains(&p.prob_effective))
    {
        return Err(MetricsError::InvalidProbability(p.prob_effective));
    }
    Ok(())
}

/// Predictions sorted by score with tie groups precomputed; shared by the
/// point estimates and every bootstrap resample.
#[derive(Debug, Clone)]
pub(crate) struct ScoredSet {
    /// prediction index, in ascending score order
    order: Vec<usize>,
    /// `[start, end)` ranges into `order` of equal scores
    groups: Vec<(usize, usize)>,
    positive: Vec<bool>,
    predicted_positive: Vec<bool>,
    options: MetricOptions,
}

impl ScoredSet {
    pub(crate) fn new(preds: &[Prediction], options: MetricOptions) -> Self {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| {
            preds[a]
                .prob_effective
                .total_cmp(&preds[b].prob_effective)
                .then(a.cmp(&b))
        });
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=order.len() {
            if i == order.len()
                || preds[order[i]].prob_effective != preds[order[start]].prob_effective
            {
                groups.push((start, i));
                start = i;
            }
        }
        Self {
            order,
            groups,
            positive: preds.iter().map(|p| p.label == Label::Effective).collect(),
            predicted_positive: preds
                .iter()
                .map(|p| p.predicted_label(options.threshold) == Label::Effective)
                .collect(),
            options,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.positive.len()
    }

    pub(crate) fn class_totals(&self, counts: &[u32]) -> (u64, u64) {
        let mut pos = 0u64;
        let mut neg = 0u64;
        for (i, &c) in counts.iter().enumerate() {
            if self.positive[i] {
                pos += c as u64;
            } else {
                neg += c as u64;
            }
        }
        (pos, neg)
    }

    /// Mann–Whitney AUC: `(2·concordant + ties) / (2·pos·neg)`, exact integer
    /// numerator.
    pub(crate) fn auc(&self, counts: &[u32]) -> Option<f64> {
        let mut neg_below = 0u64;
        let mut numerator = 0u128;
        let (mut pos_total, mut neg_total) = (0u64, 0u64);
        for &(s, e) in &self.groups {
            let (mut gp, mut gn) = (0u64, 0u64);
            for &i in &self.order[s..e] {
                let c = counts[i] as u64;
                if self.positive[i] {
                    gp += c;
                } else {
                    gn += c;
                }
            }
            numerator += gp as u128 * (2 * neg_below + gn) as u128;
            neg_below += gn;
            pos_total += gp;
            neg_total += gn;
        }
        if pos_total == 0 || neg_total == 0 {
            return None;
        }
        Some(numerator as f64 / (2 * pos_total as u128 * neg_total as u128) as f64)
    }

    pub(crate) fn confusion(&self, counts: &[u32]) -> Confusion {
        let mut c = Confusion::default();
        for (i, &n) in counts.iter().enumerate() {
            let n = n as u64;
            match (self.positive[i], self.predicted_positive[i]) {
                (true, true) => c.tp += n,
                (true, false) => c.fn_ += n,
                (false, true) => c.fp += n,
                (false, false) => c.tn += n,
            }
        }
        c
    }

    pub(crate) fn metric(&self, metric: Metric, counts: &[u32]) -> Option<f64> {
        match metric {
            Metric::Auc => self.auc(counts),
            Metric::BalancedAccuracy => Some(self.confusion(counts).balanced_accuracy()),
            Metric::Accuracy => Some(self.confusion(counts).accuracy()),
            Metric::F1 => Some(self.confusion(counts).f1(self.options.f1_positive)),
        }
    }
}

/// Confusion counts with "effective" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio_or_zero(num: u64, den: u64, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what}: zero denominator, reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio_or_zero(self.tp + self.tn, self.total(), "accuracy")
    }

    pub fn balanced_accuracy(&self) -> f64 {
        let pos_recall = ratio_or_zero(self.tp, self.tp + self.fn_, "effective recall");
        let neg_recall = ratio_or_zero(self.tn, self.tn + self.fp, "invalid recall");
        (pos_recall + neg_recall) / 2.0
    }

    /// F1 for `positive`; for "invalid" the roles of the cells swap.
    pub fn f1(&self, positive: Label) -> f64 {
        let (tp, fp, fn_) = match positive {
            Label::Effective => (self.tp, self.fp, self.fn_),
            Label::Invalid => (self.tn, self.fn_, self.fp),
        };
        ratio_or_zero(2 * tp, 2 * tp + fp + fn_, "f1")
    }
}

fn unit_counts(n: usize) -> Vec<u32> {
    vec![1; n]
}

fn single_class_error(preds: &[Prediction]) -> MetricsError {
    MetricsError::SingleClass(preds.first().map_or(Label::Effective, |p| p.label))
}

pub fn auc(preds: &[Prediction]) -> Result<f64, MetricsError> {
    validate_predictions(preds)?;
    ScoredSet::new(preds, MetricOptions::default())
        .auc(&unit_counts(preds.len()))
        .ok_or_else(|| single_class_error(preds))
}

pub fn confusion(preds: &[Prediction], threshold: f64) -> Confusion {
    let opts = MetricOptions {
        threshold,
        ..MetricOptions::default()
    };
    ScoredSet::new(preds, opts).confusion(&unit_counts(preds.len()))
}

pub fn accuracy(preds: &[Prediction], threshold: f64) -> f64 {
    confusion(preds, threshold).accuracy()
}

pub fn balanced_accuracy(preds: &[Prediction], threshold: f64) -> f64 {
    confusion(preds, threshold).balanced_accuracy()
}

pub fn f1(preds: &[Prediction], threshold: f64, positive: Label) -> f64 {
    confusion(preds, threshold).f1(positive)
}

pub fn compute_metric(
    preds: &[Prediction],
    metric: Metric,
    options: MetricOptions,
) -> Result<f64, MetricsError> {
    validate_predictions(preds)?;
    ScoredSet::new(preds, options)
        .metric(metric, &unit_counts(preds.len()))
        .ok_or_else(|| single_class_error(preds))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called "effective"; the first point uses +∞.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Threshold sweep over the unique scores in descending order, with
/// trapezoidal area.
pub fn roc_curve(preds: &[Prediction]) -> Result<RocCurve, MetricsError> {
    validate_predictions(preds)?;
    let set = ScoredSet::new(preds, MetricOptions::default());
    let (pos, neg) = set.class_totals(&unit_counts(preds.len()));
    if pos == 0 || neg == 0 {
        return Err(single_class_error(preds));
    }
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(s, e) in set.groups.iter().rev() {
        for &i in &set.order[s..e] {
            if set.positive[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: preds[set.order[s]].prob_effective,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub point: f64,
    pub bootstrap: BootstrapSummary,
}

/// Full evaluation of one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_predictions: usize,
    pub n_effective: usize,
    pub n_invalid: usize,
    pub options: MetricOptions,
    pub bootstrap: BootstrapOptions,
    pub auc: MetricSummary,
    pub balanced_accuracy: MetricSummary,
    pub accuracy: MetricSummary,
    pub f1: MetricSummary,
    pub confusion: Confusion,
    pub roc_auc_trapezoid: f64,
}

impl MetricsReport {
    pub fn summary(&self, metric: Metric) -> &MetricSummary {
        match metric {
            Metric::Auc => &self.auc,
            Metric::BalancedAccuracy => &self.balanced_accuracy,
            Metric::Accuracy => &self.accuracy,
            Metric::F1 => &self.f1,
        }
    }
}

pub fn evaluate(
    preds: &[Prediction],
    options: MetricOptions,
    boot: &BootstrapOptions,
) -> Result<(MetricsReport, RocCurve), MetricsError> {
    validate_predictions(preds)?;
    let roc = roc_curve(preds)?;
    let mut summaries = bootstrap_all(preds, options, boot)?;
    let set = ScoredSet::new(preds, options);
    let ones = unit_counts(preds.len());
    let mut take = |m: Metric| -> Result<MetricSummary, MetricsError> {
        Ok(MetricSummary {
            point: set
                .metric(m, &ones)
                .ok_or_else(|| single_class_error(preds))?,
            bootstrap: summaries.remove(&m).expect("all metrics bootstrapped"),
        })
    };
    let report = MetricsReport {
        n_predictions: preds.len(),
        n_effective: preds.iter().filter(|p| p.label == Label::Effective).count(),
        n_invalid: preds.iter().filter(|p| p.label == Label::Invalid).count(),
        options,
        bootstrap: boot.clone(),
        auc: take(Metric::Auc)?,
        balanced_accuracy: take(Metric::BalancedAccuracy)?,
        accuracy: take(Metric::Accuracy)?,
        f1: take(Metric::F1)?,
        confusion: set.confusion(&ones),
        roc_auc_trapezoid: roc.auc,
    };
    Ok((report, roc))
}

/// Cross-validation summary that keeps the two AUC aggregations apart:
/// scoring the concatenated test predictions once (`pooled_auc`) versus
/// averaging per-fold AUCs (`mean_fold_auc`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAucSummary {
    pub pooled_auc: f64,
    pub fold_aucs: Vec<Option<f64>>,
    pub mean_fold_auc: Option<f64>,
}

pub fn cv_auc_summary(folds: &[Vec<Prediction>]) -> Result<CvAucSummary, MetricsError> {
    let pooled: Vec<Prediction> = folds.iter().flatten().cloned().collect();
    let pooled_auc = auc(&pooled)?;
    let fold_aucs: Vec<Option<f64>> = folds.iter().map(|f| auc(f).ok()).collect();
    let defined: Vec<f64> = fold_aucs.iter().flatten().copied().collect();
    let mean_fold_auc =
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(CvAucSummary {
        pooled_auc,
        fold_aucs,
        mean_fold_auc,
    })
}
