use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsReport, Prediction, RocCurve, DEFAULT_THRESHOLD};
use crate::bagio::Label;
use crate::fsutil::{write_atomic, write_atomic_bytes};

#[derive(Serialize, Deserialize)]
struct PredictionRow {
    slide_id: String,
    patient_id: String,
    #[serde(deserialize_with = "parse_label")]
    label: Label,
    prob_effective: f64,
    #[serde(default)]
    predicted: Option<Label>,
}

/// Accepts the spellings of [`Label::parse`], including `1`/`0`.
fn parse_label<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Label, D::Error> {
    let s = String::deserialize(d)?;
    Label::parse(&s).map_err(serde::de::Error::custom)
}

/// `slide_id,patient_id,label,prob_effective,predicted`; `predicted` uses the
/// default 0.5 threshold, is optional on read and ignored.
pub fn write_predictions_csv(path: &Path, preds: &[Prediction]) -> Result<(), MetricsError> {
    write_atomic(path, |w| {
        let mut writer = csv::Writer::from_writer(w);
        for p in preds {
            writer
                .serialize(PredictionRow {
                    slide_id: p.slide_id.clone(),
                    patient_id: p.patient_id.clone(),
                    label: p.label,
                    prob_effective: p.prob_effective,
                    predicted: Some(p.predicted_label(DEFAULT_THRESHOLD)),
                })
                .map_err(std::io::Error::other)?;
        }
        writer.flush()
    })?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>, MetricsError> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| MetricsError::Format(e.to_string()))?;
    reader
        .deserialize::<PredictionRow>()
        .map(|r| {
            let r = r.map_err(|e| MetricsError::Format(e.to_string()))?;
            if !(0.0..=1.0).contains(&r.prob_effective) {
                return Err(MetricsError::InvalidProbability(r.prob_effective));
            }
            Ok(Prediction {
                slide_id: r.slide_id,
                patient_id: r.patient_id,
                label: r.label,
                prob_effective: r.prob_effective,
            })
        })
        .collect()
}

pub fn write_roc_csv(path: &Path, roc: &RocCurve) -> Result<(), MetricsError> {
    write_atomic(path, |w| {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["fpr", "tpr", "threshold"])?;
        for p in &roc.points {
            writer.write_record([
                p.fpr.to_string(),
                p.tpr.to_string(),
                p.threshold.to_string(),
            ])?;
        }
        writer.flush()
    })?;
    Ok(())
}

pub fn write_report_json(path: &Path, report: &MetricsReport) -> Result<(), MetricsError> {
    let mut json =
        serde_json::to_vec_pretty(report).map_err(|e| MetricsError::Format(e.to_string()))?;
    json.push(b'\n');
    write_atomic_bytes(path, &json)?;
    Ok(())
}
