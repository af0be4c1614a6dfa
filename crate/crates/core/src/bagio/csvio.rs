//! CSV feature import/export.
//!
//! One row per region; the header is
//! `slide_id,patient_id,label,x,y,<D feature columns>`. Rows of one slide are
//! grouped into a bag in order of first appearance. `label` is
//! `effective`/`invalid`/`1`/`0`, or empty for unlabeled slides. Feature values
//! are rounded to `f32`, matching what the binary format stores.

use std::io::{Read, Write};

use super::{BagIoError, FeatureBag, Label, RegionCoord};
use crate::nn::Matrix;

const FIXED_COLUMNS: [&str; 5] = ["slide_id", "patient_id", "label", "x", "y"];

pub fn read_features_csv<R: Read>(r: R, region_size: u64) -> Result<Vec<FeatureBag>, BagIoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.len() <= FIXED_COLUMNS.len()
        || headers.iter().zip(FIXED_COLUMNS).any(|(h, want)| h != want)
    {
        return Err(BagIoError::Csv(format!(
            "expected header {} followed by feature columns",
            FIXED_COLUMNS.join(",")
        )));
    }
    let d = headers.len() - FIXED_COLUMNS.len();

    struct Pending {
        slide_id: String,
        patient_id: String,
        label: Option<Label>,
        data: Vec<f64>,
        coords: Vec<RegionCoord>,
    }
    let mut order: Vec<Pending> = Vec::new();
    let mut index = std::collections::HashMap::new();

    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = line + 2;
        let slide = &rec[0];
        let patient = &rec[1];
        let label = match &rec[2] {
            "" => None,
            s => Some(Label::parse(s)?),
        };
        let parse_u64 = |s: &str, col: &str| {
            s.parse::<u64>()
                .map_err(|_| BagIoError::Csv(format!("row {row}: bad {col} '{s}'")))
        };
        let coord = RegionCoord {
            x: parse_u64(&rec[3], "x")?,
            y: parse_u64(&rec[4], "y")?,
            size: region_size,
        };
        let slot = *index.entry(slide.to_string()).or_insert_with(|| {
            order.push(Pending {
                slide_id: slide.to_string(),
                patient_id: patient.to_string(),
                label,
                data: Vec::new(),
                coords: Vec::new(),
            });
            order.len() - 1
        });
        let p = &mut order[slot];
        if p.patient_id != patient || p.label != label {
            return Err(BagIoError::Inconsistent(format!(
                "row {row}: slide {slide} changes patient or label"
            )));
        }
        for (j, field) in rec.iter().skip(FIXED_COLUMNS.len()).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| BagIoError::Csv(format!("row {row}: bad feature {j} '{field}'")))?;
            p.data.push(v as f32 as f64);
        }
        p.coords.push(coord);
    }

    order
        .into_iter()
        .map(|p| {
            let n = p.coords.len();
            FeatureBag::new(
                p.slide_id,
                p.patient_id,
                p.label,
                Matrix::new(n, d, p.data).map_err(|e| BagIoError::Csv(e.to_string()))?,
                p.coords,
            )
        })
        .collect()
}

pub fn write_features_csv<W: Write>(w: W, bags: &[FeatureBag]) -> Result<(), BagIoError> {
    let d = bags.first().map_or(0, |b| b.feature_dim());
    let mut writer = csv::Writer::from_writer(w);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..d).map(|j| format!("f{j}")));
    writer.write_record(&header).map_err(csv_err)?;
    for bag in bags {
        if bag.feature_dim() != d {
            return Err(BagIoError::Inconsistent("mixed feature dimensions".into()));
        }
        for (k, c) in bag.coords.iter().enumerate() {
            let mut rec = vec![
                bag.slide_id.clone(),
                bag.patient_id.clone(),
                bag.label.map_or(String::new(), |l| l.as_str().to_string()),
                c.x.to_string(),
                c.y.to_string(),
            ];
            rec.extend(bag.features.row(k).iter().map(|&v| (v as f32).to_string()));
            writer.write_record(&rec).map_err(csv_err)?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> BagIoError {
    BagIoError::Csv(e.to_string())
}
