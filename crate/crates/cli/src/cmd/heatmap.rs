use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use abmil_core::harness::{load_model, MODEL_EXTENSION};
use abmil_core::heatmap::{
    attention_rows, attention_summary, blank_canvas, mean_attention, render_heatmap,
    write_attention_csv, AttentionRow, AttentionSummary, HeatmapSpec, Normalization,
};
use abmil_core::mil::MilModelParams;
use abmil_core::preprocess::{read_image, write_rgb_png, RegionManifest};
use abmil_core::synth::REGIONS_FILE;

use super::{create_dir, load_cohort, write_json};
use crate::args::{GlobalArgs, HeatmapArgs};
use crate::exit;

/// A model stem, or every `*.abmc` in a directory (sorted).
fn load_models(path: &Path) -> anyhow::Result<Vec<MilModelParams>> {
    let stems: Vec<PathBuf> = if path.is_dir() {
        let mut stems: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(MODEL_EXTENSION))
            .map(|p| p.with_extension(""))
            .collect();
        stems.sort();
        stems
    } else {
        vec![path.to_path_buf()]
    };
    if stems.is_empty() {
        return Err(exit::input(format!(
            "no .{MODEL_EXTENSION} models in {}",
            path.display()
        )));
    }
    stems
        .iter()
        .map(|s| {
            load_model(s)
                .map(|(p, _)| p)
                .with_context(|| format!("loading model {}", s.display()))
        })
        .collect()
}

#[derive(Serialize)]
struct HeatmapReport {
    slides: Vec<AttentionSummary>,
    flagged: usize,
    /// Mean confounding score over slides where both groups are present.
    mean_confounding_score: Option<f64>,
}

pub fn run(_global: &GlobalArgs, a: HeatmapArgs) -> anyhow::Result<()> {
    let normalization = match a.percentile.as_deref() {
        None => Normalization::MinMax,
        Some(&[low, high]) => Normalization::Percentile { low, high },
        Some(_) => return Err(exit::validation("--percentile takes two values")),
    };
    let spec = HeatmapSpec {
        normalization,
        alpha: a.alpha,
        ..HeatmapSpec::default()
    };
    spec.validate()?;
    if a.thumbnail_scale == 0 {
        return Err(exit::validation("--thumbnail-scale must be at least 1"));
    }
    let cohort = load_cohort(&a.cohort)?;
    let models = load_models(&a.model)?;
    let regions_path = a
        .regions
        .clone()
        .unwrap_or_else(|| a.cohort.join(REGIONS_FILE));
    let manifests: BTreeMap<String, RegionManifest> = RegionManifest::read_csv(&regions_path)
        .with_context(|| format!("reading {}", regions_path.display()))?
        .into_iter()
        .map(|m| (m.slide_id.clone(), m))
        .collect();

    let bags: Vec<_> = match &a.slides {
        Some(ids) => ids
            .iter()
            .map(|id| {
                cohort
                    .bags
                    .iter()
                    .find(|b| &b.slide_id == id)
                    .ok_or_else(|| exit::input(format!("slide {id} is not in the cohort")))
            })
            .collect::<anyhow::Result<_>>()?,
        None => cohort.bags.iter().collect(),
    };
    create_dir(&a.out)?;

    let per_slide: Vec<(Vec<AttentionRow>, AttentionSummary)> = bags
        .par_iter()
        .map(|bag| {
            let manifest = manifests
                .get(&bag.slide_id)
                .ok_or_else(|| exit::input(format!("no regions for slide {}", bag.slide_id)))?;
            let attention = mean_attention(&bag.features, &models)?;
            let canvas = match &a.thumbnails {
                Some(dir) => read_image(&dir.join(format!("{}.png", bag.slide_id)))?
                    .with_scale(a.thumbnail_scale)?,
                None => blank_canvas(manifest, spec.canvas_scale)?,
            };
            let img = render_heatmap(&canvas, manifest, &attention, &spec)
                .with_context(|| format!("slide {}", bag.slide_id))?;
            write_rgb_png(&a.out.join(format!("{}.png", bag.slide_id)), &img)?;
            Ok((
                attention_rows(manifest, &attention, normalization)?,
                attention_summary(manifest, &attention, None)?,
            ))
        })
        .collect::<anyhow::Result<_>>()?;

    let (rows, slides): (Vec<_>, Vec<_>) = per_slide.into_iter().unzip();
    let rows: Vec<AttentionRow> = rows.into_iter().flatten().collect();
    write_attention_csv(&a.out.join("attention.csv"), &rows)?;
    let scores: Vec<f64> = slides.iter().filter_map(|s| s.confounding_score).collect();
    let report = HeatmapReport {
        flagged: slides.iter().filter(|s| s.flagged).count(),
        mean_confounding_score: (!scores.is_empty())
            .then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        slides,
    };
    write_json(&a.out.join("summary.json"), &report)?;
    println!(
        "{} heatmaps in {}; {} slides flagged for background attention",
        report.slides.len(),
        a.out.display(),
        report.flagged
    );
    Ok(())
}
