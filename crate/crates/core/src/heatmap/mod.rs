//! Attention heatmaps for confounding audits: per-slide normalization of
//! region attention, colormapped and alpha-blended over a thumbnail, plus a
//! tissue-vs-background attention summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;
use crate::mil::{forward_inference, MilModelParams, ModelError};
use crate::nn::Matrix;
use crate::preprocess::{
    footprint_fraction, PreprocessError, RegionManifest, SlideImage, TissueMask, WHITE,
};


/// Regions with a tissue fraction below this count as background.
pub const BACKGROUND_FRACTION: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Slide pixels per canvas pixel when no thumbnail is supplied.
pub const DEFAULT_CANVAS_SCALE: u32 = 256;

#[derive(Debug, thiserror::Error)]
pub enum HeatmapError {
    #[error("attention has {attention} values but the manifest has {regions} regions")]
    LengthMismatch { attention: usize, regions: usize },
    #[error("manifest for slide {0} has no regions")]
    EmptyManifest(String),
    #[error("invalid heatmap parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: String },
    #[error("region ({x}, {y}) lies outside the {width}×{height} mask")]
    MaskMismatch {
        x: u64,
        y: u64,
        width: u64,
        height: u64,
    },
    #[error("attention csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    MinMax,
    /// Clip to the `low`/`high` percentiles (0 to 100), then min-max.
    Percentile {
        low: f64,
        high: f64,
    },
}

/// 256-entry RGB lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap(Vec<[u8; 3]>);

impl Colormap {
    pub fn new(entries: Vec<[u8; 3]>) -> Result<Self, HeatmapError> {
        if entries.len() != 256 {
            return Err(HeatmapError::InvalidParameter {
                name: "colormap",
                value: format!("{} entries, expected 256", entries.len()),
            });
        }
        Ok(Self(entries))
    }

    /// Linear blue (index 0) to red (index 255).
    pub fn blue_red() -> Self {
        Self((0..=255u8).map(|i| [i, 0, 255 - i]).collect())
    }

    pub fn color(&self, index: u8) -> [u8; 3] {
        self.0[index as usize]
    }
}

impl Default for Colormap {
    fn default() -> Self {
        Self::blue_red()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSpec {
    pub normalization: Normalization,
    pub colormap: Colormap,
    /// Weight of the colormap colour in the blend.
    pub alpha: f64,
    /// Slide pixels per canvas pixel for `blank_canvas`.
    pub canvas_scale: u32,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self {
            normalization: Normalization::MinMax,
            colormap: Colormap::default(),
            alpha: DEFAULT_ALPHA,
            canvas_scale: DEFAULT_CANVAS_SCALE,
        }
    }
}

impl HeatmapSpec {
    pub fn validate(&self) -> Result<(), HeatmapError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(HeatmapError::InvalidParameter {
                name: "alpha",
                value: self.alpha.to_string(),
            });
        }
        if self.canvas_scale == 0 {
            return Err(HeatmapError::InvalidParameter {
                name: "canvas_scale",
                value: "0".into(),
            });
        }
        if let Normalization::Percentile { low, high } = self.normalization {
            if !(0.0 <= low && low < high && high <= 100.0) {
                return Err(HeatmapError::InvalidParameter {
                    name: "percentile",
                    value: format!("({low}, {high})"),
                });
            }
        }
        Ok(())
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-slide normalization to [0, 1]: the minimum maps to 0 and the maximum to
/// 1 exactly. Constant attention maps to 0 with a warning.
pub fn normalize_attention(attention: &[f64], norm: Normalization) -> Vec<f64> {
    if attention.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = match norm {
        Normalization::MinMax => attention
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            }),
        Normalization::Percentile { low, high } => {
            let mut sorted = attention.to_vec();
            sorted.sort_by(f64::total_cmp);
            (
                percentile(&sorted, low / 100.0),
                percentile(&sorted, high / 100.0),
            )
        }
    };
    if hi <= lo {
        log::warn!("attention is constant; rendering every region at the colormap bottom");
        return vec![0.0; attention.len()];
    }
    attention
        .iter()
        .map(|&v| ((v.clamp(lo, hi) - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

/// Colormap index of a normalized value: `round(v · 255)`.
pub fn colormap_index(normalized: f64) -> u8 {
    (normalized * 255.0).round() as u8
}

fn check_lengths(manifest: &RegionManifest, attention: &[f64]) -> Result<(), HeatmapError> {
    if manifest.is_empty() {
        return Err(HeatmapError::EmptyManifest(manifest.slide_id.clone()));
    }
    if attention.len() != manifest.len() {
        return Err(HeatmapError::LengthMismatch {
            attention: attention.len(),
            regions: manifest.len(),
        });
    }
    Ok(())
}

/// White canvas covering every region of the manifest at `scale` slide pixels
/// per canvas pixel, for cohorts without slide images.
pub fn blank_canvas(manifest: &RegionManifest, scale: u32) -> Result<SlideImage, HeatmapError> {
    if manifest.is_empty() {
        return Err(HeatmapError::EmptyManifest(manifest.slide_id.clone()));
    }
    let s = scale.max(1) as u64;
    let max_x = manifest
        .entries
        .iter()
        .map(|e| e.x + manifest.region_size)
        .max()
        .unwrap_or(0);
    let max_y = manifest
        .entries
        .iter()
        .map(|e| e.y + manifest.region_size)
        .max()
        .unwrap_or(0);
    let w = max_x.div_ceil(s).max(1) as u32;
    let h = max_y.div_ceil(s).max(1) as u32;
    Ok(SlideImage::filled(w, h, WHITE)?.with_scale(scale)?)
}

/// Canvas pixels `i` whose centres `(i + ½)·scale` fall in `[lo, lo + size)`.
fn covered(lo: u64, size: u64, scale: u32, limit: u32) -> std::ops::Range<u32> {
    let s = scale as u64;
    // smallest i with (2i+1)s >= 2lo, smallest i with (2i+1)s >= 2(lo+size)
    let first = |edge: u64| (2 * edge).saturating_sub(s).div_ceil(2 * s);
    let a = first(lo).min(limit as u64) as u32;
    let b = first(lo + size).min(limit as u64) as u32;
    a..b
}

/// Tints each region's footprint on a copy of `thumbnail`:
/// `out = round((1 - α)·pixel + α·colormap[index])`. Pixels outside every
/// region are left untouched.
pub fn render_heatmap(
    thumbnail: &SlideImage,
    manifest: &RegionManifest,
    attention: &[f64],
    spec: &HeatmapSpec,
) -> Result<SlideImage, HeatmapError> {
    spec.validate()?;
    check_lengths(manifest, attention)?;
    let normalized = normalize_attention(attention, spec.normalization);
    let mut out = thumbnail.clone();
    let a = spec.alpha;
    for (entry, &v) in manifest.entries.iter().zip(&normalized) {
        let color = spec.colormap.color(colormap_index(v));
        for y in covered(entry.y, manifest.region_size, out.scale(), out.height()) {
            for x in covered(entry.x, manifest.region_size, out.scale(), out.width()) {
                let base = thumbnail.pixel(x, y);
                let mut px = [0u8; 3];
                for c in 0..3 {
                    px[c] = ((1.0 - a) * base[c] as f64 + a * color[c] as f64).round() as u8;
                }
                out.set_pixel(x, y, px);
            }
        }
    }
    Ok(out)
}

/// Tissue-vs-background attention for one slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub slide_id: String,
    pub n_tissue: usize,
    pub n_background: usize,
    /// Absent when the slide has no region in that group.
    pub mean_tissue: Option<f64>,
    pub mean_background: Option<f64>,
    /// `mean_background - mean_tissue`; absent unless both groups exist.
    pub confounding_score: Option<f64>,
    /// Background regions receive more attention than tissue regions.
    pub flagged: bool,
}

/// Splits regions at tissue fraction 0.5. With a mask, fractions are
/// recomputed from it; otherwise the manifest's stored fractions are used.
pub fn attention_summary(
    manifest: &RegionManifest,
    attention: &[f64],
    mask: Option<&TissueMask>,
) -> Result<AttentionSummary, HeatmapError> {
    check_lengths(manifest, attention)?;
    let mut fractions = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let f = match mask {
            Some(m) => {
                if e.x >= m.source_width || e.y >= m.source_height {
                    return Err(HeatmapError::MaskMismatch {
                        x: e.x,
                        y: e.y,
                        width: m.source_width,
                        height: m.source_height,
                    });
                }
                footprint_fraction(m, e.x, e.y, manifest.region_size)
            }
            None => e.tissue_fraction,
        };
        fractions.push(f);
    }
    let (mut bg, mut tissue) = (Vec::new(), Vec::new());
    for (&f, &a) in fractions.iter().zip(attention) {
        if f < BACKGROUND_FRACTION {
            bg.push(a);
        } else {
            tissue.push(a);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let (mean_tissue, mean_background) = (mean(&tissue), mean(&bg));
    let confounding_score = mean_background.zip(mean_tissue).map(|(b, t)| b - t);
    Ok(AttentionSummary {
        slide_id: manifest.slide_id.clone(),
        n_tissue: tissue.len(),
        n_background: bg.len(),
        mean_tissue,
        mean_background,
        confounding_score,
        flagged: confounding_score.is_some_and(|s| s > 0.0),
    })
}

/// Indices of the `ceil(n / 10)` highest-attention regions, ties by index.
pub fn top_decile(attention: &[f64]) -> Vec<usize> {
    let k = attention.len().div_ceil(10);
    let mut order: Vec<usize> = (0..attention.len()).collect();
    order.sort_by(|&i, &j| attention[j].total_cmp(&attention[i]).then(i.cmp(&j)));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    top
}

/// Attention weights of one bag at inference.
pub fn bag_attention(features: &Matrix, params: &MilModelParams) -> Result<Vec<f64>, HeatmapError> {
    Ok(forward_inference(features, params)?.attention)
}

/// Member-averaged attention for an ensemble.
pub fn mean_attention(
    features: &Matrix,
    members: &[MilModelParams],
) -> Result<Vec<f64>, HeatmapError> {
    let mut sum = vec![0.0; features.rows()];
    for m in members {
        for (s, a) in sum.iter_mut().zip(bag_attention(features, m)?) {
            *s += a;
        }
    }
    let n = members.len().max(1) as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub slide_id: String,
    pub x: u64,
    pub y: u64,
    pub raw: f64,
    pub normalized: f64,
}

pub fn attention_rows(
    manifest: &RegionManifest,
    attention: &[f64],
    norm: Normalization,
) -> Result<Vec<AttentionRow>, HeatmapError> {
    check_lengths(manifest, attention)?;
    let normalized = normalize_attention(attention, norm);
    Ok(manifest
        .entries
        .iter()
        .zip(attention)
        .zip(normalized)
        .map(|((e, &raw), normalized)| AttentionRow {
            slide_id: manifest.slide_id.clone(),
            x: e.x,
            y: e.y,
            raw,
            normalized,
        })
        .collect())
}

pub fn write_attention_csv(path: &Path, rows: &[AttentionRow]) -> Result<(), HeatmapError> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for r in rows {
            out.serialize(r)?;
        }
        out.flush()
    })?;
    Ok(())
}

pub fn read_attention_csv(path: &Path) -> Result<Vec<AttentionRow>, HeatmapError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HeatmapError::Csv(e.to_string()))?;
    rdr.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| HeatmapError::Csv(format!("{}: {e}", path.display())))
}
