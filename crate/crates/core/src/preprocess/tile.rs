use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PreprocessError, SlideImage, TissueMask, WHITE};
use crate::bagio::RegionCoord;
use crate::fsutil::write_atomic;

pub const DEFAULT_REGION_SIZE: u32 = 4096;
pub const DEFAULT_MIN_TISSUE_FRACTION: f64 = 0.15;
pub const THUMBNAIL_DOWNSAMPLE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileOptions {
    pub region_size: u32,
    pub min_tissue_fraction: f64,
    /// When the slide is smaller than one region in both dimensions, emit a
    /// single region at the origin (the padded-image path) instead of nothing.
    pub pad_small: bool,
}

impl Default for TileOptions {
    fn default() -> Self {
        Self {
            region_size: DEFAULT_REGION_SIZE,
            min_tissue_fraction: DEFAULT_MIN_TISSUE_FRACTION,
            pad_small: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub x: u64,
    pub y: u64,
    pub tissue_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionManifest {
    pub slide_id: String,
    pub region_size: u64,
    /// Filter used when tiling; 0 for manifests read back from CSV, which does
    /// not record it.
    pub min_tissue_fraction: f64,
    pub entries: Vec<RegionEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    slide_id: String,
    x: u64,
    y: u64,
    region_size: u64,
    tissue_fraction: f64,
}

impl RegionManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coords(&self) -> Vec<RegionCoord> {
        self.entries
            .iter()
            .map(|e| RegionCoord {
                x: e.x,
                y: e.y,
                size: self.region_size,
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PreprocessError> {
        write_manifests_csv(path, std::slice::from_ref(self))
    }

    /// Manifests of every slide in the file, in order of first appearance.
    pub fn read_csv(path: &Path) -> Result<Vec<RegionManifest>, PreprocessError> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| PreprocessError::Csv(e.to_string()))?;
        let mut out: Vec<RegionManifest> = Vec::new();
        for row in reader.deserialize::<ManifestRow>() {
            let row = row.map_err(|e| PreprocessError::Csv(e.to_string()))?;
            if !(0.0..=1.0).contains(&row.tissue_fraction) {
                return Err(PreprocessError::Csv(format!(
                    "tissue_fraction {} outside [0, 1]",
                    row.tissue_fraction
                )));
            }
            let slot = match out.iter().position(|m| m.slide_id == row.slide_id) {
                Some(i) => i,
                None => {
                    out.push(RegionManifest {
                        slide_id: row.slide_id.clone(),
                        region_size: row.region_size,
                        min_tissue_fraction: 0.0,
                        entries: Vec::new(),
                    });
                    out.len() - 1
                }
            };
            if out[slot].region_size != row.region_size {
                return Err(PreprocessError::Csv(format!(
                    "slide {} mixes region sizes",
                    row.slide_id
                )));
            }
            out[slot].entries.push(RegionEntry {
                x: row.x,
                y: row.y,
                tissue_fraction: row.tissue_fraction,
            });
        }
        Ok(out)
    }
}

pub fn write_manifests_csv(
    path: &Path,
    manifests: &[RegionManifest],
) -> Result<(), PreprocessError> {
    write_atomic(path, |w| {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["slide_id", "x", "y", "region_size", "tissue_fraction"])?;
        for m in manifests {
            for e in &m.entries {
                writer.write_record([
                    m.slide_id.clone(),
                    e.x.to_string(),
                    e.y.to_string(),
                    m.region_size.to_string(),
                    e.tissue_fraction.to_string(),
                ])?;
            }
        }
        writer.flush()
    })?;
    Ok(())
}

/// Fraction of tissue among mask pixels whose centres fall inside the
/// footprint `[x0, x0+size) × [y0, y0+size)` (slide pixels).
pub fn footprint_fraction(mask: &TissueMask, x0: u64, y0: u64, size: u64) -> f64 {
    let s = mask.scale as u64;
    // mask pixel i has centre (2i+1)·s/2
    let inside = |i: u64, lo: u64| (2 * i + 1) * s >= 2 * lo && (2 * i + 1) * s < 2 * (lo + size);
    let cols: Vec<u32> = (x0 / s..((x0 + size) / s + 1).min(mask.width as u64))
        .filter(|&i| inside(i, x0))
        .map(|i| i as u32)
        .collect();
    let rows: Vec<u32> = (y0 / s..((y0 + size) / s + 1).min(mask.height as u64))
        .filter(|&j| inside(j, y0))
        .map(|j| j as u32)
        .collect();
    if cols.is_empty() || rows.is_empty() {
        // footprint smaller than one mask pixel: use the pixel under its centre
        let cx = ((x0 + size / 2) / s).min(mask.width as u64 - 1) as u32;
        let cy = ((y0 + size / 2) / s).min(mask.height as u64 - 1) as u32;
        return if mask.get(cx, cy) { 1.0 } else { 0.0 };
    }
    let mut tissue = 0usize;
    for &j in &rows {
        for &i in &cols {
            tissue += mask.get(i, j) as usize;
        }
    }
    tissue as f64 / (rows.len() * cols.len()) as f64
}

/// Grid of full `region_size` tiles anchored at the origin, row-major; edge
/// remainders are dropped. A tile is kept iff its tissue fraction is at least
/// `min_tissue_fraction`.
pub fn tile_regions(
    slide_id: &str,
    mask: &TissueMask,
    opts: &TileOptions,
) -> Result<RegionManifest, PreprocessError> {
    if opts.region_size == 0 {
        return Err(PreprocessError::InvalidParameter {
            name: "region_size",
            value: "0".into(),
        });
    }
    if !(0.0..=1.0).contains(&opts.min_tissue_fraction) {
        return Err(PreprocessError::InvalidParameter {
            name: "min_tissue_fraction",
            value: opts.min_tissue_fraction.to_string(),
        });
    }
    let size = opts.region_size as u64;
    let mut manifest = RegionManifest {
        slide_id: slide_id.to_string(),
        region_size: size,
        min_tissue_fraction: opts.min_tissue_fraction,
        entries: Vec::new(),
    };
    let (w, h) = (mask.source_width, mask.source_height);
    if size > w && size > h {
        if opts.pad_small {
            let f = mask.tissue_fraction();
            if f >= opts.min_tissue_fraction {
                manifest.entries.push(RegionEntry {
                    x: 0,
                    y: 0,
                    tissue_fraction: f,
                });
            }
        } else {
            log::warn!("{slide_id}: region size {size} exceeds {w}×{h}; no regions");
        }
        return Ok(manifest);
    }
    for ty in 0..h / size {
        for tx in 0..w / size {
            let (x, y) = (tx * size, ty * size);
            let f = footprint_fraction(mask, x, y, size);
            if f >= opts.min_tissue_fraction {
                manifest.entries.push(RegionEntry {
                    x,
                    y,
                    tissue_fraction: f,
                });
            }
        }
    }
    Ok(manifest)
}

/// Centres a small image on a white `region_size²` canvas at offset
/// `floor((region_size − side)/2)`.
pub fn pad_to_single_region(
    img: &SlideImage,
    region_size: u32,
) -> Result<SlideImage, PreprocessError> {
    if img.width() > region_size || img.height() > region_size {
        return Err(PreprocessError::TooLarge {
            width: img.width(),
            height: img.height(),
            region_size,
        });
    }
    if img.width() == region_size && img.height() == region_size {
        return Ok(img.clone());
    }
    let mut canvas =
        SlideImage::filled(region_size, region_size, WHITE)?.with_scale(img.scale())?;
    let ox = (region_size - img.width()) / 2;
    let oy = (region_size - img.height()) / 2;
    for y in 0..img.height() {
        for x in 0..img.width() {
            canvas.set_pixel(x + ox, y + oy, img.pixel(x, y));
        }
    }
    Ok(canvas)
}
