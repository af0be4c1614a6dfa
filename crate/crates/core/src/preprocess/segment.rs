use std::path::Path;

use serde::{Deserialize, Serialize};

use super::otsu::{channel_histogram, otsu_threshold};
use super::{write_gray_png, PreprocessError, SlideImage};

pub const DEFAULT_MASK_DOWNSAMPLE: u32 = 32;

/// Scalar channel thresholded for tissue. Both are oriented so that tissue
/// scores high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    /// HSV saturation, `255·(max − min)/max`. Stained tissue is chromatic;
    /// white background and gray/black pen are not.
    #[default]
    Saturation,
    /// Darkness, `255 − luma` (Rec. 601 weights).
    Luminance,
}

impl Channel {
    pub fn value(self, [r, g, b]: [u8; 3]) -> u8 {
        match self {
            Channel::Saturation => {
                let max = r.max(g).max(b) as u32;
                let min = r.min(g).min(b) as u32;
                if max == 0 {
                    0
                } else {
                    ((255 * (max - min) + max / 2) / max) as u8
                }
            }
            Channel::Luminance => {
                let luma = (299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000;
                255 - luma as u8
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub channel: Channel,
    /// Mask pixels per side of one image pixel block; 1 keeps full resolution.
    pub downsample: u32,
    /// 3×3 median (majority) filter on the binary mask.
    pub smooth: bool,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            channel: Channel::Saturation,
            downsample: DEFAULT_MASK_DOWNSAMPLE,
            smooth: true,
        }
    }
}

/// Binary tissue mask. One mask pixel covers `scale × scale` slide pixels;
/// the mask is `ceil(source / scale)` pixels on each side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub scale: u32,
    pub source_width: u64,
    pub source_height: u64,
    pub otsu_threshold: u8,
    pub channel: Channel,
    bits: Vec<bool>,
}

impl TissueMask {
    /// Mask from explicit bits at `scale` 1, e.g. a generator's ground truth.
    pub fn from_bits(
        width: u32,
        height: u32,
        bits: Vec<bool>,
        otsu_threshold: u8,
        channel: Channel,
    ) -> Result<Self, PreprocessError> {
        Self::from_scaled_bits(
            width,
            height,
            1,
            (width as u64, height as u64),
            bits,
            otsu_threshold,
            channel,
        )
    }

    pub fn from_scaled_bits(
        width: u32,
        height: u32,
        scale: u32,
        (source_width, source_height): (u64, u64),
        bits: Vec<bool>,
        otsu_threshold: u8,
        channel: Channel,
    ) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::EmptyImage { width, height });
        }
        if bits.len() != width as usize * height as usize {
            return Err(PreprocessError::BufferSize {
                got: bits.len(),
                expected: width as usize * height as usize,
            });
        }
        if scale == 0
            || source_width.div_ceil(scale as u64) != width as u64
            || source_height.div_ceil(scale as u64) != height as u64
        {
            return Err(PreprocessError::InvalidParameter {
                name: "scale",
                value: format!("{scale} for {source_width}×{source_height} → {width}×{height}"),
            });
        }
        Ok(Self {
            width,
            height,
            scale,
            source_width,
            source_height,
            otsu_threshold,
            channel,
            bits,
        })
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn tissue_pixels(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn tissue_fraction(&self) -> f64 {
        self.tissue_pixels() as f64 / self.bits.len() as f64
    }

    fn smoothed(&self) -> Vec<bool> {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                let mut set = 0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let xx = (x + dx).clamp(0, w - 1);
                        let yy = (y + dy).clamp(0, h - 1);
                        set += self.bits[(yy * w + xx) as usize] as u32;
                    }
                }
                out[(y * w + x) as usize] = set >= 5;
            }
        }
        out
    }
}

/// Otsu segmentation of `img` on the chosen channel, at the configured
/// downsample. Tissue is `value >= threshold`.
///
/// A single-valued channel is degenerate; when that value is 0 (blank
/// background) the result is an empty mask rather than an error.
pub fn segment_tissue(
    img: &SlideImage,
    opts: &SegmentOptions,
) -> Result<TissueMask, PreprocessError> {
    if opts.downsample == 0 {
        return Err(PreprocessError::InvalidParameter {
            name: "downsample",
            value: "0".into(),
        });
    }
    let small = img.downsample(opts.downsample);
    let values: Vec<u8> = small
        .pixels()
        .chunks_exact(3)
        .map(|p| opts.channel.value([p[0], p[1], p[2]]))
        .collect();
    let hist = channel_histogram(&values);
    let (threshold, bits) = match otsu_threshold(&hist) {
        Ok(t) => (t, values.iter().map(|&v| v >= t).collect()),
        Err(PreprocessError::Degenerate(0)) => {
            log::warn!("blank image: channel is 0 everywhere, mask is empty");
            (0, vec![false; values.len()])
        }
        Err(e) => return Err(e),
    };
    let mut mask = TissueMask::from_scaled_bits(
        small.width(),
        small.height(),
        small.scale(),
        img.slide_dims(),
        bits,
        threshold,
        opts.channel,
    )?;
    if opts.smooth {
        mask.bits = mask.smoothed();
    }
    Ok(mask)
}

pub fn write_mask_png(path: &Path, mask: &TissueMask) -> Result<(), PreprocessError> {
    let values = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray_png(path, mask.width, mask.height, values)
}
