use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use super::PreprocessError;
use crate::fsutil::write_atomic_bytes;

pub const WHITE: [u8; 3] = [255, 255, 255];

/// 8-bit RGB raster. `scale` is the number of full-resolution slide pixels per
/// image pixel (1 for a full-resolution image), so coordinates derived from a
/// downsampled level stay in slide units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlideImage {
    width: u32,
    height: u32,
    scale: u32,
    pixels: Vec<u8>,
}

impl SlideImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::EmptyImage { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(PreprocessError::BufferSize {
                got: pixels.len(),
                expected,
            });
        }
        Ok(Self {
            width,
            height,
            scale: 1,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, PreprocessError> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.repeat(n))
    }

    pub fn with_scale(mut self, scale: u32) -> Result<Self, PreprocessError> {
        if scale == 0 {
            return Err(PreprocessError::InvalidParameter {
                name: "scale",
                value: "0".into(),
            });
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    /// Width and height in full-resolution slide pixels.
    pub fn slide_dims(&self) -> (u64, u64) {
        (
            self.width as u64 * self.scale as u64,
            self.height as u64 * self.scale as u64,
        )
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Box-filter downsample by `factor`; partial edge blocks average the
    /// pixels they contain.
    pub fn downsample(&self, factor: u32) -> SlideImage {
        if factor <= 1 {
            return self.clone();
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for by in 0..h {
            for bx in 0..w {
                let mut sum = [0u64; 3];
                let mut count = 0u64;
                for y in by * factor..((by + 1) * factor).min(self.height) {
                    for x in bx * factor..((bx + 1) * factor).min(self.width) {
                        let p = self.pixel(x, y);
                        for c in 0..3 {
                            sum[c] += p[c] as u64;
                        }
                        count += 1;
                    }
                }
                pixels.extend(sum.map(|s| ((s + count / 2) / count) as u8));
            }
        }
        SlideImage {
            width: w,
            height: h,
            scale: self.scale * factor,
            pixels,
        }
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction")
    }
}

/// Loads a PNG or PPM raster as RGB.
pub fn read_image(path: &Path) -> Result<SlideImage, PreprocessError> {
    let img = image::open(path)
        .map_err(|e| PreprocessError::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    SlideImage::new(w, h, img.into_raw())
}

pub fn write_rgb_png(path: &Path, img: &SlideImage) -> Result<(), PreprocessError> {
    let mut buf = Cursor::new(Vec::new());
    img.to_rgb_image()
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| PreprocessError::Image(e.to_string()))?;
    write_atomic_bytes(path, buf.get_ref())?;
    Ok(())
}

pub fn write_gray_png(
    path: &Path,
    width: u32,
    height: u32,
    values: Vec<u8>,
) -> Result<(), PreprocessError> {
    let img = GrayImage::from_raw(width, height, values)
        .ok_or_else(|| PreprocessError::Image("gray buffer size mismatch".into()))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| PreprocessError::Image(e.to_string()))?;
    write_atomic_bytes(path, buf.get_ref())?;
    Ok(())
}
