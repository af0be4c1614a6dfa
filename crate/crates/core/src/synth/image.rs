use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::{Channel, PreprocessError, SlideImage, TissueMask, WHITE};
use crate::seed::{stream, tags};

const TISSUE: [u8; 3] = [214, 120, 170];
const PEN: [u8; 3] = [60, 60, 64];
const IMAGE_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

/// Straight marker stroke of half-width `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenStroke {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub radius: f64,
    pub colour: [u8; 3],
}

impl PenStroke {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (ax, ay) = self.from;
        let (bx, by) = self.to;
        let (vx, vy) = (bx - ax, by - ay);
        let len2 = vx * vx + vy * vy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((x - ax) * vx + (y - ay) * vy) / len2).clamp(0.0, 1.0)
        };
        let (px, py) = (ax + t * vx - x, ay + t * vy - y);
        px * px + py * py <= self.radius * self.radius
    }
}

/// Tissue blobs on white, with pen strokes drawn over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideGeometry {
    pub width: u32,
    pub height: u32,
    pub blobs: Vec<Ellipse>,
    pub pens: Vec<PenStroke>,
}

impl SlideGeometry {
    /// `blobs` random ellipses and optionally one gray pen stroke.
    pub fn random(width: u32, height: u32, blobs: usize, pen: bool, seed: u64) -> Self {
        let mut rng = stream(seed, &[tags::SYNTH, IMAGE_STREAM]);
        let (w, h) = (width as f64, height as f64);
        let blobs = (0..blobs)
            .map(|_| Ellipse {
                cx: rng.random_range(0.2..0.8) * w,
                cy: rng.random_range(0.2..0.8) * h,
                rx: rng.random_range(0.05..0.2) * w,
                ry: rng.random_range(0.05..0.2) * h,
            })
            .collect();
        let pens = if pen {
            vec![PenStroke {
                from: (
                    rng.random_range(0.0..0.3) * w,
                    rng.random_range(0.0..1.0) * h,
                ),
                to: (
                    rng.random_range(0.7..1.0) * w,
                    rng.random_range(0.0..1.0) * h,
                ),
                radius: (w.min(h) * 0.02).max(1.0),
                colour: PEN,
            }]
        } else {
            Vec::new()
        };
        Self {
            width,
            height,
            blobs,
            pens,
        }
    }
}

/// Renders `geom` and its exact tissue mask (pixel centres inside a blob and
/// not under a pen stroke). Tissue colour varies slightly with position.
pub fn generate_slide_image(
    geom: &SlideGeometry,
) -> Result<(SlideImage, TissueMask), PreprocessError> {
    let mut img = SlideImage::filled(geom.width, geom.height, WHITE)?;
    let mut bits = vec![false; geom.width as usize * geom.height as usize];
    for y in 0..geom.height {
        for x in 0..geom.width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            if let Some(pen) = geom.pens.iter().find(|p| p.contains(fx, fy)) {
                img.set_pixel(x, y, pen.colour);
            } else if geom.blobs.iter().any(|b| b.contains(fx, fy)) {
                let j = ((x * 7 + y * 13) % 11) as u8;
                img.set_pixel(x, y, [TISSUE[0] - j, TISSUE[1] + j, TISSUE[2] - j]);
                bits[y as usize * geom.width as usize + x as usize] = true;
            }
        }
    }
    let mask = TissueMask::from_bits(geom.width, geom.height, bits, 0, Channel::Saturation)?;
    Ok((img, mask))
}
