//! Image-side pipeline: Otsu tissue segmentation on a chromatic or luminance
//! channel, non-overlapping region tiling filtered by tissue fraction, and the
//! small-image padding path.

mod image;
mod otsu;
mod segment;
mod tile;

pub use self::image::{read_image, write_gray_png, write_rgb_png, SlideImage, WHITE};
pub use otsu::{channel_histogram, otsu_threshold};
pub use segment::{
    segment_tissue, write_mask_png, Channel, SegmentOptions, TissueMask, DEFAULT_MASK_DOWNSAMPLE,
};
pub use tile::{
    footprint_fraction, pad_to_single_region, tile_regions, write_manifests_csv, RegionEntry,
    RegionManifest, TileOptions, DEFAULT_MIN_TISSUE_FRACTION, DEFAULT_REGION_SIZE,
    THUMBNAIL_DOWNSAMPLE,
};

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("image must be at least 1×1, got {width}×{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
    #[error("degenerate image: channel histogram has a single value ({0})")]
    Degenerate(u8),
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: String },
    #[error("image {width}×{height} exceeds region size {region_size}; tile it instead")]
    TooLarge {
        width: u32,
        height: u32,
        region_size: u32,
    },
    #[error("image: {0}")]
    Image(String),
    #[error("manifest csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
