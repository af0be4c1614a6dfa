use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use abmil_core::preprocess::{
    read_image, segment_tissue, tile_regions, write_manifests_csv, write_mask_png, write_rgb_png,
    Channel, RegionManifest, SegmentOptions, TileOptions, TissueMask, THUMBNAIL_DOWNSAMPLE,
};

use super::{create_dir, file_stem, image_inputs};
use crate::args::{ChannelArg, GlobalArgs, SegmentArgs, SegmentFlags, TileArgs};

fn segment_options(f: &SegmentFlags) -> SegmentOptions {
    SegmentOptions {
        channel: match f.channel {
            ChannelArg::Saturation => Channel::Saturation,
            ChannelArg::Luminance => Channel::Luminance,
        },
        downsample: f.downsample,
        smooth: !f.no_smooth,
    }
}

fn mask_of(
    path: &Path,
    opts: &SegmentOptions,
) -> anyhow::Result<(abmil_core::SlideImage, TissueMask)> {
    let img = read_image(path)?;
    let mask = segment_tissue(&img, opts)?;
    Ok((img, mask))
}

/// Runs `f` over every input in parallel and fails with a per-slide listing
/// if any slide failed; successful slides keep their outputs.
fn per_slide<T: Send>(
    inputs: &[PathBuf],
    f: impl Fn(&Path) -> anyhow::Result<T> + Sync,
) -> anyhow::Result<Vec<T>> {
    let results: Vec<anyhow::Result<T>> = inputs.par_iter().map(|p| f(p)).collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (path, r) in inputs.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(format!("  {}: {e:#}", path.display())),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        anyhow::bail!(
            "{} of {} slides failed:\n{}",
            failures.len(),
            inputs.len(),
            failures.join("\n")
        )
    }
}

pub fn segment(_global: &GlobalArgs, a: SegmentArgs) -> anyhow::Result<()> {
    let inputs = image_inputs(&a.input)?;
    let opts = segment_options(&a.seg);
    create_dir(&a.out)?;
    let fractions = per_slide(&inputs, |path| {
        let (img, mask) = mask_of(path, &opts)?;
        let stem = file_stem(path);
        write_mask_png(&a.out.join(format!("{stem}_mask.png")), &mask)?;
        let thumb = img.downsample(THUMBNAIL_DOWNSAMPLE);
        write_rgb_png(&a.out.join(format!("{stem}_thumb.png")), &thumb)?;
        log::info!(
            "{stem}: threshold {} tissue {:.3}",
            mask.otsu_threshold,
            mask.tissue_fraction()
        );
        Ok(mask.tissue_fraction())
    })?;
    println!(
        "segmented {} slides into {}",
        fractions.len(),
        a.out.display()
    );
    Ok(())
}

pub fn tile(_global: &GlobalArgs, a: TileArgs) -> anyhow::Result<()> {
    let inputs = image_inputs(&a.input)?;
    let seg = segment_options(&a.seg);
    let opts = TileOptions {
        region_size: a.region_size,
        min_tissue_fraction: a.min_tissue,
        pad_small: a.pad_small,
    };
    let manifests: Vec<RegionManifest> = per_slide(&inputs, |path| {
        let (_, mask) = mask_of(path, &seg)?;
        Ok(tile_regions(&file_stem(path), &mask, &opts)?)
    })?;
    write_manifests_csv(&a.out, &manifests)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let regions: usize = manifests.iter().map(RegionManifest::len).sum();
    println!(
        "{} regions from {} slides written to {}",
        regions,
        manifests.len(),
        a.out.display()
    );
    Ok(())
}
