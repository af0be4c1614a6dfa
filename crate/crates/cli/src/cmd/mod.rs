//! Subcommand implementations and the helpers they share.

pub mod eval;
pub mod heatmap;
pub mod images;
pub mod synth;
pub mod train;
pub mod tune;

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use abmil_core::bagio::Cohort;
use abmil_core::fsutil::write_atomic_bytes;
use abmil_core::harness::TrainConfig;

use crate::args::GlobalArgs;
use crate::exit;

/// Training config from an optional TOML file; `--seed` wins over the file.
pub fn load_train_config(path: Option<&Path>, global: &GlobalArgs) -> anyhow::Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| exit::input(format!("reading config {}: {e}", p.display())))?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| exit::validation(format!("config {}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.validate()
        .with_context(|| path.map_or("default config".into(), |p| p.display().to_string()))?;
    Ok(cfg)
}

pub fn load_cohort(dir: &Path) -> anyhow::Result<Cohort> {
    if !dir.is_dir() {
        return Err(exit::input(format!(
            "cohort directory {} not found",
            dir.display()
        )));
    }
    Cohort::load(dir).with_context(|| format!("loading cohort {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic_bytes(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// `input` itself if it is a file, else its PNG/PPM entries sorted by name.
pub fn image_inputs(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(exit::input(format!("{} not found", input.display())));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(input)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "ppm")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(exit::input(format!(
            "no PNG or PPM images in {}",
            input.display()
        )));
    }
    Ok(files)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}
