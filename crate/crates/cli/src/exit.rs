//! Exit codes: 0 success, 1 input error, 2 validation error, 3 runtime failure.

use abmil_core::bagio::BagIoError;
use abmil_core::harness::HarnessError;
use abmil_core::heatmap::HeatmapError;
use abmil_core::metrics::MetricsError;
use abmil_core::mil::ModelError;
use abmil_core::preprocess::PreprocessError;
use abmil_core::synth::SynthError;

pub const SUCCESS: u8 = 0;
pub const INPUT: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const RUNTIME: u8 = 3;

/// Missing or unreadable inputs.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InputError(pub String);

/// Bad flags or configuration values.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

pub fn input(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

pub fn validation(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

fn bagio(e: &BagIoError) -> u8 {
    match e {
        BagIoError::InvalidScheme(_) | BagIoError::TooFewPatients { .. } => VALIDATION,
        _ => INPUT,
    }
}

fn model(e: &ModelError) -> u8 {
    match e {
        ModelError::Checkpoint(_) | ModelError::Io(_) | ModelError::DimensionMismatch { .. } => {
            INPUT
        }
        ModelError::InvalidAttentionDim(_) | ModelError::InvalidClamConfig(_) => VALIDATION,
        _ => RUNTIME,
    }
}

fn preprocess(e: &PreprocessError) -> u8 {
    match e {
        PreprocessError::InvalidParameter { .. } => VALIDATION,
        PreprocessError::Image(_)
        | PreprocessError::Io(_)
        | PreprocessError::Csv(_)
        | PreprocessError::EmptyImage { .. }
        | PreprocessError::BufferSize { .. } => INPUT,
        _ => RUNTIME,
    }
}

fn harness(e: &HarnessError) -> u8 {
    match e {
        HarnessError::InvalidConfig { .. }
        | HarnessError::ConfigFile(_)
        | HarnessError::EmptyGrid => VALIDATION,
        HarnessError::BagIo(b) => bagio(b),
        HarnessError::Model(m) => model(m),
        HarnessError::Io(_) => INPUT,
        _ => RUNTIME,
    }
}

fn classify(e: &(dyn std::error::Error + 'static)) -> Option<u8> {
    if e.is::<InputError>() {
        return Some(INPUT);
    }
    if e.is::<ValidationError>() || e.is::<toml::de::Error>() {
        return Some(VALIDATION);
    }
    if let Some(e) = e.downcast_ref::<HarnessError>() {
        return Some(harness(e));
    }
    if let Some(e) = e.downcast_ref::<BagIoError>() {
        return Some(bagio(e));
    }
    if let Some(e) = e.downcast_ref::<ModelError>() {
        return Some(model(e));
    }
    if let Some(e) = e.downcast_ref::<PreprocessError>() {
        return Some(preprocess(e));
    }
    if let Some(e) = e.downcast_ref::<SynthError>() {
        return Some(match e {
            SynthError::InvalidSpec(_) => VALIDATION,
            SynthError::Preprocess(p) => preprocess(p),
            _ => RUNTIME,
        });
    }
    if let Some(e) = e.downcast_ref::<MetricsError>() {
        return Some(match e {
            MetricsError::Format(_) | MetricsError::Io(_) | MetricsError::Empty => INPUT,
            MetricsError::InvalidProbability(_) | MetricsError::SingleClass(_) => INPUT,
            MetricsError::NoIterations => VALIDATION,
            _ => RUNTIME,
        });
    }
    if let Some(e) = e.downcast_ref::<HeatmapError>() {
        return Some(match e {
            HeatmapError::InvalidParameter { .. } => VALIDATION,
            HeatmapError::Model(m) => model(m),
            HeatmapError::Preprocess(p) => preprocess(p),
            HeatmapError::Io(_)
            | HeatmapError::Csv(_)
            | HeatmapError::LengthMismatch { .. }
            | HeatmapError::EmptyManifest(_)
            | HeatmapError::MaskMismatch { .. } => INPUT,
        });
    }
    if e.is::<std::io::Error>() {
        return Some(INPUT);
    }
    None
}

/// First classifiable error in the chain decides; anything else is a runtime failure.
pub fn code_for(err: &anyhow::Error) -> u8 {
    err.chain().find_map(classify).unwrap_or(RUNTIME)
}
