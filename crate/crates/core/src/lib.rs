//! Attention-based multiple-instance learning for whole-slide treatment
//! response: tissue segmentation and tiling, feature-bag I/O, a gated
//! attention MIL classifier with hand-written gradients, the seeded
//! training/tuning/cross-validation protocol, bootstrap metrics, attention
//! heatmaps and a synthetic cohort generator with known ground truth.

pub mod bagio;
pub mod fsutil;
pub mod harness;
pub mod heatmap;
pub mod metrics;
pub mod mil;
pub mod nn;
pub mod preprocess;
pub mod seed;
pub mod synth;

pub use bagio::{BagIoError, Cohort, FeatureBag, Label, SplitPlan, SplitScheme};
pub use harness::{HarnessError, TrainConfig};
pub use heatmap::{HeatmapError, HeatmapSpec};
pub use metrics::{MetricsError, MetricsReport, Prediction};
pub use mil::{MilModelParams, ModelError};
pub use nn::{Matrix, NnError};
pub use preprocess::{PreprocessError, RegionManifest, SlideImage, TissueMask};
pub use synth::{CohortSpec, SynthError};
