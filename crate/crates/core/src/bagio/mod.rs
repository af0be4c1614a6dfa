//! Persistence: `.fbag` feature bags, CSV feature import, cohort manifests
//! and patient-level split plans.

mod bag;
mod cohort;
mod csvio;
mod splits;

pub use bag::{
    read_bag, read_bag_from, write_bag, write_bag_to, FeatureBag, Label, RegionCoord,
    BAG_EXTENSION, BAG_MAGIC, BAG_VERSION,
};
pub use cohort::{bag_relative_path, Cohort, CohortEntry, CohortManifest, COHORT_MANIFEST};
pub use csvio::{read_features_csv, write_features_csv};
pub use splits::{
    cv_roles, holdout_roles, make_patient_splits, make_splits, FoldRoles, SplitPlan, SplitScheme,
};

#[derive(Debug, thiserror::Error)]
pub enum BagIoError {
    #[error("not a feature bag file (bad magic)")]
    BadMagic,
    #[error("unsupported bag format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("file truncated")]
    Truncated,
    #[error("trailing bytes after bag payload")]
    TrailingBytes,
    #[error("region count × feature dimension overflows")]
    DimensionOverflow,
    #[error("identifier is not valid UTF-8")]
    InvalidUtf8,
    #[error("invalid label {0}")]
    InvalidLabel(String),
    #[error("slide {0} has no label")]
    MissingLabel(String),
    #[error("bag {0} has no regions")]
    EmptyBag(String),
    #[error("duplicate slide id {0}")]
    DuplicateSlide(String),
    #[error("{0}")]
    Inconsistent(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("invalid split scheme: {0}")]
    InvalidScheme(String),
    #[error("too few {label} patients for the split: have {have}, need {need}")]
    TooFewPatients {
        label: Label,
        have: usize,
        need: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
