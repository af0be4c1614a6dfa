use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_bag, write_bag, BagIoError, FeatureBag, Label, BAG_EXTENSION};
use crate::fsutil::write_atomic;

pub const COHORT_MANIFEST: &str = "cohort.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub slide_id: String,
    pub patient_id: String,
    pub label: Label,
    /// Bag file, relative to the manifest's directory.
    pub path: PathBuf,
}

/// Slides of a cohort. Slide ids are unique and every patient has one label.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    entries: Vec<CohortEntry>,
}

impl CohortManifest {
    pub fn new(entries: Vec<CohortEntry>) -> Result<Self, BagIoError> {
        let mut seen = HashSet::new();
        let mut patients: BTreeMap<&str, Label> = BTreeMap::new();
        for e in &entries {
            if !seen.insert(e.slide_id.as_str()) {
                return Err(BagIoError::DuplicateSlide(e.slide_id.clone()));
            }
            if let Some(prev) = patients.insert(e.patient_id.as_str(), e.label) {
                if prev != e.label {
                    return Err(BagIoError::Inconsistent(format!(
                        "patient {} has slides labelled {prev} and {}",
                        e.patient_id, e.label
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_bags(bags: &[FeatureBag]) -> Result<Self, BagIoError> {
        let entries = bags
            .iter()
            .map(|b| {
                Ok(CohortEntry {
                    slide_id: b.slide_id.clone(),
                    patient_id: b.patient_id.clone(),
                    label: b.require_label()?,
                    path: bag_relative_path(&b.slide_id),
                })
            })
            .collect::<Result<Vec<_>, BagIoError>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[CohortEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Slide counts `(effective, invalid)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let eff = self
            .entries
            .iter()
            .filter(|e| e.label == Label::Effective)
            .count();
        (eff, self.entries.len() - eff)
    }

    pub fn patient_labels(&self) -> BTreeMap<String, Label> {
        self.entries
            .iter()
            .map(|e| (e.patient_id.clone(), e.label))
            .collect()
    }

    pub fn read_csv(path: &Path) -> Result<Self, BagIoError> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| BagIoError::Csv(e.to_string()))?;
        let entries = reader
            .deserialize()
            .collect::<Result<Vec<CohortEntry>, _>>()
            .map_err(|e| BagIoError::Csv(e.to_string()))?;
        Self::new(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), BagIoError> {
        write_atomic(path, |w| {
            let mut writer = csv::Writer::from_writer(w);
            for e in &self.entries {
                writer.serialize(e).map_err(std::io::Error::other)?;
            }
            writer.flush()
        })?;
        Ok(())
    }
}

pub fn bag_relative_path(slide_id: &str) -> PathBuf {
    Path::new("bags").join(format!("{slide_id}.{BAG_EXTENSION}"))
}

/// A manifest together with its loaded bags, in manifest order.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub manifest: CohortManifest,
    pub bags: Vec<FeatureBag>,
}

impl Cohort {
    pub fn from_bags(bags: Vec<FeatureBag>) -> Result<Self, BagIoError> {
        Ok(Self {
            manifest: CohortManifest::from_bags(&bags)?,
            bags,
        })
    }

    pub fn load(dir: &Path) -> Result<Self, BagIoError> {
        let manifest = CohortManifest::read_csv(&dir.join(COHORT_MANIFEST))?;
        let mut bags = Vec::with_capacity(manifest.len());
        for e in manifest.entries() {
            let bag = read_bag(&dir.join(&e.path))?;
            if bag.slide_id != e.slide_id
                || bag.patient_id != e.patient_id
                || bag.label != Some(e.label)
            {
                return Err(BagIoError::Inconsistent(format!(
                    "bag file {} disagrees with manifest",
                    e.path.display()
                )));
            }
            bags.push(bag);
        }
        Ok(Self { manifest, bags })
    }

    pub fn save(&self, dir: &Path) -> Result<(), BagIoError> {
        for (e, bag) in self.manifest.entries().iter().zip(&self.bags) {
            write_bag(&dir.join(&e.path), bag)?;
        }
        self.manifest.write_csv(&dir.join(COHORT_MANIFEST))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagio::RegionCoord;
    use crate::nn::Matrix;

    fn bag(slide: &str, patient: &str, label: Label) -> FeatureBag {
        FeatureBag::new(
            slide,
            patient,
            Some(label),
            Matrix::from_rows(&[[1.0, 2.0]]).unwrap(),
            vec![RegionCoord {
                x: 0,
                y: 0,
                size: 4096,
            }],
        )
        .unwrap()
    }

    #[test]
    fn duplicate_slides_and_mixed_patient_labels_rejected() {
        let dup = vec![
            bag("S1", "P1", Label::Effective),
            bag("S1", "P2", Label::Invalid),
        ];
        assert!(matches!(
            CohortManifest::from_bags(&dup),
            Err(BagIoError::DuplicateSlide(_))
        ));
        let mixed = vec![
            bag("S1", "P1", Label::Effective),
            bag("S2", "P1", Label::Invalid),
        ];
        assert!(matches!(
            CohortManifest::from_bags(&mixed),
            Err(BagIoError::Inconsistent(_))
        ));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let cohort = Cohort::from_bags(vec![
            bag("S1", "P1", Label::Effective),
            bag("S2", "P1", Label::Effective),
            bag("S3", "P2", Label::Invalid),
        ])
        .unwrap();
        cohort.save(dir.path()).unwrap();
        let back = Cohort::load(dir.path()).unwrap();
        assert_eq!(back.manifest, cohort.manifest);
        assert_eq!(back.bags, cohort.bags);
        assert_eq!(back.manifest.class_counts(), (2, 1));
        assert_eq!(back.manifest.patient_labels().len(), 2);
    }
}
