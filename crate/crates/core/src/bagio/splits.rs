//! Patient-level, label-stratified partitions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{BagIoError, CohortManifest, FeatureBag, Label};
use crate::fsutil::write_atomic;
use crate::seed::{stream, tags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    KFold {
        k: usize,
    },
    /// Parts sized by `fractions` (summing to 1) within each class.
    TrainVal {
        fractions: Vec<f64>,
    },
}

impl SplitScheme {
    pub fn parts(&self) -> usize {
        match self {
            SplitScheme::KFold { k } => *k,
            SplitScheme::TrainVal { fractions } => fractions.len(),
        }
    }
}

/// Which parts of a plan play which role in one training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRoles {
    pub train: Vec<usize>,
    pub val: usize,
    pub test: Option<usize>,
}

/// Cross-validation rotation: fold `i` is test, fold `i+1 (mod k)` validation,
/// the rest train.
pub fn cv_roles(k: usize, fold: usize) -> FoldRoles {
    assert!(k >= 3 && fold < k, "cv rotation needs k >= 3");
    let val = (fold + 1) % k;
    FoldRoles {
        train: (0..k).filter(|&p| p != fold && p != val).collect(),
        val,
        test: Some(fold),
    }
}

/// Train/validation rotation without a test part: part `i` validates.
pub fn holdout_roles(k: usize, member: usize) -> FoldRoles {
    assert!(k >= 2 && member < k, "holdout rotation needs k >= 2");
    FoldRoles {
        train: (0..k).filter(|&p| p != member).collect(),
        val: member,
        test: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub seed: Option<u64>,
    assignment: BTreeMap<String, usize>,
}

impl SplitPlan {
    pub fn from_assignment(
        scheme: SplitScheme,
        seed: Option<u64>,
        assignment: BTreeMap<String, usize>,
    ) -> Result<Self, BagIoError> {
        if let Some((p, &part)) = assignment.iter().find(|(_, &v)| v >= scheme.parts()) {
            return Err(BagIoError::Inconsistent(format!(
                "patient {p} assigned to part {part} of {}",
                scheme.parts()
            )));
        }
        Ok(Self {
            scheme,
            seed,
            assignment,
        })
    }

    pub fn parts(&self) -> usize {
        self.scheme.parts()
    }

    pub fn assignment(&self) -> &BTreeMap<String, usize> {
        &self.assignment
    }

    pub fn part_of(&self, patient: &str) -> Option<usize> {
        self.assignment.get(patient).copied()
    }

    pub fn patients_in(&self, part: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &p)| p == part)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Indices of `bags` whose patient falls in any of `parts`.
    pub fn bag_indices(&self, bags: &[FeatureBag], parts: &[usize]) -> Vec<usize> {
        bags.iter()
            .enumerate()
            .filter(|(_, b)| {
                self.part_of(&b.patient_id)
                    .is_some_and(|p| parts.contains(&p))
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), BagIoError> {
        write_atomic(path, |w| {
            let mut writer = csv::Writer::from_writer(w);
            writer.write_record(["patient_id", "fold"])?;
            for (p, f) in &self.assignment {
                writer.write_record([p.as_str(), &f.to_string()])?;
            }
            writer.flush()
        })?;
        Ok(())
    }

    /// Reads a `patient_id,fold` CSV as a k-fold plan with `k = max fold + 1`.
    pub fn read_csv(path: &Path) -> Result<Self, BagIoError> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| BagIoError::Csv(e.to_string()))?;
        let mut assignment = BTreeMap::new();
        for rec in reader.deserialize::<(String, usize)>() {
            let (p, f) = rec.map_err(|e| BagIoError::Csv(e.to_string()))?;
            if assignment.insert(p.clone(), f).is_some() {
                return Err(BagIoError::Inconsistent(format!(
                    "patient {p} listed twice"
                )));
            }
        }
        let k = assignment.values().max().map_or(0, |m| m + 1);
        Self::from_assignment(SplitScheme::KFold { k }, None, assignment)
    }
}

pub fn make_splits(
    manifest: &CohortManifest,
    scheme: SplitScheme,
    seed: u64,
) -> Result<SplitPlan, BagIoError> {
    make_patient_splits(&manifest.patient_labels(), scheme, seed)
}

/// Stratified patient partition. Patients of each class are shuffled with a
/// seeded stream, then dealt out class by class.
pub fn make_patient_splits(
    patients: &BTreeMap<String, Label>,
    scheme: SplitScheme,
    seed: u64,
) -> Result<SplitPlan, BagIoError> {
    let parts = scheme.parts();
    if parts < 2 {
        return Err(BagIoError::InvalidScheme(format!(
            "need at least 2 parts, got {parts}"
        )));
    }
    if let SplitScheme::TrainVal { fractions } = &scheme {
        let sum: f64 = fractions.iter().sum();
        if fractions.iter().any(|&f| !(f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(BagIoError::InvalidScheme(format!(
                "fractions {fractions:?} must be positive and sum to 1"
            )));
        }
    }

    let mut rng = stream(seed, &[tags::SPLITS]);
    let mut assignment = BTreeMap::new();
    let mut cursor = 0usize;
    for label in [Label::Effective, Label::Invalid] {
        let mut ids: Vec<&String> = patients
            .iter()
            .filter(|(_, &l)| l == label)
            .map(|(p, _)| p)
            .collect();
        if ids.len() < parts {
            return Err(BagIoError::TooFewPatients {
                label,
                have: ids.len(),
                need: parts,
            });
        }
        ids.shuffle(&mut rng);
        match &scheme {
            SplitScheme::KFold { .. } => {
                // continuing the deal across classes keeps total fold sizes within 1
                for id in ids {
                    assignment.insert(id.clone(), cursor % parts);
                    cursor += 1;
                }
            }
            SplitScheme::TrainVal { fractions } => {
                let sizes = apportion(ids.len(), fractions);
                let mut it = ids.into_iter();
                for (part, &size) in sizes.iter().enumerate() {
                    for id in it.by_ref().take(size) {
                        assignment.insert(id.clone(), part);
                    }
                }
            }
        }
    }
    SplitPlan::from_assignment(scheme, Some(seed), assignment)
}

/// Largest-remainder apportionment of `n` items, at least one per part.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).max(1)).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut total: usize = sizes.iter().sum();
    let mut i = 0;
    while total < n {
        sizes[order[i % order.len()]] += 1;
        total += 1;
        i += 1;
    }
    while total > n {
        let j = (0..sizes.len())
            .max_by_key(|&j| sizes[j])
            .expect("non-empty");
        sizes[j] -= 1;
        total -= 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patients(eff: usize, inv: usize) -> BTreeMap<String, Label> {
        (0..eff)
            .map(|i| (format!("E{i:03}"), Label::Effective))
            .chain((0..inv).map(|i| (format!("I{i:03}"), Label::Invalid)))
            .collect()
    }

    #[test]
    fn ten_patients_five_folds() {
        let plan = make_patient_splits(&patients(5, 5), SplitScheme::KFold { k: 5 }, 1).unwrap();
        for f in 0..5 {
            assert_eq!(plan.patients_in(f).len(), 2);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = make_patient_splits(&patients(53, 25), SplitScheme::KFold { k: 5 }, 9).unwrap();
        let b = make_patient_splits(&patients(53, 25), SplitScheme::KFold { k: 5 }, 9).unwrap();
        let c = make_patient_splits(&patients(53, 25), SplitScheme::KFold { k: 5 }, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.assignment(), c.assignment());
    }

    #[test]
    fn clinical_shaped_cohort_is_stratified() {
        let all = patients(53, 25);
        let plan = make_patient_splits(&all, SplitScheme::KFold { k: 5 }, 3).unwrap();
        let global = 53.0 / 78.0;
        let mut seen = 0;
        for f in 0..5 {
            let ids = plan.patients_in(f);
            let eff = ids.iter().filter(|p| all[**p] == Label::Effective).count();
            // expected effective count at the global ratio, ±1 patient
            let expected = global * ids.len() as f64;
            assert!(
                (eff as f64 - expected).abs() <= 1.0,
                "fold {f}: {eff} vs {expected}"
            );
            seen += ids.len();
        }
        assert_eq!(seen, 78);
        let sizes: Vec<usize> = (0..5).map(|f| plan.patients_in(f).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_few_patients() {
        assert!(matches!(
            make_patient_splits(&patients(10, 4), SplitScheme::KFold { k: 5 }, 0),
            Err(BagIoError::TooFewPatients {
                label: Label::Invalid,
                have: 4,
                need: 5
            })
        ));
    }

    #[test]
    fn train_val_fractions() {
        let all = patients(53, 25);
        let plan = make_patient_splits(
            &all,
            SplitScheme::TrainVal {
                fractions: vec![0.75, 0.25],
            },
            4,
        )
        .unwrap();
        let val = plan.patients_in(1);
        let val_eff = val.iter().filter(|p| all[**p] == Label::Effective).count();
        assert_eq!(val_eff, 13); // 53 × 0.25 = 13.25
        assert_eq!(val.len() - val_eff, 6); // 25 × 0.25 = 6.25
        assert!(make_patient_splits(
            &all,
            SplitScheme::TrainVal {
                fractions: vec![0.5, 0.2]
            },
            4
        )
        .is_err());
    }

    #[test]
    fn rotation_covers_each_fold_once_as_test() {
        let k = 5;
        let mut tested = vec![0; k];
        for f in 0..k {
            let r = cv_roles(k, f);
            tested[r.test.unwrap()] += 1;
            let mut all: Vec<usize> = r.train.clone();
            all.push(r.val);
            all.push(r.test.unwrap());
            all.sort();
            assert_eq!(all, (0..k).collect::<Vec<_>>());
        }
        assert_eq!(tested, vec![1; k]);
        let h = holdout_roles(4, 2);
        assert_eq!(h.train, vec![0, 1, 3]);
        assert_eq!(h.test, None);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("splits.csv");
        let plan = make_patient_splits(&patients(12, 6), SplitScheme::KFold { k: 5 }, 2).unwrap();
        plan.write_csv(&path).unwrap();
        let back = SplitPlan::read_csv(&path).unwrap();
        assert_eq!(back.assignment(), plan.assignment());
    }
}
