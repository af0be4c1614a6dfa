//! Synthetic cohorts with planted signal and optional background confounders,
//! and synthetic slide images with exact tissue masks.
//!
//! Feature model: tissue regions are `N(0, I)`. In an effective slide,
//! `K = round(fraction·N_tissue)` tissue regions chosen uniformly are shifted
//! by `μ·u`. Confounded cohorts add background regions
//! `N(0, I) + marker·m ± effect·c` (`+` for effective slides), with `u`, `m`,
//! `c` orthonormal.

mod image;

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagio::{BagIoError, Cohort, FeatureBag, Label, RegionCoord};
use crate::fsutil::write_atomic_bytes;
use crate::metrics::{auc, Prediction};
use crate::nn::{dot, log_sum_exp, Matrix};
use crate::preprocess::{write_manifests_csv, PreprocessError, RegionEntry, RegionManifest};
use crate::seed::{stream, tags, StreamRng};

pub use self::image::{generate_slide_image, Ellipse, PenStroke, SlideGeometry};

pub const SYNTH_REGION_SIZE: u64 = 4096;
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const REGIONS_FILE: &str = "regions.csv";
/// Offset of background regions along the marker direction, in σ.
pub const BACKGROUND_MARKER: f64 = 4.0;

const COHORT_STREAM: u64 = 1;
const SLIDE_STREAM: u64 = 2;
const BAYES_STREAM: u64 = 3;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    BagIo(#[from] BagIoError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    /// Shift μ along the signal direction, in σ.
    pub effect: f64,
    /// Fraction of tissue regions that carry the shift in effective slides.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfounderSpec {
    /// Inclusive range of background regions per slide.
    pub background_regions: (usize, usize),
    /// Label-correlated shift of background regions, in σ.
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub patients: usize,
    /// Inclusive range of slides per patient.
    pub slides_per_patient: (usize, usize),
    /// Fraction of patients labelled effective; the count is rounded.
    pub effective_fraction: f64,
    pub feature_dim: usize,
    /// Inclusive range of regions per slide (background included).
    pub regions_per_slide: (usize, usize),
    pub signal: SignalSpec,
    pub confounder: Option<ConfounderSpec>,
    pub seed: u64,
}

impl Default for CohortSpec {
    /// 78 patients, 53 effective, 1–6 slides each, 13–166 regions, D = 64,
    /// 5σ signal in 30% of regions.
    fn default() -> Self {
        Self {
            patients: 78,
            slides_per_patient: (1, 6),
            effective_fraction: 53.0 / 78.0,
            feature_dim: 64,
            regions_per_slide: (13, 166),
            signal: SignalSpec {
                effect: 5.0,
                fraction: 0.3,
            },
            confounder: None,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidSpec(msg));
        if self.patients < 2 {
            return bad(format!("patients = {} (need ≥ 2)", self.patients));
        }
        let (slo, shi) = self.slides_per_patient;
        if slo < 1 || slo > shi {
            return bad(format!("slides_per_patient = ({slo}, {shi})"));
        }
        if !(0.0..=1.0).contains(&self.effective_fraction) {
            return bad(format!("effective_fraction = {}", self.effective_fraction));
        }
        let n_eff = self.effective_patients();
        if n_eff == 0 || n_eff == self.patients {
            return bad("both classes need at least one patient".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim = 0".into());
        }
        let (rlo, rhi) = self.regions_per_slide;
        if rlo < 1 || rlo > rhi || rhi > 10_000 {
            return bad(format!(
                "regions_per_slide = ({rlo}, {rhi}) outside [1, 10000]"
            ));
        }
        if !(self.signal.effect >= 0.0 && self.signal.effect.is_finite()) {
            return bad(format!("signal.effect = {}", self.signal.effect));
        }
        if !(0.0..=1.0).contains(&self.signal.fraction) {
            return bad(format!("signal.fraction = {}", self.signal.fraction));
        }
        if let Some(c) = &self.confounder {
            let (blo, bhi) = c.background_regions;
            if blo > bhi || bhi >= rlo {
                return bad(format!(
                    "confounder.background_regions = ({blo}, {bhi}) must leave tissue regions \
                     (regions_per_slide starts at {rlo})"
                ));
            }
            if !(c.effect >= 0.0 && c.effect.is_finite()) {
                return bad(format!("confounder.effect = {}", c.effect));
            }
            if self.feature_dim < 3 {
                return bad("confounded cohorts need feature_dim ≥ 3".into());
            }
        }
        Ok(())
    }

    pub fn effective_patients(&self) -> usize {
        (self.effective_fraction * self.patients as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideTruth {
    pub slide_id: String,
    pub signal_regions: Vec<usize>,
    pub background_regions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: CohortSpec,
    /// Monte-Carlo estimate of the slide-level AUC of the exact likelihood
    /// ratio under the generative model; absent when not estimated.
    pub bayes_auc: Option<f64>,
    pub bayes_auc_samples: usize,
    pub signal_direction: Vec<f64>,
    pub slides: Vec<SlideTruth>,
}

impl GroundTruth {
    pub fn slide(&self, slide_id: &str) -> Option<&SlideTruth> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub regions: Vec<RegionManifest>,
    pub truth: GroundTruth,
}

impl SynthCohort {
    pub fn bags(&self) -> &[FeatureBag] {
        &self.cohort.bags
    }

    /// Writes bags, `cohort.csv`, `regions.csv` and `ground_truth.json`.
    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        self.cohort.save(dir)?;
        write_manifests_csv(&dir.join(REGIONS_FILE), &self.regions)?;
        let mut json = serde_json::to_vec_pretty(&self.truth).map_err(std::io::Error::other)?;
        json.push(b'\n');
        write_atomic_bytes(&dir.join(GROUND_TRUTH_FILE), &json)?;
        Ok(())
    }
}

/// Orthonormal directions for signal, marker and confounder.
#[derive(Debug, Clone)]
struct Directions {
    signal: Vec<f64>,
    marker: Vec<f64>,
    confounder: Vec<f64>,
}

fn gaussian_vec(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gram–Schmidt on Gaussian draws.
fn orthonormal(rng: &mut StreamRng, d: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, d);
        for b in &basis {
            let p = dot(&v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

fn directions(rng: &mut StreamRng, d: usize) -> Directions {
    let count = if d >= 3 { 3 } else { 1 };
    let mut b = orthonormal(rng, d, count);
    let signal = b.remove(0);
    let (marker, confounder) = if b.len() == 2 {
        (b.remove(0), b.remove(0))
    } else {
        (vec![0.0; d], vec![0.0; d])
    };
    Directions {
        signal,
        marker,
        confounder,
    }
}

struct SlidePlan {
    slide_id: String,
    patient_id: String,
    label: Label,
    index: u64,
}

struct SlideDraw {
    features: Matrix,
    coords: Vec<RegionCoord>,
    fractions: Vec<f64>,
    signal: Vec<usize>,
    background: Vec<usize>,
}

fn draw_slide(
    spec: &CohortSpec,
    dirs: &Directions,
    label: Label,
    rng: &mut StreamRng,
) -> SlideDraw {
    let d = spec.feature_dim;
    let (rlo, rhi) = spec.regions_per_slide;
    let n = rng.random_range(rlo..=rhi);
    let n_bg = spec.confounder.as_ref().map_or(0, |c| {
        rng.random_range(c.background_regions.0..=c.background_regions.1)
    });
    let mut background: Vec<usize> = sample(rng, n, n_bg).into_vec();
    background.sort_unstable();
    let tissue: Vec<usize> = (0..n)
        .filter(|i| background.binary_search(i).is_err())
        .collect();

    let mut signal = Vec::new();
    if label == Label::Effective && spec.signal.effect > 0.0 {
        let k = (spec.signal.fraction * tissue.len() as f64).round() as usize;
        signal = sample(rng, tissue.len(), k)
            .into_iter()
            .map(|j| tissue[j])
            .collect();
        signal.sort_unstable();
    }

    let sign = if label == Label::Effective { 1.0 } else { -1.0 };
    let mut data = Vec::with_capacity(n * d);
    let mut fractions = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = gaussian_vec(rng, d);
        if signal.binary_search(&i).is_ok() {
            for (v, u) in x.iter_mut().zip(&dirs.signal) {
                *v += spec.signal.effect * u;
            }
        }
        if background.binary_search(&i).is_ok() {
            let effect = spec.confounder.as_ref().map_or(0.0, |c| c.effect);
            for ((v, m), c) in x.iter_mut().zip(&dirs.marker).zip(&dirs.confounder) {
                *v += BACKGROUND_MARKER * m + sign * effect * c;
            }
            fractions.push(rng.random_range(0.0..0.3));
        } else {
            fractions.push(rng.random_range(0.6..=1.0));
        }
        data.extend(x.into_iter().map(|v| v as f32 as f64));
    }
    let cols = (n as f64).sqrt().ceil() as u64;
    let coords = (0..n as u64)
        .map(|i| RegionCoord {
            x: (i % cols) * SYNTH_REGION_SIZE,
            y: (i / cols) * SYNTH_REGION_SIZE,
            size: SYNTH_REGION_SIZE,
        })
        .collect();
    SlideDraw {
        features: Matrix::new(n, d, data).expect("n·d values"),
        coords,
        fractions,
        signal,
        background,
    }
}

/// `log e_k(exp(l_1), …, exp(l_n))`: log of the k-th elementary symmetric
/// polynomial, by the usual O(nk) recurrence in log space.
fn log_elementary_symmetric(log_terms: &[f64], k: usize) -> f64 {
    let mut e = vec![f64::NEG_INFINITY; k + 1];
    e[0] = 0.0;
    for &l in log_terms {
        for j in (1..=k).rev() {
            e[j] = log_sum_exp(&[e[j], e[j - 1] + l]);
        }
    }
    e[k]
}

fn log_binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// Exact log likelihood ratio (effective vs invalid) of one slide, given which
/// regions are background.
fn log_likelihood_ratio(
    spec: &CohortSpec,
    dirs: &Directions,
    features: &Matrix,
    background: &[usize],
) -> f64 {
    let mu = spec.signal.effect;
    let mut tissue_terms = Vec::new();
    let mut bg_term = 0.0;
    let effect = spec.confounder.as_ref().map_or(0.0, |c| c.effect);
    for i in 0..features.rows() {
        let x = features.row(i);
        if background.binary_search(&i).is_ok() {
            bg_term += 2.0 * effect * dot(&dirs.confounder, x);
        } else {
            tissue_terms.push(mu * dot(&dirs.signal, x) - mu * mu / 2.0);
        }
    }
    let k = (spec.signal.fraction * tissue_terms.len() as f64).round() as usize;
    let signal_term = if mu > 0.0 && k > 0 {
        log_elementary_symmetric(&tissue_terms, k) - log_binomial(tissue_terms.len(), k)
    } else {
        0.0
    };
    signal_term + bg_term
}

fn bayes_auc(spec: &CohortSpec, dirs: &Directions, samples: usize) -> f64 {
    let llrs: Vec<f64> = (0..2 * samples)
        .into_par_iter()
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Effective
            } else {
                Label::Invalid
            };
            let mut rng = stream(spec.seed, &[tags::SYNTH, BAYES_STREAM, i as u64]);
            let s = draw_slide(spec, dirs, label, &mut rng);
            log_likelihood_ratio(spec, dirs, &s.features, &s.background)
        })
        .collect();
    // AUC is rank-based; map LLRs to [0, 1] by rank so large ratios do not
    // saturate into ties
    let mut sorted = llrs.clone();
    sorted.sort_by(f64::total_cmp);
    let preds: Vec<Prediction> = llrs
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let rank = sorted.partition_point(|v| v < l);
            Prediction {
                slide_id: i.to_string(),
                patient_id: i.to_string(),
                label: if i % 2 == 0 {
                    Label::Effective
                } else {
                    Label::Invalid
                },
                prob_effective: rank as f64 / sorted.len() as f64,
            }
        })
        .collect();
    auc(&preds).expect("both classes sampled")
}

pub const DEFAULT_BAYES_SAMPLES: usize = 2000;

/// Generates the cohort. Cohort-level draws (labels, slide counts,
/// directions) and each slide use separate derived streams, so slides can be
/// generated in parallel.
pub fn generate_cohort(spec: &CohortSpec) -> Result<SynthCohort, SynthError> {
    generate_cohort_with(spec, DEFAULT_BAYES_SAMPLES)
}

pub fn generate_cohort_with(
    spec: &CohortSpec,
    bayes_samples: usize,
) -> Result<SynthCohort, SynthError> {
    spec.validate()?;
    let mut rng = stream(spec.seed, &[tags::SYNTH, COHORT_STREAM]);
    let dirs = directions(&mut rng, spec.feature_dim);

    let n_eff = spec.effective_patients();
    let effective: Vec<usize> = sample(&mut rng, spec.patients, n_eff).into_vec();
    let mut plans = Vec::new();
    for p in 0..spec.patients {
        let label = if effective.contains(&p) {
            Label::Effective
        } else {
            Label::Invalid
        };
        let slides = rng.random_range(spec.slides_per_patient.0..=spec.slides_per_patient.1);
        for j in 1..=slides {
            plans.push(SlidePlan {
                slide_id: format!("P{:03}_S{j}", p + 1),
                patient_id: format!("P{:03}", p + 1),
                label,
                index: plans.len() as u64,
            });
        }
    }

    let drawn: Vec<SlideDraw> = plans
        .par_iter()
        .map(|plan| {
            let mut rng = stream(spec.seed, &[tags::SYNTH, SLIDE_STREAM, plan.index]);
            draw_slide(spec, &dirs, plan.label, &mut rng)
        })
        .collect();

    let mut bags = Vec::with_capacity(plans.len());
    let mut regions = Vec::with_capacity(plans.len());
    let mut slides = Vec::with_capacity(plans.len());
    for (plan, s) in plans.into_iter().zip(drawn) {
        regions.push(RegionManifest {
            slide_id: plan.slide_id.clone(),
            region_size: SYNTH_REGION_SIZE,
            min_tissue_fraction: 0.0,
            entries: s
                .coords
                .iter()
                .zip(&s.fractions)
                .map(|(c, &f)| RegionEntry {
                    x: c.x,
                    y: c.y,
                    tissue_fraction: f,
                })
                .collect(),
        });
        slides.push(SlideTruth {
            slide_id: plan.slide_id.clone(),
            signal_regions: s.signal,
            background_regions: s.background,
        });
        bags.push(FeatureBag::new(
            plan.slide_id,
            plan.patient_id,
            Some(plan.label),
            s.features,
            s.coords,
        )?);
    }

    let bayes = (bayes_samples > 0).then(|| bayes_auc(spec, &dirs, bayes_samples));
    Ok(SynthCohort {
        cohort: Cohort::from_bags(bags)?,
        regions,
        truth: GroundTruth {
            spec: spec.clone(),
            bayes_auc: bayes,
            bayes_auc_samples: bayes_samples,
            signal_direction: dirs.signal,
            slides,
        },
    })
}
