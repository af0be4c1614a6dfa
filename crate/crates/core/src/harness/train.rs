use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, TrainConfig};
use crate::bagio::{FeatureBag, Label};
use crate::mil::{
    forward_bag, forward_inference, weighted_bag_loss, weighted_clam_loss, MilModelParams,
};
use crate::nn::{cross_entropy, AdamState, DropoutSpec};
use crate::seed::{stream, tags};

/// Sorted indices of `min(n, p)` distinct regions drawn uniformly.
pub fn subsample_indices<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Vec<usize> {
    if n <= p {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, p).into_vec();
    idx.sort_unstable();
    idx
}

pub fn subsample_bag<R: Rng + ?Sized>(bag: &FeatureBag, p: usize, rng: &mut R) -> FeatureBag {
    let idx = subsample_indices(bag.num_regions(), p, rng);
    if idx.len() == bag.num_regions() {
        bag.clone()
    } else {
        bag.subset(&idx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub params: MilModelParams,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
}

/// Mean bag-level cross-entropy on full bags, dropout off.
pub fn validation_loss(params: &MilModelParams, bags: &[&FeatureBag]) -> Result<f64, HarnessError> {
    if bags.is_empty() {
        return Err(HarnessError::EmptySplit("validation"));
    }
    let mut total = 0.0;
    for bag in bags {
        let label = bag.require_label()?.class_index();
        let out = forward_inference(&bag.features, params)?;
        total += cross_entropy(&out.logits, label)?.loss;
    }
    Ok(total / bags.len() as f64)
}

fn class_weights(train: &[&FeatureBag], enabled: bool) -> Result<[f64; 2], HarnessError> {
    let mut counts = [0usize; 2];
    for bag in train {
        counts[bag.require_label()?.class_index()] += 1;
    }
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            let present = Label::from_class_index(1 - c).expect("binary labels");
            return Err(HarnessError::SingleClassTraining(present));
        }
    }
    if !enabled {
        return Ok([1.0, 1.0]);
    }
    let total = train.len() as f64;
    Ok([
        total / (2.0 * counts[0] as f64),
        total / (2.0 * counts[1] as f64),
    ])
}

/// Trains one model: each epoch visits the training bags in a seeded shuffled
/// order with one Adam step per bag, on a fresh subsample of
/// `patches_per_slide` regions. Keeps the best-validation-loss weights and
/// stops after `patience` epochs without improvement or at `max_epochs`.
pub fn train_one(
    config: &TrainConfig,
    train: &[&FeatureBag],
    val: &[&FeatureBag],
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    if train.is_empty() {
        return Err(HarnessError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(HarnessError::EmptySplit("validation"));
    }
    let weights = class_weights(train, config.class_weighting)?;
    let input_dim = train[0].feature_dim();

    let mut init_rng = stream(config.seed, &[tags::INIT]);
    let mut params = MilModelParams::init(
        input_dim,
        config.attention_dim,
        config.clam.is_some(),
        &mut init_rng,
    )?;
    let mut adam = AdamState::new(config.learning_rate, config.l2_weight);
    let dropout = DropoutSpec::training(config.dropout)?;

    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.max_epochs {
        let mut rng = stream(config.seed, &[tags::EPOCH, epoch as u64]);
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for &i in &order {
            let bag = train[i];
            let label = bag.require_label()?.class_index();
            let idx = subsample_indices(bag.num_regions(), config.patches_per_slide, &mut rng);
            let subset;
            let x = if idx.len() == bag.num_regions() {
                &bag.features
            } else {
                subset = bag.features.select_rows(&idx);
                &subset
            };
            let out = forward_bag(x, &params, dropout, &mut rng)?;
            let loss = match &config.clam {
                Some(c) => weighted_clam_loss(&out, &params, label, c, weights[label])?,
                None => weighted_bag_loss(&out, &params, label, weights[label])?,
            };
            train_loss += loss.loss;
            adam.step(&mut params.tensors_mut(), &loss.grads.tensors())?;
        }
        let val_loss = validation_loss(&params, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss / train.len() as f64,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
        }
        if epoch - best.2 >= config.patience {
            break;
        }
    }
    let (best_val_loss, params, best_epoch) = best;
    Ok(TrainOutcome {
        params,
        best_val_loss,
        best_epoch,
        epochs_run: history.len(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagio::RegionCoord;
    use crate::nn::Matrix;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn bag(id: usize, n: usize, label: Label, shift: f64, rng: &mut impl Rng) -> FeatureBag {
        let d = 6;
        let data: Vec<f64> = (0..n * d)
            .map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                // first feature carries the label in every region
                if j % d == 0 && label == Label::Effective {
                    z + shift
                } else {
                    z
                }
            })
            .collect();
        FeatureBag::new(
            format!("S{id}"),
            format!("P{id}"),
            Some(label),
            Matrix::new(n, d, data).unwrap(),
            (0..n as u64)
                .map(|i| RegionCoord {
                    x: i,
                    y: 0,
                    size: 1,
                })
                .collect(),
        )
        .unwrap()
    }

    fn toy(seed: u64, count: usize, shift: f64) -> Vec<FeatureBag> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let label = if i % 2 == 0 {
                    Label::Effective
                } else {
                    Label::Invalid
                };
                bag(i, 10 + i % 7, label, shift, &mut rng)
            })
            .collect()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            dropout: 0.0,
            l2_weight: 0.0,
            attention_dim: 8,
            patches_per_slide: 75,
            max_epochs: 30,
            patience: 30,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn subsampling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            subsample_indices(13, 75, &mut rng),
            (0..13).collect::<Vec<_>>()
        );
        let idx = subsample_indices(166, 75, &mut rng);
        assert_eq!(idx.len(), 75);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 166));
    }

    #[test]
    fn subsampling_frequency() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut hits = [0u32; 100];
        let epochs = 10_000;
        for _ in 0..epochs {
            for i in subsample_indices(100, 75, &mut rng) {
                hits[i] += 1;
            }
        }
        for h in hits {
            let f = h as f64 / epochs as f64;
            assert!((f - 0.75).abs() < 0.02, "{f}");
        }
    }

    #[test]
    fn separable_bags_train_loss_decreases() {
        let bags = toy(3, 24, 3.0);
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let cfg = TrainConfig {
            max_epochs: 5,
            ..quick()
        };
        let out = train_one(&cfg, &refs[..16], &refs[16..]).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
        assert_eq!(losses.len(), 5);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn same_seed_bit_identical() {
        let bags = toy(4, 16, 1.0);
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let cfg = TrainConfig {
            dropout: 0.5,
            patches_per_slide: 8,
            max_epochs: 6,
            ..quick()
        };
        let a = train_one(&cfg, &refs[..12], &refs[12..]).unwrap();
        let b = train_one(&cfg, &refs[..12], &refs[12..]).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        let c = train_one(&TrainConfig { seed: 8, ..cfg }, &refs[..12], &refs[12..]).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let bags = toy(5, 8, 1.0);
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let out = train_one(
            &TrainConfig {
                patience: 0,
                ..quick()
            },
            &refs[..6],
            &refs[6..],
        )
        .unwrap();
        assert_eq!(out.epochs_run, 1);
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn keeps_best_validation_weights() {
        let bags = toy(6, 16, 0.5);
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let out = train_one(
            &TrainConfig {
                learning_rate: 0.05,
                ..quick()
            },
            &refs[..12],
            &refs[12..],
        )
        .unwrap();
        let min = out
            .history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_loss, min);
        assert_eq!(out.history[out.best_epoch].val_loss, min);
        assert_eq!(validation_loss(&out.params, &refs[12..]).unwrap(), min);
        assert!(out.epochs_run - out.best_epoch <= 30);
    }

    #[test]
    fn single_class_training_rejected() {
        let bags = toy(7, 8, 1.0);
        let eff: Vec<&FeatureBag> = bags
            .iter()
            .filter(|b| b.label == Some(Label::Effective))
            .collect();
        assert!(matches!(
            train_one(&quick(), &eff, &eff),
            Err(HarnessError::SingleClassTraining(Label::Effective))
        ));
    }

    #[test]
    fn class_weights_balance_the_classes() {
        let bags = toy(8, 9, 1.0); // 5 effective, 4 invalid
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let w = class_weights(&refs, true).unwrap();
        assert_eq!(w, [9.0 / 8.0, 9.0 / 10.0]);
        assert!((4.0 * w[0] - 5.0 * w[1]).abs() < 1e-12);
        assert_eq!(class_weights(&refs, false).unwrap(), [1.0, 1.0]);
    }

    #[test]
    fn clam_with_zero_weight_matches_abmil() {
        let bags = toy(9, 12, 1.0);
        let refs: Vec<&FeatureBag> = bags.iter().collect();
        let cfg = TrainConfig {
            max_epochs: 3,
            ..quick()
        };
        let plain = train_one(&cfg, &refs[..8], &refs[8..]).unwrap();
        let clam = train_one(
            &TrainConfig {
                clam: Some(crate::mil::ClamConfig::new(2, 0.0).unwrap()),
                ..cfg
            },
            &refs[..8],
            &refs[8..],
        )
        .unwrap();
        assert_eq!(plain.history, clam.history);
        assert_eq!(plain.params.classifier, clam.params.classifier);
    }
}
