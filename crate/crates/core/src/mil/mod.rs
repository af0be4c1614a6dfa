//! Gated-attention MIL bag classifier with an optional CLAM-style instance
//! clustering head.
//!
//! For a bag `X` (N×D):
//!
//! ```text
//! h   = tanh(X·P + p)                      N×H, H = L/2   (dropout)
//! g   = tanh(X·V + v) ⊙ sigmoid(X·U + u)   N×L            (dropout)
//! a   = softmax_k(g_k · w)                 attention over instances
//! z   = Σ_k a_k h_k                        bag embedding, 1×H
//! out = z·C + c                            2 logits [invalid, effective]
//! ```
//!
//! The instance classifier (CLAM) maps each `h_k` to 2 logits.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    cross_entropy, dot, sigmoid, sigmoid_backward, softmax, softmax_backward, tanh, tanh_backward,
    DropoutSpec, Linear, Matrix, NnError,
};

pub use checkpoint::{read_params, write_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const NUM_CLASSES: usize = 2;
/// Class index of the "effective" response in logits and probabilities.
pub const EFFECTIVE: usize = 1;
pub const INVALID: usize = 0;

pub const DEFAULT_INSTANCE_LOSS_WEIGHT: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("empty bag")]
    EmptyBag,
    #[error("feature dimension {got} does not match model input dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("attention dimension must be even and at least 2, got {0}")]
    InvalidAttentionDim(usize),
    #[error("backward called on a forward result without cached intermediates")]
    MissingCache,
    #[error("model has no instance classifier")]
    NoInstanceClassifier,
    #[error("instance clustering needs at least 2 instances, got {0}")]
    BagTooSmall(usize),
    #[error("invalid clustering config: {0}")]
    InvalidClamConfig(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Instance-clustering settings: the `b` highest- and `b` lowest-attention
/// instances receive pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClamConfig {
    pub b: usize,
    #[serde(default = "default_instance_weight")]
    pub instance_loss_weight: f64,
}

fn default_instance_weight() -> f64 {
    DEFAULT_INSTANCE_LOSS_WEIGHT
}

impl ClamConfig {
    pub fn new(b: usize, instance_loss_weight: f64) -> Result<Self, ModelError> {
        let cfg = Self {
            b,
            instance_loss_weight,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.b < 1 {
            return Err(ModelError::InvalidClamConfig("b must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.instance_loss_weight) {
            return Err(ModelError::InvalidClamConfig(format!(
                "instance_loss_weight {} outside [0, 1]",
                self.instance_loss_weight
            )));
        }
        Ok(())
    }

    /// `b` clamped so both branches fit in a bag of `n` instances.
    pub fn effective_b(&self, n: usize) -> usize {
        self.b.min(n / 2)
    }
}

/// All learnable weights. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MilModelParams {
    pub attention_v: Linear,
    pub attention_u: Linear,
    pub attention_w: Vec<f64>,
    pub projection: Linear,
    pub classifier: Linear,
    pub instance_classifier: Option<Linear>,
}

impl MilModelParams {
    /// Glorot-initialized parameters. The instance classifier is drawn last so
    /// that enabling it does not perturb the other initial weights.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        attention_dim: usize,
        with_instance_classifier: bool,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        check_attention_dim(attention_dim)?;
        let hidden = attention_dim / 2;
        let attention_v = Linear::glorot(input_dim, attention_dim, rng);
        let attention_u = Linear::glorot(input_dim, attention_dim, rng);
        let w = Linear::glorot(attention_dim, 1, rng);
        let projection = Linear::glorot(input_dim, hidden, rng);
        let classifier = Linear::glorot(hidden, NUM_CLASSES, rng);
        let instance_classifier =
            with_instance_classifier.then(|| Linear::glorot(hidden, NUM_CLASSES, rng));
        Ok(Self {
            attention_v,
            attention_u,
            attention_w: w.weight.into_data(),
            projection,
            classifier,
            instance_classifier,
        })
    }

    pub fn zeros(
        input_dim: usize,
        attention_dim: usize,
        with_instance_classifier: bool,
    ) -> Result<Self, ModelError> {
        check_attention_dim(attention_dim)?;
        let hidden = attention_dim / 2;
        Ok(Self {
            attention_v: Linear::zeros(input_dim, attention_dim),
            attention_u: Linear::zeros(input_dim, attention_dim),
            attention_w: vec![0.0; attention_dim],
            projection: Linear::zeros(input_dim, hidden),
            classifier: Linear::zeros(hidden, NUM_CLASSES),
            instance_classifier: with_instance_classifier
                .then(|| Linear::zeros(hidden, NUM_CLASSES)),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.input_dim(),
            self.attention_dim(),
            self.instance_classifier.is_some(),
        )
        .expect("dimensions already validated")
    }

    pub fn input_dim(&self) -> usize {
        self.attention_v.input_dim()
    }

    pub fn attention_dim(&self) -> usize {
        self.attention_v.output_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.projection.output_dim()
    }

    /// Parameter tensors in a fixed order (shared by gradients, optimizer
    /// state and checkpoints).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.attention_v.weight.data(),
            &self.attention_v.bias[..],
            self.attention_u.weight.data(),
            &self.attention_u.bias[..],
            &self.attention_w[..],
            self.projection.weight.data(),
            &self.projection.bias[..],
            self.classifier.weight.data(),
            &self.classifier.bias[..],
        ];
        if let Some(ic) = &self.instance_classifier {
            out.push(ic.weight.data());
            out.push(&ic.bias[..]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.attention_v.weight.data_mut(),
            &mut self.attention_v.bias[..],
            self.attention_u.weight.data_mut(),
            &mut self.attention_u.bias[..],
            &mut self.attention_w[..],
            self.projection.weight.data_mut(),
            &mut self.projection.bias[..],
            self.classifier.weight.data_mut(),
            &mut self.classifier.bias[..],
        ];
        if let Some(ic) = &mut self.instance_classifier {
            out.push(ic.weight.data_mut());
            out.push(&mut ic.bias[..]);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn check_attention_dim(l: usize) -> Result<(), ModelError> {
    if l < 2 || !l.is_multiple_of(2) {
        return Err(ModelError::InvalidAttentionDim(l));
    }
    Ok(())
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    hidden: Matrix,
    hidden_mask: Option<Vec<f64>>,
    hidden_dropped: Matrix,
    gate_tanh: Matrix,
    gate_sigmoid: Matrix,
    gate_mask: Option<Vec<f64>>,
    gate_dropped: Matrix,
    embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BagForwardResult {
    pub logits: [f64; 2],
    pub attention: Vec<f64>,
    pub instance_logits: Option<Vec<[f64; 2]>>,
    cache: Option<ForwardCache>,
}

impl BagForwardResult {
    pub fn probabilities(&self) -> [f64; 2] {
        let p = softmax(&self.logits);
        [p[0], p[1]]
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }
}

/// Loss value plus gradients for every parameter.
#[derive(Debug, Clone)]
pub struct BagLoss {
    pub loss: f64,
    pub grads: MilModelParams,
}

/// Gated-attention forward pass. Dropout masks are drawn from `rng` only in
/// training mode.
pub fn forward_bag<R: Rng + ?Sized>(
    bag: &Matrix,
    params: &MilModelParams,
    dropout: DropoutSpec,
    rng: &mut R,
) -> Result<BagForwardResult, ModelError> {
    let n = bag.rows();
    if n == 0 {
        return Err(ModelError::EmptyBag);
    }
    if bag.cols() != params.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: params.input_dim(),
            got: bag.cols(),
        });
    }

    let hidden = tanh(&params.projection.forward(bag)?);
    let hidden_mask = dropout.sample_mask(hidden.data().len(), rng);
    let hidden_dropped = apply_mask(&hidden, hidden_mask.as_deref());

    let gate_tanh = tanh(&params.attention_v.forward(bag)?);
    let gate_sigmoid = sigmoid(&params.attention_u.forward(bag)?);
    let gate = gate_tanh.hadamard(&gate_sigmoid)?;
    let gate_mask = dropout.sample_mask(gate.data().len(), rng);
    let gate_dropped = apply_mask(&gate, gate_mask.as_deref());

    let scores: Vec<f64> = (0..n)
        .map(|k| dot(gate_dropped.row(k), &params.attention_w))
        .collect();
    let attention = softmax(&scores);

    let h = params.hidden_dim();
    let mut embedding = vec![0.0; h];
    for (k, &a) in attention.iter().enumerate() {
        for (z, &v) in embedding.iter_mut().zip(hidden_dropped.row(k)) {
            *z += a * v;
        }
    }
    let out = params.classifier.forward(&Matrix::row_vector(&embedding))?;
    let logits = [out.data()[0], out.data()[1]];

    let instance_logits = match &params.instance_classifier {
        Some(ic) => {
            let il = ic.forward(&hidden_dropped)?;
            Some((0..n).map(|k| [il.get(k, 0), il.get(k, 1)]).collect())
        }
        None => None,
    };

    Ok(BagForwardResult {
        logits,
        attention,
        instance_logits,
        cache: Some(ForwardCache {
            input: bag.clone(),
            hidden,
            hidden_mask,
            hidden_dropped,
            gate_tanh,
            gate_sigmoid,
            gate_mask,
            gate_dropped,
            embedding,
        }),
    })
}

/// Deterministic forward pass with dropout disabled.
pub fn forward_inference(
    bag: &Matrix,
    params: &MilModelParams,
) -> Result<BagForwardResult, ModelError> {
    forward_bag(bag, params, DropoutSpec::inference(), &mut NoRng)
}

/// Probability of the "effective" class.
pub fn predict_proba(bag: &Matrix, params: &MilModelParams) -> Result<f64, ModelError> {
    Ok(forward_inference(bag, params)?.probabilities()[EFFECTIVE])
}

/// Mean of member probabilities.
pub fn ensemble_proba(bag: &Matrix, members: &[MilModelParams]) -> Result<f64, ModelError> {
    if members.is_empty() {
        return Err(ModelError::Checkpoint("empty ensemble".into()));
    }
    let mut sum = 0.0;
    for m in members {
        sum += predict_proba(bag, m)?;
    }
    Ok(sum / members.len() as f64)
}

/// Bag-level cross-entropy and its gradients.
pub fn backward_bag(
    result: &BagForwardResult,
    params: &MilModelParams,
    label: usize,
) -> Result<BagLoss, ModelError> {
    weighted_bag_loss(result, params, label, 1.0)
}

/// Bag-level cross-entropy scaled by `weight` (class weighting).
pub fn weighted_bag_loss(
    result: &BagForwardResult,
    params: &MilModelParams,
    label: usize,
    weight: f64,
) -> Result<BagLoss, ModelError> {
    let ce = cross_entropy(&result.logits, label)?;
    let dlogits = [ce.grad[0] * weight, ce.grad[1] * weight];
    let grads = backprop(result, params, dlogits, None)?;
    Ok(BagLoss {
        loss: ce.loss * weight,
        grads,
    })
}

/// Indices of the `b` highest- and `b` lowest-attention instances. Ties are
/// ordered by instance index.
pub fn select_cluster_instances(attention: &[f64], b: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..attention.len()).collect();
    order.sort_by(|&i, &j| attention[j].total_cmp(&attention[i]).then(i.cmp(&j)));
    let b = b.min(attention.len() / 2);
    let top = order[..b].to_vec();
    let bottom = order[order.len() - b..].to_vec();
    (top, bottom)
}

/// CLAM objective: `(1-λ)·bag CE + λ·mean instance CE` over the selected
/// instances, where top-attention instances take the bag label and
/// bottom-attention instances the opposite one.
pub fn clam_loss(
    result: &BagForwardResult,
    params: &MilModelParams,
    label: usize,
    cfg: &ClamConfig,
) -> Result<BagLoss, ModelError> {
    weighted_clam_loss(result, params, label, cfg, 1.0)
}

pub fn weighted_clam_loss(
    result: &BagForwardResult,
    params: &MilModelParams,
    label: usize,
    cfg: &ClamConfig,
    weight: f64,
) -> Result<BagLoss, ModelError> {
    cfg.validate()?;
    if label >= NUM_CLASSES {
        return Err(NnError::InvalidLabel {
            label,
            classes: NUM_CLASSES,
        }
        .into());
    }
    let instance_logits = result
        .instance_logits
        .as_ref()
        .ok_or(ModelError::NoInstanceClassifier)?;
    if params.instance_classifier.is_none() {
        return Err(ModelError::NoInstanceClassifier);
    }
    let n = result.attention.len();
    if n < 2 {
        return Err(ModelError::BagTooSmall(n));
    }
    let lambda = cfg.instance_loss_weight;
    let b = cfg.effective_b(n);
    let (top, bottom) = select_cluster_instances(&result.attention, b);

    let bag_ce = cross_entropy(&result.logits, label)?;
    let bag_scale = (1.0 - lambda) * weight;
    let dlogits = [bag_ce.grad[0] * bag_scale, bag_ce.grad[1] * bag_scale];

    let selected = 2 * b;
    let inst_scale = lambda * weight / selected as f64;
    let mut inst_loss = 0.0;
    let mut inst_grads = Vec::with_capacity(selected);
    for (idx, pseudo) in top
        .iter()
        .map(|&k| (k, label))
        .chain(bottom.iter().map(|&k| (k, 1 - label)))
    {
        let ce = cross_entropy(&instance_logits[idx], pseudo)?;
        inst_loss += ce.loss;
        inst_grads.push((idx, [ce.grad[0] * inst_scale, ce.grad[1] * inst_scale]));
    }
    inst_loss /= selected as f64;

    let grads = backprop(result, params, dlogits, Some(&inst_grads))?;
    Ok(BagLoss {
        loss: weight * ((1.0 - lambda) * bag_ce.loss + lambda * inst_loss),
        grads,
    })
}

fn backprop(
    result: &BagForwardResult,
    params: &MilModelParams,
    dlogits: [f64; 2],
    instance_grads: Option<&[(usize, [f64; 2])]>,
) -> Result<MilModelParams, ModelError> {
    let cache = result.cache.as_ref().ok_or(ModelError::MissingCache)?;
    let n = result.attention.len();
    let h = params.hidden_dim();
    let l = params.attention_dim();
    let mut grads = params.zeros_like();

    // classifier
    let cls = params.classifier.backward(
        &Matrix::row_vector(&cache.embedding),
        &Matrix::row_vector(&dlogits),
    )?;
    grads.classifier.weight = cls.weight;
    grads.classifier.bias = cls.bias;
    let dz = cls.input.into_data();

    // pooling: z = Σ a_k h̃_k
    let mut d_hidden_dropped = Matrix::zeros(n, h);
    let mut d_attention = vec![0.0; n];
    for k in 0..n {
        let a = result.attention[k];
        for (dst, &g) in d_hidden_dropped.row_mut(k).iter_mut().zip(&dz) {
            *dst = a * g;
        }
        d_attention[k] = dot(cache.hidden_dropped.row(k), &dz);
    }

    if let Some(inst) = instance_grads {
        let ic = params
            .instance_classifier
            .as_ref()
            .ok_or(ModelError::NoInstanceClassifier)?;
        let gic = grads
            .instance_classifier
            .as_mut()
            .ok_or(ModelError::NoInstanceClassifier)?;
        for &(k, d) in inst {
            let hk = cache.hidden_dropped.row(k);
            for (j, &hv) in hk.iter().enumerate() {
                gic.weight.set(j, 0, gic.weight.get(j, 0) + hv * d[0]);
                gic.weight.set(j, 1, gic.weight.get(j, 1) + hv * d[1]);
            }
            gic.bias[0] += d[0];
            gic.bias[1] += d[1];
            for (j, dst) in d_hidden_dropped.row_mut(k).iter_mut().enumerate() {
                *dst += ic.weight.get(j, 0) * d[0] + ic.weight.get(j, 1) * d[1];
            }
        }
    }

    // attention softmax and scoring vector
    let d_scores = softmax_backward(&result.attention, &d_attention);
    let mut d_gate_dropped = Matrix::zeros(n, l);
    for k in 0..n {
        let ds = d_scores[k];
        for (dw, &g) in grads.attention_w.iter_mut().zip(cache.gate_dropped.row(k)) {
            *dw += ds * g;
        }
        for (dst, &w) in d_gate_dropped
            .row_mut(k)
            .iter_mut()
            .zip(&params.attention_w)
        {
            *dst = ds * w;
        }
    }
    let d_gate = apply_mask(&d_gate_dropped, cache.gate_mask.as_deref());
    let d_tanh_branch = d_gate.hadamard(&cache.gate_sigmoid)?;
    let d_sigmoid_branch = d_gate.hadamard(&cache.gate_tanh)?;
    let d_pre_v = tanh_backward(&cache.gate_tanh, &d_tanh_branch);
    let d_pre_u = sigmoid_backward(&cache.gate_sigmoid, &d_sigmoid_branch);
    let gv = params.attention_v.backward(&cache.input, &d_pre_v)?;
    grads.attention_v.weight = gv.weight;
    grads.attention_v.bias = gv.bias;
    let gu = params.attention_u.backward(&cache.input, &d_pre_u)?;
    grads.attention_u.weight = gu.weight;
    grads.attention_u.bias = gu.bias;

    // projection
    let d_hidden = apply_mask(&d_hidden_dropped, cache.hidden_mask.as_deref());
    let d_pre_p = tanh_backward(&cache.hidden, &d_hidden);
    let gp = params.projection.backward(&cache.input, &d_pre_p)?;
    grads.projection.weight = gp.weight;
    grads.projection.bias = gp.bias;

    Ok(grads)
}

fn apply_mask(m: &Matrix, mask: Option<&[f64]>) -> Matrix {
    match mask {
        None => m.clone(),
        Some(mask) => {
            let data = m.data().iter().zip(mask).map(|(v, k)| v * k).collect();
            Matrix::new(m.rows(), m.cols(), data).expect("mask matches matrix")
        }
    }
}

/// Gradient accumulation helper for callers that sum several losses.
pub fn accumulate(into: &mut MilModelParams, grads: &MilModelParams) {
    into.add_assign(grads);
}

// Inference-mode dropout never draws; this satisfies the `Rng` bound without
// seeding a real generator.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("inference forward does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("inference forward does not sample")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("inference forward does not sample")
    }
}

#[cfg(test)]
mod tests;
