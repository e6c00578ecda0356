//! Policy and frame-relevance scorers with reference logistic heads.
//!
//! Two heads share one model shape: a `semantic` head that picks the
//! allocation policy for a whole query (softmax over Global/Fragment) and an
//! `image` head that scores one frame's relevance (sigmoid). Features are
//! abstract d-dimensional vectors; whatever produced them is outside this
//! crate. The score-file format written here is also the interchange format
//! the allocator consumes, so an external scorer can replace these heads
//! without code changes.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clamped into `[PROB_FLOOR, 1 - PROB_FLOOR]` before any
/// logarithm; the losses are undefined at exactly 0 or 1.
pub const PROB_FLOOR: f64 = 1e-12;

/// Central-difference step used by [`numeric_gradient`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("feature dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation requires a {expected:?} head, model has {got:?}")]
    WrongHead { expected: HeadKind, got: HeadKind },
    #[error("input is empty")]
    EmptyInput,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {0} is outside the head's class set")]
    InvalidLabel(u8),
    #[error("invalid training config: {0}")]
    InvalidTrainingConfig(String),
    #[error("model parameters must be finite")]
    NonFiniteParameters,
    #[error("invalid score record: {0}")]
    InvalidScore(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed model or score file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Abstract feature vector; the run fixes one dimension for all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Which head a model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Two-class policy head: class 0 = Global, class 1 = Fragment.
    Semantic,
    /// Binary frame-relevance head.
    Image,
}

impl HeadKind {
    /// Number of output rows in the weight matrix.
    pub fn classes(self) -> usize {
        match self {
            HeadKind::Semantic => 2,
            HeadKind::Image => 1,
        }
    }
}

/// Budget-allocation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Uniform coverage over all frames.
    Global,
    /// Relevance-driven non-uniform allocation.
    Fragment,
}

/// Semantic-head output: both class probabilities plus the argmax decision.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub p_global: f64,
    pub p_fragment: f64,
    pub decision: Policy,
}

/// Image-head output for one frame. `y_hat` is 1 iff `p > 0.5`, strictly:
/// a frame at exactly 0.5 is not relevant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_index: usize,
    pub p: f64,
    pub y_hat: u8,
}

impl FrameScore {
    /// Score with the decision derived from the probability.
    pub fn from_probability(frame_index: usize, p: f64) -> Self {
        Self {
            frame_index,
            p,
            y_hat: u8::from(p > 0.5),
        }
    }

    pub fn is_relevant(&self) -> bool {
        self.y_hat == 1
    }
}

/// Gradient-descent settings. `batch_size = 0` means full batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_s: f64,
    pub lambda_v: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 100,
            batch_size: 0,
            lambda_s: 0.01,
            lambda_v: 0.01,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    fn validate(&self) -> Result<(), RouterError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(RouterError::InvalidTrainingConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.lambda_s < 0.0 || self.lambda_v < 0.0 {
            return Err(RouterError::InvalidTrainingConfig(
                "lambda_s and lambda_v must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Linear head: `classes x dim` weights (row-major) plus one bias per class.
///
/// Serialized form is the model file: `head_kind`, `dim`, `weights`
/// (row-major), `bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterModel {
    pub head_kind: HeadKind,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl RouterModel {
    /// Zero-initialized model; fine for these convex heads.
    pub fn zeros(head_kind: HeadKind, dim: usize) -> Self {
        let classes = head_kind.classes();
        Self {
            head_kind,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn new(
        head_kind: HeadKind,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, RouterError> {
        let model = Self {
            head_kind,
            dim,
            weights,
            bias,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), RouterError> {
        let classes = self.head_kind.classes();
        if self.weights.len() != classes * self.dim || self.bias.len() != classes {
            return Err(RouterError::DimensionMismatch {
                expected: classes * self.dim,
                got: self.weights.len(),
            });
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(RouterError::NonFiniteParameters);
        }
        Ok(())
    }

    /// One logit per class.
    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>, RouterError> {
        if x.dim() != self.dim {
            return Err(RouterError::DimensionMismatch {
                expected: self.dim,
                got: x.dim(),
            });
        }
        let classes = self.head_kind.classes();
        let mut out = Vec::with_capacity(classes);
        for c in 0..classes {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            let z: f64 = row.iter().zip(&x.0).map(|(w, v)| w * v).sum();
            out.push(z + self.bias[c]);
        }
        Ok(out)
    }

    fn expect_head(&self, expected: HeadKind) -> Result<(), RouterError> {
        if self.head_kind != expected {
            return Err(RouterError::WrongHead {
                expected,
                got: self.head_kind,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), RouterError> {
        Ok(fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Self, RouterError> {
        let model: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Softmax over the two policy logits. Decision is the argmax; a tie goes
/// to Global, the coverage-preserving default.
pub fn semantic_forward(
    model: &RouterModel,
    query: &FeatureVector,
) -> Result<PolicyDecision, RouterError> {
    model.expect_head(HeadKind::Semantic)?;
    let z = model.logits(query)?;
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let p_global = e0 / (e0 + e1);
    let p_fragment = e1 / (e0 + e1);
    let decision = if p_fragment > p_global {
        Policy::Fragment
    } else {
        Policy::Global
    };
    Ok(PolicyDecision {
        p_global,
        p_fragment,
        decision,
    })
}

/// Sigmoid relevance probability with the strict `p > 0.5` indicator.
pub fn image_forward(
    model: &RouterModel,
    frame_index: usize,
    frame: &FeatureVector,
) -> Result<FrameScore, RouterError> {
    model.expect_head(HeadKind::Image)?;
    let z = model.logits(frame)?;
    Ok(FrameScore::from_probability(frame_index, sigmoid(z[0])))
}

/// Mean binary cross-entropy over the frame scores.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64, RouterError> {
    if probs.is_empty() {
        return Err(RouterError::EmptyInput);
    }
    if probs.len() != labels.len() {
        return Err(RouterError::LengthMismatch {
            scores: probs.len(),
            labels: labels.len(),
        });
    }
    let mut sum = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if y > 1 {
            return Err(RouterError::InvalidLabel(y));
        }
        let p = clamp_prob(p);
        sum += if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    }
    Ok(sum / probs.len() as f64)
}

/// Cross-entropy of the policy decision against a class label.
pub fn ce_loss(decision: &PolicyDecision, label: u8) -> Result<f64, RouterError> {
    let p = match label {
        0 => decision.p_global,
        1 => decision.p_fragment,
        other => return Err(RouterError::InvalidLabel(other)),
    };
    Ok(-clamp_prob(p).ln())
}

/// Total training objective: `l_lm + lambda_s * l_sem + lambda_v * l_img`.
/// The language-model loss is an externally supplied scalar. The weighted
/// penalty is summed before the base loss so small penalties are not lost
/// against a large base term.
pub fn joint_loss(l_lm: f64, l_sem: f64, l_img: f64, cfg: &TrainingConfig) -> f64 {
    l_lm + (cfg.lambda_s * l_sem + cfg.lambda_v * l_img)
}

/// Labeled example for one head; labels live in the head's class set.
pub type TrainExample = (FeatureVector, u8);

/// Parameter-shaped gradient (or any parameter-shaped quantity).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_batch(model: &RouterModel, batch: &[TrainExample]) -> Result<(), RouterError> {
    if batch.is_empty() {
        return Err(RouterError::EmptyInput);
    }
    let classes = model.head_kind.classes() as u8;
    let max_label = if classes == 1 { 1 } else { classes - 1 };
    for (x, y) in batch {
        if x.dim() != model.dim {
            return Err(RouterError::DimensionMismatch {
                expected: model.dim,
                got: x.dim(),
            });
        }
        if *y > max_label {
            return Err(RouterError::InvalidLabel(*y));
        }
    }
    Ok(())
}

/// Mean loss of the model's own objective over a batch: BCE for the image
/// head, policy cross-entropy for the semantic head.
pub fn batch_loss(model: &RouterModel, batch: &[TrainExample]) -> Result<f64, RouterError> {
    check_batch(model, batch)?;
    let mut sum = 0.0;
    match model.head_kind {
        HeadKind::Image => {
            for (x, y) in batch {
                let p = clamp_prob(sigmoid(model.logits(x)?[0]));
                sum += if *y == 1 { -p.ln() } else { -(1.0 - p).ln() };
            }
        }
        HeadKind::Semantic => {
            for (x, y) in batch {
                let d = semantic_forward(model, x)?;
                sum += ce_loss(&d, *y)?;
            }
        }
    }
    Ok(sum / batch.len() as f64)
}

/// Analytic gradient of [`batch_loss`]. Where the probability saturates past
/// the clamp the loss is locally constant, so the contribution is zero.
pub fn analytic_gradient(
    model: &RouterModel,
    batch: &[TrainExample],
) -> Result<Gradient, RouterError> {
    check_batch(model, batch)?;
    let dim = model.dim;
    let classes = model.head_kind.classes();
    let mut gw = vec![0.0; classes * dim];
    let mut gb = vec![0.0; classes];
    let inv = 1.0 / batch.len() as f64;

    for (x, y) in batch {
        match model.head_kind {
            HeadKind::Image => {
                let p = sigmoid(model.logits(x)?[0]);
                if p <= PROB_FLOOR || p >= 1.0 - PROB_FLOOR {
                    continue;
                }
                let dz = (p - f64::from(*y)) * inv;
                for (j, v) in x.0.iter().enumerate() {
                    gw[j] += dz * v;
                }
                gb[0] += dz;
            }
            HeadKind::Semantic => {
                let d = semantic_forward(model, x)?;
                let probs = [d.p_global, d.p_fragment];
                let p_label = probs[*y as usize];
                if p_label <= PROB_FLOOR || p_label >= 1.0 - PROB_FLOOR {
                    continue;
                }
                for c in 0..2 {
                    let target = if c == *y as usize { 1.0 } else { 0.0 };
                    let dz = (probs[c] - target) * inv;
                    for (j, v) in x.0.iter().enumerate() {
                        gw[c * dim + j] += dz * v;
                    }
                    gb[c] += dz;
                }
            }
        }
    }
    Ok(Gradient {
        weights: gw,
        bias: gb,
    })
}

/// Central-difference gradient of [`batch_loss`], one parameter at a time.
pub fn numeric_gradient(
    model: &RouterModel,
    batch: &[TrainExample],
    step: f64,
) -> Result<Gradient, RouterError> {
    check_batch(model, batch)?;
    let mut probe = model.clone();
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = vec![0.0; model.bias.len()];

    for (i, g) in gw.iter_mut().enumerate() {
        let orig = model.weights[i];
        probe.weights[i] = orig + step;
        let plus = batch_loss(&probe, batch)?;
        probe.weights[i] = orig - step;
        let minus = batch_loss(&probe, batch)?;
        probe.weights[i] = orig;
        *g = (plus - minus) / (2.0 * step);
    }
    for (i, g) in gb.iter_mut().enumerate() {
        let orig = model.bias[i];
        probe.bias[i] = orig + step;
        let plus = batch_loss(&probe, batch)?;
        probe.bias[i] = orig - step;
        let minus = batch_loss(&probe, batch)?;
        probe.bias[i] = orig;
        *g = (plus - minus) / (2.0 * step);
    }
    Ok(Gradient {
        weights: gw,
        bias: gb,
    })
}

/// Worst per-parameter discrepancy, relative with a unit floor so that
/// near-zero gradients are compared absolutely.
pub fn max_relative_error(a: &Gradient, b: &Gradient) -> f64 {
    a.weights
        .iter()
        .chain(&a.bias)
        .zip(b.weights.iter().chain(&b.bias))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Compares the analytic gradient against central finite differences and
/// returns the max relative error over all parameters.
pub fn grad_check(model: &RouterModel, batch: &[TrainExample]) -> Result<f64, RouterError> {
    let analytic = analytic_gradient(model, batch)?;
    let numeric = numeric_gradient(model, batch, FD_STEP)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Gradient descent on the head's own loss. Mini-batched when
/// `batch_size > 0`, with seed-driven shuffling; deterministic given the
/// seed. Zero epochs returns the model unchanged.
pub fn train_router(
    mut model: RouterModel,
    data: &[TrainExample],
    cfg: &TrainingConfig,
) -> Result<RouterModel, RouterError> {
    cfg.validate()?;
    check_batch(&model, data)?;

    let batch_size = if cfg.batch_size == 0 || cfg.batch_size > data.len() {
        data.len()
    } else {
        cfg.batch_size
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch: Vec<TrainExample> = Vec::with_capacity(batch_size);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let grad = analytic_gradient(&model, &batch)?;
            for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                *b -= cfg.learning_rate * g;
            }
        }
    }
    model.validate()?;
    Ok(model)
}

/// Fraction of examples the head classifies correctly.
pub fn accuracy(model: &RouterModel, data: &[TrainExample]) -> Result<f64, RouterError> {
    check_batch(model, data)?;
    let mut hits = 0usize;
    for (x, y) in data {
        let predicted = match model.head_kind {
            HeadKind::Image => image_forward(model, 0, x)?.y_hat,
            HeadKind::Semantic => match semantic_forward(model, x)?.decision {
                Policy::Global => 0,
                Policy::Fragment => 1,
            },
        };
        hits += usize::from(predicted == *y);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Writes one JSON record per frame: `{"frame_index":..,"p":..,"y_hat":..}`.
pub fn write_scores<W: Write>(mut w: W, scores: &[FrameScore]) -> Result<(), RouterError> {
    for s in scores {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a score file (one JSON record per line). Records are kept as
/// written — external scorers may threshold differently than the reference
/// head — but probabilities must be in `[0,1]` and decisions in `{0,1}`.
pub fn read_scores<R: BufRead>(r: R) -> Result<Vec<FrameScore>, RouterError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let score: FrameScore = serde_json::from_str(&line)?;
        if !(0.0..=1.0).contains(&score.p) || !score.p.is_finite() {
            return Err(RouterError::InvalidScore(format!(
                "frame {}: probability {} outside [0,1]",
                score.frame_index, score.p
            )));
        }
        if score.y_hat > 1 {
            return Err(RouterError::InvalidScore(format!(
                "frame {}: y_hat {} not in {{0,1}}",
                score.frame_index, score.y_hat
            )));
        }
        out.push(score);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector(values.to_vec())
    }

    /// Semantic model whose logits are exactly the two inputs.
    fn passthrough_semantic() -> RouterModel {
        RouterModel::new(
            HeadKind::Semantic,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    /// Image model whose logit is exactly the single input.
    fn passthrough_image() -> RouterModel {
        RouterModel::new(HeadKind::Image, 1, vec![1.0], vec![0.0]).unwrap()
    }

    #[test]
    fn semantic_zero_model_ties_to_global() {
        let model = RouterModel::zeros(HeadKind::Semantic, 3);
        let d = semantic_forward(&model, &fv(&[0.3, -0.7, 2.0])).unwrap();
        assert_eq!(d.p_global, 0.5);
        assert_eq!(d.p_fragment, 0.5);
        assert_eq!(d.decision, Policy::Global);
    }

    #[test]
    fn semantic_softmax_matches_closed_form() {
        let d = semantic_forward(&passthrough_semantic(), &fv(&[2.0, 0.0])).unwrap();
        assert!((d.p_global - 0.8808).abs() < 1e-4);
        assert!((d.p_fragment - 0.1192).abs() < 1e-4);
        assert_eq!(d.decision, Policy::Global);
    }

    #[test]
    fn semantic_argmax_picks_fragment() {
        let d = semantic_forward(&passthrough_semantic(), &fv(&[0.0, 3.0])).unwrap();
        assert_eq!(d.decision, Policy::Fragment);
    }

    #[test]
    fn semantic_rejects_dimension_mismatch() {
        let err = semantic_forward(&passthrough_semantic(), &fv(&[1.0])).unwrap_err();
        assert!(matches!(err, RouterError::DimensionMismatch { .. }));
    }

    #[test]
    fn image_threshold_is_strict_at_half() {
        let model = passthrough_image();
        let s = image_forward(&model, 0, &fv(&[0.0])).unwrap();
        assert_eq!(s.p, 0.5);
        assert_eq!(s.y_hat, 0);
    }

    #[test]
    fn image_sigmoid_saturates() {
        let model = passthrough_image();
        let hi = image_forward(&model, 1, &fv(&[10.0])).unwrap();
        assert!(hi.p >= 0.9999);
        assert_eq!(hi.y_hat, 1);
        let lo = image_forward(&model, 2, &fv(&[-10.0])).unwrap();
        assert_eq!(lo.y_hat, 0);
    }

    #[test]
    fn bce_uniform_half_is_ln2() {
        let loss = bce_loss(&[0.5, 0.5], &[1, 0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let loss = bce_loss(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap();
        assert!(loss <= 1e-10);
    }

    #[test]
    fn bce_single_example_value() {
        let loss = bce_loss(&[0.9], &[1]).unwrap();
        assert!((loss - 0.105361).abs() < 1e-5);
    }

    #[test]
    fn bce_rejects_empty() {
        assert!(matches!(bce_loss(&[], &[]), Err(RouterError::EmptyInput)));
    }

    #[test]
    fn ce_values() {
        let half = PolicyDecision {
            p_global: 0.5,
            p_fragment: 0.5,
            decision: Policy::Global,
        };
        assert!((ce_loss(&half, 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let confident = PolicyDecision {
            p_global: 1.0 - 1e-12,
            p_fragment: 1e-12,
            decision: Policy::Global,
        };
        assert!(ce_loss(&confident, 0).unwrap() < 1e-11);

        let skewed = PolicyDecision {
            p_global: 0.25,
            p_fragment: 0.75,
            decision: Policy::Fragment,
        };
        assert!((ce_loss(&skewed, 1).unwrap() - 0.287682).abs() < 1e-6);
    }

    #[test]
    fn joint_loss_weighted_sums() {
        let cfg = TrainingConfig::default();
        assert_eq!(joint_loss(1.0, 0.5, 0.5, &cfg), 1.01);
        assert_eq!(joint_loss(0.0, 0.0, 0.0, &cfg), 0.0);

        let custom = TrainingConfig {
            lambda_s: 0.1,
            lambda_v: 0.2,
            ..TrainingConfig::default()
        };
        assert_eq!(joint_loss(2.0, 1.0, 3.0, &custom), 2.7);
    }

    /// Independent separability certificate: the classic perceptron loop
    /// converges to zero errors iff the data is linearly separable.
    fn perceptron_separates(data: &[TrainExample], dim: usize, max_passes: usize) -> bool {
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        for _ in 0..max_passes {
            let mut errors = 0;
            for (x, y) in data {
                let z: f64 = w.iter().zip(&x.0).map(|(a, v)| a * v).sum::<f64>() + b;
                let target = if *y == 1 { 1.0 } else { -1.0 };
                if z * target <= 0.0 {
                    for (wj, v) in w.iter_mut().zip(&x.0) {
                        *wj += target * v;
                    }
                    b += target;
                    errors += 1;
                }
            }
            if errors == 0 {
                return true;
            }
        }
        false
    }

    /// Two blobs separated along the first axis with margin >= 1.
    fn separable_blobs(count: usize, seed: u64) -> Vec<TrainExample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let y = (i % 2) as u8;
                let center = if y == 1 { 1.5 } else { -1.5 };
                let x = vec![
                    center + rng.random_range(-0.5..0.5),
                    rng.random_range(-1.0..1.0),
                ];
                (FeatureVector(x), y)
            })
            .collect()
    }

    #[test]
    fn train_image_head_on_separable_data() {
        let data = separable_blobs(200, 9);
        assert!(perceptron_separates(&data, 2, 1000));

        let cfg = TrainingConfig {
            learning_rate: 0.1,
            epochs: 500,
            seed: 1,
            ..TrainingConfig::default()
        };
        let initial = RouterModel::zeros(HeadKind::Image, 2);
        let initial_loss = batch_loss(&initial, &data).unwrap();
        let trained = train_router(initial, &data, &cfg).unwrap();
        assert!(batch_loss(&trained, &data).unwrap() <= initial_loss);
        assert!(accuracy(&trained, &data).unwrap() >= 0.99);
    }

    #[test]
    fn train_semantic_head_on_separable_data() {
        let data = separable_blobs(200, 10);
        let cfg = TrainingConfig {
            learning_rate: 0.1,
            epochs: 500,
            seed: 2,
            ..TrainingConfig::default()
        };
        let trained = train_router(RouterModel::zeros(HeadKind::Semantic, 2), &data, &cfg).unwrap();
        assert!(accuracy(&trained, &data).unwrap() >= 0.99);
    }

    #[test]
    fn train_fits_a_single_example() {
        let data = vec![(fv(&[1.0, 2.0]), 1u8)];
        let cfg = TrainingConfig {
            learning_rate: 0.5,
            epochs: 200,
            seed: 0,
            ..TrainingConfig::default()
        };
        let trained = train_router(RouterModel::zeros(HeadKind::Image, 2), &data, &cfg).unwrap();
        let score = image_forward(&trained, 0, &data[0].0).unwrap();
        assert!(score.p > 0.9);
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let model = RouterModel::new(HeadKind::Image, 2, vec![0.3, -0.4], vec![0.1]).unwrap();
        let cfg = TrainingConfig {
            epochs: 0,
            ..TrainingConfig::default()
        };
        let out = train_router(model.clone(), &[(fv(&[1.0, 1.0]), 1)], &cfg).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = separable_blobs(64, 3);
        let cfg = TrainingConfig {
            learning_rate: 0.2,
            epochs: 20,
            batch_size: 16,
            seed: 42,
            ..TrainingConfig::default()
        };
        let a = train_router(RouterModel::zeros(HeadKind::Image, 2), &data, &cfg).unwrap();
        let b = train_router(RouterModel::zeros(HeadKind::Image, 2), &data, &cfg).unwrap();
        assert!(a.weights.iter().zip(&b.weights).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.bias.iter().zip(&b.bias).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    fn random_batch(
        head: HeadKind,
        dim: usize,
        count: usize,
        seed: u64,
    ) -> (RouterModel, Vec<TrainExample>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = head.classes();
        let weights: Vec<f64> = (0..classes * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..classes).map(|_| rng.random_range(-0.5..0.5)).collect();
        let model = RouterModel::new(head, dim, weights, bias).unwrap();
        let batch = (0..count)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (FeatureVector(x), rng.random_range(0..2) as u8)
            })
            .collect();
        (model, batch)
    }

    #[test]
    fn grad_check_passes_on_random_instances() {
        for seed in 0..5 {
            let (model, batch) = random_batch(HeadKind::Image, 4, 32, seed);
            assert!(grad_check(&model, &batch).unwrap() < 1e-5);
            let (model, batch) = random_batch(HeadKind::Semantic, 4, 32, seed + 100);
            assert!(grad_check(&model, &batch).unwrap() < 1e-5);
        }
    }

    #[test]
    fn grad_check_zero_gradient_when_saturated() {
        // Perfectly fit single example: the probability sits past the clamp,
        // so both gradients vanish.
        let model = RouterModel::new(HeadKind::Image, 1, vec![50.0], vec![0.0]).unwrap();
        let batch = vec![(fv(&[1.0]), 1u8)];
        let analytic = analytic_gradient(&model, &batch).unwrap();
        let numeric = numeric_gradient(&model, &batch, FD_STEP).unwrap();
        assert!(analytic.weights[0].abs() < 1e-12 && analytic.bias[0].abs() < 1e-12);
        assert!(numeric.weights[0].abs() < 1e-9 && numeric.bias[0].abs() < 1e-9);
    }

    #[test]
    fn grad_check_detects_corrupted_gradient() {
        let (model, batch) = random_batch(HeadKind::Image, 4, 32, 7);
        let mut analytic = analytic_gradient(&model, &batch).unwrap();
        analytic.weights[0] += 0.1;
        let numeric = numeric_gradient(&model, &batch, FD_STEP).unwrap();
        assert!(max_relative_error(&analytic, &numeric) > 1e-2);
    }

    #[test]
    fn semantic_probabilities_sum_to_one() {
        let model = passthrough_semantic();
        for logits in [[0.0, 0.0], [700.0, -700.0], [-3.5, 12.0], [1e-9, -1e-9]] {
            let d = semantic_forward(&model, &fv(&logits)).unwrap();
            assert!((d.p_global + d.p_fragment - 1.0).abs() < 1e-9, "{logits:?}");
        }
    }

    #[test]
    fn losses_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            use rand::Rng;
            let p: f64 = rng.random_range(0.0..=1.0);
            let y = rng.random_range(0..2) as u8;
            assert!(bce_loss(&[p], &[y]).unwrap() >= 0.0);
            let d = PolicyDecision {
                p_global: p,
                p_fragment: 1.0 - p,
                decision: Policy::Global,
            };
            assert!(ce_loss(&d, y).unwrap() >= 0.0);
        }
    }

    #[test]
    fn semantic_probabilities_shift_invariant() {
        let model = passthrough_semantic();
        let a = semantic_forward(&model, &fv(&[1.2, -0.3])).unwrap();
        let b = semantic_forward(&model, &fv(&[1.2 + 5.0, -0.3 + 5.0])).unwrap();
        assert!((a.p_global - b.p_global).abs() < 1e-9);
        assert!((a.p_fragment - b.p_fragment).abs() < 1e-9);
        assert_eq!(a.decision, b.decision);
    }

    #[test]
    fn score_file_round_trip_and_validation() {
        let scores = vec![
            FrameScore::from_probability(0, 0.9),
            FrameScore::from_probability(1, 0.2),
        ];
        let mut buf = Vec::new();
        write_scores(&mut buf, &scores).unwrap();
        let back = read_scores(buf.as_slice()).unwrap();
        assert_eq!(back, scores);

        let bad = b"{\"frame_index\":0,\"p\":1.5,\"y_hat\":1}\n";
        assert!(matches!(
            read_scores(&bad[..]),
            Err(RouterError::InvalidScore(_))
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let model = RouterModel::new(
            HeadKind::Semantic,
            2,
            vec![0.1, 0.2, 0.3, 0.4],
            vec![-0.1, 0.1],
        )
        .unwrap();
        let json = serde_json::to_string(&model).unwrap();
        assert!(json.contains("\"head_kind\":\"semantic\""));
        let back: RouterModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
