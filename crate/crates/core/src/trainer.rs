//! Contrastive fine-tuning of the linear adapter with the InfoNCE objective.
//!
//! The base encoder is frozen: every text is encoded once, and only the
//! adapter's `W` and `b` receive gradients. Similarities inside the loss are
//! cosines of the affine outputs `z = W x + b`; since cosine ignores scale, the
//! adapter's optional output normalization does not enter the objective.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, AdapterEncoder, AdapterWeights, EmbeddingError, EmbeddingVector};
use crate::evaluation::{spearman, StsPair};
use crate::hardneg::TrainingSample;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("inconsistent batch: {0}")]
    Shape(String),
    #[error("no training samples")]
    NoSamples,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Which hard negatives enter each anchor's softmax denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScope {
    /// Every hard negative in the batch.
    #[default]
    InBatch,
    /// Only the anchor's own hard negatives.
    OwnOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub max_epochs: usize,
    /// Hard negatives used per sample; extra ones in a sample are ignored.
    pub hard_negatives: usize,
    pub seed: u64,
    pub negative_scope: NegativeScope,
}

impl Default for TrainerConfig {
    /// Desk-scale defaults for adapter training.
    fn default() -> Self {
        TrainerConfig {
            batch_size: 24,
            temperature: 0.05,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            warmup_fraction: 0.1,
            max_epochs: 2,
            hard_negatives: 1,
            seed: 42,
            negative_scope: NegativeScope::InBatch,
        }
    }
}

impl TrainerConfig {
    /// The full-model fine-tuning learning rate, kept for parity runs.
    pub const PARITY_LEARNING_RATE: f64 = 1e-8;

    pub fn parity() -> Self {
        TrainerConfig {
            learning_rate: Self::PARITY_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hard_negatives == 0 && self.batch_size < 2 {
            return bad("batch_size must be at least 2 without hard negatives");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        Ok(())
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        self.max_epochs * samples.div_ceil(self.batch_size)
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_fraction * total_steps as f64).round() as usize
    }

    /// Linear ramp from 0 over the warmup steps, constant afterwards.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = self.warmup_steps(total_steps);
        if step >= warmup {
            self.learning_rate
        } else {
            self.learning_rate * step as f64 / warmup as f64
        }
    }
}

/// One mini-batch: row `i` of each field belongs to sample `i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub anchors: Vec<EmbeddingVector>,
    pub positives: Vec<EmbeddingVector>,
    pub hard_negatives: Vec<Vec<EmbeddingVector>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    fn check(&self) -> Result<usize> {
        let n = self.anchors.len();
        if n == 0 {
            return Err(TrainError::Shape("empty batch".into()));
        }
        if self.positives.len() != n || self.hard_negatives.len() != n {
            return Err(TrainError::Shape(format!(
                "{n} anchors, {} positives, {} negative lists",
                self.positives.len(),
                self.hard_negatives.len()
            )));
        }
        let dim = self.anchors[0].dimension();
        if self.slots().any(|v| v.len() != dim) {
            return Err(TrainError::Shape("mixed dimensions".into()));
        }
        Ok(dim)
    }

    /// Anchors, then positives, then every hard negative in sample order.
    fn slots(&self) -> impl Iterator<Item = &[f64]> {
        self.anchors
            .iter()
            .chain(&self.positives)
            .chain(self.hard_negatives.iter().flatten())
            .map(EmbeddingVector::values)
    }

    /// Candidate slot indices per anchor; the positive of anchor `i` sits at
    /// position `i` of its row.
    fn candidates(&self, scope: NegativeScope) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut offsets = Vec::with_capacity(n);
        let mut next = 2 * n;
        for negs in &self.hard_negatives {
            offsets.push(next..next + negs.len());
            next += negs.len();
        }
        (0..n)
            .map(|i| {
                let mut row: Vec<usize> = (n..2 * n).collect();
                match scope {
                    NegativeScope::InBatch => row.extend(2 * n..next),
                    NegativeScope::OwnOnly => row.extend(offsets[i].clone()),
                }
                row
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLossReport {
    pub losses: Vec<f64>,
    pub mean: f64,
    /// Cosine similarities per anchor over its candidates: all positives in
    /// batch order, then the hard negatives in scope.
    pub similarities: Vec<Vec<f64>>,
}

/// Gradient of the loss with respect to the logits of one anchor:
/// `softmax(logits) - onehot(target)`.
pub fn softmax_logit_gradient(logits: &[f64], target: usize) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter()
        .enumerate()
        .map(|(j, e)| e / total - f64::from(u8::from(j == target)))
        .collect()
}

/// `-ln softmax(logits)[target]`, shifted by the maximum logit.
fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    total.ln() - (logits[target] - m)
}

struct Forward {
    report: BatchLossReport,
    /// Gradient of the mean loss with respect to each slot vector.
    slot_grads: Option<Vec<Vec<f64>>>,
}

fn forward(
    z: &[Vec<f64>],
    candidates: &[Vec<usize>],
    temperature: f64,
    with_grad: bool,
) -> Result<Forward> {
    let n = candidates.len();
    let norms: Vec<f64> = z.iter().map(|v| dot(v, v).sqrt()).collect();
    if let Some(k) = norms.iter().position(|&r| r == 0.0 || !r.is_finite()) {
        return Err(TrainError::Numeric(format!(
            "degenerate embedding in slot {k}"
        )));
    }
    let mut losses = Vec::with_capacity(n);
    let mut similarities = Vec::with_capacity(n);
    let mut slot_grads = with_grad.then(|| vec![vec![0.0; z[0].len()]; z.len()]);
    for (i, row) in candidates.iter().enumerate() {
        let sims: Vec<f64> = row
            .iter()
            .map(|&c| dot(&z[i], &z[c]) / (norms[i] * norms[c]))
            .collect();
        if sims.iter().any(|s| !s.is_finite()) {
            return Err(TrainError::Numeric(format!(
                "non-finite similarity for anchor {i}"
            )));
        }
        let logits: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
        let loss = cross_entropy(&logits, i);
        if !loss.is_finite() {
            return Err(TrainError::Numeric(format!(
                "non-finite loss for anchor {i}"
            )));
        }
        losses.push(loss);
        if let Some(grads) = slot_grads.as_mut() {
            let dlogits = softmax_logit_gradient(&logits, i);
            for ((&c, &s), dl) in row.iter().zip(&sims).zip(dlogits) {
                // d cos(u, v) / du = v / (|u||v|) - cos(u, v) u / |u|²
                let ds = dl / (temperature * n as f64);
                let (ru, rv) = (norms[i], norms[c]);
                for d in 0..z[i].len() {
                    let gu = ds * (z[c][d] / (ru * rv) - s * z[i][d] / (ru * ru));
                    let gv = ds * (z[i][d] / (ru * rv) - s * z[c][d] / (rv * rv));
                    grads[i][d] += gu;
                    grads[c][d] += gv;
                }
            }
        }
        similarities.push(sims);
    }
    let mean = losses.iter().sum::<f64>() / n as f64;
    Ok(Forward {
        report: BatchLossReport {
            losses,
            mean,
            similarities,
        },
        slot_grads,
    })
}

/// InfoNCE over already-embedded texts with every in-batch hard negative in
/// each denominator.
pub fn infonce_loss(batch: &Batch, temperature: f64) -> Result<BatchLossReport> {
    infonce_loss_scoped(batch, temperature, NegativeScope::InBatch)
}

pub fn infonce_loss_scoped(
    batch: &Batch,
    temperature: f64,
    scope: NegativeScope,
) -> Result<BatchLossReport> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(TrainError::Config("temperature must be positive".into()));
    }
    batch.check()?;
    let z: Vec<Vec<f64>> = batch.slots().map(<[f64]>::to_vec).collect();
    Ok(forward(&z, &batch.candidates(scope), temperature, false)?.report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGradient {
    /// Row-major, same layout as [`AdapterWeights::weights`].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean batch loss and its exact gradient with respect to the adapter, for a
/// batch of frozen base-encoder outputs.
pub fn loss_gradient(
    batch: &Batch,
    params: &AdapterWeights,
    temperature: f64,
    scope: NegativeScope,
) -> Result<(BatchLossReport, AdapterGradient)> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(TrainError::Config("temperature must be positive".into()));
    }
    let dim = batch.check()?;
    if dim != params.n_in {
        return Err(TrainError::Shape(format!(
            "batch dimension {dim}, adapter input {}",
            params.n_in
        )));
    }
    let x: Vec<&[f64]> = batch.slots().collect();
    let z = x
        .iter()
        .map(|v| params.apply(v))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let out = forward(&z, &batch.candidates(scope), temperature, true)?;
    let slot_grads = out.slot_grads.expect("gradient requested");
    let mut weights = vec![0.0; params.n_out * params.n_in];
    let mut bias = vec![0.0; params.n_out];
    for (g, xk) in slot_grads.iter().zip(&x) {
        for (o, &go) in g.iter().enumerate() {
            bias[o] += go;
            if go != 0.0 {
                let row = &mut weights[o * params.n_in..(o + 1) * params.n_in];
                for (w, xi) in row.iter_mut().zip(xk.iter()) {
                    *w += go * xi;
                }
            }
        }
    }
    if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(TrainError::Numeric("non-finite gradient".into()));
    }
    Ok((out.report, AdapterGradient { weights, bias }))
}

/// One gradient-descent step with decoupled weight decay on `W`.
pub fn apply_update(
    params: &mut AdapterWeights,
    grad: &AdapterGradient,
    learning_rate: f64,
    weight_decay: f64,
) {
    let shrink = 1.0 - learning_rate * weight_decay;
    for (w, g) in params.weights.iter_mut().zip(&grad.weights) {
        *w = *w * shrink - learning_rate * g;
    }
    for (b, g) in params.bias.iter_mut().zip(&grad.bias) {
        *b -= learning_rate * g;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Step {
        step: usize,
        epoch: usize,
        lr: f64,
        loss: f64,
    },
    Epoch {
        epoch: usize,
        selection_score: Option<f64>,
    },
}

pub fn write_log<W: Write>(entries: &[LogEntry], mut out: W) -> Result<()> {
    for entry in entries {
        serde_json::to_writer(&mut out, entry).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub adapter: AdapterEncoder,
    pub log: Vec<LogEntry>,
    /// Spearman on the selection set after each epoch, when available.
    pub epoch_scores: Vec<Option<f64>>,
    /// 1-based epoch whose weights were returned.
    pub selected_epoch: usize,
    pub steps: usize,
    pub warnings: Vec<String>,
}

impl TrainingOutcome {
    pub fn step_losses(&self) -> Vec<f64> {
        self.log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Step { loss, .. } => Some(*loss),
                LogEntry::Epoch { .. } => None,
            })
            .collect()
    }
}

/// Position of `text` in `texts`, appending it on first sight.
fn intern<'a>(
    index: &mut HashMap<&'a str, usize>,
    texts: &mut Vec<&'a str>,
    text: &'a str,
) -> usize {
    *index.entry(text).or_insert_with(|| {
        texts.push(text);
        texts.len() - 1
    })
}

struct Selection {
    vectors: Vec<EmbeddingVector>,
    pairs: Vec<(usize, usize)>,
    gold: Vec<f64>,
}

impl Selection {
    fn new(adapter: &AdapterEncoder, set: &[StsPair]) -> Result<Self> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut texts: Vec<&str> = Vec::new();
        let pairs = set
            .iter()
            .map(|p| {
                (
                    intern(&mut index, &mut texts, &p.sentence_a),
                    intern(&mut index, &mut texts, &p.sentence_b),
                )
            })
            .collect();
        Ok(Selection {
            vectors: adapter.base().encode_batch(&texts)?,
            pairs,
            gold: set.iter().map(|p| p.gold_score).collect(),
        })
    }

    fn score(&self, params: &AdapterWeights) -> std::result::Result<f64, String> {
        let z = self
            .vectors
            .iter()
            .map(|v| params.apply(v.values()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let norms: Vec<f64> = z.iter().map(|v| dot(v, v).sqrt()).collect();
        let predictions: Vec<f64> = self
            .pairs
            .iter()
            .map(|&(a, b)| dot(&z[a], &z[b]) / (norms[a] * norms[b]))
            .collect();
        if predictions.iter().any(|p| !p.is_finite()) {
            return Err("degenerate selection embedding".into());
        }
        spearman(&predictions, &self.gold).map_err(|e| e.to_string())
    }
}

/// Mini-batch training with seeded shuffling. After every epoch the adapter is
/// scored on `selection`; the best-scoring epoch's weights are returned, or
/// the last epoch's when no score is available.
pub fn train(
    samples: &[TrainingSample],
    adapter: AdapterEncoder,
    config: &TrainerConfig,
    selection: Option<&[StsPair]>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let k = config.hard_negatives;

    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut texts: Vec<&str> = Vec::new();
    let ids: Vec<(usize, usize, Vec<usize>)> = samples
        .iter()
        .map(|s| {
            let a = intern(&mut index, &mut texts, &s.anchor);
            let p = intern(&mut index, &mut texts, &s.positive);
            let negs = s
                .hard_negatives
                .iter()
                .take(k)
                .map(|h| intern(&mut index, &mut texts, &h.text))
                .collect();
            (a, p, negs)
        })
        .collect();
    let base = adapter.base().encode_batch(&texts)?;

    let mut warnings = Vec::new();
    let selection = match selection {
        Some(set) if !set.is_empty() => Some(Selection::new(&adapter, set)?),
        _ => {
            warnings.push("selection set unavailable; returning the last epoch".to_string());
            None
        }
    };

    let total_steps = config.total_steps(samples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = adapter.params().clone();
    let mut best: Option<(f64, usize, AdapterWeights)> = None;
    let mut log = Vec::new();
    let mut epoch_scores = Vec::new();
    let mut step = 0;
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch {
                anchors: chunk.iter().map(|&i| base[ids[i].0].clone()).collect(),
                positives: chunk.iter().map(|&i| base[ids[i].1].clone()).collect(),
                hard_negatives: chunk
                    .iter()
                    .map(|&i| ids[i].2.iter().map(|&t| base[t].clone()).collect())
                    .collect(),
            };
            let (report, grad) =
                loss_gradient(&batch, &params, config.temperature, config.negative_scope)?;
            let lr = config.learning_rate_at(step, total_steps);
            apply_update(&mut params, &grad, lr, config.weight_decay);
            log.push(LogEntry::Step {
                step,
                epoch,
                lr,
                loss: report.mean,
            });
            step += 1;
        }
        let score = match &selection {
            None => None,
            Some(sel) => match sel.score(&params) {
                Ok(rho) => Some(rho),
                Err(e) => {
                    warnings.push(format!("epoch {epoch}: selection score unavailable: {e}"));
                    None
                }
            },
        };
        log.push(LogEntry::Epoch {
            epoch,
            selection_score: score,
        });
        epoch_scores.push(score);
        if let Some(rho) = score {
            if best.as_ref().is_none_or(|(b, _, _)| rho > *b) {
                best = Some((rho, epoch, params.clone()));
            }
        }
    }

    let (selected_epoch, weights) = match best {
        Some((_, epoch, weights)) => (epoch, weights),
        None => (config.max_epochs, params),
    };
    Ok(TrainingOutcome {
        adapter: AdapterEncoder::new(adapter.base().clone(), weights)?,
        log,
        epoch_scores,
        selected_epoch,
        steps: step,
        warnings,
    })
}
