use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{physics_loss_terms, LossTerm};
use super::model::{InputBatch, Mode, NetConfig, ResNet};
use super::NetError;
use crate::field::{canonicalize_phase, ShimWeights, SliceSample};
use crate::opt::{AdamConfig, AdamState};

/// Samples per eval-mode forward call; eval outputs do not depend on it.
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub mag_floor: f64,
    /// Train/validation/test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 16,
            epochs: 200,
            learning_rate: 1e-3,
            decay: 0.5,
            decay_every: 50,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            mag_floor: adam.mag_floor,
            split: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) || !(self.decay > 0.0) || self.decay_every == 0 {
            return bad("learning_rate, decay and decay_every must be positive".into());
        }
        if self.split.iter().any(|r| !(*r >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios must be nonnegative and sum to 1, got {:?}", self.split));
        }
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps, ..AdamConfig::default() }
            .validate()
            .map_err(NetError::Config)
    }

    /// Step size used during 1-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let k = (epoch.max(1) - 1) / self.decay_every;
        self.learning_rate * self.decay.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the initialized network before any step.
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters of the best epoch (by validation loss, or training loss when
    /// there is no validation set), rounded to `f32`.
    pub net: ResNet,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Split `order` into batches of `size`; a trailing batch of one joins the
/// previous batch so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() >= 2 && out.last().map_or(false, |b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Eval-mode loss over a whole set.
pub fn evaluate_loss(net: &ResNet, samples: &[SliceSample], terms: &[LossTerm], floor: f64) -> Result<f64, NetError> {
    let mut total = 0.0;
    for (chunk, tchunk) in samples.chunks(EVAL_CHUNK).zip(terms.chunks(EVAL_CHUNK)) {
        let refs: Vec<&SliceSample> = chunk.iter().collect();
        let out = net.forward(&InputBatch::encode(&refs)?, Mode::Eval)?.outputs;
        let trefs: Vec<&LossTerm> = tchunk.iter().collect();
        total += physics_loss_terms(&out, &trefs, floor)?.0 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

pub fn train(net_cfg: &NetConfig, cfg: &TrainConfig, train_set: &[SliceSample], val_set: &[SliceSample]) -> Result<TrainOutcome, NetError> {
    train_observed(net_cfg, cfg, train_set, val_set, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
    train_set: &[SliceSample],
    val_set: &[SliceSample],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(NetError::Domain(format!("training needs at least 2 samples, got {}", train_set.len())));
    }
    let mut net = ResNet::new(net_cfg.clone())?;
    let train_terms = train_set.iter().map(LossTerm::new).collect::<Result<Vec<_>, _>>()?;
    let val_terms = val_set.iter().map(LossTerm::new).collect::<Result<Vec<_>, _>>()?;

    let score = |net: &ResNet| -> Result<(f64, Option<f64>), NetError> {
        let tr = evaluate_loss(net, train_set, &train_terms, cfg.mag_floor)?;
        let va = if val_set.is_empty() { None } else { Some(evaluate_loss(net, val_set, &val_terms, cfg.mag_floor)?) };
        Ok((tr, va))
    };
    let (tr0, va0) = score(&net)?;
    let first = EpochLog { epoch: 0, learning_rate: 0.0, train_loss: tr0, val_loss: va0 };
    on_epoch(&first);
    let mut best = (va0.unwrap_or(tr0), 0, net.clone());
    let mut log = vec![first];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net.param_count());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let refs: Vec<&SliceSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let terms: Vec<&LossTerm> = idx.iter().map(|&i| &train_terms[i]).collect();
            let pass = net.forward(&InputBatch::encode(&refs)?, Mode::Train)?;
            let (loss, adjoint) = physics_loss_terms(&pass.outputs, &terms, cfg.mag_floor)?;
            if !loss.is_finite() {
                return Err(NetError::Diverged { epoch, step });
            }
            let grad = net.backward(&pass, &adjoint)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(NetError::Diverged { epoch, step });
            }
            net.update_running_stats(&pass)?;
            adam.step(&mut net.params, &grad, lr, cfg.beta1, cfg.beta2, cfg.eps);
            epoch_loss += loss * idx.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val_set.is_empty() { None } else { Some(evaluate_loss(&net, val_set, &val_terms, cfg.mag_floor)?) };
        if val_loss.map_or(false, |v| !v.is_finite()) {
            return Err(NetError::Diverged { epoch, step: 0 });
        }
        let entry = EpochLog { epoch, learning_rate: lr, train_loss, val_loss };
        on_epoch(&entry);
        let key = val_loss.unwrap_or(train_loss);
        if key < best.0 {
            best = (key, epoch, net.clone());
        }
        log.push(entry);
    }
    let (_, best_epoch, mut net) = best;
    net.quantize_f32();
    Ok(TrainOutcome { net, best_epoch, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub weights: ShimWeights,
    /// Fraction of target.
    pub rmse: f64,
    /// Seconds spent in the forward pass and phase canonicalization.
    pub wall_time: f64,
}

/// One eval-mode forward pass for a single slice.
pub fn predict(net: &ResNet, sample: &SliceSample) -> Result<Prediction, NetError> {
    let x = InputBatch::encode(&[sample])?;
    let start = Instant::now();
    let out = net.forward(&x, Mode::Eval)?.outputs;
    let weights = canonicalize_phase(&ShimWeights::from_interleaved(&out));
    let wall_time = start.elapsed().as_secs_f64();
    let rmse = sample.problem()?.rmse(&weights.values);
    Ok(Prediction { weights, rmse, wall_time })
}

/// Canonicalized weights for many slices (no timing).
pub fn predict_batch(net: &ResNet, samples: &[SliceSample]) -> Result<Vec<ShimWeights>, NetError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&SliceSample> = chunk.iter().collect();
        let raw = net.forward(&InputBatch::encode(&refs)?, Mode::Eval)?.outputs;
        out.extend(raw.chunks_exact(net.config().output_dim).map(|o| canonicalize_phase(&ShimWeights::from_interleaved(o))));
    }
    Ok(out)
}
