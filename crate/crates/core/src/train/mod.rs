//! Two-stage training (autoencoder pretraining, then a detector on the
//! frozen encoder), evaluation metrics and checkpoints.

mod adam;
mod checkpoint;
mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{loss_detector, sample_epsilon, Ablation, FmAe, Init, LossWeights, ModelConfig};
use crate::tensor::{KlVariant, Tape, Tensor};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Header, Stage, TensorEntry, MAGIC, VERSION};
pub use metrics::{auc, compute_metrics, confusion_at, f1_score, Confusion, Metrics, DEFAULT_THRESHOLD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub kl_variant: KlVariant,
    /// Stop once the epoch-mean loss improved by less than 1e-4 (relative)
    /// over the last 3 epochs.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            learning_rate: 1e-3,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            seed: 0,
            kl_variant: KlVariant::Standard,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.weights().validate()
    }
}

/// Epoch means of the pretraining losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub rec_seq: f64,
    pub rec_img: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLoss>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// CSV with header `epoch,rec_seq,rec_img,kl,total`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,rec_seq,rec_img,kl,total\n");
        for e in &self.epochs {
            writeln!(s, "{},{},{},{},{}", e.epoch, e.rec_seq, e.rec_img, e.kl, e.total).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    fn should_stop(&self) -> bool {
        let n = self.epochs.len();
        if n < 4 {
            return false;
        }
        let before = self.epochs[n - 4].total;
        let now = self.epochs[n - 1].total;
        (before - now) / before.abs().max(f64::MIN_POSITIVE) < 1e-4
    }
}

const SHUFFLE_STREAM: u64 = 0;
const EPSILON_STREAM: u64 = 1;

fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64 + purpose);
    rng
}

/// Sample order of one epoch, fixed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut epoch_rng(seed, epoch, SHUFFLE_STREAM));
    order
}

fn check_sample_shapes(model: &FmAe, samples: &[Sample]) -> Result<()> {
    let c = model.config();
    for s in samples {
        if s.seq.shape() != [c.time_steps, c.cells] || s.img.shape() != [c.img_c, c.img_h, c.img_w] {
            return Err(Error::Shape(format!(
                "sample {}: sequence {:?} / image {:?} do not fit the model",
                s.record.id,
                s.seq.shape(),
                s.img.shape()
            )));
        }
    }
    Ok(())
}

/// Minimises the batch-mean autoencoder loss; detector parameters are left
/// untouched. Model weights are initialised from `cfg.seed`.
pub fn pretrain(samples: &[Sample], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Checkpoint, TrainLog)> {
    pretrain_with(samples, model_cfg, cfg, |_| {})
}

pub fn pretrain_with(
    samples: &[Sample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Parameter("cannot pretrain on an empty dataset".into()));
    }
    let mut model = FmAe::new(model_cfg.clone(), Init::Random { seed: cfg.seed })?;
    check_sample_shapes(&model, samples)?;
    model.params_mut().set_trainable(|n| !FmAe::is_detector_param(n));
    let mut state = AdamState::new(model.params());
    let weights = cfg.weights();
    let latent = model_cfg.latent;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut eps_rng = epoch_rng(cfg.seed, epoch, EPSILON_STREAM);
        let mut sums = [0.0; 4];
        for batch in order.chunks(cfg.batch_size) {
            model.params_mut().zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &samples[i];
                let eps = sample_epsilon(&mut eps_rng, latent);
                let mut tape = Tape::new();
                let out = model.forward_train(&mut tape, &s.seq, &s.img, &eps, weights, cfg.kl_variant)?;
                let mean = tape.scale(out.total, scale);
                let b = out.breakdown;
                for (acc, v) in sums.iter_mut().zip([b.rec_seq, b.rec_img, b.kl, b.total]) {
                    *acc += v;
                }
                tape.backward(mean, model.params_mut())?;
            }
            adam_step(model.params_mut(), &mut state, cfg.learning_rate)?;
        }
        let n = samples.len() as f64;
        let e = EpochLoss {
            epoch: epoch + 1,
            rec_seq: sums[0] / n,
            rec_img: sums[1] / n,
            kl: sums[2] / n,
            total: sums[3] / n,
        };
        on_epoch(&e);
        log.epochs.push(e);
        if cfg.early_stop && log.should_stop() {
            log.stopped_early = true;
            break;
        }
    }
    model.params_mut().zero_grad();
    model.params_mut().set_trainable(|_| true);
    Ok((Checkpoint::new(Stage::Pretrained, model), log))
}

/// Epoch-mean detector loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    pub bce: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectorLog {
    pub epochs: Vec<DetectorEpoch>,
}

impl DetectorLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,bce\n");
        for e in &self.epochs {
            writeln!(s, "{},{}", e.epoch, e.bce).unwrap();
        }
        s
    }
}

/// Freezes every autoencoder parameter and fits the detector head with
/// batch-mean binary cross-entropy on the deterministic latent vectors.
/// The encoder is frozen, so latents are computed once up front.
pub fn train_detector(samples: &[Sample], pretrained: &Checkpoint, cfg: &TrainConfig) -> Result<(Checkpoint, DetectorLog)> {
    train_detector_with(samples, pretrained, cfg, |_| {})
}

pub fn train_detector_with(
    samples: &[Sample],
    pretrained: &Checkpoint,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&DetectorEpoch),
) -> Result<(Checkpoint, DetectorLog)> {
    if pretrained.stage != Stage::Pretrained {
        return Err(Error::Contract(format!(
            "detector training needs a pretrained checkpoint, got stage {}",
            pretrained.stage
        )));
    }
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Parameter("cannot train the detector on an empty dataset".into()));
    }
    let mut model = pretrained.model.clone();
    check_sample_shapes(&model, samples)?;
    let latents = samples
        .iter()
        .map(|s| model.latent(&s.seq, &s.img, Ablation::None).map(Tensor::vector))
        .collect::<Result<Vec<_>>>()?;
    model.params_mut().set_trainable(FmAe::is_detector_param);
    let mut state = AdamState::new(model.params());
    let mut log = DetectorLog::default();

    for epoch in 0..cfg.epochs {
        let order = epoch_order(samples.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.params_mut().zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new();
                let z = tape.constant(latents[i].clone());
                let p = model.detect(&mut tape, z)?;
                let loss = loss_detector(&mut tape, p, samples[i].label())?;
                sum += tape.scalar(loss);
                let mean = tape.scale(loss, scale);
                tape.backward(mean, model.params_mut())?;
            }
            adam_step(model.params_mut(), &mut state, cfg.learning_rate)?;
        }
        let e = DetectorEpoch {
            epoch: epoch + 1,
            bce: sum / samples.len() as f64,
        };
        on_epoch(&e);
        log.epochs.push(e);
    }
    model.params_mut().zero_grad();
    model.params_mut().set_trainable(|_| true);
    Ok((Checkpoint::new(Stage::Detector, model), log))
}

/// Detector probabilities for every sample.
pub fn score_samples(model: &FmAe, samples: &[Sample], ablation: Ablation) -> Result<Vec<f64>> {
    samples.iter().map(|s| model.score(&s.seq, &s.img, ablation)).collect()
}

/// Metrics of one evaluation run, as written to the JSON report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub ablation: Ablation,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn evaluate(samples: &[Sample], ckpt: &Checkpoint, ablation: Ablation) -> Result<EvalReport> {
    if ckpt.stage != Stage::Detector {
        return Err(Error::Contract(format!(
            "evaluation needs a detector checkpoint, got stage {}",
            ckpt.stage
        )));
    }
    if samples.is_empty() {
        return Err(Error::Parameter("cannot evaluate an empty dataset".into()));
    }
    check_sample_shapes(&ckpt.model, samples)?;
    let scores = score_samples(&ckpt.model, samples, ablation)?;
    let labels: Vec<u8> = samples.iter().map(Sample::label).collect();
    Ok(EvalReport {
        metrics: compute_metrics(&scores, &labels, DEFAULT_THRESHOLD)?,
        ablation,
    })
}
