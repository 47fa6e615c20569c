//! The FM-AE network: sequence and image encoders, the merge module, the
//! reparameterised latent, sequence and image decoders, and the cascaded
//! anomaly detector.
//!
//! ```text
//!  V (T×n_s) ─ LSTM ───────────────────── h_seq (d_h) ─┐
//!            └ |shift(DFT)|·mask ─ FC ─── fm    (d_h) ─┼─ concat ─ FC ─ latent ─┬─ detector ─ p
//!  I (C×H×W) ─ CNN ─ 1×1 ─ FC ─ FC ────── h_img (d_img)┘                        │
//!                                          latent ─ FC_μ, FC_logσ² ─ R_m = μ + σ⊙ε
//!                                          R_m ─ LSTM ─ FC ─ V̂;  R_m ─ FC ─ FC ─ 1×1 ─ 5× deconv ─ Î
//! ```

mod loss;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal;
use crate::tensor::{lstm_cell, KlVariant, ParamId, ParamSet, Tape, Tensor, Var};

pub use loss::{
    binary_cross_entropy, kl_divergence, loss_detector, loss_kl, loss_rec_img, loss_rec_seq, loss_total,
    weighted_total, LossBreakdown, LossWeights,
};

/// Name prefix shared by every detector parameter.
pub const DETECTOR_PREFIX: &str = "detector.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Time steps per voltage window.
    pub time_steps: usize,
    /// Electrolytic cells per window (voltage columns).
    pub cells: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub img_c: usize,
    /// LSTM hidden width; also the width of the frequency-masked code.
    pub hidden: usize,
    /// Width of the image code.
    pub img_code: usize,
    /// Latent dimension.
    pub latent: usize,
    pub mask_scale_b: f64,
    /// Output channels of the stride-2 backbone blocks.
    pub enc_channels: Vec<usize>,
    pub img_fc_hidden: usize,
    pub dec_fc_hidden: usize,
    /// Channels entering each transposed convolution; the last one emits
    /// `img_c` channels.
    pub dec_channels: Vec<usize>,
    pub detector_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            time_steps: 60,
            cells: 16,
            img_h: 64,
            img_w: 64,
            img_c: 1,
            hidden: 64,
            img_code: 16,
            latent: 64,
            mask_scale_b: signal::default_mask_scale(60),
            enc_channels: vec![8, 16, 32, 64],
            img_fc_hidden: 64,
            dec_fc_hidden: 128,
            dec_channels: vec![64, 32, 16, 8, 4],
            detector_hidden: vec![32, 16],
        }
    }
}

impl ModelConfig {
    pub fn pixels(&self) -> usize {
        self.img_h * self.img_w * self.img_c
    }

    /// Width of `[h_seq, fm, h_img]`.
    pub fn merge_width(&self) -> usize {
        2 * self.hidden + self.img_code
    }

    /// Spatial extent after the stride-2 backbone.
    pub fn backbone_extent(&self) -> (usize, usize) {
        let halve = |mut n: usize| {
            for _ in &self.enc_channels {
                n = n.div_ceil(2);
            }
            n
        };
        (halve(self.img_h), halve(self.img_w))
    }

    /// Spatial extent of the decoder seed before upsampling.
    pub fn decoder_seed_extent(&self) -> (usize, usize) {
        let f = 1usize << self.dec_channels.len();
        (self.img_h / f, self.img_w / f)
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("time_steps", self.time_steps),
            ("cells", self.cells),
            ("img_h", self.img_h),
            ("img_w", self.img_w),
            ("img_c", self.img_c),
            ("hidden", self.hidden),
            ("img_code", self.img_code),
            ("latent", self.latent),
            ("img_fc_hidden", self.img_fc_hidden),
            ("dec_fc_hidden", self.dec_fc_hidden),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Parameter(format!("model extent {name} must be positive")));
            }
        }
        if !(self.mask_scale_b > 0.0 && self.mask_scale_b.is_finite()) {
            return Err(Error::Parameter(format!(
                "mask_scale_b must be positive, got {}",
                self.mask_scale_b
            )));
        }
        if self.enc_channels.is_empty() || self.dec_channels.is_empty() {
            return Err(Error::Parameter("image encoder and decoder need at least one block".into()));
        }
        let all = self.enc_channels.iter().chain(&self.dec_channels).chain(&self.detector_hidden);
        if all.into_iter().any(|&c| c == 0) {
            return Err(Error::Parameter("channel and hidden widths must be positive".into()));
        }
        let f = 1usize << self.dec_channels.len();
        if !self.img_h.is_multiple_of(f) || !self.img_w.is_multiple_of(f) {
            return Err(Error::Parameter(format!(
                "image extents {}×{} must be divisible by {f} for the decoder",
                self.img_h, self.img_w
            )));
        }
        Ok(())
    }
}

/// Which modality reaches the merge module.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Image code zeroed.
    VoltageOnly,
    /// Sequence code and frequency-masked code zeroed.
    ImageOnly,
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::VoltageOnly => "voltage_only",
            Ablation::ImageOnly => "image_only",
        })
    }
}

/// The latent vector and its reparameterised sample, `r_m = mu + sigma⊙epsilon`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub latent: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub r_m: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// `T×n_s`.
    pub seq_hat: Tensor,
    /// `img_c×img_h×img_w`, entries in `[0, 1]`.
    pub img_hat: Tensor,
}

/// Tape handles of the reparameterisation.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub mu: Var,
    pub sigma: Var,
    pub r_m: Var,
}

/// Everything produced by one training forward pass.
#[derive(Clone, Debug)]
pub struct TrainForward {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub code: LatentCode,
    pub reconstruction: Reconstruction,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    seq_lstm: Lstm,
    img_blocks: Vec<Conv>,
    img_mix: Conv,
    img_fc1: Dense,
    img_fc2: Dense,
    merge_fm: Dense,
    merge_fc: Dense,
    mu: Dense,
    logvar: Dense,
    dec_lstm: Lstm,
    dec_seq_fc: Dense,
    dec_fc1: Dense,
    dec_fc2: Dense,
    dec_mix: Conv,
    dec_deconvs: Vec<Conv>,
    detector: Vec<Dense>,
}

/// How fresh parameters are filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Uniform fan-in scaled weights, zero biases, forget-gate bias 1.
    Random { seed: u64 },
}

struct Initializer {
    rng: Option<ChaCha8Rng>,
}

impl Initializer {
    fn weight(&mut self, shape: Vec<usize>, fan_in: usize, gain: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = match &mut self.rng {
            None => vec![0.0; n],
            Some(rng) => {
                let bound = (gain / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        Tensor::new(shape, data).expect("initializer shape")
    }

    fn lstm_bias(&self, hidden: usize) -> Tensor {
        let mut b = vec![0.0; 4 * hidden];
        if self.rng.is_some() {
            b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        }
        Tensor::vector(b)
    }
}

// gains: 6 for layers feeding a relu, 3 otherwise
const RELU_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 3.0;

fn dense(ps: &mut ParamSet, init: &mut Initializer, name: &str, d_in: usize, d_out: usize, gain: f64) -> Result<Dense> {
    Ok(Dense {
        w: ps.add(format!("{name}.weight"), init.weight(vec![d_out, d_in], d_in, gain))?,
        b: ps.add(format!("{name}.bias"), Tensor::zeros(vec![d_out]))?,
    })
}

fn conv(ps: &mut ParamSet, init: &mut Initializer, name: &str, shape: [usize; 4], fan_in: usize, bias: usize) -> Result<Conv> {
    Ok(Conv {
        w: ps.add(format!("{name}.weight"), init.weight(shape.to_vec(), fan_in, RELU_GAIN))?,
        b: ps.add(format!("{name}.bias"), Tensor::zeros(vec![bias]))?,
    })
}

fn lstm(ps: &mut ParamSet, init: &mut Initializer, name: &str, d_in: usize, d_h: usize) -> Result<Lstm> {
    Ok(Lstm {
        w_ih: ps.add(format!("{name}.w_ih"), init.weight(vec![4 * d_h, d_in], d_in + d_h, LINEAR_GAIN))?,
        w_hh: ps.add(format!("{name}.w_hh"), init.weight(vec![4 * d_h, d_h], d_in + d_h, LINEAR_GAIN))?,
        bias: ps.add(format!("{name}.bias"), init.lstm_bias(d_h))?,
    })
}

impl Layout {
    fn register(cfg: &ModelConfig, ps: &mut ParamSet, init: &mut Initializer) -> Result<Layout> {
        let seq_lstm = lstm(ps, init, "encoder.seq.lstm", cfg.cells, cfg.hidden)?;

        let mut img_blocks = Vec::new();
        let mut c_in = cfg.img_c;
        for (k, &c_out) in cfg.enc_channels.iter().enumerate() {
            let name = format!("encoder.img.block{k}");
            img_blocks.push(conv(ps, init, &name, [c_out, c_in, 3, 3], c_in * 9, c_out)?);
            c_in = c_out;
        }
        let img_mix = conv(ps, init, "encoder.img.mix", [c_in, c_in, 1, 1], c_in, c_in)?;
        let (bh, bw) = cfg.backbone_extent();
        let flat = c_in * bh * bw;
        let img_fc1 = dense(ps, init, "encoder.img.fc1", flat, cfg.img_fc_hidden, RELU_GAIN)?;
        let img_fc2 = dense(ps, init, "encoder.img.fc2", cfg.img_fc_hidden, cfg.img_code, LINEAR_GAIN)?;

        let fm_in = cfg.time_steps * cfg.cells;
        let merge_fm = dense(ps, init, "encoder.merge.fm", fm_in, cfg.hidden, RELU_GAIN)?;
        let merge_fc = dense(ps, init, "encoder.merge.fc", cfg.merge_width(), cfg.latent, LINEAR_GAIN)?;

        let mu = dense(ps, init, "reparam.mu", cfg.latent, cfg.latent, LINEAR_GAIN)?;
        let logvar = dense(ps, init, "reparam.logvar", cfg.latent, cfg.latent, LINEAR_GAIN)?;

        let dec_lstm = lstm(ps, init, "decoder.seq.lstm", cfg.latent, cfg.hidden)?;
        let dec_seq_fc = dense(ps, init, "decoder.seq.fc", cfg.hidden, cfg.cells, LINEAR_GAIN)?;

        let (sh, sw) = cfg.decoder_seed_extent();
        let c0 = cfg.dec_channels[0];
        let dec_fc1 = dense(ps, init, "decoder.img.fc1", cfg.latent, cfg.dec_fc_hidden, RELU_GAIN)?;
        let dec_fc2 = dense(ps, init, "decoder.img.fc2", cfg.dec_fc_hidden, c0 * sh * sw, RELU_GAIN)?;
        let dec_mix = conv(ps, init, "decoder.img.mix", [c0, c0, 1, 1], c0, c0)?;
        let mut dec_deconvs = Vec::new();
        for k in 0..cfg.dec_channels.len() {
            let c_in = cfg.dec_channels[k];
            let c_out = cfg.dec_channels.get(k + 1).copied().unwrap_or(cfg.img_c);
            let name = format!("decoder.img.deconv{k}");
            dec_deconvs.push(conv(ps, init, &name, [c_in, c_out, 3, 3], c_in * 9, c_out)?);
        }

        let mut detector = Vec::new();
        let mut d_in = cfg.latent;
        for (k, &d_out) in cfg.detector_hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let gain = if k < cfg.detector_hidden.len() { RELU_GAIN } else { LINEAR_GAIN };
            detector.push(dense(ps, init, &format!("{DETECTOR_PREFIX}fc{}", k + 1), d_in, d_out, gain)?);
            d_in = d_out;
        }

        Ok(Layout {
            seq_lstm,
            img_blocks,
            img_mix,
            img_fc1,
            img_fc2,
            merge_fm,
            merge_fc,
            mu,
            logvar,
            dec_lstm,
            dec_seq_fc,
            dec_fc1,
            dec_fc2,
            dec_mix,
            dec_deconvs,
            detector,
        })
    }
}

/// Draws `n` i.i.d. standard normal values.
pub fn sample_epsilon(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// The full network with its parameters.
#[derive(Clone, Debug)]
pub struct FmAe {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

impl FmAe {
    pub fn new(config: ModelConfig, init: Init) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut initializer = Initializer {
            rng: match init {
                Init::Zeros => None,
                Init::Random { seed } => Some(<ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed)),
            },
        };
        let layout = Layout::register(&config, &mut params, &mut initializer)?;
        Ok(FmAe { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_detector_param(name: &str) -> bool {
        name.starts_with(DETECTOR_PREFIX)
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_params(&mut self, prefix: &str) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(&self.params, id)
    }

    fn dense(&self, tape: &mut Tape, x: Var, layer: Dense) -> Result<Var> {
        let w = self.p(tape, layer.w);
        let b = self.p(tape, layer.b);
        tape.linear(x, w, Some(b))
    }

    fn check_shape(&self, what: &str, t: &Tensor, expected: &[usize]) -> Result<()> {
        if t.shape() != expected {
            return Err(Error::Shape(format!("{what}: expected {expected:?}, got {:?}", t.shape())));
        }
        Ok(())
    }

    /// Runs the encoder LSTM over the `T` rows of `v` from a zero state and
    /// returns the final hidden state.
    pub fn encode_sequence(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        let cfg = &self.config;
        self.check_shape("voltage sequence", tape.value(v), &[cfg.time_steps, cfg.cells])?;
        let l = self.layout.seq_lstm;
        let w_ih = self.p(tape, l.w_ih);
        let w_hh = self.p(tape, l.w_hh);
        let bias = self.p(tape, l.bias);
        // input projections for all steps at once
        let proj = tape.linear(v, w_ih, Some(bias))?;
        let mut h = tape.constant(Tensor::zeros(vec![cfg.hidden]));
        let mut c = tape.constant(Tensor::zeros(vec![cfg.hidden]));
        for t in 0..cfg.time_steps {
            let x_t = tape.row(proj, t)?;
            let h_t = tape.linear(h, w_hh, None)?;
            let z = tape.add(x_t, h_t)?;
            (h, c) = lstm_cell(tape, z, c)?;
        }
        Ok(h)
    }

    /// Backbone of stride-2 conv blocks, a 1×1 channel mix, then two FC layers.
    pub fn encode_image(&self, tape: &mut Tape, img: Var) -> Result<Var> {
        let cfg = &self.config;
        self.check_shape("infrared image", tape.value(img), &[cfg.img_c, cfg.img_h, cfg.img_w])?;
        let mut x = img;
        for block in &self.layout.img_blocks {
            let w = self.p(tape, block.w);
            let b = self.p(tape, block.b);
            let y = tape.conv2d(x, w, Some(b), 2, 1)?;
            x = tape.relu(y);
        }
        let mix = self.layout.img_mix;
        let (w, b) = (self.p(tape, mix.w), self.p(tape, mix.b));
        let x = tape.conv2d(x, w, Some(b), 1, 0)?;
        let n = tape.value(x).len();
        let flat = tape.reshape(x, vec![n])?;
        let y = self.dense(tape, flat, self.layout.img_fc1)?;
        let y = tape.relu(y);
        self.dense(tape, y, self.layout.img_fc2)
    }

    /// Compresses the frequency-masked features, concatenates them with the
    /// two modality codes and projects to the latent vector.
    pub fn merge_latent(&self, tape: &mut Tape, h_seq: Var, fm: Var, h_img: Var, ablation: Ablation) -> Result<Var> {
        let cfg = &self.config;
        self.check_shape("hidden sequence vector", tape.value(h_seq), &[cfg.hidden])?;
        self.check_shape("frequency-masked features", tape.value(fm), &[cfg.time_steps, cfg.cells])?;
        self.check_shape("hidden image vector", tape.value(h_img), &[cfg.img_code])?;
        let flat = tape.reshape(fm, vec![cfg.time_steps * cfg.cells])?;
        let fm_code = self.dense(tape, flat, self.layout.merge_fm)?;
        let fm_code = tape.relu(fm_code);
        let (h_seq, fm_code, h_img) = match ablation {
            Ablation::None => (h_seq, fm_code, h_img),
            Ablation::VoltageOnly => (h_seq, fm_code, tape.constant(Tensor::zeros(vec![cfg.img_code]))),
            Ablation::ImageOnly => (
                tape.constant(Tensor::zeros(vec![cfg.hidden])),
                tape.constant(Tensor::zeros(vec![cfg.hidden])),
                h_img,
            ),
        };
        let joint = tape.concat(&[h_seq, fm_code, h_img], vec![cfg.merge_width()])?;
        self.dense(tape, joint, self.layout.merge_fc)
    }

    /// `mu = FC_μ(latent)`, `sigma = exp(½·FC_v(latent))`,
    /// `r_m = mu + sigma⊙epsilon`.
    pub fn reparameterize(&self, tape: &mut Tape, latent: Var, epsilon: &[f64]) -> Result<(LatentVars, LatentCode)> {
        let n = self.config.latent;
        if epsilon.len() != n {
            return Err(Error::Shape(format!("epsilon has {} entries, expected {n}", epsilon.len())));
        }
        let mu = self.dense(tape, latent, self.layout.mu)?;
        let logvar = self.dense(tape, latent, self.layout.logvar)?;
        let half = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half);
        let eps = tape.constant(Tensor::vector(epsilon.to_vec()));
        let spread = tape.mul(sigma, eps)?;
        let r_m = tape.add(mu, spread)?;
        let code = LatentCode {
            latent: tape.value(latent).data().to_vec(),
            mu: tape.value(mu).data().to_vec(),
            sigma: tape.value(sigma).data().to_vec(),
            epsilon: epsilon.to_vec(),
            r_m: tape.value(r_m).data().to_vec(),
        };
        Ok((LatentVars { mu, sigma, r_m }, code))
    }

    /// Decoder LSTM fed `r_m` at every step from a zero state; each hidden
    /// state is mapped to one row of cell voltages.
    pub fn decode_sequence(&self, tape: &mut Tape, r_m: Var) -> Result<Var> {
        let cfg = &self.config;
        self.check_shape("latent sample", tape.value(r_m), &[cfg.latent])?;
        let l = self.layout.dec_lstm;
        let w_ih = self.p(tape, l.w_ih);
        let w_hh = self.p(tape, l.w_hh);
        let bias = self.p(tape, l.bias);
        let proj = tape.linear(r_m, w_ih, Some(bias))?;
        let mut h = tape.constant(Tensor::zeros(vec![cfg.hidden]));
        let mut c = tape.constant(Tensor::zeros(vec![cfg.hidden]));
        let mut states = Vec::with_capacity(cfg.time_steps);
        for _ in 0..cfg.time_steps {
            let h_t = tape.linear(h, w_hh, None)?;
            let z = tape.add(proj, h_t)?;
            (h, c) = lstm_cell(tape, z, c)?;
            states.push(h);
        }
        let stacked = tape.concat(&states, vec![cfg.time_steps, cfg.hidden])?;
        self.dense(tape, stacked, self.layout.dec_seq_fc)
    }

    /// Two FC layers, reshape to the decoder seed, a 1×1 channel mix, then
    /// stride-2 transposed convolutions up to the image size.
    pub fn decode_image(&self, tape: &mut Tape, r_m: Var) -> Result<Var> {
        let cfg = &self.config;
        self.check_shape("latent sample", tape.value(r_m), &[cfg.latent])?;
        let y = self.dense(tape, r_m, self.layout.dec_fc1)?;
        let y = tape.relu(y);
        let y = self.dense(tape, y, self.layout.dec_fc2)?;
        let y = tape.relu(y);
        let (sh, sw) = cfg.decoder_seed_extent();
        let seed = tape.reshape(y, vec![cfg.dec_channels[0], sh, sw])?;
        let mix = self.layout.dec_mix;
        let (w, b) = (self.p(tape, mix.w), self.p(tape, mix.b));
        let mut x = tape.conv2d(seed, w, Some(b), 1, 0)?;
        let last = self.layout.dec_deconvs.len() - 1;
        for (k, layer) in self.layout.dec_deconvs.iter().enumerate() {
            let w = self.p(tape, layer.w);
            let b = self.p(tape, layer.b);
            let y = tape.conv_transpose2d(x, w, Some(b), 2, 1, 1)?;
            x = if k == last { tape.sigmoid(y) } else { tape.relu(y) };
        }
        Ok(x)
    }

    /// Probability of a contact anomaly from the latent vector.
    pub fn detect(&self, tape: &mut Tape, latent: Var) -> Result<Var> {
        self.check_shape("latent vector", tape.value(latent), &[self.config.latent])?;
        let last = self.layout.detector.len() - 1;
        let mut x = latent;
        for (k, &layer) in self.layout.detector.iter().enumerate() {
            let y = self.dense(tape, x, layer)?;
            x = if k == last { tape.sigmoid(y) } else { tape.relu(y) };
        }
        Ok(x)
    }

    /// Records the encoder on `tape` and returns the latent vector.
    pub fn encode(&self, tape: &mut Tape, seq: &Tensor, img: &Tensor, ablation: Ablation) -> Result<Var> {
        let fm = signal::frequency_masked_features(seq, self.config.mask_scale_b)?;
        let v = tape.constant(seq.clone());
        let fm = tape.constant(fm);
        let i = tape.constant(img.clone());
        let h_seq = self.encode_sequence(tape, v)?;
        let h_img = self.encode_image(tape, i)?;
        self.merge_latent(tape, h_seq, fm, h_img, ablation)
    }

    /// Deterministic latent vector of one sample.
    pub fn latent(&self, seq: &Tensor, img: &Tensor, ablation: Ablation) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = self.encode(&mut tape, seq, img, ablation)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Detector probability for a precomputed latent vector.
    pub fn detect_latent(&self, latent: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(latent.to_vec()));
        let p = self.detect(&mut tape, z)?;
        Ok(tape.scalar(p))
    }

    /// Anomaly probability of one sample; no noise is drawn.
    pub fn score(&self, seq: &Tensor, img: &Tensor, ablation: Ablation) -> Result<f64> {
        self.detect_latent(&self.latent(seq, img, ablation)?)
    }

    /// Encoder, reparameterisation, both decoders and all autoencoder losses
    /// on one tape.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        seq: &Tensor,
        img: &Tensor,
        epsilon: &[f64],
        weights: LossWeights,
        kl_variant: KlVariant,
    ) -> Result<TrainForward> {
        let latent = self.encode(tape, seq, img, Ablation::None)?;
        let (vars, code) = self.reparameterize(tape, latent, epsilon)?;
        let seq_hat = self.decode_sequence(tape, vars.r_m)?;
        let img_hat = self.decode_image(tape, vars.r_m)?;
        let target_seq = tape.constant(seq.clone());
        let target_img = tape.constant(img.clone());
        let rec_seq = loss_rec_seq(tape, seq_hat, target_seq)?;
        let rec_img = loss_rec_img(tape, img_hat, target_img)?;
        let kl = loss_kl(tape, vars.mu, vars.sigma, kl_variant)?;
        let total = loss_total(tape, rec_seq, rec_img, kl, weights)?;
        let breakdown = LossBreakdown {
            rec_seq: tape.scalar(rec_seq),
            rec_img: tape.scalar(rec_img),
            kl: tape.scalar(kl),
            total: tape.scalar(total),
            weights,
        };
        Ok(TrainForward {
            total,
            breakdown,
            code,
            reconstruction: Reconstruction {
                seq_hat: tape.value(seq_hat).clone(),
                img_hat: tape.value(img_hat).clone(),
            },
        })
    }
}
