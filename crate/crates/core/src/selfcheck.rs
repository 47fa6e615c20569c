//! Finite-difference verification of every differentiable primitive and of
//! the complete autoencoder loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{loss_detector, sample_epsilon, Ablation, FmAe, Init, LossWeights, ModelConfig};
use crate::tensor::{
    grad_check, grad_check_params_with, lstm_cell, lstm_step, GradCheckReport, KlVariant, LstmWeights, Stencil, Tape,
    Tensor, Var,
};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-5;
pub const PRIMITIVE_STEP: f64 = 1e-6;
/// The five-point stencil is fourth-order accurate, so the model check can
/// use a larger step and keep roundoff well below the deepest gradients.
pub const MODEL_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub worst: String,
    pub checked: usize,
}

impl CheckRow {
    fn new(name: &str, report: GradCheckReport, threshold: f64) -> Self {
        CheckRow {
            name: name.to_string(),
            max_rel_error: report.max_rel_error,
            threshold,
            worst: report.worst,
            checked: report.checked,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.threshold
    }
}

type Primitive = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn primitives() -> Vec<Primitive> {
    vec![
        ("affine", vec![vec![5], vec![3, 5], vec![3]], Box::new(|t, v| t.linear(v[0], v[1], Some(v[2])))),
        ("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("sigmoid", vec![vec![7]], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("tanh", vec![vec![7]], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("relu", vec![vec![7]], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("exp", vec![vec![7]], Box::new(|t, v| Ok(t.exp(v[0])))),
        (
            "conv2d",
            vec![vec![2, 7, 6], vec![3, 2, 3, 3], vec![3]],
            Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        (
            "conv_transpose2d",
            vec![vec![2, 3, 4], vec![2, 3, 3, 3], vec![3]],
            Box::new(|t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 1)),
        ),
        (
            "lstm_step",
            vec![vec![3], vec![4], vec![4], vec![16, 3], vec![16, 4], vec![16]],
            Box::new(|t, v| {
                let w = LstmWeights {
                    w_ih: v[3],
                    w_hh: v[4],
                    bias: v[5],
                };
                let (h, c) = lstm_step(t, v[0], v[1], v[2], &w)?;
                t.concat(&[h, c], vec![8])
            }),
        ),
        (
            "lstm_cell",
            vec![vec![8], vec![2]],
            Box::new(|t, v| {
                let (h, c) = lstm_cell(t, v[0], v[1])?;
                t.add(h, c)
            }),
        ),
        ("sum_sq_diff", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| t.sum_sq_diff(v[0], v[1]))),
        (
            "kl",
            vec![vec![5], vec![5]],
            Box::new(|t, v| {
                let sigma = t.exp(v[1]);
                t.kl(v[0], sigma, KlVariant::Standard)
            }),
        ),
        (
            "bce",
            vec![vec![1]],
            Box::new(|t, v| {
                let p = t.sigmoid(v[0]);
                t.bce(p, 1.0)
            }),
        ),
    ]
}

/// Central differences with `h = 1e-6` against every primitive.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckRow>> {
    primitives()
        .into_iter()
        .map(|(name, shapes, f)| {
            let report = grad_check(&shapes, seed, PRIMITIVE_STEP, f)?;
            Ok(CheckRow::new(name, report, PRIMITIVE_TOLERANCE))
        })
        .collect()
}

/// Small configuration exercising every layer type of the full model.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        time_steps: 6,
        cells: 3,
        img_h: 8,
        img_w: 8,
        img_c: 1,
        hidden: 3,
        img_code: 2,
        latent: 3,
        mask_scale_b: 0.75,
        enc_channels: vec![2, 3],
        img_fc_hidden: 4,
        dec_fc_hidden: 4,
        dec_channels: vec![2, 2],
        detector_hidden: vec![3, 2],
    }
}

/// Gradient of the weighted autoencoder loss plus the detector loss with
/// respect to every parameter of a reduced model.
pub fn model_check(seed: u64) -> Result<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = loop {
        let case = ModelCase::draw(&mut rng)?;
        // same rule as the primitive checks: stay 1e-3 away from relu kinks
        if case.relu_margin()? >= KINK_MARGIN {
            break case;
        }
    };
    let ModelCase { mut model, seq, img, eps } = case;
    let weights = LossWeights::default();
    let frozen = model.clone();
    let report = grad_check_params_with(model.params_mut(), Stencil::FivePoint, MODEL_STEP, |tape, ps| {
        let mut m = frozen.clone();
        *m.params_mut() = ps.clone();
        objective(&m, tape, &seq, &img, &eps, weights)
    })?;
    Ok(CheckRow::new("full_model", report, MODEL_TOLERANCE))
}

const KINK_MARGIN: f64 = 1e-3;

struct ModelCase {
    model: FmAe,
    seq: Tensor,
    img: Tensor,
    eps: Vec<f64>,
}

impl ModelCase {
    fn draw(rng: &mut ChaCha8Rng) -> Result<Self> {
        let cfg = tiny_model_config();
        let mut model = FmAe::new(cfg.clone(), Init::Random { seed: rng.gen() })?;
        // nonzero biases keep relu inputs off the kink; wider weights keep
        // deep gradients well above roundoff
        for p in model.params_mut().iter_mut() {
            for v in p.tensor.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let seq = Tensor::new(
            vec![cfg.time_steps, cfg.cells],
            (0..cfg.time_steps * cfg.cells).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )?;
        let img = Tensor::new(
            vec![cfg.img_c, cfg.img_h, cfg.img_w],
            (0..cfg.pixels()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )?;
        let eps = sample_epsilon(rng, cfg.latent);
        Ok(ModelCase { model, seq, img, eps })
    }

    fn relu_margin(&self) -> Result<f64> {
        let mut tape = Tape::new();
        objective(&self.model, &mut tape, &self.seq, &self.img, &self.eps, LossWeights::default())?;
        Ok(tape.relu_margin().unwrap_or(f64::INFINITY))
    }
}

fn objective(m: &FmAe, tape: &mut Tape, seq: &Tensor, img: &Tensor, eps: &[f64], w: LossWeights) -> Result<Var> {
    let out = m.forward_train(tape, seq, img, eps, w, KlVariant::Standard)?;
    let latent = m.encode(tape, seq, img, Ablation::None)?;
    let p = m.detect(tape, latent)?;
    let bce = loss_detector(tape, p, 1)?;
    tape.add(out.total, bce)
}

pub fn gradient_self_check(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = primitive_checks(seed)?;
    rows.push(model_check(seed)?);
    Ok(rows)
}
