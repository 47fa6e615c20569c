use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{KlVariant, Tape, Var};

/// Weights of the three autoencoder objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-sample values of every loss term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec_seq: f64,
    pub rec_img: f64,
    pub kl: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn new(rec_seq: f64, rec_img: f64, kl: f64, weights: LossWeights) -> Self {
        LossBreakdown {
            rec_seq,
            rec_img,
            kl,
            total: weighted_total(rec_seq, rec_img, kl, weights),
            weights,
        }
    }

    /// Total recomputed from the parts.
    pub fn recompute_total(&self) -> f64 {
        weighted_total(self.rec_seq, self.rec_img, self.kl, self.weights)
    }
}

/// `α·rec_seq + β·rec_img + γ·kl`, with the KL term omitted when `γ = 0`.
pub fn weighted_total(rec_seq: f64, rec_img: f64, kl: f64, w: LossWeights) -> f64 {
    let recon = rec_seq * w.alpha + rec_img * w.beta;
    if w.gamma == 0.0 {
        recon
    } else {
        recon + kl * w.gamma
    }
}

/// Sum of squared differences over every time step and cell of one sample.
pub fn loss_rec_seq(tape: &mut Tape, seq_hat: Var, target: Var) -> Result<Var> {
    tape.sum_sq_diff(seq_hat, target)
}

/// Sum of squared differences over every pixel of one sample.
pub fn loss_rec_img(tape: &mut Tape, img_hat: Var, target: Var) -> Result<Var> {
    tape.sum_sq_diff(img_hat, target)
}

pub fn loss_kl(tape: &mut Tape, mu: Var, sigma: Var, variant: KlVariant) -> Result<Var> {
    tape.kl(mu, sigma, variant)
}

/// Records the weighted total on the tape, using the same evaluation order
/// as [`weighted_total`].
pub fn loss_total(tape: &mut Tape, rec_seq: Var, rec_img: Var, kl: Var, w: LossWeights) -> Result<Var> {
    w.validate()?;
    let a = tape.scale(rec_seq, w.alpha);
    let b = tape.scale(rec_img, w.beta);
    let recon = tape.add(a, b)?;
    if w.gamma == 0.0 {
        return Ok(recon);
    }
    let c = tape.scale(kl, w.gamma);
    tape.add(recon, c)
}

pub fn loss_detector(tape: &mut Tape, p: Var, label: u8) -> Result<Var> {
    tape.bce(p, f64::from(label))
}

/// Value-only KL, `½Σ(μ² + σ² − c·ln σ − 1)` with `c = 2` for the standard
/// form and `c = 1` for the verbatim form.
pub fn kl_divergence(mu: &[f64], sigma: &[f64], variant: KlVariant) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape(format!(
            "kl: mu has {} entries, sigma has {}",
            mu.len(),
            sigma.len()
        )));
    }
    crate::tensor::tape_kl_value(mu, sigma, variant)
}

/// Binary cross-entropy with the probability clamped to `[1e-12, 1 − 1e-12]`.
pub fn binary_cross_entropy(p: f64, label: u8) -> f64 {
    crate::tensor::tape_bce_value(p, f64::from(label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn weighted_total_forced_arithmetic() {
        let w = LossWeights { alpha: 1.0, beta: 2.0, gamma: 3.0 };
        assert_eq!(weighted_total(1.0, 1.0, 1.0, w), 6.0);
        let w0 = LossWeights { gamma: 0.0, ..w };
        assert_eq!(weighted_total(1.0, 1.0, 1e300, w0), 3.0);
        assert_eq!(weighted_total(1.0, 1.0, f64::NAN, w0), 3.0);
    }

    #[test]
    fn tape_total_matches_value_total() {
        let w = LossWeights { alpha: 0.7, beta: 1.3, gamma: 0.1 };
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(12.345));
        let b = tape.constant(Tensor::scalar(0.678));
        let c = tape.constant(Tensor::scalar(-0.0912));
        let t = loss_total(&mut tape, a, b, c, w).unwrap();
        assert_eq!(tape.scalar(t), weighted_total(12.345, 0.678, -0.0912, w));
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights { alpha: -1.0, beta: 1.0, gamma: 0.0 };
        assert!(w.validate().is_err());
    }

    #[test]
    fn kl_forced_values() {
        for v in [KlVariant::Standard, KlVariant::PaperVerbatim] {
            assert_eq!(kl_divergence(&[0.0; 4], &[1.0; 4], v).unwrap(), 0.0);
            assert_eq!(kl_divergence(&[1.0], &[1.0], v).unwrap(), 0.5);
        }
        assert!(matches!(
            kl_divergence(&[0.0], &[0.0], KlVariant::Standard),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            kl_divergence(&[0.0], &[-1.0], KlVariant::PaperVerbatim),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn bce_forced_values() {
        assert!((binary_cross_entropy(0.5, 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((binary_cross_entropy(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((binary_cross_entropy(0.9, 1) - 0.10536).abs() < 1e-5);
        assert!(binary_cross_entropy(1.0, 1) < 1e-11);
        assert!(binary_cross_entropy(0.0, 0) < 1e-11);
        assert!(binary_cross_entropy(0.0, 1).is_finite());
    }
}
