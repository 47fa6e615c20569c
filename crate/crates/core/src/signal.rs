//! Frequency-masked features of a voltage sequence.
//!
//! Each cell column is transformed with a DFT, rotated so the DC bin sits at
//! the centre index, reduced to magnitudes and multiplied by a Laplace-shaped
//! mask that is zero at DC and rises towards 1 at the spectrum edges. Only
//! high-frequency content survives, which is where poor contact shows up as
//! jitter.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Complex spectrum stored as parallel real/imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub shifted: bool,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect()
    }
}

/// `X[k] = Σ_n x[n]·exp(−2πi·kn/N)`, evaluated directly with an exact
/// twiddle table indexed by `kn mod N`.
pub fn dft_1d(x: &[f64]) -> Result<Spectrum> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Parameter("dft of an empty sequence".into()));
    }
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        let mut idx = 0;
        for &v in x {
            sr += v * cos[idx];
            si -= v * sin[idx];
            idx += k;
            if idx >= n {
                idx -= n;
            }
        }
        re[k] = sr;
        im[k] = si;
    }
    Ok(Spectrum { re, im, shifted: false })
}

/// Rotates an unshifted spectrum so that DC lands at index `floor(N/2)`:
/// `shifted[i] = s[(i + ceil(N/2)) mod N]`.
pub fn fft_shift(s: &Spectrum) -> Result<Spectrum> {
    if s.shifted {
        return Err(Error::Contract("spectrum is already shifted".into()));
    }
    let n = s.len();
    let offset = n.div_ceil(2);
    let rot = |v: &[f64]| (0..n).map(|i| v[(i + offset) % n]).collect::<Vec<_>>();
    Ok(Spectrum {
        re: rot(&s.re),
        im: rot(&s.im),
        shifted: true,
    })
}

/// Laplace-shaped high-pass weights over a centred spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMask {
    pub values: Vec<f64>,
    pub scale_b: f64,
    pub center: usize,
}

/// `m[i] = 1 − exp(−|i − floor(N/2)| / b)`.
pub fn laplace_mask(n: usize, scale_b: f64) -> Result<FrequencyMask> {
    if n == 0 {
        return Err(Error::Parameter("mask length must be positive".into()));
    }
    if !(scale_b > 0.0 && scale_b.is_finite()) {
        return Err(Error::Parameter(format!("mask scale must be positive, got {scale_b}")));
    }
    let center = n / 2;
    let values = (0..n)
        .map(|i| 1.0 - (-(i.abs_diff(center) as f64) / scale_b).exp())
        .collect();
    Ok(FrequencyMask { values, scale_b, center })
}

/// Default mask scale for a sequence of length `n`.
pub fn default_mask_scale(n: usize) -> f64 {
    n as f64 / 8.0
}

/// Masked, centred magnitude spectrum of every column of a `T×n_s` matrix.
/// The output has the same shape and is nonnegative.
pub fn frequency_masked_features(v: &Tensor, scale_b: f64) -> Result<Tensor> {
    let (t, cells) = match v.shape() {
        [t, c] => (*t, *c),
        s => return Err(Error::Shape(format!("voltage sequence must be a matrix, got {s:?}"))),
    };
    if !v.is_finite() {
        return Err(Error::Parameter("voltage sequence contains non-finite values".into()));
    }
    let mask = laplace_mask(t, scale_b)?;
    let mut out = vec![0.0; t * cells];
    let mut column = vec![0.0; t];
    for c in 0..cells {
        for (r, slot) in column.iter_mut().enumerate() {
            *slot = v.data()[r * cells + c];
        }
        let spec = fft_shift(&dft_1d(&column)?)?;
        for (r, (mag, m)) in spec.magnitudes().into_iter().zip(&mask.values).enumerate() {
            out[r * cells + c] = m * mag;
        }
    }
    Tensor::new(vec![t, cells], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_impulse() {
        let s = dft_1d(&[2.5; 6]).unwrap();
        assert!((s.re[0] - 15.0).abs() < 1e-12);
        for k in 1..6 {
            assert!(s.re[k].abs() < 1e-12 && s.im[k].abs() < 1e-12);
        }
        let s = dft_1d(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.re, vec![1.0; 4]);
        assert!(s.im.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(dft_1d(&[]), Err(Error::Parameter(_))));
    }

    #[test]
    fn shift_rotations() {
        let sp = |v: Vec<f64>| Spectrum { im: vec![0.0; v.len()], re: v, shifted: false };
        assert_eq!(fft_shift(&sp(vec![1., 2., 3., 4.])).unwrap().re, vec![3., 4., 1., 2.]);
        assert_eq!(fft_shift(&sp(vec![1., 2., 3., 4., 5.])).unwrap().re, vec![4., 5., 1., 2., 3.]);
        let once = fft_shift(&sp(vec![1., 2., 3.])).unwrap();
        assert!(matches!(fft_shift(&once), Err(Error::Contract(_))));
    }

    #[test]
    fn mask_values() {
        let m = laplace_mask(60, 7.5).unwrap();
        assert_eq!(m.center, 30);
        assert_eq!(m.values[30], 0.0);
        assert!((m.values[0] - (1.0 - (-4.0f64).exp())).abs() < 1e-15);
        assert!((m.values[0] - 0.98168).abs() < 1e-5);
        assert_eq!(m.values[27], m.values[33]);
        assert!(matches!(laplace_mask(8, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(laplace_mask(8, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn default_scale_for_sixty_steps() {
        assert_eq!(default_mask_scale(60), 7.5);
    }
}
