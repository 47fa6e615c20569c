use std::f64::consts::PI;

use fmae::signal::{dft_1d, fft_shift, frequency_masked_features, laplace_mask};
use fmae::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook O(N²) DFT with the angle evaluated per term.
fn direct_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        for (j, v) in x.iter().enumerate() {
            let a = -2.0 * PI * (k * j) as f64 / n as f64;
            re[k] += v * a.cos();
            im[k] += v * a.sin();
        }
    }
    (re, im)
}

fn random_matrix(rng: &mut ChaCha8Rng, t: usize, c: usize) -> Vec<f64> {
    (0..t * c).map(|_| 3.2 + rng.gen_range(-0.2..0.2)).collect()
}

#[test]
fn dft_matches_direct_sum_for_required_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for &n in &[4usize, 8, 15, 60, 64] {
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s = dft_1d(&x).unwrap();
            let (re, im) = direct_dft(&x);
            for k in 0..n {
                assert!((s.re[k] - re[k]).abs() <= 1e-9);
                assert!((s.im[k] - im[k]).abs() <= 1e-9);
            }
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = s.magnitudes().iter().map(|m| m * m).sum::<f64>() / n as f64;
            assert!((time - freq).abs() <= 1e-9 * time);
        }
    }
}

#[test]
fn constant_columns_vanish() {
    let mut data = vec![0.0; 60 * 16];
    for r in 0..60 {
        for c in 0..16 {
            data[r * 16 + c] = 3.0 + 0.01 * c as f64;
        }
    }
    let f = frequency_masked_features(&Tensor::new(vec![60, 16], data).unwrap(), 7.5).unwrap();
    assert!(f.data().iter().all(|v| v.abs() <= 1e-9));
}

#[test]
fn alternating_signal_spikes_at_edge_bin() {
    let a = 0.13;
    let x: Vec<f64> = (0..60).map(|t| if t % 2 == 0 { a } else { -a }).collect();
    let (re, im) = direct_dft(&x);
    for k in 0..60 {
        let mag = re[k].hypot(im[k]);
        if k == 30 {
            assert!((mag - 60.0 * a).abs() < 1e-9);
        } else {
            assert!(mag < 1e-9);
        }
    }
    let f = frequency_masked_features(&Tensor::new(vec![60, 1], x).unwrap(), 7.5).unwrap();
    let m0 = laplace_mask(60, 7.5).unwrap().values[0];
    assert!((f.data()[0] - 60.0 * a * m0).abs() < 1e-9);
    assert!(f.data()[1..].iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn non_matrix_input_rejected() {
    assert!(frequency_masked_features(&Tensor::zeros(vec![60]), 7.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn column_offset_invariance(seed in any::<u64>(), col in 0usize..16, offset in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_matrix(&mut rng, 60, 16);
        let mut moved = data.clone();
        for r in 0..60 {
            moved[r * 16 + col] += offset;
        }
        let a = frequency_masked_features(&Tensor::new(vec![60, 16], data).unwrap(), 7.5).unwrap();
        let b = frequency_masked_features(&Tensor::new(vec![60, 16], moved).unwrap(), 7.5).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn masked_energy_bounded_by_spectral_energy(seed in any::<u64>(), b in 0.5f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let raw: f64 = dft_1d(&x).unwrap().magnitudes().iter().map(|m| m * m).sum();
        let f = frequency_masked_features(&Tensor::new(vec![60, 1], x).unwrap(), b).unwrap();
        let masked: f64 = f.data().iter().map(|m| m * m).sum();
        prop_assert!(masked <= raw + 1e-12);
        prop_assert!(f.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn dft_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, n in 1usize..70) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (sx, sy, sm) = (dft_1d(&x).unwrap(), dft_1d(&y).unwrap(), dft_1d(&mix).unwrap());
        for k in 0..n {
            prop_assert!((sm.re[k] - (a * sx.re[k] + b * sy.re[k])).abs() <= 1e-9);
            prop_assert!((sm.im[k] - (a * sx.im[k] + b * sy.im[k])).abs() <= 1e-9);
        }
    }

    #[test]
    fn shift_puts_dc_in_the_middle(seed in any::<u64>(), n in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = dft_1d(&x).unwrap();
        let sh = fft_shift(&s).unwrap();
        prop_assert!(sh.shifted);
        prop_assert_eq!(sh.re[n / 2], s.re[0]);
        prop_assert_eq!(sh.im[n / 2], s.im[0]);
    }

    #[test]
    fn mask_shape_properties(n in 1usize..128, b in 0.1f64..40.0) {
        let m = laplace_mask(n, b).unwrap();
        let c = n / 2;
        prop_assert_eq!(m.values[c], 0.0);
        for j in 1..=c {
            if c + j < n {
                prop_assert_eq!(m.values[c - j], m.values[c + j]);
            }
            prop_assert!(m.values[c - j] >= m.values[c - j + 1]);
        }
        prop_assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn jitter_amplitude_scales_masked_features(amp in 0.01f64..0.5, k in 25usize..31) {
        let tone = |a: f64| -> Vec<f64> {
            (0..60).map(|t| 3.2 + a * (2.0 * PI * (k * t) as f64 / 60.0).cos()).collect()
        };
        let f1 = frequency_masked_features(&Tensor::new(vec![60, 1], tone(amp)).unwrap(), 7.5).unwrap();
        let f2 = frequency_masked_features(&Tensor::new(vec![60, 1], tone(2.0 * amp)).unwrap(), 7.5).unwrap();
        for (x, y) in f1.data().iter().zip(f2.data()) {
            prop_assert!((2.0 * x - y).abs() <= 1e-9);
        }
    }
}
