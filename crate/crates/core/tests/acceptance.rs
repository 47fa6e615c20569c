//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any of them fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use fmae::data::{
    generate_dataset, load_dataset, read_image_pgm, read_sequence_csv, write_image_pgm, write_sequence_csv,
    GeneratorConfig, Sample,
};
use fmae::model::{kl_divergence, sample_epsilon, Ablation, FmAe, Init, ModelConfig};
use fmae::selfcheck::gradient_self_check;
use fmae::signal::{dft_1d, frequency_masked_features};
use fmae::tensor::{KlVariant, Tape, Tensor};
use fmae::train::{
    compute_metrics, evaluate, f1_score, load_checkpoint, pretrain, save_checkpoint, train_detector, Checkpoint,
    Confusion, EvalReport, Stage, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(checks: &[(bool, String)]) -> Outcome {
    Outcome {
        ok: checks.iter().all(|c| c.0),
        detail: checks
            .iter()
            .map(|(ok, d)| format!("{}{d}", if *ok { "" } else { "[x] " }))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn gradient_fidelity() -> Outcome {
    let t0 = Instant::now();
    let rows = gradient_self_check(1).expect("self check runs");
    let elapsed = t0.elapsed();
    let mut checks: Vec<(bool, String)> = rows
        .iter()
        .filter(|r| !r.passed() || r.name == "full_model")
        .map(|r| (r.passed(), format!("{} {:.2e} <= {:.0e}", r.name, r.max_rel_error, r.threshold)))
        .collect();
    let worst = rows
        .iter()
        .filter(|r| r.name != "full_model")
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    checks.push((worst <= 1e-6, format!("primitives max {worst:.2e}")));
    checks.push((elapsed < Duration::from_secs(60), format!("{:.1}s", elapsed.as_secs_f64())));
    outcome(&checks)
}

fn dft_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_abs = 0.0f64;
    let mut max_parseval = 0.0f64;
    for &n in &[4usize, 8, 15, 60, 64] {
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = dft_1d(&x).unwrap();
            for k in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * j) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                max_abs = max_abs.max((s.re[k] - re).abs()).max((s.im[k] - im).abs());
            }
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = (0..n).map(|k| s.re[k] * s.re[k] + s.im[k] * s.im[k]).sum::<f64>() / n as f64;
            max_parseval = max_parseval.max((time - freq).abs() / time);
        }
    }
    outcome(&[
        (max_abs <= 1e-9, format!("max abs err {max_abs:.2e}")),
        (max_parseval <= 1e-9, format!("Parseval rel err {max_parseval:.2e}")),
    ])
}

fn mask_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = fmae::signal::default_mask_scale(60);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<f64> = (0..60 * 16).map(|_| rng.gen_range(3.0..3.4)).collect();
        let mut y = x.clone();
        let col = rng.gen_range(0..16);
        let offset = rng.gen_range(-1.0..1.0);
        for r in 0..60 {
            y[r * 16 + col] += offset;
        }
        let fx = frequency_masked_features(&Tensor::new(vec![60, 16], x).unwrap(), b).unwrap();
        let fy = frequency_masked_features(&Tensor::new(vec![60, 16], y).unwrap(), b).unwrap();
        for (a, c) in fx.data().iter().zip(fy.data()) {
            worst = worst.max((a - c).abs());
        }
    }
    outcome(&[(worst <= 1e-9, format!("max change {worst:.2e}"))])
}

fn reparameterization() -> Outcome {
    let cfg = ModelConfig::default();
    let model = FmAe::new(cfg.clone(), Init::Random { seed: 4 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut nonzero = 0usize;
    for _ in 0..10_000 {
        let latent: Vec<f64> = (0..cfg.latent).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let eps = sample_epsilon(&mut rng, cfg.latent);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(latent));
        let (_, c) = model.reparameterize(&mut tape, z, &eps).unwrap();
        nonzero += (0..cfg.latent).filter(|&i| c.r_m[i] - (c.mu[i] + c.sigma[i] * c.epsilon[i]) != 0.0).count();
    }

    let latent: Vec<f64> = (0..cfg.latent).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = 100_000;
    let mut sum = vec![0.0; cfg.latent];
    let mut reference = None;
    for _ in 0..n {
        let eps = sample_epsilon(&mut rng, cfg.latent);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(latent.clone()));
        let (_, c) = model.reparameterize(&mut tape, z, &eps).unwrap();
        for (s, v) in sum.iter_mut().zip(&c.r_m) {
            *s += v;
        }
        reference.get_or_insert((c.mu, c.sigma));
    }
    let (mu, sigma) = reference.unwrap();
    let worst = (0..cfg.latent)
        .map(|d| (sum[d] / n as f64 - mu[d]).abs() / (4.0 * sigma[d] / (n as f64).sqrt()))
        .fold(0.0, f64::max);
    outcome(&[
        (nonzero == 0, format!("{nonzero} nonzero residuals over 1e4 latents")),
        (worst <= 1.0, format!("MC mean within {worst:.2} of the 4-sigma bound")),
    ])
}

fn kl_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_std = f64::INFINITY;
    for _ in 0..10_000 {
        // spread shrinks toward the prior so draws near zero are covered
        let spread = rng.gen::<f64>().powi(4);
        let dims = rng.gen_range(1..9);
        let mu: Vec<f64> = (0..dims).map(|_| spread * rng.gen_range(-3.0..3.0)).collect();
        let sigma: Vec<f64> = (0..dims).map(|_| (spread * rng.gen_range(-4.0..4.0f64)).exp()).collect();
        min_std = min_std.min(kl_divergence(&mu, &sigma, KlVariant::Standard).unwrap());
    }
    let at_prior = kl_divergence(&[0.0; 8], &[1.0; 8], KlVariant::Standard).unwrap();

    let f = |s: f64| kl_divergence(&[0.0], &[s], KlVariant::PaperVerbatim).unwrap();
    let (mut lo, mut hi) = (1e-3f64, 10.0f64);
    let g = (5.0f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-12 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let found = f(0.5 * (lo + hi));
    let expected = (2.0f64.ln() - 1.0) / 4.0;
    outcome(&[
        (min_std >= -1e-12, format!("standard min {min_std:.3e}")),
        (at_prior == 0.0, format!("standard at prior {at_prior}")),
        ((found - expected).abs() <= 1e-6, format!("verbatim min {found:.8} vs {expected:.8}")),
    ])
}

fn metric_identities() -> Outcome {
    let f1 = f1_score(0.6373, 0.9769);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = 0usize;
    for _ in 0..1000 {
        let c = Confusion {
            tp: rng.gen_range(0..50),
            fp: rng.gen_range(0..50),
            fn_: rng.gen_range(0..50),
            tn: rng.gen_range(0..50),
        };
        let n = c.tp + c.fp + c.fn_ + c.tn;
        if n == 0 {
            continue;
        }
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (count, s, l) in [(c.tp, 0.75, 1u8), (c.fp, 0.5, 0), (c.fn_, 0.25, 1), (c.tn, 0.0, 0)] {
            scores.extend(std::iter::repeat(s).take(count as usize));
            labels.extend(std::iter::repeat(l).take(count as usize));
        }
        let m = compute_metrics(&scores, &labels, 0.5).unwrap();
        let p = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
        let r = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
        let ok = m.confusion == c
            && m.accuracy == (c.tp + c.tn) as f64 / n as f64
            && m.precision == p
            && m.recall == r
            && m.f1 == if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        bad += usize::from(!ok);
    }
    outcome(&[
        ((f1 - 0.7714).abs() <= 0.00005, format!("f1(0.6373, 0.9769) = {f1:.5}")),
        (bad == 0, format!("{bad} of 1000 confusions disagree")),
    ])
}

struct Run {
    pretrained: Vec<u8>,
    detector: Vec<u8>,
    reports: Vec<EvalReport>,
    first_loss: f64,
    last_loss: f64,
    elapsed: Duration,
}

fn end_to_end() -> Run {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let gen = GeneratorConfig {
        seed: 42,
        n_samples: 2500,
        anomaly_rate: 0.3,
        distractor_rate: 0.3,
        ..GeneratorConfig::default()
    };
    generate_dataset(&gen, dir.path()).unwrap();
    let model_cfg = ModelConfig::default();
    let all: Vec<Sample> = load_dataset(dir.path(), model_cfg.time_steps, model_cfg.cells).unwrap();
    let (train, test) = all.split_at(2000);
    let cfg = TrainConfig {
        seed: 42,
        ..TrainConfig::default()
    };
    let (pre, log) = pretrain(train, &model_cfg, &cfg).unwrap();
    let det_cfg = TrainConfig { epochs: 30, ..cfg };
    let (det, _) = train_detector(train, &pre, &det_cfg).unwrap();

    let pre_path = dir.path().join("pretrained.ckpt");
    let det_path = dir.path().join("detector.ckpt");
    save_checkpoint(&pre_path, &pre).unwrap();
    save_checkpoint(&det_path, &det).unwrap();
    let reports = [Ablation::None, Ablation::VoltageOnly, Ablation::ImageOnly]
        .into_iter()
        .map(|a| evaluate(test, &det, a).unwrap())
        .collect();
    Run {
        pretrained: fs::read(&pre_path).unwrap(),
        detector: fs::read(&det_path).unwrap(),
        reports,
        first_loss: log.epochs.first().unwrap().total,
        last_loss: log.epochs.last().unwrap().total,
        elapsed: t0.elapsed(),
    }
}

/// Splits a checkpoint file into its parameter tensors by name.
fn tensors(bytes: &[u8]) -> Vec<(String, Vec<u8>)> {
    let ck = Checkpoint::from_bytes(bytes, "memory").unwrap();
    let raw = ck.to_bytes();
    assert_eq!(raw, bytes);
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload = &bytes[16 + header_len..];
    let mut offset = 0;
    ck.model
        .params()
        .iter()
        .map(|p| {
            let n = 8 * p.tensor.len();
            let slice = payload[offset..offset + n].to_vec();
            offset += n;
            (p.name.clone(), slice)
        })
        .collect()
}

fn freeze(run: &Run) -> Outcome {
    let pre = tensors(&run.pretrained);
    let det = tensors(&run.detector);
    let mut changed_frozen = Vec::new();
    let mut detector_moved = false;
    for ((name, a), (name_b, b)) in pre.iter().zip(&det) {
        assert_eq!(name, name_b);
        if FmAe::is_detector_param(name) {
            detector_moved |= a != b;
        } else if a != b {
            changed_frozen.push(name.clone());
        }
    }
    let frozen = pre.iter().filter(|(n, _)| !FmAe::is_detector_param(n)).count();
    outcome(&[
        (changed_frozen.is_empty(), format!("{frozen} frozen tensors, changed: {changed_frozen:?}")),
        (detector_moved, "detector weights trained".to_string()),
    ])
}

fn synthetic_result(run: &Run) -> Outcome {
    let auc = |i: usize| run.reports[i].metrics.auc.unwrap_or(f64::NAN);
    let (multi, volt, img) = (auc(0), auc(1), auc(2));
    outcome(&[
        (multi >= 0.85, format!("multimodal AUC {multi:.4} >= 0.85")),
        (multi >= volt + 0.02, format!("voltage-only AUC {volt:.4} + 0.02 <= multimodal")),
        (multi >= img + 0.02, format!("image-only AUC {img:.4} + 0.02 <= multimodal")),
        (
            run.last_loss < run.first_loss,
            format!("pretrain loss {:.2} -> {:.2}", run.first_loss, run.last_loss),
        ),
        (
            run.elapsed <= Duration::from_secs(15 * 60),
            format!("{:.0}s", run.elapsed.as_secs_f64()),
        ),
    ])
}

fn determinism(first: &Run) -> Outcome {
    let second = end_to_end();
    let json = |r: &Run| r.reports.iter().map(EvalReport::to_json).collect::<String>();
    outcome(&[
        (first.pretrained == second.pretrained, "pretrained checkpoint identical".into()),
        (first.detector == second.detector, "detector checkpoint identical".into()),
        (json(first) == json(&second), "metrics JSON identical".into()),
    ])
}

fn round_trips(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = FmAe::new(ModelConfig::default(), Init::Random { seed: 10 }).unwrap();
    let ck = Checkpoint::new(Stage::Detector, model);
    let path = dir.join("rt.ckpt");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let ckpt_ok = back.stage == Stage::Detector
        && back
            .model
            .params()
            .iter()
            .zip(ck.model.params().iter())
            .all(|(a, b)| a.name == b.name && a.tensor == b.tensor)
        && back.to_bytes() == fs::read(&path).unwrap();

    let mut csv_ok = true;
    for i in 0..20 {
        let data: Vec<f64> = (0..60 * 16)
            .map(|_| match rng.gen_range(0..4) {
                0 => rng.gen_range(2.5..4.0),
                1 => f64::from_bits(rng.gen::<u64>() >> 2),
                2 => -rng.gen::<f64>() * 1e-300,
                _ => rng.gen_range(-1e12..1e12),
            })
            .collect();
        let v = Tensor::new(vec![60, 16], data).unwrap();
        let p = dir.join(format!("s{i}.csv"));
        write_sequence_csv(&p, &v).unwrap();
        let r = read_sequence_csv(&p, 60, 16).unwrap();
        csv_ok &= r.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let mut pgm_err = 0.0f64;
    for i in 0..20 {
        let mut data: Vec<f64> = (0..64 * 64).map(|_| rng.gen_range(0.0..=1.0)).collect();
        data[0] = 0.0;
        data[1] = 1.0;
        data[2] = 0.5;
        let img = Tensor::new(vec![1, 64, 64], data).unwrap();
        let p = dir.join(format!("i{i}.pgm"));
        write_image_pgm(&p, &img).unwrap();
        let r = read_image_pgm(&p).unwrap();
        for (a, b) in r.data().iter().zip(img.data()) {
            pgm_err = pgm_err.max((a - b).abs());
        }
    }
    outcome(&[
        (ckpt_ok, "checkpoint".into()),
        (csv_ok, "sequence CSV bit-exact".into()),
        (pgm_err <= 1.0 / 510.0 + 1e-15, format!("PGM max err {pgm_err:.5} <= 1/510")),
    ])
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!("{} criterion {n:>2} {name}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.ok);
    };
    report(1, "gradient fidelity", gradient_fidelity());
    report(2, "DFT oracle", dft_oracle());
    report(3, "frequency-mask invariance", mask_invariance());
    report(4, "reparameterization identity", reparameterization());
    report(5, "KL divergence", kl_checks());
    report(6, "metric identities", metric_identities());
    let run = end_to_end();
    report(7, "detector training freeze", freeze(&run));
    report(8, "end-to-end synthetic result", synthetic_result(&run));
    report(9, "determinism", determinism(&run));
    let dir = tempfile::tempdir().unwrap();
    report(10, "format round trips", round_trips(dir.path()));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
