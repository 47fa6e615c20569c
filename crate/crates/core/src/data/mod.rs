//! Synthetic paired (voltage, infrared) samples.
//!
//! Every sample draws from its own ChaCha8 substreams keyed by
//! `(seed, index)`, so content never depends on generation order. Scenario,
//! voltage and image use separate substreams, which means a distractor that
//! only touches one modality leaves the other one distributed exactly as in
//! a normal sample.

mod io;

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{read_image_pgm, read_manifest, read_sequence_csv, write_image_pgm, write_manifest, write_sequence_csv};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Normal,
    PoorContact,
    WorkerDisturbance,
    MistOcclusion,
    PoorContactWithMist,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Normal,
        Scenario::PoorContact,
        Scenario::WorkerDisturbance,
        Scenario::MistOcclusion,
        Scenario::PoorContactWithMist,
    ];

    pub fn label(self) -> u8 {
        matches!(self, Scenario::PoorContact | Scenario::PoorContactWithMist) as u8
    }

    pub fn needs_target_cell(self) -> bool {
        self.label() == 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Normal => "normal",
            Scenario::PoorContact => "poor_contact",
            Scenario::WorkerDisturbance => "worker_disturbance",
            Scenario::MistOcclusion => "mist_occlusion",
            Scenario::PoorContactWithMist => "poor_contact_with_mist",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub seq_path: String,
    pub img_path: String,
    pub label: u8,
    pub scenario: Scenario,
}

/// A record together with its loaded tensors.
#[derive(Clone, Debug)]
pub struct Sample {
    pub record: SampleRecord,
    /// `[time_steps, cells]`
    pub seq: Tensor,
    /// `[1, height, width]`
    pub img: Tensor,
}

impl Sample {
    pub fn label(&self) -> u8 {
        self.record.label
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub anomaly_rate: f64,
    pub distractor_rate: f64,
    pub base_voltage_range: (f64, f64),
    pub jitter_amp_range: (f64, f64),
    pub hotspot_gain_range: (f64, f64),
    pub time_steps: usize,
    pub cells: usize,
    pub img_h: usize,
    pub img_w: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            n_samples: 100,
            anomaly_rate: 0.3,
            distractor_rate: 0.3,
            base_voltage_range: (3.0, 3.4),
            jitter_amp_range: (0.05, 0.2),
            hotspot_gain_range: (0.3, 0.6),
            time_steps: 60,
            cells: 16,
            img_h: 64,
            img_w: 64,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Parameter("n_samples must be positive".into()));
        }
        for (name, r) in [("anomaly_rate", self.anomaly_rate), ("distractor_rate", self.distractor_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        for (name, (lo, hi)) in [
            ("base_voltage_range", self.base_voltage_range),
            ("jitter_amp_range", self.jitter_amp_range),
            ("hotspot_gain_range", self.hotspot_gain_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Parameter(format!("{name} must be ordered, got [{lo}, {hi}]")));
            }
        }
        if self.time_steps < 2 || self.cells == 0 {
            return Err(Error::Parameter("need at least 2 time steps and 1 cell".into()));
        }
        if self.img_w < self.cells || self.img_h == 0 {
            return Err(Error::Parameter(format!(
                "image width {} cannot hold {} cell bands",
                self.img_w, self.cells
            )));
        }
        Ok(())
    }
}

const DRIFT_AMP: f64 = 0.02;
const VOLTAGE_NOISE: f64 = 0.005;
const OFFSET_RANGE: (f64, f64) = (0.05, 0.3);
const PULSE_RANGE: (f64, f64) = (0.1, 0.3);
const PULSE_LEN: (usize, usize) = (3, 8);

const BAND_LEVEL: f64 = 0.35;
const GAP_LEVEL: f64 = 0.3;
const GRADIENT_AMP: f64 = 0.05;
const PIXEL_NOISE: f64 = 0.02;
const HOTSPOT_STD: f64 = 3.0;
const MIST_WIDTH: (f64, f64) = (0.1, 0.4);
const MIST_FACTOR: (f64, f64) = (0.2, 0.6);
const MIST_HAZE: f64 = 0.1;

// noise is truncated at 4 sigma so every value stays inside fixed bounds
fn clipped_normal(rng: &mut impl Rng, std: f64) -> f64 {
    let v: f64 = Normal::new(0.0, std).expect("positive std").sample(rng);
    v.clamp(-4.0 * std, 4.0 * std)
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn check_target(cfg: &GeneratorConfig, scenario: Scenario, cell: Option<usize>) -> Result<Option<usize>> {
    match (scenario.needs_target_cell(), cell) {
        (true, None) => Err(Error::Parameter(format!("scenario {scenario} needs a target cell"))),
        (_, Some(c)) if c >= cfg.cells => Err(Error::Parameter(format!(
            "target cell {c} out of range for {} cells",
            cfg.cells
        ))),
        (true, c) => Ok(c),
        (false, _) => Ok(None),
    }
}

/// Voltage matrix `[time_steps, cells]` for one scenario.
pub fn synth_voltage(rng: &mut impl Rng, cfg: &GeneratorConfig, scenario: Scenario, cell: Option<usize>) -> Result<Tensor> {
    let target = check_target(cfg, scenario, cell)?;
    let (t_len, cells) = (cfg.time_steps, cfg.cells);
    let mut v = vec![0.0; t_len * cells];
    for c in 0..cells {
        let base = uniform(rng, cfg.base_voltage_range);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for t in 0..t_len {
            let drift = DRIFT_AMP * (std::f64::consts::TAU * t as f64 / t_len as f64 + phase).sin();
            v[t * cells + c] = base + drift + clipped_normal(rng, VOLTAGE_NOISE);
        }
    }
    match scenario {
        Scenario::PoorContact | Scenario::PoorContactWithMist => {
            let c = target.expect("checked");
            let offset = uniform(rng, OFFSET_RANGE);
            let amp = uniform(rng, cfg.jitter_amp_range);
            for t in 0..t_len {
                // per-step amplitude wobble spreads the tone over the bins next to Nyquist
                let wobble = rng.gen_range(0.8..1.2);
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                v[t * cells + c] += offset + sign * amp * wobble;
            }
        }
        Scenario::WorkerDisturbance => {
            let n_cols = rng.gen_range(1..=3.min(cells));
            let cols = rand::seq::index::sample(rng, cells, n_cols);
            for c in cols.iter() {
                let height = uniform(rng, PULSE_RANGE);
                let len = rng.gen_range(PULSE_LEN.0..=PULSE_LEN.1).min(t_len);
                let start = rng.gen_range(0..=t_len - len);
                for t in start..start + len {
                    v[t * cells + c] += height;
                }
            }
        }
        Scenario::Normal | Scenario::MistOcclusion => {}
    }
    Tensor::new(vec![t_len, cells], v)
}

fn band_width(cfg: &GeneratorConfig) -> usize {
    cfg.img_w / cfg.cells
}

/// Column range `[start, end)` of a cell's band.
pub fn band_columns(cfg: &GeneratorConfig, cell: usize) -> (usize, usize) {
    let w = band_width(cfg);
    (cell * w, (cell + 1) * w)
}

/// Infrared image `[1, img_h, img_w]` for one scenario, clamped to `[0, 1]`.
pub fn synth_image(rng: &mut impl Rng, cfg: &GeneratorConfig, scenario: Scenario, cell: Option<usize>) -> Result<Tensor> {
    let target = check_target(cfg, scenario, cell)?;
    let (h, w) = (cfg.img_h, cfg.img_w);
    let bw = band_width(cfg);
    let slope = rng.gen_range(-GRADIENT_AMP..GRADIENT_AMP);
    let mut img = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let in_gap = bw > 1 && (x % bw == bw - 1 || x >= bw * cfg.cells);
            let level = if in_gap { GAP_LEVEL } else { BAND_LEVEL };
            let ramp = if w > 1 { 2.0 * x as f64 / (w - 1) as f64 - 1.0 } else { 0.0 };
            img[y * w + x] = level + slope * ramp + clipped_normal(rng, PIXEL_NOISE);
        }
    }
    if let Some(c) = target {
        let gain = uniform(rng, cfg.hotspot_gain_range);
        let (x0, x1) = band_columns(cfg, c);
        let cx = 0.5 * (x0 + x1 - 1) as f64;
        let cy = rng.gen_range(0.25 * h as f64..0.75 * h as f64);
        let denom = 2.0 * HOTSPOT_STD * HOTSPOT_STD;
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                img[y * w + x] += gain * (-d2 / denom).exp();
            }
        }
    }
    if matches!(scenario, Scenario::MistOcclusion | Scenario::PoorContactWithMist) {
        let a = 0.5 * uniform(rng, MIST_WIDTH) * w as f64;
        let b = 0.5 * uniform(rng, MIST_WIDTH) * h as f64;
        let factor = uniform(rng, MIST_FACTOR);
        // with an anomaly the mist sits over the hot cell, hiding its hotspot
        let cx = match target {
            Some(c) => {
                let (x0, x1) = band_columns(cfg, c);
                0.5 * (x0 + x1 - 1) as f64
            }
            None => rng.gen_range(0.0..w as f64),
        };
        let cy = rng.gen_range(0.25 * h as f64..0.75 * h as f64);
        for y in 0..h {
            for x in 0..w {
                let r = ((x as f64 - cx) / a).powi(2) + ((y as f64 - cy) / b).powi(2);
                if r <= 1.0 {
                    let p = &mut img[y * w + x];
                    *p = *p * factor + MIST_HAZE;
                }
            }
        }
    }
    img.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    Tensor::new(vec![1, h, w], img)
}

pub const SCENARIO_STREAM: u64 = 0;
pub const VOLTAGE_STREAM: u64 = 1;
pub const IMAGE_STREAM: u64 = 2;
const STREAMS_PER_SAMPLE: u64 = 4;

/// Independent generator for one `(seed, sample index, purpose)` triple.
pub fn substream(seed: u64, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 * STREAMS_PER_SAMPLE + purpose);
    rng
}

/// Scenario and target cell of sample `index`.
pub fn draw_scenario(cfg: &GeneratorConfig, index: usize) -> (Scenario, Option<usize>) {
    let mut rng = substream(cfg.seed, index, SCENARIO_STREAM);
    let anomaly = rng.gen::<f64>() < cfg.anomaly_rate;
    let scenario = if anomaly {
        if rng.gen::<bool>() {
            Scenario::PoorContactWithMist
        } else {
            Scenario::PoorContact
        }
    } else if rng.gen::<f64>() < cfg.distractor_rate {
        if rng.gen::<bool>() {
            Scenario::MistOcclusion
        } else {
            Scenario::WorkerDisturbance
        }
    } else {
        Scenario::Normal
    };
    let cell = rng.gen_range(0..cfg.cells);
    (scenario, scenario.needs_target_cell().then_some(cell))
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Sample `index` of the dataset described by `cfg`, in memory.
pub fn generate_sample(cfg: &GeneratorConfig, index: usize) -> Result<Sample> {
    let (scenario, cell) = draw_scenario(cfg, index);
    let seq = synth_voltage(&mut substream(cfg.seed, index, VOLTAGE_STREAM), cfg, scenario, cell)?;
    let img = synth_image(&mut substream(cfg.seed, index, IMAGE_STREAM), cfg, scenario, cell)?;
    let id = sample_id(index);
    Ok(Sample {
        record: SampleRecord {
            seq_path: format!("seq/{id}.csv"),
            img_path: format!("img/{id}.pgm"),
            id,
            label: scenario.label(),
            scenario,
        },
        seq,
        img,
    })
}

pub fn generate_samples(cfg: &GeneratorConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.n_samples).map(|i| generate_sample(cfg, i)).collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes every sample plus `manifest.jsonl` under `out_dir`.
pub fn generate_dataset(cfg: &GeneratorConfig, out_dir: &Path) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    create_dir(&out_dir.join("seq"))?;
    create_dir(&out_dir.join("img"))?;
    let mut records = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let s = generate_sample(cfg, i)?;
        write_sequence_csv(&out_dir.join(&s.record.seq_path), &s.seq)?;
        write_image_pgm(&out_dir.join(&s.record.img_path), &s.img)?;
        records.push(s.record);
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

/// Reads the manifest under `dir` and every file it references.
pub fn load_dataset(dir: &Path, time_steps: usize, cells: usize) -> Result<Vec<Sample>> {
    let records = read_manifest(&dir.join(MANIFEST_FILE))?;
    records
        .into_iter()
        .map(|record| {
            let seq = read_sequence_csv(&dir.join(&record.seq_path), time_steps, cells)?;
            let img = read_image_pgm(&dir.join(&record.img_path))?;
            Ok(Sample { record, seq, img })
        })
        .collect()
}
