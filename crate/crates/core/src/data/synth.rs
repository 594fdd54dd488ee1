//! Synthetic multi-sensor activity windows with controllable style shift.
//!
//! Every class owns, per (sensor, variable) channel, a mixture of two
//! sinusoids with class-specific integer frequencies (cycles per window).
//! Samples draw random phases, slight amplitude jitter and Gaussian noise.
//! A domain rescales and offsets every channel:
//!
//! ```text
//! x[c, t] = scale[d, c] * sum_j a_j sin(2 pi f_j t / L + phi_j) + offset[d, c] + noise
//! ```
//!
//! which changes only the first two moments of each channel.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub sensors: usize,
    pub variables: usize,
    pub length: usize,
    pub classes: usize,
    /// Windows per class in every domain.
    pub samples_per_class: usize,
    pub train_domains: usize,
    pub val_domains: usize,
    /// Standard deviation of additive noise.
    pub noise: f64,
    /// Training/validation domains draw per-channel scales in `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// ... and per-channel offsets in `± offset_jitter`.
    pub offset_jitter: f64,
    /// Style of the held-out test domain.
    pub test_scale: f64,
    pub test_offset: f64,
    /// Train, validation and test come from disjoint domains. Otherwise all
    /// three are drawn from the training domains.
    pub domain_disjoint: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            sensors: 4,
            variables: 3,
            length: 128,
            classes: 6,
            samples_per_class: 40,
            train_domains: 4,
            val_domains: 1,
            noise: 0.1,
            scale_jitter: 0.3,
            offset_jitter: 0.3,
            test_scale: 2.0,
            test_offset: 0.5,
            domain_disjoint: true,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

struct Component {
    freq: f64,
    amp: f64,
}

struct Style {
    scale: Vec<f64>,
    offset: Vec<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn templates(cfg: &GenConfig) -> Vec<Vec<[Component; 2]>> {
    let mut rng = stream(cfg.seed, 1);
    let ch = cfg.sensors * cfg.variables;
    (0..cfg.classes)
        .map(|_| {
            (0..ch)
                .map(|_| {
                    let f0 = rng.random_range(1..=8u32);
                    let mut f1 = rng.random_range(1..=7u32);
                    if f1 >= f0 {
                        f1 += 1;
                    }
                    [f0, f1].map(|f| Component {
                        freq: f as f64,
                        amp: rng.random_range(0.4..1.0),
                    })
                })
                .collect()
        })
        .collect()
}

fn random_style<R: Rng>(cfg: &GenConfig, rng: &mut R) -> Style {
    let ch = cfg.sensors * cfg.variables;
    let draw = |rng: &mut R, half: f64, centre: f64| {
        if half > 0.0 {
            rng.random_range(centre - half..centre + half)
        } else {
            centre
        }
    };
    Style {
        scale: (0..ch).map(|_| draw(rng, cfg.scale_jitter, 1.0)).collect(),
        offset: (0..ch).map(|_| draw(rng, cfg.offset_jitter, 0.0)).collect(),
    }
}

fn emit<R: Rng>(
    cfg: &GenConfig,
    classes: &[Vec<[Component; 2]>],
    style: &Style,
    rng: &mut R,
    out: &mut Dataset,
) -> Result<()> {
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(format!("data.noise: {e}")))?;
    let l = cfg.length;
    let mut window = vec![0f32; cfg.sensors * cfg.variables * l];
    for _ in 0..cfg.samples_per_class {
        for (k, template) in classes.iter().enumerate() {
            for (c, comps) in template.iter().enumerate() {
                let drawn: Vec<(f64, f64, f64)> = comps
                    .iter()
                    .map(|p| (p.freq, p.amp * rng.random_range(0.9..1.1), rng.random_range(0.0..TAU)))
                    .collect();
                for t in 0..l {
                    let phase = TAU * t as f64 / l as f64;
                    let s: f64 = drawn.iter().map(|&(f, a, phi)| a * (f * phase + phi).sin()).sum();
                    let e = if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    window[c * l + t] = (style.scale[c] * s + style.offset[c] + e) as f32;
                }
            }
            out.push(&window, k as u32)?;
        }
    }
    Ok(())
}

/// Builds train/validation/test splits deterministically from `cfg.seed`.
pub fn generate_synthetic(cfg: &GenConfig) -> Result<Splits> {
    if cfg.classes < 2 || cfg.sensors == 0 || cfg.variables == 0 || cfg.length == 0 {
        return Err(Error::Config(format!(
            "generator needs classes >= 2 and positive sensors/variables/length, got C={} N={} M={} L={}",
            cfg.classes, cfg.sensors, cfg.variables, cfg.length
        )));
    }
    if cfg.samples_per_class == 0 || cfg.train_domains == 0 || cfg.val_domains == 0 {
        return Err(Error::Config("samples_per_class, train_domains and val_domains must be positive".into()));
    }
    let classes = templates(cfg);
    let mut style_rng = stream(cfg.seed, 2);
    let mut sample_rng = stream(cfg.seed, 3);
    let empty = || Dataset::new(cfg.sensors, cfg.variables, cfg.length, cfg.classes);
    let (mut train, mut val, mut test) = (empty(), empty(), empty());
    let train_styles: Vec<Style> = (0..cfg.train_domains).map(|_| random_style(cfg, &mut style_rng)).collect();
    if cfg.domain_disjoint {
        for style in &train_styles {
            emit(cfg, &classes, style, &mut sample_rng, &mut train)?;
        }
        for _ in 0..cfg.val_domains {
            let style = random_style(cfg, &mut style_rng);
            emit(cfg, &classes, &style, &mut sample_rng, &mut val)?;
        }
        let ch = cfg.sensors * cfg.variables;
        let shifted = Style {
            scale: vec![cfg.test_scale; ch],
            offset: vec![cfg.test_offset; ch],
        };
        emit(cfg, &classes, &shifted, &mut sample_rng, &mut test)?;
    } else {
        // every domain contributes to all three splits
        for style in &train_styles {
            for split in [&mut train, &mut val, &mut test] {
                emit(cfg, &classes, style, &mut sample_rng, split)?;
            }
        }
    }
    Ok(Splits { train, val, test })
}
