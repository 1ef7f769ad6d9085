//! Procedural stand-in for paired satellite crops.
//!
//! Each example shows one rotated rectangular "building" on a textured
//! background. The post image repeats the pre image under a random global
//! illumination change plus sensor noise. Damaged examples additionally darken
//! the roof and scramble it into rubble: square cells of the footprint are
//! overwritten by cells copied from random places in the scene. The class is
//! only visible in the pre/post difference.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{dequantize, quantize, Example, CHANNELS, PIXELS, PLANE, SIDE};
use crate::rng::{Purpose, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_examples: usize,
    pub positive_fraction: f64,
    /// Std of independent per-pixel noise added to the post image.
    pub noise_sigma: f64,
    /// Scales both the roof brightness drop and the texture scrambling (0 = no signal).
    pub damage_intensity: f64,
    /// Maximum relative brightness drop of a fully damaged roof.
    pub damage_darkening: f64,
    /// Fraction of footprint cells replaced by rubble at full intensity.
    pub damage_scramble: f64,
    /// Side in pixels of a rubble cell (1 scrambles single pixels).
    pub rubble_cell: usize,
    /// Half-width of the uniform global gain change between pre and post.
    pub illumination_gain: f64,
    /// Half-width of the uniform global offset change between pre and post.
    pub illumination_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_examples: 4400,
            positive_fraction: 0.44,
            noise_sigma: 0.03,
            damage_intensity: 1.0,
            damage_darkening: 0.2,
            damage_scramble: 0.6,
            rubble_cell: 4,
            illumination_gain: 0.10,
            illumination_offset: 0.04,
            seed: 0,
        }
    }
}

/// A generated example with its ground-truth building footprint.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub example: Example,
    /// Row-major `SIDE x SIDE` mask.
    pub footprint: Vec<bool>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Vec<Example> {
    synth_generate_annotated(cfg).into_iter().map(|s| s.example).collect()
}

pub fn synth_generate_annotated(cfg: &SynthConfig) -> Vec<SynthSample> {
    assert!(cfg.positive_fraction > 0.0 && cfg.positive_fraction < 1.0, "positive_fraction must be in (0, 1)");
    assert!(cfg.rubble_cell >= 1, "rubble_cell must be at least 1");
    let stream = RngStream::new(cfg.seed);
    let n_pos = (cfg.n_examples as f64 * cfg.positive_fraction).round() as usize;
    let mut labels: Vec<u8> = (0..cfg.n_examples).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut stream.derive(Purpose::Synth, u64::MAX, 0));
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| generate_one(cfg, &mut stream.derive(Purpose::Synth, i as u64, 0), label))
        .collect()
}

struct Building {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    cos: f64,
    sin: f64,
}

impl Building {
    /// Coordinates in the building frame, or `None` outside the footprint.
    fn local(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u.abs() <= self.half_w && v.abs() <= self.half_h).then_some((u, v))
    }
}

fn generate_one(cfg: &SynthConfig, rng: &mut ChaCha8Rng, label: u8) -> SynthSample {
    let mut pre = vec![0.0f64; 3 * PLANE];

    // Background: base colour + a few smooth gratings + grain.
    let base: [f64; 3] = [rng.random_range(0.22..0.42), rng.random_range(0.25..0.45), rng.random_range(0.18..0.38)];
    let gratings: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let freq = rng.random_range(0.08..0.35);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            (freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.02..0.06))
        })
        .collect();
    let grain = Normal::new(0.0, 0.02).expect("valid std");
    for y in 0..SIDE {
        for x in 0..SIDE {
            let tex: f64 = gratings.iter().map(|&(kx, ky, ph, a)| a * (kx * x as f64 + ky * y as f64 + ph).sin()).sum();
            let g = grain.sample(rng);
            for (c, &b) in base.iter().enumerate() {
                pre[c * PLANE + y * SIDE + x] = b + tex + g;
            }
        }
    }

    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let building = Building {
        cx: rng.random_range(22.0..42.0),
        cy: rng.random_range(22.0..42.0),
        half_w: rng.random_range(9.0..16.0),
        half_h: rng.random_range(8.0..13.0),
        cos: angle.cos(),
        sin: angle.sin(),
    };
    let roof: [f64; 3] = {
        let lum = rng.random_range(0.62..0.82);
        [lum + rng.random_range(-0.05..0.05), lum + rng.random_range(-0.05..0.05), lum + rng.random_range(-0.05..0.05)]
    };
    let stripe_period = rng.random_range(2.5..5.0);
    let mut footprint = vec![false; PLANE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            if let Some((u, _)) = building.local(x as f64 + 0.5, y as f64 + 0.5) {
                let p = y * SIDE + x;
                footprint[p] = true;
                let stripe = 0.04 * (u * std::f64::consts::TAU / stripe_period).sin();
                for (c, &r) in roof.iter().enumerate() {
                    pre[c * PLANE + p] = r + stripe;
                }
            }
        }
    }

    // Post: global illumination change + roof damage + sensor noise.
    let gain = 1.0 + rng.random_range(-1.0..=1.0) * cfg.illumination_gain;
    let offset = rng.random_range(-1.0..=1.0) * cfg.illumination_offset;
    let mut post: Vec<f64> = pre.iter().map(|&v| v * gain + offset).collect();
    if label == 1 {
        let severity = cfg.damage_intensity * rng.random_range(0.6..1.0);
        let dim = 1.0 - cfg.damage_darkening * severity;
        let cell = cfg.rubble_cell;
        let cells = SIDE.div_ceil(cell);
        let rubble = Normal::new(0.0, 0.1).expect("valid std");
        let p_scramble = (cfg.damage_scramble * severity).clamp(0.0, 1.0);
        // Source corner and brightness shift per scrambled cell, in raster order.
        let sources: Vec<Option<(usize, usize, f64)>> = (0..cells * cells)
            .map(|_| {
                rng.random_bool(p_scramble).then(|| {
                    let sx = rng.random_range(0..=SIDE - cell);
                    let sy = rng.random_range(0..=SIDE - cell);
                    (sx, sy, rubble.sample(rng))
                })
            })
            .collect();
        for y in 0..SIDE {
            for x in 0..SIDE {
                let p = y * SIDE + x;
                if !footprint[p] {
                    continue;
                }
                let (src, noise) = match sources[(y / cell) * cells + x / cell] {
                    Some((sx, sy, shift)) => ((sy + y % cell) * SIDE + sx + x % cell, shift),
                    None => (p, 0.0),
                };
                for c in 0..3 {
                    post[c * PLANE + p] = (pre[c * PLANE + src] * gain + offset) * dim + noise;
                }
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let sensor = Normal::new(0.0, cfg.noise_sigma).expect("valid std");
        for v in post.iter_mut() {
            *v += sensor.sample(rng);
        }
    }

    let mut image = Vec::with_capacity(PIXELS);
    image.extend(pre.iter().chain(post.iter()).map(|&v| dequantize(quantize(v as f32))));
    debug_assert_eq!(image.len(), CHANNELS * PLANE);
    SynthSample { example: Example::new(image, Some(label)), footprint }
}
