// Colour transforms. Each treats the pre and post halves as two RGB images and
// maps both through the same function. Image statistics (contrast mean,
// equalization histograms) are pooled over both halves so a transform never
// changes the pre/post relation it is applied to.
//
// Magnitude ranges sampled by RandAugment:
//   brightness  v * f,                       f in [0.5, 1.5]
//   contrast    m + f (v - m), m = mean luma of both halves, f in [0.5, 1.5]
//   saturation  l + f (v - l), l = pixel luma,     f in [0.0, 2.0]
//   solarize    v >= t ? 1 - v : v,          t in [0, 1]
//   posterize   min(floor(v 2^b), 2^b - 1) / 2^b,  b in {4..8}
//   equalize    per-channel 256-bin histogram equalization, pre and post pooled
//   identity

use rand::Rng;

use crate::data::PLANE;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ColorOp {
    Brightness(f32),
    Contrast(f32),
    Saturation(f32),
    Solarize(f32),
    Posterize(u8),
    Equalize,
    Identity,
}

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

impl ColorOp {
    pub const KINDS: usize = 7;

    pub fn sample<R: Rng + ?Sized>(kind: usize, rng: &mut R) -> Self {
        match kind {
            0 => ColorOp::Brightness(rng.random_range(0.5..=1.5)),
            1 => ColorOp::Contrast(rng.random_range(0.5..=1.5)),
            2 => ColorOp::Saturation(rng.random_range(0.0..=2.0)),
            3 => ColorOp::Solarize(rng.random_range(0.0..=1.0)),
            4 => ColorOp::Posterize(rng.random_range(4..=8)),
            5 => ColorOp::Equalize,
            _ => ColorOp::Identity,
        }
    }
}

pub fn posterize_value(v: f32, bits: u8) -> f32 {
    let levels = (1u32 << bits) as f32;
    (v * levels).floor().min(levels - 1.0).max(0.0) / levels
}

fn bin(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Equalizes the given planes through one lookup table built from their joint histogram.
fn equalize_planes(planes: &mut [&mut [f32]]) {
    let mut hist = [0usize; 256];
    for plane in planes.iter() {
        for &v in plane.iter() {
            hist[bin(v)] += 1;
        }
    }
    let first = hist.iter().position(|&h| h > 0).unwrap_or(0);
    let cdf_min = hist[first];
    let total: usize = planes.iter().map(|p| p.len()).sum();
    if total == cdf_min {
        return;
    }
    let mut lut = [0f32; 256];
    let mut acc = 0usize;
    for (level, &h) in hist.iter().enumerate() {
        acc += h;
        lut[level] = (acc.saturating_sub(cdf_min) as f32 / (total - cdf_min) as f32).clamp(0.0, 1.0);
    }
    for plane in planes.iter_mut() {
        for v in plane.iter_mut() {
            *v = lut[bin(*v)];
        }
    }
}

fn mean_luma(image: &[f32]) -> f32 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for half in image.chunks(3 * PLANE) {
        for p in 0..PLANE {
            sum += (0..3).map(|c| LUMA[c] * half[c * PLANE + p]).sum::<f32>() as f64;
            n += 1;
        }
    }
    (sum / n as f64) as f32
}

fn apply_half(half: &mut [f32], op: &ColorOp, mean: f32) {
    match *op {
        ColorOp::Identity => {}
        ColorOp::Brightness(f) => half.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0)),
        ColorOp::Contrast(f) => {
            let m = mean;
            half.iter_mut().for_each(|v| *v = (m + f * (*v - m)).clamp(0.0, 1.0));
        }
        ColorOp::Saturation(f) => {
            for p in 0..PLANE {
                let l: f32 = (0..3).map(|c| LUMA[c] * half[c * PLANE + p]).sum();
                for c in 0..3 {
                    let v = &mut half[c * PLANE + p];
                    *v = (l + f * (*v - l)).clamp(0.0, 1.0);
                }
            }
        }
        ColorOp::Solarize(t) => half.iter_mut().for_each(|v| {
            if *v >= t {
                *v = 1.0 - *v;
            }
        }),
        ColorOp::Posterize(bits) => half.iter_mut().for_each(|v| *v = posterize_value(*v, bits)),
        ColorOp::Equalize => unreachable!("equalize pools both halves"),
    }
}

/// Applies `op` to the pre half and the post half with shared statistics.
pub fn apply_color(image: &[f32], op: &ColorOp) -> Vec<f32> {
    let mut out = image.to_vec();
    if *op == ColorOp::Equalize {
        let (pre, post) = out.split_at_mut(3 * PLANE);
        for (a, b) in pre.chunks_mut(PLANE).zip(post.chunks_mut(PLANE)) {
            equalize_planes(&mut [a, b]);
        }
        return out;
    }
    let mean = if matches!(op, ColorOp::Contrast(_)) { mean_luma(&out) } else { 0.0 };
    for half in out.chunks_mut(3 * PLANE) {
        apply_half(half, op, mean);
    }
    out
}
