//! Weak and strong augmentation plus MixUp for 6-channel paired crops.
//!
//! Every random transform is split into a `sample` step that draws its
//! parameters and a pure `apply` step, so tests can force exact parameters.
//! Geometric transforms move all six channels identically; colour transforms
//! treat each 3-channel half as an RGB image and reuse the same parameters on
//! both halves. Values stay in `[0, 1]`.

mod color;
mod geometric;
mod policy;

pub use color::{apply_color, ColorOp};
pub use geometric::{apply_geometric, shift, turn_quarters, flip_horizontal, GeoOp};
pub use policy::{AugPolicy, CANONICAL_POLICIES};

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::data::{Example, SIDE};
use crate::error::{Error, Result};
use crate::prob::ProbDist;

pub const MAX_WEAK_SHIFT: i32 = 4;
pub const CUTOUT_GRAY: f32 = 0.5;

/// Parameters of one weak augmentation draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeakParams {
    pub flip: bool,
    /// Counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
    /// `(dx, dy)` in pixels; positive moves content right / down.
    pub shift: (i32, i32),
}

impl WeakParams {
    pub const IDENTITY: WeakParams = WeakParams { flip: false, quarter_turns: 0, shift: (0, 0) };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4),
            shift: (rng.random_range(-MAX_WEAK_SHIFT..=MAX_WEAK_SHIFT), rng.random_range(-MAX_WEAK_SHIFT..=MAX_WEAK_SHIFT)),
        }
    }
}

/// Flip, then rotate, then translate with zero fill.
pub fn apply_weak(image: &[f32], p: &WeakParams) -> Vec<f32> {
    let mut out = if p.flip { flip_horizontal(image) } else { image.to_vec() };
    if p.quarter_turns % 4 != 0 {
        out = turn_quarters(&out, p.quarter_turns);
    }
    if p.shift != (0, 0) {
        out = shift(&out, p.shift.0, p.shift.1);
    }
    out
}

pub fn weak_augment<R: Rng + ?Sized>(x: &Example, rng: &mut R) -> Example {
    let p = WeakParams::sample(rng);
    Example::new(apply_weak(&x.image, &p), x.label)
}

/// One transform drawn from the RandAugment pool.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StrongOp {
    Color(ColorOp),
    Geo(GeoOp),
}

impl StrongOp {
    pub fn apply(&self, image: &[f32]) -> Vec<f32> {
        match self {
            StrongOp::Color(op) => apply_color(image, op),
            StrongOp::Geo(op) => apply_geometric(image, op),
        }
    }
}

/// Parameters of one strong augmentation draw.
#[derive(Clone, Debug, PartialEq)]
pub struct StrongParams {
    pub ops: Vec<StrongOp>,
    pub cutout_center: Option<(usize, usize)>,
    pub cutout_side: usize,
}

impl StrongParams {
    pub fn sample<R: Rng + ?Sized>(policy: &AugPolicy, rng: &mut R) -> Result<Self> {
        policy.validate()?;
        let mut ops = Vec::new();
        if policy.use_randaugment {
            let kinds = policy.pool_size();
            for _ in 0..policy.ops_per_image {
                let pick = rng.random_range(0..kinds);
                let op = if policy.color && pick < ColorOp::KINDS {
                    StrongOp::Color(ColorOp::sample(pick, rng))
                } else {
                    let offset = if policy.color { ColorOp::KINDS } else { 0 };
                    StrongOp::Geo(GeoOp::sample(pick - offset, rng))
                };
                ops.push(op);
            }
        }
        let cutout_side = cutout_side(policy.cutout_fraction);
        let cutout_center = policy.use_cutout.then(|| cutout_center(rng));
        Ok(Self { ops, cutout_center, cutout_side })
    }

    pub fn apply(&self, image: &[f32]) -> Vec<f32> {
        let mut out = image.to_vec();
        for op in &self.ops {
            out = op.apply(&out);
        }
        if let Some(center) = self.cutout_center {
            apply_cutout(&mut out, center, self.cutout_side);
        }
        out
    }
}

pub fn strong_augment<R: Rng + ?Sized>(x: &Example, policy: &AugPolicy, rng: &mut R) -> Result<Example> {
    let p = StrongParams::sample(policy, rng)?;
    Ok(Example::new(p.apply(&x.image), x.label))
}

pub fn cutout_side(fraction: f64) -> usize {
    ((fraction * SIDE as f64).round() as usize).clamp(1, SIDE)
}

pub fn cutout_center<R: Rng + ?Sized>(rng: &mut R) -> (usize, usize) {
    (rng.random_range(0..SIDE), rng.random_range(0..SIDE))
}

/// Greys a `side x side` square centred at `(cx, cy)`, clipped to the image,
/// at the same location in all six channels.
pub fn apply_cutout(image: &mut [f32], (cx, cy): (usize, usize), side: usize) {
    let lo = |c: usize| c as isize - (side / 2) as isize;
    let (x0, y0) = (lo(cx).max(0) as usize, lo(cy).max(0) as usize);
    let x1 = ((lo(cx) + side as isize).max(0) as usize).min(SIDE);
    let y1 = ((lo(cy) + side as isize).max(0) as usize).min(SIDE);
    for plane in image.chunks_mut(SIDE * SIDE) {
        for y in y0..y1 {
            plane[y * SIDE + x0..y * SIDE + x1].fill(CUTOUT_GRAY);
        }
    }
}

pub fn cutout<R: Rng + ?Sized>(x: &Example, rng: &mut R, fraction: f64) -> Result<Example> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Policy(format!("cutout fraction {fraction} must be in (0, 1]")));
    }
    let mut img = x.image.to_vec();
    apply_cutout(&mut img, cutout_center(rng), cutout_side(fraction));
    Ok(Example::new(img, x.label))
}

/// Draws the raw MixUp weight `lambda' ~ Beta(alpha, alpha)`.
pub fn sample_mix_weight<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// Convex combination with weight `max(lambda', 1 - lambda')` on `a`.
pub fn mix_pair(a: (&[f32], &ProbDist), b: (&[f32], &ProbDist), raw_weight: f64) -> (Vec<f32>, ProbDist) {
    let w = raw_weight.max(1.0 - raw_weight);
    let (wa, wb) = (w as f32, (1.0 - w) as f32);
    let image = a.0.iter().zip(b.0).map(|(&x, &y)| wa * x + wb * y).collect();
    (image, a.1.mix(b.1, w))
}

pub fn mixup<R: Rng + ?Sized>(
    a: (&[f32], &ProbDist),
    b: (&[f32], &ProbDist),
    alpha: f64,
    rng: &mut R,
) -> Result<(Vec<f32>, ProbDist)> {
    if alpha <= 0.0 {
        return Err(Error::Config(format!("mixup alpha must be positive, got {alpha}")));
    }
    let raw = sample_mix_weight(alpha, rng)?;
    Ok(mix_pair(a, b, raw))
}
