//! Examples, the on-disk dataset format, split construction and the synthetic
//! paired-image generator.

mod format;
mod split;
mod synth;

pub use format::{load, read_from, save, write_to, MAGIC};
pub use split::{split, LabelBudget, SplitDataset, SplitSpec};
pub use synth::{synth_generate, synth_generate_annotated, SynthConfig, SynthSample};

use std::sync::Arc;

pub const CHANNELS: usize = 6;
pub const SIDE: usize = 64;
pub const PLANE: usize = SIDE * SIDE;
pub const PIXELS: usize = CHANNELS * PLANE;

pub const UNDAMAGED: u8 = 0;
pub const DAMAGED: u8 = 1;

/// One stacked pre/post crop. Channels 0-2 are pre-disaster RGB, 3-5 post.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image: Arc<[f32]>,
    pub label: Option<u8>,
}

impl Example {
    pub fn new(image: Vec<f32>, label: Option<u8>) -> Self {
        debug_assert_eq!(image.len(), PIXELS);
        Self { image: image.into(), label }
    }

    pub fn unlabeled(&self) -> Self {
        Self { image: Arc::clone(&self.image), label: None }
    }

    pub fn pre(&self) -> &[f32] {
        &self.image[..3 * PLANE]
    }

    pub fn post(&self) -> &[f32] {
        &self.image[3 * PLANE..]
    }
}

/// Nearest representable 8-bit level, as stored on disk.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(b: u8) -> f32 {
    b as f32 / 255.0
}
