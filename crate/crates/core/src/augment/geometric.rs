// Geometric transforms, applied identically to all six channels.
// Non-quarter-turn warps use nearest-neighbour sampling with zero fill.
//
// RandAugment ranges: rotate +-30 deg, shear +-0.3 (x or y), translate
// +-30 % of the side (x or y), scale 0.7-1.3, horizontal flip.

use rand::Rng;

use crate::data::{PLANE, SIDE};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeoOp {
    Rotate(f32),
    ShearX(f32),
    ShearY(f32),
    /// Fraction of the side length.
    TranslateX(f32),
    TranslateY(f32),
    Scale(f32),
    Flip,
}

impl GeoOp {
    pub const KINDS: usize = 5;

    pub fn sample<R: Rng + ?Sized>(kind: usize, rng: &mut R) -> Self {
        match kind {
            0 => GeoOp::Rotate(rng.random_range(-30.0..=30.0)),
            1 => {
                let s = rng.random_range(-0.3..=0.3);
                if rng.random_bool(0.5) { GeoOp::ShearX(s) } else { GeoOp::ShearY(s) }
            }
            2 => {
                let t = rng.random_range(-0.3..=0.3);
                if rng.random_bool(0.5) { GeoOp::TranslateX(t) } else { GeoOp::TranslateY(t) }
            }
            3 => GeoOp::Scale(rng.random_range(0.7..=1.3)),
            _ => GeoOp::Flip,
        }
    }
}

fn per_plane(image: &[f32], f: impl Fn(&[f32], &mut [f32])) -> Vec<f32> {
    let mut out = vec![0.0; image.len()];
    for (src, dst) in image.chunks(PLANE).zip(out.chunks_mut(PLANE)) {
        f(src, dst);
    }
    out
}

pub fn flip_horizontal(image: &[f32]) -> Vec<f32> {
    per_plane(image, |src, dst| {
        for y in 0..SIDE {
            for x in 0..SIDE {
                dst[y * SIDE + x] = src[y * SIDE + SIDE - 1 - x];
            }
        }
    })
}

/// Exact counter-clockwise rotation by `k` quarter turns.
pub fn turn_quarters(image: &[f32], k: u8) -> Vec<f32> {
    let n = SIDE - 1;
    per_plane(image, |src, dst| {
        for y in 0..SIDE {
            for x in 0..SIDE {
                let (sy, sx) = match k % 4 {
                    0 => (y, x),
                    1 => (x, n - y),
                    2 => (n - y, n - x),
                    _ => (n - x, y),
                };
                dst[y * SIDE + x] = src[sy * SIDE + sx];
            }
        }
    })
}

/// Integer translation with zero fill; positive `dx` / `dy` move content right / down.
pub fn shift(image: &[f32], dx: i32, dy: i32) -> Vec<f32> {
    per_plane(image, |src, dst| {
        for y in 0..SIDE as i32 {
            let sy = y - dy;
            if !(0..SIDE as i32).contains(&sy) {
                continue;
            }
            for x in 0..SIDE as i32 {
                let sx = x - dx;
                if (0..SIDE as i32).contains(&sx) {
                    dst[(y as usize) * SIDE + x as usize] = src[sy as usize * SIDE + sx as usize];
                }
            }
        }
    })
}

/// Resamples through the inverse of `p -> a * p + t` about the image centre.
fn warp(image: &[f32], a: [[f32; 2]; 2], t: (f32, f32)) -> Vec<f32> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let c = SIDE as f32 / 2.0;
    let mut map = vec![usize::MAX; PLANE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let px = x as f32 + 0.5 - c - t.0;
            let py = y as f32 + 0.5 - c - t.1;
            let sx = inv[0][0] * px + inv[0][1] * py + c;
            let sy = inv[1][0] * px + inv[1][1] * py + c;
            let (ix, iy) = (sx.floor(), sy.floor());
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < SIDE && (iy as usize) < SIDE {
                map[y * SIDE + x] = iy as usize * SIDE + ix as usize;
            }
        }
    }
    per_plane(image, |src, dst| {
        for (d, &m) in dst.iter_mut().zip(&map) {
            if m != usize::MAX {
                *d = src[m];
            }
        }
    })
}

pub fn apply_geometric(image: &[f32], op: &GeoOp) -> Vec<f32> {
    let side = SIDE as f32;
    match *op {
        GeoOp::Flip => flip_horizontal(image),
        GeoOp::Rotate(deg) => {
            let (s, c) = deg.to_radians().sin_cos();
            warp(image, [[c, -s], [s, c]], (0.0, 0.0))
        }
        GeoOp::ShearX(k) => warp(image, [[1.0, k], [0.0, 1.0]], (0.0, 0.0)),
        GeoOp::ShearY(k) => warp(image, [[1.0, 0.0], [k, 1.0]], (0.0, 0.0)),
        GeoOp::TranslateX(f) => shift(image, (f * side).round() as i32, 0),
        GeoOp::TranslateY(f) => shift(image, 0, (f * side).round() as i32),
        GeoOp::Scale(z) => warp(image, [[z, 0.0], [0.0, z]], (0.0, 0.0)),
    }
}
