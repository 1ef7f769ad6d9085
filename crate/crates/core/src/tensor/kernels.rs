// Plain loops behind the graph ops. All functions are sequential and
// allocation-light; the heavy lifting in convolution is delegated to gemm.

use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `[C, H, W]` image into a `[C*kh*kw, out_h*out_w]` matrix.
#[cfg(test)]
fn im2col<T: Real>(image: &[T], g: &ConvGeometry, cols: &mut [T]) {
    im2col_strided(image, g, cols, g.col_cols());
}

/// Unfolds one image into a matrix whose rows are `ld` elements apart.
fn im2col_strided<T: Real>(image: &[T], g: &ConvGeometry, cols: &mut [T], ld: usize) {
    let ncols = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ld..row * ld + ncols];
                // Output columns whose input column lies inside the image.
                let lo = ((pad - kj as isize).max(0) as usize).div_ceil(g.stride).min(g.out_w);
                let hi = (((g.width as isize + pad - kj as isize - 1).max(-1) + 1) as usize)
                    .div_ceil(g.stride)
                    .clamp(lo, g.out_w);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let x0 = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[x0..x0 + (hi - lo)]);
                    } else {
                        for (k, slot) in line[lo..hi].iter_mut().enumerate() {
                            *slot = src[x0 + k * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back into an image gradient.
#[cfg(test)]
fn col2im<T: Real>(cols: &[T], g: &ConvGeometry, image: &mut [T]) {
    col2im_strided(cols, g, image, g.col_cols());
}

fn col2im_strided<T: Real>(cols: &[T], g: &ConvGeometry, image: &mut [T], ld: usize) {
    let ncols = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ld..row * ld + ncols];
                let lo = ((pad - kj as isize).max(0) as usize).div_ceil(g.stride).min(g.out_w);
                let hi = (((g.width as isize + pad - kj as isize - 1).max(-1) + 1) as usize)
                    .div_ceil(g.stride)
                    .clamp(lo, g.out_w);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let x0 = lo * g.stride + kj - g.padding;
                    let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    for (k, &v) in line.iter().enumerate() {
                        dst[x0 + k * g.stride] += v;
                    }
                }
            }
        }
    }
}

/// Upper bound on elements of one unfolded chunk; batches are processed in
/// chunks so the column buffer stays bounded.
const CHUNK_ELEMS: usize = 1 << 22;

fn chunk_len(g: &ConvGeometry, batch: usize) -> usize {
    (CHUNK_ELEMS / (g.col_rows() * g.col_cols()).max(1)).clamp(1, batch.max(1))
}

pub(crate) fn conv2d_forward<T: Real>(
    input: &[T],
    batch: usize,
    kernel: &[T],
    filters: usize,
    g: &ConvGeometry,
) -> Vec<T> {
    let in_sz = g.channels * g.height * g.width;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let out_sz = filters * ncols;
    let mut out = vec![T::zero(); batch * out_sz];
    if is_pointwise(g) {
        // Each image is already a [C, HW] matrix.
        for n in 0..batch {
            let image = &input[n * in_sz..(n + 1) * in_sz];
            let dst = &mut out[n * out_sz..(n + 1) * out_sz];
            T::gemm(filters, rows, ncols, T::one(), kernel, (rows as isize, 1), image, (ncols as isize, 1), T::zero(), dst, (ncols as isize, 1));
        }
        return out;
    }
    let chunk = chunk_len(g, batch);
    let mut cols = vec![T::zero(); rows * chunk * ncols];
    let mut prod = vec![T::zero(); filters * chunk * ncols];
    for n0 in (0..batch).step_by(chunk) {
        let m = chunk.min(batch - n0);
        let ld = m * ncols;
        for i in 0..m {
            let image = &input[(n0 + i) * in_sz..(n0 + i + 1) * in_sz];
            im2col_strided(image, g, &mut cols[i * ncols..], ld);
        }
        // prod[F, m*ncols] = K[F, rows] * cols[rows, m*ncols]
        T::gemm(filters, rows, ld, T::one(), kernel, (rows as isize, 1), &cols, (ld as isize, 1), T::zero(), &mut prod, (ld as isize, 1));
        for i in 0..m {
            let dst = &mut out[(n0 + i) * out_sz..(n0 + i + 1) * out_sz];
            for f in 0..filters {
                dst[f * ncols..(f + 1) * ncols].copy_from_slice(&prod[f * ld + i * ncols..f * ld + (i + 1) * ncols]);
            }
        }
    }
    out
}

fn is_pointwise(g: &ConvGeometry) -> bool {
    g.kh == 1 && g.kw == 1 && g.stride == 1 && g.padding == 0
}

/// Returns `(d_input, d_kernel)`; each is skipped when not requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    input: &[T],
    batch: usize,
    kernel: &[T],
    filters: usize,
    g: &ConvGeometry,
    d_out: &[T],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let in_sz = g.channels * g.height * g.width;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let out_sz = filters * ncols;
    let mut d_input = want_input.then(|| vec![T::zero(); batch * in_sz]);
    let mut d_kernel = want_kernel.then(|| vec![T::zero(); filters * rows]);
    let pointwise = is_pointwise(g);
    let chunk = chunk_len(g, batch);
    let mut cols = vec![T::zero(); if pointwise { 0 } else { rows * chunk * ncols }];
    let mut dy = vec![T::zero(); filters * chunk * ncols];
    for n0 in (0..batch).step_by(chunk) {
        let m = chunk.min(batch - n0);
        let ld = m * ncols;
        // dy[F, m*ncols] gathered from the [N, F, ncols] layout.
        for i in 0..m {
            let src = &d_out[(n0 + i) * out_sz..(n0 + i + 1) * out_sz];
            for f in 0..filters {
                dy[f * ld + i * ncols..f * ld + (i + 1) * ncols].copy_from_slice(&src[f * ncols..(f + 1) * ncols]);
            }
        }
        if let Some(dk) = d_kernel.as_mut() {
            if pointwise {
                for i in 0..m {
                    let image = &input[(n0 + i) * in_sz..(n0 + i + 1) * in_sz];
                    let dyi = &d_out[(n0 + i) * out_sz..(n0 + i + 1) * out_sz];
                    T::gemm(filters, ncols, rows, T::one(), dyi, (ncols as isize, 1), image, (1, ncols as isize), T::one(), dk, (rows as isize, 1));
                }
            } else {
                for i in 0..m {
                    let image = &input[(n0 + i) * in_sz..(n0 + i + 1) * in_sz];
                    im2col_strided(image, g, &mut cols[i * ncols..], ld);
                }
                // dK[F, rows] += dy[F, m*ncols] * cols^T[m*ncols, rows]
                T::gemm(filters, ld, rows, T::one(), &dy, (ld as isize, 1), &cols, (1, ld as isize), T::one(), dk, (rows as isize, 1));
            }
        }
        if let Some(dx) = d_input.as_mut() {
            if pointwise {
                for i in 0..m {
                    let dst = &mut dx[(n0 + i) * in_sz..(n0 + i + 1) * in_sz];
                    let dyi = &d_out[(n0 + i) * out_sz..(n0 + i + 1) * out_sz];
                    T::gemm(rows, filters, ncols, T::one(), kernel, (1, rows as isize), dyi, (ncols as isize, 1), T::zero(), dst, (ncols as isize, 1));
                }
            } else {
                // dcols[rows, m*ncols] = K^T[rows, F] * dy[F, m*ncols]
                T::gemm(rows, filters, ld, T::one(), kernel, (1, rows as isize), &dy, (ld as isize, 1), T::zero(), &mut cols, (ld as isize, 1));
                for i in 0..m {
                    let dst = &mut dx[(n0 + i) * in_sz..(n0 + i + 1) * in_sz];
                    col2im_strided(&cols[i * ncols..], g, dst, ld);
                }
            }
        }
    }
    (d_input, d_kernel)
}

/// Per-channel mean and biased variance over `N x H x W`.
pub(crate) fn channel_moments<T: Real>(x: &[T], n: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let count = T::from_usize(n * hw);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * hw;
            s += x[off..off + hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for &e in &x[off..off + hw] {
                let d = e - m;
                v += d * d;
            }
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v = *v / z;
    }
}

/// `log(sum(exp(row)))`, stabilized by the row maximum.
pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let z: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + z.ln()
}
