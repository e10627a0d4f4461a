//! 3×3×3 convolution kernels with one voxel of zero padding.
//!
//! Tensors are channel-major with x fastest: `[channel][z][y][x]`. Weights
//! are laid out `[out][in][kz][ky][kx]`.

use alloc::vec;

use crate::real::{gemm, MatLayout, Real};
use crate::volume::Dims;

pub const KERNEL: usize = 3;
pub const KERNEL_VOLUME: usize = KERNEL * KERNEL * KERNEL;

/// Output length along one axis: `floor((n + 2 - 3) / stride) + 1`.
#[inline]
pub const fn out_len(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

pub fn out_dims(d: Dims, stride: usize) -> Dims {
    Dims::new(out_len(d.nx, stride), out_len(d.ny, stride), out_len(d.nz, stride))
}

/// Static description of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: Dims,
    pub out_dims: Dims,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, out_channels: usize, in_dims: Dims, stride: usize) -> Self {
        Self { in_channels, out_channels, in_dims, out_dims: out_dims(in_dims, stride), stride }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * KERNEL_VOLUME
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_dims.len()
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_dims.len()
    }
}

/// Output positions `o` along an axis whose input index `o*stride + k - 1`
/// lies inside `0..n`.
#[inline]
fn valid_range(out: usize, n: usize, stride: usize, k: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    if n < k {
        return (0, 0);
    }
    let hi = core::cmp::min(out, (n - k) / stride + 1);
    (lo, hi.max(lo))
}

/// Visit every (output row, input row) pair touched by kernel tap
/// `(kx, ky, kz)`: the callback gets the output row offset, the input row
/// offset and the valid x range on the output row.
#[inline]
fn for_each_row(g: &ConvGeometry, kx: usize, ky: usize, kz: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (ind, outd, s) = (g.in_dims, g.out_dims, g.stride);
    let (x0, x1) = valid_range(outd.nx, ind.nx, s, kx);
    if x0 >= x1 {
        return;
    }
    let (y0, y1) = valid_range(outd.ny, ind.ny, s, ky);
    let (z0, z1) = valid_range(outd.nz, ind.nz, s, kz);
    for oz in z0..z1 {
        let iz = oz * s + kz - 1;
        for oy in y0..y1 {
            let iy = oy * s + ky - 1;
            let orow = (oz * outd.ny + oy) * outd.nx;
            let irow = (iz * ind.ny + iy) * ind.nx;
            f(orow, irow, x0, x1);
        }
    }
}

/// Unfolds the zero-padded receptive fields into a `(in·27) × out_vol`
/// matrix, one row per (input channel, kernel tap).
fn im2col<T: Real>(g: &ConvGeometry, input: &[T], col: &mut [T]) {
    let in_vol = g.in_dims.len();
    let out_vol = g.out_dims.len();
    let s = g.stride;
    col.fill(T::zero());
    for ic in 0..g.in_channels {
        let inp = &input[ic * in_vol..(ic + 1) * in_vol];
        for k in 0..KERNEL_VOLUME {
            let row = &mut col[(ic * KERNEL_VOLUME + k) * out_vol..(ic * KERNEL_VOLUME + k + 1) * out_vol];
            let (kx, ky, kz) = (k % 3, (k / 3) % 3, k / 9);
            for_each_row(g, kx, ky, kz, |orow, irow, x0, x1| {
                let dst = &mut row[orow + x0..orow + x1];
                let base = irow + x0 * s + kx - 1;
                if s == 1 {
                    dst.copy_from_slice(&inp[base..base + dst.len()]);
                } else {
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = inp[base + j * s];
                    }
                }
            });
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds the column matrix into the input.
fn col2im<T: Real>(g: &ConvGeometry, col: &[T], grad_in: &mut [T]) {
    let in_vol = g.in_dims.len();
    let out_vol = g.out_dims.len();
    let s = g.stride;
    for ic in 0..g.in_channels {
        let gi = &mut grad_in[ic * in_vol..(ic + 1) * in_vol];
        for k in 0..KERNEL_VOLUME {
            let row = &col[(ic * KERNEL_VOLUME + k) * out_vol..(ic * KERNEL_VOLUME + k + 1) * out_vol];
            let (kx, ky, kz) = (k % 3, (k / 3) % 3, k / 9);
            for_each_row(g, kx, ky, kz, |orow, irow, x0, x1| {
                let src = &row[orow + x0..orow + x1];
                let base = irow + x0 * s + kx - 1;
                if s == 1 {
                    for (d, &v) in gi[base..base + src.len()].iter_mut().zip(src) {
                        *d += v;
                    }
                } else {
                    for (j, &v) in src.iter().enumerate() {
                        gi[base + j * s] += v;
                    }
                }
            });
        }
    }
}

fn col_rows(g: &ConvGeometry) -> usize {
    g.in_channels * KERNEL_VOLUME
}

/// Affine response (pre-activation) of the convolution.
pub fn forward<T: Real>(g: &ConvGeometry, input: &[T], weights: &[T], biases: &[T], out: &mut [T]) {
    assert_eq!(input.len(), g.input_len());
    assert_eq!(weights.len(), g.weight_len());
    assert_eq!(biases.len(), g.out_channels);
    assert_eq!(out.len(), g.output_len());
    let out_vol = g.out_dims.len();
    let kr = col_rows(g);
    let mut col = vec![T::zero(); kr * out_vol];
    im2col(g, input, &mut col);
    for (oc, o) in out.chunks_exact_mut(out_vol).enumerate() {
        o.fill(biases[oc]);
    }
    gemm(
        weights,
        MatLayout::row_major(g.out_channels, kr, kr),
        &col,
        MatLayout::row_major(kr, out_vol, out_vol),
        T::one(),
        out,
        MatLayout::row_major(g.out_channels, out_vol, out_vol),
    );
}

/// Adjoint of [`forward`] with respect to the input (biases excluded):
/// accumulates `Wᵀ · grad_out` into `grad_in`.
pub fn backward_input<T: Real>(g: &ConvGeometry, grad_out: &[T], weights: &[T], grad_in: &mut [T]) {
    assert_eq!(grad_out.len(), g.output_len());
    assert_eq!(grad_in.len(), g.input_len());
    let out_vol = g.out_dims.len();
    let kr = col_rows(g);
    let mut col = vec![T::zero(); kr * out_vol];
    gemm(
        weights,
        MatLayout::row_major(g.out_channels, kr, kr).t(),
        grad_out,
        MatLayout::row_major(g.out_channels, out_vol, out_vol),
        T::zero(),
        &mut col,
        MatLayout::row_major(kr, out_vol, out_vol),
    );
    col2im(g, &col, grad_in);
}

/// Output voxels per partial product in [`backward_params`].
const PARAM_CHUNK: usize = 256;

/// Accumulates weight and bias gradients given the layer input and the
/// gradient at the layer's pre-activation. Partial products over blocks of
/// output voxels are formed in `T` and reduced in `f64`.
pub fn backward_params<T: Real>(g: &ConvGeometry, input: &[T], grad_out: &[T], grad_w: &mut [T], grad_b: &mut [T]) {
    assert_eq!(input.len(), g.input_len());
    assert_eq!(grad_out.len(), g.output_len());
    assert_eq!(grad_w.len(), g.weight_len());
    assert_eq!(grad_b.len(), g.out_channels);
    let out_vol = g.out_dims.len();
    let kr = col_rows(g);
    let mut col = vec![T::zero(); kr * out_vol];
    im2col(g, input, &mut col);
    let mut part = vec![T::zero(); g.weight_len()];
    let mut acc = vec![0.0f64; g.weight_len()];
    let mut start = 0;
    while start < out_vol {
        let len = PARAM_CHUNK.min(out_vol - start);
        gemm(
            &grad_out[start..],
            MatLayout::row_major(g.out_channels, len, out_vol),
            &col[start..],
            MatLayout::row_major(kr, len, out_vol).t(),
            T::zero(),
            &mut part,
            MatLayout::row_major(g.out_channels, kr, kr),
        );
        for (a, &p) in acc.iter_mut().zip(&part) {
            *a += p.as_f64();
        }
        start += len;
    }
    for (w, a) in grad_w.iter_mut().zip(acc) {
        *w += T::from_f64(a);
    }
    for (oc, go) in grad_out.chunks_exact(out_vol).enumerate() {
        let bsum: f64 = go.iter().map(|v| v.as_f64()).sum();
        grad_b[oc] += T::from_f64(bsum);
    }
}
