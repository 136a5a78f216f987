//! 3×3×3 convolution with unit padding, lowered to matrix products over
//! z-slabs of the output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::volumes::{numel, Shape};

pub const KERNEL_VOLUME: usize = 27;

/// Upper bound on the im2col buffer per slab, in floats.
const SLAB_BUDGET: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3 × 3`, kernel x fastest.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * KERNEL_VOLUME],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvGrad {
    pub fn zeros_like(layer: &ConvLayer) -> Self {
        ConvGrad {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

pub(crate) fn output_shape(shape: Shape, stride: usize) -> Shape {
    shape.map(|n| (n - 1) / stride + 1)
}

/// `C = A·B + beta·C` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: every element addressed by the strides lies inside the slices
    // (checked above) and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn slabs(depth: usize, per_slice: usize) -> Vec<(usize, usize)> {
    let step = (SLAB_BUDGET / per_slice.max(1)).clamp(1, depth.max(1));
    (0..depth).step_by(step).map(|z0| (z0, (z0 + step).min(depth))).collect()
}

/// `dst[o] = src[o·stride + k − 1]` wherever the source index is in range.
fn copy_taps(dst: &mut [f32], src: &[f32], stride: usize, k: usize) {
    // valid o: 0 ≤ o·stride + k − 1 < src.len()
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    let hi = ((src.len() + 1 - k).div_ceil(stride)).min(dst.len());
    if lo >= hi {
        return;
    }
    if stride == 1 {
        dst[lo..hi].copy_from_slice(&src[lo + k - 1..hi + k - 1]);
    } else {
        for (o, v) in dst[lo..hi].iter_mut().enumerate() {
            *v = src[(o + lo) * stride + k - 1];
        }
    }
}

/// `dst[i] = src[(i + 1 − k) / stride]` wherever the division is exact and
/// the index is in range.
fn scatter_taps(dst: &mut [f32], src: &[f32], stride: usize, k: usize) {
    if stride == 1 {
        // i = o + k − 1
        let lo = (k as isize - 1).max(0) as usize;
        let hi = (src.len() + k - 1).min(dst.len());
        if lo < hi {
            dst[lo..hi].copy_from_slice(&src[lo + 1 - k..hi + 1 - k]);
        }
        return;
    }
    for (o, &v) in src.iter().enumerate() {
        let i = o * stride + k;
        if i >= 1 && i - 1 < dst.len() {
            dst[i - 1] = v;
        }
    }
}

/// Gathers input patches for output slices `z0..z1` into `rows × cols` form.
fn im2col(x: &Tensor, stride: usize, out: Shape, (z0, z1): (usize, usize)) -> Vec<f32> {
    let [d, h, w] = x.shape();
    let plane = out[1] * out[2];
    let cols = (z1 - z0) * plane;
    let mut col = vec![0.0f32; x.channels() * KERNEL_VOLUME * cols];
    for ci in 0..x.channels() {
        let src = x.channel(ci);
        for k in 0..KERNEL_VOLUME {
            let (kz, ky, kx) = (k / 9, (k / 3) % 3, k % 3);
            let row = &mut col[(ci * KERNEL_VOLUME + k) * cols..(ci * KERNEL_VOLUME + k + 1) * cols];
            for oz in z0..z1 {
                let iz = (oz * stride + kz) as isize - 1;
                if iz < 0 || iz >= d as isize {
                    continue;
                }
                for oy in 0..out[1] {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[(iz as usize * h + iy as usize) * w..][..w];
                    let dst = &mut row[((oz - z0) * out[1] + oy) * out[2]..][..out[2]];
                    copy_taps(dst, src_row, stride, kx);
                }
            }
        }
    }
    col
}

pub fn conv3d_forward(x: &Tensor, layer: &ConvLayer, stride: usize) -> Tensor {
    assert_eq!(x.channels(), layer.in_channels, "conv input channels");
    let out_shape = output_shape(x.shape(), stride);
    let plane = out_shape[1] * out_shape[2];
    let nsp = numel(out_shape);
    let rows = layer.in_channels * KERNEL_VOLUME;
    let co = layer.out_channels;
    let parts: Vec<((usize, usize), Vec<f32>)> = slabs(out_shape[0], rows * plane)
        .into_par_iter()
        .map(|slab| {
            let col = im2col(x, stride, out_shape, slab);
            let cols = (slab.1 - slab.0) * plane;
            let mut local = vec![0.0f32; co * cols];
            gemm(co, rows, cols, &layer.weight, (rows, 1), &col, (cols, 1), &mut local, (cols, 1), 0.0);
            (slab, local)
        })
        .collect();
    let mut out = Tensor::zeros(co, out_shape);
    let data = out.data_mut();
    for ((z0, z1), local) in parts {
        let cols = (z1 - z0) * plane;
        for c in 0..co {
            let dst = &mut data[c * nsp + z0 * plane..][..cols];
            let b = layer.bias[c];
            for (d, s) in dst.iter_mut().zip(&local[c * cols..(c + 1) * cols]) {
                *d = s + b;
            }
        }
    }
    out
}

/// Scatters output gradients into `rows × cols` form for input slices
/// `z0..z1`: entry `(co·27 + k, p)` is the output gradient that kernel tap
/// `k` carried from input voxel `p`, or zero.
fn gather_output_grads(dy: &Tensor, stride: usize, in_shape: Shape, (z0, z1): (usize, usize)) -> Vec<f32> {
    let out = dy.shape();
    let plane = in_shape[1] * in_shape[2];
    let cols = (z1 - z0) * plane;
    let mut col = vec![0.0f32; dy.channels() * KERNEL_VOLUME * cols];
    let map = |i: usize, k: usize, n_out: usize| -> Option<usize> {
        let t = i as isize + 1 - k as isize;
        if t < 0 || t as usize % stride != 0 {
            return None;
        }
        let o = t as usize / stride;
        (o < n_out).then_some(o)
    };
    for c in 0..dy.channels() {
        let src = dy.channel(c);
        for k in 0..KERNEL_VOLUME {
            let (kz, ky, kx) = (k / 9, (k / 3) % 3, k % 3);
            let row = &mut col[(c * KERNEL_VOLUME + k) * cols..(c * KERNEL_VOLUME + k + 1) * cols];
            for iz in z0..z1 {
                let Some(oz) = map(iz, kz, out[0]) else { continue };
                for iy in 0..in_shape[1] {
                    let Some(oy) = map(iy, ky, out[1]) else { continue };
                    let src_row = &src[(oz * out[1] + oy) * out[2]..][..out[2]];
                    let dst = &mut row[((iz - z0) * in_shape[1] + iy) * in_shape[2]..][..in_shape[2]];
                    scatter_taps(dst, src_row, stride, kx);
                }
            }
        }
    }
    col
}

/// Returns the input gradient (when `need_input_grad`) and the parameter
/// gradients for output gradient `dy`.
pub fn conv3d_backward(
    x: &Tensor,
    layer: &ConvLayer,
    stride: usize,
    dy: &Tensor,
    need_input_grad: bool,
) -> (Option<Tensor>, ConvGrad) {
    let out_shape = dy.shape();
    assert_eq!(out_shape, output_shape(x.shape(), stride), "conv gradient shape");
    let plane = out_shape[1] * out_shape[2];
    let nsp = numel(out_shape);
    let ci = layer.in_channels;
    let co = layer.out_channels;
    let rows = ci * KERNEL_VOLUME;

    let bias: Vec<f32> = (0..co).map(|c| dy.channel(c).iter().sum()).collect();

    let partials: Vec<Vec<f32>> = slabs(out_shape[0], rows * plane)
        .into_par_iter()
        .map(|slab| {
            let col = im2col(x, stride, out_shape, slab);
            let cols = (slab.1 - slab.0) * plane;
            let mut local = vec![0.0f32; co * rows];
            let a = &dy.data()[slab.0 * plane..];
            gemm(co, cols, rows, a, (nsp, 1), &col, (1, cols), &mut local, (rows, 1), 0.0);
            local
        })
        .collect();
    let mut weight = vec![0.0f32; co * rows];
    for p in partials {
        for (w, v) in weight.iter_mut().zip(p) {
            *w += v;
        }
    }

    let dx = need_input_grad.then(|| {
        let in_shape = x.shape();
        let in_plane = in_shape[1] * in_shape[2];
        let in_nsp = numel(in_shape);
        let krows = co * KERNEL_VOLUME;
        // Transposed kernel: (ci, co·27 + k) = W(co, ci·27 + k).
        let mut wt = vec![0.0f32; ci * krows];
        for o in 0..co {
            for i in 0..ci {
                for k in 0..KERNEL_VOLUME {
                    wt[i * krows + o * KERNEL_VOLUME + k] = layer.weight[(o * ci + i) * KERNEL_VOLUME + k];
                }
            }
        }
        let parts: Vec<((usize, usize), Vec<f32>)> = slabs(in_shape[0], krows * in_plane)
            .into_par_iter()
            .map(|slab| {
                let col = gather_output_grads(dy, stride, in_shape, slab);
                let cols = (slab.1 - slab.0) * in_plane;
                let mut local = vec![0.0f32; ci * cols];
                gemm(ci, krows, cols, &wt, (krows, 1), &col, (cols, 1), &mut local, (cols, 1), 0.0);
                (slab, local)
            })
            .collect();
        let mut dx = Tensor::zeros(ci, in_shape);
        let data = dx.data_mut();
        for ((z0, z1), local) in parts {
            let cols = (z1 - z0) * in_plane;
            for c in 0..ci {
                data[c * in_nsp + z0 * in_plane..][..cols].copy_from_slice(&local[c * cols..(c + 1) * cols]);
            }
        }
        dx
    });
    (dx, ConvGrad { weight, bias })
}
