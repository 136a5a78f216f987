//! Low-level grid kernels shared by volumes, fields and network layers.
//!
//! Every resampler here uses half-voxel-centred coordinates: a voxel index
//! `o` on a grid that is `k` times coarser covers the fine coordinate
//! `k·(o + 0.5) − 0.5`. Out-of-domain coordinates clamp to the border.

use crate::volumes::{numel, Real, Shape};

/// One tap pair of a 1D linear interpolation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tap<T> {
    pub i0: usize,
    pub i1: usize,
    pub w1: T,
}

/// Clamped linear taps for sampling a size-`n` axis at coordinate `c`.
#[inline]
pub(crate) fn tap<T: Real>(c: T, n: usize) -> Tap<T> {
    let hi = T::from_usize(n - 1).unwrap();
    let c = c.max(T::zero()).min(hi);
    let f = c.floor();
    let i0 = f.to_usize().unwrap_or(0).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    Tap {
        i0,
        i1,
        w1: c - f,
    }
}

/// Taps mapping each index of an `n_out` axis onto an `n_in` axis, for output
/// coordinate `c_in = scale·(o + 0.5) − 0.5`.
pub(crate) fn axis_taps<T: Real>(n_in: usize, n_out: usize, scale: f64) -> Vec<Tap<T>> {
    (0..n_out)
        .map(|o| tap(T::lit(scale * (o as f64 + 0.5) - 0.5), n_in))
        .collect()
}

/// Resamples along one axis (0 = z, 1 = y, 2 = x) with the given taps.
fn resample_axis<T: Real>(data: &[T], shape: Shape, axis: usize, taps: &[Tap<T>]) -> (Vec<T>, Shape) {
    let mut out_shape = shape;
    out_shape[axis] = taps.len();
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n_in = shape[axis];
    let mut out = vec![T::zero(); numel(out_shape)];
    for a in 0..outer {
        let src = &data[a * n_in * inner..(a + 1) * n_in * inner];
        let dst = &mut out[a * taps.len() * inner..(a + 1) * taps.len() * inner];
        for (o, t) in taps.iter().enumerate() {
            let w0 = T::one() - t.w1;
            let r0 = &src[t.i0 * inner..(t.i0 + 1) * inner];
            let r1 = &src[t.i1 * inner..(t.i1 + 1) * inner];
            let d = &mut dst[o * inner..(o + 1) * inner];
            for k in 0..inner {
                d[k] = r0[k] * w0 + r1[k] * t.w1;
            }
        }
    }
    (out, out_shape)
}

/// Adjoint of [`resample_axis`]: scatters output gradients back to the input axis.
fn resample_axis_adjoint<T: Real>(
    grad: &[T],
    out_shape: Shape,
    axis: usize,
    n_in: usize,
    taps: &[Tap<T>],
) -> (Vec<T>, Shape) {
    let mut in_shape = out_shape;
    in_shape[axis] = n_in;
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut out = vec![T::zero(); numel(in_shape)];
    for a in 0..outer {
        let src = &grad[a * taps.len() * inner..(a + 1) * taps.len() * inner];
        let dst = &mut out[a * n_in * inner..(a + 1) * n_in * inner];
        for (o, t) in taps.iter().enumerate() {
            let w0 = T::one() - t.w1;
            let g = &src[o * inner..(o + 1) * inner];
            for k in 0..inner {
                dst[t.i0 * inner + k] += g[k] * w0;
            }
            for k in 0..inner {
                dst[t.i1 * inner + k] += g[k] * t.w1;
            }
        }
    }
    (out, in_shape)
}

/// Separable trilinear resampling of one channel to `out_shape`, where each
/// output voxel spans `scale` input voxels per axis.
pub(crate) fn resample<T: Real>(data: &[T], shape: Shape, out_shape: Shape, scale: f64) -> Vec<T> {
    let mut cur = data.to_vec();
    let mut cur_shape = shape;
    for axis in (0..3).rev() {
        let taps = axis_taps::<T>(shape[axis], out_shape[axis], scale);
        let (next, next_shape) = resample_axis(&cur, cur_shape, axis, &taps);
        cur = next;
        cur_shape = next_shape;
    }
    cur
}

/// Adjoint of [`resample`] with respect to its input.
pub(crate) fn resample_adjoint<T: Real>(
    grad: &[T],
    in_shape: Shape,
    out_shape: Shape,
    scale: f64,
) -> Vec<T> {
    let mut cur = grad.to_vec();
    let mut cur_shape = out_shape;
    for axis in 0..3 {
        let taps = axis_taps::<T>(in_shape[axis], out_shape[axis], scale);
        let (next, next_shape) = resample_axis_adjoint(&cur, cur_shape, axis, in_shape[axis], &taps);
        cur = next;
        cur_shape = next_shape;
    }
    cur
}

pub(crate) fn doubled(shape: Shape) -> Shape {
    [shape[0] * 2, shape[1] * 2, shape[2] * 2]
}

/// Trilinear ×2 upsampling of one channel.
pub(crate) fn upsample2x<T: Real>(data: &[T], shape: Shape) -> Vec<T> {
    resample(data, shape, doubled(shape), 0.5)
}

pub(crate) fn upsample2x_adjoint<T: Real>(grad: &[T], shape: Shape) -> Vec<T> {
    resample_adjoint(grad, shape, doubled(shape), 0.5)
}

/// Clamped trilinear sample at continuous `(x, y, z)`.
#[inline]
pub(crate) fn sample<T: Real>(data: &[T], shape: Shape, x: T, y: T, z: T) -> T {
    let tx = tap(x, shape[2]);
    let ty = tap(y, shape[1]);
    let tz = tap(z, shape[0]);
    let (w, h) = (shape[2], shape[1]);
    let at = |xi: usize, yi: usize, zi: usize| data[(zi * h + yi) * w + xi];
    let one = T::one();
    let c00 = at(tx.i0, ty.i0, tz.i0) * (one - tx.w1) + at(tx.i1, ty.i0, tz.i0) * tx.w1;
    let c10 = at(tx.i0, ty.i1, tz.i0) * (one - tx.w1) + at(tx.i1, ty.i1, tz.i0) * tx.w1;
    let c01 = at(tx.i0, ty.i0, tz.i1) * (one - tx.w1) + at(tx.i1, ty.i0, tz.i1) * tx.w1;
    let c11 = at(tx.i0, ty.i1, tz.i1) * (one - tx.w1) + at(tx.i1, ty.i1, tz.i1) * tx.w1;
    let c0 = c00 * (one - ty.w1) + c10 * ty.w1;
    let c1 = c01 * (one - ty.w1) + c11 * ty.w1;
    c0 * (one - tz.w1) + c1 * tz.w1
}

/// Partial derivatives `(∂/∂x, ∂/∂y, ∂/∂z)` of [`sample`]; zero along axes
/// where the coordinate was clamped.
#[inline]
pub(crate) fn sample_gradient<T: Real>(data: &[T], shape: Shape, x: T, y: T, z: T) -> [T; 3] {
    let inside = |c: T, n: usize| c >= T::zero() && c <= T::from_usize(n - 1).unwrap();
    let tx = tap(x, shape[2]);
    let ty = tap(y, shape[1]);
    let tz = tap(z, shape[0]);
    let (w, h) = (shape[2], shape[1]);
    let at = |xi: usize, yi: usize, zi: usize| data[(zi * h + yi) * w + xi];
    let one = T::one();
    let v000 = at(tx.i0, ty.i0, tz.i0);
    let v100 = at(tx.i1, ty.i0, tz.i0);
    let v010 = at(tx.i0, ty.i1, tz.i0);
    let v110 = at(tx.i1, ty.i1, tz.i0);
    let v001 = at(tx.i0, ty.i0, tz.i1);
    let v101 = at(tx.i1, ty.i0, tz.i1);
    let v011 = at(tx.i0, ty.i1, tz.i1);
    let v111 = at(tx.i1, ty.i1, tz.i1);
    let (fx, fy, fz) = (tx.w1, ty.w1, tz.w1);
    let (gx, gy, gz) = (one - fx, one - fy, one - fz);
    let dx = ((v100 - v000) * gy + (v110 - v010) * fy) * gz + ((v101 - v001) * gy + (v111 - v011) * fy) * fz;
    let dy = ((v010 - v000) * gx + (v110 - v100) * fx) * gz + ((v011 - v001) * gx + (v111 - v101) * fx) * fz;
    let dz = ((v001 - v000) * gx + (v101 - v100) * fx) * gy + ((v011 - v010) * gx + (v111 - v110) * fx) * fy;
    let mask = |d: T, c: T, n: usize| if inside(c, n) { d } else { T::zero() };
    [mask(dx, x, shape[2]), mask(dy, y, shape[1]), mask(dz, z, shape[0])]
}

/// Sum over the cube of side `2·radius + 1` centred at each voxel, truncated
/// at the grid border.
pub(crate) fn box_sum<T: Real>(data: &[T], shape: Shape, radius: usize) -> Vec<T> {
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut next = vec![T::zero(); cur.len()];
        let mut prefix = vec![T::zero(); n + 1];
        for a in 0..outer {
            for k in 0..inner {
                let base = a * n * inner + k;
                for i in 0..n {
                    prefix[i + 1] = prefix[i] + cur[base + i * inner];
                }
                for i in 0..n {
                    let lo = i.saturating_sub(radius);
                    let hi = (i + radius + 1).min(n);
                    next[base + i * inner] = prefix[hi] - prefix[lo];
                }
            }
        }
        cur = next;
    }
    cur
}

/// Number of in-domain voxels in each truncated window of [`box_sum`].
pub(crate) fn box_count(shape: Shape, radius: usize) -> Vec<usize> {
    let span = |i: usize, n: usize| (i + radius + 1).min(n) - i.saturating_sub(radius);
    let mut out = Vec::with_capacity(numel(shape));
    for z in 0..shape[0] {
        let cz = span(z, shape[0]);
        for y in 0..shape[1] {
            let cy = span(y, shape[1]);
            for x in 0..shape[2] {
                out.push(cz * cy * span(x, shape[2]));
            }
        }
    }
    out
}

/// Index pair `(lo, hi)` of the one-sided difference at `i` on a size-`n`
/// axis: forward everywhere except the last index, which looks backward.
#[inline]
pub(crate) fn diff_pair(i: usize, n: usize) -> (usize, usize) {
    if i + 1 < n {
        (i, i + 1)
    } else {
        (i - 1, i)
    }
}

/// Memory strides of the x, y and z axes.
#[inline]
pub(crate) fn strides(shape: Shape) -> [usize; 3] {
    [1, shape[2], shape[1] * shape[2]]
}
