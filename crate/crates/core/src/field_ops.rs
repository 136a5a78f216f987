//! Displacement-field algebra.
//!
//! A field stores one displacement vector per voxel in voxel units of its own
//! grid. Components are planar: all `u_x` values, then `u_y`, then `u_z`,
//! each in the volume's x-fastest order. The zero field is the identity.

use crate::error::{Error, Result};
use crate::sampling::{self, diff_pair, strides};
use crate::volumes::{numel, offset, LabelMap, Real, Shape, Volume};

#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> DisplacementField<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != 3 * numel(shape) {
            return Err(Error::Shape(format!(
                "{} values do not fill a 3-component {:?} field",
                data.len(),
                shape
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite displacement".into()));
        }
        Ok(DisplacementField { shape, data })
    }

    pub(crate) fn from_vec_unchecked(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), 3 * numel(shape));
        DisplacementField { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        DisplacementField {
            shape,
            data: vec![T::zero(); 3 * numel(shape)],
        }
    }

    /// Builds a field from a function of voxel coordinates returning `[u_x, u_y, u_z]`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> [T; 3]) -> Self {
        let n = numel(shape);
        let mut data = vec![T::zero(); 3 * n];
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let i = offset(shape, x, y, z);
                    let u = f(x, y, z);
                    for c in 0..3 {
                        data[c * n + i] = u[c];
                    }
                }
            }
        }
        DisplacementField { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Component `c` (0 = x, 1 = y, 2 = z).
    pub fn component(&self, c: usize) -> &[T] {
        let n = numel(self.shape);
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> [T; 3] {
        let n = numel(self.shape);
        let i = offset(self.shape, x, y, z);
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn scale(&self, factor: T) -> Self {
        DisplacementField {
            shape: self.shape,
            data: self.data.iter().map(|&v| v * factor).collect(),
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        let n = numel(self.shape);
        (0..n)
            .map(|i| {
                (0..3)
                    .map(|c| self.data[c * n + i].to_f64().unwrap().powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = numel(self.shape);
        (0..n)
            .map(|i| {
                (0..3)
                    .map(|c| self.data[c * n + i].to_f64().unwrap().powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / n as f64
    }

    pub fn cast<U: Real>(&self) -> DisplacementField<U> {
        DisplacementField {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

fn check_same(a: Shape, b: Shape, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn check_diff_axes(shape: Shape) -> Result<()> {
    if shape.iter().any(|&n| n < 2) {
        return Err(Error::Shape(format!(
            "finite differences need every axis ≥ 2, got {shape:?}"
        )));
    }
    Ok(())
}

/// Samples `image` at `p + u(p)` for every voxel (slice-level kernel).
pub(crate) fn warp_slices<T: Real>(image: &[T], shape: Shape, field: &[T]) -> Vec<T> {
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let i = offset(shape, x, y, z);
                let px = T::from_usize(x).unwrap() + field[i];
                let py = T::from_usize(y).unwrap() + field[n + i];
                let pz = T::from_usize(z).unwrap() + field[2 * n + i];
                out.push(sampling::sample(image, shape, px, py, pz));
            }
        }
    }
    out
}

/// Gradient of `Σ grad_out · warp(image, field)` with respect to the field.
pub(crate) fn warp_field_gradient<T: Real>(
    image: &[T],
    shape: Shape,
    field: &[T],
    grad_out: &[T],
) -> Vec<T> {
    let n = numel(shape);
    let mut grad = vec![T::zero(); 3 * n];
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let i = offset(shape, x, y, z);
                let g = grad_out[i];
                if g == T::zero() {
                    continue;
                }
                let px = T::from_usize(x).unwrap() + field[i];
                let py = T::from_usize(y).unwrap() + field[n + i];
                let pz = T::from_usize(z).unwrap() + field[2 * n + i];
                let d = sampling::sample_gradient(image, shape, px, py, pz);
                for c in 0..3 {
                    grad[c * n + i] = g * d[c];
                }
            }
        }
    }
    grad
}

/// `vol ∘ φ`: trilinear resampling at `p + u(p)`, clamped to the grid.
pub fn warp_trilinear<T: Real>(vol: &Volume<T>, field: &DisplacementField<T>) -> Result<Volume<T>> {
    check_same(vol.shape(), field.shape(), "warp_trilinear")?;
    Ok(Volume::from_vec_unchecked(
        vol.shape(),
        warp_slices(vol.data(), vol.shape(), field.data()),
    ))
}

/// Field gradient of `Σ_p grad_out(p) · (vol ∘ φ)(p)`.
pub fn warp_trilinear_backward<T: Real>(
    vol: &Volume<T>,
    field: &DisplacementField<T>,
    grad_out: &[T],
) -> Result<DisplacementField<T>> {
    check_same(vol.shape(), field.shape(), "warp_trilinear_backward")?;
    if grad_out.len() != vol.len() {
        return Err(Error::Shape("gradient length does not match volume".into()));
    }
    Ok(DisplacementField::from_vec_unchecked(
        vol.shape(),
        warp_field_gradient(vol.data(), vol.shape(), field.data(), grad_out),
    ))
}

/// Label warping by nearest voxel to `p + u(p)`, clamped to the grid.
pub fn warp_nearest<T: Real>(labels: &LabelMap, field: &DisplacementField<T>) -> Result<LabelMap> {
    let shape = labels.shape();
    check_same(shape, field.shape(), "warp_nearest")?;
    let n = numel(shape);
    let u = field.data();
    let pick = |c: f64, len: usize| -> usize { c.round().clamp(0.0, (len - 1) as f64) as usize };
    let mut out = Vec::with_capacity(n);
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let i = offset(shape, x, y, z);
                let sx = pick(x as f64 + u[i].to_f64().unwrap(), shape[2]);
                let sy = pick(y as f64 + u[n + i].to_f64().unwrap(), shape[1]);
                let sz = pick(z as f64 + u[2 * n + i].to_f64().unwrap(), shape[0]);
                out.push(labels.get(sx, sy, sz));
            }
        }
    }
    LabelMap::new(shape, out)
}

/// Doubles the grid with trilinear interpolation and doubles every
/// displacement so it stays correct in the finer grid's voxel units.
pub fn upsample_field_2x<T: Real>(field: &DisplacementField<T>) -> DisplacementField<T> {
    let shape = field.shape();
    let up = sampling::doubled(shape);
    let two = T::lit(2.0);
    let mut data = Vec::with_capacity(3 * numel(up));
    for c in 0..3 {
        data.extend(sampling::upsample2x(field.component(c), shape).into_iter().map(|v| v * two));
    }
    DisplacementField::from_vec_unchecked(up, data)
}

/// Voxel-wise sum `a + b`.
pub fn add_fields<T: Real>(a: &DisplacementField<T>, b: &DisplacementField<T>) -> Result<DisplacementField<T>> {
    check_same(a.shape(), b.shape(), "add_fields")?;
    Ok(DisplacementField::from_vec_unchecked(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
    ))
}

/// Per-voxel determinant of `∂(p + u(p))/∂p`.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMap<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> JacobianMap<T> {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[offset(self.shape, x, y, z)]
    }
}

/// One-sided difference pairs along x, y and z at voxel `i`.
#[inline]
pub(crate) fn stencil(shape: Shape, x: usize, y: usize, z: usize) -> [(usize, usize); 3] {
    let st = strides(shape);
    let i = offset(shape, x, y, z);
    let coords = [x, y, z];
    let sizes = [shape[2], shape[1], shape[0]];
    let mut out = [(0, 0); 3];
    for a in 0..3 {
        let (lo, hi) = diff_pair(coords[a], sizes[a]);
        let base = i - coords[a] * st[a];
        out[a] = (base + lo * st[a], base + hi * st[a]);
    }
    out
}

/// Jacobian matrix `J[c][a] = δ_ca + ∂u_c/∂x_a` at voxel `i` given its stencil.
#[inline]
pub(crate) fn jacobian_at<T: Real>(u: &[T], n: usize, st: &[(usize, usize); 3]) -> [[T; 3]; 3] {
    let mut j = [[T::zero(); 3]; 3];
    for c in 0..3 {
        for a in 0..3 {
            let (lo, hi) = st[a];
            j[c][a] = u[c * n + hi] - u[c * n + lo];
        }
        j[c][c] += T::one();
    }
    j
}

#[inline]
pub(crate) fn det3<T: Real>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor matrix: `∂det/∂m[r][c]`.
#[inline]
pub(crate) fn cofactors<T: Real>(m: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut out = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
            out[r][c] = m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
        }
    }
    out
}

/// Forward differences, backward on the last slice of each axis.
pub fn jacobian_determinants<T: Real>(field: &DisplacementField<T>) -> Result<JacobianMap<T>> {
    let shape = field.shape();
    check_diff_axes(shape)?;
    let n = numel(shape);
    let u = field.data();
    let mut data = Vec::with_capacity(n);
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let st = stencil(shape, x, y, z);
                data.push(det3(&jacobian_at(u, n, &st)));
            }
        }
    }
    Ok(JacobianMap { shape, data })
}

/// Percentage (0–100) of voxels whose Jacobian determinant is ≤ 0.
pub fn njd_percent<T: Real>(field: &DisplacementField<T>) -> Result<f64> {
    let jac = jacobian_determinants(field)?;
    let folded = jac.data.iter().filter(|&&d| d <= T::zero()).count();
    Ok(100.0 * folded as f64 / jac.data.len() as f64)
}
