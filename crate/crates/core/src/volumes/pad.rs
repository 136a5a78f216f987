//! Edge-replicate padding to a size multiple and the matching crop.

use crate::error::{Error, Result};
use crate::field_ops::DisplacementField;

use super::{LabelMap, Real, Shape, Volume};

/// Smallest shape ≥ `shape` whose extents are multiples of `m`.
pub fn padded_shape(shape: Shape, m: usize) -> Shape {
    shape.map(|n| n.div_ceil(m) * m)
}

fn pad_with<T: Copy>(src: &[T], shape: Shape, to: Shape) -> Vec<T> {
    let [d, h, w] = shape;
    let mut out = Vec::with_capacity(to.iter().product());
    for z in 0..to[0] {
        let zs = z.min(d - 1);
        for y in 0..to[1] {
            let row = (zs * h + y.min(h - 1)) * w;
            out.extend_from_slice(&src[row..row + w]);
            let last = src[row + w - 1];
            out.extend(std::iter::repeat_n(last, to[2] - w));
        }
    }
    out
}

fn crop_with<T: Copy>(src: &[T], shape: Shape, to: Shape) -> Vec<T> {
    let [_, h, w] = shape;
    let mut out = Vec::with_capacity(to.iter().product());
    for z in 0..to[0] {
        for y in 0..to[1] {
            let row = (z * h + y) * w;
            out.extend_from_slice(&src[row..row + to[2]]);
        }
    }
    out
}

fn check(shape: Shape, to: Shape, grow: bool) -> Result<()> {
    let ok = shape
        .iter()
        .zip(&to)
        .all(|(&a, &b)| a > 0 && if grow { b >= a } else { b <= a && b > 0 });
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!("cannot resize {shape:?} to {to:?}")))
    }
}

/// Pads `vol` at the high end of each axis by repeating the edge voxel.
pub fn pad_replicate<T: Real>(vol: &Volume<T>, to: Shape) -> Result<Volume<T>> {
    check(vol.shape(), to, true)?;
    Volume::new(to, pad_with(vol.data(), vol.shape(), to))
}

pub fn pad_labels(labels: &LabelMap, to: Shape) -> Result<LabelMap> {
    check(labels.shape(), to, true)?;
    LabelMap::new(to, pad_with(labels.data(), labels.shape(), to))
}

/// Keeps the low corner of `vol` with shape `to`.
pub fn crop<T: Real>(vol: &Volume<T>, to: Shape) -> Result<Volume<T>> {
    check(vol.shape(), to, false)?;
    Volume::new(to, crop_with(vol.data(), vol.shape(), to))
}

pub fn crop_field<T: Real>(field: &DisplacementField<T>, to: Shape) -> Result<DisplacementField<T>> {
    let shape = field.shape();
    check(shape, to, false)?;
    let data = (0..3)
        .flat_map(|c| crop_with(field.component(c), shape, to))
        .collect();
    DisplacementField::new(to, data)
}
