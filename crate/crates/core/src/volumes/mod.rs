//! Scalar volumes, label maps, pyramids, file I/O and synthetic data.

mod io;
mod pad;
mod pyramid;
mod synth;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use io::{
    load_field, load_labels, load_volume, save_field, save_labels, save_volume, write_atomic, FileFormat,
};
pub use pad::{crop, crop_field, pad_labels, pad_replicate, padded_shape};
pub use pyramid::{build_pyramid, downsample_half, ImagePyramid, MAX_LEVELS};
pub use synth::{
    gaussian_blur, make_dataset, make_phantom, make_phantom_with, make_smooth_field, make_smooth_field_with_sigma, DatasetSpec,
    PhantomParams, SynthSubject,
};

/// Floating point element type of volumes and fields.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the float type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Grid extent in canonical `(D, H, W)` order; `W` (x) varies fastest in memory.
pub type Shape = [usize; 3];

#[inline]
pub fn numel(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

/// Linear offset of voxel `(x, y, z)`.
#[inline]
pub fn offset(shape: Shape, x: usize, y: usize, z: usize) -> usize {
    (z * shape[1] + y) * shape[2] + x
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    /// Wraps `data`, checking its length and that every value is finite.
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::Shape(format!(
                "{} values do not fill a {:?} grid",
                data.len(),
                shape
            )));
        }
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::Shape(format!("empty grid {shape:?}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite intensity at offset {i}")));
        }
        Ok(Volume { shape, data })
    }

    pub(crate) fn from_vec_unchecked(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), numel(shape));
        Volume { shape, data }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Volume {
            shape,
            data: vec![value; numel(shape)],
        }
    }

    /// Builds a volume from a function of voxel coordinates `(x, y, z)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(numel(shape));
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume { shape, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[offset(self.shape, x, y, z)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Volume {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(0.0)).unwrap_or_else(U::zero))
                .collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    /// Min-max rescaling to `[0, 1]`.
    pub fn normalize_intensity(&self) -> Result<Self> {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return Err(Error::Degenerate(
                "cannot normalize a constant volume".into(),
            ));
        }
        let span = hi - lo;
        Ok(self.map(|v| if v == hi { T::one() } else { (v - lo) / span }))
    }
}

/// Free-function form of [`Volume::normalize_intensity`].
pub fn normalize_intensity<T: Real>(vol: &Volume<T>) -> Result<Volume<T>> {
    vol.normalize_intensity()
}

/// Integer segmentation aligned with a [`Volume`]; label 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    shape: Shape,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(shape: Shape, data: Vec<u32>) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::Shape(format!(
                "{} labels do not fill a {:?} grid",
                data.len(),
                shape
            )));
        }
        Ok(LabelMap { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> u32) -> Self {
        let mut data = Vec::with_capacity(numel(shape));
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    data.push(f(x, y, z));
                }
            }
        }
        LabelMap { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.data[offset(self.shape, x, y, z)]
    }

    /// Sorted set of labels present, background included.
    pub fn label_set(&self) -> Vec<u32> {
        let mut set: Vec<u32> = self.data.clone();
        set.sort_unstable();
        set.dedup();
        set
    }

    /// Sorted non-zero labels present.
    pub fn foreground_labels(&self) -> Vec<u32> {
        self.label_set().into_iter().filter(|&l| l != 0).collect()
    }

    pub fn histogram(&self) -> std::collections::BTreeMap<u32, usize> {
        let mut h = std::collections::BTreeMap::new();
        for &l in &self.data {
            *h.entry(l).or_insert(0) += 1;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_affine_examples() {
        let v = Volume::<f64>::new([1, 1, 3], vec![0.0, 5.0, 10.0]).unwrap();
        assert_eq!(v.normalize_intensity().unwrap().data(), &[0.0, 0.5, 1.0]);
        let v = Volume::<f64>::new([1, 1, 3], vec![-2.0, 0.0, 2.0]).unwrap();
        assert_eq!(v.normalize_intensity().unwrap().data(), &[0.0, 0.5, 1.0]);
        let v = Volume::<f32>::new([1, 2, 2], vec![0.0, 0.25, 0.75, 1.0]).unwrap();
        assert_eq!(v.normalize_intensity().unwrap(), v);
    }

    #[test]
    fn normalize_rejects_constant() {
        let v = Volume::<f32>::filled([2, 2, 2], 0.3);
        assert!(matches!(
            v.normalize_intensity(),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn new_rejects_non_finite_and_bad_len() {
        assert!(Volume::<f32>::new([1, 1, 2], vec![0.0, f32::NAN]).is_err());
        assert!(Volume::<f32>::new([1, 1, 3], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn offsets_are_x_fastest() {
        let v = Volume::<f32>::from_fn([2, 3, 4], |x, y, z| (x + 10 * y + 100 * z) as f32);
        assert_eq!(v.data()[1], 1.0);
        assert_eq!(v.data()[4], 10.0);
        assert_eq!(v.data()[12], 100.0);
        assert_eq!(v.get(3, 2, 1), 123.0);
    }
}
