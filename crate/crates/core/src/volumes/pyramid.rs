use crate::error::{Error, Result};
use crate::sampling;
use crate::volumes::{Real, Volume};

/// Deepest supported pyramid / number of registration steps.
pub const MAX_LEVELS: usize = 5;

/// Halves every axis with trilinear interpolation.
///
/// Output voxel `o` samples the input at `2·(o + 0.5) − 0.5` per axis, which
/// lands halfway between input voxels `2o` and `2o + 1`.
pub fn downsample_half<T: Real>(vol: &Volume<T>) -> Result<Volume<T>> {
    let shape = vol.shape();
    if shape.iter().any(|&n| n % 2 != 0) {
        return Err(Error::Shape(format!(
            "cannot halve {shape:?}: every axis must be even"
        )));
    }
    let out_shape = [shape[0] / 2, shape[1] / 2, shape[2] / 2];
    let data = sampling::resample(vol.data(), shape, out_shape, 2.0);
    Ok(Volume::from_vec_unchecked(out_shape, data))
}

/// Coarse-to-fine stack of a volume; `levels[0]` is the coarsest and the last
/// level is the original volume.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePyramid<T = f32> {
    levels: Vec<Volume<T>>,
}

impl<T: Real> ImagePyramid<T> {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Level `i` in `0..L`, coarsest first.
    pub fn level(&self, i: usize) -> &Volume<T> {
        &self.levels[i]
    }

    pub fn levels(&self) -> &[Volume<T>] {
        &self.levels
    }

    pub fn finest(&self) -> &Volume<T> {
        self.levels.last().expect("pyramid has at least one level")
    }

    pub fn cast<U: Real>(&self) -> ImagePyramid<U> {
        ImagePyramid {
            levels: self.levels.iter().map(Volume::cast).collect(),
        }
    }
}

pub fn build_pyramid<T: Real>(vol: &Volume<T>, levels: usize) -> Result<ImagePyramid<T>> {
    if !(1..=MAX_LEVELS).contains(&levels) {
        return Err(Error::Config(format!(
            "pyramid depth {levels} outside 1..={MAX_LEVELS}"
        )));
    }
    let factor = 1usize << (levels - 1);
    if vol.shape().iter().any(|&n| n % factor != 0) {
        return Err(Error::Shape(format!(
            "{:?} is not divisible by {factor} for a {levels}-level pyramid",
            vol.shape()
        )));
    }
    let mut stack = vec![vol.clone()];
    for _ in 1..levels {
        let next = downsample_half(stack.last().unwrap())?;
        stack.push(next);
    }
    stack.reverse();
    Ok(ImagePyramid { levels: stack })
}
