use crate::error::{Error, Result};
use crate::volumes::{numel, Shape, Volume};

/// Channel-first activation grid: `channels × D × H × W`, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    channels: usize,
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, shape: Shape) -> Self {
        Tensor {
            channels,
            shape,
            data: vec![0.0; channels * numel(shape)],
        }
    }

    pub fn from_vec(channels: usize, shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * numel(shape) {
            return Err(Error::Shape(format!(
                "{} values for a {channels}×{shape:?} tensor",
                data.len()
            )));
        }
        Ok(Tensor { channels, shape, data })
    }

    pub(crate) fn from_vec_unchecked(channels: usize, shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * numel(shape));
        Tensor { channels, shape, data }
    }

    pub fn from_volume(vol: &Volume) -> Self {
        Tensor {
            channels: 1,
            shape: vol.shape(),
            data: vol.data().to_vec(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spatial_len(&self) -> usize {
        numel(self.shape)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}
