//! Synthetic phantoms and smooth random deformations for desk-scale runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::{njd_percent, warp_nearest, warp_trilinear, DisplacementField};
use crate::volumes::{numel, LabelMap, Real, Shape, Volume};

/// Separable Gaussian filter with replicated borders.
pub fn gaussian_blur<T: Real>(data: &[T], shape: Shape, sigma: f64) -> Vec<T> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let kernel: Vec<T> = kernel.into_iter().map(T::lit).collect();

    let mut cur = data.to_vec();
    for axis in 0..3 {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis] as isize;
        let mut next = vec![T::zero(); cur.len()];
        for a in 0..outer {
            for k in 0..inner {
                let base = a * shape[axis] * inner + k;
                for i in 0..n {
                    let mut acc = T::zero();
                    for (t, &w) in kernel.iter().enumerate() {
                        let j = (i + t as isize - radius).clamp(0, n - 1) as usize;
                        acc += w * cur[base + j * inner];
                    }
                    next[base + i as usize * inner] = acc;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Geometry of the blobs drawn by [`make_phantom`], as fractions of the
/// smallest grid axis.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Fraction of a blob's peak above which its voxels get the blob's label.
    pub label_threshold: f64,
    /// Blob centres are drawn from `[center_min, center_max]` of each axis.
    pub center_min: f64,
    pub center_max: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            sigma_min: 0.06,
            sigma_max: 0.12,
            label_threshold: 0.5,
            center_min: 0.25,
            center_max: 0.75,
        }
    }
}

struct Blob {
    center: [f64; 3],
    sigma: [f64; 3],
    amplitude: f64,
}

impl Blob {
    fn profile(&self, p: [f64; 3]) -> f64 {
        let r2: f64 = (0..3).map(|a| ((p[a] - self.center[a]) / self.sigma[a]).powi(2)).sum();
        (-0.5 * r2).exp()
    }
}

fn draw_blobs(rng: &mut ChaCha8Rng, shape: Shape, n_blobs: usize, params: &PhantomParams) -> Vec<Blob> {
    let min_dim = *shape.iter().min().unwrap() as f64;
    // Axis order of `center` / `sigma` is (x, y, z).
    let extent = [shape[2] as f64, shape[1] as f64, shape[0] as f64];
    let mut blobs: Vec<Blob> = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let mut candidate = None;
        for _ in 0..1000 {
            let sigma = [0; 3].map(|_| min_dim * rng.random_range(params.sigma_min..=params.sigma_max));
            let center = [0, 1, 2].map(|a| extent[a] * rng.random_range(params.center_min..params.center_max));
            let amplitude = rng.random_range(0.5..=1.0);
            let reach = |s: &[f64; 3]| s.iter().cloned().fold(0.0, f64::max);
            let clear = blobs.iter().all(|b| {
                let d2: f64 = (0..3).map(|a| (b.center[a] - center[a]).powi(2)).sum();
                d2.sqrt() > 1.25 * (reach(&b.sigma) + reach(&sigma))
            });
            let blob = Blob { center, sigma, amplitude };
            if clear {
                candidate = Some(blob);
                break;
            }
            candidate = Some(blob);
        }
        blobs.push(candidate.expect("at least one attempt"));
    }
    blobs
}

/// Adds `n` unlabelled blobs to `vol` and renormalises to `[0, 1]`.
fn add_blobs(vol: &Volume, seed: u64, n: usize, params: &PhantomParams) -> Result<Volume> {
    let shape = vol.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = draw_blobs(&mut rng, shape, n, params);
    let mut values = Vec::with_capacity(numel(shape));
    let mut i = 0;
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let p = [x as f64, y as f64, z as f64];
                let extra: f64 = blobs.iter().map(|b| b.amplitude * b.profile(p)).sum();
                values.push(vol.data()[i] as f64 + extra);
                i += 1;
            }
        }
    }
    Ok(Volume::<f64>::new(shape, values)?.normalize_intensity()?.cast::<f32>())
}

/// Deterministic phantom of `n_blobs` anisotropic Gaussian blobs, min-max
/// normalised, plus the matching label map (blob `k` gets label `k + 1`).
pub fn make_phantom(seed: u64, shape: Shape, n_blobs: usize) -> Result<(Volume, LabelMap)> {
    make_phantom_with(seed, shape, n_blobs, &PhantomParams::default())
}

pub fn make_phantom_with(
    seed: u64,
    shape: Shape,
    n_blobs: usize,
    params: &PhantomParams,
) -> Result<(Volume, LabelMap)> {
    if shape.iter().any(|&n| n == 0 || n % 16 != 0) {
        return Err(Error::Shape(format!("phantom grid {shape:?} must be divisible by 16")));
    }
    if n_blobs == 0 {
        return Err(Error::Config("a phantom needs at least one blob".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = draw_blobs(&mut rng, shape, n_blobs, params);

    let mut values = Vec::with_capacity(numel(shape));
    let mut labels = Vec::with_capacity(numel(shape));
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let p = [x as f64, y as f64, z as f64];
                let mut sum = 0.0;
                let mut best = (0u32, 0.0f64);
                for (k, b) in blobs.iter().enumerate() {
                    let g = b.profile(p);
                    sum += b.amplitude * g;
                    if g >= params.label_threshold && b.amplitude * g > best.1 {
                        best = (k as u32 + 1, b.amplitude * g);
                    }
                }
                values.push(sum);
                labels.push(best.0);
            }
        }
    }
    let vol = Volume::<f64>::new(shape, values)?.normalize_intensity()?.cast::<f32>();
    Ok((vol, LabelMap::new(shape, labels)?))
}

/// Smooth random displacement field whose largest vector has length
/// `max_disp` voxels.
///
/// Fields with `max_disp ≤ 2` are guaranteed fold-free: if the first draw
/// has any non-positive Jacobian determinant, fresh noise is smoothed with a
/// wider kernel.
pub fn make_smooth_field(seed: u64, shape: Shape, max_disp: f64) -> Result<DisplacementField> {
    let min_dim = *shape.iter().min().unwrap_or(&0) as f64;
    make_smooth_field_with_sigma(seed, shape, max_disp, (min_dim / 8.0).max(1.0))
}

pub fn make_smooth_field_with_sigma(
    seed: u64,
    shape: Shape,
    max_disp: f64,
    sigma: f64,
) -> Result<DisplacementField> {
    if !(max_disp > 0.0) || !max_disp.is_finite() {
        return Err(Error::Config(format!("max_disp must be positive, got {max_disp}")));
    }
    if shape.iter().any(|&n| n < 2) {
        return Err(Error::Shape(format!("field grid {shape:?} needs every axis ≥ 2")));
    }
    let n = numel(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    const RETRIES: usize = 8;
    let mut sigma = sigma;
    for _ in 0..RETRIES {
        // Noise is smoothed on a grid padded by 3σ and cropped, so the
        // replicated border of the blur does not inflate the edge variance.
        let pad = (3.0 * sigma).ceil() as usize;
        let padded = shape.map(|d| d + 2 * pad);
        let pn = numel(padded);
        let mut data = Vec::with_capacity(3 * n);
        for _ in 0..3 {
            let noise: Vec<f64> = (0..pn).map(|_| rng.sample(StandardNormal)).collect();
            let smooth = gaussian_blur(&noise, padded, sigma);
            for z in 0..shape[0] {
                for y in 0..shape[1] {
                    let row = ((z + pad) * padded[1] + y + pad) * padded[2] + pad;
                    data.extend_from_slice(&smooth[row..row + shape[2]]);
                }
            }
        }
        let peak = (0..n)
            .map(|i| (0..3).map(|c| data[c * n + i] * data[c * n + i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if peak > 0.0 {
            let scale = max_disp / peak;
            let field = DisplacementField::<f64>::from_vec_unchecked(
                shape,
                data.iter().map(|v| v * scale).collect(),
            )
            .cast::<f32>();
            if max_disp > 2.0 || njd_percent(&field)? == 0.0 {
                return Ok(field);
            }
        }
        sigma *= 1.5;
    }
    Err(Error::Generation(format!(
        "no fold-free field with max displacement {max_disp} after {RETRIES} attempts"
    )))
}

/// Settings of a synthetic registration dataset: one template phantom,
/// each subject a smooth random deformation of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub seed: u64,
    pub count: usize,
    pub shape: Shape,
    pub n_blobs: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub center_min: f64,
    pub center_max: f64,
    /// Smoothing width of the deformations in voxels; `None` uses the
    /// [`make_smooth_field`] default.
    pub field_sigma: Option<f64>,
    /// Largest displacement of each subject's deformation, in voxels.
    pub max_disp: f64,
    /// Unlabelled blobs added to each subject after warping, so subjects
    /// are not exact deformations of each other.
    pub extra_blobs: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 0,
            count: 30,
            shape: [48, 48, 48],
            n_blobs: 150,
            sigma_min: 0.03,
            sigma_max: 0.06,
            center_min: 0.05,
            center_max: 0.95,
            field_sigma: Some(14.0),
            max_disp: 2.0,
            extra_blobs: 0,
        }
    }
}

/// One generated subject and the deformation that produced it from the
/// template.
#[derive(Clone, Debug)]
pub struct SynthSubject {
    pub image: Volume,
    pub labels: LabelMap,
    pub field: DisplacementField,
}

/// Template `T` and subjects `T ∘ φ_k`, each optionally with
/// `extra_blobs` unlabelled blobs of its own. Any two subjects
/// differ by a deformation of at most twice `max_disp`.
pub fn make_dataset(spec: &DatasetSpec) -> Result<(Volume, LabelMap, Vec<SynthSubject>)> {
    let params = PhantomParams {
        sigma_min: spec.sigma_min,
        sigma_max: spec.sigma_max,
        center_min: spec.center_min,
        center_max: spec.center_max,
        ..Default::default()
    };
    let (template, labels) = make_phantom_with(spec.seed, spec.shape, spec.n_blobs, &params)?;
    let subjects = (0..spec.count as u64)
        .map(|k| {
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(k + 1);
            let field = match spec.field_sigma {
                Some(sigma) => make_smooth_field_with_sigma(seed, spec.shape, spec.max_disp, sigma)?,
                None => make_smooth_field(seed, spec.shape, spec.max_disp)?,
            };
            let mut image = warp_trilinear(&template, &field)?;
            if spec.extra_blobs > 0 {
                image = add_blobs(&image, seed ^ 0x5eed_b10b, spec.extra_blobs, &params)?;
            }
            Ok(SynthSubject {
                image,
                labels: warp_nearest(&labels, &field)?,
                field,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((template, labels, subjects))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_and_normalized() {
        let (v1, l1) = make_phantom(7, [16, 16, 32], 3).unwrap();
        let (v2, l2) = make_phantom(7, [16, 16, 32], 3).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(l1, l2);
        assert_eq!(l1.label_set(), vec![0, 1, 2, 3]);
        let (lo, hi) = v1.min_max();
        assert_eq!((lo, hi), (0.0, 1.0));
        let (v3, _) = make_phantom(8, [16, 16, 32], 3).unwrap();
        assert_ne!(v1, v3);
    }

    #[test]
    fn phantom_preconditions() {
        assert!(matches!(make_phantom(0, [16, 16, 20], 2), Err(Error::Shape(_))));
        assert!(matches!(make_phantom(0, [16, 16, 16], 0), Err(Error::Config(_))));
    }

    #[test]
    fn smooth_field_postconditions() {
        let f = make_smooth_field(3, [16, 16, 16], 1.5).unwrap();
        assert!((f.max_magnitude() - 1.5).abs() < 1e-6);
        assert_eq!(f, make_smooth_field(3, [16, 16, 16], 1.5).unwrap());
        assert_eq!(njd_percent(&f).unwrap(), 0.0);
        let tiny = make_smooth_field(4, [8, 8, 8], 0.001).unwrap();
        assert_eq!(njd_percent(&tiny).unwrap(), 0.0);
        assert!((tiny.max_magnitude() - 0.001).abs() < 1e-6);
        assert!(make_smooth_field(1, [8, 8, 8], 0.0).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let data = vec![0.25f64; 5 * 6 * 7];
        let out = gaussian_blur(&data, [5, 6, 7], 1.3);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }
}
