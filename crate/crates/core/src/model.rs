//! The registration network: a weight-shared dual-path encoder followed by a
//! cumulative decoder that emits `L` coarse-to-fine displacement fields in a
//! single forward pass.
//!
//! Layer layout (indices into [`Model::layers`]):
//!
//! * `0..5`: encoder convolutions, stride 1 then 2, 2, 2, 2;
//! * `5..10`: decoder convolutions `d1..d5`, coarsest first;
//! * `10..10+L`: registration heads, one per step.
//!
//! Step `i` (1-based) fires after decoder convolution `d_{5-L+i}`, whose grid
//! matches pyramid level `i`. From step 2 on, the decoder convolution feeding
//! the head also receives the upsampled previous field and the moving image
//! of that level warped by it.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_ops::DisplacementField;
use crate::losses::LossWeights;
use crate::nn::{ConvLayer, Graph, NodeId, Tensor, KERNEL_VOLUME};
use crate::volumes::{build_pyramid, ImagePyramid, Shape, Volume, MAX_LEVELS};

pub const ENCODER_DEPTH: usize = 5;
/// Input dimensions must be multiples of this.
pub const SIZE_MULTIPLE: usize = 16;

const ENC: usize = 0;
const DEC: usize = ENCODER_DEPTH;
const HEAD: usize = 2 * ENCODER_DEPTH;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of registration steps `L`, 1 to 5.
    pub levels: usize,
    pub enc_channels: [usize; ENCODER_DEPTH],
    pub dec_channels: [usize; ENCODER_DEPTH],
    pub leaky_slope: f32,
    /// Standard deviation of the head weight initialisation.
    pub head_init_scale: f32,
    pub loss: LossWeights,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            levels: 3,
            enc_channels: [16, 32, 32, 64, 64],
            dec_channels: [64, 64, 64, 32, 16],
            leaky_slope: 0.2,
            head_init_scale: 1e-5,
            loss: LossWeights::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LEVELS).contains(&self.levels) {
            return Err(Error::Config(format!("levels must be in 1..=5, got {}", self.levels)));
        }
        if self.enc_channels.iter().chain(&self.dec_channels).any(|&c| c == 0) {
            return Err(Error::Config("channel counts must be ≥ 1".into()));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::Config(format!("invalid leaky_slope {}", self.leaky_slope)));
        }
        if !self.head_init_scale.is_finite() || self.head_init_scale < 0.0 {
            return Err(Error::Config(format!("invalid head_init_scale {}", self.head_init_scale)));
        }
        self.loss.validate()
    }

    /// Input and output channels of every layer, in layout order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let l = self.levels;
        let enc = self.enc_channels;
        let dec = self.dec_channels;
        let mut shapes = Vec::with_capacity(HEAD + l);
        let mut prev = 1;
        for &c in &enc {
            shapes.push((prev, c));
            prev = c;
        }
        for j in 1..=ENCODER_DEPTH {
            let r = ENCODER_DEPTH + 1 - j;
            let mut cin = enc[r - 1];
            if j > 1 {
                cin += dec[j - 2];
            }
            if r >= l {
                cin += enc[r - 1];
            }
            if j > first_step_layer(l) {
                cin += 4;
            }
            shapes.push((cin, dec[j - 1]));
        }
        for i in 1..=l {
            shapes.push((dec[step_layer(l, i) - 1], 3));
        }
        shapes
    }
}

/// Decoder convolution (1-based) after which the first step fires.
fn first_step_layer(levels: usize) -> usize {
    ENCODER_DEPTH + 1 - levels
}

/// Decoder convolution (1-based) feeding step `i` (1-based).
fn step_layer(levels: usize, i: usize) -> usize {
    ENCODER_DEPTH - levels + i
}

/// Moving-image encoder levels (1-based) that reach the decoder.
pub fn select_propagation(levels: usize) -> Vec<usize> {
    (levels.max(1)..=ENCODER_DEPTH).collect()
}

/// Trainable parameters; the encoder is counted once.
pub fn param_count(cfg: &ModelConfig) -> usize {
    cfg.layer_shapes()
        .iter()
        .map(|&(ci, co)| ci * co * KERNEL_VOLUME + co)
        .sum()
}

/// Feature grids `F^1..F^5`, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationOutput {
    /// `φ_1..φ_L`, coarsest first.
    pub phi: Vec<DisplacementField>,
    /// `φ̂_1..φ̂_{L-1}`: each `φ_i` upsampled to the next grid.
    pub phi_hat: Vec<DisplacementField>,
}

impl RegistrationOutput {
    pub fn final_field(&self) -> &DisplacementField {
        self.phi.last().expect("at least one step")
    }
}

/// Invocation counts since the last reset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvocationCounts {
    pub encode_passes: usize,
    pub decode_passes: usize,
    /// Per layer, in layout order. Encoder layers run once per path.
    pub layers: Vec<usize>,
}

#[derive(Debug)]
struct Counters {
    encode: AtomicUsize,
    decode: AtomicUsize,
    layers: Vec<AtomicUsize>,
}

impl Counters {
    fn new(n: usize) -> Self {
        Counters {
            encode: AtomicUsize::new(0),
            decode: AtomicUsize::new(0),
            layers: (0..n).map(|_| AtomicUsize::new(0)).collect(),
        }
    }
}

/// Test hooks for the forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardHooks {
    /// Steps (1-based) whose head output is replaced by zeros.
    pub zero_heads: Vec<usize>,
}

/// Graph nodes of one forward pass.
pub struct ForwardNodes {
    pub phi: Vec<NodeId>,
    pub phi_hat: Vec<NodeId>,
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<ConvLayer>,
    counters: Counters,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            layers: self.layers.clone(),
            counters: Counters::new(self.layers.len()),
        }
    }
}

impl Model {
    /// Glorot-uniform convolutions with zero biases; heads drawn from
    /// `N(0, head_init_scale²)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.layer_shapes();
        let head = Normal::new(0.0f32, config.head_init_scale)
            .map_err(|e| Error::Config(format!("head_init_scale: {e}")))?;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(k, &(ci, co))| {
                let mut layer = ConvLayer::zeros(ci, co);
                if k >= HEAD {
                    layer.weight.iter_mut().for_each(|w| *w = head.sample(&mut rng));
                } else {
                    let limit = (6.0 / ((ci + co) * KERNEL_VOLUME) as f32).sqrt();
                    layer.weight.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
                }
                layer
            })
            .collect();
        Ok(Model {
            counters: Counters::new(shapes.len()),
            config,
            layers,
        })
    }

    /// Rebuilds a model from stored parameters, checking every layer shape.
    pub fn from_parts(config: ModelConfig, layers: Vec<ConvLayer>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Config(format!(
                "configuration needs {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (k, (&(ci, co), l)) in shapes.iter().zip(&layers).enumerate() {
            if l.in_channels != ci
                || l.out_channels != co
                || l.weight.len() != ci * co * KERNEL_VOLUME
                || l.bias.len() != co
            {
                return Err(Error::Config(format!("layer {k} does not match the configuration")));
            }
        }
        Ok(Model {
            counters: Counters::new(layers.len()),
            config,
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn counts(&self) -> InvocationCounts {
        InvocationCounts {
            encode_passes: self.counters.encode.load(Ordering::Relaxed),
            decode_passes: self.counters.decode.load(Ordering::Relaxed),
            layers: self.counters.layers.iter().map(|c| c.load(Ordering::Relaxed)).collect(),
        }
    }

    pub fn reset_counts(&self) {
        self.counters.encode.store(0, Ordering::Relaxed);
        self.counters.decode.store(0, Ordering::Relaxed);
        self.counters.layers.iter().for_each(|c| c.store(0, Ordering::Relaxed));
    }

    fn check_input(&self, fixed: &Volume, moving: &Volume) -> Result<Shape> {
        let shape = fixed.shape();
        if moving.shape() != shape {
            return Err(Error::Shape(format!("fixed {:?} vs moving {:?}", shape, moving.shape())));
        }
        if shape.iter().any(|&n| n == 0 || n % SIZE_MULTIPLE != 0) {
            return Err(Error::Shape(format!(
                "input dimensions must be multiples of {SIZE_MULTIPLE}, got {shape:?}"
            )));
        }
        Ok(shape)
    }

    fn conv(&self, g: &mut Graph, x: NodeId, layer: usize, stride: usize) -> NodeId {
        self.counters.layers[layer].fetch_add(1, Ordering::Relaxed);
        g.conv(x, layer, stride)
    }

    fn conv_act(&self, g: &mut Graph, x: NodeId, layer: usize, stride: usize) -> NodeId {
        let y = self.conv(g, x, layer, stride);
        g.leaky_relu(y, self.config.leaky_slope)
    }

    fn encode_nodes(&self, g: &mut Graph, fixed: &Volume, moving: &Volume) -> (Vec<NodeId>, Vec<NodeId>) {
        self.counters.encode.fetch_add(1, Ordering::Relaxed);
        let mut path = |img: &Volume| {
            let mut x = g.input(Tensor::from_volume(img));
            (0..ENCODER_DEPTH)
                .map(|k| {
                    x = self.conv_act(g, x, ENC + k, if k == 0 { 1 } else { 2 });
                    x
                })
                .collect::<Vec<_>>()
        };
        let f = path(fixed);
        let m = path(moving);
        (f, m)
    }

    /// Both feature pyramids, computed with the same encoder weights.
    pub fn encode(&self, fixed: &Volume, moving: &Volume) -> Result<(FeaturePyramid, FeaturePyramid)> {
        self.check_input(fixed, moving)?;
        let mut g = Graph::new(&self.layers);
        let (f, m) = self.encode_nodes(&mut g, fixed, moving);
        let collect = |ids: &[NodeId]| FeaturePyramid {
            levels: ids.iter().map(|&i| g.value(i).clone()).collect(),
        };
        Ok((collect(&f), collect(&m)))
    }

    /// Records the full forward pass on `g`. `moving_pyr` must be the
    /// `L`-level pyramid of `moving`.
    pub fn forward(
        &self,
        g: &mut Graph,
        fixed: &Volume,
        moving: &Volume,
        moving_pyr: &ImagePyramid,
        hooks: &ForwardHooks,
    ) -> Result<ForwardNodes> {
        self.check_input(fixed, moving)?;
        let l = self.config.levels;
        if moving_pyr.num_levels() != l || moving_pyr.finest().shape() != moving.shape() {
            return Err(Error::Shape("moving pyramid does not match the model levels".into()));
        }
        let (ff, fm) = self.encode_nodes(g, fixed, moving);
        self.counters.decode.fetch_add(1, Ordering::Relaxed);
        let first = first_step_layer(l);
        let mut phi = Vec::with_capacity(l);
        let mut phi_hat: Vec<NodeId> = Vec::with_capacity(l.saturating_sub(1));
        let mut prev: Option<NodeId> = None;
        for j in 1..=ENCODER_DEPTH {
            let r = ENCODER_DEPTH + 1 - j;
            let mut inputs = Vec::with_capacity(5);
            if let Some(p) = prev {
                inputs.push(g.upsample(p));
            }
            inputs.push(ff[r - 1]);
            if r >= l {
                inputs.push(fm[r - 1]);
            }
            let step = (j >= first).then(|| j - first + 1);
            if let (Some(i), Some(&hat)) = (step, phi_hat.last()) {
                let img = Tensor::from_volume(moving_pyr.level(i - 1));
                inputs.push(g.warp(&img, hat));
                inputs.push(hat);
            }
            let x = if inputs.len() == 1 { inputs[0] } else { g.concat(&inputs) };
            let d = self.conv_act(g, x, DEC + j - 1, 1);
            prev = Some(d);
            let Some(i) = step else { continue };
            let mut psi = self.conv(g, d, HEAD + i - 1, 1);
            if hooks.zero_heads.contains(&i) {
                psi = g.scale(psi, 0.0);
            }
            let field = match phi_hat.last() {
                Some(&hat) => g.add(hat, psi),
                None => psi,
            };
            phi.push(field);
            if i < l {
                let up = g.upsample(field);
                phi_hat.push(g.scale(up, 2.0));
            }
        }
        Ok(ForwardNodes { phi, phi_hat })
    }

    /// One encoder and one decoder pass producing `φ_1..φ_L`.
    pub fn register(&self, fixed: &Volume, moving: &Volume) -> Result<RegistrationOutput> {
        self.register_with_hooks(fixed, moving, &ForwardHooks::default())
    }

    pub fn register_with_hooks(
        &self,
        fixed: &Volume,
        moving: &Volume,
        hooks: &ForwardHooks,
    ) -> Result<RegistrationOutput> {
        self.check_input(fixed, moving)?;
        let pyr = build_pyramid(moving, self.config.levels)?;
        self.run(fixed, moving, &pyr, hooks)
    }

    /// [`Model::register`] with a precomputed `L`-level moving pyramid.
    pub fn register_with_pyramid(
        &self,
        fixed: &Volume,
        moving: &Volume,
        moving_pyr: &ImagePyramid,
    ) -> Result<RegistrationOutput> {
        self.run(fixed, moving, moving_pyr, &ForwardHooks::default())
    }

    fn run(
        &self,
        fixed: &Volume,
        moving: &Volume,
        moving_pyr: &ImagePyramid,
        hooks: &ForwardHooks,
    ) -> Result<RegistrationOutput> {
        let mut g = Graph::new(&self.layers);
        let nodes = self.forward(&mut g, fixed, moving, moving_pyr, hooks)?;
        let field = |id: NodeId| {
            let t = g.value(id);
            DisplacementField::from_vec_unchecked(t.shape(), t.data().to_vec())
        };
        Ok(RegistrationOutput {
            phi: nodes.phi.iter().map(|&i| field(i)).collect(),
            phi_hat: nodes.phi_hat.iter().map(|&i| field(i)).collect(),
        })
    }
}
