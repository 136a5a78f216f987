use crate::field_ops::{warp_field_gradient, warp_slices};
use crate::nn::conv::{conv3d_backward, conv3d_forward, ConvGrad, ConvLayer};
use crate::nn::Tensor;
use crate::sampling::{doubled, upsample2x, upsample2x_adjoint};

pub type NodeId = usize;

enum Op {
    Input,
    Conv { input: NodeId, layer: usize, stride: usize },
    LeakyRelu { input: NodeId, slope: f32 },
    Upsample { input: NodeId },
    Scale { input: NodeId, factor: f32 },
    Concat { inputs: Vec<NodeId> },
    Add { a: NodeId, b: NodeId },
    Warp { image: Tensor, field: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter influences this node.
    trainable: bool,
}

/// Records one forward pass over a fixed set of convolution layers.
pub struct Graph<'p> {
    layers: &'p [ConvLayer],
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(layers: &'p [ConvLayer]) -> Self {
        Graph { layers, nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op, trainable: bool) -> NodeId {
        self.nodes.push(Node { value, op, trainable });
        self.nodes.len() - 1
    }

    fn trainable(&self, id: NodeId) -> bool {
        self.nodes[id].trainable
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input, false)
    }

    pub fn conv(&mut self, x: NodeId, layer: usize, stride: usize) -> NodeId {
        let y = conv3d_forward(self.value(x), &self.layers[layer], stride);
        self.push(y, Op::Conv { input: x, layer, stride }, true)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        let t = self.trainable(x);
        self.push(y, Op::LeakyRelu { input: x, slope }, t)
    }

    pub fn upsample(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let shape = v.shape();
        let data: Vec<f32> = (0..v.channels()).flat_map(|c| upsample2x(v.channel(c), shape)).collect();
        let y = Tensor::from_vec_unchecked(v.channels(), doubled(shape), data);
        let t = self.trainable(x);
        self.push(y, Op::Upsample { input: x }, t)
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> NodeId {
        let mut y = self.value(x).clone();
        y.data_mut().iter_mut().for_each(|v| *v *= factor);
        let t = self.trainable(x);
        self.push(y, Op::Scale { input: x, factor }, t)
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> NodeId {
        let shape = self.value(inputs[0]).shape();
        let mut data = Vec::new();
        let mut channels = 0;
        for &i in inputs {
            let v = self.value(i);
            assert_eq!(v.shape(), shape, "concat of mismatched grids");
            data.extend_from_slice(v.data());
            channels += v.channels();
        }
        let t = inputs.iter().any(|&i| self.trainable(i));
        self.push(
            Tensor::from_vec_unchecked(channels, shape, data),
            Op::Concat { inputs: inputs.to_vec() },
            t,
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut y = self.value(a).clone();
        assert_eq!(y.data().len(), self.value(b).data().len(), "add of mismatched tensors");
        y.add_assign(self.value(b));
        let t = self.trainable(a) || self.trainable(b);
        self.push(y, Op::Add { a, b }, t)
    }

    /// Warps a constant single-channel `image` by the 3-channel displacement
    /// node `field`.
    pub fn warp(&mut self, image: &Tensor, field: NodeId) -> NodeId {
        let f = self.value(field);
        assert_eq!(image.channels(), 1, "warp image must have one channel");
        assert_eq!(f.channels(), 3, "warp field must have three channels");
        assert_eq!(image.shape(), f.shape(), "warp of mismatched grids");
        let y = Tensor::from_vec_unchecked(1, image.shape(), warp_slices(image.data(), image.shape(), f.data()));
        let t = self.trainable(field);
        self.push(y, Op::Warp { image: image.clone(), field }, t)
    }

    /// Back-propagates the given output gradients and returns one gradient
    /// per layer.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor)>) -> Vec<ConvGrad> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let accumulate = |grads: &mut Vec<Option<Tensor>>, id: NodeId, g: Tensor| match &mut grads[id] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        };
        for (id, g) in seeds {
            assert_eq!(g.data().len(), self.value(id).data().len(), "seed gradient shape");
            accumulate(&mut grads, id, g);
        }
        let mut out: Vec<ConvGrad> = self.layers.iter().map(ConvGrad::zeros_like).collect();
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if !node.trainable {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Conv { input, layer, stride } => {
                    let need = self.trainable(*input);
                    let (dx, dw) = conv3d_backward(self.value(*input), &self.layers[*layer], *stride, &g, need);
                    let acc = &mut out[*layer];
                    acc.weight.iter_mut().zip(&dw.weight).for_each(|(a, b)| *a += b);
                    acc.bias.iter_mut().zip(&dw.bias).for_each(|(a, b)| *a += b);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *input, dx);
                    }
                }
                Op::LeakyRelu { input, slope } => {
                    let mut g = g;
                    for (d, x) in g.data_mut().iter_mut().zip(self.value(*input).data()) {
                        if *x < 0.0 {
                            *d *= slope;
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::Upsample { input } => {
                    let x = self.value(*input);
                    let data: Vec<f32> = (0..g.channels())
                        .flat_map(|c| upsample2x_adjoint(g.channel(c), x.shape()))
                        .collect();
                    accumulate(&mut grads, *input, Tensor::from_vec_unchecked(x.channels(), x.shape(), data));
                }
                Op::Scale { input, factor } => {
                    let mut g = g;
                    g.data_mut().iter_mut().for_each(|v| *v *= factor);
                    accumulate(&mut grads, *input, g);
                }
                Op::Concat { inputs } => {
                    let n = g.spatial_len();
                    let mut start = 0;
                    for &i in inputs {
                        let c = self.value(i).channels();
                        if self.trainable(i) {
                            let part = g.data()[start * n..(start + c) * n].to_vec();
                            accumulate(&mut grads, i, Tensor::from_vec_unchecked(c, g.shape(), part));
                        }
                        start += c;
                    }
                }
                Op::Add { a, b } => {
                    if self.trainable(*a) && self.trainable(*b) {
                        accumulate(&mut grads, *a, g.clone());
                        accumulate(&mut grads, *b, g);
                    } else if self.trainable(*a) {
                        accumulate(&mut grads, *a, g);
                    } else {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Warp { image, field } => {
                    let f = self.value(*field);
                    let d = warp_field_gradient(image.data(), image.shape(), f.data(), g.data());
                    accumulate(&mut grads, *field, Tensor::from_vec_unchecked(3, f.shape(), d));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f32) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-s..s)).collect()
    }

    fn layer(rng: &mut ChaCha8Rng, ci: usize, co: usize, s: f32) -> ConvLayer {
        let mut l = ConvLayer::zeros(ci, co);
        l.weight = rand_vec(rng, l.weight.len(), s);
        l.bias = rand_vec(rng, co, s);
        l
    }

    /// Small network touching every op; returns Σ seed·output.
    fn run(layers: &[ConvLayer], image: &Tensor, seed: &Tensor) -> (f64, Vec<ConvGrad>) {
        let mut g = Graph::new(layers);
        let x = g.input(image.clone());
        let a = g.conv(x, 0, 2);
        let a = g.leaky_relu(a, 0.2);
        let u = g.upsample(a);
        let c = g.concat(&[u, x]);
        let f = g.conv(c, 1, 1);
        let f = g.scale(f, 0.5);
        let w = g.warp(image, f);
        let f2 = g.conv(w, 2, 1);
        let out = g.add(f2, f);
        let val: f64 = g.value(out).data().iter().zip(seed.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let grads = g.backward(vec![(out, seed.clone())]);
        (val, grads)
    }

    #[test]
    fn graph_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = [4, 6, 6];
        let n = 4 * 6 * 6;
        // Smooth image so the warp derivative is well defined.
        let img: Vec<f32> = (0..n)
            .map(|i| {
                let (x, y, z) = ((i % 6) as f32, ((i / 6) % 6) as f32, (i / 36) as f32);
                (0.4 * x).sin() + (0.3 * y).cos() * 0.5 + 0.2 * z
            })
            .collect();
        let image = Tensor::from_vec(1, shape, img).unwrap();
        let layers = vec![layer(&mut rng, 1, 2, 0.5), layer(&mut rng, 3, 3, 0.3), layer(&mut rng, 1, 3, 0.5)];
        let seed = Tensor::from_vec(3, shape, rand_vec(&mut rng, 3 * n, 1.0)).unwrap();
        let (_, grads) = run(&layers, &image, &seed);
        // Small step: leaky ReLU and trilinear sampling have kinks.
        let h = 2e-3f32;
        for l in 0..3 {
            for k in (0..layers[l].weight.len()).step_by(5) {
                let mut p = layers.clone();
                p[l].weight[k] += h;
                let mut m = layers.clone();
                m[l].weight[k] -= h;
                let fd = (run(&p, &image, &seed).0 - run(&m, &image, &seed).0) / (2.0 * h as f64);
                let an = grads[l].weight[k] as f64;
                assert!((fd - an).abs() < 2e-2 * (1.0 + fd.abs()), "layer {l} w{k}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn constant_inputs_receive_no_work() {
        let layers = vec![ConvLayer::zeros(1, 1)];
        let mut g = Graph::new(&layers);
        let x = g.input(Tensor::zeros(1, [2, 2, 2]));
        let y = g.scale(x, 2.0);
        let grads = g.backward(vec![(y, Tensor::zeros(1, [2, 2, 2]))]);
        assert!(grads[0].weight.iter().all(|&v| v == 0.0));
    }
}
