use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{relu, relu_backward, softmax, Conv2d, ConvCache, Dense};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
}

impl Layer {
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => Ok(c.output_shape(input)?.to_vec()),
            Layer::Dense(d) => {
                let width: usize = input.iter().product();
                if width != d.inputs() {
                    return Err(Error::shape("dense input", &[d.inputs()], input));
                }
                Ok(vec![d.outputs()])
            }
            Layer::Relu => Ok(input.to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Raw linear outputs (action values or a state value).
    Linear,
    /// Linear logits interpreted through a softmax.
    Softmax,
}

/// An output layer reading the trunk's final features.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub kind: HeadKind,
    pub dense: Dense,
}

/// Feed-forward trunk with one or more dense heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    heads: Vec<Head>,
    shapes: Vec<Vec<usize>>,
}

/// Gradients aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

enum Cache {
    Conv(ConvCache),
    Dense(Vec<f64>),
    Relu(Vec<f64>),
}

/// Activations saved by [`Network::forward`] for the backward pass.
pub struct Trace {
    batch: usize,
    caches: Vec<Cache>,
    features: Vec<f64>,
    /// Raw head outputs, `[batch, outputs]` per head. Softmax heads hold logits.
    pub heads: Vec<Vec<f64>>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// One convolution stage of a trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Convolutional trunk: conv stages, each followed by a rectifier, then one
/// rectified dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
}

impl ArchSpec {
    /// 16 8x8/4 and 32 4x4/2 convolutions feeding 256 hidden units.
    pub fn standard(stack: usize, height: usize, width: usize) -> Self {
        ArchSpec {
            input: [stack, height, width],
            convs: vec![
                ConvSpec {
                    filters: 16,
                    kernel: 8,
                    stride: 4,
                },
                ConvSpec {
                    filters: 32,
                    kernel: 4,
                    stride: 2,
                },
            ],
            hidden: 256,
        }
    }

    pub fn trunk(&self) -> Result<(Vec<Layer>, Vec<Vec<usize>>)> {
        let mut layers = Vec::new();
        let mut shape = self.input.to_vec();
        let mut channels = self.input[0];
        for spec in &self.convs {
            let conv = Conv2d::zeros(channels, spec.filters, spec.kernel, spec.stride);
            shape = conv.output_shape(&shape)?.to_vec();
            channels = spec.filters;
            layers.push(Layer::Conv2d(conv));
            layers.push(Layer::Relu);
        }
        let width: usize = shape.iter().product();
        layers.push(Layer::Dense(Dense::zeros(width, self.hidden)));
        layers.push(Layer::Relu);
        let net = Network::new(self.input.to_vec(), layers, Vec::new())?;
        Ok((net.layers, net.shapes))
    }
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, heads: Vec<Head>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
            shapes.push(shape.clone());
        }
        let width: usize = shape.iter().product();
        for head in &heads {
            if head.dense.inputs() != width {
                return Err(Error::shape("head input", &[width], &[head.dense.inputs()]));
            }
            head.dense.bias.check_shape("head bias", &[head.dense.outputs()])?;
        }
        Ok(Network {
            input_shape,
            layers,
            heads,
            shapes,
        })
    }

    /// Conv trunk with a linear action-value head.
    pub fn q_network(arch: &ArchSpec, actions: usize, rng: &mut impl Rng) -> Result<Self> {
        let (layers, shapes) = arch.trunk()?;
        let width: usize = shapes.last().map(|s| s.iter().product()).unwrap_or(0);
        let mut net = Network::new(
            arch.input.to_vec(),
            layers,
            vec![Head {
                kind: HeadKind::Linear,
                dense: Dense::zeros(width, actions),
            }],
        )?;
        net.init(rng);
        Ok(net)
    }

    /// Shared conv trunk with a softmax policy head and a scalar value head.
    pub fn policy_value(arch: &ArchSpec, actions: usize, rng: &mut impl Rng) -> Result<Self> {
        let (layers, shapes) = arch.trunk()?;
        let width: usize = shapes.last().map(|s| s.iter().product()).unwrap_or(0);
        let mut net = Network::new(
            arch.input.to_vec(),
            layers,
            vec![
                Head {
                    kind: HeadKind::Softmax,
                    dense: Dense::zeros(width, actions),
                },
                Head {
                    kind: HeadKind::Linear,
                    dense: Dense::zeros(width, 1),
                },
            ],
        )?;
        net.init(rng);
        Ok(net)
    }

    /// One rectified hidden layer with a linear action-value head.
    pub fn shallow(inputs: usize, hidden: usize, actions: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Network::new(
            vec![inputs],
            vec![Layer::Dense(Dense::zeros(inputs, hidden)), Layer::Relu],
            vec![Head {
                kind: HeadKind::Linear,
                dense: Dense::zeros(hidden, actions),
            }],
        )?;
        net.init(rng);
        Ok(net)
    }

    /// Fan-in scaled Gaussian weights: std `sqrt(2 / fan_in)` for rectified
    /// layers, `sqrt(1 / fan_in)` for heads. Biases start at zero.
    pub fn init(&mut self, rng: &mut impl Rng) {
        fn fill(t: &mut Tensor, fan_in: usize, gain: f64, rng: &mut impl Rng) {
            let std = (gain / fan_in as f64).sqrt();
            for v in t.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * std;
            }
        }
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    let fan_in = c.channels() * c.kernel() * c.kernel();
                    fill(&mut c.weight, fan_in, 2.0, rng);
                    c.bias.fill(0.0);
                }
                Layer::Dense(d) => {
                    let fan_in = d.inputs();
                    fill(&mut d.weight, fan_in, 2.0, rng);
                    d.bias.fill(0.0);
                }
                Layer::Relu => {}
            }
        }
        for head in &mut self.heads {
            let fan_in = head.dense.inputs();
            fill(&mut head.dense.weight, fan_in, 1.0, rng);
            head.dense.bias.fill(0.0);
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_width(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    /// Output shape of every trunk layer, in order.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Width of the features the heads read.
    pub fn feature_width(&self) -> usize {
        self.shapes
            .last()
            .unwrap_or(&self.input_shape)
            .iter()
            .product()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2d(c) => out.extend([&c.weight, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                Layer::Relu => {}
            }
        }
        for h in &self.heads {
            out.extend([&h.dense.weight, &h.dense.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                Layer::Relu => {}
            }
        }
        for h in &mut self.heads {
            out.extend([&mut h.dense.weight, &mut h.dense.bias]);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.params().into_iter().map(Tensor::zeros_like).collect())
    }

    /// True when both networks have identically shaped parameters.
    pub fn same_shape(&self, other: &Network) -> bool {
        self.input_shape == other.input_shape
            && self.params().len() == other.params().len()
            && self
                .params()
                .iter()
                .zip(other.params())
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Overwrites this network's parameters with `other`'s.
    pub fn copy_from(&mut self, other: &Network) -> Result<()> {
        if !self.same_shape(other) {
            let theirs: Vec<usize> = other.params().iter().map(|t| t.len()).collect();
            let ours: Vec<usize> = self.params().iter().map(|t| t.len()).collect();
            return Err(Error::shape("parameter copy", &ours, &theirs));
        }
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Batched forward pass over `batch` inputs laid out back to back.
    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Trace> {
        let width = self.input_width();
        if input.len() != batch * width || batch == 0 {
            return Err(Error::shape("network input", &[batch, width], &[input.len()]));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let mut shape = self.input_shape.clone();
        for (layer, out_shape) in self.layers.iter().zip(&self.shapes) {
            x = match layer {
                Layer::Conv2d(c) => {
                    let s3 = [shape[0], shape[1], shape[2]];
                    let (y, cache) = c.forward_batch(&x, batch, s3)?;
                    caches.push(Cache::Conv(cache));
                    y
                }
                Layer::Dense(d) => {
                    let y = d.forward_batch(&x, batch)?;
                    caches.push(Cache::Dense(x));
                    y
                }
                Layer::Relu => {
                    let y = relu(&x);
                    caches.push(Cache::Relu(y.clone()));
                    y
                }
            };
            shape.clone_from(out_shape);
        }
        let heads = self
            .heads
            .iter()
            .map(|h| h.dense.forward_batch(&x, batch))
            .collect::<Result<Vec<_>>>()?;
        if heads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(Trace {
            batch,
            caches,
            features: x,
            heads,
        })
    }

    /// Backpropagates `head_grads` (gradients w.r.t. each head's raw outputs)
    /// and returns parameter gradients.
    pub fn backward(&self, trace: &Trace, head_grads: &[Vec<f64>]) -> Result<Grads> {
        if head_grads.len() != self.heads.len() {
            return Err(Error::shape(
                "head gradients",
                &[self.heads.len()],
                &[head_grads.len()],
            ));
        }
        let batch = trace.batch;
        let mut grads = self.zero_grads();
        let trunk_params = grads.0.len() - 2 * self.heads.len();
        let mut g = vec![0.0; trace.features.len()];
        for (i, (head, hg)) in self.heads.iter().zip(head_grads).enumerate() {
            let (gw, rest) = grads.0[trunk_params + 2 * i..].split_at_mut(1);
            let gi = head
                .dense
                .backward_batch(hg, &trace.features, batch, &mut gw[0], &mut rest[0], true)?
                .expect("input gradient requested");
            for (a, b) in g.iter_mut().zip(gi) {
                *a += b;
            }
        }
        let mut p = trunk_params;
        let first_param_layer = self
            .layers
            .iter()
            .position(|l| !matches!(l, Layer::Relu))
            .unwrap_or(0);
        for (idx, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            let need_input = idx > first_param_layer;
            match (layer, cache) {
                (Layer::Relu, Cache::Relu(out)) => {
                    g = relu_backward(&g, out);
                }
                (Layer::Dense(d), Cache::Dense(input)) => {
                    p -= 2;
                    let (gw, rest) = grads.0[p..].split_at_mut(1);
                    match d.backward_batch(&g, input, batch, &mut gw[0], &mut rest[0], need_input)? {
                        Some(gi) => g = gi,
                        None => break,
                    }
                }
                (Layer::Conv2d(c), Cache::Conv(cache)) => {
                    p -= 2;
                    let (gw, rest) = grads.0[p..].split_at_mut(1);
                    match c.backward_batch(&g, cache, &mut gw[0], &mut rest[0], need_input)? {
                        Some(gi) => g = gi,
                        None => break,
                    }
                }
                _ => unreachable!("cache kind always matches its layer"),
            }
        }
        Ok(grads)
    }

    /// Action values for one input.
    pub fn forward_q(&self, input: &[f64]) -> Result<Tensor> {
        let trace = self.forward(input, 1)?;
        Ok(Tensor::from_vec(trace.heads[0].clone()))
    }

    /// Policy probabilities and state value for one input.
    pub fn forward_policy_value(&self, input: &[f64]) -> Result<(Tensor, f64)> {
        if self.heads.len() != 2 || self.heads[0].kind != HeadKind::Softmax {
            return Err(Error::shape("policy/value heads", &[2], &[self.heads.len()]));
        }
        let trace = self.forward(input, 1)?;
        let probs = softmax(&trace.heads[0])?;
        Ok((Tensor::from_vec(probs), trace.heads[1][0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_arch_shapes_at_128() {
        let (_, shapes) = ArchSpec::standard(4, 128, 128).trunk().unwrap();
        assert_eq!(shapes[0], vec![16, 31, 31]);
        assert_eq!(shapes[2], vec![32, 14, 14]);
        assert_eq!(shapes[4], vec![256]);
        let conv_out: usize = shapes[3].iter().product();
        assert_eq!(conv_out, 6272);
    }

    #[test]
    fn standard_arch_shapes_at_64() {
        let (_, shapes) = ArchSpec::standard(4, 64, 64).trunk().unwrap();
        assert_eq!(shapes[0], vec![16, 15, 15]);
        assert_eq!(shapes[2], vec![32, 6, 6]);
        let conv_out: usize = shapes[3].iter().product();
        assert_eq!(conv_out, 1152);
    }

    #[test]
    fn zero_network_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = ArchSpec::standard(4, 32, 32);
        let mut q = Network::q_network(&arch, 2, &mut rng).unwrap();
        let mut pv = Network::policy_value(&arch, 2, &mut rng).unwrap();
        for p in q.params_mut().into_iter().chain(pv.params_mut()) {
            p.fill(0.0);
        }
        let x = vec![0.7; 4 * 32 * 32];
        assert_eq!(q.forward_q(&x).unwrap().data(), &[0.0, 0.0]);
        let (pi, v) = pv.forward_policy_value(&x).unwrap();
        assert_eq!(pi.data(), &[0.5, 0.5]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arch = ArchSpec::standard(4, 32, 32);
        let net = Network::q_network(&arch, 2, &mut rng).unwrap();
        let w = net.input_width();
        let x: Vec<f64> = (0..3 * w).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let batched = net.forward(&x, 3).unwrap().heads[0].clone();
        for b in 0..3 {
            let single = net.forward_q(&x[b * w..(b + 1) * w]).unwrap();
            for a in 0..2 {
                assert!((single.data()[a] - batched[b * 2 + a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::shallow(6, 64, 2, &mut rng).unwrap();
        assert!(matches!(
            net.forward_q(&[0.0; 5]),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
