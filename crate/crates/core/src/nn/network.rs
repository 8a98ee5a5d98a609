use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layer::{layer_backward, layer_forward, LayerCache, LayerIo, LayerSpec};
use super::tensor::{Scalar, Tensor};
use super::NnError;

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Prelu,
}

/// Initial PReLU slope.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// A sequential CNN: layer descriptors plus per-layer parameter tensors.
#[derive(Clone, Debug)]
pub struct Network<T = f32> {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<Tensor<T>>>,
    num_classes: usize,
    generation: u64,
}

/// Activations retained by [`Network::forward`] for [`Network::backward`].
#[derive(Debug)]
pub struct ForwardCache<T = f32> {
    generation: u64,
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Parameter gradients aligned with [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<Vec<Vec<T>>>,
    /// Gradient with respect to the network input, when requested.
    pub input: Option<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn scale(&mut self, factor: T) {
        for g in self.layers.iter_mut().flatten().flatten() {
            *g *= factor;
        }
        if let Some(input) = self.input.as_mut() {
            for g in input {
                *g *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flatten()
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-initialized weights, zero biases and PReLU
    /// slopes at [`PRELU_INIT_SLOPE`].
    pub fn new(
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        let mut shapes = vec![input_shape.to_vec()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|reason| NnError::Shape {
                    layer: layer_label(i, layer),
                    reason,
                })?;
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty");
        if out.as_slice() != [num_classes] {
            return Err(NnError::Shape {
                layer: "output".into(),
                reason: format!("network produces {out:?}, expected [{num_classes}]"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers.iter().map(|l| init_layer(l, &mut rng)).collect();
        Ok(Self {
            input_shape,
            layers,
            shapes,
            params,
            num_classes,
            generation: fresh_generation(),
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[Vec<Tensor<T>>] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [Vec<Tensor<T>>] {
        self.generation = fresh_generation();
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Tensor::len).sum()
    }

    pub fn has_prelu(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Prelu { .. }))
    }

    /// Sets the drop probability of every dropout layer, in order.
    pub fn set_dropout(&mut self, probs: &[f32]) -> Result<(), NnError> {
        let mut it = probs.iter();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let LayerSpec::Dropout { p } = layer {
                let Some(&np) = it.next() else { break };
                if !(0.0..1.0).contains(&np) {
                    return Err(NnError::Shape {
                        layer: format!("layer {i} (dropout)"),
                        reason: format!("probability {np} outside [0, 1)"),
                    });
                }
                *p = np;
            }
        }
        Ok(())
    }

    /// Per-sample activation shape after each layer (index 0 is the input).
    pub fn activation_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize, NnError> {
        let shape = input.shape();
        if shape.len() != 4 || shape[1..] != self.input_shape {
            return Err(NnError::Shape {
                layer: self
                    .layers
                    .first()
                    .map(|l| layer_label(0, l))
                    .unwrap_or_else(|| "input".into()),
                reason: format!(
                    "input shape {shape:?} does not match [N, {}, {}, {}]",
                    self.input_shape[0], self.input_shape[1], self.input_shape[2]
                ),
            });
        }
        if shape[0] == 0 {
            return Err(NnError::EmptyBatch);
        }
        Ok(shape[0])
    }

    fn run(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        seed: u64,
        keep: bool,
    ) -> Result<(Tensor<T>, Vec<LayerCache<T>>), NnError> {
        let batch = self.check_input(input)?;
        let mut x = input.values().to_vec();
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for (i, layer) in self.layers.iter().enumerate() {
            let io = LayerIo {
                batch,
                in_shape: &self.shapes[i],
                out_shape: &self.shapes[i + 1],
            };
            let (y, cache) = layer_forward(
                layer,
                &self.params[i],
                &x,
                &io,
                mode == Mode::Train,
                dropout_seed(seed, i),
                keep,
            );
            if keep {
                caches.push(cache);
            }
            x = y;
        }
        let logits = Tensor::from_vec(&[batch, self.num_classes], x).expect("logit shape");
        Ok((logits, caches))
    }

    /// Batched forward pass over an `N×C×H×W` input. Dropout is active only
    /// in [`Mode::Train`], with masks derived from `seed`.
    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        seed: u64,
    ) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let (logits, layers) = self.run(input, mode, seed, true)?;
        let cache = ForwardCache {
            generation: self.generation,
            batch: logits.shape()[0],
            layers,
        };
        Ok((logits, cache))
    }

    /// Eval-mode forward without retaining activations.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(self.run(input, Mode::Eval, 0, false)?.0)
    }

    /// Back-propagates `loss_grad` (shape `N×num_classes`) through the
    /// activations in `cache`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        loss_grad: &Tensor<T>,
    ) -> Result<Gradients<T>, NnError> {
        self.backward_impl(cache, loss_grad, false)
    }

    /// As [`Network::backward`], additionally returning the input gradient.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache<T>,
        loss_grad: &Tensor<T>,
    ) -> Result<Gradients<T>, NnError> {
        self.backward_impl(cache, loss_grad, true)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        loss_grad: &Tensor<T>,
        input_grad: bool,
    ) -> Result<Gradients<T>, NnError> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        if loss_grad.shape() != [cache.batch, self.num_classes] {
            return Err(NnError::Shape {
                layer: "loss".into(),
                reason: format!(
                    "loss gradient shape {:?} does not match [{}, {}]",
                    loss_grad.shape(),
                    cache.batch,
                    self.num_classes
                ),
            });
        }
        let mut layers: Vec<Vec<Vec<T>>> = self
            .params
            .iter()
            .map(|ps| ps.iter().map(|p| vec![T::zero(); p.len()]).collect())
            .collect();
        let mut dy = loss_grad.values().to_vec();
        let mut input = None;
        for i in (0..self.layers.len()).rev() {
            let io = LayerIo {
                batch: cache.batch,
                in_shape: &self.shapes[i],
                out_shape: &self.shapes[i + 1],
            };
            let want_dx = i > 0 || input_grad;
            let dx = layer_backward(
                &self.layers[i],
                &self.params[i],
                &cache.layers[i],
                &dy,
                &io,
                &mut layers[i],
                want_dx,
            );
            match dx {
                Some(dx) if i > 0 => dy = dx,
                Some(dx) => input = Some(dx),
                None => {}
            }
        }
        Ok(Gradients { layers, input })
    }

    /// Order-sensitive FNV-1a checksum over the parameters' bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.params.iter().flatten().flat_map(|t| t.values()) {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub(crate) fn from_parts(
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        num_classes: usize,
        params: Vec<Vec<Tensor<T>>>,
    ) -> Result<Self, NnError> {
        let mut net = Self::new(input_shape, layers, num_classes, 0)?;
        if params.len() != net.params.len() {
            return Err(NnError::Shape {
                layer: "parameters".into(),
                reason: format!("{} layer parameter sets for {} layers", params.len(), net.params.len()),
            });
        }
        for (i, (have, want)) in params.iter().zip(&net.params).enumerate() {
            let ok = have.len() == want.len()
                && have.iter().zip(want).all(|(a, b)| a.shape() == b.shape());
            if !ok {
                return Err(NnError::Shape {
                    layer: layer_label(i, &net.layers[i]),
                    reason: "parameter shapes do not match the layer descriptor".into(),
                });
            }
        }
        net.params = params;
        Ok(net)
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|ps| ps.iter().map(Tensor::cast).collect())
                .collect(),
            num_classes: self.num_classes,
            generation: fresh_generation(),
        }
    }
}

pub(crate) fn layer_label(index: usize, layer: &LayerSpec) -> String {
    format!("layer {index} ({})", layer.kind_name())
}

fn dropout_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fresh parameters for one layer.
pub(crate) fn init_layer<T: Scalar>(layer: &LayerSpec, rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
    let shapes = layer.param_shapes();
    match layer {
        LayerSpec::Conv { .. } | LayerSpec::Linear { .. } => {
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let n: usize = shapes[0].iter().product();
            let w = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::from_f64_lossy(z * std)
                })
                .collect();
            vec![
                Tensor::from_vec(&shapes[0], w).expect("weight shape"),
                Tensor::zeros(&shapes[1]),
            ]
        }
        LayerSpec::Prelu { .. } => {
            vec![Tensor::filled(&shapes[0], T::from_f64_lossy(PRELU_INIT_SLOPE))]
        }
        _ => Vec::new(),
    }
}

/// Scaled-down ClarifaiNet pattern used for both streams:
/// `conv7/s2/32 → pool2 → conv5/64 → pool2 → conv3/96 → pool2 → fc256 →
/// dropout → fc(num_classes)`, each conv and the hidden FC followed by the
/// chosen activation.
pub fn build_mini_two_stream<T: Scalar>(
    input_hw: usize,
    in_channels: usize,
    num_classes: usize,
    activation: Activation,
    seed: u64,
) -> Result<Network<T>, NnError> {
    if input_hw < 32 {
        return Err(NnError::InputTooSmall { input_hw, min: 32 });
    }
    if in_channels == 0 || num_classes == 0 {
        return Err(NnError::Shape {
            layer: "input".into(),
            reason: "channel and class counts must be positive".into(),
        });
    }
    let act = |channels: usize| match activation {
        Activation::Relu => LayerSpec::Relu,
        Activation::Prelu => LayerSpec::Prelu { channels },
    };
    let mut layers = Vec::new();
    let mut c = in_channels;
    for (out, k, s) in [(32, 7, 2), (64, 5, 1), (96, 3, 1)] {
        layers.push(LayerSpec::Conv {
            in_channels: c,
            out_channels: out,
            kernel: k,
            stride: s,
            pad: k / 2,
        });
        layers.push(act(out));
        layers.push(LayerSpec::MaxPool { size: 2 });
        c = out;
    }
    // Spatial extent after conv1 (stride 2) and three 2x pools.
    let side = |hw: usize| ((hw - 1) / 2 + 1) / 8;
    let feat = c * side(input_hw) * side(input_hw);
    layers.push(LayerSpec::Linear {
        in_features: feat,
        out_features: 256,
    });
    layers.push(act(256));
    layers.push(LayerSpec::Dropout { p: 0.5 });
    layers.push(LayerSpec::Linear {
        in_features: 256,
        out_features: num_classes,
    });
    Network::new([in_channels, input_hw, input_hw], layers, num_classes, seed)
}
