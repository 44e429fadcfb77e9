//! The residual despeckling network, its loss, training and inference.
//!
//! Layer 1 is conv(1 -> width) + ReLU, layers 2..depth-1 are
//! conv(width -> width) + batch norm + ReLU, and the last layer is a bare
//! conv(width -> 1). All kernels are 3x3 with one pixel of zero padding, so
//! the predicted residual has the same shape as the input.

pub mod checkpoint;
pub mod inference;
pub mod loss;
pub mod train;

use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, conv2d_backward, conv2d_forward,
    he_init, relu_backward, relu_forward, BatchNormCache, BatchNormParams, BnMode, ConvGrads,
    ConvParams,
};
use crate::tensor::{Dims, Real, Tensor4};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use inference::{despeckle, TileConfig};
pub use loss::{log_cosh, loss, LossInputs};
pub use train::{train, Phase, Schedule, TrainConfig, TrainReport};

pub const DEFAULT_DEPTH: usize = 17;
pub const DEFAULT_WIDTH: usize = 64;

/// One conv layer with its optional normalization and activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub conv: ConvParams<T>,
    pub norm: Option<BatchNormParams<T>>,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarCnnModel<T> {
    depth: usize,
    width: usize,
    layers: Vec<Layer<T>>,
    training: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub conv: ConvGrads<T>,
    pub gamma: Option<Vec<T>>,
    pub beta: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub layers: Vec<LayerGrads<T>>,
    pub input: Tensor4<T>,
}

impl<T: Real> ModelGrads<T> {
    /// Gradient slices in the same order as [`SarCnnModel::params`].
    pub fn flat(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.push(g.conv.weights.data());
            out.push(g.conv.bias.as_slice());
            if let (Some(gamma), Some(beta)) = (&g.gamma, &g.beta) {
                out.push(gamma.as_slice());
                out.push(beta.as_slice());
            }
        }
        out
    }
}

/// Activations kept by a training forward pass.
pub struct ForwardTrace<T> {
    input: Tensor4<T>,
    /// Per layer: the batch-norm cache and the layer output.
    layers: Vec<(Option<BatchNormCache<T>>, Tensor4<T>)>,
}

impl<T: Real> ForwardTrace<T> {
    /// Sign pattern of every rectified pre-activation, layer by layer.
    pub fn active_units(&self) -> Vec<bool> {
        self.layers
            .iter()
            .take(self.layers.len().saturating_sub(1))
            .flat_map(|(_, out)| out.data().iter().map(|v| *v > T::zero()))
            .collect()
    }
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    // splitmix64 finalizer over (seed, layer)
    let mut z = seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Real> SarCnnModel<T> {
    /// He-initialized network with zero biases and identity batch norms.
    pub fn build(depth: usize, width: usize, seed: u64) -> Result<Self> {
        if depth < 3 {
            return Err(Error::usage(format!("depth must be >= 3, got {depth}")));
        }
        if width == 0 {
            return Err(Error::usage("width must be >= 1"));
        }
        let layers = (0..depth)
            .map(|i| {
                let (cin, cout) = match i {
                    0 => (1, width),
                    _ if i == depth - 1 => (width, 1),
                    _ => (width, width),
                };
                let weights = he_init(Dims::new(cout, cin, 3, 3), layer_seed(seed, i))?;
                let conv = ConvParams::new(weights, vec![T::zero(); cout])?;
                let middle = i > 0 && i < depth - 1;
                Ok(Layer {
                    conv,
                    norm: middle.then(|| BatchNormParams::new(width)),
                    relu: i < depth - 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SarCnnModel { depth, width, layers, training: false })
    }

    /// Assembles a model from explicit layers, validating the architecture.
    pub fn from_layers(depth: usize, width: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        let template = Self::build(depth, width, 0)?;
        if layers.len() != depth {
            return Err(Error::shape(format!("{} layers for depth {depth}", layers.len())));
        }
        for (i, (got, want)) in layers.iter().zip(&template.layers).enumerate() {
            let ok = got.conv.weights.dims() == want.conv.weights.dims()
                && got.conv.bias.len() == want.conv.bias.len()
                && got.norm.as_ref().map(|n| n.channels()) == want.norm.as_ref().map(|n| n.channels())
                && got.relu == want.relu;
            if !ok {
                return Err(Error::shape(format!("layer {i} does not match the architecture")));
            }
        }
        Ok(SarCnnModel { depth, width, layers, training: false })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    /// Number of trainable parameters (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Trainable parameter slices in declaration order: per layer the conv
    /// weights, the conv bias, then gamma and beta when normalized.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.conv.weights.data());
            out.push(l.conv.bias.as_slice());
            if let Some(n) = &l.norm {
                out.push(n.gamma.as_slice());
                out.push(n.beta.as_slice());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.conv.weights.data_mut());
            out.push(l.conv.bias.as_mut_slice());
            if let Some(n) = &mut l.norm {
                out.push(n.gamma.as_mut_slice());
                out.push(n.beta.as_mut_slice());
            }
        }
        out
    }

    /// Zeroes the last conv, turning the network into a zero-residual map.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.last_mut().expect("depth >= 3");
        last.conv.weights.data_mut().iter_mut().for_each(|v| *v = T::zero());
        last.conv.bias.iter_mut().for_each(|v| *v = T::zero());
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.dims().c != 1 {
            return Err(Error::shape(format!(
                "network input must have one channel, got {}",
                x.dims().c
            )));
        }
        Ok(())
    }

    /// Predicted log-speckle residual. In training mode batch norms use
    /// batch statistics and update their running statistics.
    pub fn forward(&mut self, log_noisy: &Tensor4<T>) -> Result<Tensor4<T>> {
        if self.training {
            Ok(self.forward_train(log_noisy)?.0)
        } else {
            self.infer(log_noisy)
        }
    }

    /// Read-only forward pass using the running statistics.
    pub fn infer(&self, log_noisy: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(log_noisy)?;
        let mut x: Option<Tensor4<T>> = None;
        for layer in &self.layers {
            let mut y = conv2d_forward(x.as_ref().unwrap_or(log_noisy), &layer.conv, 1)?;
            if let Some(norm) = &layer.norm {
                y = batchnorm_infer(&y, norm)?;
            }
            if layer.relu {
                y = relu_forward(&y)?;
            }
            x = Some(y);
        }
        Ok(x.expect("depth >= 3"))
    }

    /// Training forward pass that keeps what [`Self::backward`] needs.
    pub fn forward_train(&mut self, log_noisy: &Tensor4<T>) -> Result<(Tensor4<T>, ForwardTrace<T>)> {
        self.check_input(log_noisy)?;
        let mut trace = ForwardTrace { input: log_noisy.clone(), layers: Vec::with_capacity(self.depth) };
        for layer in &mut self.layers {
            let input = trace.layers.last().map_or(&trace.input, |(_, out)| out);
            let mut x = conv2d_forward(input, &layer.conv, 1)?;
            let mut cache = None;
            if let Some(norm) = &mut layer.norm {
                let (y, c) = batchnorm_forward(&x, norm, BnMode::Train)?;
                x = y;
                cache = Some(c);
            }
            if layer.relu {
                x = relu_forward(&x)?;
            }
            trace.layers.push((cache, x));
        }
        let out = trace.layers.last().expect("depth >= 3").1.clone();
        Ok((out, trace))
    }

    /// Gradients of `sum(grad_out * forward(x))` for the traced pass.
    pub fn backward(&self, trace: &ForwardTrace<T>, grad_out: &Tensor4<T>) -> Result<ModelGrads<T>> {
        if trace.layers.len() != self.depth {
            return Err(Error::usage("trace does not belong to this model"));
        }
        let mut g = grad_out.clone();
        let mut grads = Vec::with_capacity(self.depth);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (cache, out) = &trace.layers[i];
            if layer.relu {
                // out > 0 exactly where the pre-activation is positive
                g = relu_backward(out, &g)?;
            }
            let (mut gamma, mut beta) = (None, None);
            if let Some(cache) = cache {
                let (gx, gg, gb) = batchnorm_backward(cache, &g)?;
                g = gx;
                gamma = Some(gg);
                beta = Some(gb);
            }
            let input = if i == 0 { &trace.input } else { &trace.layers[i - 1].1 };
            let (gx, conv) = conv2d_backward(input, &layer.conv, &g)?;
            g = gx;
            grads.push(LayerGrads { conv, gamma, beta });
        }
        grads.reverse();
        Ok(ModelGrads { layers: grads, input: g })
    }

    /// Copies the model into another precision.
    pub fn cast<U: Real>(&self) -> SarCnnModel<U> {
        let conv_vec = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64()).unwrap_or_else(U::nan)).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                conv: ConvParams { weights: l.conv.weights.cast(), bias: conv_vec(&l.conv.bias) },
                norm: l.norm.as_ref().map(|n| BatchNormParams {
                    gamma: conv_vec(&n.gamma),
                    beta: conv_vec(&n.beta),
                    running_mean: conv_vec(&n.running_mean),
                    running_var: conv_vec(&n.running_var),
                    epsilon: U::from_f64(n.epsilon.as_f64()).unwrap(),
                    momentum: U::from_f64(n.momentum.as_f64()).unwrap(),
                }),
                relu: l.relu,
            })
            .collect();
        SarCnnModel { depth: self.depth, width: self.width, layers, training: self.training }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_closed_form() {
        let m = SarCnnModel::<f32>::build(17, 64, 1).unwrap();
        let expected = (64 * 9 + 64) + 15 * (64 * 64 * 9 + 64 + 2 * 64) + (64 * 9 + 1);
        assert_eq!(m.parameter_count(), expected);
        assert_eq!(expected, 557_057);
    }

    #[test]
    fn architecture_layout() {
        let m = SarCnnModel::<f32>::build(5, 8, 1).unwrap();
        let l = m.layers();
        assert_eq!(l[0].conv.in_channels(), 1);
        assert!(l[0].norm.is_none() && l[0].relu);
        assert!(l[1].norm.is_some() && l[3].relu);
        assert_eq!(l[4].conv.out_channels(), 1);
        assert!(l[4].norm.is_none() && !l[4].relu);
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(matches!(SarCnnModel::<f32>::build(2, 4, 0), Err(Error::Usage(_))));
        assert!(matches!(SarCnnModel::<f32>::build(3, 0, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn seeded_build_is_deterministic() {
        let a = SarCnnModel::<f32>::build(4, 4, 9).unwrap();
        assert_eq!(a, SarCnnModel::build(4, 4, 9).unwrap());
        assert_ne!(a, SarCnnModel::build(4, 4, 10).unwrap());
    }

    #[test]
    fn minimal_network_preserves_shape() {
        let m = SarCnnModel::<f64>::build(3, 1, 2).unwrap();
        let x = Tensor4::full(Dims::new(2, 1, 5, 6), 0.5).unwrap();
        assert_eq!(m.infer(&x).unwrap().dims(), x.dims());
    }

    #[test]
    fn zero_last_layer_gives_zero_residual() {
        let mut m = SarCnnModel::<f32>::build(4, 3, 5).unwrap();
        m.zero_last_layer();
        let x = Tensor4::from_vec(Dims::new(1, 1, 4, 4), (0..16).map(|v| v as f32 * 0.3 - 2.0).collect()).unwrap();
        assert!(m.infer(&x).unwrap().data().iter().all(|&v| v == 0.0));
        m.set_training(true);
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_multichannel_input() {
        let m = SarCnnModel::<f32>::build(3, 2, 0).unwrap();
        let x = Tensor4::zeros(Dims::new(1, 2, 4, 4)).unwrap();
        assert!(matches!(m.infer(&x), Err(Error::Shape(_))));
    }
}
