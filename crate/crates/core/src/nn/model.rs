use std::fmt;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::infer::CompactLayer;
use super::layer::{activation_apply, activation_derivative, LayerSpec, TensorShape};
use super::loss::{loss_eval, loss_gradient, Loss};
use super::NnError;

/// One layer's geometry and parameters.
///
/// Dense weights are `[outputs][inputs]`; convolution weights are
/// `[out_channels][in_channels][kernel]`. Both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Clone)]
pub struct Model {
    layers: Vec<Layer>,
    /// Single-precision copy of the parameters, built on first inference.
    pub(super) compact: OnceLock<Vec<CompactLayer>>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("layers", &self.layers)
            .finish()
    }
}

/// Gradient buffers with the same layout as a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Parameter blocks in canonical order (weights then biases, per layer).
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_composition(specs: &[LayerSpec]) -> Result<(), NnError> {
    if specs.is_empty() {
        return Err(NnError::InvalidLayer {
            layer: 0,
            reason: "a model needs at least one layer".into(),
        });
    }
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()
            .map_err(|reason| NnError::InvalidLayer { layer: i, reason })?;
    }
    for (i, pair) in specs.windows(2).enumerate() {
        let ok = match (pair[0].output_shape(), pair[1]) {
            (
                TensorShape::Channels { channels, length },
                LayerSpec::Conv1D {
                    in_channels,
                    in_length,
                    ..
                },
            ) => channels == in_channels && length == in_length,
            (out, next) => out.len() == next.input_len(),
        };
        if !ok {
            return Err(NnError::Incompatible(i, i + 1));
        }
    }
    Ok(())
}

impl Model {
    /// Builds a model with Glorot-uniform weights and zero biases.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        check_composition(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let (fan_in, fan_out) = spec.fans();
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    spec,
                    weights: (0..spec.weight_count())
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect(),
                    biases: vec![0.0; spec.bias_count()],
                }
            })
            .collect();
        Ok(Self {
            layers,
            compact: OnceLock::new(),
        })
    }

    /// Assembles a model from explicit parameters.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        check_composition(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.spec.weight_count() || l.biases.len() != l.spec.bias_count() {
                return Err(NnError::InvalidLayer {
                    layer: i,
                    reason: "parameter count does not match geometry".into(),
                });
            }
        }
        Ok(Self {
            layers,
            compact: OnceLock::new(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.spec.input_len())
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.output_len())
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.spec.weight_count() + l.spec.bias_count())
            .sum()
    }

    /// Mutable parameter blocks in canonical order (weights then biases, per layer).
    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.compact = OnceLock::new();
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.biases])
    }

    /// Rounds every parameter to the nearest `f32`, matching what the file format stores.
    pub fn round_to_f32(&mut self) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|w| *w = *w as f32 as f64);
        }
    }

    pub(super) fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_len() {
            return Err(NnError::Shape {
                layer: 0,
                expected: self.input_len(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.spec.output_len()];
            layer.affine(&x, &mut z);
            let act = layer.spec.activation();
            z.iter_mut().for_each(|v| *v = activation_apply(act, *v));
            x = z;
        }
        Ok(x)
    }

    /// Forward pass that also records every intermediate shape, including
    /// the explicit flatten between a convolution and a dense layer.
    pub fn forward_with_shapes(
        &self,
        input: &[f64],
    ) -> Result<(Vec<f64>, Vec<TensorShape>), NnError> {
        self.check_input(input)?;
        let mut shapes = vec![self.layers[0].spec.input_shape()];
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let current = *shapes.last().expect("non-empty");
            if matches!(layer.spec, LayerSpec::Dense { .. })
                && matches!(current, TensorShape::Channels { .. })
            {
                shapes.push(TensorShape::Flat(current.len()));
            }
            let expected = layer.spec.input_len();
            if x.len() != expected {
                return Err(NnError::Shape {
                    layer: i,
                    expected,
                    got: x.len(),
                });
            }
            let mut z = vec![0.0; layer.spec.output_len()];
            layer.affine(&x, &mut z);
            let act = layer.spec.activation();
            z.iter_mut().for_each(|v| *v = activation_apply(act, *v));
            shapes.push(layer.spec.output_shape());
            x = z;
        }
        Ok((x, shapes))
    }

    /// Loss and exact parameter gradients for one example.
    pub fn backward(
        &self,
        input: &[f64],
        target: &[f64],
        loss: Loss,
    ) -> Result<(f64, Gradients), NnError> {
        let mut grads = Gradients::zeros_like(self);
        let value = self.accumulate_gradients(input, target, loss, &mut grads)?;
        Ok((value, grads))
    }

    /// Adds this example's gradients into `grads` and returns its loss.
    pub fn accumulate_gradients(
        &self,
        input: &[f64],
        target: &[f64],
        loss: Loss,
        grads: &mut Gradients,
    ) -> Result<f64, NnError> {
        self.check_input(input)?;
        // acts[l] is the input to layer l; pre[l] its pre-activation output.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        for layer in &self.layers {
            let mut z = vec![0.0; layer.spec.output_len()];
            layer.affine(acts.last().expect("non-empty"), &mut z);
            let act = layer.spec.activation();
            let a = z.iter().map(|&v| activation_apply(act, v)).collect();
            pre.push(z);
            acts.push(a);
        }
        let output = acts.last().expect("non-empty");
        let value = loss_eval(loss, output, target)?;
        let mut delta = loss_gradient(loss, output, target)?;

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.spec.activation();
            let a = &acts[l + 1];
            for ((d, &z), &av) in delta.iter_mut().zip(&pre[l]).zip(a) {
                *d *= activation_derivative(act, z, av);
            }
            let x = &acts[l];
            let need_input_grad = l > 0;
            delta = layer.backprop(
                x,
                &delta,
                &mut grads.weights[l],
                &mut grads.biases[l],
                need_input_grad,
            );
        }
        Ok(value)
    }
}

impl Layer {
    /// Pre-activation output `z = W ⋆ x + b` written into `z`.
    fn affine(&self, x: &[f64], z: &mut [f64]) {
        match self.spec {
            LayerSpec::Dense { inputs, .. } => {
                for ((zo, row), &b) in z
                    .iter_mut()
                    .zip(self.weights.chunks_exact(inputs))
                    .zip(&self.biases)
                {
                    *zo = b + dot(row, x);
                }
            }
            LayerSpec::Conv1D {
                in_channels,
                kernel,
                in_length,
                ..
            } => {
                let out_len = in_length + 1 - kernel;
                for (o, zo) in z.chunks_exact_mut(out_len).enumerate() {
                    zo.iter_mut().for_each(|v| *v = self.biases[o]);
                    for c in 0..in_channels {
                        let xc = &x[c * in_length..(c + 1) * in_length];
                        let wk = &self.weights[(o * in_channels + c) * kernel..][..kernel];
                        for (k, &w) in wk.iter().enumerate() {
                            axpy(zo, w, &xc[k..k + out_len]);
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients from `dz` (gradient w.r.t. the
    /// pre-activation) and returns the gradient w.r.t. the layer input.
    fn backprop(
        &self,
        x: &[f64],
        dz: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
        need_input_grad: bool,
    ) -> Vec<f64> {
        let mut dx = if need_input_grad {
            vec![0.0; x.len()]
        } else {
            Vec::new()
        };
        match self.spec {
            LayerSpec::Dense { inputs, .. } => {
                for (o, &d) in dz.iter().enumerate() {
                    axpy(&mut gw[o * inputs..(o + 1) * inputs], d, x);
                    gb[o] += d;
                    if need_input_grad {
                        axpy(&mut dx, d, &self.weights[o * inputs..(o + 1) * inputs]);
                    }
                }
            }
            LayerSpec::Conv1D {
                in_channels,
                kernel,
                in_length,
                ..
            } => {
                let out_len = in_length + 1 - kernel;
                for (o, dzo) in dz.chunks_exact(out_len).enumerate() {
                    gb[o] += dzo.iter().sum::<f64>();
                    for c in 0..in_channels {
                        let base = (o * in_channels + c) * kernel;
                        let xc = &x[c * in_length..(c + 1) * in_length];
                        for k in 0..kernel {
                            gw[base + k] += dot(dzo, &xc[k..k + out_len]);
                            if need_input_grad {
                                let w = self.weights[base + k];
                                let dxc = &mut dx[c * in_length + k..c * in_length + k + out_len];
                                axpy(dxc, w, dzo);
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn identity_dense_is_identity() {
        let n = 4;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        let m = Model::from_layers(vec![Layer {
            spec: LayerSpec::dense(n, n, Activation::None),
            weights: w,
            biases: vec![0.0; n],
        }])
        .unwrap();
        let x = [0.5, -2.0, 3.25, 7.0];
        assert_eq!(m.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn hand_chain_rule() {
        let m = Model::from_layers(vec![Layer {
            spec: LayerSpec::dense(1, 1, Activation::None),
            weights: vec![2.0],
            biases: vec![0.0],
        }])
        .unwrap();
        let (loss, g) = m.backward(&[1.0], &[0.0], Loss::Mse).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.weights[0], vec![4.0]);
        assert_eq!(g.biases[0], vec![4.0]);
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let m = Model::init(
            &[
                LayerSpec::conv1d(1, 2, 3, 8, Activation::Sine),
                LayerSpec::dense(12, 2, Activation::None),
            ],
            7,
        )
        .unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let y = m.forward(&x).unwrap();
        let (loss, g) = m.backward(&x, &y, Loss::Mse).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.blocks().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let m = Model::init(&[LayerSpec::dense(3, 2, Activation::ReLU)], 0).unwrap();
        assert_eq!(
            m.forward(&[1.0, 2.0]),
            Err(NnError::Shape {
                layer: 0,
                expected: 3,
                got: 2
            })
        );
        assert_eq!(
            Model::init(
                &[
                    LayerSpec::dense(3, 2, Activation::ReLU),
                    LayerSpec::dense(3, 1, Activation::None)
                ],
                0
            ),
            Err(NnError::Incompatible(0, 1))
        );
    }

    #[test]
    fn glorot_bounds_hold() {
        let m = Model::init(&[LayerSpec::dense(35, 55, Activation::ReLU)], 3).unwrap();
        let bound = (6.0f64 / 90.0).sqrt();
        assert!(m.layers()[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(m.layers()[0].biases.iter().all(|&b| b == 0.0));
    }
}
