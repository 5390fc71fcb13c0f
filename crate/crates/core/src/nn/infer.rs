//! Single-precision inference on the `f32`-rounded parameters the file
//! format stores. Training and gradient checks stay in `f64`.

use super::layer::{Activation, LayerSpec};
use super::model::Model;
use super::NnError;

#[derive(Debug, Clone)]
pub(crate) struct CompactLayer {
    spec: LayerSpec,
    weights: Vec<f32>,
    biases: Vec<f32>,
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

fn activate(kind: Activation, z: &mut [f32]) {
    match kind {
        Activation::None => {}
        Activation::ReLU => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Sine => z.iter_mut().for_each(|v| *v = v.sin()),
        Activation::Sigmoid => z.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
    }
}

impl CompactLayer {
    fn apply(&self, x: &[f32], z: &mut [f32]) {
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
                    zo.fill(self.biases[o]);
                    for c in 0..in_channels {
                        let xc = &x[c * in_length..(c + 1) * in_length];
                        let wk = &self.weights[(o * in_channels + c) * kernel..][..kernel];
                        for (k, &w) in wk.iter().enumerate() {
                            for (y, &v) in zo.iter_mut().zip(&xc[k..k + out_len]) {
                                *y += w * v;
                            }
                        }
                    }
                }
            }
        }
        activate(self.spec.activation(), z);
    }
}

impl Model {
    fn compact(&self) -> &[CompactLayer] {
        self.compact.get_or_init(|| {
            self.layers()
                .iter()
                .map(|l| CompactLayer {
                    spec: l.spec,
                    weights: narrow(&l.weights),
                    biases: narrow(&l.biases),
                })
                .collect()
        })
    }

    /// Forward pass in single precision, as a deployed model runs.
    ///
    /// Agrees with [`Model::forward`] to within `f32` rounding.
    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut x = narrow(input);
        for layer in self.compact() {
            let mut z = vec![0.0f32; layer.spec.output_len()];
            layer.apply(&x, &mut z);
            x = z;
        }
        Ok(x.into_iter().map(f64::from).collect())
    }
}
