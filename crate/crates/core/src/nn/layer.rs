use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    None,
    ReLU,
    Sine,
    Sigmoid,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::ReLU => 1,
            Activation::Sine => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::None,
            1 => Activation::ReLU,
            2 => Activation::Sine,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

pub fn activation_apply(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::None => x,
        Activation::ReLU => x.max(0.0),
        Activation::Sine => x.sin(),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

/// Derivative with respect to the pre-activation `z`, given `z` and `a = f(z)`.
pub fn activation_derivative(kind: Activation, z: f64, a: f64) -> f64 {
    match kind {
        Activation::None => 1.0,
        Activation::ReLU => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sine => z.cos(),
        Activation::Sigmoid => a * (1.0 - a),
    }
}

/// Layer geometry. Convolutions are stride-1 cross-correlations without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    Conv1D {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        in_length: usize,
        activation: Activation,
    },
}

/// Logical shape of an activation tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorShape {
    /// `length` positions of `channels` features, stored channel-major.
    Channels {
        channels: usize,
        length: usize,
    },
    Flat(usize),
}

impl TensorShape {
    pub fn len(self) -> usize {
        match self {
            TensorShape::Channels { channels, length } => channels * length,
            TensorShape::Flat(n) => n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for TensorShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TensorShape::Channels { channels, length } => write!(f, "{length}x{channels}"),
            TensorShape::Flat(n) => write!(f, "{n}"),
        }
    }
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            inputs,
            outputs,
            activation,
        }
    }

    pub fn conv1d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        in_length: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec::Conv1D {
            in_channels,
            out_channels,
            kernel,
            in_length,
            activation,
        }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv1D { activation, .. } => {
                activation
            }
        }
    }

    pub fn input_shape(&self) -> TensorShape {
        match *self {
            LayerSpec::Dense { inputs, .. } => TensorShape::Flat(inputs),
            LayerSpec::Conv1D {
                in_channels,
                in_length,
                ..
            } => TensorShape::Channels {
                channels: in_channels,
                length: in_length,
            },
        }
    }

    pub fn output_shape(&self) -> TensorShape {
        match *self {
            LayerSpec::Dense { outputs, .. } => TensorShape::Flat(outputs),
            LayerSpec::Conv1D {
                out_channels,
                kernel,
                in_length,
                ..
            } => TensorShape::Channels {
                channels: out_channels,
                length: (in_length + 1).saturating_sub(kernel),
            },
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().len()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().len()
    }

    pub fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => inputs * outputs,
            LayerSpec::Conv1D {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv1D { out_channels, .. } => out_channels,
        }
    }

    pub(crate) fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => (inputs, outputs),
            LayerSpec::Conv1D {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel, out_channels * kernel),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        match *self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                if inputs == 0 || outputs == 0 {
                    return Err("dense dimensions must be positive".into());
                }
            }
            LayerSpec::Conv1D {
                in_channels,
                out_channels,
                kernel,
                in_length,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return Err("conv dimensions must be positive".into());
                }
                if kernel > in_length {
                    return Err(format!("kernel {kernel} longer than input {in_length}"));
                }
            }
        }
        Ok(())
    }
}
