//! Compact little-endian model files.
//!
//! ```text
//! "THR1" | version u8 | layer count u8
//! per layer: kind u8 | activation u8 | dims u32 x4 | weights f32... | biases f32...
//! crc32 (IEEE) of every preceding byte, u32
//! ```
//!
//! Dense dims are `(inputs, outputs, 0, 0)`; Conv1D dims are
//! `(in_channels, out_channels, kernel, in_length)`.

use std::path::Path;

use thiserror::Error;

use super::layer::{Activation, LayerSpec};
use super::model::{Layer, Model};

pub const MAGIC: [u8; 4] = *b"THR1";
pub const FORMAT_VERSION: u8 = 1;

const KIND_DENSE: u8 = 0;
const KIND_CONV1D: u8 = 1;
const LAYER_HEADER_LEN: usize = 2 + 4 * 4;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated model file: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unknown layer kind {kind} at layer {layer}")]
    UnknownKind { layer: usize, kind: u8 },
    #[error("unknown activation {code} at layer {layer}")]
    UnknownActivation { layer: usize, code: u8 },
    #[error("inconsistent shapes: {0}")]
    Shape(String),
    #[error("model has {0} layers; the format stores at most 255")]
    TooManyLayers(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>, LoadError> {
        let layers = self.layers();
        let count =
            u8::try_from(layers.len()).map_err(|_| LoadError::TooManyLayers(layers.len()))?;
        let mut out =
            Vec::with_capacity(10 + layers.len() * LAYER_HEADER_LEN + 4 * self.param_count());
        out.extend_from_slice(&MAGIC);
        out.push(FORMAT_VERSION);
        out.push(count);
        for layer in layers {
            let (kind, dims) = match layer.spec {
                LayerSpec::Dense {
                    inputs, outputs, ..
                } => (KIND_DENSE, [inputs, outputs, 0, 0]),
                LayerSpec::Conv1D {
                    in_channels,
                    out_channels,
                    kernel,
                    in_length,
                    ..
                } => (KIND_CONV1D, [in_channels, out_channels, kernel, in_length]),
            };
            out.push(kind);
            out.push(layer.spec.activation().code());
            for d in dims {
                let d = u32::try_from(d)
                    .map_err(|_| LoadError::Shape(format!("dimension {d} overflows u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &w in layer.weights.iter().chain(&layer.biases) {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model, LoadError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(LoadError::Truncated {
                    needed,
                    have: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(MAGIC.len())?;
        if bytes[..4] != MAGIC {
            return Err(LoadError::BadMagic);
        }
        need(6)?;
        if bytes[4] != FORMAT_VERSION {
            return Err(LoadError::UnsupportedVersion(bytes[4]));
        }
        let count = bytes[5] as usize;

        // Walk the headers first so truncation is reported as such.
        let mut headers = Vec::with_capacity(count);
        let mut pos = 6;
        for layer in 0..count {
            need(pos + LAYER_HEADER_LEN)?;
            let kind = bytes[pos];
            let code = bytes[pos + 1];
            let dims: Vec<usize> = (0..4)
                .map(|d| {
                    let at = pos + 2 + 4 * d;
                    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
                })
                .collect();
            let activation =
                Activation::from_code(code).ok_or(LoadError::UnknownActivation { layer, code })?;
            let spec = match kind {
                KIND_DENSE => {
                    if dims[2] != 0 || dims[3] != 0 {
                        return Err(LoadError::Shape(format!(
                            "dense layer {layer} has non-zero padding dims"
                        )));
                    }
                    LayerSpec::dense(dims[0], dims[1], activation)
                }
                KIND_CONV1D => LayerSpec::conv1d(dims[0], dims[1], dims[2], dims[3], activation),
                kind => return Err(LoadError::UnknownKind { layer, kind }),
            };
            let params = spec
                .weight_count()
                .checked_add(spec.bias_count())
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| LoadError::Shape(format!("layer {layer} is implausibly large")))?;
            pos += LAYER_HEADER_LEN;
            headers.push((spec, pos));
            pos = pos
                .checked_add(params)
                .ok_or_else(|| LoadError::Shape(format!("layer {layer} is implausibly large")))?;
        }
        need(pos + 4)?;
        if bytes.len() > pos + 4 {
            return Err(LoadError::TrailingBytes(bytes.len() - pos - 4));
        }
        let stored = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..pos]);
        if stored != computed {
            return Err(LoadError::ChecksumMismatch { stored, computed });
        }

        let read_f32s = |start: usize, n: usize| -> Vec<f64> {
            bytes[start..start + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()
        };
        let layers = headers
            .into_iter()
            .map(|(spec, start)| Layer {
                spec,
                weights: read_f32s(start, spec.weight_count()),
                biases: read_f32s(start + 4 * spec.weight_count(), spec.bias_count()),
            })
            .collect();
        Model::from_layers(layers).map_err(|e| LoadError::Shape(e.to_string()))
    }
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), LoadError> {
    std::fs::write(path, model.to_bytes()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, LoadError> {
    Model::from_bytes(&std::fs::read(path)?)
}
