//! Fully connected tanh network with jet-aware evaluation.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row = output neuron, column = input) followed by the bias vector.

mod checkpoint;
mod kernel;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use kernel::{eval_jets, forward_batch, forward_jet_batch, DerivOrder};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{JetVar, Tape};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        output_dim: usize,
    ) -> Result<Self, NetworkError> {
        let spec = Self {
            input_dim,
            hidden_layers,
            hidden_width,
            output_dim,
            activation: Activation::Tanh,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(2..=3).contains(&self.input_dim) {
            return Err(NetworkError::InvalidSpec(format!(
                "input_dim must be 2 or 3, got {}",
                self.input_dim
            )));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(NetworkError::InvalidSpec(
                "hidden_layers and hidden_width must be at least 1".into(),
            ));
        }
        if self.output_dim == 0 {
            return Err(NetworkError::InvalidSpec("output_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Affine maps in evaluation order; a tanh follows every map except the last.
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(self.output_dim);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum()
    }

    /// Flat index of weight `(row, col)` of affine map `layer`.
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let l = self.layers()[layer];
        assert!(row < l.fan_out && col < l.fan_in);
        l.weight_offset + row * l.fan_in + col
    }

    pub fn bias_index(&self, layer: usize, row: usize) -> usize {
        let l = self.layers()[layer];
        assert!(row < l.fan_out);
        l.bias_offset + row
    }
}

/// Weights and bias of one affine map, unflattened.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self { values: vec![0.0; spec.param_count()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unflatten(&self, spec: &MlpSpec) -> Result<Vec<LayerParams>, NetworkError> {
        self.check_len(spec)?;
        Ok(spec
            .layers()
            .iter()
            .map(|l| LayerParams {
                weights: (0..l.fan_out)
                    .map(|r| {
                        let s = l.weight_offset + r * l.fan_in;
                        self.values[s..s + l.fan_in].to_vec()
                    })
                    .collect(),
                bias: self.values[l.bias_offset..l.bias_offset + l.fan_out].to_vec(),
            })
            .collect())
    }

    pub fn flatten(spec: &MlpSpec, layers: &[LayerParams]) -> Result<Self, NetworkError> {
        let shapes = spec.layers();
        if shapes.len() != layers.len() {
            return Err(NetworkError::DimMismatch { expected: shapes.len(), got: layers.len() });
        }
        let mut values = Vec::with_capacity(spec.param_count());
        for (shape, lp) in shapes.iter().zip(layers) {
            if lp.weights.len() != shape.fan_out || lp.bias.len() != shape.fan_out {
                return Err(NetworkError::DimMismatch { expected: shape.fan_out, got: lp.bias.len() });
            }
            for row in &lp.weights {
                if row.len() != shape.fan_in {
                    return Err(NetworkError::DimMismatch { expected: shape.fan_in, got: row.len() });
                }
                values.extend_from_slice(row);
            }
            values.extend_from_slice(&lp.bias);
        }
        Ok(Self { values })
    }

    pub fn check_len(&self, spec: &MlpSpec) -> Result<(), NetworkError> {
        let expected = spec.param_count();
        if self.values.len() != expected {
            return Err(NetworkError::DimMismatch { expected, got: self.values.len() });
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_count()];
    for l in spec.layers() {
        let limit = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        for w in &mut values[l.weight_offset..l.bias_offset] {
            *w = rng.gen_range(-limit..=limit);
        }
    }
    ParamVector { values }
}

/// Plain evaluation at a single input.
pub fn forward(params: &ParamVector, spec: &MlpSpec, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
    if input.len() != spec.input_dim {
        return Err(NetworkError::DimMismatch { expected: spec.input_dim, got: input.len() });
    }
    forward_batch(params, spec, input)
}

/// Jet evaluation at a single input, recorded on `tape`.
pub fn forward_jet<'a>(
    params: &'a ParamVector,
    spec: &MlpSpec,
    input: &[f64],
    tape: &mut Tape<'a>,
) -> Result<Vec<JetVar>, NetworkError> {
    if input.len() != spec.input_dim {
        return Err(NetworkError::DimMismatch { expected: spec.input_dim, got: input.len() });
    }
    forward_jet_batch(params, spec, input, DerivOrder::Second, tape)
}
