//! Multilayer perceptrons with neuron-level parameter grouping.

mod mlp;

pub use mlp::{build_mlp, forward, normalise_reparam, BatchStats, ForwardPass, LayerParams, Model};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::tensor::{Tensor, TensorError};

/// Bias scale used by the optimiser for zero-initialised biases.
pub const SIGMA_B_BIAS: f64 = 0.01;
/// Bias scale used by the optimiser for one-initialised gains.
pub const SIGMA_B_GAIN: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("neuron matrix `{name}` has fan-in {fan_in}; balanced neurons need at least 2")]
    FanIn { name: String, fan_in: usize },
    #[error("input width {actual} does not match model input_dim {expected}")]
    InputWidth { expected: usize, actual: usize },
    #[error("stored parameters do not match the model config: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl From<TensorError> for NetworkError {
    fn from(e: TensorError) -> Self {
        NetworkError::Autodiff(e.into())
    }
}

/// How the optimiser should treat a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    /// `num_neurons x fan_in` matrix whose rows are neurons.
    NeuronMatrix { num_neurons: usize, fan_in: usize },
    /// Parameters without a fan-in (biases, gains); `sigma_b` stands in for
    /// the weight norm in relative updates.
    ScalarLike { sigma_b: f64 },
}

/// A trainable tensor with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub kind: ParamKind,
    /// Rows are subject to the balanced-network constraint. False for raw
    /// reparameterised weights and for an unconstrained output layer.
    pub constrained: bool,
    pub values: Tensor,
    pub grad: Tensor,
}

impl ParamGroup {
    pub fn neuron_matrix(
        name: impl Into<String>,
        values: Tensor,
        constrained: bool,
    ) -> Result<Self, NetworkError> {
        let name = name.into();
        let (n, d) = values.dims2("neuron_matrix")?;
        if d < 2 {
            return Err(NetworkError::FanIn { name, fan_in: d });
        }
        let grad = Tensor::zeros(values.shape());
        Ok(Self {
            name,
            kind: ParamKind::NeuronMatrix {
                num_neurons: n,
                fan_in: d,
            },
            constrained,
            values,
            grad,
        })
    }

    pub fn scalar_like(name: impl Into<String>, values: Tensor, sigma_b: f64) -> Self {
        assert!(sigma_b > 0.0, "sigma_b must be positive");
        let grad = Tensor::zeros(values.shape());
        Self {
            name: name.into(),
            kind: ParamKind::ScalarLike { sigma_b },
            constrained: false,
            values,
            grad,
        }
    }

    pub fn is_neuron_matrix(&self) -> bool {
        matches!(self.kind, ParamKind::NeuronMatrix { .. })
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    pub fn to_stored(&self) -> StoredGroup {
        StoredGroup {
            name: self.name.clone(),
            kind: self.kind,
            constrained: self.constrained,
            shape: self.values.shape().to_vec(),
            values: self.values.data().to_vec(),
        }
    }

    pub fn from_stored(s: StoredGroup) -> Result<Self, NetworkError> {
        let values = Tensor::new(s.shape, s.values)?;
        let grad = Tensor::zeros(values.shape());
        Ok(Self {
            name: s.name,
            kind: s.kind,
            constrained: s.constrained,
            values,
            grad,
        })
    }
}

/// Serialised form of a [`ParamGroup`] (no gradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredGroup {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
    pub constrained: bool,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `sqrt(2) * max(0, x)`
    #[default]
    ScaledRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// Gaussian rows projected to zero mean and unit norm.
    Balanced,
    /// Raw `N(0, sigma^2)` entries.
    Gaussian { sigma: f64 },
}

fn yes() -> bool {
    true
}

/// Architecture of an MLP: `depth` affine layers, the first `depth - 1`
/// followed by the nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub depth: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    #[serde(default = "yes")]
    pub use_bias: bool,
    /// Per-layer gain vectors initialised to one.
    #[serde(default)]
    pub use_gain: bool,
    /// Differentiate raw weights through `normalise_reparam`.
    #[serde(default)]
    pub reparameterised: bool,
    /// Subject the output layer to the balance constraint.
    #[serde(default = "yes")]
    pub balance_output: bool,
    pub init: Init,
}

impl MlpConfig {
    pub fn new(depth: usize, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            depth,
            input_dim,
            hidden_dim,
            output_dim,
            nonlinearity: Nonlinearity::ScaledRelu,
            use_bias: true,
            use_gain: false,
            reparameterised: false,
            balance_output: true,
            init: Init::Balanced,
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn reparameterised(mut self, on: bool) -> Self {
        self.reparameterised = on;
        self
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let fan_in = if l == 0 {
                    self.input_dim
                } else {
                    self.hidden_dim
                };
                let fan_out = if l + 1 == self.depth {
                    self.output_dim
                } else {
                    self.hidden_dim
                };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: &str| Err(NetworkError::Config(m.to_string()));
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dim == 0 {
            return bad("layer widths must be positive");
        }
        if self.input_dim < 2 || (self.depth > 1 && self.hidden_dim < 2) {
            return bad("every weight row needs fan-in at least 2");
        }
        if let Init::Gaussian { sigma } = self.init {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return bad("gaussian init sigma must be positive");
            }
        }
        Ok(())
    }
}
