//! Measurable counterparts of the theory behind per-neuron relative updates:
//! stability and deep-relative-trust probes, relative step sizes, neuron
//! rotations, sampled angular robustness, spherical cap measures and the
//! PAC-Bayes bound built from them.

mod bound;
mod geometry;
mod probes;
mod robustness;

pub use bound::{
    ball_cap_lower_bound, cap_measure, ln_cap_measure, ln_regularized_beta,
    monte_carlo_cap_measure, pac_bayes_bound, pac_bayes_bound_heterogeneous, BoundInputs,
    BoundReport,
};
pub use geometry::{angle_between, chord_angle, rotate_neuron, RotationSubspace};
pub use probes::{
    check_stability, check_trust, layer_relative_size, neuron_relative_sizes, LayerStability,
    LayerTrust, LayeredLoss, ModelLoss, StabilityReport, TapeLoss, TrustReport,
};
pub use robustness::{
    estimate_alpha_robustness, model_error_counter, RobustnessEstimate, RobustnessOptions,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::network::NetworkError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("layer {layer} has zero gradient; the step angle is undefined")]
    ZeroGradient { layer: usize },
    #[error("layer {layer} has zero norm")]
    ZeroNorm { layer: usize },
    #[error("expected {expected} layers, got {actual}")]
    LayerCount { expected: usize, actual: usize },
    #[error("layer {layer}: step shape {step:?} does not match weight shape {weight:?}")]
    Shape {
        layer: usize,
        step: Vec<usize>,
        weight: Vec<usize>,
    },
    #[error("rotation needs a unit vector, got norm {0}")]
    NonUnit(f64),
    #[error("angle {0} outside [0, pi]")]
    AngleRange(f64),
    #[error("rotation needs dimension at least {needed}, got {actual}")]
    Dimension { needed: usize, actual: usize },
    #[error("model misclassifies {errors} training points; robustness needs zero training error")]
    NotInterpolating { errors: usize },
    #[error("invalid bound inputs: {0}")]
    BoundInputs(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}
