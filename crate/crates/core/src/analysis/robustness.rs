use serde::Serialize;

use super::geometry::{rotate_neuron, RotationSubspace};
use super::AnalysisError;
use crate::network::{Model, ParamGroup, ParamKind};
use crate::par;
use crate::rng::Rng;
use crate::tensor::{norm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessOptions {
    /// Joint rotations drawn per candidate angle.
    pub samples: usize,
    /// Bisection stops once the bracket is narrower than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for RobustnessOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessEstimate {
    pub alpha_hat: f64,
    pub num_samples: usize,
    pub evaluations: usize,
    pub note: &'static str,
}

const NOTE: &str =
    "sampled estimate: every neuron is rotated by exactly alpha in a random direction; \
this is an optimistic surrogate for the worst case over all rotations";

/// Misclassification counter for a model on a fixed dataset, for use with
/// [`estimate_alpha_robustness`].
pub fn model_error_counter<'a>(
    model: &'a Model,
    inputs: &'a Tensor,
    labels: &'a [usize],
) -> impl Fn(&[ParamGroup]) -> Result<usize, AnalysisError> + Sync + 'a {
    move |groups| {
        let mut m = model.clone();
        m.groups = groups.to_vec();
        Ok(m.evaluate(inputs, labels)?.errors)
    }
}

fn rotate_all(
    groups: &[ParamGroup],
    alpha: f64,
    rng: &mut Rng,
) -> Result<Vec<ParamGroup>, AnalysisError> {
    let mut out = groups.to_vec();
    for g in &mut out {
        let ParamKind::NeuronMatrix { fan_in, .. } = g.kind else {
            continue;
        };
        // constrained rows rotate within the balanced manifold; others rotate
        // freely at their current norm
        let subspace = if g.constrained && fan_in >= 3 {
            RotationSubspace::ZeroMean
        } else {
            RotationSubspace::Full
        };
        for i in 0..g.values.shape()[0] {
            let row = g.values.row_mut(i);
            let n = norm(row);
            if n == 0.0 {
                continue;
            }
            let unit: Vec<f64> = row.iter().map(|v| v / n).collect();
            let r = rotate_neuron(&unit, alpha, subspace, rng)?;
            row.iter_mut().zip(r).for_each(|(v, x)| *v = n * x);
        }
    }
    Ok(out)
}

/// Largest angle (to within `tolerance`) by which every neuron can be rotated
/// at once, in `samples` random joint draws, without any training error.
///
/// `errors` counts misclassified training points for a set of parameters.
/// Sample `s` uses the same stream at every candidate angle.
pub fn estimate_alpha_robustness<F>(
    groups: &[ParamGroup],
    errors: F,
    opts: &RobustnessOptions,
) -> Result<RobustnessEstimate, AnalysisError>
where
    F: Fn(&[ParamGroup]) -> Result<usize, AnalysisError> + Sync,
{
    let base = errors(groups)?;
    if base != 0 {
        return Err(AnalysisError::NotInterpolating { errors: base });
    }
    let root = Rng::new(opts.seed);
    let passes = |alpha: f64| {
        par::all_indexed(opts.samples, |s| {
            let mut rng = root.stream(s as u64);
            // a failure to rotate or evaluate counts against the angle
            rotate_all(groups, alpha, &mut rng)
                .and_then(|g| errors(&g))
                .map(|e| e == 0)
                .unwrap_or(false)
        })
    };
    let pi = std::f64::consts::PI;
    let mut evaluations = 1;
    if passes(pi) {
        return Ok(RobustnessEstimate {
            alpha_hat: pi,
            num_samples: opts.samples,
            evaluations,
            note: NOTE,
        });
    }
    let (mut lo, mut hi) = (0.0, pi);
    let tol = opts.tolerance.max(1e-12);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        evaluations += 1;
        if passes(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RobustnessEstimate {
        alpha_hat: lo,
        num_samples: opts.samples,
        evaluations,
        note: NOTE,
    })
}
