use serde::Serialize;

use super::HarnessError;
use std::f64::consts::SQRT_2;
use std::sync::Arc;

use crate::autodiff::{
    grad_check, AutodiffError, CustomOp, GradCheckOptions, GradCheckReport, Graph, NodeId, Stencil,
};
use crate::network::{build_mlp, Init, MlpConfig, Model, ParamKind};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Random MLP instances for finite-difference checking.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSpec {
    pub instances: usize,
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub batch: usize,
    pub reparameterised: bool,
    pub seed: u64,
    pub options: GradCheckOptions,
    /// Instances whose hidden pre-activations come closer than this to the
    /// relu kink are redrawn.
    pub kink_margin: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self {
            instances: 10,
            depth: 3,
            width: 16,
            input_dim: 8,
            classes: 4,
            batch: 8,
            reparameterised: false,
            seed: 0,
            // five-point differences keep truncation and rounding error far
            // below the tolerance; the floor sits above the ~1e-12 absolute
            // rounding noise of the loss
            options: GradCheckOptions {
                h: 1e-3,
                stencil: Stencil::FivePoint,
                coords_per_param: Some(16),
                floor: 1e-5,
            },
            kink_margin: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub instances: usize,
    /// Draws rejected for sitting too close to the relu kink.
    pub redrawn: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_instance: usize,
}

const MAX_DRAWS_PER_INSTANCE: u64 = 1000;

/// Draws a model with Gaussian weights, perturbed biases and gains, and a
/// random labelled batch.
fn draw(spec: &GradCheckSpec, rng: &mut Rng) -> Result<(Model, Tensor, Vec<usize>), HarnessError> {
    let mut cfg = MlpConfig::new(spec.depth, spec.input_dim, spec.width, spec.classes)
        .with_init(Init::Gaussian { sigma: 0.5 })
        .reparameterised(spec.reparameterised);
    cfg.use_gain = true;
    let mut model = build_mlp(&cfg, rng).map_err(|e| HarnessError::Config(e.to_string()))?;
    for g in &mut model.groups {
        if let ParamKind::ScalarLike { .. } = g.kind {
            let offset = if g.name.ends_with("gain") { 1.0 } else { 0.0 };
            for v in g.values.data_mut() {
                *v = offset + 0.1 * rng.gaussian();
            }
        }
    }
    let x = Tensor::new(
        vec![spec.batch, spec.input_dim],
        rng.gaussian_vec(spec.batch * spec.input_dim, 1.0),
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let y = (0..spec.batch).map(|_| rng.below(spec.classes)).collect();
    Ok((model, x, y))
}

/// Draws instance `i`, redrawing until every hidden pre-activation clears
/// the kink margin. Returns the instance, its remaining stream and the
/// number of rejected draws.
fn draw_clear_of_kink(
    spec: &GradCheckSpec,
    root: &Rng,
    i: usize,
) -> Result<(Model, Tensor, Vec<usize>, Rng, usize), HarnessError> {
    let stream = root.stream(i as u64);
    for attempt in 0..MAX_DRAWS_PER_INSTANCE {
        let mut rng = stream.stream(attempt);
        let (model, x, y) = draw(spec, &mut rng)?;
        let margin = model
            .min_abs_pre_activation(&x)
            .map_err(|e| HarnessError::Numerical(e.to_string()))?;
        if margin >= spec.kink_margin {
            return Ok((model, x, y, rng, attempt as usize));
        }
    }
    Err(HarnessError::Config(format!(
        "no instance kept every pre-activation {} away from the kink; use a smaller batch",
        spec.kink_margin
    )))
}

fn run_checks<F>(spec: &GradCheckSpec, check: F) -> Result<GradCheckSummary, HarnessError>
where
    F: Fn(&Model, &Tensor, &[usize], &mut Rng) -> Result<GradCheckReport, HarnessError>,
{
    let root = Rng::new(spec.seed);
    let mut summary = GradCheckSummary {
        instances: spec.instances,
        redrawn: 0,
        coordinates: 0,
        max_rel_error: 0.0,
        worst_instance: 0,
    };
    for i in 0..spec.instances {
        let (model, x, y, mut rng, redrawn) = draw_clear_of_kink(spec, &root, i)?;
        summary.redrawn += redrawn;
        let report = check(&model, &x, &y, &mut rng)?;
        summary.coordinates += report.checked;
        if report.max_rel_error > summary.max_rel_error {
            summary.max_rel_error = report.max_rel_error;
            summary.worst_instance = i;
        }
    }
    Ok(summary)
}

/// Checks reverse-mode gradients of cross-entropy against finite
/// differences on `spec.instances` random MLPs.
pub fn check_random_mlps(spec: &GradCheckSpec) -> Result<GradCheckSummary, HarnessError> {
    run_checks(spec, |model, x, y, rng| {
        model
            .grad_check(x, y, &spec.options, rng)
            .map_err(|e| HarnessError::Numerical(e.to_string()))
    })
}

/// Scaled relu whose backward pass drops the `sqrt(2)` factor.
struct PlantedRelu;

impl CustomOp for PlantedRelu {
    fn name(&self) -> &'static str {
        "scaled_relu_missing_gain"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
        Ok(inputs[0].map(|v| SQRT_2 * v.max(0.0)))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor) -> Vec<Tensor> {
        vec![inputs[0].zip_map(g, |x, gv| if x > 0.0 { gv } else { 0.0 })]
    }
}

/// Runs the same checks on the same instances with a deliberately wrong
/// activation gradient; a working checker reports a large error.
pub fn check_planted_bug(spec: &GradCheckSpec) -> Result<GradCheckSummary, HarnessError> {
    if spec.reparameterised {
        return Err(HarnessError::Config(
            "the planted-bug check uses the plain parameterisation".into(),
        ));
    }
    run_checks(spec, |model, x, y, rng| {
        let layers = model.layers().to_vec();
        let params: Vec<Tensor> = model.groups.iter().map(|g| g.values.clone()).collect();
        let loss = |g: &mut Graph, p: &[NodeId]| {
            let mut h = g.constant(x.clone())?;
            for (l, lp) in layers.iter().enumerate() {
                h = g.matmul_t(h, p[lp.weight])?;
                if let Some(i) = lp.gain {
                    h = g.mul_row(h, p[i])?;
                }
                if let Some(i) = lp.bias {
                    h = g.add_row(h, p[i])?;
                }
                if l + 1 < layers.len() {
                    h = g.custom(Arc::new(PlantedRelu), &[h])?;
                }
            }
            g.softmax_cross_entropy(h, y)
        };
        grad_check(loss, &params, &spec.options, rng)
            .map_err(|e| HarnessError::Numerical(e.to_string()))
    })
}
