use serde::Serialize;

use super::AnalysisError;
use crate::autodiff::{AutodiffError, Graph, NodeId};
use crate::network::Model;
use crate::tensor::{norm, Tensor};

/// A loss over a list of layer weights, evaluated on the full batch.
pub trait LayeredLoss {
    fn value_and_grad(&self, layers: &[Tensor]) -> Result<(f64, Vec<Tensor>), AnalysisError>;
}

/// Loss recorded on a fresh tape; the closure receives one parameter node
/// per layer and returns the scalar loss node.
pub struct TapeLoss<F>(pub F);

impl<F> LayeredLoss for TapeLoss<F>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    fn value_and_grad(&self, layers: &[Tensor]) -> Result<(f64, Vec<Tensor>), AnalysisError> {
        let mut g = Graph::new();
        let ids = layers
            .iter()
            .map(|t| g.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = (self.0)(&mut g, &ids)?;
        let mut grads = g.backward(loss)?;
        let out = ids
            .iter()
            .zip(layers)
            .map(|(id, t)| grads.take(*id).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((g.value(loss).item(), out))
    }
}

/// Full-batch cross-entropy of a model as a function of its layer weight
/// matrices. Biases and gains stay fixed at their current values.
pub struct ModelLoss<'a> {
    pub model: &'a Model,
    pub inputs: &'a Tensor,
    pub labels: &'a [usize],
}

impl ModelLoss<'_> {
    /// Current weight matrix of every layer, in layer order.
    pub fn weights(&self) -> Vec<Tensor> {
        self.model
            .layers()
            .iter()
            .map(|l| self.model.groups[l.weight].values.clone())
            .collect()
    }
}

impl LayeredLoss for ModelLoss<'_> {
    fn value_and_grad(&self, layers: &[Tensor]) -> Result<(f64, Vec<Tensor>), AnalysisError> {
        let lp = self.model.layers();
        check_count(lp.len(), layers.len())?;
        let mut m = self.model.clone();
        for (l, w) in lp.iter().zip(layers) {
            m.groups[l.weight].values = w.clone();
        }
        let stats = m.loss_and_grad(self.inputs, self.labels)?;
        let grads = lp.iter().map(|l| m.groups[l.weight].grad.clone()).collect();
        Ok((stats.loss, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerStability {
    pub layer: usize,
    /// `‖∇(W+ΔW) − ∇(W)‖ / ‖∇(W)‖` for this layer.
    pub lhs_ratio: f64,
    /// Cosine between the step and the negative gradient; 0 for a null step.
    pub cos_theta: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub layers: Vec<LayerStability>,
    pub stable: bool,
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTrust {
    pub layer: usize,
    pub lhs_ratio: f64,
    pub rhs_bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustReport {
    pub layers: Vec<LayerTrust>,
    pub satisfied: bool,
}

/// Relative slack allowed when comparing a trust ratio against its bound,
/// so that equality cases survive rounding.
const TRUST_TOLERANCE: f64 = 1e-12;

fn check_count(expected: usize, actual: usize) -> Result<(), AnalysisError> {
    if expected != actual {
        return Err(AnalysisError::LayerCount { expected, actual });
    }
    Ok(())
}

fn check_shapes(w: &[Tensor], dw: &[Tensor]) -> Result<(), AnalysisError> {
    check_count(w.len(), dw.len())?;
    for (layer, (a, b)) in w.iter().zip(dw).enumerate() {
        if a.shape() != b.shape() {
            return Err(AnalysisError::Shape {
                layer,
                step: b.shape().to_vec(),
                weight: a.shape().to_vec(),
            });
        }
    }
    Ok(())
}

struct GradChange {
    loss_before: f64,
    loss_after: f64,
    g0: Vec<Tensor>,
    ratios: Vec<f64>,
}

fn gradient_change(
    loss: &dyn LayeredLoss,
    w: &[Tensor],
    dw: &[Tensor],
) -> Result<GradChange, AnalysisError> {
    check_shapes(w, dw)?;
    let (loss_before, g0) = loss.value_and_grad(w)?;
    check_count(w.len(), g0.len())?;
    let moved: Vec<Tensor> = w
        .iter()
        .zip(dw)
        .map(|(a, b)| a.zip_map(b, |x, y| x + y))
        .collect();
    let (loss_after, g1) = loss.value_and_grad(&moved)?;
    check_count(w.len(), g1.len())?;
    let mut ratios = Vec::with_capacity(w.len());
    for (layer, (a, b)) in g0.iter().zip(&g1).enumerate() {
        let gn = a.norm();
        if gn == 0.0 {
            return Err(AnalysisError::ZeroGradient { layer });
        }
        ratios.push(b.zip_map(a, |x, y| x - y).norm() / gn);
    }
    Ok(GradChange {
        loss_before,
        loss_after,
        g0,
        ratios,
    })
}

/// Whether `ΔW` is a stable descent step at `W`: in every layer the relative
/// gradient change stays strictly below the cosine between the step and the
/// negative gradient.
pub fn check_stability(
    loss: &dyn LayeredLoss,
    w: &[Tensor],
    dw: &[Tensor],
) -> Result<StabilityReport, AnalysisError> {
    let gc = gradient_change(loss, w, dw)?;
    let layers: Vec<LayerStability> = gc
        .ratios
        .iter()
        .zip(gc.g0.iter().zip(dw))
        .enumerate()
        .map(|(layer, (&lhs_ratio, (g, d)))| {
            let dn = d.norm();
            let cos_theta = if dn == 0.0 {
                0.0
            } else {
                (-d.dot(g) / (dn * g.norm())).clamp(-1.0, 1.0)
            };
            LayerStability {
                layer,
                lhs_ratio,
                cos_theta,
                stable: lhs_ratio < cos_theta,
            }
        })
        .collect();
    Ok(StabilityReport {
        stable: layers.iter().all(|l| l.stable),
        layers,
        loss_before: gc.loss_before,
        loss_after: gc.loss_after,
    })
}

/// Compares each layer's relative gradient change with the product bound
/// `Π_k (1 + ‖ΔW_k‖/‖W_k‖) − 1`.
pub fn check_trust(
    loss: &dyn LayeredLoss,
    w: &[Tensor],
    dw: &[Tensor],
) -> Result<TrustReport, AnalysisError> {
    check_shapes(w, dw)?;
    let mut product = 1.0;
    for (k, (a, b)) in w.iter().zip(dw).enumerate() {
        product *= 1.0 + relative(b.data(), a.data(), k)?;
    }
    let rhs_bound = product - 1.0;
    let gc = gradient_change(loss, w, dw)?;
    let layers: Vec<LayerTrust> = gc
        .ratios
        .iter()
        .enumerate()
        .map(|(layer, &lhs_ratio)| LayerTrust {
            layer,
            lhs_ratio,
            rhs_bound,
            satisfied: lhs_ratio <= rhs_bound * (1.0 + TRUST_TOLERANCE),
        })
        .collect();
    Ok(TrustReport {
        satisfied: layers.iter().all(|l| l.satisfied),
        layers,
    })
}

fn relative(dw: &[f64], w: &[f64], layer: usize) -> Result<f64, AnalysisError> {
    let wn = norm(w);
    if wn == 0.0 {
        return Err(AnalysisError::ZeroNorm { layer });
    }
    Ok(norm(dw) / wn)
}

/// `‖ΔW‖_F / ‖W‖_F`.
pub fn layer_relative_size(dw: &Tensor, w: &Tensor) -> Result<f64, AnalysisError> {
    check_shapes(std::slice::from_ref(w), std::slice::from_ref(dw))?;
    relative(dw.data(), w.data(), 0)
}

/// `‖Δw_i‖ / ‖w_i‖` for every row `i`.
pub fn neuron_relative_sizes(dw: &Tensor, w: &Tensor) -> Result<Vec<f64>, AnalysisError> {
    check_shapes(std::slice::from_ref(w), std::slice::from_ref(dw))?;
    w.dims2("neuron_relative_sizes")
        .map_err(AutodiffError::from)?;
    w.rows()
        .zip(dw.rows())
        .enumerate()
        .map(|(i, (a, b))| relative(b, a, i))
        .collect()
}
