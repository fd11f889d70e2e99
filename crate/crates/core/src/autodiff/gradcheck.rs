use super::{AutodiffError, Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h^2)`.
    #[default]
    Central,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error `O(h^4)`.
    FivePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    pub stencil: Stencil,
    /// Coordinates sampled per parameter; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    /// Magnitude below which discrepancies are measured absolutely.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            stencil: Stencil::Central,
            coords_per_param: Some(16),
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat coordinate)` of the worst discrepancy.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    let mut g = Graph::new();
    let ids = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut g, &ids)?;
    Ok(g.value(loss).item())
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences on a sampled subset of coordinates.
///
/// The discrepancy per coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    opts: &GradCheckOptions,
    rng: &mut Rng,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    assert!(opts.h > 0.0, "finite-difference step must be positive");
    let mut g = Graph::new();
    let ids = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut g, &ids)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, id) in ids.iter().enumerate() {
        let n = params[pi].len();
        let coords = match opts.coords_per_param {
            Some(k) => rng.sample_indices(n, k),
            None => (0..n).collect(),
        };
        for c in coords {
            let analytic = grads.get(*id).map_or(0.0, |t| t.data()[c]);
            let x0 = params[pi].data()[c];
            let mut at = |offset: f64| -> Result<f64, AutodiffError> {
                probe[pi].data_mut()[c] = x0 + offset;
                let v = eval(&f, &probe);
                probe[pi].data_mut()[c] = x0;
                v
            };
            let h = opts.h;
            let numeric = match opts.stencil {
                Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => {
                    (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h)
                }
            };
            let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
            let err = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((pi, c));
            }
        }
    }
    Ok(report)
}
