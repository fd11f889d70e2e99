use super::{Init, MlpConfig, NetworkError, ParamGroup, StoredGroup, SIGMA_B_BIAS, SIGMA_B_GAIN};
use crate::autodiff::{
    grad_check, normalise_rows_forward, GradCheckOptions, GradCheckReport, Graph, NodeId,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Indices into [`Model::groups`] for one affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    pub weight: usize,
    pub gain: Option<usize>,
    pub bias: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: MlpConfig,
    pub groups: Vec<ParamGroup>,
    layers: Vec<LayerParams>,
}

/// Node ids produced by [`Model::forward_graph`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: NodeId,
    /// One node per parameter group, in group order.
    pub params: Vec<NodeId>,
    /// Pre-activation of each layer.
    pub pre_activations: Vec<NodeId>,
}

/// Centres each row of `raw` and scales it to unit norm.
pub fn normalise_reparam(raw: &Tensor) -> Result<Tensor, NetworkError> {
    Ok(normalise_rows_forward(raw)?.0)
}

fn project_rows(t: &mut Tensor) {
    let d = t.shape()[1];
    for row in t.data_mut().chunks_mut(d) {
        let m = row.iter().sum::<f64>() / d as f64;
        row.iter_mut().for_each(|v| *v -= m);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
}

/// Builds an MLP from `cfg`, drawing initial weights from `rng`.
///
/// Groups are ordered layer by layer: weight, then gain, then bias.
pub fn build_mlp(cfg: &MlpConfig, rng: &mut Rng) -> Result<Model, NetworkError> {
    cfg.validate()?;
    let mut groups = Vec::new();
    let mut layers = Vec::new();
    let dims = cfg.layer_dims();
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let is_output = l + 1 == dims.len();
        let sigma = match cfg.init {
            Init::Balanced => 1.0,
            Init::Gaussian { sigma } => sigma,
        };
        let mut w = Tensor::new(
            vec![fan_out, fan_in],
            rng.gaussian_vec(fan_out * fan_in, sigma),
        )?;
        if cfg.init == Init::Balanced {
            project_rows(&mut w);
        }
        let constrained = !cfg.reparameterised && (!is_output || cfg.balance_output);
        let weight = groups.len();
        groups.push(ParamGroup::neuron_matrix(
            format!("layer{l}.weight"),
            w,
            constrained,
        )?);
        let gain = cfg.use_gain.then(|| {
            groups.push(ParamGroup::scalar_like(
                format!("layer{l}.gain"),
                Tensor::full(&[fan_out], 1.0),
                SIGMA_B_GAIN,
            ));
            groups.len() - 1
        });
        let bias = cfg.use_bias.then(|| {
            groups.push(ParamGroup::scalar_like(
                format!("layer{l}.bias"),
                Tensor::zeros(&[fan_out]),
                SIGMA_B_BIAS,
            ));
            groups.len() - 1
        });
        layers.push(LayerParams { weight, gain, bias });
    }
    Ok(Model {
        config: cfg.clone(),
        groups,
        layers,
    })
}

/// Logits of `model` on `batch`.
pub fn forward(model: &Model, batch: &Tensor) -> Result<Tensor, NetworkError> {
    let mut g = Graph::new();
    let x = g.constant(batch.clone())?;
    let pass = model.forward_graph(&mut g, x, false)?;
    Ok(g.value(pass.logits).clone())
}

/// Mean cross-entropy and misclassification count over one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub errors: usize,
}

fn count_errors(logits: &Tensor, labels: &[usize]) -> usize {
    logits
        .rows()
        .zip(labels)
        .filter(|(row, &label)| argmax(row) != label)
        .count()
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// Reassembles a model from stored groups, checking them against the
    /// layout `config` implies.
    pub fn from_stored(config: MlpConfig, stored: Vec<StoredGroup>) -> Result<Self, NetworkError> {
        let template = build_mlp(&config, &mut Rng::new(0))?;
        if template.groups.len() != stored.len() {
            return Err(NetworkError::Mismatch(format!(
                "expected {} groups, found {}",
                template.groups.len(),
                stored.len()
            )));
        }
        let mut groups = Vec::with_capacity(stored.len());
        for (t, s) in template.groups.iter().zip(stored) {
            let g = ParamGroup::from_stored(s)?;
            if g.name != t.name || g.values.shape() != t.values.shape() {
                return Err(NetworkError::Mismatch(format!(
                    "group `{}` {:?} where `{}` {:?} was expected",
                    g.name,
                    g.values.shape(),
                    t.name,
                    t.values.shape()
                )));
            }
            groups.push(g);
        }
        Ok(Self {
            config,
            groups,
            layers: template.layers,
        })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }

    /// Records the forward pass on `g`. With `trainable` the parameters are
    /// differentiable leaves, otherwise constants.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        input: NodeId,
        trainable: bool,
    ) -> Result<ForwardPass, NetworkError> {
        let params = self
            .groups
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.values.clone())
                } else {
                    g.constant(p.values.clone())
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.forward_with_params(g, input, params)
    }

    /// Records the forward pass using existing nodes, one per group in group
    /// order, in place of the stored parameter values.
    pub fn forward_with_params(
        &self,
        g: &mut Graph,
        input: NodeId,
        params: Vec<NodeId>,
    ) -> Result<ForwardPass, NetworkError> {
        let width = g.value(input).dims2("forward")?.1;
        if width != self.config.input_dim {
            return Err(NetworkError::InputWidth {
                expected: self.config.input_dim,
                actual: width,
            });
        }
        if params.len() != self.groups.len() {
            return Err(NetworkError::Mismatch(format!(
                "{} parameter nodes for {} groups",
                params.len(),
                self.groups.len()
            )));
        }
        let mut h = input;
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let is_output = l + 1 == self.layers.len();
            let mut w = params[layer.weight];
            if self.config.reparameterised && (!is_output || self.config.balance_output) {
                w = g.normalise_rows(w)?;
            }
            let mut z = g.matmul_t(h, w)?;
            if let Some(gi) = layer.gain {
                z = g.mul_row(z, params[gi])?;
            }
            if let Some(bi) = layer.bias {
                z = g.add_row(z, params[bi])?;
            }
            pre_activations.push(z);
            h = if is_output { z } else { g.scaled_relu(z)? };
        }
        Ok(ForwardPass {
            logits: h,
            params,
            pre_activations,
        })
    }

    /// Smallest `|z|` over hidden pre-activations on `inputs`; finite
    /// differences are unreliable when this is near the relu kink.
    pub fn min_abs_pre_activation(&self, inputs: &Tensor) -> Result<f64, NetworkError> {
        let mut g = Graph::new();
        let x = g.constant(inputs.clone())?;
        let pass = self.forward_graph(&mut g, x, false)?;
        let hidden = &pass.pre_activations[..pass.pre_activations.len() - 1];
        Ok(hidden
            .iter()
            .flat_map(|&z| g.value(z).data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }

    /// Finite-difference check of the cross-entropy gradient with respect to
    /// every parameter group.
    pub fn grad_check(
        &self,
        inputs: &Tensor,
        labels: &[usize],
        opts: &GradCheckOptions,
        rng: &mut Rng,
    ) -> Result<GradCheckReport, NetworkError> {
        let width = inputs.dims2("grad_check")?.1;
        if width != self.config.input_dim {
            return Err(NetworkError::InputWidth {
                expected: self.config.input_dim,
                actual: width,
            });
        }
        let values: Vec<Tensor> = self.groups.iter().map(|p| p.values.clone()).collect();
        let f = |g: &mut Graph, p: &[NodeId]| {
            let x = g.constant(inputs.clone())?;
            let pass = self
                .forward_with_params(g, x, p.to_vec())
                .map_err(|e| match e {
                    NetworkError::Autodiff(a) => a,
                    // width and group count were checked above
                    other => unreachable!("{other}"),
                })?;
            g.softmax_cross_entropy(pass.logits, labels)
        };
        Ok(grad_check(f, &values, opts, rng)?)
    }

    /// Loss and error count on one batch; writes gradients into each
    /// group's `grad`.
    pub fn loss_and_grad(
        &mut self,
        batch: &Tensor,
        labels: &[usize],
    ) -> Result<BatchStats, NetworkError> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone())?;
        let pass = self.forward_graph(&mut g, x, true)?;
        let loss = g.softmax_cross_entropy(pass.logits, labels)?;
        let mut grads = g.backward(loss)?;
        for (group, id) in self.groups.iter_mut().zip(&pass.params) {
            match grads.take(*id) {
                Some(t) => group.grad = t,
                None => group.zero_grad(),
            }
        }
        Ok(BatchStats {
            loss: g.value(loss).item(),
            errors: count_errors(g.value(pass.logits), labels),
        })
    }

    /// Loss and error count over a dataset, evaluated in fixed chunks.
    pub fn evaluate(&self, inputs: &Tensor, labels: &[usize]) -> Result<BatchStats, NetworkError> {
        const CHUNK: usize = 1024;
        let n = labels.len();
        let mut loss = 0.0;
        let mut errors = 0;
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let x = inputs.gather_rows(&idx);
            let mut g = Graph::new();
            let xi = g.constant(x)?;
            let pass = self.forward_graph(&mut g, xi, false)?;
            let l = g.softmax_cross_entropy(pass.logits, &labels[start..end])?;
            loss += g.value(l).item() * (end - start) as f64;
            errors += count_errors(g.value(pass.logits), &labels[start..end]);
            start = end;
        }
        Ok(BatchStats {
            loss: loss / n as f64,
            errors,
        })
    }

    /// Predicted classes for each input row.
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>, NetworkError> {
        let logits = forward(self, inputs)?;
        Ok(logits.rows().map(argmax).collect())
    }

    /// Weight matrix of layer `l` as used in the forward pass.
    pub fn effective_weight(&self, l: usize) -> Result<Tensor, NetworkError> {
        let w = &self.groups[self.layers[l].weight].values;
        let is_output = l + 1 == self.layers.len();
        if self.config.reparameterised && (!is_output || self.config.balance_output) {
            normalise_reparam(w)
        } else {
            Ok(w.clone())
        }
    }

    pub fn to_stored(&self) -> Vec<StoredGroup> {
        self.groups.iter().map(ParamGroup::to_stored).collect()
    }
}
