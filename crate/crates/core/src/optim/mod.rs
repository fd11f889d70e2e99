//! Optimisers: Nero, constrained and unconstrained baselines, and
//! learning-rate schedules.

mod baseline;
mod nero;
mod project;
mod schedule;

pub use baseline::{
    lamb_trust_ratio, step_norm, AdamConfig, Baseline, BaselineConfig, BaselineState, LambConfig,
    MadamConfig, SgdConfig,
};
pub use nero::{Nero, NeroConfig, NeroState, WEIGHT_NORM_FLOOR};
pub use project::{constraint_residuals, project_balanced, project_balanced_in_place, Constraints};
pub use schedule::Schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{ParamGroup, ParamKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("balanced neurons need fan-in at least 2, got {0}")]
    FanIn(usize),
    #[error("degenerate neuron: row {row} of `{group}` has norm {norm:e} after centring")]
    DegenerateNeuron {
        group: String,
        row: usize,
        norm: f64,
    },
    #[error("numerical degeneracy: row {row} of `{group}` has normaliser {normalizer:e} with a nonzero gradient")]
    NumericalDegeneracy {
        group: String,
        row: usize,
        normalizer: f64,
    },
    #[error("non-finite parameter values in `{0}`")]
    NonFinite(String),
    #[error("optimiser state does not match parameters: {0}")]
    StateMismatch(String),
    #[error("invalid optimiser config: {0}")]
    Config(String),
}

impl OptimError {
    pub(crate) fn at(self, group: &str, row: usize) -> Self {
        match self {
            OptimError::DegenerateNeuron { norm, .. } => OptimError::DegenerateNeuron {
                group: group.to_string(),
                row,
                norm,
            },
            other => other,
        }
    }
}

/// Diagnostics from one optimiser step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    /// Rows left untouched because they have seen no gradient yet.
    pub skipped_rows: usize,
    /// Rows whose step used the weight-norm floor.
    pub norm_floor_hits: usize,
}

/// Update rule plus, for baselines, an optional projection onto balanced
/// neurons after each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateRule {
    Nero(NeroConfig),
    Sgd(SgdConfig),
    Adam(AdamConfig),
    Lamb(LambConfig),
    Madam(MadamConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub rule: UpdateRule,
    /// Baselines only: project neuron rows after every step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<Constraints>,
}

impl OptimizerConfig {
    pub fn nero(cfg: NeroConfig) -> Self {
        Self {
            rule: UpdateRule::Nero(cfg),
            constraints: None,
        }
    }

    pub fn baseline(cfg: BaselineConfig, constraints: Option<Constraints>) -> Self {
        let rule = match cfg {
            BaselineConfig::Sgd(c) => UpdateRule::Sgd(c),
            BaselineConfig::Adam(c) => UpdateRule::Adam(c),
            BaselineConfig::Lamb(c) => UpdateRule::Lamb(c),
            BaselineConfig::Madam(c) => UpdateRule::Madam(c),
        };
        Self { rule, constraints }
    }

    pub fn as_baseline(&self) -> Option<BaselineConfig> {
        Some(match &self.rule {
            UpdateRule::Nero(_) => return None,
            UpdateRule::Sgd(c) => BaselineConfig::Sgd(c.clone()),
            UpdateRule::Adam(c) => BaselineConfig::Adam(c.clone()),
            UpdateRule::Lamb(c) => BaselineConfig::Lamb(c.clone()),
            UpdateRule::Madam(c) => BaselineConfig::Madam(c.clone()),
        })
    }

    pub fn name(&self) -> &'static str {
        match &self.rule {
            UpdateRule::Nero(_) => "nero",
            UpdateRule::Sgd(_) => "sgd",
            UpdateRule::Adam(_) => "adam",
            UpdateRule::Lamb(_) => "lamb",
            UpdateRule::Madam(_) => "madam",
        }
    }

    /// Base learning rate (`eta` for Nero).
    pub fn lr(&self) -> f64 {
        match &self.rule {
            UpdateRule::Nero(c) => c.eta,
            _ => self.as_baseline().map(|b| b.lr()).unwrap_or_default(),
        }
    }

    pub fn with_lr(&self, lr: f64) -> Self {
        let mut out = self.clone();
        match &mut out.rule {
            UpdateRule::Nero(c) => c.eta = lr,
            UpdateRule::Sgd(c) => c.lr = lr,
            UpdateRule::Adam(c) => c.lr = lr,
            UpdateRule::Lamb(c) => c.lr = lr,
            UpdateRule::Madam(c) => c.lr = lr,
        }
        out
    }

    /// Constraints enforced after each step, if any.
    pub fn active_constraints(&self) -> Option<Constraints> {
        let c = match &self.rule {
            UpdateRule::Nero(n) => Some(n.constraints()),
            _ => self.constraints,
        };
        c.filter(|c| c.any())
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        match (&self.rule, self.as_baseline()) {
            (UpdateRule::Nero(n), _) => {
                if self.constraints.is_some() {
                    return Err(OptimError::Config(
                        "nero takes constrain_mean/constrain_norm, not a constraints table".into(),
                    ));
                }
                n.validate()
            }
            (_, Some(b)) => b.validate(),
            _ => unreachable!(),
        }
    }
}

/// Serialisable optimiser state for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerState {
    Nero(NeroState),
    Baseline(BaselineState),
}

#[derive(Debug, Clone)]
enum Inner {
    Nero(Nero),
    Baseline(Baseline, Option<Constraints>),
}

/// An optimiser bound to a model's parameter groups.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    inner: Inner,
}

impl Optimizer {
    pub fn new(config: &OptimizerConfig, groups: &[ParamGroup]) -> Result<Self, OptimError> {
        config.validate()?;
        let inner = match (&config.rule, config.as_baseline()) {
            (UpdateRule::Nero(n), _) => Inner::Nero(Nero::new(n.clone(), groups)?),
            (_, Some(b)) => Inner::Baseline(Baseline::new(b, groups)?, config.constraints),
            _ => unreachable!(),
        };
        Ok(Self {
            config: config.clone(),
            inner,
        })
    }

    pub fn from_state(config: &OptimizerConfig, state: OptimizerState) -> Result<Self, OptimError> {
        config.validate()?;
        let inner = match (&config.rule, config.as_baseline(), state) {
            (UpdateRule::Nero(n), _, OptimizerState::Nero(s)) => {
                Inner::Nero(Nero::from_state(n.clone(), s)?)
            }
            (_, Some(b), OptimizerState::Baseline(s)) => {
                Inner::Baseline(Baseline::from_state(b, s)?, config.constraints)
            }
            _ => {
                return Err(OptimError::StateMismatch(format!(
                    "stored state does not belong to a {} optimiser",
                    config.name()
                )))
            }
        };
        Ok(Self {
            config: config.clone(),
            inner,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> OptimizerState {
        match &self.inner {
            Inner::Nero(n) => OptimizerState::Nero(n.state.clone()),
            Inner::Baseline(b, _) => OptimizerState::Baseline(b.state.clone()),
        }
    }

    /// Number of scalars held as optimiser state.
    pub fn state_scalars(&self) -> usize {
        match &self.inner {
            Inner::Nero(n) => n.state.num_scalars(),
            Inner::Baseline(b, _) => b.state.num_scalars(),
        }
    }

    pub fn active_constraints(&self) -> Option<Constraints> {
        self.config.active_constraints()
    }

    /// Applies one update using the gradients stored in `groups`.
    pub fn step(
        &mut self,
        groups: &mut [ParamGroup],
        lr_multiplier: f64,
    ) -> Result<StepReport, OptimError> {
        match &mut self.inner {
            Inner::Nero(n) => n.step(groups, lr_multiplier),
            Inner::Baseline(b, constraints) => {
                b.step(groups, lr_multiplier)?;
                if let Some(c) = constraints.filter(|c| c.any()) {
                    project_groups(groups, c)?;
                }
                Ok(StepReport::default())
            }
        }
    }
}

/// Projects every constrained neuron row of `groups`.
pub fn project_groups(groups: &mut [ParamGroup], c: Constraints) -> Result<(), OptimError> {
    for g in groups.iter_mut().filter(|g| g.constrained) {
        if let ParamKind::NeuronMatrix { fan_in, .. } = g.kind {
            for (row, w) in g.values.data_mut().chunks_mut(fan_in).enumerate() {
                project_balanced_in_place(w, c).map_err(|e| e.at(&g.name, row))?;
            }
        }
    }
    Ok(())
}

/// Worst `(|sum w|, | ||w|| - 1 |)` over all constrained neuron rows.
pub fn group_residuals(groups: &[ParamGroup]) -> (f64, f64) {
    groups
        .iter()
        .filter(|g| g.constrained)
        .filter_map(|g| match g.kind {
            ParamKind::NeuronMatrix { fan_in, .. } => {
                Some(constraint_residuals(g.values.data(), fan_in))
            }
            ParamKind::ScalarLike { .. } => None,
        })
        .fold((0.0, 0.0), |(a, b), (m, n)| {
            (f64::max(a, m), f64::max(b, n))
        })
}
