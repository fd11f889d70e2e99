use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{Dataset, Splits};
use super::HarnessError;
use crate::network::{build_mlp, Model};
use crate::optim::{group_residuals, project_groups, Optimizer};
use crate::rng::Rng;

/// A run fails once its training loss exceeds this.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// One optimiser step. Losses and errors are on the batch before the step;
/// residuals are measured after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub epoch: usize,
    pub lr_multiplier: f64,
    pub train_loss: f64,
    pub train_error: f64,
    /// Frobenius norm of each layer's weight gradient.
    pub grad_norms: Vec<f64>,
    /// Worst `|sum w|` over constrained rows, when constraints are active.
    pub mean_residual: Option<f64>,
    /// Worst `| ||w|| - 1 |` over constrained rows, when constraints are active.
    pub norm_residual: Option<f64>,
}

/// Full-pass evaluation after `epoch` epochs (0 is the initial model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub validation_loss: f64,
    pub validation_error: f64,
    pub test_loss: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { step: usize, reason: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: usize,
    pub final_train_loss: f64,
    pub final_train_error: f64,
    pub best_train_error: f64,
    pub final_validation_loss: f64,
    pub final_validation_error: f64,
    pub best_validation_error: f64,
    pub final_test_error: f64,
}

/// Everything logged by one run. Equality ignores `wall_time_secs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub config_hash: String,
    pub optimizer: String,
    pub steps: Vec<StepRow>,
    pub evaluations: Vec<EvalRow>,
    pub summary: Summary,
    #[serde(flatten)]
    pub status: RunStatus,
    pub wall_time_secs: f64,
}

impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.config_hash == other.config_hash
            && self.optimizer == other.optimizer
            && self.steps == other.steps
            && self.evaluations == other.evaluations
            && self.summary == other.summary
            && self.status == other.status
    }
}

/// A finished run together with the final model and optimiser.
#[derive(Debug, Clone)]
pub struct Trained {
    pub record: RunRecord,
    pub model: Model,
    pub optimizer: Optimizer,
}

fn rate(errors: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        errors as f64 / n as f64
    }
}

fn evaluate(model: &Model, splits: &Splits, epoch: usize) -> Result<EvalRow, String> {
    let eval = |d: &Dataset| {
        model
            .evaluate(&d.inputs, &d.labels)
            .map(|s| (s.loss, rate(s.errors, d.len())))
            .map_err(|e| e.to_string())
    };
    let (train_loss, train_error) = eval(&splits.train)?;
    let (validation_loss, validation_error) = eval(&splits.validation)?;
    let (test_loss, test_error) = eval(&splits.test)?;
    Ok(EvalRow {
        epoch,
        train_loss,
        train_error,
        validation_loss,
        validation_error,
        test_loss,
        test_error,
    })
}

fn summarise(steps: usize, evals: &[EvalRow]) -> Summary {
    let last = evals.last().expect("initial evaluation is always present");
    let best = |f: fn(&EvalRow) -> f64| evals.iter().map(f).fold(f64::INFINITY, f64::min);
    Summary {
        steps,
        final_train_loss: last.train_loss,
        final_train_error: last.train_error,
        best_train_error: best(|e| e.train_error),
        final_validation_loss: last.validation_loss,
        final_validation_error: last.validation_error,
        best_validation_error: best(|e| e.validation_error),
        final_test_error: last.test_error,
    }
}

/// Loads the configured data (relative paths resolve against `base`) and
/// trains.
pub fn train(cfg: &TrainConfig, base: &Path) -> Result<Trained, HarnessError> {
    cfg.validate()?;
    let splits = cfg.dataset.load(base)?;
    train_with_data(cfg, &splits)
}

/// Trains on already loaded splits. Optimiser failures and divergence end
/// the run early with a `Failed` status rather than an error.
pub fn train_with_data(cfg: &TrainConfig, splits: &Splits) -> Result<Trained, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let root = Rng::new(cfg.seed);
    let mut model = build_mlp(&cfg.model, &mut root.stream(0))
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut optimizer = Optimizer::new(&cfg.optimizer, &model.groups)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let constraints = optimizer.active_constraints();
    if let Some(c) = constraints {
        project_groups(&mut model.groups, c).map_err(|e| HarnessError::Numerical(e.to_string()))?;
    }
    let mut order_rng = root.stream(1);
    let train_set = &splits.train;
    let n = train_set.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let weight_groups: Vec<usize> = model.layers().iter().map(|l| l.weight).collect();

    let mut rows = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut evals = Vec::with_capacity(cfg.epochs + 1);
    let mut status = RunStatus::Completed;
    let mut step = 0;
    let fail = |step: usize, reason: String| RunStatus::Failed { step, reason };

    match evaluate(&model, splits, 0) {
        Ok(e) => evals.push(e),
        Err(reason) => return Err(HarnessError::Numerical(reason)),
    }
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let lr_multiplier = cfg.schedule.multiplier(step, epoch, steps_per_epoch);
            let x = train_set.inputs.gather_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let stats = match model.loss_and_grad(&x, &y) {
                Ok(s) => s,
                Err(e) => {
                    status = fail(step, e.to_string());
                    break 'epochs;
                }
            };
            if !stats.loss.is_finite() || stats.loss > DIVERGENCE_LOSS {
                status = fail(step, format!("diverged: train loss {}", stats.loss));
                break 'epochs;
            }
            let grad_norms = weight_groups
                .iter()
                .map(|&g| model.groups[g].grad.norm())
                .collect();
            if let Err(e) = optimizer.step(&mut model.groups, lr_multiplier) {
                status = fail(step, e.to_string());
                break 'epochs;
            }
            let residuals = constraints.map(|_| group_residuals(&model.groups));
            rows.push(StepRow {
                step,
                epoch,
                lr_multiplier,
                train_loss: stats.loss,
                train_error: rate(stats.errors, batch.len()),
                grad_norms,
                mean_residual: residuals.map(|r| r.0),
                norm_residual: residuals.map(|r| r.1),
            });
        }
        match evaluate(&model, splits, epoch + 1) {
            Ok(e) => evals.push(e),
            Err(reason) => {
                status = fail(step, reason);
                break;
            }
        }
    }
    let record = RunRecord {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        optimizer: cfg.optimizer.name().to_string(),
        summary: summarise(rows.len(), &evals),
        steps: rows,
        evaluations: evals,
        status,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(Trained {
        record,
        model,
        optimizer,
    })
}
