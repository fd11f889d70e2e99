use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde_json::{json, Value};

use nero_core::analysis::{
    check_stability, check_trust, estimate_alpha_robustness, model_error_counter, ModelLoss,
    RobustnessOptions,
};
use nero_core::harness::{Checkpoint, Dataset, HarnessError, TrainConfig};
use nero_core::network::Model;
use nero_core::Tensor;

use crate::emit;

#[derive(Args)]
pub struct ProbeData {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run config supplying the dataset, when the checkpoint lacks one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use only the first N training rows.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
pub struct StepArgs {
    #[command(flatten)]
    data: ProbeData,
    /// Learning-rate multiplier for the probed step.
    #[arg(long, default_value_t = 1.0)]
    lr_multiplier: f64,
}

#[derive(Subcommand)]
pub enum ProbeCommand {
    /// Whether one full-batch optimiser step from the checkpoint is stable;
    /// one JSON line per layer, then a summary.
    Stability(StepArgs),
    /// Deep relative trust for one full-batch optimiser step.
    Trust(StepArgs),
    /// Sampled angular robustness of a zero-training-error checkpoint.
    Robustness {
        #[command(flatten)]
        data: ProbeData,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn numerical(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Numerical(e.to_string())
}

fn load(args: &ProbeData) -> Result<(Checkpoint, Model, Dataset), HarnessError> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => ck.train.clone().ok_or_else(|| {
            HarnessError::Config(
                "checkpoint carries no run config; pass --config to name the dataset".into(),
            )
        })?,
    };
    let model = ck.to_model()?;
    let mut train = cfg.dataset.load(Path::new("."))?.train;
    if let Some(n) = args.limit {
        train = train.slice(0, n.min(train.len()));
    }
    Ok((ck, model, train))
}

/// Layer weights before and after one full-batch step.
fn step_layers(
    ck: &Checkpoint,
    model: &Model,
    data: &Dataset,
    lr_multiplier: f64,
) -> Result<(Vec<Tensor>, Vec<Tensor>), HarnessError> {
    let mut moved = model.clone();
    let mut opt = ck.to_optimizer()?;
    moved
        .loss_and_grad(&data.inputs, &data.labels)
        .map_err(numerical)?;
    opt.step(&mut moved.groups, lr_multiplier)
        .map_err(numerical)?;
    let w: Vec<Tensor> = model
        .layers()
        .iter()
        .map(|l| model.groups[l.weight].values.clone())
        .collect();
    let dw = model
        .layers()
        .iter()
        .zip(&w)
        .map(|(l, before)| moved.groups[l.weight].values.zip_map(before, |a, b| a - b))
        .collect();
    Ok((w, dw))
}

fn tagged(kind: &str, v: serde_json::Result<Value>) -> Value {
    let mut v = v.expect("report serialises");
    v["probe"] = json!(kind);
    v
}

pub fn run(cmd: ProbeCommand) -> Result<u8, HarnessError> {
    match cmd {
        ProbeCommand::Stability(a) => {
            let (ck, model, data) = load(&a.data)?;
            let (w, dw) = step_layers(&ck, &model, &data, a.lr_multiplier)?;
            let loss = ModelLoss {
                model: &model,
                inputs: &data.inputs,
                labels: &data.labels,
            };
            let r = check_stability(&loss, &w, &dw).map_err(numerical)?;
            for l in &r.layers {
                emit(&tagged("stability", serde_json::to_value(l)));
            }
            emit(&json!({
                "probe": "stability",
                "summary": true,
                "stable": r.stable,
                "loss_before": r.loss_before,
                "loss_after": r.loss_after,
            }));
        }
        ProbeCommand::Trust(a) => {
            let (ck, model, data) = load(&a.data)?;
            let (w, dw) = step_layers(&ck, &model, &data, a.lr_multiplier)?;
            let loss = ModelLoss {
                model: &model,
                inputs: &data.inputs,
                labels: &data.labels,
            };
            let r = check_trust(&loss, &w, &dw).map_err(numerical)?;
            for l in &r.layers {
                emit(&tagged("trust", serde_json::to_value(l)));
            }
            emit(&json!({ "probe": "trust", "summary": true, "satisfied": r.satisfied }));
        }
        ProbeCommand::Robustness {
            data,
            samples,
            tolerance,
            seed,
        } => {
            let (_, model, d) = load(&data)?;
            let opts = RobustnessOptions {
                samples,
                tolerance,
                seed,
            };
            let counter = model_error_counter(&model, &d.inputs, &d.labels);
            let est =
                estimate_alpha_robustness(&model.groups, counter, &opts).map_err(numerical)?;
            emit(&tagged("robustness", serde_json::to_value(&est)));
        }
    }
    Ok(0)
}
