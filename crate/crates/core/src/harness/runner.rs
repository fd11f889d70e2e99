use serde::Serialize;

use super::config::TrainConfig;
use super::data::Splits;
use super::train::{train_with_data, RunRecord};
use super::HarnessError;
use crate::optim::{Constraints, UpdateRule};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub constraints: Constraints,
    pub repeat: usize,
    pub record: RunRecord,
}

/// Summary of one toggle pair over its repeats; failed runs are counted
/// and left out of the spreads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub constrain_mean: bool,
    pub constrain_norm: bool,
    pub runs: usize,
    pub failed: usize,
    pub final_train_loss: Option<Spread>,
    pub final_train_error: Option<Spread>,
    pub final_validation_error: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub cells: Vec<AblationCell>,
    pub table: Vec<AblationRow>,
}

/// `cfg` with the given constraints switched on: Nero's own flags, or a
/// projection after each baseline step.
fn with_constraints(cfg: &TrainConfig, c: Constraints) -> TrainConfig {
    let mut out = cfg.clone();
    match &mut out.optimizer.rule {
        UpdateRule::Nero(n) => {
            n.constrain_mean = c.mean;
            n.constrain_norm = c.norm;
        }
        _ => out.optimizer.constraints = c.any().then_some(c),
    }
    out
}

/// Seed for repeat `r`. Every cell shares the same seeds, so cells are
/// compared on identical initialisations and batch orders.
fn repeat_seed(base: u64, r: usize) -> u64 {
    base ^ r as u64
}

/// Trains every toggle pair `repeats` times.
pub fn run_ablation(
    base: &TrainConfig,
    splits: &Splits,
    toggles: &[Constraints],
    repeats: usize,
) -> Result<AblationResult, HarnessError> {
    if toggles.is_empty() || repeats == 0 {
        return Err(HarnessError::Config(
            "ablation needs at least one toggle and one repeat".into(),
        ));
    }
    let runs = par::map_indexed(toggles.len() * repeats, |i| {
        let (t, r) = (i / repeats, i % repeats);
        let mut cfg = with_constraints(base, toggles[t]);
        cfg.seed = repeat_seed(base.seed, r);
        train_with_data(&cfg, splits).map(|trained| AblationCell {
            constraints: toggles[t],
            repeat: r,
            record: trained.record,
        })
    });
    let cells = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let table = toggles
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let group = &cells[t * repeats..(t + 1) * repeats];
            let done: Vec<_> = group
                .iter()
                .filter(|c| c.record.status.is_completed())
                .collect();
            let pick = |f: fn(&RunRecord) -> f64| {
                Spread::of(&done.iter().map(|c| f(&c.record)).collect::<Vec<_>>())
            };
            AblationRow {
                constrain_mean: c.mean,
                constrain_norm: c.norm,
                runs: group.len(),
                failed: group.len() - done.len(),
                final_train_loss: pick(|r| r.summary.final_train_loss),
                final_train_error: pick(|r| r.summary.final_train_error),
                final_validation_error: pick(|r| r.summary.final_validation_error),
            }
        })
        .collect();
    Ok(AblationResult { cells, table })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub lr: f64,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// One cell per learning rate, in the order given.
    pub cells: Vec<GridCell>,
    /// Completed cell with the lowest final validation error, ties going to
    /// the smaller learning rate. `None` when every cell failed.
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_cell(&self) -> Option<&GridCell> {
        self.best.map(|i| &self.cells[i])
    }
}

/// One run per learning rate, all with the base seed.
pub fn run_grid(
    base: &TrainConfig,
    splits: &Splits,
    lrs: &[f64],
) -> Result<GridResult, HarnessError> {
    if lrs.is_empty() {
        return Err(HarnessError::Config(
            "grid needs at least one learning rate".into(),
        ));
    }
    if let Some(bad) = lrs.iter().find(|lr| !(**lr > 0.0 && lr.is_finite())) {
        return Err(HarnessError::Config(format!(
            "learning rate {bad} is not positive"
        )));
    }
    let runs = par::map_indexed(lrs.len(), |i| {
        let mut cfg = base.clone();
        cfg.optimizer = cfg.optimizer.with_lr(lrs[i]);
        train_with_data(&cfg, splits).map(|t| GridCell {
            lr: lrs[i],
            record: t.record,
        })
    });
    let cells = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.record.status.is_completed())
        .min_by(|(_, a), (_, b)| {
            let ka = (a.record.summary.final_validation_error, a.lr);
            let kb = (b.record.summary.final_validation_error, b.lr);
            ka.partial_cmp(&kb).expect("finite metrics")
        })
        .map(|(i, _)| i);
    Ok(GridResult { cells, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::train::tests::blobs_config;
    use crate::optim::{BaselineConfig, OptimizerConfig, SgdConfig};
    use std::path::Path;

    const TOGGLES: [Constraints; 4] = [
        Constraints {
            mean: true,
            norm: true,
        },
        Constraints {
            mean: true,
            norm: false,
        },
        Constraints {
            mean: false,
            norm: true,
        },
        Constraints {
            mean: false,
            norm: false,
        },
    ];

    fn splits(cfg: &TrainConfig) -> Splits {
        cfg.dataset.load(Path::new(".")).unwrap()
    }

    #[test]
    fn ablation_shape() {
        let cfg = blobs_config(1);
        let r = run_ablation(&cfg, &splits(&cfg), &TOGGLES, 3).unwrap();
        assert_eq!(r.cells.len(), 12);
        assert_eq!(r.table.len(), 4);
        for row in &r.table {
            let s = row.final_train_loss.unwrap();
            assert!(s.min <= s.mean && s.mean <= s.max);
        }
        let single = run_ablation(&cfg, &splits(&cfg), &TOGGLES[..1], 3).unwrap();
        assert_eq!(single.table.len(), 1);
        assert_eq!(single.table[0], r.table[0]);
    }

    #[test]
    fn grid_selects_and_records_failures() {
        let mut cfg = blobs_config(2);
        let s = splits(&cfg);
        let one = run_grid(&cfg, &s, &[0.01]).unwrap();
        assert_eq!(one.best, Some(0));

        cfg.model = cfg
            .model
            .with_init(crate::network::Init::Gaussian { sigma: 1.0 });
        cfg.optimizer = OptimizerConfig::baseline(
            BaselineConfig::Sgd(SgdConfig {
                lr: 0.1,
                momentum: 0.0,
            }),
            None,
        );
        let r = run_grid(&cfg, &s, &[1e-2, 1e6]).unwrap();
        assert!(!r.cells[1].record.status.is_completed());
        assert_eq!(r.best, Some(0));
    }

    #[test]
    fn ties_go_to_smaller_lr() {
        let cfg = blobs_config(0);
        // zero epochs: every cell reports the same initial metrics
        let r = run_grid(&cfg, &splits(&cfg), &[0.1, 0.001, 0.01]).unwrap();
        assert_eq!(r.best_cell().unwrap().lr, 0.001);
    }
}
