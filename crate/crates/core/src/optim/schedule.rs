use serde::{Deserialize, Serialize};

/// Learning-rate multiplier as a function of training progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Multiply by `factor` at each epoch in `milestones`.
    StepDecay { milestones: Vec<usize>, factor: f64 },
    /// Multiply by `factor` at the end of every epoch.
    PerEpochDecay { factor: f64 },
    /// Ramp linearly from 0 over `epochs` (fractional allowed), then follow
    /// `then`.
    LinearWarmup { epochs: f64, then: Box<Schedule> },
}

impl Schedule {
    /// Multiplier for update number `step` (1-based) taken during `epoch`
    /// (0-based), with `steps_per_epoch` updates per epoch.
    pub fn multiplier(&self, step: usize, epoch: usize, steps_per_epoch: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::StepDecay { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                factor.powi(passed as i32)
            }
            Schedule::PerEpochDecay { factor } => factor.powi(epoch as i32),
            Schedule::LinearWarmup { epochs, then } => {
                let warm_steps = epochs * steps_per_epoch as f64;
                let ramp = if warm_steps > 0.0 {
                    (step as f64 / warm_steps).min(1.0)
                } else {
                    1.0
                };
                ramp * then.multiplier(step, epoch, steps_per_epoch)
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Schedule::Constant => Ok(()),
            Schedule::StepDecay { factor, .. } | Schedule::PerEpochDecay { factor } => {
                if *factor > 0.0 && factor.is_finite() {
                    Ok(())
                } else {
                    Err(format!("decay factor must be positive, got {factor}"))
                }
            }
            Schedule::LinearWarmup { epochs, then } => {
                if !(*epochs >= 0.0) {
                    return Err(format!("warmup epochs must be non-negative, got {epochs}"));
                }
                then.validate()
            }
        }
    }
}
