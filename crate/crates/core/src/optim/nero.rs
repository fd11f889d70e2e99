//! The Nero update: per-neuron relative steps normalised by a running
//! average of squared gradient norms, followed by projection back onto
//! balanced neurons.

use log::warn;
use serde::{Deserialize, Serialize};

use super::project::{project_balanced_in_place, Constraints};
use super::{OptimError, StepReport};
use crate::network::{ParamGroup, ParamKind};
use crate::tensor::norm;

/// Floor on `||w||` in the step when the norm constraint is off, so a row
/// that reaches zero norm can still move.
pub const WEIGHT_NORM_FLOOR: f64 = 1e-10;
const NORMALIZER_FLOOR: f64 = 1e-30;

fn default_eta() -> f64 {
    0.01
}
fn default_beta() -> f64 {
    0.999
}
fn yes() -> bool {
    true
}
fn default_sigma_b() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeroConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "yes")]
    pub constrain_mean: bool,
    #[serde(default = "yes")]
    pub constrain_norm: bool,
    /// Scale used for scalar-like parameters that start at zero.
    #[serde(default = "default_sigma_b")]
    pub sigma_b_default: f64,
}

impl Default for NeroConfig {
    fn default() -> Self {
        Self {
            eta: default_eta(),
            beta: default_beta(),
            constrain_mean: true,
            constrain_norm: true,
            sigma_b_default: default_sigma_b(),
        }
    }
}

impl NeroConfig {
    pub fn constraints(&self) -> Constraints {
        Constraints {
            mean: self.constrain_mean,
            norm: self.constrain_norm,
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(OptimError::Config(format!(
                "nero eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(OptimError::Config(format!(
                "nero beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if !(self.sigma_b_default > 0.0) {
            return Err(OptimError::Config(
                "sigma_b_default must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Running averages: one per neuron row of each neuron matrix and one per
/// coordinate of each scalar-like group, plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeroState {
    pub t: u64,
    /// Squared-norm averages, per group.
    pub avg_sq: Vec<Vec<f64>>,
    /// Resolved `sigma_b` per group (unused for neuron matrices).
    pub sigma_b: Vec<f64>,
}

impl NeroState {
    /// Number of stored running-average scalars.
    pub fn num_scalars(&self) -> usize {
        self.avg_sq.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Nero {
    pub config: NeroConfig,
    pub state: NeroState,
}

impl Nero {
    pub fn new(config: NeroConfig, groups: &[ParamGroup]) -> Result<Self, OptimError> {
        config.validate()?;
        let mut avg_sq = Vec::with_capacity(groups.len());
        let mut sigma_b = Vec::with_capacity(groups.len());
        for g in groups {
            match g.kind {
                ParamKind::NeuronMatrix { num_neurons, .. } => {
                    avg_sq.push(vec![0.0; num_neurons]);
                    sigma_b.push(0.0);
                }
                ParamKind::ScalarLike { sigma_b: s } => {
                    avg_sq.push(vec![0.0; g.values.len()]);
                    let zero_init = g.values.data().iter().all(|&v| v == 0.0);
                    sigma_b.push(if zero_init { config.sigma_b_default } else { s });
                }
            }
        }
        Ok(Self {
            config,
            state: NeroState {
                t: 0,
                avg_sq,
                sigma_b,
            },
        })
    }

    pub fn from_state(config: NeroConfig, state: NeroState) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self { config, state })
    }

    pub fn step(
        &mut self,
        groups: &mut [ParamGroup],
        lr_multiplier: f64,
    ) -> Result<StepReport, OptimError> {
        if groups.len() != self.state.avg_sq.len() {
            return Err(OptimError::StateMismatch(format!(
                "state tracks {} groups, got {}",
                self.state.avg_sq.len(),
                groups.len()
            )));
        }
        let beta = self.config.beta;
        let eta = self.config.eta * lr_multiplier;
        let constraints = self.config.constraints();
        self.state.t += 1;
        let correction = 1.0 - beta.powi(self.state.t.min(i32::MAX as u64) as i32);
        let mut report = StepReport::default();

        for (gi, group) in groups.iter_mut().enumerate() {
            let avg = &mut self.state.avg_sq[gi];
            match group.kind {
                ParamKind::NeuronMatrix {
                    num_neurons,
                    fan_in,
                } => {
                    if avg.len() != num_neurons {
                        return Err(OptimError::StateMismatch(format!(
                            "group `{}` row count",
                            group.name
                        )));
                    }
                    let grad = group.grad.data();
                    let values = group.values.data_mut();
                    for (row, avg_row) in avg.iter_mut().enumerate() {
                        let g = &grad[row * fan_in..(row + 1) * fan_in];
                        let w = &mut values[row * fan_in..(row + 1) * fan_in];
                        let g_sq: f64 = g.iter().map(|v| v * v).sum();
                        *avg_row = beta * *avg_row + (1.0 - beta) * g_sq;
                        if g_sq == 0.0 && *avg_row == 0.0 {
                            report.skipped_rows += 1;
                            continue;
                        }
                        let normalizer = (*avg_row / correction).sqrt();
                        if g_sq > 0.0 {
                            if !(normalizer >= NORMALIZER_FLOOR) {
                                return Err(OptimError::NumericalDegeneracy {
                                    group: group.name.clone(),
                                    row,
                                    normalizer,
                                });
                            }
                            let mut scale = norm(w);
                            if scale < WEIGHT_NORM_FLOOR {
                                scale = WEIGHT_NORM_FLOOR;
                                report.norm_floor_hits += 1;
                            }
                            let c = eta * scale / normalizer;
                            for (wi, gi) in w.iter_mut().zip(g) {
                                *wi -= c * gi;
                            }
                        }
                        if group.constrained && constraints.any() {
                            project_balanced_in_place(w, constraints)
                                .map_err(|e| e.at(&group.name, row))?;
                        }
                    }
                }
                ParamKind::ScalarLike { .. } => {
                    let sigma_b = self.state.sigma_b[gi];
                    let grad = group.grad.data();
                    for ((b, &g), avg_b) in group
                        .values
                        .data_mut()
                        .iter_mut()
                        .zip(grad)
                        .zip(avg.iter_mut())
                    {
                        *avg_b = beta * *avg_b + (1.0 - beta) * g * g;
                        if g == 0.0 {
                            continue;
                        }
                        let normalizer = (*avg_b / correction).sqrt();
                        if !(normalizer >= NORMALIZER_FLOOR) {
                            return Err(OptimError::NumericalDegeneracy {
                                group: group.name.clone(),
                                row: 0,
                                normalizer,
                            });
                        }
                        *b -= eta * sigma_b / normalizer * g;
                    }
                }
            }
            if !group.values.is_finite() {
                return Err(OptimError::NonFinite(group.name.clone()));
            }
        }
        if report.norm_floor_hits > 0 {
            warn!(
                "nero step {}: weight-norm floor used for {} rows",
                self.state.t, report.norm_floor_hits
            );
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn neuron(w: &[f64], g: &[f64], constrained: bool) -> ParamGroup {
        let mut p = ParamGroup::neuron_matrix(
            "w",
            Tensor::new(vec![1, w.len()], w.to_vec()).unwrap(),
            constrained,
        )
        .unwrap();
        p.grad = Tensor::new(vec![1, g.len()], g.to_vec()).unwrap();
        p
    }

    #[test]
    fn hand_evaluated_three_dim_step() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut groups = vec![neuron(&[h, -h, 0.0], &[0.0, 0.0, 1.0], true)];
        let cfg = NeroConfig {
            eta: 0.1,
            beta: 0.0,
            ..Default::default()
        };
        let mut nero = Nero::new(cfg, &groups).unwrap();
        nero.step(&mut groups, 1.0).unwrap();
        assert_eq!(nero.state.t, 1);
        // (h, -h, -0.1) centred by 0.1/3 then normalised
        let expected = [
            0.737_984_253_311_664,
            -0.671_538_703_893_155,
            -0.066_445_549_418_510,
        ];
        for (a, b) in groups[0].values.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn bias_step() {
        let mut b = ParamGroup::scalar_like("b", Tensor::zeros(&[1]), 0.01);
        b.grad = Tensor::new(vec![1], vec![2.0]).unwrap();
        let mut groups = vec![b];
        let cfg = NeroConfig {
            beta: 0.0,
            ..Default::default()
        };
        let mut nero = Nero::new(cfg, &groups).unwrap();
        nero.step(&mut groups, 1.0).unwrap();
        assert!((groups[0].values.data()[0] + 1e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let w = [0.3, -0.9, 2.0, 0.1];
        let mut groups = vec![neuron(&w, &[0.0; 4], true)];
        let mut nero = Nero::new(NeroConfig::default(), &groups).unwrap();
        let report = nero.step(&mut groups, 1.0).unwrap();
        assert_eq!(groups[0].values.data(), &w);
        assert_eq!(report.skipped_rows, 1);
    }

    #[test]
    fn first_step_moves_by_eta_times_norm() {
        // beta = 0.999 with bias correction: normaliser equals ||g||
        let w = [0.5, -1.5, 2.0];
        let g = [0.2, 0.7, -0.1];
        let mut groups = vec![neuron(&w, &g, false)];
        let mut nero = Nero::new(NeroConfig::default(), &groups).unwrap();
        nero.step(&mut groups, 1.0).unwrap();
        let dw: Vec<f64> = groups[0]
            .values
            .data()
            .iter()
            .zip(w)
            .map(|(a, b)| a - b)
            .collect();
        let rel = norm(&dw) / norm(&w);
        assert!((rel - 0.01).abs() < 1e-14, "{rel}");
    }

    #[test]
    fn nonzero_initial_scalar_keeps_group_sigma() {
        let groups = vec![
            ParamGroup::scalar_like("gain", Tensor::full(&[3], 1.0), 1.0),
            ParamGroup::scalar_like("bias", Tensor::zeros(&[3]), 0.01),
        ];
        let cfg = NeroConfig {
            sigma_b_default: 0.05,
            ..Default::default()
        };
        let nero = Nero::new(cfg, &groups).unwrap();
        assert_eq!(nero.state.sigma_b, vec![1.0, 0.05]);
    }

    #[test]
    fn degenerate_normalizer_is_reported() {
        let mut groups = vec![neuron(&[1.0, -1.0], &[1e-40, 0.0], true)];
        let mut nero = Nero::new(NeroConfig::default(), &groups).unwrap();
        assert!(matches!(
            nero.step(&mut groups, 1.0),
            Err(OptimError::NumericalDegeneracy { .. })
        ));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        for (eta, beta) in [(0.0, 0.9), (1.5, 0.9), (0.01, 1.0), (0.01, -0.1)] {
            let cfg = NeroConfig {
                eta,
                beta,
                ..Default::default()
            };
            assert!(Nero::new(cfg, &[]).is_err());
        }
    }
}
