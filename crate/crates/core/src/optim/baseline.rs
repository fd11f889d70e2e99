//! Reference optimisers at three granularities of relative update:
//! SGD and Adam (absolute), LAMB (per layer) and Madam (per synapse).

use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::network::ParamGroup;
use crate::tensor::{norm, Tensor};

fn zero() -> f64 {
    0.0
}
fn beta2_default() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}
fn lamb_eps() -> f64 {
    1e-6
}
fn madam_p_scale() -> f64 {
    3.0
}
fn madam_clip() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default = "zero")]
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "zero")]
    pub beta1: f64,
    #[serde(default = "beta2_default")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambConfig {
    pub lr: f64,
    #[serde(default = "zero")]
    pub beta1: f64,
    #[serde(default = "beta2_default")]
    pub beta2: f64,
    #[serde(default = "lamb_eps")]
    pub eps: f64,
    #[serde(default = "zero")]
    pub weight_decay: f64,
}

/// Multiplicative per-synapse updates: `w <- w * exp(-lr * sign(w) * g_hat)`
/// where `g_hat` is the gradient over its bias-corrected RMS, clipped to
/// `[-clip, clip]`. Magnitudes are capped at `p_scale` times each
/// parameter's initial RMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MadamConfig {
    pub lr: f64,
    #[serde(default = "beta2_default")]
    pub beta: f64,
    #[serde(default = "madam_clip")]
    pub clip: f64,
    #[serde(default = "madam_p_scale")]
    pub p_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineConfig {
    Sgd(SgdConfig),
    Adam(AdamConfig),
    Lamb(LambConfig),
    Madam(MadamConfig),
}

impl BaselineConfig {
    pub fn lr(&self) -> f64 {
        match self {
            BaselineConfig::Sgd(c) => c.lr,
            BaselineConfig::Adam(c) => c.lr,
            BaselineConfig::Lamb(c) => c.lr,
            BaselineConfig::Madam(c) => c.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            BaselineConfig::Sgd(c) => c.lr = lr,
            BaselineConfig::Adam(c) => c.lr = lr,
            BaselineConfig::Lamb(c) => c.lr = lr,
            BaselineConfig::Madam(c) => c.lr = lr,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineConfig::Sgd(_) => "sgd",
            BaselineConfig::Adam(_) => "adam",
            BaselineConfig::Lamb(_) => "lamb",
            BaselineConfig::Madam(_) => "madam",
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::Config(m));
        if !(self.lr() > 0.0 && self.lr().is_finite()) {
            return bad(format!("{} lr must be positive", self.name()));
        }
        let unit = |x: f64| (0.0..1.0).contains(&x);
        match self {
            BaselineConfig::Sgd(c) if !unit(c.momentum) => {
                bad("sgd momentum must lie in [0, 1)".into())
            }
            BaselineConfig::Adam(AdamConfig {
                beta1, beta2, eps, ..
            })
            | BaselineConfig::Lamb(LambConfig {
                beta1, beta2, eps, ..
            }) if !(unit(*beta1) && unit(*beta2) && *eps >= 0.0) => bad(format!(
                "{} betas must lie in [0, 1) and eps >= 0",
                self.name()
            )),
            BaselineConfig::Madam(c) if !(unit(c.beta) && c.clip > 0.0 && c.p_scale > 0.0) => {
                bad("madam beta must lie in [0, 1) with positive clip and p_scale".into())
            }
            _ => Ok(()),
        }
    }
}

/// Per-group optimiser buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub t: u64,
    /// Momentum buffer (SGD) or first moment (Adam, LAMB).
    pub first: Vec<Tensor>,
    /// Second moment (Adam, LAMB, Madam).
    pub second: Vec<Tensor>,
    /// Madam magnitude caps.
    pub caps: Vec<f64>,
}

impl BaselineState {
    pub fn num_scalars(&self) -> usize {
        self.first.iter().chain(&self.second).map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Baseline {
    pub config: BaselineConfig,
    pub state: BaselineState,
}

impl Baseline {
    pub fn new(config: BaselineConfig, groups: &[ParamGroup]) -> Result<Self, OptimError> {
        config.validate()?;
        let zeros = || {
            groups
                .iter()
                .map(|g| Tensor::zeros(g.values.shape()))
                .collect::<Vec<_>>()
        };
        let (first, second, caps) = match &config {
            BaselineConfig::Sgd(c) => (
                if c.momentum > 0.0 {
                    zeros()
                } else {
                    Vec::new()
                },
                Vec::new(),
                Vec::new(),
            ),
            BaselineConfig::Adam(_) | BaselineConfig::Lamb(_) => (zeros(), zeros(), Vec::new()),
            BaselineConfig::Madam(c) => {
                let caps = groups
                    .iter()
                    .map(|g| {
                        c.p_scale
                            * (g.values.data().iter().map(|v| v * v).sum::<f64>()
                                / g.values.len() as f64)
                                .sqrt()
                    })
                    .collect();
                (Vec::new(), zeros(), caps)
            }
        };
        Ok(Self {
            config,
            state: BaselineState {
                t: 0,
                first,
                second,
                caps,
            },
        })
    }

    pub fn from_state(config: BaselineConfig, state: BaselineState) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Self { config, state })
    }

    pub fn step(
        &mut self,
        groups: &mut [ParamGroup],
        lr_multiplier: f64,
    ) -> Result<(), OptimError> {
        self.state.t += 1;
        let t = self.state.t.min(i32::MAX as u64) as i32;
        let st = &mut self.state;
        for (gi, group) in groups.iter_mut().enumerate() {
            let grad = group.grad.data();
            match &self.config {
                BaselineConfig::Sgd(c) => {
                    let lr = c.lr * lr_multiplier;
                    let w = group.values.data_mut();
                    if c.momentum > 0.0 {
                        let buf = st.first[gi].data_mut();
                        for ((wi, &g), b) in w.iter_mut().zip(grad).zip(buf.iter_mut()) {
                            *b = c.momentum * *b + g;
                            *wi -= lr * *b;
                        }
                    } else {
                        for (wi, &g) in w.iter_mut().zip(grad) {
                            *wi -= lr * g;
                        }
                    }
                }
                BaselineConfig::Adam(c) => {
                    let lr = c.lr * lr_multiplier;
                    let dir = adam_direction(st, gi, grad, c.beta1, c.beta2, c.eps, t);
                    group.values.axpy(-lr, &dir);
                }
                BaselineConfig::Lamb(c) => {
                    let lr = c.lr * lr_multiplier;
                    let mut dir = adam_direction(st, gi, grad, c.beta1, c.beta2, c.eps, t);
                    if c.weight_decay != 0.0 {
                        dir.axpy(c.weight_decay, &group.values);
                    }
                    let trust = lamb_trust_ratio(group.values.norm(), dir.norm());
                    group.values.axpy(-lr * trust, &dir);
                }
                BaselineConfig::Madam(c) => {
                    let lr = c.lr * lr_multiplier;
                    let correction = 1.0 - c.beta.powi(t);
                    let cap = st.caps[gi];
                    let v = st.second[gi].data_mut();
                    for ((wi, &g), vi) in group
                        .values
                        .data_mut()
                        .iter_mut()
                        .zip(grad)
                        .zip(v.iter_mut())
                    {
                        *vi = c.beta * *vi + (1.0 - c.beta) * g * g;
                        let denom = (*vi / correction).sqrt();
                        let g_hat = if denom > 0.0 {
                            (g / denom).clamp(-c.clip, c.clip)
                        } else {
                            0.0
                        };
                        *wi *= (-lr * g_hat * wi.signum()).exp();
                        *wi = wi.clamp(-cap, cap);
                    }
                }
            }
            if !group.values.is_finite() {
                return Err(OptimError::NonFinite(group.name.clone()));
            }
        }
        Ok(())
    }
}

fn adam_direction(
    st: &mut BaselineState,
    gi: usize,
    grad: &[f64],
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
) -> Tensor {
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let m = st.first[gi].data_mut();
    let v = st.second[gi].data_mut();
    let mut dir = Vec::with_capacity(grad.len());
    for ((mi, vi), &g) in m.iter_mut().zip(v.iter_mut()).zip(grad) {
        *mi = beta1 * *mi + (1.0 - beta1) * g;
        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        dir.push(m_hat / (v_hat.sqrt() + eps));
    }
    Tensor::new(st.first[gi].shape().to_vec(), dir).expect("shape")
}

/// `||w|| / ||direction||`, or 1 when either norm is zero.
pub fn lamb_trust_ratio(weight_norm: f64, direction_norm: f64) -> f64 {
    if weight_norm > 0.0 && direction_norm > 0.0 {
        weight_norm / direction_norm
    } else {
        1.0
    }
}

/// `||after - before||`.
pub fn step_norm(before: &[f64], after: &[f64]) -> f64 {
    let d: Vec<f64> = before.iter().zip(after).map(|(a, b)| b - a).collect();
    norm(&d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_group(w: &[f64], g: &[f64]) -> ParamGroup {
        let mut p =
            ParamGroup::scalar_like("p", Tensor::new(vec![w.len()], w.to_vec()).unwrap(), 1.0);
        p.grad = Tensor::new(vec![g.len()], g.to_vec()).unwrap();
        p
    }

    #[test]
    fn sgd_definition() {
        let mut groups = vec![scalar_group(&[1.0], &[2.0])];
        let cfg = BaselineConfig::Sgd(SgdConfig {
            lr: 0.1,
            momentum: 0.0,
        });
        let mut opt = Baseline::new(cfg, &groups).unwrap();
        opt.step(&mut groups, 1.0).unwrap();
        assert!((groups[0].values.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut groups = vec![scalar_group(&[0.0], &[1.0])];
        let cfg = BaselineConfig::Sgd(SgdConfig {
            lr: 1.0,
            momentum: 0.5,
        });
        let mut opt = Baseline::new(cfg, &groups).unwrap();
        opt.step(&mut groups, 1.0).unwrap();
        opt.step(&mut groups, 1.0).unwrap();
        // buf: 1, then 1.5
        assert_eq!(groups[0].values.data()[0], -2.5);
    }

    #[test]
    fn adam_first_step_moves_lr_per_coordinate() {
        let w = [0.3, -2.0, 5.0, 0.0];
        let g = [1e-3, -7.0, 0.25, 40.0];
        let mut groups = vec![scalar_group(&w, &g)];
        let cfg = BaselineConfig::Adam(AdamConfig {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 0.0,
        });
        let mut opt = Baseline::new(cfg, &groups).unwrap();
        opt.step(&mut groups, 1.0).unwrap();
        for (a, b) in groups[0].values.data().iter().zip(w) {
            assert!(((a - b).abs() - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn lamb_zero_weights_follow_adam_direction() {
        let g = [0.5, -2.0, 3.0];
        let mut lamb_groups = vec![scalar_group(&[0.0; 3], &g)];
        let mut adam_groups = lamb_groups.clone();
        let mut lamb = Baseline::new(
            BaselineConfig::Lamb(LambConfig {
                lr: 0.01,
                beta1: 0.0,
                beta2: 0.999,
                eps: 1e-6,
                weight_decay: 0.0,
            }),
            &lamb_groups,
        )
        .unwrap();
        let mut adam = Baseline::new(
            BaselineConfig::Adam(AdamConfig {
                lr: 0.01,
                beta1: 0.0,
                beta2: 0.999,
                eps: 1e-6,
            }),
            &adam_groups,
        )
        .unwrap();
        lamb.step(&mut lamb_groups, 1.0).unwrap();
        adam.step(&mut adam_groups, 1.0).unwrap();
        assert_eq!(lamb_groups[0].values, adam_groups[0].values);
        assert_eq!(lamb_trust_ratio(0.0, 3.0), 1.0);
        assert_eq!(lamb_trust_ratio(2.0, 0.0), 1.0);
    }

    #[test]
    fn lamb_layer_step_is_relative() {
        let w = [1.0, -2.0, 2.0];
        let g = [0.1, 0.3, -0.2];
        let mut groups = vec![scalar_group(&w, &g)];
        let cfg = BaselineConfig::Lamb(LambConfig {
            lr: 0.01,
            beta1: 0.0,
            beta2: 0.999,
            eps: 0.0,
            weight_decay: 0.0,
        });
        let mut opt = Baseline::new(cfg, &groups).unwrap();
        opt.step(&mut groups, 1.0).unwrap();
        let rel = step_norm(&w, groups[0].values.data()) / norm(&w);
        assert!((rel - 0.01).abs() < 1e-14);
    }

    #[test]
    fn madam_is_multiplicative_and_bounded() {
        let w = [0.5, -0.25, 1.0, -1.0];
        let g = [1.0, 1.0, -3.0, 0.0];
        let mut groups = vec![scalar_group(&w, &g)];
        let lr = 0.01;
        let cfg = BaselineConfig::Madam(MadamConfig {
            lr,
            beta: 0.999,
            clip: 10.0,
            p_scale: 3.0,
        });
        let mut opt = Baseline::new(cfg, &groups).unwrap();
        opt.step(&mut groups, 1.0).unwrap();
        let after = groups[0].values.data();
        for (a, b) in after.iter().zip(w) {
            assert_eq!(a.signum(), b.signum());
            // first step: |g_hat| = 1 wherever g != 0
            assert!((a - b).abs() / b.abs() <= lr.exp() - 1.0 + 1e-15);
        }
        assert_eq!(after[3], -1.0);
        // w > 0 with positive gradient shrinks
        assert!((after[0] - 0.5 * (-lr).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(BaselineConfig::Sgd(SgdConfig {
            lr: 0.0,
            momentum: 0.0
        })
        .validate()
        .is_err());
        assert!(BaselineConfig::Sgd(SgdConfig {
            lr: 0.1,
            momentum: 1.0
        })
        .validate()
        .is_err());
        assert!(BaselineConfig::Adam(AdamConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 1.0,
            eps: 1e-8
        })
        .validate()
        .is_err());
    }
}
