//! AdamW with decoupled weight decay, and SGD with momentum.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, IdmlError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    AdamW {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
    Sgd {
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    },
}

impl OptimizerConfig {
    pub fn adamw(lr: f64) -> Self {
        OptimizerConfig::AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::Sgd {
            lr,
            momentum,
            weight_decay: 0.0,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::AdamW { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                lr > 0.0
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
                    && weight_decay >= 0.0
            }
            OptimizerConfig::Sgd {
                lr,
                momentum,
                weight_decay,
            } => lr > 0.0 && (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(IdmlError::param(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer settings plus per-parameter moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimState {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Self {
        let v = match config {
            OptimizerConfig::AdamW { .. } => vec![0.0; n_params],
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        OptimState {
            config,
            m: vec![0.0; n_params],
            v,
            t: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure_same_dim(params.len(), self.m.len(), "optimizer state")?;
        ensure_same_dim(grads.len(), params.len(), "gradient length")?;
        self.t += 1;
        match self.config {
            OptimizerConfig::AdamW {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let t = self.t as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for k in 0..params.len() {
                    let g = grads[k];
                    params[k] *= 1.0 - lr * weight_decay;
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[k] / bc1;
                    let v_hat = self.v[k] / bc2;
                    params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            OptimizerConfig::Sgd {
                lr,
                momentum,
                weight_decay,
            } => {
                for k in 0..params.len() {
                    let g = grads[k] + weight_decay * params[k];
                    self.m[k] = momentum * self.m[k] + g;
                    params[k] -= lr * self.m[k];
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adamw(lr: f64, wd: f64) -> OptimizerConfig {
        OptimizerConfig::AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        for cfg in [adamw(1e-3, 0.0), OptimizerConfig::sgd(0.1, 0.9)] {
            let mut p = vec![0.5, -2.0, 3.0];
            let before = p.clone();
            let mut st = OptimState::new(cfg, 3);
            for _ in 0..10 {
                st.step(&mut p, &[0.0; 3]).unwrap();
            }
            assert_eq!(p, before);
        }
    }

    #[test]
    fn constant_gradient_descends() {
        for cfg in [adamw(1e-2, 1e-4), OptimizerConfig::sgd(1e-2, 0.9)] {
            let mut p = vec![0.0, 0.0];
            let mut st = OptimState::new(cfg, 2);
            for _ in 0..100 {
                st.step(&mut p, &[2.0, -0.5]).unwrap();
            }
            assert!(p[0] < 0.0 && p[1] > 0.0);
        }
    }

    #[test]
    fn single_adamw_step_matches_hand_trace() {
        // p = 1, g = 0.5, lr = 0.1, wd = 0.01: decay to 0.999, then the
        // bias-corrected moments are g and g^2, so the step is lr*g/(|g|+eps).
        let mut p = vec![1.0];
        let mut st = OptimState::new(adamw(0.1, 0.01), 1);
        st.step(&mut p, &[0.5]).unwrap();
        // mpmath at 40 digits
        assert!((p[0] - 0.899_000_002).abs() < 1e-15, "{}", p[0]);
        // second step with g = -1, against the closed-form moments
        st.step(&mut p, &[-1.0]).unwrap();
        let m = 0.9 * 0.05 + -0.1;
        let v = 0.999 * 0.000_25 + 0.001 * 1.0;
        let m_hat = m / (1.0 - 0.81);
        let v_hat: f64 = v / (1.0 - 0.998_001);
        let expected = 0.899_000_002 * (1.0 - 0.001) - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn sgd_momentum_hand_trace() {
        let mut p = vec![1.0];
        let mut st = OptimState::new(OptimizerConfig::sgd(0.1, 0.5), 1);
        st.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        st.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut st = OptimState::new(adamw(0.1, 0.0), 2);
        assert!(st.step(&mut [0.0, 0.0], &[1.0]).is_err());
        assert!(st.step(&mut [0.0], &[1.0]).is_err());
    }
}
