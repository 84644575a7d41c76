use serde::{Deserialize, Serialize};

use super::graph::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adaptive-moment optimizer state: one first/second moment accumulator per
/// parameter tensor.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    /// Factor applied to the raw gradient by clipping (1 when unclipped).
    pub clip_scale: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<StepStats> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.get(i).shape() {
                return Err(Error::Shape(format!(
                    "gradient for {} has shape {:?}",
                    params.name(i),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(params.name(i).to_owned()));
            }
        }
        let grad_norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
        let clip_scale = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.get_mut(i).data_mut();
            for j in 0..g.len() {
                let gj = g.data()[j] * clip_scale;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(StepStats {
            grad_norm,
            clip_scale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("x", Tensor::scalar(x));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(1.25);
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        for _ in 0..10 {
            opt.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(p.get(0).data()[0], 1.25);
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = 2x^2 - 6x; closed-form minimum at x* = 6 / (2 * 2) = 1.5
        let (a, b) = (2.0, 6.0);
        let x_star = b / (2.0 * a);
        let mut p = one(-1.0);
        let config = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&p, config);
        for _ in 0..200 {
            let x = p.get(0).data()[0];
            opt.step(&mut p, &[Tensor::scalar(2.0 * a * x - b)]).unwrap();
        }
        let x = p.get(0).data()[0];
        assert!((x - x_star).abs() < 1e-3, "x = {x}");
    }

    #[test]
    fn clipping_scales_gradient() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::zeros(&[2]));
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        let g = Tensor::from_vec(&[2], vec![30.0, 40.0]).unwrap();
        let stats = opt.step(&mut p, &[g]).unwrap();
        assert_eq!(stats.grad_norm, 50.0);
        assert!((stats.clip_scale - 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = one(0.0);
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        let err = opt.step(&mut p, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "x"));
        assert_eq!(p.get(0).data()[0], 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = one(0.0);
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        assert!(opt.step(&mut p, &[Tensor::zeros(&[2])]).is_err());
    }
}
