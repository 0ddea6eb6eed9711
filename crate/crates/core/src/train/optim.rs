use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::scalar::Scalar;

/// Optimizer choice and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        #[serde(default = "adam_lr")]
        lr: f64,
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default = "momentum")]
        momentum: f64,
    },
}

fn adam_lr() -> f64 {
    1e-4
}
fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}
fn momentum() -> f64 {
    0.9
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: adam_lr(),
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be >= 0, got {lr}")));
        }
        match *self {
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "adam needs 0 <= beta < 1 and eps > 0 (beta1={beta1}, beta2={beta2}, eps={eps})"
                    )));
                }
            }
            OptimizerConfig::Sgd { momentum, .. } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {momentum}")));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer state for one parameter set, laid out like [`Parameters::slices`].
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update of `params` from `grads`, which must have the same layout.
    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.slices();
        let mut params = params.slices_mut();
        if params.len() != grads.len() || params.iter().zip(&grads).any(|(p, (_, g))| p.len() != g.len()) {
            return Err(Error::invalid("Optimizer::step", "gradient layout does not match parameters"));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|(_, g)| vec![T::zero(); g.len()]).collect();
            if matches!(self.config, OptimizerConfig::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        self.step += 1;
        let c = |v: f64| T::from_f64_lossy(v);
        match self.config {
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = c(1.0 - beta1.powi(t));
                let bc2 = c(1.0 - beta2.powi(t));
                let (lr, b1, b2, eps) = (c(lr), c(beta1), c(beta2), c(eps));
                let one = T::one();
                for (((p, (_, g)), m), v) in params.iter_mut().zip(&grads).zip(&mut self.first).zip(&mut self.second) {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (one - b1) * g[i];
                        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerConfig::Sgd { lr, momentum } => {
                let (lr, mu) = (c(lr), c(momentum));
                for ((p, (_, g)), buf) in params.iter_mut().zip(&grads).zip(&mut self.first) {
                    for i in 0..p.len() {
                        buf[i] = mu * buf[i] + g[i];
                        p[i] -= lr * buf[i];
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[derive(Clone)]
    struct Vec1(Vec<f64>);

    impl Parameters<f64> for Vec1 {
        fn slices(&self) -> Vec<(Shape, &[f64])> {
            vec![(Shape::new(self.0.len(), 1, 1, 1, 1), &self.0)]
        }
        fn slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Vec1(vec![1.0, -2.0]);
        let g = Vec1(vec![0.5, -3.0]);
        let mut opt = Optimizer::new(OptimizerConfig::default()).unwrap();
        opt.step(&mut p, &g).unwrap();
        assert!((p.0[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert!((p.0[1] - (-2.0 + 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut p = Vec1(vec![0.0]);
        let g = Vec1(vec![1.0]);
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: 0.9 }).unwrap();
        opt.step(&mut p, &g).unwrap();
        opt.step(&mut p, &g).unwrap();
        assert!((p.0[0] - -(0.1 + 0.19)).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        for cfg in [
            OptimizerConfig::Adam { lr: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            OptimizerConfig::Sgd { lr: 0.0, momentum: 0.9 },
        ] {
            let mut p = Vec1(vec![0.3, -1.7, 1e-30]);
            let before = p.0.clone();
            let mut opt = Optimizer::new(cfg).unwrap();
            for _ in 0..3 {
                opt.step(&mut p, &Vec1(vec![1.0, -2.0, 5.0])).unwrap();
            }
            assert_eq!(
                p.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                before.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Vec1(vec![3.0, -4.0]);
        let mut opt = Optimizer::new(OptimizerConfig::Adam { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 }).unwrap();
        for _ in 0..500 {
            let g = Vec1(p.0.iter().map(|v| 2.0 * v).collect());
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.0.iter().all(|v| v.abs() < 1e-2), "{:?}", p.0);
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        assert!(OptimizerConfig::Sgd { lr: -1.0, momentum: 0.9 }.validate().is_err());
        assert!(OptimizerConfig::Sgd { lr: 0.1, momentum: 1.0 }.validate().is_err());
        assert!(OptimizerConfig::Adam { lr: f64::NAN, beta1: 0.9, beta2: 0.999, eps: 1e-8 }.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"type": "adam"}"#).unwrap();
        assert_eq!(cfg, OptimizerConfig::default());
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"type": "sgd", "lr": 0.01}"#).unwrap();
        assert_eq!(cfg, OptimizerConfig::Sgd { lr: 0.01, momentum: 0.9 });
    }
}
