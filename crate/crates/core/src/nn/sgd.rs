use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-7,
            batch_size: 256,
            epochs: 30,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// One momentum step with L2 decay folded into the velocity:
/// `v <- momentum * v + g + weight_decay * theta`, `theta <- theta - lr * v`.
pub fn sgd_step(params: &mut ParamTree, grads: &ParamTree, cfg: &SgdConfig, velocity: &mut ParamTree) -> Result<()> {
    params.check_same_layout(grads)?;
    params.check_same_layout(velocity)?;
    for (key, theta) in params.iter_mut() {
        let g = grads.get(key).expect("layout checked").data();
        let v = velocity.get_mut(key).expect("layout checked").data_mut();
        for ((t, vi), gi) in theta.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *t;
            *t -= cfg.learning_rate * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(v: f64) -> ParamTree {
        let mut t = ParamTree::new();
        t.insert("w.x", Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
        t
    }

    fn value(t: &ParamTree) -> f64 {
        t.get("w.x").unwrap().data()[0]
    }

    #[test]
    fn plain_gradient_step() {
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut p = scalar(2.0);
        let mut v = scalar(0.0);
        sgd_step(&mut p, &scalar(3.0), &cfg, &mut v).unwrap();
        assert_eq!(value(&p), 2.0 - 0.1 * 3.0);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut p = scalar(1.5);
        let mut v = scalar(0.0);
        sgd_step(&mut p, &scalar(0.0), &cfg, &mut v).unwrap();
        assert_eq!(value(&p), 1.5);
        assert_eq!(value(&v), 0.0);
    }

    #[test]
    fn momentum_on_quadratic() {
        // f(x) = x^2 / 2, g = x; x0 = 1, lr = 0.1, mu = 0.9
        // v1 = 1, x1 = 0.9; v2 = 0.9 + 0.9 = 1.8, x2 = 0.9 - 0.18 = 0.72
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut p = scalar(1.0);
        let mut v = scalar(0.0);
        for _ in 0..2 {
            let g = scalar(value(&p));
            sgd_step(&mut p, &g, &cfg, &mut v).unwrap();
        }
        assert!((value(&v) - 1.8).abs() < 1e-15);
        assert!((value(&p) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SgdConfig {
            momentum: 1.0,
            ..SgdConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SgdConfig::default().validate().is_ok());
    }
}
