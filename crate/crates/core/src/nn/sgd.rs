use alloc::format;

use serde::{Deserialize, Serialize};

use super::tensor::ParamStore;
use crate::Error;

/// Optimizer and schedule settings shared by every trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Region-of-interest minibatch per image for the classifier head.
    pub batch_size: usize,
    /// Anchor minibatch per image for the proposal head.
    pub rpn_batch_size: usize,
    pub iterations: usize,
    pub snapshot_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 128,
            rpn_batch_size: 256,
            iterations: 2000,
            snapshot_interval: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.rpn_batch_size == 0 {
            return Err(Error::InvalidConfig("batch sizes must be >= 1".into()));
        }
        if self.snapshot_interval == 0 {
            return Err(Error::InvalidConfig("snapshot_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// One momentum SGD update: `v = momentum * v - lr * g; p += v`.
///
/// `velocity` is created lazily for parameters it has not seen yet.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    config: &TrainConfig,
    velocity: &mut ParamStore,
) -> Result<(), Error> {
    config.validate()?;
    for (name, g) in grads.iter() {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.into()))?;
        g.expect_shape(p.shape(), name)?;
        if velocity.get(name).is_none() {
            velocity.insert(name, super::Tensor::zeros(p.shape()));
        }
        let v = velocity.get_mut(name).expect("inserted above");
        v.expect_shape(p.shape(), name)?;
        for ((pv, vv), gv) in p
            .data_mut()
            .iter_mut()
            .zip(v.data_mut().iter_mut())
            .zip(g.data())
        {
            *vv = config.momentum * *vv - config.learning_rate * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn one(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::filled(&[1], v));
        s
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = one("w", 1.5);
        let mut v = ParamStore::new();
        sgd_step(&mut p, &one("w", 0.0), &TrainConfig::default(), &mut v).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.5]);
    }

    #[test]
    fn plain_step() {
        let mut p = one("w", 1.0);
        let mut v = ParamStore::new();
        let cfg = TrainConfig {
            momentum: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut p, &one("w", 2.0), &cfg, &mut v).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.998).abs() < 1e-15);
    }

    #[test]
    fn momentum_second_step_is_1_9x() {
        let mut p = one("w", 0.0);
        let mut v = ParamStore::new();
        let cfg = TrainConfig::default();
        let g = one("w", 1.0);
        sgd_step(&mut p, &g, &cfg, &mut v).unwrap();
        let first = p.get("w").unwrap().data()[0];
        sgd_step(&mut p, &g, &cfg, &mut v).unwrap();
        let second = p.get("w").unwrap().data()[0] - first;
        assert!((second / first - 1.9).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_and_bad_config() {
        let mut p = one("w", 0.0);
        let mut v = ParamStore::new();
        let mut g = ParamStore::new();
        g.insert("w", Tensor::zeros(&[2]));
        assert!(sgd_step(&mut p, &g, &TrainConfig::default(), &mut v).is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(sgd_step(&mut p, &one("w", 1.0), &bad, &mut v).is_err());
        assert!(sgd_step(&mut p, &one("x", 1.0), &TrainConfig::default(), &mut v).is_err());
    }
}
