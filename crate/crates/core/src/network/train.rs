use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::metrics::{mse_loss_with_grad, psnr_loss_with_grad};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    #[default]
    Psnr,
}

impl LossKind {
    pub fn eval<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
        Ok(self.eval_with_grad(pred, target)?.0)
    }

    pub fn eval_with_grad<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        match self {
            LossKind::Mse => mse_loss_with_grad(pred, target),
            LossKind::Psnr => psnr_loss_with_grad(pred, target),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "psnr" => Ok(LossKind::Psnr),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}` (mse, psnr)"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Psnr => "psnr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Seeds the data order.
    pub seed: u64,
    /// Record the loss every this many steps (and always at the last step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            lr: 1e-3,
            batch_size: 8,
            loss: LossKind::Psnr,
            seed: 0,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// `(step, loss)`, step counted from 1.
    pub losses: Vec<(usize, f64)>,
    pub final_loss: f64,
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8` and bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(net: &Network<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step<T: Scalar>(&mut self, net: &mut Network<T>, grad: &Network<T>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let grads = grad.params();
        for (k, p) in net.params_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k].data);
            for i in 0..p.len() {
                let gi = g[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p[i] = T::of(p[i].as_f64() - update);
            }
        }
    }
}

/// Train on `(input, target)` pairs. Each epoch visits the data in a fresh
/// seeded permutation; batches are consecutive runs of that permutation and
/// never span epochs. A non-finite loss or gradient stops training with
/// [`Error::Diverged`].
pub fn train_adam<T: Scalar>(
    net: &mut Network<T>,
    data: &[(Tensor<T>, Tensor<T>)],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.log_every == 0 {
        return Err(Error::InvalidConfig(
            "batch size and log interval must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(net, cfg.lr);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut log = TrainLog {
        losses: Vec::new(),
        final_loss: f64::NAN,
    };
    let batch = cfg.batch_size.min(data.len());
    for step in 1..=cfg.steps {
        if cursor + batch > order.len() {
            order = (0..data.len()).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let inputs = Tensor::stack(&idx.iter().map(|&i| &data[i].0).collect::<Vec<_>>())?;
        let targets = Tensor::stack(&idx.iter().map(|&i| &data[i].1).collect::<Vec<_>>())?;
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged { step },
            other => other,
        };
        let (pred, cache) = net.forward_train(&inputs).map_err(diverged)?;
        let (loss, g_pred) = cfg.loss.eval_with_grad(&pred, &targets).map_err(diverged)?;
        let (grad, _) = net.backward(&g_pred, &cache).map_err(diverged)?;
        opt.step(net, &grad);
        if step % cfg.log_every == 0 || step == cfg.steps {
            log.losses.push((step, loss));
        }
        log.final_loss = loss;
        log::debug!("step {step}: loss {loss:.6}");
    }
    Ok(log)
}
