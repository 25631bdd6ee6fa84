//! Learning-rate schedule and the two optimizers used for pretraining (Adam)
//! and classifier training (SGD with Nesterov momentum).

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Cosine annealing from `lr_max` at `step = 0` to `lr_min` at `step = total`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    if step >= total {
        return lr_min;
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos())
}

/// Learning rate for `epoch` of `epochs`, stepped once per epoch so the
/// first epoch runs at `lr_max` and the last at `lr_min`.
pub fn epoch_lr(epoch: usize, epochs: usize, lr_max: f64, lr_min: f64) -> f64 {
    cosine_lr(epoch, epochs.saturating_sub(1), lr_max, lr_min)
}

fn check_shapes(params: &[&mut Matrix], grads: &[Matrix], state: usize) -> Result<()> {
    if params.len() != grads.len() || params.len() != state {
        return Err(Error::shape(
            "optimizer",
            format!("{} params, {} grads, {} state slots", params.len(), grads.len(), state),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "optimizer",
                format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(|p| p.data().len()).collect();
        Adam {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, mut params: Vec<&mut Matrix>, grads: &[Matrix], lr: f64) -> Result<()> {
        check_shapes(&params, grads, self.m.len())?;
        if params.iter().zip(&self.m).any(|(p, m)| p.data().len() != m.len()) {
            return Err(Error::shape("adam", "parameter size changed between steps"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// SGD with Nesterov momentum: `v = mu*v + g; w -= lr*(g + mu*v)`.
#[derive(Debug, Clone)]
pub struct NesterovSgd {
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl NesterovSgd {
    pub fn new<'a>(momentum: f64, params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        NesterovSgd {
            momentum,
            velocity: params.into_iter().map(|p| vec![0.0; p.data().len()]).collect(),
        }
    }

    pub fn step(&mut self, mut params: Vec<&mut Matrix>, grads: &[Matrix], lr: f64) -> Result<()> {
        check_shapes(&params, grads, self.velocity.len())?;
        let mu = self.momentum;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let vel = &mut self.velocity[i];
            if vel.len() != g.data().len() {
                return Err(Error::shape("nesterov", "parameter size changed between steps"));
            }
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                vel[k] = mu * vel[k] + gk;
                *w -= lr * (gk + mu * vel[k]);
            }
        }
        Ok(())
    }
}

/// Elementwise mean of per-sample gradient lists, summed in sample order.
pub fn mean_grads(per_sample: &[Vec<Matrix>]) -> Vec<Matrix> {
    let mut out: Vec<Matrix> = per_sample[0].clone();
    for sample in &per_sample[1..] {
        for (acc, g) in out.iter_mut().zip(sample) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    let scale = 1.0 / per_sample.len() as f64;
    for m in &mut out {
        m.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    out
}
