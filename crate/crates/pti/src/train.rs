//! Denoising-score-matching training loop.
//!
//! Standard recipe: sample `(x0, label)` from the dataset, a timestep `t`
//! uniform in `1..=t_train`, Gaussian noise `eps`, form the noisy latent
//! with `q_sample`, and regress the model output onto `eps` with a squared
//! error. With probability `p_uncond` the class embedding is replaced by the
//! null row, which is what later makes classifier-free guidance work.

use crate::denoiser::{
    accumulate_param_grads, eps_forward_class, DenoiserConfig, DenoiserModel, ParamGrads,
};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::schedule::{q_sample, NoiseSchedule};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Adam learning rate (beta1/beta2/eps are fixed constants).
    pub lr: f64,
    /// Classifier-free dropout probability.
    pub p_uncond: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch: 128,
            lr: 1e-3,
            p_uncond: 0.06,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Invalid("train: steps and batch must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!(
                "train: lr must be > 0, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::Invalid(format!(
                "train: p_uncond must lie in [0, 1], got {}",
                self.p_uncond
            )));
        }
        Ok(())
    }
}

struct Adam {
    m: ParamGrads,
    v: ParamGrads,
    steps_taken: usize,
}

impl Adam {
    fn new(model: &DenoiserModel) -> Self {
        Adam {
            m: ParamGrads::zeros_like(model),
            v: ParamGrads::zeros_like(model),
            steps_taken: 0,
        }
    }

    fn update(&mut self, model: &mut DenoiserModel, grads: &ParamGrads, lr: f64) {
        self.steps_taken += 1;
        let t = self.steps_taken as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let tensors: [(&mut Vec<f64>, &Vec<f64>, &mut Vec<f64>, &mut Vec<f64>); 7] = [
            (&mut model.w1, &grads.w1, &mut self.m.w1, &mut self.v.w1),
            (&mut model.b1, &grads.b1, &mut self.m.b1, &mut self.v.b1),
            (&mut model.w2, &grads.w2, &mut self.m.w2, &mut self.v.w2),
            (&mut model.b2, &grads.b2, &mut self.m.b2, &mut self.v.b2),
            (&mut model.w3, &grads.w3, &mut self.m.w3, &mut self.v.w3),
            (&mut model.b3, &grads.b3, &mut self.m.b3, &mut self.v.b3),
            (
                &mut model.embed,
                &grads.embed,
                &mut self.m.embed,
                &mut self.v.embed,
            ),
        ];
        for (p, g, m, v) in tensors {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Train a fresh model on a labelled dataset.
///
/// Model initialization and all batch sampling consume the single `rng`
/// stream, so the same seed reproduces the same final model bit for bit.
/// Per batch element the draw order is: dataset index, timestep,
/// classifier-free coin, noise vector.
///
/// Returns the model and the per-step training loss curve (mean over the
/// batch of the squared noise-prediction error).
pub fn train_denoiser(
    data: &[(Vec<f64>, usize)],
    arch: DenoiserConfig,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(DenoiserModel, Vec<f64>)> {
    cfg.validate()?;
    arch.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("train: dataset is empty".into()));
    }
    if arch.t_train != sched.t_train() {
        return Err(Error::Invalid(format!(
            "train: model horizon {} != schedule horizon {}",
            arch.t_train,
            sched.t_train()
        )));
    }
    for (x, label) in data {
        if x.len() != arch.data_dim {
            return Err(Error::Invalid(format!(
                "train: sample has dim {}, architecture expects {}",
                x.len(),
                arch.data_dim
            )));
        }
        if *label >= arch.n_classes {
            return Err(Error::Invalid(format!(
                "train: label {label} out of range (K = {})",
                arch.n_classes
            )));
        }
    }

    let mut model = DenoiserModel::init(arch.clone(), rng)?;
    let mut adam = Adam::new(&model);
    let mut grads = ParamGrads::zeros_like(&model);
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let inv_batch = 1.0 / cfg.batch as f64;

    for step in 0..cfg.steps {
        grads.scale(0.0);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch {
            let idx = rng.uniform_usize(data.len());
            let (x0, label) = &data[idx];
            let t = 1 + rng.uniform_usize(arch.t_train);
            let class = if rng.uniform() < cfg.p_uncond {
                None
            } else {
                Some(*label)
            };
            let eps = rng.gaussian(arch.data_dim);
            let z_t = q_sample(x0, t, &eps, sched);
            let (eps_hat, cache) = eps_forward_class(&model, &z_t, t, class)?;
            let residual: Vec<f64> = eps_hat.iter().zip(&eps).map(|(p, e)| p - e).collect();
            loss_sum += residual.iter().map(|r| r * r).sum::<f64>();
            // d/d eps_hat of mean_batch ||residual||^2.
            let upstream: Vec<f64> = residual.iter().map(|r| 2.0 * r * inv_batch).collect();
            accumulate_param_grads(&model, &cache, &upstream, &mut grads);
        }
        let loss = loss_sum * inv_batch;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "train: non-finite loss at step {step}"
            )));
        }
        loss_curve.push(loss);
        adam.update(&mut model, &grads, cfg.lr);
    }
    Ok((model, loss_curve))
}

/// Mean of the first `frac` of the curve vs the last `frac`; used by tests
/// and the acceptance suite to check that training actually learned.
pub fn loss_window_means(curve: &[f64], head_frac: f64, tail_frac: f64) -> (f64, f64) {
    let n = curve.len();
    let head = ((n as f64 * head_frac).ceil() as usize).clamp(1, n);
    let tail = ((n as f64 * tail_frac).ceil() as usize).clamp(1, n);
    let head_mean = curve[..head].iter().sum::<f64>() / head as f64;
    let tail_mean = curve[n - tail..].iter().sum::<f64>() / tail as f64;
    (head_mean, tail_mean)
}
