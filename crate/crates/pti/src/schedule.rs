//! DDPM noise schedule and the DDIM timestep subsequence.
//!
//! Convention: diffusion time `t` runs over `0..=t_train`, with `t = 0`
//! meaning "clean data". All per-step arrays are stored with length
//! `t_train + 1` and a boundary entry at index 0 (`beta[0] = 0`,
//! `alpha_bar[0] = 1`) so that formulas indexed by `t` read exactly like the
//! math and the DDIM boundary step to/from `t = 0` needs no special casing.

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Linear-in-beta DDPM schedule with cumulative products.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    t_train: usize,
    beta_start: f64,
    beta_end: f64,
    /// `betas[t]` for `t in 1..=t_train`; `betas[0] = 0` (boundary).
    betas: Vec<f64>,
    /// `alphas[t] = 1 - betas[t]`; `alphas[0] = 1`.
    alphas: Vec<f64>,
    /// `alpha_bars[t] = prod_{s<=t} alphas[s]`; `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn t_train(&self) -> usize {
        self.t_train
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    /// Cumulative product ᾱ_t, with the boundary ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

/// Build a linear beta schedule: `betas` linearly spaced from `beta_start`
/// to `beta_end` inclusive over `t_train` steps.
///
/// Requires `t_train >= 1` and `0 < beta_start <= beta_end < 1`, with
/// strictly increasing betas (so `beta_start < beta_end`) whenever
/// `t_train >= 2`.
pub fn make_linear_schedule(
    t_train: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    if t_train < 1 {
        return Err(Error::Invalid("schedule: t_train must be >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Invalid(format!(
            "schedule: need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    if t_train >= 2 && beta_start == beta_end {
        return Err(Error::Invalid(
            "schedule: betas must be strictly increasing for t_train >= 2".into(),
        ));
    }
    let mut betas = Vec::with_capacity(t_train + 1);
    let mut alphas = Vec::with_capacity(t_train + 1);
    let mut alpha_bars = Vec::with_capacity(t_train + 1);
    betas.push(0.0);
    alphas.push(1.0);
    alpha_bars.push(1.0);
    for t in 1..=t_train {
        let beta = if t_train == 1 {
            beta_start
        } else {
            beta_start + (t - 1) as f64 * (beta_end - beta_start) / (t_train - 1) as f64
        };
        betas.push(beta);
        alphas.push(1.0 - beta);
        alpha_bars.push(alpha_bars[t - 1] * (1.0 - beta));
    }
    Ok(NoiseSchedule {
        t_train,
        beta_start,
        beta_end,
        betas,
        alphas,
        alpha_bars,
    })
}

/// Defaults: 1000 training steps, betas from 1e-4 to 0.02.
pub fn default_schedule() -> NoiseSchedule {
    make_linear_schedule(1000, 1e-4, 0.02).expect("default schedule is valid")
}

/// The DDIM timestep subsequence `tau_1 < ... < tau_S` plus the encode
/// start index.
///
/// `tau_i = floor(i * t_train / S)` for `i = 1..=S`, and
/// `start_index = ceil(ratio * S)`: inversion climbs through
/// `tau_1..tau_start_index` and sampling walks back down from there, with
/// the boundary convention `tau_0 = 0`.
#[derive(Debug, Clone)]
pub struct DdimSteps {
    taus: Vec<usize>,
    start_index: usize,
    ratio: f64,
}

impl DdimSteps {
    pub fn n_steps(&self) -> usize {
        self.taus.len()
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Timestep value for 1-based index `i in 1..=S`; `tau(0) = 0`.
    pub fn tau(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.taus[i - 1]
        }
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }
}

/// Build the DDIM subsequence. Requires `1 <= s <= t_train` and
/// `0 < ratio <= 1`.
pub fn ddim_timesteps(t_train: usize, s: usize, ratio: f64) -> Result<DdimSteps> {
    if s < 1 || s > t_train {
        return Err(Error::Invalid(format!(
            "ddim_timesteps: need 1 <= S <= t_train, got S={s}, t_train={t_train}"
        )));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Invalid(format!(
            "ddim_timesteps: need 0 < ratio <= 1, got {ratio}"
        )));
    }
    let taus: Vec<usize> = (1..=s).map(|i| i * t_train / s).collect();
    // ceil(ratio * S) in exact terms; the 1e-9 backoff absorbs ulp-level
    // float noise (e.g. 0.8 * 50 evaluating just above 40) and the max(1)
    // restores the mathematical ceil for tiny positive ratios.
    let start_index = (((ratio * s as f64) - 1e-9).ceil() as usize).clamp(1, s);
    Ok(DdimSteps {
        taus,
        start_index,
        ratio,
    })
}

/// Forward diffusion draw `z_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps`.
///
/// `t` may be any value in `0..=t_train` (at `t = 0` this is the identity).
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    assert!(t <= sched.t_train(), "q_sample: t out of range");
    assert_eq!(x0.len(), eps.len(), "q_sample: dim mismatch");
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| sa * x + sb * e).collect()
}

/// Convenience used by tests: empirical variance of `q_sample` over fresh
/// noise draws, computed per dimension and then averaged (each dimension has
/// its own mean `sqrt(ᾱ_t) x0[i]`).
pub fn q_sample_noise_variance(
    x0: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    n_draws: usize,
    rng: &mut Rng,
) -> f64 {
    let d = x0.len();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for _ in 0..n_draws {
        let eps = rng.gaussian(d);
        for (i, v) in q_sample(x0, t, &eps, sched).into_iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let n = n_draws as f64;
    let per_dim_var = (0..d).map(|i| {
        let mean = sum[i] / n;
        sum_sq[i] / n - mean * mean
    });
    per_dim_var.sum::<f64>() / d as f64
}
