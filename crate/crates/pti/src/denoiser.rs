//! The toy noise predictor: a two-hidden-layer SiLU MLP over
//! `[z, time_embedding(t), c]`, plus a small learned table of class
//! embeddings whose row 0 is the unconditional (null) embedding.
//!
//! Gradients are hand-rolled reverse mode. The model is small enough that a
//! general autodiff framework would be mostly overhead, and writing the
//! backward pass explicitly keeps the inversion-time gradient (w.r.t. the
//! condition embedding only) cheap and allocation-light.

use crate::error::{Error, Result};
use crate::numerics::{all_finite, axpy, dot, Rng};

/// Sinusoidal time-embedding width (16 sin/cos pairs).
pub const TIME_EMBED_DIM: usize = 32;
const TIME_FREQ_PAIRS: usize = TIME_EMBED_DIM / 2;
/// Frequencies are geometrically spaced over 1..=10^4.
const TIME_FREQ_MAX_EXP: f64 = 4.0;

/// Architecture hyperparameters; fixed at construction and serialized with
/// checkpoints.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Data dimension `d`.
    pub data_dim: usize,
    /// Condition-embedding dimension.
    pub cond_dim: usize,
    /// Hidden width of both MLP layers.
    pub hidden: usize,
    /// Number of data classes; the embedding table has `n_classes + 1` rows
    /// (row 0 is the null embedding).
    pub n_classes: usize,
    /// Diffusion horizon used to scale the time embedding.
    pub t_train: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0
            || self.cond_dim == 0
            || self.hidden == 0
            || self.n_classes == 0
            || self.t_train == 0
        {
            return Err(Error::Invalid(
                "denoiser: all architecture dimensions must be nonzero".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + TIME_EMBED_DIM + self.cond_dim
    }
}

/// Sinusoidal embedding of `t / t_train`: pair `j` holds
/// `(sin(f_j s), cos(f_j s))` with `f_j = 10^(4 j / 15)`.
pub fn time_embed(t: usize, t_train: usize) -> Vec<f64> {
    let s = t as f64 / t_train as f64;
    let mut out = Vec::with_capacity(TIME_EMBED_DIM);
    for j in 0..TIME_FREQ_PAIRS {
        let freq = 10f64.powf(TIME_FREQ_MAX_EXP * j as f64 / (TIME_FREQ_PAIRS - 1) as f64);
        out.push((freq * s).sin());
        out.push((freq * s).cos());
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx silu(x) = sigma(x) + x sigma(x) (1 - sigma(x)).
fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// MLP weights (row-major) plus the class-embedding table.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    cfg: DenoiserConfig,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    /// `(n_classes + 1) × cond_dim`, row-major; row 0 is the null embedding.
    pub embed: Vec<f64>,
}

impl DenoiserModel {
    /// Initialize with scaled-uniform weights
    /// (`±sqrt(6 / (fan_in + fan_out))`), zero biases, and embedding rows
    /// drawn from `N(0, 0.1^2)`. Draw order: w1, w2, w3, then embedding rows
    /// 0..=K — part of the determinism contract.
    pub fn init(cfg: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let in_dim = cfg.input_dim();
        let uniform_layer = |rng: &mut Rng, fan_in: usize, fan_out: usize| -> Vec<f64> {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out)
                .map(|_| (2.0 * rng.uniform() - 1.0) * limit)
                .collect()
        };
        let w1 = uniform_layer(rng, in_dim, cfg.hidden);
        let w2 = uniform_layer(rng, cfg.hidden, cfg.hidden);
        let w3 = uniform_layer(rng, cfg.hidden, cfg.data_dim);
        let embed: Vec<f64> = rng
            .gaussian((cfg.n_classes + 1) * cfg.cond_dim)
            .into_iter()
            .map(|g| 0.1 * g)
            .collect();
        Ok(DenoiserModel {
            b1: vec![0.0; cfg.hidden],
            b2: vec![0.0; cfg.hidden],
            b3: vec![0.0; cfg.data_dim],
            w1,
            w2,
            w3,
            embed,
            cfg,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Construct from raw tensors (checkpoint loading). Validates shapes.
    pub fn from_parts(
        cfg: DenoiserConfig,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        w3: Vec<f64>,
        b3: Vec<f64>,
        embed: Vec<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        let in_dim = cfg.input_dim();
        let checks = [
            ("w1", w1.len(), cfg.hidden * in_dim),
            ("b1", b1.len(), cfg.hidden),
            ("w2", w2.len(), cfg.hidden * cfg.hidden),
            ("b2", b2.len(), cfg.hidden),
            ("w3", w3.len(), cfg.data_dim * cfg.hidden),
            ("b3", b3.len(), cfg.data_dim),
            ("embed", embed.len(), (cfg.n_classes + 1) * cfg.cond_dim),
        ];
        for (name, got, expect) in checks {
            if got != expect {
                return Err(Error::Invalid(format!(
                    "denoiser: tensor {name} has {got} elements, architecture requires {expect}"
                )));
            }
        }
        Ok(DenoiserModel {
            cfg,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            embed,
        })
    }

    /// Embedding row for a class, or the null row.
    pub fn embedding(&self, class: Option<usize>) -> Result<&[f64]> {
        let row = match class {
            None => 0,
            Some(k) => {
                if k >= self.cfg.n_classes {
                    return Err(Error::Invalid(format!(
                        "embedding: class {k} out of range (K = {})",
                        self.cfg.n_classes
                    )));
                }
                k + 1
            }
        };
        let dc = self.cfg.cond_dim;
        Ok(&self.embed[row * dc..(row + 1) * dc])
    }

    pub fn null_embedding(&self) -> &[f64] {
        &self.embed[..self.cfg.cond_dim]
    }
}

/// Everything the backward passes need from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Assembled input `[z, time_embed, c]`.
    pub input: Vec<f64>,
    /// Pre-activations of layer 1 and the SiLU outputs.
    pub a1: Vec<f64>,
    pub h1: Vec<f64>,
    pub a2: Vec<f64>,
    pub h2: Vec<f64>,
    /// Embedding-table row used to produce `c`, when the caller routed the
    /// condition through the table (training does; inversion passes raw
    /// vectors and leaves this as `None`).
    pub active_row: Option<usize>,
}

fn matvec(w: &[f64], bias: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    w.chunks_exact(cols)
        .zip(bias)
        .map(|(row, b)| b + dot(row, x))
        .collect()
}

/// `w^T d` for row-major `w` with `rows == d.len()`.
fn matvec_transposed(w: &[f64], d: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, di) in w.chunks_exact(cols).zip(d) {
        axpy(*di, row, &mut out);
    }
    out
}

/// Predict the noise `eps_hat = model(z, t, c)` and return the cache needed
/// for gradients. Errors on dimension mismatches or non-finite inputs.
pub fn eps_forward(
    model: &DenoiserModel,
    z: &[f64],
    t: usize,
    c: &[f64],
) -> Result<(Vec<f64>, ForwardCache)> {
    eps_forward_routed(model, z, t, c, None)
}

/// Forward pass with the condition taken from the embedding table, recording
/// the active row so parameter gradients can be routed back to it.
pub fn eps_forward_class(
    model: &DenoiserModel,
    z: &[f64],
    t: usize,
    class: Option<usize>,
) -> Result<(Vec<f64>, ForwardCache)> {
    let c = model.embedding(class)?.to_vec();
    let row = match class {
        None => 0,
        Some(k) => k + 1,
    };
    eps_forward_routed(model, z, t, &c, Some(row))
}

fn eps_forward_routed(
    model: &DenoiserModel,
    z: &[f64],
    t: usize,
    c: &[f64],
    active_row: Option<usize>,
) -> Result<(Vec<f64>, ForwardCache)> {
    let cfg = &model.cfg;
    if z.len() != cfg.data_dim {
        return Err(Error::Invalid(format!(
            "eps_forward: z has dim {}, model expects {}",
            z.len(),
            cfg.data_dim
        )));
    }
    if c.len() != cfg.cond_dim {
        return Err(Error::Invalid(format!(
            "eps_forward: c has dim {}, model expects {}",
            c.len(),
            cfg.cond_dim
        )));
    }
    if t > cfg.t_train {
        return Err(Error::Invalid(format!(
            "eps_forward: t = {t} beyond horizon {}",
            cfg.t_train
        )));
    }
    if !all_finite(z) || !all_finite(c) {
        return Err(Error::Numerical("eps_forward: non-finite input".into()));
    }

    let mut input = Vec::with_capacity(cfg.input_dim());
    input.extend_from_slice(z);
    input.extend(time_embed(t, cfg.t_train));
    input.extend_from_slice(c);

    let a1 = matvec(&model.w1, &model.b1, &input, cfg.hidden);
    let h1: Vec<f64> = a1.iter().map(|&x| silu(x)).collect();
    let a2 = matvec(&model.w2, &model.b2, &h1, cfg.hidden);
    let h2: Vec<f64> = a2.iter().map(|&x| silu(x)).collect();
    let out = matvec(&model.w3, &model.b3, &h2, cfg.data_dim);

    Ok((
        out,
        ForwardCache {
            input,
            a1,
            h1,
            a2,
            h2,
            active_row,
        },
    ))
}

/// Gradient of `upstream . eps_hat` with respect to the condition embedding
/// `c` (the last `cond_dim` input coordinates).
pub fn grad_wrt_embedding(
    model: &DenoiserModel,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Vec<f64> {
    let cfg = &model.cfg;
    debug_assert_eq!(upstream.len(), cfg.data_dim);
    let d_a2 = backprop_to_a2(model, cache, upstream);
    let d_h1 = matvec_transposed(&model.w2, &d_a2, cfg.hidden);
    let d_a1: Vec<f64> = d_h1
        .iter()
        .zip(&cache.a1)
        .map(|(d, a)| d * silu_prime(*a))
        .collect();
    // Only the condition block of W1^T d_a1 is needed.
    let in_dim = cfg.input_dim();
    let c_offset = cfg.data_dim + TIME_EMBED_DIM;
    let mut d_c = vec![0.0; cfg.cond_dim];
    for (row, di) in model.w1.chunks_exact(in_dim).zip(&d_a1) {
        axpy(*di, &row[c_offset..], &mut d_c);
    }
    d_c
}

fn backprop_to_a2(model: &DenoiserModel, cache: &ForwardCache, upstream: &[f64]) -> Vec<f64> {
    let d_h2 = matvec_transposed(&model.w3, upstream, model.cfg.hidden);
    d_h2.iter()
        .zip(&cache.a2)
        .map(|(d, a)| d * silu_prime(*a))
        .collect()
}

/// Parameter-shaped gradients (same layout as the model tensors).
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    pub embed: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(model: &DenoiserModel) -> Self {
        ParamGrads {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
            w3: vec![0.0; model.w3.len()],
            b3: vec![0.0; model.b3.len()],
            embed: vec![0.0; model.embed.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for slice in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.embed,
        ] {
            for v in slice.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Gradient of `upstream . eps_hat` with respect to every parameter.
///
/// The embedding-table gradient is nonzero only in the cache's active row;
/// if the forward pass was fed a raw condition vector (no table row), the
/// embedding gradient is zero everywhere.
pub fn grad_wrt_params(
    model: &DenoiserModel,
    cache: &ForwardCache,
    upstream: &[f64],
) -> ParamGrads {
    let mut grads = ParamGrads::zeros_like(model);
    accumulate_param_grads(model, cache, upstream, &mut grads);
    grads
}

/// Accumulating form used by the training loop (avoids reallocating the
/// gradient buffers for every batch element).
pub fn accumulate_param_grads(
    model: &DenoiserModel,
    cache: &ForwardCache,
    upstream: &[f64],
    grads: &mut ParamGrads,
) {
    let cfg = &model.cfg;
    debug_assert_eq!(upstream.len(), cfg.data_dim);

    // Layer 3: out = W3 h2 + b3.
    for (i, u) in upstream.iter().enumerate() {
        axpy(
            *u,
            &cache.h2,
            &mut grads.w3[i * cfg.hidden..(i + 1) * cfg.hidden],
        );
        grads.b3[i] += u;
    }
    let d_a2 = backprop_to_a2(model, cache, upstream);

    // Layer 2: a2 = W2 h1 + b2.
    for (i, d) in d_a2.iter().enumerate() {
        axpy(
            *d,
            &cache.h1,
            &mut grads.w2[i * cfg.hidden..(i + 1) * cfg.hidden],
        );
        grads.b2[i] += d;
    }
    let d_h1 = matvec_transposed(&model.w2, &d_a2, cfg.hidden);
    let d_a1: Vec<f64> = d_h1
        .iter()
        .zip(&cache.a1)
        .map(|(d, a)| d * silu_prime(*a))
        .collect();

    // Layer 1: a1 = W1 input + b1.
    let in_dim = cfg.input_dim();
    for (i, d) in d_a1.iter().enumerate() {
        axpy(
            *d,
            &cache.input,
            &mut grads.w1[i * in_dim..(i + 1) * in_dim],
        );
        grads.b1[i] += d;
    }

    // Embedding row, when the condition came from the table.
    if let Some(row) = cache.active_row {
        let c_offset = cfg.data_dim + TIME_EMBED_DIM;
        let mut d_c = vec![0.0; cfg.cond_dim];
        for (w_row, di) in model.w1.chunks_exact(in_dim).zip(&d_a1) {
            axpy(*di, &w_row[c_offset..], &mut d_c);
        }
        axpy(
            1.0,
            &d_c,
            &mut grads.embed[row * cfg.cond_dim..(row + 1) * cfg.cond_dim],
        );
    }
}
