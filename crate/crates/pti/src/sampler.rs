//! Deterministic DDIM sampling and inversion.
//!
//! With the update written in terms of the cumulative products ᾱ, one step
//! of deterministic DDIM from `t` to `t'` is
//!
//! ```text
//! f(z_t)  = (z_t - sqrt(1 - ᾱ_t) eps) / sqrt(ᾱ_t)        (predicted x0)
//! z_t'    = sqrt(ᾱ_t') f(z_t) + sqrt(1 - ᾱ_t') eps
//! ```
//!
//! which is symmetric in `t` and `t'`: running it with `t' > t` *is* DDIM
//! inversion (the noise estimate is evaluated at the current point either
//! way). That symmetry is what the exact-inverse tests pin down.

use crate::denoiser::{eps_forward, DenoiserModel, ForwardCache};
use crate::error::{Error, Result};
use crate::numerics::all_finite;
use crate::schedule::{DdimSteps, NoiseSchedule};

/// Identity encoder: the "latent space" of this toy is data space.
pub fn encode(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

/// Identity decoder.
pub fn decode(z: &[f64]) -> Vec<f64> {
    z.to_vec()
}

/// Classifier-free guided noise estimate
/// `eps_null + omega * (eps_cond - eps_null)`, with the model's own null
/// row as the unconditional embedding.
///
/// `omega = 0` evaluates only the unconditional branch and `omega = 1` only
/// the conditional branch, so those cases are bit-exact (and cheaper).
pub fn cfg_eps(
    model: &DenoiserModel,
    z: &[f64],
    t: usize,
    c: &[f64],
    omega: f64,
) -> Result<Vec<f64>> {
    let null = model.null_embedding().to_vec();
    Ok(cfg_eps_cached(model, z, t, c, &null, omega)?.eps)
}

/// Guided estimate with an explicit unconditional embedding (the null-text
/// baseline optimizes this vector, so it cannot always come from the table).
pub fn cfg_eps_with_null(
    model: &DenoiserModel,
    z: &[f64],
    t: usize,
    c: &[f64],
    null: &[f64],
    omega: f64,
) -> Result<Vec<f64>> {
    Ok(cfg_eps_cached(model, z, t, c, null, omega)?.eps)
}

/// Guided estimate plus the forward caches of whichever branches were
/// evaluated; the inversion optimizers backpropagate through these.
pub(crate) struct GuidedEps {
    pub eps: Vec<f64>,
    /// Cache of the conditional branch (absent when `omega == 0`).
    pub cond_cache: Option<ForwardCache>,
    /// Cache of the unconditional branch (absent when `omega == 1`).
    pub null_cache: Option<ForwardCache>,
}

pub(crate) fn cfg_eps_cached(
    model: &DenoiserModel,
    z: &[f64],
    t: usize,
    c: &[f64],
    null: &[f64],
    omega: f64,
) -> Result<GuidedEps> {
    if !omega.is_finite() {
        return Err(Error::Invalid(format!(
            "cfg_eps: omega must be finite, got {omega}"
        )));
    }
    if omega == 0.0 {
        let (eps, cache) = eps_forward(model, z, t, null)?;
        return Ok(GuidedEps {
            eps,
            cond_cache: None,
            null_cache: Some(cache),
        });
    }
    if omega == 1.0 {
        let (eps, cache) = eps_forward(model, z, t, c)?;
        return Ok(GuidedEps {
            eps,
            cond_cache: Some(cache),
            null_cache: None,
        });
    }
    let (eps_null, null_cache) = eps_forward(model, z, t, null)?;
    let (eps_cond, cond_cache) = eps_forward(model, z, t, c)?;
    let eps = eps_null
        .iter()
        .zip(&eps_cond)
        .map(|(n, c)| n + omega * (c - n))
        .collect();
    Ok(GuidedEps {
        eps,
        cond_cache: Some(cond_cache),
        null_cache: Some(null_cache),
    })
}

/// Predicted clean sample `f(z_t) = (z_t - sqrt(1-ᾱ_t) eps) / sqrt(ᾱ_t)`.
/// Valid for any `t in 0..=t_train` (at `t = 0` it is the identity).
pub fn predict_x0(z: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    assert!(t <= sched.t_train(), "predict_x0: t out of range");
    assert_eq!(z.len(), eps.len(), "predict_x0: dim mismatch");
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    z.iter()
        .zip(eps)
        .map(|(zt, e)| (zt - sb * e) / sa)
        .collect()
}

/// One deterministic DDIM move from `t` to `t_prev < t` using a fixed noise
/// estimate `eps` (evaluated by the caller at `(z_t, t)`).
pub fn ddim_step(
    z_t: &[f64],
    t: usize,
    t_prev: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Vec<f64> {
    assert!(t_prev < t, "ddim_step: t_prev must be < t");
    ddim_move(z_t, t, t_prev, eps, sched)
}

/// One inversion move from `t` to `t_next > t` — the same formula with the
/// target time on the other side.
pub fn ddim_invert_step(
    z_t: &[f64],
    t: usize,
    t_next: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Vec<f64> {
    assert!(t_next > t, "ddim_invert_step: t_next must be > t");
    ddim_move(z_t, t, t_next, eps, sched)
}

fn ddim_move(z_t: &[f64], t: usize, target: usize, eps: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    assert!(t <= sched.t_train() && target <= sched.t_train());
    let x0 = predict_x0(z_t, t, eps, sched);
    let ab = sched.alpha_bar(target);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| sa * x + sb * e).collect()
}

/// Derivative of the DDIM move (either direction) with respect to the noise
/// estimate; scalar because the map is elementwise:
/// `d z_target / d eps = sqrt(1-ᾱ_target) - sqrt(ᾱ_target) sqrt(1-ᾱ_t)/sqrt(ᾱ_t)`.
pub fn ddim_step_eps_coeff(t: usize, target: usize, sched: &NoiseSchedule) -> f64 {
    let ab_t = sched.alpha_bar(t);
    let ab_g = sched.alpha_bar(target);
    (1.0 - ab_g).sqrt() - ab_g.sqrt() * (1.0 - ab_t).sqrt() / ab_t.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    /// Data toward noise (inversion).
    Forward,
    /// Noise toward data (sampling).
    Reverse,
}

/// A recorded DDIM path: `(timestep, latent)` pairs in traversal order.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Trajectory {
    pub direction: Direction,
    entries: Vec<(usize, Vec<f64>)>,
}

impl Trajectory {
    fn new(direction: Direction, t0: usize, z0: Vec<f64>) -> Self {
        Trajectory {
            direction,
            entries: vec![(t0, z0)],
        }
    }

    fn push(&mut self, t: usize, z: Vec<f64>) {
        let (last_t, last_z) = self.entries.last().expect("trajectory never empty");
        assert_eq!(last_z.len(), z.len(), "trajectory: latent dim changed");
        match self.direction {
            Direction::Forward => assert!(t > *last_t, "forward trajectory must increase in t"),
            Direction::Reverse => assert!(t < *last_t, "reverse trajectory must decrease in t"),
        }
        self.entries.push((t, z));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(timestep, latent)` at position `i` in traversal order.
    pub fn entry(&self, i: usize) -> (usize, &[f64]) {
        let (t, z) = &self.entries[i];
        (*t, z)
    }

    pub fn first_latent(&self) -> &[f64] {
        &self.entries[0].1
    }

    pub fn final_latent(&self) -> &[f64] {
        &self.entries.last().unwrap().1
    }

    /// Latent recorded at timestep `t`, if present.
    pub fn latent_at(&self, t: usize) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(et, _)| *et == t)
            .map(|(_, z)| z.as_slice())
    }
}

/// DDIM inversion: climb from `(0, z0)` through `tau_1 .. tau_start_index`,
/// evaluating the guided noise at the current `(z, t)` (guidance `omega`
/// with condition `c`). Records every visited latent; the result has
/// `start_index + 1` entries.
pub fn invert_trajectory(
    z0: &[f64],
    c: &[f64],
    omega: f64,
    steps: &DdimSteps,
    sched: &NoiseSchedule,
    model: &DenoiserModel,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new(Direction::Forward, 0, z0.to_vec());
    let mut z = z0.to_vec();
    for i in 1..=steps.start_index() {
        let t = steps.tau(i - 1);
        let t_next = steps.tau(i);
        let eps = cfg_eps(model, &z, t, c, omega)?;
        z = ddim_invert_step(&z, t, t_next, &eps, sched);
        if !all_finite(&z) {
            return Err(Error::Numerical(format!(
                "invert_trajectory: non-finite latent after stepping to t = {t_next}"
            )));
        }
        traj.push(t_next, z.clone());
    }
    Ok(traj)
}

/// DDIM sampling from `(tau_start_index, z_start)` down to `t = 0`, using
/// `conditions[i]` for the i-th step taken (so `conditions.len()` must equal
/// `start_index`). Records every visited latent.
pub fn sample_trajectory(
    z_start: &[f64],
    conditions: &[Vec<f64>],
    omega: f64,
    steps: &DdimSteps,
    sched: &NoiseSchedule,
    model: &DenoiserModel,
) -> Result<Trajectory> {
    let start = steps.start_index();
    if conditions.len() != start {
        return Err(Error::Invalid(format!(
            "sample_trajectory: got {} conditions for {start} steps",
            conditions.len()
        )));
    }
    let mut traj = Trajectory::new(Direction::Reverse, steps.tau(start), z_start.to_vec());
    let mut z = z_start.to_vec();
    for (step_idx, i) in (1..=start).rev().enumerate() {
        let t = steps.tau(i);
        let t_prev = steps.tau(i - 1);
        let eps = cfg_eps(model, &z, t, &conditions[step_idx], omega)?;
        z = ddim_step(&z, t, t_prev, &eps, sched);
        if !all_finite(&z) {
            return Err(Error::Numerical(format!(
                "sample_trajectory: non-finite latent after stepping to t = {t_prev}"
            )));
        }
        traj.push(t_prev, z.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserConfig, DenoiserModel};
    use crate::numerics::Rng;
    use crate::schedule::{ddim_timesteps, default_schedule, make_linear_schedule, q_sample};
    use proptest::prelude::*;

    fn small_model(seed: u64) -> DenoiserModel {
        let cfg = DenoiserConfig {
            data_dim: 2,
            cond_dim: 4,
            hidden: 16,
            n_classes: 3,
            t_train: 1000,
        };
        DenoiserModel::init(cfg, &mut Rng::seed_from_u64(seed)).unwrap()
    }

    /// Model whose output is a constant vector regardless of input: zero
    /// weights, fixed output bias.
    fn constant_model(value: [f64; 2]) -> DenoiserModel {
        let mut m = small_model(0);
        for w in m.w1.iter_mut().chain(&mut m.w2).chain(&mut m.w3) {
            *w = 0.0;
        }
        m.b3 = value.to_vec();
        m
    }

    #[test]
    fn encode_decode_roundtrip() {
        let x = vec![0.1, -0.9, 3.0];
        assert_eq!(decode(&encode(&x)), x);
    }

    #[test]
    fn predict_x0_hand_value() {
        // T = 2 schedule, z = 1, eps = 0.5 at t = 2:
        // (1 - sqrt(0.28) * 0.5) / sqrt(0.72), frozen from 30-digit math.
        let s = make_linear_schedule(2, 0.1, 0.2).unwrap();
        let x0 = predict_x0(&[1.0], 2, &[0.5], &s);
        assert!((x0[0] - 0.8667065197464174).abs() < 1e-15);
    }

    #[test]
    fn predict_x0_inverts_q_sample_exactly_in_eps() {
        let s = default_schedule();
        let x0 = vec![0.3, -1.4];
        let eps = vec![0.8, 0.2];
        for t in [1usize, 250, 999] {
            let z = q_sample(&x0, t, &eps, &s);
            let rec = predict_x0(&z, t, &eps, &s);
            for (r, x) in rec.iter().zip(&x0) {
                assert!((r - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cfg_eps_degenerate_scales_are_bit_exact() {
        let model = small_model(3);
        let z = [0.2, -0.4];
        let c = model.embedding(Some(1)).unwrap().to_vec();
        let (uncond, _) = eps_forward(&model, &z, 100, model.null_embedding()).unwrap();
        let (cond, _) = eps_forward(&model, &z, 100, &c).unwrap();
        assert_eq!(cfg_eps(&model, &z, 100, &c, 0.0).unwrap(), uncond);
        assert_eq!(cfg_eps(&model, &z, 100, &c, 1.0).unwrap(), cond);
    }

    /// Oracle: assemble the guided estimate from two independent forward
    /// passes and the guidance formula, written out in the test.
    #[test]
    fn cfg_eps_matches_compositional_oracle() {
        let model = small_model(4);
        let z = [0.5, 0.1];
        let c = model.embedding(Some(2)).unwrap().to_vec();
        let omega = 7.5;
        let got = cfg_eps(&model, &z, 777, &c, omega).unwrap();
        let (e_n, _) = eps_forward(&model, &z, 777, model.null_embedding()).unwrap();
        let (e_c, _) = eps_forward(&model, &z, 777, &c).unwrap();
        for i in 0..2 {
            let expect = e_n[i] + omega * (e_c[i] - e_n[i]);
            assert!((got[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn step_and_invert_are_exact_inverses_under_constant_eps() {
        let sched = default_schedule();
        let steps = ddim_timesteps(1000, 50, 1.0).unwrap();
        let eps = vec![0.37, -0.81];
        let z = vec![1.2, -0.3];
        for i in 1..=steps.n_steps() {
            let (lo, hi) = (steps.tau(i - 1), steps.tau(i));
            let down = ddim_step(&z, hi, lo, &eps, &sched);
            let back = ddim_invert_step(&down, lo, hi, &eps, &sched);
            for (b, orig) in back.iter().zip(&z) {
                assert!((b - orig).abs() < 1e-12, "tau pair ({lo}, {hi})");
            }
            let up = ddim_invert_step(&z, lo, hi, &eps, &sched);
            let forth = ddim_step(&up, hi, lo, &eps, &sched);
            for (f, orig) in forth.iter().zip(&z) {
                assert!((f - orig).abs() < 1e-12, "tau pair ({lo}, {hi})");
            }
        }
    }

    #[test]
    fn constant_denoiser_full_roundtrip_is_identity() {
        let sched = default_schedule();
        let steps = ddim_timesteps(1000, 50, 0.8).unwrap();
        let model = constant_model([0.25, -0.6]);
        let c = model.embedding(Some(0)).unwrap().to_vec();
        let z0 = vec![0.9, 0.4];
        let traj = invert_trajectory(&z0, &c, 0.0, &steps, &sched, &model).unwrap();
        assert_eq!(traj.len(), steps.start_index() + 1);
        let conds = vec![c.clone(); steps.start_index()];
        let back =
            sample_trajectory(traj.final_latent(), &conds, 0.0, &steps, &sched, &model).unwrap();
        for (b, orig) in back.final_latent().iter().zip(&z0) {
            assert!((b - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_shape_and_ordering() {
        let sched = default_schedule();
        let steps = ddim_timesteps(1000, 50, 0.8).unwrap();
        let model = small_model(8);
        let c = model.embedding(Some(0)).unwrap().to_vec();
        let traj = invert_trajectory(&[0.1, 0.2], &c, 0.0, &steps, &sched, &model).unwrap();
        assert_eq!(traj.len(), 41);
        assert_eq!(traj.entry(0).0, 0);
        assert_eq!(traj.entry(40).0, 800);
        for i in 1..traj.len() {
            assert!(traj.entry(i).0 > traj.entry(i - 1).0);
        }
        assert_eq!(traj.latent_at(800).unwrap(), traj.final_latent());

        let conds = vec![c; steps.start_index()];
        let samp =
            sample_trajectory(traj.final_latent(), &conds, 0.0, &steps, &sched, &model).unwrap();
        assert_eq!(samp.len(), 41);
        assert_eq!(samp.entry(0).0, 800);
        assert_eq!(samp.entry(40).0, 0);
    }

    #[test]
    fn sample_trajectory_validates_condition_count() {
        let sched = default_schedule();
        let steps = ddim_timesteps(1000, 50, 0.8).unwrap();
        let model = small_model(8);
        let conds = vec![model.embedding(None).unwrap().to_vec(); 3];
        assert!(sample_trajectory(&[0.0, 0.0], &conds, 0.0, &steps, &sched, &model).is_err());
    }

    #[test]
    fn trajectory_serializes_roundtrip() {
        let sched = default_schedule();
        let steps = ddim_timesteps(1000, 10, 0.8).unwrap();
        let model = small_model(15);
        let c = model.embedding(Some(1)).unwrap().to_vec();
        let traj = invert_trajectory(&[0.3, -0.2], &c, 0.0, &steps, &sched, &model).unwrap();
        let json = serde_json::to_string(&traj).unwrap();
        let back: Trajectory = serde_json::from_str(&json).unwrap();
        assert_eq!(back.len(), traj.len());
        for i in 0..traj.len() {
            assert_eq!(back.entry(i).0, traj.entry(i).0);
            assert_eq!(back.entry(i).1, traj.entry(i).1);
        }
    }

    proptest! {
        /// q_sample followed by predict_x0 with the same eps is the
        /// identity map, for arbitrary data and noise.
        #[test]
        fn predict_x0_q_sample_identity(
            x0 in proptest::collection::vec(-3.0f64..3.0, 1..6),
            seed in 0u64..1000,
            t in 1usize..=1000,
        ) {
            let s = default_schedule();
            let eps = Rng::seed_from_u64(seed).gaussian(x0.len());
            let z = q_sample(&x0, t, &eps, &s);
            let rec = predict_x0(&z, t, &eps, &s);
            for (r, x) in rec.iter().zip(&x0) {
                prop_assert!((r - x).abs() < 1e-9);
            }
        }

        /// Down-then-up with a shared constant eps is the identity for any
        /// adjacent pair of the default DDIM subsequence.
        #[test]
        fn step_invert_identity_random_eps(
            seed in 0u64..1000,
            i in 1usize..=50,
        ) {
            let sched = default_schedule();
            let steps = ddim_timesteps(1000, 50, 1.0).unwrap();
            let mut rng = Rng::seed_from_u64(seed);
            let z: Vec<f64> = rng.gaussian(2);
            let eps: Vec<f64> = rng.gaussian(2);
            let (lo, hi) = (steps.tau(i - 1), steps.tau(i));
            let down = ddim_step(&z, hi, lo, &eps, &sched);
            let back = ddim_invert_step(&down, lo, hi, &eps, &sched);
            for (b, orig) in back.iter().zip(&z) {
                prop_assert!((b - orig).abs() < 1e-10);
            }
        }
    }
}
