//! A desk-scale laboratory for prompt-tuning inversion on a toy conditional
//! diffusion model.
//!
//! The pipeline is deliberately small enough to run on one CPU core while
//! still exercising the full editing stack end to end:
//!
//! 1. [`dataset`] — synthetic, exactly-known data distributions (a Gaussian
//!    mixture in the plane and 8×8 binary shapes).
//! 2. [`denoiser`] / [`train`] — a tiny MLP noise predictor with hand-rolled
//!    reverse-mode gradients, trained with classifier-free dropout.
//! 3. [`schedule`] / [`sampler`] — DDPM noise schedule plus deterministic
//!    DDIM sampling and inversion.
//! 4. [`inversion`] — prompt-tuning inversion (per-step optimization of the
//!    conditional embedding) and the null-text baseline.
//! 5. [`editor`] — embedding-interpolation editing plus the plain-DDIM and
//!    latent-interpolation baselines.
//! 6. [`metrics`] / [`experiments`] — reconstruction and editability metrics
//!    and the deterministic CSV experiment runners behind the CLI.
//!
//! Everything is 64-bit floats and every random draw flows through the
//! seeded generator in [`numerics`], so any two runs with the same config
//! produce byte-identical artifacts.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod editor;
pub mod error;
pub mod experiments;
pub mod inversion;
pub mod metrics;
pub mod numerics;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
