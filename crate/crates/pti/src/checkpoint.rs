//! Model checkpointing: a single JSON document holding a manifest (schema
//! version, architecture, noise-schedule parameters, seed, and training
//! provenance) and every tensor as base64-encoded little-endian `f64` bytes.
//!
//! Round trips are bit-exact: the bytes written are the bytes loaded, with
//! no decimal formatting in between.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use crate::config::ScheduleConfig;
use crate::denoiser::{DenoiserConfig, DenoiserModel};
use crate::schedule::{make_linear_schedule, NoiseSchedule};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything that can go wrong while saving or loading a checkpoint, kept
/// distinct so callers can tell an unreadable file from a stale schema from
/// a tensor that does not fit the declared architecture.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorDim {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct Manifest {
    schema_version: u32,
    model: DenoiserConfig,
    schedule: ScheduleConfig,
    seed: u64,
    train_steps: usize,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct TensorBlob {
    dims: Vec<usize>,
    /// Base64 of the values as little-endian 8-byte floats.
    data: String,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct CheckpointFile {
    manifest: Manifest,
    tensors: BTreeMap<String, TensorBlob>,
}

/// A loaded checkpoint: the model plus the schedule it was trained against
/// and the provenance recorded at save time.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub sched: NoiseSchedule,
    pub seed: u64,
    pub train_steps: usize,
}

fn encode_tensor(dims: Vec<usize>, values: &[f64]) -> TensorBlob {
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    TensorBlob {
        dims,
        data: B64.encode(bytes),
    }
}

fn decode_tensor(name: &str, blob: &TensorBlob) -> Result<Vec<f64>, CheckpointError> {
    let bytes = B64
        .decode(&blob.data)
        .map_err(|e| CheckpointError::Corrupt(format!("tensor `{name}`: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(CheckpointError::Corrupt(format!(
            "tensor `{name}`: {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact yields 8 bytes")))
        .collect();
    let declared: usize = blob.dims.iter().product();
    if declared != values.len() {
        return Err(CheckpointError::Corrupt(format!(
            "tensor `{name}`: dims {:?} declare {declared} values but {} are stored",
            blob.dims,
            values.len()
        )));
    }
    Ok(values)
}

/// Serialize a trained model (plus its schedule and provenance) to the
/// checkpoint JSON text.
pub fn checkpoint_to_json(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    seed: u64,
    train_steps: usize,
) -> String {
    let cfg = model.config().clone();
    assert_eq!(
        cfg.t_train,
        sched.t_train(),
        "model and schedule horizons must agree"
    );
    let mut tensors = BTreeMap::new();
    tensors.insert(
        "w1".to_string(),
        encode_tensor(vec![cfg.hidden, cfg.input_dim()], &model.w1),
    );
    tensors.insert("b1".to_string(), encode_tensor(vec![cfg.hidden], &model.b1));
    tensors.insert(
        "w2".to_string(),
        encode_tensor(vec![cfg.hidden, cfg.hidden], &model.w2),
    );
    tensors.insert("b2".to_string(), encode_tensor(vec![cfg.hidden], &model.b2));
    tensors.insert(
        "w3".to_string(),
        encode_tensor(vec![cfg.data_dim, cfg.hidden], &model.w3),
    );
    tensors.insert(
        "b3".to_string(),
        encode_tensor(vec![cfg.data_dim], &model.b3),
    );
    tensors.insert(
        "embed".to_string(),
        encode_tensor(vec![cfg.n_classes + 1, cfg.cond_dim], &model.embed),
    );
    let file = CheckpointFile {
        manifest: Manifest {
            schema_version: SCHEMA_VERSION,
            model: cfg,
            schedule: ScheduleConfig {
                t_train: sched.t_train(),
                beta_start: sched.beta_start(),
                beta_end: sched.beta_end(),
            },
            seed,
            train_steps,
        },
        tensors,
    };
    serde_json::to_string_pretty(&file).expect("checkpoint structs always serialize")
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    seed: u64,
    train_steps: usize,
) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint_to_json(model, sched, seed, train_steps))?;
    Ok(())
}

/// Parse checkpoint JSON text back into a model and schedule, verifying the
/// schema version and every tensor's shape against the manifest.
pub fn checkpoint_from_json(text: &str) -> Result<Checkpoint, CheckpointError> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.manifest.schema_version != SCHEMA_VERSION {
        return Err(CheckpointError::Schema {
            found: file.manifest.schema_version,
        });
    }
    let cfg = file.manifest.model;
    cfg.validate()
        .map_err(|e| CheckpointError::Corrupt(format!("manifest: {e}")))?;
    let sc = &file.manifest.schedule;
    if sc.t_train != cfg.t_train {
        return Err(CheckpointError::Corrupt(format!(
            "manifest: schedule horizon {} disagrees with model horizon {}",
            sc.t_train, cfg.t_train
        )));
    }
    let sched = make_linear_schedule(sc.t_train, sc.beta_start, sc.beta_end)
        .map_err(|e| CheckpointError::Corrupt(format!("manifest: {e}")))?;

    let expected_dims: [(&str, Vec<usize>); 7] = [
        ("w1", vec![cfg.hidden, cfg.input_dim()]),
        ("b1", vec![cfg.hidden]),
        ("w2", vec![cfg.hidden, cfg.hidden]),
        ("b2", vec![cfg.hidden]),
        ("w3", vec![cfg.data_dim, cfg.hidden]),
        ("b3", vec![cfg.data_dim]),
        ("embed", vec![cfg.n_classes + 1, cfg.cond_dim]),
    ];
    let mut parts: Vec<Vec<f64>> = Vec::with_capacity(7);
    for (name, expected) in &expected_dims {
        let blob = file
            .tensors
            .get(*name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor `{name}`")))?;
        if blob.dims != *expected {
            return Err(CheckpointError::TensorDim {
                name: (*name).to_string(),
                found: blob.dims.clone(),
                expected: expected.clone(),
            });
        }
        parts.push(decode_tensor(name, blob)?);
    }
    let [w1, b1, w2, b2, w3, b3, embed]: [Vec<f64>; 7] =
        parts.try_into().expect("exactly seven tensors collected");
    let model = DenoiserModel::from_parts(cfg, w1, b1, w2, b2, w3, b3, embed)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        model,
        sched,
        seed: file.manifest.seed,
        train_steps: file.manifest.train_steps,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::schedule::default_schedule;

    fn any_model(seed: u64) -> DenoiserModel {
        let cfg = DenoiserConfig {
            data_dim: 2,
            cond_dim: 5,
            hidden: 12,
            n_classes: 4,
            t_train: 1000,
        };
        DenoiserModel::init(cfg, &mut Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = any_model(7);
        let sched = default_schedule();
        let json = checkpoint_to_json(&model, &sched, 42, 1234);
        let loaded = checkpoint_from_json(&json).unwrap();
        assert_eq!(loaded.model.config(), model.config());
        assert_eq!(loaded.model.w1, model.w1);
        assert_eq!(loaded.model.b1, model.b1);
        assert_eq!(loaded.model.w2, model.w2);
        assert_eq!(loaded.model.b2, model.b2);
        assert_eq!(loaded.model.w3, model.w3);
        assert_eq!(loaded.model.b3, model.b3);
        assert_eq!(loaded.model.embed, model.embed);
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.train_steps, 1234);
        assert_eq!(loaded.sched.t_train(), sched.t_train());
        assert_eq!(loaded.sched.beta_start(), sched.beta_start());
        for t in [0usize, 1, 500, 1000] {
            assert_eq!(loaded.sched.alpha_bar(t), sched.alpha_bar(t));
        }

        // The loaded model is indistinguishable in use, not just in storage.
        let mut rng = Rng::seed_from_u64(8);
        for trial in 0..100 {
            let z = rng.gaussian(2);
            let t = rng.uniform_range(1, 1000) as usize;
            let class = rng.uniform_usize(4);
            let (a, _) = crate::denoiser::eps_forward_class(&model, &z, t, Some(class)).unwrap();
            let (b, _) =
                crate::denoiser::eps_forward_class(&loaded.model, &z, t, Some(class)).unwrap();
            assert_eq!(a, b, "trial {trial}");
        }
    }

    #[test]
    fn roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let model = any_model(9);
        let sched = default_schedule();
        save_checkpoint(&path, &model, &sched, 3, 10).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.model.w1, model.w1);
        assert_eq!(loaded.model.embed, model.embed);
        assert_eq!(loaded.seed, 3);
    }

    #[test]
    fn truncated_file_fails_to_parse() {
        let json = checkpoint_to_json(&any_model(10), &default_schedule(), 0, 0);
        let cut = &json[..json.len() / 2];
        assert!(matches!(
            checkpoint_from_json(cut),
            Err(CheckpointError::Parse(_))
        ));
    }

    #[test]
    fn corrupted_payload_is_reported_by_tensor() {
        let json = checkpoint_to_json(&any_model(11), &default_schedule(), 0, 0);
        // Damage the base64 payload without breaking the JSON structure.
        let damaged = json.replacen("\"data\": \"", "\"data\": \"~~~~", 1);
        match checkpoint_from_json(&damaged) {
            Err(CheckpointError::Corrupt(msg)) => {
                assert!(msg.contains("tensor `"), "unhelpful message: {msg}")
            }
            other => panic!("expected Corrupt, got {other:?}"),
        }
    }

    #[test]
    fn stale_schema_version_is_rejected() {
        let json = checkpoint_to_json(&any_model(12), &default_schedule(), 0, 0);
        let bumped = json.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
        assert!(matches!(
            checkpoint_from_json(&bumped),
            Err(CheckpointError::Schema { found: 2 })
        ));
    }

    #[test]
    fn manifest_tensor_mismatch_names_the_tensor() {
        let json = checkpoint_to_json(&any_model(13), &default_schedule(), 0, 0);
        // Claim a wider hidden layer than the stored tensors actually have.
        let lied = json.replacen("\"hidden\": 12", "\"hidden\": 13", 1);
        match checkpoint_from_json(&lied) {
            Err(CheckpointError::TensorDim {
                name,
                found,
                expected,
            }) => {
                assert_eq!(name, "w1");
                assert_eq!(found[0], 12);
                assert_eq!(expected[0], 13);
            }
            other => panic!("expected TensorDim, got {other:?}"),
        }
    }

    #[test]
    fn missing_tensor_is_corrupt() {
        let model = any_model(14);
        let mut value: serde_json::Value =
            serde_json::from_str(&checkpoint_to_json(&model, &default_schedule(), 0, 0)).unwrap();
        value["tensors"]
            .as_object_mut()
            .unwrap()
            .remove("w2")
            .unwrap();
        match checkpoint_from_json(&value.to_string()) {
            Err(CheckpointError::Corrupt(msg)) => assert!(msg.contains("w2")),
            other => panic!("expected Corrupt, got {other:?}"),
        }
    }
}
