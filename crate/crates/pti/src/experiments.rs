//! The three experiment runners behind the CLI (guidance grid, inversion
//! benchmark, trade-off sweep), plus seeded dataset/test-set construction.
//!
//! Every runner is a pure function of `(RunConfig, model, argument lists)`
//! and returns the full CSV document as a string; identical inputs give
//! byte-identical outputs. Each consumer of randomness derives its own
//! stream from the root seed, so adding or reordering consumers never
//! perturbs the others.

use std::fmt;
use std::str::FromStr;

use crate::config::{DataSpec, RunConfig};
use crate::dataset::{sample_component_n, sample_mixture, sample_shapes, MixtureSpec};
use crate::denoiser::DenoiserModel;
use crate::editor::{edit_ddim, edit_latent_interp};
use crate::error::{Error, Result};
use crate::inversion::{ddim_reconstruct, nti_over_trajectory, pti_over_trajectory, PtiConfig};
use crate::metrics::{alignment_nll, mse, psnr_of_mse, ssim, tradeoff_sweep, DEFAULT_PSNR_MAX};
use crate::numerics::{derive_seed, l2_dist, Rng};
use crate::sampler::{encode, invert_trajectory, sample_trajectory};
use crate::train::train_denoiser;

/// Stream tags for `derive_seed`; one per independent consumer of the root
/// seed.
pub const STREAM_TRAIN_DATA: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_TEST_SET: u64 = 3;
pub const STREAM_EDIT_SET: u64 = 4;

/// Version stamp written into every CSV preamble; bump when a column schema
/// changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Reconstruction methods the benchmark can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Ddim,
    Nti,
    Pti,
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMethod::Ddim => "ddim",
            BenchMethod::Nti => "nti",
            BenchMethod::Pti => "pti",
        })
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(BenchMethod::Ddim),
            "nti" => Ok(BenchMethod::Nti),
            "pti" => Ok(BenchMethod::Pti),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected ddim, nti, or pti)"
            ))),
        }
    }
}

/// Labeled training set drawn from the configured dataset.
pub fn training_data(cfg: &RunConfig) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut rng = Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TRAIN_DATA));
    match cfg.data_spec()? {
        DataSpec::Mixture(m) => Ok(sample_mixture(&m, cfg.dataset.n_train(), &mut rng)),
        DataSpec::Shapes(s) => sample_shapes(&s, cfg.dataset.n_train(), &mut rng),
    }
}

/// Generate data and train the denoiser exactly as the `train` subcommand
/// does. Returns the model and the per-step loss curve.
pub fn train_from_config(cfg: &RunConfig) -> Result<(DenoiserModel, Vec<f64>)> {
    cfg.validate()?;
    let data = training_data(cfg)?;
    let sched = cfg.noise_schedule()?;
    let mut rng = Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TRAIN));
    train_denoiser(&data, cfg.denoiser_config(), &sched, &cfg.train, &mut rng)
}

/// Fixed labeled test set for the reconstruction experiments.
pub fn test_set(cfg: &RunConfig, n: usize) -> Result<Vec<(Vec<f64>, usize)>> {
    if n == 0 {
        return Err(Error::Config("test set size must be >= 1".into()));
    }
    let mut rng = Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TEST_SET));
    match cfg.data_spec()? {
        DataSpec::Mixture(m) => Ok(sample_mixture(&m, n, &mut rng)),
        DataSpec::Shapes(s) => sample_shapes(&s, n, &mut rng),
    }
}

/// Fixed edit inputs, all drawn from the configured source class.
pub fn edit_inputs(cfg: &RunConfig, n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Config("edit input count must be >= 1".into()));
    }
    let mut rng = Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EDIT_SET));
    let source = cfg.edit.source_class;
    match cfg.data_spec()? {
        DataSpec::Mixture(m) => Ok(sample_component_n(&m, source, n, &mut rng)),
        DataSpec::Shapes(s) => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                out.push(crate::dataset::render_shape(&s, source, &mut rng)?);
            }
            Ok(out)
        }
    }
}

/// The mixture spec, or an error for datasets without a tractable density.
fn require_mixture(cfg: &RunConfig) -> Result<MixtureSpec> {
    match cfg.data_spec()? {
        DataSpec::Mixture(m) => Ok(m),
        DataSpec::Shapes(_) => Err(Error::Invalid(
            "this experiment needs the mixture dataset (exact class densities)".into(),
        )),
    }
}

///`# seed=... schema_version=... config_hash=...` — first line of every
/// report, so any CSV can be traced to its exact run configuration.
pub fn csv_preamble(cfg: &RunConfig) -> String {
    format!(
        "# seed={} schema_version={} config_hash={}\n",
        cfg.seed,
        CSV_SCHEMA_VERSION,
        cfg.config_hash()
    )
}

fn csv_document(cfg: &RunConfig, header: &str, rows: Vec<String>) -> String {
    let mut doc = csv_preamble(cfg);
    doc.push_str(header);
    doc.push('\n');
    for row in rows {
        doc.push_str(&row);
        doc.push('\n');
    }
    doc
}

fn check_omegas(list: &[f64], what: &str) -> Result<()> {
    if list.is_empty() {
        return Err(Error::Config(format!("{what}: empty guidance list")));
    }
    for &w in list {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Config(format!(
                "{what}: guidance scales must be finite and >= 0, got {w}"
            )));
        }
    }
    Ok(())
}

/// Reconstruction quality over the (ω_enc, ω_dec) grid: invert each test
/// input at ω_enc, sample back at ω_dec with the input's own class
/// embedding, and report the mean MSE (and its PSNR) per cell.
pub fn run_grid_experiment(
    cfg: &RunConfig,
    model: &DenoiserModel,
    omegas_enc: &[f64],
    omegas_dec: &[f64],
    n_inputs: usize,
) -> Result<String> {
    check_omegas(omegas_enc, "grid")?;
    check_omegas(omegas_dec, "grid")?;
    let sched = cfg.noise_schedule()?;
    let steps = cfg.ddim_steps()?;
    let inputs = test_set(cfg, n_inputs)?;

    let mut cells = vec![vec![0.0f64; omegas_dec.len()]; omegas_enc.len()];
    for (x, label) in &inputs {
        let c = model.embedding(Some(*label))?.to_vec();
        let z0 = encode(x);
        for (ei, &omega_enc) in omegas_enc.iter().enumerate() {
            let traj = invert_trajectory(&z0, &c, omega_enc, &steps, &sched, model)?;
            let conds = vec![c.clone(); steps.start_index()];
            for (di, &omega_dec) in omegas_dec.iter().enumerate() {
                let back = sample_trajectory(
                    traj.final_latent(),
                    &conds,
                    omega_dec,
                    &steps,
                    &sched,
                    model,
                )?;
                cells[ei][di] += mse(x, back.final_latent());
            }
        }
    }

    let n = inputs.len() as f64;
    let mut rows = Vec::with_capacity(omegas_enc.len() * omegas_dec.len());
    for (ei, &omega_enc) in omegas_enc.iter().enumerate() {
        for (di, &omega_dec) in omegas_dec.iter().enumerate() {
            let cell_mse = cells[ei][di] / n;
            let psnr_db = psnr_of_mse(cell_mse, DEFAULT_PSNR_MAX);
            rows.push(format!("{omega_enc},{omega_dec},{cell_mse},{psnr_db}"));
        }
    }
    Ok(csv_document(cfg, "omega_enc,omega_dec,mse,psnr_db", rows))
}

/// Reconstruction benchmark: plain DDIM (at the configured guidance) versus
/// the two optimizing methods over every `(N, beta)` setting. All methods
/// share the unguided inversion trajectory of each input. SSIM is reported
/// for the image-shaped shapes dataset and left empty otherwise.
pub fn run_inversion_bench(
    cfg: &RunConfig,
    model: &DenoiserModel,
    methods: &[BenchMethod],
    ns: &[usize],
    betas: &[f64],
    n_inputs: usize,
) -> Result<String> {
    if methods.is_empty() {
        return Err(Error::Config("bench: empty method list".into()));
    }
    let tuned = methods.iter().any(|m| *m != BenchMethod::Ddim);
    if tuned {
        if ns.is_empty() || betas.is_empty() {
            return Err(Error::Config("bench: empty N or beta list".into()));
        }
        if ns.contains(&0) {
            return Err(Error::Config("bench: N must be >= 1".into()));
        }
        for &b in betas {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::Config(format!(
                    "bench: beta must be finite and >= 0, got {b}"
                )));
            }
        }
    }
    let sched = cfg.noise_schedule()?;
    let steps = cfg.ddim_steps()?;
    let inputs = test_set(cfg, n_inputs)?;
    let omega = cfg.pti.omega;
    let image_shaped = matches!(cfg.data_spec()?, DataSpec::Shapes(_));

    // Row layout: per method, the ddim row is single; nti/pti expand over
    // (N, beta) in list order.
    struct RowAcc {
        label: String,
        n_iters: Option<usize>,
        beta: Option<f64>,
        mse_sum: f64,
        ssim_sum: f64,
    }
    let mut rows: Vec<RowAcc> = Vec::new();
    let mut settings: Vec<(BenchMethod, Option<(usize, f64)>)> = Vec::new();
    for &method in methods {
        match method {
            BenchMethod::Ddim => {
                settings.push((method, None));
                rows.push(RowAcc {
                    label: method.to_string(),
                    n_iters: None,
                    beta: None,
                    mse_sum: 0.0,
                    ssim_sum: 0.0,
                });
            }
            BenchMethod::Nti | BenchMethod::Pti => {
                for &n in ns {
                    for &beta in betas {
                        settings.push((method, Some((n, beta))));
                        rows.push(RowAcc {
                            label: method.to_string(),
                            n_iters: Some(n),
                            beta: Some(beta),
                            mse_sum: 0.0,
                            ssim_sum: 0.0,
                        });
                    }
                }
            }
        }
    }

    for (x, label) in &inputs {
        let c = model.embedding(Some(*label))?.to_vec();
        let z0 = encode(x);
        // Unguided inversion does not depend on method, N, or beta.
        let traj = invert_trajectory(&z0, &c, 0.0, &steps, &sched, model)?;
        for (row, (method, setting)) in rows.iter_mut().zip(&settings) {
            let recon = match (method, setting) {
                (BenchMethod::Ddim, _) => {
                    ddim_reconstruct(&z0, &c, 0.0, omega, &steps, &sched, model)?
                }
                (BenchMethod::Pti, Some((n, beta))) => {
                    let pcfg = PtiConfig {
                        omega,
                        beta: *beta,
                        n_iters: *n,
                    };
                    pti_over_trajectory(&traj, &c, &pcfg, &steps, &sched, model)?.recon
                }
                (BenchMethod::Nti, Some((n, beta))) => {
                    let pcfg = PtiConfig {
                        omega,
                        beta: *beta,
                        n_iters: *n,
                    };
                    nti_over_trajectory(
                        &traj,
                        &c,
                        model.null_embedding(),
                        &pcfg,
                        &steps,
                        &sched,
                        model,
                    )?
                    .recon
                }
                _ => unreachable!("tuned methods always carry a setting"),
            };
            row.mse_sum += mse(x, &recon);
            if image_shaped {
                row.ssim_sum += ssim(x, &recon, DEFAULT_PSNR_MAX)?;
            }
        }
    }

    let n = inputs.len() as f64;
    let lines = rows
        .iter()
        .map(|row| {
            let row_mse = row.mse_sum / n;
            let psnr_db = psnr_of_mse(row_mse, DEFAULT_PSNR_MAX);
            let n_iters = row.n_iters.map(|v| v.to_string()).unwrap_or_default();
            let beta = row.beta.map(|v| v.to_string()).unwrap_or_default();
            let ssim_cell = if image_shaped {
                (row.ssim_sum / n).to_string()
            } else {
                String::new()
            };
            format!(
                "{},{},{},{},{},{}",
                row.label, n_iters, beta, row_mse, psnr_db, ssim_cell
            )
        })
        .collect();
    Ok(csv_document(
        cfg,
        "method,n_iters,beta,mse,psnr_db,ssim",
        lines,
    ))
}

/// Edit-strength sweep for the tuned editor and both baselines, one row per
/// `(method, eta)`. The DDIM-Edit baseline has no strength knob; its single
/// operating point is replicated across `etas` so curves stay comparable
/// row-for-row.
pub fn run_tradeoff(
    cfg: &RunConfig,
    model: &DenoiserModel,
    etas: &[f64],
    n_inputs: usize,
) -> Result<String> {
    if etas.is_empty() {
        return Err(Error::Config("tradeoff: empty eta list".into()));
    }
    for &eta in etas {
        if !(eta >= 0.0 && eta <= 1.0) {
            return Err(Error::Config(format!(
                "tradeoff: eta must lie in [0, 1], got {eta}"
            )));
        }
    }
    let mix = require_mixture(cfg)?;
    let sched = cfg.noise_schedule()?;
    let steps = cfg.ddim_steps()?;
    let inputs = edit_inputs(cfg, n_inputs)?;
    let target = cfg.edit.target_class;
    let omega = cfg.pti.omega;
    let n = inputs.len() as f64;

    let mut rows = Vec::with_capacity(3 * etas.len());

    let points = tradeoff_sweep(&inputs, etas, target, &cfg.pti, &mix, &steps, &sched, model)?;
    for p in &points {
        rows.push(format!(
            "pti,{},{},{},{}",
            p.eta, p.alignment_nll, p.fidelity_l2, p.n_inputs
        ));
    }

    let mut ddim_nll = 0.0;
    let mut ddim_l2 = 0.0;
    for x in &inputs {
        let edited = edit_ddim(x, target, omega, &steps, &sched, model)?;
        ddim_nll += alignment_nll(&mix, &edited, target)?;
        ddim_l2 += l2_dist(&edited, x);
    }
    for &eta in etas {
        rows.push(format!(
            "ddim-edit,{},{},{},{}",
            eta,
            ddim_nll / n,
            ddim_l2 / n,
            inputs.len()
        ));
    }

    for &eta in etas {
        let mut nll = 0.0;
        let mut l2 = 0.0;
        for x in &inputs {
            let edited = edit_latent_interp(x, target, eta, omega, &steps, &sched, model)?;
            nll += alignment_nll(&mix, &edited, target)?;
            l2 += l2_dist(&edited, x);
        }
        rows.push(format!(
            "latent-interp,{eta},{},{},{}",
            nll / n,
            l2 / n,
            inputs.len()
        ));
    }

    Ok(csv_document(
        cfg,
        "method,eta,alignment_nll,fidelity_l2,n_inputs",
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetConfig, ShapesSection};

    /// A cheap random-weight model matching the default mixture config; the
    /// runners' plumbing properties (determinism, schema, validation) do not
    /// need a trained model.
    fn untrained_model(cfg: &RunConfig) -> DenoiserModel {
        DenoiserModel::init(
            cfg.denoiser_config(),
            &mut Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TRAIN)),
        )
        .unwrap()
    }

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.ddim.steps = 10;
        cfg.model.hidden = 16;
        cfg.model.cond_dim = 4;
        cfg
    }

    #[test]
    fn seed_streams_are_independent_and_deterministic() {
        let cfg = RunConfig::default();
        let a = test_set(&cfg, 8).unwrap();
        let b = test_set(&cfg, 8).unwrap();
        assert_eq!(a, b);
        let train = training_data(&cfg).unwrap();
        // Different streams: the first test point is not the first training
        // point.
        assert_ne!(a[0].0, train[0].0);
        let mut other = cfg.clone();
        other.seed = 18;
        assert_ne!(test_set(&other, 8).unwrap()[0].0, a[0].0);
    }

    #[test]
    fn edit_inputs_come_from_the_source_class() {
        let cfg = RunConfig::default();
        let inputs = edit_inputs(&cfg, 32).unwrap();
        assert_eq!(inputs.len(), 32);
        let DataSpec::Mixture(mix) = cfg.data_spec().unwrap() else {
            panic!("default is mixture");
        };
        let source_mean = mix.mean(cfg.edit.source_class);
        for x in &inputs {
            assert!(l2_dist(x, source_mean) < 6.0 * mix.sigma());
        }
    }

    #[test]
    fn preamble_records_seed_schema_and_hash() {
        let cfg = RunConfig::default();
        let line = csv_preamble(&cfg);
        assert!(line.starts_with("# "));
        assert!(line.contains("seed=17"));
        assert!(line.contains("schema_version=1"));
        assert!(line.contains(&format!("config_hash={}", cfg.config_hash())));
    }

    #[test]
    fn grid_output_is_deterministic_with_exact_schema() {
        let cfg = small_cfg();
        let model = untrained_model(&cfg);
        let a = run_grid_experiment(&cfg, &model, &[0.0, 1.0], &[0.0, 1.0], 4).unwrap();
        let b = run_grid_experiment(&cfg, &model, &[0.0, 1.0], &[0.0, 1.0], 4).unwrap();
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert!(lines.next().unwrap().starts_with("# seed="));
        assert_eq!(lines.next().unwrap(), "omega_enc,omega_dec,mse,psnr_db");
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn bench_output_schema_and_validation() {
        let cfg = small_cfg();
        let model = untrained_model(&cfg);
        let methods = [BenchMethod::Ddim, BenchMethod::Pti, BenchMethod::Nti];
        let doc = run_inversion_bench(&cfg, &model, &methods, &[1, 2], &[0.1], 3).unwrap();
        let mut lines = doc.lines();
        assert!(lines.next().unwrap().starts_with("# seed="));
        assert_eq!(
            lines.next().unwrap(),
            "method,n_iters,beta,mse,psnr_db,ssim"
        );
        let rows: Vec<&str> = lines.collect();
        // 1 ddim row + 2 settings each for pti and nti.
        assert_eq!(rows.len(), 5);
        assert!(rows[0].starts_with("ddim,,,"));
        assert!(rows[0].ends_with(','), "mixture rows leave ssim empty");
        assert!(rows[1].starts_with("pti,1,0.1,"));
        assert!(rows[3].starts_with("nti,1,0.1,"));

        let err = run_inversion_bench(&cfg, &model, &methods, &[0], &[0.1], 3).unwrap_err();
        assert_eq!(err.exit_code(), 1, "N = 0 is a config error");
        assert!(run_inversion_bench(&cfg, &model, &[], &[1], &[0.1], 3).is_err());
    }

    #[test]
    fn bench_fills_ssim_only_for_shapes() {
        let mut cfg = small_cfg();
        cfg.dataset = DatasetConfig::Shapes(ShapesSection {
            jitter: 1,
            n_train: 64,
        });
        let model = untrained_model(&cfg);
        let doc = run_inversion_bench(&cfg, &model, &[BenchMethod::Ddim], &[1], &[0.1], 2).unwrap();
        let row = doc.lines().nth(2).unwrap();
        let last = row.rsplit(',').next().unwrap();
        assert!(!last.is_empty());
        let val: f64 = last.parse().unwrap();
        assert!(val.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn tradeoff_needs_the_mixture_dataset() {
        let mut cfg = small_cfg();
        cfg.dataset = DatasetConfig::Shapes(ShapesSection {
            jitter: 1,
            n_train: 64,
        });
        let model = untrained_model(&cfg);
        assert!(run_tradeoff(&cfg, &model, &[0.5], 2).is_err());
    }

    #[test]
    fn tradeoff_rows_cover_all_methods_and_etas() {
        let cfg = small_cfg();
        let model = untrained_model(&cfg);
        let doc = run_tradeoff(&cfg, &model, &[0.0, 1.0], 2).unwrap();
        let a = run_tradeoff(&cfg, &model, &[0.0, 1.0], 2).unwrap();
        assert_eq!(doc, a);
        let mut lines = doc.lines();
        assert!(lines.next().unwrap().starts_with("# seed="));
        assert_eq!(
            lines.next().unwrap(),
            "method,eta,alignment_nll,fidelity_l2,n_inputs"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| r.starts_with("pti,")).count(), 2);
        assert_eq!(
            rows.iter().filter(|r| r.starts_with("ddim-edit,")).count(),
            2
        );
        assert_eq!(
            rows.iter()
                .filter(|r| r.starts_with("latent-interp,"))
                .count(),
            2
        );
        // Replicated baseline: identical metrics at both etas.
        let dd: Vec<&str> = rows
            .iter()
            .filter(|r| r.starts_with("ddim-edit,"))
            .copied()
            .collect();
        let metrics_of = |row: &str| {
            row.split(',')
                .skip(2)
                .map(str::to_string)
                .collect::<Vec<_>>()
        };
        assert_eq!(metrics_of(dd[0]), metrics_of(dd[1]));
    }

    #[test]
    fn method_names_parse_and_print() {
        for (s, m) in [
            ("ddim", BenchMethod::Ddim),
            ("nti", BenchMethod::Nti),
            ("pti", BenchMethod::Pti),
        ] {
            assert_eq!(BenchMethod::from_str(s).unwrap(), m);
            assert_eq!(m.to_string(), s);
        }
        assert!(BenchMethod::from_str("sgd").is_err());
    }

    #[test]
    fn training_pipeline_smoke() {
        let mut cfg = small_cfg();
        cfg.train.steps = 50;
        cfg.train.batch = 16;
        match &mut cfg.dataset {
            DatasetConfig::Mixture(m) => m.n_train = 256,
            _ => unreachable!(),
        }
        let (model, curve) = train_from_config(&cfg).unwrap();
        assert_eq!(curve.len(), 50);
        assert_eq!(model.config().hidden, 16);
        let (model2, curve2) = train_from_config(&cfg).unwrap();
        assert_eq!(model.w1, model2.w1);
        assert_eq!(curve, curve2);
    }
}
