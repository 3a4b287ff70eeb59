//! Command-line harness: dataset generation, training, the three inversion
//! methods, editing, and the experiment reports, all driven by one strict
//! JSON configuration.
//!
//! Exit codes: 0 on success, 1 for configuration problems, 2 for runtime
//! failures (I/O, corrupt checkpoints, numerical blow-ups).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use pti::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use pti::config::{DataSpec, RunConfig};
use pti::dataset::dataset_to_csv;
use pti::editor::{edit_with_pti, EditConfig};
use pti::experiments::{
    csv_preamble, edit_inputs, run_grid_experiment, run_inversion_bench, run_tradeoff,
    train_from_config, training_data, BenchMethod,
};
use pti::metrics::alignment_nll;
use pti::numerics::l2_dist;
use pti::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pti",
    version,
    about = "Toy diffusion laboratory: deterministic DDIM inversion, prompt tuning, and embedding-space editing"
)]
struct Cli {
    /// JSON run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the training dataset and write it to data.csv.
    GenData,
    /// Train the denoiser; writes checkpoint.json and loss_curve.csv.
    Train,
    /// Reconstruct a fixed test set with one method; writes inversion.csv.
    Invert {
        /// ddim, nti, or pti.
        #[arg(long, value_parser = BenchMethod::from_str)]
        method: BenchMethod,
        #[arg(long, default_value_t = 64)]
        n_inputs: usize,
    },
    /// Edit fixed source-class inputs toward a target class; writes edit.csv.
    Edit {
        /// Target class the edit pulls toward.
        #[arg(long)]
        target: usize,
        /// Edit strength in [0, 1].
        #[arg(long)]
        eta: f64,
        #[arg(long, default_value_t = 64)]
        n_inputs: usize,
    },
    /// Reconstruction quality over the (omega_enc, omega_dec) grid; writes grid.csv.
    Grid {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2.5,5")]
        omegas_enc: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2.5,5")]
        omegas_dec: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        n_inputs: usize,
    },
    /// Reconstruction benchmark over methods and (N, beta) settings; writes bench.csv.
    Bench {
        #[arg(long, value_delimiter = ',', value_parser = BenchMethod::from_str, default_value = "ddim,nti,pti")]
        methods: Vec<BenchMethod>,
        /// Descent iterations per step, for the tuned methods.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1")]
        betas: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        n_inputs: usize,
    },
    /// Editability/fidelity sweep over edit strengths; writes tradeoff.csv.
    Tradeoff {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
        )]
        etas: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        n_inputs: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Load the checkpoint the configuration points at and insist it matches
/// the configuration; experiments on a mismatched model would be
/// irreproducible from the config alone.
fn load_trained(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg.output_dir.join("checkpoint.json");
    let ckpt = load_checkpoint(&path).map_err(|e| match e {
        CheckpointError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Config(
            format!("no checkpoint at {}; run `pti train` first", path.display()),
        ),
        other => Error::from(other),
    })?;
    if *ckpt.model.config() != cfg.denoiser_config() {
        return Err(Error::Config(format!(
            "checkpoint at {} was trained with a different architecture than the configuration describes",
            path.display()
        )));
    }
    let sc = &cfg.schedule;
    if ckpt.sched.t_train() != sc.t_train
        || ckpt.sched.beta_start() != sc.beta_start
        || ckpt.sched.beta_end() != sc.beta_end
    {
        return Err(Error::Config(format!(
            "checkpoint at {} records a different noise schedule than the configuration",
            path.display()
        )));
    }
    Ok(ckpt)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let out = cfg.output_dir.clone();

    match cli.command {
        Command::GenData => {
            let data = training_data(&cfg)?;
            let mut doc = csv_preamble(&cfg);
            doc.push_str(&dataset_to_csv(&data));
            write_report(&out, "data.csv", &doc)
        }
        Command::Train => {
            let (model, curve) = train_from_config(&cfg)?;
            let sched = cfg.noise_schedule()?;
            let path = out.join("checkpoint.json");
            save_checkpoint(&path, &model, &sched, cfg.seed, cfg.train.steps)?;
            println!("wrote {}", path.display());
            let mut doc = csv_preamble(&cfg);
            doc.push_str("step,loss\n");
            for (i, loss) in curve.iter().enumerate() {
                doc.push_str(&format!("{},{loss}\n", i + 1));
            }
            write_report(&out, "loss_curve.csv", &doc)
        }
        Command::Invert { method, n_inputs } => {
            let ckpt = load_trained(&cfg)?;
            let doc = run_inversion_bench(
                &cfg,
                &ckpt.model,
                &[method],
                &[cfg.pti.n_iters],
                &[cfg.pti.beta],
                n_inputs,
            )?;
            write_report(&out, "inversion.csv", &doc)
        }
        Command::Edit {
            target,
            eta,
            n_inputs,
        } => {
            let ckpt = load_trained(&cfg)?;
            if target >= cfg.dataset.n_classes() {
                return Err(Error::Config(format!(
                    "edit: target class {target} out of range (dataset has {} classes)",
                    cfg.dataset.n_classes()
                )));
            }
            if target == cfg.edit.source_class {
                return Err(Error::Config(
                    "edit: target class equals the configured source class".into(),
                ));
            }
            let edit_cfg = EditConfig {
                eta,
                target_class: target,
                pti: cfg.pti.clone(),
            };
            edit_cfg.validate()?;
            let inputs = edit_inputs(&cfg, n_inputs)?;
            let sched = cfg.noise_schedule()?;
            let steps = cfg.ddim_steps()?;
            let mix = match cfg.data_spec()? {
                DataSpec::Mixture(m) => Some(m),
                DataSpec::Shapes(_) => None,
            };
            let mut nll_sum = 0.0;
            let mut l2_sum = 0.0;
            for x in &inputs {
                let edited = edit_with_pti(x, &edit_cfg, &steps, &sched, &ckpt.model)?;
                if let Some(mix) = &mix {
                    nll_sum += alignment_nll(mix, &edited, target)?;
                }
                l2_sum += l2_dist(&edited, x);
            }
            let n = inputs.len() as f64;
            let alignment = match &mix {
                Some(_) => (nll_sum / n).to_string(),
                None => String::new(),
            };
            let mut doc = csv_preamble(&cfg);
            doc.push_str("eta,alignment_nll,fidelity_l2,n_inputs\n");
            doc.push_str(&format!(
                "{eta},{alignment},{},{}\n",
                l2_sum / n,
                inputs.len()
            ));
            write_report(&out, "edit.csv", &doc)
        }
        Command::Grid {
            omegas_enc,
            omegas_dec,
            n_inputs,
        } => {
            let ckpt = load_trained(&cfg)?;
            let doc = run_grid_experiment(&cfg, &ckpt.model, &omegas_enc, &omegas_dec, n_inputs)?;
            write_report(&out, "grid.csv", &doc)
        }
        Command::Bench {
            methods,
            ns,
            betas,
            n_inputs,
        } => {
            let ckpt = load_trained(&cfg)?;
            let doc = run_inversion_bench(&cfg, &ckpt.model, &methods, &ns, &betas, n_inputs)?;
            write_report(&out, "bench.csv", &doc)
        }
        Command::Tradeoff { etas, n_inputs } => {
            let ckpt = load_trained(&cfg)?;
            let doc = run_tradeoff(&cfg, &ckpt.model, &etas, n_inputs)?;
            write_report(&out, "tradeoff.csv", &doc)
        }
    }
}
