//! `conforge`: train, sample and evaluate an equivariant conformer
//! diffusion model, generate the synthetic corpus, and run the built-in
//! verification battery.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conforge_core::datakit::ToySpec;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "conforge", version, about = "Equivariant diffusion over molecular conformations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-mode conformer corpus.
    GenData {
        /// Output dataset file (line-delimited records).
        #[arg(long)]
        out: PathBuf,
        /// Optional sidecar with the torsion-mode label of every conformer.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        molecules: usize,
        #[arg(long, default_value_t = 5)]
        conformers: usize,
        /// Isotropic coordinate jitter around each mode.
        #[arg(long, default_value_t = 0.05)]
        jitter: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the denoiser; writes checkpoint, loss log and manifest.
    Train {
        /// Training dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint, log, config and manifest.
        #[arg(long)]
        out_dir: PathBuf,
        /// Optional TOML run config; explicit flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Sample conformer ensembles for every molecule in a graph file.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file providing the molecular graphs.
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, default_value_t = 10)]
        num_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coverage and matching metrics of generated against reference sets.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Coverage threshold, same unit as the coordinates.
        #[arg(long)]
        delta: f64,
        /// Report prefix; writes <prefix>.csv and <prefix>.json.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Run the verification battery and print a pass/fail ledger.
    Verify {
        /// Full trial counts instead of the quick battery.
        #[arg(long)]
        thorough: bool,
    },
}

/// Flags mirroring the run-config fields; an explicit flag beats the file.
#[derive(Args)]
struct ConfigOverrides {
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut RunConfig) -> conforge_core::Result<()> {
        if let Some(s) = &self.schedule {
            cfg.schedule = s.clone();
        }
        if let Some(o) = &self.objective {
            cfg.objective = serde_json::from_value(serde_json::Value::String(o.clone()))
                .map_err(|_| conforge_core::Error::invalid(format!("unknown objective '{o}'")))?;
        }
        if let Some(w) = &self.weighting {
            cfg.weighting = serde_json::from_value(serde_json::Value::String(w.clone()))
                .map_err(|_| conforge_core::Error::invalid(format!("unknown weighting '{w}'")))?;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> conforge_core::Result<bool> {
    match cli.command {
        Command::GenData { out, labels, molecules, conformers, jitter, seed } => {
            let spec = ToySpec {
                num_molecules: molecules,
                conformers_per_molecule: conformers,
                jitter,
                seed,
                ..Default::default()
            };
            commands::cmd_gen_data(&out, labels.as_deref(), &spec)?;
            Ok(true)
        }
        Command::Train { data, out_dir, config, resume, overrides } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            overrides.apply(&mut cfg)?;
            commands::cmd_train(&cfg, &data, &out_dir, resume.as_deref())?;
            Ok(true)
        }
        Command::Sample { checkpoint, graphs, num_samples, seed, out } => {
            commands::cmd_sample(&checkpoint, &graphs, num_samples, seed, &out)?;
            Ok(true)
        }
        Command::Eval { generated, reference, delta, out_prefix } => {
            commands::cmd_eval(&generated, &reference, delta, &out_prefix)?;
            Ok(true)
        }
        Command::Verify { thorough } => commands::cmd_verify(thorough),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
