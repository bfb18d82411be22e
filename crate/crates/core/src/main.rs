use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmpa::cli;
use cmpa::data::SyntheticSpec;
use cmpa::Error;

/// Contrastive music performance assessment experiments.
#[derive(Parser)]
#[command(name = "cmpa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set loss.C=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Dataset manifest; overrides data.manifest from the config.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (default: $CMPA_OUT, else the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (f0 files + manifest).
    Synth {
        /// Number of recordings.
        #[arg(long, default_value_t = 120)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Contour length range in frames.
        #[arg(long, default_value_t = 600)]
        min_len: usize,
        #[arg(long, default_value_t = 2500)]
        max_len: usize,
        /// Std of Gaussian noise added to each rating.
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        /// Detuning range in semitones.
        #[arg(long, default_value_t = 0.0)]
        pitch_jitter_min: f64,
        #[arg(long, default_value_t = 2.2)]
        pitch_jitter_max: f64,
        /// Hesitation-gap level range.
        #[arg(long, default_value_t = 0.0)]
        gap_level_min: f64,
        #[arg(long, default_value_t = 0.12)]
        gap_level_max: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one run and write checkpoint + report.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training regime: baseline, two_step or joint.
        #[arg(long)]
        regime: Option<String>,
        /// Rating criterion: musicality, note_accuracy or rhythm_accuracy.
        #[arg(long)]
        criterion: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on its test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the test-set embedding table of a checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full regimes x criteria x seeds grid.
    RunMatrix {
        #[command(flatten)]
        config: ConfigArgs,
        /// Skip cells whose report.json already exists.
        #[arg(long)]
        resume: bool,
    },
    /// Render figures and data tables from a run-matrix directory.
    Report {
        /// Directory produced by run-matrix.
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Perplexity for the 2-D latent projection (capped by the test
        /// set size).
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 0)]
        projection_seed: u64,
    },
}

fn run(command: Command) -> cmpa::Result<()> {
    match command {
        Command::Synth {
            n,
            seed,
            min_len,
            max_len,
            noise_std,
            pitch_jitter_min,
            pitch_jitter_max,
            gap_level_min,
            gap_level_max,
            out,
        } => {
            let spec = SyntheticSpec {
                n_recordings: n,
                min_len,
                max_len,
                noise_std,
                pitch_jitter_min,
                pitch_jitter_max,
                gap_level_min,
                gap_level_max,
                seed,
                ..SyntheticSpec::default()
            };
            cli::cmd_synth(&spec, &cli::resolve_out_dir(out))
        }
        Command::Train {
            config,
            regime,
            criterion,
            seed,
        } => {
            let mut overrides = config.set.clone();
            if let Some(r) = regime {
                r.parse::<cmpa::config::Regime>()
                    .map_err(|e| Error::Usage(e.to_string()))?;
                overrides.push(format!("regime={r}"));
            }
            if let Some(c) = criterion {
                c.parse::<cmpa::data::Criterion>()
                    .map_err(|e| Error::Usage(e.to_string()))?;
                overrides.push(format!("criterion={c}"));
            }
            if let Some(s) = seed {
                overrides.push(format!("seed={s}"));
            }
            if config.config.is_none() && !overrides.iter().any(|o| o.starts_with("regime=")) {
                return Err(Error::Usage(
                    "train needs --config or --regime to pick a regime".into(),
                ));
            }
            cli::cmd_train(
                config.config.as_deref(),
                &overrides,
                config.manifest.as_deref(),
                &cli::resolve_out_dir(config.out),
            )
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            out,
        } => cli::cmd_evaluate(&checkpoint, manifest.as_deref(), &cli::resolve_out_dir(out)),
        Command::Embed {
            checkpoint,
            manifest,
            out,
        } => cli::cmd_embed(&checkpoint, manifest.as_deref(), &cli::resolve_out_dir(out)),
        Command::RunMatrix { config, resume } => cli::cmd_run_matrix(
            config.config.as_deref(),
            &config.set,
            config.manifest.as_deref(),
            &cli::resolve_out_dir(config.out),
            resume,
        ),
        Command::Report {
            matrix,
            out,
            perplexity,
            projection_seed,
        } => cli::cmd_report(
            &matrix,
            &cli::resolve_out_dir(out),
            perplexity,
            projection_seed,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are not errors.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
