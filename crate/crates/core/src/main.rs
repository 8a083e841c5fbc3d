use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use vizpipe::numfmt::percent;
use vizpipe::pipeline::{self, FitArgs, StageError};

/// Render tabular records as images and classify them with a CNN.
#[derive(Parser, Debug)]
#[command(name = "vizpipe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit cleaning, encoding and layout on a training CSV; write the sidecar.
    Fit {
        train_csv: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// TOML with [cleaning] and [correlation] tables.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// The CSV starts with a header row.
        #[arg(long)]
        header: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a CSV into a tensor archive using a fitted sidecar.
    Render {
        csv: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write one PNG per record.
        #[arg(long)]
        png: bool,
        #[arg(long)]
        header: bool,
    },
    /// Train a CNN on a tensor archive; write a checkpoint.
    Train {
        archive: PathBuf,
        /// TOML CNN configuration; defaults to a stack sized for the images.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled tensor archive.
    Eval {
        archive: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for report.txt, report.csv and confusion.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict classes for a CSV.
    Predict {
        csv: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        header: bool,
    },
    /// Generate a seeded synthetic dataset (train.csv, test.csv, schema.txt).
    Synth {
        /// TOML generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> Result<(), StageError> {
    match cmd {
        Command::Fit {
            train_csv,
            schema,
            policy,
            seed,
            header,
            out,
        } => {
            let s = pipeline::cmd_fit(&FitArgs {
                train_csv: &train_csv,
                schema: &schema,
                policy: policy.as_deref(),
                seed,
                header,
                out: &out,
            })?;
            info!(
                "kept {} attributes, {} channels, grid {}x{}",
                s.encoder.num_attributes(),
                s.encoder.num_channels(),
                s.layout.height(),
                s.layout.width()
            );
        }
        Command::Render {
            csv,
            sidecar,
            out,
            png,
            header,
        } => {
            let a = pipeline::cmd_render(&csv, &sidecar, &out, png, header)?;
            info!("rendered {} images", a.images.len());
        }
        Command::Train {
            archive,
            config,
            seed,
            out,
        } => {
            let m = pipeline::cmd_train(&archive, config.as_deref(), seed, &out)?;
            if let Some(loss) = m.final_loss() {
                info!("trained {} epochs, final loss {loss:.6}", m.epochs_run());
            }
        }
        Command::Eval {
            archive,
            checkpoint,
            out,
        } => {
            let r = pipeline::cmd_eval(&archive, &checkpoint, &out)?;
            for c in &r.classes {
                println!("{} {}", c.label, percent(c.recall));
            }
        }
        Command::Predict {
            csv,
            sidecar,
            checkpoint,
            out,
            header,
        } => {
            let n = pipeline::cmd_predict(&csv, &sidecar, &checkpoint, &out, header)?;
            info!("wrote {n} predictions");
        }
        Command::Synth { config, seed, out } => {
            pipeline::cmd_synth(config.as_deref(), seed, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
