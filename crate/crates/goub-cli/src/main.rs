use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use goub_cli::commands;
use goub_cli::config::RunConfig;
use goub_core::error::Error;

#[derive(Parser)]
#[command(name = "goub", about = "Bridge-diffusion toolbox: verification suites, training, \
sampling, restoration and bridge comparison", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Key=value config file; missing keys fall back to built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for reports and artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Per-key overrides, e.g. --set schedule.steps=50 (repeatable).
    #[arg(long = "set", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the formula-identity check suites and write report.csv.
    Verify,
    /// Train the noise predictor on the configured toy task.
    Train,
    /// Draw reverse-sampler outputs from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Restore held-out test images (or provided PGMs) from a checkpoint.
    Restore {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input PGM files; defaults to the task's synthetic test split.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Train and evaluate the three bridges with shared hyperparameters.
    CompareBridges,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Checkpoint(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let mut config = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    let out = &cli.out;
    match cli.command {
        Command::Verify => {
            let all_pass = commands::cmd_verify(&config, out)?;
            let report = out.join("report.csv");
            if all_pass {
                println!("verify: all checks passed ({})", report.display());
                Ok(0)
            } else {
                let text = std::fs::read_to_string(&report)?;
                eprintln!("verify: FAILED checks:");
                for line in text.lines().filter(|l| l.ends_with(",false")) {
                    eprintln!("  {line}");
                }
                Ok(1)
            }
        }
        Command::Train => {
            let artifacts = commands::cmd_train(&config, out)?;
            println!("train: wrote {}", artifacts.checkpoint.display());
            Ok(0)
        }
        Command::Sample { checkpoint } => {
            let ckpt = checkpoint.unwrap_or_else(|| out.join("checkpoint.bin"));
            commands::cmd_sample(&config, out, &ckpt)?;
            println!("sample: wrote outputs to {}", out.display());
            Ok(0)
        }
        Command::Restore { checkpoint, inputs } => {
            let ckpt = checkpoint.unwrap_or_else(|| out.join("checkpoint.bin"));
            let outcome = commands::cmd_restore(&config, out, &ckpt, &inputs)?;
            println!(
                "restore: mean psnr {:.2} dB (inputs {:.2} dB), mean ssim {:.4}",
                outcome.mean_psnr_restored, outcome.mean_psnr_input, outcome.mean_ssim_restored
            );
            Ok(0)
        }
        Command::CompareBridges => {
            let cmp = commands::cmd_compare_bridges(&config, out)?;
            for (name, p, s) in &cmp.rows {
                println!("{name}: psnr {p:.2} dB, ssim {s:.4}");
            }
            if cmp.expected_direction {
                println!("compare-bridges: expected direction holds");
                Ok(0)
            } else {
                eprintln!("compare-bridges: UNEXPECTED direction (see bridges.csv)");
                Ok(1)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
