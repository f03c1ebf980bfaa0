use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use transducer_cli::commands;
use transducer_cli::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "transducer", version, about = "Toy neural transducer pipeline (NT / FNT / IFNT)")]
struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a dotted config key, e.g. `--set train.steps=200` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate source and shifted target corpora.
    MakeData,
    /// Train a transducer, or an external LM with `model.arch=lm`.
    Train,
    /// Text-only adaptation of an FNT/IFNT vocabulary decoder.
    Adapt,
    /// Decode a manifest, optionally with shallow fusion.
    Decode,
    /// Score hypotheses (WER) and/or a model's LM (PPL).
    Eval,
    /// Average checkpoints.
    Average,
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = cli.out {
        overrides.push(format!("out_dir={:?}", out.display().to_string()));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::MakeData => {
            let s = commands::make_data(&cfg)?;
            println!(
                "wrote corpora to {} (vocab {}, mean row TV {:.3})",
                cfg.out_dir.display(),
                s.vocab_size,
                s.mean_row_tv
            );
        }
        Command::Train => {
            let s = commands::train_cmd(&cfg)?;
            println!(
                "trained {}: loss {:.4} -> {:.4}, final checkpoint {}",
                cfg.model.arch,
                s.first_j_f,
                s.last_j_f,
                s.final_checkpoint.display()
            );
        }
        Command::Adapt => {
            let s = commands::adapt_cmd(&cfg)?;
            println!(
                "adapted {} tensors ({} frozen): {}",
                s.trainable.len(),
                s.frozen.len(),
                s.checkpoint.display()
            );
        }
        Command::Decode => {
            let s = commands::decode_cmd(&cfg)?;
            println!("decoded {} utterances: {}", s.hypotheses.len(), s.hyp_file.display());
        }
        Command::Eval => {
            commands::eval_cmd(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.out_dir.join("report.txt"))?);
        }
        Command::Average => {
            let p = commands::average_cmd(&cfg)?;
            println!("averaged checkpoint: {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", transducer_cli::error_line(&e));
            ExitCode::FAILURE
        }
    }
}
