use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmwave_usersel::experiment::{
    cmd_complexity, cmd_csi_sweep, cmd_eval_rate, cmd_gen_dataset, cmd_train, complexity_csv, csi_csv, emit,
    load_checkpoint, ExperimentConfig, ExperimentError,
};

/// CNN-based user selection for mmWave hybrid precoding.
#[derive(Debug, Parser)]
#[command(name = "usersel", version)]
struct Cli {
    /// key = value config file; defaults are the full-scale setup
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed (overrides `seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (overrides `out`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long, global = true)]
    force: bool,
    /// Extra config override, repeatable: --set key=value
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled dataset
    GenDataset,
    /// Train the CNN and write a checkpoint plus metrics CSV
    Train,
    /// Mean sum rate vs SNR for ES, BPSO, greedy and CNN
    EvalRate,
    /// CNN sum rate under imperfect CSI
    CsiSweep,
    /// Multiplication counts per method
    Complexity,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ExperimentError::Usage(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    let cfg = build_config(cli)?;
    match cli.command {
        Command::GenDataset => {
            let m = cmd_gen_dataset(&cfg, cli.force)?;
            eprintln!(
                "wrote {} samples ({} classes) to {}",
                m.header.n_samples,
                m.header.classes(),
                cfg.out.as_ref().unwrap_or(&cfg.dataset).display()
            );
        }
        Command::Train => {
            let summary = cmd_train(&cfg, cli.force, |m| {
                eprintln!(
                    "epoch {:>4}  loss {:.4}  train_acc {:.4}  test_acc {:.4}",
                    m.epoch, m.train_loss, m.train_acc, m.test_acc
                )
            })?;
            eprintln!("checkpoint: {}", summary.checkpoint.display());
            eprintln!("metrics: {}", summary.metrics_path.display());
        }
        Command::EvalRate => {
            let state = load_checkpoint(&cfg)?;
            let report = cmd_eval_rate(&cfg, &state)?;
            let bad = report.dominance_violations();
            if !bad.is_empty() {
                return Err(ExperimentError::Data(format!("{} draws where a method beat ES", bad.len())));
            }
            emit(cfg.out.as_deref(), &report.to_csv(&cfg), cli.force)?;
        }
        Command::CsiSweep => {
            let state = load_checkpoint(&cfg)?;
            let rows = cmd_csi_sweep(&cfg, &state)?;
            emit(cfg.out.as_deref(), &csi_csv(&cfg, &rows), cli.force)?;
        }
        Command::Complexity => {
            let rows = cmd_complexity(&cfg);
            for r in &rows {
                eprintln!("{:<7}{:>14}", r.method.name(), r.operations);
            }
            emit(cfg.out.as_deref(), &complexity_csv(&cfg, &rows), cli.force)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
