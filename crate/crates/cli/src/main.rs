use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ovgt_cli::config::{Precision, RunConfig};
use ovgt_cli::harness::{
    ablate, all_parameters, build_model, evaluate, train, write_ablate_csv, write_loss_log,
    write_sweep_csv,
};
use ovgt_cli::{checkpoint, CliError};
use ovgt_core::dtype::Real;

#[derive(Parser)]
#[command(
    name = "ovgt",
    about = "Train and evaluate a multi-view geometry model with optional camera/depth injection on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic scenes and write a checkpoint plus a loss log
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss log CSV path (default: <out>.loss.csv)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint across the configured injection schedule
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, name = "out-dir")]
        out_dir: PathBuf,
    },
    /// Train every adapter variant under the same budget and compare
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a checkpoint's parameter table and zero-injection drift
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, log } => {
            let cfg = RunConfig::from_file(&config)?;
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(&cfg, &out, log),
                Precision::F64 => cmd_train::<f64>(&cfg, &out, log),
            }
        }
        Command::Eval {
            ckpt,
            config,
            out_dir,
        } => {
            let cfg = RunConfig::from_file(&config)?;
            match cfg.precision {
                Precision::F32 => cmd_eval::<f32>(&cfg, &ckpt, &out_dir),
                Precision::F64 => cmd_eval::<f64>(&cfg, &ckpt, &out_dir),
            }
        }
        Command::Ablate { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            match cfg.precision {
                Precision::F32 => cmd_ablate::<f32>(&cfg, &out),
                Precision::F64 => cmd_ablate::<f64>(&cfg, &out),
            }
        }
        Command::Inspect { ckpt } => {
            let bytes = std::fs::read(&ckpt)?;
            print!("{}", checkpoint::inspect(&bytes)?);
            Ok(())
        }
    }
}

fn cmd_train<T: Real>(
    cfg: &RunConfig,
    out: &PathBuf,
    log: Option<PathBuf>,
) -> Result<(), CliError> {
    let result = train::<T>(cfg, cfg.variant)?;
    let params = all_parameters(&result.model, &result.adapter);
    checkpoint::save(&params, out)?;
    let log_path = log.unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    write_loss_log(&result.log, &log_path)?;
    let first = result.log.first().map(|r| r.total).unwrap_or(0.0);
    let last = result.log.last().map(|r| r.total).unwrap_or(0.0);
    println!(
        "trained {} steps (variant {}): total loss {:.4} -> {:.4}",
        cfg.steps,
        cfg.variant.name(),
        first,
        last
    );
    println!("checkpoint: {}", out.display());
    println!("loss log:   {}", log_path.display());
    Ok(())
}

fn cmd_eval<T: Real>(
    cfg: &RunConfig,
    ckpt: &PathBuf,
    out_dir: &PathBuf,
) -> Result<(), CliError> {
    let (model, adapter) = build_model::<T>(cfg)?;
    let params = all_parameters(&model, &adapter);
    let bytes = std::fs::read(ckpt)?;
    checkpoint::load_into(&params, &bytes)?;

    let rows = evaluate(&model, &adapter, cfg)?;
    std::fs::create_dir_all(out_dir)?;
    for row in &rows {
        let path = out_dir.join(format!(
            "metrics_cam{:03}_depth{:03}.json",
            row.cam_pct, row.depth_pct
        ));
        std::fs::write(&path, serde_json::to_string_pretty(&row.report).unwrap())?;
    }
    write_sweep_csv(&rows, &out_dir.join("sweep.csv"))?;
    println!("cam% depth% mode    abs_rel  d<1.25   auc30");
    for row in &rows {
        println!(
            "{:>4} {:>6} {:<7} {:>8.4} {:>7.4} {:>7.4}",
            row.cam_pct,
            row.depth_pct,
            row.depth_mode,
            row.report.abs_rel,
            row.report.delta_125,
            row.report.auc30
        );
    }
    println!("wrote {} reports to {}", rows.len(), out_dir.display());
    Ok(())
}

fn cmd_ablate<T: Real>(cfg: &RunConfig, out: &PathBuf) -> Result<(), CliError> {
    let rows = ablate::<T>(cfg)?;
    write_ablate_csv(&rows, out)?;
    println!("variant          aux   abs_rel  d<1.25   auc30");
    for row in &rows {
        println!(
            "{:<16} {:<5} {:>8.4} {:>7.4} {:>7.4}",
            row.variant, row.aux, row.report.abs_rel, row.report.delta_125, row.report.auc30
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
