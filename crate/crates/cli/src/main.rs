use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hoisynth_cli::{
    cmd_ablate, cmd_datagen, cmd_evaluate, cmd_generate, cmd_train_anchor, cmd_train_contactdm,
    CliError, SourceSpec,
};
use hoisynth_core::config::{Profile, RunConfig};

/// Two-stage 4D human-object interaction synthesis pipeline.
#[derive(Parser)]
#[command(name = "hoisynth", version, about)]
struct Cli {
    /// Key-value config file applied over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base profile: desk (default) or paper.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Override a single config key, e.g. --set latent=32 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Datagen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the Stage-1 keyframe recovery network.
    TrainAnchor {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from an existing checkpoint at --out.
        #[arg(long)]
        resume: bool,
    },
    /// Train the Stage-2 diffusion model.
    TrainContactdm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
    },
    /// Generate a sequence for a source human track and target object.
    Generate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        dm: PathBuf,
        /// Human motion source: train:IDX, test:IDX, or holdout:IDX.
        #[arg(long)]
        source: String,
        /// Target object id (defaults to the source sequence's object).
        #[arg(long)]
        object: Option<String>,
        /// Prompt override.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-frame CSV for plotting.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate predicted sequences against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the keyframe-count and conditioning ablation sweeps.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint (trained here if missing).
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Test sequences evaluated per variant.
        #[arg(long, default_value_t = 16)]
        eval_limit: usize,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match cli.profile.as_deref() {
        None | Some("desk") => RunConfig::for_profile(Profile::Desk),
        Some("paper") => RunConfig::for_profile(Profile::Paper),
        Some(other) => {
            return Err(CliError::Config(format!("unknown profile '{other}'")));
        }
    };
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path, base)?,
        None => base,
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            CliError::Config(format!("override '{kv}' must be KEY=VALUE"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Datagen { out } => {
            let summary = cmd_datagen(&cfg, out)?;
            println!(
                "dataset written to {}: {} train / {} test / {} unseen-holdout sequences",
                out.display(),
                summary.train,
                summary.test,
                summary.holdout
            );
            println!("seen objects: {}", summary.seen_objects.join(", "));
            println!("unseen objects: {}", summary.unseen_objects.join(", "));
        }
        Command::TrainAnchor { data, out, log, resume } => {
            let rows = cmd_train_anchor(&cfg, data, out, log.as_deref(), *resume)?;
            if let Some(last) = rows.last() {
                println!(
                    "stage 1 trained to step {}: loss_center {:.6}, loss_offset {:.6}",
                    last.step, last.loss_center, last.loss_offset
                );
            }
            println!("checkpoint: {}", out.display());
        }
        Command::TrainContactdm { data, out, log, resume } => {
            let rows = cmd_train_contactdm(&cfg, data, out, log.as_deref(), *resume)?;
            if let Some(last) = rows.last() {
                println!("stage 2 trained to step {}: loss {:.6}", last.step, last.loss);
            }
            println!("checkpoint: {}", out.display());
        }
        Command::Generate { data, anchor, dm, source, object, prompt, out, csv } => {
            let source = SourceSpec::parse(source)?;
            let outcome = cmd_generate(
                &cfg,
                data,
                anchor,
                dm,
                source,
                object.as_deref(),
                prompt.as_deref(),
                Some(out),
                csv.as_deref(),
            )?;
            println!(
                "generated {} frames for object '{}' (source id {}): {}",
                outcome.sequence.frame_count(),
                outcome.sequence.object_id,
                outcome.source_id,
                out.display()
            );
        }
        Command::Evaluate { pred, gt, out } => {
            let report = cmd_evaluate(&cfg, pred, gt, out)?;
            println!(
                "evaluated {} sequences; MPJPE {:.2} cm, Tobj {:.2} cm, C% {:.3}, FID {:.4}",
                report.per_sequence.len(),
                report.aggregate.mpjpe,
                report.aggregate.tobj,
                report.aggregate.cpct,
                report.fid
            );
            println!("reports in {}", out.display());
        }
        Command::Ablate { data, anchor, out, eval_limit } => {
            let rows = cmd_ablate(&cfg, data, anchor, out, *eval_limit)?;
            for row in &rows {
                match (&row.ok, &row.error) {
                    (true, _) => println!("[{}] {}: ok", row.table, row.variant),
                    (false, Some(e)) => println!("[{}] {}: FAILED ({e})", row.table, row.variant),
                    _ => {}
                }
            }
            println!("tables in {}", out.display());
        }
    }
    Ok(())
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
