use std::path::PathBuf;
use std::process::ExitCode;

use argus3d::pipeline::{
    exit_code, init_threads, ConditionSpec, EvaluateRequest, Project, ProjectConfig, ReconstructRequest, Split,
    EXIT_USAGE, METRIC_NAMES,
};
use argus3d::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Two-stage tri-plane shape generation.
#[derive(Parser)]
#[command(name = "argus3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON project config; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set stage1.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the manifest and per-sample caches.
    Prepare(Common),
    /// Train the tri-plane autoencoder.
    TrainStage1(Common),
    /// Quantise every sample to codebook indices.
    EncodeDataset {
        #[command(flatten)]
        common: Common,
        /// Encode even if the stage-one IoU gate is closed.
        #[arg(long)]
        force: bool,
    },
    /// Train the autoregressive prior.
    TrainStage2(Common),
    /// Sample meshes from the prior.
    Sample {
        #[command(flatten)]
        common: Common,
        /// none, all-classes, class:<name|index> or embedding:<path>.
        #[arg(long)]
        condition: Option<String>,
        /// Shapes per condition (overrides sampling.count).
        #[arg(long)]
        count: Option<usize>,
        /// Marching-cubes resolution (overrides sampling.resolution).
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct samples through the autoencoder and report IoU.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Sample ids; the whole split when omitted.
        #[arg(long = "id")]
        ids: Vec<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
    },
    /// Score generated meshes against a reference split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        reference: SplitArg,
        /// Comma-separated subset of mmd,cov,1-nna,ecd,tmd.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn project(common: &Common, extra: Vec<String>) -> Result<Project> {
    let overrides: Vec<String> = common.overrides.iter().cloned().chain(extra).collect();
    Ok(Project::new(ProjectConfig::load(common.config.as_deref(), &overrides)?))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Prepare(c) => {
            let r = project(&c, vec![])?.prepare()?;
            println!(
                "{} samples ({} written, {} cached), {} failures",
                r.manifest.samples.len(),
                r.written,
                r.reused,
                r.manifest.failures.len()
            );
        }
        Command::TrainStage1(c) => {
            let r = project(&c, vec![])?.train_stage1()?;
            match r.final_val_iou {
                Some(v) => println!("validation IoU {v:.4}"),
                None => println!("no validation split"),
            }
        }
        Command::EncodeDataset { common, force } => {
            let s = project(&common, vec![])?.encode_dataset(force)?;
            println!("encoded {} sequences of {} tokens", s.sequences.len(), s.seq_len);
        }
        Command::TrainStage2(c) => {
            let r = project(&c, vec![])?.train_stage2()?;
            if let Some(nll) = r.final_nll {
                println!("final per-token NLL {nll:.4}");
            }
        }
        Command::Sample {
            common,
            condition,
            count,
            resolution,
            out,
        } => {
            let mut extra = Vec::new();
            if let Some(n) = count {
                extra.push(format!("sampling.count={n}"));
            }
            if let Some(r) = resolution {
                extra.push(format!("sampling.resolution={r}"));
            }
            let p = project(&common, extra)?;
            let spec = match condition {
                Some(s) => s.parse::<ConditionSpec>()?,
                None => p.default_condition(),
            };
            let records = p.sample(&spec, out.as_deref())?;
            for r in &records {
                println!("{} log p = {:.3}", r.id, r.log_prob);
            }
        }
        Command::Reconstruct {
            common,
            ids,
            split,
            resolution,
        } => {
            let r = project(&common, vec![])?.reconstruct(&ReconstructRequest {
                ids,
                split: split.into(),
                resolution,
            })?;
            for row in &r.rows {
                println!("{} {:.4}", row.id, row.iou);
            }
            println!("mean IoU {:.4}", r.mean_iou);
        }
        Command::Evaluate {
            common,
            generated,
            reference,
            metrics,
            out,
        } => {
            let metrics = if metrics.is_empty() {
                METRIC_NAMES.iter().map(|s| s.to_string()).collect()
            } else {
                metrics
            };
            let report = project(&common, vec![])?.evaluate(&EvaluateRequest {
                generated_dir: generated,
                reference_split: reference.into(),
                metrics,
                out_dir: out,
            })?;
            print!("{}", report.to_text_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
