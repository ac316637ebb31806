use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spangraph::commands::{
    cmd_evaluate, cmd_inspect, cmd_predict, cmd_synth, cmd_train, CommandError, RunConfig,
};
use spangraph::propagation::Mechanism;

#[derive(Parser)]
#[command(name = "spangraph", version, about = "Span-graph information extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Coref,
    Relation,
    Event,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Coref => Mechanism::Coref,
            MechanismArg::Relation => Mechanism::Relation,
            MechanismArg::Event => Mechanism::Event,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, history and config to --output.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a checkpoint on a gold corpus; prints metrics JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Also write the metrics JSON here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write predictions as jsonl.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Export propagation link strengths as CSV and DOT.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        mechanism: MechanismArg,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate synthetic train/dev/test splits.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig, CommandError> {
    let c = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(c.with_seed(seed))
}

fn write_file(path: &PathBuf, text: &str) -> Result<(), CommandError> {
    std::fs::write(path, text).map_err(|source| CommandError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Train {
            config,
            train,
            dev,
            seed,
            output,
        } => {
            let c = load_config(config.as_ref(), seed)?;
            let summary = cmd_train(&c, train.as_deref(), dev.as_deref(), &output, |r| {
                eprintln!(
                    "epoch {} lr {} train_loss {:.6} dev_loss {} dev_f1 {}",
                    r.epoch,
                    r.lr,
                    r.train_loss,
                    r.dev_loss.map_or("-".into(), |v| format!("{v:.6}")),
                    r.dev_f1.map_or("-".into(), |v| format!("{v:.4}")),
                );
            })?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": summary.checkpoint,
                    "history": summary.history,
                    "epochs": summary.epochs,
                    "best_epoch": summary.best_epoch,
                })
            );
        }
        Command::Evaluate {
            checkpoint,
            input,
            vectors,
            output,
        } => {
            let metrics = cmd_evaluate(&checkpoint, &input, vectors.as_deref())?;
            let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
            if let Some(p) = output {
                write_file(&p, &text)?;
            }
            println!("{text}");
        }
        Command::Predict {
            checkpoint,
            input,
            vectors,
            output,
        } => {
            let n = cmd_predict(&checkpoint, &input, &output, vectors.as_deref())?;
            println!("{}", serde_json::json!({ "documents": n, "output": output }));
        }
        Command::Inspect {
            checkpoint,
            input,
            mechanism,
            vectors,
            output,
        } => {
            let s = cmd_inspect(&checkpoint, &input, mechanism.into(), &output, vectors.as_deref())?;
            println!(
                "{}",
                serde_json::json!({ "rows": s.rows, "csv": s.csv, "dot": s.dot })
            );
        }
        Command::Synth { config, seed, output } => {
            let c = load_config(config.as_ref(), seed)?;
            let files = cmd_synth(&c.synth, &output)?;
            println!("{}", serde_json::json!({ "files": files }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let line = serde_json::json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
