use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use segrl::provider::{serve_oracle, OracleProvider};
use segrl::train::experiments::{kl_study, run_ablation, Study};
use segrl::train::{
    evaluate, evaluate_checkpoint, gen_dataset, load_dataset, reward_check, Checkpoint, Split, TrainConfig, TrainError,
    Trainer,
};

#[derive(Parser)]
#[command(
    name = "segrl",
    version,
    about = "Train and evaluate box-and-point segmentation policies with GRPO"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes metrics.jsonl and checkpoint.json into --out.
    Train {
        #[arg(long, conflicts_with = "resume", required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Continue from a checkpoint; its embedded config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy-decode a checkpoint over a dataset split and report gIoU/cIoU.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the dataset the checkpoint's config generates.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        split: String,
    },
    /// Score one response text against one task file.
    RewardCheck {
        #[arg(long)]
        response: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a task dataset with a train/eval manifest.
    GenDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Serve the oracle segmenter over the line protocol for a dataset's scenes.
    ServeOracle {
        #[arg(long)]
        dataset: PathBuf,
        /// Listen on this TCP address instead of stdin/stdout.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run an ablation study across seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// components or thresholds
        #[arg(long)]
        study: String,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train with and without the KL penalty and flag reward collapses.
    KlStudy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, TrainError> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), TrainError> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(TrainError::io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| TrainError::Numeric(e.to_string()))?;
    emit(&(text + "\n"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| TrainError::Numeric(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| TrainError::io(path, e))
}

fn run(cli: Cli) -> Result<(), TrainError> {
    match cli.command {
        Command::Train { config, resume, out } => {
            let mut trainer = match (config, resume) {
                (_, Some(ckpt)) => Trainer::from_checkpoint(Checkpoint::load(&ckpt)?)?,
                (Some(cfg), None) => Trainer::new(TrainConfig::load(&cfg)?)?,
                (None, None) => unreachable!("clap requires one of --config/--resume"),
            };
            let ckpt = trainer.run(&out)?;
            let report = evaluate(
                trainer.policy(),
                &trainer.config().policy,
                &trainer.dataset().eval,
                trainer.provider(),
            )?;
            print_json(&serde_json::json!({
                "checkpoint": ckpt,
                "iterations": trainer.iteration(),
                "eval": report,
            }))
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
        } => {
            let split: Split = split.parse()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let report = match dataset {
                Some(dir) => evaluate_checkpoint(&ckpt, &dir, split)?,
                None => {
                    let data = segrl::train::dataset::dataset_for(&ckpt.config)?;
                    let provider = ckpt
                        .config
                        .provider
                        .build()
                        .map_err(|e| TrainError::Config(e.to_string()))?;
                    evaluate(&ckpt.policy, &ckpt.config.policy, data.split(split), provider.as_ref())?
                }
            };
            print_json(&report)
        }
        Command::RewardCheck { response, task, config } => {
            let cfg = load_config(config.as_deref())?;
            print_json(&reward_check(&response, &task, &cfg)?)
        }
        Command::GenDataset { config, out, force } => {
            let cfg = load_config(config.as_deref())?;
            let m = gen_dataset(&cfg, &out, force)?;
            let train = m.tasks.iter().filter(|t| t.split == Split::Train).count();
            print_json(&serde_json::json!({
                "out": out,
                "tasks": m.tasks.len(),
                "train": train,
                "eval": m.tasks.len() - train,
            }))
        }
        Command::ServeOracle { dataset, listen } => {
            let data = load_dataset(&dataset)?;
            let mut oracle = OracleProvider::new();
            for t in data.train.into_iter().chain(data.eval) {
                oracle.register(t.id, t.scene);
            }
            let oracle = Arc::new(oracle);
            match listen {
                None => {
                    serve_oracle(io::stdin().lock(), io::stdout().lock(), &oracle)
                        .map_err(|e| TrainError::io(Path::new("<stdio>"), e))?;
                }
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).map_err(|e| TrainError::io(Path::new(&addr), e))?;
                    eprintln!(
                        "serving on {}",
                        listener.local_addr().map_err(|e| TrainError::io(Path::new(&addr), e))?
                    );
                    for stream in listener.incoming() {
                        let Ok(stream) = stream else { continue };
                        let oracle = Arc::clone(&oracle);
                        std::thread::spawn(move || {
                            if let Ok(read) = stream.try_clone() {
                                let _ = serve_oracle(BufReader::new(read), stream, &oracle);
                            }
                        });
                    }
                }
            }
            Ok(())
        }
        Command::Ablate {
            config,
            study,
            seeds,
            out,
        } => {
            let study: Study = study.parse()?;
            let cfg = load_config(config.as_deref())?;
            let report = run_ablation(study, &cfg, &seeds)?;
            emit(&report.render())?;
            match out {
                Some(p) => write_json(&p, &report),
                None => Ok(()),
            }
        }
        Command::KlStudy { config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            let report = kl_study(&cfg, seed)?;
            emit(&report.render())?;
            match out {
                Some(p) => write_json(&p, &report),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
