use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crossmodal::commands::{
    cmd_embed, cmd_evaluate, cmd_gen_synthetic, cmd_search, cmd_train, format_results, IMAGE_STEM,
};
use crossmodal::config::TrainConfig;
use crossmodal::datapipe::Split;
use crossmodal::kv::parse_assignment;
use crossmodal::train::TrainOptions;
use crossmodal::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "crossmodal", version, about = "Dual-encoder training and cross-modal retrieval")]
struct Cli {
    /// key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set optim.lr0=0.002 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Run directory for logs, config echo and checkpoints
    #[arg(long, global = true, env = "CROSSMODAL_RUN_DIR", default_value = "runs/default")]
    run_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic paired corpus
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the dual encoder
    Train {
        /// Continue from the newest checkpoint
        #[arg(long)]
        resume: bool,
        /// Do not echo log lines to standard output
        #[arg(long)]
        quiet: bool,
    },
    /// Embed a split with a checkpoint
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact top-k search of an embedding index
    Search {
        /// Directory written by `embed`
        #[arg(long)]
        index: PathBuf,
        /// Which modality to search: image or speech
        #[arg(long, default_value = IMAGE_STEM)]
        modality: String,
        /// FMAT file; each row is one query
        #[arg(long)]
        query: PathBuf,
        #[arg(long, short, default_value_t = 10)]
        k: usize,
    },
    /// Recall@K of a checkpoint on a split
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// Report path (default: <run-dir>/eval-<split>.txt)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<TrainConfig> {
    let text = match &cli.config {
        Some(p) => Some(
            fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let flags = cli
        .set
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<Result<Vec<_>>>()?;
    TrainConfig::resolve(text.as_deref(), &flags)
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|e: Error| Error::Argument(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::GenSynthetic { out } => {
            let m = cmd_gen_synthetic(&cfg, out)?;
            println!("event=gen_synthetic pairs={} out={}", m.records.len(), out.display());
        }
        Command::Train { resume, quiet } => {
            let opts = TrainOptions {
                resume: *resume,
                echo: !quiet,
            };
            let outcome = cmd_train(&cfg, &cli.run_dir, &opts)?;
            if *quiet {
                println!("event=done steps={}", outcome.steps);
            }
        }
        Command::Embed {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let n = cmd_embed(&cfg, checkpoint, manifest.as_deref(), parse_split(split)?, out)?;
            println!("event=embed records={n} out={}", out.display());
        }
        Command::Search {
            index,
            modality,
            query,
            k,
        } => {
            if modality != "image" && modality != "speech" {
                return Err(Error::Argument(format!("unknown modality `{modality}`")));
            }
            let results = cmd_search(index, modality, query, *k, cfg.scoring)?;
            print!("{}", format_results(&results));
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            let split = match split {
                Some(s) => parse_split(s)?,
                None => cfg.eval_split,
            };
            let out = out
                .clone()
                .unwrap_or_else(|| cli.run_dir.join(format!("eval-{split}.txt")));
            let report = cmd_evaluate(&cfg, checkpoint, manifest.as_deref(), split, &out)?;
            print!("{}", report.to_kv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
