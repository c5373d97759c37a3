//! The training loop: deterministic batching, pooled replica steps, periodic
//! evaluation and checkpoints, key=value logs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{self, step_dir};
use crate::config::TrainConfig;
use crate::contrastive::{LossConfig, PairBatch, ReplicaSet};
use crate::datapipe::{record_seed, DatasetManifest, Split};
use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::kv::{log_line, lookup, parse_log_line};
use crate::optim::AdamState;
use crate::pipeline::{embed_records, load_records, LoadedRecord, Pipeline};
use crate::retrieval::RecallReport;

pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.txt";

/// Where checkpoints go: the configured directory or `<run_dir>/checkpoints`.
pub fn checkpoint_root(cfg: &TrainConfig, run_dir: &Path) -> PathBuf {
    cfg.checkpoint_dir.clone().unwrap_or_else(|| run_dir.join("checkpoints"))
}

/// Manifest named by `data.manifest`.
pub fn load_manifest(cfg: &TrainConfig) -> Result<DatasetManifest> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("data.manifest is not set".into()))?;
    DatasetManifest::load(path)
}

/// Builds a freshly initialized model whose input dimensions come from the
/// first record unless the config fixes them.
pub fn build_model(cfg: &TrainConfig, pipeline: &Pipeline, sample: &LoadedRecord) -> Result<DualEncoder<f32>> {
    let (ds, di) = pipeline.input_dims(sample)?;
    let speech = cfg.speech.encoder_config(ds, cfg.embed_dim)?;
    let image = cfg.image.encoder_config(di, cfg.embed_dim)?;
    if speech.input_dim != ds || image.input_dim != di {
        return Err(Error::Config(format!(
            "configured input dims ({}, {}) do not match data ({ds}, {di})",
            speech.input_dim, image.input_dim
        )));
    }
    DualEncoder::new(speech, image, cfg.seed)
}

/// Example order for one epoch: a permutation seeded by (seed, epoch).
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(seed, "epoch", epoch));
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

/// Parses the `event=train` lines of a training log.
pub fn parse_train_log(text: &str) -> Vec<LogEntry> {
    text.lines()
        .map(parse_log_line)
        .filter(|kv| lookup(kv, "event") == Some("train"))
        .filter_map(|kv| {
            Some(LogEntry {
                step: lookup(&kv, "step")?.parse().ok()?,
                lr: lookup(&kv, "lr")?.parse().ok()?,
                loss: lookup(&kv, "loss")?.parse().ok()?,
            })
        })
        .collect()
}

pub struct TrainOutcome {
    pub model: DualEncoder<f32>,
    pub steps: u64,
    pub losses: Vec<LogEntry>,
    pub last_eval: Option<RecallReport>,
}

struct Logger {
    file: fs::File,
    path: PathBuf,
    echo: bool,
}

impl Logger {
    fn line(&mut self, line: &str) -> Result<()> {
        if self.echo {
            println!("{line}");
        }
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Drops log lines past `step` so a resumed run continues a clean log.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut kept = String::new();
    for line in text.lines() {
        let kv = parse_log_line(line);
        let s = lookup(&kv, "step").and_then(|s| s.parse::<u64>().ok());
        if s.is_none_or(|s| s <= step) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

pub struct TrainOptions {
    /// Continue from the newest checkpoint under the checkpoint root.
    pub resume: bool,
    /// Also print log lines to standard output.
    pub echo: bool,
}

/// Runs training as configured. The run directory receives the resolved
/// config, the log and (by default) the checkpoints.
pub fn train(cfg: &TrainConfig, run_dir: &Path, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let pipeline = Pipeline::from_config(cfg);
    let train_recs = load_records(&manifest, Split::Train)?;
    if train_recs.is_empty() {
        return Err(Error::Argument("the train split is empty".into()));
    }
    let b = cfg.global_batch();
    if b > train_recs.len() {
        return Err(Error::Config(format!(
            "global batch {b} exceeds the {} training pairs",
            train_recs.len()
        )));
    }
    let eval_recs = load_records(&manifest, cfg.eval_split)?;
    let fresh = build_model(cfg, &pipeline, &train_recs[0])?;

    let ckpt_root = checkpoint_root(cfg, run_dir);
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let config_path = run_dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_kv()).map_err(|e| Error::io(&config_path, e))?;

    let resumed = if opts.resume { checkpoint::latest(&ckpt_root)? } else { None };
    let (model, mut optimizer, start) = match &resumed {
        Some(dir) => {
            let c = checkpoint::load::<f32>(dir)?;
            if c.model.speech.config() != fresh.speech.config() || c.model.image.config() != fresh.image.config() {
                return Err(Error::Config(format!("{} was written with different encoder settings", dir.display())));
            }
            if c.optimizer.config != cfg.optim {
                return Err(Error::Config(format!("{} was written with different optimizer settings", dir.display())));
            }
            (c.model, c.optimizer, c.step)
        }
        None => (fresh, AdamState::new(cfg.optim), 0),
    };

    let log_path = run_dir.join(LOG_FILE);
    if resumed.is_some() {
        truncate_log(&log_path, start)?;
    }
    let file = fs::OpenOptions::new()
        .create(true)
        .append(resumed.is_some())
        .write(true)
        .truncate(resumed.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = Logger {
        file,
        path: log_path,
        echo: opts.echo,
    };
    if resumed.is_none() {
        for o in &cfg.overrides {
            log.line(&log_line(&[
                ("event", "override"),
                ("key", o.key.as_str()),
                ("value", o.value.as_str()),
                ("source", &o.source.to_string()),
            ]))?;
        }
        log.line(&log_line(&[
            ("event", "start"),
            ("params", &model.param_count().to_string()),
            ("train_pairs", &train_recs.len().to_string()),
            ("global_batch", &b.to_string()),
        ]))?;
        checkpoint::save(&step_dir(&ckpt_root, 0), 0, &model, &optimizer)?;
    } else {
        log.line(&log_line(&[("event", "resume"), ("from_step", &start.to_string())]))?;
    }

    let loss_cfg = LossConfig {
        temperature: cfg.temperature,
    };
    let mut replicas = ReplicaSet::new(model, cfg.replicas)?;
    let per_epoch = (train_recs.len() / b) as u64;
    let mut order_epoch = u64::MAX;
    let mut order = Vec::new();
    let mut losses = Vec::new();
    let mut last_eval = None;

    for t in start..cfg.max_steps {
        let epoch = t / per_epoch;
        if epoch != order_epoch {
            order = epoch_order(cfg.seed, epoch, train_recs.len());
            order_epoch = epoch;
        }
        let pos = (t % per_epoch) as usize * b;
        let ids = &order[pos..pos + b];
        let batches: Vec<PairBatch<f32>> = ids
            .par_chunks(cfg.per_replica)
            .map(|chunk| {
                let recs: Vec<&LoadedRecord> = chunk.iter().map(|&i| &train_recs[i]).collect();
                pipeline.build_batch(&recs, epoch, true)
            })
            .collect::<Result<_>>()?;

        let lr = optimizer.config.lr_at(optimizer.step_count());
        let step = t + 1;
        let loss = replicas
            .step(&batches, &mut optimizer, &loss_cfg)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {step}")),
                other => other,
            })? as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        log.line(&log_line(&[
            ("event", "train"),
            ("step", &step.to_string()),
            ("lr", &lr.to_string()),
            ("loss", &loss.to_string()),
        ]))?;
        losses.push(LogEntry { step, lr, loss });

        if step % cfg.eval_interval == 0 || step == cfg.max_steps {
            if !eval_recs.is_empty() {
                let (s, i) = embed_records(replicas.primary(), &eval_recs, &pipeline)?;
                let report = RecallReport::from_embeddings(
                    &cfg.eval_split.to_string(),
                    &s,
                    &i,
                    &cfg.k_list,
                    cfg.scoring,
                )?;
                let mut pairs = vec![
                    ("event".to_string(), "eval".to_string()),
                    ("step".to_string(), step.to_string()),
                    ("split".to_string(), report.split.clone()),
                ];
                pairs.extend(report.pairs());
                log.line(&log_line(&pairs))?;
                last_eval = Some(report);
            }
            checkpoint::save(&step_dir(&ckpt_root, step), step, replicas.primary(), &optimizer)?;
        }
    }
    let steps = cfg.max_steps.max(start);
    Ok(TrainOutcome {
        model: replicas.into_primary(),
        steps,
        losses,
        last_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_orders_are_permutations_and_seeded() {
        let a = epoch_order(7, 0, 50);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(7, 0, 50));
        assert_ne!(a, epoch_order(7, 1, 50));
        assert_ne!(a, epoch_order(8, 0, 50));
    }

    #[test]
    fn log_parsing() {
        let text = "event=start params=3\nevent=train step=1 lr=0.001 loss=2.5\nevent=eval step=1 split=dev\n";
        let e = parse_train_log(text);
        assert_eq!(e, vec![LogEntry { step: 1, lr: 0.001, loss: 2.5 }]);
    }

    #[test]
    fn log_truncation_keeps_earlier_steps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log");
        fs::write(&p, "event=start\nevent=train step=1\nevent=train step=2\nevent=eval step=2\nevent=train step=3\n").unwrap();
        truncate_log(&p, 2).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "event=start\nevent=train step=1\nevent=train step=2\nevent=eval step=2\n"
        );
    }
}
