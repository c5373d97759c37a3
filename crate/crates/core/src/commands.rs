//! Subcommand implementations behind the `crossmodal` binary.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::datapipe::{fmat, gen_synthetic, DatasetManifest, Split, MANIFEST_FILE};
use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::pipeline::{embed_records, load_records, Pipeline};
use crate::retrieval::{EmbeddingIndex, RecallReport, RetrievalResult, Scoring};
use crate::train::{self, TrainOptions, TrainOutcome};

/// Writes a synthetic corpus and reloads its manifest as a check.
pub fn cmd_gen_synthetic(cfg: &TrainConfig, out_dir: &Path) -> Result<DatasetManifest> {
    gen_synthetic(&cfg.synthetic_spec(), out_dir)?;
    DatasetManifest::load(out_dir.join(MANIFEST_FILE))
}

pub fn cmd_train(cfg: &TrainConfig, run_dir: &Path, opts: &TrainOptions) -> Result<TrainOutcome> {
    train::train(cfg, run_dir, opts)
}

/// Accepts a checkpoint directory or a root holding `step-*` directories
/// (the newest is used).
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join(checkpoint::MANIFEST).is_file() {
        return Ok(path.to_path_buf());
    }
    checkpoint::latest(path)?.ok_or_else(|| {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no checkpoint found"),
        )
    })
}

fn load_model(path: &Path) -> Result<DualEncoder<f32>> {
    Ok(checkpoint::load::<f32>(&resolve_checkpoint(path)?)?.model)
}

fn manifest_for(cfg: &TrainConfig, manifest: Option<&Path>) -> Result<DatasetManifest> {
    match manifest {
        Some(p) => DatasetManifest::load(p),
        None => train::load_manifest(cfg),
    }
}

/// File stems written by [`cmd_embed`].
pub const SPEECH_STEM: &str = "speech";
pub const IMAGE_STEM: &str = "image";

/// Embeds a split; writes `speech.fmat`/`speech.ids` and
/// `image.fmat`/`image.ids` under `out_dir`. Returns the number of records.
pub fn cmd_embed(
    cfg: &TrainConfig,
    checkpoint: &Path,
    manifest: Option<&Path>,
    split: Split,
    out_dir: &Path,
) -> Result<usize> {
    let model = load_model(checkpoint)?;
    let manifest = manifest_for(cfg, manifest)?;
    let records = load_records(&manifest, split)?;
    if records.is_empty() {
        return Err(Error::Argument(format!("split `{split}` has no records")));
    }
    let (s, i) = embed_records(&model, &records, &Pipeline::from_config(cfg))?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    EmbeddingIndex::new(s, ids.clone(), Scoring::Dot)?.save(out_dir, SPEECH_STEM)?;
    EmbeddingIndex::new(i, ids, Scoring::Dot)?.save(out_dir, IMAGE_STEM)?;
    Ok(records.len())
}

/// Searches the `stem` index in `index_dir` with every row of `query_fmat`.
pub fn cmd_search(
    index_dir: &Path,
    stem: &str,
    query_fmat: &Path,
    k: usize,
    scoring: Scoring,
) -> Result<Vec<RetrievalResult>> {
    let index = EmbeddingIndex::<f32>::load(index_dir, stem, scoring)?;
    let queries = fmat::read_file(query_fmat)?;
    let (n, _) = queries.dims2()?;
    if n == 0 {
        return Err(Error::Argument(format!("{} holds no queries", query_fmat.display())));
    }
    (0..n)
        .map(|q| index.top_k(&format!("query{q}"), queries.row(q), k))
        .collect()
}

/// `id<TAB>score` lines; blocks for successive queries are separated by a
/// blank line.
pub fn format_results(results: &[RetrievalResult]) -> String {
    let blocks: Vec<String> = results
        .iter()
        .map(|r| r.hits.iter().map(|(id, s)| format!("{id}\t{s}\n")).collect())
        .collect();
    blocks.join("\n")
}

/// Evaluates a checkpoint on a split and writes the report to `out`.
pub fn cmd_evaluate(
    cfg: &TrainConfig,
    checkpoint: &Path,
    manifest: Option<&Path>,
    split: Split,
    out: &Path,
) -> Result<RecallReport> {
    let model = load_model(checkpoint)?;
    let manifest = manifest_for(cfg, manifest)?;
    let report = crate::retrieval::evaluate_split(
        &model,
        &manifest,
        split,
        &cfg.k_list,
        &Pipeline::from_config(cfg),
        cfg.scoring,
    )?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(out, report.to_kv()).map_err(|e| Error::io(out, e))?;
    Ok(report)
}
