//! Exact maximum-inner-product search and Recall@K evaluation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::datapipe::{fmat, DatasetManifest, Split};
use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::pipeline::{embed_records, load_records, Pipeline};
use crate::tensor::{dot, Scalar, Tensor};

/// Corpus rows scanned per block.
const BLOCK_ROWS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scoring {
    Dot,
    Cosine,
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scoring::Dot => "dot",
            Scoring::Cosine => "cosine",
        })
    }
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Scoring::Dot),
            "cosine" => Ok(Scoring::Cosine),
            other => Err(Error::Config(format!("unknown scoring `{other}`"))),
        }
    }
}

/// A hit ordered so that the heap's maximum is the *worst* retained hit:
/// lower score is worse, and at equal score the later row is worse.
#[derive(Clone, Copy, Debug)]
struct Hit {
    score: f64,
    row: usize,
}

impl PartialEq for Hit {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit {}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.row.cmp(&other.row))
    }
}

fn push_bounded(heap: &mut BinaryHeap<Hit>, hit: Hit, k: usize) {
    if heap.len() < k {
        heap.push(hit);
    } else if let Some(worst) = heap.peek() {
        if hit < *worst {
            heap.pop();
            heap.push(hit);
        }
    }
}

/// Indices of the `k` largest scores, best first; ties go to the lower index.
pub fn rank_scores(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (row, &score) in scores.iter().enumerate() {
        push_bounded(&mut heap, Hit { score, row }, k);
    }
    heap.into_sorted_vec().into_iter().map(|h| (h.row, h.score)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub query: String,
    /// (corpus id, score), best first.
    pub hits: Vec<(String, f64)>,
}

/// Exact search index over M corpus embeddings.
#[derive(Clone, Debug)]
pub struct EmbeddingIndex<F> {
    matrix: Tensor<F>,
    ids: Vec<String>,
    scoring: Scoring,
}

fn l2_normalized<F: Scalar>(v: &[F]) -> Option<Vec<F>> {
    let n = dot(v, v).sqrt();
    (n > F::zero()).then(|| v.iter().map(|&x| x / n).collect())
}

impl<F: Scalar> EmbeddingIndex<F> {
    pub fn new(matrix: Tensor<F>, ids: Vec<String>, scoring: Scoring) -> Result<Self> {
        let (m, h) = matrix.dims2()?;
        if ids.len() != m {
            return Err(Error::dim(format!("{} ids for {m} corpus rows", ids.len())));
        }
        matrix.ensure_finite("index embeddings")?;
        let matrix = match scoring {
            Scoring::Dot => matrix,
            Scoring::Cosine => {
                let mut data = Vec::with_capacity(m * h);
                for r in 0..m {
                    let row = l2_normalized(matrix.row(r)).ok_or_else(|| {
                        Error::Data(format!("cosine index row {r} ({}) is all zeros", ids[r]))
                    })?;
                    data.extend(row);
                }
                Tensor::from_vec(&[m, h], data)?
            }
        };
        Ok(EmbeddingIndex {
            matrix,
            ids,
            scoring,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scoring(&self) -> Scoring {
        self.scoring
    }

    fn prepare_query(&self, query: &[F]) -> Result<Vec<F>> {
        if self.is_empty() {
            return Err(Error::State("search on an empty index".into()));
        }
        if query.len() != self.dim() {
            return Err(Error::dim(format!(
                "query has {} dims, index has {}",
                query.len(),
                self.dim()
            )));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query".into()));
        }
        match self.scoring {
            Scoring::Dot => Ok(query.to_vec()),
            Scoring::Cosine => l2_normalized(query)
                .ok_or_else(|| Error::Argument("cosine query is all zeros".into())),
        }
    }

    /// Row indices and scores of the `k` best rows. Blocks of the corpus are
    /// scanned in parallel, each keeping a bounded heap; heaps are merged
    /// under the same total order, so the result does not depend on block
    /// scheduling.
    pub fn top_k_rows(&self, query: &[F], k: usize) -> Result<Vec<(usize, f64)>> {
        let q = self.prepare_query(query)?;
        if k == 0 || k > self.len() {
            return Err(Error::Argument(format!(
                "k = {k} must be in 1..={} (index size)",
                self.len()
            )));
        }
        let h = self.dim();
        let data = self.matrix.data();
        let merged = data
            .par_chunks(BLOCK_ROWS * h.max(1))
            .enumerate()
            .map(|(b, block)| {
                let mut heap = BinaryHeap::with_capacity(k + 1);
                let rows = if h == 0 { BLOCK_ROWS.min(self.len() - b * BLOCK_ROWS) } else { block.len() / h };
                for r in 0..rows {
                    let score = dot(&q, &block[r * h..(r + 1) * h]).as_f64();
                    push_bounded(&mut heap, Hit { score, row: b * BLOCK_ROWS + r }, k);
                }
                heap
            })
            .reduce(BinaryHeap::new, |mut a, b| {
                for hit in b {
                    push_bounded(&mut a, hit, k);
                }
                a
            });
        Ok(merged.into_sorted_vec().into_iter().map(|h| (h.row, h.score)).collect())
    }

    pub fn top_k(&self, query_id: &str, query: &[F], k: usize) -> Result<RetrievalResult> {
        Ok(RetrievalResult {
            query: query_id.to_string(),
            hits: self
                .top_k_rows(query, k)?
                .into_iter()
                .map(|(r, s)| (self.ids[r].clone(), s))
                .collect(),
        })
    }

    /// Writes `<stem>.fmat` and `<stem>.ids` (one id per line).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fmat::write_file(dir.join(format!("{stem}.fmat")), &self.matrix.cast())?;
        let ids_path = dir.join(format!("{stem}.ids"));
        let mut text = self.ids.join("\n");
        text.push('\n');
        fs::write(&ids_path, text).map_err(|e| Error::io(&ids_path, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str, scoring: Scoring) -> Result<Self> {
        let dir = dir.as_ref();
        let matrix = fmat::read_file(dir.join(format!("{stem}.fmat")))?;
        let ids_path = dir.join(format!("{stem}.ids"));
        let text = fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let ids = text.lines().map(str::to_string).collect();
        EmbeddingIndex::new(matrix.cast(), ids, scoring)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    SpeechToImage,
    ImageToSpeech,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::SpeechToImage, Direction::ImageToSpeech];

    pub fn key(self) -> &'static str {
        match self {
            Direction::SpeechToImage => "speech_to_image",
            Direction::ImageToSpeech => "image_to_speech",
        }
    }
}

/// Fraction of queries whose aligned counterpart (same row) is among the
/// top `k` results over the other modality.
pub fn recall_at_k<F: Scalar>(
    speech: &Tensor<F>,
    image: &Tensor<F>,
    k: usize,
    direction: Direction,
) -> Result<f64> {
    recall_with(speech, image, &[k], direction, Scoring::Dot).map(|v| v[0])
}

/// Recall for several cutoffs from one ranking per query.
pub fn recall_with<F: Scalar>(
    speech: &Tensor<F>,
    image: &Tensor<F>,
    ks: &[usize],
    direction: Direction,
    scoring: Scoring,
) -> Result<Vec<f64>> {
    if speech.shape() != image.shape() {
        return Err(Error::dim(format!(
            "speech embeddings {:?} vs image embeddings {:?}",
            speech.shape(),
            image.shape()
        )));
    }
    let (b, _) = speech.dims2()?;
    if b == 0 {
        return Err(Error::Argument("recall over an empty batch".into()));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > b) {
        return Err(Error::Argument(format!("k = {bad} must be in 1..={b}")));
    }
    let (queries, corpus) = match direction {
        Direction::SpeechToImage => (speech, image),
        Direction::ImageToSpeech => (image, speech),
    };
    let ids = (0..b).map(|i| i.to_string()).collect();
    let index = EmbeddingIndex::new(corpus.clone(), ids, scoring)?;
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let ranks: Vec<Option<usize>> = (0..b)
        .into_par_iter()
        .map(|q| {
            let hits = index.top_k_rows(queries.row(q), k_max)?;
            Ok(hits.iter().position(|&(r, _)| r == q))
        })
        .collect::<Result<_>>()?;
    Ok(ks
        .iter()
        .map(|&k| ranks.iter().filter(|r| matches!(r, Some(p) if *p < k)).count() as f64 / b as f64)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallEntry {
    pub k: usize,
    pub direction: Direction,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallReport {
    pub split: String,
    pub examples: usize,
    pub entries: Vec<RecallEntry>,
}

impl RecallReport {
    pub fn from_embeddings<F: Scalar>(
        split: &str,
        speech: &Tensor<F>,
        image: &Tensor<F>,
        k_list: &[usize],
        scoring: Scoring,
    ) -> Result<Self> {
        let b = speech.shape()[0];
        let ks: Vec<usize> = k_list.iter().map(|&k| k.min(b)).collect();
        let mut entries = Vec::new();
        let per_dir: Vec<Vec<f64>> = Direction::BOTH
            .iter()
            .map(|&d| recall_with(speech, image, &ks, d, scoring))
            .collect::<Result<_>>()?;
        for (i, &k) in k_list.iter().enumerate() {
            for (d, vals) in Direction::BOTH.iter().zip(&per_dir) {
                entries.push(RecallEntry {
                    k,
                    direction: *d,
                    value: vals[i],
                });
            }
        }
        Ok(RecallReport {
            split: split.to_string(),
            examples: b,
            entries,
        })
    }

    pub fn get(&self, k: usize, direction: Direction) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.k == k && e.direction == direction)
            .map(|e| e.value)
    }

    /// `r_at_<k>.<direction>=<value>` pairs.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .map(|e| (format!("r_at_{}.{}", e.k, e.direction.key()), e.value.to_string()))
            .collect()
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!("split={}\nexamples={}\n", self.split, self.examples);
        for (k, v) in self.pairs() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}

/// Embeds every record of `split` through `pipeline` and reports Recall@K in
/// both directions. Cutoffs larger than the split are clamped to its size.
pub fn evaluate_split<F: Scalar>(
    model: &DualEncoder<F>,
    manifest: &DatasetManifest,
    split: Split,
    k_list: &[usize],
    pipeline: &Pipeline,
    scoring: Scoring,
) -> Result<RecallReport> {
    let records = load_records(manifest, split)?;
    if records.is_empty() {
        return Err(Error::Argument(format!("split `{split}` has no records")));
    }
    let (speech, image) = embed_records(model, &records, pipeline)?;
    RecallReport::from_embeddings(&split.to_string(), &speech, &image, k_list, scoring)
}
