//! Oracles shared by the integration and acceptance tests. Everything here is
//! written independently of the library's optimized paths: finite
//! differences, full sorts, a naive scalar softmax.

#![allow(dead_code)]

use std::path::Path;

use crossmodal::contrastive::{
    compute_gradients, loss_and_gradient, similarity, LossConfig, PairBatch, ReplicaSet, SimilarityMatrix,
};
use crossmodal::config::TrainConfig;
use crossmodal::datapipe::{gen_synthetic, FrameMatrix, SyntheticSpec, MANIFEST_FILE};
use crossmodal::encoders::{DualEncoder, EncoderConfig, EncoderInput, SeqBatch};
use crossmodal::tensor::{
    conv1d_backward, conv1d_forward_masked, conv_output_len, dense_backward, dense_forward, mean_pool_backward,
    mean_pool_time, relu_backward, relu_forward, residual_add, ConvSpec, LayerParams, Padding, Scalar, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;
pub const INSTANCES: u64 = 10;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random<F: Scalar>(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<F> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| F::of(r.random_range(-1.0..1.0))).collect()).unwrap()
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), 0 when both are zero.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn with_data(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.shape(), data.to_vec()).unwrap()
}

fn random_params(wshape: &[usize], r: &mut ChaCha8Rng) -> LayerParams<f64> {
    let out = *wshape.last().unwrap();
    LayerParams::new(random(wshape, r), random(&[out], r))
}

/// Worst relative error over weight, bias and input gradients of a dense
/// layer under L = Σ R ⊙ y.
pub fn dense_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, din, dout) = (r.random_range(1..5), r.random_range(1..7), r.random_range(1..7));
    let x = random::<f64>(&[b, din], &mut r);
    let mut p = random_params(&[din, dout], &mut r);
    let rw = random::<f64>(&[b, dout], &mut r);
    let dx = dense_backward(&x, &mut p, &rw).unwrap();

    let base = p.clone();
    let nw = numeric_grad(base.weight.data(), |w| {
        let mut q = base.clone();
        q.weight = with_data(&base.weight, w);
        weighted_sum(&dense_forward(&x, &q).unwrap(), &rw)
    });
    let nb = numeric_grad(base.bias.data(), |bv| {
        let mut q = base.clone();
        q.bias = with_data(&base.bias, bv);
        weighted_sum(&dense_forward(&x, &q).unwrap(), &rw)
    });
    let nx = numeric_grad(x.data(), |xv| weighted_sum(&dense_forward(&with_data(&x, xv), &base).unwrap(), &rw));
    rel_err(p.grad_weight.data(), &nw)
        .max(rel_err(p.grad_bias.data(), &nb))
        .max(rel_err(dx.data(), &nx))
}

/// Same for a masked 1-D convolution with the given padding and stride.
pub fn conv_grad_error(seed: u64, padding: Padding, stride: usize) -> f64 {
    let mut r = rng(seed);
    let spec = ConvSpec::new(stride, padding);
    let k = r.random_range(1..9);
    let t = match padding {
        Padding::Same => r.random_range(1..10),
        Padding::Valid => k + r.random_range(0..8),
    };
    let (b, din, dout) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5));
    let lengths: Vec<usize> = (0..b)
        .map(|_| match padding {
            Padding::Same => r.random_range(1..=t),
            Padding::Valid => r.random_range(k..=t),
        })
        .collect();
    let x = random::<f64>(&[b, t, din], &mut r);
    let mut p = random_params(&[k, din, dout], &mut r);
    let t_out = conv_output_len(t, k, spec).unwrap();
    let rw = random::<f64>(&[b, t_out, dout], &mut r);
    let dx = conv1d_backward(&x, &lengths, &mut p, spec, &rw, true).unwrap().unwrap();

    let base = p.clone();
    let f = |x: &Tensor<f64>, q: &LayerParams<f64>| {
        weighted_sum(&conv1d_forward_masked(x, &lengths, q, spec).unwrap().0, &rw)
    };
    let nw = numeric_grad(base.weight.data(), |w| {
        let mut q = base.clone();
        q.weight = with_data(&base.weight, w);
        f(&x, &q)
    });
    let nb = numeric_grad(base.bias.data(), |bv| {
        let mut q = base.clone();
        q.bias = with_data(&base.bias, bv);
        f(&x, &q)
    });
    let nx = numeric_grad(x.data(), |xv| f(&with_data(&x, xv), &base));
    rel_err(p.grad_weight.data(), &nw)
        .max(rel_err(p.grad_bias.data(), &nb))
        .max(rel_err(dx.data(), &nx))
}

pub fn relu_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..40);
    let x = random::<f64>(&[n], &mut r);
    let rw = random::<f64>(&[n], &mut r);
    let dx = relu_backward(&relu_forward(&x), &rw).unwrap();
    let nx = numeric_grad(x.data(), |xv| weighted_sum(&relu_forward(&with_data(&x, xv)), &rw));
    rel_err(dx.data(), &nx)
}

pub fn mean_pool_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, t, c) = (r.random_range(1..4), r.random_range(1..8), r.random_range(1..5));
    let lengths: Vec<usize> = (0..b).map(|_| r.random_range(1..=t)).collect();
    let x = random::<f64>(&[b, t, c], &mut r);
    let rw = random::<f64>(&[b, c], &mut r);
    let dx = mean_pool_backward(&lengths, t, &rw).unwrap();
    let nx = numeric_grad(x.data(), |xv| weighted_sum(&mean_pool_time(&with_data(&x, xv), &lengths).unwrap(), &rw));
    rel_err(dx.data(), &nx)
}

/// The residual join passes the upstream gradient to both inputs.
pub fn residual_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..30);
    let a = random::<f64>(&[n], &mut r);
    let b = random::<f64>(&[n], &mut r);
    let rw = random::<f64>(&[n], &mut r);
    let na = numeric_grad(a.data(), |v| weighted_sum(&residual_add(&with_data(&a, v), &b).unwrap(), &rw));
    let nb = numeric_grad(b.data(), |v| weighted_sum(&residual_add(&a, &with_data(&b, v)).unwrap(), &rw));
    rel_err(rw.data(), &na).max(rel_err(rw.data(), &nb))
}

pub fn loss_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let b = r.random_range(1..9);
    let s = random::<f64>(&[b, b], &mut r);
    let scale = r.random_range(0.5..5.0);
    let s = Tensor::from_vec(&[b, b], s.data().iter().map(|v| v * scale).collect()).unwrap();
    let cfg = LossConfig::default();
    let (_, g) = loss_and_gradient(&SimilarityMatrix::new(s.clone()).unwrap(), &cfg).unwrap();
    let n = numeric_grad(s.data(), |v| {
        loss_and_gradient(&SimilarityMatrix::new(with_data(&s, v)).unwrap(), &cfg).unwrap().0
    });
    rel_err(g.data(), &n)
}

/// Random variable-length speech frames and image feature vectors.
pub struct ToyPairs {
    pub speech: Vec<FrameMatrix>,
    pub image: Vec<Tensor<f32>>,
}

pub fn toy_pairs(n: usize, t_max: usize, ds: usize, di: usize, seed: u64) -> ToyPairs {
    let mut r = rng(seed);
    let speech = (0..n)
        .map(|_| {
            let t = r.random_range(1..=t_max);
            FrameMatrix::new(random::<f32>(&[t, ds], &mut r)).unwrap()
        })
        .collect();
    let image = (0..n).map(|_| random::<f32>(&[1, di], &mut r)).collect();
    ToyPairs { speech, image }
}

/// Encoder inputs for examples `range` of `pairs`. With `chunk` set, each
/// utterance is split into windows of that many frames and the windows of
/// one example are averaged.
pub fn toy_batch<F: Scalar>(pairs: &ToyPairs, range: std::ops::Range<usize>, chunk: Option<usize>) -> PairBatch<F> {
    let mut chunks = Vec::new();
    let mut groups = Vec::new();
    for s in &pairs.speech[range.clone()] {
        match chunk {
            Some(w) => {
                let c = crossmodal::datapipe::chunk_frames(s, w).unwrap();
                groups.push(c.len());
                chunks.extend(c);
            }
            None => {
                groups.push(1);
                chunks.push(s.clone());
            }
        }
    }
    let refs: Vec<&FrameMatrix> = chunks.iter().collect();
    let speech = EncoderInput::grouped(SeqBatch::from_frames(&refs).unwrap(), groups).unwrap();
    let img_frames: Vec<FrameMatrix> = pairs.image[range].iter().map(|m| FrameMatrix::new(m.clone()).unwrap()).collect();
    let img_refs: Vec<&FrameMatrix> = img_frames.iter().collect();
    let image = EncoderInput::ungrouped(SeqBatch::from_frames(&img_refs).unwrap());
    PairBatch { speech, image }
}

fn flat_params(m: &DualEncoder<f64>) -> Vec<f64> {
    m.named_params().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
}

fn set_flat_params(m: &mut DualEncoder<f64>, flat: &[f64]) {
    let mut off = 0;
    for s in m.param_slots() {
        let n = s.value.len();
        s.value.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

fn batch_loss(m: &DualEncoder<f64>, batch: &PairBatch<f64>) -> f64 {
    let es = m.speech.infer_grouped(&batch.speech).unwrap();
    let ei = m.image.infer_grouped(&batch.image).unwrap();
    loss_and_gradient(&similarity(&es, &ei).unwrap(), &LossConfig::default()).unwrap().0
}

/// End-to-end check: loss over a paired batch against every parameter of
/// both towers, with chunked (grouped) speech input.
pub fn dual_encoder_grad_error(speech: EncoderConfig, image: EncoderConfig, seed: u64) -> f64 {
    let pairs = toy_pairs(4, 12, speech.input_dim, image.input_dim, seed);
    let batch = toy_batch::<f64>(&pairs, 0..4, Some(5));
    let mut model = DualEncoder::<f64>::new(speech, image, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let jittered: Vec<f64> = flat_params(&model).iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
    set_flat_params(&mut model, &jittered);
    compute_gradients(&mut model, &batch, &LossConfig::default()).unwrap();
    let analytic: Vec<f64> = model.named_grads().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let base = flat_params(&model);
    let mut probe = model.clone();
    let numeric = numeric_grad(&base, |p| {
        set_flat_params(&mut probe, p);
        batch_loss(&probe, &batch)
    });
    rel_err(&analytic, &numeric)
}

pub fn small_towers(kind: &str) -> (EncoderConfig, EncoderConfig) {
    match kind {
        "projection-only" => (EncoderConfig::projection_only(3, 4), EncoderConfig::projection_only(2, 4)),
        "shallow-cnn" => (EncoderConfig::shallow(2, 3, [3, 2, 3]), EncoderConfig::projection_only(2, 3)),
        "residual-cnn" => (EncoderConfig::residual(2, 3, 3, 2), EncoderConfig::shallow(2, 3, [2, 2, 2])),
        other => panic!("unknown kind {other}"),
    }
}

/// Naive loss straight from the definition: no max subtraction, f64.
pub fn scalar_softmax_loss(s: &[Vec<f64>]) -> f64 {
    let b = s.len();
    let mut total = 0.0;
    for i in 0..b {
        let row: f64 = (0..b).map(|j| s[i][j].exp()).sum();
        let col: f64 = (0..b).map(|j| s[j][i].exp()).sum();
        total += (s[i][i].exp() / row).ln() + (s[i][i].exp() / col).ln();
    }
    -total / (2.0 * b as f64)
}

/// Full-sort oracle: rows by descending score, ascending row on ties.
pub fn brute_top_k(corpus: &Tensor<f32>, q: &[f32], k: usize) -> Vec<usize> {
    let (m, _) = corpus.dims2().unwrap();
    let mut scored: Vec<(f64, usize)> = (0..m)
        .map(|r| {
            let s: f32 = corpus.row(r).iter().zip(q).fold(0.0, |a, (x, y)| a + x * y);
            (s as f64, r)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, r)| r).collect()
}

/// Recall computed directly from a full score matrix.
pub fn brute_recall(q: &Tensor<f32>, c: &Tensor<f32>, k: usize) -> f64 {
    let (b, _) = q.dims2().unwrap();
    let hits = (0..b).filter(|&i| brute_top_k(c, q.row(i), k).contains(&i)).count();
    hits as f64 / b as f64
}

/// Pooled N×K step against a single model on the global batch. Returns
/// (loss difference, worst gradient difference), both relative to
/// max(1, reference magnitude).
pub fn replica_vs_global<F: Scalar>(n: usize, k: usize, seed: u64) -> (f64, f64) {
    let (speech, image) = (EncoderConfig::shallow(3, 6, [4, 4, 4]), EncoderConfig::projection_only(5, 6));
    let pairs = toy_pairs(n * k, 30, 3, 5, seed);
    let model = DualEncoder::<F>::new(speech, image, seed).unwrap();

    let mut single = model.clone();
    let global = toy_batch::<F>(&pairs, 0..n * k, None);
    let ref_loss = compute_gradients(&mut single, &global, &LossConfig::default()).unwrap().as_f64();

    let mut set = ReplicaSet::new(model, n).unwrap();
    let batches: Vec<PairBatch<F>> = (0..n).map(|r| toy_batch(&pairs, r * k..(r + 1) * k, None)).collect();
    let loss = set.pooled_gradients(&batches, &LossConfig::default()).unwrap().as_f64();

    let loss_diff = (loss - ref_loss).abs() / ref_loss.abs().max(1.0);
    let mut grad_diff = 0.0f64;
    for ((_, a), (_, b)) in set.primary().named_grads().iter().zip(single.named_grads()) {
        let scale = b.data().iter().fold(1.0f64, |m, v| m.max(v.as_f64().abs()));
        grad_diff = grad_diff.max(a.max_abs_diff(b) / scale);
    }
    (loss_diff, grad_diff)
}

/// True when both trees hold the same relative paths with identical bytes.
pub fn dirs_identical(a: &Path, b: &Path) -> bool {
    fn walk(root: &Path, rel: &Path, out: &mut Vec<std::path::PathBuf>) {
        let mut entries: Vec<_> = std::fs::read_dir(root.join(rel)).unwrap().map(|e| e.unwrap()).collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let r = rel.join(e.file_name());
            if e.file_type().unwrap().is_dir() {
                walk(root, &r, out);
            } else {
                out.push(r);
            }
        }
    }
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    walk(a, Path::new(""), &mut la);
    walk(b, Path::new(""), &mut lb);
    la == lb && la.iter().all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap())
}

/// Tower and batch settings of the desk-scale run.
pub const DESK_SETTINGS: &[(&str, &str)] = &[
    ("model.embed_dim", "64"),
    ("replica.n", "2"),
    ("replica.k", "32"),
    ("speech.kind", "shallow-cnn"),
    ("speech.widths", "32,32,32"),
    ("image.kind", "shallow-cnn"),
    ("image.widths", "64,64,64"),
];

/// Desk settings plus `extra`, reading data from `manifest`.
pub fn desk_config(manifest: &Path, extra: &[(&str, &str)]) -> TrainConfig {
    let m = manifest.display().to_string();
    let flags: Vec<(String, String)> = DESK_SETTINGS
        .iter()
        .chain(&[("data.manifest", m.as_str())])
        .chain(extra)
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    TrainConfig::resolve(None, &flags).unwrap()
}

/// Writes the default synthetic corpus under `dir` and returns its manifest path.
pub fn synthetic_corpus(dir: &Path) -> std::path::PathBuf {
    gen_synthetic(&SyntheticSpec::default(), dir).unwrap();
    dir.join(MANIFEST_FILE)
}

/// S = [[3,1,0],[1,3,0],[0,2,1]] as speech = I, image = Sᵀ. Speech-to-image
/// recall is 2/3 at k=1 and 1 at k=2.
pub fn hand_recall_case() -> (Tensor<f64>, Tensor<f64>) {
    let speech = Tensor::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let image = Tensor::from_rows(&[[3.0, 1.0, 0.0], [1.0, 3.0, 2.0], [0.0, 0.0, 1.0]]).unwrap();
    (speech, image)
}
