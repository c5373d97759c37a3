//! Dot-product similarity, the bidirectional in-batch softmax loss, and
//! simulated data-parallel training where every replica's embeddings serve
//! as negatives for every other replica.

use rayon::prelude::*;

use crate::encoders::{DualEncoder, EncoderInput};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tensor::{matmul, matmul_bt, Scalar, Tensor};

/// Square score matrix: entry (i, j) is speech i against image j, so the
/// diagonal holds the positive pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix<F>(Tensor<F>);

impl<F: Scalar> SimilarityMatrix<F> {
    pub fn new(scores: Tensor<F>) -> Result<Self> {
        let (r, c) = scores.dims2()?;
        if r != c {
            return Err(Error::dim(format!("similarity matrix must be square, got {r}x{c}")));
        }
        scores.ensure_finite("similarity matrix")?;
        Ok(SimilarityMatrix(scores))
    }

    pub fn size(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn scores(&self) -> &Tensor<F> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        SimilarityMatrix(self.0.transpose2().expect("square"))
    }
}

pub fn similarity<F: Scalar>(speech: &Tensor<F>, image: &Tensor<F>) -> Result<SimilarityMatrix<F>> {
    let (bs, hs) = speech.dims2()?;
    let (bi, hi) = image.dims2()?;
    if bs != bi || hs != hi {
        return Err(Error::dim(format!(
            "speech embeddings {bs}x{hs} vs image embeddings {bi}x{hi}"
        )));
    }
    SimilarityMatrix::new(matmul_bt(speech, image)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Scores are divided by this before the softmax. 1 means no scaling.
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { temperature: 1.0 }
    }
}

/// Per-vector log-sum-exp with max subtraction.
fn log_sum_exp<F: Scalar>(v: &[F]) -> F {
    let m = v.iter().copied().fold(F::neg_infinity(), F::max);
    let s = v.iter().fold(F::zero(), |acc, &x| acc + (x - m).exp());
    m + s.ln()
}

struct Softmaxes<F> {
    row_lse: Vec<F>,
    col_lse: Vec<F>,
}

fn softmaxes<F: Scalar>(s: &Tensor<F>, b: usize) -> Softmaxes<F> {
    let row_lse = (0..b).map(|i| log_sum_exp(s.row(i))).collect();
    let mut col = vec![F::zero(); b];
    let col_lse = (0..b)
        .map(|j| {
            for (i, c) in col.iter_mut().enumerate() {
                *c = s.data()[i * b + j];
            }
            log_sum_exp(&col)
        })
        .collect();
    Softmaxes { row_lse, col_lse }
}

fn scaled<F: Scalar>(s: &SimilarityMatrix<F>, cfg: &LossConfig) -> Result<Tensor<F>> {
    if !(cfg.temperature > 0.0) {
        return Err(Error::Config(format!("temperature {} must be positive", cfg.temperature)));
    }
    let mut t = s.0.clone();
    if cfg.temperature != 1.0 {
        let inv = F::of(1.0 / cfg.temperature);
        t.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok(t)
}

fn loss_from<F: Scalar>(s: &Tensor<F>, sm: &Softmaxes<F>, b: usize) -> F {
    let mut total = F::zero();
    for i in 0..b {
        let d = s.data()[i * b + i];
        total += (d - sm.row_lse[i]) + (d - sm.col_lse[i]);
    }
    // + 0 turns a -0.0 result into 0.0.
    -total / F::of(2.0 * b as f64) + F::zero()
}

/// Mean over both retrieval directions of the cross-entropy of the diagonal
/// entry: -(1/2B) Σ_i [log softmax_row(S)_ii + log softmax_col(S)_ii].
pub fn bidirectional_softmax_loss<F: Scalar>(s: &SimilarityMatrix<F>) -> Result<F> {
    Ok(loss_and_gradient(s, &LossConfig::default())?.0)
}

/// dL/dS = (1/2B)·[(P_row − I) + (P_col − I)].
pub fn loss_gradient<F: Scalar>(s: &SimilarityMatrix<F>) -> Result<Tensor<F>> {
    Ok(loss_and_gradient(s, &LossConfig::default())?.1)
}

pub fn loss_and_gradient<F: Scalar>(s: &SimilarityMatrix<F>, cfg: &LossConfig) -> Result<(F, Tensor<F>)> {
    let b = s.size();
    if b == 0 {
        return Err(Error::Degenerate("empty similarity matrix".into()));
    }
    let logits = scaled(s, cfg)?;
    let sm = softmaxes(&logits, b);
    let loss = loss_from(&logits, &sm, b);
    let norm = F::of(0.5 / b as f64) * F::of(1.0 / cfg.temperature);
    let mut grad = Tensor::zeros(&[b, b]);
    for i in 0..b {
        for j in 0..b {
            let v = logits.data()[i * b + j];
            let mut g = (v - sm.row_lse[i]).exp() + (v - sm.col_lse[j]).exp();
            if i == j {
                g -= F::of(2.0);
            }
            grad.data_mut()[i * b + j] = g * norm;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("contrastive loss".into()));
    }
    grad.ensure_finite("contrastive loss gradient")?;
    Ok((loss, grad))
}

/// N replicas with K examples each; global example `g` lives on replica `g / K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplicaLayout {
    pub replicas: usize,
    pub per_replica: usize,
}

impl ReplicaLayout {
    pub fn new(replicas: usize, per_replica: usize) -> Result<Self> {
        if replicas == 0 || per_replica == 0 {
            return Err(Error::Layout(format!(
                "replica count ({replicas}) and per-replica batch ({per_replica}) must be positive"
            )));
        }
        Ok(ReplicaLayout {
            replicas,
            per_replica,
        })
    }

    pub fn global_batch(&self) -> usize {
        self.replicas * self.per_replica
    }

    pub fn replica_of(&self, global_index: usize) -> usize {
        global_index / self.per_replica
    }

    pub fn range(&self, replica: usize) -> std::ops::Range<usize> {
        replica * self.per_replica..(replica + 1) * self.per_replica
    }
}

/// Paired speech/image inputs; example i of each side forms a positive pair.
#[derive(Clone, Debug)]
pub struct PairBatch<F> {
    pub speech: EncoderInput<F>,
    pub image: EncoderInput<F>,
}

impl<F: Scalar> PairBatch<F> {
    pub fn examples(&self) -> usize {
        self.speech.examples()
    }
}

fn embedding_grads<F: Scalar>(
    grad_s: &Tensor<F>,
    speech: &Tensor<F>,
    image: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    // S = E_s·E_iᵀ  =>  dE_s = G·E_i,  dE_i = Gᵀ·E_s
    let d_speech = matmul(grad_s, image)?;
    let d_image = matmul(&grad_s.transpose2()?, speech)?;
    Ok((d_speech, d_image))
}

/// Single-model step: forward, loss over the whole batch, backward. Leaves
/// the parameter gradients in `model` and returns the loss.
pub fn compute_gradients<F: Scalar>(
    model: &mut DualEncoder<F>,
    batch: &PairBatch<F>,
    cfg: &LossConfig,
) -> Result<F> {
    model.zero_grad();
    let (es, ei) = model.forward(&batch.speech, &batch.image)?;
    let s = similarity(&es, &ei)?;
    let (loss, g) = loss_and_gradient(&s, cfg)?;
    let (ds, di) = embedding_grads(&g, &es, &ei)?;
    model.backward(&ds, &di)?;
    Ok(loss)
}

/// In-process simulation of N data-parallel replicas holding identical
/// parameters.
#[derive(Clone, Debug)]
pub struct ReplicaSet<F> {
    replicas: Vec<DualEncoder<F>>,
}

impl<F: Scalar> ReplicaSet<F> {
    pub fn new(model: DualEncoder<F>, replicas: usize) -> Result<Self> {
        if replicas == 0 {
            return Err(Error::Layout("need at least one replica".into()));
        }
        Ok(ReplicaSet {
            replicas: vec![model; replicas],
        })
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    /// Replica 0. After [`ReplicaSet::pooled_gradients`] it holds the summed
    /// gradients.
    pub fn primary(&self) -> &DualEncoder<F> {
        &self.replicas[0]
    }

    pub fn replicas_mut(&mut self) -> &mut [DualEncoder<F>] {
        &mut self.replicas
    }

    pub fn into_primary(mut self) -> DualEncoder<F> {
        self.replicas.swap_remove(0)
    }

    pub fn check_synchronized(&self) -> Result<()> {
        let first = &self.replicas[0];
        for (r, m) in self.replicas.iter().enumerate().skip(1) {
            if !m.params_bit_eq(first) {
                return Err(Error::State(format!("replica {r} parameters diverged from replica 0")));
            }
        }
        Ok(())
    }

    /// Each replica encodes its local batch; all embeddings are concatenated
    /// in replica order and the loss runs over the full global batch.
    /// Embedding gradients are routed back to the owning replica and the
    /// parameter gradients of all replicas are summed into replica 0.
    pub fn pooled_gradients(&mut self, batches: &[PairBatch<F>], cfg: &LossConfig) -> Result<F> {
        if batches.len() != self.replicas.len() {
            return Err(Error::Layout(format!(
                "{} local batches for {} replicas",
                batches.len(),
                self.replicas.len()
            )));
        }
        let k = batches[0].examples();
        if k == 0 || batches.iter().any(|b| b.examples() != k || b.image.examples() != k) {
            return Err(Error::Layout(format!(
                "replica batch sizes differ: {:?}",
                batches.iter().map(|b| b.examples()).collect::<Vec<_>>()
            )));
        }
        let layout = ReplicaLayout::new(self.replicas.len(), k)?;
        self.check_synchronized()?;

        let local: Vec<(Tensor<F>, Tensor<F>)> = self
            .replicas
            .par_iter_mut()
            .zip(batches.par_iter())
            .map(|(m, b)| {
                m.zero_grad();
                m.forward(&b.speech, &b.image)
            })
            .collect::<Result<_>>()?;
        let (speech_parts, image_parts): (Vec<_>, Vec<_>) = local.into_iter().unzip();
        let speech = Tensor::concat_rows(&speech_parts)?;
        let image = Tensor::concat_rows(&image_parts)?;

        let s = similarity(&speech, &image)?;
        let (loss, g) = loss_and_gradient(&s, cfg)?;
        let (ds, di) = embedding_grads(&g, &speech, &image)?;

        self.replicas
            .par_iter_mut()
            .enumerate()
            .map(|(r, m)| {
                let rows = layout.range(r);
                m.backward(&ds.slice_rows(rows.clone()), &di.slice_rows(rows))
            })
            .collect::<Result<Vec<()>>>()?;

        let (head, rest) = self.replicas.split_at_mut(1);
        let mut total = head[0].param_slots();
        for other in rest.iter() {
            for (slot, (_, g)) in total.iter_mut().zip(other.named_grads()) {
                slot.grad.add_assign(g)?;
            }
        }
        Ok(loss)
    }

    /// One optimizer step on the pooled global batch. All replicas apply the
    /// same update, so they stay synchronized.
    pub fn step(
        &mut self,
        batches: &[PairBatch<F>],
        optimizer: &mut AdamState<F>,
        cfg: &LossConfig,
    ) -> Result<F> {
        let loss = self.pooled_gradients(batches, cfg)?;
        let (head, rest) = self.replicas.split_at_mut(1);
        optimizer.step(&mut head[0].param_slots())?;
        head[0].clear_caches();
        for m in rest.iter_mut() {
            m.copy_params_from(&head[0])?;
            m.clear_caches();
        }
        Ok(loss)
    }
}
