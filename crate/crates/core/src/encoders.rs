//! Speech and image towers that map variable-length frame sequences into the
//! shared H-dimensional embedding space.
//!
//! A tower is a fixed stack: convolution blocks, masked mean pooling over
//! valid frames, then a linear projection to H. Image feature vectors enter as
//! one-frame sequences, so the same machinery serves both modalities.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{chunk_frames, FrameMatrix};
use crate::error::{Error, Result};
use crate::tensor::{Conv1d, ConvSpec, Dense, LayerParams, MeanPool, Padding, Relu, Scalar, Tensor};

/// Embedding width used throughout the reference setup.
pub const DEFAULT_EMBED_DIM: usize = 2056;

/// Kernel widths of the shallow baseline, in 10 ms frames: roughly phone,
/// syllable and word scale.
pub const SHALLOW_KERNELS: [usize; 3] = [5, 11, 25];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    ShallowCnn,
    ResidualCnn,
    ProjectionOnly,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::ShallowCnn => "shallow-cnn",
            EncoderKind::ResidualCnn => "residual-cnn",
            EncoderKind::ProjectionOnly => "projection-only",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shallow-cnn" => Ok(EncoderKind::ShallowCnn),
            "residual-cnn" => Ok(EncoderKind::ResidualCnn),
            "projection-only" => Ok(EncoderKind::ProjectionOnly),
            other => Err(Error::Config(format!("unknown encoder kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub widths: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub padding: Padding,
    pub embed_dim: usize,
    pub input_dim: usize,
}

impl EncoderConfig {
    pub fn projection_only(input_dim: usize, embed_dim: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::ProjectionOnly,
            widths: vec![],
            kernels: vec![],
            strides: vec![],
            padding: Padding::Same,
            embed_dim,
            input_dim,
        }
    }

    pub fn shallow(input_dim: usize, embed_dim: usize, widths: [usize; 3]) -> Self {
        EncoderConfig {
            kind: EncoderKind::ShallowCnn,
            widths: widths.to_vec(),
            kernels: SHALLOW_KERNELS.to_vec(),
            strides: vec![1; 3],
            padding: Padding::Same,
            embed_dim,
            input_dim,
        }
    }

    /// Stem convolution followed by `blocks` residual blocks of two
    /// convolutions each.
    pub fn residual(input_dim: usize, embed_dim: usize, width: usize, blocks: usize) -> Self {
        let mut kernels = vec![7];
        kernels.extend(std::iter::repeat_n(3, blocks));
        let mut strides = vec![2];
        strides.extend(std::iter::repeat_n(1, blocks));
        EncoderConfig {
            kind: EncoderKind::ResidualCnn,
            widths: vec![width; blocks + 1],
            kernels,
            strides,
            padding: Padding::Same,
            embed_dim,
            input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if self.kernels.len() != n || self.strides.len() != n {
            return Err(Error::Config(format!(
                "layer lists disagree: {} widths, {} kernels, {} strides",
                n,
                self.kernels.len(),
                self.strides.len()
            )));
        }
        if self.embed_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config("embed_dim and input_dim must be positive".into()));
        }
        if self.widths.iter().chain(&self.kernels).chain(&self.strides).any(|&v| v == 0) {
            return Err(Error::Config("widths, kernels and strides must be positive".into()));
        }
        match self.kind {
            EncoderKind::ProjectionOnly if n != 0 => Err(Error::Config(
                "projection-only tower takes no convolution layers".into(),
            )),
            EncoderKind::ShallowCnn if n != 3 => Err(Error::Config(format!(
                "shallow-cnn has exactly 3 convolution layers, got {n}"
            ))),
            EncoderKind::ResidualCnn => {
                if n == 0 {
                    return Err(Error::Config("residual-cnn needs a stem layer".into()));
                }
                if self.padding != Padding::Same {
                    return Err(Error::Config("residual-cnn requires same padding".into()));
                }
                for i in 1..n {
                    if self.widths[i] != self.widths[i - 1] || self.strides[i] != 1 {
                        return Err(Error::Config(format!(
                            "residual block {i} must keep width {} and stride 1",
                            self.widths[i - 1]
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Width of the pooled representation fed to the projection head.
    pub fn pooled_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn param_count(&self) -> usize {
        let conv = |k: usize, din: usize, dout: usize| k * din * dout + dout;
        let mut total = 0;
        let mut din = self.input_dim;
        for (i, (&w, &k)) in self.widths.iter().zip(&self.kernels).enumerate() {
            let is_block = self.kind == EncoderKind::ResidualCnn && i > 0;
            total += if is_block { 2 * conv(k, w, w) } else { conv(k, din, w) };
            din = w;
        }
        total + self.pooled_dim() * self.embed_dim + self.embed_dim
    }
}

/// A padded batch of sequences: data is [B×T×D]; example `b` has
/// `lengths[b]` valid leading frames.
#[derive(Clone, Debug)]
pub struct SeqBatch<F> {
    pub data: Tensor<F>,
    pub lengths: Vec<usize>,
}

impl<F: Scalar> SeqBatch<F> {
    pub fn new(data: Tensor<F>, lengths: Vec<usize>) -> Result<Self> {
        let (b, t, _) = data.dims3()?;
        if lengths.len() != b {
            return Err(Error::dim(format!("{} lengths for batch of {b}", lengths.len())));
        }
        if let Some(&l) = lengths.iter().find(|&&l| l > t) {
            return Err(Error::dim(format!("valid length {l} exceeds {t} frames")));
        }
        Ok(SeqBatch { data, lengths })
    }

    /// Feature vectors [B×D] as one-frame sequences.
    pub fn from_features(feats: &Tensor<F>) -> Result<Self> {
        let (b, d) = feats.dims2()?;
        let data = Tensor::from_vec(&[b, 1, d], feats.data().to_vec())?;
        Ok(SeqBatch {
            data,
            lengths: vec![1; b],
        })
    }

    /// Stacks frame matrices, trimming the time axis to the longest valid
    /// length. Frames past a sequence's valid length are never read by the
    /// towers, so trimming does not change any output.
    pub fn from_frames(items: &[&FrameMatrix]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Degenerate("empty batch".into()))?;
        let d = first.dim();
        let t = items.iter().map(|m| m.valid_frames()).max().unwrap_or(0).max(1);
        let mut data = Tensor::zeros(&[items.len(), t, d]);
        let mut lengths = Vec::with_capacity(items.len());
        for (b, m) in items.iter().enumerate() {
            if m.dim() != d {
                return Err(Error::dim(format!(
                    "frame dim {} in batch of dim {d}",
                    m.dim()
                )));
            }
            let v = m.valid_frames();
            let dst = &mut data.data_mut()[b * t * d..(b * t + v) * d];
            for (o, &s) in dst.iter_mut().zip(&m.frames().data()[..v * d]) {
                *o = F::of(s as f64);
            }
            lengths.push(v);
        }
        Ok(SeqBatch { data, lengths })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Encoder input where consecutive runs of sequences belong to one example;
/// their embeddings are averaged. `groups[i]` is the number of sequences
/// (chunks) of example `i`.
#[derive(Clone, Debug)]
pub struct EncoderInput<F> {
    pub batch: SeqBatch<F>,
    pub groups: Vec<usize>,
}

impl<F: Scalar> EncoderInput<F> {
    pub fn ungrouped(batch: SeqBatch<F>) -> Self {
        let groups = vec![1; batch.batch_size()];
        EncoderInput { batch, groups }
    }

    pub fn grouped(batch: SeqBatch<F>, groups: Vec<usize>) -> Result<Self> {
        if groups.iter().sum::<usize>() != batch.batch_size() || groups.contains(&0) {
            return Err(Error::dim(format!(
                "chunk groups {:?} do not cover {} sequences",
                groups,
                batch.batch_size()
            )));
        }
        Ok(EncoderInput { batch, groups })
    }

    pub fn examples(&self) -> usize {
        self.groups.len()
    }
}

fn group_mean<F: Scalar>(x: &Tensor<F>, groups: &[usize]) -> Result<Tensor<F>> {
    let (_, h) = x.dims2()?;
    if groups.iter().all(|&g| g == 1) {
        return Ok(x.clone());
    }
    let mut out = Tensor::zeros(&[groups.len(), h]);
    let mut row = 0;
    for (i, &g) in groups.iter().enumerate() {
        let orow = out.row_mut(i);
        orow.copy_from_slice(x.row(row));
        for r in row + 1..row + g {
            for (o, &v) in orow.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let n = F::of(g as f64);
        orow.iter_mut().for_each(|o| *o /= n);
        row += g;
    }
    Ok(out)
}

fn group_mean_backward<F: Scalar>(dy: &Tensor<F>, groups: &[usize]) -> Result<Tensor<F>> {
    let (_, h) = dy.dims2()?;
    if groups.iter().all(|&g| g == 1) {
        return Ok(dy.clone());
    }
    let total: usize = groups.iter().sum();
    let mut dx = Tensor::zeros(&[total, h]);
    let mut row = 0;
    for (i, &g) in groups.iter().enumerate() {
        let n = F::of(g as f64);
        let scaled: Vec<F> = dy.row(i).iter().map(|&d| d / n).collect();
        for r in row..row + g {
            dx.row_mut(r).copy_from_slice(&scaled);
        }
        row += g;
    }
    Ok(dx)
}

#[derive(Clone, Debug)]
enum Block<F> {
    Conv {
        conv: Conv1d<F>,
        relu: Relu<F>,
    },
    Residual {
        first: Conv1d<F>,
        relu_mid: Relu<F>,
        second: Conv1d<F>,
        relu_out: Relu<F>,
    },
}

impl<F: Scalar> Block<F> {
    fn infer(&self, x: &Tensor<F>, lengths: &[usize]) -> Result<(Tensor<F>, Vec<usize>)> {
        match self {
            Block::Conv { conv, .. } => {
                let (y, l) = conv.infer(x, lengths)?;
                Ok((crate::tensor::relu_forward(&y), l))
            }
            Block::Residual { first, second, .. } => {
                let (a, l) = first.infer(x, lengths)?;
                let a = crate::tensor::relu_forward(&a);
                let (b, l) = second.infer(&a, &l)?;
                let s = crate::tensor::residual_add(&b, x)?;
                Ok((crate::tensor::relu_forward(&s), l))
            }
        }
    }

    fn forward(&mut self, x: &Tensor<F>, lengths: &[usize]) -> Result<(Tensor<F>, Vec<usize>)> {
        match self {
            Block::Conv { conv, relu } => {
                let (y, l) = conv.forward(x, lengths)?;
                Ok((relu.forward(&y), l))
            }
            Block::Residual {
                first,
                relu_mid,
                second,
                relu_out,
            } => {
                let (a, l) = first.forward(x, lengths)?;
                let a = relu_mid.forward(&a);
                let (b, l) = second.forward(&a, &l)?;
                let s = crate::tensor::residual_add(&b, x)?;
                Ok((relu_out.forward(&s), l))
            }
        }
    }

    fn backward(&mut self, dy: &Tensor<F>, need_input_grad: bool) -> Result<Option<Tensor<F>>> {
        match self {
            Block::Conv { conv, relu } => {
                let d = relu.backward(dy)?;
                conv.backward(&d, need_input_grad)
            }
            Block::Residual {
                first,
                relu_mid,
                second,
                relu_out,
            } => {
                let ds = relu_out.backward(dy)?;
                let da = second.backward(&ds, true)?.expect("input grad requested");
                let da = relu_mid.backward(&da)?;
                let dx = first.backward(&da, true)?.expect("input grad requested");
                Ok(Some(crate::tensor::residual_add(&dx, &ds)?))
            }
        }
    }

    fn params(&self) -> Vec<&LayerParams<F>> {
        match self {
            Block::Conv { conv, .. } => vec![&conv.params],
            Block::Residual { first, second, .. } => vec![&first.params, &second.params],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut LayerParams<F>> {
        match self {
            Block::Conv { conv, .. } => vec![&mut conv.params],
            Block::Residual { first, second, .. } => vec![&mut first.params, &mut second.params],
        }
    }
}

/// One modality's encoder.
#[derive(Clone, Debug)]
pub struct Tower<F> {
    config: EncoderConfig,
    name: String,
    blocks: Vec<Block<F>>,
    pool: MeanPool,
    proj: Dense<F>,
    groups: Option<Vec<usize>>,
}

impl<F: Scalar> Tower<F> {
    pub fn new<R: rand::Rng + ?Sized>(
        name: &str,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.widths.len());
        let mut din = config.input_dim;
        for (i, ((&w, &k), &s)) in config
            .widths
            .iter()
            .zip(&config.kernels)
            .zip(&config.strides)
            .enumerate()
        {
            let spec = ConvSpec::new(s, config.padding);
            if config.kind == EncoderKind::ResidualCnn && i > 0 {
                blocks.push(Block::Residual {
                    first: Conv1d::init(k, w, w, spec, rng),
                    relu_mid: Relu::new(),
                    second: Conv1d::init(k, w, w, spec, rng),
                    relu_out: Relu::new(),
                });
            } else {
                blocks.push(Block::Conv {
                    conv: Conv1d::init(k, din, w, spec, rng),
                    relu: Relu::new(),
                });
            }
            din = w;
        }
        let proj = Dense::init(config.pooled_dim(), config.embed_dim, rng);
        Ok(Tower {
            config,
            name: name.to_string(),
            blocks,
            pool: MeanPool::new(),
            proj,
            groups: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Sets the projection head to the identity with zero bias. Requires the
    /// pooled width to equal H.
    pub fn set_identity_projection(&mut self) -> Result<()> {
        let (din, dout) = self.proj.params.weight.dims2()?;
        if din != dout {
            return Err(Error::Config(format!(
                "identity projection needs pooled dim {din} == H {dout}"
            )));
        }
        let w = self.proj.params.weight.data_mut();
        w.iter_mut().for_each(|v| *v = F::zero());
        for i in 0..din {
            w[i * dout + i] = F::one();
        }
        self.proj.params.bias.fill_zero();
        Ok(())
    }

    fn check_input(&self, x: &SeqBatch<F>) -> Result<()> {
        if x.dim() != self.config.input_dim {
            return Err(Error::Config(format!(
                "{} tower expects feature dim {}, got {}",
                self.name,
                self.config.input_dim,
                x.dim()
            )));
        }
        Ok(())
    }

    /// Encodes each sequence without recording activations: [B×H].
    pub fn infer(&self, x: &SeqBatch<F>) -> Result<Tensor<F>> {
        self.check_input(x)?;
        let mut lengths = x.lengths.clone();
        let mut h = None::<Tensor<F>>;
        for block in &self.blocks {
            let (y, l) = block.infer(h.as_ref().unwrap_or(&x.data), &lengths)?;
            h = Some(y);
            lengths = l;
        }
        let pooled = crate::tensor::mean_pool_time(h.as_ref().unwrap_or(&x.data), &lengths)?;
        let y = self.proj.infer(&pooled)?;
        y.ensure_finite(&format!("{} embeddings", self.name))?;
        Ok(y)
    }

    pub fn infer_grouped(&self, x: &EncoderInput<F>) -> Result<Tensor<F>> {
        group_mean(&self.infer(&x.batch)?, &x.groups)
    }

    /// Training forward pass; records activations for [`Tower::backward`].
    pub fn forward(&mut self, x: &EncoderInput<F>) -> Result<Tensor<F>> {
        self.check_input(&x.batch)?;
        let mut lengths = x.batch.lengths.clone();
        let mut h = None::<Tensor<F>>;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (y, l) = block.forward(h.as_ref().unwrap_or(&x.batch.data), &lengths)?;
            y.ensure_finite(&format!("{} block {i} activations", self.name))?;
            h = Some(y);
            lengths = l;
        }
        let pooled = self
            .pool
            .forward(h.as_ref().unwrap_or(&x.batch.data), &lengths)?;
        let y = self.proj.forward(&pooled)?;
        y.ensure_finite(&format!("{} embeddings", self.name))?;
        self.groups = Some(x.groups.clone());
        group_mean(&y, &x.groups)
    }

    /// Accumulates parameter gradients for the upstream gradient on the
    /// example embeddings returned by the last [`Tower::forward`].
    pub fn backward(&mut self, dy: &Tensor<F>) -> Result<()> {
        let groups = self
            .groups
            .take()
            .ok_or_else(|| Error::State(format!("{} tower: backward before forward", self.name)))?;
        let d = group_mean_backward(dy, &groups)?;
        let d = self.proj.backward(&d)?;
        let mut d = self.pool.backward(&d)?;
        for i in (0..self.blocks.len()).rev() {
            match self.blocks[i].backward(&d, i > 0)? {
                Some(dx) => {
                    dx.ensure_finite(&format!("{} block {i} gradients", self.name))?;
                    d = dx;
                }
                None => break,
            }
        }
        for p in self.layer_params() {
            p.grad_weight.ensure_finite(&format!("{} parameter gradients", self.name))?;
        }
        Ok(())
    }

    fn layer_params(&self) -> Vec<&LayerParams<F>> {
        let mut out: Vec<&LayerParams<F>> = self.blocks.iter().flat_map(|b| b.params()).collect();
        out.push(&self.proj.params);
        out
    }

    fn layer_params_mut(&mut self) -> Vec<&mut LayerParams<F>> {
        let mut out: Vec<&mut LayerParams<F>> =
            self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        out.push(&mut self.proj.params);
        out
    }

    fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            match b {
                Block::Conv { .. } => names.push(format!("{}.conv{i}", self.name)),
                Block::Residual { .. } => {
                    names.push(format!("{}.block{i}.conv_a", self.name));
                    names.push(format!("{}.block{i}.conv_b", self.name));
                }
            }
        }
        names.push(format!("{}.proj", self.name));
        names
    }

    pub fn zero_grad(&mut self) {
        self.layer_params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn clear_caches(&mut self) {
        for b in &mut self.blocks {
            match b {
                Block::Conv { conv, relu } => {
                    conv.clear_cache();
                    relu.clear_cache();
                }
                Block::Residual {
                    first,
                    relu_mid,
                    second,
                    relu_out,
                } => {
                    first.clear_cache();
                    relu_mid.clear_cache();
                    second.clear_cache();
                    relu_out.clear_cache();
                }
            }
        }
        self.pool.clear_cache();
        self.proj.clear_cache();
        self.groups = None;
    }
}

/// A named parameter tensor together with its gradient accumulator.
pub struct ParamSlot<'a, F> {
    pub name: String,
    pub value: &'a mut Tensor<F>,
    pub grad: &'a mut Tensor<F>,
}

/// Speech tower plus image tower, both emitting H-dimensional vectors.
#[derive(Clone, Debug)]
pub struct DualEncoder<F> {
    pub speech: Tower<F>,
    pub image: Tower<F>,
}

impl<F: Scalar> DualEncoder<F> {
    /// Builds both towers with parameters drawn from a generator seeded by
    /// `seed`; speech parameters are drawn first.
    pub fn new(speech: EncoderConfig, image: EncoderConfig, seed: u64) -> Result<Self> {
        if speech.embed_dim != image.embed_dim {
            return Err(Error::Config(format!(
                "towers disagree on H: speech {} vs image {}",
                speech.embed_dim, image.embed_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(DualEncoder {
            speech: Tower::new("speech", speech, &mut rng)?,
            image: Tower::new("image", image, &mut rng)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.speech.embed_dim()
    }

    pub fn encode_speech(&self, frames: &SeqBatch<F>) -> Result<Tensor<F>> {
        self.speech.infer(frames)
    }

    pub fn encode_speech_grouped(&self, input: &EncoderInput<F>) -> Result<Tensor<F>> {
        self.speech.infer_grouped(input)
    }

    pub fn encode_image(&self, images: &SeqBatch<F>) -> Result<Tensor<F>> {
        self.image.infer(images)
    }

    /// Encodes precomputed image feature vectors [B×D].
    pub fn encode_image_features(&self, feats: &Tensor<F>) -> Result<Tensor<F>> {
        self.image.infer(&SeqBatch::from_features(feats)?)
    }

    /// Splits an utterance into `window_frames` chunks, encodes each one
    /// independently and returns the mean of the chunk embeddings.
    pub fn encode_long_utterance(&self, frames: &FrameMatrix, window_frames: usize) -> Result<Vec<F>> {
        let chunks = chunk_frames(frames, window_frames)?;
        let refs: Vec<&FrameMatrix> = chunks.iter().collect();
        let n = refs.len();
        let input = EncoderInput::grouped(SeqBatch::from_frames(&refs)?, vec![n])?;
        Ok(self.speech.infer_grouped(&input)?.into_data())
    }

    /// Training forward over a paired batch: (speech, image) embeddings.
    pub fn forward(
        &mut self,
        speech: &EncoderInput<F>,
        image: &EncoderInput<F>,
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        if speech.examples() != image.examples() {
            return Err(Error::dim(format!(
                "{} speech examples vs {} image examples",
                speech.examples(),
                image.examples()
            )));
        }
        Ok((self.speech.forward(speech)?, self.image.forward(image)?))
    }

    pub fn backward(&mut self, d_speech: &Tensor<F>, d_image: &Tensor<F>) -> Result<()> {
        self.speech.backward(d_speech)?;
        self.image.backward(d_image)
    }

    pub fn zero_grad(&mut self) {
        self.speech.zero_grad();
        self.image.zero_grad();
    }

    pub fn clear_caches(&mut self) {
        self.speech.clear_caches();
        self.image.clear_caches();
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every parameter tensor in a fixed order: per layer, weight then bias.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for tower in [&self.speech, &self.image] {
            for (name, p) in tower.layer_names().into_iter().zip(tower.layer_params()) {
                out.push((format!("{name}.weight"), &p.weight));
                out.push((format!("{name}.bias"), &p.bias));
            }
        }
        out
    }

    pub fn named_grads(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for tower in [&self.speech, &self.image] {
            for (name, p) in tower.layer_names().into_iter().zip(tower.layer_params()) {
                out.push((format!("{name}.weight"), &p.grad_weight));
                out.push((format!("{name}.bias"), &p.grad_bias));
            }
        }
        out
    }

    /// Parameter/gradient pairs in the order of [`DualEncoder::named_params`].
    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_, F>> {
        let mut out = Vec::new();
        let DualEncoder { speech, image } = self;
        for tower in [speech, image] {
            let names = tower.layer_names();
            for (name, p) in names.into_iter().zip(tower.layer_params_mut()) {
                let LayerParams {
                    weight,
                    bias,
                    grad_weight,
                    grad_bias,
                } = p;
                out.push(ParamSlot {
                    name: format!("{name}.weight"),
                    value: weight,
                    grad: grad_weight,
                });
                out.push(ParamSlot {
                    name: format!("{name}.bias"),
                    value: bias,
                    grad: grad_bias,
                });
            }
        }
        out
    }

    pub fn params_bit_eq(&self, other: &DualEncoder<F>) -> bool {
        let a = self.named_params();
        let b = other.named_params();
        a.len() == b.len() && a.iter().zip(&b).all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    /// Overwrites parameter values from `other`, which must share the layout.
    pub fn copy_params_from(&mut self, other: &DualEncoder<F>) -> Result<()> {
        let src = other.named_params();
        let mut dst = self.param_slots();
        if src.len() != dst.len() {
            return Err(Error::State("parameter layouts differ".into()));
        }
        for ((name, t), slot) in src.into_iter().zip(dst.iter_mut()) {
            if name != slot.name || t.shape() != slot.value.shape() {
                return Err(Error::State(format!("parameter {name} does not match {}", slot.name)));
            }
            slot.value.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}
