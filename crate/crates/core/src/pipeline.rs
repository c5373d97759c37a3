//! From manifest records to encoder inputs: speech pad/crop and chunking,
//! image feature loading or augmentation, and batched embedding of a split.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::config::{CropSetting, TrainConfig};
use crate::contrastive::PairBatch;
use crate::datapipe::{
    augment_image, chunk_frames, fmat, record_rng, record_seed, resize_bilinear, AugmentParams,
    CropMode, CropRect, DatasetManifest, FrameMatrix, Image, Split,
};
use crate::encoders::{DualEncoder, EncoderInput, SeqBatch};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Examples per batch when embedding a whole split.
pub const EMBED_BATCH: usize = 64;

const STREAM_CROP: u64 = 1;
const STREAM_AUGMENT: u64 = 2;

/// A manifest record with its feature files loaded.
#[derive(Clone, Debug)]
pub struct LoadedRecord {
    pub id: String,
    pub speech: FrameMatrix,
    pub image: Tensor<f32>,
}

/// Loads every record of `split` in manifest order.
pub fn load_records(manifest: &DatasetManifest, split: Split) -> Result<Vec<LoadedRecord>> {
    manifest
        .split(split)
        .par_iter()
        .map(|r| {
            let speech = fmat::read_file(manifest.resolve(&r.speech_path))?;
            let image = fmat::read_file(manifest.resolve(&r.image_path))?;
            Ok(LoadedRecord {
                id: r.id.clone(),
                speech: FrameMatrix::new(speech)?,
                image,
            })
        })
        .collect()
}

/// Preprocessing settings shared by training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub seed: u64,
    pub target_frames: usize,
    pub chunk_frames: usize,
    pub crop: CropSetting,
    /// 0 for feature-vector image files.
    pub image_channels: usize,
    /// Applied to pixel images during training only.
    pub augment: Option<AugmentParams>,
    pub resolution: (usize, usize),
}

impl Pipeline {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Pipeline {
            seed: cfg.seed,
            target_frames: cfg.target_frames(),
            chunk_frames: cfg.chunk_frames,
            crop: cfg.crop,
            image_channels: cfg.image_channels,
            augment: cfg.augment_enabled.then_some(cfg.augment),
            resolution: cfg.augment.target_resolution,
        }
    }

    /// Padded/cropped speech, split into chunk windows. `epoch` only matters
    /// for random crops.
    pub fn speech_chunks<'a>(&self, rec: &'a LoadedRecord, epoch: u64) -> Result<Vec<Cow<'a, FrameMatrix>>> {
        let valid = rec.speech.valid_frames();
        if valid == 0 {
            return Err(Error::Degenerate(format!("record {} has no speech frames", rec.id)));
        }
        // Padding never reaches the towers, so a short utterance can be used as is.
        if valid <= self.target_frames && valid <= self.chunk_frames {
            return Ok(vec![Cow::Borrowed(&rec.speech)]);
        }
        let mode = match self.crop {
            CropSetting::Head => CropMode::Head,
            CropSetting::Center => CropMode::Center,
            CropSetting::Random => CropMode::Random(record_seed(self.seed, &rec.id, STREAM_CROP ^ (epoch << 8))),
        };
        let fitted = rec.speech.pad_or_crop_with(self.target_frames, mode);
        Ok(chunk_frames(&fitted, self.chunk_frames)?.into_iter().map(Cow::Owned).collect())
    }

    /// Image input as a frame sequence. Feature files pass through; pixel
    /// images are augmented (training) or resized to the target resolution.
    pub fn image_frames(&self, rec: &LoadedRecord, epoch: u64, training: bool) -> Result<FrameMatrix> {
        if self.image_channels == 0 {
            return FrameMatrix::new(rec.image.clone());
        }
        let img = Image::from_matrix(&rec.image, self.image_channels)?;
        if img.height == 0 || img.width == 0 {
            return Err(Error::Degenerate(format!("record {} has an empty image", rec.id)));
        }
        let out = match (&self.augment, training) {
            (Some(params), true) => {
                let mut rng = record_rng(self.seed, &rec.id, STREAM_AUGMENT ^ (epoch << 8));
                augment_image(&img, params, &mut rng)?
            }
            _ => {
                let full = CropRect {
                    top: 0,
                    left: 0,
                    height: img.height,
                    width: img.width,
                };
                resize_bilinear(&img, full, self.resolution.0, self.resolution.1)
            }
        };
        FrameMatrix::new(out.to_matrix())
    }

    /// Encoder inputs for a batch of records, in order.
    pub fn build_batch<F: Scalar>(&self, recs: &[&LoadedRecord], epoch: u64, training: bool) -> Result<PairBatch<F>> {
        let mut chunks = Vec::new();
        let mut groups = Vec::with_capacity(recs.len());
        for r in recs {
            let c = self.speech_chunks(r, epoch)?;
            groups.push(c.len());
            chunks.extend(c);
        }
        let chunk_refs: Vec<&FrameMatrix> = chunks.iter().map(|c| c.as_ref()).collect();
        let speech = EncoderInput::grouped(SeqBatch::from_frames(&chunk_refs)?, groups)?;

        let images = recs
            .iter()
            .map(|r| self.image_frames(r, epoch, training))
            .collect::<Result<Vec<_>>>()?;
        let image_refs: Vec<&FrameMatrix> = images.iter().collect();
        let image = EncoderInput::ungrouped(SeqBatch::from_frames(&image_refs)?);
        Ok(PairBatch { speech, image })
    }

    /// Feature dimensions (speech, image) seen by the towers.
    pub fn input_dims(&self, rec: &LoadedRecord) -> Result<(usize, usize)> {
        Ok((rec.speech.dim(), self.image_frames(rec, 0, false)?.dim()))
    }
}

/// Embeds records with inference-mode preprocessing; returns (speech, image)
/// embeddings with row i belonging to `records[i]`.
pub fn embed_records<F: Scalar>(
    model: &DualEncoder<F>,
    records: &[LoadedRecord],
    pipeline: &Pipeline,
) -> Result<(Tensor<F>, Tensor<F>)> {
    if records.is_empty() {
        let h = model.embed_dim();
        return Ok((Tensor::zeros(&[0, h]), Tensor::zeros(&[0, h])));
    }
    let refs: Vec<&LoadedRecord> = records.iter().collect();
    let parts: Vec<(Tensor<F>, Tensor<F>)> = refs
        .par_chunks(EMBED_BATCH)
        .map(|chunk| {
            let b: PairBatch<F> = pipeline.build_batch(chunk, 0, false)?;
            Ok((model.encode_speech_grouped(&b.speech)?, model.image.infer_grouped(&b.image)?))
        })
        .collect::<Result<_>>()?;
    let (s, i): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok((Tensor::concat_rows(&s)?, Tensor::concat_rows(&i)?))
}
