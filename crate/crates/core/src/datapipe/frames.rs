use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Duration of one speech frame.
pub const FRAME_PERIOD_MS: usize = 10;

/// Chunk window of the speech feature extractor: 20 s of 10 ms frames.
pub const DEFAULT_CHUNK_FRAMES: usize = 2000;

/// Per-frame speech features [T×D]. Rows at or past `valid_frames` are
/// padding and are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatrix {
    frames: Tensor<f32>,
    valid_frames: usize,
}

/// Which window to keep when an utterance is longer than the target length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropMode {
    Head,
    Center,
    /// Uniform offset drawn from a generator seeded with the given value.
    Random(u64),
}

impl FrameMatrix {
    /// All rows valid.
    pub fn new(frames: Tensor<f32>) -> Result<Self> {
        let (t, _) = frames.dims2()?;
        Ok(FrameMatrix {
            frames,
            valid_frames: t,
        })
    }

    pub fn with_valid(frames: Tensor<f32>, valid_frames: usize) -> Result<Self> {
        let (t, d) = frames.dims2()?;
        if valid_frames > t {
            return Err(Error::dim(format!("{valid_frames} valid frames in a {t}-row matrix")));
        }
        if frames.data()[valid_frames * d..].iter().any(|&v| v != 0.0) {
            return Err(Error::Data("padding rows must be zero".into()));
        }
        Ok(FrameMatrix {
            frames,
            valid_frames,
        })
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    #[cfg(test)]
    pub(crate) fn frames_mut(&mut self) -> &mut Tensor<f32> {
        &mut self.frames
    }

    pub fn rows(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn valid_frames(&self) -> usize {
        self.valid_frames
    }

    fn valid_rows(&self, start: usize, n: usize) -> &[f32] {
        let d = self.dim();
        &self.frames.data()[start * d..(start + n) * d]
    }

    fn from_rows_padded(rows: &[f32], valid: usize, target: usize, d: usize) -> FrameMatrix {
        let mut data = vec![0.0; target * d];
        data[..valid * d].copy_from_slice(rows);
        FrameMatrix {
            frames: Tensor::from_vec(&[target, d], data).expect("sized above"),
            valid_frames: valid,
        }
    }

    /// Head-crops or zero-pads to exactly `target` rows.
    pub fn pad_or_crop(&self, target: usize) -> FrameMatrix {
        self.pad_or_crop_with(target, CropMode::Head)
    }

    /// Pads or crops to exactly `target` rows. Crops are taken from the valid
    /// frames only; padding rows are zero and `valid_frames` records how many
    /// real frames remain.
    pub fn pad_or_crop_with(&self, target: usize, mode: CropMode) -> FrameMatrix {
        let d = self.dim();
        let valid = self.valid_frames;
        if valid <= target {
            return Self::from_rows_padded(self.valid_rows(0, valid), valid, target, d);
        }
        let slack = valid - target;
        let start = match mode {
            CropMode::Head => 0,
            CropMode::Center => slack / 2,
            CropMode::Random(seed) => ChaCha8Rng::seed_from_u64(seed).random_range(0..=slack),
        };
        Self::from_rows_padded(self.valid_rows(start, target), target, target, d)
    }
}

/// Splits the valid frames into `ceil(T / window)` windows. Every chunk has
/// exactly `window` rows; the last is zero-padded and its `valid_frames`
/// records the remainder.
pub fn chunk_frames(frames: &FrameMatrix, window: usize) -> Result<Vec<FrameMatrix>> {
    if window == 0 {
        return Err(Error::Argument("chunk window must be at least one frame".into()));
    }
    let t = frames.valid_frames();
    if t == 0 {
        return Err(Error::Degenerate("cannot chunk an utterance with no frames".into()));
    }
    let d = frames.dim();
    Ok((0..t.div_ceil(window))
        .map(|c| {
            let start = c * window;
            let n = window.min(t - start);
            FrameMatrix::from_rows_padded(frames.valid_rows(start, n), n, window, d)
        })
        .collect())
}

/// Target lengths in frames for the reference corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetPreset {
    /// Flickr audio captions, 8 s.
    Facc,
    /// Conceptual spoken captions, 8 s.
    Csc,
    /// Places audio captions, 20 s.
    Places,
    /// Localized narratives, 40 s.
    LocNarr,
    Custom,
}

impl DatasetPreset {
    pub fn target_seconds(self) -> Option<usize> {
        match self {
            DatasetPreset::Facc | DatasetPreset::Csc => Some(8),
            DatasetPreset::Places => Some(20),
            DatasetPreset::LocNarr => Some(40),
            DatasetPreset::Custom => None,
        }
    }

    pub fn target_frames(self) -> Option<usize> {
        self.target_seconds().map(|s| s * 1000 / FRAME_PERIOD_MS)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "facc" => Ok(DatasetPreset::Facc),
            "csc" => Ok(DatasetPreset::Csc),
            "places" => Ok(DatasetPreset::Places),
            "locnarr" => Ok(DatasetPreset::LocNarr),
            "custom" => Ok(DatasetPreset::Custom),
            other => Err(Error::Config(format!("unknown dataset preset `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetPreset::Facc => "facc",
            DatasetPreset::Csc => "csc",
            DatasetPreset::Places => "places",
            DatasetPreset::LocNarr => "locnarr",
            DatasetPreset::Custom => "custom",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(t: usize, d: usize) -> FrameMatrix {
        let data = (0..t * d).map(|i| i as f32 + 1.0).collect();
        FrameMatrix::new(Tensor::from_vec(&[t, d], data).unwrap()).unwrap()
    }

    #[test]
    fn pad_or_crop_examples() {
        let f = ramp(800, 4);
        assert_eq!(f.pad_or_crop(800), f);

        let short = ramp(500, 4);
        let p = short.pad_or_crop(800);
        assert_eq!(p.rows(), 800);
        assert_eq!(p.valid_frames(), 500);
        assert!(p.frames().data()[500 * 4..].iter().all(|&v| v == 0.0));
        assert_eq!(&p.frames().data()[..500 * 4], short.frames().data());

        let long = ramp(1000, 4);
        let c = long.pad_or_crop(800);
        assert_eq!(c.valid_frames(), 800);
        assert_eq!(c.frames().data(), &long.frames().data()[..800 * 4]);
    }

    #[test]
    fn center_and_random_crop_stay_in_valid_region() {
        let long = ramp(10, 1);
        assert_eq!(long.pad_or_crop_with(4, CropMode::Center).frames().data(), &[4.0, 5.0, 6.0, 7.0]);
        let r = long.pad_or_crop_with(4, CropMode::Random(3));
        assert_eq!(r.frames().data(), long.pad_or_crop_with(4, CropMode::Random(3)).frames().data());
        let first = r.frames().data()[0];
        assert!((1.0..=7.0).contains(&first));
    }

    #[test]
    fn with_valid_rejects_nonzero_padding() {
        let t = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        assert!(FrameMatrix::with_valid(t, 1).is_err());
    }

    #[test]
    fn chunk_examples() {
        let f = ramp(2000, 1);
        let c = chunk_frames(&f, 2000).unwrap();
        assert_eq!(c, vec![f.clone()]);

        let two = ramp(4000, 1);
        let c = chunk_frames(&two, 2000).unwrap();
        assert_eq!(c.len(), 2);

        let c = chunk_frames(&ramp(4500, 1), 2000).unwrap();
        let valid: Vec<usize> = c.iter().map(|m| m.valid_frames()).collect();
        assert_eq!(valid, vec![2000, 2000, 500]);
        assert!(c.iter().all(|m| m.rows() == 2000));

        let empty = FrameMatrix::new(Tensor::zeros(&[0, 3])).unwrap();
        assert!(matches!(chunk_frames(&empty, 10), Err(Error::Degenerate(_))));
    }

    #[test]
    fn presets() {
        assert_eq!(DatasetPreset::Facc.target_frames(), Some(800));
        assert_eq!(DatasetPreset::Places.target_frames(), Some(2000));
        assert_eq!(DatasetPreset::LocNarr.target_frames(), Some(4000));
    }

    proptest! {
        #[test]
        fn pad_or_crop_exact_and_idempotent(t in 1usize..300, target in 1usize..300, d in 1usize..4) {
            let f = ramp(t, d);
            let once = f.pad_or_crop(target);
            prop_assert_eq!(once.rows(), target);
            prop_assert_eq!(once.valid_frames(), t.min(target));
            prop_assert_eq!(once.pad_or_crop(target), once);
        }

        #[test]
        fn chunks_reconstruct(t in 1usize..500, window in 1usize..120) {
            let f = ramp(t, 2);
            let chunks = chunk_frames(&f, window).unwrap();
            prop_assert_eq!(chunks.len(), t.div_ceil(window));
            let mut joined = Vec::new();
            for c in &chunks {
                joined.extend_from_slice(c.valid_rows(0, c.valid_frames()));
            }
            prop_assert_eq!(&joined[..], f.frames().data());
        }
    }
}
