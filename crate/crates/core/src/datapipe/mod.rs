//! Feature files, manifests, speech pad/crop/chunk contracts, image
//! augmentation and the synthetic corpus generator.

mod augment;
pub mod fmat;
mod frames;
mod manifest;
mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use augment::{
    augment_image, augment_image_with_crop, min_crop_area, resize_bilinear, sample_crop,
    AugmentParams, CropRect, Image,
};
pub use frames::{
    chunk_frames, CropMode, DatasetPreset, FrameMatrix, DEFAULT_CHUNK_FRAMES, FRAME_PERIOD_MS,
};
pub use manifest::{DatasetManifest, ManifestRecord, Split};
pub use synthetic::{
    gen_synthetic, generate_pairs, ImageProjection, SyntheticPairs, SyntheticSpec, LATENTS_FILE,
    MANIFEST_FILE,
};

/// Seed derived from (global seed, record id, stream), so per-record random
/// draws do not depend on which worker handles the record or in what order.
pub fn record_seed(global_seed: u64, record_id: &str, stream: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(stream.to_le_bytes());
    h.update(record_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn record_rng(global_seed: u64, record_id: &str, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(record_seed(global_seed, record_id, stream))
}
