//! Seeded paired corpora with a known shared latent.
//!
//! For each pair a latent z ~ N(0, I) is drawn; speech frames are A_s·z
//! repeated over T frames plus per-frame Gaussian noise, image features are
//! A_i·z plus noise. A_s and A_i are fixed random projections with entries
//! N(0, 1/latent_dim).

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::fmat;
use super::manifest::{DatasetManifest, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageProjection {
    Random,
    /// Image features are the latent itself (requires image_dim == latent_dim).
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_pairs: usize,
    /// The last `dev_pairs` pairs go to the dev split, the rest to train.
    pub dev_pairs: usize,
    pub latent_dim: usize,
    pub speech_frames: usize,
    pub speech_dim: usize,
    pub image_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub image_projection: ImageProjection,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_pairs: 256,
            dev_pairs: 64,
            latent_dim: 16,
            speech_frames: 24,
            speech_dim: 16,
            image_dim: 16,
            noise_sigma: 0.1,
            seed: 7,
            image_projection: ImageProjection::Random,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::Argument("n_pairs must be at least 1".into()));
        }
        if self.dev_pairs > self.n_pairs {
            return Err(Error::Argument("dev_pairs exceeds n_pairs".into()));
        }
        if [self.latent_dim, self.speech_frames, self.speech_dim, self.image_dim].contains(&0) {
            return Err(Error::Argument("synthetic dimensions must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Argument("noise_sigma must be non-negative".into()));
        }
        if self.image_projection == ImageProjection::Identity && self.image_dim != self.latent_dim {
            return Err(Error::Argument("identity image projection needs image_dim == latent_dim".into()));
        }
        Ok(())
    }

    pub fn id(i: usize) -> String {
        format!("pair{i:05}")
    }

    pub fn split_of(&self, i: usize) -> Split {
        if i >= self.n_pairs - self.dev_pairs {
            Split::Dev
        } else {
            Split::Train
        }
    }
}

/// In-memory synthetic corpus.
#[derive(Clone, Debug)]
pub struct SyntheticPairs {
    /// [n × latent_dim]
    pub latents: Tensor<f32>,
    /// Each [speech_frames × speech_dim]
    pub speech: Vec<Tensor<f32>>,
    /// Each [1 × image_dim]
    pub image: Vec<Tensor<f32>>,
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

fn project(a: &[f64], z: &[f64], rows: usize) -> Vec<f64> {
    let cols = z.len();
    (0..rows)
        .map(|r| a[r * cols..(r + 1) * cols].iter().zip(z).map(|(x, y)| x * y).sum())
        .collect()
}

pub fn generate_pairs(spec: &SyntheticSpec) -> Result<SyntheticPairs> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let a_s = gaussian_matrix(spec.speech_dim, spec.latent_dim, scale, &mut rng);
    let a_i = match spec.image_projection {
        ImageProjection::Random => gaussian_matrix(spec.image_dim, spec.latent_dim, scale, &mut rng),
        ImageProjection::Identity => {
            let mut m = vec![0.0; spec.latent_dim * spec.latent_dim];
            for i in 0..spec.latent_dim {
                m[i * spec.latent_dim + i] = 1.0;
            }
            m
        }
    };
    let sigma = spec.noise_sigma;
    let mut latents = Vec::with_capacity(spec.n_pairs * spec.latent_dim);
    let mut speech = Vec::with_capacity(spec.n_pairs);
    let mut image = Vec::with_capacity(spec.n_pairs);
    for _ in 0..spec.n_pairs {
        let z: Vec<f64> = (0..spec.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        let s = project(&a_s, &z, spec.speech_dim);
        let mut frames = Vec::with_capacity(spec.speech_frames * spec.speech_dim);
        for _ in 0..spec.speech_frames {
            for &v in &s {
                let noise = if sigma > 0.0 { sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                frames.push((v + noise) as f32);
            }
        }
        let img: Vec<f32> = project(&a_i, &z, spec.image_dim)
            .into_iter()
            .map(|v| {
                let noise = if sigma > 0.0 { sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                (v + noise) as f32
            })
            .collect();
        latents.extend(z.iter().map(|&v| v as f32));
        speech.push(Tensor::from_vec(&[spec.speech_frames, spec.speech_dim], frames)?);
        image.push(Tensor::from_vec(&[1, spec.image_dim], img)?);
    }
    Ok(SyntheticPairs {
        latents: Tensor::from_vec(&[spec.n_pairs, spec.latent_dim], latents)?,
        speech,
        image,
    })
}

/// Name of the manifest file written by [`gen_synthetic`].
pub const MANIFEST_FILE: &str = "manifest.tsv";
/// Name of the latent matrix written by [`gen_synthetic`].
pub const LATENTS_FILE: &str = "latents.fmat";

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes `speech/<id>.fmat`, `image/<id>.fmat`, `latents.fmat` and
/// `manifest.tsv` under `out_dir`.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let pairs = generate_pairs(spec)?;
    create_dir(&out_dir.join("speech"))?;
    create_dir(&out_dir.join("image"))?;
    let mut records = Vec::with_capacity(spec.n_pairs);
    for (i, (s, im)) in pairs.speech.iter().zip(&pairs.image).enumerate() {
        let id = SyntheticSpec::id(i);
        let speech_path = PathBuf::from("speech").join(format!("{id}.fmat"));
        let image_path = PathBuf::from("image").join(format!("{id}.fmat"));
        fmat::write_file(out_dir.join(&speech_path), s)?;
        fmat::write_file(out_dir.join(&image_path), im)?;
        records.push(ManifestRecord {
            id,
            speech_path,
            image_path,
            split: spec.split_of(i),
        });
    }
    fmat::write_file(out_dir.join(LATENTS_FILE), &pairs.latents)?;
    let manifest = DatasetManifest::new(out_dir, records)?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_projection_without_noise_copies_latents() {
        let spec = SyntheticSpec {
            n_pairs: 5,
            dev_pairs: 0,
            noise_sigma: 0.0,
            image_projection: ImageProjection::Identity,
            ..SyntheticSpec::default()
        };
        let p = generate_pairs(&spec).unwrap();
        for i in 0..5 {
            assert_eq!(p.image[i].data(), p.latents.row(i));
        }
    }

    #[test]
    fn speech_frames_share_one_signal_without_noise() {
        let spec = SyntheticSpec {
            n_pairs: 2,
            dev_pairs: 0,
            noise_sigma: 0.0,
            ..SyntheticSpec::default()
        };
        let p = generate_pairs(&spec).unwrap();
        let s = &p.speech[1];
        for t in 1..spec.speech_frames {
            assert_eq!(s.row(t), s.row(0));
        }
    }

    #[test]
    fn zero_pairs_rejected() {
        let spec = SyntheticSpec {
            n_pairs: 0,
            dev_pairs: 0,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate_pairs(&spec), Err(Error::Argument(_))));
    }

    #[test]
    fn corpus_loads_back_and_is_reproducible() {
        let spec = SyntheticSpec::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_synthetic(&spec, a.path()).unwrap();
        gen_synthetic(&spec, b.path()).unwrap();
        let m = DatasetManifest::load(a.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.records.len(), 256);
        assert_eq!(m.split(Split::Dev).len(), 64);
        for r in &m.records {
            let sa = fs::read(m.resolve(&r.speech_path)).unwrap();
            let sb = fs::read(b.path().join(&r.speech_path)).unwrap();
            assert_eq!(sa, sb);
            assert_eq!(fmat::decode(&sa).unwrap().shape(), &[24, 16]);
            let ia = fs::read(m.resolve(&r.image_path)).unwrap();
            assert_eq!(ia, fs::read(b.path().join(&r.image_path)).unwrap());
        }
    }
}
