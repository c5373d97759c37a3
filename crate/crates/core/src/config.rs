//! Run configuration: every tunable in one flat key=value namespace.
//!
//! Values are resolved as defaults, then the config file, then command-line
//! assignments. Every non-default assignment is kept with its source so runs
//! can echo them.

use std::fmt;
use std::path::PathBuf;

use crate::datapipe::{AugmentParams, DatasetPreset, ImageProjection, SyntheticSpec};
use crate::encoders::{EncoderConfig, EncoderKind, DEFAULT_EMBED_DIM, SHALLOW_KERNELS};
use crate::error::{Error, Result};
use crate::kv::{join_list, parse_bool, parse_kv, parse_list, parse_value};
use crate::optim::AdamConfig;
use crate::datapipe::Split;
use crate::retrieval::Scoring;
use crate::tensor::Padding;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TowerSettings {
    pub kind: EncoderKind,
    pub widths: Vec<usize>,
    /// Empty means the kind's default kernels.
    pub kernels: Vec<usize>,
    /// Empty means the kind's default strides.
    pub strides: Vec<usize>,
    pub padding: Padding,
    /// 0 means "take it from the data".
    pub input_dim: usize,
}

impl TowerSettings {
    fn residual_default() -> Self {
        TowerSettings {
            kind: EncoderKind::ResidualCnn,
            widths: vec![64, 64, 64],
            kernels: vec![],
            strides: vec![],
            padding: Padding::Same,
            input_dim: 0,
        }
    }

    fn projection_default() -> Self {
        TowerSettings {
            kind: EncoderKind::ProjectionOnly,
            widths: vec![],
            kernels: vec![],
            strides: vec![],
            padding: Padding::Same,
            input_dim: 0,
        }
    }

    /// Builds the encoder config for input dimension `input_dim` (used when
    /// the setting leaves it at 0) and embedding size `embed_dim`.
    pub fn encoder_config(&self, input_dim: usize, embed_dim: usize) -> Result<EncoderConfig> {
        let d = if self.input_dim == 0 { input_dim } else { self.input_dim };
        let n = self.widths.len();
        let (default_kernels, default_strides) = match self.kind {
            EncoderKind::ProjectionOnly => (vec![], vec![]),
            EncoderKind::ShallowCnn => (SHALLOW_KERNELS.to_vec(), vec![1; SHALLOW_KERNELS.len()]),
            EncoderKind::ResidualCnn => {
                let mut k = vec![7];
                let mut s = vec![2];
                k.extend(std::iter::repeat_n(3, n.saturating_sub(1)));
                s.extend(std::iter::repeat_n(1, n.saturating_sub(1)));
                (k, s)
            }
        };
        let cfg = EncoderConfig {
            kind: self.kind,
            widths: self.widths.clone(),
            kernels: if self.kernels.is_empty() { default_kernels } else { self.kernels.clone() },
            strides: if self.strides.is_empty() { default_strides } else { self.strides.clone() },
            padding: self.padding,
            embed_dim,
            input_dim: d,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropSetting {
    Head,
    Center,
    Random,
}

impl CropSetting {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(CropSetting::Head),
            "center" => Ok(CropSetting::Center),
            "random" => Ok(CropSetting::Random),
            other => Err(Error::Config(format!("unknown crop mode `{other}`"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            CropSetting::Head => "head",
            CropSetting::Center => "center",
            CropSetting::Random => "random",
        }
    }
}

fn parse_padding(s: &str) -> Result<Padding> {
    match s {
        "same" => Ok(Padding::Same),
        "valid" => Ok(Padding::Valid),
        other => Err(Error::Config(format!("unknown padding `{other}`"))),
    }
}

fn padding_name(p: Padding) -> &'static str {
    match p {
        Padding::Same => "same",
        Padding::Valid => "valid",
    }
}

fn parse_resolution(key: &str, s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("{key}: expected HxW, got `{s}`")))?;
    Ok((parse_value(key, h)?, parse_value(key, w)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Override {
    pub key: String,
    pub value: String,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub speech: TowerSettings,
    pub image: TowerSettings,
    pub replicas: usize,
    pub per_replica: usize,
    pub optim: AdamConfig,
    pub temperature: f64,
    pub manifest: Option<PathBuf>,
    pub preset: DatasetPreset,
    /// Pad/crop length used when the preset is `custom`.
    pub target_frames: usize,
    pub chunk_frames: usize,
    pub crop: CropSetting,
    /// 0: image files hold feature vectors. Otherwise image files are
    /// H×(W·C) pixel matrices with this many channels.
    pub image_channels: usize,
    pub augment_enabled: bool,
    pub augment: AugmentParams,
    pub max_steps: u64,
    pub eval_interval: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub k_list: Vec<usize>,
    pub scoring: Scoring,
    pub eval_split: Split,
    pub synth: SyntheticSpec,
    pub overrides: Vec<Override>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            embed_dim: DEFAULT_EMBED_DIM,
            speech: TowerSettings::residual_default(),
            image: TowerSettings::projection_default(),
            replicas: 2,
            per_replica: 32,
            optim: AdamConfig::default(),
            temperature: 1.0,
            manifest: None,
            preset: DatasetPreset::Custom,
            target_frames: 800,
            chunk_frames: 2000,
            crop: CropSetting::Head,
            image_channels: 0,
            augment_enabled: false,
            augment: AugmentParams::default(),
            max_steps: 2000,
            eval_interval: 500,
            checkpoint_dir: None,
            k_list: vec![1, 5, 10],
            scoring: Scoring::Dot,
            eval_split: Split::Dev,
            synth: SyntheticSpec::default(),
            overrides: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// Defaults, then `file_text` (if any), then `flags`.
    pub fn resolve(file_text: Option<&str>, flags: &[(String, String)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        if let Some(text) = file_text {
            for (k, v) in parse_kv(text)? {
                cfg.apply(&k, &v, Source::File)?;
            }
        }
        for (k, v) in flags {
            cfg.apply(k, v, Source::Flag)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        self.set(key, value)?;
        self.overrides.push(Override {
            key: key.to_string(),
            value: value.to_string(),
            source,
        });
        Ok(())
    }

    fn set_tower(t: &mut TowerSettings, field: &str, key: &str, v: &str) -> Result<()> {
        match field {
            "kind" => t.kind = v.parse()?,
            "widths" => t.widths = parse_list(key, v)?,
            "kernels" => t.kernels = parse_list(key, v)?,
            "strides" => t.strides = parse_list(key, v)?,
            "padding" => t.padding = parse_padding(v)?,
            "input_dim" => t.input_dim = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "seed" => self.seed = parse_value(k, v)?,
            "model.embed_dim" => self.embed_dim = parse_value(k, v)?,
            "replica.n" => self.replicas = parse_value(k, v)?,
            "replica.k" => self.per_replica = parse_value(k, v)?,
            "optim.lr0" => self.optim.lr0 = parse_value(k, v)?,
            "optim.beta1" => self.optim.beta1 = parse_value(k, v)?,
            "optim.beta2" => self.optim.beta2 = parse_value(k, v)?,
            "optim.eps" => self.optim.eps = parse_value(k, v)?,
            "optim.decay" => self.optim.decay = parse_value(k, v)?,
            "optim.decay_interval" => self.optim.decay_interval = parse_value(k, v)?,
            "loss.temperature" => self.temperature = parse_value(k, v)?,
            "data.manifest" => {
                self.manifest = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "data.preset" => self.preset = DatasetPreset::parse(v)?,
            "data.target_frames" => self.target_frames = parse_value(k, v)?,
            "data.chunk_frames" => self.chunk_frames = parse_value(k, v)?,
            "data.crop" => self.crop = CropSetting::parse(v)?,
            "data.image_channels" => self.image_channels = parse_value(k, v)?,
            "augment.enabled" => self.augment_enabled = parse_bool(k, v)?,
            "augment.min_area_fraction" => self.augment.min_area_fraction = parse_value(k, v)?,
            "augment.brightness_delta" => self.augment.brightness_delta = parse_value(k, v)?,
            "augment.saturation_min" => self.augment.saturation_range.0 = parse_value(k, v)?,
            "augment.saturation_max" => self.augment.saturation_range.1 = parse_value(k, v)?,
            "augment.resolution" => self.augment.target_resolution = parse_resolution(k, v)?,
            "train.max_steps" => self.max_steps = parse_value(k, v)?,
            "train.eval_interval" => self.eval_interval = parse_value(k, v)?,
            "train.checkpoint_dir" => {
                self.checkpoint_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "eval.k_list" => self.k_list = parse_list(k, v)?,
            "eval.scoring" => self.scoring = v.parse()?,
            "eval.split" => {
                self.eval_split = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "synth.n_pairs" => self.synth.n_pairs = parse_value(k, v)?,
            "synth.dev_pairs" => self.synth.dev_pairs = parse_value(k, v)?,
            "synth.latent_dim" => self.synth.latent_dim = parse_value(k, v)?,
            "synth.speech_frames" => self.synth.speech_frames = parse_value(k, v)?,
            "synth.speech_dim" => self.synth.speech_dim = parse_value(k, v)?,
            "synth.image_dim" => self.synth.image_dim = parse_value(k, v)?,
            "synth.noise_sigma" => self.synth.noise_sigma = parse_value(k, v)?,
            "synth.image_projection" => {
                self.synth.image_projection = match v {
                    "random" => ImageProjection::Random,
                    "identity" => ImageProjection::Identity,
                    _ => return Err(Error::Config(format!("{k}: unknown projection `{v}`"))),
                }
            }
            _ => match key.split_once('.') {
                Some(("speech", field)) => Self::set_tower(&mut self.speech, field, k, v)?,
                Some(("image", field)) => Self::set_tower(&mut self.image, field, k, v)?,
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("model.embed_dim must be positive".into()));
        }
        if self.replicas == 0 || self.per_replica == 0 {
            return Err(Error::Config("replica.n and replica.k must be positive".into()));
        }
        self.optim.validate()?;
        if !(self.temperature > 0.0) {
            return Err(Error::Config("loss.temperature must be positive".into()));
        }
        if self.target_frames() == 0 {
            return Err(Error::Config("data.target_frames must be positive".into()));
        }
        if self.chunk_frames == 0 {
            return Err(Error::Config("data.chunk_frames must be positive".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("train.eval_interval must be positive".into()));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::Config("eval.k_list needs positive cutoffs".into()));
        }
        self.augment.validate()
    }

    /// Pad/crop length in frames: the preset's, or `data.target_frames`.
    pub fn target_frames(&self) -> usize {
        self.preset.target_frames().unwrap_or(self.target_frames)
    }

    pub fn global_batch(&self) -> usize {
        self.replicas * self.per_replica
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// Every resolved setting, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("model.embed_dim".into(), self.embed_dim.to_string()),
        ];
        for (name, t) in [("speech", &self.speech), ("image", &self.image)] {
            out.push((format!("{name}.kind"), t.kind.to_string()));
            out.push((format!("{name}.widths"), join_list(&t.widths)));
            out.push((format!("{name}.kernels"), join_list(&t.kernels)));
            out.push((format!("{name}.strides"), join_list(&t.strides)));
            out.push((format!("{name}.padding"), padding_name(t.padding).into()));
            out.push((format!("{name}.input_dim"), t.input_dim.to_string()));
        }
        let o = &self.optim;
        let a = &self.augment;
        let s = &self.synth;
        out.extend([
            ("replica.n".into(), self.replicas.to_string()),
            ("replica.k".into(), self.per_replica.to_string()),
            ("optim.lr0".into(), o.lr0.to_string()),
            ("optim.beta1".into(), o.beta1.to_string()),
            ("optim.beta2".into(), o.beta2.to_string()),
            ("optim.eps".into(), o.eps.to_string()),
            ("optim.decay".into(), o.decay.to_string()),
            ("optim.decay_interval".into(), o.decay_interval.to_string()),
            ("loss.temperature".into(), self.temperature.to_string()),
            ("data.manifest".into(), opt_path(&self.manifest)),
            ("data.preset".into(), self.preset.name().into()),
            ("data.target_frames".into(), self.target_frames.to_string()),
            ("data.chunk_frames".into(), self.chunk_frames.to_string()),
            ("data.crop".into(), self.crop.name().into()),
            ("data.image_channels".into(), self.image_channels.to_string()),
            ("augment.enabled".into(), self.augment_enabled.to_string()),
            ("augment.min_area_fraction".into(), a.min_area_fraction.to_string()),
            ("augment.brightness_delta".into(), a.brightness_delta.to_string()),
            ("augment.saturation_min".into(), a.saturation_range.0.to_string()),
            ("augment.saturation_max".into(), a.saturation_range.1.to_string()),
            (
                "augment.resolution".into(),
                format!("{}x{}", a.target_resolution.0, a.target_resolution.1),
            ),
            ("train.max_steps".into(), self.max_steps.to_string()),
            ("train.eval_interval".into(), self.eval_interval.to_string()),
            ("train.checkpoint_dir".into(), opt_path(&self.checkpoint_dir)),
            ("eval.k_list".into(), join_list(&self.k_list)),
            ("eval.scoring".into(), self.scoring.to_string()),
            ("eval.split".into(), self.eval_split.to_string()),
            ("synth.n_pairs".into(), s.n_pairs.to_string()),
            ("synth.dev_pairs".into(), s.dev_pairs.to_string()),
            ("synth.latent_dim".into(), s.latent_dim.to_string()),
            ("synth.speech_frames".into(), s.speech_frames.to_string()),
            ("synth.speech_dim".into(), s.speech_dim.to_string()),
            ("synth.image_dim".into(), s.image_dim.to_string()),
            ("synth.noise_sigma".into(), s.noise_sigma.to_string()),
            (
                "synth.image_projection".into(),
                match s.image_projection {
                    ImageProjection::Random => "random",
                    ImageProjection::Identity => "identity",
                }
                .into(),
            ),
        ]);
        out
    }

    /// Resolved settings followed by the overrides as comment lines.
    pub fn to_kv(&self) -> String {
        let mut text = crate::kv::write_kv(&self.to_pairs());
        for o in &self.overrides {
            text.push_str(&format!("# override source={} {}={}\n", o.source, o.key, o.value));
        }
        text
    }
}
