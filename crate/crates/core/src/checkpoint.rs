//! Checkpoint directories: `checkpoint.txt` (key=value manifest with the
//! encoder configs, optimizer settings and every tensor's shape) next to one
//! FMAT file per parameter and per optimizer moment.

use std::fs;
use std::path::{Path, PathBuf};

use crate::datapipe::fmat;
use crate::encoders::{DualEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::kv::{join_list, lookup, parse_kv, parse_list, parse_value, write_kv};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Padding, Scalar, Tensor};

pub const MANIFEST: &str = "checkpoint.txt";
pub const FORMAT: &str = "crossmodal-checkpoint-1";

pub struct Checkpoint<F> {
    pub step: u64,
    pub model: DualEncoder<F>,
    pub optimizer: AdamState<F>,
}

/// `step-000042` style directory name.
pub fn step_dir(root: &Path, step: u64) -> PathBuf {
    root.join(format!("step-{step:06}"))
}

fn encoder_pairs(prefix: &str, c: &EncoderConfig, out: &mut Vec<(String, String)>) {
    out.push((format!("{prefix}.kind"), c.kind.to_string()));
    out.push((format!("{prefix}.widths"), join_list(&c.widths)));
    out.push((format!("{prefix}.kernels"), join_list(&c.kernels)));
    out.push((format!("{prefix}.strides"), join_list(&c.strides)));
    let pad = match c.padding {
        Padding::Same => "same",
        Padding::Valid => "valid",
    };
    out.push((format!("{prefix}.padding"), pad.into()));
    out.push((format!("{prefix}.embed_dim"), c.embed_dim.to_string()));
    out.push((format!("{prefix}.input_dim"), c.input_dim.to_string()));
}

fn field<'a>(kv: &'a [(String, String)], key: &str) -> Result<&'a str> {
    lookup(kv, key).ok_or_else(|| Error::Data(format!("checkpoint manifest lacks `{key}`")))
}

fn data_err(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Data(format!("checkpoint manifest: {m}")),
        other => other,
    }
}

fn encoder_from(kv: &[(String, String)], prefix: &str) -> Result<EncoderConfig> {
    let f = |name: &str| field(kv, &format!("{prefix}.{name}"));
    let padding = match f("padding")? {
        "same" => Padding::Same,
        "valid" => Padding::Valid,
        other => return Err(Error::Data(format!("checkpoint padding `{other}`"))),
    };
    let cfg = EncoderConfig {
        kind: f("kind")?.parse().map_err(data_err)?,
        widths: parse_list(prefix, f("widths")?).map_err(data_err)?,
        kernels: parse_list(prefix, f("kernels")?).map_err(data_err)?,
        strides: parse_list(prefix, f("strides")?).map_err(data_err)?,
        padding,
        embed_dim: parse_value(prefix, f("embed_dim")?).map_err(data_err)?,
        input_dim: parse_value(prefix, f("input_dim")?).map_err(data_err)?,
    };
    cfg.validate().map_err(data_err)?;
    Ok(cfg)
}

/// Stored as a 2-D matrix: first axis by the product of the others.
fn as_matrix<F: Scalar>(t: &Tensor<F>) -> Result<Tensor<f32>> {
    let shape = t.shape();
    let rows = if shape.len() == 1 { 1 } else { shape[0] };
    let cols = if shape.len() == 1 { shape[0] } else { shape[1..].iter().product() };
    Tensor::from_vec(&[rows, cols], t.data().iter().map(|v| v.as_f32()).collect())
}

fn read_tensor<F: Scalar>(path: &Path, shape: &[usize]) -> Result<Tensor<F>> {
    let m = fmat::read_file(path)?;
    if m.len() != shape.iter().product::<usize>() {
        return Err(Error::Data(format!(
            "{} holds {} values, manifest shape {:?}",
            path.display(),
            m.len(),
            shape
        )));
    }
    Tensor::from_vec(shape, m.data().iter().map(|&v| F::of(v as f64)).collect())
}

fn dims_string(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|p| p.parse().map_err(|_| Error::Data(format!("bad tensor shape `{s}`"))))
        .collect()
}

/// Writes a checkpoint. Values are stored as 32-bit floats, so 32-bit models
/// round-trip bit-exactly.
pub fn save<F: Scalar>(dir: &Path, step: u64, model: &DualEncoder<F>, opt: &AdamState<F>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kv: Vec<(String, String)> = vec![
        ("format".into(), FORMAT.into()),
        ("step".into(), step.to_string()),
    ];
    encoder_pairs("speech", model.speech.config(), &mut kv);
    encoder_pairs("image", model.image.config(), &mut kv);
    let c = &opt.config;
    kv.extend([
        ("optim.lr0".into(), c.lr0.to_string()),
        ("optim.beta1".into(), c.beta1.to_string()),
        ("optim.beta2".into(), c.beta2.to_string()),
        ("optim.eps".into(), c.eps.to_string()),
        ("optim.decay".into(), c.decay.to_string()),
        ("optim.decay_interval".into(), c.decay_interval.to_string()),
        ("optim.step".into(), opt.step_count().to_string()),
        ("optim.moments".into(), (!opt.first_moments().is_empty()).to_string()),
    ]);
    for (name, t) in model.named_params() {
        kv.push((format!("tensor.{name}"), dims_string(t.shape())));
        fmat::write_file(dir.join(format!("{name}.fmat")), &as_matrix(t)?)?;
    }
    for ((name, m), v) in opt.names().iter().zip(opt.first_moments()).zip(opt.second_moments()) {
        fmat::write_file(dir.join(format!("{name}.adam_m.fmat")), &as_matrix(m)?)?;
        fmat::write_file(dir.join(format!("{name}.adam_v.fmat")), &as_matrix(v)?)?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, write_kv(&kv)).map_err(|e| Error::io(&path, e))
}

pub fn load<F: Scalar>(dir: &Path) -> Result<Checkpoint<F>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let kv = parse_kv(&text).map_err(data_err)?;
    if field(&kv, "format")? != FORMAT {
        return Err(Error::Data(format!("{}: unsupported checkpoint format", path.display())));
    }
    let step: u64 = parse_value("step", field(&kv, "step")?).map_err(data_err)?;
    let speech = encoder_from(&kv, "speech")?;
    let image = encoder_from(&kv, "image")?;
    let mut model = DualEncoder::<F>::new(speech, image, 0).map_err(data_err)?;

    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let listed: Vec<(&str, &str)> = kv
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("tensor.").map(|n| (n, v.as_str())))
        .collect();
    if listed.len() != expected.len() {
        return Err(Error::Data(format!(
            "checkpoint lists {} tensors, configs imply {}",
            listed.len(),
            expected.len()
        )));
    }
    for ((name, shape), (lname, ldims)) in expected.iter().zip(&listed) {
        if name != lname || *shape != parse_dims(ldims)? {
            return Err(Error::Data(format!("checkpoint tensor {lname} {ldims} does not match {name} {shape:?}")));
        }
    }
    let mut ms = Vec::new();
    let mut vs = Vec::new();
    let with_moments: bool = field(&kv, "optim.moments")? == "true";
    for (slot, (name, shape)) in model.param_slots().iter_mut().zip(&expected) {
        *slot.value = read_tensor(&dir.join(format!("{name}.fmat")), shape)?;
        if with_moments {
            ms.push(read_tensor(&dir.join(format!("{name}.adam_m.fmat")), shape)?);
            vs.push(read_tensor(&dir.join(format!("{name}.adam_v.fmat")), shape)?);
        }
    }
    let num = |k: &str| -> Result<f64> { parse_value(k, field(&kv, k)?).map_err(data_err) };
    let config = AdamConfig {
        lr0: num("optim.lr0")?,
        beta1: num("optim.beta1")?,
        beta2: num("optim.beta2")?,
        eps: num("optim.eps")?,
        decay: num("optim.decay")?,
        decay_interval: parse_value("optim.decay_interval", field(&kv, "optim.decay_interval")?).map_err(data_err)?,
    };
    let opt_step: u64 = parse_value("optim.step", field(&kv, "optim.step")?).map_err(data_err)?;
    let names = if with_moments { expected.into_iter().map(|(n, _)| n).collect() } else { Vec::new() };
    let optimizer = AdamState::from_parts(config, opt_step, names, ms, vs)?;
    Ok(Checkpoint { step, model, optimizer })
}

/// The highest `step-*` directory under `root` that holds a manifest.
pub fn latest(root: &Path) -> Result<Option<PathBuf>> {
    if !root.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(n) = name.strip_prefix("step-").and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        if entry.path().join(MANIFEST).is_file() && best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, entry.path()));
        }
    }
    Ok(best.map(|(_, p)| p))
}
