//! Checkpoint serialization.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "AQG1"
//! u32 metadata_len, metadata ("key=value\n" lines: step, seed, config JSON)
//! repeated tensors:
//!   u32 name_len, name bytes,
//!   u32 rank, rank x u64 dims,
//!   numel x f32 values
//! ```
//!
//! Optimizer moments are stored as tensors named `adam.m.<param>` and
//! `adam.v.<param>`. Together with the seed and step in the metadata (all
//! randomness is derived from those two), a checkpoint resumes a run
//! bit-exactly.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::adam::Adam;

const MAGIC: &[u8; 4] = b"AQG1";

/// Everything needed to resume training.
#[derive(Debug)]
pub struct TrainState<T: Scalar> {
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub weights: ModelWeights<T>,
    /// First and second moment vectors per parameter name.
    pub moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

fn push_tensor_raw<T: Scalar>(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[T]) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in data {
        buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
}

/// Serializes weights (and, when given, optimizer moments) to `path`.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    config: &ModelConfig,
    seed: u64,
    step: u64,
    weights: &ModelWeights<T>,
    optimizer: Option<&Adam<T>>,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let config_json = serde_json::to_string(config)
        .map_err(|e| Error::Integrity(format!("could not serialize configuration: {e}")))?;
    let meta = format!("step={step}\nseed={seed}\nconfig={config_json}\n");
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());

    weights.visit(&mut |name, t| push_tensor_raw(&mut buf, name, t.shape(), t.data()));
    if let Some(opt) = optimizer {
        weights.visit(&mut |name, t| {
            if let (Some(m), Some(v)) = (opt.moment_m(name), opt.moment_v(name)) {
                push_tensor_raw(&mut buf, &format!("adam.m.{name}"), t.shape(), m);
                push_tensor_raw(&mut buf, &format!("adam.v.{name}"), t.shape(), v);
            }
        });
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path.to_path_buf(), e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Reads a checkpoint back. When `expect_config` is given the stored tensors
/// must fit that configuration (used when the caller has already built a
/// model); otherwise the configuration stored in the file is used.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    expect_config: Option<&ModelConfig>,
) -> Result<TrainState<T>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Integrity(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }

    let meta_len = cur.u32()? as usize;
    let meta = std::str::from_utf8(cur.take(meta_len)?)
        .map_err(|_| Error::Integrity("checkpoint metadata is not UTF-8".into()))?;
    let mut step = None;
    let mut seed = None;
    let mut config: Option<ModelConfig> = None;
    for line in meta.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match key {
            "step" => {
                step = Some(value.parse::<u64>().map_err(|_| {
                    Error::Integrity(format!("bad step value {value:?} in checkpoint"))
                })?)
            }
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|_| {
                    Error::Integrity(format!("bad seed value {value:?} in checkpoint"))
                })?)
            }
            "config" => {
                config = Some(serde_json::from_str(value).map_err(|e| {
                    Error::Integrity(format!("bad configuration in checkpoint: {e}"))
                })?)
            }
            _ => {}
        }
    }
    let step = step.ok_or_else(|| Error::Integrity("checkpoint metadata lacks step".into()))?;
    let seed = seed.ok_or_else(|| Error::Integrity("checkpoint metadata lacks seed".into()))?;
    let stored_config =
        config.ok_or_else(|| Error::Integrity("checkpoint metadata lacks config".into()))?;
    let config = expect_config.cloned().unwrap_or(stored_config);
    config.validate()?;

    let mut tensors: HashMap<String, (Vec<usize>, Vec<T>)> = HashMap::new();
    while !cur.done() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Integrity("checkpoint tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        if tensors.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::Integrity(format!("duplicate tensor {name} in checkpoint")));
        }
    }

    // Materialize the weights for the configuration, then overwrite every
    // parameter from the file.
    use rand::SeedableRng;
    let mut weights =
        ModelWeights::<T>::init(&config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
    let mut missing: Vec<String> = Vec::new();
    let mut shape_error: Option<Error> = None;
    weights.visit_mut(&mut |name, slot| {
        if shape_error.is_some() {
            return;
        }
        match tensors.remove(&name) {
            Some((shape, data)) if shape == slot.shape() => {
                *slot = Tensor::parameter(&shape, data);
            }
            Some((shape, _)) => {
                shape_error = Some(Error::Integrity(format!(
                    "checkpoint tensor {name} has shape {shape:?} but the configuration expects {:?}",
                    slot.shape()
                )));
            }
            None => missing.push(name),
        }
    });
    if let Some(e) = shape_error {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(Error::Integrity(format!(
            "checkpoint is missing tensors: {}",
            missing.join(", ")
        )));
    }

    let mut moments: HashMap<String, (Vec<T>, Vec<T>)> = HashMap::new();
    let mut leftovers: Vec<String> = Vec::new();
    let mut stash: HashMap<String, (Vec<usize>, Vec<T>)> = HashMap::new();
    for (name, entry) in tensors {
        if name.starts_with("adam.m.") || name.starts_with("adam.v.") {
            stash.insert(name, entry);
        } else {
            leftovers.push(name);
        }
    }
    if !leftovers.is_empty() {
        leftovers.sort();
        return Err(Error::Integrity(format!(
            "checkpoint contains unknown tensors: {}",
            leftovers.join(", ")
        )));
    }
    let param_names: Vec<String> = {
        let mut names = Vec::new();
        weights.visit(&mut |n, _| names.push(n.to_string()));
        names
    };
    for name in &param_names {
        let m = stash.remove(&format!("adam.m.{name}"));
        let v = stash.remove(&format!("adam.v.{name}"));
        match (m, v) {
            (Some((_, m)), Some((_, v))) => {
                moments.insert(name.clone(), (m, v));
            }
            (None, None) => {}
            _ => {
                return Err(Error::Integrity(format!(
                    "checkpoint has only one of the two moment tensors for {name}"
                )))
            }
        }
    }
    if !stash.is_empty() {
        let mut names: Vec<String> = stash.into_keys().collect();
        names.sort();
        return Err(Error::Integrity(format!(
            "checkpoint contains moments for unknown parameters: {}",
            names.join(", ")
        )));
    }

    Ok(TrainState {
        config,
        seed,
        step,
        weights,
        moments,
    })
}
