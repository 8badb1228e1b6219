//! Versioned binary checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "UACK" | u32 version=1 | u32 tensor_count
//! per tensor: u32 name_len | name (UTF-8) | u8 dtype (0=f32, 1=f64)
//!             | u8 ndim | ndim × u64 dims | raw element data
//! u64 step_counter
//! u32 json_len | config echo (UTF-8 JSON of the model configuration)
//! ```
//!
//! Parameters are stored under `model.<name>`, optimizer moments under
//! `adam.m.<name>` / `adam.v.<name>`. Loading is strict: wrong magic or
//! version, truncation, unknown tensor names, dtype/shape mismatches and a
//! config echo that disagrees with the current run are all rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Element, Tensor};
use crate::train::Adam;

const MAGIC: &[u8; 4] = b"UACK";
const VERSION: u32 = 1;

/// Raw tensor payload as stored on disk.
#[derive(Debug)]
pub struct RawTensor {
    pub dtype: u8,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

/// A parsed checkpoint, not yet bound to a model.
#[derive(Debug)]
pub struct CheckpointData {
    pub tensors: Vec<(String, RawTensor)>,
    pub step: u64,
    pub config_json: String,
}

fn put_tensor<E: Element>(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[E]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(E::DTYPE_CODE);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        v.write_le(out);
    }
}

/// Serializes parameters, optimizer moments, the step counter and the config
/// echo to `path`.
pub fn save_checkpoint<E: Element>(
    path: &Path,
    params: &[(String, Tensor<E>)],
    adam: &Adam<E>,
    step: u64,
    config: &ModelConfig,
) -> Result<()> {
    let moments = adam.moments();
    let mut count = params.len();
    for (name, _) in params {
        if moments.contains_key(name) {
            count += 2;
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, p) in params {
        put_tensor(&mut out, &format!("model.{name}"), p.shape(), &p.data());
        if let Some((m, v)) = moments.get(name) {
            put_tensor(&mut out, &format!("adam.m.{name}"), p.shape(), m);
            put_tensor(&mut out, &format!("adam.v.{name}"), p.shape(), v);
        }
    }
    out.extend_from_slice(&step.to_le_bytes());
    let json = serde_json::to_string(config)
        .map_err(|e| Error::Checkpoint(format!("config echo serialization: {e}")))?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} while reading {what}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?;
        let dtype = cur.take(1, "dtype")?[0];
        let elem_bytes = match dtype {
            0 => 4,
            1 => 8,
            other => {
                return Err(Error::Checkpoint(format!(
                    "'{name}': unknown dtype code {other}"
                )))
            }
        };
        let ndim = cur.take(1, "ndim")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = cur.take(numel * elem_bytes, &format!("'{name}' data"))?.to_vec();
        tensors.push((name, RawTensor { dtype, shape, data }));
    }
    let step = cur.u64("step counter")?;
    let json_len = cur.u32("config echo length")? as usize;
    let config_json = String::from_utf8(cur.take(json_len, "config echo")?.to_vec())
        .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
    Ok(CheckpointData {
        tensors,
        step,
        config_json,
    })
}

fn decode<E: Element>(name: &str, raw: &RawTensor) -> Result<Vec<E>> {
    if raw.dtype != E::DTYPE_CODE {
        return Err(Error::Checkpoint(format!(
            "'{name}': dtype code {} does not match the model's element type",
            raw.dtype
        )));
    }
    Ok(raw
        .data
        .chunks_exact(E::BYTES)
        .map(E::read_le)
        .collect())
}

/// Compares the stored config echo against the current configuration,
/// naming the first field that differs.
pub fn check_config_echo(config_json: &str, current: &ModelConfig) -> Result<()> {
    let stored: serde_json::Value = serde_json::from_str(config_json)
        .map_err(|e| Error::Checkpoint(format!("config echo is not valid JSON: {e}")))?;
    let now = serde_json::to_value(current).unwrap();
    let (stored_map, now_map) = match (stored.as_object(), now.as_object()) {
        (Some(s), Some(n)) => (s.clone(), n.clone()),
        _ => return Err(Error::Checkpoint("config echo is not a JSON object".into())),
    };
    for (key, now_val) in &now_map {
        match stored_map.get(key) {
            Some(v) if v == now_val => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "config mismatch on '{key}': checkpoint has {v}, run has {now_val}"
                )))
            }
            None => {
                return Err(Error::Checkpoint(format!(
                    "config echo is missing field '{key}'"
                )))
            }
        }
    }
    Ok(())
}

/// Restores parameters and optimizer state into a model. Every stored tensor
/// must be recognized and every parameter must be present.
pub fn apply_checkpoint<E: Element>(
    ckpt: &CheckpointData,
    model: &Model<E>,
    adam: &mut Adam<E>,
) -> Result<u64> {
    check_config_echo(&ckpt.config_json, &model.config)?;
    let params: BTreeMap<String, Tensor<E>> = model.parameters().into_iter().collect();
    let mut seen: BTreeMap<String, bool> = params.keys().map(|k| (k.clone(), false)).collect();
    let mut moments: BTreeMap<String, (Vec<E>, Vec<E>)> = BTreeMap::new();
    for (name, raw) in &ckpt.tensors {
        let (kind, pname) = if let Some(p) = name.strip_prefix("model.") {
            ("p", p)
        } else if let Some(p) = name.strip_prefix("adam.m.") {
            ("m", p)
        } else if let Some(p) = name.strip_prefix("adam.v.") {
            ("v", p)
        } else {
            return Err(Error::Checkpoint(format!("unknown tensor name '{name}'")));
        };
        let param = params
            .get(pname)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor name '{name}'")))?;
        if raw.shape != param.shape() {
            return Err(Error::Checkpoint(format!(
                "'{name}': stored shape {:?} does not match parameter {:?}",
                raw.shape,
                param.shape()
            )));
        }
        let data = decode::<E>(name, raw)?;
        match kind {
            "p" => {
                param.set_data(data);
                seen.insert(pname.to_string(), true);
            }
            "m" => moments.entry(pname.to_string()).or_default().0 = data,
            _ => moments.entry(pname.to_string()).or_default().1 = data,
        }
    }
    if let Some((missing, _)) = seen.iter().find(|(_, &ok)| !ok) {
        return Err(Error::Checkpoint(format!(
            "checkpoint is missing parameter '{missing}'"
        )));
    }
    adam.restore_moments(moments);
    adam.set_step(ckpt.step);
    Ok(ckpt.step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::no_grad;
    use crate::train::{poly_lr, PolySchedule, ScheduleKind};

    fn tiny_model(seed: u64) -> Model<f32> {
        Model::new(&ModelConfig::desk(8, 32), seed).unwrap()
    }

    fn probe(model: &Model<f32>) -> Vec<f32> {
        let x = Tensor::from_vec(
            (0..3 * 32 * 32).map(|i| ((i % 17) as f32) / 17.0).collect(),
            &[1, 3, 32, 32],
        )
        .unwrap();
        no_grad(|| model.forward(&x)).unwrap().u_up[2].to_vec()
    }

    #[test]
    fn roundtrip_restores_forward_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.uack");
        let model = tiny_model(1);
        let before = probe(&model);
        let adam = Adam::new();
        save_checkpoint(&path, &model.parameters(), &adam, 17, &model.config).unwrap();

        let other = tiny_model(2);
        assert_ne!(probe(&other), before);
        let mut adam2 = Adam::new();
        let ckpt = load_checkpoint(&path).unwrap();
        let step = apply_checkpoint(&ckpt, &other, &mut adam2).unwrap();
        assert_eq!(step, 17);
        assert_eq!(probe(&other), before);
    }

    #[test]
    fn truncated_file_is_rejected_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.uack");
        let model = tiny_model(3);
        save_checkpoint(&path, &model.parameters(), &Adam::new(), 0, &model.config).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.uack");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_checkpoint(&path)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"UACK");
        bytes.extend_from_slice(&9u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(load_checkpoint(&path)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn config_mismatch_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.uack");
        let model = tiny_model(4);
        save_checkpoint(&path, &model.parameters(), &Adam::new(), 0, &model.config).unwrap();
        let other = Model::<f32>::new(&ModelConfig::desk(16, 32), 4).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        let err = apply_checkpoint(&ckpt, &other, &mut Adam::new())
            .unwrap_err()
            .to_string();
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn unknown_tensor_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.uack");
        let model = tiny_model(5);
        let bogus = Tensor::<f32>::param(vec![0.0], &[1]).unwrap();
        let mut params = model.parameters();
        params.push(("not.a.real.layer".into(), bogus));
        save_checkpoint(&path, &params, &Adam::new(), 0, &model.config).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        let err = apply_checkpoint(&ckpt, &model, &mut Adam::new())
            .unwrap_err()
            .to_string();
        assert!(err.contains("not.a.real.layer"), "{err}");
    }

    #[test]
    fn resumed_optimizer_continues_identically() {
        // train 4 steps in one go vs 2 + checkpoint + 2
        let samples = crate::data::synth::synth_blobs(2, 32, 31).unwrap();
        let refs: Vec<&crate::data::Sample> = samples.iter().collect();
        let (im, mk) = crate::train::make_batch(&refs, 32).unwrap();
        let sched = PolySchedule::new(1e-3, 4, ScheduleKind::Literal);

        let run = |resume: bool| -> Vec<f32> {
            let model = tiny_model(6);
            let params = model.parameters();
            let mut adam = Adam::new();
            let mut iter = 0u64;
            for _ in 0..2 {
                crate::train::train_step(
                    &model, &params, &im, &mk, &mut adam, &sched, iter,
                    crate::loss::BceReduction::Mean,
                )
                .unwrap();
                iter += 1;
            }
            let (model, mut adam, params) = if resume {
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("mid.uack");
                save_checkpoint(&path, &params, &adam, iter, &model.config).unwrap();
                let fresh = tiny_model(99);
                let mut fresh_adam = Adam::new();
                let ckpt = load_checkpoint(&path).unwrap();
                apply_checkpoint(&ckpt, &fresh, &mut fresh_adam).unwrap();
                let p = fresh.parameters();
                (fresh, fresh_adam, p)
            } else {
                (model, adam, params)
            };
            for _ in 0..2 {
                crate::train::train_step(
                    &model, &params, &im, &mk, &mut adam, &sched, iter,
                    crate::loss::BceReduction::Mean,
                )
                .unwrap();
                iter += 1;
            }
            let _ = poly_lr(iter, &sched);
            probe(&model)
        };
        assert_eq!(run(false), run(true));
    }
}
