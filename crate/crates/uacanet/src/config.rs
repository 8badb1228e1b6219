//! Run configuration: a TOML file plus dotted command-line overrides
//! (`--train.epochs=240`). Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::BceReduction;
use crate::model::ModelConfig;
use crate::train::ScheduleKind;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory with `images/*.ppm` and `masks/*.pgm` for training.
    pub train_root: Option<PathBuf>,
    /// Same layout for evaluation.
    pub eval_root: Option<PathBuf>,
    /// When nonzero, generate this many synthetic training samples instead
    /// of reading `train_root` (materialized under the output directory).
    pub synth_train: usize,
    /// Synthetic evaluation samples (held out via a different seed).
    pub synth_eval: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub schedule: ScheduleKind,
    pub bce: BceReduction,
    pub augment: bool,
    /// Write a checkpoint every N iterations (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 240,
            batch: 8,
            seed: 42,
            base_lr: 1e-4,
            schedule: ScheduleKind::Literal,
            bce: BceReduction::Mean,
            augment: true,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Reads the optional TOML file, applies dotted-path overrides in order,
    /// deserializes strictly, and validates the model section.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                text.parse()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for (key, raw) in overrides {
            set_path(&mut value, key, parse_scalar(raw))?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        Ok(cfg)
    }
}

/// Best-effort scalar typing for override values: bool, integer, float,
/// then string.
fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

fn set_path(root: &mut toml::Value, dotted: &str, val: toml::Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{dotted}'")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{dotted}': '{part}' is not a table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{dotted}' does not address a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), val);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_config(text: &str) -> PathBuf {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        std::mem::forget(dir);
        p
    }

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.model.width, 32);
        assert_eq!(cfg.train.epochs, 240);
    }

    #[test]
    fn file_values_override_defaults() {
        let p = tmp_config("[model]\nwidth = 16\nside = 64\n[train]\nepochs = 5\n");
        let cfg = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(cfg.model.width, 16);
        assert_eq!(cfg.model.side, 64);
        assert_eq!(cfg.train.epochs, 5);
    }

    #[test]
    fn dotted_overrides_beat_the_file() {
        let p = tmp_config("[train]\nepochs = 5\n");
        let cfg = RunConfig::load(
            Some(&p),
            &[
                ("train.epochs".into(), "240".into()),
                ("model.disable_paa".into(), "true".into()),
                ("train.schedule".into(), "conventional".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 240);
        assert!(cfg.model.disable_paa);
        assert_eq!(cfg.train.schedule, ScheduleKind::Conventional);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let p = tmp_config("[train]\nepochz = 5\n");
        assert!(RunConfig::load(Some(&p), &[]).is_err());
        let err = RunConfig::load(None, &[("model.depth".into(), "9".into())]).unwrap_err();
        assert!(err.to_string().contains("depth"), "{err}");
    }

    #[test]
    fn invalid_model_section_is_rejected() {
        let err =
            RunConfig::load(None, &[("model.side".into(), "60".into())]).unwrap_err();
        assert!(err.to_string().contains("divisible by 32"));
    }
}
