//! Resolved per-subcommand configuration: profile defaults, then an optional
//! JSON file, then command-line flags, then `--set key=value` overrides.

use anyhow::{anyhow, bail, Context, Result};
use icon_core::evaluator::{IndConfig, NewOdeConfig, OodConfig, ResolutionConfig};
use icon_core::model::ModelConfig;
use icon_core::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "ICON_OUT_ROOT";

pub fn default_out(sub: &str) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(sub)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Smoke,
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenConfig {
    pub families: Vec<u8>,
    pub operators: usize,
    pub pairs_per_operator: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl DatagenConfig {
    pub fn profile(p: Profile) -> Self {
        let (families, operators, pairs_per_operator) = match p {
            Profile::Smoke => (vec![1], 20, 20),
            Profile::Desk => (vec![1, 2], 100, 50),
            Profile::Paper => ((1..=19).collect(), 1000, 100),
        };
        Self { families, operators, pairs_per_operator, seed: 0, out: default_out("data") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub precision: Precision,
    pub resume: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TrainRunConfig {
    pub fn profile(p: Profile) -> Self {
        let train = match p {
            Profile::Smoke => TrainConfig {
                families: vec![1],
                batch_size: 8,
                steps: 200,
                warmup_steps: 20,
                checkpoint_every: 100,
                ..TrainConfig::default()
            },
            Profile::Desk => TrainConfig { families: vec![1, 2], ..TrainConfig::default() },
            Profile::Paper => TrainConfig { families: (1..=19).collect(), steps: 200_000, ..TrainConfig::default() },
        };
        Self {
            data: default_out("data"),
            out: default_out("train"),
            precision: Precision::F32,
            resume: None,
            model: ModelConfig::default(),
            train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    pub checkpoint: PathBuf,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub plot_data: bool,
    pub ind: IndConfig,
    pub resolution: ResolutionConfig,
    pub ood: OodConfig,
    pub newode: NewOdeConfig,
}

impl EvalRunConfig {
    pub fn profile(p: Profile) -> Self {
        let mut c = Self {
            checkpoint: default_out("train").join("checkpoint.ck"),
            data: Some(default_out("eval_data")),
            out: default_out("eval"),
            plot_data: false,
            ind: IndConfig::default(),
            resolution: ResolutionConfig::default(),
            ood: OodConfig::default(),
            newode: NewOdeConfig::default(),
        };
        match p {
            Profile::Smoke => {
                c.ind.families = vec![1];
                for n in [&mut c.ind.operators, &mut c.resolution.operators, &mut c.newode.operators] {
                    *n = 4;
                }
                c.ind.cases_per_operator = 2;
                c.resolution.cases_per_operator = 2;
                c.resolution.counts = vec![10, 50];
                c.ood.grid = [2, 2];
                c.ood.operators_per_cell = 4;
                c.ood.cases_per_operator = 2;
                c.newode.cases_per_operator = 2;
            }
            Profile::Desk => c.ind.families = vec![1, 2],
            Profile::Paper => {}
        }
        c
    }
}

/// Load a JSON config file (unknown keys are errors) or fall back to `base`.
pub fn layered<C: Serialize + DeserializeOwned>(base: C, file: Option<&Path>) -> Result<Value> {
    match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            // Round-trip through the typed config to reject unknown keys early.
            let typed: C = serde_json::from_value(v).with_context(|| format!("invalid config {}", path.display()))?;
            Ok(serde_json::to_value(typed)?)
        }
        None => Ok(serde_json::to_value(base)?),
    }
}

/// Set a dotted key; the key must already exist in the resolved config.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| anyhow!("`{key}`: `{part}` is not inside an object"))?;
        let slot = obj.get_mut(*part).ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        cur = slot;
    }
    bail!("empty config key")
}

/// `key=value`; the value is parsed as JSON and falls back to a string.
pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("override `{o}` is not key=value"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_path(root, k.trim(), value)?;
    }
    Ok(())
}

pub fn finish<C: DeserializeOwned>(v: Value) -> Result<C> {
    serde_json::from_value(v).context("invalid configuration")
}

/// Print the resolved config and write it next to the outputs.
pub fn echo<C: Serialize>(config: &C, out_dir: &Path, name: &str) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(config)? + "\n";
    print!("{text}");
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys_and_reject_unknown() {
        let mut v = serde_json::to_value(TrainRunConfig::profile(Profile::Smoke)).unwrap();
        apply_overrides(&mut v, &["train.steps=7".into(), "precision=f64".into(), "train.families=[1,2]".into()])
            .unwrap();
        let c: TrainRunConfig = finish(v.clone()).unwrap();
        assert_eq!((c.train.steps, c.precision, c.train.families), (7, Precision::F64, vec![1, 2]));
        assert!(apply_overrides(&mut v, &["train.nope=1".into()]).is_err());
        assert!(apply_overrides(&mut v, &["steps".into()]).is_err());
    }

    #[test]
    fn config_files_reject_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let mut v = serde_json::to_value(DatagenConfig::profile(Profile::Desk)).unwrap();
        std::fs::write(&p, v.to_string()).unwrap();
        assert!(layered(DatagenConfig::profile(Profile::Smoke), Some(&p)).is_ok());
        v["extra"] = Value::from(1);
        std::fs::write(&p, v.to_string()).unwrap();
        assert!(layered(DatagenConfig::profile(Profile::Smoke), Some(&p)).is_err());
    }
}
