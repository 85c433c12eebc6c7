//! JSON configs and `--dot.path value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use primkit::data::PipelineConfig;
use primkit::experiment::ModelChoice;
use primkit::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A cross-validation experiment over one training cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training cohort manifest.
    pub manifest: PathBuf,
    /// Held-out cohort; when set, `cv` also scores the fold ensemble on it.
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
    pub models: Vec<ModelChoice>,
    /// Drives the patient split, weight init, shuffling and forest bagging.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    /// Window stride for training windows. Validation and test windows use
    /// `pipeline.window.stride_samples`.
    #[serde(default = "default_stride")]
    pub train_stride: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_splits() -> usize {
    4
}

fn default_stride() -> usize {
    1
}

impl ExperimentConfig {
    /// Resolve relative paths against `base` and check what can be checked
    /// before any training starts.
    pub fn resolve(mut self, base: &Path) -> Result<Self> {
        let abs = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        self.manifest = abs(&self.manifest);
        self.test_manifest = self.test_manifest.as_deref().map(abs);
        for p in std::iter::once(&self.manifest).chain(&self.test_manifest) {
            if !p.is_file() {
                bail!("manifest {} does not exist", p.display());
            }
        }
        if self.models.is_empty() {
            bail!("config lists no models");
        }
        if self.n_splits < 2 {
            bail!("n_splits must be at least 2, got {}", self.n_splits);
        }
        if self.train_stride == 0 || self.pipeline.window.stride_samples == 0 {
            bail!("window strides must be positive");
        }
        self.train.seed = self.seed;
        self.train.validate()?;
        for m in &mut self.models {
            if let ModelChoice::Forest { config } = m {
                config.seed = self.seed;
            }
        }
        Ok(self)
    }
}

/// Parse trailing `--a.b value` / `--a.b=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| anyhow!("expected an override flag like --train.max_epochs, got {a:?}"))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
        } else {
            let v = it.next().ok_or_else(|| anyhow!("override --{key} has no value"))?;
            out.push((key.to_string(), v.clone()));
        }
    }
    Ok(out)
}

/// Set `path` in `root`. The key must already exist, which catches typos;
/// values are JSON when they parse as JSON and strings otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let mut cur = root;
    for part in path.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| anyhow!("unknown config key {path:?} (no {part:?})"))?;
    }
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Load `T` from an optional JSON file (defaults otherwise), then apply overrides
/// on the fully populated form so that every key is addressable.
pub fn load<T>(path: Option<&Path>, overrides: &[(String, String)]) -> Result<T>
where
    T: DeserializeOwned + Serialize + Default,
{
    let base: T = match path {
        Some(p) => read_json(p)?,
        None => T::default(),
    };
    with_overrides(base, overrides)
}

pub fn with_overrides<T: DeserializeOwned + Serialize>(base: T, overrides: &[(String, String)]) -> Result<T> {
    if overrides.is_empty() {
        return Ok(base);
    }
    let mut v = serde_json::to_value(&base)?;
    for (k, raw) in overrides {
        apply_override(&mut v, k, raw)?;
    }
    serde_json::from_value(v).context("config invalid after overrides")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
