use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autoencoder::{AutoencoderConfig, Stage1TrainConfig};
use crate::error::{config_err, Error, Result};
use crate::geometry::toy::ToyClass;
use crate::metrics::{Distance, ECD_K};
use crate::prior::{SamplingPolicy, Stage2TrainConfig, TransformerConfig};

/// Everything a run needs, read from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    /// Root for manifests, caches, checkpoints and outputs.
    pub output_dir: PathBuf,
    /// Seed for splits, sample caches and model initialisation.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub autoencoder: AutoencoderConfig,
    pub stage1: Stage1TrainConfig,
    pub prior: PriorConfig,
    pub stage2: Stage2TrainConfig,
    pub sampling: SamplingConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            output_dir: PathBuf::from("runs/toy"),
            seed: 0,
            dataset: DatasetConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            stage1: Stage1TrainConfig {
                epochs: 40,
                ..Default::default()
            },
            prior: PriorConfig::default(),
            stage2: Stage2TrainConfig {
                epochs: 100,
                lr: 3e-3,
                condition_dropout: 0.1,
                target_nll: Some(0.05),
                ..Default::default()
            },
            sampling: SamplingConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Jittered parametric solids, `per_class` of each listed class.
    Toy { per_class: usize, classes: Vec<ToyClass> },
    /// `.obj`/`.off` files under `dir`. Files in a subdirectory take its
    /// name as class label. Each mesh is normalised into the unit cube and
    /// voxelised at `voxel_resolution` to get an inside/outside oracle.
    Meshes { dir: PathBuf, voxel_resolution: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub train_fraction: f64,
    pub test_fraction: f64,
    /// Resolution of the cached ground-truth occupancy grids.
    pub oracle_resolution: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DatasetSource::Toy {
                per_class: 64,
                classes: ToyClass::ALL.to_vec(),
            },
            train_fraction: 0.8,
            test_fraction: 0.2,
            oracle_resolution: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    None,
    Class,
    /// Per-sample embedding files referenced by the manifest.
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// `desk`, `small`, `large` or `huge`.
    pub preset: String,
    pub layers: Option<usize>,
    pub dim: Option<usize>,
    pub heads: Option<usize>,
    pub conditioning: Conditioning,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            preset: "desk".into(),
            layers: None,
            dim: None,
            heads: None,
            conditioning: Conditioning::Class,
        }
    }
}

impl PriorConfig {
    pub fn preset_config(&self) -> Result<TransformerConfig> {
        Ok(match self.preset.as_str() {
            "desk" => TransformerConfig::default(),
            "small" => TransformerConfig::small(),
            "large" => TransformerConfig::large(),
            "huge" => TransformerConfig::huge(),
            other => return config_err(format!("unknown prior preset {other:?}; expected desk, small, large or huge")),
        })
    }

    /// The preset with overrides applied, sized for `ae`'s codebook and
    /// token count.
    pub fn resolve(&self, ae: &AutoencoderConfig, num_classes: usize, embed_dim: usize) -> Result<TransformerConfig> {
        let mut t = self.preset_config()?;
        t.layers = self.layers.unwrap_or(t.layers);
        t.dim = self.dim.unwrap_or(t.dim);
        t.heads = self.heads.unwrap_or(t.heads);
        t.codebook_size = ae.codebook_size;
        t.seq_len = ae.tokens();
        t.context = t.seq_len + 1;
        t.num_classes = if self.conditioning == Conditioning::Class { num_classes } else { 0 };
        t.embed_dim = if self.conditioning == Conditioning::Embedding { embed_dim } else { 0 };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub seed: u64,
    /// Marching-cubes grid resolution `R`.
    pub resolution: usize,
    /// Shapes per condition.
    pub count: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 0.5,
            top_k: 8,
            seed: 0,
            resolution: 32,
            count: 10,
        }
    }
}

impl SamplingConfig {
    pub fn policy(&self, seed: u64) -> SamplingPolicy {
        SamplingPolicy {
            temperature: self.temperature,
            top_k: self.top_k,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Surface points resampled per shape.
    pub points: usize,
    pub k: usize,
    pub distances: Vec<Distance>,
    pub resample_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            points: 1024,
            k: ECD_K,
            distances: Distance::ALL.to_vec(),
            resample_seed: 0,
        }
    }
}

impl ProjectConfig {
    /// Reads `path` (or starts from the defaults when `None`) and applies
    /// `key.path=value` overrides. Values parse as JSON and fall back to
    /// plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(ProjectConfig::default())?,
        };
        let mut keys = Vec::new();
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
            keys.push(key.to_string());
        }
        let cfg: ProjectConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        // nested sections accept unknown keys, so check overrides land somewhere
        let round = serde_json::to_value(&cfg)?;
        for key in keys {
            if lookup(&round, &key).is_none() {
                return config_err(format!("override key {key:?} does not name a config field"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        for f in [d.train_fraction, d.test_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return config_err(format!("split fraction {f} outside [0, 1]"));
            }
        }
        if (d.train_fraction + d.test_fraction - 1.0).abs() > 1e-9 {
            return config_err(format!(
                "split fractions sum to {}, not 1",
                d.train_fraction + d.test_fraction
            ));
        }
        if d.oracle_resolution == 0 {
            return config_err("oracle_resolution must be positive");
        }
        match &d.source {
            DatasetSource::Toy { per_class, classes } => {
                if *per_class == 0 || classes.is_empty() {
                    return config_err("toy dataset needs at least one class and one shape per class");
                }
            }
            DatasetSource::Meshes { voxel_resolution, .. } => {
                if *voxel_resolution < 8 {
                    return config_err("voxel_resolution must be at least 8");
                }
            }
        }
        self.autoencoder.validate()?;
        self.prior.preset_config()?;
        self.sampling.policy(0).validate(self.autoencoder.codebook_size)?;
        if self.sampling.resolution < 2 || self.sampling.count == 0 {
            return config_err("sampling needs resolution ≥ 2 and count ≥ 1");
        }
        if self.evaluation.points == 0 || self.evaluation.distances.is_empty() {
            return config_err("evaluation needs points ≥ 1 and at least one distance");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return config_err(format!("malformed override key {key:?}"));
        }
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().unwrap()
            }
            _ => return config_err(format!("override key {key:?} descends into a non-object")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

fn lookup<'a>(doc: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(doc, |v, part| v.get(part))
}
