use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Conditioning, ProjectConfig};
use super::manifest::{cache_file_name, prepare, CachedSample, DatasetManifest, ManifestEntry, PrepareReport, Split};
use crate::autoencoder::{train_stage1, Stage1Report, TriPlaneAutoencoder};
use crate::error::{config_err, Error, Result};
use crate::geometry::{load_mesh, marching_cubes, rasterize_occupancy, save_mesh, volumetric_iou, Point};
use crate::metrics::{evaluate_sets, tmd_over_conditions, EvaluationReport, MetricReport};
use crate::prior::{generate, train_stage2, Condition, SamplingPolicy, Stage2Report, TransformerPrior};
use crate::seed::derive_seed;
use crate::tensor::Checkpoint;

/// Validation IoU a stage-one checkpoint must reach before its codes are
/// used to train the prior.
pub const IOU_GATE: f64 = 0.9;

/// Metric names accepted by [`Project::evaluate`].
pub const METRIC_NAMES: [&str; 5] = ["mmd", "cov", "1-nna", "ecd", "tmd"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSequence {
    pub id: String,
    pub split: Split,
    pub class: Option<usize>,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSequences {
    pub codebook_size: usize,
    pub seq_len: usize,
    pub sequences: Vec<LatentSequence>,
}

impl LatentSequences {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read sequences {}: {e}; run encode-dataset first", path.display()))
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Which conditions to sample under.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionSpec {
    None,
    /// A class by name or index.
    Class(String),
    AllClasses,
    /// JSON array of floats.
    Embedding(PathBuf),
}

impl FromStr for ConditionSpec {
    type Err = Error;

    /// `none`, `all-classes`, `class:<name|index>` or `embedding:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ConditionSpec::None),
            "all-classes" => Ok(ConditionSpec::AllClasses),
            _ => match s.split_once(':') {
                Some(("class", c)) if !c.is_empty() => Ok(ConditionSpec::Class(c.to_string())),
                Some(("embedding", p)) if !p.is_empty() => Ok(ConditionSpec::Embedding(p.into())),
                _ => config_err(format!(
                    "condition {s:?} is not none, all-classes, class:<name> or embedding:<path>"
                )),
            },
        }
    }
}

/// Sidecar written next to each sampled mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub condition: Condition,
    pub class_name: Option<String>,
    pub policy: SamplingPolicy,
    pub resolution: usize,
    pub indices: Vec<usize>,
    pub log_prob: f64,
    pub mesh_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRow {
    pub id: String,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub rows: Vec<ReconstructionRow>,
    pub mean_iou: f64,
}

/// Shapes to reconstruct: explicit ids, or a whole split when `ids` is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructRequest {
    pub ids: Vec<String>,
    pub split: Split,
    pub resolution: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateRequest {
    /// Directory of generated `.obj` files, default `<output>/generated`.
    pub generated_dir: Option<PathBuf>,
    pub reference_split: Split,
    pub metrics: Vec<String>,
    /// Where `report.json` and `report.txt` go, default `<output>/evaluation`.
    pub out_dir: Option<PathBuf>,
}

impl Default for EvaluateRequest {
    fn default() -> Self {
        EvaluateRequest {
            generated_dir: None,
            reference_split: Split::Test,
            metrics: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
            out_dir: None,
        }
    }
}

/// Outputs of [`Project::run_all`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub manifest: DatasetManifest,
    pub stage1: Stage1Report,
    pub sequences: LatentSequences,
    pub stage2: Stage2Report,
    pub samples: Vec<SampleRecord>,
    pub report: EvaluationReport,
}

/// One run directory driven by one [`ProjectConfig`].
pub struct Project {
    pub config: ProjectConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn require(path: &Path, what: &str, producer: &str) -> Result<()> {
    if !path.is_file() {
        return config_err(format!("{what} {} not found; run {producer} first", path.display()));
    }
    Ok(())
}

fn read_embedding(path: &Path) -> Result<Vec<f32>> {
    let text = std::fs::read_to_string(path)?;
    let v: Vec<f32> = serde_json::from_str(&text)?;
    if v.is_empty() {
        return config_err(format!("embedding {} is empty", path.display()));
    }
    Ok(v)
}

impl Project {
    pub fn new(config: ProjectConfig) -> Self {
        Project { config }
    }

    pub fn root(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root().join("manifest.json")
    }

    pub fn samples_dir(&self) -> PathBuf {
        self.root().join("samples")
    }

    pub fn stage1_path(&self) -> PathBuf {
        self.root().join("stage1.a3dc")
    }

    pub fn sequences_path(&self) -> PathBuf {
        self.root().join("sequences.json")
    }

    pub fn stage2_path(&self) -> PathBuf {
        self.root().join("stage2.a3dc")
    }

    pub fn generated_dir(&self) -> PathBuf {
        self.root().join("generated")
    }

    pub fn reconstructions_dir(&self) -> PathBuf {
        self.root().join("reconstructions")
    }

    pub fn evaluation_dir(&self) -> PathBuf {
        self.root().join("evaluation")
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        DatasetManifest::load(self.manifest_path())
    }

    fn cached(&self, e: &ManifestEntry) -> Result<CachedSample> {
        let path = self.samples_dir().join(cache_file_name(&e.id));
        require(&path, "sample cache", "prepare")?;
        CachedSample::load(path)
    }

    /// Materialises the dataset cache and writes the manifest plus a copy of
    /// the resolved config.
    pub fn prepare(&self) -> Result<PrepareReport> {
        std::fs::create_dir_all(self.root())?;
        let report = prepare(&self.config, &self.samples_dir())?;
        report.manifest.save(self.manifest_path())?;
        std::fs::write(self.root().join("config.json"), self.config.to_json()? + "\n")?;
        log::info!(
            "prepare: {} samples ({} written, {} cached), {} failures",
            report.manifest.samples.len(),
            report.written,
            report.reused,
            report.manifest.failures.len()
        );
        Ok(report)
    }

    /// Trains the autoencoder on the training split, validating on the test
    /// split. The checkpoint is rewritten after every epoch and records the
    /// latest validation IoU.
    pub fn train_stage1(&self) -> Result<Stage1Report> {
        let manifest = self.manifest()?;
        let shapes = |split| {
            manifest
                .split(split)
                .collect::<Vec<_>>()
                .par_iter()
                .map(|e| e.source.shape())
                .collect::<Result<Vec<_>>>()
        };
        let (train, val) = (shapes(Split::Train)?, shapes(Split::Test)?);
        let mut model = TriPlaneAutoencoder::new(self.config.autoencoder.clone(), derive_seed(self.config.seed, &[0xAE]))?;
        let report = train_stage1(&mut model, &train, &val, &self.config.stage1, Some(&self.stage1_path()))?;
        write_json(&self.root().join("stage1_report.json"), &report)?;
        match report.final_val_iou {
            Some(v) if v >= IOU_GATE => log::info!("stage 1: validation IoU {v:.4} passes the {IOU_GATE} gate"),
            Some(v) => log::warn!("stage 1: validation IoU {v:.4} is below the {IOU_GATE} gate"),
            None => log::warn!("stage 1: no validation split, IoU gate cannot open"),
        }
        Ok(report)
    }

    pub fn load_stage1(&self) -> Result<(TriPlaneAutoencoder, Option<f64>)> {
        let path = self.stage1_path();
        require(&path, "stage-one checkpoint", "train-stage1")?;
        let ck = Checkpoint::load(&path)?;
        Ok((TriPlaneAutoencoder::from_checkpoint(&ck)?, TriPlaneAutoencoder::recorded_val_iou(&ck)))
    }

    pub fn load_stage2(&self) -> Result<TransformerPrior> {
        let path = self.stage2_path();
        require(&path, "stage-two checkpoint", "train-stage2")?;
        TransformerPrior::load(path)
    }

    /// Encodes every sample's cached points to codebook indices. Refuses with
    /// [`Error::Gate`] when the checkpoint's validation IoU is below
    /// [`IOU_GATE`], unless `force` is set.
    pub fn encode_dataset(&self, force: bool) -> Result<LatentSequences> {
        let (model, iou) = self.load_stage1()?;
        let iou = iou.unwrap_or(f64::NAN);
        if !(iou >= IOU_GATE) {
            if !force {
                return Err(Error::Gate { iou, threshold: IOU_GATE });
            }
            log::warn!("encode-dataset: IoU {iou:.4} below {IOU_GATE}, continuing because of --force");
        }
        let manifest = self.manifest()?;
        let sequences = manifest
            .samples
            .par_iter()
            .map(|e| {
                Ok(LatentSequence {
                    id: e.id.clone(),
                    split: e.split,
                    class: e.class,
                    indices: model.encode_indices(&self.cached(e)?.points)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = LatentSequences {
            codebook_size: model.config().codebook_size,
            seq_len: model.config().tokens(),
            sequences,
        };
        write_json(&self.sequences_path(), &out)?;
        Ok(out)
    }

    fn condition_for(&self, manifest: &DatasetManifest, s: &LatentSequence) -> Result<Condition> {
        match self.config.prior.conditioning {
            Conditioning::None => Ok(Condition::None),
            Conditioning::Class => match s.class {
                Some(c) => Ok(Condition::Class(c)),
                None => config_err(format!("class conditioning, but sample {} has no class", s.id)),
            },
            Conditioning::Embedding => match manifest.get(&s.id).and_then(|e| e.embedding.as_ref()) {
                Some(p) => Ok(Condition::Embedding(read_embedding(p)?)),
                None => config_err(format!("embedding conditioning, but sample {} has no embedding", s.id)),
            },
        }
    }

    /// Fits the prior to the training split's sequences.
    pub fn train_stage2(&self) -> Result<Stage2Report> {
        let manifest = self.manifest()?;
        let seqs = LatentSequences::load(self.sequences_path())?;
        let train: Vec<&LatentSequence> = seqs.sequences.iter().filter(|s| s.split == Split::Train).collect();
        let conds = train
            .iter()
            .map(|s| self.condition_for(&manifest, s))
            .collect::<Result<Vec<_>>>()?;
        let embed_dim = conds
            .iter()
            .find_map(|c| match c {
                Condition::Embedding(v) => Some(v.len()),
                _ => None,
            })
            .unwrap_or(0);
        if self.config.prior.conditioning == Conditioning::Class && manifest.classes.is_empty() {
            return config_err("class conditioning needs a labelled dataset");
        }
        let tcfg = self
            .config
            .prior
            .resolve(&self.config.autoencoder, manifest.classes.len(), embed_dim)?;
        if tcfg.codebook_size != seqs.codebook_size || tcfg.seq_len != seqs.seq_len {
            return config_err("sequences were encoded with a different codebook or token count");
        }
        let mut prior = TransformerPrior::new(tcfg, derive_seed(self.config.seed, &[0x7F]))?;
        let indices: Vec<Vec<usize>> = train.iter().map(|s| s.indices.clone()).collect();
        let conds = if self.config.prior.conditioning == Conditioning::None { Vec::new() } else { conds };
        let report = train_stage2(&mut prior, &indices, &conds, &self.config.stage2, Some(&self.stage2_path()))?;
        write_json(&self.root().join("stage2_report.json"), &report)?;
        Ok(report)
    }

    fn expand(&self, spec: &ConditionSpec, manifest: &DatasetManifest) -> Result<Vec<(String, Condition, u64)>> {
        let class_index = |c: &str| -> Result<usize> {
            manifest
                .classes
                .iter()
                .position(|n| n == c)
                .or_else(|| c.parse().ok().filter(|&i: &usize| i < manifest.classes.len()))
                .ok_or_else(|| Error::Config(format!("unknown class {c:?}")))
        };
        Ok(match spec {
            ConditionSpec::None => vec![("uncond".into(), Condition::None, 0)],
            ConditionSpec::Class(c) => {
                let i = class_index(c)?;
                vec![(manifest.classes[i].clone(), Condition::Class(i), i as u64 + 1)]
            }
            ConditionSpec::AllClasses => manifest
                .classes
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), Condition::Class(i), i as u64 + 1))
                .collect(),
            ConditionSpec::Embedding(p) => {
                let v = read_embedding(p)?;
                let h = Sha256::digest(serde_json::to_vec(&v)?);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let key = u64::from_le_bytes(h[..8].try_into().unwrap());
                vec![(format!("emb-{stem}"), Condition::Embedding(v), key)]
            }
        })
    }

    /// The default condition set: every class under class conditioning,
    /// otherwise unconditional.
    pub fn default_condition(&self) -> ConditionSpec {
        match self.config.prior.conditioning {
            Conditioning::Class => ConditionSpec::AllClasses,
            _ => ConditionSpec::None,
        }
    }

    /// Samples `sampling.count` shapes per condition with the trained prior.
    pub fn sample(&self, spec: &ConditionSpec, out_dir: Option<&Path>) -> Result<Vec<SampleRecord>> {
        let prior = self.load_stage2()?;
        self.sample_with(&prior, spec, out_dir)
    }

    /// [`sample`](Self::sample) with an explicit prior, for baselines.
    pub fn sample_with(
        &self,
        prior: &TransformerPrior,
        spec: &ConditionSpec,
        out_dir: Option<&Path>,
    ) -> Result<Vec<SampleRecord>> {
        let (stage1, _) = self.load_stage1()?;
        let manifest = self.manifest()?;
        let s = &self.config.sampling;
        let dir = out_dir.map_or_else(|| self.generated_dir(), Path::to_path_buf);
        std::fs::create_dir_all(&dir)?;
        let jobs: Vec<(String, Condition, u64, usize)> = self
            .expand(spec, &manifest)?
            .into_iter()
            .flat_map(|(label, cond, key)| (0..s.count).map(move |i| (label.clone(), cond.clone(), key, i)))
            .collect();
        jobs.par_iter()
            .map(|(label, cond, key, i)| {
                let policy = s.policy(derive_seed(s.seed, &[*key, *i as u64]));
                let g = generate(prior, &stage1, cond, &policy, s.resolution)?;
                let id = format!("{label}-{i:03}");
                let obj = g.mesh.to_obj();
                std::fs::write(dir.join(format!("{id}.obj")), &obj)?;
                let record = SampleRecord {
                    id: id.clone(),
                    condition: cond.clone(),
                    class_name: match cond {
                        Condition::Class(c) => manifest.classes.get(*c).cloned(),
                        _ => None,
                    },
                    policy,
                    resolution: s.resolution,
                    indices: g.sample.indices,
                    log_prob: g.sample.log_prob,
                    mesh_sha256: hex::encode(Sha256::digest(obj.as_bytes())),
                };
                write_json(&dir.join(format!("{id}.json")), &record)?;
                Ok(record)
            })
            .collect()
    }

    /// Reconstructs samples through the autoencoder and scores them against
    /// their oracle grids; writes meshes and `iou.csv`.
    pub fn reconstruct(&self, req: &ReconstructRequest) -> Result<ReconstructReport> {
        let (model, _) = self.load_stage1()?;
        let manifest = self.manifest()?;
        let entries: Vec<&ManifestEntry> = if req.ids.is_empty() {
            manifest.split(req.split).collect()
        } else {
            req.ids
                .iter()
                .map(|id| manifest.get(id).ok_or_else(|| Error::Config(format!("unknown sample id {id:?}"))))
                .collect::<Result<_>>()?
        };
        if entries.is_empty() {
            return config_err("nothing to reconstruct");
        }
        let dir = self.reconstructions_dir();
        std::fs::create_dir_all(&dir)?;
        let rows = entries
            .par_iter()
            .map(|e| {
                let cache = self.cached(e)?;
                let grid = model.reconstruct_grid(&cache.points, req.resolution)?;
                let oracle = if cache.oracle.resolution() == req.resolution {
                    cache.oracle
                } else {
                    rasterize_occupancy(&e.source.shape()?, req.resolution)
                };
                let mesh = marching_cubes(&grid, 0.5)?.mesh;
                save_mesh(&mesh, dir.join(cache_file_name(&e.id).replace(".a3dc", ".obj")))?;
                Ok(ReconstructionRow {
                    id: e.id.clone(),
                    iou: volumetric_iou(&grid, &oracle, 0.5)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_iou = rows.iter().map(|r| r.iou).sum::<f64>() / rows.len() as f64;
        let mut csv = String::from("id,iou\n");
        for r in &rows {
            let _ = writeln!(csv, "{},{:.6}", r.id, r.iou);
        }
        let _ = writeln!(csv, "mean,{mean_iou:.6}");
        std::fs::write(dir.join("iou.csv"), csv)?;
        Ok(ReconstructReport { rows, mean_iou })
    }

    /// Scores generated meshes against a reference split. Every shape is
    /// resampled to `evaluation.points` surface points with fixed seeds.
    pub fn evaluate(&self, req: &EvaluateRequest) -> Result<EvaluationReport> {
        for m in &req.metrics {
            if !METRIC_NAMES.contains(&m.as_str()) {
                return config_err(format!("unknown metric {m:?}; expected one of {METRIC_NAMES:?}"));
            }
        }
        let ev = &self.config.evaluation;
        let manifest = self.manifest()?;
        let gen_dir = req.generated_dir.clone().unwrap_or_else(|| self.generated_dir());
        let mut files: Vec<PathBuf> = std::fs::read_dir(&gen_dir)
            .map_err(|e| Error::Config(format!("cannot list {}: {e}", gen_dir.display())))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "obj" || e == "off"));
        files.sort();
        if files.is_empty() {
            return config_err(format!("no generated meshes in {}", gen_dir.display()));
        }
        let generated = files
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                let mesh = load_mesh(f)?;
                Ok((mesh.is_empty(), mesh.sample_surface(ev.points, derive_seed(ev.resample_seed, &[0, i as u64]))))
            })
            .collect::<Result<Vec<(bool, Vec<Point>)>>>()?;
        let empty = generated.iter().filter(|g| g.0).count();
        let generated: Vec<Vec<Point>> = generated.into_iter().map(|g| g.1).collect();

        let refs: Vec<&ManifestEntry> = manifest.split(req.reference_split).collect();
        if refs.is_empty() {
            return config_err("reference split is empty");
        }
        let reference = refs
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let shape = e.source.shape()?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ev.resample_seed, &[1, i as u64]));
                Ok((0..ev.points).map(|_| shape.sample_surface(&mut rng).0).collect())
            })
            .collect::<Result<Vec<Vec<Point>>>>()?;

        let wanted = |m: &str| req.metrics.iter().any(|x| x == m);
        let mut report = if ["mmd", "cov", "1-nna", "ecd"].iter().any(|m| wanted(m)) {
            evaluate_sets(&generated, &reference, &ev.distances, ev.k, Some(ev.points))?
        } else {
            EvaluationReport::default()
        };
        report.metrics.retain(|m| wanted(&m.metric));
        if !report.metrics.iter().any(|m| m.metric == "ecd") {
            report.notes.clear();
        }
        if empty > 0 {
            report
                .notes
                .push(format!("{empty} generated meshes were empty and are represented by the cube centre"));
        }
        if wanted("tmd") {
            let mut groups: BTreeMap<String, Vec<Vec<Point>>> = BTreeMap::new();
            for (f, pts) in files.iter().zip(&generated) {
                let key = std::fs::read_to_string(f.with_extension("json"))
                    .ok()
                    .and_then(|t| serde_json::from_str::<SampleRecord>(&t).ok())
                    .map_or_else(|| "unknown".to_string(), |r| serde_json::to_string(&r.condition).unwrap());
                groups.entry(key).or_default().push(pts.clone());
            }
            let groups: Vec<Vec<Vec<Point>>> = groups.into_values().filter(|g| g.len() >= 2).collect();
            if groups.is_empty() {
                log::warn!("evaluate: TMD needs two shapes per condition; skipped");
            } else {
                report.metrics.push(MetricReport {
                    metric: "tmd".into(),
                    distance: None,
                    value: tmd_over_conditions(&groups)?,
                    n_generated: generated.len(),
                    n_reference: 0,
                    k: None,
                    points: Some(ev.points),
                });
            }
        }
        let out = req.out_dir.clone().unwrap_or_else(|| self.evaluation_dir());
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("report.json"), report.to_json()? + "\n")?;
        std::fs::write(out.join("report.txt"), report.to_text_table())?;
        Ok(report)
    }

    /// prepare → train-stage1 → encode-dataset → train-stage2 → sample →
    /// evaluate with default requests.
    pub fn run_all(&self, force: bool) -> Result<RunSummary> {
        let manifest = self.prepare()?.manifest;
        let stage1 = self.train_stage1()?;
        let sequences = self.encode_dataset(force)?;
        let stage2 = self.train_stage2()?;
        let samples = self.sample(&self.default_condition(), None)?;
        let report = self.evaluate(&EvaluateRequest::default())?;
        Ok(RunSummary {
            manifest,
            stage1,
            sequences,
            stage2,
            samples,
            report,
        })
    }
}
