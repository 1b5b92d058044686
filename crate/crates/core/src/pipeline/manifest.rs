use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DatasetSource, ProjectConfig};
use crate::error::{config_err, contract_err, Error, Result};
use crate::geometry::toy::ToyClass;
use crate::geometry::{
    load_mesh, rasterize_occupancy, sample_points, voxelize_mesh, ImplicitShape, OccupancyGrid, Point, SampleMode,
    MARGIN,
};
use crate::seed::derive_seed;
use crate::tensor::{Checkpoint, Tensor};

/// Abort `prepare` when more than this fraction of samples fail to load.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleSource {
    Toy { class: ToyClass, seed: u64 },
    Mesh { path: PathBuf, voxel_resolution: usize },
}

impl SampleSource {
    /// The solid with its inside/outside oracle.
    pub fn shape(&self) -> Result<ImplicitShape> {
        match self {
            SampleSource::Toy { class, seed } => Ok(class.shape(*seed)),
            SampleSource::Mesh { path, voxel_resolution } => {
                let mut mesh = load_mesh(path)?;
                if mesh.is_empty() {
                    return contract_err(format!("{} has no faces", path.display()));
                }
                mesh.normalize_to_unit_cube(MARGIN);
                let grid = voxelize_mesh(&mesh, *voxel_resolution);
                if grid.occupied_count(0.5) == 0 {
                    return contract_err(format!("{} encloses no volume", path.display()));
                }
                Ok(ImplicitShape::voxels(grid, Some(mesh)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source: SampleSource,
    pub split: Split,
    pub class: Option<usize>,
    /// JSON array of floats used as the condition embedding.
    pub embedding: Option<PathBuf>,
    /// SHA-256 over the source and every setting that shapes the cache.
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub source: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub samples: Vec<ManifestEntry>,
    pub failures: Vec<SampleFailure>,
}

impl DatasetManifest {
    /// Ids must be unique and every referenced file must exist.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.samples {
            if !seen.insert(e.id.as_str()) {
                return contract_err(format!("duplicate sample id {:?}", e.id));
            }
            if let SampleSource::Mesh { path, .. } = &e.source {
                if !path.is_file() {
                    return contract_err(format!("sample {}: mesh {} is missing", e.id, path.display()));
                }
            }
            if let Some(p) = &e.embedding {
                if !p.is_file() {
                    return contract_err(format!("sample {}: embedding {} is missing", e.id, p.display()));
                }
            }
            if e.class.is_some_and(|c| c >= self.classes.len()) {
                return contract_err(format!("sample {}: class index out of range", e.id));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}; run prepare first", path.display())))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.samples.iter().find(|e| e.id == id)
    }
}

/// Encoder points, labelled queries and the ground-truth grid of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedSample {
    pub points: Vec<Point>,
    pub queries: Vec<Point>,
    pub labels: Vec<f32>,
    pub oracle: OccupancyGrid,
}

fn points_tensor(points: &[Point]) -> Tensor<f32> {
    let data = points.iter().flat_map(|p| p.map(|v| v as f32)).collect();
    Tensor::new(vec![points.len(), 3], data).expect("rows of three")
}

fn tensor_points(t: &Tensor<f32>) -> Vec<Point> {
    t.data().chunks(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect()
}

impl CachedSample {
    fn to_checkpoint(&self, hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("points", points_tensor(&self.points));
        ck.push("queries", points_tensor(&self.queries));
        ck.push("labels", Tensor::new(vec![self.labels.len()], self.labels.clone()).expect("flat"));
        let r = self.oracle.resolution();
        ck.push("oracle", Tensor::new(vec![r, r, r], self.oracle.values().to_vec()).expect("cube"));
        ck.meta = Some(serde_json::json!({ "content_hash": hash }));
        ck
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |n: &str| ck.get(n).ok_or_else(|| Error::Checkpoint(format!("sample cache lacks {n:?}")));
        let oracle = get("oracle")?;
        Ok(CachedSample {
            points: tensor_points(get("points")?),
            queries: tensor_points(get("queries")?),
            labels: get("labels")?.data().to_vec(),
            oracle: OccupancyGrid::new(oracle.shape()[0], oracle.data().to_vec())?,
        })
    }

    /// Positions are stored as `f32`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn cached_hash(path: &Path) -> Option<String> {
    let ck = Checkpoint::load(path).ok()?;
    Some(ck.meta?.get("content_hash")?.as_str()?.to_string())
}

/// File name of a sample's cache under `samples/`.
pub fn cache_file_name(id: &str) -> String {
    format!("{}.a3dc", id.replace(['/', '\\'], "__"))
}

fn id_seed(base: u64, id: &str) -> u64 {
    let h = Sha256::digest(id.as_bytes());
    derive_seed(base, &[u64::from_le_bytes(h[..8].try_into().unwrap())])
}

struct Candidate {
    id: String,
    source: SampleSource,
    class: Option<usize>,
    embedding: Option<PathBuf>,
}

fn enumerate(cfg: &ProjectConfig) -> Result<(Vec<String>, Vec<Candidate>)> {
    match &cfg.dataset.source {
        DatasetSource::Toy { per_class, classes } => {
            let names = classes.iter().map(|c| c.name().to_string()).collect();
            let mut out = Vec::new();
            for (ci, &class) in classes.iter().enumerate() {
                for i in 0..*per_class {
                    out.push(Candidate {
                        id: format!("{}-{i:03}", class.name()),
                        source: SampleSource::Toy {
                            class,
                            seed: derive_seed(cfg.seed, &[class.index() as u64, i as u64]),
                        },
                        class: Some(ci),
                        embedding: None,
                    });
                }
            }
            Ok((names, out))
        }
        DatasetSource::Meshes { dir, voxel_resolution } => {
            let mut files = Vec::new();
            collect_meshes(dir, dir, &mut files)?;
            files.sort();
            if files.is_empty() {
                return config_err(format!("no .obj or .off files under {}", dir.display()));
            }
            let class_of = |rel: &Path| {
                let parent = rel.parent().filter(|p| !p.as_os_str().is_empty())?;
                Some(parent.to_string_lossy().replace('\\', "/"))
            };
            let names: Vec<String> = files
                .iter()
                .filter_map(|f| class_of(f.strip_prefix(dir).unwrap()))
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let out = files
                .iter()
                .map(|f| {
                    let rel = f.strip_prefix(dir).unwrap();
                    let emb = f.with_extension("embedding.json");
                    Candidate {
                        id: rel.to_string_lossy().replace('\\', "/"),
                        source: SampleSource::Mesh {
                            path: f.clone(),
                            voxel_resolution: *voxel_resolution,
                        },
                        class: class_of(rel).map(|c| names.iter().position(|n| *n == c).unwrap()),
                        embedding: emb.is_file().then_some(emb),
                    }
                })
                .collect();
            Ok((names, out))
        }
    }
}

fn collect_meshes(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot list mesh directory {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() {
            collect_meshes(root, &path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("obj") || e.eq_ignore_ascii_case("off"))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn content_hash(cfg: &ProjectConfig, c: &Candidate) -> Result<String> {
    let mut h = Sha256::new();
    let ae = &cfg.autoencoder;
    let settings = serde_json::json!({
        "id": c.id,
        "source": c.source,
        "seed": cfg.seed,
        "n_points": ae.n_points,
        "n_queries": ae.n_queries,
        "oracle_resolution": cfg.dataset.oracle_resolution,
    });
    h.update(settings.to_string().as_bytes());
    if let SampleSource::Mesh { path, .. } = &c.source {
        h.update(std::fs::read(path)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn materialize(cfg: &ProjectConfig, c: &Candidate, shape: &ImplicitShape) -> CachedSample {
    let ae = &cfg.autoencoder;
    let base = id_seed(cfg.seed, &c.id);
    let queries = sample_points(shape, ae.n_queries, SampleMode::Mixed, derive_seed(base, &[2]));
    CachedSample {
        points: sample_points(shape, ae.n_points, SampleMode::SurfaceNear, derive_seed(base, &[1])).points,
        queries: queries.points,
        labels: queries.labels.expect("sampled queries are labelled"),
        oracle: rasterize_occupancy(shape, cfg.dataset.oracle_resolution),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareReport {
    pub manifest: DatasetManifest,
    pub written: usize,
    pub reused: usize,
}

/// Enumerates the dataset, writes one cache file per sample under
/// `samples_dir` (skipping files whose recorded content hash still matches)
/// and assigns a per-class seeded train/test split.
pub(crate) fn prepare(cfg: &ProjectConfig, samples_dir: &Path) -> Result<PrepareReport> {
    std::fs::create_dir_all(samples_dir)?;
    let (classes, candidates) = enumerate(cfg)?;
    let results: Vec<std::result::Result<(ManifestEntry, bool), SampleFailure>> = candidates
        .par_iter()
        .map(|c| {
            let fail = |e: Error| SampleFailure {
                source: c.id.clone(),
                error: e.to_string(),
            };
            let hash = content_hash(cfg, c).map_err(fail)?;
            let file = samples_dir.join(cache_file_name(&c.id));
            let reused = cached_hash(&file).is_some_and(|h| h == hash);
            if !reused {
                let shape = c.source.shape().map_err(fail)?;
                materialize(cfg, c, &shape).to_checkpoint(&hash).save(&file).map_err(fail)?;
            }
            Ok((
                ManifestEntry {
                    id: c.id.clone(),
                    source: c.source.clone(),
                    split: Split::Train,
                    class: c.class,
                    embedding: c.embedding.clone(),
                    content_hash: hash,
                },
                reused,
            ))
        })
        .collect();

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    let mut reused = 0;
    for r in results {
        match r {
            Ok((e, hit)) => {
                reused += hit as usize;
                samples.push(e);
            }
            Err(f) => {
                log::warn!("prepare: skipping {}: {}", f.source, f.error);
                failures.push(f);
            }
        }
    }
    let total = candidates.len();
    if failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return contract_err(format!(
            "{} of {total} samples failed to load (limit {:.0}%)",
            failures.len(),
            MAX_FAILURE_FRACTION * 100.0
        ));
    }
    assign_splits(&mut samples, cfg.dataset.train_fraction, cfg.seed);
    let manifest = DatasetManifest { classes, samples, failures };
    manifest.validate()?;
    let written = manifest.samples.len() - reused;
    Ok(PrepareReport { manifest, written, reused })
}

/// Within each class, a seeded shuffle puts `round(n · train_fraction)`
/// samples in the training split and the rest in the test split.
fn assign_splits(samples: &mut [ManifestEntry], train_fraction: f64, seed: u64) {
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, e) in samples.iter().enumerate() {
        groups.entry(e.class).or_default().push(i);
    }
    for (class, mut members) in groups {
        let key = class.map_or(u64::MAX, |c| c as u64);
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5B17, key])));
        let n_train = (members.len() as f64 * train_fraction).round() as usize;
        for (rank, &i) in members.iter().enumerate() {
            samples[i].split = if rank < n_train { Split::Train } else { Split::Test };
        }
    }
}
