use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::AutoencoderConfig;
use crate::error::{contract_err, dim_err, Error, Result};
use crate::geometry::{marching_cubes, sample_points, ImplicitShape, Mesh, OccupancyGrid, Point, SampleMode};
use crate::nn::{Conv, Mlp};
use crate::quantizer::{nearest_indices, quantize_var, Codebook};
use crate::tensor::{init, Checkpoint, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Coordinate pairs kept by the xy, xz and yz planes.
pub const PLANES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
const PLANE_NAMES: [&str; 3] = ["xy", "xz", "yz"];

/// Queries evaluated per graph when predicting dense grids.
const GRID_CHUNK: usize = 4096;

#[derive(Clone, Debug)]
struct PlaneEncoder {
    refine: Conv,
    down: [Conv; 3],
}

#[derive(Clone, Debug)]
struct Inner {
    down: Conv,
    mid: Conv,
    up: Conv,
}

#[derive(Clone, Debug)]
struct UNet {
    input: Conv,
    inner: Option<Inner>,
    ups: [Conv; 3],
    out: Conv,
}

/// The stage-one model and its parameters.
#[derive(Clone, Debug)]
pub struct TriPlaneAutoencoder {
    cfg: AutoencoderConfig,
    pub params: ParamStore<f32>,
    point_mlp: Mlp,
    planes: [PlaneEncoder; 3],
    proj: Conv,
    pos: ParamId,
    codebook: ParamId,
    unet: UNet,
    head: Mlp,
}

/// Forward pass of one shape through the whole model.
pub struct Stage1Forward {
    /// `L_occ + L_quant`.
    pub loss: Var,
    pub parts: LossParts<Var>,
    pub indices: Vec<usize>,
    pub tokens: Var,
}

/// The two summands of the stage-one objective.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<V> {
    pub occupancy: V,
    pub quantization: V,
}

/// `L_rec = L_occ + L_quant` where `L_occ` is the mean stable binary
/// cross-entropy of `σ(logits)` against 0/1 `labels`.
pub fn reconstruction_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[T],
    quantization: Var,
) -> Result<(Var, LossParts<Var>)> {
    if labels.iter().any(|&l| l != T::zero() && l != T::one()) {
        return contract_err("occupancy labels must be 0 or 1");
    }
    let occupancy = g.bce_with_logits(logits, labels)?;
    let total = g.add(occupancy, quantization)?;
    Ok((total, LossParts { occupancy, quantization }))
}

fn cell_of(x: f64, r: usize) -> usize {
    ((x * r as f64).floor().max(0.0) as usize).min(r - 1)
}

impl TriPlaneAutoencoder {
    pub fn new(cfg: AutoencoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (p, c, d, u) = (cfg.point_dim, cfg.plane_channels, cfg.latent_dim, cfg.unet_channels);

        let point_mlp = Mlp::new(&mut s, "encoder.point_mlp", &[3, p, p], &mut rng);
        let planes = PLANE_NAMES.map(|name| {
            let pre = format!("encoder.plane_{name}");
            PlaneEncoder {
                refine: Conv::same(&mut s, &format!("{pre}.refine"), p, c, &mut rng),
                down: [0, 1, 2].map(|i| Conv::down(&mut s, &format!("{pre}.down{i}"), c, c, &mut rng)),
            }
        });
        let proj = Conv::pointwise(&mut s, "encoder.proj", 3 * c, d, &mut rng);
        let pos = s.add("encoder.pos_embed", init::normal(&[cfg.tokens(), d], 0.02, &mut rng));
        let codebook = Codebook::new(cfg.codebook_size, d, &mut rng)?.register(&mut s);

        let rb = cfg.latent_resolution();
        let inner = (rb % 2 == 0).then(|| Inner {
            down: Conv::down(&mut s, "decoder.inner.down", u, u, &mut rng),
            mid: Conv::same(&mut s, "decoder.inner.mid", u, u, &mut rng),
            up: Conv::same(&mut s, "decoder.inner.up", 2 * u, u, &mut rng),
        });
        let widths = [u, u / 2, c];
        let mut prev = u;
        let ups = [0, 1, 2].map(|i| {
            let conv = Conv::same(&mut s, &format!("decoder.up{i}"), prev, widths[i], &mut rng);
            prev = widths[i];
            conv
        });
        let unet = UNet {
            input: Conv::same(&mut s, "decoder.input", d, u, &mut rng),
            inner,
            ups,
            out: Conv::pointwise(&mut s, "decoder.out", c, 3 * c, &mut rng),
        };
        let h = cfg.head_hidden;
        let head = Mlp::new(&mut s, "head.mlp", &[c, h, h, 1], &mut rng);

        Ok(TriPlaneAutoencoder {
            cfg,
            params: s,
            point_mlp,
            planes,
            proj,
            pos,
            codebook,
            unet,
            head,
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.cfg
    }

    pub fn codebook_id(&self) -> ParamId {
        self.codebook
    }

    pub fn positional_id(&self) -> ParamId {
        self.pos
    }

    pub fn codebook(&self) -> &Tensor<f32> {
        self.params.get(self.codebook)
    }

    /// Parameter ids grouped by component, for diagnostics and tests.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let under = |prefix: &str| -> Vec<ParamId> {
            self.params
                .iter()
                .filter(|(_, n, _)| n.starts_with(prefix))
                .map(|(id, _, _)| id)
                .collect()
        };
        vec![
            ("point_mlp", under("encoder.point_mlp")),
            ("plane_cnn", under("encoder.plane_")),
            ("projection", [under("encoder.proj"), under("encoder.pos_embed")].concat()),
            ("codebook", under("codebook.")),
            ("unet", under("decoder.")),
            ("head", under("head.")),
        ]
    }

    fn points_tensor<T: Scalar>(points: &[Point]) -> Result<Tensor<T>> {
        if points.is_empty() {
            return contract_err("cannot encode an empty point cloud");
        }
        let data = points.iter().flat_map(|p| p.map(T::from_f64)).collect();
        Tensor::new(vec![points.len(), 3], data)
    }

    /// Per-point features mean-scattered onto the three planes, before any
    /// convolution.
    pub fn scatter_planes<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, points: &[Point]) -> Result<[Var; 3]> {
        let r = self.cfg.resolution;
        let x = g.constant(Self::points_tensor(points)?);
        let feats = self.point_mlp.forward(g, store, x)?;
        let mut out = Vec::with_capacity(3);
        for (a, b) in PLANES {
            let cells: Vec<usize> = points.iter().map(|p| cell_of(p[a], r) * r + cell_of(p[b], r)).collect();
            out.push(g.scatter_mean(feats, &cells, r)?);
        }
        Ok([out[0], out[1], out[2]])
    }

    /// Scattered planes refined at full resolution.
    pub fn encode_points<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, points: &[Point]) -> Result<[Var; 3]> {
        let raw = self.scatter_planes(g, store, points)?;
        let mut out = raw;
        for (o, enc) in out.iter_mut().zip(&self.planes) {
            *o = enc.refine.forward_relu(g, store, *o)?;
        }
        Ok(out)
    }

    /// Downsamples, fuses and flattens the planes into `m × d` tokens with
    /// the positional embedding added.
    pub fn serialize<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, planes: [Var; 3]) -> Result<Var> {
        let r = self.cfg.resolution;
        for p in planes {
            if g.shape(p) != [self.cfg.plane_channels, r, r] {
                return dim_err(format!("plane {:?} does not match c×r×r", g.shape(p)));
            }
        }
        let mut small = Vec::with_capacity(3);
        for (p, enc) in planes.iter().zip(&self.planes) {
            let mut x = *p;
            for conv in &enc.down {
                x = conv.forward_relu(g, store, x)?;
            }
            small.push(x);
        }
        let fused = g.concat(&small, 0)?;
        let projected = self.proj.forward(g, store, fused)?;
        let (d, m) = (self.cfg.latent_dim, self.cfg.tokens());
        let flat = g.reshape(projected, &[d, m])?;
        let tokens = g.transpose(flat)?;
        let pos = g.param(store, self.pos);
        g.add(tokens, pos)
    }

    /// U-Net from `m × d` quantized tokens back to three `c × r × r` planes.
    pub fn decode_planes<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, z_q: Var) -> Result<[Var; 3]> {
        let (d, m, rb) = (self.cfg.latent_dim, self.cfg.tokens(), self.cfg.latent_resolution());
        if g.shape(z_q) != [m, d] {
            return dim_err(format!("decoder expects {m}×{d} tokens, got {:?}", g.shape(z_q)));
        }
        let t = g.transpose(z_q)?;
        let grid = g.reshape(t, &[d, rb, rb])?;
        let mut x = self.unet.input.forward_relu(g, store, grid)?;
        if let Some(inner) = &self.unet.inner {
            let skip = x;
            let down = inner.down.forward_relu(g, store, x)?;
            let mid = inner.mid.forward_relu(g, store, down)?;
            let up = g.upsample2x(mid)?;
            let cat = g.concat(&[up, skip], 0)?;
            x = inner.up.forward_relu(g, store, cat)?;
        }
        for conv in &self.unet.ups {
            let up = g.upsample2x(x)?;
            x = conv.forward_relu(g, store, up)?;
        }
        let all = self.unet.out.forward(g, store, x)?;
        let c = self.cfg.plane_channels;
        Ok([
            g.narrow(all, 0, 0, c)?,
            g.narrow(all, 0, c, c)?,
            g.narrow(all, 0, 2 * c, c)?,
        ])
    }

    /// One occupancy logit per query.
    pub fn occupancy_logits<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        planes: [Var; 3],
        queries: &[Point],
    ) -> Result<Var> {
        let mut sum: Option<Var> = None;
        for (plane, (a, b)) in planes.iter().zip(PLANES) {
            let uv: Vec<[T; 2]> = queries.iter().map(|q| [T::from_f64(q[a]), T::from_f64(q[b])]).collect();
            let f = g.bilinear_sample(*plane, &uv)?;
            sum = Some(match sum {
                Some(s) => g.add(s, f)?,
                None => f,
            });
        }
        let logits = self.head.forward(g, store, sum.expect("three planes"))?;
        g.reshape(logits, &[queries.len()])
    }

    /// Full stage-one objective on one shape.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        points: &[Point],
        queries: &[Point],
        labels: &[T],
    ) -> Result<Stage1Forward> {
        if queries.len() != labels.len() {
            return dim_err(format!("{} queries but {} labels", queries.len(), labels.len()));
        }
        let planes = self.encode_points(g, store, points)?;
        let tokens = self.serialize(g, store, planes)?;
        let codebook = g.param(store, self.codebook);
        let vq = quantize_var(g, codebook, tokens, self.cfg.beta)?;
        let decoded = self.decode_planes(g, store, vq.z_st)?;
        let logits = self.occupancy_logits(g, store, decoded, queries)?;
        let (loss, parts) = reconstruction_loss(g, logits, labels, vq.loss)?;
        Ok(Stage1Forward {
            loss,
            parts,
            indices: vq.indices,
            tokens,
        })
    }

    /// Continuous tokens of a point cloud (before quantization).
    pub fn encode_tokens(&self, points: &[Point]) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let planes = self.encode_points(&mut g, &self.params, points)?;
        let t = self.serialize(&mut g, &self.params, planes)?;
        Ok(g.value(t).clone())
    }

    /// Codebook indices of a point cloud, in row-major token order.
    pub fn encode_indices(&self, points: &[Point]) -> Result<Vec<usize>> {
        nearest_indices(&self.encode_tokens(points)?, self.codebook())
    }

    /// Indices of a shape, encoding `n_points` surface-near samples drawn
    /// with `seed`.
    pub fn encode_shape(&self, shape: &ImplicitShape, seed: u64) -> Result<Vec<usize>> {
        let cloud = sample_points(shape, self.cfg.n_points, SampleMode::SurfaceNear, seed);
        self.encode_indices(&cloud.points)
    }

    /// Occupancy probabilities at the cell centres of an `R³` grid, decoded
    /// from codebook indices.
    pub fn decode_indices(&self, indices: &[usize], resolution: usize) -> Result<OccupancyGrid> {
        let (m, k) = (self.cfg.tokens(), self.cfg.codebook_size);
        if indices.len() != m {
            return dim_err(format!("expected {m} indices, got {}", indices.len()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= k) {
            return contract_err(format!("index {bad} outside codebook of {k}"));
        }
        let mut g = Graph::new();
        let codebook = g.param(&self.params, self.codebook);
        let z_q = g.embedding(codebook, indices)?;
        let planes = self.decode_planes(&mut g, &self.params, z_q)?;
        let planes = planes.map(|p| g.value(p).clone());
        self.grid_from_planes(&planes, resolution)
    }

    fn grid_from_planes(&self, planes: &[Tensor<f32>; 3], resolution: usize) -> Result<OccupancyGrid> {
        let r = resolution;
        let h = 1.0 / r as f64;
        let centers: Vec<Point> = (0..r * r * r)
            .map(|id| {
                let (i, j, k) = (id / (r * r), (id / r) % r, id % r);
                [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h]
            })
            .collect();
        let mut values = Vec::with_capacity(centers.len());
        for chunk in centers.chunks(GRID_CHUNK) {
            let mut g = Graph::<f32>::new();
            let vars = [0, 1, 2].map(|i| g.constant(planes[i].clone()));
            let logits = self.occupancy_logits(&mut g, &self.params, vars, chunk)?;
            values.extend(g.value(logits).data().iter().map(|&l| crate::tensor::sigmoid(l)));
        }
        OccupancyGrid::new(r, values)
    }

    /// Encode, quantize and decode a point cloud, then evaluate occupancy on
    /// an `R³` grid.
    pub fn reconstruct_grid(&self, points: &[Point], resolution: usize) -> Result<OccupancyGrid> {
        let idx = self.encode_indices(points)?;
        self.decode_indices(&idx, resolution)
    }

    /// Reconstruction of `shape` meshed at iso 0.5.
    pub fn reconstruct(&self, shape: &ImplicitShape, resolution: usize, seed: u64) -> Result<(OccupancyGrid, Mesh)> {
        let cloud = sample_points(shape, self.cfg.n_points, SampleMode::SurfaceNear, seed);
        let grid = self.reconstruct_grid(&cloud.points, resolution)?;
        let mesh = marching_cubes(&grid, 0.5)?.mesh;
        Ok((grid, mesh))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_params("", &self.params);
        ck.meta = Some(json!({ "model": "triplane_autoencoder", "config": self.cfg }));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = ck
            .meta
            .as_ref()
            .filter(|m| m["model"] == "triplane_autoencoder")
            .ok_or_else(|| Error::Checkpoint("not a stage-one checkpoint".into()))?;
        let cfg: AutoencoderConfig = serde_json::from_value(meta["config"].clone())?;
        let mut model = Self::new(cfg, 0)?;
        model.params.load_named(ck.tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        if !model.params.all_finite() {
            return Err(Error::Checkpoint("stage-one parameters contain non-finite values".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Saves with the validation IoU recorded in the metadata, where
    /// [`recorded_val_iou`](Self::recorded_val_iou) finds it.
    pub fn save_with_val_iou(&self, path: impl AsRef<Path>, val_iou: Option<f64>) -> Result<()> {
        let mut ck = self.to_checkpoint();
        if let (Some(meta), Some(v)) = (ck.meta.as_mut(), val_iou) {
            meta["val_iou"] = json!(v);
        }
        ck.save(path)
    }

    pub fn recorded_val_iou(ck: &Checkpoint) -> Option<f64> {
        ck.meta.as_ref()?.get("val_iou")?.as_f64()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
