use std::collections::HashMap;

use crate::error::{contract_err, dim_err, Error, Result};

use super::kernels::{self, col2im, gemm, im2col, ConvGeom};
use super::{Grads, ParamId, ParamStore, Scalar, Tensor};

/// Variance floor of [`Graph::layer_norm`].
pub const LN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    SumAll(Var),
    MeanAll(Var),
    Softmax(Var),
    CausalSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, indices: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    BceLogits { logits: Var, targets: Vec<T> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<T> },
    Upsample2x(Var),
    Bilinear { plane: Var, taps: Vec<[(usize, T); 4]> },
    ScatterMean { features: Var, cells: Vec<usize>, counts: Vec<usize> },
    StraightThrough(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    param: Option<ParamId>,
}

/// A tape of tensor operations recorded during one forward pass.
///
/// Nodes are appended in execution order, so reverse insertion order is a
/// valid reverse topological order for [`Graph::backward`].
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    backward_visits: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn finite<T: Scalar>(op: &'static str, pass: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { op, pass })
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            backward_visits: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        finite(name, "forward", value.data())?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that accumulates a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Brings a stored parameter into the graph. Repeated calls return the
    /// same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    /// A gradient-free copy of `x` (the stop-gradient operator).
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Number of non-leaf nodes whose backward rule ran in the last call to
    /// [`Graph::backward`].
    pub fn backward_visits(&self) -> usize {
        self.backward_visits
    }

    /// Gradients of every parameter that entered this graph.
    pub fn param_grads(&self, num_params: usize) -> Grads<T> {
        let mut grads = Grads::new(num_params);
        for n in &self.nodes {
            if let (Some(id), Some(g)) = (n.param, &n.grad) {
                grads.set(id, g.clone());
            }
        }
        grads
    }

    // ----- elementwise ------------------------------------------------------

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&p| f(p)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |p, q| p + q);
        self.push_checked("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |p, q| p - q);
        self.push_checked("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |p, q| p * q);
        self.push_checked("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.map(a, |p| p * s);
        self.push_checked("scale", v, Op::Scale(a, s), &[a])
    }

    /// Adds `bias` (length = last dimension of `x`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [d] {
            return dim_err(format!(
                "add_bias: bias {:?} does not match trailing dim {d}",
                self.shape(bias)
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o = *o + bv;
            }
        }
        self.push_checked("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.map(x, |p| p.max(T::zero()));
        self.push_checked("relu", v, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.map(x, sigmoid);
        self.push_checked("sigmoid", v, Op::Sigmoid(x), &[x])
    }

    // ----- shape ------------------------------------------------------------

    fn matrix_dims(&self, op: &str, x: Var) -> Result<(usize, usize)> {
        match *self.shape(x) {
            [r, c] => Ok((r, c)),
            ref s => dim_err(format!("{op}: expected a matrix, got shape {s:?}")),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return dim_err(format!("matmul: inner dimensions {k} and {k2} differ"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        let v = Tensor::new(vec![m, n], out)?;
        self.push_checked("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", x)?;
        let v = Tensor::new(vec![c, r], kernels::transpose(self.value(x).data(), r, c))?;
        self.push_checked("transpose", v, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push_checked("reshape", v, Op::Reshape(x), &[x])
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return contract_err("concat of zero tensors");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return dim_err(format!("concat: axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
            {
                return dim_err(format!("concat: shape {s:?} incompatible with {base:?}"));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let w = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * w..(o + 1) * w]);
            }
        }
        let v = Tensor::new(shape, out)?;
        self.push_checked("concat", v, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    /// The slice `start..start + len` of `x` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return dim_err(format!("narrow: {start}..{} out of range on axis {axis} of {s:?}", start + len));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        let v = Tensor::new(shape, out)?;
        self.push_checked("narrow", v, Op::Narrow { x, axis, start }, &[x])
    }

    // ----- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push_checked("sum", v, Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_f64(self.value(x).numel().max(1) as f64);
        let v = Tensor::scalar(self.value(x).sum() / n);
        self.push_checked("mean", v, Op::MeanAll(x), &[x])
    }

    // ----- normalization ----------------------------------------------------

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            softmax_row(row);
        }
        self.push_checked("softmax", out, Op::Softmax(x), &[x])
    }

    /// Row softmax of a square score matrix with entries above the diagonal
    /// masked out (they come out exactly zero).
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("causal_softmax", x)?;
        if r != c {
            return dim_err(format!("causal_softmax: expected square scores, got {r}x{c}"));
        }
        let mut out = self.value(x).clone();
        for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
            softmax_row(&mut row[..=i]);
            row[i + 1..].iter_mut().for_each(|v| *v = T::zero());
        }
        self.push_checked("causal_softmax", out, Op::CausalSoftmax(x), &[x])
    }

    /// Layer normalization over the last dimension with a learned affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return dim_err("layer_norm: gain/bias must match the last dimension");
        }
        let eps = T::from_f64(LN_EPS);
        let dn = T::from_f64(d as f64);
        let src = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.numel() / d.max(1);
        let mut xhat = vec![T::zero(); src.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.numel()];
        for r in 0..rows {
            let row = &src.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let v = Tensor::new(src.shape().to_vec(), out)?;
        self.push_checked("layer_norm", v, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    // ----- lookups and losses -----------------------------------------------

    /// Rows of `table` (V×D) selected by `indices`, giving `len(indices)×D`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, d) = self.matrix_dims("embedding", table)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return contract_err(format!("embedding: index {bad} out of range for {v} rows"));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let val = Tensor::new(vec![indices.len(), d], out)?;
        self.push_checked(
            "embedding",
            val,
            Op::Embedding { table, indices: indices.to_vec() },
            &[table],
        )
    }

    /// Mean softmax cross-entropy of `logits` (n×K) against class `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = self.matrix_dims("cross_entropy", logits)?;
        if targets.len() != n {
            return dim_err(format!("cross_entropy: {} targets for {n} rows", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return contract_err(format!("cross_entropy: target {bad} out of range for {k} classes"));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (r, row) in probs.chunks_mut(k).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total = total + lse - row[targets[r]];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let v = Tensor::scalar(total / T::from_f64(n.max(1) as f64));
        self.push_checked(
            "cross_entropy",
            v,
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            &[logits],
        )
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`,
    /// evaluated as `max(x,0) - x·y + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let x = self.value(logits).data();
        if x.len() != targets.len() {
            return dim_err(format!(
                "bce_with_logits: {} targets for {} logits",
                targets.len(),
                x.len()
            ));
        }
        let total: T = x
            .iter()
            .zip(targets)
            .map(|(&l, &y)| l.max(T::zero()) - l * y + (-l.abs()).exp().ln_1p())
            .sum();
        let v = Tensor::scalar(total / T::from_f64(x.len().max(1) as f64));
        self.push_checked(
            "bce_with_logits",
            v,
            Op::BceLogits { logits, targets: targets.to_vec() },
            &[logits],
        )
    }

    // ----- spatial ----------------------------------------------------------

    /// Cross-correlation of a `c_in×h×w` image with `c_out×c_in×k×k` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, h, wd) = match *self.shape(x) {
            [c, h, w] => (c, h, w),
            ref s => return dim_err(format!("conv2d: input must be c×h×w, got {s:?}")),
        };
        let (c_out, k) = match *self.shape(w) {
            [o, i, k1, k2] if i == c_in && k1 == k2 => (o, k1),
            ref s => {
                return dim_err(format!("conv2d: weight {s:?} does not fit input channels {c_in}"))
            }
        };
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return dim_err("conv2d: bias length must equal output channels");
            }
        }
        let Some(geom) = ConvGeom::new(c_in, h, wd, k, stride, pad) else {
            return dim_err(format!("conv2d: kernel {k} stride {stride} pad {pad} does not fit {h}x{wd}"));
        };
        let cols = im2col(self.value(x).data(), &geom);
        let hw = geom.out_len();
        let mut out = vec![T::zero(); c_out * hw];
        gemm(c_out, geom.patch_len(), hw, self.value(w).data(), &cols, &mut out, false);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (o, row) in out.chunks_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v = *v + bias[o]);
            }
        }
        let v = Tensor::new(vec![c_out, geom.h_out, geom.w_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push_checked("conv2d", v, Op::Conv2d { x, w, b, geom, cols }, &inputs)
    }

    /// Nearest-neighbour ×2 upsampling of a `c×h×w` image.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = match *self.shape(x) {
            [c, h, w] => (c, h, w),
            ref s => return dim_err(format!("upsample2x: expected c×h×w, got {s:?}")),
        };
        let src = self.value(x).data();
        let mut out = vec![T::zero(); c * 4 * h * w];
        for ch in 0..c {
            for i in 0..2 * h {
                for j in 0..2 * w {
                    out[(ch * 2 * h + i) * 2 * w + j] = src[(ch * h + i / 2) * w + j / 2];
                }
            }
        }
        let v = Tensor::new(vec![c, 2 * h, 2 * w], out)?;
        self.push_checked("upsample2x", v, Op::Upsample2x(x), &[x])
    }

    /// Bilinearly interpolates a `c×r×r` plane at `uv` points in `[0,1]²`.
    ///
    /// Cell `(i, j)` has its center at `((i+0.5)/r, (j+0.5)/r)`; `uv[0]`
    /// indexes the first spatial axis. Coordinates outside the unit square are
    /// clamped. Returns `q×c`; gradients flow to the plane only.
    pub fn bilinear_sample(&mut self, plane: Var, uv: &[[T; 2]]) -> Result<Var> {
        let (c, r) = match *self.shape(plane) {
            [c, r1, r2] if r1 == r2 && r1 > 0 => (c, r1),
            ref s => return dim_err(format!("bilinear_sample: plane must be c×r×r, got {s:?}")),
        };
        let rr = r * r;
        let taps: Vec<[(usize, T); 4]> = uv.iter().map(|p| bilinear_taps(p, r)).collect();
        // channel-last copy so each tap reads a contiguous feature vector
        let hwc = kernels::transpose(self.value(plane).data(), c, rr);
        let mut out = vec![T::zero(); uv.len() * c];
        for (q, tap) in taps.iter().enumerate() {
            let dst = &mut out[q * c..(q + 1) * c];
            for &(cell, wgt) in tap {
                if wgt == T::zero() {
                    continue;
                }
                let src = &hwc[cell * c..(cell + 1) * c];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o = *o + wgt * s;
                }
            }
        }
        let v = Tensor::new(vec![uv.len(), c], out)?;
        self.push_checked("bilinear_sample", v, Op::Bilinear { plane, taps }, &[plane])
    }

    /// Averages per-point `features` (n×c) into the cells of an r×r grid,
    /// producing `c×r×r`. Empty cells are zero.
    pub fn scatter_mean(&mut self, features: Var, cell_ids: &[usize], r: usize) -> Result<Var> {
        let (n, c) = self.matrix_dims("scatter_mean", features)?;
        if cell_ids.len() != n {
            return dim_err(format!("scatter_mean: {} cell ids for {n} features", cell_ids.len()));
        }
        let rr = r * r;
        if let Some(&bad) = cell_ids.iter().find(|&&id| id >= rr) {
            return contract_err(format!("scatter_mean: cell {bad} outside {r}x{r} grid"));
        }
        let mut counts = vec![0usize; rr];
        let mut acc = vec![T::zero(); rr * c];
        let f = self.value(features).data();
        // summing each cell in an order fixed by the feature values makes the
        // result bitwise invariant to the order of the points
        let row = |p: usize| &f[p * c..(p + 1) * c];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            cell_ids[a].cmp(&cell_ids[b]).then_with(|| {
                row(a)
                    .iter()
                    .zip(row(b))
                    .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        for p in order {
            let cell = cell_ids[p];
            counts[cell] += 1;
            let dst = &mut acc[cell * c..(cell + 1) * c];
            for (o, &s) in dst.iter_mut().zip(&f[p * c..(p + 1) * c]) {
                *o = *o + s;
            }
        }
        for (cell, &cnt) in counts.iter().enumerate() {
            if cnt > 1 {
                let inv = T::one() / T::from_f64(cnt as f64);
                acc[cell * c..(cell + 1) * c].iter_mut().for_each(|v| *v = *v * inv);
            }
        }
        let v = Tensor::new(vec![c, r, r], kernels::transpose(&acc, rr, c))?;
        self.push_checked(
            "scatter_mean",
            v,
            Op::ScatterMean { features, cells: cell_ids.to_vec(), counts },
            &[features],
        )
    }

    /// Forwards the value of `quantized` while routing the whole incoming
    /// gradient to `continuous` unchanged.
    pub fn straight_through(&mut self, continuous: Var, quantized: Var) -> Result<Var> {
        self.same_shape("straight_through", continuous, quantized)?;
        let v = self.value(quantized).clone();
        self.push_checked("straight_through", v, Op::StraightThrough(continuous), &[continuous])
    }

    // ----- backward ---------------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Leaf gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return contract_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        self.backward_visits = 0;
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                }
                continue;
            }
            self.backward_visits += 1;
            self.backward_node(i, &g, &mut grads)?;
        }
        Ok(())
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn add_into(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        if let Some(dst) = self.acc(grads, v) {
            dst.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b);
        }
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let name = match &node.op {
            Op::Leaf => return Ok(()),
            Op::Add(a, b) => {
                self.add_into(grads, *a, g);
                self.add_into(grads, *b, g);
                "add"
            }
            Op::Sub(a, b) => {
                self.add_into(grads, *a, g);
                if let Some(dst) = self.acc(grads, *b) {
                    dst.iter_mut().zip(g).for_each(|(d, &v)| *d = *d - v);
                }
                "sub"
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(dst) = self.acc(grads, *a) {
                    for ((d, &gv), &y) in dst.iter_mut().zip(g).zip(bv) {
                        *d = *d + gv * y;
                    }
                }
                if let Some(dst) = self.acc(grads, *b) {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(av) {
                        *d = *d + gv * x;
                    }
                }
                "mul"
            }
            Op::Scale(a, s) => {
                if let Some(dst) = self.acc(grads, *a) {
                    dst.iter_mut().zip(g).for_each(|(d, &v)| *d = *d + v * *s);
                }
                "scale"
            }
            Op::AddBias(x, b) => {
                self.add_into(grads, *x, g);
                if let Some(dst) = self.acc(grads, *b) {
                    let d = dst.len();
                    for row in g.chunks(d) {
                        dst.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                    }
                }
                "add_bias"
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(dst) = self.acc(grads, *x) {
                    for ((d, &gv), &v) in dst.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
                "relu"
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(dst) = self.acc(grads, *x) {
                    for ((d, &gv), &s) in dst.iter_mut().zip(g).zip(y) {
                        *d = *d + gv * s * (T::one() - s);
                    }
                }
                "sigmoid"
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let bt = kernels::transpose(self.value(*b).data(), k, n);
                    let dst = self.acc(grads, *a).expect("requires grad");
                    gemm(m, n, k, g, &bt, dst, true);
                }
                if self.requires_grad(*b) {
                    let at = kernels::transpose(self.value(*a).data(), m, k);
                    let dst = self.acc(grads, *b).expect("requires grad");
                    gemm(k, m, n, &at, g, dst, true);
                }
                "matmul"
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gt = kernels::transpose(g, c, r);
                self.add_into(grads, *x, &gt);
                "transpose"
            }
            Op::Reshape(x) => {
                self.add_into(grads, *x, g);
                "reshape"
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let w = self.shape(v)[*axis] * inner;
                    if let Some(dst) = self.acc(grads, v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + w];
                            dst[o * w..(o + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &s)| *d = *d + s);
                        }
                    }
                    offset += w;
                }
                "concat"
            }
            Op::Narrow { x, axis, start } => {
                let s = self.shape(*x).to_vec();
                let len = node.value.shape()[*axis];
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                if let Some(dst) = self.acc(grads, *x) {
                    for o in 0..outer {
                        let base = (o * s[*axis] + start) * inner;
                        dst[base..base + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(d, &v)| *d = *d + v);
                    }
                }
                "narrow"
            }
            Op::SumAll(x) => {
                if let Some(dst) = self.acc(grads, *x) {
                    dst.iter_mut().for_each(|d| *d = *d + g[0]);
                }
                "sum"
            }
            Op::MeanAll(x) => {
                if let Some(dst) = self.acc(grads, *x) {
                    let s = g[0] / T::from_f64(dst.len().max(1) as f64);
                    dst.iter_mut().for_each(|d| *d = *d + s);
                }
                "mean"
            }
            Op::Softmax(x) | Op::CausalSoftmax(x) => {
                let d = *node.value.shape().last().unwrap_or(&1);
                let y = node.value.data();
                if let Some(dst) = self.acc(grads, *x) {
                    for ((drow, grow), yrow) in dst.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((dd, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dd = *dd + yv * (gv - dot);
                        }
                    }
                }
                "softmax"
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.shape(*gain)[0];
                let gn = self.value(*gain).data();
                let dn = T::from_f64(d as f64);
                if let Some(dst) = self.acc(grads, *gain) {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((dd, &gv), &h) in dst.iter_mut().zip(grow).zip(hrow) {
                            *dd = *dd + gv * h;
                        }
                    }
                }
                if let Some(dst) = self.acc(grads, *bias) {
                    for grow in g.chunks(d) {
                        dst.iter_mut().zip(grow).for_each(|(dd, &gv)| *dd = *dd + gv);
                    }
                }
                if let Some(dst) = self.acc(grads, *x) {
                    for (r, ((drow, grow), hrow)) in
                        dst.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate()
                    {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = grow[j] * gn[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hrow[j];
                        }
                        let (m1, m2) = (sum_dh / dn, sum_dh_h / dn);
                        for j in 0..d {
                            let dh = grow[j] * gn[j];
                            drow[j] = drow[j] + rstd[r] * (dh - m1 - hrow[j] * m2);
                        }
                    }
                }
                "layer_norm"
            }
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                if let Some(dst) = self.acc(grads, *table) {
                    for (r, &idx) in indices.iter().enumerate() {
                        dst[idx * d..(idx + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, &b)| *a = *a + b);
                    }
                }
                "embedding"
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let k = self.shape(*logits)[1];
                let s = g[0] / T::from_f64(targets.len().max(1) as f64);
                if let Some(dst) = self.acc(grads, *logits) {
                    for (r, (drow, prow)) in dst.chunks_mut(k).zip(probs.chunks(k)).enumerate() {
                        for (j, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                            let y = if j == targets[r] { T::one() } else { T::zero() };
                            *d = *d + s * (p - y);
                        }
                    }
                }
                "cross_entropy"
            }
            Op::BceLogits { logits, targets } => {
                let x = self.value(*logits).data();
                let s = g[0] / T::from_f64(targets.len().max(1) as f64);
                if let Some(dst) = self.acc(grads, *logits) {
                    for ((d, &l), &y) in dst.iter_mut().zip(x).zip(targets) {
                        *d = *d + s * (sigmoid(l) - y);
                    }
                }
                "bce_with_logits"
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let c_out = self.shape(*w)[0];
                let hw = geom.out_len();
                let pl = geom.patch_len();
                if let Some(b) = b {
                    if let Some(dst) = self.acc(grads, *b) {
                        for (o, row) in g.chunks(hw).enumerate() {
                            dst[o] = dst[o] + row.iter().copied().sum::<T>();
                        }
                    }
                }
                if self.requires_grad(*w) {
                    let cols_t = kernels::transpose(cols, pl, hw);
                    let dst = self.acc(grads, *w).expect("requires grad");
                    gemm(c_out, hw, pl, g, &cols_t, dst, true);
                }
                if self.requires_grad(*x) {
                    let wt = kernels::transpose(self.value(*w).data(), c_out, pl);
                    let mut dcols = vec![T::zero(); pl * hw];
                    gemm(pl, c_out, hw, &wt, g, &mut dcols, false);
                    let dst = self.acc(grads, *x).expect("requires grad");
                    col2im(&dcols, geom, dst);
                }
                "conv2d"
            }
            Op::Upsample2x(x) => {
                let (c, h, w) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                if let Some(dst) = self.acc(grads, *x) {
                    for ch in 0..c {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                let s = &mut dst[(ch * h + i / 2) * w + j / 2];
                                *s = *s + g[(ch * 2 * h + i) * 2 * w + j];
                            }
                        }
                    }
                }
                "upsample2x"
            }
            Op::Bilinear { plane, taps } => {
                let (c, r) = (self.shape(*plane)[0], self.shape(*plane)[1]);
                let rr = r * r;
                if self.requires_grad(*plane) {
                    let mut hwc = vec![T::zero(); rr * c];
                    for (q, tap) in taps.iter().enumerate() {
                        let src = &g[q * c..(q + 1) * c];
                        for &(cell, wgt) in tap {
                            if wgt == T::zero() {
                                continue;
                            }
                            for (d, &s) in hwc[cell * c..(cell + 1) * c].iter_mut().zip(src) {
                                *d = *d + wgt * s;
                            }
                        }
                    }
                    let chw = kernels::transpose(&hwc, rr, c);
                    self.add_into(grads, *plane, &chw);
                }
                "bilinear_sample"
            }
            Op::ScatterMean { features, cells, counts } => {
                let c = self.shape(*features)[1];
                let rr = counts.len();
                if self.requires_grad(*features) {
                    let hwc = kernels::transpose(g, c, rr);
                    let dst = self.acc(grads, *features).expect("requires grad");
                    for (p, &cell) in cells.iter().enumerate() {
                        let inv = T::one() / T::from_f64(counts[cell] as f64);
                        for (d, &s) in dst[p * c..(p + 1) * c].iter_mut().zip(&hwc[cell * c..(cell + 1) * c]) {
                            *d = *d + s * inv;
                        }
                    }
                }
                "scatter_mean"
            }
            Op::StraightThrough(zv) => {
                self.add_into(grads, *zv, g);
                "straight_through"
            }
        };
        // every input touched by this node must still be finite
        for v in self.inputs(&node.op) {
            if let Some(gv) = &grads[v.0] {
                finite(name, "backward", gv)?;
            }
        }
        Ok(())
    }

    fn inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddBias(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Softmax(a)
            | Op::CausalSoftmax(a)
            | Op::Upsample2x(a)
            | Op::StraightThrough(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Narrow { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } | Op::BceLogits { logits, .. } => vec![*logits],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(*b);
                v
            }
            Op::Bilinear { plane, .. } => vec![*plane],
            Op::ScatterMean { features, .. } => vec![*features],
        }
    }
}

/// Logistic function, stable for large |x|.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// In-place softmax of one row, shifted by its maximum.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / sum);
}

/// The four (cell, weight) taps of a bilinear lookup on an r×r grid.
pub(crate) fn bilinear_taps<T: Scalar>(uv: &[T; 2], r: usize) -> [(usize, T); 4] {
    let axis = |u: T| -> (usize, usize, T) {
        let u = if u < T::zero() || u > T::one() {
            if cfg!(debug_assertions) {
                log::debug!("bilinear_sample: coordinate {u} clamped into [0,1]");
            }
            u.max(T::zero()).min(T::one())
        } else {
            u
        };
        let f = u * T::from_f64(r as f64) - T::from_f64(0.5);
        let max = T::from_f64((r - 1) as f64);
        let f = f.max(T::zero()).min(max);
        let i0 = (f.floor().as_f64() as usize).min(r.saturating_sub(2));
        let i1 = (i0 + 1).min(r - 1);
        (i0, i1, f - T::from_f64(i0 as f64))
    };
    let (i0, i1, ti) = axis(uv[0]);
    let (j0, j1, tj) = axis(uv[1]);
    let one = T::one();
    [
        (i0 * r + j0, (one - ti) * (one - tj)),
        (i0 * r + j1, (one - ti) * tj),
        (i1 * r + j0, ti * (one - tj)),
        (i1 * r + j1, ti * tj),
    ]
}
