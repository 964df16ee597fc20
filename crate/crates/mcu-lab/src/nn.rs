//! Multilayer-perceptron classifier, flat parameter vectors, and the loss
//! functions everything else is built from.
//!
//! Losses exist in two forms: tape composites (for training, differentiable
//! to any order) and plain `f64` evaluations (for metrics). Both run the same
//! stabilized log-sum-exp math.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Graph, NodeId, Tensor};
use std::rc::Rc;
use std::sync::Arc;

/// Seed-stream tags so one experiment seed feeds independent generators.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const CORRUPT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const MOONS: u64 = 6;
    pub const BLOBS: u64 = 7;
    pub const DUMB: u64 = 8;
    pub const CURVE: u64 = 9;
    pub const RL_SUBSAMPLE: u64 = 10;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation {other:?}, expected relu or tanh"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered, contiguous map from named parameter blocks into a flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
    pub total_len: usize,
}

impl Layout {
    pub fn new(entries: Vec<LayoutEntry>) -> Self {
        let mut expect = 0usize;
        for e in &entries {
            assert_eq!(e.offset, expect, "layout offsets must be contiguous");
            expect += e.len();
        }
        Layout {
            entries,
            total_len: expect,
        }
    }
}

/// A point in parameter space: flat values plus the layout that interprets
/// them. The coordinate system for all interpolation and curve math.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f32>,
    pub layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f32>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.total_len {
            return Err(Error::dim_in(
                "param vector",
                format!("{} values", layout.total_len),
                format!("{} values", values.len()),
            ));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        ParamVector {
            values: vec![0.0; other.values.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entry_slice(&self, i: usize) -> &[f32] {
        let e = &self.layout.entries[i];
        &self.values[e.offset..e.offset + e.len()]
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    /// Euclidean distance, f64 accumulation.
    pub fn l2_distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Architecture alone: layer widths plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "all layer dims must be >= 1, got {layer_dims:?}"
            )));
        }
        Ok(MlpArch {
            layer_dims,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Weight `w{i}` is `[in, out]` row-major, bias `b{i}` is `[out]`.
    pub fn layout(&self) -> Arc<Layout> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (i, w) in self.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            entries.push(LayoutEntry {
                name: format!("w{i}"),
                shape: vec![fan_in, fan_out],
                offset,
            });
            offset += fan_in * fan_out;
            entries.push(LayoutEntry {
                name: format!("b{i}"),
                shape: vec![fan_out],
                offset,
            });
            offset += fan_out;
        }
        Arc::new(Layout::new(entries))
    }

    /// Glorot-uniform weights (`±√(6/(fan_in+fan_out))`), zero biases,
    /// drawn in layout order from the seed's init stream.
    pub fn init(&self, seed: u64) -> ParamVector {
        let layout = self.layout();
        let mut rng = SplitMix64::derive(seed, tags::INIT);
        let mut values = vec![0.0f32; layout.total_len];
        for (i, w) in self.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let entry = &layout.entries[2 * i];
            for v in &mut values[entry.offset..entry.offset + fan_in * fan_out] {
                *v = rng.uniform(-bound, bound) as f32;
            }
        }
        ParamVector { values, layout }
    }
}

/// Architecture bound to a concrete parameter vector.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub arch: MlpArch,
    pub params: ParamVector,
}

/// Tape handle for one bound forward pass: one leaf per layout entry plus
/// the logits node.
pub struct BoundMlp {
    pub param_ids: Vec<NodeId>,
    pub logits: NodeId,
}

impl MlpModel {
    pub fn new(arch: MlpArch, params: ParamVector) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::dim_in(
                "model params",
                format!("{}", arch.param_count()),
                format!("{}", params.len()),
            ));
        }
        Ok(MlpModel { arch, params })
    }

    pub fn init_seeded(arch: MlpArch, seed: u64) -> Self {
        let params = arch.init(seed);
        MlpModel { arch, params }
    }

    /// Snapshot of the parameters (bit-exact copy).
    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    /// Replace parameters from a flat vector (bit-exact).
    pub fn unflatten(&mut self, v: &ParamVector) -> Result<()> {
        if v.len() != self.arch.param_count() {
            return Err(Error::dim_in(
                "unflatten",
                format!("{}", self.arch.param_count()),
                format!("{}", v.len()),
            ));
        }
        self.params = v.clone();
        Ok(())
    }

    /// Pre-softmax logits without touching a tape. Deterministic.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        forward_logits_with(&self.arch, &self.params, x)
    }

    /// Build the forward pass on a tape. `trainable=false` freezes the
    /// parameters (teacher models), keeping backward off that subgraph.
    pub fn forward_nodes(&self, g: &mut Graph, x: NodeId, trainable: bool) -> BoundMlp {
        forward_nodes_with(&self.arch, &self.params, g, x, trainable)
    }
}

/// Plain forward pass for an arbitrary parameter point of `arch`.
pub fn forward_logits_with(arch: &MlpArch, params: &ParamVector, x: &Tensor) -> Result<Tensor> {
    if x.cols() != arch.in_dim() {
        return Err(Error::dim_in(
            "forward input",
            format!("[batch, {}]", arch.in_dim()),
            format!("{:?}", x.shape),
        ));
    }
    let n_layers = arch.layer_dims.len() - 1;
    let mut h = x.data.clone();
    let mut h_cols = x.cols();
    let rows = x.rows();
    for l in 0..n_layers {
        let (fan_in, fan_out) = (arch.layer_dims[l], arch.layer_dims[l + 1]);
        let w = params.entry_slice(2 * l);
        let b = params.entry_slice(2 * l + 1);
        let mut z = vec![0.0f32; rows * fan_out];
        for i in 0..rows {
            for j in 0..fan_out {
                let mut acc = b[j] as f64;
                for k in 0..fan_in {
                    acc += h[i * h_cols + k] as f64 * w[k * fan_out + j] as f64;
                }
                z[i * fan_out + j] = acc as f32;
            }
        }
        if l + 1 < n_layers {
            match arch.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => z.iter_mut().for_each(|v| *v = (*v as f64).tanh() as f32),
            }
        }
        h = z;
        h_cols = fan_out;
    }
    Ok(Tensor::matrix(rows, h_cols, h))
}

/// Tape forward pass for an arbitrary parameter point of `arch`.
pub fn forward_nodes_with(
    arch: &MlpArch,
    params: &ParamVector,
    g: &mut Graph,
    x: NodeId,
    trainable: bool,
) -> BoundMlp {
    let n_layers = arch.layer_dims.len() - 1;
    let mut param_ids = Vec::with_capacity(2 * n_layers);
    let mut h = x;
    for l in 0..n_layers {
        let (fan_in, fan_out) = (arch.layer_dims[l], arch.layer_dims[l + 1]);
        let w_t = Tensor::matrix(fan_in, fan_out, params.entry_slice(2 * l).to_vec());
        let b_t = Tensor::matrix(1, fan_out, params.entry_slice(2 * l + 1).to_vec());
        let (w, b) = if trainable {
            (g.param(w_t), g.param(b_t))
        } else {
            (g.constant(w_t), g.constant(b_t))
        };
        param_ids.push(w);
        param_ids.push(b);
        let z = g.matmul(h, w);
        let z = g.add_row_broadcast(z, b);
        h = if l + 1 < n_layers {
            match arch.activation {
                Activation::Relu => g.relu(z),
                Activation::Tanh => g.tanh(z),
            }
        } else {
            z
        };
    }
    BoundMlp {
        param_ids,
        logits: h,
    }
}

/// Assemble the flat gradient for a bound model after `backward`.
/// Parameters the loss does not depend on get exactly zero.
pub fn grad_param_vector(g: &Graph, bound: &BoundMlp, layout: &Arc<Layout>) -> ParamVector {
    let mut values = vec![0.0f32; layout.total_len];
    for (entry, &node) in layout.entries.iter().zip(&bound.param_ids) {
        if let Some(grad) = g.grad(node) {
            values[entry.offset..entry.offset + entry.len()].copy_from_slice(grad);
        }
    }
    ParamVector {
        values,
        layout: layout.clone(),
    }
}

fn check_labels(rows: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::dim_in(
            "labels",
            format!("{rows}"),
            format!("{}", labels.len()),
        ));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Index {
                what: format!("label[{i}]"),
                got: y,
                bound: classes,
            });
        }
    }
    Ok(())
}

/// Mean cross-entropy (nats) of the true class under row-wise softmax,
/// evaluated directly in f64.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let per = per_sample_xent(logits, labels)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Per-sample cross-entropy losses (nats), f64, log-sum-exp stabilized.
pub fn per_sample_xent(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits.rows(), logits.cols(), labels)?;
    let mut out = Vec::with_capacity(logits.rows());
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = mx
            + row
                .iter()
                .map(|&v| (v as f64 - mx).exp())
                .sum::<f64>()
                .ln();
        out.push(lse - row[y] as f64);
    }
    Ok(out)
}

/// Tape version of [`softmax_xent`]: `mean_i [lse(logits_i) - logits_{i,y_i}]`.
pub fn softmax_xent_node(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let v = g.value(logits);
    check_labels(v.rows(), v.cols(), labels)?;
    let lse = g.log_sum_exp_rows(logits);
    let picked = g.gather_cols(logits, Rc::new(labels.to_vec()));
    let per = g.sub(lse, picked);
    Ok(g.mean_all(per))
}

/// Row-wise softmax in f64.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Mean over rows of `KL(softmax(p) || softmax(q))`, nats, f64.
pub fn kl_divergence(logits_p: &Tensor, logits_q: &Tensor) -> Result<f64> {
    if logits_p.shape != logits_q.shape {
        return Err(Error::dim_in(
            "kl_divergence",
            format!("{:?}", logits_p.shape),
            format!("{:?}", logits_q.shape),
        ));
    }
    let lp = log_softmax_rows(logits_p);
    let lq = log_softmax_rows(logits_q);
    let m = logits_p.rows();
    let mut acc = 0.0f64;
    for i in 0..m {
        for j in 0..logits_p.cols() {
            acc += lp[i][j].exp() * (lp[i][j] - lq[i][j]);
        }
    }
    Ok(acc / m as f64)
}

fn log_softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = mx
                + row
                    .iter()
                    .map(|&v| (v as f64 - mx).exp())
                    .sum::<f64>()
                    .ln();
            row.iter().map(|&v| v as f64 - lse).collect()
        })
        .collect()
}

/// Tape version of [`kl_divergence`]; gradients flow through both sides
/// unless one was built on frozen leaves.
pub fn kl_divergence_node(g: &mut Graph, logits_p: NodeId, logits_q: NodeId) -> Result<NodeId> {
    if g.value(logits_p).shape != g.value(logits_q).shape {
        return Err(Error::dim_in(
            "kl_divergence",
            format!("{:?}", g.value(logits_p).shape),
            format!("{:?}", g.value(logits_q).shape),
        ));
    }
    let lsp = log_softmax_node(g, logits_p);
    let lsq = log_softmax_node(g, logits_q);
    let p = g.exp(lsp);
    let diff = g.sub(lsp, lsq);
    let prod = g.mul(p, diff);
    let rows = g.sum_rows(prod);
    Ok(g.mean_all(rows))
}

pub fn log_softmax_node(g: &mut Graph, logits: NodeId) -> NodeId {
    let lse = g.log_sum_exp_rows(logits);
    g.sub_col_broadcast(logits, lse)
}

/// `[m,1]` node of log-probabilities of the true class.
pub fn true_class_logprob_node(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let v = g.value(logits);
    check_labels(v.rows(), v.cols(), labels)?;
    let lsm = log_softmax_node(g, logits);
    Ok(g.gather_cols(lsm, Rc::new(labels.to_vec())))
}

/// Fraction of rows whose argmax equals the label; ties to the lowest index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(logits.rows(), logits.cols(), labels)?;
    if logits.rows() == 0 {
        return Err(Error::Config("accuracy on empty batch".into()));
    }
    let mut hits = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}
