//! Self-supervised graph attention network.
//!
//! Each head scores a pair by scaled dot product, `e_uv = (W f_u)·(W f_v) / √d`,
//! and normalises the scores over `N(u) ∪ {u}`. The same score is used as the
//! logit of an edge-presence classifier: true edges should score high, sampled
//! in-event non-edges low. The node classifier and the edge classifier share
//! every parameter, so the auxiliary loss shapes attention directly.
//!
//! Two layers: a hidden layer with concatenated heads and a leaky rectifier,
//! and an output layer whose heads are averaged into two class logits.
//! Forward and backward passes are written out by hand.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Fold, Label, Role};
use crate::encoder::EmbeddingTable;
use crate::eval::{precision_recall_f1, Metrics};
use crate::graph::SentenceGraph;
use crate::linalg::{self, Mat};
use crate::{seed, Error, Result};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) if x < 0.0 => s * x,
            _ => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) if pre < 0.0 => s,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    /// One `in_dim × head_dim` projection per head.
    pub weights: Vec<Mat>,
    /// Added after head aggregation; length [`GatLayer::out_dim`].
    pub bias: Vec<f64>,
    /// Concatenate heads (hidden layer) or average them (output layer).
    pub concat: bool,
    pub activation: Activation,
}

impl GatLayer {
    pub fn init<R: Rng>(
        in_dim: usize,
        heads: usize,
        head_dim: usize,
        concat: bool,
        activation: Activation,
        rng: &mut R,
    ) -> GatLayer {
        let weights = (0..heads).map(|_| Mat::glorot(in_dim, head_dim, rng)).collect();
        let out = if concat { heads * head_dim } else { head_dim };
        GatLayer {
            weights,
            bias: vec![0.0; out],
            concat,
            activation,
        }
    }

    pub fn heads(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].rows
    }

    pub fn head_dim(&self) -> usize {
        self.weights[0].cols
    }

    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.heads() * self.head_dim()
        } else {
            self.head_dim()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Dimension("GAT layer has no heads".into()));
        }
        let (r, c) = (self.in_dim(), self.head_dim());
        if self.weights.iter().any(|w| w.rows != r || w.cols != c) || self.bias.len() != self.out_dim() {
            return Err(Error::Dimension("inconsistent GAT layer shapes".into()));
        }
        Ok(())
    }
}

/// Closed neighbourhoods `{u} ∪ N(u)` in CSR form; `u` itself comes first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    nodes: Vec<usize>,
}

impl Neighborhoods {
    pub fn new(graph: &SentenceGraph) -> Neighborhoods {
        let mut offsets = Vec::with_capacity(graph.num_nodes() + 1);
        let mut nodes = Vec::new();
        offsets.push(0);
        for u in 0..graph.num_nodes() {
            nodes.push(u);
            nodes.extend(graph.neighbors(u).iter().map(|&(v, _)| v));
            offsets.push(nodes.len());
        }
        Neighborhoods { offsets, nodes }
    }

    pub fn range(&self, u: usize) -> core::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    pub fn of(&self, u: usize) -> &[usize] {
        &self.nodes[self.range(u)]
    }

    pub fn num_entries(&self) -> usize {
        self.nodes.len()
    }
}

/// Result of one layer's forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub output: Mat,
    /// Per head, aligned with [`Neighborhoods`] entries.
    pub scores: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub neighborhoods: Neighborhoods,
}

impl LayerOutput {
    /// `(v, α_uv)` over the closed neighbourhood of `u` for one head.
    pub fn attention(&self, head: usize, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.neighborhoods.range(u);
        self.neighborhoods.nodes[r.clone()]
            .iter()
            .copied()
            .zip(self.alpha[head][r].iter().copied())
    }
}

struct LayerCache {
    x: Mat,
    z: Vec<Mat>,
    alpha: Vec<Vec<f64>>,
    /// Attention dropout multipliers, when training.
    attn_mask: Option<Vec<Vec<f64>>>,
    pre: Mat,
    scores: Vec<Vec<f64>>,
}

fn layer_forward(
    layer: &GatLayer,
    hood: &Neighborhoods,
    x: Mat,
    attn_mask: Option<Vec<Vec<f64>>>,
) -> Result<(Mat, LayerCache)> {
    layer.validate()?;
    if x.cols != layer.in_dim() {
        return Err(Error::Dimension(format!(
            "layer expects {} input features, got {}",
            layer.in_dim(),
            x.cols
        )));
    }
    let n = x.rows;
    if hood.offsets.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "feature matrix has {n} rows but the graph has {} nodes",
            hood.offsets.len() - 1
        )));
    }
    let heads = layer.heads();
    let d = layer.head_dim();
    let inv_sqrt_d = 1.0 / linalg::sqrt(d as f64);
    let mut pre = Mat::zeros(n, layer.out_dim());
    let mut zs = Vec::with_capacity(heads);
    let mut alphas = Vec::with_capacity(heads);
    let mut all_scores = Vec::with_capacity(heads);
    let mean_scale = 1.0 / heads as f64;

    for (h, w) in layer.weights.iter().enumerate() {
        let z = x.matmul(w);
        let mut scores = vec![0.0; hood.num_entries()];
        let mut alpha = vec![0.0; hood.num_entries()];
        for u in 0..n {
            let r = hood.range(u);
            let zu = z.row(u);
            for k in r.clone() {
                scores[k] = linalg::dot(zu, z.row(hood.nodes[k])) * inv_sqrt_d;
            }
            alpha[r.clone()].copy_from_slice(&scores[r.clone()]);
            linalg::softmax_in_place(&mut alpha[r.clone()]);

            let (dst, scale) = if layer.concat {
                (&mut pre.row_mut(u)[h * d..(h + 1) * d], 1.0)
            } else {
                (pre.row_mut(u), mean_scale)
            };
            for k in r {
                let mut a = alpha[k];
                if let Some(m) = &attn_mask {
                    a *= m[h][k];
                }
                if a != 0.0 {
                    linalg::axpy(a * scale, z.row(hood.nodes[k]), dst);
                }
            }
        }
        zs.push(z);
        alphas.push(alpha);
        all_scores.push(scores);
    }

    let mut out = pre.clone();
    for u in 0..n {
        for (j, (o, b)) in out.row_mut(u).iter_mut().zip(&layer.bias).enumerate() {
            let p = pre.data[u * layer.out_dim() + j] + b;
            pre.data[u * layer.out_dim() + j] = p;
            *o = layer.activation.apply(p);
        }
    }
    let cache = LayerCache {
        x,
        z: zs,
        alpha: alphas,
        attn_mask,
        pre,
        scores: all_scores,
    };
    Ok((out, cache))
}

/// Gradients of one layer plus the gradient w.r.t. its input, given the
/// gradient w.r.t. its output and any extra gradient on the per-head
/// projections `Z` (from the edge loss).
fn layer_backward(
    layer: &GatLayer,
    hood: &Neighborhoods,
    cache: &LayerCache,
    d_out: &Mat,
    d_z_extra: Option<Vec<Mat>>,
    need_input_grad: bool,
) -> (GatLayer, Mat) {
    let n = d_out.rows;
    let heads = layer.heads();
    let d = layer.head_dim();
    let inv_sqrt_d = 1.0 / linalg::sqrt(d as f64);
    let mut d_pre = d_out.clone();
    for (g, &p) in d_pre.data.iter_mut().zip(&cache.pre.data) {
        *g *= layer.activation.derivative(p);
    }
    let mut d_bias = vec![0.0; layer.out_dim()];
    for u in 0..n {
        linalg::axpy(1.0, d_pre.row(u), &mut d_bias);
    }

    let mut d_x = if need_input_grad {
        Mat::zeros(n, layer.in_dim())
    } else {
        Mat::zeros(0, 0)
    };
    let mut d_weights = Vec::with_capacity(heads);
    let mut extra = d_z_extra.map(Vec::into_iter);
    let mean_scale = 1.0 / heads as f64;
    let mut d_alpha = Vec::new();
    for h in 0..heads {
        let z = &cache.z[h];
        let alpha = &cache.alpha[h];
        let mut d_z = match extra.as_mut().and_then(Iterator::next) {
            Some(m) => m,
            None => Mat::zeros(n, d),
        };
        for u in 0..n {
            let (d_agg, scale) = if layer.concat {
                (&d_pre.row(u)[h * d..(h + 1) * d], 1.0)
            } else {
                (d_pre.row(u), mean_scale)
            };
            let r = hood.range(u);
            d_alpha.clear();
            for k in r.clone() {
                let v = hood.nodes[k];
                let m = cache.attn_mask.as_ref().map_or(1.0, |m| m[h][k]);
                d_alpha.push(scale * linalg::dot(d_agg, z.row(v)) * m);
                let a = alpha[k] * m;
                if a != 0.0 {
                    linalg::axpy(scale * a, d_agg, d_z.row_mut(v));
                }
            }
            let weighted: f64 = r.clone().zip(&d_alpha).map(|(k, g)| alpha[k] * g).sum();
            for (i, k) in r.enumerate() {
                let de = alpha[k] * (d_alpha[i] - weighted) * inv_sqrt_d;
                if de == 0.0 {
                    continue;
                }
                let v = hood.nodes[k];
                // for v == u this adds 2·de·z_u, the derivative of z_u·z_u
                linalg::axpy(de, z.row(v), d_z.row_mut(u));
                linalg::axpy(de, z.row(u), d_z.row_mut(v));
            }
        }
        d_weights.push(cache.x.t_matmul(&d_z));
        if need_input_grad {
            let dx_h = d_z.matmul_t(&layer.weights[h]);
            linalg::axpy(1.0, &dx_h.data, &mut d_x.data);
        }
    }
    let grads = GatLayer {
        weights: d_weights,
        bias: d_bias,
        concat: layer.concat,
        activation: layer.activation,
    };
    (grads, d_x)
}

/// Single-layer forward pass in inference mode.
pub fn gat_layer_forward(layer: &GatLayer, graph: &SentenceGraph, features: &Mat) -> Result<LayerOutput> {
    let hood = Neighborhoods::new(graph);
    let (output, cache) = layer_forward(layer, &hood, features.clone(), None)?;
    Ok(LayerOutput {
        output,
        scores: cache.scores,
        alpha: cache.alpha,
        neighborhoods: hood,
    })
}

/// Mean binary cross-entropy of `sigmoid(score)` with target 1 on every
/// graph edge and 0 on every negative pair. `score(u, v)` gives the logit.
///
/// Negatives must be distinct, non-adjacent nodes of the same event.
pub fn edge_self_supervision_loss<F>(score: F, graph: &SentenceGraph, negatives: &[(usize, usize)]) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    validate_negatives(graph, negatives)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (u, v, _) in graph.edges() {
        total += linalg::softplus(-score(u, v));
        count += 1;
    }
    for &(u, v) in negatives {
        total += linalg::softplus(score(u, v));
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

pub fn validate_negatives(graph: &SentenceGraph, negatives: &[(usize, usize)]) -> Result<()> {
    for &(u, v) in negatives {
        if u >= graph.num_nodes() || v >= graph.num_nodes() {
            return Err(Error::Argument(format!("negative pair ({u}, {v}) is out of range")));
        }
        if u == v {
            return Err(Error::Argument(format!("negative pair ({u}, {u}) is a self pair")));
        }
        if graph.node_event(u) != graph.node_event(v) {
            return Err(Error::Argument(format!(
                "negative pair ({}, {}) spans events {} and {}",
                graph.node_id(u),
                graph.node_id(v),
                graph.node_event(u),
                graph.node_event(v)
            )));
        }
        if graph.edge_types(u, v).is_some() {
            return Err(Error::Argument(format!(
                "negative pair ({}, {}) is an edge",
                graph.node_id(u),
                graph.node_id(v)
            )));
        }
    }
    Ok(())
}

/// Uniformly samples up to `count` in-event non-adjacent pairs.
pub fn sample_negatives<R: Rng>(graph: &SentenceGraph, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut by_event: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for u in 0..graph.num_nodes() {
        by_event.entry(graph.node_event(u)).or_default().push(u);
    }
    let candidates: Vec<usize> = (0..graph.num_nodes())
        .filter(|&u| by_event[&graph.node_event(u)].len() > 1)
        .collect();
    let mut out = Vec::with_capacity(count);
    if candidates.is_empty() {
        return out;
    }
    let mut attempts = 0;
    while out.len() < count && attempts < count * 20 {
        attempts += 1;
        let u = candidates[rng.gen_range(0..candidates.len())];
        let peers = &by_event[&graph.node_event(u)];
        let v = peers[rng.gen_range(0..peers.len())];
        if v == u || graph.edge_types(u, v).is_some() {
            continue;
        }
        out.push((u.min(v), u.max(v)));
    }
    out
}

fn edge_loss_and_grad(
    z: &[Mat],
    graph: &SentenceGraph,
    negatives: &[(usize, usize)],
    weight: f64,
) -> (f64, Vec<Mat>) {
    let heads = z.len();
    let d = z[0].cols;
    let inv_sqrt_d = 1.0 / linalg::sqrt(d as f64);
    let pairs: Vec<(usize, usize, f64)> = graph
        .edges()
        .map(|(u, v, _)| (u, v, 1.0))
        .chain(negatives.iter().map(|&(u, v)| (u, v, 0.0)))
        .collect();
    let mut grads: Vec<Mat> = z.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect();
    if pairs.is_empty() {
        return (0.0, grads);
    }
    let norm = 1.0 / (heads * pairs.len()) as f64;
    let mut loss = 0.0;
    for (h, zh) in z.iter().enumerate() {
        for &(u, v, y) in &pairs {
            let s = linalg::dot(zh.row(u), zh.row(v)) * inv_sqrt_d;
            loss += if y > 0.5 { linalg::softplus(-s) } else { linalg::softplus(s) };
            let g = weight * norm * (linalg::sigmoid(s) - y) * inv_sqrt_d;
            linalg::axpy(g, zh.row(v), grads[h].row_mut(u));
            linalg::axpy(g, zh.row(u), grads[h].row_mut(v));
        }
    }
    (loss * norm, grads)
}

/// How node cross-entropy terms are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassWeight {
    Uniform,
    /// `n_train / (2 · n_class)` from the train mask.
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsgatConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub negative_slope: f64,
    /// Weight of the edge-presence loss.
    pub lambda_edge: f64,
    /// Negatives sampled per true edge, per epoch.
    pub negative_edge_ratio: f64,
    /// Dropout on layer inputs and on attention coefficients.
    pub dropout: f64,
    pub class_weight: ClassWeight,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for SsgatConfig {
    fn default() -> Self {
        SsgatConfig {
            heads: 4,
            head_dim: 32,
            negative_slope: 0.2,
            lambda_edge: 1.0,
            negative_edge_ratio: 1.0,
            dropout: 0.3,
            class_weight: ClassWeight::InverseFrequency,
            learning_rate: 0.005,
            weight_decay: 5e-4,
            epochs: 300,
            patience: 30,
            seed: 0,
        }
    }
}

impl SsgatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Argument("heads and head_dim must be positive".into()));
        }
        if !(self.lambda_edge >= 0.0) || !(self.negative_edge_ratio > 0.0) {
            return Err(Error::Argument(
                "lambda_edge must be >= 0 and negative_edge_ratio > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument("dropout must be in [0, 1)".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Argument("learning_rate and weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsgatParams {
    pub layers: Vec<GatLayer>,
}

impl SsgatParams {
    /// Hidden layer (concatenated heads, leaky rectifier) followed by an
    /// output layer averaging heads into class logits.
    pub fn init(in_dim: usize, config: &SsgatConfig) -> SsgatParams {
        let mut rng = seed::rng(config.seed);
        let hidden = GatLayer::init(
            in_dim,
            config.heads,
            config.head_dim,
            true,
            Activation::LeakyRelu(config.negative_slope),
            &mut rng,
        );
        let output = GatLayer::init(
            hidden.out_dim(),
            config.heads,
            NUM_CLASSES,
            false,
            Activation::Identity,
            &mut rng,
        );
        SsgatParams {
            layers: vec![hidden, output],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().map(|w| w.data.as_slice()));
            out.push(&l.bias);
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.extend(l.weights.iter_mut().map(|w| w.data.as_mut_slice()));
            out.push(&mut l.bias);
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("model has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if i > 0 && l.in_dim() != self.layers[i - 1].out_dim() {
                return Err(Error::Dimension(format!("layer {i} input does not match layer {}", i - 1)));
            }
        }
        if self.layers.last().map(GatLayer::out_dim) != Some(NUM_CLASSES) {
            return Err(Error::Dimension("output layer must produce two class logits".into()));
        }
        if !self.slices().iter().all(|s| s.iter().all(|x| x.is_finite())) {
            return Err(Error::Validation("non-finite GAT parameter".into()));
        }
        Ok(())
    }
}

/// Disjoint train/val/test node masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl NodeMasks {
    /// Masks aligned with the fold's event sets.
    pub fn from_fold(graph: &SentenceGraph, fold: &Fold) -> NodeMasks {
        let n = graph.num_nodes();
        let mut m = NodeMasks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        };
        for u in 0..n {
            match fold.role(graph.node_event(u)) {
                Some(Role::Train) => m.train[u] = true,
                Some(Role::Val) => m.val[u] = true,
                Some(Role::Test) => m.test[u] = true,
                None => {}
            }
        }
        m
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(Error::Dimension("mask length differs from node count".into()));
        }
        if (0..n).any(|u| u8::from(self.train[u]) + u8::from(self.val[u]) + u8::from(self.test[u]) > 1) {
            return Err(Error::Validation("node masks overlap".into()));
        }
        Ok(())
    }
}

/// Node features in graph order.
pub fn node_features(graph: &SentenceGraph, table: &EmbeddingTable) -> Result<Mat> {
    table.gather(graph.node_ids().iter().copied())
}

struct Forward {
    caches: Vec<LayerCache>,
    logits: Mat,
    probs: Mat,
}

fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn model_forward(
    params: &SsgatParams,
    hood: &Neighborhoods,
    x: &Mat,
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<Forward> {
    let mut input = x.clone();
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let mut attn_mask = None;
        if let Some((rate, rng)) = dropout.as_mut() {
            if *rate > 0.0 {
                let m = dropout_mask(input.data.len(), *rate, *rng);
                for (v, k) in input.data.iter_mut().zip(m) {
                    *v *= k;
                }
                attn_mask = Some(
                    (0..layer.heads())
                        .map(|_| dropout_mask(hood.num_entries(), *rate, *rng))
                        .collect(),
                );
            }
        }
        let (out, cache) = layer_forward(layer, hood, input, attn_mask)?;
        caches.push(cache);
        input = out;
    }
    let logits = input;
    let mut probs = logits.clone();
    for u in 0..probs.rows {
        linalg::softmax_in_place(probs.row_mut(u));
    }
    Ok(Forward { caches, logits, probs })
}

fn class_weights(labels: &[Label], mask: &[bool], mode: ClassWeight) -> [f64; 2] {
    match mode {
        ClassWeight::Uniform => [1.0, 1.0],
        ClassWeight::InverseFrequency => {
            let mut counts = [0usize; 2];
            for (l, &m) in labels.iter().zip(mask) {
                if m {
                    counts[l.as_int() as usize] += 1;
                }
            }
            let total = (counts[0] + counts[1]) as f64;
            let w = |c: usize| if counts[c] == 0 { 0.0 } else { total / (2.0 * counts[c] as f64) };
            [w(0), w(1)]
        }
    }
}

/// Weighted mean cross-entropy over masked nodes and its logit gradient.
fn node_loss(probs: &Mat, labels: &[Label], mask: &[bool], weights: [f64; 2]) -> (f64, Mat) {
    let mut grad = Mat::zeros(probs.rows, probs.cols);
    let total_w: f64 = labels
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| weights[l.as_int() as usize])
        .sum();
    if total_w == 0.0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for u in 0..probs.rows {
        if !mask[u] {
            continue;
        }
        let y = labels[u].as_int() as usize;
        let w = weights[y] / total_w;
        loss -= w * linalg::ln(probs.get(u, y).max(f64::MIN_POSITIVE));
        for c in 0..probs.cols {
            let target = if c == y { 1.0 } else { 0.0 };
            grad.data[u * probs.cols + c] = w * (probs.get(u, c) - target);
        }
    }
    (loss, grad)
}

/// Loss components of one evaluation of the training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub node: f64,
    pub edge: f64,
}

fn loss_and_grad_inner(
    params: &SsgatParams,
    graph: &SentenceGraph,
    hood: &Neighborhoods,
    x: &Mat,
    labels: &[Label],
    train_mask: &[bool],
    negatives: &[(usize, usize)],
    lambda_edge: f64,
    weights: [f64; 2],
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(LossParts, SsgatParams)> {
    let fwd = model_forward(params, hood, x, dropout)?;
    let (node, mut d_out) = node_loss(&fwd.probs, labels, train_mask, weights);
    let layers = params.layers.len();
    let mut edge = 0.0;
    let mut grads = Vec::with_capacity(layers);
    for (i, layer) in params.layers.iter().enumerate().rev() {
        let cache = &fwd.caches[i];
        let extra = if lambda_edge > 0.0 {
            let (l, g) = edge_loss_and_grad(&cache.z, graph, negatives, lambda_edge / layers as f64);
            edge += l / layers as f64;
            Some(g)
        } else {
            None
        };
        let (g, d_x) = layer_backward(layer, hood, cache, &d_out, extra, i > 0);
        grads.push(g);
        d_out = d_x;
    }
    grads.reverse();
    let _ = &fwd.logits;
    Ok((
        LossParts {
            total: node + lambda_edge * edge,
            node,
            edge,
        },
        SsgatParams { layers: grads },
    ))
}

/// Training objective without dropout and its exact gradient:
/// weighted node cross-entropy on `train_mask` plus `lambda_edge` times the
/// edge-presence loss averaged over layers.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradient(
    params: &SsgatParams,
    graph: &SentenceGraph,
    features: &Mat,
    labels: &[Label],
    train_mask: &[bool],
    negatives: &[(usize, usize)],
    lambda_edge: f64,
    class_weight: ClassWeight,
) -> Result<(LossParts, SsgatParams)> {
    validate_negatives(graph, negatives)?;
    let hood = Neighborhoods::new(graph);
    let weights = class_weights(labels, train_mask, class_weight);
    loss_and_grad_inner(
        params, graph, &hood, features, labels, train_mask, negatives, lambda_edge, weights, None,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub loss: f64,
    pub node_loss: f64,
    /// `None` when the edge loss is disabled.
    pub edge_loss: Option<f64>,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsgatTraining {
    /// Parameters of the best validation epoch.
    pub params: SsgatParams,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::B1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::B2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (linalg::sqrt(vh) + Self::EPS);
        }
    }
}

/// Transductive training on the whole graph with masked node loss, Adam and
/// early stopping on validation F1 (ties broken by validation loss).
pub fn train_ssgat(
    graph: &SentenceGraph,
    features: &EmbeddingTable,
    labels: &[Label],
    masks: &NodeMasks,
    config: &SsgatConfig,
) -> Result<SsgatTraining> {
    config.validate()?;
    let n = graph.num_nodes();
    masks.validate(n)?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} nodes", labels.len())));
    }
    let x = node_features(graph, features)?;
    let hood = Neighborhoods::new(graph);
    let mut params = SsgatParams::init(x.cols, config);
    let weights = class_weights(labels, &masks.train, config.class_weight);
    let mut rng = seed::rng(seed::derive(config.seed, 0x5eed_9a7, 0));
    let mut adam = Adam::new(params.num_params());
    let mut flat = params.to_flat();
    let n_neg = libm::round(graph.num_edges() as f64 * config.negative_edge_ratio) as usize;

    let mut best: Option<(f64, f64, usize, SsgatParams)> = None;
    let mut trace = Vec::new();
    for epoch in 0..config.epochs {
        let negatives = if config.lambda_edge > 0.0 {
            sample_negatives(graph, n_neg, &mut rng)
        } else {
            Vec::new()
        };
        let (parts, grads) = loss_and_grad_inner(
            &params,
            graph,
            &hood,
            &x,
            labels,
            &masks.train,
            &negatives,
            config.lambda_edge,
            weights,
            Some((config.dropout, &mut rng)),
        )?;
        if !parts.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "ssgat",
                epoch,
                batch: 0,
            });
        }
        adam.step(&mut flat, &grads.to_flat(), config.learning_rate, config.weight_decay);
        params.set_flat(&flat);

        let eval = model_forward(&params, &hood, &x, None)?;
        let (val_loss, _) = node_loss(&eval.probs, labels, &masks.val, weights);
        let val_f1 = masked_metrics(&eval.probs, labels, &masks.val).f1;
        trace.push(EpochRecord {
            loss: parts.total,
            node_loss: parts.node,
            edge_loss: (config.lambda_edge > 0.0).then_some(parts.edge),
            val_f1,
        });
        let improved = match &best {
            None => true,
            Some((f1, loss, _, _)) => val_f1 > *f1 || (val_f1 == *f1 && val_loss < *loss),
        };
        if improved {
            best = Some((val_f1, val_loss, epoch, params.clone()));
        } else if let Some((_, _, at, _)) = &best {
            if epoch - at >= config.patience {
                break;
            }
        }
    }
    Ok(match best {
        Some((_, _, epoch, p)) => SsgatTraining {
            params: p,
            trace,
            best_epoch: Some(epoch),
        },
        None => SsgatTraining {
            params,
            trace,
            best_epoch: None,
        },
    })
}

fn masked_metrics(probs: &Mat, labels: &[Label], mask: &[bool]) -> Metrics {
    let (pred, gold): (Vec<Label>, Vec<Label>) = (0..probs.rows)
        .filter(|&u| mask[u])
        .map(|u| (argmax_label(probs.row(u)), labels[u]))
        .unzip();
    precision_recall_f1(&pred, &gold).expect("equal lengths")
}

fn argmax_label(p: &[f64]) -> Label {
    if p[1] > p[0] {
        Label::Biased
    } else {
        Label::NonBiased
    }
}

/// Class probabilities and hard labels for the masked nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub nodes: Vec<usize>,
    pub probabilities: Vec<[f64; 2]>,
    pub labels: Vec<Label>,
}

impl Predictions {
    /// Probability of each predicted node by sentence id.
    pub fn by_sentence<'a>(&'a self, graph: &'a SentenceGraph) -> impl Iterator<Item = (u64, [f64; 2], Label)> + 'a {
        self.nodes
            .iter()
            .zip(&self.probabilities)
            .zip(&self.labels)
            .map(|((&u, &p), &l)| (graph.node_id(u), p, l))
    }
}

pub fn predict_nodes(
    params: &SsgatParams,
    graph: &SentenceGraph,
    features: &EmbeddingTable,
    mask: &[bool],
) -> Result<Predictions> {
    params.validate()?;
    if mask.len() != graph.num_nodes() {
        return Err(Error::Dimension("mask length differs from node count".into()));
    }
    let x = node_features(graph, features)?;
    let fwd = model_forward(params, &Neighborhoods::new(graph), &x, None)?;
    let mut out = Predictions {
        nodes: Vec::new(),
        probabilities: Vec::new(),
        labels: Vec::new(),
    };
    for u in (0..graph.num_nodes()).filter(|&u| mask[u]) {
        let p = [fwd.probs.get(u, 0), fwd.probs.get(u, 1)];
        out.nodes.push(u);
        out.labels.push(argmax_label(&p));
        out.probabilities.push(p);
    }
    Ok(out)
}
