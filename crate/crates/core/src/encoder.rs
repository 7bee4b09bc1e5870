//! Contrastive sentence embeddings.
//!
//! Base features (hashed bag of tokens, or any externally supplied table) go
//! through a two-layer tanh projection whose output is L2-normalised. The
//! projection is trained with in-batch InfoNCE over mined triplets, where each
//! anchor's denominator holds every positive and every hard negative of the
//! batch.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;

use crate::corpus::Corpus;
use crate::linalg::{self, Mat};
use crate::text::tokenize_sentence;
use crate::triplets::Triplet;
use crate::{seed, Error, Result};

/// Dense vector per sentence id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f64>,
    index: BTreeMap<u64, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> EmbeddingTable {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    pub fn from_rows<I>(dim: usize, rows: I) -> Result<EmbeddingTable>
    where
        I: IntoIterator<Item = (u64, Vec<f64>)>,
    {
        let mut table = EmbeddingTable::new(dim);
        for (id, v) in rows {
            table.push(id, &v)?;
        }
        Ok(table)
    }

    pub fn push(&mut self, id: u64, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "row {id} has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("row {id} has non-finite value {bad}")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Validation(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.index
            .get(&id)
            .map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }

    /// Rows in insertion order.
    pub fn rows(&self) -> impl Iterator<Item = (u64, &[f64])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(r, &id)| (id, &self.data[r * self.dim..(r + 1) * self.dim]))
    }

    /// Stacks the rows for `ids` into a matrix.
    pub fn gather(&self, ids: impl IntoIterator<Item = u64>) -> Result<Mat> {
        let mut data = Vec::new();
        let mut n = 0;
        for id in ids {
            data.extend_from_slice(self.get(id).ok_or(Error::MissingEmbedding(id))?);
            n += 1;
        }
        Ok(Mat::from_vec(n, self.dim, data))
    }

    pub fn covers(&self, corpus: &Corpus) -> Result<()> {
        match corpus.sentences().iter().find(|r| self.get(r.sentence_id).is_none()) {
            Some(r) => Err(Error::MissingEmbedding(r.sentence_id)),
            None => Ok(()),
        }
    }
}

/// Bucket and sign a token hashes to.
pub fn hash_bucket(token: &str, dim: usize) -> (usize, f64) {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    let h = h.finish();
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % dim as u64) as usize, sign)
}

/// Signed feature hashing of lowercased tokens, L2-normalised per sentence.
pub fn hash_features(corpus: &Corpus, dim: usize) -> EmbeddingTable {
    let mut table = EmbeddingTable::new(dim);
    let mut v = vec![0.0; dim];
    for r in corpus.sentences() {
        v.iter_mut().for_each(|x| *x = 0.0);
        for tok in tokenize_sentence(&r.text).tokens {
            let (b, s) = hash_bucket(&tok.to_lowercase(), dim);
            v[b] += s;
        }
        let n = linalg::norm(&v);
        if n == 0.0 {
            // every token cancelled out in a collision
            let (b, _) = hash_bucket(&r.text, dim);
            v[b] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        table.push(r.sentence_id, &v).expect("hashed row is valid");
    }
    table
}

/// Two-layer projection `normalize(W2ᵀ tanh(W1ᵀ x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `input × hidden`
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// `hidden × output`
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl EncoderParams {
    pub fn init(input: usize, hidden: usize, output: usize, seed: u64) -> EncoderParams {
        let mut rng = seed::rng(seed);
        EncoderParams {
            w1: Mat::glorot(input, hidden, &mut rng),
            b1: vec![0.0; hidden],
            w2: Mat::glorot(hidden, output, &mut rng),
            b2: vec![0.0; output],
        }
    }

    /// A projection that reproduces its (unit-norm) input: the first layer
    /// scales into the linear range of tanh and the second scales back.
    pub fn near_identity(dim: usize) -> EncoderParams {
        const EPS: f64 = 1e-6;
        let mut w1 = Mat::zeros(dim, dim);
        let mut w2 = Mat::zeros(dim, dim);
        for i in 0..dim {
            w1.data[i * dim + i] = EPS;
            w2.data[i * dim + i] = 1.0 / EPS;
        }
        EncoderParams {
            w1,
            b1: vec![0.0; dim],
            w2,
            b2: vec![0.0; dim],
        }
    }

    pub fn zeros_like(&self) -> EncoderParams {
        EncoderParams {
            w1: Mat::zeros(self.w1.rows, self.w1.cols),
            b1: vec![0.0; self.b1.len()],
            w2: Mat::zeros(self.w2.rows, self.w2.cols),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols
    }

    /// Checks shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        let shapes_ok = self.b1.len() == self.w1.cols
            && self.w2.rows == self.w1.cols
            && self.b2.len() == self.w2.cols;
        if !shapes_ok {
            return Err(Error::Dimension("inconsistent encoder parameter shapes".into()));
        }
        if !self.slices().iter().all(|s| s.iter().all(|x| x.is_finite())) {
            return Err(Error::Validation("non-finite encoder parameter".into()));
        }
        Ok(())
    }

    fn slices(&self) -> [&[f64]; 4] {
        [&self.w1.data, &self.b1, &self.w2.data, &self.b2]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1.data, &mut self.b1, &mut self.w2.data, &mut self.b2]
    }

    /// All parameters in a fixed order.
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

    /// Projects and normalises each row of `x`.
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        Ok(self.forward_cached(x)?.out)
    }

    fn forward_cached(&self, x: &Mat) -> Result<ForwardCache> {
        if x.cols != self.input_dim() {
            return Err(Error::Dimension(format!(
                "encoder expects {} input features, got {}",
                self.input_dim(),
                x.cols
            )));
        }
        let mut h1 = x.matmul(&self.w1);
        for r in 0..h1.rows {
            for (v, b) in h1.row_mut(r).iter_mut().zip(&self.b1) {
                *v = linalg::tanh(*v + b);
            }
        }
        let mut out = h1.matmul(&self.w2);
        let mut norms = Vec::with_capacity(out.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b2) {
                *v += b;
            }
            let n = linalg::norm(row);
            norms.push(n);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(ForwardCache { h1, out, norms })
    }

    /// Gradients of the parameters given the gradient w.r.t. the normalised
    /// outputs of `forward_cached(x)`.
    fn backward(&self, x: &Mat, cache: &ForwardCache, d_out: &Mat) -> EncoderParams {
        let mut dz = Mat::zeros(d_out.rows, d_out.cols);
        for r in 0..d_out.rows {
            let n = cache.norms[r];
            if n == 0.0 {
                continue;
            }
            let h = cache.out.row(r);
            let g = d_out.row(r);
            let gh = linalg::dot(g, h);
            for ((d, &gi), &hi) in dz.row_mut(r).iter_mut().zip(g).zip(h) {
                *d = (gi - gh * hi) / n;
            }
        }
        let w2 = cache.h1.t_matmul(&dz);
        let b2 = column_sums(&dz);
        let mut da1 = dz.matmul_t(&self.w2);
        for (d, h) in da1.data.iter_mut().zip(&cache.h1.data) {
            *d *= 1.0 - h * h;
        }
        let w1 = x.t_matmul(&da1);
        let b1 = column_sums(&da1);
        EncoderParams { w1, b1, w2, b2 }
    }
}

struct ForwardCache {
    h1: Mat,
    out: Mat,
    norms: Vec<f64>,
}

fn column_sums(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for r in 0..m.rows {
        linalg::axpy(1.0, m.row(r), &mut out);
    }
    out
}

/// Gradients of [`info_nce`] with respect to its three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrads {
    pub anchors: Mat,
    pub positives: Mat,
    pub negatives: Mat,
}

/// In-batch InfoNCE with hard negatives on already-normalised embeddings:
///
/// `-1/N Σ_i log( exp(a_i·p_i/τ) / Σ_j (exp(a_i·p_j/τ) + exp(a_i·n_j/τ)) )`
pub fn info_nce(
    anchors: &Mat,
    positives: &Mat,
    negatives: &Mat,
    temperature: f64,
) -> Result<(f64, InfoNceGrads)> {
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let n = anchors.rows;
    if n == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    if positives.rows != n || negatives.rows != n {
        return Err(Error::Dimension("anchor/positive/negative counts differ".into()));
    }
    let sp = anchors.matmul_t(positives);
    let sn = anchors.matmul_t(negatives);
    let mut grads = InfoNceGrads {
        anchors: Mat::zeros(n, anchors.cols),
        positives: Mat::zeros(n, positives.cols),
        negatives: Mat::zeros(n, negatives.cols),
    };
    let mut loss = 0.0;
    let mut logits = vec![0.0; 2 * n];
    let scale = 1.0 / (n as f64 * temperature);
    for i in 0..n {
        for j in 0..n {
            logits[j] = sp.get(i, j) / temperature;
            logits[n + j] = sn.get(i, j) / temperature;
        }
        loss += linalg::log_sum_exp(&logits) - logits[i];
        linalg::softmax_in_place(&mut logits);
        logits[i] -= 1.0;
        // logits now holds d loss_i / d logit; chain through the dot products
        for j in 0..n {
            let gp = logits[j] * scale;
            let gn = logits[n + j] * scale;
            linalg::axpy(gp, positives.row(j), grads.anchors.row_mut(i));
            linalg::axpy(gn, negatives.row(j), grads.anchors.row_mut(i));
            linalg::axpy(gp, anchors.row(i), grads.positives.row_mut(j));
            linalg::axpy(gn, anchors.row(i), grads.negatives.row_mut(j));
        }
    }
    Ok((loss / n as f64, grads))
}

/// InfoNCE loss of a triplet batch and its exact parameter gradient.
pub fn infonce_loss(
    batch: &[Triplet],
    base: &EmbeddingTable,
    params: &EncoderParams,
    temperature: f64,
) -> Result<(f64, EncoderParams)> {
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let n = batch.len();
    let ids = batch
        .iter()
        .map(|t| t.anchor_id)
        .chain(batch.iter().map(|t| t.positive_id))
        .chain(batch.iter().map(|t| t.negative_id));
    let x = base.gather(ids)?;
    let cache = params.forward_cached(&x)?;
    let d = params.output_dim();
    let part = |k: usize| Mat::from_vec(n, d, cache.out.data[k * n * d..(k + 1) * n * d].to_vec());
    let (loss, g) = info_nce(&part(0), &part(1), &part(2), temperature)?;
    let mut d_out = g.anchors.data;
    d_out.extend_from_slice(&g.positives.data);
    d_out.extend_from_slice(&g.negatives.data);
    let grads = params.backward(&x, &cache, &Mat::from_vec(3 * n, d, d_out));
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CseTrainConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl Default for CseTrainConfig {
    fn default() -> Self {
        CseTrainConfig {
            temperature: 0.05,
            batch_size: 64,
            epochs: 10,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden_dim: 128,
            output_dim: 128,
            seed: 0,
        }
    }
}

impl CseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Argument("temperature must be positive".into()));
        }
        if self.output_dim < 2 || self.hidden_dim == 0 {
            return Err(Error::Argument("output_dim must be >= 2 and hidden_dim > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(
                "learning_rate must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CseTraining {
    pub params: EncoderParams,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains the projection with SGD + momentum. Batches are formed once from a
/// seeded shuffle; each epoch visits them in a freshly shuffled order.
pub fn train_cse(
    corpus: &Corpus,
    triplets: &[Triplet],
    base: &EmbeddingTable,
    config: &CseTrainConfig,
) -> Result<CseTraining> {
    config.validate()?;
    for t in triplets {
        for id in [t.anchor_id, t.positive_id, t.negative_id] {
            if corpus.get(id).is_none() {
                return Err(Error::Validation(format!(
                    "triplet references sentence {id}, which is not in the corpus"
                )));
            }
        }
    }
    let mut params = EncoderParams::init(base.dim(), config.hidden_dim, config.output_dim, config.seed);
    let mut velocity = params.zeros_like().to_flat();
    let mut flat = params.to_flat();
    let mut rng = seed::rng(seed::derive(config.seed, 0x0bad_cafe, 0));

    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.shuffle(&mut rng);
    let batches: Vec<Vec<Triplet>> = order
        .chunks(config.batch_size)
        .map(|c| c.iter().map(|&i| triplets[i]).collect())
        .collect();

    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut batch_losses = vec![0.0; batches.len()];
    let mut visit: Vec<usize> = (0..batches.len()).collect();
    for epoch in 0..config.epochs {
        visit.shuffle(&mut rng);
        for &b in &visit {
            let (loss, grads) = infonce_loss(&batches[b], base, &params, config.temperature)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: "cse",
                    epoch,
                    batch: b,
                });
            }
            batch_losses[b] = loss;
            for ((v, p), g) in velocity.iter_mut().zip(flat.iter_mut()).zip(grads.to_flat()) {
                *v = config.momentum * *v + g;
                *p -= config.learning_rate * *v;
            }
            params.set_flat(&flat);
        }
        let mean = if batches.is_empty() {
            0.0
        } else {
            batch_losses.iter().sum::<f64>() / batches.len() as f64
        };
        loss_trace.push(mean);
    }
    Ok(CseTraining { params, loss_trace })
}

/// Per-sentence inference: one normalised projection per corpus sentence.
pub fn embed_corpus(
    corpus: &Corpus,
    base: &EmbeddingTable,
    params: &EncoderParams,
) -> Result<EmbeddingTable> {
    let x = base.gather(corpus.sentences().iter().map(|r| r.sentence_id))?;
    let out = params.forward(&x)?;
    let mut table = EmbeddingTable::new(params.output_dim());
    for (r, rec) in corpus.sentences().iter().enumerate() {
        table.push(rec.sentence_id, out.row(r))?;
    }
    Ok(table)
}
