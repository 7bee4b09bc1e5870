//! Metrics, the logistic-regression probe, event-wise cross-validation and
//! the ablation over kept edge families.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::corpus::{Corpus, Fold, FoldPlan, Label};
use crate::encoder::{self, CseTrainConfig, CseTraining, EmbeddingTable};
use crate::graph::{self, EdgeType, EdgeTypes, GraphConfig, SentenceGraph};
use crate::linalg;
use crate::ssgat::{self, NodeMasks, SsgatConfig};
use crate::triplets;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Metrics {
    /// Ratios from counts; an empty denominator gives 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

/// Biased is the positive class.
pub fn precision_recall_f1(predictions: &[Label], gold: &[Label]) -> Result<Metrics> {
    if predictions.len() != gold.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, g) in predictions.iter().zip(gold) {
        match (p.is_biased(), g.is_biased()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// L2 strength on the weights (the bias is not penalised).
    pub l2: f64,
    /// Stop when the gradient norm falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1.0,
            tolerance: 1e-6,
            max_iter: 2000,
        }
    }
}

/// Class-balanced logistic regression fitted by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegression {
    pub fn fit(x: &[&[f64]], y: &[Label], config: &ProbeConfig) -> Result<LogisticRegression> {
        let n = x.len();
        let mut counts = [0usize; 2];
        for l in y {
            counts[l.as_int() as usize] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            return Err(Error::Argument("probe training set contains a single class".into()));
        }
        let dim = x[0].len();
        let sw: Vec<f64> = y
            .iter()
            .map(|l| n as f64 / (2.0 * counts[l.as_int() as usize] as f64))
            .collect();
        let targets: Vec<f64> = y.iter().map(|l| f64::from(l.as_int())).collect();
        let objective = |w: &[f64], b: f64| -> f64 {
            let mut j = 0.5 * config.l2 * linalg::dot(w, w);
            for i in 0..n {
                let z = linalg::dot(w, x[i]) + b;
                j += sw[i] * (linalg::softplus(z) - targets[i] * z);
            }
            j
        };
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut j = objective(&w, b);
        let mut step = 1.0;
        let mut gw = vec![0.0; dim];
        for _ in 0..config.max_iter {
            gw.iter_mut().zip(&w).for_each(|(g, wi)| *g = config.l2 * wi);
            let mut gb = 0.0;
            for i in 0..n {
                let r = sw[i] * (linalg::sigmoid(linalg::dot(&w, x[i]) + b) - targets[i]);
                linalg::axpy(r, x[i], &mut gw);
                gb += r;
            }
            let g2 = linalg::dot(&gw, &gw) + gb * gb;
            if linalg::sqrt(g2) <= config.tolerance {
                break;
            }
            step *= 2.0;
            loop {
                let nw: Vec<f64> = w.iter().zip(&gw).map(|(wi, g)| wi - step * g).collect();
                let nb = b - step * gb;
                let nj = objective(&nw, nb);
                if nj <= j - 0.5 * step * g2 {
                    w = nw;
                    b = nb;
                    j = nj;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    return Ok(LogisticRegression { weights: w, bias: b });
                }
            }
        }
        Ok(LogisticRegression { weights: w, bias: b })
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        if linalg::dot(&self.weights, x) + self.bias > 0.0 {
            Label::Biased
        } else {
            Label::NonBiased
        }
    }
}

/// Fits the probe on train-masked sentences and scores the test mask.
/// Masks are indexed by corpus position.
pub fn linear_probe_baseline(
    embeddings: &EmbeddingTable,
    corpus: &Corpus,
    masks: &NodeMasks,
    config: &ProbeConfig,
) -> Result<Metrics> {
    masks.validate(corpus.len())?;
    let rows = |mask: &[bool]| -> Result<(Vec<&[f64]>, Vec<Label>)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (r, _) in corpus.sentences().iter().zip(mask).filter(|(_, &m)| m) {
            xs.push(embeddings.get(r.sentence_id).ok_or(Error::MissingEmbedding(r.sentence_id))?);
            ys.push(r.label);
        }
        Ok((xs, ys))
    };
    let (train_x, train_y) = rows(&masks.train)?;
    if train_x.is_empty() {
        return Err(Error::Argument("probe training set is empty".into()));
    }
    let model = LogisticRegression::fit(&train_x, &train_y, config)?;
    let (test_x, test_y) = rows(&masks.test)?;
    let pred: Vec<Label> = test_x.iter().map(|x| model.predict(x)).collect();
    precision_recall_f1(&pred, &test_y)
}

/// Event-aligned masks over corpus positions.
pub fn corpus_masks(corpus: &Corpus, fold: &Fold) -> NodeMasks {
    let n = corpus.len();
    let mut m = NodeMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (i, r) in corpus.sentences().iter().enumerate() {
        match fold.role(r.event_id) {
            Some(crate::corpus::Role::Train) => m.train[i] = true,
            Some(crate::corpus::Role::Val) => m.val[i] = true,
            Some(crate::corpus::Role::Test) => m.test[i] = true,
            None => {}
        }
    }
    m
}

/// Appends a one-hot news-source block to every row.
pub fn with_source_onehot(table: &EmbeddingTable, corpus: &Corpus) -> Result<EmbeddingTable> {
    let sources: BTreeSet<&str> = corpus.sentences().iter().map(|r| r.source.as_str()).collect();
    let slot: BTreeMap<&str, usize> = sources.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut out = EmbeddingTable::new(table.dim() + slot.len());
    for r in corpus.sentences() {
        let v = table.get(r.sentence_id).ok_or(Error::MissingEmbedding(r.sentence_id))?;
        let mut row = v.to_vec();
        row.resize(out.dim(), 0.0);
        row[table.dim() + slot[r.source.as_str()]] = 1.0;
        out.push(r.sentence_id, &row)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Per-anchor triplet cap; `None` keeps every triplet.
    pub triplet_cap: Option<usize>,
    pub cse: CseTrainConfig,
    pub graph: GraphConfig,
    pub gat: SsgatConfig,
    pub probe: ProbeConfig,
    /// Concatenate a one-hot source vector to the GAT input.
    pub source_feature: bool,
    /// Also train the GAT directly on the base vectors.
    pub without_cse_baseline: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            triplet_cap: Some(64),
            cse: CseTrainConfig::default(),
            graph: GraphConfig::default(),
            gat: SsgatConfig::default(),
            probe: ProbeConfig::default(),
            source_feature: false,
            without_cse_baseline: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cse.validate()?;
        self.gat.validate()?;
        if !(self.graph.theta_sim >= -1.0 && self.graph.theta_sim <= 1.0) {
            return Err(Error::Argument("theta_sim must be in [-1, 1]".into()));
        }
        if !(self.probe.l2 >= 0.0) {
            return Err(Error::Argument("probe l2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// Fold-and-seed specific artefacts shared by every kept edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct CellArtifacts {
    pub fold: usize,
    pub seed: u64,
    pub triplets: usize,
    pub cse: CseTraining,
    pub embeddings: EmbeddingTable,
    pub graph: SentenceGraph,
}

fn cell_seed(seed: u64, stage: u64, fold: usize) -> u64 {
    seed::derive(seed, stage, fold as u64)
}

fn with_context<T>(fold: usize, seed: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Cell { .. } => e,
        other => Error::Cell {
            fold,
            seed,
            source: alloc::boxed::Box::new(other),
        },
    })
}

/// Trains the sentence encoder of one cell on its training events.
pub fn train_cell_encoder(
    corpus: &Corpus,
    fold: &Fold,
    fold_index: usize,
    base: &EmbeddingTable,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(usize, CseTraining)> {
    with_context(fold_index, seed, (|| {
        let train = corpus.restrict_to_events(&fold.train_events);
        let ts = triplets::mine_triplets(&train, config.triplet_cap, cell_seed(seed, seed::stage::TRIPLETS, fold_index));
        for t in &ts {
            for id in [t.anchor_id, t.positive_id, t.negative_id] {
                let event = corpus.get(id).map(|r| r.event_id);
                if !event.is_some_and(|e| fold.train_events.contains(&e)) {
                    return Err(Error::Validation(format!("triplet uses non-training sentence {id}")));
                }
            }
        }
        let cse_config = CseTrainConfig {
            seed: cell_seed(seed, seed::stage::CSE, fold_index),
            ..config.cse.clone()
        };
        let cse = encoder::train_cse(&train, &ts, base, &cse_config)?;
        Ok((ts.len(), cse))
    })())
}

/// Embeds every sentence with a trained encoder and builds the full graph.
pub fn assemble_cell(
    corpus: &Corpus,
    fold_index: usize,
    seed: u64,
    base: &EmbeddingTable,
    config: &PipelineConfig,
    triplets: usize,
    cse: CseTraining,
) -> Result<CellArtifacts> {
    with_context(fold_index, seed, (|| {
        let embeddings = encoder::embed_corpus(corpus, base, &cse.params)?;
        let graph = graph::build_event_graph(corpus, &embeddings, &config.graph)?;
        Ok(CellArtifacts {
            fold: fold_index,
            seed,
            triplets,
            cse,
            embeddings,
            graph,
        })
    })())
}

pub fn prepare_cell(
    corpus: &Corpus,
    fold: &Fold,
    fold_index: usize,
    base: &EmbeddingTable,
    config: &PipelineConfig,
    seed: u64,
) -> Result<CellArtifacts> {
    let (n, cse) = train_cell_encoder(corpus, fold, fold_index, base, config, seed)?;
    assemble_cell(corpus, fold_index, seed, base, config, n, cse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub fold: usize,
    pub seed: u64,
    pub gat: Metrics,
    pub probe: Option<Metrics>,
    pub without_cse: Option<Metrics>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
}

fn gat_metrics(
    corpus: &Corpus,
    graph: &SentenceGraph,
    features: &EmbeddingTable,
    fold: &Fold,
    gat: &SsgatConfig,
    source_feature: bool,
) -> Result<(Metrics, Option<usize>, usize)> {
    let features = if source_feature {
        with_source_onehot(features, corpus)?
    } else {
        features.clone()
    };
    let masks = NodeMasks::from_fold(graph, fold);
    let labels: Vec<Label> = graph
        .node_ids()
        .iter()
        .map(|&id| corpus.get(id).map(|r| r.label).ok_or(Error::MissingEmbedding(id)))
        .collect::<Result<_>>()?;
    let training = ssgat::train_ssgat(graph, &features, &labels, &masks, gat)?;
    let pred = ssgat::predict_nodes(&training.params, graph, &features, &masks.test)?;
    let gold: Vec<Label> = pred.nodes.iter().map(|&u| labels[u]).collect();
    Ok((
        precision_recall_f1(&pred.labels, &gold)?,
        training.best_epoch,
        training.trace.len(),
    ))
}

/// Trains and tests the GAT on the cell graph restricted to `keep`; with
/// `baselines` also scores the probe and the GAT on base vectors.
pub fn evaluate_cell(
    corpus: &Corpus,
    fold: &Fold,
    cell: &CellArtifacts,
    base: &EmbeddingTable,
    keep: EdgeTypes,
    config: &PipelineConfig,
    baselines: bool,
) -> Result<CellResult> {
    with_context(cell.fold, cell.seed, (|| {
        let gat = SsgatConfig {
            seed: cell_seed(cell.seed, seed::stage::GAT, cell.fold),
            ..config.gat.clone()
        };
        let graph = graph::filter_edges(&cell.graph, keep)?;
        let (metrics, best_epoch, epochs_run) =
            gat_metrics(corpus, &graph, &cell.embeddings, fold, &gat, config.source_feature)?;
        let mut result = CellResult {
            fold: cell.fold,
            seed: cell.seed,
            gat: metrics,
            probe: None,
            without_cse: None,
            best_epoch,
            epochs_run,
        };
        if baselines {
            let masks = corpus_masks(corpus, fold);
            result.probe = Some(linear_probe_baseline(&cell.embeddings, corpus, &masks, &config.probe)?);
            if config.without_cse_baseline {
                let base_graph = graph::build_event_graph(corpus, base, &config.graph)?;
                let base_graph = graph::filter_edges(&base_graph, keep)?;
                let (m, _, _) = gat_metrics(corpus, &base_graph, base, fold, &gat, config.source_feature)?;
                result.without_cse = Some(m);
            }
        }
        Ok(result)
    })())
}

/// Mean and population standard deviation of fold-averaged metrics across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub f1: (f64, f64),
    pub seeds: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, linalg::sqrt(var))
}

/// Averages per seed over folds, then across seeds. Cells without the
/// selected metric are skipped.
pub fn aggregate<F>(cells: &[CellResult], select: F) -> Option<Aggregate>
where
    F: Fn(&CellResult) -> Option<Metrics>,
{
    let mut by_seed: BTreeMap<u64, Vec<Metrics>> = BTreeMap::new();
    for c in cells {
        if let Some(m) = select(c) {
            by_seed.entry(c.seed).or_default().push(m);
        }
    }
    if by_seed.is_empty() {
        return None;
    }
    let per_seed: Vec<[f64; 3]> = by_seed
        .values()
        .map(|ms| {
            let n = ms.len() as f64;
            [
                ms.iter().map(|m| m.precision).sum::<f64>() / n,
                ms.iter().map(|m| m.recall).sum::<f64>() / n,
                ms.iter().map(|m| m.f1).sum::<f64>() / n,
            ]
        })
        .collect();
    let col = |k: usize| mean_std(&per_seed.iter().map(|r| r[k]).collect::<Vec<_>>());
    Some(Aggregate {
        precision: col(0),
        recall: col(1),
        f1: col(2),
        seeds: per_seed.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub fingerprint: String,
    pub kept: EdgeTypes,
    /// Sorted by `(fold, seed)`.
    pub cells: Vec<CellResult>,
    pub gat: Aggregate,
    pub probe: Option<Aggregate>,
    pub without_cse: Option<Aggregate>,
}

impl RunReport {
    pub fn from_cells(fingerprint: String, kept: EdgeTypes, mut cells: Vec<CellResult>) -> RunReport {
        cells.sort_by_key(|c| (c.fold, c.seed));
        RunReport {
            gat: aggregate(&cells, |c| Some(c.gat)).unwrap_or_default(),
            probe: aggregate(&cells, |c| c.probe),
            without_cse: aggregate(&cells, |c| c.without_cse),
            fingerprint,
            kept,
            cells,
        }
    }
}

pub fn cross_validate(
    corpus: &Corpus,
    plan: &FoldPlan,
    base: &EmbeddingTable,
    config: &PipelineConfig,
    seeds: &[u64],
) -> Result<RunReport> {
    check_inputs(corpus, plan, config, seeds)?;
    let mut cells = Vec::new();
    for (i, fold) in plan.folds.iter().enumerate() {
        for &s in seeds {
            let cell = prepare_cell(corpus, fold, i, base, config, s)?;
            cells.push(evaluate_cell(corpus, fold, &cell, base, EdgeTypes::ALL, config, true)?);
        }
    }
    Ok(RunReport::from_cells(String::new(), EdgeTypes::ALL, cells))
}

fn check_inputs(corpus: &Corpus, plan: &FoldPlan, config: &PipelineConfig, seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Argument("at least one seed is required".into()));
    }
    config.validate()?;
    plan.validate(corpus)
}

/// Kept edge sets of the ablation, paired as "without X" / "only X".
pub fn ablation_sets() -> [EdgeTypes; 6] {
    use EdgeType::*;
    [
        EdgeTypes::of(&[DeverbalRef, DiscourseMarker, EntityCont]),
        EdgeTypes::of(&[SemanticSim]),
        EdgeTypes::of(&[EntityCont, SemanticSim]),
        EdgeTypes::of(&[DeverbalRef, DiscourseMarker]),
        EdgeTypes::of(&[DeverbalRef, DiscourseMarker, SemanticSim]),
        EdgeTypes::of(&[EntityCont]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub full: RunReport,
    /// In [`ablation_sets`] order.
    pub rows: Vec<RunReport>,
}

/// Reuses each cell's encoder and full graph across every kept set.
pub fn ablation_suite(
    corpus: &Corpus,
    plan: &FoldPlan,
    base: &EmbeddingTable,
    config: &PipelineConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    check_inputs(corpus, plan, config, seeds)?;
    let sets = ablation_sets();
    let mut full = Vec::new();
    let mut rows: Vec<Vec<CellResult>> = vec![Vec::new(); sets.len()];
    for (i, fold) in plan.folds.iter().enumerate() {
        for &s in seeds {
            let cell = prepare_cell(corpus, fold, i, base, config, s)?;
            full.push(evaluate_cell(corpus, fold, &cell, base, EdgeTypes::ALL, config, true)?);
            for (k, &keep) in sets.iter().enumerate() {
                rows[k].push(evaluate_cell(corpus, fold, &cell, base, keep, config, false)?);
            }
        }
    }
    Ok(AblationReport {
        full: RunReport::from_cells(String::new(), EdgeTypes::ALL, full),
        rows: sets
            .iter()
            .zip(rows)
            .map(|(&k, cells)| RunReport::from_cells(String::new(), k, cells))
            .collect(),
    })
}

fn pct(v: (f64, f64)) -> String {
    format!("{:.2} ± {:.2}", 100.0 * v.0, 100.0 * v.1)
}

/// Main results layout: one row per model with P / R / F1 in percent.
pub fn render_table2(report: &RunReport) -> String {
    let mut rows: Vec<(&str, &str, &str, Aggregate)> = Vec::new();
    if let Some(a) = report.probe {
        rows.push(("CSE", "CSE", "-", a));
    }
    if let Some(a) = report.without_cse {
        rows.push(("MultiCTX w/o CSE", "base", "SSGAT", a));
    }
    rows.push(("MultiCTX", "CSE", "SSGAT", report.gat));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} | {:<18} | {:<28} | {:<15} | {:<15} | {:<15}",
        "Model", "Sentence embedding", "Structure to encode context", "Precision", "Recall", "F1"
    );
    let _ = writeln!(out, "{}", "-".repeat(123));
    for (model, emb, structure, a) in rows {
        let _ = writeln!(
            out,
            "{:<18} | {:<18} | {:<28} | {:<15} | {:<15} | {:<15}",
            model,
            emb,
            structure,
            pct(a.precision),
            pct(a.recall),
            pct(a.f1)
        );
    }
    let _ = writeln!(out, "mean ± std over {} seed(s) of fold-averaged metrics", report.gat.seeds);
    out
}

/// Ablation layout: each row pairs "without X" with "only X".
pub fn render_table3(ablation: &AblationReport) -> String {
    const LABELS: [(&str, &str); 3] = [
        ("w/o Type 4", "only Type 4"),
        ("w/o Type 1,2", "only Type 1,2"),
        ("w/o Type 3", "only Type 3"),
    ];
    let mut out = String::new();
    let _ = writeln!(out, "Full graph (Type 1,2,3,4): F1 {}", pct(ablation.full.gat.f1));
    let _ = writeln!(out);
    for (i, (without, only)) in LABELS.iter().enumerate() {
        let (a, b) = (&ablation.rows[2 * i], &ablation.rows[2 * i + 1]);
        let _ = writeln!(out, "{:<10} | {:<22} | {:<22}", "", format!("{without} [{}]", a.kept), format!("{only} [{}]", b.kept));
        for (name, f) in [
            ("Precision", (a.gat.precision, b.gat.precision)),
            ("Recall", (a.gat.recall, b.gat.recall)),
            ("F1", (a.gat.f1, b.gat.f1)),
        ] {
            let _ = writeln!(out, "{:<10} | {:<22} | {:<22}", name, pct(f.0), pct(f.1));
        }
        let _ = writeln!(out);
    }
    out
}

/// One row per fold × seed × kept set.
pub fn render_cells_tsv(reports: &[&RunReport]) -> String {
    let mut out = String::from(
        "kept\tfold\tseed\tprecision\trecall\tf1\ttp\tfp\tfn\ttn\tprobe_f1\twithout_cse_f1\tbest_epoch\tepochs\n",
    );
    let opt = |m: Option<Metrics>| m.map_or_else(|| String::from("-"), |m| format!("{}", m.f1));
    for r in reports {
        for c in &r.cells {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.kept,
                c.fold,
                c.seed,
                c.gat.precision,
                c.gat.recall,
                c.gat.f1,
                c.gat.tp,
                c.gat.fp,
                c.gat.fn_,
                c.gat.tn,
                opt(c.probe),
                opt(c.without_cse),
                c.best_epoch.map_or_else(|| String::from("-"), |e| format!("{e}")),
                c.epochs_run
            );
        }
    }
    out
}
