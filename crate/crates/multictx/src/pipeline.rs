//! Pipeline driver: builds an experiment from a run config and evaluates its
//! fold × seed cells on a worker pool, with an optional on-disk cache of
//! trained encoders and cell results.
//!
//! Every cell is a pure function of its inputs and seeds, so the report does
//! not depend on the worker count or on cache state.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{debug, info, warn};
use multictx_core::encoder::{self, CseTraining};
use multictx_core::eval::{self, AblationReport, CellArtifacts, CellResult, Metrics, RunReport};
use multictx_core::{corpus, synth, Corpus, EdgeTypes, EmbeddingTable, FoldPlan};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{encoder_checkpoint, encoder_from_checkpoint, Checkpoint};
use crate::config::{sha256_hex, FeaturesSection, RunConfig};
use crate::error::{Error, Result};
use crate::formats::{load_corpus, load_embeddings, read_text, write_text};

/// Everything a cross-validation run needs, fully materialised.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub corpus: Corpus,
    pub plan: FoldPlan,
    pub base: EmbeddingTable,
    pub pipeline: eval::PipelineConfig,
    pub seeds: Vec<u64>,
    /// Identifies the inputs and settings; part of every cache key.
    pub fingerprint: String,
}

fn stage<T>(name: &'static str, fingerprint: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        fingerprint: fingerprint.to_string(),
        source: Box::new(e),
    })
}

pub fn load_base(features: &FeaturesSection, corpus: &Corpus) -> Result<EmbeddingTable> {
    match features {
        FeaturesSection::Hash { dim } => Ok(encoder::hash_features(corpus, *dim)),
        FeaturesSection::File { path } => {
            let table = load_embeddings(path)?;
            table.covers(corpus).map_err(|e| Error::format(path, e.to_string()))?;
            Ok(table)
        }
    }
}

impl Experiment {
    pub fn from_config(cfg: &RunConfig) -> Result<Experiment> {
        let fingerprint = cfg.fingerprint()?;
        let fp = fingerprint.as_str();
        let corpus = stage(
            "ingest",
            fp,
            match (&cfg.corpus.path, &cfg.corpus.synthetic) {
                (Some(p), _) => load_corpus(p),
                (None, Some(s)) => synth::generate_synthetic_corpus(&s.to_core()).map_err(Error::from),
                (None, None) => Err(Error::Config("no corpus configured".into())),
            },
        )?;
        let plan = stage("split", fp, corpus::event_folds(&corpus, cfg.split.k, cfg.split.seed).map_err(Error::from))?;
        let base = stage("features", fp, load_base(&cfg.features, &corpus))?;
        let pipeline = stage("config", fp, cfg.pipeline())?;
        info!(
            "experiment {}: {} sentences, {} folds, seeds {:?}",
            &fingerprint[..12],
            corpus.len(),
            plan.k(),
            cfg.seeds
        );
        Ok(Experiment {
            corpus,
            plan,
            base,
            pipeline,
            seeds: cfg.seeds.clone(),
            fingerprint,
        })
    }

    /// `(fold, seed)` in report order.
    pub fn cells(&self) -> Vec<(usize, u64)> {
        (0..self.plan.k())
            .flat_map(|f| self.seeds.iter().map(move |&s| (f, s)))
            .collect()
    }
}

/// Trained encoders and cell results keyed by fingerprint, fold and seed.
#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountsJson {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

impl From<Metrics> for CountsJson {
    fn from(m: Metrics) -> Self {
        CountsJson {
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
        }
    }
}

/// Metrics are stored as counts and recomputed on load, which reproduces
/// the ratios exactly.
#[derive(Debug, Serialize, Deserialize)]
struct CellJson {
    gat: CountsJson,
    probe: Option<CountsJson>,
    without_cse: Option<CountsJson>,
    best_epoch: Option<usize>,
    epochs_run: usize,
}

fn metrics(c: &CountsJson) -> Metrics {
    Metrics::from_counts(c.tp, c.fp, c.fn_, c.tn)
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Cache {
        Cache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn cell_dir(&self, fingerprint: &str, fold: usize, seed: u64) -> PathBuf {
        let key = sha256_hex(format!("{fingerprint}/{fold}/{seed}").as_bytes());
        self.dir.join(&key[..32])
    }

    fn result_path(&self, fingerprint: &str, fold: usize, seed: u64, keep: EdgeTypes, baselines: bool) -> PathBuf {
        let kept = keep.to_string().replace(',', "-");
        let suffix = if baselines { "-baselines" } else { "" };
        self.cell_dir(fingerprint, fold, seed).join(format!("result-{kept}{suffix}.json"))
    }

    fn load_encoder(&self, fingerprint: &str, fold: usize, seed: u64) -> Option<(usize, CseTraining)> {
        let path = self.cell_dir(fingerprint, fold, seed).join("encoder.ckpt");
        if !path.is_file() {
            return None;
        }
        let loaded = Checkpoint::load(&path).and_then(|ck| {
            let params = encoder_from_checkpoint(&ck, &path)?;
            let triplets = ck.meta.get("triplets").and_then(|v| v.parse().ok());
            let trace = ck.tensors.iter().find(|(n, _)| n == "loss_trace").map(|(_, m)| m.data.clone());
            match (triplets, trace) {
                (Some(n), Some(loss_trace)) => Ok((n, CseTraining { params, loss_trace })),
                _ => Err(Error::format(&path, "incomplete encoder cache entry")),
            }
        });
        loaded.map_err(|e| warn!("ignoring cache entry: {e}")).ok()
    }

    fn store_encoder(&self, fingerprint: &str, fold: usize, seed: u64, triplets: usize, cse: &CseTraining) -> Result<()> {
        let mut ck = encoder_checkpoint(&cse.params, "pipeline");
        ck.meta.insert("triplets".into(), triplets.to_string());
        let trace = multictx_core::linalg::Mat::from_vec(1, cse.loss_trace.len(), cse.loss_trace.clone());
        ck.tensors.push(("loss_trace".into(), trace));
        ck.save(&self.cell_dir(fingerprint, fold, seed).join("encoder.ckpt"))
    }

    fn load_result(&self, path: &Path, fold: usize, seed: u64) -> Option<CellResult> {
        if !path.is_file() {
            return None;
        }
        let parsed = read_text(path).and_then(|t| {
            serde_json::from_str::<CellJson>(&t).map_err(|e| Error::parse(path, e.line(), e.to_string()))
        });
        match parsed {
            Ok(c) => Some(CellResult {
                fold,
                seed,
                gat: metrics(&c.gat),
                probe: c.probe.as_ref().map(metrics),
                without_cse: c.without_cse.as_ref().map(metrics),
                best_epoch: c.best_epoch,
                epochs_run: c.epochs_run,
            }),
            Err(e) => {
                warn!("ignoring cache entry: {e}");
                None
            }
        }
    }

    fn store_result(&self, path: &Path, r: &CellResult) -> Result<()> {
        let json = CellJson {
            gat: r.gat.into(),
            probe: r.probe.map(Into::into),
            without_cse: r.without_cse.map(Into::into),
            best_epoch: r.best_epoch,
            epochs_run: r.epochs_run,
        };
        write_text(path, &serde_json::to_string(&json).expect("plain struct serialises"))
    }
}

/// Worker count and optional cache.
#[derive(Debug, Clone)]
pub struct Driver {
    pub workers: usize,
    pub cache: Option<Cache>,
}

impl Default for Driver {
    fn default() -> Self {
        Driver {
            workers: 1,
            cache: None,
        }
    }
}

/// Per cell: the full-graph result (with baselines) and one result per
/// requested ablation set.
type CellOutcome = (CellResult, Vec<CellResult>);

impl Driver {
    fn artifacts(&self, exp: &Experiment, fold: usize, seed: u64) -> Result<CellArtifacts> {
        let fp = exp.fingerprint.as_str();
        let cached = self.cache.as_ref().and_then(|c| c.load_encoder(fp, fold, seed));
        let (n, cse) = match cached {
            Some(hit) => {
                debug!("fold {fold} seed {seed}: encoder from cache");
                hit
            }
            None => {
                let trained = stage(
                    "train-cse",
                    fp,
                    eval::train_cell_encoder(&exp.corpus, &exp.plan.folds[fold], fold, &exp.base, &exp.pipeline, seed)
                        .map_err(Error::from),
                )?;
                if let Some(c) = &self.cache {
                    c.store_encoder(fp, fold, seed, trained.0, &trained.1)?;
                }
                trained
            }
        };
        stage(
            "build-graph",
            fp,
            eval::assemble_cell(&exp.corpus, fold, seed, &exp.base, &exp.pipeline, n, cse).map_err(Error::from),
        )
    }

    fn run_cell(&self, exp: &Experiment, fold: usize, seed: u64, sets: &[EdgeTypes]) -> Result<CellOutcome> {
        let fp = exp.fingerprint.as_str();
        let wanted: Vec<(EdgeTypes, bool)> = std::iter::once((EdgeTypes::ALL, true))
            .chain(sets.iter().map(|&k| (k, false)))
            .collect();
        let paths: Vec<Option<PathBuf>> = wanted
            .iter()
            .map(|&(k, b)| self.cache.as_ref().map(|c| c.result_path(fp, fold, seed, k, b)))
            .collect();
        let mut results: Vec<Option<CellResult>> = paths
            .iter()
            .map(|p| {
                let c = self.cache.as_ref()?;
                c.load_result(p.as_ref()?, fold, seed)
            })
            .collect();
        if results.iter().any(Option::is_none) {
            let cell = self.artifacts(exp, fold, seed)?;
            let fold_def = &exp.plan.folds[fold];
            for (i, &(keep, baselines)) in wanted.iter().enumerate() {
                if results[i].is_some() {
                    continue;
                }
                let r = stage(
                    "train-gat",
                    fp,
                    eval::evaluate_cell(&exp.corpus, fold_def, &cell, &exp.base, keep, &exp.pipeline, baselines)
                        .map_err(Error::from),
                )?;
                info!("fold {fold} seed {seed} [{keep}]: F1 {:.4}", r.gat.f1);
                if let (Some(c), Some(p)) = (&self.cache, &paths[i]) {
                    c.store_result(p, &r)?;
                }
                results[i] = Some(r);
            }
        }
        let mut it = results.into_iter().map(|r| r.expect("filled above"));
        let full = it.next().expect("full-graph entry");
        Ok((full, it.collect()))
    }

    /// Runs every cell; the first error in cell order wins.
    fn run_all(&self, exp: &Experiment, sets: &[EdgeTypes]) -> Result<Vec<CellOutcome>> {
        stage("validate", &exp.fingerprint, self.check(exp))?;
        let cells = exp.cells();
        let slots: Vec<Mutex<Option<Result<CellOutcome>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.workers.clamp(1, cells.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(fold, seed)) = cells.get(i) else { break };
                    let r = self.run_cell(exp, fold, seed, sets);
                    let failed = r.is_err();
                    *slots[i].lock().expect("slot lock") = Some(r);
                    if failed {
                        // later cells are skipped; earlier ones still finish
                        next.fetch_max(cells.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(cells.len());
        for slot in slots {
            match slot.into_inner().expect("slot lock") {
                Some(r) => out.push(r?),
                None => break,
            }
        }
        Ok(out)
    }

    fn check(&self, exp: &Experiment) -> Result<()> {
        if exp.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        exp.pipeline.validate()?;
        exp.plan.validate(&exp.corpus)?;
        Ok(())
    }

    /// Full-graph cross-validation with the probe and base-feature baselines.
    pub fn evaluate(&self, exp: &Experiment) -> Result<RunReport> {
        let out = self.run_all(exp, &[])?;
        Ok(RunReport::from_cells(
            exp.fingerprint.clone(),
            EdgeTypes::ALL,
            out.into_iter().map(|(full, _)| full).collect(),
        ))
    }

    /// The six kept-edge-set configurations plus the full graph, sharing
    /// each cell's encoder and graph.
    pub fn ablate(&self, exp: &Experiment) -> Result<AblationReport> {
        let sets = eval::ablation_sets();
        let out = self.run_all(exp, &sets)?;
        let mut rows: Vec<Vec<CellResult>> = vec![Vec::new(); sets.len()];
        let mut full = Vec::new();
        for (f, rs) in out {
            full.push(f);
            for (k, r) in rs.into_iter().enumerate() {
                rows[k].push(r);
            }
        }
        Ok(AblationReport {
            full: RunReport::from_cells(exp.fingerprint.clone(), EdgeTypes::ALL, full),
            rows: sets
                .iter()
                .zip(rows)
                .map(|(&k, cells)| RunReport::from_cells(exp.fingerprint.clone(), k, cells))
                .collect(),
        })
    }
}
