//! Declarative run configuration (TOML) and its fingerprint.
//!
//! Every stage default of the core crate can be overridden here. Relative
//! paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use multictx_core::encoder::CseTrainConfig;
use multictx_core::eval::{PipelineConfig, ProbeConfig};
use multictx_core::graph::GraphConfig;
use multictx_core::ssgat::{ClassWeight, SsgatConfig};
use multictx_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::{load_lexicon, read_text};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_events: usize,
    pub articles_per_event: usize,
    pub sentences_per_article: usize,
    pub bias_rate: f64,
    pub cue_rate: f64,
    pub cue_vocab: usize,
    pub neutral_vocab: usize,
    pub name_vocab: usize,
    pub fact_words: usize,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection::from(&SynthConfig::default())
    }
}

impl From<&SynthConfig> for SynthSection {
    fn from(c: &SynthConfig) -> Self {
        SynthSection {
            n_events: c.n_events,
            articles_per_event: c.articles_per_event,
            sentences_per_article: c.sentences_per_article,
            bias_rate: c.bias_rate,
            cue_rate: c.cue_rate,
            cue_vocab: c.cue_vocab,
            neutral_vocab: c.neutral_vocab,
            name_vocab: c.name_vocab,
            fact_words: c.fact_words,
            seed: c.seed,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self) -> SynthConfig {
        SynthConfig {
            n_events: self.n_events,
            articles_per_event: self.articles_per_event,
            sentences_per_article: self.sentences_per_article,
            bias_rate: self.bias_rate,
            cue_rate: self.cue_rate,
            cue_vocab: self.cue_vocab,
            neutral_vocab: self.neutral_vocab,
            name_vocab: self.name_vocab,
            fact_words: self.fact_words,
            seed: self.seed,
        }
    }

    /// Parses a stand-alone synthetic-corpus config; missing keys take defaults.
    pub fn load(path: &Path) -> Result<SynthSection> {
        toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Exactly one of `path` and `synthetic` must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SynthSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub k: usize,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { k: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeaturesSection {
    Hash { dim: usize },
    File { path: PathBuf },
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection::Hash { dim: 1024 }
    }
}

impl FeaturesSection {
    /// `hash`, `hash:<dim>` or `file:<path>`.
    pub fn parse_spec(spec: &str) -> Result<FeaturesSection> {
        match spec.split_once(':') {
            None if spec == "hash" => Ok(FeaturesSection::default()),
            Some(("hash", d)) => d
                .parse()
                .ok()
                .filter(|&d| d > 0)
                .map(|dim| FeaturesSection::Hash { dim })
                .ok_or_else(|| Error::Config(format!("bad hash dimension {d:?}"))),
            Some(("file", p)) if !p.is_empty() => Ok(FeaturesSection::File { path: p.into() }),
            _ => Err(Error::Config(format!("base features must be hash, hash:<dim> or file:<path>, got {spec:?}"))),
        }
    }

    pub fn spec(&self) -> String {
        match self {
            FeaturesSection::Hash { dim } => format!("hash:{dim}"),
            FeaturesSection::File { path } => format!("file:{}", path.display()),
        }
    }
}

/// `cap = 0` mines every triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletSection {
    pub cap: usize,
}

impl Default for TripletSection {
    fn default() -> Self {
        TripletSection { cap: 64 }
    }
}

impl TripletSection {
    pub fn cap(&self) -> Option<usize> {
        (self.cap > 0).then_some(self.cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CseSection {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Used by `train-cse`; pipeline cells derive their own.
    pub seed: u64,
}

impl Default for CseSection {
    fn default() -> Self {
        let c = CseTrainConfig::default();
        CseSection {
            temperature: c.temperature,
            batch_size: c.batch_size,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            hidden_dim: c.hidden_dim,
            output_dim: c.output_dim,
            seed: c.seed,
        }
    }
}

impl CseSection {
    pub fn to_core(&self) -> CseTrainConfig {
        CseTrainConfig {
            temperature: self.temperature,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            seed: self.seed,
        }
    }
}

/// `top_k_sim = 0` disables the degree cap; `deverbal_window = 0` (the
/// default) links to every later sentence of the article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub theta_sim: f64,
    pub top_k_sim: usize,
    pub deverbal_window: usize,
    /// Marker lexicon file; the built-in list when absent.
    pub lexicon: Option<PathBuf>,
}

impl Default for GraphSection {
    fn default() -> Self {
        let g = GraphConfig::default();
        GraphSection {
            theta_sim: g.theta_sim,
            top_k_sim: g.top_k_sim.unwrap_or(0),
            deverbal_window: g.deverbal_window.unwrap_or(0),
            lexicon: None,
        }
    }
}

impl GraphSection {
    pub fn to_core(&self) -> Result<GraphConfig> {
        Ok(GraphConfig {
            theta_sim: self.theta_sim,
            top_k_sim: (self.top_k_sim > 0).then_some(self.top_k_sim),
            deverbal_window: (self.deverbal_window > 0).then_some(self.deverbal_window),
            lexicon: match &self.lexicon {
                Some(p) => load_lexicon(p)?,
                None => Default::default(),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightSection {
    Uniform,
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatSection {
    pub heads: usize,
    pub head_dim: usize,
    pub negative_slope: f64,
    pub lambda_edge: f64,
    pub negative_edge_ratio: f64,
    pub dropout: f64,
    pub class_weight: ClassWeightSection,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Used by `train-gat`; pipeline cells derive their own.
    pub seed: u64,
}

impl Default for GatSection {
    fn default() -> Self {
        let g = SsgatConfig::default();
        GatSection {
            heads: g.heads,
            head_dim: g.head_dim,
            negative_slope: g.negative_slope,
            lambda_edge: g.lambda_edge,
            negative_edge_ratio: g.negative_edge_ratio,
            dropout: g.dropout,
            class_weight: match g.class_weight {
                ClassWeight::Uniform => ClassWeightSection::Uniform,
                ClassWeight::InverseFrequency => ClassWeightSection::InverseFrequency,
            },
            learning_rate: g.learning_rate,
            weight_decay: g.weight_decay,
            epochs: g.epochs,
            patience: g.patience,
            seed: g.seed,
        }
    }
}

impl GatSection {
    pub fn to_core(&self) -> SsgatConfig {
        SsgatConfig {
            heads: self.heads,
            head_dim: self.head_dim,
            negative_slope: self.negative_slope,
            lambda_edge: self.lambda_edge,
            negative_edge_ratio: self.negative_edge_ratio,
            dropout: self.dropout,
            class_weight: match self.class_weight {
                ClassWeightSection::Uniform => ClassWeight::Uniform,
                ClassWeightSection::InverseFrequency => ClassWeight::InverseFrequency,
            },
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        ProbeSection {
            l2: p.l2,
            tolerance: p.tolerance,
            max_iter: p.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub source_feature: bool,
    pub without_cse_baseline: bool,
    /// Also run the edge-type ablation in `run`.
    pub ablation: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            source_feature: false,
            without_cse_baseline: true,
            ablation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub split: SplitSection,
    pub features: FeaturesSection,
    pub triplets: TripletSection,
    pub cse: CseSection,
    pub graph: GraphSection,
    pub gat: GatSection,
    pub probe: ProbeSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusSection::default(),
            output_dir: PathBuf::from("multictx-out"),
            cache_dir: None,
            seeds: vec![1, 2, 3, 4, 5],
            split: SplitSection::default(),
            features: FeaturesSection::default(),
            triplets: TripletSection::default(),
            cse: CseSection::default(),
            graph: GraphSection::default(),
            gat: GatSection::default(),
            probe: ProbeSection::default(),
            run: RunSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::parse(&read_text(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &mut self.corpus.path {
            resolve(base, p);
        }
        if let FeaturesSection::File { path } = &mut self.features {
            resolve(base, path);
        }
        if let Some(p) = &mut self.graph.lexicon {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
        if let Some(p) = &mut self.cache_dir {
            resolve(base, p);
        }
    }

    /// Checks ranges and that every referenced input file exists.
    pub fn validate(&self) -> Result<()> {
        match (&self.corpus.path, &self.corpus.synthetic) {
            (Some(p), None) => require_file(p, "corpus")?,
            (None, Some(s)) => s.to_core().validate()?,
            _ => return Err(Error::Config("set exactly one of corpus.path and [corpus.synthetic]".into())),
        }
        match &self.features {
            FeaturesSection::File { path } => require_file(path, "features")?,
            FeaturesSection::Hash { dim } if *dim == 0 => {
                return Err(Error::Config("features.dim must be positive".into()))
            }
            FeaturesSection::Hash { .. } => {}
        }
        if let Some(p) = &self.graph.lexicon {
            require_file(p, "graph.lexicon")?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.split.k < 3 {
            return Err(Error::Config("split.k must be at least 3".into()));
        }
        self.pipeline_with(GraphConfig {
            theta_sim: self.graph.theta_sim,
            ..GraphConfig::default()
        })
        .validate()?;
        Ok(())
    }

    fn pipeline_with(&self, graph: GraphConfig) -> PipelineConfig {
        PipelineConfig {
            triplet_cap: self.triplets.cap(),
            cse: self.cse.to_core(),
            graph,
            gat: self.gat.to_core(),
            probe: ProbeConfig {
                l2: self.probe.l2,
                tolerance: self.probe.tolerance,
                max_iter: self.probe.max_iter,
            },
            source_feature: self.run.source_feature,
            without_cse_baseline: self.run.without_cse_baseline,
        }
    }

    /// Core pipeline settings; reads the lexicon file if one is configured.
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        Ok(self.pipeline_with(self.graph.to_core()?))
    }

    /// SHA-256 of the canonical JSON form of everything that affects
    /// results. Input files enter by content digest rather than location;
    /// output and cache locations and the ablation switch are excluded.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = |p: &Path| -> Result<PathBuf> {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Ok(PathBuf::from(format!("sha256:{}", sha256_hex(&bytes))))
        };
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.cache_dir = None;
        canonical.run.ablation = false;
        if let Some(p) = &mut canonical.corpus.path {
            *p = digest(p)?;
        }
        if let FeaturesSection::File { path } = &mut canonical.features {
            *path = digest(path)?;
        }
        if let Some(p) = &mut canonical.graph.lexicon {
            *p = digest(p)?;
        }
        let json = serde_json::to_string(&canonical).expect("config serialises");
        Ok(sha256_hex(json.as_bytes()))
    }
}

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} file {} does not exist", p.display())))
    }
}
