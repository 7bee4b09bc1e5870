use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use multictx::checkpoint::{encoder_checkpoint, encoder_from_checkpoint, ssgat_checkpoint, Checkpoint};
use multictx::config::{CseSection, FeaturesSection, GatSection, SynthSection};
use multictx::formats::{self, load_corpus};
use multictx::pipeline::load_base;
use multictx::report::write_reports;
use multictx::{Cache, Driver, Error, Experiment, Result, RunConfig};
use multictx_core::graph::{self, GraphConfig};
use multictx_core::ssgat::{self, NodeMasks};
use multictx_core::{corpus, encoder, eval, synth, triplets, EdgeTypes, Label};

#[derive(Parser)]
#[command(name = "multictx", version, about = "Event-scoped sentence graphs and graph attention for sentence-level bias detection")]
struct Cli {
    /// Seed for commands with a random stage; overrides config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent fold × seed jobs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Cache for trained encoders and cell results.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Tsv,
    Graphml,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file and print its statistics.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Print statistics as JSON.
        #[arg(long)]
        stats: bool,
        /// Fail unless the counts match the BASIL reference.
        #[arg(long)]
        expect_basil: bool,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Event-wise cross-validation folds.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive triplets as tab-separated ids.
    MineTriplets {
        #[arg(long)]
        input: PathBuf,
        /// Per-anchor cap; 0 keeps every triplet.
        #[arg(long, default_value_t = 64)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sentence encoder on mined triplets.
    TrainCse {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        triplets: PathBuf,
        /// hash, hash:<dim> or file:<path>.
        #[arg(long, default_value = "hash")]
        base: String,
        /// TOML with the fields of the [cse] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_params: PathBuf,
    },
    /// Embed every sentence with a trained encoder.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Base features; defaults to the ones the encoder was trained on.
        #[arg(long)]
        base: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the typed sentence graph.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 0.65)]
        theta: f64,
        /// Type-4 partners per node; 0 disables the cap.
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Downstream reach of Type-1 links; 0 means the rest of the article.
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tsv")]
        format: GraphFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep only edges of the listed types.
    Filter {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated type numbers, e.g. 1,2,3.
        #[arg(long)]
        keep: String,
        #[arg(long, value_enum, default_value = "tsv")]
        format: GraphFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the graph attention network for one fold and report test metrics.
    TrainGat {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        folds: PathBuf,
        #[arg(long)]
        fold_id: usize,
        /// TOML with the fields of the [gat] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Test-node predictions as TSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Cross-validate the full pipeline and write the main report.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the six edge-type ablations.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Ingest, split, cross-validate and report in one go.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn toml_file<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&formats::read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
    }
}

fn run_config(cli: &Cli, path: &Path) -> Result<(RunConfig, Driver)> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = &cli.cache_dir {
        cfg.cache_dir = Some(d.clone());
    }
    let driver = Driver {
        workers: cli.workers.unwrap_or(1),
        cache: cfg.cache_dir.clone().map(Cache::new),
    };
    Ok((cfg, driver))
}

fn write_graph(g: &multictx_core::SentenceGraph, c: &multictx_core::Corpus, format: GraphFormat, out: &Path) -> Result<()> {
    let text = match format {
        GraphFormat::Tsv => formats::edge_list_to_tsv(g),
        GraphFormat::Graphml => formats::graph_to_graphml(g, c)?,
    };
    formats::write_text(out, &text)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Ingest {
            input,
            stats,
            expect_basil,
        } => {
            let c = load_corpus(input)?;
            let s = corpus::corpus_stats(&c);
            if *stats {
                print!("{}", formats::stats_to_json(&s));
            } else {
                println!(
                    "{} sentences, {} biased, {} events, {} articles, {} sources",
                    s.sentences, s.biased, s.events, s.articles, s.sources
                );
            }
            let mismatches = s.basil_mismatches();
            if *expect_basil && !mismatches.is_empty() {
                return Err(Error::format(input, format!("not a BASIL-format corpus: {}", mismatches.join("; "))));
            }
        }
        Command::Synth { config, out } => {
            let mut s: SynthSection = match config {
                Some(p) => SynthSection::load(p)?,
                None => SynthSection::default(),
            };
            if let Some(v) = cli.seed {
                s.seed = v;
            }
            let c = synth::generate_synthetic_corpus(&s.to_core())?;
            formats::save_corpus(&c, out)?;
            info!("wrote {} sentences to {}", c.len(), out.display());
        }
        Command::Split { input, k, out } => {
            let c = load_corpus(input)?;
            let plan = corpus::event_folds(&c, *k, seed)?;
            formats::write_text(out, &formats::folds_to_json(&plan))?;
        }
        Command::MineTriplets { input, cap, out } => {
            let c = load_corpus(input)?;
            let ts = triplets::mine_triplets(&c, (*cap > 0).then_some(*cap), seed);
            formats::write_text(out, &formats::triplets_to_tsv(&ts))?;
            info!("{} triplets", ts.len());
        }
        Command::TrainCse {
            corpus,
            triplets,
            base,
            config,
            out_params,
        } => {
            let c = load_corpus(corpus)?;
            let ts = formats::load_triplets(triplets)?;
            let features = FeaturesSection::parse_spec(base)?;
            let table = load_base(&features, &c)?;
            let mut section: CseSection = toml_file(config.as_deref())?;
            if let Some(v) = cli.seed {
                section.seed = v;
            }
            let t = Instant::now();
            let trained = encoder::train_cse(&c, &ts, &table, &section.to_core())?;
            info!("trained encoder on {} triplets in {:.1?}", ts.len(), t.elapsed());
            for (e, l) in trained.loss_trace.iter().enumerate() {
                info!("epoch {e}: loss {l:.6}");
            }
            encoder_checkpoint(&trained.params, &features.spec()).save(out_params)?;
        }
        Command::Embed {
            corpus,
            params,
            base,
            out,
        } => {
            let c = load_corpus(corpus)?;
            let ck = Checkpoint::load(params)?;
            let p = encoder_from_checkpoint(&ck, params)?;
            let spec = match base {
                Some(b) => b.clone(),
                None => ck.meta.get("base").cloned().unwrap_or_else(|| format!("hash:{}", p.input_dim())),
            };
            let table = load_base(&FeaturesSection::parse_spec(&spec)?, &c)?;
            formats::save_embeddings(&encoder::embed_corpus(&c, &table, &p)?, out)?;
        }
        Command::BuildGraph {
            corpus,
            embeddings,
            theta,
            topk,
            window,
            lexicon,
            format,
            out,
        } => {
            let c = load_corpus(corpus)?;
            let emb = formats::load_embeddings(embeddings)?;
            let config = GraphConfig {
                theta_sim: *theta,
                top_k_sim: (*topk > 0).then_some(*topk),
                deverbal_window: (*window > 0).then_some(*window),
                lexicon: match lexicon {
                    Some(p) => formats::load_lexicon(p)?,
                    None => Default::default(),
                },
            };
            let g = graph::build_event_graph(&c, &emb, &config)?;
            info!("{} nodes, {} edges, per type {:?}", g.num_nodes(), g.num_edges(), g.type_counts());
            write_graph(&g, &c, *format, out)?;
        }
        Command::Filter {
            graph: path,
            corpus,
            keep,
            format,
            out,
        } => {
            let c = load_corpus(corpus)?;
            let g = formats::load_edge_list(path, &c)?;
            let keep: EdgeTypes = keep.parse()?;
            write_graph(&graph::filter_edges(&g, keep)?, &c, *format, out)?;
        }
        Command::TrainGat {
            graph: gpath,
            features,
            corpus,
            folds,
            fold_id,
            config,
            out,
            predictions,
        } => {
            let c = load_corpus(corpus)?;
            let g = formats::load_edge_list(gpath, &c)?;
            let x = formats::load_embeddings(features)?;
            let plan = formats::load_folds(folds, &c)?;
            let fold = plan
                .folds
                .get(*fold_id)
                .ok_or_else(|| Error::Config(format!("fold {fold_id} out of range 0..{}", plan.k())))?;
            let mut section: GatSection = toml_file(config.as_deref())?;
            if let Some(v) = cli.seed {
                section.seed = v;
            }
            let labels: Vec<Label> = g.node_ids().iter().map(|&id| c.get(id).expect("graph built over corpus").label).collect();
            let masks = NodeMasks::from_fold(&g, fold);
            let trained = ssgat::train_ssgat(&g, &x, &labels, &masks, &section.to_core())?;
            let pred = ssgat::predict_nodes(&trained.params, &g, &x, &masks.test)?;
            let gold: Vec<Label> = pred.nodes.iter().map(|&u| labels[u]).collect();
            let m = eval::precision_recall_f1(&pred.labels, &gold)?;
            println!(
                "fold {fold_id}: best epoch {:?} of {}, test precision {:.4} recall {:.4} F1 {:.4}",
                trained.best_epoch,
                trained.trace.len(),
                m.precision,
                m.recall,
                m.f1
            );
            ssgat_checkpoint(&trained.params).save(out)?;
            if let Some(p) = predictions {
                let mut tsv = String::from("sentence_id\tp_nonbiased\tp_biased\tpredicted\tgold\n");
                for ((id, prob, l), gl) in pred.by_sentence(&g).zip(&gold) {
                    tsv.push_str(&format!("{id}\t{}\t{}\t{}\t{}\n", prob[0], prob[1], l.as_int(), gl.as_int()));
                }
                formats::write_text(p, &tsv)?;
            }
        }
        Command::Evaluate { config } => {
            let (cfg, driver) = run_config(&cli, config)?;
            let exp = Experiment::from_config(&cfg)?;
            let report = driver.evaluate(&exp)?;
            let files = write_reports(&cfg.output_dir, &report, None)?;
            print!("{}", eval::render_table2(&report));
            info!("report written to {}", files.json.display());
        }
        Command::Ablate { config } => {
            let (cfg, driver) = run_config(&cli, config)?;
            let exp = Experiment::from_config(&cfg)?;
            let ab = driver.ablate(&exp)?;
            let files = write_reports(&cfg.output_dir, &ab.full, Some(&ab))?;
            print!("{}", eval::render_table3(&ab));
            info!("report written to {}", files.json.display());
        }
        Command::Run { config } => {
            let (cfg, driver) = run_config(&cli, config)?;
            let t = Instant::now();
            let exp = Experiment::from_config(&cfg)?;
            let stats = corpus::corpus_stats(&exp.corpus);
            formats::write_text(&cfg.output_dir.join("stats.json"), &formats::stats_to_json(&stats))?;
            formats::write_text(&cfg.output_dir.join("folds.json"), &formats::folds_to_json(&exp.plan))?;
            let (main, ablation) = if cfg.run.ablation {
                let ab = driver.ablate(&exp)?;
                (ab.full.clone(), Some(ab))
            } else {
                (driver.evaluate(&exp)?, None)
            };
            write_reports(&cfg.output_dir, &main, ablation.as_ref())?;
            print!("{}", eval::render_table2(&main));
            if let Some(ab) = &ablation {
                print!("\n{}", eval::render_table3(ab));
            }
            info!("finished in {:.1?}; reports in {}", t.elapsed(), cfg.output_dir.display());
        }
    }
    Ok(())
}
