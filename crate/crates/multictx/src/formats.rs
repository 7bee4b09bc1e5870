//! On-disk formats: JSONL corpora, embedding tables, triplet and edge lists,
//! GraphML, fold plans and marker lexicons.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use multictx_core::corpus::{Fold, StatsSummary};
use multictx_core::graph::DeverbalWitness;
use multictx_core::text::MarkerLexicon;
use multictx_core::triplets::Triplet;
use multictx_core::{Corpus, EdgeTypes, EmbeddingTable, FoldPlan, Label, SentenceGraph, SentenceRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `contents`, creating parent directories as needed.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    sentence_id: u64,
    event_id: u64,
    article_id: u64,
    source: String,
    sent_index: u32,
    text: String,
    label: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<Vec<String>>,
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let mut records = Vec::new();
    for (line, l) in content_lines(text) {
        let r: RecordLine = serde_json::from_str(l).map_err(|e| Error::parse(path, line, e.to_string()))?;
        let label = Label::from_int(r.label).ok_or_else(|| {
            Error::parse(
                path,
                line,
                format!("sentence {}: label {} is not 0 or 1", r.sentence_id, r.label),
            )
        })?;
        records.push(SentenceRecord {
            sentence_id: r.sentence_id,
            event_id: r.event_id,
            article_id: r.article_id,
            source: r.source,
            sent_index: r.sent_index,
            text: r.text,
            label,
            entities: r.entities,
        });
    }
    Ok(Corpus::new(records)?)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(&read_text(path)?, path)
}

/// One JSON object per line in canonical corpus order.
pub fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for r in corpus.sentences() {
        let line = RecordLine {
            sentence_id: r.sentence_id,
            event_id: r.event_id,
            article_id: r.article_id,
            source: r.source.clone(),
            sent_index: r.sent_index,
            text: r.text.clone(),
            label: i64::from(r.label.as_int()),
            entities: r.entities.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain record serialises"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_text(path, &corpus_to_jsonl(corpus))
}

#[derive(Debug, Serialize)]
struct StatsJson<'a> {
    sentences: usize,
    biased: usize,
    events: usize,
    articles: usize,
    sources: usize,
    per_event: &'a std::collections::BTreeMap<u64, usize>,
}

pub fn stats_to_json(stats: &StatsSummary) -> String {
    let s = StatsJson {
        sentences: stats.sentences,
        biased: stats.biased,
        events: stats.events,
        articles: stats.articles,
        sources: stats.sources,
        per_event: &stats.per_event,
    };
    serde_json::to_string_pretty(&s).expect("plain struct serialises") + "\n"
}

/// Header `N D`, then `id v1 … vD` per row. Values use the shortest decimal
/// form that parses back to the same double.
pub fn embeddings_to_text(table: &EmbeddingTable) -> String {
    let mut out = format!("{} {}\n", table.len(), table.dim());
    for (id, v) in table.rows() {
        let _ = write!(out, "{id}");
        for x in v {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "missing \"N D\" header"))?;
    let nums: Vec<&str> = header.split_whitespace().collect();
    let (n, dim) = match nums.as_slice() {
        [n, d] => match (n.parse::<usize>(), d.parse::<usize>()) {
            (Ok(n), Ok(d)) if d > 0 => (n, d),
            _ => return Err(Error::parse(path, hline, format!("bad header {header:?}"))),
        },
        _ => return Err(Error::parse(path, hline, format!("bad header {header:?}"))),
    };
    let mut table = EmbeddingTable::new(dim);
    let mut row = vec![0.0; dim];
    for (line, l) in lines {
        let mut fields = l.split_whitespace();
        let id_field = fields.next().unwrap_or("");
        let id: u64 = id_field
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad sentence id {id_field:?}")))?;
        let mut count = 0;
        for f in fields {
            if count == dim {
                return Err(Error::parse(path, line, format!("more than {dim} values")));
            }
            let x: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, line, format!("non-numeric value {f:?}")))?;
            if !x.is_finite() {
                return Err(Error::parse(path, line, format!("non-finite value {f:?}")));
            }
            row[count] = x;
            count += 1;
        }
        if count != dim {
            return Err(Error::parse(path, line, format!("{count} values, expected {dim}")));
        }
        if table.get(id).is_some() {
            return Err(Error::parse(path, line, format!("duplicate id {id}")));
        }
        table.push(id, &row)?;
    }
    if table.len() != n {
        return Err(Error::format(path, format!("header declares {n} rows, found {}", table.len())));
    }
    Ok(table)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    parse_embeddings(&read_text(path)?, path)
}

pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    write_text(path, &embeddings_to_text(table))
}

pub fn triplets_to_tsv(triplets: &[Triplet]) -> String {
    let mut out = String::new();
    for t in triplets {
        let _ = writeln!(out, "{}\t{}\t{}", t.anchor_id, t.positive_id, t.negative_id);
    }
    out
}

pub fn parse_triplets(text: &str, path: &Path) -> Result<Vec<Triplet>> {
    content_lines(text)
        .map(|(line, l)| {
            let ids: Vec<u64> = l
                .split('\t')
                .map(|f| f.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, line, format!("bad triplet {l:?}")))?;
            match ids.as_slice() {
                &[a, p, n] => Ok(Triplet::new(a, p, n)),
                _ => Err(Error::parse(path, line, format!("expected 3 ids, found {}", ids.len()))),
            }
        })
        .collect()
}

pub fn load_triplets(path: &Path) -> Result<Vec<Triplet>> {
    parse_triplets(&read_text(path)?, path)
}

const EDGE_HEADER: &str = "source\ttarget\ttypes";

/// Tab-separated `u v types` with sentence ids and comma-joined type numbers.
/// Type-1 witnesses follow as `#witness earlier later` comment lines.
pub fn edge_list_to_tsv(graph: &SentenceGraph) -> String {
    let mut out = format!("{EDGE_HEADER}\n");
    for (u, v, t) in graph.edges() {
        let _ = writeln!(out, "{}\t{}\t{}", graph.node_id(u), graph.node_id(v), t);
    }
    for w in graph.deverbal_witnesses() {
        let _ = writeln!(out, "#witness\t{}\t{}", w.earlier, w.later);
    }
    out
}

/// Rebuilds a graph over the corpus sentences from an edge list.
pub fn parse_edge_list(text: &str, path: &Path, corpus: &Corpus) -> Result<SentenceGraph> {
    let mut edges = Vec::new();
    let mut witnesses = Vec::new();
    for (line, l) in content_lines(text) {
        if line == 1 && l.trim() == EDGE_HEADER {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
        let bad = || Error::parse(path, line, format!("bad edge line {l:?}"));
        if fields.first() == Some(&"#witness") {
            let [_, a, b] = fields.as_slice() else { return Err(bad()) };
            witnesses.push(DeverbalWitness {
                earlier: a.parse().map_err(|_| bad())?,
                later: b.parse().map_err(|_| bad())?,
            });
            continue;
        }
        let [u, v, t] = fields.as_slice() else { return Err(bad()) };
        let types: EdgeTypes = t.parse().map_err(|e: multictx_core::Error| Error::parse(path, line, e.to_string()))?;
        if types.is_empty() {
            return Err(Error::parse(path, line, "edge without types"));
        }
        edges.push((u.parse::<u64>().map_err(|_| bad())?, v.parse::<u64>().map_err(|_| bad())?, types));
    }
    let nodes = corpus.sentences().iter().map(|r| (r.sentence_id, r.event_id)).collect();
    let graph = SentenceGraph::from_parts(nodes, edges).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(graph.with_witnesses(witnesses))
}

pub fn load_edge_list(path: &Path, corpus: &Corpus) -> Result<SentenceGraph> {
    parse_edge_list(&read_text(path)?, path, corpus)
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// GraphML with `source`, `label` and `event_id` node attributes and a
/// `types` edge attribute.
pub fn graph_to_graphml(graph: &SentenceGraph, corpus: &Corpus) -> Result<String> {
    let mut out = String::from(concat!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n",
        "  <key id=\"source\" for=\"node\" attr.name=\"source\" attr.type=\"string\"/>\n",
        "  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"int\"/>\n",
        "  <key id=\"event_id\" for=\"node\" attr.name=\"event_id\" attr.type=\"long\"/>\n",
        "  <key id=\"types\" for=\"edge\" attr.name=\"types\" attr.type=\"string\"/>\n",
        "  <graph id=\"G\" edgedefault=\"undirected\">\n",
    ));
    for &id in graph.node_ids() {
        let r = corpus.get(id).ok_or(multictx_core::Error::MissingEmbedding(id))?;
        let _ = writeln!(
            out,
            "    <node id=\"n{id}\"><data key=\"source\">{}</data><data key=\"label\">{}</data><data key=\"event_id\">{}</data></node>",
            xml_escape(&r.source),
            r.label.as_int(),
            r.event_id
        );
    }
    for (u, v, t) in graph.edges() {
        let _ = writeln!(
            out,
            "    <edge source=\"n{}\" target=\"n{}\"><data key=\"types\">{t}</data></edge>",
            graph.node_id(u),
            graph.node_id(v)
        );
    }
    out.push_str("  </graph>\n</graphml>\n");
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FoldJson {
    train_events: BTreeSet<u64>,
    val_events: BTreeSet<u64>,
    test_events: BTreeSet<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FoldPlanJson {
    k: usize,
    folds: Vec<FoldJson>,
}

pub fn folds_to_json(plan: &FoldPlan) -> String {
    let json = FoldPlanJson {
        k: plan.k(),
        folds: plan
            .folds
            .iter()
            .map(|f| FoldJson {
                train_events: f.train_events.clone(),
                val_events: f.val_events.clone(),
                test_events: f.test_events.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&json).expect("plain struct serialises") + "\n"
}

pub fn parse_folds(text: &str, path: &Path) -> Result<FoldPlan> {
    let json: FoldPlanJson = serde_json::from_str(text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    if json.k != json.folds.len() {
        return Err(Error::format(path, format!("k = {} but {} folds listed", json.k, json.folds.len())));
    }
    Ok(FoldPlan {
        folds: json
            .folds
            .into_iter()
            .map(|f| Fold {
                train_events: f.train_events,
                val_events: f.val_events,
                test_events: f.test_events,
            })
            .collect(),
    })
}

/// Loads a plan and checks it against `corpus`.
pub fn load_folds(path: &Path, corpus: &Corpus) -> Result<FoldPlan> {
    let plan = parse_folds(&read_text(path)?, path)?;
    plan.validate(corpus).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(plan)
}

pub fn load_lexicon(path: &Path) -> Result<MarkerLexicon> {
    MarkerLexicon::parse(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))
}
