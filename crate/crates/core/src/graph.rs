//! Relational sentence graph.
//!
//! Four edge families connect sentences, and only ever sentences of the same
//! event:
//!
//! | type | name            | scope                          | trigger                                   |
//! |------|-----------------|--------------------------------|-------------------------------------------|
//! | 1    | deverbal ref    | later sentences of the article | verb in the earlier, deverbal noun later  |
//! | 2    | discourse mark  | next sentence of the article   | next sentence opens with a marker         |
//! | 3    | entity cont.    | whole event                    | shared entity                             |
//! | 4    | semantic sim.   | whole event                    | cosine ≥ θ, mutual top-k                  |
//!
//! Edges are undirected; a pair found by several rules carries all their types.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::corpus::Corpus;
use crate::encoder::EmbeddingTable;
use crate::linalg;
use crate::text::{self, ArticleContext, MarkerLexicon, TokenizedSentence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    DeverbalRef = 1,
    DiscourseMarker = 2,
    EntityCont = 3,
    SemanticSim = 4,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [
        EdgeType::DeverbalRef,
        EdgeType::DiscourseMarker,
        EdgeType::EntityCont,
        EdgeType::SemanticSim,
    ];

    pub fn from_number(n: u8) -> Option<EdgeType> {
        EdgeType::ALL.get(usize::from(n).wrapping_sub(1)).copied()
    }

    pub fn number(self) -> u8 {
        self as u8
    }
}

/// A set of edge types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct EdgeTypes(u8);

impl EdgeTypes {
    pub const NONE: EdgeTypes = EdgeTypes(0);
    pub const ALL: EdgeTypes = EdgeTypes(0b1111);

    pub fn of(types: &[EdgeType]) -> EdgeTypes {
        types.iter().fold(EdgeTypes::NONE, |s, &t| s.with(t))
    }

    fn bit(t: EdgeType) -> u8 {
        1 << (t.number() - 1)
    }

    pub fn with(self, t: EdgeType) -> EdgeTypes {
        EdgeTypes(self.0 | Self::bit(t))
    }

    pub fn contains(self, t: EdgeType) -> bool {
        self.0 & Self::bit(t) != 0
    }

    pub fn intersect(self, other: EdgeTypes) -> EdgeTypes {
        EdgeTypes(self.0 & other.0)
    }

    pub fn union(self, other: EdgeTypes) -> EdgeTypes {
        EdgeTypes(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = EdgeType> {
        EdgeType::ALL.into_iter().filter(move |&t| self.contains(t))
    }
}

/// Comma-separated type numbers, e.g. `1,3`.
impl fmt::Display for EdgeTypes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", t.number())?;
        }
        Ok(())
    }
}

impl FromStr for EdgeTypes {
    type Err = Error;

    fn from_str(s: &str) -> Result<EdgeTypes> {
        let mut set = EdgeTypes::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let t = part
                .parse::<u8>()
                .ok()
                .and_then(EdgeType::from_number)
                .ok_or_else(|| Error::Argument(format!("unknown edge type {part:?}")))?;
            set = set.with(t);
        }
        Ok(set)
    }
}

/// A Type-1 edge's discovery record: a verb form in `earlier` and a deverbal
/// noun in `later`, same article, `later` after `earlier`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DeverbalWitness {
    pub earlier: u64,
    pub later: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceGraph {
    node_ids: Vec<u64>,
    node_events: Vec<u64>,
    index: BTreeMap<u64, usize>,
    /// Sorted by neighbour index.
    adjacency: Vec<Vec<(usize, EdgeTypes)>>,
    witnesses: Vec<DeverbalWitness>,
}

impl SentenceGraph {
    /// Builds a graph from nodes `(sentence_id, event_id)` and undirected
    /// edges; types of repeated pairs are merged.
    pub fn from_parts(
        nodes: Vec<(u64, u64)>,
        edges: impl IntoIterator<Item = (u64, u64, EdgeTypes)>,
    ) -> Result<SentenceGraph> {
        let mut index = BTreeMap::new();
        for (i, &(id, _)) in nodes.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::Validation(format!("duplicate graph node {id}")));
            }
        }
        let mut merged: BTreeMap<(usize, usize), EdgeTypes> = BTreeMap::new();
        for (a, b, types) in edges {
            let lookup = |id: u64| {
                index
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("edge endpoint {id} is not a node")))
            };
            let (u, v) = (lookup(a)?, lookup(b)?);
            if u == v {
                return Err(Error::Validation(format!("self-loop on node {a}")));
            }
            if nodes[u].1 != nodes[v].1 {
                return Err(Error::Validation(format!(
                    "edge {a}-{b} crosses events {} and {}",
                    nodes[u].1, nodes[v].1
                )));
            }
            if types.is_empty() {
                return Err(Error::Validation(format!("edge {a}-{b} has no type")));
            }
            let key = (u.min(v), u.max(v));
            let e = merged.entry(key).or_default();
            *e = e.union(types);
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (&(u, v), &t) in &merged {
            adjacency[u].push((v, t));
            adjacency[v].push((u, t));
        }
        for list in &mut adjacency {
            list.sort_unstable_by_key(|&(n, _)| n);
        }
        let (node_ids, node_events) = nodes.into_iter().unzip();
        Ok(SentenceGraph {
            node_ids,
            node_events,
            index,
            adjacency,
            witnesses: Vec::new(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.node_ids
    }

    pub fn node_id(&self, u: usize) -> u64 {
        self.node_ids[u]
    }

    pub fn node_event(&self, u: usize) -> u64 {
        self.node_events[u]
    }

    pub fn node_index(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, EdgeTypes)] {
        &self.adjacency[u]
    }

    pub fn edge_types(&self, u: usize, v: usize) -> Option<EdgeTypes> {
        let list = &self.adjacency[u];
        list.binary_search_by_key(&v, |&(n, _)| n).ok().map(|i| list[i].1)
    }

    /// Each undirected edge once, as `(u, v, types)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, EdgeTypes)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, list)| {
            list.iter()
                .filter(move |&&(v, _)| v > u)
                .map(move |&(v, t)| (u, v, t))
        })
    }

    pub fn deverbal_witnesses(&self) -> &[DeverbalWitness] {
        &self.witnesses
    }

    /// Replaces the Type-1 witness records, e.g. when reloading a graph.
    pub fn with_witnesses(mut self, mut witnesses: Vec<DeverbalWitness>) -> SentenceGraph {
        witnesses.sort_unstable();
        witnesses.dedup();
        self.witnesses = witnesses;
        self
    }

    /// Count of edges carrying each type, indexed by `type - 1`.
    pub fn type_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for (_, _, t) in self.edges() {
            for ty in t.iter() {
                counts[usize::from(ty.number() - 1)] += 1;
            }
        }
        counts
    }

    /// Graph restricted to nodes satisfying `keep`, in the original order.
    pub fn induced_subgraph(&self, keep: impl Fn(u64) -> bool) -> SentenceGraph {
        let nodes: Vec<(u64, u64)> = self
            .node_ids
            .iter()
            .zip(&self.node_events)
            .filter(|(&id, _)| keep(id))
            .map(|(&id, &e)| (id, e))
            .collect();
        let kept: BTreeSet<u64> = nodes.iter().map(|&(id, _)| id).collect();
        let edges: Vec<(u64, u64, EdgeTypes)> = self
            .edges()
            .map(|(u, v, t)| (self.node_ids[u], self.node_ids[v], t))
            .filter(|(a, b, _)| kept.contains(a) && kept.contains(b))
            .collect();
        let mut g = SentenceGraph::from_parts(nodes, edges).expect("subgraph of a valid graph");
        g.witnesses = self
            .witnesses
            .iter()
            .filter(|w| kept.contains(&w.earlier) && kept.contains(&w.later))
            .copied()
            .collect();
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    /// Minimum cosine similarity for a Type-4 edge.
    pub theta_sim: f64,
    /// Each node keeps at most this many Type-4 partners (mutual top-k).
    pub top_k_sim: Option<usize>,
    pub lexicon: MarkerLexicon,
    /// How many downstream sentences a Type-1 link may reach; `None` = rest of article.
    pub deverbal_window: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            theta_sim: 0.65,
            top_k_sim: Some(5),
            lexicon: MarkerLexicon::default(),
            deverbal_window: None,
        }
    }
}

/// Builds the four edge families event by event.
pub fn build_event_graph(
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
    config: &GraphConfig,
) -> Result<SentenceGraph> {
    embeddings.covers(corpus)?;
    let records = corpus.sentences();
    let tokens: Vec<TokenizedSentence> = records
        .iter()
        .map(|r| text::tokenize_sentence(&r.text))
        .collect();

    let mut entities: Vec<BTreeSet<String>> = vec![BTreeSet::new(); records.len()];
    for (_, positions) in corpus.articles() {
        let ctx = ArticleContext::new(positions.iter().map(|&p| &tokens[p]));
        for &p in positions {
            entities[p] = match &records[p].entities {
                Some(_) => text::extract_entities(&records[p], &ctx),
                None => text::entities_from_tokens(&tokens[p], &ctx),
            };
        }
    }

    let mut edges: BTreeMap<(usize, usize), EdgeTypes> = BTreeMap::new();
    let mut add = |u: usize, v: usize, t: EdgeType| {
        let e = edges.entry((u.min(v), u.max(v))).or_default();
        *e = e.with(t);
    };
    let mut witnesses = Vec::new();

    for (_, positions) in corpus.articles() {
        // Type 1: verb form here, deverbal noun in a later sentence.
        for (i, &s) in positions.iter().enumerate() {
            let end = match config.deverbal_window {
                Some(w) => (i + 1 + w).min(positions.len()),
                None => positions.len(),
            };
            for &t in &positions[i + 1..end] {
                if text::deverbal_link(&tokens[s], &tokens[t]) {
                    add(s, t, EdgeType::DeverbalRef);
                    witnesses.push(DeverbalWitness {
                        earlier: records[s].sentence_id,
                        later: records[t].sentence_id,
                    });
                }
            }
        }
        // Type 2: next sentence opens with a discourse marker.
        for pair in positions.windows(2) {
            if text::detect_discourse_opener(&tokens[pair[1]], &config.lexicon).is_some() {
                add(pair[0], pair[1], EdgeType::DiscourseMarker);
            }
        }
    }

    for (_, positions) in corpus.events() {
        // Type 3: shared entity anywhere in the event.
        for (i, &u) in positions.iter().enumerate() {
            if entities[u].is_empty() {
                continue;
            }
            for &v in &positions[i + 1..] {
                if !entities[u].is_disjoint(&entities[v]) {
                    add(u, v, EdgeType::EntityCont);
                }
            }
        }
        // Type 4: similarity above threshold, mutual top-k.
        for (u, v) in similarity_pairs(corpus, positions, embeddings, config) {
            add(u, v, EdgeType::SemanticSim);
        }
    }

    let nodes = records.iter().map(|r| (r.sentence_id, r.event_id)).collect();
    let edge_list: Vec<(u64, u64, EdgeTypes)> = edges
        .into_iter()
        .map(|((u, v), t)| (records[u].sentence_id, records[v].sentence_id, t))
        .collect();
    let mut graph = SentenceGraph::from_parts(nodes, edge_list)?;
    witnesses.sort_unstable();
    graph.witnesses = witnesses;
    Ok(graph)
}

fn similarity_pairs(
    corpus: &Corpus,
    positions: &[usize],
    embeddings: &EmbeddingTable,
    config: &GraphConfig,
) -> Vec<(usize, usize)> {
    let records = corpus.sentences();
    let vecs: Vec<&[f64]> = positions
        .iter()
        .map(|&p| embeddings.get(records[p].sentence_id).expect("coverage checked"))
        .collect();
    let n = positions.len();
    let mut candidates: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let c = linalg::cosine(vecs[i], vecs[j]);
            if c >= config.theta_sim {
                candidates[i].push((c, j));
                candidates[j].push((c, i));
            }
        }
    }
    let mut chosen: Vec<BTreeSet<usize>> = Vec::with_capacity(n);
    for list in &mut candidates {
        list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let k = config.top_k_sim.unwrap_or(usize::MAX);
        chosen.push(list.iter().take(k).map(|&(_, j)| j).collect());
    }
    let mut out = Vec::new();
    for i in 0..n {
        for &j in &chosen[i] {
            if j > i && chosen[j].contains(&i) {
                out.push((positions[i], positions[j]));
            }
        }
    }
    out
}

/// Keeps an edge iff it carries a kept type, and strips the other types.
pub fn filter_edges(graph: &SentenceGraph, keep: EdgeTypes) -> Result<SentenceGraph> {
    if keep.is_empty() {
        return Err(Error::Argument("filter needs at least one edge type".into()));
    }
    let mut out = graph.clone();
    for list in &mut out.adjacency {
        list.retain_mut(|(_, t)| {
            *t = t.intersect(keep);
            !t.is_empty()
        });
    }
    if !keep.contains(EdgeType::DeverbalRef) {
        out.witnesses.clear();
    }
    Ok(out)
}
