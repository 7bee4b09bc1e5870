//! Sentence records, validated corpora and event-wise folds.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::{seed, Error, Result};

/// Binary sentence-level bias label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    NonBiased = 0,
    Biased = 1,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Label> {
        match v {
            0 => Some(Label::NonBiased),
            1 => Some(Label::Biased),
            _ => None,
        }
    }

    pub fn as_int(self) -> u8 {
        self as u8
    }

    pub fn is_biased(self) -> bool {
        self == Label::Biased
    }
}

/// One news sentence with its event/article/source coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub sentence_id: u64,
    pub event_id: u64,
    pub article_id: u64,
    pub source: String,
    pub sent_index: u32,
    pub text: String,
    pub label: Label,
    /// Externally annotated entity strings, when available.
    pub entities: Option<Vec<String>>,
}

/// A validated corpus in canonical `(event_id, article_id, sent_index)` order.
///
/// Positions into [`Corpus::sentences`] are the node indices used by the
/// graph and the GAT.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    sentences: Vec<SentenceRecord>,
    by_id: BTreeMap<u64, usize>,
    events: BTreeMap<u64, Vec<usize>>,
    articles: BTreeMap<u64, Vec<usize>>,
}

impl Corpus {
    /// Validates `records` and builds the index structures.
    pub fn new(mut records: Vec<SentenceRecord>) -> Result<Corpus> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.sentence_id) {
                return Err(Error::Validation(format!(
                    "duplicate sentence_id {}",
                    r.sentence_id
                )));
            }
            if r.text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "sentence {} has empty text",
                    r.sentence_id
                )));
            }
        }

        let mut article_meta: BTreeMap<u64, (u64, &str)> = BTreeMap::new();
        for r in &records {
            match article_meta.get(&r.article_id) {
                None => {
                    article_meta.insert(r.article_id, (r.event_id, r.source.as_str()));
                }
                Some(&(event, source)) => {
                    if event != r.event_id {
                        return Err(Error::Validation(format!(
                            "article {} appears under events {} and {} (sentence {})",
                            r.article_id, event, r.event_id, r.sentence_id
                        )));
                    }
                    if source != r.source {
                        return Err(Error::Validation(format!(
                            "article {} has sources {:?} and {:?} (sentence {})",
                            r.article_id, source, r.source, r.sentence_id
                        )));
                    }
                }
            }
        }

        records.sort_by_key(|r| (r.event_id, r.article_id, r.sent_index));

        let mut by_id = BTreeMap::new();
        let mut events: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        let mut articles: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (pos, r) in records.iter().enumerate() {
            by_id.insert(r.sentence_id, pos);
            events.entry(r.event_id).or_default().push(pos);
            articles.entry(r.article_id).or_default().push(pos);
        }
        for (article, positions) in &articles {
            for (expected, &pos) in positions.iter().enumerate() {
                let r = &records[pos];
                if r.sent_index as usize != expected {
                    return Err(Error::Validation(format!(
                        "article {}: sent_index values are not a contiguous 0..{} range \
                         (found {} at position {}, sentence {})",
                        article,
                        positions.len(),
                        r.sent_index,
                        expected,
                        r.sentence_id
                    )));
                }
            }
        }

        Ok(Corpus {
            sentences: records,
            by_id,
            events,
            articles,
        })
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, sentence_id: u64) -> Option<&SentenceRecord> {
        self.by_id.get(&sentence_id).map(|&p| &self.sentences[p])
    }

    pub fn position(&self, sentence_id: u64) -> Option<usize> {
        self.by_id.get(&sentence_id).copied()
    }

    /// Event ids in ascending order.
    pub fn event_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.keys().copied()
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    /// Positions of an event's sentences, in canonical order.
    pub fn event_positions(&self, event_id: u64) -> &[usize] {
        self.events.get(&event_id).map_or(&[], Vec::as_slice)
    }

    pub fn events(&self) -> impl Iterator<Item = (u64, &[usize])> + '_ {
        self.events.iter().map(|(&e, p)| (e, p.as_slice()))
    }

    /// Article ids in ascending order with their positions sorted by `sent_index`.
    pub fn articles(&self) -> impl Iterator<Item = (u64, &[usize])> + '_ {
        self.articles.iter().map(|(&a, p)| (a, p.as_slice()))
    }

    pub fn article_positions(&self, article_id: u64) -> &[usize] {
        self.articles.get(&article_id).map_or(&[], Vec::as_slice)
    }

    /// Sub-corpus containing only the given events.
    pub fn restrict_to_events(&self, keep: &BTreeSet<u64>) -> Corpus {
        let records = self
            .sentences
            .iter()
            .filter(|r| keep.contains(&r.event_id))
            .cloned()
            .collect();
        // A subset of whole events of a valid corpus is itself valid.
        Corpus::new(records).expect("event restriction preserves corpus invariants")
    }

    pub fn labels(&self) -> Vec<Label> {
        self.sentences.iter().map(|r| r.label).collect()
    }

    pub fn into_records(self) -> Vec<SentenceRecord> {
        self.sentences
    }
}

/// Exact tallies over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StatsSummary {
    pub sentences: usize,
    pub biased: usize,
    pub events: usize,
    pub articles: usize,
    pub sources: usize,
    pub per_event: BTreeMap<u64, usize>,
}

/// Reference counts of the sentence-level BASIL corpus.
pub const BASIL_SENTENCES: usize = 7977;
pub const BASIL_BIASED: usize = 1221;
pub const BASIL_EVENTS: usize = 100;
pub const BASIL_ARTICLES: usize = 300;

impl StatsSummary {
    /// Lists every count that differs from the BASIL reference; empty when
    /// the corpus matches.
    pub fn basil_mismatches(&self) -> Vec<String> {
        let checks = [
            ("sentences", self.sentences, BASIL_SENTENCES),
            ("biased", self.biased, BASIL_BIASED),
            ("events", self.events, BASIL_EVENTS),
            ("articles", self.articles, BASIL_ARTICLES),
        ];
        checks
            .iter()
            .filter(|(_, got, want)| got != want)
            .map(|(name, got, want)| format!("{name}: expected {want}, found {got}"))
            .collect()
    }
}

pub fn corpus_stats(corpus: &Corpus) -> StatsSummary {
    let mut sources = BTreeSet::new();
    let mut per_event = BTreeMap::new();
    let mut biased = 0;
    for r in corpus.sentences() {
        sources.insert(r.source.as_str());
        *per_event.entry(r.event_id).or_insert(0) += 1;
        if r.label.is_biased() {
            biased += 1;
        }
    }
    StatsSummary {
        sentences: corpus.len(),
        biased,
        events: per_event.len(),
        articles: corpus.articles.len(),
        sources: sources.len(),
        per_event,
    }
}

/// Event sets of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fold {
    pub train_events: BTreeSet<u64>,
    pub val_events: BTreeSet<u64>,
    pub test_events: BTreeSet<u64>,
}

/// Which partition of a fold an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Fold {
    pub fn role(&self, event_id: u64) -> Option<Role> {
        if self.train_events.contains(&event_id) {
            Some(Role::Train)
        } else if self.val_events.contains(&event_id) {
            Some(Role::Val)
        } else if self.test_events.contains(&event_id) {
            Some(Role::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Checks the fold invariants against a corpus's event set.
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let all: BTreeSet<u64> = corpus.event_ids().collect();
        let mut tested = BTreeSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            let disjoint = f.train_events.is_disjoint(&f.val_events)
                && f.train_events.is_disjoint(&f.test_events)
                && f.val_events.is_disjoint(&f.test_events);
            if !disjoint {
                return Err(Error::Validation(format!("fold {i}: event sets overlap")));
            }
            let union: BTreeSet<u64> = f
                .train_events
                .iter()
                .chain(&f.val_events)
                .chain(&f.test_events)
                .copied()
                .collect();
            if union != all {
                return Err(Error::Validation(format!(
                    "fold {i}: event sets do not cover the corpus events"
                )));
            }
            for &e in &f.test_events {
                if !tested.insert(e) {
                    return Err(Error::Validation(format!(
                        "event {e} is a test event in more than one fold"
                    )));
                }
            }
        }
        if tested != all {
            return Err(Error::Validation(
                "some events are never used as test events".into(),
            ));
        }
        Ok(())
    }
}

/// Event-wise k-fold plan: events are shuffled with a seeded permutation and
/// cut into `k` contiguous blocks; fold `i` tests on block `i`, validates on
/// block `i + 1 (mod k)` and trains on the rest.
pub fn event_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldPlan> {
    let mut events: Vec<u64> = corpus.event_ids().collect();
    if k < 3 {
        return Err(Error::Argument(format!("k must be at least 3, got {k}")));
    }
    if k > events.len() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the number of events ({})",
            events.len()
        )));
    }
    events.shuffle(&mut seed::rng(seed));

    let base = events.len() / k;
    let extra = events.len() % k;
    let mut blocks: Vec<BTreeSet<u64>> = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        blocks.push(events[start..start + size].iter().copied().collect());
        start += size;
    }

    let folds = (0..k)
        .map(|i| {
            let val = (i + 1) % k;
            let train = blocks
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && j != val)
                .flat_map(|(_, b)| b.iter().copied())
                .collect();
            Fold {
                train_events: train,
                val_events: blocks[val].clone(),
                test_events: blocks[i].clone(),
            }
        })
        .collect();
    Ok(FoldPlan { folds })
}
