//! Contrastive triplet mining.
//!
//! For an anchor sentence, a positive shares its event and label but comes
//! from another article; a negative comes from the anchor's own article with
//! the opposite label. Anchors of both labels produce triplets.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Label};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub anchor_id: u64,
    pub positive_id: u64,
    pub negative_id: u64,
}

impl Triplet {
    pub fn new(anchor_id: u64, positive_id: u64, negative_id: u64) -> Triplet {
        Triplet {
            anchor_id,
            positive_id,
            negative_id,
        }
    }

    /// Checks the four triplet invariants against `corpus`.
    pub fn is_valid(&self, corpus: &Corpus) -> bool {
        let (Some(a), Some(p), Some(n)) = (
            corpus.get(self.anchor_id),
            corpus.get(self.positive_id),
            corpus.get(self.negative_id),
        ) else {
            return false;
        };
        let same_event = a.event_id == p.event_id && a.event_id == n.event_id;
        let positive_ok = p.label == a.label && p.article_id != a.article_id;
        let negative_ok = n.label != a.label && n.article_id == a.article_id;
        let distinct = self.anchor_id != self.positive_id
            && self.anchor_id != self.negative_id
            && self.positive_id != self.negative_id;
        same_event && positive_ok && negative_ok && distinct
    }
}

/// Mines every valid triplet, in corpus order of anchors and then positives
/// and negatives. With `cap_per_anchor`, each anchor keeps a seeded uniform
/// subsample of at most that many of its triplets (order preserved).
pub fn mine_triplets(corpus: &Corpus, cap_per_anchor: Option<usize>, seed: u64) -> Vec<Triplet> {
    let records = corpus.sentences();
    let mut out = Vec::new();
    for (_, event) in corpus.events() {
        for &a in event {
            let anchor = &records[a];
            let positives: Vec<u64> = event
                .iter()
                .map(|&p| &records[p])
                .filter(|p| p.label == anchor.label && p.article_id != anchor.article_id)
                .map(|p| p.sentence_id)
                .collect();
            let negatives: Vec<u64> = corpus
                .article_positions(anchor.article_id)
                .iter()
                .map(|&n| &records[n])
                .filter(|n| n.label != anchor.label)
                .map(|n| n.sentence_id)
                .collect();
            let total = positives.len() * negatives.len();
            if total == 0 {
                continue;
            }
            let make = |i: usize| {
                Triplet::new(
                    anchor.sentence_id,
                    positives[i / negatives.len()],
                    negatives[i % negatives.len()],
                )
            };
            match cap_per_anchor {
                Some(cap) if cap < total => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(anchor.sentence_id);
                    let mut picked = index::sample(&mut rng, total, cap).into_vec();
                    picked.sort_unstable();
                    out.extend(picked.into_iter().map(make));
                }
                _ => out.extend((0..total).map(make)),
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TripletStats {
    pub total: usize,
    /// Distinct anchor sentences.
    pub anchors: usize,
    /// Fraction of non-biased sentences that serve as an anchor.
    pub coverage_non_biased: f64,
    /// Fraction of biased sentences that serve as an anchor.
    pub coverage_biased: f64,
}

pub fn triplet_stats(triplets: &[Triplet], corpus: &Corpus) -> Result<TripletStats> {
    let mut anchors = BTreeSet::new();
    for t in triplets {
        for id in [t.anchor_id, t.positive_id, t.negative_id] {
            if corpus.get(id).is_none() {
                return Err(Error::Validation(format!(
                    "triplet references unknown sentence {id}"
                )));
            }
        }
        anchors.insert(t.anchor_id);
    }
    let mut totals = [0usize; 2];
    let mut covered = [0usize; 2];
    for r in corpus.sentences() {
        let c = r.label.as_int() as usize;
        totals[c] += 1;
        if anchors.contains(&r.sentence_id) {
            covered[c] += 1;
        }
    }
    let frac = |c: usize| {
        if totals[c] == 0 {
            0.0
        } else {
            covered[c] as f64 / totals[c] as f64
        }
    };
    Ok(TripletStats {
        total: triplets.len(),
        anchors: anchors.len(),
        coverage_non_biased: frac(Label::NonBiased as usize),
        coverage_biased: frac(Label::Biased as usize),
    })
}
