#![allow(dead_code)]

use multictx_core::{Corpus, Label, SentenceRecord};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "the", "plan", "budget", "officials", "said", "vote", "senate", "rejected", "resign", "resignation",
    "announced", "announcement", "governor", "talks", "deal", "border", "wall", "critics", "praised", "funding",
];
const NAMES: &[&str] = &["Mattis", "Pelosi", "Trump", "Schumer", "Marine", "Mueller"];
const OPENERS: &[&str] = &["However,", "Meanwhile,", "But", "Still,", "In addition,"];
const SOURCES: &[&str] = &["fox", "nyt", "hpo"];

/// Deterministic sentence text mixing plain words, capitalised names and
/// occasional discourse openers.
pub fn sentence_text(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words: Vec<String> = Vec::new();
    if rng.gen_bool(0.25) {
        words.push(OPENERS.choose(&mut rng).unwrap().to_string());
    }
    for _ in 0..rng.gen_range(3..9) {
        if rng.gen_bool(0.2) {
            words.push(NAMES.choose(&mut rng).unwrap().to_string());
        } else {
            words.push(WORDS.choose(&mut rng).unwrap().to_string());
        }
    }
    let mut text = words.join(" ");
    text.push('.');
    text
}

/// `shape[e][a]` lists `(biased, text_seed)` per sentence of article `a` in
/// event `e`. Ids are assigned densely in iteration order.
pub fn corpus_from_shape(shape: &[Vec<Vec<(bool, u64)>>]) -> Corpus {
    let mut records = Vec::new();
    let mut article_id = 0u64;
    for (e, articles) in shape.iter().enumerate() {
        for (a, sentences) in articles.iter().enumerate() {
            for (i, &(biased, text_seed)) in sentences.iter().enumerate() {
                records.push(SentenceRecord {
                    sentence_id: records.len() as u64,
                    event_id: e as u64,
                    article_id,
                    source: SOURCES[a % SOURCES.len()].to_string(),
                    sent_index: i as u32,
                    text: sentence_text(text_seed),
                    label: if biased { Label::Biased } else { Label::NonBiased },
                    entities: None,
                });
            }
            article_id += 1;
        }
    }
    Corpus::new(records).expect("generated corpus is valid")
}

pub fn shape_strategy(
    events: core::ops::RangeInclusive<usize>,
    articles: core::ops::RangeInclusive<usize>,
    sentences: core::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Vec<Vec<Vec<(bool, u64)>>>> {
    let sentence = (prop::bool::weighted(0.3), any::<u64>());
    let article = prop::collection::vec(sentence, sentences);
    let event = prop::collection::vec(article, articles);
    prop::collection::vec(event, events)
}

pub fn corpus_strategy(
    events: core::ops::RangeInclusive<usize>,
    articles: core::ops::RangeInclusive<usize>,
    sentences: core::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Corpus> {
    shape_strategy(events, articles, sentences).prop_map(|s| corpus_from_shape(&s))
}
