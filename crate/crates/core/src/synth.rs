//! Synthetic event corpora with a planted, context-dependent bias signal.
//!
//! Every event has a target entity that only its biased sentences mention.
//! Only a share of the biased sentences (`cue_rate`) also carry the event's
//! cue words; the rest read like neutral text, so their own words cannot
//! identify them but the sentences sharing their entity can. Neutral
//! sentences mention background entities of their own. Sentence `i` of every
//! article paraphrases the same event fact, which gives label-independent
//! similarity clusters across articles, and articles contain discourse
//! openers and verb/deverbal-noun pairs.
//!
//! Words are made-up three-syllable strings ending in a vowel, so they never
//! collide with the markers or trigger the deverbal heuristic by accident.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, Label, SentenceRecord};
use crate::{seed, Error, Result};

const CONSONANTS: &[u8] = b"bdkmnprt";
const VOWELS: &[u8] = b"aiou";
const SYLLABLES: usize = 32;
/// Number of distinct pseudo-words.
pub const MAX_WORDS: usize = SYLLABLES * SYLLABLES * SYLLABLES;

pub const SOURCES: &[&str] = &["fox", "nyt", "hpo"];

const MARKERS: &[&str] = &["However", "Meanwhile", "Moreover", "Nevertheless", "Still"];

const DEVERBAL_PAIRS: &[(&str, &str)] = &[
    ("resigned", "resignation"),
    ("announced", "announcement"),
    ("approved", "approval"),
    ("failed", "failure"),
    ("agreed", "agreement"),
    ("accepted", "acceptance"),
    ("rejected", "rejection"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_events: usize,
    pub articles_per_event: usize,
    pub sentences_per_article: usize,
    /// Probability that a sentence is biased.
    pub bias_rate: f64,
    /// Probability that a biased sentence carries the cue words.
    pub cue_rate: f64,
    pub cue_vocab: usize,
    pub neutral_vocab: usize,
    pub name_vocab: usize,
    /// Words per paraphrased fact.
    pub fact_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_events: 120,
            articles_per_event: 3,
            sentences_per_article: 12,
            bias_rate: 0.15,
            cue_rate: 0.85,
            cue_vocab: 6,
            neutral_vocab: 3000,
            name_vocab: 600,
            fact_words: 2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_events == 0 || self.articles_per_event == 0 || self.sentences_per_article == 0 {
            return Err(Error::Argument("event, article and sentence counts must be positive".into()));
        }
        if !(self.bias_rate > 0.0 && self.bias_rate < 1.0) {
            return Err(Error::Argument("bias_rate must be in (0, 1)".into()));
        }
        if !(self.cue_rate > 0.0 && self.cue_rate <= 1.0) {
            return Err(Error::Argument("cue_rate must be in (0, 1]".into()));
        }
        if self.cue_vocab < 2 || self.neutral_vocab < 2 * self.fact_words.max(4) || self.name_vocab < 2 {
            return Err(Error::Argument(format!(
                "vocabulary too small: need cue >= 2, neutral >= {}, names >= 2",
                2 * self.fact_words.max(4)
            )));
        }
        if self.fact_words == 0 {
            return Err(Error::Argument("fact_words must be positive".into()));
        }
        if self.cue_vocab + self.neutral_vocab + self.name_vocab > MAX_WORDS {
            return Err(Error::Argument(format!("total vocabulary exceeds {MAX_WORDS} words")));
        }
        Ok(())
    }
}

/// The `index`-th pseudo-word.
pub fn pseudo_word(index: usize) -> String {
    assert!(index < MAX_WORDS, "pseudo-word index out of range");
    let mut s = String::with_capacity(6);
    let mut rest = index;
    for _ in 0..3 {
        let syl = rest % SYLLABLES;
        rest /= SYLLABLES;
        s.push(CONSONANTS[syl / VOWELS.len()] as char);
        s.push(VOWELS[syl % VOWELS.len()] as char);
    }
    s
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Overt,
    Covert,
    Neutral,
}

/// Background entities per event.
const BACKGROUND: usize = 3;

struct Vocab<'a> {
    config: &'a SynthConfig,
}

impl Vocab<'_> {
    fn neutral<R: Rng>(&self, rng: &mut R) -> String {
        pseudo_word(self.config.cue_vocab + rng.gen_range(0..self.config.neutral_vocab))
    }

    fn name(&self, i: usize) -> String {
        capitalize(&pseudo_word(self.config.cue_vocab + self.config.neutral_vocab + i))
    }
}

/// Deterministic per seed; see the module docs for the generative story.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = seed::rng(config.seed);
    let vocab = Vocab { config };
    let n_sent = config.articles_per_event * config.sentences_per_article;
    let mut records = Vec::with_capacity(config.n_events * n_sent);
    let mut next_id = 0u64;

    for event in 0..config.n_events {
        let facts: Vec<Vec<String>> = (0..config.sentences_per_article)
            .map(|_| (0..config.fact_words).map(|_| vocab.neutral(&mut rng)).collect())
            .collect();

        let roles: Vec<Role> = (0..n_sent)
            .map(|_| {
                if rng.gen::<f64>() >= config.bias_rate {
                    Role::Neutral
                } else if rng.gen::<f64>() < config.cue_rate {
                    Role::Overt
                } else {
                    Role::Covert
                }
            })
            .collect();
        // entity 0 is the target, 1..=BACKGROUND belong to neutral sentences;
        // names are distinct within the event whenever the pool allows it
        let n_names = (BACKGROUND + 1).min(config.name_vocab);
        let picks = rand::seq::index::sample(&mut rng, config.name_vocab, n_names).into_vec();
        let name_of = |e: usize| vocab.name(picks[e % n_names]);
        let mentions: Vec<Vec<usize>> = roles
            .iter()
            .map(|role| match role {
                Role::Neutral if rng.gen::<f64>() < 0.4 => vec![rng.gen_range(1..=BACKGROUND)],
                Role::Neutral => Vec::new(),
                _ => vec![0],
            })
            .collect();

        for a in 0..config.articles_per_event {
            let article_id = (event * config.articles_per_event + a) as u64;
            let source = SOURCES[(event + a) % SOURCES.len()];
            let deverbal = DEVERBAL_PAIRS.choose(&mut rng).expect("non-empty");
            let (verb_at, noun_at) = if config.sentences_per_article >= 2 && rng.gen::<f64>() < 0.5 {
                let v = rng.gen_range(0..config.sentences_per_article - 1);
                (Some(v), Some(rng.gen_range(v + 1..config.sentences_per_article)))
            } else {
                (None, None)
            };
            for s in 0..config.sentences_per_article {
                let slot = a * config.sentences_per_article + s;
                let role = roles[slot];
                let mut words: Vec<String> = Vec::new();
                let marker = s > 0 && rng.gen::<f64>() < 0.2;
                words.push(capitalize(&vocab.neutral(&mut rng)));
                words.extend(facts[s].iter().cloned());
                if verb_at == Some(s) {
                    words.push(deverbal.0.to_string());
                }
                if noun_at == Some(s) {
                    words.push(deverbal.1.to_string());
                }
                if role == Role::Overt {
                    words.extend(rand::seq::index::sample(&mut rng, config.cue_vocab, 2).into_iter().map(pseudo_word));
                }
                let mut entities = Vec::new();
                for &e in &mentions[slot] {
                    let name = name_of(e);
                    words.push(vocab.neutral(&mut rng));
                    words.push(name.clone());
                    entities.push(name);
                }
                words.push(vocab.neutral(&mut rng));
                let body = words.join(" ");
                let text = if marker {
                    let m = MARKERS.choose(&mut rng).expect("non-empty");
                    let mut b = body;
                    // the opener word loses its capital after the marker
                    let first_len = b.find(' ').unwrap_or(b.len());
                    let lowered = b[..first_len].to_lowercase();
                    b.replace_range(..first_len, &lowered);
                    format!("{m}, {b}.")
                } else {
                    format!("{body}.")
                };
                records.push(SentenceRecord {
                    sentence_id: next_id,
                    event_id: event as u64,
                    article_id,
                    source: source.to_string(),
                    sent_index: s as u32,
                    text,
                    label: if role == Role::Neutral { Label::NonBiased } else { Label::Biased },
                    entities: Some(entities),
                });
                next_id += 1;
            }
        }
    }
    Corpus::new(records)
}
