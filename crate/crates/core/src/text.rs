//! Lexical signals for edge construction: tokenization, discourse openers,
//! deverbal-noun links and entity mentions.
//!
//! Everything here is rule-based and deterministic. There is no POS tagger:
//! verb and noun forms are recognised from suffixes and capitalization.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::SentenceRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedSentence {
    pub tokens: Vec<String>,
    pub is_capitalized: Vec<bool>,
    pub is_sentence_initial: Vec<bool>,
    /// Whether whitespace preceded the token in the source text.
    pub space_before: Vec<bool>,
}

impl TokenizedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_word(&self, i: usize) -> bool {
        self.tokens[i].chars().next().is_some_and(char::is_alphanumeric)
    }

    /// Index of the first word token, if any.
    pub fn first_word(&self) -> Option<usize> {
        (0..self.len()).find(|&i| self.is_word(i))
    }

    /// Capitalized word token that does not start the sentence.
    fn is_mid_capital(&self, i: usize) -> bool {
        self.is_capitalized[i] && !self.is_sentence_initial[i]
    }

    /// Rebuilds the text with every whitespace run collapsed to one space.
    pub fn detokenize(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 && self.space_before[i] {
                out.push(' ');
            }
            out.push_str(t);
        }
        out
    }
}

/// Splits on whitespace and punctuation; every non-alphanumeric,
/// non-whitespace character becomes its own token.
pub fn tokenize_sentence(text: &str) -> TokenizedSentence {
    let mut out = TokenizedSentence::default();
    let mut word = String::new();
    let mut word_space = false;
    let mut pending_space = false;

    fn push(out: &mut TokenizedSentence, tok: String, space: bool) {
        let cap = tok.chars().next().is_some_and(char::is_uppercase);
        out.is_capitalized.push(cap);
        out.is_sentence_initial.push(false);
        out.space_before.push(space);
        out.tokens.push(tok);
    }

    for c in text.chars() {
        if c.is_alphanumeric() {
            if word.is_empty() {
                word_space = pending_space;
                pending_space = false;
            }
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            push(&mut out, core::mem::take(&mut word), word_space);
        }
        if c.is_whitespace() {
            pending_space = true;
        } else {
            push(&mut out, c.to_string(), pending_space);
            pending_space = false;
        }
    }
    if !word.is_empty() {
        push(&mut out, word, word_space);
    }
    if let Some(first) = out.first_word() {
        out.is_sentence_initial[first] = true;
    }
    out
}

/// Discourse markers recognised at the start of a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerLexicon {
    markers: BTreeSet<String>,
    /// Token sequence of each phrase, longest first.
    patterns: Vec<(Vec<String>, String)>,
}

pub const DEFAULT_MARKERS: &[&str] = &[
    "however",
    "meanwhile",
    "furthermore",
    "moreover",
    "nevertheless",
    "nonetheless",
    "therefore",
    "thus",
    "consequently",
    "instead",
    "still",
    "yet",
    "additionally",
    "in addition",
    "on the other hand",
    "in contrast",
    "as a result",
    "similarly",
    "likewise",
    "besides",
];

impl MarkerLexicon {
    pub fn new<I, S>(markers: I) -> Result<MarkerLexicon>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for m in markers {
            let m = m.as_ref();
            if m.is_empty() || m.trim() != m {
                return Err(Error::Validation(format!(
                    "marker {m:?} is empty or has surrounding whitespace"
                )));
            }
            if m.chars().any(char::is_uppercase) {
                return Err(Error::Validation(format!("marker {m:?} is not lowercase")));
            }
            set.insert(m.to_string());
        }
        if set.is_empty() {
            return Err(Error::Validation("marker lexicon is empty".into()));
        }
        let mut patterns: Vec<(Vec<String>, String)> = set
            .iter()
            .map(|m| (tokenize_sentence(m).tokens, m.clone()))
            .collect();
        patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.cmp(b)));
        Ok(MarkerLexicon {
            markers: set,
            patterns,
        })
    }

    /// Parses the lexicon file format: one phrase per line, `#` starts a comment.
    pub fn parse(contents: &str) -> Result<MarkerLexicon> {
        let phrases: Vec<&str> = contents
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .collect();
        MarkerLexicon::new(phrases)
    }

    pub fn markers(&self) -> impl Iterator<Item = &str> {
        self.markers.iter().map(String::as_str)
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.markers.contains(phrase)
    }
}

impl Default for MarkerLexicon {
    fn default() -> Self {
        MarkerLexicon::new(DEFAULT_MARKERS.iter().copied()).expect("default lexicon is valid")
    }
}

/// Longest lexicon phrase matching the sentence-initial tokens,
/// case-insensitively. A comma after the marker is allowed but not needed.
pub fn detect_discourse_opener<'a>(
    sentence: &TokenizedSentence,
    lexicon: &'a MarkerLexicon,
) -> Option<&'a str> {
    let start = sentence.first_word()?;
    let rest = &sentence.tokens[start..];
    lexicon
        .patterns
        .iter()
        .find(|(pattern, _)| {
            pattern.len() <= rest.len()
                && pattern.iter().zip(rest).all(|(p, t)| t.to_lowercase() == *p)
        })
        .map(|(_, phrase)| phrase.as_str())
}

/// Suffixes that turn a verb stem into a deverbal noun.
pub const NOMINAL_SUFFIXES: &[&str] = &[
    "ation", "tion", "sion", "ment", "ance", "ence", "al", "ure", "ing",
];

const VERB_INFLECTIONS: &[&str] = &["ed", "d", "es", "s", "ing"];

const MIN_STEM: usize = 3;

fn canonical_stem(stem: &str) -> Option<String> {
    let s = stem.strip_suffix('e').unwrap_or(stem);
    (s.chars().count() >= MIN_STEM).then(|| s.to_string())
}

fn content_word(sentence: &TokenizedSentence, i: usize) -> Option<String> {
    let tok = &sentence.tokens[i];
    if !tok.chars().all(char::is_alphabetic) || sentence.is_mid_capital(i) {
        return None;
    }
    Some(tok.to_lowercase())
}

/// Stems a token could have if it is an inflected verb form.
fn verb_stems(word: &str) -> impl Iterator<Item = String> + '_ {
    core::iter::once(word)
        .chain(VERB_INFLECTIONS.iter().filter_map(|suf| word.strip_suffix(suf)))
        .filter_map(canonical_stem)
}

/// Stems a token could have if it is a deverbal noun.
fn noun_stems(word: &str) -> Vec<String> {
    let singular = word.strip_suffix('s');
    let mut out = Vec::new();
    for form in core::iter::once(word).chain(singular) {
        for suf in NOMINAL_SUFFIXES {
            let Some(stem) = form.strip_suffix(suf) else { continue };
            out.extend(canonical_stem(stem));
            // reject+ion, discuss+ion
            match *suf {
                "tion" => out.extend(canonical_stem(&format!("{stem}t"))),
                "sion" => out.extend(canonical_stem(&format!("{stem}s"))),
                _ => {}
            }
        }
    }
    out
}

/// True iff a verb form in `earlier` and a deverbal noun in `later` share a
/// stem of at least three characters.
pub fn deverbal_link(earlier: &TokenizedSentence, later: &TokenizedSentence) -> bool {
    deverbal_witness(earlier, later).is_some()
}

/// The `(verb token, noun token)` index pair behind a deverbal link.
pub fn deverbal_witness(
    earlier: &TokenizedSentence,
    later: &TokenizedSentence,
) -> Option<(usize, usize)> {
    let nouns: Vec<(usize, Vec<String>)> = (0..later.len())
        .filter_map(|i| content_word(later, i).map(|w| (i, noun_stems(&w))))
        .filter(|(_, stems)| !stems.is_empty())
        .collect();
    if nouns.is_empty() {
        return None;
    }
    for i in 0..earlier.len() {
        let Some(w) = content_word(earlier, i) else { continue };
        for stem in verb_stems(&w) {
            if let Some((j, _)) = nouns.iter().find(|(_, s)| s.contains(&stem)) {
                return Some((i, *j));
            }
        }
    }
    None
}

pub const HONORIFICS: &[&str] = &["mr", "ms", "mrs", "dr"];

fn is_honorific(tok: &str) -> bool {
    HONORIFICS.iter().any(|h| tok.eq_ignore_ascii_case(h))
}

/// Lowercased words that occur capitalized mid-sentence anywhere in an
/// article; used to rescue sentence-initial single-token names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArticleContext {
    mid_capitals: BTreeSet<String>,
}

impl ArticleContext {
    pub fn new<'a, I>(sentences: I) -> ArticleContext
    where
        I: IntoIterator<Item = &'a TokenizedSentence>,
    {
        let mut mid_capitals = BTreeSet::new();
        for s in sentences {
            for i in 0..s.len() {
                if s.is_word(i) && s.is_mid_capital(i) {
                    mid_capitals.insert(s.tokens[i].to_lowercase());
                }
            }
        }
        ArticleContext { mid_capitals }
    }
}

/// Normalizes an entity mention: drops punctuation and leading honorifics,
/// case-folds and joins words with single spaces.
pub fn normalize_entity(mention: &str) -> Option<String> {
    let toks = tokenize_sentence(mention);
    let words: Vec<&String> = toks
        .tokens
        .iter()
        .enumerate()
        .filter(|&(i, _)| toks.is_word(i))
        .map(|(_, t)| t)
        .skip_while(|t| is_honorific(t))
        .collect();
    if words.is_empty() {
        return None;
    }
    let joined: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    Some(joined.join(" "))
}

/// Entity strings of a record: the annotated `entities` when present,
/// otherwise maximal runs of capitalized tokens.
///
/// A run that starts the sentence and has length one is kept only when the
/// word also appears capitalized mid-sentence somewhere in `article`.
pub fn extract_entities(record: &SentenceRecord, article: &ArticleContext) -> BTreeSet<String> {
    if let Some(annotated) = &record.entities {
        return annotated.iter().filter_map(|e| normalize_entity(e)).collect();
    }
    entities_from_tokens(&tokenize_sentence(&record.text), article)
}

pub fn entities_from_tokens(s: &TokenizedSentence, article: &ArticleContext) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < s.len() {
        if !(s.is_word(i) && s.is_capitalized[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < s.len() && s.is_word(i) && s.is_capitalized[i] {
            i += 1;
        }
        let run = &s.tokens[start..i];
        if s.is_sentence_initial[start]
            && run.len() == 1
            && !article.mid_capitals.contains(&run[0].to_lowercase())
        {
            continue;
        }
        let words: Vec<String> = run
            .iter()
            .skip_while(|t| is_honorific(t))
            .map(|t| t.to_lowercase())
            .collect();
        if !words.is_empty() {
            out.insert(words.join(" "));
        }
    }
    out
}
