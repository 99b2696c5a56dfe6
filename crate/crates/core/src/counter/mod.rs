//! Windowed co-occurrence counting of number and time-unit terms.
//!
//! Documents are split on whitespace; each token that canonicalizes to a
//! [`Term`] contributes one unigram occurrence. Two (or three) term
//! occurrences co-occur when they lie in one document and their positions fit
//! inside the configured window. Every distinct position pair (or triple)
//! counts once.
//!
//! Pass 1 (no targets) emits all unigrams, number pairs with both values
//! below [`CounterConfig::pair_number_limit`], and every number/unit pair.
//! A targeted pass emits all unigrams plus exactly the requested pairs and
//! triples.

mod spill;
mod table;

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CorpusSource, Document};
use crate::term::{Term, TermSet, Unit, NUMBER_LIMIT, TERM_CODES};
use spill::Spiller;

pub use table::{table_paths, CountTable, TableMeta, COUNTS_FILE, META_FILE};

#[derive(Debug, Error)]
pub enum CountError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid counter config: {0}")]
    InvalidConfig(String),
    #[error("cannot merge tables with different config digests ({left} vs {right})")]
    DigestMismatch { left: String, right: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
}

impl CountError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        CountError::Io { path: path.to_path_buf(), source }
    }
}

/// How the window bounds a co-occurrence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowRule {
    /// All occurrences inside one contiguous `window`-token span.
    #[default]
    Span,
    /// Position distance at most `window`.
    Distance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitForm {
    pub form: String,
    pub unit: Unit,
}

impl Serialize for Unit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.singular())
    }
}

impl<'de> Deserialize<'de> for Unit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Unit::from_singular(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown unit `{s}`")))
    }
}

/// Singular and regular plural forms of every unit.
pub fn default_unit_lexicon() -> Vec<UnitForm> {
    Unit::ALL
        .iter()
        .flat_map(|&u| {
            [
                UnitForm { form: u.singular().to_string(), unit: u },
                UnitForm { form: u.plural().to_string(), unit: u },
            ]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterConfig {
    pub window: usize,
    pub max_number_digits: usize,
    pub unit_lexicon: Vec<UnitForm>,
    pub window_rule: WindowRule,
    /// Pass-1 number pairs are kept only when both values are below this.
    pub pair_number_limit: u32,
    /// Sorted, deduplicated targets for a targeted pass.
    pub target_sets: Option<Arc<Vec<TermSet>>>,
}

impl Default for CounterConfig {
    fn default() -> Self {
        Self {
            window: 5,
            max_number_digits: 6,
            unit_lexicon: default_unit_lexicon(),
            window_rule: WindowRule::Span,
            pair_number_limit: 10_000,
            target_sets: None,
        }
    }
}

#[derive(Serialize)]
struct DigestView<'a> {
    window: usize,
    max_number_digits: usize,
    unit_lexicon: &'a [UnitForm],
    window_rule: WindowRule,
    pair_number_limit: u32,
    targets: Option<String>,
}

impl CounterConfig {
    pub fn with_targets(mut self, targets: impl IntoIterator<Item = TermSet>) -> Self {
        let set: BTreeSet<TermSet> = targets.into_iter().collect();
        self.target_sets = Some(Arc::new(set.into_iter().collect()));
        self
    }

    pub fn validate(&self) -> Result<(), CountError> {
        if self.window < 2 {
            return Err(CountError::InvalidConfig("window must be ≥ 2".into()));
        }
        if !(1..=6).contains(&self.max_number_digits) {
            return Err(CountError::InvalidConfig("max_number_digits must be in 1..=6".into()));
        }
        if self.unit_lexicon.iter().any(|f| f.form.is_empty() || f.form != f.form.to_ascii_lowercase()) {
            return Err(CountError::InvalidConfig("unit forms must be non-empty lowercase ASCII".into()));
        }
        Ok(())
    }

    /// Largest allowed gap between the first and last position of a co-occurrence.
    pub fn max_gap(&self) -> usize {
        match self.window_rule {
            WindowRule::Span => self.window - 1,
            WindowRule::Distance => self.window,
        }
    }

    /// Hex SHA-256 over the canonical JSON form of everything that affects counts.
    pub fn digest(&self) -> String {
        let targets = self.target_sets.as_ref().map(|t| {
            let mut h = Sha256::new();
            for set in t.iter() {
                h.update(set.key().as_bytes());
                h.update(b"\n");
            }
            hex::encode(h.finalize())
        });
        let view = DigestView {
            window: self.window,
            max_number_digits: self.max_number_digits,
            unit_lexicon: &self.unit_lexicon,
            window_rule: self.window_rule,
            pair_number_limit: self.pair_number_limit,
            targets,
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&view).expect("digest view serializes")))
    }

    pub fn empty_table(&self, corpus: &str) -> CountTable {
        CountTable::empty(self.meta(corpus))
    }

    fn meta(&self, corpus: &str) -> TableMeta {
        TableMeta {
            corpus: corpus.to_string(),
            config_digest: self.digest(),
            window: self.window,
            targeted: self.target_sets.is_some(),
            ..TableMeta::default()
        }
    }
}

/// Whitespace classification for ASCII bytes, matching `char::is_whitespace`.
const fn ascii_space_table() -> [bool; 128] {
    let mut t = [false; 128];
    t[b' ' as usize] = true;
    t[b'\t' as usize] = true;
    t[b'\n' as usize] = true;
    t[0x0B] = true;
    t[0x0C] = true;
    t[b'\r' as usize] = true;
    t
}

static ASCII_SPACE: [bool; 128] = ascii_space_table();

/// Maximal runs of non-whitespace characters with 0-based positions.
pub fn tokenize(text: &str) -> Tokens<'_> {
    Tokens { text, at: 0, pos: 0 }
}

pub struct Tokens<'a> {
    text: &'a str,
    at: usize,
    pos: usize,
}

impl<'a> Tokens<'a> {
    /// Byte width of the whitespace character at `i`, or 0 if not whitespace.
    #[inline]
    fn space_at(&self, i: usize) -> usize {
        let b = self.text.as_bytes()[i];
        if b < 0x80 {
            ASCII_SPACE[b as usize] as usize
        } else {
            let c = self.text[i..].chars().next().expect("char boundary");
            if c.is_whitespace() {
                c.len_utf8()
            } else {
                0
            }
        }
    }
}

impl<'a> Iterator for Tokens<'a> {
    type Item = (&'a str, usize);

    #[inline]
    fn next(&mut self) -> Option<Self::Item> {
        let bytes = self.text.as_bytes();
        let len = bytes.len();
        let mut i = self.at;
        loop {
            if i >= len {
                self.at = len;
                return None;
            }
            match self.space_at(i) {
                0 => break,
                w => i += w,
            }
        }
        let start = i;
        while i < len {
            let b = bytes[i];
            if b < 0x80 {
                if ASCII_SPACE[b as usize] {
                    break;
                }
                i += 1;
            } else {
                let c = self.text[i..].chars().next().expect("char boundary");
                if c.is_whitespace() {
                    break;
                }
                i += c.len_utf8();
            }
        }
        self.at = i;
        let pos = self.pos;
        self.pos += 1;
        Some((&self.text[start..i], pos))
    }
}

#[inline]
fn is_strip(b: u8) -> bool {
    matches!(b, b'.' | b',' | b';' | b':' | b'!' | b'?' | b'(' | b')' | b'"' | b'\'' | b'[' | b']')
}

/// Maps tokens to terms under one configuration.
#[derive(Clone, Debug)]
pub struct TermExtractor {
    max_digits: usize,
    forms: Vec<(Box<[u8]>, Unit)>,
    min_form: usize,
    max_form: usize,
}

impl TermExtractor {
    pub fn new(config: &CounterConfig) -> Self {
        let forms: Vec<(Box<[u8]>, Unit)> = config
            .unit_lexicon
            .iter()
            .map(|f| (f.form.as_bytes().to_vec().into_boxed_slice(), f.unit))
            .collect();
        let min_form = forms.iter().map(|f| f.0.len()).min().unwrap_or(usize::MAX);
        let max_form = forms.iter().map(|f| f.0.len()).max().unwrap_or(0);
        Self { max_digits: config.max_number_digits.min(6), forms, min_form, max_form }
    }

    #[inline]
    pub fn extract(&self, token: &str) -> Option<Term> {
        let b = token.as_bytes();
        let (mut s, mut e) = (0, b.len());
        while s < e && is_strip(b[s]) {
            s += 1;
        }
        while e > s && is_strip(b[e - 1]) {
            e -= 1;
        }
        let core = &b[s..e];
        let first = *core.first()?;
        if first.is_ascii_digit() {
            if core.len() > self.max_digits {
                return None;
            }
            let mut v = 0u32;
            for &c in core {
                if !c.is_ascii_digit() {
                    return None;
                }
                v = v * 10 + (c - b'0') as u32;
            }
            return Some(Term::Number(v));
        }
        if core.len() < self.min_form || core.len() > self.max_form || !first.is_ascii_alphabetic() {
            return None;
        }
        let mut buf = [0u8; 32];
        let lower = buf.get_mut(..core.len())?;
        for (dst, &c) in lower.iter_mut().zip(core) {
            *dst = c.to_ascii_lowercase();
        }
        self.forms.iter().find(|(f, _)| **f == *lower).map(|&(_, u)| Term::Unit(u))
    }
}

/// Convenience wrapper over [`TermExtractor`].
pub fn extract_term(token: &str, config: &CounterConfig) -> Option<Term> {
    TermExtractor::new(config).extract(token)
}

pub const DEFAULT_SPILL_ENTRIES: usize = 4 << 20;

#[derive(Clone, Debug)]
pub struct CountOptions {
    pub shards: usize,
    /// In-memory pair entries per shard before a sorted run is spilled.
    pub spill_entries: usize,
    pub spill_dir: Option<PathBuf>,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self { shards: 1, spill_entries: DEFAULT_SPILL_ENTRIES, spill_dir: None }
    }
}

enum PairMode {
    Open { limit: u32 },
    Targeted { pairs: FxHashMap<u64, u64>, triples: FxHashMap<u64, u64> },
}

/// Single-owner counter for one shard of a corpus.
pub struct ShardCounter {
    extractor: TermExtractor,
    gap: u32,
    corpus: String,
    config: CounterConfig,
    unigrams: Vec<u64>,
    pairs: FxHashMap<u64, u64>,
    mode: PairMode,
    spill_entries: usize,
    spill_dir: Option<PathBuf>,
    spiller: Option<Spiller>,
    scratch: Vec<(u32, u32)>,
    documents: u64,
    tokens: u64,
    skipped: u64,
}

impl ShardCounter {
    pub fn new(config: &CounterConfig, corpus: &str, options: &CountOptions) -> Result<Self, CountError> {
        config.validate()?;
        let mode = match &config.target_sets {
            None => PairMode::Open { limit: config.pair_number_limit },
            Some(targets) => {
                let mut pairs = FxHashMap::default();
                let mut triples = FxHashMap::default();
                for t in targets.iter() {
                    match t.len() {
                        2 => {
                            pairs.insert(t.raw(), 0);
                        }
                        3 => {
                            triples.insert(t.raw(), 0);
                        }
                        _ => {}
                    }
                }
                PairMode::Targeted { pairs, triples }
            }
        };
        Ok(Self {
            extractor: TermExtractor::new(config),
            gap: config.max_gap() as u32,
            corpus: corpus.to_string(),
            config: config.clone(),
            unigrams: vec![0; TERM_CODES],
            pairs: FxHashMap::default(),
            mode,
            spill_entries: options.spill_entries.max(1),
            spill_dir: options.spill_dir.clone(),
            spiller: None,
            scratch: Vec::new(),
            documents: 0,
            tokens: 0,
            skipped: 0,
        })
    }

    pub fn add(&mut self, doc: Document<'_>) -> Result<(), CountError> {
        match doc {
            Document::Text(text) => self.add_text(text),
            Document::Skipped => {
                self.skipped += 1;
                Ok(())
            }
        }
    }

    /// Counts one document given as raw bytes; invalid UTF-8 is skipped.
    pub fn add_bytes(&mut self, bytes: &[u8]) -> Result<(), CountError> {
        match std::str::from_utf8(bytes) {
            Ok(text) => self.add_text(text),
            Err(_) => {
                self.skipped += 1;
                Ok(())
            }
        }
    }

    pub fn add_text(&mut self, text: &str) -> Result<(), CountError> {
        self.documents += 1;
        let mut terms = std::mem::take(&mut self.scratch);
        terms.clear();
        let mut n_tokens = 0usize;
        for (tok, pos) in tokenize(text) {
            n_tokens = pos + 1;
            if let Some(term) = self.extractor.extract(tok) {
                let code = term.code();
                self.unigrams[code as usize] += 1;
                terms.push((pos as u32, code));
            }
        }
        self.tokens += n_tokens as u64;
        let gap = self.gap;
        match &mut self.mode {
            PairMode::Open { limit } => {
                let limit = *limit;
                let eligible = |a: u32, b: u32| {
                    let (an, bn) = (a < NUMBER_LIMIT, b < NUMBER_LIMIT);
                    (an && bn && a < limit && b < limit) || (an != bn)
                };
                for i in 0..terms.len() {
                    let (pi, ci) = terms[i];
                    for &(pj, cj) in &terms[i + 1..] {
                        if pj - pi > gap {
                            break;
                        }
                        if eligible(ci, cj) {
                            *self.pairs.entry(TermSet::pair_codes(ci, cj).raw()).or_insert(0) += 1;
                        }
                    }
                }
            }
            PairMode::Targeted { pairs, triples } => {
                for i in 0..terms.len() {
                    let (pi, ci) = terms[i];
                    for j in i + 1..terms.len() {
                        let (pj, cj) = terms[j];
                        if pj - pi > gap {
                            break;
                        }
                        if let Some(c) = pairs.get_mut(&TermSet::pair_codes(ci, cj).raw()) {
                            *c += 1;
                        }
                        if triples.is_empty() {
                            continue;
                        }
                        for &(pl, cl) in &terms[j + 1..] {
                            if pl - pi > gap {
                                break;
                            }
                            let mut codes = [ci, cj, cl];
                            codes.sort_unstable();
                            let key = TermSet::triple_sorted_codes(codes[0], codes[1], codes[2]).raw();
                            if let Some(c) = triples.get_mut(&key) {
                                *c += 1;
                            }
                        }
                    }
                }
            }
        }
        self.scratch = terms;
        if self.pairs.len() >= self.spill_entries {
            if self.spiller.is_none() {
                let spiller = Spiller::new(self.spill_dir.as_deref()).map_err(|e| CountError::io(Path::new("spill"), e))?;
                self.spiller = Some(spiller);
            }
            let spiller = self.spiller.as_mut().expect("spiller initialized");
            spiller.spill(&mut self.pairs).map_err(|e| CountError::io(Path::new("spill"), e))?;
        }
        Ok(())
    }

    /// Finalizes into an immutable, key-sorted table.
    pub fn finish(self) -> Result<CountTable, CountError> {
        let mut entries: Vec<(TermSet, u64)> = self
            .unigrams
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c > 0)
            .map(|(code, &c)| (TermSet::single(Term::from_code(code as u32).expect("valid code")), c))
            .collect();
        let mut in_memory: Vec<(u64, u64)> = self.pairs.into_iter().collect();
        if let PairMode::Targeted { pairs, triples } = self.mode {
            in_memory.extend(pairs.into_iter().chain(triples).filter(|&(_, c)| c > 0));
        }
        in_memory.sort_unstable_by_key(|&(k, _)| k);
        let multi = match self.spiller {
            Some(spiller) => {
                log::debug!("merging {} spilled runs", spiller.run_count());
                spiller.merge(in_memory).map_err(|e| CountError::io(Path::new("spill"), e))?
            }
            None => in_memory,
        };
        entries.extend(multi.into_iter().map(|(k, c)| (TermSet::from_raw(k).expect("valid packed key"), c)));
        entries.sort_unstable_by_key(|&(k, _)| k);
        let meta = TableMeta {
            documents: self.documents,
            tokens: self.tokens,
            skipped_documents: self.skipped,
            ..self.config.meta(&self.corpus)
        };
        Ok(CountTable::from_sorted(entries, meta))
    }
}

/// Counts one shard's documents into a table.
pub fn count_shard<'a, I>(documents: I, config: &CounterConfig, corpus: &str) -> Result<CountTable, CountError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counter = ShardCounter::new(config, corpus, &CountOptions::default())?;
    for doc in documents {
        counter.add_text(doc)?;
    }
    counter.finish()
}

/// Pointwise sum of two tables with equal config digests.
pub fn merge(a: &CountTable, b: &CountTable) -> Result<CountTable, CountError> {
    a.merge(b)
}

pub fn query(table: &CountTable, set: TermSet) -> u64 {
    table.query(set)
}

pub fn top_numbers(table: &CountTable, k: usize, max_digits: Option<u32>, cooccur_with: Option<Unit>) -> Vec<u32> {
    table.top_numbers(k, max_digits, cooccur_with)
}

/// Merges many tables by a pairwise reduction tree.
pub fn merge_all(mut tables: Vec<CountTable>) -> Result<Option<CountTable>, CountError> {
    while tables.len() > 1 {
        let mut next = Vec::with_capacity(tables.len().div_ceil(2));
        let mut it = tables.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.merge(&b)?),
                None => next.push(a),
            }
        }
        tables = next;
    }
    Ok(tables.pop())
}

/// Counts a corpus with `options.shards` independent workers and merges
/// their partial tables. The result does not depend on the shard count.
pub fn count_corpus(source: &CorpusSource, config: &CounterConfig, options: &CountOptions) -> Result<CountTable, CountError> {
    config.validate()?;
    let shards = options.shards.max(1);
    let plan = source.plan(shards).map_err(|e| CountError::io(&source.path, e))?;
    let corpus = source.identifier();
    let tables: Vec<Result<CountTable, CountError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .into_iter()
            .map(|units| {
                let corpus = corpus.clone();
                scope.spawn(move || -> Result<CountTable, CountError> {
                    let mut counter = ShardCounter::new(config, &corpus, options)?;
                    for unit in &units {
                        let mut failure = None;
                        unit.for_each_document(|doc| {
                            if failure.is_none() {
                                if let Err(e) = counter.add(doc) {
                                    failure = Some(e);
                                }
                            }
                        })
                        .map_err(|e| CountError::io(unit.path(), e))?;
                        if let Some(e) = failure {
                            return Err(e);
                        }
                    }
                    counter.finish()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard worker panicked")).collect()
    });
    let tables = tables.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(merge_all(tables)?.unwrap_or_else(|| config.empty_table(&corpus)))
}
