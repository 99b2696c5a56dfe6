//! Exact count tables and their on-disk form.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CountError;
use crate::fsutil;
use crate::term::{Term, TermSet, Unit};

pub const COUNTS_FILE: &str = "counts.tsv";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableMeta {
    pub corpus: String,
    pub config_digest: String,
    pub window: usize,
    pub targeted: bool,
    pub documents: u64,
    pub tokens: u64,
    pub skipped_documents: u64,
}

/// Occurrence counts keyed by term set. Absent keys count zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountTable {
    /// Sorted by packed key, counts strictly positive.
    entries: Vec<(TermSet, u64)>,
    pub meta: TableMeta,
}

impl CountTable {
    pub fn empty(meta: TableMeta) -> Self {
        Self { entries: Vec::new(), meta }
    }

    /// Builds a table from arbitrary `(key, count)` pairs, summing duplicates
    /// and dropping zeros.
    pub fn from_counts(counts: impl IntoIterator<Item = (TermSet, u64)>, meta: TableMeta) -> Self {
        let mut entries: Vec<(TermSet, u64)> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        entries.sort_unstable_by_key(|&(k, _)| k);
        entries.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
        Self { entries, meta }
    }

    pub(crate) fn from_sorted(entries: Vec<(TermSet, u64)>, meta: TableMeta) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        Self { entries, meta }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(TermSet, u64)] {
        &self.entries
    }

    /// Frequency of `set`; zero when absent.
    pub fn query(&self, set: TermSet) -> u64 {
        self.entries
            .binary_search_by_key(&set, |&(k, _)| k)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    pub fn unigram(&self, term: Term) -> u64 {
        self.query(TermSet::single(term))
    }

    /// Pointwise sum. Both tables must come from the same counter configuration.
    pub fn merge(&self, other: &CountTable) -> Result<CountTable, CountError> {
        if self.meta.config_digest != other.meta.config_digest {
            return Err(CountError::DigestMismatch {
                left: self.meta.config_digest.clone(),
                right: other.meta.config_digest.clone(),
            });
        }
        let (a, b) = (&self.entries, &other.entries);
        let mut out = Vec::with_capacity(a.len().max(b.len()));
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        let meta = TableMeta {
            corpus: merge_corpus_ids(&self.meta.corpus, &other.meta.corpus),
            config_digest: self.meta.config_digest.clone(),
            window: self.meta.window,
            targeted: self.meta.targeted,
            documents: self.meta.documents + other.meta.documents,
            tokens: self.meta.tokens + other.meta.tokens,
            skipped_documents: self.meta.skipped_documents + other.meta.skipped_documents,
        };
        Ok(CountTable { entries: out, meta })
    }

    /// The `k` most frequent numbers with at most `max_digits` digits, by
    /// unigram count or, with `cooccur_with`, by pair count with that unit.
    /// Ties go to the smaller value.
    pub fn top_numbers(&self, k: usize, max_digits: Option<u32>, cooccur_with: Option<Unit>) -> Vec<u32> {
        let fits = |v: u32| max_digits.is_none_or(|d| digit_count(v) <= d);
        let mut ranked: Vec<(u64, u32)> = Vec::new();
        for &(set, count) in &self.entries {
            let mut terms = set.terms();
            let value = match (cooccur_with, set.len()) {
                (None, 1) => terms.next().and_then(Term::number),
                (Some(unit), 2) => match (terms.next(), terms.next()) {
                    (Some(Term::Number(v)), Some(Term::Unit(u))) if u == unit => Some(v),
                    _ => None,
                },
                _ => None,
            };
            if let Some(v) = value.filter(|&v| fits(v)) {
                ranked.push((count, v));
            }
        }
        ranked.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.into_iter().take(k).map(|(_, v)| v).collect()
    }

    /// Writes `key<TAB>count` lines sorted by key text.
    pub fn write_tsv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut lines: Vec<(String, u64)> = self.entries.iter().map(|&(k, c)| (k.key(), c)).collect();
        lines.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let mut out = BufWriter::new(out);
        for (key, count) in lines {
            writeln!(out, "{key}\t{count}")?;
        }
        out.flush()
    }

    pub fn read_tsv<R: BufRead>(input: R, meta: TableMeta, origin: &Path) -> Result<CountTable, CountError> {
        let mut entries = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line.map_err(|e| CountError::io(origin, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| CountError::Parse { path: origin.to_path_buf(), line: idx + 1, msg };
            let (key, count) = line.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
            let key: TermSet = key.parse().map_err(|e| bad(format!("{e}")))?;
            let count: u64 = count.parse().map_err(|e| bad(format!("bad count: {e}")))?;
            entries.push((key, count));
        }
        Ok(CountTable::from_counts(entries, meta))
    }

    /// Saves to a directory (`counts.tsv` + `meta.json`) or, when `loc` ends
    /// in `.tsv`, to that file with a `<file>.meta.json` sidecar.
    pub fn save(&self, loc: &Path) -> Result<(), CountError> {
        let (counts, meta) = table_paths(loc);
        if let Some(parent) = counts.parent() {
            fs::create_dir_all(parent).map_err(|e| CountError::io(parent, e))?;
        }
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).map_err(|e| CountError::io(&counts, e))?;
        fsutil::write_atomic(&counts, &buf).map_err(|e| CountError::io(&counts, e))?;
        let mut meta_json = serde_json::to_vec_pretty(&self.meta).expect("meta serializes");
        meta_json.push(b'\n');
        fsutil::write_atomic(&meta, &meta_json).map_err(|e| CountError::io(&meta, e))?;
        Ok(())
    }

    pub fn load(loc: &Path) -> Result<CountTable, CountError> {
        let (counts, meta_path) = table_paths(loc);
        let meta_bytes = fs::read(&meta_path).map_err(|e| CountError::io(&meta_path, e))?;
        let meta: TableMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| CountError::Parse { path: meta_path.clone(), line: e.line(), msg: e.to_string() })?;
        let file = fs::File::open(&counts).map_err(|e| CountError::io(&counts, e))?;
        Self::read_tsv(BufReader::new(file), meta, &counts)
    }
}

/// Resolves a table location to its counts file and meta sidecar.
pub fn table_paths(loc: &Path) -> (PathBuf, PathBuf) {
    if loc.extension().is_some_and(|e| e == "tsv") {
        let mut meta = loc.as_os_str().to_owned();
        meta.push(".meta.json");
        (loc.to_path_buf(), PathBuf::from(meta))
    } else {
        (loc.join(COUNTS_FILE), loc.join(META_FILE))
    }
}

fn merge_corpus_ids(a: &str, b: &str) -> String {
    let mut ids: Vec<&str> = a.split('+').chain(b.split('+')).filter(|s| !s.is_empty()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.join("+")
}

pub(crate) fn digit_count(v: u32) -> u32 {
    v.checked_ilog10().unwrap_or(0) + 1
}
