//! Shared helpers for integration tests: random corpora and a brute-force
//! counter that shares no code with the library's counting path.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use freqgap_core::CountTable;
use rand::Rng;

const UNIT_WORDS: [(&str, &str); 8] = [
    ("second", "seconds"),
    ("minute", "minutes"),
    ("hour", "hours"),
    ("day", "days"),
    ("week", "weeks"),
    ("month", "months"),
    ("year", "years"),
    ("decade", "decades"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum OTerm {
    Num(u32),
    Unit(usize),
}

impl OTerm {
    fn text(self) -> String {
        match self {
            OTerm::Num(v) => v.to_string(),
            OTerm::Unit(i) => format!("u:{}", UNIT_WORDS[i].0),
        }
    }
}

fn oracle_term(token: &str) -> Option<OTerm> {
    let t = token.trim_matches(|c: char| ".,;:!?()\"'[]".contains(c));
    if !t.is_empty() && t.chars().all(|c| c.is_ascii_digit()) {
        return if t.len() <= 6 { Some(OTerm::Num(t.parse().unwrap())) } else { None };
    }
    let lower = t.to_ascii_lowercase();
    UNIT_WORDS.iter().position(|(s, p)| *s == lower || *p == lower).map(OTerm::Unit)
}

fn key(mut terms: Vec<OTerm>) -> String {
    terms.sort();
    terms.iter().map(|t| t.text()).collect::<Vec<_>>().join("|")
}

/// Direct enumeration of every co-occurrence within `window` tokens.
///
/// Without targets this follows the open-pass rules (number pairs below
/// 10,000, number-unit pairs, no unit-unit pairs, no triples); with targets
/// only listed pairs and triples are kept. Unigrams are always kept.
pub fn oracle_counts(docs: &[String], window: usize, targets: Option<&BTreeSet<String>>) -> BTreeMap<String, u64> {
    let mut out: BTreeMap<String, u64> = BTreeMap::new();
    for doc in docs {
        let terms: Vec<(usize, OTerm)> = doc
            .split_whitespace()
            .enumerate()
            .filter_map(|(i, tok)| oracle_term(tok).map(|t| (i, t)))
            .collect();
        for (a, &(pa, ta)) in terms.iter().enumerate() {
            *out.entry(ta.text()).or_default() += 1;
            for (b, &(pb, tb)) in terms.iter().enumerate().skip(a + 1) {
                if pb - pa > window - 1 {
                    break;
                }
                let k = key(vec![ta, tb]);
                let keep = match targets {
                    Some(t) => t.contains(&k),
                    None => match (ta, tb) {
                        (OTerm::Num(x), OTerm::Num(y)) => x < 10_000 && y < 10_000,
                        (OTerm::Unit(_), OTerm::Unit(_)) => false,
                        _ => true,
                    },
                };
                if keep {
                    *out.entry(k).or_default() += 1;
                }
                if let Some(t) = targets {
                    for &(pc, tc) in terms.iter().skip(b + 1) {
                        if pc - pa > window - 1 {
                            break;
                        }
                        let k = key(vec![ta, tb, tc]);
                        if t.contains(&k) {
                            *out.entry(k).or_default() += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn table_map(table: &CountTable) -> BTreeMap<String, u64> {
    table.entries().iter().map(|(k, v)| (k.key(), *v)).collect()
}

/// A random token: small and large numbers, unit words in varied case,
/// punctuation-wrapped tokens, leading zeros, and filler.
pub fn random_token(rng: &mut impl Rng) -> String {
    let wrap = |rng: &mut dyn rand::RngCore, s: String| -> String {
        match rng.random_range(0..10) {
            0 => format!("{s}."),
            1 => format!("({s})"),
            2 => format!("\"{s},"),
            3 => format!("{s}s"),
            _ => s,
        }
    };
    let base = match rng.random_range(0..20) {
        0..=5 => rng.random_range(0..30u32).to_string(),
        6..=7 => rng.random_range(0..12_000u32).to_string(),
        8 => rng.random_range(0..10_000_000u32).to_string(),
        9 => format!("0{}", rng.random_range(0..100u32)),
        10..=12 => {
            let (s, p) = UNIT_WORDS[rng.random_range(0..8)];
            match rng.random_range(0..4) {
                0 => s.to_string(),
                1 => p.to_string(),
                2 => s.to_uppercase(),
                _ => format!("{}{}", p[..1].to_uppercase(), &p[1..]),
            }
        }
        13 => "x1".to_string(),
        14 => "3.5".to_string(),
        _ => ["the", "of", "and", "is", "a", "to"][rng.random_range(0..6)].to_string(),
    };
    wrap(rng, base)
}

/// Random documents with about `tokens` tokens in total.
pub fn random_corpus(rng: &mut impl Rng, tokens: usize) -> Vec<String> {
    let mut docs = Vec::new();
    let mut left = tokens;
    while left > 0 {
        let len = rng.random_range(0..300).min(left).max(1);
        left -= len;
        let mut doc = String::new();
        for i in 0..len {
            if i > 0 {
                doc.push_str([" ", " ", " ", "\n", "\t", "  "][rng.random_range(0..6)]);
            }
            doc.push_str(&random_token(rng));
        }
        docs.push(doc);
    }
    docs
}

pub fn write_jsonl(dir: &Path, name: &str, docs: &[String]) -> PathBuf {
    let path = dir.join(name);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    for d in docs {
        serde_json::to_writer(&mut f, &serde_json::json!({ "text": d })).unwrap();
        f.write_all(b"\n").unwrap();
    }
    f.flush().unwrap();
    path
}

/// Random pairs and triples built from keys that occur in `counts`, plus a few absent ones.
pub fn random_targets(rng: &mut impl Rng, counts: &BTreeMap<String, u64>) -> BTreeSet<String> {
    let unigrams: Vec<&String> = counts.keys().filter(|k| !k.contains('|')).collect();
    let mut out = BTreeSet::new();
    if unigrams.is_empty() {
        return out;
    }
    for _ in 0..200 {
        let n = rng.random_range(2..=3);
        let mut terms: Vec<String> = (0..n).map(|_| unigrams[rng.random_range(0..unigrams.len())].clone()).collect();
        terms.sort_by_key(|t| sort_key(t));
        out.insert(terms.join("|"));
    }
    out.insert("999999|u:decade".to_string());
    out
}

fn sort_key(t: &str) -> (u8, u64, String) {
    match t.strip_prefix("u:") {
        Some(u) => (1, UNIT_WORDS.iter().position(|(s, _)| *s == u).unwrap() as u64, String::new()),
        None => (0, t.parse().unwrap(), String::new()),
    }
}
