//! Synthetic corpus with a planted number-frequency skew, so the whole
//! pipeline can run offline.
//!
//! The numbers 0–99 are shuffled into a random rank order and the number at
//! rank `r` is drawn with weight `10^(-decades * r / 99)`: the most frequent
//! number is `10^decades` times more common than the least frequent one.
//! Numbers also appear in front of time-unit words, and large distractor
//! numbers and filler words pad the text.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusFormat;
use crate::term::Unit;

const FILLER: &[&str] = &[
    "the", "a", "of", "and", "to", "in", "is", "was", "for", "on", "that", "with", "as", "it", "at", "by", "from",
    "this", "report", "team", "city", "market", "water", "river", "school", "season", "project", "record", "price",
    "about", "after", "before", "during", "around", "nearly", "only", "than", "more", "less", "each", "every",
    "people", "players", "votes", "miles", "pages", "members", "copies", "units", "items", "points", "cars",
    "later", "earlier", "again", "still", "once", "over", "under", "between", "since", "until", "while", "where",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    /// Approximate output size in bytes.
    pub size_bytes: u64,
    pub seed: u64,
    /// Orders of magnitude between the most and least frequent small number.
    pub decades: f64,
    pub format: CorpusFormat,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { size_bytes: 10 << 20, seed: 0, decades: 3.0, format: CorpusFormat::Jsonl }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub documents: u64,
    pub bytes: u64,
    /// Small numbers from most to least frequent.
    pub ranking: Vec<u32>,
}

struct DocWriter {
    rng: ChaCha8Rng,
    ranking: Vec<u32>,
    skew: WeightedIndex<f64>,
}

impl DocWriter {
    fn new(config: &DemoConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ranking: Vec<u32> = (0..100).collect();
        ranking.shuffle(&mut rng);
        let weights = (0..100).map(|r| 10f64.powf(-config.decades * r as f64 / 99.0));
        let skew = WeightedIndex::new(weights).expect("positive weights");
        Self { rng, ranking, skew }
    }

    fn small_number(&mut self) -> u32 {
        self.ranking[self.skew.sample(&mut self.rng)]
    }

    /// Appends one document of plain ASCII text (no quotes or backslashes).
    fn document(&mut self, out: &mut Vec<u8>) {
        let tokens = self.rng.random_range(40..200);
        for i in 0..tokens {
            if i > 0 {
                out.push(b' ');
            }
            let roll: f64 = self.rng.random();
            if roll < 0.12 {
                let n = self.small_number();
                write!(out, "{n}").unwrap();
            } else if roll < 0.17 {
                let n = self.small_number();
                let unit = Unit::ALL[self.rng.random_range(0..Unit::ALL.len())];
                let word = if n == 1 { unit.singular() } else { unit.plural() };
                write!(out, "{n} {word}").unwrap();
            } else if roll < 0.21 {
                let n: u32 = self.rng.random_range(10_000..1_000_000);
                write!(out, "{n}").unwrap();
            } else {
                out.extend_from_slice(FILLER[self.rng.random_range(0..FILLER.len())].as_bytes());
            }
            if self.rng.random::<f64>() < 0.06 {
                out.push(if self.rng.random::<bool>() { b'.' } else { b',' });
            }
        }
        out.push(b'.');
    }
}

/// Writes the demo corpus: one JSONL file at `path`, or a directory of text files.
pub fn generate_demo(path: &Path, config: &DemoConfig) -> io::Result<DemoSummary> {
    let mut gen = DocWriter::new(config);
    let mut documents = 0u64;
    let mut bytes = 0u64;
    let mut doc = Vec::with_capacity(4096);
    match config.format {
        CorpusFormat::Jsonl => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut out = BufWriter::with_capacity(1 << 20, File::create(path)?);
            while bytes < config.size_bytes {
                doc.clear();
                doc.extend_from_slice(b"{\"text\":\"");
                gen.document(&mut doc);
                doc.extend_from_slice(b"\"}\n");
                out.write_all(&doc)?;
                bytes += doc.len() as u64;
                documents += 1;
            }
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        CorpusFormat::Text => {
            std::fs::create_dir_all(path)?;
            while bytes < config.size_bytes {
                doc.clear();
                // A few paragraphs per file keeps the file count manageable.
                for p in 0..8 {
                    if p > 0 {
                        doc.extend_from_slice(b"\n\n");
                    }
                    gen.document(&mut doc);
                }
                doc.push(b'\n');
                let sub = path.join(format!("{:03}", documents / 1000));
                if documents.is_multiple_of(1000) {
                    std::fs::create_dir_all(&sub)?;
                }
                std::fs::write(sub.join(format!("doc{documents:07}.txt")), &doc)?;
                bytes += doc.len() as u64;
                documents += 1;
            }
        }
    }
    Ok(DemoSummary { documents, bytes, ranking: gen.ranking })
}
