//! Corpus readers and shard planning.
//!
//! Two layouts are supported: a tree of plain-text files (one document per
//! file) and newline-delimited JSON records carrying a `"text"` field (one
//! document per record). Files ending in `.gz` are decompressed on the fly.

use std::borrow::Cow;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Text,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(CorpusFormat::Text),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format `{other}` (expected text or jsonl)")),
        }
    }
}

/// One document handed to a counter.
#[derive(Debug, Clone, Copy)]
pub enum Document<'a> {
    Text(&'a str),
    /// Unreadable record (invalid UTF-8, malformed JSON, no text field).
    Skipped,
}

#[derive(Deserialize)]
struct JsonDoc<'a> {
    #[serde(borrow)]
    text: Cow<'a, str>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSource {
    pub path: PathBuf,
    pub format: CorpusFormat,
}

/// A slice of the corpus owned by exactly one shard.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkUnit {
    /// Whole file: one document (text) or all records (jsonl).
    File { path: PathBuf, format: CorpusFormat },
    /// Records of an uncompressed jsonl file that start in `[start, end)`.
    JsonlRange { path: PathBuf, start: u64, end: u64 },
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

impl CorpusSource {
    pub fn new(path: impl Into<PathBuf>, format: CorpusFormat) -> Self {
        Self { path: path.into(), format }
    }

    /// Stable name recorded in count metadata.
    pub fn identifier(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.to_string_lossy().into_owned())
    }

    /// Regular files under the corpus path in sorted order.
    pub fn files(&self) -> io::Result<Vec<PathBuf>> {
        let meta = std::fs::metadata(&self.path)?;
        if meta.is_file() {
            return Ok(vec![self.path.clone()]);
        }
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(&self.path).sort_by_file_name() {
            let entry = entry.map_err(io::Error::other)?;
            if entry.file_type().is_file() {
                files.push(entry.into_path());
            }
        }
        Ok(files)
    }

    /// Splits the corpus into `shards` disjoint lists of work units.
    pub fn plan(&self, shards: usize) -> io::Result<Vec<Vec<WorkUnit>>> {
        let shards = shards.max(1);
        let mut plan = vec![Vec::new(); shards];
        for (i, path) in self.files()?.into_iter().enumerate() {
            if self.format == CorpusFormat::Jsonl && !is_gz(&path) {
                let len = std::fs::metadata(&path)?.len();
                for (s, units) in plan.iter_mut().enumerate() {
                    let start = len * s as u64 / shards as u64;
                    let end = len * (s as u64 + 1) / shards as u64;
                    if start < end {
                        units.push(WorkUnit::JsonlRange { path: path.clone(), start, end });
                    }
                }
            } else {
                plan[i % shards].push(WorkUnit::File { path, format: self.format });
            }
        }
        Ok(plan)
    }

    /// Visits every document of the corpus in a single pass.
    pub fn for_each_document(&self, mut f: impl FnMut(Document<'_>)) -> io::Result<()> {
        for unit in self.plan(1)?.into_iter().flatten() {
            unit.for_each_document(&mut f)?;
        }
        Ok(())
    }
}

fn open_maybe_gz(path: &Path) -> io::Result<Box<dyn Read>> {
    let file = File::open(path)?;
    Ok(if is_gz(path) { Box::new(MultiGzDecoder::new(file)) } else { Box::new(file) })
}

fn emit_json_line(line: &[u8], f: &mut impl FnMut(Document<'_>)) {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.iter().all(u8::is_ascii_whitespace) {
        return;
    }
    match serde_json::from_slice::<JsonDoc<'_>>(line) {
        Ok(doc) => f(Document::Text(&doc.text)),
        Err(_) => f(Document::Skipped),
    }
}

impl WorkUnit {
    pub fn path(&self) -> &Path {
        match self {
            WorkUnit::File { path, .. } | WorkUnit::JsonlRange { path, .. } => path,
        }
    }

    pub fn for_each_document(&self, mut f: impl FnMut(Document<'_>)) -> io::Result<()> {
        match self {
            WorkUnit::File { path, format: CorpusFormat::Text } => {
                let mut bytes = Vec::new();
                open_maybe_gz(path)?.read_to_end(&mut bytes)?;
                match std::str::from_utf8(&bytes) {
                    Ok(text) => f(Document::Text(text)),
                    Err(_) => f(Document::Skipped),
                }
            }
            WorkUnit::File { path, format: CorpusFormat::Jsonl } => {
                let mut reader = BufReader::with_capacity(1 << 20, open_maybe_gz(path)?);
                let mut line = Vec::new();
                loop {
                    line.clear();
                    if reader.read_until(b'\n', &mut line)? == 0 {
                        break;
                    }
                    emit_json_line(&line, &mut f);
                }
            }
            WorkUnit::JsonlRange { path, start, end } => {
                let mut file = File::open(path)?;
                // A record belongs to the range its first byte falls in.
                let mut offset = *start;
                if offset > 0 {
                    file.seek(SeekFrom::Start(offset - 1))?;
                } else {
                    file.seek(SeekFrom::Start(0))?;
                }
                let mut reader = BufReader::with_capacity(1 << 20, file);
                let mut line = Vec::new();
                if offset > 0 {
                    offset = offset - 1 + reader.read_until(b'\n', &mut line)? as u64;
                }
                while offset < *end {
                    line.clear();
                    let n = reader.read_until(b'\n', &mut line)?;
                    if n == 0 {
                        break;
                    }
                    offset += n as u64;
                    emit_json_line(&line, &mut f);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn collect(unit: &WorkUnit) -> Vec<String> {
        let mut out = Vec::new();
        unit.for_each_document(|d| match d {
            Document::Text(t) => out.push(t.to_string()),
            Document::Skipped => out.push("<skip>".into()),
        })
        .unwrap();
        out
    }

    #[test]
    fn jsonl_ranges_partition_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut f = File::create(&path).unwrap();
        let docs: Vec<String> = (0..37).map(|i| format!("doc {i} {}", "x".repeat(i % 5))).collect();
        for d in &docs {
            writeln!(f, "{}", serde_json::json!({ "text": d, "meta": {"i": 1} })).unwrap();
        }
        drop(f);
        let source = CorpusSource::new(&path, CorpusFormat::Jsonl);
        for shards in [1, 2, 3, 7, 64] {
            let mut seen: Vec<String> = source.plan(shards).unwrap().iter().flatten().flat_map(collect).collect();
            seen.sort();
            let mut want = docs.clone();
            want.sort();
            assert_eq!(seen, want, "shards={shards}");
        }
    }

    #[test]
    fn bad_records_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, b"{\"text\":\"ok\"}\nnot json\n\n{\"other\":1}\n{\"text\":\"a\\nb\"}\n").unwrap();
        let unit = WorkUnit::File { path, format: CorpusFormat::Jsonl };
        assert_eq!(collect(&unit), vec!["ok", "<skip>", "<skip>", "a\nb"]);
    }

    #[test]
    fn text_tree_with_gzip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("a.txt"), "5 hours").unwrap();
        std::fs::write(dir.path().join("bad.txt"), b"\xff\xfe").unwrap();
        let gz = File::create(dir.path().join("sub/b.txt.gz")).unwrap();
        let mut enc = flate2::write::GzEncoder::new(gz, flate2::Compression::default());
        enc.write_all(b"7 days").unwrap();
        enc.finish().unwrap();
        let source = CorpusSource::new(dir.path(), CorpusFormat::Text);
        let mut docs = Vec::new();
        source
            .for_each_document(|d| match d {
                Document::Text(t) => docs.push(t.to_string()),
                Document::Skipped => docs.push("<skip>".into()),
            })
            .unwrap();
        assert_eq!(docs, vec!["5 hours", "<skip>", "7 days"]);
        assert_eq!(source.plan(2).unwrap().iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 1]);
    }
}
