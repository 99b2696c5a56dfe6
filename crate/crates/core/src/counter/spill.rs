//! Sorted on-disk runs of partial pair counts and their k-way merge.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rustc_hash::FxHashMap;
use tempfile::TempDir;

type RunIter = Box<dyn Iterator<Item = io::Result<(u64, u64)>>>;

const RECORD_BYTES: usize = 16;

/// Accumulates sorted runs in a private temporary directory.
pub(crate) struct Spiller {
    dir: TempDir,
    runs: Vec<PathBuf>,
}

impl Spiller {
    pub(crate) fn new(parent: Option<&Path>) -> io::Result<Self> {
        let dir = match parent {
            Some(p) => {
                std::fs::create_dir_all(p)?;
                tempfile::Builder::new().prefix("freqgap-spill").tempdir_in(p)?
            }
            None => tempfile::Builder::new().prefix("freqgap-spill").tempdir()?,
        };
        Ok(Self { dir, runs: Vec::new() })
    }

    pub(crate) fn run_count(&self) -> usize {
        self.runs.len()
    }

    /// Drains `map` into a new sorted run file.
    pub(crate) fn spill(&mut self, map: &mut FxHashMap<u64, u64>) -> io::Result<()> {
        let mut entries: Vec<(u64, u64)> = map.drain().collect();
        entries.sort_unstable_by_key(|&(k, _)| k);
        let path = self.dir.path().join(format!("run-{:05}.bin", self.runs.len()));
        let mut out = BufWriter::with_capacity(1 << 20, File::create(&path)?);
        for (k, c) in entries {
            out.write_all(&k.to_le_bytes())?;
            out.write_all(&c.to_le_bytes())?;
        }
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        self.runs.push(path);
        Ok(())
    }

    /// Streams every run plus the sorted in-memory remainder through a
    /// k-way merge, summing counts of equal keys.
    pub(crate) fn merge(self, in_memory: Vec<(u64, u64)>) -> io::Result<Vec<(u64, u64)>> {
        let mut sources: Vec<RunIter> = Vec::new();
        for path in &self.runs {
            sources.push(Box::new(RunReader::open(path)?));
        }
        sources.push(Box::new(in_memory.into_iter().map(Ok)));
        kway_merge(sources)
    }
}

struct RunReader {
    inner: BufReader<File>,
}

impl RunReader {
    fn open(path: &Path) -> io::Result<Self> {
        Ok(Self { inner: BufReader::with_capacity(1 << 20, File::open(path)?) })
    }
}

impl Iterator for RunReader {
    type Item = io::Result<(u64, u64)>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = [0u8; RECORD_BYTES];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => {
                let k = u64::from_le_bytes(buf[..8].try_into().unwrap());
                let c = u64::from_le_bytes(buf[8..].try_into().unwrap());
                Some(Ok((k, c)))
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => None,
            Err(e) => Some(Err(e)),
        }
    }
}

/// Merges key-sorted sources into one key-sorted vector with summed counts.
pub(crate) fn kway_merge(
    mut sources: Vec<RunIter>,
) -> io::Result<Vec<(u64, u64)>> {
    let mut heads: Vec<Option<(u64, u64)>> = Vec::with_capacity(sources.len());
    let mut heap = BinaryHeap::new();
    for (i, src) in sources.iter_mut().enumerate() {
        let head = src.next().transpose()?;
        if let Some((k, _)) = head {
            heap.push(Reverse((k, i)));
        }
        heads.push(head);
    }
    let mut out: Vec<(u64, u64)> = Vec::new();
    while let Some(Reverse((key, i))) = heap.pop() {
        let (_, count) = heads[i].take().expect("heap entry has a head");
        match out.last_mut() {
            Some((last, total)) if *last == key => *total += count,
            _ => out.push((key, count)),
        }
        if let Some((k, c)) = sources[i].next().transpose()? {
            heads[i] = Some((k, c));
            heap.push(Reverse((k, i)));
        }
    }
    Ok(out)
}
