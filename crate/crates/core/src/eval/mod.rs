//! Model evaluation: bounded-parallel completion requests, answer scoring,
//! and a resumable records store.

mod answer;
mod client;
mod mock;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;
use crate::tasks::{BundleRecord, TaskId};

pub use answer::{apply_stops, extract_answer, score};
pub use client::{
    response_text, Completer, EndpointConfig, HttpCompleter, MockCompleter, RequestError, RetryConfig, TOKEN_ENV,
};
pub use mock::{mock_generate, sigmoid, MockKind, MockPolicy};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const PARTIAL_FILE: &str = "records.partial.jsonl";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("endpoint unreachable after retries ({completed} of {total} records kept): {message}")]
    Unreachable { completed: usize, total: usize, message: String },
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

/// One scored generation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub instance_id: String,
    pub task_id: TaskId,
    pub k: usize,
    pub seed: u64,
    pub prompt_digest: String,
    pub raw_output: String,
    pub extracted: Option<u64>,
    pub gold: u64,
    pub correct: bool,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type RecordKey = (TaskId, usize, u64, String);

impl EvalRecord {
    pub fn key(&self) -> RecordKey {
        (self.task_id, self.k, self.seed, self.instance_id.clone())
    }

    /// Scores `raw_output` (stops already applied) against the bundle's gold answer.
    pub fn scored(bundle: &BundleRecord, raw_output: String, latency_ms: u64, error: Option<String>) -> Self {
        let extracted = if error.is_some() { None } else { extract_answer(&raw_output) };
        EvalRecord {
            instance_id: bundle.instance_id.clone(),
            task_id: bundle.task_id,
            k: bundle.k,
            seed: bundle.seed,
            prompt_digest: prompt_digest(&bundle.prompt),
            raw_output,
            extracted,
            gold: bundle.gold,
            correct: score(extracted, bundle.gold),
            latency_ms,
            error,
        }
    }

    /// Correctness recomputed from the stored output.
    pub fn rescore(&self) -> bool {
        self.error.is_none() && score(extract_answer(&self.raw_output), self.gold)
    }
}

fn bundle_key(b: &BundleRecord) -> RecordKey {
    (b.task_id, b.k, b.seed, b.instance_id.clone())
}

pub fn prompt_digest(prompt: &str) -> String {
    fsutil::sha256_hex(prompt.as_bytes())[..16].to_string()
}

/// Canonical record order: task, k, seed, instance.
pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| {
        (a.task_id.as_str(), a.k, a.seed, &a.instance_id).cmp(&(b.task_id.as_str(), b.k, b.seed, &b.instance_id))
    });
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub max_in_flight: usize,
    pub retry: RetryConfig,
    pub stop: Vec<String>,
    /// Completed records are appended here as they arrive, and records
    /// already present (without an error note) are not requested again.
    pub partial_path: Option<PathBuf>,
    /// Off for the mock, so its records are byte-reproducible.
    pub record_latency: bool,
}

impl EvalOptions {
    pub fn for_endpoint(config: &EndpointConfig) -> Self {
        Self { max_in_flight: config.max_in_flight, retry: config.retry.clone(), stop: config.stop.clone(), partial_path: None, record_latency: true }
    }

    pub fn for_mock() -> Self {
        Self {
            max_in_flight: 64,
            retry: RetryConfig { attempts: 1, initial_backoff_ms: 0, max_backoff_ms: 0 },
            stop: vec!["\n".into(), "Q:".into()],
            partial_path: None,
            record_latency: false,
        }
    }
}

enum Outcome {
    Done(EvalRecord),
    Abort(String),
}

async fn run_one(bundle: &BundleRecord, completer: &dyn Completer, options: &EvalOptions) -> Outcome {
    let started = Instant::now();
    let elapsed = || if options.record_latency { started.elapsed().as_millis() as u64 } else { 0 };
    let attempts = options.retry.attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            tokio::time::sleep(options.retry.backoff(attempt - 1)).await;
        }
        match completer.complete(bundle).await {
            Ok(text) => {
                let raw = apply_stops(&text, &options.stop).to_string();
                return Outcome::Done(EvalRecord::scored(bundle, raw, elapsed(), None));
            }
            Err(e) if e.is_retryable() => last = Some(e),
            Err(e) => {
                let note = Some(e.message());
                return Outcome::Done(EvalRecord::scored(bundle, String::new(), elapsed(), note));
            }
        }
    }
    let last = last.expect("at least one attempt");
    match last {
        RequestError::Unreachable(m) => Outcome::Abort(m),
        other => {
            let note = Some(format!("{} (after {attempts} attempts)", other.message()));
            Outcome::Done(EvalRecord::scored(bundle, String::new(), elapsed(), note))
        }
    }
}

/// Reads a partial records file, tolerating a torn final line.
pub fn read_partial(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if let Ok(r) = serde_json::from_str::<EvalRecord>(&line) {
            out.push(r);
        }
    }
    Ok(out)
}

/// Evaluates every bundle, returning one record per bundle in canonical order.
pub async fn evaluate_async(
    bundles: &[BundleRecord],
    completer: &dyn Completer,
    options: &EvalOptions,
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut done: HashMap<RecordKey, EvalRecord> = HashMap::new();
    let mut sink = None;
    if let Some(path) = &options.partial_path {
        let digests: HashMap<RecordKey, String> =
            bundles.iter().map(|b| (bundle_key(b), prompt_digest(&b.prompt))).collect();
        for r in read_partial(path)? {
            if r.error.is_none() && digests.get(&r.key()) == Some(&r.prompt_digest) {
                done.insert(r.key(), r);
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        // Rewrite the file with only the reusable records so it never grows stale lines.
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        for r in done.values() {
            serde_json::to_writer(&mut w, r).expect("record serializes");
            w.write_all(b"\n").map_err(io_err(path))?;
        }
        w.flush().map_err(io_err(path))?;
        let f = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        sink = Some((path.clone(), BufWriter::new(f)));
    }

    let pending: Vec<&BundleRecord> = bundles.iter().filter(|b| !done.contains_key(&bundle_key(b))).collect();
    let mut stream = futures::stream::iter(pending)
        .map(|b| run_one(b, completer, options))
        .buffer_unordered(options.max_in_flight.max(1));
    let mut abort = None;
    let mut since_flush = 0;
    while let Some(outcome) = stream.next().await {
        match outcome {
            Outcome::Done(record) => {
                if let Some((path, w)) = sink.as_mut() {
                    serde_json::to_writer(&mut *w, &record).expect("record serializes");
                    w.write_all(b"\n").map_err(io_err(path))?;
                    since_flush += 1;
                    if since_flush >= 64 {
                        w.flush().map_err(io_err(path))?;
                        since_flush = 0;
                    }
                }
                done.insert(record.key(), record);
            }
            Outcome::Abort(message) => {
                abort = Some(message);
                break;
            }
        }
    }
    drop(stream);
    if let Some((path, mut w)) = sink {
        w.flush().map_err(io_err(&path))?;
        w.into_inner().map_err(|e| io_err(&path)(e.into_error()))?.sync_all().map_err(io_err(&path))?;
    }
    if let Some(message) = abort {
        return Err(EvalError::Unreachable { completed: done.len(), total: bundles.len(), message });
    }
    let mut records: Vec<EvalRecord> = done.into_values().collect();
    sort_records(&mut records);
    Ok(records)
}

/// Blocking wrapper around [`evaluate_async`] on a private runtime.
pub fn evaluate(
    bundles: &[BundleRecord],
    completer: &dyn Completer,
    options: &EvalOptions,
) -> Result<Vec<EvalRecord>, EvalError> {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| EvalError::Io { path: PathBuf::from("<runtime>"), source: e })?;
    runtime.block_on(evaluate_async(bundles, completer, options))
}

/// Evaluates into `out_dir`, resuming from a partial file left by an earlier run.
pub fn evaluate_to_dir(
    bundles: &[BundleRecord],
    completer: &dyn Completer,
    options: &EvalOptions,
    out_dir: &Path,
) -> Result<Vec<EvalRecord>, EvalError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let partial = out_dir.join(PARTIAL_FILE);
    let options = EvalOptions { partial_path: Some(partial.clone()), ..options.clone() };
    let records = evaluate(bundles, completer, &options)?;
    write_records(&out_dir.join(RECORDS_FILE), &records)?;
    let _ = std::fs::remove_file(&partial);
    Ok(records)
}

pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<(), EvalError> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut buf = Vec::new();
    for r in &sorted {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    fsutil::write_atomic(path, &buf).map_err(io_err(path))
}

/// Reads a records file, or `records.jsonl` inside a directory.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let path = if path.is_dir() { path.join(RECORDS_FILE) } else { path.to_path_buf() };
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
