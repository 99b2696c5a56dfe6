//! End-to-end runs: a JSON run configuration, the seven stages in order, and
//! a manifest of input/output digests that lets a rerun skip finished stages.

mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusFormat, CorpusSource};
use crate::counter::{CountOptions, CountTable, CounterConfig};
use crate::eval::{read_records, EndpointConfig, MockPolicy};
use crate::fsutil;
use crate::gap::{GroupingKey, ReportOptions, RunReport};
use crate::tasks::{read_targets, TaskId};

pub use stages::{
    analyze_to, bundle_file, count_to, digest, generate_datasets, instance_index, load_datasets, prompt_seeds,
    read_bundle_dir, run_eval, write_prompt_dir, write_target_file,
};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Shot counts used when a config does not list its own.
pub const STANDARD_KS: [usize; 5] = [0, 2, 4, 8, 16];

#[derive(Debug, Error)]
#[error("{0}")]
pub struct StageError(pub String);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    pub format: CorpusFormat,
}

fn default_window() -> usize {
    5
}
fn default_tasks() -> Vec<TaskId> {
    TaskId::ALL.to_vec()
}
fn default_ks() -> Vec<usize> {
    STANDARD_KS.to_vec()
}
fn default_seeds() -> usize {
    5
}
fn default_bins() -> usize {
    10
}
fn default_keys() -> Vec<GroupingKey> {
    GroupingKey::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskId>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    /// Number of prompt seeds (shot selections) per (task, k).
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
    pub output_root: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
    /// Counting threads; does not change any output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shards: Option<usize>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_keys")]
    pub keys: Vec<GroupingKey>,
}

/// Where model answers come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    Mock(MockPolicy),
    Endpoint(EndpointConfig),
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, format: CorpusFormat, output_root: impl Into<PathBuf>, mock: MockPolicy) -> Self {
        Self {
            corpus: CorpusConfig { path: corpus.into(), format },
            window: default_window(),
            tasks: default_tasks(),
            ks: default_ks(),
            seeds: default_seeds(),
            mock: Some(mock),
            endpoint: None,
            output_root: output_root.into(),
            rng_seed: 0,
            shards: None,
            bins: default_bins(),
            keys: default_keys(),
        }
    }

    /// Invariant violations as (field path, message) diagnostics.
    pub fn check(&self) -> Vec<String> {
        let mut diags = Vec::new();
        if self.window < 2 {
            diags.push("window: window must be ≥ 2".to_string());
        }
        if self.seeds == 0 {
            diags.push("seeds: seeds must be ≥ 1".to_string());
        }
        if self.ks.is_empty() {
            diags.push("ks: at least one shot count is required".to_string());
        }
        if self.tasks.is_empty() {
            diags.push("tasks: at least one task is required".to_string());
        }
        if self.keys.is_empty() {
            diags.push("keys: at least one grouping key is required".to_string());
        }
        if self.bins == 0 {
            diags.push("bins: bins must be ≥ 1".to_string());
        }
        if self.shards == Some(0) {
            diags.push("shards: shards must be ≥ 1".to_string());
        }
        match (&self.mock, &self.endpoint) {
            (Some(_), Some(_)) => diags.push("mock: set either mock or endpoint, not both".to_string()),
            (None, None) => diags.push("endpoint: one of mock or endpoint is required".to_string()),
            (None, Some(e)) => {
                if let Err(m) = e.validate() {
                    diags.push(format!("endpoint: {m}"));
                }
            }
            _ => {}
        }
        diags
    }

    pub fn warnings(&self) -> Vec<String> {
        self.ks
            .iter()
            .filter(|k| !STANDARD_KS.contains(k))
            .map(|k| format!("ks: {k} is outside the standard shot counts {STANDARD_KS:?}"))
            .collect()
    }

    pub fn backend(&self) -> Backend {
        match (&self.mock, &self.endpoint) {
            (Some(m), _) => Backend::Mock(*m),
            (None, Some(e)) => Backend::Endpoint(e.clone()),
            (None, None) => unreachable!("checked config has a backend"),
        }
    }

    pub fn counter_config(&self) -> CounterConfig {
        CounterConfig { window: self.window, ..CounterConfig::default() }
    }

    pub fn prompt_seeds(&self) -> Vec<u64> {
        prompt_seeds(self.rng_seed, self.seeds)
    }

    pub fn digest(&self) -> String {
        canonical_digest(self)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.corpus.path.is_relative() {
            self.corpus.path = base.join(&self.corpus.path);
        }
        if self.output_root.is_relative() {
            self.output_root = base.join(&self.output_root);
        }
    }
}

fn canonical_digest(value: &impl Serialize) -> String {
    // serde_json::Value keeps object keys sorted, so this is canonical.
    let v = serde_json::to_value(value).expect("serializable");
    fsutil::sha256_hex(v.to_string().as_bytes())
}

/// A valid configuration with any warnings.
#[derive(Clone, Debug)]
pub struct ValidConfig {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

/// Parses and checks a config document; diagnostics carry field paths.
pub fn parse_config(text: &str) -> Result<ValidConfig, Vec<String>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().to_string();
        vec![if path == "." { msg } else { format!("{path}: {msg}") }]
    })?;
    let diags = config.check();
    if !diags.is_empty() {
        return Err(diags);
    }
    let warnings = config.warnings();
    Ok(ValidConfig { config, warnings })
}

/// Reads a config file; relative paths inside it are taken from the file's directory.
pub fn validate_config(path: &Path) -> Result<ValidConfig, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let mut valid = parse_config(&text)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    valid.config.resolve_paths(base);
    Ok(valid)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output root.
    pub path: String,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<Artifact>,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_digest: String,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunManifest {
    pub fn load(root: &Path) -> Option<RunManifest> {
        let bytes = std::fs::read(root.join(MANIFEST_FILE)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Output digest of a stage, by artifact path.
    pub fn output(&self, stage: &str, path: &str) -> Option<&str> {
        self.stage(stage)?.outputs.iter().find(|a| a.path == path).map(|a| a.digest.as_str())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Runner {
    root: PathBuf,
    manifest: RunManifest,
}

impl Runner {
    fn save(&self) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        fsutil::write_atomic(&self.root.join(MANIFEST_FILE), &bytes)
            .map_err(|e| PipelineError::Stage { stage: "manifest".into(), message: e.to_string() })
    }

    fn fail(&mut self, stage: &str, e: StageError) -> PipelineError {
        self.manifest.failure = Some(format!("{stage}: {e}"));
        let _ = self.save();
        PipelineError::Stage { stage: stage.into(), message: e.0 }
    }

    fn reusable(&self, name: &str, inputs: &BTreeMap<String, String>) -> bool {
        let Some(prev) = self.manifest.stage(name) else { return false };
        &prev.inputs == inputs
            && prev.outputs.iter().all(|a| {
                let p = self.root.join(&a.path);
                p.exists() && fsutil::path_digest(&p).is_ok_and(|d| d == a.digest)
            })
    }

    /// Runs a stage unless the manifest shows it already ran on the same
    /// inputs and its outputs are intact; returns the output digests.
    fn stage<T>(
        &mut self,
        name: &str,
        inputs: BTreeMap<String, String>,
        outputs: &[&str],
        run: impl FnOnce(&Path) -> Result<T, StageError>,
    ) -> Result<(Option<T>, Vec<String>), PipelineError> {
        if self.reusable(name, &inputs) {
            log::info!("{name}: up to date");
            let prev = self.manifest.stage(name).expect("checked");
            return Ok((None, prev.outputs.iter().map(|a| a.digest.clone()).collect()));
        }
        // Anything recorded for this stage or later is stale from here on.
        if let Some(pos) = self.manifest.stages.iter().position(|s| s.stage == name) {
            self.manifest.stages.truncate(pos);
        }
        self.manifest.complete = false;
        log::info!("{name}: running");
        let started_at = now();
        let value = run(&self.root).map_err(|e| self.fail(name, e))?;
        let mut artifacts = Vec::new();
        for out in outputs {
            let d = digest(&self.root.join(out)).map_err(|e| self.fail(name, e))?;
            artifacts.push(Artifact { path: out.to_string(), digest: d });
        }
        let digests = artifacts.iter().map(|a| a.digest.clone()).collect();
        self.manifest.stages.push(StageRecord {
            stage: name.into(),
            inputs,
            outputs: artifacts,
            started_at,
            finished_at: now(),
        });
        self.manifest.failure = None;
        self.save()?;
        Ok((Some(value), digests))
    }
}

fn inputs<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn load_table(path: &Path) -> Result<CountTable, StageError> {
    CountTable::load(path).map_err(|e| StageError(e.to_string()))
}

pub const PASS1_DIR: &str = "counts/pass1";
pub const DATASETS_DIR: &str = "datasets";
pub const TARGETS_FILE: &str = "targets.txt";
pub const PASS2_DIR: &str = "counts/pass2";
pub const PROMPTS_DIR: &str = "prompts";
pub const EVAL_DIR: &str = "eval";
pub const RECORDS_PATH: &str = "eval/records.jsonl";
pub const ANALYSIS_DIR: &str = "analysis";

/// Outcome of a pipeline run.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: RunReport,
}

/// Runs count → gen → targets → targeted count → prompts → eval → analyze,
/// reusing any stage whose recorded inputs and outputs still match.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let diags = config.check();
    if !diags.is_empty() {
        return Err(PipelineError::Config(diags));
    }
    for w in config.warnings() {
        log::warn!("{w}");
    }
    let root = config.output_root.clone();
    std::fs::create_dir_all(&root)
        .map_err(|e| PipelineError::Stage { stage: "setup".into(), message: format!("{}: {e}", root.display()) })?;
    let mut manifest = RunManifest::load(&root).unwrap_or(RunManifest {
        tool_version: String::new(),
        config_digest: String::new(),
        stages: Vec::new(),
        complete: false,
        failure: None,
    });
    manifest.tool_version = env!("CARGO_PKG_VERSION").into();
    manifest.config_digest = config.digest();
    let mut runner = Runner { root: root.clone(), manifest };

    let source = CorpusSource::new(&config.corpus.path, config.corpus.format);
    let corpus_digest = digest(&source.path).map_err(|e| runner.fail("count_pass1", e))?;
    let counter = config.counter_config();
    let options = CountOptions {
        shards: config.shards.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        ..CountOptions::default()
    };

    let (_, d) = runner.stage(
        "count_pass1",
        inputs([("corpus", corpus_digest.clone()), ("counter", counter.digest())]),
        &[PASS1_DIR],
        |root| count_to(&source, &counter, &options, &root.join(PASS1_DIR)).map(|_| ()),
    )?;
    let pass1_digest = d[0].clone();

    let task_list = config.tasks.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(",");
    let (datasets, d) = runner.stage(
        "gen",
        inputs([("counts", pass1_digest), ("tasks", task_list.clone())]),
        &[DATASETS_DIR],
        |root| generate_datasets(&load_table(&root.join(PASS1_DIR))?, &config.tasks, &root.join(DATASETS_DIR)),
    )?;
    let datasets_digest = d[0].clone();
    let datasets = match datasets {
        Some(d) => d,
        None => load_datasets(&root.join(DATASETS_DIR)).map_err(|e| runner.fail("gen", e))?,
    };

    let (_, d) = runner.stage(
        "targets",
        inputs([("datasets", datasets_digest.clone())]),
        &[TARGETS_FILE],
        |root| write_target_file(&datasets, &root.join(TARGETS_FILE)).map(|_| ()),
    )?;
    let targets_digest = d[0].clone();

    let targets = read_targets(&root.join(TARGETS_FILE)).map_err(|e| runner.fail("count_pass2", StageError(e.to_string())))?;
    let targeted = counter.clone().with_targets(targets);
    let (pass2, d) = runner.stage(
        "count_pass2",
        inputs([("corpus", corpus_digest), ("counter", targeted.digest()), ("targets", targets_digest)]),
        &[PASS2_DIR],
        |root| count_to(&source, &targeted, &options, &root.join(PASS2_DIR)),
    )?;
    let pass2_digest = d[0].clone();
    let pass2 = match pass2 {
        Some(t) => t,
        None => load_table(&root.join(PASS2_DIR)).map_err(|e| runner.fail("count_pass2", e))?,
    };

    let seeds = config.prompt_seeds();
    let ks = config.ks.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let seed_list = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let (_, d) = runner.stage(
        "prompts",
        inputs([("datasets", datasets_digest.clone()), ("ks", ks.clone()), ("seeds", seed_list.clone())]),
        &[PROMPTS_DIR],
        |root| write_prompt_dir(&datasets, &config.ks, &seeds, &root.join(PROMPTS_DIR)).map(|_| ()),
    )?;
    let prompts_digest = d[0].clone();

    let backend = config.backend();
    let backend_desc = match &backend {
        Backend::Mock(p) => format!("mock:{p}"),
        Backend::Endpoint(e) => format!("endpoint:{}", canonical_digest(e)),
    };
    let mut eval_inputs = inputs([("prompts", prompts_digest), ("backend", backend_desc)]);
    if matches!(backend, Backend::Mock(_)) {
        eval_inputs.insert("counts".into(), pass2_digest.clone());
    }
    let (records, d) = runner.stage("eval", eval_inputs, &[RECORDS_PATH], |root| {
        let bundles = read_bundle_dir(&root.join(PROMPTS_DIR))?;
        run_eval(&bundles, &backend, Some(&pass2), &root.join(EVAL_DIR))
    })?;
    let records_digest = d[0].clone();
    let records = match records {
        Some(r) => r,
        None => read_records(&root.join(RECORDS_PATH)).map_err(|e| runner.fail("eval", StageError(e.to_string())))?,
    };

    let report_options = ReportOptions {
        tasks: config.tasks.clone(),
        ks: config.ks.clone(),
        keys: config.keys.clone(),
        bins: config.bins,
        seeds: seeds.clone(),
    };
    let keys = config.keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",");
    let (report, _) = runner.stage(
        "analyze",
        inputs([
            ("records", records_digest),
            ("datasets", datasets_digest),
            ("counts", pass2_digest),
            ("tasks", task_list),
            ("ks", ks),
            ("seeds", seed_list),
            ("keys", keys),
            ("bins", config.bins.to_string()),
        ]),
        &[ANALYSIS_DIR],
        |root| analyze_to(&records, &datasets, &pass2, &report_options, &root.join(ANALYSIS_DIR)),
    )?;
    let report = match report {
        Some(r) => r,
        None => crate::gap::load_report(&root.join(ANALYSIS_DIR)).map_err(|e| runner.fail("analyze", StageError(e.to_string())))?,
    };

    runner.manifest.complete = true;
    runner.save()?;
    Ok(RunOutcome { manifest: runner.manifest, report })
}
