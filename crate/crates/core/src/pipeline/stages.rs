//! The individual pipeline stages, each reading and writing plain files so
//! the CLI subcommands can run them one at a time.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::corpus::CorpusSource;
use crate::counter::{count_corpus, CountOptions, CountTable, CounterConfig};
use crate::eval::{evaluate_to_dir, EvalOptions, EvalRecord, HttpCompleter, MockCompleter};
use crate::fsutil::{self, StagedDir};
use crate::gap::{build_report, write_report, ReportOptions, RunReport};
use crate::tasks::{
    build_dataset, build_fewshot_prompts, dataset_path, derive_query_sets, read_bundles, read_dataset_dir,
    write_bundles, write_dataset, write_targets, BundleRecord, TaskId, TaskInstance,
};

use super::{Backend, StageError};

fn err(e: impl std::fmt::Display) -> StageError {
    StageError(e.to_string())
}

/// Counts a corpus and saves the table to `out` (directory or `.tsv` file).
pub fn count_to(source: &CorpusSource, config: &CounterConfig, options: &CountOptions, out: &Path) -> Result<CountTable, StageError> {
    let table = count_corpus(source, config, options).map_err(err)?;
    if out.extension().is_some_and(|e| e == "tsv") {
        table.save(out).map_err(err)?;
    } else {
        let staged = StagedDir::new(out).map_err(err)?;
        table.save(staged.path()).map_err(err)?;
        staged.commit().map_err(err)?;
    }
    Ok(table)
}

/// Builds each task's dataset into `out_dir/<task>.jsonl`.
pub fn generate_datasets(counts: &CountTable, tasks: &[TaskId], out_dir: &Path) -> Result<Vec<(TaskId, Vec<TaskInstance>)>, StageError> {
    let staged = StagedDir::new(out_dir).map_err(err)?;
    let mut out = Vec::new();
    for &task in tasks {
        let data = build_dataset(counts, task).map_err(err)?;
        write_dataset(&dataset_path(staged.path(), task), &data).map_err(err)?;
        log::info!("{task}: {} instances", data.len());
        out.push((task, data));
    }
    staged.commit().map_err(err)?;
    Ok(out)
}

pub fn load_datasets(dir: &Path) -> Result<Vec<(TaskId, Vec<TaskInstance>)>, StageError> {
    let data = read_dataset_dir(dir).map_err(err)?;
    if data.is_empty() {
        return Err(StageError(format!("{}: no datasets found", dir.display())));
    }
    Ok(data)
}

pub fn instance_index(datasets: &[(TaskId, Vec<TaskInstance>)]) -> HashMap<String, TaskInstance> {
    datasets.iter().flat_map(|(_, d)| d.iter()).map(|i| (i.instance_id.clone(), i.clone())).collect()
}

/// Writes the union of every instance's query term sets, one key per line.
pub fn write_target_file(datasets: &[(TaskId, Vec<TaskInstance>)], out: &Path) -> Result<usize, StageError> {
    let targets = derive_query_sets(datasets.iter().flat_map(|(_, d)| d.iter()));
    write_targets(out, &targets).map_err(err)?;
    Ok(targets.len())
}

/// Prompt seeds for a run: `seeds` consecutive values starting at `rng_seed`.
pub fn prompt_seeds(rng_seed: u64, seeds: usize) -> Vec<u64> {
    (0..seeds as u64).map(|i| rng_seed.wrapping_add(i)).collect()
}

pub fn bundle_file(dir: &Path, task: TaskId, k: usize, seed: u64) -> PathBuf {
    dir.join(format!("{task}_k{k}_s{seed}.jsonl"))
}

/// Writes one bundle file per (task, k, seed).
pub fn write_prompt_dir(
    datasets: &[(TaskId, Vec<TaskInstance>)],
    ks: &[usize],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<usize, StageError> {
    let staged = StagedDir::new(out_dir).map_err(err)?;
    let mut total = 0;
    for (task, data) in datasets {
        for &k in ks {
            for &seed in seeds {
                let bundles = build_fewshot_prompts(data, k, seed).map_err(|e| StageError(format!("{task}: {e}")))?;
                let records: Vec<BundleRecord> = bundles.iter().map(|b| b.record()).collect();
                write_bundles(&bundle_file(staged.path(), *task, k, seed), &records).map_err(err)?;
                total += records.len();
            }
        }
    }
    staged.commit().map_err(err)?;
    Ok(total)
}

/// Every bundle in a directory of bundle files (or a single file).
pub fn read_bundle_dir(path: &Path) -> Result<Vec<BundleRecord>, StageError> {
    if path.is_file() {
        return read_bundles(path).map_err(err);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| StageError(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_bundles(&f).map_err(err)?);
    }
    Ok(out)
}

/// Evaluates bundles with the chosen backend into `out_dir/records.jsonl`.
pub fn run_eval(
    bundles: &[BundleRecord],
    backend: &Backend,
    counts: Option<&CountTable>,
    out_dir: &Path,
) -> Result<Vec<EvalRecord>, StageError> {
    match backend {
        Backend::Mock(policy) => {
            let completer = MockCompleter::new(*policy, counts);
            evaluate_to_dir(bundles, &completer, &EvalOptions::for_mock(), out_dir).map_err(err)
        }
        Backend::Endpoint(config) => {
            let completer = HttpCompleter::new(config.clone()).map_err(err)?;
            evaluate_to_dir(bundles, &completer, &EvalOptions::for_endpoint(config), out_dir).map_err(err)
        }
    }
}

pub fn analyze_to(
    records: &[EvalRecord],
    datasets: &[(TaskId, Vec<TaskInstance>)],
    counts: &CountTable,
    options: &ReportOptions,
    out_dir: &Path,
) -> Result<RunReport, StageError> {
    let report = build_report(records, &instance_index(datasets), counts, options).map_err(err)?;
    let staged = StagedDir::new(out_dir).map_err(err)?;
    write_report(staged.path(), &report).map_err(err)?;
    staged.commit().map_err(err)?;
    Ok(report)
}

pub fn digest(path: &Path) -> Result<String, StageError> {
    fsutil::path_digest(path).map_err(|e| StageError(format!("{}: {e}", path.display())))
}
