//! Per (task, k) report cells and their CSV, JSON, Markdown and plot files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{aggregate, bin_accuracy, performance_gap, trend_fit, Bin, GapError, GroupingKey, Trend};
use crate::counter::CountTable;
use crate::eval::EvalRecord;
use crate::fsutil;
use crate::tasks::{TaskId, TaskInstance};

#[derive(Clone, Debug)]
pub struct ReportOptions {
    /// Cells to report; empty means whatever the records contain.
    pub tasks: Vec<TaskId>,
    pub ks: Vec<usize>,
    pub keys: Vec<GroupingKey>,
    pub bins: usize,
    /// Seeds every cell should cover; empty disables the check.
    pub seeds: Vec<u64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { tasks: Vec::new(), ks: Vec::new(), keys: GroupingKey::ALL.to_vec(), bins: 10, seeds: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyGap {
    pub key: GroupingKey,
    pub points: usize,
    pub delta: Option<f64>,
    /// Spread of Δ computed separately per seed.
    pub seed_delta_std: Option<f64>,
    pub bins: Vec<Bin>,
    pub trend: Option<Trend>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub task_id: TaskId,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub records: usize,
    pub complete: bool,
    pub acc: Option<f64>,
    pub gaps: Vec<KeyGap>,
}

impl CellReport {
    pub fn gap(&self, key: GroupingKey) -> Option<&KeyGap> {
        self.gaps.iter().find(|g| g.key == key)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub complete: bool,
    pub keys: Vec<GroupingKey>,
    pub bins: usize,
    pub cells: Vec<CellReport>,
}

fn std_dev(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt())
}

fn key_gap(
    records: &[&EvalRecord],
    seeds: &[u64],
    instances: &HashMap<String, TaskInstance>,
    counts: &CountTable,
    key: GroupingKey,
    bins: usize,
) -> Result<KeyGap, GapError> {
    let points = aggregate(records.iter().copied(), instances, counts, key)?;
    let mut notes = Vec::new();
    let delta = performance_gap(&points).map_err(|e| notes.push(format!("Δ: {e}"))).ok();
    let per_seed: Vec<f64> = seeds
        .iter()
        .filter_map(|&s| {
            let pts = aggregate(records.iter().copied().filter(|r| r.seed == s), instances, counts, key).ok()?;
            performance_gap(&pts).ok()
        })
        .collect();
    let bins = bin_accuracy(&points, bins).map_err(|e| notes.push(format!("bins: {e}"))).unwrap_or_default();
    let trend = trend_fit(&points).map_err(|e| notes.push(format!("trend: {e}"))).ok();
    Ok(KeyGap { key, points: points.len(), delta, seed_delta_std: std_dev(&per_seed), bins, trend, notes })
}

/// Builds one cell per requested (task, k), pooling all seeds.
pub fn build_report(
    records: &[EvalRecord],
    instances: &HashMap<String, TaskInstance>,
    counts: &CountTable,
    options: &ReportOptions,
) -> Result<RunReport, GapError> {
    let mut by_cell: BTreeMap<(TaskId, usize), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_cell.entry((r.task_id, r.k)).or_default().push(r);
    }
    let tasks: Vec<TaskId> = if options.tasks.is_empty() {
        by_cell.keys().map(|c| c.0).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        options.tasks.clone()
    };
    let ks: Vec<usize> = if options.ks.is_empty() {
        by_cell.keys().map(|c| c.1).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        options.ks.clone()
    };
    let mut cells = Vec::new();
    for &task in &tasks {
        for &k in &ks {
            let recs = by_cell.get(&(task, k)).map(Vec::as_slice).unwrap_or(&[]);
            let seeds: Vec<u64> = recs.iter().map(|r| r.seed).collect::<BTreeSet<_>>().into_iter().collect();
            let complete = !recs.is_empty() && options.seeds.iter().all(|s| seeds.contains(s));
            let mut gaps = Vec::new();
            if !recs.is_empty() {
                for &key in options.keys.iter().filter(|key| key.applies_to(task.family())) {
                    gaps.push(key_gap(recs, &seeds, instances, counts, key, options.bins)?);
                }
            }
            let acc = (!recs.is_empty())
                .then(|| recs.iter().filter(|r| r.correct).count() as f64 / recs.len() as f64);
            cells.push(CellReport { task_id: task, k, seeds, records: recs.len(), complete, acc, gaps });
        }
    }
    Ok(RunReport {
        complete: cells.iter().all(|c| c.complete),
        keys: options.keys.clone(),
        bins: options.bins,
        cells,
    })
}

/// Percentage with one decimal; blank when absent.
pub fn format_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => {
            let s = format!("{:.1}", v * 100.0);
            if s == "-0.0" { "0.0".into() } else { s }
        }
        None => String::new(),
    }
}

fn report_csv(report: &RunReport) -> String {
    let mut out = String::from("task_id,k,acc");
    for key in GroupingKey::ALL {
        write!(out, ",gap_{key}").unwrap();
    }
    out.push('\n');
    for cell in &report.cells {
        write!(out, "{},{},{}", cell.task_id, cell.k, format_pct(cell.acc)).unwrap();
        for key in GroupingKey::ALL {
            write!(out, ",{}", format_pct(cell.gap(key).and_then(|g| g.delta))).unwrap();
        }
        out.push('\n');
    }
    out
}

fn cell_keys(report: &RunReport, task: TaskId) -> Vec<GroupingKey> {
    report.keys.iter().copied().filter(|k| k.applies_to(task.family())).collect()
}

fn report_markdown(report: &RunReport) -> String {
    let mut out = String::new();
    if !report.complete {
        out.push_str("**Incomplete run:** blank cells have no records.\n\n");
    }
    let tasks: Vec<TaskId> = report.cells.iter().map(|c| c.task_id).collect::<BTreeSet<_>>().into_iter().collect();
    for task in tasks {
        let keys = cell_keys(report, task);
        writeln!(out, "### {task}\n").unwrap();
        let mut header = String::from("| k | Acc");
        let mut rule = String::from("|---|---");
        for key in &keys {
            write!(header, " | {}", key.label()).unwrap();
            rule.push_str("|---");
        }
        writeln!(out, "{header} |\n{rule}|").unwrap();
        for cell in report.cells.iter().filter(|c| c.task_id == task) {
            write!(out, "| {} | {}", cell.k, format_pct(cell.acc)).unwrap();
            for &key in &keys {
                write!(out, " | {}", format_pct(cell.gap(key).and_then(|g| g.delta))).unwrap();
            }
            out.push_str(" |\n");
        }
        out.push('\n');
    }
    out
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> GapError + '_ {
    move |e| GapError::Io(format!("{}: {e}", path.display()))
}

/// Writes report.csv, report.json, report.md and per-cell plot data under `out_dir`.
pub fn write_report(out_dir: &Path, report: &RunReport) -> Result<(), GapError> {
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(io(&plots))?;
    for cell in &report.cells {
        for gap in &cell.gaps {
            let stem = format!("{}_k{}_{}", cell.task_id, cell.k, gap.key);
            let mut csv = String::from("bin_index,mean_freq,mean_acc,n\n");
            for b in &gap.bins {
                writeln!(csv, "{},{},{},{}", b.index, b.mean_freq, b.mean_acc, b.n).unwrap();
            }
            let path = plots.join(format!("{stem}.csv"));
            fsutil::write_atomic(&path, csv.as_bytes()).map_err(io(&path))?;
            let trend = match gap.trend {
                Some(t) => format!("slope,intercept\n{},{}\n", t.slope, t.intercept),
                None => "slope,intercept\n,\n".into(),
            };
            let path = plots.join(format!("{stem}.trend.csv"));
            fsutil::write_atomic(&path, trend.as_bytes()).map_err(io(&path))?;
        }
    }
    let files = [
        ("report.csv", report_csv(report)),
        ("report.md", report_markdown(report)),
        ("report.json", serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
    ];
    for (name, body) in files {
        let path = out_dir.join(name);
        fsutil::write_atomic(&path, body.as_bytes()).map_err(io(&path))?;
    }
    Ok(())
}

/// Loads `report.json` from an analysis directory or a pipeline output root.
pub fn load_report(dir: &Path) -> Result<RunReport, GapError> {
    let candidates = [dir.to_path_buf(), dir.join("report.json"), dir.join("analysis").join("report.json")];
    let path: PathBuf = candidates
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| GapError::Io(format!("{}: no report.json found", dir.display())))?;
    let text = std::fs::read_to_string(&path).map_err(io(&path))?;
    serde_json::from_str(&text).map_err(|e| GapError::Io(format!("{}: {e}", path.display())))
}

/// Side-by-side tables for several runs (e.g. models of different sizes);
/// returns (CSV, Markdown).
pub fn compare_runs(runs: &[(String, RunReport)]) -> (String, String) {
    let mut csv = String::from("run,task_id,k,acc");
    for key in GroupingKey::ALL {
        write!(csv, ",gap_{key}").unwrap();
    }
    csv.push('\n');
    for (name, report) in runs {
        for cell in &report.cells {
            write!(csv, "{name},{},{},{}", cell.task_id, cell.k, format_pct(cell.acc)).unwrap();
            for key in GroupingKey::ALL {
                write!(csv, ",{}", format_pct(cell.gap(key).and_then(|g| g.delta))).unwrap();
            }
            csv.push('\n');
        }
    }

    let mut md = String::new();
    let cells: BTreeSet<(TaskId, usize)> =
        runs.iter().flat_map(|(_, r)| r.cells.iter().map(|c| (c.task_id, c.k))).collect();
    let tasks: BTreeSet<TaskId> = cells.iter().map(|c| c.0).collect();
    for task in tasks {
        let keys: BTreeSet<GroupingKey> = runs.iter().flat_map(|(_, r)| cell_keys(r, task)).collect();
        writeln!(md, "### {task}\n").unwrap();
        let mut header = String::from("| k");
        let mut rule = String::from("|---");
        for (name, _) in runs {
            write!(header, " | {name} Acc").unwrap();
            rule.push_str("|---");
            for key in &keys {
                write!(header, " | {name} {}", key.label()).unwrap();
                rule.push_str("|---");
            }
        }
        writeln!(md, "{header} |\n{rule}|").unwrap();
        for &(_, k) in cells.iter().filter(|c| c.0 == task) {
            write!(md, "| {k}").unwrap();
            for (_, report) in runs {
                let cell = report.cells.iter().find(|c| c.task_id == task && c.k == k);
                write!(md, " | {}", format_pct(cell.and_then(|c| c.acc))).unwrap();
                for &key in &keys {
                    write!(md, " | {}", format_pct(cell.and_then(|c| c.gap(key)).and_then(|g| g.delta))).unwrap();
                }
            }
            md.push_str(" |\n");
        }
        md.push('\n');
    }
    (csv, md)
}
