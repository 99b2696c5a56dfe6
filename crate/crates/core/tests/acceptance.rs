//! Acceptance checks, one line each. Runs without the libtest harness so the
//! lines always reach the output.

mod common;
mod stub;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Instant;

use freqgap_core::corpus::{CorpusFormat, CorpusSource};
use freqgap_core::counter::{count_corpus, CountOptions};
use freqgap_core::demo::{generate_demo, DemoConfig};
use freqgap_core::eval::{evaluate, read_records, EndpointConfig, EvalOptions, HttpCompleter, RetryConfig};
use freqgap_core::gap::{aggregate, bin_accuracy, performance_gap, trend_fit, AccuracyPoint, GroupingKey};
use freqgap_core::pipeline::{run_pipeline, RunConfig, RunOutcome, PASS2_DIR, STANDARD_KS};
use freqgap_core::tasks::{build_dataset, read_dataset_dir, render_prompt, TaskFamily, TaskId, TaskInstance};
use freqgap_core::{CountTable, CounterConfig, Term, TermSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn counting_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = scratch("oracle");
    let mut tokens_total = 0;
    for i in 0..50 {
        let window = [2, 3, 5, 8][i % 4];
        let tokens = rng.random_range(1_000..=100_000);
        tokens_total += tokens;
        let docs = common::random_corpus(&mut rng, tokens);
        let path = common::write_jsonl(&dir, &format!("c{i}.jsonl"), &docs);
        let config = CounterConfig { window, ..CounterConfig::default() };
        let options = CountOptions { shards: rng.random_range(1..=8), ..CountOptions::default() };
        let table = count_corpus(&CorpusSource::new(&path, CorpusFormat::Jsonl), &config, &options).unwrap();
        if common::table_map(&table) != common::oracle_counts(&docs, window, None) {
            return Err(format!("corpus {i} (window {window}, {} shards) differs from the oracle", options.shards));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(secs < 10.0, format!("50 corpora, {tokens_total} tokens, all keys equal, {secs:.2} s (limit 10 s)"))
}

fn dir_bytes(path: &Path) -> u64 {
    walkdir::WalkDir::new(path).into_iter().filter_map(Result::ok).filter_map(|e| e.metadata().ok()).filter(|m| m.is_file()).map(|m| m.len()).sum()
}

fn counting_determinism() -> Outcome {
    let dir = scratch("gigabyte");
    let corpus = dir.join("corpus");
    let summary = generate_demo(&corpus, &DemoConfig { size_bytes: 1 << 30, seed: 5, format: CorpusFormat::Text, ..DemoConfig::default() })
        .map_err(|e| e.to_string())?;
    let bytes = dir_bytes(&corpus);
    let source = CorpusSource::new(&corpus, CorpusFormat::Text);
    let config = CounterConfig::default();
    let mut outputs = Vec::new();
    let mut rate_at_4 = 0.0;
    for shards in [1, 4, 8] {
        let started = Instant::now();
        let table = count_corpus(&source, &config, &CountOptions { shards, ..CountOptions::default() }).map_err(|e| e.to_string())?;
        let secs = started.elapsed().as_secs_f64();
        if shards == 4 {
            rate_at_4 = bytes as f64 / secs / 1e6;
        }
        let out = dir.join(format!("counts{shards}"));
        table.save(&out).map_err(|e| e.to_string())?;
        outputs.push((std::fs::read(out.join("counts.tsv")).unwrap(), std::fs::read(out.join("meta.json")).unwrap()));
    }
    let _ = std::fs::remove_dir_all(&dir);
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    check(
        identical && rate_at_4 >= 50.0,
        format!(
            "{:.2} GB in {} files, 1/4/8 shards identical: {identical}, 4-shard throughput {rate_at_4:.1} MB/s on {cores} core(s) (need 50)",
            bytes as f64 / 1e9,
            summary.documents
        ),
    )
}

fn omega(freqs: &[u64], accs: &[(u64, u64)]) -> Vec<AccuracyPoint> {
    freqs
        .iter()
        .zip(accs)
        .enumerate()
        .map(|(i, (&freq, &(correct, n)))| AccuracyPoint { key: TermSet::single(Term::Number(i as u32)), freq, n, correct })
        .collect()
}

fn metric_correctness() -> Outcome {
    let freqs: Vec<u64> = (1..=20).collect();
    let accs: Vec<(u64, u64)> = (1..=20).map(|w| (w, 20)).collect();
    let d = performance_gap(&omega(&freqs, &accs)).unwrap();
    if (d - 0.9).abs() > 1e-12 {
        return Err(format!("20-point set gives {d}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for round in 0..100 {
        let len = rng.random_range(10..200);
        let freqs: Vec<u64> = (0..len).map(|_| rng.random_range(0..100_000)).collect();
        let accs: Vec<(u64, u64)> = (0..len).map(|_| {
            let n = rng.random_range(1..30);
            (rng.random_range(0..=n), n)
        }).collect();
        let base = performance_gap(&omega(&freqs, &accs)).unwrap();
        let doubled: Vec<u64> = freqs.iter().map(|w| 2 * w).collect();
        let squared: Vec<u64> = freqs.iter().map(|w| w * w).collect();
        if performance_gap(&omega(&doubled, &accs)).unwrap() != base || performance_gap(&omega(&squared, &accs)).unwrap() != base {
            return Err(format!("random set {round} changes under a monotone frequency map"));
        }
        let flat: Vec<(u64, u64)> = accs.iter().map(|&(_, n)| (n, 2 * n)).collect();
        let zero = performance_gap(&omega(&freqs, &flat)).unwrap();
        if zero != 0.0 {
            return Err(format!("constant accuracy gives {zero}"));
        }
    }
    Ok(format!("20-point set gives {d:.3}, 100 random sets invariant under 2w and w^2, constant accuracy gives 0"))
}

fn demo_corpus() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join("demo");
    let path = dir.join("demo.jsonl");
    if !path.exists() {
        std::fs::create_dir_all(&dir).unwrap();
        generate_demo(&path, &DemoConfig { seed: 2, ..DemoConfig::default() }).unwrap();
    }
    path
}

fn demo_run(mock: &str, root: &Path) -> Result<RunOutcome, String> {
    let mut config = RunConfig::new(demo_corpus(), CorpusFormat::Jsonl, root, mock.parse().unwrap());
    config.rng_seed = 17;
    run_pipeline(&config).map_err(|e| e.to_string())
}

fn pipeline_null() -> Outcome {
    let root = scratch("null");
    let mut checked = 0;
    for (mock, want) in [("perfect", 1.0), ("always_wrong", 0.0)] {
        let report = demo_run(mock, &root)?.report;
        let mut cells = BTreeMap::new();
        for cell in &report.cells {
            cells.insert((cell.task_id, cell.k), ());
            if cell.acc != Some(want) {
                return Err(format!("{mock}: {} k={} acc {:?}", cell.task_id, cell.k, cell.acc));
            }
            if cell.gap(GroupingKey::X1).and_then(|g| g.delta).is_none() {
                return Err(format!("{mock}: {} k={} has no x1 gap", cell.task_id, cell.k));
            }
            for g in &cell.gaps {
                if let Some(d) = g.delta {
                    if d != 0.0 {
                        return Err(format!("{mock}: {} k={} {} gap {d}", cell.task_id, cell.k, g.key.as_str()));
                    }
                    checked += 1;
                }
            }
        }
        if cells.len() != TaskId::ALL.len() * STANDARD_KS.len() {
            return Err(format!("{mock}: only {} (task, k) cells", cells.len()));
        }
    }
    Ok(format!("perfect 100.0 and always_wrong 0.0 in all 55 cells, {checked} gaps all 0.0"))
}

fn sigma(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn frequency_recovery() -> Outcome {
    let started = Instant::now();
    let root = scratch("recovery");
    demo_run("freq_logistic:1:-3", &root)?;
    let counts = CountTable::load(&root.join(PASS2_DIR)).map_err(|e| e.to_string())?;
    let datasets = read_dataset_dir(&root.join("datasets")).map_err(|e| e.to_string())?;
    let index: HashMap<String, TaskInstance> =
        datasets.iter().flat_map(|(_, d)| d.iter().map(|i| (i.instance_id.clone(), i.clone()))).collect();
    let records = read_records(&root.join("eval")).map_err(|e| e.to_string())?;
    let mut worst: (f64, String) = (0.0, String::new());
    let mut min_slope = f64::INFINITY;
    for task in TaskId::ALL {
        let mine: Vec<_> = records.iter().filter(|r| r.task_id == task).collect();
        let points = aggregate(mine.iter().copied(), &index, &counts, GroupingKey::X1).map_err(|e| e.to_string())?;
        let measured = performance_gap(&points).map_err(|e| e.to_string())?;

        // Expected gap straight from the mock's probability per group.
        let mut groups: Vec<u64> = points.iter().map(|p| {
            let x1 = p.key.terms().next().and_then(Term::number).unwrap();
            counts.unigram(Term::Number(x1))
        }).collect();
        groups.sort_unstable();
        let m = groups.len().div_ceil(10);
        let p = |w: &u64| sigma(((*w + 1) as f64).log10() - 3.0);
        let expected = groups[groups.len() - m..].iter().map(p).sum::<f64>() / m as f64 - groups[..m].iter().map(p).sum::<f64>() / m as f64;

        let err = (measured - expected).abs();
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, format!("{task}: measured {measured:.3} vs {expected:.3}"));
        }
        if err > 0.05 {
            return Err(format!("{task}: measured {measured:.4}, expected {expected:.4}"));
        }
        let slope = trend_fit(&points).map_err(|e| e.to_string())?.slope;
        min_slope = min_slope.min(slope);
        if slope <= 0.0 {
            return Err(format!("{task}: slope {slope}"));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        secs < 300.0,
        format!("11 tasks within 0.05 (worst {:.4}, {}), min slope {min_slope:.3}, {secs:.0} s (limit 300 s)", worst.0, worst.1),
    )
}

fn template_fidelity() -> Outcome {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/templates.txt")).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    let mut lines = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let task: TaskId = f[0].parse()?;
        let x1: u32 = f[1].parse().unwrap();
        let inst = match task.family() {
            TaskFamily::TimeConversion => TaskInstance::conversion(task, x1),
            _ => TaskInstance::arithmetic(task, x1, f[2].parse().unwrap()),
        }
        .map_err(|e| e.to_string())?;
        if render_prompt(&inst, false) != f[3] || render_prompt(&inst, true) != f[4] {
            return Err(format!("{line:?} renders as {:?}", render_prompt(&inst, true)));
        }
        seen.insert(task);
        lines += 1;
    }
    check(seen.len() == 11, format!("{lines} golden lines over {} tasks match byte for byte", seen.len()))
}

fn dataset_construction() -> Outcome {
    use freqgap_core::term::Unit;
    let base = CounterConfig::default().empty_table("synthetic");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = Vec::new();
    for v in 0..100u32 {
        counts.push((TermSet::single(Term::Number(v)), rng.random_range(1_000..50_000)));
        for unit in Unit::ALL {
            counts.push((TermSet::pair(Term::Number(v), Term::Unit(unit)), rng.random_range(1..500)));
        }
    }
    // Larger numbers never qualify as arithmetic or conversion operands.
    for v in [100u32, 250, 1999, 65_000] {
        counts.push((TermSet::single(Term::Number(v)), 900));
        counts.push((TermSet::pair(Term::Number(v), Term::Unit(Unit::Hour)), 10_000));
    }
    let table = CountTable::from_counts(counts, base.meta.clone());
    let factors: HashMap<&str, u64> =
        [("min_sec", 60), ("hour_min", 60), ("day_hour", 24), ("week_day", 7), ("month_week", 4), ("year_month", 12), ("decade_year", 10)]
            .into_iter()
            .collect();
    for task in TaskId::ALL {
        let data = build_dataset(&table, task).map_err(|e| e.to_string())?;
        let x1 = |i: &TaskInstance| i.x[0].number().unwrap() as u64;
        match task.family() {
            TaskFamily::TimeConversion => {
                let f = factors[task.as_str()];
                if data.len() != 100 || data.iter().any(|i| x1(i) >= 100 || i.y != x1(i) * f) {
                    return Err(format!("{task}: {} instances or a wrong factor", data.len()));
                }
            }
            _ => {
                let times = matches!(task, TaskId::Mult | TaskId::MultHash);
                let bad = data.iter().find(|i| {
                    let x2 = i.x[1].number().unwrap() as u64;
                    i.y != if times { x1(i) * x2 } else { x1(i) + x2 } || x1(i) >= 100 || !(1..=50).contains(&x2)
                });
                if data.len() != 5000 || bad.is_some() {
                    return Err(format!("{task}: {} instances, bad instance {bad:?}", data.len()));
                }
            }
        }
    }
    Ok("arithmetic tasks have 5000 instances with recomputed y, conversions follow the factor table (hour_min x60)".into())
}

fn partition_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let num_bins = rng.random_range(1..=20);
        let len = rng.random_range(num_bins as u32..300);
        let points: Vec<AccuracyPoint> = (0..len)
            .map(|i| {
                let n = rng.random_range(1..100);
                AccuracyPoint { key: TermSet::single(Term::Number(i)), freq: rng.random_range(0..1000), n, correct: rng.random_range(0..=n) }
            })
            .collect();
        let bins = bin_accuracy(&points, num_bins).unwrap();
        let total: u64 = points.iter().map(|p| p.n).sum();
        let overall = points.iter().map(|p| p.correct).sum::<u64>() as f64 / total as f64;
        let binned = bins.iter().map(|b| b.mean_acc * b.n as f64).sum::<f64>() / bins.iter().map(|b| b.n).sum::<u64>() as f64;
        worst = worst.max((overall - binned).abs());
    }
    check(worst <= 1e-12, format!("1000 random sets, largest difference {worst:.1e}"))
}

fn eval_robustness() -> Outcome {
    let stub = Arc::new(stub::Stub::flaky(0.10, 2));
    let url = stub::serve(stub.clone());
    let mut cfg = EndpointConfig::new(url, "stub");
    cfg.max_in_flight = 8;
    cfg.retry = RetryConfig { attempts: 10, initial_backoff_ms: 2, max_backoff_ms: 20 };
    let completer = HttpCompleter::new(cfg.clone()).map_err(|e| e.to_string())?;
    let bundles = stub::mult_bundles(1000);
    let records = evaluate(&bundles, &completer, &EvalOptions::for_endpoint(&cfg)).map_err(|e| e.to_string())?;
    let lost = bundles.len() - records.iter().filter(|r| r.error.is_none() && r.correct).count();
    let peak = stub.peak.load(Ordering::SeqCst);
    let failures = stub.failures_sent.load(Ordering::SeqCst);
    check(
        bundles.len() == 1000 && records.len() == 1000 && lost == 0 && peak <= 8 && failures > 0,
        format!("{} records, {lost} lost, {failures} injected failures, peak in flight {peak} (cap 8)", records.len()),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("counting oracle equivalence", counting_oracle),
        ("counting determinism and throughput", counting_determinism),
        ("metric correctness", metric_correctness),
        ("pipeline null test", pipeline_null),
        ("frequency-sensitivity recovery", frequency_recovery),
        ("template fidelity", template_fidelity),
        ("dataset construction", dataset_construction),
        ("partition identity", partition_identity),
        ("eval robustness", eval_robustness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || f == &(i + 1).to_string()) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
