//! `freqgap`: count term frequencies, build tasks, evaluate a model and
//! measure how accuracy tracks frequency.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use freqgap_core::corpus::{CorpusFormat, CorpusSource};
use freqgap_core::counter::{merge_all, CountOptions, CountTable, CounterConfig, WindowRule, DEFAULT_SPILL_ENTRIES};
use freqgap_core::demo::{generate_demo, DemoConfig};
use freqgap_core::eval::{read_records, EndpointConfig, MockPolicy, RetryConfig};
use freqgap_core::gap::{compare_runs, load_report, GroupingKey, ReportOptions};
use freqgap_core::pipeline::{
    analyze_to, count_to, generate_datasets, load_datasets, prompt_seeds, read_bundle_dir, run_eval, run_pipeline,
    validate_config, write_prompt_dir, write_target_file, Backend, PipelineError, STANDARD_KS,
};
use freqgap_core::tasks::{read_targets, TaskId};
use freqgap_core::fsutil;

#[derive(Parser)]
#[command(name = "freqgap", version, about = "Term-frequency vs. few-shot accuracy toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count unigrams and windowed pairs/triples of numbers and time units.
    Count(CountArgs),
    /// Merge count tables produced with the same counter configuration.
    Merge(MergeArgs),
    /// Build task datasets from a count table.
    Gen(GenArgs),
    /// Write the term sets the datasets will be scored on.
    Targets(TargetsArgs),
    /// Render k-shot prompt bundles.
    Prompts(PromptsArgs),
    /// Query a completion endpoint (or a mock) and score the answers.
    Eval(EvalArgs),
    /// Compute accuracy, performance gaps, bins and trends.
    Analyze(AnalyzeArgs),
    /// Put several analysed runs side by side.
    Compare(CompareArgs),
    /// Run every stage from a config file, resuming finished stages.
    Run(ConfigArgs),
    /// Check a config file and print diagnostics.
    Validate(ConfigArgs),
    /// Generate the synthetic demo corpus.
    Demo(DemoArgs),
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: CorpusFormat,
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Count pairs up to `window` positions apart instead of within a `window`-token span.
    #[arg(long)]
    distance_window: bool,
    #[arg(long, default_value_t = 6)]
    max_digits: usize,
    #[arg(long)]
    shards: Option<usize>,
    /// Targeted pass: only count these term sets (one key per line).
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SPILL_ENTRIES)]
    spill_entries: usize,
    /// Output directory, or a `.tsv` file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    counts: PathBuf,
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<TaskId>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TargetsArgs {
    #[arg(long)]
    datasets: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PromptsArgs {
    #[arg(long)]
    datasets: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = STANDARD_KS)]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    bundles: PathBuf,
    #[arg(long, required_unless_present = "mock")]
    endpoint: Option<String>,
    #[arg(long, required_unless_present = "mock")]
    model: Option<String>,
    /// Request path appended to the endpoint URL.
    #[arg(long, default_value = "/v1/completions")]
    path: String,
    #[arg(long, default_value_t = 8)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 5)]
    attempts: u32,
    #[arg(long, default_value_t = 60_000)]
    timeout_ms: u64,
    /// `perfect`, `always_wrong` or `freq_logistic:A:B`, optionally `@SEED`.
    #[arg(long, conflicts_with = "endpoint")]
    mock: Option<MockPolicy>,
    /// Count table the mock reads frequencies from.
    #[arg(long, requires = "mock")]
    counts: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    datasets: PathBuf,
    #[arg(long)]
    counts: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "x1,x1x2,x1y,x1x2x3,x1x2y")]
    keys: Vec<GroupingKey>,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<TaskId>>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    out: PathBuf,
    /// Approximate size, e.g. `10MB` or `1GB`.
    #[arg(long, default_value = "10MB", value_parser = parse_size)]
    size: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3.0)]
    decades: f64,
    #[arg(long, default_value = "jsonl")]
    format: CorpusFormat,
}

fn parse_size(s: &str) -> Result<u64, String> {
    let upper = s.trim().to_ascii_uppercase();
    let (digits, mult) = [("GB", 1u64 << 30), ("G", 1 << 30), ("MB", 1 << 20), ("M", 1 << 20), ("KB", 1 << 10), ("K", 1 << 10), ("B", 1)]
        .iter()
        .find_map(|(suffix, m)| upper.strip_suffix(suffix).map(|d| (d.trim().to_string(), *m)))
        .unwrap_or((upper.clone(), 1));
    let n: f64 = digits.parse().map_err(|_| format!("bad size `{s}`"))?;
    if !n.is_finite() || n < 0.0 {
        return Err(format!("bad size `{s}`"));
    }
    Ok((n * mult as f64) as u64)
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn stage(e: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: e.to_string() }
}

fn default_shards() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_counts(path: &Path) -> Result<CountTable, Failure> {
    CountTable::load(path).map_err(stage)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Count(a) => {
            let mut config = CounterConfig {
                window: a.window,
                max_number_digits: a.max_digits,
                window_rule: if a.distance_window { WindowRule::Distance } else { WindowRule::Span },
                ..CounterConfig::default()
            };
            config.validate().map_err(|e| usage(e.to_string()))?;
            if let Some(t) = &a.targets {
                config = config.with_targets(read_targets(t).map_err(stage)?);
            }
            let options = CountOptions {
                shards: a.shards.unwrap_or_else(default_shards),
                spill_entries: a.spill_entries,
                spill_dir: None,
            };
            let source = CorpusSource::new(&a.corpus, a.format);
            let started = std::time::Instant::now();
            let table = count_to(&source, &config, &options, &a.out).map_err(stage)?;
            log::info!(
                "{} documents, {} tokens, {} keys in {:.1}s",
                table.meta.documents,
                table.meta.tokens,
                table.len(),
                started.elapsed().as_secs_f64()
            );
        }
        Command::Merge(a) => {
            let tables = a.inputs.iter().map(|p| load_counts(p)).collect::<Result<Vec<_>, _>>()?;
            let merged = merge_all(tables).map_err(stage)?.expect("at least one input");
            merged.save(&a.out).map_err(stage)?;
        }
        Command::Gen(a) => {
            let counts = load_counts(&a.counts)?;
            let tasks = a.tasks.unwrap_or_else(|| TaskId::ALL.to_vec());
            generate_datasets(&counts, &tasks, &a.out).map_err(stage)?;
        }
        Command::Targets(a) => {
            let datasets = load_datasets(&a.datasets).map_err(stage)?;
            let n = write_target_file(&datasets, &a.out).map_err(stage)?;
            log::info!("{n} target term sets");
        }
        Command::Prompts(a) => {
            if a.seeds == 0 {
                return Err(usage("--seeds must be ≥ 1"));
            }
            let datasets = load_datasets(&a.datasets).map_err(stage)?;
            let n = write_prompt_dir(&datasets, &a.ks, &prompt_seeds(a.rng_seed, a.seeds), &a.out).map_err(stage)?;
            log::info!("{n} prompt bundles");
        }
        Command::Eval(a) => {
            let bundles = read_bundle_dir(&a.bundles).map_err(stage)?;
            let (backend, counts) = match a.mock {
                Some(policy) => (Backend::Mock(policy), a.counts.as_deref().map(load_counts).transpose()?),
                None => {
                    let mut config = EndpointConfig::new(a.endpoint.expect("required"), a.model.expect("required"));
                    config.path = a.path;
                    config.max_in_flight = a.max_in_flight;
                    config.timeout_ms = a.timeout_ms;
                    config.retry = RetryConfig { attempts: a.attempts, ..RetryConfig::default() };
                    config.validate().map_err(usage)?;
                    (Backend::Endpoint(config), None)
                }
            };
            let records = run_eval(&bundles, &backend, counts.as_ref(), &a.out).map_err(stage)?;
            let correct = records.iter().filter(|r| r.correct).count();
            log::info!("{} records, {correct} correct", records.len());
        }
        Command::Analyze(a) => {
            if a.bins == 0 {
                return Err(usage("--bins must be ≥ 1"));
            }
            let records = read_records(&a.records).map_err(stage)?;
            let datasets = load_datasets(&a.datasets).map_err(stage)?;
            let counts = load_counts(&a.counts)?;
            let options = ReportOptions {
                tasks: a.tasks.unwrap_or_default(),
                ks: a.ks.unwrap_or_default(),
                keys: a.keys,
                bins: a.bins,
                seeds: Vec::new(),
            };
            let report = analyze_to(&records, &datasets, &counts, &options, &a.out).map_err(stage)?;
            if !report.complete {
                log::warn!("some requested cells have no records");
            }
        }
        Command::Compare(a) => {
            let mut runs = Vec::new();
            for dir in &a.runs {
                let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
                runs.push((name, load_report(dir).map_err(stage)?));
            }
            let (csv, md) = compare_runs(&runs);
            std::fs::create_dir_all(&a.out).map_err(stage)?;
            fsutil::write_atomic(&a.out.join("comparison.csv"), csv.as_bytes()).map_err(stage)?;
            fsutil::write_atomic(&a.out.join("comparison.md"), md.as_bytes()).map_err(stage)?;
        }
        Command::Run(a) => {
            let valid = validate_config(&a.config).map_err(|d| usage(d.join("\n")))?;
            for w in &valid.warnings {
                log::warn!("{w}");
            }
            let outcome = run_pipeline(&valid.config).map_err(|e| match e {
                PipelineError::Config(d) => usage(d.join("\n")),
                other => stage(other),
            })?;
            let report = valid.config.output_root.join("analysis/report.md");
            println!("report: {}", report.display());
            if !outcome.report.complete {
                log::warn!("run is incomplete");
            }
        }
        Command::Validate(a) => {
            let valid = validate_config(&a.config).map_err(|d| usage(d.join("\n")))?;
            for w in &valid.warnings {
                println!("warning: {w}");
            }
            println!("ok");
        }
        Command::Demo(a) => {
            let config = DemoConfig { size_bytes: a.size, seed: a.seed, decades: a.decades, format: a.format };
            let summary = generate_demo(&a.out, &config).map_err(stage)?;
            log::info!("{} documents, {} bytes", summary.documents, summary.bytes);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
