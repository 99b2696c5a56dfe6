//! The eleven numerical reasoning tasks: dataset construction from corpus
//! counts, prompt rendering, and the term sets each instance is scored on.

mod prompts;

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counter::CountTable;
use crate::fsutil;
use crate::term::{Term, TermSet, Unit};

pub use prompts::{
    build_fewshot_prompts, build_fewshot_prompts_with, read_bundles, write_bundles, BundleRecord, PromptBundle,
    DEFAULT_SHOT_SEPARATOR,
};

/// How many of the most frequent numbers are considered as first operands.
pub const TOP_TERMS: usize = 200;
/// Arithmetic first operands are below this value.
pub const ARITHMETIC_X1_LIMIT: u32 = 100;
/// Arithmetic second operands range over `1..=50`.
pub const ARITHMETIC_X2: std::ops::RangeInclusive<u32> = 1..=50;
/// Conversion first operands have at most this many digits.
pub const CONVERSION_MAX_DIGITS: u32 = 2;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("no qualifying first operands for {0} (corpus too small or counts missing)")]
    NoOperands(TaskId),
    #[error("no conversion task converts {0} to {1}")]
    UnknownConversion(Unit, Unit),
    #[error("k = {k} shots needs a dataset larger than {len} instances")]
    TooManyShots { k: usize, len: usize },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl TaskError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        TaskError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskId {
    Mult,
    Add,
    MultHash,
    AddHash,
    MinSec,
    HourMin,
    DayHour,
    WeekDay,
    MonthWeek,
    YearMonth,
    DecadeYear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskFamily {
    Arithmetic,
    OperationInference,
    TimeConversion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operation {
    Mult,
    Add,
}

impl Operation {
    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            Operation::Mult => a * b,
            Operation::Add => a + b,
        }
    }

    fn word(self) -> &'static str {
        match self {
            Operation::Mult => "times",
            Operation::Add => "plus",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conversion {
    pub source: Unit,
    pub target: Unit,
    pub factor: u32,
}

impl TaskId {
    pub const ALL: [TaskId; 11] = [
        TaskId::Mult,
        TaskId::Add,
        TaskId::MultHash,
        TaskId::AddHash,
        TaskId::MinSec,
        TaskId::HourMin,
        TaskId::DayHour,
        TaskId::WeekDay,
        TaskId::MonthWeek,
        TaskId::YearMonth,
        TaskId::DecadeYear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Mult => "mult",
            TaskId::Add => "add",
            TaskId::MultHash => "mult_hash",
            TaskId::AddHash => "add_hash",
            TaskId::MinSec => "min_sec",
            TaskId::HourMin => "hour_min",
            TaskId::DayHour => "day_hour",
            TaskId::WeekDay => "week_day",
            TaskId::MonthWeek => "month_week",
            TaskId::YearMonth => "year_month",
            TaskId::DecadeYear => "decade_year",
        }
    }

    pub fn family(self) -> TaskFamily {
        match self {
            TaskId::Mult | TaskId::Add => TaskFamily::Arithmetic,
            TaskId::MultHash | TaskId::AddHash => TaskFamily::OperationInference,
            _ => TaskFamily::TimeConversion,
        }
    }

    pub fn operation(self) -> Option<Operation> {
        match self {
            TaskId::Mult | TaskId::MultHash => Some(Operation::Mult),
            TaskId::Add | TaskId::AddHash => Some(Operation::Add),
            _ => None,
        }
    }

    pub fn conversion(self) -> Option<Conversion> {
        let (source, target, factor) = match self {
            TaskId::MinSec => (Unit::Minute, Unit::Second, 60),
            TaskId::HourMin => (Unit::Hour, Unit::Minute, 60),
            TaskId::DayHour => (Unit::Day, Unit::Hour, 24),
            TaskId::WeekDay => (Unit::Week, Unit::Day, 7),
            TaskId::MonthWeek => (Unit::Month, Unit::Week, 4),
            TaskId::YearMonth => (Unit::Year, Unit::Month, 12),
            TaskId::DecadeYear => (Unit::Decade, Unit::Year, 10),
            _ => return None,
        };
        Some(Conversion { source, target, factor })
    }

    pub fn from_units(source: Unit, target: Unit) -> Option<TaskId> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.conversion().is_some_and(|c| c.source == source && c.target == target))
    }

    pub fn arithmetic(op: Operation, hashed: bool) -> TaskId {
        match (op, hashed) {
            (Operation::Mult, false) => TaskId::Mult,
            (Operation::Add, false) => TaskId::Add,
            (Operation::Mult, true) => TaskId::MultHash,
            (Operation::Add, true) => TaskId::AddHash,
        }
    }

    /// Recomputes the answer for input terms `x`, or `None` if `x` does not fit the task.
    pub fn answer(self, x: &[Term]) -> Option<u64> {
        match (self.operation(), self.conversion(), x) {
            (Some(op), _, [Term::Number(a), Term::Number(b)]) => Some(op.apply(*a as u64, *b as u64)),
            (_, Some(c), [Term::Number(a), Term::Unit(u), Term::Number(f)]) if *u == c.source && *f == c.factor => {
                Some(*a as u64 * c.factor as u64)
            }
            _ => None,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

impl Serialize for TaskId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One reasoning question with its input terms and gold answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub task: TaskId,
    /// `(x1, x2)` for arithmetic, `(x1, source unit, factor)` for conversions.
    pub x: Vec<Term>,
    pub y: u64,
    pub instance_id: String,
}

fn instance_id(task: TaskId, x: &[Term]) -> String {
    let mut key = task.as_str().to_string();
    for t in x {
        key.push(':');
        key.push_str(&t.to_string());
    }
    fsutil::sha256_hex(key.as_bytes())[..16].to_string()
}

impl TaskInstance {
    pub fn new(task: TaskId, x: Vec<Term>) -> Result<Self, TaskError> {
        let y = task
            .answer(&x)
            .ok_or_else(|| TaskError::InvalidInstance(format!("{task} does not accept inputs {x:?}")))?;
        let instance_id = instance_id(task, &x);
        Ok(Self { task, x, y, instance_id })
    }

    pub fn arithmetic(task: TaskId, x1: u32, x2: u32) -> Result<Self, TaskError> {
        Self::new(task, vec![Term::Number(x1), Term::Number(x2)])
    }

    pub fn conversion(task: TaskId, x1: u32) -> Result<Self, TaskError> {
        let c = task
            .conversion()
            .ok_or_else(|| TaskError::InvalidInstance(format!("{task} is not a conversion task")))?;
        Self::new(task, vec![Term::Number(x1), Term::Unit(c.source), Term::Number(c.factor)])
    }

    pub fn x1(&self) -> u32 {
        self.x[0].number().expect("x1 is a number")
    }

    pub fn x2(&self) -> Term {
        self.x[1]
    }

    pub fn x3(&self) -> Option<Term> {
        self.x.get(2).copied()
    }

    pub fn answer_term(&self) -> Option<Term> {
        u32::try_from(self.y).ok().filter(|&y| y < crate::term::NUMBER_LIMIT).map(Term::Number)
    }
}

/// Arithmetic dataset: frequent first operands below 100 crossed with `1..=50`,
/// ordered by (first-operand rank, second operand).
pub fn build_arithmetic(table: &CountTable, op: Operation) -> Result<Vec<TaskInstance>, TaskError> {
    build_binary(table, TaskId::arithmetic(op, false))
}

/// Same operands and answers as [`build_arithmetic`], rendered with `#`.
pub fn build_operation_inference(table: &CountTable, op: Operation) -> Result<Vec<TaskInstance>, TaskError> {
    build_binary(table, TaskId::arithmetic(op, true))
}

fn build_binary(table: &CountTable, task: TaskId) -> Result<Vec<TaskInstance>, TaskError> {
    let x1s: Vec<u32> = table
        .top_numbers(TOP_TERMS, None, None)
        .into_iter()
        .filter(|&v| v < ARITHMETIC_X1_LIMIT)
        .collect();
    if x1s.is_empty() {
        return Err(TaskError::NoOperands(task));
    }
    let mut out = Vec::with_capacity(x1s.len() * ARITHMETIC_X2.count());
    for x1 in x1s {
        for x2 in ARITHMETIC_X2 {
            out.push(TaskInstance::arithmetic(task, x1, x2)?);
        }
    }
    Ok(out)
}

/// Conversion dataset: the most frequent two-digit-or-shorter numbers that
/// co-occur with the source unit, one instance each.
pub fn build_time_conversion(table: &CountTable, source: Unit, target: Unit) -> Result<Vec<TaskInstance>, TaskError> {
    let task = TaskId::from_units(source, target).ok_or(TaskError::UnknownConversion(source, target))?;
    let x1s = table.top_numbers(TOP_TERMS, Some(CONVERSION_MAX_DIGITS), Some(source));
    if x1s.is_empty() {
        return Err(TaskError::NoOperands(task));
    }
    x1s.into_iter().map(|x1| TaskInstance::conversion(task, x1)).collect()
}

pub fn build_dataset(table: &CountTable, task: TaskId) -> Result<Vec<TaskInstance>, TaskError> {
    match (task.family(), task.operation(), task.conversion()) {
        (TaskFamily::Arithmetic, Some(op), _) => build_arithmetic(table, op),
        (TaskFamily::OperationInference, Some(op), _) => build_operation_inference(table, op),
        (_, _, Some(c)) => build_time_conversion(table, c.source, c.target),
        _ => unreachable!("every task has an operation or a conversion"),
    }
}

/// Renders the question (`with_answer = false`, ending in `A:`) or the
/// answered example (`A: <y>`).
pub fn render_prompt(instance: &TaskInstance, with_answer: bool) -> String {
    let x1 = instance.x1();
    let body = match (instance.task.family(), instance.task.conversion()) {
        (TaskFamily::Arithmetic, _) => {
            let op = instance.task.operation().expect("arithmetic task").word();
            format!("{x1} {op} {}", instance.x2())
        }
        (TaskFamily::OperationInference, _) => format!("{x1} # {}", instance.x2()),
        (TaskFamily::TimeConversion, Some(c)) => format!("{x1} {} in {}", c.source.plural(), c.target.plural()),
        (TaskFamily::TimeConversion, None) => unreachable!("conversion task without conversion"),
    };
    if with_answer {
        format!("Q: What is {body}? A: {}", instance.y)
    } else {
        format!("Q: What is {body}? A:")
    }
}

/// A rendered question or example split back into its parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedQuestion {
    pub x1: u32,
    /// `times`, `plus`, `#`, or `in <target unit>` for conversions.
    pub operator: String,
    /// Second operand, or the source unit word for conversions.
    pub x2: String,
    pub answer: Option<u64>,
}

/// Inverse of [`render_prompt`] for a single line.
pub fn parse_rendered(line: &str) -> Option<ParsedQuestion> {
    let rest = line.strip_prefix("Q: What is ")?;
    let (body, tail) = rest.split_once("? A:")?;
    let answer = match tail {
        "" => None,
        t => Some(t.strip_prefix(' ')?.parse().ok()?),
    };
    let words: Vec<&str> = body.split(' ').collect();
    let x1 = words.first()?.parse().ok()?;
    match words.as_slice() {
        [_, op @ ("times" | "plus" | "#"), x2] => {
            Some(ParsedQuestion { x1, operator: op.to_string(), x2: x2.to_string(), answer })
        }
        [_, unit, "in", target] => {
            Some(ParsedQuestion { x1, operator: format!("in {target}"), x2: unit.to_string(), answer })
        }
        _ => None,
    }
}

/// The roles of an instance a frequency can be measured over.
pub fn query_sets_for(instance: &TaskInstance) -> Vec<TermSet> {
    let x1 = instance.x[0];
    let y = instance.answer_term();
    let mut sets = Vec::new();
    match instance.task.family() {
        TaskFamily::Arithmetic | TaskFamily::OperationInference => {
            sets.push(TermSet::single(x1));
            sets.push(TermSet::pair(x1, instance.x2()));
            if let Some(y) = y {
                sets.push(TermSet::pair(x1, y));
            }
        }
        TaskFamily::TimeConversion => {
            let x3 = instance.x3().expect("conversion has a factor");
            sets.push(TermSet::pair(x1, instance.x2()));
            sets.push(TermSet::triple(x1, instance.x2(), x3));
            if let Some(y) = y {
                sets.push(TermSet::triple(x1, instance.x2(), y));
            }
        }
    }
    sets
}

/// Deduplicated union of every instance's query sets, in canonical order.
pub fn derive_query_sets<'a>(instances: impl IntoIterator<Item = &'a TaskInstance>) -> Vec<TermSet> {
    let set: BTreeSet<TermSet> = instances.into_iter().flat_map(query_sets_for).collect();
    set.into_iter().collect()
}

pub fn write_targets(path: &Path, targets: &[TermSet]) -> Result<(), TaskError> {
    let mut buf = Vec::new();
    for t in targets {
        writeln!(buf, "{t}").expect("write to vec");
    }
    fsutil::write_atomic(path, &buf).map_err(|e| TaskError::io(path, e))
}

pub fn read_targets(path: &Path) -> Result<Vec<TermSet>, TaskError> {
    let file = std::fs::File::open(path).map_err(|e| TaskError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TaskError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let set = line
            .parse()
            .map_err(|e| TaskError::Parse { path: path.to_path_buf(), line: i + 1, msg: format!("{e}") })?;
        out.push(set);
    }
    Ok(out)
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub instance_id: String,
    pub task_id: TaskId,
    pub x: Vec<Term>,
    pub y: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<u32>,
}

impl From<&TaskInstance> for DatasetRecord {
    fn from(inst: &TaskInstance) -> Self {
        DatasetRecord {
            instance_id: inst.instance_id.clone(),
            task_id: inst.task,
            x: inst.x.clone(),
            y: inst.y,
            factor: inst.task.conversion().map(|c| c.factor),
        }
    }
}

impl DatasetRecord {
    /// Rebuilds the instance, rejecting records whose answer or id disagree.
    pub fn into_instance(self) -> Result<TaskInstance, TaskError> {
        let inst = TaskInstance::new(self.task_id, self.x)?;
        if inst.y != self.y {
            return Err(TaskError::InvalidInstance(format!(
                "{} stores y = {} but the inputs give {}",
                inst.instance_id, self.y, inst.y
            )));
        }
        if inst.instance_id != self.instance_id {
            return Err(TaskError::InvalidInstance(format!("instance id {} does not match its inputs", self.instance_id)));
        }
        if self.factor != inst.task.conversion().map(|c| c.factor) {
            return Err(TaskError::InvalidInstance(format!("{}: wrong factor", inst.instance_id)));
        }
        Ok(inst)
    }
}

pub fn dataset_path(dir: &Path, task: TaskId) -> PathBuf {
    dir.join(format!("{task}.jsonl"))
}

pub fn write_dataset(path: &Path, instances: &[TaskInstance]) -> Result<(), TaskError> {
    let mut buf = Vec::new();
    for inst in instances {
        serde_json::to_writer(&mut buf, &DatasetRecord::from(inst)).expect("record serializes");
        buf.push(b'\n');
    }
    fsutil::write_atomic(path, &buf).map_err(|e| TaskError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<TaskInstance>, TaskError> {
    let file = std::fs::File::open(path).map_err(|e| TaskError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TaskError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| TaskError::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(rec.into_instance().map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

/// Reads every `<task>.jsonl` dataset in `dir`, in task order.
pub fn read_dataset_dir(dir: &Path) -> Result<Vec<(TaskId, Vec<TaskInstance>)>, TaskError> {
    let mut out = Vec::new();
    for task in TaskId::ALL {
        let path = dataset_path(dir, task);
        if path.exists() {
            out.push((task, read_dataset(&path)?));
        }
    }
    Ok(out)
}
