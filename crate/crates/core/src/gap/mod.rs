//! Frequency/accuracy analysis: accuracy points grouped by term set, the
//! top-vs-bottom decile performance gap, binned accuracy and trend lines.

mod report;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counter::CountTable;
use crate::eval::EvalRecord;
use crate::tasks::{TaskFamily, TaskId, TaskInstance};
use crate::term::TermSet;

pub use report::{
    build_report, compare_runs, format_pct, load_report, write_report, CellReport, KeyGap, ReportOptions, RunReport,
};

#[derive(Debug, Error)]
pub enum GapError {
    #[error("record references unknown instance {0}")]
    UnknownInstance(String),
    #[error("grouping key {key} does not apply to {task}")]
    KeyNotApplicable { key: GroupingKey, task: TaskId },
    #[error("need at least {need} points, have {have}")]
    TooFewPoints { need: usize, have: usize },
    #[error("trend fit needs at least two distinct frequencies")]
    DegenerateFit,
    #[error("{0}")]
    Io(String),
}

/// Which roles of an instance its frequency is measured over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupingKey {
    X1,
    X1X2,
    X1Y,
    X1X2X3,
    X1X2Y,
}

impl GroupingKey {
    pub const ALL: [GroupingKey; 5] =
        [GroupingKey::X1, GroupingKey::X1X2, GroupingKey::X1Y, GroupingKey::X1X2X3, GroupingKey::X1X2Y];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupingKey::X1 => "x1",
            GroupingKey::X1X2 => "x1x2",
            GroupingKey::X1Y => "x1y",
            GroupingKey::X1X2X3 => "x1x2x3",
            GroupingKey::X1X2Y => "x1x2y",
        }
    }

    /// Column label in report tables.
    pub fn label(self) -> &'static str {
        match self {
            GroupingKey::X1 => "Δ_1",
            GroupingKey::X1X2 => "Δ_{1,2}",
            GroupingKey::X1Y => "Δ_{1,y}",
            GroupingKey::X1X2X3 => "Δ_{1,2,3}",
            GroupingKey::X1X2Y => "Δ_{1,2,y}",
        }
    }

    pub fn applies_to(self, family: TaskFamily) -> bool {
        match family {
            TaskFamily::Arithmetic | TaskFamily::OperationInference => {
                matches!(self, GroupingKey::X1 | GroupingKey::X1X2 | GroupingKey::X1Y)
            }
            TaskFamily::TimeConversion => self != GroupingKey::X1Y,
        }
    }

    /// Term set of `instance` under this key.
    pub fn resolve(self, instance: &TaskInstance) -> Result<TermSet, GapError> {
        let na = || GapError::KeyNotApplicable { key: self, task: instance.task };
        if !self.applies_to(instance.task.family()) {
            return Err(na());
        }
        let x1 = instance.x[0];
        Ok(match self {
            GroupingKey::X1 => TermSet::single(x1),
            GroupingKey::X1X2 => TermSet::pair(x1, instance.x2()),
            GroupingKey::X1Y => TermSet::pair(x1, instance.answer_term().ok_or_else(na)?),
            GroupingKey::X1X2X3 => TermSet::triple(x1, instance.x2(), instance.x3().ok_or_else(na)?),
            GroupingKey::X1X2Y => TermSet::triple(x1, instance.x2(), instance.answer_term().ok_or_else(na)?),
        })
    }
}

impl fmt::Display for GroupingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupingKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupingKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown grouping key `{s}` (x1, x1x2, x1y, x1x2x3, x1x2y)"))
    }
}

impl Serialize for GroupingKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for GroupingKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One element of Ω: a term-set group with its corpus frequency and accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub key: TermSet,
    pub freq: u64,
    pub n: u64,
    pub correct: u64,
}

impl AccuracyPoint {
    pub fn acc(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

/// Groups records by the term set of their instance under `key`, pooling seeds.
pub fn aggregate<'a>(
    records: impl IntoIterator<Item = &'a EvalRecord>,
    instances: &HashMap<String, TaskInstance>,
    counts: &CountTable,
    key: GroupingKey,
) -> Result<Vec<AccuracyPoint>, GapError> {
    let mut groups: BTreeMap<TermSet, (u64, u64)> = BTreeMap::new();
    for r in records {
        let inst = instances.get(&r.instance_id).ok_or_else(|| GapError::UnknownInstance(r.instance_id.clone()))?;
        let g = groups.entry(key.resolve(inst)?).or_default();
        g.0 += 1;
        g.1 += u64::from(r.correct);
    }
    Ok(groups
        .into_iter()
        .map(|(set, (n, correct))| AccuracyPoint { key: set, freq: counts.query(set), n, correct })
        .collect())
}

/// Points ordered by frequency, ties broken by canonical key.
pub fn sort_by_frequency(points: &[AccuracyPoint]) -> Vec<AccuracyPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| (p.freq, p.key));
    sorted
}

/// Mean accuracy of the most frequent ⌈N/10⌉ groups minus that of the least frequent ⌈N/10⌉.
pub fn performance_gap(points: &[AccuracyPoint]) -> Result<f64, GapError> {
    if points.len() < 10 {
        return Err(GapError::TooFewPoints { need: 10, have: points.len() });
    }
    let sorted = sort_by_frequency(points);
    let m = sorted.len().div_ceil(10);
    let mean = |ps: &[AccuracyPoint]| ps.iter().map(AccuracyPoint::acc).sum::<f64>() / ps.len() as f64;
    Ok(mean(&sorted[sorted.len() - m..]) - mean(&sorted[..m]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub index: usize,
    pub mean_freq: f64,
    pub mean_acc: f64,
    pub n: u64,
    pub correct: u64,
    pub points: usize,
}

/// Equal-count bins over frequency order; the lowest bins take one extra point
/// each when the points do not divide evenly.
pub fn bin_accuracy(points: &[AccuracyPoint], num_bins: usize) -> Result<Vec<Bin>, GapError> {
    if num_bins == 0 || points.len() < num_bins {
        return Err(GapError::TooFewPoints { need: num_bins.max(1), have: points.len() });
    }
    let sorted = sort_by_frequency(points);
    let (base, extra) = (sorted.len() / num_bins, sorted.len() % num_bins);
    let mut bins = Vec::with_capacity(num_bins);
    let mut start = 0;
    for index in 0..num_bins {
        let size = base + usize::from(index < extra);
        let chunk = &sorted[start..start + size];
        start += size;
        let n: u64 = chunk.iter().map(|p| p.n).sum();
        let correct: u64 = chunk.iter().map(|p| p.correct).sum();
        bins.push(Bin {
            index,
            mean_freq: chunk.iter().map(|p| p.freq as f64).sum::<f64>() / size as f64,
            mean_acc: correct as f64 / n as f64,
            n,
            correct,
            points: size,
        });
    }
    Ok(bins)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub intercept: f64,
}

/// Least squares of accuracy on `log10(ω + 1)`, each point weighted by its record count.
pub fn trend_fit(points: &[AccuracyPoint]) -> Result<Trend, GapError> {
    let xs: Vec<f64> = points.iter().map(|p| (p.freq as f64 + 1.0).log10()).collect();
    let w_sum: f64 = points.iter().map(|p| p.n as f64).sum();
    if w_sum == 0.0 {
        return Err(GapError::DegenerateFit);
    }
    let x_bar = points.iter().zip(&xs).map(|(p, x)| p.n as f64 * x).sum::<f64>() / w_sum;
    let y_bar = points.iter().map(|p| p.correct as f64).sum::<f64>() / w_sum;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (p, x) in points.iter().zip(&xs) {
        let w = p.n as f64;
        sxy += w * (x - x_bar) * (p.acc() - y_bar);
        sxx += w * (x - x_bar) * (x - x_bar);
    }
    if points.iter().all(|p| p.freq == points[0].freq) || sxx <= 0.0 {
        return Err(GapError::DegenerateFit);
    }
    let slope = sxy / sxx;
    Ok(Trend { slope, intercept: y_bar - slope * x_bar })
}
