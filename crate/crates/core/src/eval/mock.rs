//! Deterministic stand-ins for a language model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fsutil;
use crate::tasks::BundleRecord;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MockKind {
    Perfect,
    AlwaysWrong,
    /// Correct with probability `σ(a·log10(ω+1) + b)`.
    FreqLogistic { a: f64, b: f64 },
}

/// Serialized in its string form, e.g. `freq_logistic:1:-3@7`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MockPolicy {
    pub kind: MockKind,
    pub seed: u64,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MockPolicy {
    pub fn new(kind: MockKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Probability that the mock answers an instance with frequency `freq` correctly.
    pub fn p_correct(&self, freq: u64) -> f64 {
        match self.kind {
            MockKind::Perfect => 1.0,
            MockKind::AlwaysWrong => 0.0,
            MockKind::FreqLogistic { a, b } => sigmoid(a * ((freq as f64) + 1.0).log10() + b),
        }
    }

    /// Uniform draw in `[0, 1)` for one (instance, k, prompt seed) cell.
    ///
    /// The offset is hashed from (policy seed, instance). Each (k, prompt seed)
    /// cell takes its own step along the golden-ratio sequence from it: k picks
    /// a block of `SEED_STRIDE` steps and the prompt seed a step inside it. A
    /// default run (5 consecutive seeds, the standard k values) thus gives each
    /// instance 25 consecutive steps, spread evenly over the interval.
    pub fn draw(&self, instance_id: &str, k: usize, prompt_seed: u64) -> f64 {
        const GOLDEN: f64 = 0.618_033_988_749_894_9;
        const SEED_STRIDE: u64 = 5;
        let key = format!("{}:{}", self.seed, instance_id);
        let digest = fsutil::sha256_hex(key.as_bytes());
        let bits = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let offset = (bits >> 11) as f64 / (1u64 << 53) as f64;
        let block = match crate::pipeline::STANDARD_KS.iter().position(|&s| s == k) {
            Some(i) => i as u64,
            None => (crate::pipeline::STANDARD_KS.len() + k) as u64,
        };
        let step = (prompt_seed.wrapping_add(block * SEED_STRIDE)) % (1 << 40);
        let stepped = offset + step as f64 * GOLDEN;
        stepped - stepped.floor()
    }
}

impl FromStr for MockPolicy {
    type Err = String;

    /// `perfect`, `always_wrong`, or `freq_logistic:A:B`, each optionally
    /// followed by `@SEED`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (spec, seed) = match s.split_once('@') {
            Some((spec, seed)) => (spec, seed.parse().map_err(|_| format!("bad mock seed `{seed}`"))?),
            None => (s, 0),
        };
        let kind = match spec.split(':').collect::<Vec<_>>().as_slice() {
            ["perfect"] => MockKind::Perfect,
            ["always_wrong"] => MockKind::AlwaysWrong,
            ["freq_logistic", a, b] => MockKind::FreqLogistic {
                a: a.parse().map_err(|_| format!("bad slope `{a}`"))?,
                b: b.parse().map_err(|_| format!("bad intercept `{b}`"))?,
            },
            _ => return Err(format!("unknown mock policy `{s}` (perfect, always_wrong, freq_logistic:A:B)")),
        };
        Ok(MockPolicy { kind, seed })
    }
}

impl fmt::Display for MockPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MockKind::Perfect => write!(f, "perfect")?,
            MockKind::AlwaysWrong => write!(f, "always_wrong")?,
            MockKind::FreqLogistic { a, b } => write!(f, "freq_logistic:{a}:{b}")?,
        }
        write!(f, "@{}", self.seed)
    }
}

impl Serialize for MockPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MockPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Generation of the mock for one bundle whose grouping frequency is `freq`.
pub fn mock_generate(bundle: &BundleRecord, freq: u64, policy: &MockPolicy) -> String {
    let correct = match policy.kind {
        MockKind::Perfect => true,
        MockKind::AlwaysWrong => false,
        MockKind::FreqLogistic { .. } => policy.draw(&bundle.instance_id, bundle.k, bundle.seed) < policy.p_correct(freq),
    };
    let answer = if correct { bundle.gold } else { bundle.gold + 1 };
    format!(" {answer}")
}
