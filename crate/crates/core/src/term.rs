//! Countable terms (numbers and time units) and canonical term-set keys.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Exclusive upper bound on number values (six digits).
pub const NUMBER_LIMIT: u32 = 1_000_000;

/// Time-unit words, in lexicon order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unit {
    Second,
    Minute,
    Hour,
    Day,
    Week,
    Month,
    Year,
    Decade,
}

impl Unit {
    pub const ALL: [Unit; 8] = [
        Unit::Second,
        Unit::Minute,
        Unit::Hour,
        Unit::Day,
        Unit::Week,
        Unit::Month,
        Unit::Year,
        Unit::Decade,
    ];

    pub fn singular(self) -> &'static str {
        match self {
            Unit::Second => "second",
            Unit::Minute => "minute",
            Unit::Hour => "hour",
            Unit::Day => "day",
            Unit::Week => "week",
            Unit::Month => "month",
            Unit::Year => "year",
            Unit::Decade => "decade",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Unit::Second => "seconds",
            Unit::Minute => "minutes",
            Unit::Hour => "hours",
            Unit::Day => "days",
            Unit::Week => "weeks",
            Unit::Month => "months",
            Unit::Year => "years",
            Unit::Decade => "decades",
        }
    }

    pub fn from_singular(s: &str) -> Option<Unit> {
        Unit::ALL.into_iter().find(|u| u.singular() == s)
    }

    fn index(self) -> u32 {
        self as u32
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.singular())
    }
}

/// A number or a time unit. The derived order is the canonical one:
/// numbers ascending by value, then units in lexicon order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Number(u32),
    Unit(Unit),
}

impl Term {
    /// Dense integer code: numbers map to themselves, units follow `NUMBER_LIMIT`.
    pub fn code(self) -> u32 {
        match self {
            Term::Number(v) => v,
            Term::Unit(u) => NUMBER_LIMIT + u.index(),
        }
    }

    pub fn from_code(code: u32) -> Option<Term> {
        if code < NUMBER_LIMIT {
            Some(Term::Number(code))
        } else {
            Unit::ALL.get((code - NUMBER_LIMIT) as usize).map(|&u| Term::Unit(u))
        }
    }

    pub fn number(self) -> Option<u32> {
        match self {
            Term::Number(v) => Some(v),
            Term::Unit(_) => None,
        }
    }

    pub fn is_number(self) -> bool {
        matches!(self, Term::Number(_))
    }
}

/// Number of distinct term codes.
pub const TERM_CODES: usize = NUMBER_LIMIT as usize + Unit::ALL.len();

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Number(v) => write!(f, "{v}"),
            Term::Unit(u) => write!(f, "u:{}", u.singular()),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TermParseError {
    #[error("empty term")]
    Empty,
    #[error("invalid term `{0}`")]
    Invalid(String),
    #[error("term set must hold 1 to 3 terms, got {0}")]
    Size(usize),
}

impl FromStr for Term {
    type Err = TermParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(TermParseError::Empty);
        }
        if let Some(unit) = s.strip_prefix("u:") {
            return Unit::from_singular(unit)
                .map(Term::Unit)
                .ok_or_else(|| TermParseError::Invalid(s.to_string()));
        }
        let canonical = s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'));
        match s.parse::<u32>() {
            Ok(v) if canonical && v < NUMBER_LIMIT => Ok(Term::Number(v)),
            _ => Err(TermParseError::Invalid(s.to_string())),
        }
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const SLOT_BITS: u32 = 20;
const SLOT_MASK: u64 = (1 << SLOT_BITS) - 1;

/// A multiset of one to three terms, packed into a `u64` in canonical order.
///
/// Each slot stores `code + 1`, first term in the highest slot, so comparing
/// the packed integers compares the sorted term sequences lexicographically.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TermSet(u64);

impl TermSet {
    pub fn new(terms: &[Term]) -> Result<TermSet, TermParseError> {
        if terms.is_empty() || terms.len() > 3 {
            return Err(TermParseError::Size(terms.len()));
        }
        let mut codes = [0u32; 3];
        for (slot, t) in codes.iter_mut().zip(terms) {
            *slot = t.code();
        }
        let codes = &mut codes[..terms.len()];
        codes.sort_unstable();
        Ok(Self::pack(codes))
    }

    pub fn single(t: Term) -> TermSet {
        TermSet(((t.code() as u64) + 1) << (2 * SLOT_BITS))
    }

    pub fn pair(a: Term, b: Term) -> TermSet {
        Self::pair_codes(a.code(), b.code())
    }

    pub fn triple(a: Term, b: Term, c: Term) -> TermSet {
        let mut codes = [a.code(), b.code(), c.code()];
        codes.sort_unstable();
        Self::pack(&codes)
    }

    /// Pair key from raw term codes, in either order.
    #[inline]
    pub fn pair_codes(a: u32, b: u32) -> TermSet {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        TermSet((((lo as u64) + 1) << (2 * SLOT_BITS)) | (((hi as u64) + 1) << SLOT_BITS))
    }

    /// Triple key from raw term codes already sorted ascending.
    #[inline]
    pub fn triple_sorted_codes(a: u32, b: u32, c: u32) -> TermSet {
        debug_assert!(a <= b && b <= c);
        Self::pack(&[a, b, c])
    }

    #[inline]
    fn pack(sorted: &[u32]) -> TermSet {
        let mut raw = 0u64;
        for (i, &c) in sorted.iter().enumerate() {
            raw |= ((c as u64) + 1) << (SLOT_BITS * (2 - i as u32));
        }
        TermSet(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Rebuilds a set from its packed form, rejecting malformed encodings.
    pub fn from_raw(raw: u64) -> Option<TermSet> {
        let set = TermSet(raw);
        let slots = set.slots();
        if raw >> (3 * SLOT_BITS) != 0 || slots[0] == 0 {
            return None;
        }
        if slots[1] == 0 && slots[2] != 0 {
            return None;
        }
        let mut prev = 0u64;
        for &s in slots.iter().take_while(|&&s| s != 0) {
            if s < prev || Term::from_code((s - 1) as u32).is_none() {
                return None;
            }
            prev = s;
        }
        Some(set)
    }

    fn slots(self) -> [u64; 3] {
        [
            (self.0 >> (2 * SLOT_BITS)) & SLOT_MASK,
            (self.0 >> SLOT_BITS) & SLOT_MASK,
            self.0 & SLOT_MASK,
        ]
    }

    pub fn len(self) -> usize {
        self.slots().iter().filter(|&&s| s != 0).count()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn terms(self) -> impl Iterator<Item = Term> {
        self.slots()
            .into_iter()
            .take_while(|&s| s != 0)
            .map(|s| Term::from_code((s - 1) as u32).expect("valid packed term"))
    }

    /// The `|`-joined textual key, e.g. `24|60|u:hour`.
    pub fn key(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for TermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{self}}}")
    }
}

impl FromStr for TermSet {
    type Err = TermParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let terms = s.split('|').map(str::parse).collect::<Result<Vec<Term>, _>>()?;
        TermSet::new(&terms)
    }
}

impl Serialize for TermSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TermSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Orders keys by their textual form, the order used in count files.
pub fn cmp_key_text(a: &TermSet, b: &TermSet) -> Ordering {
    a.key().cmp(&b.key())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn n(v: u32) -> Term {
        Term::Number(v)
    }

    #[test]
    fn canonical_order_numbers_then_units() {
        let set = TermSet::new(&[Term::Unit(Unit::Hour), n(1440), n(24)]).unwrap();
        assert_eq!(set.key(), "24|1440|u:hour");
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn pair_is_symmetric() {
        assert_eq!(TermSet::pair(n(23), n(18)), TermSet::pair(n(18), n(23)));
        assert_eq!(TermSet::pair(n(23), n(18)).key(), "18|23");
    }

    #[test]
    fn repeated_terms_are_kept() {
        let set = TermSet::pair(n(7), n(7));
        assert_eq!(set.key(), "7|7");
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn size_limits() {
        assert_eq!(TermSet::new(&[]), Err(TermParseError::Size(0)));
        assert_eq!(TermSet::new(&[n(1); 4]), Err(TermParseError::Size(4)));
    }

    #[test]
    fn term_parse_rejects_noncanonical() {
        assert!("007".parse::<Term>().is_err());
        assert!("1000000".parse::<Term>().is_err());
        assert!("u:hours".parse::<Term>().is_err());
        assert_eq!("0".parse::<Term>(), Ok(n(0)));
        assert_eq!("u:decade".parse::<Term>(), Ok(Term::Unit(Unit::Decade)));
    }

    #[test]
    fn from_raw_rejects_garbage() {
        assert!(TermSet::from_raw(0).is_none());
        let pair = TermSet::pair(n(3), n(9));
        assert_eq!(TermSet::from_raw(pair.raw()), Some(pair));
        // slots out of order
        let swapped = ((10u64) << 40) | (4u64 << 20);
        assert!(TermSet::from_raw(swapped).is_none());
    }

    fn arb_term() -> impl Strategy<Value = Term> {
        prop_oneof![
            (0u32..NUMBER_LIMIT).prop_map(Term::Number),
            (0usize..8).prop_map(|i| Term::Unit(Unit::ALL[i])),
        ]
    }

    proptest! {
        #[test]
        fn key_text_round_trips(terms in proptest::collection::vec(arb_term(), 1..=3)) {
            let set = TermSet::new(&terms).unwrap();
            prop_assert_eq!(set.key().parse::<TermSet>().unwrap(), set);
            let mut sorted = terms.clone();
            sorted.sort();
            prop_assert_eq!(set.terms().collect::<Vec<_>>(), sorted);
        }

        #[test]
        fn packed_order_matches_term_order(a in proptest::collection::vec(arb_term(), 1..=3),
                                           b in proptest::collection::vec(arb_term(), 1..=3)) {
            let (sa, sb) = (TermSet::new(&a).unwrap(), TermSet::new(&b).unwrap());
            let ta: Vec<Term> = sa.terms().collect();
            let tb: Vec<Term> = sb.terms().collect();
            prop_assert_eq!(sa.cmp(&sb), ta.cmp(&tb));
        }
    }
}
