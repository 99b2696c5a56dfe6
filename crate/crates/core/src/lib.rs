//! Pretraining term-frequency analysis for few-shot numerical reasoning.
//!
//! The crate counts windowed co-occurrences of numbers and time units in a
//! text corpus, builds arithmetic, operation-inference and time-unit
//! conversion datasets from those counts, scores a completion endpoint (or a
//! deterministic mock) on k-shot prompts, and reports the accuracy gap
//! between the most and least frequent term groups.

pub mod corpus;
pub mod counter;
pub mod demo;
pub mod eval;
pub mod fsutil;
pub mod gap;
pub mod pipeline;
pub mod tasks;
pub mod term;

pub use counter::{CountTable, CounterConfig};
pub use term::{Term, TermSet, Unit};
