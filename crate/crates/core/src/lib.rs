//! Anonymization of smart-card fare transactions for open release.
//!
//! The pipeline replaces card serials with day-scoped pseudonyms, keeps half
//! of each day's cards and three of each weekday's dates per month, swaps
//! calendar dates for random day numbers and floors times to ten minutes.
//! [`synth`] produces ground-truthed synthetic input and [`audit`] measures
//! what the published data still reveals.

pub mod audit;
pub mod dates;
pub mod error;
pub mod exec;
pub mod model;
pub mod pipeline;
pub mod pseudonym;
pub mod sampling;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{AnonymizationConfig, AnonymizedRecord, CardSerial, Money, RawTransaction, WeekdayKeep};
pub use pipeline::{anonymize, AnonymizeOptions, CsvSource, Release};
pub use pseudonym::{DayPseudonym, PseudonymKey};
