//! Conformance check of a published month against the output schema.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{NaiveTime, Timelike};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{day_of_week_name, OUTPUT_COLUMNS};
use crate::pseudonym::DayPseudonym;

/// Individual violations kept in a report; the total is always counted.
const MAX_LISTED: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Header,
    FieldCount,
    CardId,
    Integer,
    Money,
    TimeFormat,
    TimeGranularity,
    OptionalPair,
    SequenceGap,
    YearMonth,
    WeekdayPair,
    DayTuple,
    RandomWeekRange,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Header => "header does not match the published schema",
            Rule::FieldCount => "wrong number of fields",
            Rule::CardId => "ClipperCardID is not 32 uppercase hex digits",
            Rule::Integer => "integer field does not parse",
            Rule::Money => "FareAmount is not a two-place decimal",
            Rule::TimeFormat => "time is not HH:MM:SS",
            Rule::TimeGranularity => "time is not a granularity multiple",
            Rule::OptionalPair => "optional fields not present or absent together",
            Rule::SequenceGap => "TripSequenceIDs of a card-day are not exactly 1..k",
            Rule::YearMonth => "Year/Month not constant or out of range",
            Rule::WeekdayPair => "DayOfWeek does not match DayOfWeekID",
            Rule::DayTuple => "one RandomWeekID carries more than one weekday",
            Rule::RandomWeekRange => "RandomWeekID values are not contiguous from 1",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputViolation {
    /// Data row (from 1), or `None` for file-level findings.
    pub row: Option<u64>,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformanceReport {
    pub file: PathBuf,
    pub rows: u64,
    pub violation_count: u64,
    pub violations: Vec<OutputViolation>,
}

impl ConformanceReport {
    pub fn is_conformant(&self) -> bool {
        self.violation_count == 0
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, row: Option<u64>, rule: Rule, detail: impl Into<String>) {
        self.violation_count += 1;
        if self.violations.len() < MAX_LISTED {
            self.violations.push(OutputViolation {
                row,
                rule,
                detail: detail.into(),
            });
        }
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} rows, {} violations",
            self.file.display(),
            self.rows,
            self.violation_count
        )?;
        for v in &self.violations {
            match v.row {
                Some(r) => writeln!(f, "  row {r}: {} ({})", v.rule, v.detail)?,
                None => writeln!(f, "  file: {} ({})", v.rule, v.detail)?,
            }
        }
        if self.violation_count > self.violations.len() as u64 {
            writeln!(f, "  ... {} more", self.violation_count - self.violations.len() as u64)?;
        }
        Ok(())
    }
}

/// [`validate_output_with`] at the default 10-minute granularity.
pub fn validate_output(path: &Path) -> Result<ConformanceReport> {
    validate_output_with(path, 10)
}

pub fn validate_output_with(path: &Path, granularity_minutes: u32) -> Result<ConformanceReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::with_capacity(1 << 20, file));
    let mut report = ConformanceReport {
        file: path.to_owned(),
        rows: 0,
        violation_count: 0,
        violations: Vec::new(),
    };
    let header = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().ne(OUTPUT_COLUMNS) {
        report.push(None, Rule::Header, header.iter().collect::<Vec<_>>().join(","));
    }

    let mut sequences: HashMap<(u32, DayPseudonym), Vec<u32>> = HashMap::new();
    let mut day_weekday: HashMap<u32, u8> = HashMap::new();
    let mut year_month: Option<(String, String)> = None;
    let mut rec = csv::StringRecord::new();
    let mut row = 0u64;
    while reader.read_record(&mut rec).map_err(|e| Error::csv(path, e))? {
        row += 1;
        let at = Some(row);
        if rec.len() != OUTPUT_COLUMNS.len() {
            report.push(at, Rule::FieldCount, format!("{} fields", rec.len()));
            continue;
        }
        let f = |i: usize| rec.get(i).unwrap_or("");

        let card = f(0).parse::<DayPseudonym>().ok();
        if card.is_none() {
            report.push(at, Rule::CardId, f(0));
        }
        let mut int = |i: usize, optional: bool| -> Option<i64> {
            let s = f(i);
            if optional && s.is_empty() {
                return None;
            }
            match s.parse::<i64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    report.push(at, Rule::Integer, format!("{}={s:?}", OUTPUT_COLUMNS[i]));
                    None
                }
            }
        };
        let seq = int(1, false);
        for i in [2, 7, 10] {
            int(i, false);
        }
        int(4, true);
        let off_loc = int(13, true);
        let year = int(15, false);
        let month = int(16, false);
        let dow = int(17, false);
        let rwid = int(19, false);

        if !is_money(f(6)) {
            report.push(at, Rule::Money, f(6));
        }
        if seq.is_some_and(|s| s < 1) {
            report.push(at, Rule::SequenceGap, format!("TripSequenceID={}", f(1)));
        }

        check_time(&mut report, at, f(9), "TagOnTime_Time", granularity_minutes, false);
        check_time(&mut report, at, f(12), "TagOffTime_Time", granularity_minutes, true);

        if !f(4).is_empty() != !f(5).is_empty() {
            report.push(at, Rule::OptionalPair, "RouteID/RouteName");
        }
        let off = [!f(12).is_empty(), off_loc.is_some() || !f(13).is_empty(), !f(14).is_empty()];
        if off.iter().any(|&p| p) && !off.iter().all(|&p| p) {
            report.push(at, Rule::OptionalPair, "TagOffTime_Time/TagOffLocationId/TagOffLocationName");
        }

        match &year_month {
            None => year_month = Some((f(15).to_owned(), f(16).to_owned())),
            Some((y, m)) if y != f(15) || m != f(16) => {
                report.push(at, Rule::YearMonth, format!("{}-{} after {y}-{m}", f(15), f(16)));
            }
            _ => {}
        }
        if year.is_some() && month.is_some_and(|m| !(1..=12).contains(&m)) {
            report.push(at, Rule::YearMonth, format!("Month={}", f(16)));
        }

        if let Some(d) = dow {
            let expected = u8::try_from(d).ok().and_then(day_of_week_name);
            if expected != Some(f(18)) {
                report.push(at, Rule::WeekdayPair, format!("{d} vs {:?}", f(18)));
            }
        }
        if let (Some(id), Some(d)) = (rwid, dow) {
            match u32::try_from(id) {
                Ok(id) => {
                    let d = d as u8;
                    if *day_weekday.entry(id).or_insert(d) != d {
                        report.push(at, Rule::DayTuple, format!("RandomWeekID={id}"));
                    }
                    if let (Some(card), Some(seq)) = (card, seq) {
                        sequences.entry((id, card)).or_default().push(seq as u32);
                    }
                }
                Err(_) => report.push(at, Rule::RandomWeekRange, format!("RandomWeekID={id}")),
            }
        }
    }
    report.rows = row;

    let mut gaps: Vec<_> = sequences
        .into_iter()
        .filter_map(|(key, mut seqs)| {
            seqs.sort_unstable();
            let exact = seqs.iter().zip(1u32..).all(|(s, i)| *s == i);
            (!exact).then_some((key, seqs))
        })
        .collect();
    gaps.sort();
    for ((id, card), seqs) in gaps {
        report.push(None, Rule::SequenceGap, format!("RandomWeekID={id} {card}: {seqs:?}"));
    }

    let ids: BTreeSet<u32> = day_weekday.keys().copied().collect();
    let contiguous = ids.iter().copied().eq(1..=ids.len() as u32);
    if !contiguous {
        report.push(None, Rule::RandomWeekRange, format!("{ids:?}"));
    }
    Ok(report)
}

fn is_money(s: &str) -> bool {
    match s.split_once('.') {
        Some((w, f)) => {
            !w.is_empty()
                && w.bytes().all(|b| b.is_ascii_digit())
                && f.len() == 2
                && f.bytes().all(|b| b.is_ascii_digit())
        }
        None => false,
    }
}

fn check_time(
    report: &mut ConformanceReport,
    row: Option<u64>,
    s: &str,
    col: &str,
    granularity: u32,
    optional: bool,
) {
    if optional && s.is_empty() {
        return;
    }
    let parsed = (s.len() == 8)
        .then(|| NaiveTime::parse_from_str(s, "%H:%M:%S").ok())
        .flatten();
    match parsed {
        None => report.push(row, Rule::TimeFormat, format!("{col}={s:?}")),
        Some(t) if t.second() != 0 || t.minute() % granularity != 0 => {
            report.push(row, Rule::TimeGranularity, format!("{col}={s}"))
        }
        Some(_) => {}
    }
}
