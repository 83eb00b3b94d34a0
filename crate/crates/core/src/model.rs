//! Domain types shared by every stage.
//!
//! Raw input carries no personal fields: the only identifier is the card
//! serial, which the pipeline replaces before anything is written out.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudonym::DayPseudonym;

/// Opaque true card identifier. Never written to a public output.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CardSerial(Arc<str>);

impl CardSerial {
    pub fn new(serial: impl Into<Arc<str>>) -> Self {
        CardSerial(serial.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for CardSerial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CardSerial([REDACTED])")
    }
}

/// US currency held as integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Money {
    type Err = Error;

    /// Accepts `12`, `12.5` and `12.50`; anything finer than a cent is rejected.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("invalid money amount {s:?}"));
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (whole, frac) = match body.split_once('.') {
            Some((w, f)) => (w, f),
            None => (body, ""),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > 2 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if body.ends_with('.') {
            return Err(bad());
        }
        let whole: i64 = whole.parse().map_err(|_| bad())?;
        let frac_cents = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().map_err(|_| bad())? * 10,
            _ => frac.parse::<i64>().map_err(|_| bad())?,
        };
        let cents = whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(frac_cents))
            .ok_or_else(bad)?;
        Ok(Money(if negative { -cents } else { cents }))
    }
}

/// Weekday numbering used in the output: 1 = Sunday through 7 = Saturday.
pub fn day_of_week_id(day: Weekday) -> u8 {
    day.number_from_sunday() as u8
}

pub fn day_of_week_name(id: u8) -> Option<&'static str> {
    const NAMES: [&str; 7] = [
        "Sunday",
        "Monday",
        "Tuesday",
        "Wednesday",
        "Thursday",
        "Friday",
        "Saturday",
    ];
    NAMES.get(usize::from(id).checked_sub(1)?).copied()
}

/// One fare event before anonymization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTransaction {
    pub card_serial: CardSerial,
    pub tag_on_at: NaiveDateTime,
    pub tag_off_at: Option<NaiveDateTime>,
    pub agency_id: i64,
    pub agency_name: Arc<str>,
    pub route_id: Option<i64>,
    pub route_name: Option<Arc<str>>,
    pub tag_on_location_id: i64,
    pub tag_on_location_name: Arc<str>,
    pub tag_off_location_id: Option<i64>,
    pub tag_off_location_name: Option<Arc<str>>,
    pub fare_amount: Money,
    pub payment_product_id: i64,
    pub payment_product_name: Arc<str>,
}

/// Column names of the raw input CSV, in order.
pub const RAW_COLUMNS: [&str; 14] = [
    "card_serial",
    "tag_on_at",
    "tag_off_at",
    "agency_id",
    "agency_name",
    "route_id",
    "route_name",
    "tag_on_location_id",
    "tag_on_location_name",
    "tag_off_location_id",
    "tag_off_location_name",
    "fare_amount",
    "payment_product_id",
    "payment_product_name",
];

/// A broken invariant on one raw record, or on the raw schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: &'static str,
}

impl Violation {
    fn new(field: impl Into<String>, rule: &'static str) -> Self {
        Violation {
            field: field.into(),
            rule,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

pub const RULE_TAG_OFF_ORDER: &str = "tag_off precedes tag_on";
pub const RULE_ROUTE_PAIR: &str = "route pair incomplete";
pub const RULE_TAG_OFF_GROUP: &str = "tag-off fields incomplete";
pub const RULE_NEGATIVE_FARE: &str = "fare is negative";
pub const RULE_EMPTY_SERIAL: &str = "card serial is empty";
pub const RULE_UNKNOWN_COLUMN: &str = "column not in raw schema";
pub const RULE_MISSING_COLUMN: &str = "required column missing";

/// Checks every invariant of a raw record. An empty result means the record
/// is accepted by every downstream stage.
pub fn validate_raw(record: &RawTransaction) -> Vec<Violation> {
    let mut out = Vec::new();
    if record.card_serial.as_bytes().is_empty() {
        out.push(Violation::new("card_serial", RULE_EMPTY_SERIAL));
    }
    if let Some(off) = record.tag_off_at {
        if off < record.tag_on_at {
            out.push(Violation::new("tag_off_at", RULE_TAG_OFF_ORDER));
        }
    }
    if record.route_id.is_some() != record.route_name.is_some() {
        out.push(Violation::new("route_id/route_name", RULE_ROUTE_PAIR));
    }
    let off_parts = [
        record.tag_off_at.is_some(),
        record.tag_off_location_id.is_some(),
        record.tag_off_location_name.is_some(),
    ];
    if off_parts.iter().any(|&p| p) && !off_parts.iter().all(|&p| p) {
        out.push(Violation::new(
            "tag_off_at/tag_off_location_id/tag_off_location_name",
            RULE_TAG_OFF_GROUP,
        ));
    }
    if record.fare_amount.cents() < 0 {
        out.push(Violation::new("fare_amount", RULE_NEGATIVE_FARE));
    }
    out
}

/// Schema-level check on a raw CSV header: exactly the documented columns, so
/// no name, address or account column can ride along into the pipeline.
pub fn validate_raw_header<S: AsRef<str>>(header: &[S]) -> Vec<Violation> {
    let mut out = Vec::new();
    for name in header {
        if !RAW_COLUMNS.contains(&name.as_ref()) {
            out.push(Violation::new(name.as_ref(), RULE_UNKNOWN_COLUMN));
        }
    }
    for col in RAW_COLUMNS {
        if !header.iter().any(|h| h.as_ref() == col) {
            out.push(Violation::new(col, RULE_MISSING_COLUMN));
        }
    }
    out
}

/// Column names of the published dataset, in order.
pub const OUTPUT_COLUMNS: [&str; 20] = [
    "ClipperCardID",
    "TripSequenceID",
    "AgencyID",
    "AgencyName",
    "RouteID",
    "RouteName",
    "FareAmount",
    "PaymentProductID",
    "PaymentProductName",
    "TagOnTime_Time",
    "TagOnLocationId",
    "TagOnLocationName",
    "TagOffTime_Time",
    "TagOffLocationId",
    "TagOffLocationName",
    "Year",
    "Month",
    "DayOfWeekID",
    "DayOfWeek",
    "RandomWeekID",
];

/// One published row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonymizedRecord {
    pub card_id: DayPseudonym,
    pub trip_sequence_id: u32,
    pub agency_id: i64,
    pub agency_name: Arc<str>,
    pub route_id: Option<i64>,
    pub route_name: Option<Arc<str>>,
    pub fare_amount: Money,
    pub payment_product_id: i64,
    pub payment_product_name: Arc<str>,
    pub tag_on_time: NaiveTime,
    pub tag_on_location_id: i64,
    pub tag_on_location_name: Arc<str>,
    pub tag_off_time: Option<NaiveTime>,
    pub tag_off_location_id: Option<i64>,
    pub tag_off_location_name: Option<Arc<str>>,
    pub year: i32,
    pub month: u32,
    pub day_of_week_id: u8,
    pub random_week_id: u32,
}

impl AnonymizedRecord {
    pub fn day_of_week(&self) -> &'static str {
        day_of_week_name(self.day_of_week_id).unwrap_or("")
    }

    /// The twenty output fields rendered as CSV cells.
    pub fn to_fields(&self) -> [String; 20] {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(ToString::to_string).unwrap_or_default()
        }
        [
            self.card_id.to_string(),
            self.trip_sequence_id.to_string(),
            self.agency_id.to_string(),
            self.agency_name.to_string(),
            opt(&self.route_id),
            opt(&self.route_name),
            self.fare_amount.to_string(),
            self.payment_product_id.to_string(),
            self.payment_product_name.to_string(),
            format_time(self.tag_on_time),
            self.tag_on_location_id.to_string(),
            self.tag_on_location_name.to_string(),
            self.tag_off_time.map(format_time).unwrap_or_default(),
            opt(&self.tag_off_location_id),
            opt(&self.tag_off_location_name),
            self.year.to_string(),
            self.month.to_string(),
            self.day_of_week_id.to_string(),
            self.day_of_week().to_string(),
            self.random_week_id.to_string(),
        ]
    }
}

pub(crate) fn format_time(t: NaiveTime) -> String {
    format!("{:02}:{:02}:{:02}", t.hour(), t.minute(), t.second())
}

/// How many occurrences of each weekday survive in a month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeekdayKeep {
    Count(u32),
    #[serde(with = "all_tag")]
    All,
}

mod all_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "all" {
            Ok(())
        } else {
            Err(serde::de::Error::custom("expected an integer or \"all\""))
        }
    }
}

impl fmt::Display for WeekdayKeep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeekdayKeep::Count(n) => write!(f, "{n}"),
            WeekdayKeep::All => f.write_str("all"),
        }
    }
}

/// Scheme parameters. The secret key is held separately in a
/// [`PseudonymKey`](crate::pseudonym::PseudonymKey) so that this struct can be
/// logged and stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationConfig {
    pub card_sample_rate: f64,
    pub weekday_keep_count: WeekdayKeep,
    pub time_granularity_minutes: u32,
    #[serde(with = "hhmm")]
    pub circadian_boundary: NaiveTime,
    pub run_seed: u64,
}

impl Default for AnonymizationConfig {
    fn default() -> Self {
        AnonymizationConfig {
            card_sample_rate: 0.5,
            weekday_keep_count: WeekdayKeep::Count(3),
            time_granularity_minutes: 10,
            circadian_boundary: NaiveTime::from_hms_opt(3, 0, 0).expect("valid time"),
            run_seed: 0,
        }
    }
}

impl AnonymizationConfig {
    /// The sampling-off counterfactual: every card on every day.
    pub fn without_sampling(&self) -> Self {
        AnonymizationConfig {
            card_sample_rate: 1.0,
            weekday_keep_count: WeekdayKeep::All,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = self.card_sample_rate;
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::Config(format!(
                "card_sample_rate must be in (0, 1], got {rate}"
            )));
        }
        if self.weekday_keep_count == WeekdayKeep::Count(0) {
            return Err(Error::Config("weekday_keep_count must be at least 1".into()));
        }
        let g = self.time_granularity_minutes;
        if g == 0 || 60 % g != 0 {
            return Err(Error::Config(format!(
                "time_granularity_minutes must divide 60, got {g}"
            )));
        }
        Ok(())
    }
}

/// SHA-256 over the compact JSON form of a configuration value, used to tag
/// runs in logs without printing every field.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(json))
}

pub(crate) mod hhmm {
    use chrono::NaiveTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format("%H:%M").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveTime, D::Error> {
        let s = String::deserialize(d)?;
        NaiveTime::parse_from_str(&s, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(&s, "%H:%M:%S"))
            .map_err(serde::de::Error::custom)
    }
}
