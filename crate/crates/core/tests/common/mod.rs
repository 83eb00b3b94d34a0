//! Fixtures and brute-force oracles shared by the integration tests.
//!
//! The oracles deliberately avoid the pipeline's own grouping code: circadian
//! dates, pseudonyms, sequence numbers, truncation and field formatting are
//! recomputed here from first principles for every row.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use hmac::{Hmac, Mac};
use sha2::Sha256;

use fareanon::dates::build_date_id_map;
use fareanon::sampling::{sample_cards, sample_weekdays};
use fareanon::synth::{generate_month, PopulationSpec, SyntheticMonth};
use fareanon::temporal::CircadianDate;
use fareanon::{AnonymizationConfig, PseudonymKey, RawTransaction};

pub const KEY_BYTES: [u8; 32] = *b"integration-test-key-0123456789a";

pub fn key() -> PseudonymKey {
    PseudonymKey::new(KEY_BYTES.to_vec()).unwrap()
}

pub fn default_month(seed: u64) -> SyntheticMonth {
    let spec = PopulationSpec {
        seed,
        ..Default::default()
    };
    generate_month(&spec, 2013, 10).unwrap()
}

/// Service date by hand: anything before the boundary belongs to the day before.
pub fn service_date(ts: NaiveDateTime, boundary: NaiveTime) -> NaiveDate {
    if ts.time() < boundary {
        ts.date() - Duration::days(1)
    } else {
        ts.date()
    }
}

pub fn expected_pseudonym(key: &[u8], serial: &str, date: NaiveDate) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).unwrap();
    let label = b"card-day-pseudonym/v1";
    mac.update(&(label.len() as u64).to_be_bytes());
    mac.update(label);
    mac.update(&(serial.len() as u64).to_be_bytes());
    mac.update(serial.as_bytes());
    mac.update(&date.num_days_from_ce().to_be_bytes());
    let tag = mac.finalize().into_bytes();
    tag[..16].iter().map(|b| format!("{b:02X}")).collect()
}

fn floor_time(t: NaiveTime, minutes: u32) -> String {
    let secs = t.num_seconds_from_midnight();
    let step = minutes * 60;
    let f = secs - secs % step;
    format!("{:02}:{:02}:{:02}", f / 3600, f / 60 % 60, f % 60)
}

fn money(cents: i64) -> String {
    format!("{}.{:02}", cents / 100, cents % 100)
}

fn weekday_pair(w: Weekday) -> (u32, &'static str) {
    match w {
        Weekday::Sun => (1, "Sunday"),
        Weekday::Mon => (2, "Monday"),
        Weekday::Tue => (3, "Tuesday"),
        Weekday::Wed => (4, "Wednesday"),
        Weekday::Thu => (5, "Thursday"),
        Weekday::Fri => (6, "Friday"),
        Weekday::Sat => (7, "Saturday"),
    }
}

/// Expected published rows for `raw`, in publication order, recomputed one
/// row at a time. The stage functions for the three random draws (weekday
/// choice, card choice, date IDs) are called directly with the inputs the
/// oracle derives itself.
pub fn oracle_rows(raw: &[RawTransaction], config: &AnonymizationConfig, key: &[u8]) -> Vec<Vec<String>> {
    let boundary = config.circadian_boundary;
    let dates: Vec<NaiveDate> = raw.iter().map(|r| service_date(r.tag_on_at, boundary)).collect();

    let mut months: HashMap<(i32, u32), BTreeSet<NaiveDate>> = HashMap::new();
    for d in &dates {
        months
            .entry((d.year(), d.month()))
            .or_insert_with(|| sample_weekdays(d.year(), d.month(), config.weekday_keep_count, config.run_seed).unwrap());
    }

    let mut kept_cards: HashMap<NaiveDate, HashSet<String>> = HashMap::new();
    for d in dates.iter().collect::<BTreeSet<_>>() {
        let active: Vec<String> = raw
            .iter()
            .zip(&dates)
            .filter(|(_, rd)| *rd == d)
            .map(|(r, _)| r.card_serial.as_str().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let kept = sample_cards(active, config.card_sample_rate, config.run_seed, CircadianDate::from_service_date(*d));
        kept_cards.insert(*d, kept.into_iter().collect());
    }

    let published = |i: usize| {
        let d = dates[i];
        months[&(d.year(), d.month())].contains(&d) && kept_cards[&d].contains(raw[i].card_serial.as_str())
    };

    let mut populated: HashMap<(i32, u32), BTreeSet<NaiveDate>> = HashMap::new();
    for i in 0..raw.len() {
        if published(i) {
            populated.entry((dates[i].year(), dates[i].month())).or_default().insert(dates[i]);
        }
    }
    let ids: HashMap<(i32, u32), BTreeMap<NaiveDate, u32>> = populated
        .iter()
        .map(|(k, set)| (*k, build_date_id_map(set, config.run_seed).unwrap().iter().collect()))
        .collect();

    let mut rows: Vec<(u32, String, u32, Vec<String>)> = Vec::new();
    for i in 0..raw.len() {
        if !published(i) {
            continue;
        }
        let r = &raw[i];
        let d = dates[i];
        let serial = r.card_serial.as_str();
        let seq = 1 + (0..raw.len())
            .filter(|&j| {
                dates[j] == d
                    && raw[j].card_serial.as_str() == serial
                    && (raw[j].tag_on_at < r.tag_on_at || (raw[j].tag_on_at == r.tag_on_at && j < i))
            })
            .count() as u32;
        let card = expected_pseudonym(key, serial, d);
        let rwid = ids[&(d.year(), d.month())][&d];
        let (dow_id, dow) = weekday_pair(d.weekday());
        let g = config.time_granularity_minutes;
        let fields = vec![
            card.clone(),
            seq.to_string(),
            r.agency_id.to_string(),
            r.agency_name.to_string(),
            r.route_id.map(|v| v.to_string()).unwrap_or_default(),
            r.route_name.as_deref().unwrap_or("").to_string(),
            money(r.fare_amount.cents()),
            r.payment_product_id.to_string(),
            r.payment_product_name.to_string(),
            floor_time(r.tag_on_at.time(), g),
            r.tag_on_location_id.to_string(),
            r.tag_on_location_name.to_string(),
            r.tag_off_at.map(|t| floor_time(t.time(), g)).unwrap_or_default(),
            r.tag_off_location_id.map(|v| v.to_string()).unwrap_or_default(),
            r.tag_off_location_name.as_deref().unwrap_or("").to_string(),
            d.year().to_string(),
            d.month().to_string(),
            dow_id.to_string(),
            dow.to_string(),
            rwid.to_string(),
        ];
        rows.push((rwid, card, seq, fields));
    }
    rows.sort_by(|a, b| (a.0, &a.1, a.2).cmp(&(b.0, &b.1, b.2)));
    rows.into_iter().map(|(_, _, _, f)| f).collect()
}

/// Data rows of a published CSV as plain strings.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

/// Histogram of exact sharing counts by an independent group-by over the
/// CSV text: card-days keyed by (Year, Month, RandomWeekID, ClipperCardID).
pub fn brute_force_uniqueness(path: &Path) -> BTreeMap<u32, u64> {
    let mut card_days: BTreeMap<(String, String, String, String), Vec<(u32, String)>> = BTreeMap::new();
    for f in csv_rows(path) {
        let step = format!("{}|{}|{}|{}|{}", f[2], f[10], f[9], f[13], f[12]);
        card_days
            .entry((f[15].clone(), f[16].clone(), f[19].clone(), f[0].clone()))
            .or_default()
            .push((f[1].parse().unwrap(), step));
    }
    let mut shared: HashMap<(String, String, String, String), HashSet<String>> = HashMap::new();
    let mut keyed = Vec::new();
    for ((y, m, d, card), mut steps) in card_days {
        steps.sort();
        let t: Vec<String> = steps.into_iter().map(|(_, s)| s).collect();
        let k = (y, m, d, t.join(";"));
        shared.entry(k.clone()).or_default().insert(card);
        keyed.push(k);
    }
    let mut hist = BTreeMap::new();
    for k in keyed {
        *hist.entry(shared[&k].len() as u32).or_insert(0u64) += 1;
    }
    hist
}

/// Finds true serials or ISO dates in `text`. Serials are matched exactly
/// wherever a known serial prefix begins.
pub fn leaks(text: &str, serials: &HashSet<String>, dates: &[String], prefix: &str) -> Vec<String> {
    let mut hits = Vec::new();
    let len = serials.iter().next().map(String::len).unwrap_or(0);
    for (pos, _) in text.match_indices(prefix) {
        if let Some(candidate) = text.get(pos..pos + len) {
            if serials.contains(candidate) {
                hits.push(candidate.to_string());
            }
        }
    }
    for d in dates {
        if text.contains(d.as_str()) {
            hits.push(d.clone());
        }
    }
    hits
}

/// Spearman rank correlation between two rankings of the same n items.
pub fn spearman(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
