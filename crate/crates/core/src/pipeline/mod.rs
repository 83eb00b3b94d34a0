//! Batch orchestration: raw transactions in, monthly published datasets and a
//! private run manifest out.
//!
//! The input is scanned twice. The first scan validates every row and
//! collects the distinct cards active on each retained date, which is all
//! card sampling needs. The second scan keeps only rows of retained cards on
//! retained dates, so memory is bounded by the published volume rather than
//! the input volume. Each retained date is then processed independently.

pub mod io;
pub mod manifest;
pub mod validate;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use log::info;

use crate::dates::build_date_id_map;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{day_of_week_id, validate_raw, AnonymizationConfig, AnonymizedRecord, CardSerial, RawTransaction};
use crate::pseudonym::{DayPseudonym, PseudonymKey, Pseudonymizer};
use crate::sampling::{sample_cards, MonthPlan};
use crate::temporal::{assign_trip_sequence, circadian_date, truncate_time, CircadianDate};

pub use io::ParsedRow;
pub use manifest::{DayManifest, MonthManifest, RunManifest};

/// Something that can be scanned, in a stable order, more than once.
pub trait RawSource: Sync {
    /// Calls `visit(row, parsed)` for each data row; `row` counts from 1.
    fn scan(&self, visit: &mut dyn FnMut(u64, ParsedRow) -> Result<()>) -> Result<()>;
}

impl RawSource for [RawTransaction] {
    fn scan(&self, visit: &mut dyn FnMut(u64, ParsedRow) -> Result<()>) -> Result<()> {
        for (row, r) in (1u64..).zip(self) {
            visit(row, Ok(r.clone()))?;
        }
        Ok(())
    }
}

impl RawSource for Vec<RawTransaction> {
    fn scan(&self, visit: &mut dyn FnMut(u64, ParsedRow) -> Result<()>) -> Result<()> {
        self.as_slice().scan(visit)
    }
}

/// A raw CSV file on disk.
#[derive(Debug, Clone)]
pub struct CsvSource(pub PathBuf);

impl RawSource for CsvSource {
    fn scan(&self, visit: &mut dyn FnMut(u64, ParsedRow) -> Result<()>) -> Result<()> {
        for item in io::read_raw(&self.0)? {
            let (row, parsed) = item?;
            visit(row, parsed)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnonymizeOptions {
    /// Count and drop invalid rows instead of aborting.
    pub skip_invalid: bool,
    pub execution: Execution,
}

/// One published month, rows in (RandomWeekID, ClipperCardID, TripSequenceID) order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizedMonth {
    pub year: i32,
    pub month: u32,
    pub records: Vec<AnonymizedRecord>,
}

#[derive(Debug, Clone)]
pub struct Release {
    pub months: Vec<AnonymizedMonth>,
    pub manifest: RunManifest,
}

/// Builds one published row from a raw transaction whose circadian day,
/// sequence number and pseudonym are already known.
pub fn publish_row(
    raw: RawTransaction,
    trip_sequence_id: u32,
    card_id: DayPseudonym,
    date: CircadianDate,
    random_week_id: u32,
    granularity_minutes: u32,
) -> AnonymizedRecord {
    let truncate = |t: NaiveTime| truncate_time(t, granularity_minutes);
    AnonymizedRecord {
        card_id,
        trip_sequence_id,
        agency_id: raw.agency_id,
        agency_name: raw.agency_name,
        route_id: raw.route_id,
        route_name: raw.route_name,
        fare_amount: raw.fare_amount,
        payment_product_id: raw.payment_product_id,
        payment_product_name: raw.payment_product_name,
        tag_on_time: truncate(raw.tag_on_at.time()),
        tag_on_location_id: raw.tag_on_location_id,
        tag_on_location_name: raw.tag_on_location_name,
        tag_off_time: raw.tag_off_at.map(|t| truncate(t.time())),
        tag_off_location_id: raw.tag_off_location_id,
        tag_off_location_name: raw.tag_off_location_name,
        year: date.year(),
        month: date.month(),
        day_of_week_id: day_of_week_id(date.weekday()),
        random_week_id,
    }
}

fn admit(
    row: u64,
    parsed: ParsedRow,
    skip_invalid: bool,
    skipped: &mut u64,
) -> Result<Option<RawTransaction>> {
    let reason = match parsed {
        Ok(r) => {
            let violations = validate_raw(&r);
            if violations.is_empty() {
                return Ok(Some(r));
            }
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
        }
        Err(reason) => reason,
    };
    if skip_invalid {
        *skipped += 1;
        Ok(None)
    } else {
        Err(Error::InvalidRow { row, reason })
    }
}

struct DayOutput {
    date: CircadianDate,
    records: Vec<AnonymizedRecord>,
}

/// Runs the whole scheme over `source`.
pub fn anonymize<S: RawSource + ?Sized>(
    source: &S,
    config: &AnonymizationConfig,
    key: &PseudonymKey,
    opts: &AnonymizeOptions,
) -> Result<Release> {
    config.validate()?;
    let boundary = config.circadian_boundary;
    let exec = &opts.execution;

    // Scan 1: validate, assign circadian days and months, collect active cards.
    let mut plans: BTreeMap<(i32, u32), MonthPlan> = BTreeMap::new();
    let mut active: HashMap<NaiveDate, HashSet<CardSerial>> = HashMap::new();
    let (mut input_rows, mut skipped, mut dropped_date_rows) = (0u64, 0u64, 0u64);
    source.scan(&mut |row, parsed| {
        input_rows += 1;
        let Some(r) = admit(row, parsed, opts.skip_invalid, &mut skipped)? else {
            return Ok(());
        };
        let day = circadian_date(r.tag_on_at, boundary);
        let plan = match plans.entry((day.year(), day.month())) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(MonthPlan::new(
                day.year(),
                day.month(),
                config.weekday_keep_count,
                config.run_seed,
            )?),
        };
        if plan.is_retained(day) {
            active.entry(day.service_date()).or_default().insert(r.card_serial);
        } else {
            dropped_date_rows += 1;
        }
        Ok(())
    })?;

    // Card sampling, one independent decision per retained date.
    let mut active: Vec<(NaiveDate, Vec<CardSerial>)> = active
        .into_iter()
        .map(|(d, cards)| (d, cards.into_iter().collect()))
        .collect();
    active.sort_by_key(|(d, _)| *d);
    let rate = config.card_sample_rate;
    let seed = config.run_seed;
    let sampled: Vec<(NaiveDate, u64, HashSet<CardSerial>)> = exec.map(active, |(date, cards)| {
        let n = cards.len() as u64;
        let kept = sample_cards(cards, rate, seed, CircadianDate::from_service_date(date));
        (date, n, kept.into_iter().collect())
    });
    let date_index: HashMap<NaiveDate, usize> =
        sampled.iter().enumerate().map(|(i, (d, _, _))| (*d, i)).collect();

    // Scan 2: keep rows of retained cards on retained dates.
    let mut buckets: Vec<Vec<RawTransaction>> = vec![Vec::new(); sampled.len()];
    let mut unsampled_rows = 0u64;
    let mut ignored = 0u64;
    source.scan(&mut |row, parsed| {
        let Some(r) = admit(row, parsed, opts.skip_invalid, &mut ignored)? else {
            return Ok(());
        };
        let day = circadian_date(r.tag_on_at, boundary);
        if let Some(&i) = date_index.get(&day.service_date()) {
            if sampled[i].2.contains(&r.card_serial) {
                buckets[i].push(r);
            } else {
                unsampled_rows += 1;
            }
        }
        Ok(())
    })?;

    let retained_counts: Vec<(NaiveDate, u64, u64)> = sampled
        .iter()
        .map(|(d, n, kept)| (*d, *n, kept.len() as u64))
        .collect();
    drop(date_index);
    drop(sampled);

    // Sequencing, pseudonyms and truncation, per retained date.
    let pseudonymizer = Pseudonymizer::new(key);
    let granularity = config.time_granularity_minutes;
    let work: Vec<(NaiveDate, Vec<RawTransaction>)> = retained_counts
        .iter()
        .map(|(d, _, _)| *d)
        .zip(buckets)
        .collect();
    let days: Vec<DayOutput> = exec.map(work, |(date, rows)| {
        process_day(CircadianDate::from_service_date(date), rows, &pseudonymizer, granularity)
    });

    // Per-month date ids and ordered merge.
    let mut by_month: BTreeMap<(i32, u32), Vec<DayOutput>> =
        plans.keys().map(|k| (*k, Vec::new())).collect();
    for day in days {
        by_month
            .get_mut(&(day.date.year(), day.date.month()))
            .expect("every retained date has a plan")
            .push(day);
    }
    let counts: HashMap<NaiveDate, (u64, u64)> = retained_counts
        .iter()
        .map(|(d, active, kept)| (*d, (*active, *kept)))
        .collect();

    let mut months = Vec::new();
    let mut month_manifests = Vec::new();
    let mut output_rows = 0u64;
    for ((year, month), mut days) in by_month {
        let plan = &plans[&(year, month)];
        let populated: BTreeSet<NaiveDate> = days
            .iter()
            .filter(|d| !d.records.is_empty())
            .map(|d| d.date.service_date())
            .collect();
        let date_ids = if populated.is_empty() {
            Default::default()
        } else {
            build_date_id_map(&populated, config.run_seed)?
        };
        let mut day_rows: HashMap<NaiveDate, u64> = HashMap::new();
        days.retain(|d| !d.records.is_empty());
        for day in &mut days {
            let id = date_ids
                .get(day.date.service_date())
                .expect("populated date has an id");
            for r in &mut day.records {
                r.random_week_id = id;
            }
            day_rows.insert(day.date.service_date(), day.records.len() as u64);
        }
        days.sort_by_key(|d| date_ids.get(d.date.service_date()));
        let records: Vec<AnonymizedRecord> = days.into_iter().flat_map(|d| d.records).collect();
        let rows = records.len() as u64;
        output_rows += rows;
        let day_manifests = plan
            .retained_dates
            .iter()
            .map(|d| {
                let (active_cards, retained_cards) = counts.get(d).copied().unwrap_or((0, 0));
                DayManifest {
                    date: *d,
                    active_cards,
                    retained_cards,
                    output_rows: day_rows.get(d).copied().unwrap_or(0),
                }
            })
            .collect();
        month_manifests.push(MonthManifest {
            year,
            month,
            weekday_seed: plan.weekday_seed.clone(),
            retained_dates: plan.retained_dates.clone(),
            date_ids,
            days: day_manifests,
            output_rows: rows,
            file: manifest::month_file_name(year, month),
            sha256: None,
        });
        months.push(AnonymizedMonth {
            year,
            month,
            records,
        });
    }

    info!(
        "anonymized {input_rows} rows: {skipped} invalid skipped, {dropped_date_rows} on dropped dates, \
         {unsampled_rows} of unsampled cards, {output_rows} published"
    );

    Ok(Release {
        months,
        manifest: RunManifest {
            schema: manifest::MANIFEST_SCHEMA.to_string(),
            config: config.clone(),
            key_fingerprint: key.fingerprint(),
            input_rows,
            invalid_rows_skipped: skipped,
            rows_on_dropped_dates: dropped_date_rows,
            rows_of_unsampled_cards: unsampled_rows,
            output_rows,
            months: month_manifests,
        },
    })
}

fn process_day(
    date: CircadianDate,
    rows: Vec<RawTransaction>,
    pseudonymizer: &Pseudonymizer,
    granularity: u32,
) -> DayOutput {
    let mut by_card: HashMap<CardSerial, Vec<RawTransaction>> = HashMap::new();
    for r in rows {
        by_card.entry(r.card_serial.clone()).or_default().push(r);
    }
    let mut records = Vec::new();
    for (card, trips) in by_card {
        let card_id = pseudonymizer.pseudonymize(&card, date);
        for (seq, raw) in assign_trip_sequence(trips, |r| r.tag_on_at) {
            records.push(publish_row(raw, seq, card_id, date, 0, granularity));
        }
    }
    records.sort_unstable_by_key(|r| (r.card_id, r.trip_sequence_id));
    DayOutput { date, records }
}

impl Release {
    /// Writes every month as `anon_<Year>_<MM>.csv` into `output_dir` and the
    /// manifest into `output_dir/private/`. Existing files are only replaced
    /// when `overwrite` is set; nothing is written if any target exists.
    pub fn write(&mut self, output_dir: &Path, overwrite: bool) -> Result<&RunManifest> {
        let private = output_dir.join(manifest::PRIVATE_DIR);
        std::fs::create_dir_all(&private).map_err(|e| Error::io(&private, e))?;
        let manifest_path = manifest::manifest_path(output_dir);
        if !overwrite {
            let targets = self
                .manifest
                .months
                .iter()
                .map(|m| output_dir.join(&m.file))
                .chain(std::iter::once(manifest_path.clone()));
            for t in targets {
                if t.exists() {
                    return Err(Error::OutputExists(t));
                }
            }
        }
        for (month, entry) in self.months.iter().zip(self.manifest.months.iter_mut()) {
            let path = output_dir.join(&entry.file);
            let digest = io::write_month(&path, &month.records, overwrite)?;
            info!("wrote {} ({} rows)", path.display(), month.records.len());
            entry.sha256 = Some(digest);
        }
        io::write_atomic(&manifest_path, self.manifest.to_json().as_bytes(), overwrite)?;
        Ok(&self.manifest)
    }
}
