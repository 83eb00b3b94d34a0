//! Empirical checks of the sampling arithmetic and measurements of what a
//! release still reveals: trajectory uniqueness, cross-day linkage and
//! per-day volume.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, NaiveTime, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{AnonymizationConfig, AnonymizedRecord, CardSerial, WeekdayKeep};
use crate::pipeline::io::write_atomic;
use crate::pipeline::manifest::RunManifest;
use crate::pseudonym::{DayPseudonym, PseudonymKey, Pseudonymizer};
use crate::sampling::{inclusion_probability, sample_cards, sample_weekdays, streak_inclusion_probability, weekday_occurrences};
use crate::synth::GroundTruth;
use crate::temporal::CircadianDate;

pub const MIN_TRIALS: u64 = 1_000;

/// Monte Carlo estimate of how often one card is published.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionEstimate {
    pub weekday_occurrences: u32,
    pub trials: u64,
    /// Month holding the tracked week; its Mondays occur `weekday_occurrences` times.
    pub reference_year: i32,
    pub reference_month: u32,
    /// Monday to Friday of the first full week of the reference month.
    pub tracked_dates: Vec<NaiveDate>,
    /// Cards active on every tracked day, including the tracked one.
    pub population: usize,
    pub analytic_per_day: f64,
    pub empirical_per_day: f64,
    pub per_day_standard_error: f64,
    /// Empirical inclusion frequency of each tracked date.
    pub empirical_by_date: Vec<f64>,
    pub analytic_streak: f64,
    pub empirical_streak: f64,
    pub streak_standard_error: f64,
}

impl InclusionEstimate {
    /// Distance between the empirical and analytic Monday frequency, in standard errors.
    pub fn per_day_z(&self) -> f64 {
        z(self.empirical_per_day, self.analytic_per_day, self.per_day_standard_error)
    }

    pub fn streak_z(&self) -> f64 {
        z(self.empirical_streak, self.analytic_streak, self.streak_standard_error)
    }
}

fn z(observed: f64, expected: f64, se: f64) -> f64 {
    if se > 0.0 {
        (observed - expected).abs() / se
    } else if observed == expected {
        0.0
    } else {
        f64::INFINITY
    }
}

fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Month (searched from January 2015) whose first full Monday to Friday
/// week has the most weekdays occurring `occurrences` times, Monday included.
fn reference_week(occurrences: u32) -> Result<(i32, u32, Vec<NaiveDate>)> {
    let mut best: Option<(usize, i32, u32, Vec<NaiveDate>)> = None;
    let mut date = NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date");
    for _ in 0..120 {
        let (year, month) = (date.year(), date.month());
        let mondays = weekday_occurrences(year, month, Weekday::Mon)?;
        if mondays.len() as u32 == occurrences {
            let monday = mondays
                .into_iter()
                .find(|d| (*d + Days::new(4)).month() == month)
                .expect("every month has a full Monday-Friday week");
            let week: Vec<NaiveDate> = (0..5).map(|i| monday + Days::new(i)).collect();
            let mut matching = 0;
            for d in &week {
                matching += usize::from(weekday_occurrences(year, month, d.weekday())?.len() as u32 == occurrences);
            }
            if best.as_ref().is_none_or(|b| matching > b.0) {
                best = Some((matching, year, month, week));
            }
        }
        date = date.checked_add_months(chrono::Months::new(1)).expect("in range");
    }
    best.map(|(_, y, m, w)| (y, m, w))
        .ok_or_else(|| Error::Domain(format!("no month has {occurrences} Mondays")))
}

/// Smallest population (at least ten cards) whose exact retained share
/// equals `rate`, or the closest one up to a thousand cards.
fn sampling_population(rate: f64) -> usize {
    let share = |n: usize| crate::sampling::retained_card_count(n, rate) as f64 / n as f64;
    (10..=1000)
        .find(|&n| (share(n) - rate).abs() < 1e-12)
        .unwrap_or_else(|| {
            (10..=1000)
                .min_by(|&a, &b| (share(a) - rate).abs().total_cmp(&(share(b) - rate).abs()))
                .expect("non-empty range")
        })
}

/// Runs both sampling stages for one tracked card over `trials` independent
/// month draws, using the same functions the pipeline uses.
pub fn monte_carlo_inclusion(
    config: &AnonymizationConfig,
    weekday_occurrences_: u32,
    trials: u64,
    exec: &Execution,
) -> Result<InclusionEstimate> {
    if trials < MIN_TRIALS {
        return Err(Error::Domain(format!("at least {MIN_TRIALS} trials required, got {trials}")));
    }
    config.validate()?;
    let keep = match config.weekday_keep_count {
        WeekdayKeep::Count(k) => k,
        WeekdayKeep::All => weekday_occurrences_,
    };
    let analytic_per_day = inclusion_probability(weekday_occurrences_, keep, config.card_sample_rate)?;
    let (year, month, tracked) = reference_week(weekday_occurrences_)?;
    let per_day_analytic = tracked
        .iter()
        .map(|d| {
            let occ = weekday_occurrences(year, month, d.weekday())?.len() as u32;
            let k = match config.weekday_keep_count {
                WeekdayKeep::Count(k) => k,
                WeekdayKeep::All => occ,
            };
            inclusion_probability(occ, k, config.card_sample_rate)
        })
        .collect::<Result<Vec<f64>>>()?;
    let population = sampling_population(config.card_sample_rate);

    let mut seeder = ChaCha8Rng::seed_from_u64(config.run_seed);
    let seeds: Vec<u64> = (0..trials).map(|_| seeder.random()).collect();
    const CHUNK: usize = 4096;
    let chunks: Vec<Vec<u64>> = seeds.chunks(CHUNK).map(<[u64]>::to_vec).collect();
    let keep_cfg = config.weekday_keep_count;
    let rate = config.card_sample_rate;
    let counts: Vec<Result<([u64; 5], u64)>> = exec.map(chunks, |chunk| {
        let mut hits = [0u64; 5];
        let mut streaks = 0u64;
        for seed in chunk {
            let retained = sample_weekdays(year, month, keep_cfg, seed)?;
            let mut all = true;
            for (i, date) in tracked.iter().enumerate() {
                let included = retained.contains(date)
                    && sample_cards(
                        (0..population as u32).collect(),
                        rate,
                        seed,
                        CircadianDate::from_service_date(*date),
                    )
                    .contains(&0);
                hits[i] += u64::from(included);
                all &= included;
            }
            streaks += u64::from(all);
        }
        Ok((hits, streaks))
    });
    let mut hits = [0u64; 5];
    let mut streaks = 0u64;
    for c in counts {
        let (h, s) = c?;
        for i in 0..5 {
            hits[i] += h[i];
        }
        streaks += s;
    }
    let freq = |n: u64| n as f64 / trials as f64;
    let empirical_per_day = freq(hits[0]);
    let empirical_streak = freq(streaks);
    Ok(InclusionEstimate {
        weekday_occurrences: weekday_occurrences_,
        trials,
        reference_year: year,
        reference_month: month,
        tracked_dates: tracked,
        population,
        analytic_per_day,
        empirical_per_day,
        per_day_standard_error: binomial_se(empirical_per_day, trials),
        empirical_by_date: hits.iter().map(|&h| freq(h)).collect(),
        analytic_streak: streak_inclusion_probability(&per_day_analytic),
        empirical_streak,
        streak_standard_error: binomial_se(empirical_streak, trials),
    })
}

/// One trip as far as a trajectory is concerned.
pub type TrajectoryStep = (i64, i64, NaiveTime, Option<i64>, Option<NaiveTime>);
pub type Trajectory = Vec<TrajectoryStep>;

/// Published identity of a card-day: (year, month, RandomWeekID, pseudonym).
pub type CardDayKey = (i32, u32, u32, DayPseudonym);

/// Each card-day's trips in sequence order.
pub fn trajectories(records: &[AnonymizedRecord]) -> BTreeMap<CardDayKey, Trajectory> {
    let mut steps: BTreeMap<CardDayKey, Vec<(u32, TrajectoryStep)>> = BTreeMap::new();
    for r in records {
        steps
            .entry((r.year, r.month, r.random_week_id, r.card_id))
            .or_default()
            .push((
                r.trip_sequence_id,
                (
                    r.agency_id,
                    r.tag_on_location_id,
                    r.tag_on_time,
                    r.tag_off_location_id,
                    r.tag_off_time,
                ),
            ));
    }
    steps
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|(seq, _)| *seq);
            (k, v.into_iter().map(|(_, s)| s).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniquenessBucket {
    pub label: String,
    pub min_k: u32,
    pub max_k: Option<u32>,
    pub card_days: u64,
}

/// Card-days grouped by how many pseudonyms share their exact trajectory that day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniquenessHistogram {
    pub card_days: u64,
    /// Card-days per exact sharing count k.
    pub by_k: BTreeMap<u32, u64>,
    pub buckets: Vec<UniquenessBucket>,
}

impl UniquenessHistogram {
    pub fn from_counts(by_k: BTreeMap<u32, u64>) -> Self {
        let bands: [(&str, u32, Option<u32>); 5] = [
            ("1", 1, Some(1)),
            ("2", 2, Some(2)),
            ("3-4", 3, Some(4)),
            ("5-9", 5, Some(9)),
            ("10+", 10, None),
        ];
        let buckets = bands
            .iter()
            .map(|&(label, min_k, max_k)| UniquenessBucket {
                label: label.to_string(),
                min_k,
                max_k,
                card_days: by_k
                    .range(min_k..=max_k.unwrap_or(u32::MAX))
                    .map(|(_, n)| n)
                    .sum(),
            })
            .collect();
        UniquenessHistogram {
            card_days: by_k.values().sum(),
            by_k,
            buckets,
        }
    }

    /// Card-days shared by exactly `k` pseudonyms.
    pub fn exactly(&self, k: u32) -> u64 {
        self.by_k.get(&k).copied().unwrap_or(0)
    }
}

pub fn trajectory_uniqueness(records: &[AnonymizedRecord]) -> UniquenessHistogram {
    let per_card_day = trajectories(records);
    let mut sharing: HashMap<((i32, u32, u32), &Trajectory), u32> = HashMap::new();
    for ((y, m, d, _), t) in &per_card_day {
        *sharing.entry(((*y, *m, *d), t)).or_default() += 1;
    }
    let mut by_k: BTreeMap<u32, u64> = BTreeMap::new();
    for ((y, m, d, _), t) in &per_card_day {
        *by_k.entry(sharing[&((*y, *m, *d), t)]).or_default() += 1;
    }
    UniquenessHistogram::from_counts(by_k)
}

/// Maps published pseudonyms back to ground-truth cards, for scoring only.
pub struct TruthResolver {
    dates: HashMap<(i32, u32, u32), NaiveDate>,
    cards: HashMap<(NaiveDate, DayPseudonym), u32>,
}

impl TruthResolver {
    pub fn new(
        truth: &GroundTruth,
        key: &PseudonymKey,
        manifest: &RunManifest,
        exec: &Execution,
    ) -> Result<Self> {
        if manifest.key_fingerprint != key.fingerprint() {
            return Err(Error::GroundTruthMismatch("key does not match the release manifest".into()));
        }
        let mut dates = HashMap::new();
        for m in &manifest.months {
            if (m.year, m.month) != (truth.year, truth.month) {
                return Err(Error::GroundTruthMismatch(format!(
                    "release covers {}-{:02} but ground truth describes {}-{:02}",
                    m.year, m.month, truth.year, truth.month
                )));
            }
            for (date, id) in m.date_ids.iter() {
                dates.insert((m.year, m.month, id), date);
            }
        }
        let serials: Vec<CardSerial> = truth.serials().map(CardSerial::new).collect();
        let pseudonymizer = Pseudonymizer::new(key);
        let all_dates: Vec<NaiveDate> = {
            let mut v: Vec<NaiveDate> = dates.values().copied().collect();
            v.sort();
            v
        };
        let per_date: Vec<Vec<(DayPseudonym, u32)>> = exec.map(all_dates.clone(), |date| {
            let day = CircadianDate::from_service_date(date);
            serials
                .iter()
                .enumerate()
                .map(|(i, s)| (pseudonymizer.pseudonymize(s, day), i as u32))
                .collect()
        });
        let cards = all_dates
            .into_iter()
            .zip(per_date)
            .flat_map(|(d, v)| v.into_iter().map(move |(p, i)| ((d, p), i)))
            .collect();
        Ok(TruthResolver { dates, cards })
    }

    pub fn date(&self, year: i32, month: u32, random_week_id: u32) -> Result<NaiveDate> {
        self.dates.get(&(year, month, random_week_id)).copied().ok_or_else(|| {
            Error::GroundTruthMismatch(format!(
                "RandomWeekID {random_week_id} of {year}-{month:02} is not in the manifest"
            ))
        })
    }

    /// Index of the ground-truth card behind `pseudonym` on `date`.
    pub fn card(&self, date: NaiveDate, pseudonym: DayPseudonym) -> Result<u32> {
        self.cards.get(&(date, pseudonym)).copied().ok_or_else(|| {
            Error::GroundTruthMismatch(format!("a pseudonym on {date} belongs to no ground-truth card"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageResult {
    /// Calendar-adjacent published day pairs attacked.
    pub day_pairs: u64,
    pub source_pseudonyms: u64,
    pub proposed_links: u64,
    pub exact_trajectory_links: u64,
    pub correct_links: u64,
    /// Fraction of proposed links joining the same true card.
    pub accuracy: f64,
    /// Expected accuracy of linking each source to a uniformly random next-day pseudonym.
    pub chance_baseline: f64,
    /// Share of proposed links whose true card was published the next day at all.
    pub partner_present: f64,
}

struct DayView {
    date: NaiveDate,
    pseudonyms: Vec<DayPseudonym>,
    trajectories: Vec<Trajectory>,
    cards: Vec<u32>,
}

type Feature = (i64, i64);

fn features(t: &Trajectory) -> Vec<Feature> {
    let mut f: Vec<Feature> = t
        .iter()
        .flat_map(|&(agency, on, _, off, _)| std::iter::once((agency, on)).chain(off.map(|o| (agency, o))))
        .collect();
    f.sort_unstable();
    f.dedup();
    f
}

#[derive(Default)]
struct PairTally {
    sources: u64,
    proposed: u64,
    exact: u64,
    correct: u64,
    present: u64,
    chance: f64,
}

fn attack_pair(from: &DayView, to: &DayView) -> PairTally {
    let mut exact: HashMap<&Trajectory, usize> = HashMap::new();
    let mut postings: HashMap<Feature, Vec<usize>> = HashMap::new();
    for (j, t) in to.trajectories.iter().enumerate() {
        exact.entry(t).or_insert(j);
        for f in features(t) {
            postings.entry(f).or_default().push(j);
        }
    }
    let present: std::collections::HashSet<u32> = to.cards.iter().copied().collect();
    let mut score = vec![0u32; to.pseudonyms.len()];
    let mut touched = Vec::new();
    let mut tally = PairTally {
        sources: from.pseudonyms.len() as u64,
        ..Default::default()
    };
    for (i, t) in from.trajectories.iter().enumerate() {
        let target = if let Some(&j) = exact.get(t) {
            tally.exact += 1;
            Some(j)
        } else {
            for f in features(t) {
                for &j in postings.get(&f).map(Vec::as_slice).unwrap_or(&[]) {
                    if score[j] == 0 {
                        touched.push(j);
                    }
                    score[j] += 1;
                }
            }
            // Highest shared-location count; ties go to the smallest pseudonym.
            let best = touched.iter().copied().max_by(|&a, &b| score[a].cmp(&score[b]).then(b.cmp(&a)));
            for &j in &touched {
                score[j] = 0;
            }
            touched.clear();
            best
        };
        let Some(j) = target else { continue };
        tally.proposed += 1;
        let card = from.cards[i];
        if present.contains(&card) {
            tally.present += 1;
            tally.chance += 1.0 / to.pseudonyms.len() as f64;
        }
        tally.correct += u64::from(to.cards[j] == card);
    }
    tally
}

/// Greedy cross-day linkage: each pseudonym on day d is linked to the day
/// d+1 pseudonym with the same trajectory, or failing that the one sharing
/// the most tagged locations.
pub fn linkage_attack(
    records: &[AnonymizedRecord],
    resolver: &TruthResolver,
    exec: &Execution,
) -> Result<LinkageResult> {
    let mut by_date: BTreeMap<NaiveDate, Vec<(DayPseudonym, Trajectory)>> = BTreeMap::new();
    for ((y, m, id, p), t) in trajectories(records) {
        by_date.entry(resolver.date(y, m, id)?).or_default().push((p, t));
    }
    let mut days: Vec<DayView> = Vec::with_capacity(by_date.len());
    for (date, mut entries) in by_date {
        entries.sort_by_key(|(p, _)| *p);
        let cards = entries
            .iter()
            .map(|(p, _)| resolver.card(date, *p))
            .collect::<Result<Vec<u32>>>()?;
        let (pseudonyms, trajectories) = entries.into_iter().unzip();
        days.push(DayView {
            date,
            pseudonyms,
            trajectories,
            cards,
        });
    }
    let pairs: Vec<(usize, usize)> = (1..days.len())
        .filter(|&i| days[i - 1].date.succ_opt() == Some(days[i].date))
        .map(|i| (i - 1, i))
        .collect();
    let day_pairs = pairs.len() as u64;
    let tallies = exec.map(pairs, |(a, b)| attack_pair(&days[a], &days[b]));
    let mut total = PairTally::default();
    for t in tallies {
        total.sources += t.sources;
        total.proposed += t.proposed;
        total.exact += t.exact;
        total.correct += t.correct;
        total.present += t.present;
        total.chance += t.chance;
    }
    let share = |x: f64| if total.proposed == 0 { 0.0 } else { x / total.proposed as f64 };
    Ok(LinkageResult {
        day_pairs,
        source_pseudonyms: total.sources,
        proposed_links: total.proposed,
        exact_trajectory_links: total.exact,
        correct_links: total.correct,
        accuracy: share(total.correct as f64),
        chance_baseline: share(total.chance),
        partner_present: share(total.present as f64),
    })
}

/// Published volume of one day, as an adversary holding a ridership
/// calendar would see it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyVolume {
    pub year: i32,
    pub month: u32,
    pub random_week_id: u32,
    pub day_of_week_id: u8,
    pub rows: u64,
    pub pseudonyms: u64,
}

type DayTally = (u8, u64, std::collections::HashSet<DayPseudonym>);

pub fn daily_volumes(records: &[AnonymizedRecord]) -> Vec<DailyVolume> {
    let mut days: BTreeMap<(i32, u32, u32), DayTally> = BTreeMap::new();
    for r in records {
        let e = days
            .entry((r.year, r.month, r.random_week_id))
            .or_insert_with(|| (r.day_of_week_id, 0, Default::default()));
        e.1 += 1;
        e.2.insert(r.card_id);
    }
    days.into_iter()
        .map(|((year, month, random_week_id), (dow, rows, ps))| DailyVolume {
            year,
            month,
            random_week_id,
            day_of_week_id: dow,
            rows,
            pseudonyms: ps.len() as u64,
        })
        .collect()
}

pub const DATE_REVERSAL_NOTE: &str = "Each RandomWeekID keeps its weekday and its row count. \
Within a weekday there are at most five candidate dates, so an adversary who knows daily \
ridership (holidays, events, weather) can often order the IDs by volume and recover dates. \
The volumes below are what such an adversary would match against.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: AnonymizationConfig,
    pub inclusion: Vec<InclusionEstimate>,
    pub uniqueness: UniquenessHistogram,
    pub linkage: Option<LinkageResult>,
    /// Same input and key with card and day sampling switched off.
    pub linkage_without_sampling: Option<LinkageResult>,
    pub daily_volumes: Vec<DailyVolume>,
    pub date_reversal_note: String,
}

pub const REPORT_JSON: &str = "audit_report.json";
pub const REPORT_CSV: &str = "audit_report.csv";

impl AuditReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Flat `section,metric,value` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(String, String, String)> = Vec::new();
        let mut push = |section: &str, metric: String, value: String| {
            rows.push((section.to_string(), metric, value));
        };
        for e in &self.inclusion {
            let s = format!("inclusion_occ{}", e.weekday_occurrences);
            push(&s, "trials".into(), e.trials.to_string());
            push(&s, "analytic_per_day".into(), e.analytic_per_day.to_string());
            push(&s, "empirical_per_day".into(), e.empirical_per_day.to_string());
            push(&s, "per_day_se".into(), e.per_day_standard_error.to_string());
            push(&s, "analytic_streak".into(), e.analytic_streak.to_string());
            push(&s, "empirical_streak".into(), e.empirical_streak.to_string());
            push(&s, "streak_se".into(), e.streak_standard_error.to_string());
        }
        push("uniqueness", "card_days".into(), self.uniqueness.card_days.to_string());
        for b in &self.uniqueness.buckets {
            push("uniqueness", format!("k={}", b.label), b.card_days.to_string());
        }
        for (section, l) in [
            ("linkage", &self.linkage),
            ("linkage_without_sampling", &self.linkage_without_sampling),
        ] {
            if let Some(l) = l {
                push(section, "day_pairs".into(), l.day_pairs.to_string());
                push(section, "proposed_links".into(), l.proposed_links.to_string());
                push(section, "correct_links".into(), l.correct_links.to_string());
                push(section, "accuracy".into(), l.accuracy.to_string());
                push(section, "chance_baseline".into(), l.chance_baseline.to_string());
                push(section, "partner_present".into(), l.partner_present.to_string());
            }
        }
        for v in &self.daily_volumes {
            push(
                "daily_volume",
                format!("{}-{:02}/{}/dow{}", v.year, v.month, v.random_week_id, v.day_of_week_id),
                v.rows.to_string(),
            );
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["section", "metric", "value"]).expect("in-memory write");
        for (a, b, c) in rows {
            w.write_record([a, b, c]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Writes the JSON and CSV forms into `dir`; returns their paths.
    pub fn write(&self, dir: &Path, overwrite: bool) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(REPORT_JSON);
        let csv = dir.join(REPORT_CSV);
        write_atomic(&json, self.to_json().as_bytes(), overwrite)?;
        write_atomic(&csv, self.to_csv().as_bytes(), overwrite)?;
        Ok((json, csv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Money;
    use crate::pipeline::{anonymize, AnonymizeOptions};
    use crate::synth::{generate_month, PopulationSpec};
    use std::sync::Arc;

    fn rec(card: u8, seq: u32, rwid: u32, on: i64, t: &str) -> AnonymizedRecord {
        AnonymizedRecord {
            card_id: DayPseudonym::from_bytes([card; 16]),
            trip_sequence_id: seq,
            agency_id: 4,
            agency_name: Arc::from("BART"),
            route_id: None,
            route_name: None,
            fare_amount: Money::from_cents(405),
            payment_product_id: 1,
            payment_product_name: Arc::from("cash"),
            tag_on_time: NaiveTime::parse_from_str(t, "%H:%M:%S").unwrap(),
            tag_on_location_id: on,
            tag_on_location_name: Arc::from("x"),
            tag_off_time: None,
            tag_off_location_id: None,
            tag_off_location_name: None,
            year: 2013,
            month: 10,
            day_of_week_id: 3,
            random_week_id: rwid,
        }
    }

    #[test]
    fn too_few_trials_rejected() {
        let c = AnonymizationConfig::default();
        assert!(monte_carlo_inclusion(&c, 4, 999, &Execution::Sequential).is_err());
        assert!(monte_carlo_inclusion(&c, 6, 1000, &Execution::Sequential).is_err());
    }

    #[test]
    fn monte_carlo_close_to_analytic() {
        let c = AnonymizationConfig::default();
        for occ in [4, 5] {
            let e = monte_carlo_inclusion(&c, occ, 20_000, &Execution::Sequential).unwrap();
            assert!(e.per_day_z() < 4.0, "{e:?}");
            assert!(e.streak_z() < 4.0, "{e:?}");
            assert_eq!(e.tracked_dates[0].weekday(), Weekday::Mon);
        }
        let e = monte_carlo_inclusion(&c, 4, 1000, &Execution::Sequential).unwrap();
        assert_eq!((e.reference_year, e.reference_month), (2015, 2));
        assert_eq!(e.analytic_streak, 0.375f64.powi(5));
    }

    #[test]
    fn sampling_off_always_included() {
        let c = AnonymizationConfig::default().without_sampling();
        let e = monte_carlo_inclusion(&c, 4, 1000, &Execution::Sequential).unwrap();
        assert_eq!(e.empirical_per_day, 1.0);
        assert_eq!(e.empirical_streak, 1.0);
        assert_eq!(e.analytic_streak, 1.0);
    }

    #[test]
    fn population_matches_rate_exactly_when_possible() {
        assert_eq!(sampling_population(0.5), 10);
        assert_eq!(sampling_population(0.25), 12);
        let n = sampling_population(1.0 / 3.0);
        assert_eq!(crate::sampling::retained_card_count(n, 1.0 / 3.0) * 3, n);
    }

    #[test]
    fn shared_single_trip_day_counts_twice_at_two() {
        let records = vec![
            rec(1, 1, 1, 10, "07:30:00"),
            rec(2, 1, 1, 10, "07:30:00"),
            rec(3, 1, 1, 11, "07:30:00"),
            // Same trajectory on another day is not shared.
            rec(4, 1, 2, 11, "07:30:00"),
        ];
        let h = trajectory_uniqueness(&records);
        assert_eq!(h.exactly(2), 2);
        assert_eq!(h.exactly(1), 2);
        assert_eq!(h.card_days, 4);
        assert_eq!(h.buckets.iter().map(|b| b.card_days).sum::<u64>(), 4);
    }

    #[test]
    fn trajectory_order_follows_sequence_not_row_order() {
        let a = vec![rec(1, 2, 1, 20, "17:00:00"), rec(1, 1, 1, 10, "07:00:00")];
        let b = vec![rec(2, 1, 1, 10, "07:00:00"), rec(2, 2, 1, 20, "17:00:00")];
        let all: Vec<_> = a.into_iter().chain(b).collect();
        assert_eq!(trajectory_uniqueness(&all).exactly(2), 2);
    }

    fn synthetic(cards: u64, config: &AnonymizationConfig) -> (Vec<AnonymizedRecord>, TruthResolver) {
        let spec = PopulationSpec {
            card_count: cards,
            seed: 3,
            ..Default::default()
        };
        let month = generate_month(&spec, 2013, 10).unwrap();
        let key = PseudonymKey::new(b"audit test key".to_vec()).unwrap();
        let release = anonymize(&month.transactions, config, &key, &AnonymizeOptions::default()).unwrap();
        let resolver = TruthResolver::new(&month.truth, &key, &release.manifest, &Execution::Sequential).unwrap();
        let records = release.months.into_iter().flat_map(|m| m.records).collect();
        (records, resolver)
    }

    #[test]
    fn sampling_lowers_linkage_accuracy() {
        let config = AnonymizationConfig {
            run_seed: 9,
            ..Default::default()
        };
        let (on, r_on) = synthetic(1500, &config);
        let (off, r_off) = synthetic(1500, &config.without_sampling());
        let a_on = linkage_attack(&on, &r_on, &Execution::Sequential).unwrap();
        let a_off = linkage_attack(&off, &r_off, &Execution::Sequential).unwrap();
        assert!(a_on.accuracy < a_off.accuracy, "{a_on:?} {a_off:?}");
        assert!(a_off.accuracy > a_off.chance_baseline);
        assert_eq!(a_off.day_pairs, 30);
    }

    #[test]
    fn resolver_rejects_foreign_pseudonyms() {
        let config = AnonymizationConfig::default();
        let (mut records, resolver) = synthetic(50, &config);
        records[0].card_id = DayPseudonym::from_bytes([0xAB; 16]);
        assert!(matches!(
            linkage_attack(&records, &resolver, &Execution::Sequential),
            Err(Error::GroundTruthMismatch(_))
        ));
    }

    #[test]
    fn volumes_sum_to_rows() {
        let config = AnonymizationConfig::default();
        let (records, _) = synthetic(200, &config);
        let v = daily_volumes(&records);
        assert_eq!(v.iter().map(|d| d.rows).sum::<u64>(), records.len() as u64);
        assert_eq!(v.len(), 21);
    }

    #[test]
    fn csv_report_has_header_and_buckets() {
        let report = AuditReport {
            config: AnonymizationConfig::default(),
            inclusion: Vec::new(),
            uniqueness: trajectory_uniqueness(&[rec(1, 1, 1, 1, "00:00:00")]),
            linkage: None,
            linkage_without_sampling: None,
            daily_volumes: Vec::new(),
            date_reversal_note: DATE_REVERSAL_NOTE.into(),
        };
        let csv = report.to_csv();
        assert!(csv.starts_with("section,metric,value\n"));
        assert!(csv.contains("uniqueness,k=1,1\n"));
        let back: AuditReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
