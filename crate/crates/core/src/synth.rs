//! Synthetic fare transactions with retained ground truth.
//!
//! Commuter cards repeat a home-to-work trip every weekday morning and the
//! reverse every evening. A share of them ride between stations that no
//! other card uses, so their daily trajectory is unique in the population.
//! Casual cards draw independent trips. Every card-day has its own random
//! stream, which makes generation card-parallel and order independent.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Weekday};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{CardSerial, Money, RawTransaction};
use crate::sampling::first_of_month;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FareKind {
    /// Tag-on only.
    Flat,
    /// Tag-on and tag-off.
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSpec {
    pub id: i64,
    pub name: String,
    /// Used only by unique-trajectory commuters.
    #[serde(default)]
    pub exclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSpec {
    pub id: i64,
    pub name: String,
    pub fare_cents: i64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgencySpec {
    pub id: i64,
    pub name: String,
    pub weight: f64,
    pub fare_kind: FareKind,
    pub locations: Vec<LocationSpec>,
    /// Empty when the agency does not record routes.
    #[serde(default)]
    pub routes: Vec<RouteSpec>,
    pub products: Vec<ProductSpec>,
}

/// Population and behaviour parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub card_count: u64,
    pub commuter_fraction: f64,
    /// Share of commuters whose weekday trajectory no other card shares.
    pub unique_commuter_fraction: f64,
    /// Mean trips per commuter per weekday: the habitual pair plus extras.
    pub trips_per_commuter_workday: f64,
    /// Mean trips per casual card per day, before the day multiplier.
    pub casual_trip_rate: f64,
    pub weekday_multiplier: f64,
    pub weekend_multiplier: f64,
    /// Habitual trips start uniformly within ± this many minutes of the base time.
    pub commute_jitter_minutes: u32,
    /// Number of shared home/work corridors for ordinary commuters.
    pub corridor_count: u32,
    pub agencies: Vec<AgencySpec>,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            card_count: 10_000,
            commuter_fraction: 0.6,
            unique_commuter_fraction: 0.02,
            trips_per_commuter_workday: 2.2,
            casual_trip_rate: 1.5,
            weekday_multiplier: 1.0,
            weekend_multiplier: 0.6,
            commute_jitter_minutes: 5,
            corridor_count: 40,
            agencies: default_agencies(),
            seed: 0,
        }
    }
}

impl PopulationSpec {
    /// Multiplies the card count, keeping every other parameter.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {factor}")));
        }
        Ok(PopulationSpec {
            card_count: (self.card_count as f64 * factor).round() as u64,
            ..self.clone()
        })
    }

    pub fn commuter_count(&self) -> u64 {
        (self.card_count as f64 * self.commuter_fraction).round() as u64
    }

    pub fn unique_commuter_count(&self) -> u64 {
        (self.commuter_count() as f64 * self.unique_commuter_fraction).round() as u64
    }

    /// Expected transactions on one service day of the given weekday.
    pub fn expected_daily_volume(&self, weekday: Weekday) -> f64 {
        let commuters = self.commuter_count() as f64;
        let casual = (self.card_count - self.commuter_count()) as f64;
        if is_workday(weekday) {
            commuters * self.trips_per_commuter_workday
                + casual * self.casual_trip_rate * self.weekday_multiplier
        } else {
            (commuters + casual) * self.casual_trip_rate * self.weekend_multiplier
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("commuter_fraction", self.commuter_fraction),
            ("unique_commuter_fraction", self.unique_commuter_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.trips_per_commuter_workday >= 2.0 && self.trips_per_commuter_workday.is_finite()) {
            return bad("trips_per_commuter_workday must be at least 2".into());
        }
        for (name, v) in [
            ("casual_trip_rate", self.casual_trip_rate),
            ("weekday_multiplier", self.weekday_multiplier),
            ("weekend_multiplier", self.weekend_multiplier),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.commute_jitter_minutes > 25 {
            return bad("commute_jitter_minutes must be at most 25".into());
        }
        if self.corridor_count == 0 {
            return bad("corridor_count must be at least 1".into());
        }
        if self.agencies.is_empty() {
            return bad("agency vocabulary is empty".into());
        }
        for a in &self.agencies {
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return bad(format!("agency {} weight must be positive", a.name));
            }
            let open = a.locations.iter().filter(|l| !l.exclusive).count();
            let needed = if a.fare_kind == FareKind::Distance { 2 } else { 1 };
            if open < needed {
                return bad(format!("agency {} needs {needed} non-exclusive locations", a.name));
            }
            if a.products.is_empty() {
                return bad(format!("agency {} has no payment products", a.name));
            }
            if a.products.iter().any(|p| !(p.weight > 0.0 && p.weight.is_finite()) || p.fare_cents < 0) {
                return bad(format!("agency {} has a product with bad weight or fare", a.name));
            }
        }
        if self.unique_commuter_count() > 0 && exclusive_pairs(&self.agencies).is_empty() {
            return bad("unique commuters need a distance agency with two exclusive locations".into());
        }
        Ok(())
    }
}

fn is_workday(day: Weekday) -> bool {
    !matches!(day, Weekday::Sat | Weekday::Sun)
}

/// What a card does, as recorded in the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Casual,
    Commuter {
        agency_id: i64,
        home_location_id: i64,
        work_location_id: i64,
        #[serde(with = "crate::model::hhmm")]
        morning: NaiveTime,
        #[serde(with = "crate::model::hhmm")]
        evening: NaiveTime,
        /// Whether no other card shares this commuter's weekday trajectory.
        unique: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardTruth {
    pub serial: String,
    pub profile: Profile,
    /// Data-row numbers (from 1) of this card's transactions in the stream.
    pub rows: Vec<u64>,
}

pub const GROUND_TRUTH_SCHEMA: &str = "fareanon-ground-truth/1";

/// Everything needed to reproduce and interpret a synthetic month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema: String,
    pub year: i32,
    pub month: u32,
    pub spec: PopulationSpec,
    pub total_rows: u64,
    pub cards: Vec<CardTruth>,
}

impl GroundTruth {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let truth: GroundTruth = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::json(path, e))?;
        if truth.schema != GROUND_TRUTH_SCHEMA {
            return Err(Error::Format(format!("{}: unsupported ground truth schema", path.display())));
        }
        Ok(truth)
    }

    pub fn write(&self, path: &Path, overwrite: bool) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::json(path, e))?;
        crate::pipeline::io::write_atomic(path, &json, overwrite)
    }

    /// Every calendar date of the generated month.
    pub fn dates(&self) -> Vec<NaiveDate> {
        month_dates(self.year, self.month).unwrap_or_default()
    }

    pub fn serials(&self) -> impl Iterator<Item = &str> {
        self.cards.iter().map(|c| c.serial.as_str())
    }
}

/// In-memory synthetic month.
#[derive(Debug, Clone)]
pub struct SyntheticMonth {
    pub transactions: Vec<RawTransaction>,
    pub truth: GroundTruth,
}

struct Corridor {
    agency: usize,
    home: usize,
    work: usize,
    morning: NaiveTime,
    evening: NaiveTime,
}

struct CardPlan {
    serial: CardSerial,
    profile: Profile,
    /// Index into the spec's agency list, for commuters.
    agency: usize,
    home: usize,
    work: usize,
    product: usize,
    route: Option<usize>,
}

/// Interned vocabulary shared by every generated row.
struct Vocab {
    agency_names: Vec<Arc<str>>,
    location_names: Vec<Vec<Arc<str>>>,
    route_names: Vec<Vec<Arc<str>>>,
    product_names: Vec<Vec<Arc<str>>>,
    /// Indices of non-exclusive locations per agency.
    open_locations: Vec<Vec<usize>>,
    agency_weights: Vec<f64>,
}

impl Vocab {
    fn new(agencies: &[AgencySpec]) -> Self {
        Vocab {
            agency_names: agencies.iter().map(|a| Arc::from(a.name.as_str())).collect(),
            location_names: agencies
                .iter()
                .map(|a| a.locations.iter().map(|l| Arc::from(l.name.as_str())).collect())
                .collect(),
            route_names: agencies
                .iter()
                .map(|a| a.routes.iter().map(|r| Arc::from(r.name.as_str())).collect())
                .collect(),
            product_names: agencies
                .iter()
                .map(|a| a.products.iter().map(|p| Arc::from(p.name.as_str())).collect())
                .collect(),
            open_locations: agencies
                .iter()
                .map(|a| (0..a.locations.len()).filter(|&i| !a.locations[i].exclusive).collect())
                .collect(),
            agency_weights: agencies.iter().map(|a| a.weight).collect(),
        }
    }
}

fn exclusive_pairs(agencies: &[AgencySpec]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (ai, a) in agencies.iter().enumerate() {
        if a.fare_kind != FareKind::Distance {
            continue;
        }
        let ex: Vec<usize> = (0..a.locations.len()).filter(|&i| a.locations[i].exclusive).collect();
        for &h in &ex {
            for &w in &ex {
                if h != w {
                    out.push((ai, h, w));
                }
            }
        }
    }
    out
}

fn month_dates(year: i32, month: u32) -> Result<Vec<NaiveDate>> {
    let first = first_of_month(year, month)?;
    Ok(first.iter_days().take_while(|d| d.month() == month).collect())
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().sum();
    let mut x = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if x < w {
            return i;
        }
        x -= w;
        last = i;
    }
    last
}

fn hm(h: u32, m: u32) -> NaiveTime {
    NaiveTime::from_hms_opt(h, m, 0).expect("valid time")
}

fn plan_population(spec: &PopulationSpec, vocab: &Vocab) -> Vec<CardPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);

    let corridors: Vec<Corridor> = (0..spec.corridor_count)
        .map(|_| {
            let agency = weighted_index(&mut rng, vocab.agency_weights.iter().copied());
            let open = &vocab.open_locations[agency];
            let picked: Vec<usize> = open.choose_multiple(&mut rng, 2.min(open.len())).copied().collect();
            let home = picked[0];
            let work = *picked.get(1).unwrap_or(&home);
            let morning = hm(6 + rng.random_range(0..4), 5 + 10 * rng.random_range(0..6));
            let evening = hm(16 + rng.random_range(0..4), 5 + 10 * rng.random_range(0..6));
            Corridor {
                agency,
                home,
                work,
                morning,
                evening,
            }
        })
        .collect();

    let n = spec.card_count as usize;
    let commuters = spec.commuter_count() as usize;
    let unique = spec.unique_commuter_count() as usize;
    let mut kinds: Vec<u8> = (0..n)
        .map(|i| match i {
            i if i < unique => 2,
            i if i < commuters => 1,
            _ => 0,
        })
        .collect();
    kinds.shuffle(&mut rng);

    let pairs = exclusive_pairs(&spec.agencies);
    let mut unique_seen = 0usize;
    (0..n)
        .map(|i| {
            let serial = CardSerial::new(format!("SN{:012}", i + 1));
            let (agency, home, work, morning, evening, profile_unique) = match kinds[i] {
                0 => (0, 0, 0, hm(0, 0), hm(0, 0), None),
                1 => {
                    let c = &corridors[rng.random_range(0..corridors.len())];
                    (c.agency, c.home, c.work, c.morning, c.evening, Some(false))
                }
                _ => {
                    let (a, h, w) = pairs[unique_seen % pairs.len()];
                    let offset = (unique_seen / pairs.len()) as u32;
                    unique_seen += 1;
                    // Commuters sharing a station pair start an hour apart, so
                    // their floored times can never coincide.
                    (a, h, w, hm(5 + offset % 5, 35), hm(16 + offset % 5, 35), Some(true))
                }
            };
            let (product, route, profile) = match profile_unique {
                None => (0, None, Profile::Casual),
                Some(unique) => {
                    let a = &spec.agencies[agency];
                    let product = weighted_index(&mut rng, a.products.iter().map(|p| p.weight));
                    let route = (!a.routes.is_empty()).then(|| rng.random_range(0..a.routes.len()));
                    let profile = Profile::Commuter {
                        agency_id: a.id,
                        home_location_id: a.locations[home].id,
                        work_location_id: a.locations[work].id,
                        morning,
                        evening,
                        unique,
                    };
                    (product, route, profile)
                }
            };
            CardPlan {
                serial,
                profile,
                agency,
                home,
                work,
                product,
                route,
            }
        })
        .collect()
}

struct TripParts {
    agency: usize,
    origin: usize,
    destination: usize,
    product: usize,
    route: Option<usize>,
    tag_on_at: NaiveDateTime,
    minutes: i64,
}

fn build_trip(spec: &PopulationSpec, vocab: &Vocab, serial: &CardSerial, t: TripParts) -> RawTransaction {
    let a = &spec.agencies[t.agency];
    let product = &a.products[t.product];
    let distance = a.fare_kind == FareKind::Distance;
    RawTransaction {
        card_serial: serial.clone(),
        tag_on_at: t.tag_on_at,
        tag_off_at: distance.then(|| t.tag_on_at + chrono::Duration::minutes(t.minutes)),
        agency_id: a.id,
        agency_name: vocab.agency_names[t.agency].clone(),
        route_id: t.route.map(|r| a.routes[r].id),
        route_name: t.route.map(|r| vocab.route_names[t.agency][r].clone()),
        tag_on_location_id: a.locations[t.origin].id,
        tag_on_location_name: vocab.location_names[t.agency][t.origin].clone(),
        tag_off_location_id: distance.then(|| a.locations[t.destination].id),
        tag_off_location_name: distance.then(|| vocab.location_names[t.agency][t.destination].clone()),
        fare_amount: Money::from_cents(product.fare_cents),
        payment_product_id: product.id,
        payment_product_name: vocab.product_names[t.agency][t.product].clone(),
    }
}

fn casual_trip(
    spec: &PopulationSpec,
    vocab: &Vocab,
    card: &CardPlan,
    day_start: NaiveDateTime,
    rng: &mut ChaCha8Rng,
) -> RawTransaction {
    let agency = weighted_index(rng, vocab.agency_weights.iter().copied());
    let a = &spec.agencies[agency];
    let open = &vocab.open_locations[agency];
    let picked: Vec<usize> = open.choose_multiple(rng, 2.min(open.len())).copied().collect();
    // 05:00 until 02:30 the next morning, inside one circadian day.
    let offset = rng.random_range(5 * 3600..26 * 3600 + 1800);
    build_trip(
        spec,
        vocab,
        &card.serial,
        TripParts {
            agency,
            origin: picked[0],
            destination: *picked.get(1).unwrap_or(&picked[0]),
            product: weighted_index(rng, a.products.iter().map(|p| p.weight)),
            route: (!a.routes.is_empty()).then(|| rng.random_range(0..a.routes.len())),
            tag_on_at: day_start + chrono::Duration::seconds(offset),
            minutes: rng.random_range(8..60),
        },
    )
}

fn card_day(
    spec: &PopulationSpec,
    vocab: &Vocab,
    card: &CardPlan,
    card_index: u64,
    day_index: u64,
    date: NaiveDate,
) -> Vec<RawTransaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(card_index);
    rng.set_word_pos(u128::from(day_index) << 40);
    let day_start = date.and_time(NaiveTime::MIN);
    let workday = is_workday(date.weekday());
    let mut trips = Vec::new();
    let casual_mean = if workday {
        spec.casual_trip_rate * spec.weekday_multiplier
    } else {
        spec.casual_trip_rate * spec.weekend_multiplier
    };
    let draw = |mean: f64, rng: &mut ChaCha8Rng| -> u64 {
        if mean > 0.0 {
            Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
        } else {
            0
        }
    };
    match (&card.profile, workday) {
        (Profile::Commuter { morning, evening, .. }, true) => {
            let jitter = i64::from(spec.commute_jitter_minutes) * 60;
            for (base, from, to) in [(*morning, card.home, card.work), (*evening, card.work, card.home)] {
                let shift = if jitter > 0 { rng.random_range(-jitter..=jitter) } else { 0 };
                trips.push(build_trip(
                    spec,
                    vocab,
                    &card.serial,
                    TripParts {
                        agency: card.agency,
                        origin: from,
                        destination: to,
                        product: card.product,
                        route: card.route,
                        tag_on_at: day_start
                            + (base - NaiveTime::MIN)
                            + chrono::Duration::seconds(shift),
                        minutes: 35,
                    },
                ));
            }
            let extra = draw(spec.trips_per_commuter_workday - 2.0, &mut rng);
            for _ in 0..extra {
                trips.push(casual_trip(spec, vocab, card, day_start, &mut rng));
            }
        }
        _ => {
            for _ in 0..draw(casual_mean, &mut rng) {
                trips.push(casual_trip(spec, vocab, card, day_start, &mut rng));
            }
        }
    }
    trips
}

/// Generates one month, handing each service day's transactions (sorted by
/// tag-on time) to `sink` in date order. Returns the ground truth.
pub fn generate_month_with(
    spec: &PopulationSpec,
    year: i32,
    month: u32,
    exec: &Execution,
    mut sink: impl FnMut(&[RawTransaction]) -> Result<()>,
) -> Result<GroundTruth> {
    spec.validate()?;
    let vocab = Vocab::new(&spec.agencies);
    let cards = plan_population(spec, &vocab);
    let index: HashMap<CardSerial, usize> =
        cards.iter().enumerate().map(|(i, c)| (c.serial.clone(), i)).collect();
    let mut rows: Vec<Vec<u64>> = vec![Vec::new(); cards.len()];
    let mut next_row = 1u64;

    const CHUNK: usize = 2048;
    let chunks: Vec<std::ops::Range<usize>> = (0..cards.len())
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(cards.len()))
        .collect();
    for (day_index, date) in (0u64..).zip(month_dates(year, month)?) {
        let parts: Vec<Vec<RawTransaction>> = exec.map(chunks.clone(), |range| {
            range
                .flat_map(|i| card_day(spec, &vocab, &cards[i], i as u64, day_index, date))
                .collect()
        });
        let mut day: Vec<RawTransaction> = parts.into_iter().flatten().collect();
        // Stable: ties keep card order, then each card's generation order.
        day.sort_by_key(|r| r.tag_on_at);
        for r in &day {
            rows[index[&r.card_serial]].push(next_row);
            next_row += 1;
        }
        sink(&day)?;
    }

    Ok(GroundTruth {
        schema: GROUND_TRUTH_SCHEMA.to_string(),
        year,
        month,
        spec: spec.clone(),
        total_rows: next_row - 1,
        cards: cards
            .into_iter()
            .zip(rows)
            .map(|(c, rows)| CardTruth {
                serial: c.serial.as_str().to_owned(),
                profile: c.profile,
                rows,
            })
            .collect(),
    })
}

pub fn generate_month(spec: &PopulationSpec, year: i32, month: u32) -> Result<SyntheticMonth> {
    generate_month_exec(spec, year, month, &Execution::default())
}

pub fn generate_month_exec(
    spec: &PopulationSpec,
    year: i32,
    month: u32,
    exec: &Execution,
) -> Result<SyntheticMonth> {
    let mut transactions = Vec::new();
    let truth = generate_month_with(spec, year, month, exec, |day| {
        transactions.extend_from_slice(day);
        Ok(())
    })?;
    Ok(SyntheticMonth {
        transactions,
        truth,
    })
}

/// Streams a synthetic month straight to a raw CSV. Returns the ground truth
/// and the file's SHA-256.
pub fn write_month_csv(
    spec: &PopulationSpec,
    year: i32,
    month: u32,
    exec: &Execution,
    path: &Path,
    overwrite: bool,
) -> Result<(GroundTruth, String)> {
    let mut truth = None;
    let digest = crate::pipeline::io::write_raw_stream(path, overwrite, |push| {
        truth = Some(generate_month_with(spec, year, month, exec, |day| {
            day.iter().try_for_each(&mut *push)
        })?);
        Ok(())
    })?;
    Ok((truth.expect("generation ran"), digest))
}

fn loc(id: i64, name: &str, exclusive: bool) -> LocationSpec {
    LocationSpec {
        id,
        name: name.to_string(),
        exclusive,
    }
}

fn locations(names: &[&str], exclusive_from: usize) -> Vec<LocationSpec> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| loc(i as i64 + 1, n, i >= exclusive_from))
        .collect()
}

fn product(id: i64, name: &str, fare_cents: i64, weight: f64) -> ProductSpec {
    ProductSpec {
        id,
        name: name.to_string(),
        fare_cents,
        weight,
    }
}

fn route(id: i64, name: &str) -> RouteSpec {
    RouteSpec {
        id,
        name: name.to_string(),
    }
}

/// A small Bay Area flavoured vocabulary.
pub fn default_agencies() -> Vec<AgencySpec> {
    vec![
        AgencySpec {
            id: 1,
            name: "AC Transit".into(),
            weight: 0.25,
            fare_kind: FareKind::Flat,
            locations: locations(
                &[
                    "Transbay Terminal",
                    "Broadway & 14th St",
                    "Telegraph & 40th St",
                    "MacArthur Blvd & High St",
                    "International Blvd & 23rd Ave",
                    "San Pablo & University",
                    "Shattuck & Center St",
                    "Foothill Blvd & Seminary",
                    "E 14th St & 98th Ave",
                    "Grand Ave & Lakeshore",
                    "College & Claremont",
                    "Fruitvale & MacArthur",
                ],
                usize::MAX,
            ),
            routes: vec![
                route(1, "1"),
                route(51, "51A"),
                route(72, "72R"),
                route(300, "F"),
                route(301, "O"),
                route(302, "NL"),
            ],
            products: vec![
                product(119, "AC Transit Adult local pass", 0, 0.4),
                product(120, "AC Transit Adult cash value", 235, 0.6),
            ],
        },
        AgencySpec {
            id: 3,
            name: "SF Muni".into(),
            weight: 0.2,
            fare_kind: FareKind::Flat,
            locations: locations(
                &[
                    "Market & 4th St",
                    "Van Ness & Mission",
                    "Geary & Masonic",
                    "Church & Duboce",
                    "Stockton & Clay",
                    "3rd St & 20th St",
                    "Mission & 24th St",
                    "Irving & 9th Ave",
                    "Judah & La Playa",
                    "West Portal",
                    "Fillmore & Haight",
                    "Castro Station",
                    "Balboa Park Muni",
                    "Chinatown",
                    "Fisherman's Wharf",
                ],
                usize::MAX,
            ),
            routes: Vec::new(),
            products: vec![
                product(90, "Muni Adult monthly pass", 0, 0.5),
                product(91, "Muni Adult cash value", 225, 0.5),
            ],
        },
        AgencySpec {
            id: 4,
            name: "BART".into(),
            weight: 0.35,
            fare_kind: FareKind::Distance,
            locations: locations(
                &[
                    "Embarcadero",
                    "Montgomery St",
                    "Powell St",
                    "Civic Center",
                    "16th St Mission",
                    "24th St Mission",
                    "Glen Park",
                    "Balboa Park",
                    "West Oakland",
                    "12th St Oakland City Center",
                    "19th St Oakland",
                    "MacArthur",
                    "Downtown Berkeley",
                    "Lake Merritt",
                    "Fruitvale",
                    "Coliseum",
                    "San Leandro",
                    "Daly City",
                    "Colma",
                    "South San Francisco",
                    "San Bruno",
                    "Millbrae",
                    "SFO Airport",
                    "Ashby",
                    "North Berkeley",
                    "El Cerrito Plaza",
                    "Richmond",
                    "Bay Fair",
                    "Hayward",
                    "Fremont",
                ],
                18,
            ),
            routes: Vec::new(),
            products: vec![
                product(1, "BART cash value", 405, 0.7),
                product(2, "BART High Value Discount", 350, 0.3),
            ],
        },
        AgencySpec {
            id: 6,
            name: "Caltrain".into(),
            weight: 0.15,
            fare_kind: FareKind::Distance,
            locations: locations(
                &[
                    "San Francisco (Caltrain)",
                    "22nd Street",
                    "Bayshore",
                    "South San Francisco (Caltrain)",
                    "San Bruno (Caltrain)",
                    "Millbrae (Caltrain)",
                    "Burlingame",
                    "San Mateo",
                    "Hillsdale",
                    "Redwood City",
                    "Menlo Park",
                    "Palo Alto",
                    "Hayward Park",
                    "Belmont",
                    "San Carlos",
                    "California Ave",
                    "San Antonio",
                    "Mountain View",
                    "Sunnyvale",
                    "San Jose Diridon",
                ],
                12,
            ),
            routes: Vec::new(),
            products: vec![
                product(50, "Caltrain Monthly Pass", 0, 0.5),
                product(51, "Caltrain cash value", 625, 0.5),
            ],
        },
        AgencySpec {
            id: 8,
            name: "Golden Gate Ferry".into(),
            weight: 0.05,
            fare_kind: FareKind::Flat,
            locations: locations(&["Larkspur Landing", "Sausalito", "San Francisco Ferry Building"], usize::MAX),
            routes: vec![route(1, "Larkspur"), route(2, "Sausalito")],
            products: vec![product(70, "Golden Gate Ferry Adult cash value", 700, 1.0)],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_raw;
    use crate::temporal::{circadian_date, truncate_time};

    fn small(cards: u64) -> PopulationSpec {
        PopulationSpec {
            card_count: cards,
            seed: 17,
            ..Default::default()
        }
    }

    #[test]
    fn zero_cards_give_empty_stream() {
        let m = generate_month(&small(0), 2013, 10).unwrap();
        assert!(m.transactions.is_empty());
        assert_eq!(m.truth.total_rows, 0);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_month(&small(300), 2013, 10).unwrap();
        let b = generate_month(&small(300), 2013, 10).unwrap();
        assert_eq!(a.transactions, b.transactions);
        assert_eq!(a.truth, b.truth);
        let other = PopulationSpec { seed: 18, ..small(300) };
        let c = generate_month(&other, 2013, 10).unwrap();
        assert_ne!(a.transactions, c.transactions);
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let spec = small(5000);
        let seq = generate_month(&spec, 2013, 10).unwrap();
        let par = generate_month_exec(&spec, 2013, 10, &Execution::with_threads(Some(4)).unwrap()).unwrap();
        assert_eq!(seq.transactions, par.transactions);
    }

    #[test]
    fn records_valid_sorted_and_inside_month() {
        let m = generate_month(&small(500), 2013, 10).unwrap();
        let boundary = hm(3, 0);
        for w in m.transactions.windows(2) {
            assert!(w[0].tag_on_at <= w[1].tag_on_at);
        }
        for r in &m.transactions {
            assert!(validate_raw(r).is_empty(), "{r:?}");
            let d = circadian_date(r.tag_on_at, boundary);
            assert_eq!((d.year(), d.month()), (2013, 10));
            assert_eq!(r.tag_off_at.is_some(), r.agency_name.as_ref() == "BART" || r.agency_name.as_ref() == "Caltrain");
        }
    }

    #[test]
    fn truth_indexes_every_row_once() {
        let m = generate_month(&small(400), 2013, 10).unwrap();
        let mut seen = vec![false; m.transactions.len()];
        for card in &m.truth.cards {
            for &row in &card.rows {
                let r = &m.transactions[(row - 1) as usize];
                assert_eq!(r.card_serial.as_str(), card.serial);
                assert!(!seen[(row - 1) as usize]);
                seen[(row - 1) as usize] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
        assert_eq!(m.truth.total_rows as usize, m.transactions.len());
    }

    #[test]
    fn zero_jitter_commuter_repeats_exactly() {
        let spec = PopulationSpec {
            commute_jitter_minutes: 0,
            trips_per_commuter_workday: 2.0,
            ..small(200)
        };
        let m = generate_month(&spec, 2013, 10).unwrap();
        let card = m
            .truth
            .cards
            .iter()
            .find(|c| matches!(c.profile, Profile::Commuter { .. }))
            .unwrap();
        let mut per_day: HashMap<NaiveDate, Vec<(i64, Option<i64>, NaiveTime)>> = HashMap::new();
        for &row in &card.rows {
            let r = &m.transactions[(row - 1) as usize];
            if !is_workday(r.tag_on_at.weekday()) {
                continue;
            }
            per_day.entry(r.tag_on_at.date()).or_default().push((
                r.tag_on_location_id,
                r.tag_off_location_id,
                truncate_time(r.tag_on_at.time(), 10),
            ));
        }
        assert_eq!(per_day.len(), 23, "October 2013 has 23 weekdays");
        let first = per_day.values().next().unwrap().clone();
        assert_eq!(first.len(), 2);
        assert!(per_day.values().all(|v| *v == first));
    }

    #[test]
    fn unique_commuters_use_exclusive_stations_only_they_use() {
        let m = generate_month(&small(2000), 2013, 10).unwrap();
        let unique: Vec<&CardTruth> = m
            .truth
            .cards
            .iter()
            .filter(|c| matches!(c.profile, Profile::Commuter { unique: true, .. }))
            .collect();
        assert_eq!(unique.len() as u64, small(2000).unique_commuter_count());
        let pairs: std::collections::HashSet<(i64, i64, i64)> = unique
            .iter()
            .map(|c| match c.profile {
                Profile::Commuter {
                    agency_id,
                    home_location_id,
                    work_location_id,
                    ..
                } => (agency_id, home_location_id, work_location_id),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(pairs.len(), unique.len());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(10);
        s.commuter_fraction = 1.5;
        assert!(s.validate().is_err());
        let mut s = small(10);
        s.agencies.clear();
        assert!(s.validate().is_err());
        let mut s = small(10);
        s.agencies[0].weight = 0.0;
        assert!(s.validate().is_err());
        let mut s = small(10);
        s.trips_per_commuter_workday = 1.0;
        assert!(s.validate().is_err());
        assert!(small(10).scaled(0.0).is_err());
        assert_eq!(small(10).scaled(14.2).unwrap().card_count, 142);
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let s = PopulationSpec::default();
        let back: PopulationSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
