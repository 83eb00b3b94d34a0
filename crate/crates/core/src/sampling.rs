//! Per-month weekday sampling, per-day card sampling, and the analytic
//! inclusion probabilities those two steps imply.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::{index, SliceRandom};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::WeekdayKeep;
use crate::pseudonym::{derive_seed, step_rng, SeedLabel};
use crate::temporal::CircadianDate;

/// Weekdays in output-numbering order (Sunday first).
pub const WEEKDAYS: [Weekday; 7] = [
    Weekday::Sun,
    Weekday::Mon,
    Weekday::Tue,
    Weekday::Wed,
    Weekday::Thu,
    Weekday::Fri,
    Weekday::Sat,
];

pub(crate) fn first_of_month(year: i32, month: u32) -> Result<NaiveDate> {
    NaiveDate::from_ymd_opt(year, month, 1)
        .ok_or_else(|| Error::Domain(format!("no such month {year}-{month}")))
}

/// All dates of `(year, month)` falling on `weekday`, ascending.
pub fn weekday_occurrences(year: i32, month: u32, weekday: Weekday) -> Result<Vec<NaiveDate>> {
    let first = first_of_month(year, month)?;
    Ok(first
        .iter_days()
        .take_while(|d| d.month() == month)
        .filter(|d| d.weekday() == weekday)
        .collect())
}

/// Keeps a uniform random `keep`-subset of each weekday's occurrences in the
/// month, independently per weekday.
pub fn sample_weekdays(
    year: i32,
    month: u32,
    keep: WeekdayKeep,
    run_seed: u64,
) -> Result<BTreeSet<NaiveDate>> {
    let first = first_of_month(year, month)?;
    let mut rng = step_rng(run_seed, SeedLabel::WeekdaySample, first);
    let mut retained = BTreeSet::new();
    for weekday in WEEKDAYS {
        let dates = weekday_occurrences(year, month, weekday)?;
        let k = match keep {
            WeekdayKeep::All => dates.len(),
            WeekdayKeep::Count(k) => k as usize,
        };
        if k > dates.len() {
            return Err(Error::Config(format!(
                "weekday_keep_count {k} exceeds the {} {weekday} occurrences in {year}-{month:02}",
                dates.len()
            )));
        }
        for i in index::sample(&mut rng, dates.len(), k) {
            retained.insert(dates[i]);
        }
    }
    Ok(retained)
}

/// `round(rate * n)` with halves rounded up.
pub fn retained_card_count(n: usize, rate: f64) -> usize {
    ((rate * n as f64) + 0.5).floor().min(n as f64) as usize
}

/// Keeps exactly [`retained_card_count`] of the distinct `cards` active on
/// `date`, chosen by a shuffle seeded from `(run_seed, date)`.
///
/// The shuffle runs over the cards in sorted order, so the result does not
/// depend on the order the caller collected them in.
pub fn sample_cards<T: Ord>(
    mut cards: Vec<T>,
    rate: f64,
    run_seed: u64,
    date: CircadianDate,
) -> Vec<T> {
    cards.sort_unstable();
    cards.dedup();
    let k = retained_card_count(cards.len(), rate);
    if k == 0 {
        return Vec::new();
    }
    let mut rng = step_rng(run_seed, SeedLabel::CardSample, date.service_date());
    cards.partial_shuffle(&mut rng, k);
    cards.truncate(k);
    cards
}

/// Chance that one card appears in one daily dataset.
pub fn inclusion_probability(weekday_occurrences: u32, keep_count: u32, card_rate: f64) -> Result<f64> {
    if weekday_occurrences == 0 || keep_count > weekday_occurrences {
        return Err(Error::Domain(format!(
            "keep count {keep_count} must not exceed {weekday_occurrences} weekday occurrences"
        )));
    }
    if !(0.0..=1.0).contains(&card_rate) {
        return Err(Error::Domain(format!("card rate {card_rate} outside [0, 1]")));
    }
    Ok(card_rate * f64::from(keep_count) / f64::from(weekday_occurrences))
}

/// Chance of appearing on every one of several days; days are sampled
/// independently so this is the product.
pub fn streak_inclusion_probability(per_day: &[f64]) -> f64 {
    debug_assert!(per_day.iter().all(|p| (0.0..=1.0).contains(p)));
    per_day.iter().product()
}

/// Retained days of one month and the seed material behind them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthPlan {
    pub year: i32,
    pub month: u32,
    pub retained_dates: BTreeSet<NaiveDate>,
    /// Hex of the sub-seed that drove weekday selection.
    pub weekday_seed: String,
}

impl MonthPlan {
    pub fn new(year: i32, month: u32, keep: WeekdayKeep, run_seed: u64) -> Result<Self> {
        let retained_dates = sample_weekdays(year, month, keep, run_seed)?;
        let weekday_seed = hex::encode(derive_seed(
            run_seed,
            SeedLabel::WeekdaySample,
            first_of_month(year, month)?,
        ));
        Ok(MonthPlan {
            year,
            month,
            retained_dates,
            weekday_seed,
        })
    }

    pub fn is_retained(&self, date: CircadianDate) -> bool {
        self.retained_dates.contains(&date.service_date())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn day(y: i32, m: u32, d: u32) -> CircadianDate {
        CircadianDate::from_service_date(NaiveDate::from_ymd_opt(y, m, d).unwrap())
    }

    #[test]
    fn five_monday_month_keeps_three() {
        // September 2013 has five Mondays (2, 9, 16, 23, 30).
        assert_eq!(weekday_occurrences(2013, 9, Weekday::Mon).unwrap().len(), 5);
        let kept = sample_weekdays(2013, 9, WeekdayKeep::Count(3), 11).unwrap();
        let mondays = kept.iter().filter(|d| d.weekday() == Weekday::Mon).count();
        assert_eq!(mondays, 3);
    }

    #[test]
    fn every_month_keeps_21_dates() {
        for year in [2013, 2016, 2024] {
            for month in 1..=12 {
                for seed in 0..5 {
                    let kept = sample_weekdays(year, month, WeekdayKeep::Count(3), seed).unwrap();
                    assert_eq!(kept.len(), 21);
                    for wd in WEEKDAYS {
                        assert_eq!(kept.iter().filter(|d| d.weekday() == wd).count(), 3);
                    }
                    assert!(kept.iter().all(|d| d.year() == year && d.month() == month));
                }
            }
        }
    }

    #[test]
    fn keep_all_retains_whole_month() {
        let kept = sample_weekdays(2013, 10, WeekdayKeep::All, 0).unwrap();
        assert_eq!(kept.len(), 31);
    }

    #[test]
    fn keep_count_above_occurrences_is_config_error() {
        // February 2015 has exactly four of every weekday.
        let err = sample_weekdays(2015, 2, WeekdayKeep::Count(5), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(sample_weekdays(2015, 2, WeekdayKeep::Count(4), 0).is_ok());
    }

    #[test]
    fn weekday_sampling_is_deterministic() {
        let a = sample_weekdays(2013, 10, WeekdayKeep::Count(3), 99).unwrap();
        let b = sample_weekdays(2013, 10, WeekdayKeep::Count(3), 99).unwrap();
        assert_eq!(a, b);
        let differs = (0..20).any(|s| sample_weekdays(2013, 10, WeekdayKeep::Count(3), s).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn each_monday_of_four_monday_month_kept_three_quarters() {
        // February 2015: Mondays 2, 9, 16, 23.
        let mondays = weekday_occurrences(2015, 2, Weekday::Mon).unwrap();
        assert_eq!(mondays.len(), 4);
        let mut hits: HashMap<NaiveDate, u32> = HashMap::new();
        let seeds = 10_000u64;
        for seed in 0..seeds {
            for d in sample_weekdays(2015, 2, WeekdayKeep::Count(3), seed).unwrap() {
                *hits.entry(d).or_default() += 1;
            }
        }
        for m in mondays {
            let f = f64::from(hits[&m]) / seeds as f64;
            assert!((f - 0.75).abs() <= 0.02, "{m}: {f}");
        }
    }

    #[test]
    fn card_counts_round_half_up() {
        let cards: Vec<u32> = (0..10).collect();
        assert_eq!(sample_cards(cards, 0.5, 1, day(2013, 10, 9)).len(), 5);
        let cards: Vec<u32> = (0..11).collect();
        assert_eq!(sample_cards(cards, 0.5, 1, day(2013, 10, 9)).len(), 6);
        assert_eq!(sample_cards(vec![7u32], 0.5, 1, day(2013, 10, 9)).len(), 1);
        assert!(sample_cards(Vec::<u32>::new(), 0.5, 1, day(2013, 10, 9)).is_empty());
        assert_eq!(retained_card_count(3, 1.0), 3);
        assert_eq!(retained_card_count(3, 0.1), 0);
    }

    #[test]
    fn card_sample_ignores_input_order_and_duplicates() {
        let a: Vec<u32> = (0..100).collect();
        let mut b: Vec<u32> = (0..100).rev().collect();
        b.extend(0..10);
        let mut sa = sample_cards(a, 0.5, 5, day(2013, 10, 9));
        let mut sb = sample_cards(b, 0.5, 5, day(2013, 10, 9));
        sa.sort();
        sb.sort();
        assert_eq!(sa, sb);
    }

    #[test]
    fn fixed_card_retained_half_the_time() {
        let trials = 10_000u32;
        let mut hits = 0u32;
        let base = NaiveDate::from_ymd_opt(2013, 1, 1).unwrap();
        for t in 0..trials {
            let date = CircadianDate::from_service_date(base + chrono::Days::new(u64::from(t % 365)));
            let chosen = sample_cards((0u32..20).collect(), 0.5, u64::from(t / 365), date);
            if chosen.contains(&0) {
                hits += 1;
            }
        }
        let f = f64::from(hits) / f64::from(trials);
        assert!((f - 0.5).abs() <= 0.015, "{f}");
    }

    #[test]
    fn card_samples_independent_across_dates() {
        let trials = 10_000u64;
        let (d1, d2) = (day(2013, 10, 9), day(2013, 10, 10));
        let (mut a, mut b, mut both) = (0u64, 0u64, 0u64);
        for seed in 0..trials {
            let in1 = sample_cards((0u32..20).collect(), 0.5, seed, d1).contains(&3);
            let in2 = sample_cards((0u32..20).collect(), 0.5, seed, d2).contains(&3);
            a += u64::from(in1);
            b += u64::from(in2);
            both += u64::from(in1 && in2);
        }
        let n = trials as f64;
        let p = (a as f64 / n) * (b as f64 / n);
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((both as f64 / n - p).abs() <= 3.0 * se, "joint {} vs {p}", both as f64 / n);
    }

    #[test]
    fn inclusion_arithmetic() {
        assert_eq!(inclusion_probability(5, 3, 0.5).unwrap(), 0.3);
        assert_eq!(inclusion_probability(4, 3, 0.5).unwrap(), 0.375);
        assert_eq!(inclusion_probability(4, 4, 1.0).unwrap(), 1.0);
        assert!(matches!(inclusion_probability(3, 4, 0.5), Err(Error::Domain(_))));
        assert!(inclusion_probability(0, 0, 0.5).is_err());
    }

    #[test]
    fn streak_arithmetic() {
        let five = streak_inclusion_probability(&[0.375; 5]);
        assert!((five - 0.007_415_771_484_375).abs() < 1e-15);
        assert!(five < 0.01);
        assert_eq!(streak_inclusion_probability(&[0.5, 0.0, 0.9]), 0.0);
        let low = streak_inclusion_probability(&[0.3; 5]);
        assert!((low - 0.00243).abs() < 1e-12);
    }

    #[test]
    fn month_plan_membership() {
        let plan = MonthPlan::new(2013, 10, WeekdayKeep::Count(3), 4).unwrap();
        assert_eq!(plan.retained_dates.len(), 21);
        for d in plan.retained_dates.iter() {
            assert!(plan.is_retained(CircadianDate::from_service_date(*d)));
        }
        assert_eq!(plan.weekday_seed.len(), 64);
    }
}
