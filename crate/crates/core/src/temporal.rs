//! Circadian-day assignment, time truncation and within-day trip sequencing.

use chrono::{Datelike, Days, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

/// The service date of a circadian day: the calendar date on which the day
/// starts at the boundary time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CircadianDate(NaiveDate);

impl CircadianDate {
    pub fn from_service_date(date: NaiveDate) -> Self {
        CircadianDate(date)
    }

    pub fn service_date(self) -> NaiveDate {
        self.0
    }

    pub fn year(self) -> i32 {
        self.0.year()
    }

    pub fn month(self) -> u32 {
        self.0.month()
    }

    pub fn weekday(self) -> Weekday {
        self.0.weekday()
    }
}

/// Wall-clock only: times before `boundary` belong to the previous date.
pub fn circadian_date(ts: NaiveDateTime, boundary: NaiveTime) -> CircadianDate {
    let date = ts.date();
    if ts.time() >= boundary {
        CircadianDate(date)
    } else {
        CircadianDate(date.checked_sub_days(Days::new(1)).unwrap_or(date))
    }
}

/// Floors `t` to a multiple of `granularity_minutes` and zeroes the seconds.
///
/// `granularity_minutes` must divide 60.
pub fn truncate_time(t: NaiveTime, granularity_minutes: u32) -> NaiveTime {
    debug_assert!(granularity_minutes > 0 && 60 % granularity_minutes == 0);
    let minute = t.minute() - t.minute() % granularity_minutes;
    NaiveTime::from_hms_opt(t.hour(), minute, 0).expect("floored time is valid")
}

/// Numbers one card's transactions within one circadian day as 1, 2, 3, ...
/// by true tag-on time. Ties keep input order.
pub fn assign_trip_sequence<T>(
    mut records: Vec<T>,
    tag_on_at: impl Fn(&T) -> NaiveDateTime,
) -> Vec<(u32, T)> {
    records.sort_by_key(|r| tag_on_at(r));
    records
        .into_iter()
        .zip(1u32..)
        .map(|(r, seq)| (seq, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dt(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").unwrap()
    }

    fn t(s: &str) -> NaiveTime {
        NaiveTime::parse_from_str(s, "%H:%M:%S").unwrap()
    }

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    const THREE_AM: NaiveTime = match NaiveTime::from_hms_opt(3, 0, 0) {
        Some(t) => t,
        None => unreachable!(),
    };

    #[test]
    fn circadian_boundary_cases() {
        let c = |s| circadian_date(dt(s), THREE_AM).service_date();
        assert_eq!(c("2013-10-09 02:59:59"), d("2013-10-08"));
        assert_eq!(c("2013-10-09 03:00:00"), d("2013-10-09"));
        assert_eq!(c("2013-10-09 17:30:00"), d("2013-10-09"));
        assert_eq!(c("2013-11-01 00:30:00"), d("2013-10-31"));
        assert_eq!(c("2014-01-01 01:00:00"), d("2013-12-31"));
    }

    #[test]
    fn circadian_partitions_48_hours() {
        let start = dt("2013-10-09 00:00:00");
        let mut dates = Vec::new();
        for s in 0..(48 * 3600) {
            let ts = start + chrono::Duration::seconds(s);
            let c = circadian_date(ts, THREE_AM).service_date();
            if dates.last() != Some(&c) {
                dates.push(c);
            }
        }
        // 00:00-03:00 on the 9th, 03:00 on 9th to 03:00 on 10th, then the 10th
        assert_eq!(dates, vec![d("2013-10-08"), d("2013-10-09"), d("2013-10-10")]);
        let cut = |s| circadian_date(dt(s), THREE_AM).service_date();
        assert_ne!(cut("2013-10-10 02:59:59"), cut("2013-10-10 03:00:00"));
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_time(t("17:34:59"), 10), t("17:30:00"));
        assert_eq!(truncate_time(t("20:20:00"), 10), t("20:20:00"));
        assert_eq!(truncate_time(t("23:59:59"), 10), t("23:50:00"));
        assert_eq!(truncate_time(t("00:00:00"), 10), t("00:00:00"));
        assert_eq!(truncate_time(t("08:44:10"), 15), t("08:30:00"));
        assert_eq!(truncate_time(t("08:44:10"), 60), t("08:00:00"));
    }

    #[test]
    fn truncation_idempotent_and_floor_over_whole_day() {
        for s in 0..86_400u32 {
            let time = NaiveTime::from_num_seconds_from_midnight_opt(s, 0).unwrap();
            let once = truncate_time(time, 10);
            assert_eq!(truncate_time(once, 10), once);
            assert!(once <= time);
            assert!(time.signed_duration_since(once) < chrono::Duration::minutes(10));
            assert_eq!(once.minute() % 10, 0);
            assert_eq!(once.second(), 0);
        }
    }

    #[test]
    fn sequence_examples() {
        let seq = |times: &[&str]| {
            let recs: Vec<NaiveDateTime> = times.iter().map(|s| dt(s)).collect();
            assign_trip_sequence(recs, |r| *r)
        };
        let out = seq(&["2013-10-09 17:33:00", "2013-10-09 07:12:00", "2013-10-09 07:40:00"]);
        let ids: Vec<(u32, String)> = out
            .iter()
            .map(|(i, r)| (*i, r.format("%H:%M").to_string()))
            .collect();
        assert_eq!(
            ids,
            vec![
                (1, "07:12".to_string()),
                (2, "07:40".to_string()),
                (3, "17:33".to_string())
            ]
        );

        let out = seq(&["2013-10-09 08:07:00", "2013-10-09 08:01:00"]);
        assert_eq!(out[0], (1, dt("2013-10-09 08:01:00")));
        assert_eq!(out[1], (2, dt("2013-10-09 08:07:00")));

        assert_eq!(seq(&["2013-10-09 12:00:00"])[0].0, 1);
    }

    #[test]
    fn sequence_ties_keep_input_order() {
        let at = dt("2013-10-09 08:00:00");
        let out = assign_trip_sequence(vec![(at, 'a'), (at, 'b'), (at, 'c')], |r| r.0);
        let order: Vec<char> = out.iter().map(|(_, r)| r.1).collect();
        assert_eq!(order, vec!['a', 'b', 'c']);
    }

    proptest! {
        #[test]
        fn sequence_order_matches_true_order(secs in proptest::collection::vec(0i64..86_400, 1..40)) {
            let base = dt("2013-10-09 03:00:00");
            let recs: Vec<(usize, NaiveDateTime)> = secs
                .iter()
                .enumerate()
                .map(|(i, s)| (i, base + chrono::Duration::seconds(*s)))
                .collect();
            let out = assign_trip_sequence(recs.clone(), |r| r.1);
            let ids: Vec<u32> = out.iter().map(|(i, _)| *i).collect();
            prop_assert_eq!(ids, (1..=recs.len() as u32).collect::<Vec<_>>());
            for w in out.windows(2) {
                let (a, b) = (&w[0].1, &w[1].1);
                prop_assert!(a.1 < b.1 || (a.1 == b.1 && a.0 < b.0));
            }
        }
    }
}
