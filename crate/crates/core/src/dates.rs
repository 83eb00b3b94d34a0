//! Replaces retained calendar dates with small random integers.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudonym::{step_rng, SeedLabel};
use crate::sampling::first_of_month;

/// Private bijection from retained date to `RandomWeekID`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DateIdMap(BTreeMap<NaiveDate, u32>);

impl DateIdMap {
    pub fn get(&self, date: NaiveDate) -> Option<u32> {
        self.0.get(&date).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, u32)> + '_ {
        self.0.iter().map(|(d, id)| (*d, *id))
    }

    /// Inverse lookup, only meaningful to holders of the private manifest.
    pub fn date_of(&self, id: u32) -> Option<NaiveDate> {
        self.0.iter().find(|(_, v)| **v == id).map(|(d, _)| *d)
    }

    pub fn is_bijective(&self) -> bool {
        let ids: BTreeSet<u32> = self.0.values().copied().collect();
        ids.len() == self.0.len()
            && ids.first().is_none_or(|&f| f == 1)
            && ids.last().is_none_or(|&l| l as usize == self.0.len())
    }
}

/// Assigns `1..=n` to the `n` dates as a uniform random permutation seeded
/// from the run seed and the month of the earliest date.
pub fn build_date_id_map(retained_dates: &BTreeSet<NaiveDate>, run_seed: u64) -> Result<DateIdMap> {
    let first = retained_dates
        .first()
        .ok_or_else(|| Error::Domain("cannot build a date id map over no dates".into()))?;
    let mut rng = step_rng(run_seed, SeedLabel::DateIds, first_of_month(first.year(), first.month())?);
    let mut ids: Vec<u32> = (1..=retained_dates.len() as u32).collect();
    ids.shuffle(&mut rng);
    Ok(DateIdMap(retained_dates.iter().copied().zip(ids).collect()))
}
