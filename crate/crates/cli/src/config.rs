//! Flat TOML run configuration.
//!
//! One file can drive every subcommand. Anonymization keys mirror
//! `AnonymizationConfig`, generation keys mirror `PopulationSpec`, and the
//! generator's seed is spelled `population_seed` so it cannot be confused
//! with the release's `run_seed`. Missing keys take library defaults and
//! command-line flags override the file.

use std::path::Path;

use fareanon::synth::{AgencySpec, PopulationSpec};
use fareanon::{AnonymizationConfig, WeekdayKeep};
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub card_sample_rate: Option<f64>,
    pub weekday_keep_count: Option<WeekdayKeep>,
    pub time_granularity_minutes: Option<u32>,
    pub circadian_boundary: Option<String>,
    pub run_seed: Option<u64>,

    pub year: Option<i32>,
    pub month: Option<u32>,
    pub card_count: Option<u64>,
    pub commuter_fraction: Option<f64>,
    pub unique_commuter_fraction: Option<f64>,
    pub trips_per_commuter_workday: Option<f64>,
    pub casual_trip_rate: Option<f64>,
    pub weekday_multiplier: Option<f64>,
    pub weekend_multiplier: Option<f64>,
    pub commute_jitter_minutes: Option<u32>,
    pub corridor_count: Option<u32>,
    pub population_seed: Option<u64>,
    pub agencies: Option<Vec<AgencySpec>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn anonymization(&self, seed: Option<u64>) -> Result<AnonymizationConfig, String> {
        let d = AnonymizationConfig::default();
        let circadian_boundary = match &self.circadian_boundary {
            None => d.circadian_boundary,
            Some(s) => chrono::NaiveTime::parse_from_str(s, "%H:%M")
                .map_err(|e| format!("circadian_boundary {s:?}: {e}"))?,
        };
        Ok(AnonymizationConfig {
            card_sample_rate: self.card_sample_rate.unwrap_or(d.card_sample_rate),
            weekday_keep_count: self.weekday_keep_count.unwrap_or(d.weekday_keep_count),
            time_granularity_minutes: self.time_granularity_minutes.unwrap_or(d.time_granularity_minutes),
            circadian_boundary,
            run_seed: seed.or(self.run_seed).unwrap_or(d.run_seed),
        })
    }

    pub fn population(&self, seed: Option<u64>) -> PopulationSpec {
        let d = PopulationSpec::default();
        PopulationSpec {
            card_count: self.card_count.unwrap_or(d.card_count),
            commuter_fraction: self.commuter_fraction.unwrap_or(d.commuter_fraction),
            unique_commuter_fraction: self.unique_commuter_fraction.unwrap_or(d.unique_commuter_fraction),
            trips_per_commuter_workday: self
                .trips_per_commuter_workday
                .unwrap_or(d.trips_per_commuter_workday),
            casual_trip_rate: self.casual_trip_rate.unwrap_or(d.casual_trip_rate),
            weekday_multiplier: self.weekday_multiplier.unwrap_or(d.weekday_multiplier),
            weekend_multiplier: self.weekend_multiplier.unwrap_or(d.weekend_multiplier),
            commute_jitter_minutes: self.commute_jitter_minutes.unwrap_or(d.commute_jitter_minutes),
            corridor_count: self.corridor_count.unwrap_or(d.corridor_count),
            agencies: self.agencies.clone().unwrap_or(d.agencies),
            seed: seed.or(self.population_seed).unwrap_or(d.seed),
        }
    }
}
