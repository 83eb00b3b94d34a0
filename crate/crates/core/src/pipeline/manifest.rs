//! Private per-run metadata. Stored under `private/` beside the outputs and
//! never distributed with them.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dates::DateIdMap;
use crate::error::{Error, Result};
use crate::model::AnonymizationConfig;

pub const MANIFEST_SCHEMA: &str = "fareanon-manifest/1";
pub const PRIVATE_DIR: &str = "private";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub config: AnonymizationConfig,
    pub key_fingerprint: String,
    pub input_rows: u64,
    pub invalid_rows_skipped: u64,
    pub rows_on_dropped_dates: u64,
    pub rows_of_unsampled_cards: u64,
    pub output_rows: u64,
    pub months: Vec<MonthManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthManifest {
    pub year: i32,
    pub month: u32,
    pub weekday_seed: String,
    pub retained_dates: BTreeSet<NaiveDate>,
    /// Covers the retained dates that carry at least one published row.
    pub date_ids: DateIdMap,
    pub days: Vec<DayManifest>,
    pub output_rows: u64,
    pub file: String,
    /// SHA-256 of the published file; filled in when the month is written.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayManifest {
    pub date: NaiveDate,
    pub active_cards: u64,
    pub retained_cards: u64,
    pub output_rows: u64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(Error::Format(format!(
                "{}: unsupported manifest schema {:?}",
                path.display(),
                manifest.schema
            )));
        }
        Ok(manifest)
    }

    pub fn month(&self, year: i32, month: u32) -> Option<&MonthManifest> {
        self.months.iter().find(|m| m.year == year && m.month == month)
    }
}

/// Published file name for one month.
pub fn month_file_name(year: i32, month: u32) -> String {
    format!("anon_{year}_{month:02}.csv")
}

pub fn manifest_path(output_dir: &Path) -> std::path::PathBuf {
    output_dir.join(PRIVATE_DIR).join(MANIFEST_FILE)
}
