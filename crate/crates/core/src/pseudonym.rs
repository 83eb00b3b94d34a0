//! Card pseudonyms that persist for exactly one circadian day, and the
//! seed-derivation function that the sampling stages share with them.
//!
//! Both are HMAC-SHA256 over a length-prefixed tuple with a domain label, so
//! a pseudonym can never coincide with a derived seed even under one key.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use hmac::{Hmac, Mac};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::CardSerial;
use crate::temporal::CircadianDate;

type HmacSha256 = Hmac<Sha256>;

const PSEUDONYM_LABEL: &[u8] = b"card-day-pseudonym/v1";

/// Length in bytes of a key file written by [`PseudonymKey::write_new`].
pub const KEY_FILE_LEN: usize = 32;

/// Per-release secret. Debug output never shows the bytes.
#[derive(Clone)]
pub struct PseudonymKey(Vec<u8>);

impl PseudonymKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(Error::Config(
                "pseudonym key is empty; refusing to produce unkeyed pseudonyms".into(),
            ));
        }
        Ok(PseudonymKey(bytes))
    }

    /// Fresh random key from the operating system.
    pub fn generate() -> Self {
        let mut bytes = vec![0u8; KEY_FILE_LEN];
        rand::fill(&mut bytes[..]);
        PseudonymKey(bytes)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != KEY_FILE_LEN {
            return Err(Error::Config(format!(
                "key file {} holds {} bytes, expected {KEY_FILE_LEN}",
                path.display(),
                bytes.len()
            )));
        }
        Self::new(bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::pipeline::io::write_atomic(path, &self.0, false)
    }

    /// SHA-256 of the key bytes, hex. Safe to record in the manifest.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(&self.0))
    }

    fn bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for PseudonymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("PseudonymKey").field(&"[REDACTED]").finish()
    }
}

/// 16-byte day-scoped card identifier, rendered as 32 uppercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DayPseudonym([u8; 16]);

impl DayPseudonym {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        DayPseudonym(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Display for DayPseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode_upper(self.0))
    }
}

impl fmt::Debug for DayPseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DayPseudonym({self})")
    }
}

impl FromStr for DayPseudonym {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ok = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'A'..=b'F'));
        if !ok {
            return Err(Error::Format(format!("not a 32-digit uppercase hex id: {s:?}")));
        }
        let mut out = [0u8; 16];
        hex::decode_to_slice(s, &mut out).map_err(|e| Error::Format(e.to_string()))?;
        Ok(DayPseudonym(out))
    }
}

/// Keyed pseudonym function with the MAC state prepared once.
#[derive(Clone)]
pub struct Pseudonymizer {
    mac: HmacSha256,
}

impl Pseudonymizer {
    pub fn new(key: &PseudonymKey) -> Self {
        let mac = HmacSha256::new_from_slice(key.bytes()).expect("HMAC accepts any key length");
        Pseudonymizer { mac }
    }

    pub fn pseudonymize(&self, serial: &CardSerial, date: CircadianDate) -> DayPseudonym {
        let mut mac = self.mac.clone();
        update_framed(&mut mac, PSEUDONYM_LABEL);
        update_framed(&mut mac, serial.as_bytes());
        mac.update(&date_bytes(date.service_date()));
        let tag = mac.finalize().into_bytes();
        let mut out = [0u8; 16];
        out.copy_from_slice(&tag[..16]);
        DayPseudonym(out)
    }
}

impl fmt::Debug for Pseudonymizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Pseudonymizer { .. }")
    }
}

/// One-shot form of [`Pseudonymizer::pseudonymize`].
pub fn pseudonymize(serial: &CardSerial, date: CircadianDate, key: &PseudonymKey) -> DayPseudonym {
    Pseudonymizer::new(key).pseudonymize(serial, date)
}

/// Labels separating the stochastic steps' seed streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedLabel {
    WeekdaySample,
    CardSample,
    DateIds,
}

impl SeedLabel {
    fn as_bytes(self) -> &'static [u8] {
        match self {
            SeedLabel::WeekdaySample => b"weekday-sample/v1",
            SeedLabel::CardSample => b"card-sample/v1",
            SeedLabel::DateIds => b"date-ids/v1",
        }
    }
}

/// Sub-seed for one stochastic step on one date, derived from the run seed.
pub fn derive_seed(run_seed: u64, label: SeedLabel, date: NaiveDate) -> [u8; 32] {
    let mut mac =
        HmacSha256::new_from_slice(&run_seed.to_le_bytes()).expect("HMAC accepts any key length");
    update_framed(&mut mac, label.as_bytes());
    mac.update(&date_bytes(date));
    mac.finalize().into_bytes().into()
}

pub(crate) fn step_rng(run_seed: u64, label: SeedLabel, date: NaiveDate) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(run_seed, label, date))
}

fn update_framed(mac: &mut HmacSha256, bytes: &[u8]) {
    mac.update(&(bytes.len() as u64).to_be_bytes());
    mac.update(bytes);
}

fn date_bytes(date: NaiveDate) -> [u8; 4] {
    date.num_days_from_ce().to_be_bytes()
}
