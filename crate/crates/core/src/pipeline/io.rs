//! CSV reading and writing for raw input and published months.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{NaiveDateTime, NaiveTime};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    validate_raw_header, AnonymizedRecord, CardSerial, Money, RawTransaction, OUTPUT_COLUMNS,
    RAW_COLUMNS,
};

pub const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Shares one allocation per distinct string across rows.
#[derive(Default)]
pub(crate) struct Interner(HashSet<Arc<str>>);

impl Interner {
    pub(crate) fn intern(&mut self, s: &str) -> Arc<str> {
        if let Some(existing) = self.0.get(s) {
            return existing.clone();
        }
        let arc: Arc<str> = Arc::from(s);
        self.0.insert(arc.clone());
        arc
    }
}

/// Streaming reader over a raw transaction CSV.
///
/// Yields `(row, parsed)` where `row` counts data rows from 1; a row that
/// cannot be parsed yields `Err(reason)` so the caller decides whether to
/// abort or skip.
pub struct RawReader {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<BufReader<File>>,
    interner: Interner,
    row: u64,
}

pub type ParsedRow = std::result::Result<RawTransaction, String>;

/// Opens a raw CSV and checks its header against the raw schema.
pub fn read_raw(path: &Path) -> Result<RawReader> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::with_capacity(1 << 20, file));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != RAW_COLUMNS {
        let problems = validate_raw_header(&header);
        let detail = if problems.is_empty() {
            "columns out of order".to_string()
        } else {
            problems.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
        };
        return Err(Error::Format(format!("{}: raw header rejected: {detail}", path.display())));
    }
    Ok(RawReader {
        path: path.to_owned(),
        records: reader.into_records(),
        interner: Interner::default(),
        row: 0,
    })
}

impl Iterator for RawReader {
    type Item = Result<(u64, ParsedRow)>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        self.row += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Some(Err(Error::csv(&self.path, e))),
            Err(e) => return Some(Ok((self.row, Err(e.to_string())))),
        };
        Some(Ok((self.row, parse_raw(&rec, &mut self.interner))))
    }
}

fn parse_raw(rec: &csv::StringRecord, interner: &mut Interner) -> ParsedRow {
    if rec.len() != RAW_COLUMNS.len() {
        return Err(format!("expected {} fields, found {}", RAW_COLUMNS.len(), rec.len()));
    }
    let f = |i: usize| rec.get(i).unwrap_or("");
    let int = |i: usize| -> std::result::Result<i64, String> {
        f(i).parse::<i64>()
            .map_err(|_| format!("{}: not an integer: {:?}", RAW_COLUMNS[i], f(i)))
    };
    let opt_int = |i: usize| -> std::result::Result<Option<i64>, String> {
        if f(i).is_empty() {
            Ok(None)
        } else {
            int(i).map(Some)
        }
    };
    let datetime = |i: usize| -> std::result::Result<NaiveDateTime, String> {
        NaiveDateTime::parse_from_str(f(i), DATETIME_FORMAT)
            .map_err(|_| format!("{}: not a YYYY-MM-DD HH:MM:SS datetime: {:?}", RAW_COLUMNS[i], f(i)))
    };
    let mut text = |i: usize| interner.intern(f(i));
    let card_serial = CardSerial::new(text(0));
    let agency_name = text(4);
    let route_name = (!f(6).is_empty()).then(|| text(6));
    let tag_on_location_name = text(8);
    let tag_off_location_name = (!f(10).is_empty()).then(|| text(10));
    let payment_product_name = text(13);
    Ok(RawTransaction {
        card_serial,
        tag_on_at: datetime(1)?,
        tag_off_at: if f(2).is_empty() { None } else { Some(datetime(2)?) },
        agency_id: int(3)?,
        agency_name,
        route_id: opt_int(5)?,
        route_name,
        tag_on_location_id: int(7)?,
        tag_on_location_name,
        tag_off_location_id: opt_int(9)?,
        tag_off_location_name,
        fare_amount: f(11).parse::<Money>().map_err(|e| format!("fare_amount: {e}"))?,
        payment_product_id: int(12)?,
        payment_product_name,
    })
}

fn raw_fields(r: &RawTransaction) -> [String; 14] {
    fn opt<T: ToString>(v: &Option<T>) -> String {
        v.as_ref().map(ToString::to_string).unwrap_or_default()
    }
    [
        r.card_serial.as_str().to_owned(),
        r.tag_on_at.format(DATETIME_FORMAT).to_string(),
        r.tag_off_at
            .map(|t| t.format(DATETIME_FORMAT).to_string())
            .unwrap_or_default(),
        r.agency_id.to_string(),
        r.agency_name.to_string(),
        opt(&r.route_id),
        opt(&r.route_name),
        r.tag_on_location_id.to_string(),
        r.tag_on_location_name.to_string(),
        opt(&r.tag_off_location_id),
        opt(&r.tag_off_location_name),
        r.fare_amount.to_string(),
        r.payment_product_id.to_string(),
        r.payment_product_name.to_string(),
    ]
}

/// Writes raw transactions as headered CSV. Returns the SHA-256 of the file.
pub fn write_raw<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a RawTransaction>,
    overwrite: bool,
) -> Result<String> {
    write_raw_stream(path, overwrite, |push| {
        for r in rows {
            push(r)?;
        }
        Ok(())
    })
}

/// Like [`write_raw`], for producers that emit rows incrementally: `fill`
/// receives a callback that appends one row.
pub fn write_raw_stream(
    path: &Path,
    overwrite: bool,
    fill: impl FnOnce(&mut dyn FnMut(&RawTransaction) -> Result<()>) -> Result<()>,
) -> Result<String> {
    write_csv_atomic(path, overwrite, |w| {
        w.write_record(RAW_COLUMNS).map_err(|e| Error::csv(path, e))?;
        fill(&mut |r| w.write_record(raw_fields(r)).map_err(|e| Error::csv(path, e)))
    })
}

/// Writes one published month. Returns the SHA-256 of the file.
pub fn write_month<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a AnonymizedRecord>,
    overwrite: bool,
) -> Result<String> {
    write_csv_atomic(path, overwrite, |w| {
        w.write_record(OUTPUT_COLUMNS).map_err(|e| Error::csv(path, e))?;
        for r in records {
            w.write_record(r.to_fields()).map_err(|e| Error::csv(path, e))?;
        }
        Ok(())
    })
}

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

type CsvSink<'a> = csv::Writer<HashingWriter<BufWriter<&'a mut File>>>;

fn write_csv_atomic(
    path: &Path,
    overwrite: bool,
    body: impl FnOnce(&mut CsvSink<'_>) -> Result<()>,
) -> Result<String> {
    let dir = parent_dir(path);
    if !overwrite && path.exists() {
        return Err(Error::OutputExists(path.to_owned()));
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    let digest = {
        let hashing = HashingWriter {
            inner: BufWriter::with_capacity(1 << 20, tmp.as_file_mut()),
            hasher: Sha256::new(),
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(hashing);
        body(&mut w)?;
        let mut hashing = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        hashing.flush().map_err(|e| Error::io(path, e))?;
        hex::encode(hashing.hasher.finalize())
    };
    persist(tmp, path, overwrite)?;
    Ok(digest)
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn persist(tmp: tempfile::NamedTempFile, path: &Path, overwrite: bool) -> Result<()> {
    let result = if overwrite {
        tmp.persist(path).map(|_| ())
    } else {
        tmp.persist_noclobber(path).map(|_| ())
    };
    result.map_err(|e| {
        if e.error.kind() == std::io::ErrorKind::AlreadyExists {
            Error::OutputExists(path.to_owned())
        } else {
            Error::io(path, e.error)
        }
    })
}

/// Temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8], overwrite: bool) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::OutputExists(path.to_owned()));
    }
    let dir = parent_dir(path);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    persist(tmp, path, overwrite)
}

pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

/// Reads a published month back into records. Fails on the first malformed
/// row; use [`validate_output`](super::validate::validate_output) for a full
/// conformance report instead.
pub fn read_anonymized(path: &Path) -> Result<Vec<AnonymizedRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::with_capacity(1 << 20, file));
    let header = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.iter().ne(OUTPUT_COLUMNS) {
        return Err(Error::Format(format!("{}: header is not the published schema", path.display())));
    }
    let mut interner = Interner::default();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let parsed = parse_anonymized(&rec, &mut interner)
            .map_err(|reason| Error::Format(format!("{} row {}: {reason}", path.display(), i + 1)))?;
        out.push(parsed);
    }
    Ok(out)
}

fn parse_anonymized(
    rec: &csv::StringRecord,
    interner: &mut Interner,
) -> std::result::Result<AnonymizedRecord, String> {
    let f = |i: usize| rec.get(i).unwrap_or("");
    fn num<T: std::str::FromStr>(s: &str, col: &str) -> std::result::Result<T, String> {
        s.parse().map_err(|_| format!("{col}: cannot parse {s:?}"))
    }
    fn opt_num<T: std::str::FromStr>(s: &str, col: &str) -> std::result::Result<Option<T>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s, col).map(Some)
        }
    }
    let time = |s: &str, col: &str| {
        NaiveTime::parse_from_str(s, "%H:%M:%S").map_err(|_| format!("{col}: bad time {s:?}"))
    };
    let mut text = |i: usize| interner.intern(f(i));
    let agency_name = text(3);
    let route_name = (!f(5).is_empty()).then(|| text(5));
    let payment_product_name = text(8);
    let tag_on_location_name = text(11);
    let tag_off_location_name = (!f(14).is_empty()).then(|| text(14));
    Ok(AnonymizedRecord {
        card_id: f(0).parse().map_err(|e: Error| e.to_string())?,
        trip_sequence_id: num(f(1), "TripSequenceID")?,
        agency_id: num(f(2), "AgencyID")?,
        agency_name,
        route_id: opt_num(f(4), "RouteID")?,
        route_name,
        fare_amount: f(6).parse::<Money>().map_err(|e| e.to_string())?,
        payment_product_id: num(f(7), "PaymentProductID")?,
        payment_product_name,
        tag_on_time: time(f(9), "TagOnTime_Time")?,
        tag_on_location_id: num(f(10), "TagOnLocationId")?,
        tag_on_location_name,
        tag_off_time: if f(12).is_empty() { None } else { Some(time(f(12), "TagOffTime_Time")?) },
        tag_off_location_id: opt_num(f(13), "TagOffLocationId")?,
        tag_off_location_name,
        year: num(f(15), "Year")?,
        month: num(f(16), "Month")?,
        day_of_week_id: num(f(17), "DayOfWeekID")?,
        random_week_id: num(f(19), "RandomWeekID")?,
    })
}
