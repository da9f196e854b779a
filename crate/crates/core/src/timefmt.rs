//! Timestamp parsing for the formats that show up in PACS and HIS exports.
//!
//! All timestamps are timezone-naive local hospital time.

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

/// Parses a DICOM DA value (`YYYYMMDD`).
pub fn parse_dicom_date(value: &str) -> Option<NaiveDate> {
    let value = value.trim();
    if value.len() != 8 || !value.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    NaiveDate::parse_from_str(value, "%Y%m%d").ok()
}

/// Parses a DICOM TM value. Accepts `HH`, `HHMM`, `HHMMSS` and `HHMMSS.FFFFFF`;
/// fractional seconds are truncated.
pub fn parse_dicom_time(value: &str) -> Option<NaiveTime> {
    let value = value.trim();
    let whole = match value.split_once('.') {
        Some((whole, frac)) => {
            if frac.is_empty() || frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            if whole.len() != 6 {
                return None;
            }
            whole
        }
        None => value,
    };
    if !whole.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let field = |i: usize| whole[i..i + 2].parse::<u32>().ok();
    let (h, m, s) = match whole.len() {
        2 => (field(0)?, 0, 0),
        4 => (field(0)?, field(2)?, 0),
        6 => (field(0)?, field(2)?, field(4)?),
        _ => return None,
    };
    NaiveTime::from_hms_opt(h, m, s)
}

/// Combines a DICOM StudyDate and StudyTime into one instant.
pub fn parse_dicom_datetime(date: &str, time: &str) -> Option<NaiveDateTime> {
    Some(parse_dicom_date(date)?.and_time(parse_dicom_time(time)?))
}

/// Parses an HIS timestamp, either ISO-8601 local (`YYYY-MM-DDTHH:MM:SS`) or
/// compact (`YYYYMMDDHHMMSS`).
pub fn parse_his_timestamp(value: &str) -> Option<NaiveDateTime> {
    let value = value.trim();
    if value.len() == 14 && value.bytes().all(|b| b.is_ascii_digit()) {
        return NaiveDateTime::parse_from_str(value, "%Y%m%d%H%M%S").ok();
    }
    if value.len() == 19 {
        return NaiveDateTime::parse_from_str(value, "%Y-%m-%dT%H:%M:%S").ok();
    }
    None
}

/// Canonical text form used in every artifact the pipeline writes.
pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Serde adapter that pins timestamps to second precision in canonical form.
pub mod serde_ts {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_his_timestamp(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid timestamp '{raw}'")))
    }
}
