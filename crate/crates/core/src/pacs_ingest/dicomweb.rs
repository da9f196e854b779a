//! DICOMweb study-metadata JSON (tag-keyed objects with `vr` and `Value`).

use serde_json::Value;

use super::{IngestError, StudyAttributes, StudyMeta, Tag};

fn first_value(element: &Value) -> Option<String> {
    let first = element.get("Value")?.as_array()?.first()?;
    match first {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Object(o) => o.get("Alphabetic").and_then(Value::as_str).map(|s| s.trim().to_string()),
        _ => None,
    }
}

/// Reads raw attributes for every study object in the document.
pub fn read_dicomweb_attributes(doc: &str) -> Result<Vec<StudyAttributes>, IngestError> {
    let root: Value = serde_json::from_str(doc).map_err(|e| IngestError::Parse(e.to_string()))?;
    let studies = root.as_array().ok_or_else(|| IngestError::Parse("top-level value is not an array".into()))?;
    studies
        .iter()
        .enumerate()
        .map(|(i, study)| {
            let object =
                study.as_object().ok_or_else(|| IngestError::Parse(format!("element {i} is not an object")))?;
            let mut attrs = StudyAttributes::default();
            for (key, element) in object {
                let tag = match parse_key(key) {
                    Some(tag) => tag,
                    None => continue,
                };
                if let Some(value) = first_value(element) {
                    attrs.set(tag, value);
                }
            }
            Ok(attrs)
        })
        .collect()
}

fn parse_key(key: &str) -> Option<Tag> {
    if key.len() != 8 {
        return None;
    }
    let group = u16::from_str_radix(&key[..4], 16).ok()?;
    let element = u16::from_str_radix(&key[4..], 16).ok()?;
    Some(Tag(group, element))
}

/// Parses a DICOMweb metadata array into one [`StudyMeta`] per element.
/// Source URIs are `dicomweb#<index>`.
pub fn parse_dicomweb_json(doc: &str) -> Result<Vec<StudyMeta>, IngestError> {
    read_dicomweb_attributes(doc)?
        .into_iter()
        .enumerate()
        .map(|(i, attrs)| attrs.into_meta(format!("dicomweb#{i}")))
        .collect()
}
