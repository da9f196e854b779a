//! HIS session export parsing.
//!
//! One XML file holds one examination session. The canonical schema is
//!
//! ```xml
//! <session id="..." patient_id="..." check_in_time="..." check_out_time="...">
//!   <report service_id="..." report_time="...">
//!     <description>...</description>
//!   </report>
//! </session>
//! ```
//!
//! Deployments that export under different element or attribute names supply
//! an [`AliasMap`] from canonical name to deployment name.

use std::collections::HashMap;
use std::fmt::Write as _;

use chrono::NaiveDateTime;
use quick_xml::escape::{escape, resolve_predefined_entity};
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timefmt;

#[derive(Debug, Error, PartialEq)]
pub enum HisError {
    #[error("XML parse error at byte {position}: {message}")]
    Parse { position: u64, message: String },
    #[error("<{element}> at byte {position} is missing attribute '{attribute}'")]
    MissingAttribute { element: String, attribute: String, position: u64 },
    #[error("attribute '{attribute}' has unparseable timestamp '{value}'")]
    BadTimestamp { attribute: String, value: String },
    #[error("session {session_id}: check-in {check_in} is after check-out {check_out}")]
    InconsistentSession { session_id: String, check_in: String, check_out: String },
    #[error("invalid alias map: {0}")]
    Alias(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadiologyReport {
    pub service_id: String,
    #[serde(with = "timefmt::serde_ts")]
    pub report_time: NaiveDateTime,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub patient_id: String,
    #[serde(with = "timefmt::serde_ts")]
    pub check_in_time: NaiveDateTime,
    #[serde(with = "timefmt::serde_ts")]
    pub check_out_time: NaiveDateTime,
    pub reports: Vec<RadiologyReport>,
}

/// Canonical element and attribute names.
pub const CANONICAL_NAMES: [&str; 9] = [
    "session",
    "id",
    "patient_id",
    "check_in_time",
    "check_out_time",
    "report",
    "service_id",
    "report_time",
    "description",
];

/// Maps canonical names to the names a deployment actually uses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasMap {
    names: HashMap<String, String>,
}

impl AliasMap {
    pub fn new(names: HashMap<String, String>) -> Result<Self, HisError> {
        for (canonical, deployed) in &names {
            if !CANONICAL_NAMES.contains(&canonical.as_str()) {
                return Err(HisError::Alias(format!("unknown canonical name '{canonical}'")));
            }
            if deployed.trim().is_empty() {
                return Err(HisError::Alias(format!("empty alias for '{canonical}'")));
            }
        }
        Ok(AliasMap { names })
    }

    pub fn from_json(text: &str) -> Result<Self, HisError> {
        let names: HashMap<String, String> = serde_json::from_str(text).map_err(|e| HisError::Alias(e.to_string()))?;
        Self::new(names)
    }

    pub fn name<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.names.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

fn xml_error(reader: &Reader<&[u8]>, message: impl ToString) -> HisError {
    HisError::Parse { position: reader.error_position(), message: message.to_string() }
}

fn attributes(reader: &Reader<&[u8]>, start: &BytesStart<'_>) -> Result<HashMap<String, String>, HisError> {
    let mut out = HashMap::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| xml_error(reader, e))?;
        let key = attr.key.as_ref().to_string();
        let value = attr.normalized_value(XmlVersion::Implicit1_0).map_err(|e| xml_error(reader, e))?;
        out.insert(key, value.into_owned());
    }
    Ok(out)
}

struct Attrs<'a> {
    element: &'a str,
    position: u64,
    values: HashMap<String, String>,
    aliases: &'a AliasMap,
}

impl Attrs<'_> {
    fn text(&self, canonical: &str) -> Result<String, HisError> {
        let name = self.aliases.name(canonical);
        match self.values.get(name).map(|v| v.trim()) {
            Some(v) if !v.is_empty() => Ok(v.to_string()),
            _ => Err(HisError::MissingAttribute {
                element: self.element.to_string(),
                attribute: name.to_string(),
                position: self.position,
            }),
        }
    }

    fn timestamp(&self, canonical: &str) -> Result<NaiveDateTime, HisError> {
        let raw = self.text(canonical)?;
        timefmt::parse_his_timestamp(&raw)
            .ok_or_else(|| HisError::BadTimestamp { attribute: self.aliases.name(canonical).to_string(), value: raw })
    }
}

/// Parses a session document using canonical names.
pub fn parse_session(xml: &str) -> Result<Session, HisError> {
    parse_session_with(xml, &AliasMap::default())
}

/// Parses a session document, translating names through `aliases`.
pub fn parse_session_with(xml: &str, aliases: &AliasMap) -> Result<Session, HisError> {
    let mut reader = Reader::from_str(xml);
    let session_name = aliases.name("session");
    let report_name = aliases.name("report");
    let description_name = aliases.name("description");

    let mut session: Option<Session> = None;
    let mut finished = false;
    // Open report (attributes parsed) and its description buffer.
    let mut report: Option<RadiologyReport> = None;
    let mut in_description = false;
    let mut description = String::new();
    // Depth of elements we do not interpret.
    let mut skip_depth = 0usize;

    loop {
        let position = reader.buffer_position();
        let event = reader.read_event().map_err(|e| xml_error(&reader, e))?;
        match event {
            Event::Start(ref start) | Event::Empty(ref start) => {
                let is_empty = matches!(event, Event::Empty(_));
                let name = start.name().as_ref().to_string();
                if finished {
                    return Err(HisError::Parse { position, message: "content after root element".into() });
                }
                if skip_depth > 0 || in_description {
                    if !is_empty {
                        skip_depth += 1;
                    }
                    continue;
                }
                match &session {
                    None => {
                        if name != session_name {
                            return Err(HisError::Parse {
                                position,
                                message: format!("root element is <{name}>, expected <{session_name}>"),
                            });
                        }
                        let attrs =
                            Attrs { element: session_name, position, values: attributes(&reader, start)?, aliases };
                        let s = Session {
                            session_id: attrs.text("id")?,
                            patient_id: attrs.text("patient_id")?,
                            check_in_time: attrs.timestamp("check_in_time")?,
                            check_out_time: attrs.timestamp("check_out_time")?,
                            reports: Vec::new(),
                        };
                        if s.check_in_time > s.check_out_time {
                            return Err(HisError::InconsistentSession {
                                session_id: s.session_id,
                                check_in: timefmt::format_timestamp(&s.check_in_time),
                                check_out: timefmt::format_timestamp(&s.check_out_time),
                            });
                        }
                        session = Some(s);
                        if is_empty {
                            finished = true;
                        }
                    }
                    Some(_) if report.is_none() && name == report_name => {
                        let attrs =
                            Attrs { element: report_name, position, values: attributes(&reader, start)?, aliases };
                        let r = RadiologyReport {
                            service_id: attrs.text("service_id")?,
                            report_time: attrs.timestamp("report_time")?,
                            description: String::new(),
                        };
                        if is_empty {
                            session.as_mut().expect("session open").reports.push(r);
                        } else {
                            report = Some(r);
                        }
                    }
                    Some(_) if report.is_some() && name == description_name => {
                        if !is_empty {
                            in_description = true;
                            description.clear();
                        }
                    }
                    Some(_) => {
                        if !is_empty {
                            skip_depth += 1;
                        }
                    }
                }
            }
            Event::End(_) => {
                if skip_depth > 0 {
                    skip_depth -= 1;
                } else if in_description {
                    in_description = false;
                    if let Some(r) = report.as_mut() {
                        r.description = description.trim().to_string();
                    }
                } else if let Some(r) = report.take() {
                    session.as_mut().expect("session open").reports.push(r);
                } else if session.is_some() {
                    finished = true;
                }
            }
            Event::Text(text) if in_description && skip_depth == 0 => {
                description.push_str(&text.xml10_content());
            }
            Event::CData(data) if in_description && skip_depth == 0 => {
                description.push_str(&data.xml10_content());
            }
            Event::GeneralRef(entity) if in_description && skip_depth == 0 => {
                if let Some(ch) = entity.resolve_char_ref().map_err(|e| xml_error(&reader, e))? {
                    description.push(ch);
                } else {
                    let name = entity.xml10_content();
                    let resolved = resolve_predefined_entity(&name)
                        .ok_or_else(|| HisError::Parse { position, message: format!("unknown entity '&{name};'") })?;
                    description.push_str(resolved);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }

    match session {
        Some(s) if finished => Ok(s),
        Some(_) => Err(HisError::Parse {
            position: reader.buffer_position(),
            message: format!("unclosed <{session_name}> element"),
        }),
        None => Err(HisError::Parse { position: 0, message: "document has no root element".into() }),
    }
}

/// Reports whose service ID equals `cxr_service_id` after trimming, in order.
pub fn filter_cxr_reports(session: &Session, cxr_service_id: &str) -> Vec<RadiologyReport> {
    let wanted = cxr_service_id.trim();
    session.reports.iter().filter(|r| r.service_id.trim() == wanted).cloned().collect()
}

impl Session {
    /// Copy of this session keeping only CXR-service reports.
    pub fn cxr_only(&self, cxr_service_id: &str) -> Session {
        Session { reports: filter_cxr_reports(self, cxr_service_id), ..self.clone() }
    }

    /// Serializes to the canonical XML schema.
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<session id=\"{}\" patient_id=\"{}\" check_in_time=\"{}\" check_out_time=\"{}\">",
            escape(self.session_id.as_str()),
            escape(self.patient_id.as_str()),
            timefmt::format_timestamp(&self.check_in_time),
            timefmt::format_timestamp(&self.check_out_time),
        );
        for r in &self.reports {
            let _ = writeln!(
                out,
                "  <report service_id=\"{}\" report_time=\"{}\">\n    <description>{}</description>\n  </report>",
                escape(r.service_id.as_str()),
                timefmt::format_timestamp(&r.report_time),
                escape(r.description.as_str()),
            );
        }
        out.push_str("</session>\n");
        out
    }
}
