//! Imaging-study ingestion from a PACS export.
//!
//! Two sources are supported: a directory of DICOM part-10 files and a
//! DICOMweb study-metadata JSON document. Either way every study is reduced to
//! a [`StudyMeta`] and run through the chest-radiograph filter ([`is_cxr`]);
//! only accepted studies leave this module through [`IngestBatch::accepted`].

mod dicom;
mod dicomweb;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timefmt;

pub use dicom::{parse_dicom_meta, read_dicom_attributes, TransferSyntax};
pub use dicomweb::{parse_dicomweb_json, read_dicomweb_attributes};

/// A DICOM attribute tag, `(group,element)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag(pub u16, pub u16);

impl Tag {
    pub const TRANSFER_SYNTAX_UID: Tag = Tag(0x0002, 0x0010);
    pub const STUDY_DATE: Tag = Tag(0x0008, 0x0020);
    pub const STUDY_TIME: Tag = Tag(0x0008, 0x0030);
    pub const MODALITY: Tag = Tag(0x0008, 0x0060);
    pub const PATIENT_ID: Tag = Tag(0x0010, 0x0020);
    pub const BODY_PART_EXAMINED: Tag = Tag(0x0018, 0x0015);
    pub const STUDY_INSTANCE_UID: Tag = Tag(0x0020, 0x000D);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);

    /// The attributes a study needs to enter the pipeline.
    pub const REQUIRED: [Tag; 6] = [
        Tag::PATIENT_ID,
        Tag::STUDY_DATE,
        Tag::STUDY_TIME,
        Tag::MODALITY,
        Tag::BODY_PART_EXAMINED,
        Tag::STUDY_INSTANCE_UID,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Tag::TRANSFER_SYNTAX_UID => "TransferSyntaxUID",
            Tag::STUDY_DATE => "StudyDate",
            Tag::STUDY_TIME => "StudyTime",
            Tag::MODALITY => "Modality",
            Tag::PATIENT_ID => "PatientID",
            Tag::BODY_PART_EXAMINED => "BodyPartExamined",
            Tag::STUDY_INSTANCE_UID => "StudyInstanceUID",
            Tag::PIXEL_DATA => "PixelData",
            _ => "Unknown",
        }
    }

    /// DICOMweb JSON key form, e.g. `00080060`.
    pub fn json_key(self) -> String {
        format!("{:04X}{:04X}", self.0, self.1)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X}) {}", self.0, self.1, self.keyword())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed DICOM file: {0}")]
    MalformedFile(String),
    #[error("unsupported transfer syntax '{0}'")]
    UnsupportedSyntax(String),
    #[error("missing required tag {0}")]
    MissingTag(Tag),
    #[error("unparseable study date/time '{date}' '{time}'")]
    BadTimestamp { date: String, time: String },
    #[error("DICOMweb JSON parse error: {0}")]
    Parse(String),
    #[error("duplicate StudyInstanceUID '{uid}' in {first} and {second}")]
    DuplicateStudyUid { uid: String, first: String, second: String },
    #[error("{path}: {source}")]
    Source {
        path: String,
        #[source]
        source: Box<IngestError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    fn at(self, path: impl Into<String>) -> IngestError {
        IngestError::Source { path: path.into(), source: Box::new(self) }
    }
}

/// DICOM-derived identity of one imaging study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub patient_id: String,
    pub study_uid: String,
    #[serde(with = "timefmt::serde_ts")]
    pub study_time: NaiveDateTime,
    pub modality: String,
    pub body_part: String,
    pub source_uri: String,
}

/// Raw attribute values as read from a file or JSON object, before validation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StudyAttributes {
    pub patient_id: Option<String>,
    pub study_date: Option<String>,
    pub study_time: Option<String>,
    pub modality: Option<String>,
    pub body_part: Option<String>,
    pub study_uid: Option<String>,
}

impl StudyAttributes {
    pub(crate) fn set(&mut self, tag: Tag, value: String) {
        let slot = match tag {
            Tag::PATIENT_ID => &mut self.patient_id,
            Tag::STUDY_DATE => &mut self.study_date,
            Tag::STUDY_TIME => &mut self.study_time,
            Tag::MODALITY => &mut self.modality,
            Tag::BODY_PART_EXAMINED => &mut self.body_part,
            Tag::STUDY_INSTANCE_UID => &mut self.study_uid,
            _ => return,
        };
        *slot = Some(value);
    }

    fn get(&self, tag: Tag) -> Option<&str> {
        let slot = match tag {
            Tag::PATIENT_ID => &self.patient_id,
            Tag::STUDY_DATE => &self.study_date,
            Tag::STUDY_TIME => &self.study_time,
            Tag::MODALITY => &self.modality,
            Tag::BODY_PART_EXAMINED => &self.body_part,
            Tag::STUDY_INSTANCE_UID => &self.study_uid,
            _ => return None,
        };
        slot.as_deref().map(str::trim).filter(|v| !v.is_empty())
    }

    /// First required tag that is absent or blank.
    pub fn first_missing(&self) -> Option<Tag> {
        Tag::REQUIRED.into_iter().find(|&tag| self.get(tag).is_none())
    }

    pub fn into_meta(self, source_uri: impl Into<String>) -> Result<StudyMeta, IngestError> {
        if let Some(tag) = self.first_missing() {
            return Err(IngestError::MissingTag(tag));
        }
        let field = |tag| self.get(tag).unwrap_or_default().to_string();
        let (date, time) = (field(Tag::STUDY_DATE), field(Tag::STUDY_TIME));
        let study_time = timefmt::parse_dicom_datetime(&date, &time).ok_or(IngestError::BadTimestamp { date, time })?;
        Ok(StudyMeta {
            patient_id: field(Tag::PATIENT_ID),
            study_uid: field(Tag::STUDY_INSTANCE_UID),
            study_time,
            modality: field(Tag::MODALITY),
            body_part: field(Tag::BODY_PART_EXAMINED),
            source_uri: source_uri.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterReason {
    Accepted,
    BadModality,
    BadBodyPart,
    MissingTag,
}

/// Outcome of the chest-radiograph filter for one study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub accepted: bool,
    pub reason: FilterReason,
}

impl FilterDecision {
    pub fn accept() -> Self {
        FilterDecision { accepted: true, reason: FilterReason::Accepted }
    }

    pub fn reject(reason: FilterReason) -> Self {
        debug_assert_ne!(reason, FilterReason::Accepted);
        FilterDecision { accepted: false, reason }
    }
}

pub const CXR_MODALITIES: [&str; 3] = ["CR", "DR", "DX"];
pub const CXR_BODY_PARTS: [&str; 2] = ["CHEST", "THORAX"];

/// Chest-radiograph admission rule: modality in {CR, DR, DX} and body part in
/// {CHEST, THORAX}, compared after trimming and upper-casing.
pub fn is_cxr(meta: &StudyMeta) -> FilterDecision {
    let modality = meta.modality.trim().to_ascii_uppercase();
    if !CXR_MODALITIES.contains(&modality.as_str()) {
        return FilterDecision::reject(FilterReason::BadModality);
    }
    let body_part = meta.body_part.trim().to_ascii_uppercase();
    if !CXR_BODY_PARTS.contains(&body_part.as_str()) {
        return FilterDecision::reject(FilterReason::BadBodyPart);
    }
    FilterDecision::accept()
}

/// One ingested source record with its filter verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestRecord {
    pub source_uri: String,
    pub decision: FilterDecision,
    /// Present for every record that parsed; absent when a required tag was missing.
    pub meta: Option<StudyMeta>,
    pub patient_id: Option<String>,
    pub detail: Option<String>,
}

impl IngestRecord {
    fn from_attributes(attrs: StudyAttributes, source_uri: String) -> Result<Self, IngestError> {
        let patient_id = attrs.patient_id.as_deref().map(str::trim).filter(|p| !p.is_empty());
        let patient_id = patient_id.map(str::to_string);
        match attrs.into_meta(source_uri.clone()) {
            Ok(meta) => {
                Ok(IngestRecord { source_uri, decision: is_cxr(&meta), patient_id, meta: Some(meta), detail: None })
            }
            Err(IngestError::MissingTag(tag)) => Ok(IngestRecord {
                source_uri,
                decision: FilterDecision::reject(FilterReason::MissingTag),
                meta: None,
                patient_id,
                detail: Some(tag.to_string()),
            }),
            Err(e) => Err(e.at(source_uri)),
        }
    }

    pub fn manifest_line(&self) -> ManifestLine {
        ManifestLine {
            source_uri: self.source_uri.clone(),
            accepted: self.decision.accepted,
            reason: self.decision.reason,
            patient_id: self.patient_id.clone(),
            study_time: self.meta.as_ref().map(|m| timefmt::format_timestamp(&m.study_time)),
        }
    }
}

/// One line of the ingestion manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub source_uri: String,
    pub accepted: bool,
    pub reason: FilterReason,
    pub patient_id: Option<String>,
    pub study_time: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct IngestBatch {
    pub records: Vec<IngestRecord>,
}

impl IngestBatch {
    fn from_records(records: Vec<IngestRecord>) -> Result<Self, IngestError> {
        let mut seen: std::collections::HashMap<&str, &str> = Default::default();
        for record in &records {
            if let Some(meta) = &record.meta {
                if let Some(first) = seen.insert(&meta.study_uid, &record.source_uri) {
                    return Err(IngestError::DuplicateStudyUid {
                        uid: meta.study_uid.clone(),
                        first: first.to_string(),
                        second: record.source_uri.clone(),
                    });
                }
            }
        }
        Ok(IngestBatch { records })
    }

    /// Studies that passed the chest-radiograph filter, in source order.
    pub fn accepted(&self) -> Vec<StudyMeta> {
        self.records.iter().filter(|r| r.decision.accepted).filter_map(|r| r.meta.clone()).collect()
    }

    pub fn rejected_count(&self) -> usize {
        self.records.iter().filter(|r| !r.decision.accepted).count()
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        if entry.file_type()?.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Reads every file under `dir` (recursively, sorted by path) as a DICOM
/// part-10 file. Files are parsed in parallel.
pub fn ingest_dicom_dir(dir: &Path) -> Result<IngestBatch, IngestError> {
    let mut files = Vec::new();
    collect_files(dir, &mut files).map_err(|e| IngestError::from(e).at(dir.display().to_string()))?;
    files.sort();
    let records = files
        .par_iter()
        .map(|path| {
            let uri = path.display().to_string();
            let file = fs::File::open(path).map_err(|e| IngestError::from(e).at(uri.clone()))?;
            let attrs = read_dicom_attributes(std::io::BufReader::new(file)).map_err(|e| e.at(uri.clone()))?;
            IngestRecord::from_attributes(attrs, uri)
        })
        .collect::<Result<Vec<_>, _>>()?;
    IngestBatch::from_records(records)
}

/// Reads a DICOMweb study-metadata JSON file. Each array element gets the
/// source URI `<path>#<index>`.
pub fn ingest_dicomweb_file(path: &Path) -> Result<IngestBatch, IngestError> {
    let uri = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| IngestError::from(e).at(uri.clone()))?;
    let attrs = read_dicomweb_attributes(&text).map_err(|e| e.at(uri.clone()))?;
    let records = attrs
        .into_iter()
        .enumerate()
        .map(|(i, a)| IngestRecord::from_attributes(a, format!("{uri}#{i}")))
        .collect::<Result<Vec<_>, _>>()?;
    IngestBatch::from_records(records)
}
