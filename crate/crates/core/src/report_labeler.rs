//! Ground-truth labeling of radiology reports by normal-template containment.
//!
//! A report is normal when, for each of the four anatomical regions, at least
//! one of that region's normal-description templates appears verbatim in the
//! normalized description.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::Finding;

const DEFAULT_TEMPLATES: &str = include_str!("../assets/normal_templates.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    ChestWall,
    Pleura,
    Lung,
    Mediastinum,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::ChestWall, Region::Pleura, Region::Lung, Region::Mediastinum];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::ChestWall => "chest_wall",
            Region::Pleura => "pleura",
            Region::Lung => "lung",
            Region::Mediastinum => "mediastinum",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("template set has no entries for region {0}")]
    MissingRegion(Region),
    #[error("template set has an empty template for region {0}")]
    EmptyTemplate(Region),
}

/// Normal-description templates per region, stored normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<Region, Vec<String>>,
}

impl TemplateSet {
    pub fn new(templates: BTreeMap<Region, Vec<String>>) -> Result<Self, TemplateError> {
        let mut normalized = BTreeMap::new();
        for region in Region::ALL {
            let list = templates.get(&region).filter(|l| !l.is_empty());
            let list = list.ok_or(TemplateError::MissingRegion(region))?;
            let list: Vec<String> = list.iter().map(|t| normalize_text(t)).collect();
            if list.iter().any(String::is_empty) {
                return Err(TemplateError::EmptyTemplate(region));
            }
            normalized.insert(region, list);
        }
        Ok(TemplateSet { templates: normalized })
    }

    pub fn from_json(text: &str) -> Result<Self, TemplateError> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn get(&self, region: Region) -> &[String] {
        self.templates.get(&region).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.templates).expect("templates serialize")
    }
}

impl Default for TemplateSet {
    /// The eight shipped normal-description templates.
    fn default() -> Self {
        TemplateSet::from_json(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

/// Per-report labeling outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportLabel {
    pub overall: Finding,
    pub region_normal: BTreeMap<Region, bool>,
    pub empty_description: bool,
}

/// NFC composition, lowercase, whitespace runs collapsed to one space, trimmed.
pub fn normalize_text(s: &str) -> String {
    let lowered: String = s.nfc().flat_map(char::to_lowercase).collect();
    let composed: String = lowered.nfc().collect();
    composed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when any of the region's templates is a substring of `description`.
/// Both sides must already be normalized.
pub fn label_region(description: &str, region: Region, templates: &TemplateSet) -> bool {
    !description.is_empty() && templates.get(region).iter().any(|t| description.contains(t.as_str()))
}

pub fn label_report(description: &str, templates: &TemplateSet) -> ReportLabel {
    let normalized = normalize_text(description);
    let region_normal: BTreeMap<Region, bool> =
        Region::ALL.into_iter().map(|r| (r, label_region(&normalized, r, templates))).collect();
    let overall = if region_normal.values().all(|&ok| ok) { Finding::Normal } else { Finding::Abnormal };
    ReportLabel { overall, region_normal, empty_description: normalized.is_empty() }
}
