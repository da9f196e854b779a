//! Three-stage gated AI cascade: PA-view gate, abnormality gate, lesion detector.
//!
//! The learned models are replaced by the [`Scorer`] trait. A study only reaches
//! the abnormality classifier when its PA probability is strictly greater than
//! the PA threshold, and only reaches the detector when its abnormal
//! probability is strictly greater than the abnormality threshold.

mod lesion;
mod stub;

use std::fmt;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pacs_ingest::StudyMeta;
use crate::timefmt;
use crate::Finding;

pub use lesion::{BoxError, LesionBox, LesionClass};
pub use stub::{ConfigError, FallbackConfig, ScoreOverride, StubConfig, StubEntry, StubPattern, StubScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AiStatus {
    Invalid,
    Normal,
    Abnormal,
}

impl AiStatus {
    /// The binary outcome compared against report labels; `None` for invalid images.
    pub fn finding(self) -> Option<Finding> {
        match self {
            AiStatus::Invalid => None,
            AiStatus::Normal => Some(Finding::Normal),
            AiStatus::Abnormal => Some(Finding::Abnormal),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AiStatus::Invalid => "invalid",
            AiStatus::Normal => "normal",
            AiStatus::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for AiStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cascade stage, used to attribute scorer failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    PaClassifier,
    AbnormalityClassifier,
    LesionDetector,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::PaClassifier => "pa-classifier",
            Stage::AbnormalityClassifier => "abnormality-classifier",
            Stage::LesionDetector => "lesion-detector",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct ScorerError(pub String);

/// Stand-in for the three trained models. Implementations must be
/// deterministic for a fixed configuration.
pub trait Scorer: Send + Sync {
    /// Probability that the image is a posterior-anterior chest radiograph.
    fn pa_score(&self, study: &StudyMeta) -> Result<f64, ScorerError>;
    /// Probability that the image contains abnormal findings.
    fn abnormal_score(&self, study: &StudyMeta) -> Result<f64, ScorerError>;
    fn detect(&self, study: &StudyMeta) -> Result<Vec<LesionBox>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn pa_score(&self, study: &StudyMeta) -> Result<f64, ScorerError> {
        (**self).pa_score(study)
    }
    fn abnormal_score(&self, study: &StudyMeta) -> Result<f64, ScorerError> {
        (**self).abnormal_score(study)
    }
    fn detect(&self, study: &StudyMeta) -> Result<Vec<LesionBox>, ScorerError> {
        (**self).detect(study)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("cascade error in {stage} for study {study_uid}: {message}")]
pub struct CascadeError {
    pub stage: Stage,
    pub study_uid: String,
    pub patient_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid threshold {name}={value}: must lie strictly between 0 and 1")]
pub struct ThresholdError {
    pub name: &'static str,
    pub value: f64,
}

/// Gate thresholds. A probability must be strictly greater than its
/// threshold to pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub pa: f64,
    pub abnormal: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { pa: 0.5, abnormal: 0.5 }
    }
}

impl Thresholds {
    pub fn new(pa: f64, abnormal: f64) -> Result<Self, ThresholdError> {
        for (name, value) in [("pa", pa), ("abnormal", abnormal)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(ThresholdError { name, value });
            }
        }
        Ok(Thresholds { pa, abnormal })
    }

    /// Status as a pure function of the two probabilities.
    pub fn classify(&self, pa_probability: f64, abnormal_probability: Option<f64>) -> AiStatus {
        if pa_probability <= self.pa {
            return AiStatus::Invalid;
        }
        match abnormal_probability {
            Some(p) if p > self.abnormal => AiStatus::Abnormal,
            _ => AiStatus::Normal,
        }
    }
}

/// Output of the cascade for one admitted study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AiResultRecord", into = "AiResultRecord")]
pub struct AiResult {
    pub study_uid: String,
    pub patient_id: String,
    pub study_time: NaiveDateTime,
    pub status: AiStatus,
    pub pa_probability: f64,
    pub abnormal_probability: Option<f64>,
    pub lesions: Vec<LesionBox>,
}

impl AiResult {
    pub fn abnormal_status(&self) -> u8 {
        u8::from(self.status == AiStatus::Abnormal)
    }

    fn check(&self) -> Result<(), String> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.pa_probability) {
            return Err(format!("pa_probability {} outside [0,1]", self.pa_probability));
        }
        match (self.status, self.abnormal_probability) {
            (AiStatus::Invalid, Some(_)) => return Err("invalid result carries an abnormal probability".into()),
            (AiStatus::Normal | AiStatus::Abnormal, None) => {
                return Err(format!("{} result lacks an abnormal probability", self.status))
            }
            (_, Some(p)) if !prob_ok(p) => return Err(format!("abnormal_probability {p} outside [0,1]")),
            _ => {}
        }
        if self.status != AiStatus::Abnormal && !self.lesions.is_empty() {
            return Err(format!("{} result carries lesion boxes", self.status));
        }
        Ok(())
    }
}

/// Wire form of [`AiResult`]: adds the 0/1 `ABNORMAL_STATUS` field.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct AiResultRecord {
    study_uid: String,
    patient_id: String,
    #[serde(with = "timefmt::serde_ts")]
    study_time: NaiveDateTime,
    status: AiStatus,
    #[serde(rename = "ABNORMAL_STATUS")]
    abnormal_status: u8,
    pa_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    abnormal_probability: Option<f64>,
    #[serde(default)]
    lesions: Vec<LesionBox>,
}

impl From<AiResult> for AiResultRecord {
    fn from(r: AiResult) -> Self {
        AiResultRecord {
            abnormal_status: r.abnormal_status(),
            study_uid: r.study_uid,
            patient_id: r.patient_id,
            study_time: r.study_time,
            status: r.status,
            pa_probability: r.pa_probability,
            abnormal_probability: r.abnormal_probability,
            lesions: r.lesions,
        }
    }
}

impl TryFrom<AiResultRecord> for AiResult {
    type Error = String;

    fn try_from(rec: AiResultRecord) -> Result<Self, Self::Error> {
        let expected = u8::from(rec.status == AiStatus::Abnormal);
        if rec.abnormal_status != expected {
            return Err(format!("ABNORMAL_STATUS={} contradicts status '{}'", rec.abnormal_status, rec.status));
        }
        let result = AiResult {
            study_uid: rec.study_uid,
            patient_id: rec.patient_id,
            study_time: rec.study_time,
            status: rec.status,
            pa_probability: rec.pa_probability,
            abnormal_probability: rec.abnormal_probability,
            lesions: rec.lesions,
        };
        result.check()?;
        Ok(result)
    }
}

fn probability(stage: Stage, meta: &StudyMeta, score: Result<f64, ScorerError>) -> Result<f64, CascadeError> {
    let fail = |message: String| CascadeError {
        stage,
        study_uid: meta.study_uid.clone(),
        patient_id: meta.patient_id.clone(),
        message,
    };
    match score {
        Ok(p) if (0.0..=1.0).contains(&p) => Ok(p),
        Ok(p) => Err(fail(format!("score {p} outside [0,1]"))),
        Err(e) => Err(fail(e.0)),
    }
}

/// Runs one admitted study through the gated cascade.
///
/// A scorer failure at any stage yields a [`CascadeError`] naming that stage;
/// the study must then be reported as errored, never as normal.
pub fn run_cascade<S: Scorer + ?Sized>(
    meta: &StudyMeta,
    scorer: &S,
    thresholds: Thresholds,
) -> Result<AiResult, CascadeError> {
    let mut result = AiResult {
        study_uid: meta.study_uid.clone(),
        patient_id: meta.patient_id.clone(),
        study_time: meta.study_time,
        status: AiStatus::Invalid,
        pa_probability: probability(Stage::PaClassifier, meta, scorer.pa_score(meta))?,
        abnormal_probability: None,
        lesions: Vec::new(),
    };
    if result.pa_probability <= thresholds.pa {
        return Ok(result);
    }

    let abnormal = probability(Stage::AbnormalityClassifier, meta, scorer.abnormal_score(meta))?;
    result.abnormal_probability = Some(abnormal);
    if abnormal <= thresholds.abnormal {
        result.status = AiStatus::Normal;
        return Ok(result);
    }

    result.lesions = scorer.detect(meta).map_err(|e| CascadeError {
        stage: Stage::LesionDetector,
        study_uid: meta.study_uid.clone(),
        patient_id: meta.patient_id.clone(),
        message: e.0,
    })?;
    result.status = AiStatus::Abnormal;
    Ok(result)
}
