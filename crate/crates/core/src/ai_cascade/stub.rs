//! Deterministic stand-in scorer configured from JSON.
//!
//! Scores are resolved per study UID: an explicit entry wins, then the first
//! matching regex pattern, then a seeded-hash fallback. Fields an entry leaves
//! out fall through to the hash.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{LesionBox, LesionClass, Scorer, ScorerError, Stage};
use crate::pacs_ingest::StudyMeta;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("scorer config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scorer config: {0}")]
    Invalid(String),
}

/// Fixed scores for one UID or pattern.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abn: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesions: Option<Vec<LesionBox>>,
    /// Makes the named stage fail, to exercise the error channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubEntry {
    pub uid: String,
    #[serde(flatten)]
    pub scores: ScoreOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubPattern {
    /// Regular expression matched against the study UID.
    pub pattern: String,
    #[serde(flatten)]
    pub scores: ScoreOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FallbackConfig {
    /// Fraction of hashed studies whose PA score falls at or below 0.5.
    pub invalid_rate: f64,
    /// Fraction of hashed studies whose abnormal score lies above 0.5.
    pub abnormal_rate: f64,
    pub max_lesions: usize,
}

impl Default for FallbackConfig {
    fn default() -> Self {
        FallbackConfig { invalid_rate: 0.0, abnormal_rate: 0.5, max_lesions: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StubConfig {
    pub studies: Vec<StubEntry>,
    pub patterns: Vec<StubPattern>,
    pub fallback: FallbackConfig,
}

impl StubConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let check = |what: &str, p: Option<f64>| match p {
            Some(p) if !(0.0..=1.0).contains(&p) => {
                Err(ConfigError::Invalid(format!("{what} score {p} outside [0,1]")))
            }
            _ => Ok(()),
        };
        let overrides = self
            .studies
            .iter()
            .map(|e| (e.uid.as_str(), &e.scores))
            .chain(self.patterns.iter().map(|p| (p.pattern.as_str(), &p.scores)));
        for (key, scores) in overrides {
            check(&format!("{key}: pa"), scores.pa)?;
            check(&format!("{key}: abn"), scores.abn)?;
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.studies {
            if !seen.insert(e.uid.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate entry for uid '{}'", e.uid)));
            }
        }
        let fb = &self.fallback;
        for (name, rate) in [("invalid_rate", fb.invalid_rate), ("abnormal_rate", fb.abnormal_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(ConfigError::Invalid(format!("fallback {name} {rate} outside [0,1]")));
            }
        }
        if fb.max_lesions == 0 {
            return Err(ConfigError::Invalid("fallback max_lesions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Deterministic scorer built from a [`StubConfig`] and a seed.
#[derive(Debug, Clone)]
pub struct StubScorer {
    config: StubConfig,
    patterns: Vec<Regex>,
    index: std::collections::HashMap<String, usize>,
    seed: u64,
}

impl StubScorer {
    pub fn new(config: StubConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let patterns = config
            .patterns
            .iter()
            .map(|p| Regex::new(&p.pattern).map_err(|e| ConfigError::Invalid(format!("pattern '{}': {e}", p.pattern))))
            .collect::<Result<_, _>>()?;
        let index = config.studies.iter().enumerate().map(|(i, e)| (e.uid.clone(), i)).collect();
        Ok(StubScorer { config, patterns, index, seed })
    }

    pub fn from_json(text: &str, seed: u64) -> Result<Self, ConfigError> {
        Self::new(StubConfig::from_json(text)?, seed)
    }

    fn overrides(&self, uid: &str) -> impl Iterator<Item = &ScoreOverride> {
        let explicit = self.index.get(uid).map(|&i| &self.config.studies[i].scores);
        let pattern = self.patterns.iter().position(|re| re.is_match(uid)).map(|i| &self.config.patterns[i].scores);
        explicit.into_iter().chain(pattern)
    }

    fn check_failure(&self, uid: &str, stage: Stage) -> Result<(), ScorerError> {
        match self.overrides(uid).find_map(|o| o.fail) {
            Some(s) if s == stage => Err(ScorerError(format!("configured failure at {stage}"))),
            _ => Ok(()),
        }
    }

    fn digest(&self, stage: Stage, uid: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"cxrval-stub\0");
        hasher.update(self.seed.to_le_bytes());
        hasher.update(stage.to_string().as_bytes());
        hasher.update([0]);
        hasher.update(uid.as_bytes());
        hasher.finalize().into()
    }

    /// Uniform value in [0,1) derived from (seed, stage, uid).
    pub fn unit(&self, stage: Stage, uid: &str) -> f64 {
        let d = self.digest(stage, uid);
        let bits = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn hashed_pa(&self, uid: &str) -> f64 {
        let u = self.unit(Stage::PaClassifier, uid);
        let q = self.config.fallback.invalid_rate;
        if u < q {
            0.5 * u / q
        } else {
            (0.5 + 0.5 * (u - q) / (1.0 - q)).max(0.500_001)
        }
    }

    fn hashed_abnormal(&self, uid: &str) -> f64 {
        let u = self.unit(Stage::AbnormalityClassifier, uid);
        let a = self.config.fallback.abnormal_rate;
        if u < a {
            (0.5 + 0.5 * (1.0 - u / a)).max(0.500_001)
        } else {
            0.5 * (1.0 - u) / (1.0 - a)
        }
    }

    fn hashed_boxes(&self, uid: &str) -> Vec<LesionBox> {
        let mut rng = ChaCha8Rng::from_seed(self.digest(Stage::LesionDetector, uid));
        let n = rng.random_range(1..=self.config.fallback.max_lesions);
        (0..n)
            .map(|_| {
                let class = LesionClass::ALL[rng.random_range(0..LesionClass::ALL.len())];
                let (w, h) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3));
                let (x, y) = (rng.random_range(0.0..1.0 - w), rng.random_range(0.0..1.0 - h));
                let confidence = rng.random_range(0.3..1.0);
                LesionBox::new(class, x, y, x + w, y + h, confidence).expect("generated box is valid")
            })
            .collect()
    }
}

impl Scorer for StubScorer {
    fn pa_score(&self, study: &StudyMeta) -> Result<f64, ScorerError> {
        let uid = study.study_uid.as_str();
        self.check_failure(uid, Stage::PaClassifier)?;
        Ok(self.overrides(uid).find_map(|o| o.pa).unwrap_or_else(|| self.hashed_pa(uid)))
    }

    fn abnormal_score(&self, study: &StudyMeta) -> Result<f64, ScorerError> {
        let uid = study.study_uid.as_str();
        self.check_failure(uid, Stage::AbnormalityClassifier)?;
        Ok(self.overrides(uid).find_map(|o| o.abn).unwrap_or_else(|| self.hashed_abnormal(uid)))
    }

    fn detect(&self, study: &StudyMeta) -> Result<Vec<LesionBox>, ScorerError> {
        let uid = study.study_uid.as_str();
        self.check_failure(uid, Stage::LesionDetector)?;
        Ok(self.overrides(uid).find_map(|o| o.lesions.clone()).unwrap_or_else(|| self.hashed_boxes(uid)))
    }
}
