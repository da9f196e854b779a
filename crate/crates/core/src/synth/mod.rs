//! Deterministic synthetic corpora for end-to-end runs.
//!
//! A [`CorpusSpec`] fixes the confusion counts, the unmatched tallies and the
//! number of invalid/errored studies the full pipeline must produce. The
//! generator writes PACS fixtures, one HIS XML file per session and a stub
//! scorer config that realize exactly those numbers, plus a manifest stating
//! the intended outcome of every record.

pub mod dicom_writer;

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::ai_cascade::{LesionBox, LesionClass, ScoreOverride, Stage, StubConfig, StubEntry};
use crate::evaluator::ConfusionCounts;
use crate::his_parser::{RadiologyReport, Session};
use crate::pacs_ingest::{FilterReason, Tag, TransferSyntax};
use crate::report_labeler::{Region, TemplateSet};
use crate::timefmt;
use crate::Finding;

use dicom_writer::DicomFixture;

pub const MANIFEST_SCHEMA: &str = "cxrval/synth-manifest@1";
pub const DEFAULT_SERVICE_ID: &str = "18.0001.0001";
pub const RUN_CONFIG_FILE: &str = "cxrval.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("inconsistent corpus spec: {0}")]
    Inconsistent(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Report delays, drawn uniformly from a grid over `[min_hours, max_hours]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayProfile {
    pub min_hours: f64,
    pub max_hours: f64,
    pub step_minutes: u32,
}

impl Default for DelayProfile {
    fn default() -> Self {
        DelayProfile { min_hours: 0.0, max_hours: 24.0, step_minutes: 60 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PacsFormat {
    #[default]
    Dicom,
    Dicomweb,
}

fn default_service_id() -> String {
    DEFAULT_SERVICE_ID.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    /// Admitted chest radiographs: matched + unmatched AI + invalid + errored.
    pub n_studies: usize,
    pub target_counts: ConfusionCounts,
    #[serde(default)]
    pub unmatched_ai: usize,
    #[serde(default)]
    pub unmatched_reports: usize,
    #[serde(default)]
    pub invalid_rate: f64,
    /// Studies whose scorer fails at the abnormality stage.
    #[serde(default)]
    pub errored: usize,
    /// Extra non-chest studies the CXR filter must reject.
    #[serde(default)]
    pub non_cxr: usize,
    pub seed: u64,
    #[serde(default)]
    pub time_window_profile: DelayProfile,
    #[serde(default)]
    pub format: PacsFormat,
    #[serde(default = "default_service_id")]
    pub service_id: String,
}

impl CorpusSpec {
    /// Spec whose only studies are the matched pairs realizing `counts`.
    pub fn from_counts(counts: ConfusionCounts, seed: u64) -> Self {
        CorpusSpec {
            n_studies: counts.total() as usize,
            target_counts: counts,
            unmatched_ai: 0,
            unmatched_reports: 0,
            invalid_rate: 0.0,
            errored: 0,
            non_cxr: 0,
            seed,
            time_window_profile: DelayProfile::default(),
            format: PacsFormat::Dicom,
            service_id: default_service_id(),
        }
    }

    pub fn invalid_count(&self) -> usize {
        (self.invalid_rate * self.n_studies as f64).round() as usize
    }

    pub fn matched(&self) -> usize {
        self.target_counts.total() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Inconsistent(m));
        if !(0.0..1.0).contains(&self.invalid_rate) {
            return bad(format!("invalid_rate {} outside [0,1)", self.invalid_rate));
        }
        let accounted = self.matched() + self.unmatched_ai + self.invalid_count() + self.errored;
        if accounted != self.n_studies {
            return bad(format!(
                "n_studies={} but matched {} + unmatched_ai {} + invalid {} + errored {} = {}",
                self.n_studies,
                self.matched(),
                self.unmatched_ai,
                self.invalid_count(),
                self.errored,
                accounted
            ));
        }
        let p = &self.time_window_profile;
        if !(p.min_hours >= -24.0 && p.max_hours <= 24.0 && p.min_hours <= p.max_hours) {
            return bad(format!("delay interval [{}, {}] h must lie within ±24 h", p.min_hours, p.max_hours));
        }
        if p.step_minutes == 0 {
            return bad("delay step_minutes must be positive".into());
        }
        if self.service_id.trim().is_empty() {
            return bad("service_id is empty".into());
        }
        Ok(())
    }
}

/// Linkage condition an unmatched record was built to violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SamePatient,
    WithinSession,
    WithinWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyOutcome {
    Matched { ai_status: Finding, report_label: Finding, session_id: String, report_index: usize, delay_seconds: i64 },
    UnmatchedAi { violated: Condition },
    Invalid,
    Errored,
    RejectedNonCxr { reason: FilterReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_uid: String,
    pub patient_id: String,
    pub study_time: String,
    pub source: String,
    pub outcome: StudyOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportOutcome {
    Matched { study_uid: String },
    Unmatched { violated: Condition },
    FilteredOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub service_id: String,
    /// Position among the session's CXR-service reports.
    pub cxr_index: Option<usize>,
    pub label: Option<Finding>,
    pub outcome: ReportOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub patient_id: String,
    pub file: String,
    pub reports: Vec<ReportRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedOutcome {
    pub counts: ConfusionCounts,
    pub pairs: usize,
    pub unmatched_ai: usize,
    pub unmatched_reports: usize,
    pub invalid: usize,
    pub errored: usize,
    pub rejected_non_cxr: usize,
    pub zero_delay_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub spec: CorpusSpec,
    pub expected: ExpectedOutcome,
    /// Paths relative to the corpus directory.
    pub pacs_path: String,
    pub his_dir: String,
    pub scorer_config: String,
    pub files: Vec<String>,
    pub studies: Vec<StudyRecord>,
    pub sessions: Vec<SessionRecord>,
}

const CHEST_WALL_LESIONS: [&str; 3] =
    ["gãy cung sau xương sườn VI bên phải", "hình ảnh gãy xương đòn trái", "đặc xương rải rác xương lồng ngực"];
const PLEURA_LESIONS: [&str; 3] =
    ["tràn dịch màng phổi phải lượng ít", "tràn khí màng phổi trái", "dày dính màng phổi đáy phải"];
const LUNG_LESIONS: [&str; 4] = [
    "đám mờ thùy dưới phổi phải",
    "nốt mờ đường kính khoảng 12mm thùy trên phổi trái",
    "tổn thương xơ hóa rải rác hai phổi",
    "hình ảnh xẹp phổi thùy giữa",
];
const MEDIASTINUM_LESIONS: [&str; 3] =
    ["bóng tim to, chỉ số tim ngực khoảng 0,6", "quai động mạch chủ giãn rộng", "trung thất giãn rộng"];

/// Replacement sentences used to make one region abnormal.
pub fn lesion_sentences(region: Region) -> &'static [&'static str] {
    match region {
        Region::ChestWall => &CHEST_WALL_LESIONS,
        Region::Pleura => &PLEURA_LESIONS,
        Region::Lung => &LUNG_LESIONS,
        Region::Mediastinum => &MEDIASTINUM_LESIONS,
    }
}

fn region_heading(region: Region) -> &'static str {
    match region {
        Region::ChestWall => "Khung xương lồng ngực",
        Region::Pleura => "Màng phổi",
        Region::Lung => "Phổi",
        Region::Mediastinum => "Tim, trung thất",
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Builds a report description: one paragraph per region, each a normal
/// template unless it is the `abnormal` region.
pub fn compose_description(rng: &mut impl Rng, templates: &TemplateSet, abnormal: Option<Region>) -> String {
    let mut paragraphs = Vec::with_capacity(5);
    for region in Region::ALL {
        let sentence = if abnormal == Some(region) {
            let options = lesion_sentences(region);
            options[rng.random_range(0..options.len())].to_string()
        } else {
            let options = templates.get(region);
            options[rng.random_range(0..options.len())].clone()
        };
        let sentence = if rng.random_bool(0.5) { capitalize(&sentence) } else { sentence };
        paragraphs.push(format!("{}: {}.", region_heading(region), sentence));
    }
    paragraphs.push(match abnormal {
        None => "Kết luận: chưa phát hiện tổn thương trên phim chụp ngực thẳng.".to_string(),
        Some(_) => "Kết luận: đề nghị đối chiếu lâm sàng.".to_string(),
    });
    paragraphs.join("\n")
}

enum Kind {
    Matched { ai: Finding, label: Finding },
    UnmatchedAi,
    Invalid,
    Errored,
    NonCxr,
}

struct StudyPlan {
    uid: String,
    patient_id: String,
    time: NaiveDateTime,
    modality: &'static str,
    body_part: &'static str,
    scores: Option<ScoreOverride>,
    outcome: StudyOutcome,
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    spec: &'a CorpusSpec,
    templates: TemplateSet,
    next_patient: usize,
    next_session: usize,
    sessions: Vec<(Session, SessionRecord)>,
}

fn base_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 11, 1).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time")
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

impl<'a> Generator<'a> {
    fn patient(&mut self) -> String {
        self.next_patient += 1;
        format!("PT{:06}", self.next_patient)
    }

    fn minutes(&mut self, lo: i64, hi: i64) -> TimeDelta {
        TimeDelta::minutes(self.rng.random_range(lo..=hi))
    }

    fn random_time(&mut self) -> NaiveDateTime {
        // November and December, leaving room for follow-ups inside the period.
        base_time() + TimeDelta::seconds(self.rng.random_range(0..40 * 86_400))
    }

    fn delay(&mut self) -> i64 {
        let p = &self.spec.time_window_profile;
        let lo = (p.min_hours * 3600.0).round() as i64;
        let hi = (p.max_hours * 3600.0).round() as i64;
        let step = i64::from(p.step_minutes) * 60;
        let steps = (hi - lo) / step;
        lo + step * self.rng.random_range(0..=steps)
    }

    fn cxr_labels(&mut self) -> (&'static str, &'static str) {
        const MODALITIES: [&str; 3] = ["CR", "DR", "DX"];
        const BODY_PARTS: [&str; 4] = ["CHEST", "CHEST", "THORAX", "Chest"];
        (MODALITIES[self.rng.random_range(0..MODALITIES.len())], BODY_PARTS[self.rng.random_range(0..BODY_PARTS.len())])
    }

    fn score(&mut self, lo: f64, hi: f64) -> f64 {
        round3(self.rng.random_range(lo..hi))
    }

    fn ai_scores(&mut self, status: Finding) -> ScoreOverride {
        let pa = self.score(0.51, 0.99);
        match status {
            Finding::Normal => ScoreOverride { pa: Some(pa), abn: Some(self.score(0.01, 0.49)), ..Default::default() },
            Finding::Abnormal => {
                let n = self.rng.random_range(1..=2);
                let lesions = (0..n)
                    .map(|_| {
                        let class = LesionClass::ALL[self.rng.random_range(0..LesionClass::ALL.len())];
                        let x = round3(self.rng.random_range(0.05..0.6));
                        let y = round3(self.rng.random_range(0.05..0.6));
                        let w = round3(self.rng.random_range(0.05..0.3));
                        let h = round3(self.rng.random_range(0.05..0.3));
                        let conf = self.score(0.3, 0.99);
                        LesionBox::new(class, x, y, x + w, y + h, conf).expect("box within image")
                    })
                    .collect();
                ScoreOverride {
                    pa: Some(pa),
                    abn: Some(self.score(0.51, 0.99)),
                    lesions: Some(lesions),
                    ..Default::default()
                }
            }
        }
    }

    fn description(&mut self, label: Finding) -> String {
        let abnormal = match label {
            Finding::Normal => None,
            Finding::Abnormal => Some(Region::ALL[self.rng.random_range(0..Region::ALL.len())]),
        };
        let templates = self.templates.clone();
        compose_description(&mut self.rng, &templates, abnormal)
    }

    /// Adds a session holding one CXR report, and possibly one non-CXR report.
    /// Returns the session ID; the CXR report always has CXR index 0.
    fn add_session(
        &mut self,
        patient_id: &str,
        check_in: NaiveDateTime,
        check_out: NaiveDateTime,
        report_time: NaiveDateTime,
        label: Finding,
        outcome: ReportOutcome,
    ) -> String {
        self.next_session += 1;
        let session_id = format!("SES{:06}", self.next_session);
        let cxr = RadiologyReport {
            service_id: self.spec.service_id.clone(),
            report_time,
            description: self.description(label),
        };
        let cxr_record =
            ReportRecord { service_id: cxr.service_id.clone(), cxr_index: Some(0), label: Some(label), outcome };
        let mut reports = vec![cxr];
        let mut records = vec![cxr_record];
        if self.rng.random_bool(0.3) {
            const OTHER_SERVICES: [&str; 3] = ["18.0002.0001", "02.0103.0124", "CT.NGUC"];
            let service_id = OTHER_SERVICES[self.rng.random_range(0..OTHER_SERVICES.len())].to_string();
            let span = (check_out - check_in).num_seconds().max(0);
            let other = RadiologyReport {
                service_id: service_id.clone(),
                report_time: check_in + TimeDelta::seconds(self.rng.random_range(0..=span)),
                description: "Siêu âm ổ bụng: gan, mật, tụy, lách chưa phát hiện bất thường.".into(),
            };
            let record = ReportRecord { service_id, cxr_index: None, label: None, outcome: ReportOutcome::FilteredOut };
            if self.rng.random_bool(0.5) {
                reports.insert(0, other);
                records.insert(0, record);
            } else {
                reports.push(other);
                records.push(record);
            }
        }
        let session = Session {
            session_id: session_id.clone(),
            patient_id: patient_id.to_string(),
            check_in_time: check_in,
            check_out_time: check_out,
            reports,
        };
        let record = SessionRecord {
            session_id: session_id.clone(),
            patient_id: patient_id.to_string(),
            file: format!("his/{session_id}.xml"),
            reports: records,
        };
        self.sessions.push((session, record));
        session_id
    }

    fn random_label(&mut self) -> Finding {
        if self.rng.random_bool(0.3) {
            Finding::Abnormal
        } else {
            Finding::Normal
        }
    }

    fn plan(&mut self) -> Vec<StudyPlan> {
        let spec = self.spec;
        let c = spec.target_counts;
        let mut kinds: Vec<Kind> = Vec::with_capacity(spec.n_studies + spec.non_cxr);
        for (n, ai, label) in [
            (c.tp, Finding::Abnormal, Finding::Abnormal),
            (c.fp, Finding::Abnormal, Finding::Normal),
            (c.fn_, Finding::Normal, Finding::Abnormal),
            (c.tn, Finding::Normal, Finding::Normal),
        ] {
            kinds.extend((0..n).map(|_| Kind::Matched { ai, label }));
        }
        kinds.extend((0..spec.unmatched_ai).map(|_| Kind::UnmatchedAi));
        kinds.extend((0..spec.invalid_count()).map(|_| Kind::Invalid));
        kinds.extend((0..spec.errored).map(|_| Kind::Errored));
        kinds.extend((0..spec.non_cxr).map(|_| Kind::NonCxr));
        kinds.shuffle(&mut self.rng);

        // Unmatched AI results and reports are paired up as near misses on the
        // session or window condition; the rest fail the patient condition.
        let near_misses = spec.unmatched_ai.min(spec.unmatched_reports).div_ceil(2);
        let mut unmatched_seen = 0usize;
        let mut follow_up: Option<(String, NaiveDateTime)> = None;
        let mut plans = Vec::with_capacity(kinds.len());

        for (i, kind) in kinds.into_iter().enumerate() {
            let uid = format!("1.2.826.0.1.3680043.10.1071.{}.{}", spec.seed, i + 1);
            let (modality, body_part) = self.cxr_labels();
            let plan = match kind {
                Kind::Matched { ai, label } => {
                    let (patient_id, time) = match follow_up.take() {
                        Some((p, prev)) if self.rng.random_bool(0.1) => {
                            (p, prev + TimeDelta::seconds(self.rng.random_range(3 * 86_400..20 * 86_400)))
                        }
                        _ => (self.patient(), self.random_time()),
                    };
                    follow_up = Some((patient_id.clone(), time));
                    let delay = self.delay();
                    let report_time = time + TimeDelta::seconds(delay);
                    let check_in = time.min(report_time) - self.minutes(0, 240);
                    let check_out = time.max(report_time) + self.minutes(0, 240);
                    let session_id = self.add_session(
                        &patient_id,
                        check_in,
                        check_out,
                        report_time,
                        label,
                        ReportOutcome::Matched { study_uid: uid.clone() },
                    );
                    StudyPlan {
                        uid,
                        patient_id,
                        time,
                        modality,
                        body_part,
                        scores: Some(self.ai_scores(ai)),
                        outcome: StudyOutcome::Matched {
                            ai_status: ai,
                            report_label: label,
                            session_id,
                            report_index: 0,
                            delay_seconds: delay,
                        },
                    }
                }
                Kind::UnmatchedAi => {
                    let patient_id = self.patient();
                    let time = self.random_time();
                    let violated = if unmatched_seen < near_misses {
                        if unmatched_seen.is_multiple_of(2) {
                            Condition::WithinSession
                        } else {
                            Condition::WithinWindow
                        }
                    } else {
                        Condition::SamePatient
                    };
                    unmatched_seen += 1;
                    let label = self.random_label();
                    let report_outcome = ReportOutcome::Unmatched { violated };
                    match violated {
                        Condition::WithinSession => {
                            let check_in = time + self.minutes(10, 120);
                            let report_time = check_in + self.minutes(0, 60);
                            let check_out = report_time + self.minutes(0, 60);
                            self.add_session(&patient_id, check_in, check_out, report_time, label, report_outcome);
                        }
                        Condition::WithinWindow => {
                            let check_in = time - self.minutes(0, 60);
                            let report_time = time + TimeDelta::hours(25) + self.minutes(0, 300);
                            let check_out = report_time + self.minutes(0, 60);
                            self.add_session(&patient_id, check_in, check_out, report_time, label, report_outcome);
                        }
                        Condition::SamePatient => {}
                    }
                    let status = self.random_label();
                    StudyPlan {
                        uid,
                        patient_id,
                        time,
                        modality,
                        body_part,
                        scores: Some(self.ai_scores(status)),
                        outcome: StudyOutcome::UnmatchedAi { violated },
                    }
                }
                Kind::Invalid => {
                    let pa = self.score(0.01, 0.49);
                    StudyPlan {
                        uid,
                        patient_id: self.patient(),
                        time: self.random_time(),
                        modality,
                        body_part,
                        scores: Some(ScoreOverride { pa: Some(pa), ..Default::default() }),
                        outcome: StudyOutcome::Invalid,
                    }
                }
                Kind::Errored => {
                    let pa = self.score(0.51, 0.99);
                    StudyPlan {
                        uid,
                        patient_id: self.patient(),
                        time: self.random_time(),
                        modality,
                        body_part,
                        scores: Some(ScoreOverride {
                            pa: Some(pa),
                            fail: Some(Stage::AbnormalityClassifier),
                            ..Default::default()
                        }),
                        outcome: StudyOutcome::Errored,
                    }
                }
                Kind::NonCxr => {
                    const REJECTS: [(&str, &str, FilterReason); 4] = [
                        ("CT", "CHEST", FilterReason::BadModality),
                        ("MR", "THORAX", FilterReason::BadModality),
                        ("DX", "SKULL", FilterReason::BadBodyPart),
                        ("CR", "ABDOMEN", FilterReason::BadBodyPart),
                    ];
                    let (modality, body_part, reason) = REJECTS[self.rng.random_range(0..REJECTS.len())];
                    StudyPlan {
                        uid,
                        patient_id: self.patient(),
                        time: self.random_time(),
                        modality,
                        body_part,
                        scores: None,
                        outcome: StudyOutcome::RejectedNonCxr { reason },
                    }
                }
            };
            plans.push(plan);
        }

        // Reports left over after the near misses belong to patients with no study.
        for _ in near_misses..spec.unmatched_reports {
            let patient_id = self.patient();
            let time = self.random_time();
            let report_time = time + TimeDelta::seconds(self.delay());
            let check_in = time.min(report_time) - self.minutes(0, 240);
            let check_out = time.max(report_time) + self.minutes(0, 240);
            let label = self.random_label();
            self.add_session(
                &patient_id,
                check_in,
                check_out,
                report_time,
                label,
                ReportOutcome::Unmatched { violated: Condition::SamePatient },
            );
        }
        plans
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| SynthError::Io { path: parent.display().to_string(), source })?;
    }
    fs::write(path, bytes).map_err(|source| SynthError::Io { path: path.display().to_string(), source })
}

fn dicom_fixture(plan: &StudyPlan, index: usize, syntax: TransferSyntax, pixels: Vec<u8>) -> DicomFixture {
    let date = plan.time.format("%Y%m%d").to_string();
    let time = plan.time.format("%H%M%S").to_string();
    DicomFixture::study(syntax, &plan.patient_id, &plan.uid, &date, &time, plan.modality, plan.body_part)
        .string(Tag(0x0008, 0x0016), "UI", "1.2.840.10008.5.1.4.1.1.1.1")
        .string(Tag(0x0008, 0x0018), "UI", &format!("{}.1.1", plan.uid))
        .string(Tag(0x0010, 0x0010), "PN", &format!("SYNTH^{index}"))
        .string(Tag(0x0018, 0x5101), "CS", "PA")
        .string(Tag(0x0020, 0x000E), "UI", &format!("{}.1", plan.uid))
        .bytes(Tag(0x0028, 0x0010), "US", 8u16.to_le_bytes().to_vec())
        .bytes(Tag(0x0028, 0x0011), "US", 8u16.to_le_bytes().to_vec())
        .bytes(Tag::PIXEL_DATA, "OW", pixels)
        .sorted()
}

fn dicomweb_object(plan: &StudyPlan) -> Value {
    let element = |vr: &str, v: &str| json!({ "vr": vr, "Value": [v] });
    let mut obj = Map::new();
    obj.insert(Tag::STUDY_DATE.json_key(), element("DA", &plan.time.format("%Y%m%d").to_string()));
    obj.insert(Tag::STUDY_TIME.json_key(), element("TM", &plan.time.format("%H%M%S").to_string()));
    obj.insert(Tag::MODALITY.json_key(), element("CS", plan.modality));
    obj.insert(Tag::PATIENT_ID.json_key(), element("LO", &plan.patient_id));
    obj.insert(Tag::BODY_PART_EXAMINED.json_key(), element("CS", plan.body_part));
    obj.insert(Tag::STUDY_INSTANCE_UID.json_key(), element("UI", &plan.uid));
    obj.insert("00100010".into(), json!({ "vr": "PN", "Value": [{ "Alphabetic": format!("SYNTH^{}", plan.uid) }] }));
    Value::Object(obj)
}

/// Generates a corpus under `out_dir` and returns its manifest (also written
/// to `out_dir/manifest.json`). Identical specs produce byte-identical output.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Manifest, SynthError> {
    spec.validate()?;
    let mut gen = Generator {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        spec,
        templates: TemplateSet::default(),
        next_patient: 0,
        next_session: 0,
        sessions: Vec::new(),
    };
    let plans = gen.plan();

    let mut files = Vec::new();
    let mut studies = Vec::with_capacity(plans.len());
    let pacs_path = match spec.format {
        PacsFormat::Dicom => "pacs".to_string(),
        PacsFormat::Dicomweb => "pacs/studies.json".to_string(),
    };
    let mut dicomweb = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let source = match spec.format {
            PacsFormat::Dicom => {
                let syntax = if gen.rng.random_bool(0.5) {
                    TransferSyntax::ExplicitVrLittleEndian
                } else {
                    TransferSyntax::ImplicitVrLittleEndian
                };
                let pixels: Vec<u8> = (0..128).map(|_| gen.rng.random()).collect();
                let rel = format!("pacs/{:06}.dcm", i + 1);
                write(&out_dir.join(&rel), &dicom_fixture(plan, i + 1, syntax, pixels).to_bytes())?;
                files.push(rel.clone());
                rel
            }
            PacsFormat::Dicomweb => {
                dicomweb.push(dicomweb_object(plan));
                format!("{pacs_path}#{i}")
            }
        };
        studies.push(StudyRecord {
            study_uid: plan.uid.clone(),
            patient_id: plan.patient_id.clone(),
            study_time: timefmt::format_timestamp(&plan.time),
            source,
            outcome: plan.outcome.clone(),
        });
    }
    if spec.format == PacsFormat::Dicomweb {
        let text = serde_json::to_string_pretty(&Value::Array(dicomweb)).expect("json");
        write(&out_dir.join(&pacs_path), text.as_bytes())?;
        files.push(pacs_path.clone());
    }

    let mut session_records = Vec::with_capacity(gen.sessions.len());
    for (session, record) in &gen.sessions {
        write(&out_dir.join(&record.file), session.to_xml().as_bytes())?;
        files.push(record.file.clone());
        session_records.push(record.clone());
    }

    let scorer = StubConfig {
        studies: plans
            .iter()
            .filter_map(|p| p.scores.clone().map(|scores| StubEntry { uid: p.uid.clone(), scores }))
            .collect(),
        ..Default::default()
    };
    let scorer_path = "scorer.json".to_string();
    write(&out_dir.join(&scorer_path), serde_json::to_string_pretty(&scorer).expect("json").as_bytes())?;
    files.push(scorer_path.clone());

    // Run configuration for the corpus; paths resolve against this directory.
    let pacs_key = match spec.format {
        PacsFormat::Dicom => "pacs-dir",
        PacsFormat::Dicomweb => "pacs-json",
    };
    let mut config = Map::new();
    config.insert(pacs_key.into(), json!(pacs_path));
    config.insert("his-dir".into(), json!("his"));
    config.insert("scorer-config".into(), json!(scorer_path));
    config.insert("service-id".into(), json!(spec.service_id));
    config.insert("seed".into(), json!(spec.seed));
    write(&out_dir.join(RUN_CONFIG_FILE), serde_json::to_string_pretty(&config).expect("json").as_bytes())?;
    files.push(RUN_CONFIG_FILE.to_string());

    let count = |f: &dyn Fn(&StudyOutcome) -> bool| studies.iter().filter(|s| f(&s.outcome)).count();
    let expected = ExpectedOutcome {
        counts: spec.target_counts,
        pairs: spec.matched(),
        unmatched_ai: spec.unmatched_ai,
        unmatched_reports: spec.unmatched_reports,
        invalid: count(&|o| matches!(o, StudyOutcome::Invalid)),
        errored: count(&|o| matches!(o, StudyOutcome::Errored)),
        rejected_non_cxr: count(&|o| matches!(o, StudyOutcome::RejectedNonCxr { .. })),
        zero_delay_pairs: count(&|o| matches!(o, StudyOutcome::Matched { delay_seconds: 0, .. })),
    };

    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        spec: spec.clone(),
        expected,
        pacs_path,
        his_dir: "his".to_string(),
        scorer_config: scorer_path,
        files,
        studies,
        sessions: session_records,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("json");
    write(&out_dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, SynthError> {
        let text =
            fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|e| SynthError::Inconsistent(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, corpus_dir: &Path, rel: &str) -> PathBuf {
        corpus_dir.join(rel)
    }
}
