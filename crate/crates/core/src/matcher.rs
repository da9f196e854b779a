//! Linking AI results to radiology reports.
//!
//! An AI result and a report are candidates when they share the patient ID,
//! the study time lies within the session's check-in/check-out interval, and
//! the report time is within the window of the study time (all bounds
//! inclusive, either sign). Candidates are resolved one-to-one, smallest
//! absolute time difference first.

use std::collections::{HashMap, HashSet};

use chrono::TimeDelta;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ai_cascade::{AiResult, AiStatus};
use crate::his_parser::{RadiologyReport, Session};

pub const DEFAULT_WINDOW_HOURS: f64 = 24.0;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("duplicate study_uid '{0}' in AI results")]
    DuplicateStudy(String),
    #[error("duplicate session_id '{0}' in HIS sessions")]
    DuplicateSession(String),
    #[error("AI result {0} has status invalid and cannot be matched")]
    InvalidResult(String),
    #[error("matching window must be non-negative")]
    NegativeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub ai: AiResult,
    pub report: RadiologyReport,
    pub session_id: String,
    /// Position of the report within its session's report list.
    pub report_index: usize,
    /// `report_time - study_time`, in seconds.
    pub time_delta_seconds: i64,
}

impl MatchedPair {
    pub fn time_delta(&self) -> TimeDelta {
        TimeDelta::seconds(self.time_delta_seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmatchedReport {
    pub session_id: String,
    pub patient_id: String,
    pub report_index: usize,
    pub report: RadiologyReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Sorted by study UID.
    pub pairs: Vec<MatchedPair>,
    /// Sorted by study UID.
    pub unmatched_ai: Vec<AiResult>,
    /// Sorted by (session ID, report index).
    pub unmatched_reports: Vec<UnmatchedReport>,
}

/// Which of the three linkage conditions hold for one (AI result, report) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conditions {
    pub same_patient: bool,
    pub within_session: bool,
    pub within_window: bool,
}

impl Conditions {
    pub fn evaluate(ai: &AiResult, session: &Session, report: &RadiologyReport, window: TimeDelta) -> Self {
        let delta = report.report_time - ai.study_time;
        Conditions {
            same_patient: ai.patient_id == session.patient_id,
            within_session: session.check_in_time <= ai.study_time && ai.study_time <= session.check_out_time,
            within_window: delta.abs() <= window,
        }
    }

    pub fn all(self) -> bool {
        self.same_patient && self.within_session && self.within_window
    }
}

/// Converts fractional hours to a whole-second window.
pub fn window_from_hours(hours: f64) -> Result<TimeDelta, MatchError> {
    if !hours.is_finite() || hours < 0.0 {
        return Err(MatchError::NegativeWindow);
    }
    Ok(TimeDelta::seconds((hours * 3600.0).round() as i64))
}

struct Candidate<'a> {
    abs_delta: i64,
    delta: i64,
    session: &'a Session,
    report_index: usize,
    ai: &'a AiResult,
}

fn match_patient<'a>(ai: &[&'a AiResult], sessions: &[&'a Session], window: TimeDelta) -> Vec<MatchedPair> {
    let mut candidates = Vec::new();
    for &a in ai {
        for &s in sessions {
            for (report_index, report) in s.reports.iter().enumerate() {
                if Conditions::evaluate(a, s, report, window).all() {
                    let delta = (report.report_time - a.study_time).num_seconds();
                    candidates.push(Candidate { abs_delta: delta.abs(), delta, session: s, report_index, ai: a });
                }
            }
        }
    }
    candidates.sort_by(|x, y| {
        (x.abs_delta, &x.session.session_id, x.report_index, &x.ai.study_uid).cmp(&(
            y.abs_delta,
            &y.session.session_id,
            y.report_index,
            &y.ai.study_uid,
        ))
    });

    let mut used_ai = HashSet::new();
    let mut used_reports = HashSet::new();
    let mut pairs = Vec::new();
    for c in candidates {
        let report_key = (c.session.session_id.as_str(), c.report_index);
        if used_ai.contains(c.ai.study_uid.as_str()) || used_reports.contains(&report_key) {
            continue;
        }
        used_ai.insert(c.ai.study_uid.as_str());
        used_reports.insert(report_key);
        pairs.push(MatchedPair {
            ai: c.ai.clone(),
            report: c.session.reports[c.report_index].clone(),
            session_id: c.session.session_id.clone(),
            report_index: c.report_index,
            time_delta_seconds: c.delta,
        });
    }
    pairs
}

/// Links AI results to CXR reports. Sessions must already be filtered to
/// CXR-service reports, and invalid AI results must be left out.
pub fn match_pairs(
    ai_results: &[AiResult],
    sessions: &[Session],
    window: TimeDelta,
) -> Result<MatchOutcome, MatchError> {
    if window < TimeDelta::zero() {
        return Err(MatchError::NegativeWindow);
    }
    let mut seen = HashSet::new();
    for a in ai_results {
        if a.status == AiStatus::Invalid {
            return Err(MatchError::InvalidResult(a.study_uid.clone()));
        }
        if !seen.insert(a.study_uid.as_str()) {
            return Err(MatchError::DuplicateStudy(a.study_uid.clone()));
        }
    }
    let mut seen = HashSet::new();
    for s in sessions {
        if !seen.insert(s.session_id.as_str()) {
            return Err(MatchError::DuplicateSession(s.session_id.clone()));
        }
    }

    // Linkage never crosses patients, so each patient is resolved on its own.
    let mut by_patient: HashMap<&str, (Vec<&AiResult>, Vec<&Session>)> = HashMap::new();
    for a in ai_results {
        by_patient.entry(a.patient_id.as_str()).or_default().0.push(a);
    }
    for s in sessions {
        if let Some(group) = by_patient.get_mut(s.patient_id.as_str()) {
            group.1.push(s);
        }
    }
    let mut pairs: Vec<MatchedPair> = by_patient
        .par_iter()
        .filter(|(_, (_, s))| !s.is_empty())
        .flat_map_iter(|(_, (a, s))| match_patient(a, s, window))
        .collect();
    pairs.sort_by(|x, y| x.ai.study_uid.cmp(&y.ai.study_uid));

    let matched_ai: HashSet<&str> = pairs.iter().map(|p| p.ai.study_uid.as_str()).collect();
    let matched_reports: HashSet<(&str, usize)> =
        pairs.iter().map(|p| (p.session_id.as_str(), p.report_index)).collect();

    let mut unmatched_ai: Vec<AiResult> =
        ai_results.iter().filter(|a| !matched_ai.contains(a.study_uid.as_str())).cloned().collect();
    unmatched_ai.sort_by(|x, y| x.study_uid.cmp(&y.study_uid));

    let mut unmatched_reports: Vec<UnmatchedReport> = sessions
        .iter()
        .flat_map(|s| s.reports.iter().enumerate().map(move |(i, r)| (s, i, r)))
        .filter(|(s, i, _)| !matched_reports.contains(&(s.session_id.as_str(), *i)))
        .map(|(s, i, r)| UnmatchedReport {
            session_id: s.session_id.clone(),
            patient_id: s.patient_id.clone(),
            report_index: i,
            report: r.clone(),
        })
        .collect();
    unmatched_reports.sort_by(|x, y| (&x.session_id, x.report_index).cmp(&(&y.session_id, y.report_index)));

    Ok(MatchOutcome { pairs, unmatched_ai, unmatched_reports })
}
