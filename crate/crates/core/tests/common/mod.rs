//! Independent oracles and helpers shared by integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::TimeDelta;
use cxrval::ai_cascade::AiResult;
use cxrval::evaluator::ConfusionCounts;
use cxrval::his_parser::Session;
use cxrval::matcher::MatchOutcome;
use cxrval::pipeline::{artifacts, read_jsonl, run_all, ConfigFile, RunConfig};
use cxrval::synth::{generate_corpus, CorpusSpec, Manifest, StudyOutcome};
use serde_json::Value;

/// Harmonic-mean F1, written out from its definition.
pub fn f1_oracle(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    let tp = tp as f64;
    tp / (tp + (fp as f64 + fn_ as f64) / 2.0)
}

/// Pair categories: 0 = TP, 1 = FP, 2 = FN, 3 = TN.
pub fn f1_of_categories(cats: impl IntoIterator<Item = u8>) -> f64 {
    let mut c = [0u64; 4];
    for k in cats {
        c[k as usize] += 1;
    }
    f1_oracle(c[0], c[1], c[2])
}

/// Exact bootstrap mean F1 by enumerating all n^n index sequences.
pub fn exact_bootstrap_mean(cats: &[u8]) -> f64 {
    let n = cats.len();
    let total = n.pow(n as u32);
    let mut sum = 0.0;
    for code in 0..total {
        let mut rest = code;
        let resample = (0..n).map(|_| {
            let i = rest % n;
            rest /= n;
            cats[i]
        });
        sum += f1_of_categories(resample);
    }
    sum / total as f64
}

pub fn rect_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    inter / union
}

/// True positives when the given predictions (already in visiting order)
/// greedily claim the best unclaimed truth at or above `thr`.
fn greedy_true_positives(preds: &[[f64; 4]], truths: &[[f64; 4]], thr: f64) -> usize {
    let mut claimed = vec![false; truths.len()];
    let mut tp = 0;
    for p in preds {
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            let v = rect_iou(*p, *truth);
            if claimed[t] || v < thr {
                continue;
            }
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((t, v));
            }
        }
        if let Some((t, _)) = best {
            claimed[t] = true;
            tp += 1;
        }
    }
    tp
}

/// All-point AP: precision/recall re-derived from scratch at every distinct
/// confidence cutoff, then the interpolated curve integrated exactly over
/// the distinct recall levels. Ties in confidence keep input order.
pub fn ap_oracle(preds: &[([f64; 4], f64)], truths: &[[f64; 4]], thr: f64) -> f64 {
    if preds.is_empty() || truths.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].1.partial_cmp(&preds[i].1).unwrap());
    let mut cutoffs: Vec<f64> = preds.iter().map(|p| p.1).collect();
    cutoffs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cutoffs.dedup();

    let mut pr = Vec::new();
    for c in cutoffs {
        let kept: Vec<[f64; 4]> = order.iter().filter(|&&i| preds[i].1 >= c).map(|&i| preds[i].0).collect();
        let tp = greedy_true_positives(&kept, truths, thr) as f64;
        pr.push((tp / truths.len() as f64, tp / kept.len() as f64));
    }
    let mut levels: Vec<f64> = pr.iter().map(|p| p.0).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let best = pr.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    ap
}

/// Checks a match outcome against the linkage rules directly: every pair
/// satisfies all three conditions, nothing is used twice, pairs and
/// leftovers partition both inputs, and no leftover AI result could still
/// be linked to a leftover report.
pub fn check_match_outcome(
    outcome: &MatchOutcome,
    ai: &[AiResult],
    sessions: &[Session],
    window: TimeDelta,
) -> Result<(), String> {
    let by_id: HashMap<&str, &Session> = sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
    let linkable = |a: &AiResult, s: &Session, idx: usize| {
        let r = &s.reports[idx];
        a.patient_id == s.patient_id
            && s.check_in_time <= a.study_time
            && a.study_time <= s.check_out_time
            && (r.report_time - a.study_time).abs() <= window
    };
    let mut used_ai = HashSet::new();
    let mut used_reports = HashSet::new();
    for p in &outcome.pairs {
        let s = by_id.get(p.session_id.as_str()).ok_or(format!("unknown session {}", p.session_id))?;
        if s.reports.get(p.report_index) != Some(&p.report) {
            return Err(format!("pair {} points at the wrong report", p.ai.study_uid));
        }
        if !linkable(&p.ai, s, p.report_index) {
            return Err(format!("pair {} violates a linkage condition", p.ai.study_uid));
        }
        if (p.report.report_time - p.ai.study_time).num_seconds() != p.time_delta_seconds {
            return Err(format!("pair {} has a wrong time delta", p.ai.study_uid));
        }
        if !used_ai.insert(p.ai.study_uid.clone()) {
            return Err(format!("AI result {} used twice", p.ai.study_uid));
        }
        if !used_reports.insert((p.session_id.clone(), p.report_index)) {
            return Err(format!("report {}#{} used twice", p.session_id, p.report_index));
        }
    }
    let unmatched_ai: HashSet<String> = outcome.unmatched_ai.iter().map(|a| a.study_uid.clone()).collect();
    let all_ai: HashSet<String> = ai.iter().map(|a| a.study_uid.clone()).collect();
    if unmatched_ai.len() != outcome.unmatched_ai.len()
        || !unmatched_ai.is_disjoint(&used_ai)
        || unmatched_ai.union(&used_ai).cloned().collect::<HashSet<_>>() != all_ai
    {
        return Err("pairs and unmatched AI results do not partition the input".into());
    }
    let unmatched_reports: HashSet<(String, usize)> =
        outcome.unmatched_reports.iter().map(|u| (u.session_id.clone(), u.report_index)).collect();
    let all_reports: HashSet<(String, usize)> =
        sessions.iter().flat_map(|s| (0..s.reports.len()).map(move |i| (s.session_id.clone(), i))).collect();
    if unmatched_reports.len() != outcome.unmatched_reports.len()
        || !unmatched_reports.is_disjoint(&used_reports)
        || unmatched_reports.union(&used_reports).cloned().collect::<HashSet<_>>() != all_reports
    {
        return Err("pairs and unmatched reports do not partition the input".into());
    }
    for a in &outcome.unmatched_ai {
        for u in &outcome.unmatched_reports {
            if linkable(a, by_id[u.session_id.as_str()], u.report_index) {
                return Err(format!("{} and {}#{} were left linkable", a.study_uid, u.session_id, u.report_index));
            }
        }
    }
    Ok(())
}

pub fn corpus_config(corpus: &Path, out: &Path) -> RunConfig {
    let file = ConfigFile::load(&corpus.join(cxrval::synth::RUN_CONFIG_FILE)).expect("corpus config");
    let flags = ConfigFile { out: Some(out.to_path_buf()), ..Default::default() };
    RunConfig::try_from(file.merge(flags)).expect("run config")
}

/// Every file under `dir`, keyed by relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Generates `spec` under `root/corpus` and runs every stage into `root/out`.
pub fn generate_and_run(spec: &CorpusSpec, root: &Path, bootstrap_n: usize) -> Result<(Manifest, RunConfig), String> {
    let corpus = root.join("corpus");
    let manifest = generate_corpus(spec, &corpus).map_err(|e| e.to_string())?;
    let mut cfg = corpus_config(&corpus, &root.join("out"));
    cfg.bootstrap_n = bootstrap_n;
    run_all(&cfg).map_err(|e| format!("{e:#}"))?;
    Ok((manifest, cfg))
}

fn artifact_values(cfg: &RunConfig, name: &str, schema: &str) -> Vec<Value> {
    read_jsonl(&cfg.artifact(name), schema).unwrap()
}

/// Compares the pipeline's artifacts with the outcome the generator intended
/// for every study and report.
pub fn check_against_manifest(manifest: &Manifest, cfg: &RunConfig) -> Result<(), String> {
    let eval: Value = serde_json::from_str(&std::fs::read_to_string(cfg.artifact(artifacts::EVALUATION)).unwrap())
        .map_err(|e| e.to_string())?;
    let exp = &manifest.expected;
    let counts: ConfusionCounts = serde_json::from_value(eval["counts"].clone()).map_err(|e| e.to_string())?;
    if counts != exp.counts {
        return Err(format!("counts {counts:?} != expected {:?}", exp.counts));
    }

    let matches = artifact_values(cfg, artifacts::MATCHES, "matches");
    let unmatched_ai = artifact_values(cfg, artifacts::UNMATCHED_AI, "unmatched-ai");
    let unmatched_reports = artifact_values(cfg, artifacts::UNMATCHED_REPORTS, "unmatched-reports");
    let results = artifact_values(cfg, artifacts::AI_RESULTS, "ai-results");
    let errors = artifact_values(cfg, artifacts::AI_ERRORS, "ai-errors");
    let ingest = artifact_values(cfg, artifacts::INGEST_MANIFEST, "ingest-manifest");
    let tallies = [
        ("pairs", matches.len(), exp.pairs),
        ("unmatched_ai", unmatched_ai.len(), exp.unmatched_ai),
        ("unmatched_reports", unmatched_reports.len(), exp.unmatched_reports),
        ("invalid", results.iter().filter(|r| r["status"] == "invalid").count(), exp.invalid),
        ("errored", errors.len(), exp.errored),
        ("rejected", ingest.iter().filter(|r| r["accepted"] == false).count(), exp.rejected_non_cxr),
    ];
    for (name, got, want) in tallies {
        if got != want {
            return Err(format!("{name}: got {got}, expected {want}"));
        }
    }

    let pair_of: HashMap<&str, &Value> = matches.iter().map(|m| (m["ai"]["study_uid"].as_str().unwrap(), m)).collect();
    let unmatched: HashSet<&str> = unmatched_ai.iter().map(|u| u["study_uid"].as_str().unwrap()).collect();
    for study in &manifest.studies {
        let uid = study.study_uid.as_str();
        match &study.outcome {
            StudyOutcome::Matched { session_id, report_index, delay_seconds, .. } => {
                let Some(m) = pair_of.get(uid) else { return Err(format!("{uid} not matched")) };
                let got = (m["session_id"].as_str().unwrap(), m["report_index"].as_u64().unwrap() as usize);
                if got != (session_id.as_str(), *report_index) || m["time_delta_seconds"] != *delay_seconds {
                    return Err(format!("{uid} matched to {got:?}, expected ({session_id}, {report_index})"));
                }
            }
            StudyOutcome::UnmatchedAi { .. } if !unmatched.contains(uid) => {
                return Err(format!("{uid} expected unmatched"));
            }
            _ => {}
        }
    }
    Ok(())
}
