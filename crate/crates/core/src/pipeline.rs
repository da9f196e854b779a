//! File-based stage orchestration.
//!
//! Every stage reads its predecessor's artifacts from the output directory
//! and writes its own. JSON-lines artifacts open with a `{"schema": ...}`
//! header line, CSV artifacts with a `#schema=...` comment line, and JSON
//! documents carry a top-level `schema` field.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ai_cascade::{run_cascade, AiResult, AiStatus, CascadeError, StubConfig, StubScorer, Thresholds};
use crate::evaluator::{bootstrap_f1, confusion, f1, DEFAULT_HISTOGRAM_BINS};
use crate::his_parser::{parse_session_with, AliasMap, Session};
use crate::matcher::{match_pairs, window_from_hours, MatchedPair, DEFAULT_WINDOW_HOURS};
use crate::pacs_ingest::{ingest_dicom_dir, ingest_dicomweb_file, FilterReason, ManifestLine, StudyMeta};
use crate::report_labeler::{label_report, Region, TemplateSet};
use crate::synth::DEFAULT_SERVICE_ID;
use crate::{timefmt, Finding};

pub const DEFAULT_BOOTSTRAP_N: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0;

pub mod artifacts {
    pub const STUDIES: &str = "studies.jsonl";
    pub const INGEST_MANIFEST: &str = "ingest_manifest.jsonl";
    pub const INGEST_SUMMARY: &str = "ingest_summary.json";
    pub const AI_RESULTS: &str = "ai_results.jsonl";
    pub const AI_ERRORS: &str = "ai_errors.jsonl";
    pub const AI_SUMMARY: &str = "ai_summary.json";
    pub const SESSIONS: &str = "sessions.jsonl";
    pub const HIS_SUMMARY: &str = "his_summary.json";
    pub const MATCHES: &str = "matches.jsonl";
    pub const UNMATCHED_AI: &str = "unmatched_ai.jsonl";
    pub const UNMATCHED_REPORTS: &str = "unmatched_reports.jsonl";
    pub const MATCH_SUMMARY: &str = "match_summary.json";
    pub const PAIRS: &str = "pairs.csv";
    pub const LABEL_QUALITY: &str = "label_quality.json";
    pub const EVALUATION: &str = "evaluation.json";
    pub const CONFUSION_MATRIX: &str = "confusion_matrix.json";
    pub const BOOTSTRAP_HISTOGRAM: &str = "bootstrap_histogram.csv";
    pub const RUN_REPORT: &str = "run_report.json";
}

fn schema(name: &str) -> String {
    format!("cxrval/{name}@1")
}

/// Configuration file contents; keys mirror the command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub pacs_dir: Option<PathBuf>,
    pub pacs_json: Option<PathBuf>,
    pub his_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub scorer_config: Option<PathBuf>,
    pub service_id: Option<String>,
    pub pa_threshold: Option<f64>,
    pub abn_threshold: Option<f64>,
    pub window_hours: Option<f64>,
    pub bootstrap_n: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    /// Loads a config file. Relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: ConfigFile =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.pacs_dir,
            &mut cfg.pacs_json,
            &mut cfg.his_dir,
            &mut cfg.templates,
            &mut cfg.aliases,
            &mut cfg.scorer_config,
            &mut cfg.out,
        ] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    /// Field-wise merge where `over` wins. A PACS source in `over` replaces
    /// both PACS fields of `self`.
    pub fn merge(self, over: ConfigFile) -> ConfigFile {
        let pacs_overridden = over.pacs_dir.is_some() || over.pacs_json.is_some();
        ConfigFile {
            pacs_dir: if pacs_overridden { over.pacs_dir } else { self.pacs_dir },
            pacs_json: if pacs_overridden { over.pacs_json } else { self.pacs_json },
            his_dir: over.his_dir.or(self.his_dir),
            templates: over.templates.or(self.templates),
            aliases: over.aliases.or(self.aliases),
            scorer_config: over.scorer_config.or(self.scorer_config),
            service_id: over.service_id.or(self.service_id),
            pa_threshold: over.pa_threshold.or(self.pa_threshold),
            abn_threshold: over.abn_threshold.or(self.abn_threshold),
            window_hours: over.window_hours.or(self.window_hours),
            bootstrap_n: over.bootstrap_n.or(self.bootstrap_n),
            seed: over.seed.or(self.seed),
            out: over.out.or(self.out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PacsSource {
    Dir(PathBuf),
    Json(PathBuf),
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub pacs: Option<PacsSource>,
    pub his_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub scorer_config: Option<PathBuf>,
    pub service_id: String,
    pub thresholds: Thresholds,
    pub window_hours: f64,
    pub bootstrap_n: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl TryFrom<ConfigFile> for RunConfig {
    type Error = anyhow::Error;

    fn try_from(c: ConfigFile) -> Result<Self> {
        let pacs = match (c.pacs_dir, c.pacs_json) {
            (Some(_), Some(_)) => bail!("pacs-dir and pacs-json are mutually exclusive"),
            (Some(d), None) => Some(PacsSource::Dir(d)),
            (None, Some(j)) => Some(PacsSource::Json(j)),
            (None, None) => None,
        };
        let defaults = Thresholds::default();
        let thresholds =
            Thresholds::new(c.pa_threshold.unwrap_or(defaults.pa), c.abn_threshold.unwrap_or(defaults.abnormal))?;
        let window_hours = c.window_hours.unwrap_or(DEFAULT_WINDOW_HOURS);
        window_from_hours(window_hours)?;
        let bootstrap_n = c.bootstrap_n.unwrap_or(DEFAULT_BOOTSTRAP_N);
        if bootstrap_n == 0 {
            bail!("bootstrap-n must be positive");
        }
        Ok(RunConfig {
            pacs,
            his_dir: c.his_dir,
            templates: c.templates,
            aliases: c.aliases,
            scorer_config: c.scorer_config,
            service_id: c.service_id.unwrap_or_else(|| DEFAULT_SERVICE_ID.to_string()),
            thresholds,
            window_hours,
            bootstrap_n,
            seed: c.seed.unwrap_or(DEFAULT_SEED),
            out: c.out.ok_or_else(|| anyhow!("no output directory given (--out)"))?,
        })
    }
}

impl RunConfig {
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create output dir {}", self.out.display()))
    }
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| anyhow!("missing input: --{flag} is required"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json(path: &Path, name: &str, mut value: Value) -> Result<()> {
    if let Value::Object(map) = &mut value {
        map.insert("schema".into(), json!(schema(name)));
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_jsonl<T: Serialize>(path: &Path, name: &str, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &json!({ "schema": schema(name) }))?;
    w.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

/// Reads a JSON-lines artifact, checking its schema header.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, name: &str) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("missing input {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let found: Option<String> = serde_json::from_str::<Value>(&header)
        .ok()
        .and_then(|v| v.get("schema").and_then(Value::as_str).map(str::to_string));
    if found.as_deref() != Some(schema(name).as_str()) {
        bail!("{}: schema violation: expected header {}, found {:?}", path.display(), schema(name), header);
    }
    let mut items = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: schema violation", path.display(), i + 2))?;
        items.push(item);
    }
    Ok(items)
}

fn timed<T>(stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().with_context(|| format!("stage {stage} failed"));
    log::info!("stage {stage} finished in {:.3}s", start.elapsed().as_secs_f64());
    out
}

pub fn ingest_pacs(cfg: &RunConfig) -> Result<Value> {
    timed("ingest-pacs", || {
        let source = required(&cfg.pacs, "pacs-dir or --pacs-json")?;
        let batch = match source {
            PacsSource::Dir(d) => ingest_dicom_dir(d)?,
            PacsSource::Json(j) => ingest_dicomweb_file(j)?,
        };
        cfg.ensure_out()?;
        let lines: Vec<ManifestLine> = batch.records.iter().map(|r| r.manifest_line()).collect();
        let accepted = batch.accepted();
        write_jsonl(&cfg.artifact(artifacts::INGEST_MANIFEST), "ingest-manifest", &lines)?;
        write_jsonl(&cfg.artifact(artifacts::STUDIES), "studies", &accepted)?;
        let mut rejected: BTreeMap<FilterReason, usize> = BTreeMap::new();
        for line in lines.iter().filter(|l| !l.accepted) {
            *rejected.entry(line.reason).or_default() += 1;
        }
        let summary = json!({
            "records": lines.len(),
            "accepted": accepted.len(),
            "rejected": batch.rejected_count(),
            "rejected_by_reason": rejected,
        });
        write_json(&cfg.artifact(artifacts::INGEST_SUMMARY), "ingest-summary", summary.clone())?;
        Ok(summary)
    })
}

pub fn run_ai(cfg: &RunConfig) -> Result<Value> {
    timed("run-ai", || {
        let studies: Vec<StudyMeta> = read_jsonl(&cfg.artifact(artifacts::STUDIES), "studies")?;
        let config = match &cfg.scorer_config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("missing input {}", path.display()))?;
                StubConfig::from_json(&text).with_context(|| format!("scorer config {}", path.display()))?
            }
            None => StubConfig::default(),
        };
        let scorer = StubScorer::new(config, cfg.seed)?;
        let outcomes: Vec<Result<AiResult, CascadeError>> =
            studies.par_iter().map(|m| run_cascade(m, &scorer, cfg.thresholds)).collect();
        let mut results = Vec::new();
        let mut errors = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(r) => results.push(r),
                Err(e) => {
                    log::warn!("{e}");
                    errors.push(e);
                }
            }
        }
        let tally = |s: AiStatus| results.iter().filter(|r| r.status == s).count();
        write_jsonl(&cfg.artifact(artifacts::AI_RESULTS), "ai-results", &results)?;
        write_jsonl(&cfg.artifact(artifacts::AI_ERRORS), "ai-errors", &errors)?;
        let summary = json!({
            "admitted": studies.len(),
            "normal": tally(AiStatus::Normal),
            "abnormal": tally(AiStatus::Abnormal),
            "invalid": tally(AiStatus::Invalid),
            "errored": errors.len(),
            "thresholds": cfg.thresholds,
        });
        write_json(&cfg.artifact(artifacts::AI_SUMMARY), "ai-summary", summary.clone())?;
        Ok(summary)
    })
}

fn xml_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("missing input {}", dir.display()))? {
        let path = entry?.path();
        let hidden = path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if !hidden && path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn ingest_his(cfg: &RunConfig) -> Result<Value> {
    timed("ingest-his", || {
        let dir = required(&cfg.his_dir, "his-dir")?;
        let aliases = match &cfg.aliases {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("missing input {}", path.display()))?;
                AliasMap::from_json(&text)?
            }
            None => AliasMap::default(),
        };
        let sessions: Vec<Session> = xml_files(dir)?
            .par_iter()
            .map(|path| {
                let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                parse_session_with(&text, &aliases).with_context(|| format!("session file {}", path.display()))
            })
            .collect::<Result<_>>()?;
        let total_reports: usize = sessions.iter().map(|s| s.reports.len()).sum();
        let filtered: Vec<Session> = sessions.iter().map(|s| s.cxr_only(&cfg.service_id)).collect();
        let cxr_reports: usize = filtered.iter().map(|s| s.reports.len()).sum();
        cfg.ensure_out()?;
        write_jsonl(&cfg.artifact(artifacts::SESSIONS), "sessions", &filtered)?;
        let summary = json!({
            "sessions": filtered.len(),
            "reports": total_reports,
            "cxr_reports": cxr_reports,
            "non_cxr_reports": total_reports - cxr_reports,
            "cxr_service_id": cfg.service_id,
        });
        write_json(&cfg.artifact(artifacts::HIS_SUMMARY), "his-summary", summary.clone())?;
        Ok(summary)
    })
}

pub fn match_stage(cfg: &RunConfig) -> Result<Value> {
    timed("match", || {
        let results: Vec<AiResult> = read_jsonl(&cfg.artifact(artifacts::AI_RESULTS), "ai-results")?;
        let sessions: Vec<Session> = read_jsonl(&cfg.artifact(artifacts::SESSIONS), "sessions")?;
        let (valid, invalid): (Vec<AiResult>, Vec<AiResult>) =
            results.into_iter().partition(|r| r.status != AiStatus::Invalid);
        let outcome = match_pairs(&valid, &sessions, window_from_hours(cfg.window_hours)?)?;
        write_jsonl(&cfg.artifact(artifacts::MATCHES), "matches", &outcome.pairs)?;
        write_jsonl(&cfg.artifact(artifacts::UNMATCHED_AI), "unmatched-ai", &outcome.unmatched_ai)?;
        write_jsonl(&cfg.artifact(artifacts::UNMATCHED_REPORTS), "unmatched-reports", &outcome.unmatched_reports)?;
        let summary = json!({
            "ai_results": valid.len(),
            "invalid_excluded": invalid.len(),
            "reports": sessions.iter().map(|s| s.reports.len()).sum::<usize>(),
            "pairs": outcome.pairs.len(),
            "unmatched_ai": outcome.unmatched_ai.len(),
            "unmatched_reports": outcome.unmatched_reports.len(),
            "window_hours": cfg.window_hours,
        });
        write_json(&cfg.artifact(artifacts::MATCH_SUMMARY), "match-summary", summary.clone())?;
        Ok(summary)
    })
}

/// One row of the matched-pair CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub study_uid: String,
    pub patient_id: String,
    pub study_time: String,
    pub session_id: String,
    pub report_time: String,
    pub time_delta_seconds: i64,
    pub ai_status: Finding,
    pub report_label: Finding,
}

pub fn write_pairs_csv(path: &Path, rows: &[PairRow]) -> Result<()> {
    let mut buf = format!("#schema={}\n", schema("pairs")).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        if rows.is_empty() {
            w.write_record([
                "study_uid",
                "patient_id",
                "study_time",
                "session_id",
                "report_time",
                "time_delta_seconds",
                "ai_status",
                "report_label",
            ])?;
        }
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    write_file(path, &buf)
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<PairRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("missing input {}", path.display()))?;
    let expected = format!("#schema={}", schema("pairs"));
    let (header, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if header.trim_end() != expected {
        bail!("{}: schema violation: expected first line {expected}", path.display());
    }
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: row {}: schema violation", path.display(), i + 1)))
        .collect()
}

pub fn label(cfg: &RunConfig) -> Result<Value> {
    timed("label", || {
        let templates = match &cfg.templates {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("missing input {}", path.display()))?;
                TemplateSet::from_json(&text).with_context(|| format!("templates {}", path.display()))?
            }
            None => TemplateSet::default(),
        };
        let pairs: Vec<MatchedPair> = read_jsonl(&cfg.artifact(artifacts::MATCHES), "matches")?;
        let labels: Vec<_> = pairs.par_iter().map(|p| label_report(&p.report.description, &templates)).collect();
        let mut rows = Vec::with_capacity(pairs.len());
        let mut abnormal_by_region: BTreeMap<Region, usize> = Region::ALL.into_iter().map(|r| (r, 0)).collect();
        let mut empty = 0usize;
        for (p, l) in pairs.iter().zip(&labels) {
            let ai_status =
                p.ai.status
                    .finding()
                    .ok_or_else(|| anyhow!("study {}: invalid AI result in matched pairs", p.ai.study_uid))?;
            for (region, normal) in &l.region_normal {
                if !normal {
                    *abnormal_by_region.entry(*region).or_default() += 1;
                }
            }
            empty += usize::from(l.empty_description);
            rows.push(PairRow {
                study_uid: p.ai.study_uid.clone(),
                patient_id: p.ai.patient_id.clone(),
                study_time: timefmt::format_timestamp(&p.ai.study_time),
                session_id: p.session_id.clone(),
                report_time: timefmt::format_timestamp(&p.report.report_time),
                time_delta_seconds: p.time_delta_seconds,
                ai_status,
                report_label: l.overall,
            });
        }
        write_pairs_csv(&cfg.artifact(artifacts::PAIRS), &rows)?;
        let abnormal = labels.iter().filter(|l| l.overall == Finding::Abnormal).count();
        let summary = json!({
            "reports": rows.len(),
            "normal": rows.len() - abnormal,
            "abnormal": abnormal,
            "empty_descriptions": empty,
            "abnormal_by_region": abnormal_by_region,
        });
        write_json(&cfg.artifact(artifacts::LABEL_QUALITY), "label-quality", summary.clone())?;
        Ok(summary)
    })
}

pub fn evaluate(cfg: &RunConfig) -> Result<Value> {
    timed("evaluate", || {
        let path = cfg.artifact(artifacts::PAIRS);
        let rows = read_pairs_csv(&path)?;
        if rows.is_empty() {
            bail!("no pairs to evaluate in {}", path.display());
        }
        let pairs: Vec<(Finding, Finding)> = rows.iter().map(|r| (r.ai_status, r.report_label)).collect();
        let counts = confusion(&pairs);
        let boot = bootstrap_f1(&pairs, cfg.bootstrap_n, cfg.seed, DEFAULT_HISTOGRAM_BINS)?;
        let evaluation = json!({
            "pairs": rows.len(),
            "counts": counts,
            "point_f1": f1(&counts),
            "precision": counts.precision(),
            "recall": counts.recall(),
            "bootstrap": {
                "mean_f1": boot.mean_f1,
                "ci_low": boot.ci_low,
                "ci_high": boot.ci_high,
                "std_error": boot.std_error,
                "n_resamples": boot.n_resamples,
                "seed": boot.seed,
                "rng": boot.rng,
            },
        });
        write_json(&cfg.artifact(artifacts::EVALUATION), "evaluation", evaluation.clone())?;
        let matrix = json!({
            "positive_class": "abnormal",
            "rows": "ai_status",
            "columns": "report_label",
            "labels": ["abnormal", "normal"],
            "matrix": [[counts.tp, counts.fp], [counts.fn_, counts.tn]],
        });
        write_json(&cfg.artifact(artifacts::CONFUSION_MATRIX), "confusion-matrix", matrix)?;
        let mut csv = format!("#schema={}\nbin_low,bin_high,count\n", schema("bootstrap-histogram"));
        for bin in &boot.histogram {
            csv.push_str(&format!("{},{},{}\n", bin.low, bin.high, bin.count));
        }
        write_file(&cfg.artifact(artifacts::BOOTSTRAP_HISTOGRAM), csv.as_bytes())?;
        Ok(evaluation)
    })
}

/// Runs every stage in order through the artifact files, then writes a run
/// report summarizing each stage.
pub fn run_all(cfg: &RunConfig) -> Result<Value> {
    let mut stages = serde_json::Map::new();
    stages.insert("ingest-pacs".into(), ingest_pacs(cfg)?);
    stages.insert("run-ai".into(), run_ai(cfg)?);
    stages.insert("ingest-his".into(), ingest_his(cfg)?);
    stages.insert("match".into(), match_stage(cfg)?);
    stages.insert("label".into(), label(cfg)?);
    stages.insert("evaluate".into(), evaluate(cfg)?);
    let report = json!({
        "config": {
            "cxr_service_id": cfg.service_id,
            "thresholds": cfg.thresholds,
            "window_hours": cfg.window_hours,
            "bootstrap_n": cfg.bootstrap_n,
            "seed": cfg.seed,
        },
        "stages": stages,
    });
    write_json(&cfg.artifact(artifacts::RUN_REPORT), "run-report", report.clone())?;
    Ok(report)
}
