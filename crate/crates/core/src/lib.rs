//! Prospective validation harness for a chest-radiograph AI system.
//!
//! The pipeline mirrors a hospital deployment: imaging studies are pulled from
//! a PACS export and filtered down to chest radiographs, a gated three-stage AI
//! cascade scores each study, radiology reports are extracted from HIS session
//! exports and labeled normal/abnormal by template containment, AI results are
//! linked to reports through the patient ID and time windows, and the linked
//! pairs are scored with F1 and a bootstrap confidence interval.

pub mod ai_cascade;
pub mod evaluator;
pub mod his_parser;
pub mod matcher;
pub mod pacs_ingest;
pub mod pipeline;
pub mod report_labeler;
pub mod synth;
pub mod timefmt;

mod finding;

pub use finding::Finding;
