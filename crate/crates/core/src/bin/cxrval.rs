use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cxrval::pipeline::{self, ConfigFile, RunConfig};
use cxrval::synth::{generate_corpus, CorpusSpec};

/// Validation harness for a chest-radiograph AI system: links PACS studies
/// to HIS radiology reports and scores the AI against report labels.
#[derive(Debug, Parser)]
#[command(name = "cxrval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read DICOM metadata and keep chest radiographs.
    IngestPacs(RunArgs),
    /// Run the gated AI cascade over admitted studies.
    RunAi(RunArgs),
    /// Parse HIS session XML and keep CXR-service reports.
    IngestHis(RunArgs),
    /// Link AI results to reports.
    Match(RunArgs),
    /// Label matched reports and write the matched-pair CSV.
    Label(RunArgs),
    /// Confusion matrix, F1 and bootstrap interval from the matched-pair CSV.
    Evaluate(RunArgs),
    /// Generate a synthetic corpus from a corpus spec.
    Synth(SynthArgs),
    /// Run every stage in order.
    RunAll(RunArgs),
}

fn parse_hours(s: &str) -> Result<f64, String> {
    let trimmed = s.trim();
    let number = trimmed.strip_suffix('h').unwrap_or(trimmed);
    number.parse::<f64>().map_err(|e| format!("invalid hours '{s}': {e}"))
}

/// Flags override values from `--config`; every flag also reads `CXRVAL_*`.
#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config file whose keys mirror these flags.
    #[arg(long, env = "CXRVAL_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "CXRVAL_PACS_DIR", conflicts_with = "pacs_json")]
    pacs_dir: Option<PathBuf>,
    #[arg(long, env = "CXRVAL_PACS_JSON")]
    pacs_json: Option<PathBuf>,
    #[arg(long, env = "CXRVAL_HIS_DIR")]
    his_dir: Option<PathBuf>,
    #[arg(long, env = "CXRVAL_TEMPLATES")]
    templates: Option<PathBuf>,
    /// JSON map from canonical HIS names to deployment names.
    #[arg(long, env = "CXRVAL_ALIASES")]
    aliases: Option<PathBuf>,
    #[arg(long, env = "CXRVAL_SCORER_CONFIG")]
    scorer_config: Option<PathBuf>,
    #[arg(long, env = "CXRVAL_SERVICE_ID")]
    service_id: Option<String>,
    #[arg(long, env = "CXRVAL_PA_THRESHOLD")]
    pa_threshold: Option<f64>,
    #[arg(long, env = "CXRVAL_ABN_THRESHOLD")]
    abn_threshold: Option<f64>,
    /// Matching window, e.g. `24`, `0h`, `1.5h`. Default 24.
    #[arg(long, alias = "window", env = "CXRVAL_WINDOW_HOURS", value_parser = parse_hours)]
    window_hours: Option<f64>,
    /// Bootstrap resamples. Default 10000.
    #[arg(long, env = "CXRVAL_BOOTSTRAP_N")]
    bootstrap_n: Option<usize>,
    #[arg(long, env = "CXRVAL_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "CXRVAL_OUT")]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let flags = ConfigFile {
            pacs_dir: self.pacs_dir,
            pacs_json: self.pacs_json,
            his_dir: self.his_dir,
            templates: self.templates,
            aliases: self.aliases,
            scorer_config: self.scorer_config,
            service_id: self.service_id,
            pa_threshold: self.pa_threshold,
            abn_threshold: self.abn_threshold,
            window_hours: self.window_hours,
            bootstrap_n: self.bootstrap_n,
            seed: self.seed,
            out: self.out,
        };
        RunConfig::try_from(file.merge(flags)).context("invalid run configuration")
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Corpus spec JSON.
    #[arg(long, env = "CXRVAL_SYNTH_SPEC")]
    spec: PathBuf,
    /// Overrides the corpus seed.
    #[arg(long, env = "CXRVAL_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "CXRVAL_OUT")]
    out: PathBuf,
}

fn synth(args: SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("stage synth failed: missing input {}", args.spec.display()))?;
    let mut spec: CorpusSpec = serde_json::from_str(&text)
        .with_context(|| format!("stage synth failed: invalid corpus spec {}", args.spec.display()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let manifest = generate_corpus(&spec, &args.out).context("stage synth failed")?;
    println!("{}", serde_json::to_string_pretty(&manifest.expected)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let summary = match cli.command {
        Command::Synth(args) => return synth(args),
        Command::IngestPacs(a) => pipeline::ingest_pacs(&a.resolve()?)?,
        Command::RunAi(a) => pipeline::run_ai(&a.resolve()?)?,
        Command::IngestHis(a) => pipeline::ingest_his(&a.resolve()?)?,
        Command::Match(a) => pipeline::match_stage(&a.resolve()?)?,
        Command::Label(a) => pipeline::label(&a.resolve()?)?,
        Command::Evaluate(a) => pipeline::evaluate(&a.resolve()?)?,
        Command::RunAll(a) => pipeline::run_all(&a.resolve()?)?,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
