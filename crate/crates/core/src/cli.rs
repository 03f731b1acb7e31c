//! Command-line front end.
//!
//! Exit codes: 0 success, 1 bad usage, 2 unreadable or invalid input,
//! 3 internal failure. Every output file records the tool version, seed and
//! full flag set, either in a `run` field (JSON outputs, model header) or in
//! a `<file>.meta.json` sidecar (CSV outputs).

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::roc::write_roc;
use crate::evaluation::survey::read_survey;
use crate::evaluation::{
    auc, confidence_comparison, cross_validate, default_thresholds, expert_roc, generate_synthetic,
    roc_curve, CvOptions, SynthSpec,
};
use crate::factorization::{als_fit, load_model, predict_raw, save_model, TrainConfig};
use crate::io::{self, RunMetadata};
use crate::matrix::{self, aggregate, ConflictPolicy, Rating, UtilityMatrix};
use crate::provenance::{self, read_manifests, read_records, to_triplets, TiePolicy};
use crate::recommend::{classify, recommend_datasets, recommend_pipelines, write_recommendations};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "provrec",
    version,
    about = "Recommend pipeline/dataset pairs likely to execute successfully, from provenance records"
)]
pub struct Cli {
    /// Worker threads for training and cross validation (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Attribute provenance records to datasets and write execution triplets.
    Ingest(IngestArgs),
    /// Fit the latent-factor model by alternating least squares.
    Train(TrainArgs),
    /// Score a single pipeline/dataset pair.
    Predict(PredictArgs),
    /// Rank pipelines for a dataset, or datasets for a pipeline.
    Recommend(RecommendArgs),
    /// k-fold cross validation with ROC/AUC, optionally against an expert survey.
    Evaluate(EvaluateArgs),
    /// ROC curve and AUC of a scored file (`score,label`).
    Roc(RocArgs),
    /// Generate a synthetic block-structured utility matrix.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieArg {
    EmitAll,
    EmitNone,
}

impl From<TieArg> for TiePolicy {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::EmitAll => TiePolicy::EmitAll,
            TieArg::EmitNone => TiePolicy::EmitNone,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictArg {
    AnySuccess,
    Majority,
    LatestTimestamp,
}

impl From<ConflictArg> for ConflictPolicy {
    fn from(c: ConflictArg) -> Self {
        match c {
            ConflictArg::AnySuccess => ConflictPolicy::AnySuccess,
            ConflictArg::Majority => ConflictPolicy::Majority,
            ConflictArg::LatestTimestamp => ConflictPolicy::LatestTimestamp,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Provenance records, one JSON object per line.
    #[arg(long)]
    pub records: PathBuf,
    /// Dataset manifests, CSV with header `dataset_id,hash`.
    #[arg(long)]
    pub manifests: PathBuf,
    /// Output triplets CSV (`pipeline_id,dataset_id,outcome`).
    #[arg(long)]
    pub out: PathBuf,
    /// Attribution report (JSON). Defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the aggregated utility matrix here.
    #[arg(long)]
    pub matrix_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "emit-all")]
    pub tie_policy: TieArg,
    /// How repeated executions of a pair collapse (with --matrix-out).
    #[arg(long, value_enum, default_value = "any-success")]
    pub conflict_policy: ConflictArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainFlags {
    /// Latent rank k.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub rank: u64,
    /// Regularisation weight λ.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iterations: u64,
    /// Relative objective decrease below which iteration stops (0 disables).
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Upper bound of the uniform factor initialisation (default 1/sqrt(rank)).
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Scale λ by each row's observation count.
    #[arg(long)]
    pub weighted_lambda: bool,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            rank: self.rank as usize,
            lambda: self.lambda,
            max_iterations: self.max_iterations as usize,
            tolerance: self.tolerance,
            seed,
            init_scale: self.init_scale,
            weighted_lambda: self.weighted_lambda,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Utility matrix CSV (`pipeline_id,dataset_id,rating`) or triplets CSV.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value = "any-success")]
    pub conflict_policy: ConflictArg,
    /// Where to write the model.
    #[arg(long)]
    pub model_out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pipeline: String,
    #[arg(long)]
    pub dataset: String,
    /// Rounding threshold: success iff score >= threshold.
    #[arg(long, default_value_t = 1.2)]
    pub threshold: f64,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("subject").required(true).args(["dataset", "pipeline"])))]
pub struct RecommendArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rank pipelines for this dataset.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Rank datasets for this pipeline.
    #[arg(long)]
    pub pipeline: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    #[arg(long, default_value_t = 1.2)]
    pub threshold: f64,
    /// Also write the table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value = "any-success")]
    pub conflict_policy: ConflictArg,
    #[arg(long, default_value_t = 10)]
    pub k_folds: usize,
    /// Seeds both the fold split and factor initialisation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plain random folds instead of rating-stratified ones.
    #[arg(long)]
    pub unstratified: bool,
    /// Comma-separated sweep thresholds (default: every held-out score).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub thresholds: Option<Vec<f64>>,
    /// Expert survey CSV for the baseline comparison.
    #[arg(long)]
    pub survey: Option<PathBuf>,
    /// Directory for report.json, roc.csv and (with --survey) baseline_roc.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args, Serialize)]
pub struct RocArgs {
    /// CSV with header `score,label`, label 1 (failed) or 2 (success).
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    pub n_pipelines: usize,
    #[arg(long, default_value_t = 22)]
    pub n_datasets: usize,
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
    /// Observed fraction of cells (default 288/704).
    #[arg(long, default_value_t = 288.0 / 704.0)]
    pub density: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output matrix CSV; the block assignment goes to `<out>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Io { .. }
        | Error::Stream(_)
        | Error::Parse { .. }
        | Error::UnknownId { .. }
        | Error::MissingTimestamp { .. }
        | Error::Empty(_)
        | Error::SingleClass(_) => EXIT_INPUT,
        Error::OutOfRange { .. }
        | Error::DimensionMismatch(_)
        | Error::Singular { .. }
        | Error::NonFinite(_) => EXIT_INTERNAL,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let text = e.render().to_string();
                    let _ = write!(err, "{text}");
                    if !text.contains("Usage:") {
                        let usage = Cli::command().render_usage();
                        let _ = writeln!(err, "\n{usage}");
                    }
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n as usize).build() {
            Ok(pool) => {
                let (mut o, mut e) = (Vec::new(), Vec::new());
                let r = pool.install(|| dispatch(&cli, &mut o, &mut e));
                let _ = out.write_all(&o);
                let _ = err.write_all(&e);
                r
            }
            Err(e) => Err(Error::InvalidArgument(format!("--jobs: {e}"))),
        },
        None => dispatch(&cli, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(cli, a, out),
        Command::Train(a) => cmd_train(cli, a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Recommend(a) => cmd_recommend(cli, a, out),
        Command::Evaluate(a) => cmd_evaluate(cli, a, out, err),
        Command::Roc(a) => cmd_roc(cli, a, out),
        Command::Synth(a) => cmd_synth(cli, a, out),
    }
}

fn run_meta(cli: &Cli, seed: Option<u64>) -> RunMetadata {
    let flags = serde_json::to_value(cli).unwrap_or(serde_json::Value::Null);
    let command = flags
        .get("command")
        .and_then(|c| c.get("command"))
        .and_then(|c| c.as_str())
        .unwrap_or_default()
        .to_string();
    RunMetadata::new(&command, seed, flags)
}

fn write_sidecar(path: &Path, meta: &RunMetadata) -> Result<()> {
    io::write_json(&io::sidecar_path(path), meta)
}

/// Loads a utility matrix, or aggregates a triplets file with `policy`.
pub fn load_matrix_input(path: &Path, policy: ConflictPolicy) -> Result<UtilityMatrix> {
    let mut first = String::new();
    io::open(path)?
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    if first.trim_end().ends_with(",rating") {
        matrix::load_matrix(path)
    } else {
        let triplets = provenance::parse_triplets(io::open(path)?).map_err(|e| match e {
            Error::Parse { context, message } => Error::Parse {
                context: format!("{}: {context}", path.display()),
                message,
            },
            other => other,
        })?;
        aggregate(&triplets, policy)
    }
}

fn cmd_ingest(cli: &Cli, a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let parsed = read_records(&a.records)?;
    let manifests = read_manifests(&a.manifests)?;
    let (triplets, mut report) = to_triplets(&parsed.records, &manifests, a.tie_policy.into());
    report.rejected = parsed.rejects.len();
    report.rejected_lines = parsed.rejects;

    let meta = run_meta(cli, None);
    io::write_atomic(&a.out, |w| provenance::write_triplets(w, &triplets))?;
    write_sidecar(&a.out, &meta)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".report.json");
        PathBuf::from(s)
    });
    #[derive(Serialize)]
    struct IngestReport<'a> {
        #[serde(flatten)]
        report: &'a provenance::AttributionReport,
        run: &'a RunMetadata,
    }
    io::write_json(&report_path, &IngestReport { report: &report, run: &meta })?;
    if let Some(mpath) = &a.matrix_out {
        let m = aggregate(&triplets, a.conflict_policy.into())?;
        matrix::save_matrix(mpath, &m, Some(meta.clone()))?;
    }
    writeln!(
        out,
        "records {}\nrejected {}\nattributed {}\nunattributable {}\ntied {}\ntriplets {}",
        report.records, report.rejected, report.attributed, report.unattributable, report.tied, report.triplets
    )?;
    if report.records == 0 {
        writeln!(out, "no records; wrote empty triplets file")?;
    }
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = a.train.config(a.seed);
    config.validate()?;
    let m = load_matrix_input(&a.matrix, a.conflict_policy.into())?;
    let model = als_fit(&m, &config)?;
    save_model(&a.model_out, &model, Some(run_meta(cli, Some(a.seed))))?;
    writeln!(out, "iterations {}", model.iterations)?;
    writeln!(out, "objective {}", io::fmt_f64(model.final_objective().unwrap_or(f64::NAN)))?;
    Ok(())
}

fn cmd_predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let u = model.pipeline_index(&a.pipeline).ok_or_else(|| Error::UnknownId {
        kind: "pipeline",
        id: a.pipeline.clone(),
    })?;
    let i = model.dataset_index(&a.dataset).ok_or_else(|| Error::UnknownId {
        kind: "dataset",
        id: a.dataset.clone(),
    })?;
    let pred = predict_raw(&model, u, i)?;
    let outcome = classify(pred.score, a.threshold)?;
    writeln!(out, "pipeline_id,dataset_id,score,predicted_outcome,cold_start")?;
    writeln!(
        out,
        "{},{},{},{},{}",
        a.pipeline,
        a.dataset,
        io::fmt_f64(pred.score),
        outcome,
        pred.cold_start
    )?;
    Ok(())
}

fn cmd_recommend(cli: &Cli, a: &RecommendArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let recs = match (&a.dataset, &a.pipeline) {
        (Some(d), _) => recommend_pipelines(&model, d, a.top_n, a.threshold)?,
        (None, Some(p)) => recommend_datasets(&model, p, a.top_n, a.threshold)?,
        (None, None) => return Err(Error::InvalidArgument("need --dataset or --pipeline".into())),
    };
    write_recommendations(&mut *out, &recs)?;
    if let Some(path) = &a.out {
        io::write_atomic(path, |w| write_recommendations(w, &recs))?;
        write_sidecar(path, &run_meta(cli, Some(model.config.seed)))?;
    }
    Ok(())
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = a.train.config(a.seed);
    config.validate()?;
    let m = load_matrix_input(&a.matrix, a.conflict_policy.into())?;
    if a.k_folds == 0 || a.k_folds > m.len() {
        return Err(Error::InvalidArgument(format!(
            "--k-folds {} with {} observed entries",
            a.k_folds,
            m.len()
        )));
    }
    let options = CvOptions {
        k_folds: a.k_folds,
        seed: a.seed,
        stratified: !a.unstratified,
        thresholds: a.thresholds.clone(),
    };
    let mut report = cross_validate(&m, &config, &options)?;
    if let Some(survey_path) = &a.survey {
        let survey = read_survey(survey_path)?;
        report.baseline = Some(expert_roc(&survey, &m, a.thresholds.as_deref())?);
        match confidence_comparison(&survey, &m) {
            Ok(c) => report.confidence = Some(c),
            Err(e) => writeln!(err, "warning: confidence comparison skipped: {e}")?,
        }
    }
    let meta = run_meta(cli, Some(a.seed));
    report.run = Some(meta.clone());

    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    io::write_json(&a.out_dir.join("report.json"), &report)?;
    let roc_path = a.out_dir.join("roc.csv");
    io::write_atomic(&roc_path, |w| write_roc(w, &report.roc))?;
    write_sidecar(&roc_path, &meta)?;
    if let Some(b) = &report.baseline {
        let path = a.out_dir.join("baseline_roc.csv");
        io::write_atomic(&path, |w| write_roc(w, &b.roc))?;
        write_sidecar(&path, &meta)?;
    }

    writeln!(out, "auc {}", io::fmt_f64(report.auc))?;
    if let Some(mean) = report.mean_fold_auc() {
        writeln!(out, "mean_fold_auc {}", io::fmt_f64(mean))?;
    }
    if let Some(b) = &report.baseline {
        writeln!(out, "baseline_auc {}", io::fmt_f64(b.auc))?;
    }
    if let Some(c) = &report.confidence {
        writeln!(
            out,
            "confidence success {} failure {} p {}",
            io::fmt_f64(c.mean_conf_success),
            io::fmt_f64(c.mean_conf_failure),
            io::fmt_f64(c.p_value)
        )?;
    }
    Ok(())
}

fn read_scored(path: &Path) -> Result<Vec<(f64, Rating)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(io::open(path)?);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        .clone();
    let score_col = headers.iter().position(|h| h == "score");
    let label_col = headers.iter().position(|h| h == "label");
    let (Some(sc), Some(lc)) = (score_col, label_col) else {
        return Err(Error::parse(path.display().to_string(), "need `score` and `label` columns"));
    };
    let mut scored = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let ctx = format!("{} row {}", path.display(), idx + 2);
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let score = io::parse_f64(&rec[sc]).ok_or_else(|| Error::parse(&ctx, "bad score"))?;
        let label = Rating::parse(&rec[lc]).ok_or_else(|| Error::parse(&ctx, "label must be 1 or 2"))?;
        scored.push((score, label));
    }
    Ok(scored)
}

fn cmd_roc(cli: &Cli, a: &RocArgs, out: &mut dyn Write) -> Result<()> {
    let scored = read_scored(&a.scores)?;
    let thresholds = a
        .thresholds
        .clone()
        .unwrap_or_else(|| default_thresholds(scored.iter().map(|s| s.0)));
    let points = roc_curve(&scored, &thresholds)?;
    let area = auc(&points)?;
    write_roc(&mut *out, &points)?;
    writeln!(out, "# auc {}", io::fmt_f64(area))?;
    if let Some(path) = &a.out {
        io::write_atomic(path, |w| write_roc(w, &points))?;
        write_sidecar(path, &run_meta(cli, None))?;
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec {
        n_pipelines: a.n_pipelines,
        n_datasets: a.n_datasets,
        n_blocks: a.blocks,
        density: a.density,
        noise_rate: a.noise,
        seed: a.seed,
    };
    let (m, truth) = generate_synthetic(&spec)?;
    matrix::save_matrix(&a.out, &m, Some(run_meta(cli, Some(a.seed))))?;
    let mut truth_path = a.out.as_os_str().to_owned();
    truth_path.push(".truth.json");
    io::write_json(Path::new(&truth_path), &truth)?;
    writeln!(
        out,
        "pipelines {}\ndatasets {}\nentries {}\nsuccesses {}",
        m.n_pipelines(),
        m.n_datasets(),
        m.len(),
        m.success_count()
    )?;
    Ok(())
}
