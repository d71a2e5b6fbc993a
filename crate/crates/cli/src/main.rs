use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use icq_core::annotate::{
    import_sidecar, resources_from, Annotations, FeatureKind, FeatureSpec, SidecarMode,
};
use icq_core::corpus::{strip_premises, Dataset, DatasetFiles, Split};
use icq_core::filter::SupportMode;
use icq_core::fixtures::{write_fixture, PlantSpec};
use icq_core::pipeline;
use icq_core::probe::{hypo_compare, load_predictions, CoverageMode, PredictionSet};
use icq_core::report::{
    emit_hypo_report, parse_accuracy_table, HypoRow, ReportDir, RunConfig, RunManifest,
};
use icq_service::ServiceConfig;

#[derive(Debug, Parser)]
#[command(
    name = "icq",
    version,
    about = "Find statistical cues in reasoning datasets and probe models for them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank the features of a dataset by cueness
    Cues(CuesArgs),
    /// Test whether a model's predictions exploit one cue
    Probe(ProbeArgs),
    /// Write the test split with premises removed
    HypoExport(HypoExportArgs),
    /// Compare full-input and hypothesis-only accuracy
    HypoReport(HypoReportArgs),
    /// Run the HTTP service
    Serve(ServeArgs),
    /// Generate a planted-cue dataset with its oracle and synthetic predictions
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SupportModeArg {
    Both,
    Any,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SidecarModeArg {
    Merge,
    Replace,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CoverageArg {
    Strict,
    Skip,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Dataset directory with train.jsonl, test.jsonl and meta.json
    dataset: PathBuf,
    /// Output directory
    #[arg(long, short, default_value = "icq-out")]
    out: PathBuf,
    /// Feature kinds to consider, comma separated (default: all)
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<FeatureKind>,
    /// Minimum filtered instances per split for a feature to qualify
    #[arg(long, default_value_t = 5)]
    min_support: usize,
    /// Whether min_support applies to both splits or either one
    #[arg(long, value_enum, default_value = "both")]
    support_mode: SupportModeArg,
    /// Minimum training-split frequency for a WORD feature
    #[arg(long, default_value_t = 5)]
    vocab_min_freq: usize,
    /// Directory of resource files replacing the built-in lexicons
    #[arg(long)]
    resources: Option<PathBuf>,
    /// Externally produced annotations (JSONL)
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// How sidecar annotations combine with the built-in ones
    #[arg(long, value_enum, default_value = "merge")]
    sidecar_mode: SidecarModeArg,
    /// Worker threads for annotation and filtering (default: available cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct CuesArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Number of cues to report
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Prediction file to add a delta column for, as MODEL=FILE or FILE
    #[arg(long = "preds", value_name = "MODEL=FILE")]
    preds: Vec<String>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Prediction file (JSONL)
    #[arg(long)]
    preds: PathBuf,
    /// Model name (default: prediction file stem)
    #[arg(long)]
    model: Option<String>,
    /// Feature to probe, as KIND:value or KIND
    #[arg(long)]
    feature: FeatureSpec,
    /// Stress-set sampling seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Minimum delta for an "exploits" verdict
    #[arg(long, default_value_t = 0.02)]
    delta_threshold: f64,
    /// Whether missing predictions fail the probe or are skipped
    #[arg(long, value_enum, default_value = "strict")]
    coverage: CoverageArg,
}

#[derive(Debug, Args)]
struct HypoExportArgs {
    /// Dataset directory
    dataset: PathBuf,
    /// Output JSONL file
    #[arg(long, short)]
    output: PathBuf,
    /// Also strip the training split and write it next to the output
    #[arg(long)]
    include_train: bool,
}

#[derive(Debug, Args)]
struct HypoReportArgs {
    /// Dataset directory (required with --full and --hypo)
    dataset: Option<PathBuf>,
    /// Predictions on the full inputs
    #[arg(long, requires = "hypo", requires = "dataset")]
    full: Option<PathBuf>,
    /// Predictions on the hypothesis-only export
    #[arg(long, requires = "full")]
    hypo: Option<PathBuf>,
    /// Model name for the report row (default: full-input file stem)
    #[arg(long)]
    model: Option<String>,
    /// Published accuracy table (CSV: dataset,model,majority,full,hypo)
    #[arg(long, conflicts_with_all = ["full", "hypo", "dataset"])]
    table: Option<PathBuf>,
    /// Output directory
    #[arg(long, short, default_value = "icq-out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Run store directory
    #[arg(long, env = "ICQ_STORE_DIR", default_value = icq_service::DEFAULT_STORE)]
    store: PathBuf,
    /// Listen address
    #[arg(long, env = "ICQ_BIND_ADDR", default_value = icq_service::DEFAULT_BIND)]
    bind: String,
    /// Upload cap per file in bytes
    #[arg(long, env = "ICQ_MAX_UPLOAD", default_value_t = icq_service::DEFAULT_MAX_UPLOAD)]
    max_upload: usize,
    /// Stress-set sampling seed
    #[arg(long, env = "ICQ_SEED", default_value_t = 42)]
    seed: u64,
    /// Directory of resource files replacing the built-in lexicons
    #[arg(long)]
    resources: Option<PathBuf>,
    /// Static web frontend served at /
    #[arg(long)]
    webui: Option<PathBuf>,
    /// Concurrent annotation jobs
    #[arg(long, default_value_t = 2)]
    workers: usize,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Generator spec (JSON); the reference spec when omitted
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output dataset directory
    #[arg(long, short)]
    output: PathBuf,
}

/// Errors that map to exit code 2 without coming from the core library.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<icq_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<icq_service::ServiceError>() {
            return match e {
                icq_service::ServiceError::Bind { .. } => 2,
                icq_service::ServiceError::Core(c) if c.is_validation() => 2,
                _ => 1,
            };
        }
        if cause.is::<UsageError>() {
            return 2;
        }
    }
    1
}

/// The error chain joined with ": ", skipping causes already quoted by
/// their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

/// Writes to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Cues(args) => cues(args),
        Command::Probe(args) => probe(args),
        Command::HypoExport(args) => hypo_export(args),
        Command::HypoReport(args) => hypo_report(args),
        Command::Serve(args) => serve(args),
        Command::Fixture(args) => fixture(args),
    }
}

struct Loaded {
    dataset: Dataset,
    annotations: Annotations,
    manifest: RunManifest,
}

fn dataset_name(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".to_string())
}

impl PipelineArgs {
    fn run_config(&self) -> RunConfig {
        RunConfig {
            min_support: self.min_support,
            vocab_min_freq: self.vocab_min_freq,
            support_mode: match self.support_mode {
                SupportModeArg::Both => SupportMode::Both,
                SupportModeArg::Any => SupportMode::Any,
            },
            kinds: self.kinds.iter().fold(Vec::new(), |mut acc, k| {
                if !acc.contains(k) {
                    acc.push(*k);
                }
                acc
            }),
            ..RunConfig::default()
        }
    }

    fn load(&self, config: RunConfig) -> anyhow::Result<Loaded> {
        if let Some(jobs) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build_global()
                .context("configuring worker threads")?;
        }
        let files = DatasetFiles::read(&self.dataset)?;
        let dataset = files.parse(&dataset_name(&self.dataset), &self.dataset)?;
        let resources = resources_from(self.resources.as_ref())?;
        let mut annotations = pipeline::annotate(&dataset, &resources, &config);
        if let Some(path) = &self.sidecar {
            let mode = match self.sidecar_mode {
                SidecarModeArg::Merge => SidecarMode::Merge,
                SidecarModeArg::Replace => SidecarMode::Replace,
            };
            import_sidecar(path, &dataset, &mut annotations, mode)?;
        }
        let manifest = RunManifest::new(
            dataset.name(),
            &files.content_hash(),
            resources.content_hash(),
            config,
        );
        Ok(Loaded {
            dataset,
            annotations,
            manifest,
        })
    }
}

fn model_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string())
}

fn parse_model_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((model, file)) if !model.is_empty() => (model.to_string(), PathBuf::from(file)),
        _ => {
            let path = PathBuf::from(arg);
            (model_from_path(&path), path)
        }
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        say!("wrote {}\n", p.display());
    }
}

fn cues(args: CuesArgs) -> anyhow::Result<()> {
    let config = RunConfig {
        top_k: args.top,
        ..args.pipeline.run_config()
    };
    let loaded = args.pipeline.load(config)?;
    let mut models = Vec::new();
    for arg in &args.preds {
        let (model, path) = parse_model_arg(arg);
        if models.iter().any(|m: &PredictionSet| m.model_name == model) {
            return Err(UsageError(format!("model {model} given twice")).into());
        }
        models.push(load_predictions(&path, &model, &loaded.dataset)?);
    }
    let table = pipeline::cue_table(
        loaded.manifest,
        &loaded.dataset,
        &loaded.annotations,
        &models,
    )?;
    let out = ReportDir::new(&args.pipeline.out);
    let mut written = vec![out.write_manifest(&table.manifest)?];
    written.extend(out.write_cues(&table)?);
    say!("{}", table.to_text());
    print_written(&written);
    Ok(())
}

fn probe(args: ProbeArgs) -> anyhow::Result<()> {
    let config = RunConfig {
        seed: args.seed,
        delta_threshold: args.delta_threshold,
        ..args.pipeline.run_config()
    };
    let loaded = args.pipeline.load(config)?;
    let model = args
        .model
        .clone()
        .unwrap_or_else(|| model_from_path(&args.preds));
    let preds = load_predictions(&args.preds, &model, &loaded.dataset)?;
    let coverage = match args.coverage {
        CoverageArg::Strict => CoverageMode::Strict,
        CoverageArg::Skip => CoverageMode::Skip,
    };
    let (doc, stress) = pipeline::probe_feature(
        loaded.manifest,
        &loaded.dataset,
        &loaded.annotations,
        &preds,
        &args.feature,
        coverage,
    )?;
    let out = ReportDir::new(&args.pipeline.out);
    let mut written = vec![out.write_manifest(&doc.manifest)?];
    written.extend(out.write_probe(&doc)?);
    written.push(out.write_stress(&model, &stress, &stress.to_jsonl(&loaded.dataset))?);
    let r = &doc.report;
    say!(
        "{} on {}: acc_f={:.4} acc_nf={:.4} delta={:.4} dist_jsd={:.4} verdict={}\n",
        r.model,
        r.feature,
        r.acc_f,
        r.acc_nf,
        r.delta,
        r.dist_jsd,
        r.verdict
    );
    print_written(&written);
    Ok(())
}

fn hypo_export(args: HypoExportArgs) -> anyhow::Result<()> {
    let files = DatasetFiles::read(&args.dataset)?;
    let dataset = files.parse(&dataset_name(&args.dataset), &args.dataset)?;
    let stripped = strip_premises(&dataset, args.include_train);
    write_file(&args.output, &stripped.split_to_jsonl(Split::Test))?;
    say!("wrote {}\n", args.output.display());
    if args.include_train {
        let train = args.output.with_file_name(format!(
            "{}-train.jsonl",
            args.output
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
        ));
        write_file(&train, &stripped.split_to_jsonl(Split::Train))?;
        say!("wrote {}\n", train.display());
    }
    Ok(())
}

fn write_file(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| icq_core::Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| icq_core::Error::io(path, e))?;
    Ok(())
}

fn hypo_report(args: HypoReportArgs) -> anyhow::Result<()> {
    let report = if let Some(table) = &args.table {
        let text = std::fs::read_to_string(table).map_err(|e| icq_core::Error::io(table, e))?;
        emit_hypo_report(None, parse_accuracy_table(&text, table)?)
    } else {
        let (Some(dir), Some(full), Some(hypo)) = (&args.dataset, &args.full, &args.hypo) else {
            bail!(UsageError(
                "either --table or a dataset with --full and --hypo is required".into()
            ));
        };
        let files = DatasetFiles::read(dir)?;
        let dataset = files.parse(&dataset_name(dir), dir)?;
        let model = args.model.clone().unwrap_or_else(|| model_from_path(full));
        let full_preds = load_predictions(full, &model, &dataset)?;
        let hypo_preds = load_predictions(hypo, &model, &dataset)?;
        let cmp = hypo_compare(&full_preds, &hypo_preds, &dataset)?;
        let manifest = RunManifest::new(
            dataset.name(),
            &files.content_hash(),
            resources_from(None)?.content_hash(),
            RunConfig::default(),
        );
        let row = HypoRow::new(
            dataset.name(),
            &model,
            cmp.majority * 100.0,
            cmp.acc_full * 100.0,
            cmp.acc_hypo * 100.0,
        );
        emit_hypo_report(Some(manifest), vec![row])
    };
    let written = ReportDir::new(&args.out).write_hypo(&report)?;
    say!("{}", report.to_csv());
    print_written(&written);
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        tokio::signal::ctrl_c().await.ok();
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let config = ServiceConfig {
        store_dir: args.store,
        bind: args.bind,
        max_upload: args.max_upload,
        seed: args.seed,
        resources_dir: args.resources,
        webui_dir: args.webui,
        workers: args.workers,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(icq_service::run(config, shutdown_signal()))?;
    Ok(())
}

fn fixture(args: FixtureArgs) -> anyhow::Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| icq_core::Error::io(path, e))?;
            serde_json::from_str::<PlantSpec>(&text).map_err(|e| {
                icq_core::Error::MalformedLine {
                    path: path.clone(),
                    line: e.line(),
                    message: e.to_string(),
                }
            })?
        }
        None => PlantSpec::reference(),
    };
    let (dataset, oracle) = write_fixture(&spec, &args.output)?;
    say!(
        "wrote {} ({} train, {} test); planted {} with cueness {}\n",
        args.output.display(),
        dataset.train().len(),
        dataset.test().len(),
        oracle.planted.feature,
        oracle
            .cueness
            .map_or_else(|| "n/a".to_string(), |c| format!("{c:.6}")),
    );
    Ok(())
}
