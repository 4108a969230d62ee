use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use critclust::evaluation::{
    evaluate_run, fairness_audit, parse_confusion_tsv, LabelSource, MappingMode, DEFAULT_FLAG_THRESHOLD,
};
use critclust::gateway::Gateway;
use critclust::ingest::{load_manifest, scan_directory, subsample, Layout};
use critclust::pipeline::{
    Pipeline, PipelineConfig, ResumeOverrides, RunOptions, RunStore, RunSummary, Stage, DEFAULT_FUZZY_RATIO,
};
use critclust::prompts::{preset, preset_names, TextCriterion};
use critclust::{EvalReport, FairnessReport};
use serde_json::{json, Value};

use crate::backend::{gateway_config, BackendSpec};
use crate::plot::confusion_svg;
use crate::service::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "critclust", version, about = "Cluster images by a natural-language criterion")]
pub struct Cli {
    /// Run store directory.
    #[arg(long, global = true, env = "CRITCLUST_STORE", default_value = "critclust-store")]
    pub store: PathBuf,

    /// Output style; `structured` prints JSON, including errors.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Structured,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct CriterionArgs {
    /// Criterion file (TOML, or JSON with a .json extension).
    #[arg(long)]
    pub criterion: Option<PathBuf>,
    /// Built-in criterion by name.
    #[arg(long)]
    pub preset: Option<String>,
}

impl CriterionArgs {
    /// The criterion and, for presets, their dictionary threshold.
    fn resolve(&self) -> anyhow::Result<(TextCriterion, Option<u64>)> {
        if let Some(path) = &self.criterion {
            return Ok((TextCriterion::load(path)?, None));
        }
        let name = self.preset.as_deref().unwrap_or_default();
        match preset(name) {
            Some(p) => Ok((p.criterion, Some(p.dictionary_threshold))),
            None => bail!("unknown preset {name:?}; known presets: {}", preset_names().join(", ")),
        }
    }
}

#[derive(Debug, Args)]
pub struct SettingsArgs {
    /// Drop raw labels seen fewer times before Step 2b. Defaults to the
    /// preset's value, or 0 (keep all).
    #[arg(long)]
    pub threshold: Option<u64>,
    /// Total Step-2b attempts before giving up on an exact-K list.
    #[arg(long, default_value_t = 3)]
    pub k_attempts: usize,
    /// Failed fraction of a stage that aborts the run.
    #[arg(long, default_value_t = 0.01)]
    pub failure_limit: f64,
    /// Largest normalized edit distance accepted as a fuzzy match.
    #[arg(long, default_value_t = DEFAULT_FUZZY_RATIO)]
    pub fuzzy_ratio: f64,
}

impl SettingsArgs {
    fn build(&self, preset_threshold: Option<u64>) -> PipelineConfig {
        PipelineConfig {
            dictionary_threshold: self.threshold.or(preset_threshold).unwrap_or(0),
            k_attempts: self.k_attempts,
            fuzzy_ratio: self.fuzzy_ratio,
            failure_limit: self.failure_limit,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub criterion: CriterionArgs,
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Explicit run id (default: next free `run-NNNN`).
    #[arg(long)]
    pub run_id: Option<String>,
    /// Stop after checkpointing this stage.
    #[arg(long)]
    pub stop_after: Option<Stage>,
    #[arg(long, default_value_t = 8)]
    pub max_concurrency: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a manifest from an image directory.
    Scan {
        #[arg(long)]
        images: PathBuf,
        /// `class-subdirs` (directory name is the truth label) or `flat`.
        #[arg(long, default_value = "class-subdirs")]
        layout: Layout,
        #[arg(long)]
        dataset_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a reproducible uniform subsample of a manifest.
    Subsample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Create a run and execute it.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// `mock:SCRIPT.json`, `replay:TRANSCRIPT.jsonl` or `live:ENDPOINTS.toml`.
        #[arg(long)]
        backend: BackendSpec,
    },
    /// Continue an interrupted run from its last checkpoint.
    Resume {
        #[arg(long)]
        run: String,
        #[arg(long)]
        backend: BackendSpec,
        /// Must match the run's criterion; edits belong in `refine`.
        #[arg(long)]
        criterion: Option<PathBuf>,
        /// Manifest with moved image paths.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        max_concurrency: usize,
    },
    /// Create and execute a child run with an edited criterion.
    Refine {
        #[arg(long)]
        parent: String,
        #[command(flatten)]
        criterion: CriterionArgs,
        #[arg(long)]
        backend: BackendSpec,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long, default_value_t = 8)]
        max_concurrency: usize,
    },
    /// Summary of one run.
    Show {
        #[arg(long)]
        run: String,
    },
    /// All runs in the store.
    List,
    /// Score a finished run against truth or human labels.
    Eval {
        #[arg(long)]
        run: String,
        /// JSONL of `{"image_id", "human_label"}`; default: manifest truth labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Map each cluster to its majority class instead of one-to-one.
        #[arg(long)]
        many_to_one: bool,
    },
    /// Per-cluster group ratios for one sensitive attribute.
    Fairness {
        #[arg(long)]
        run: String,
        #[arg(long)]
        attribute: String,
        #[arg(long, default_value_t = DEFAULT_FLAG_THRESHOLD)]
        threshold: f64,
    },
    /// Record or replay model transcripts.
    #[command(subcommand)]
    Transcript(TranscriptCommand),
    /// Render a run's confusion grid as SVG.
    ConfusionPlot {
        /// Read the grid from this run's last evaluation.
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        run: Option<String>,
        /// Read the grid from a confusion TSV.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Default: `confusion.svg` next to the run's evaluation.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
    },
    /// Serve the review API over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Backend for refinements; without one, refine requests get 503.
        #[arg(long)]
        backend: Option<BackendSpec>,
        #[arg(long, default_value_t = 8)]
        max_concurrency: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum TranscriptCommand {
    /// Run against a backend and save every request/response pair.
    Record {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        backend: BackendSpec,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run answering only from a transcript.
    Replay {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        transcript: PathBuf,
    },
}

/// A command's result in both renderings.
#[derive(Debug, Clone)]
pub struct Report {
    pub json: Value,
    pub text: String,
}

impl Report {
    fn new(json: Value, text: String) -> Self {
        Report { json, text }
    }
}

/// Parses `args`, executes, prints, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_tracing(cli.verbose);
    match execute(&cli) {
        Ok(report) => {
            match cli.format {
                Format::Text => print!("{}", report.text),
                Format::Structured => println!("{}", report.json),
            }
            0
        }
        Err(e) => {
            let (kind, message) = describe(&e);
            match cli.format {
                Format::Text => eprintln!("error: {message}"),
                Format::Structured => println!("{}", json!({"error": {"kind": kind, "message": message}})),
            }
            1
        }
    }
}

fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Stable error kind plus the full message chain.
pub fn describe(e: &anyhow::Error) -> (String, String) {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<critclust::Error>())
        .map_or("invalid_argument", critclust::Error::kind);
    (kind.to_string(), format!("{e:#}"))
}

pub fn execute(cli: &Cli) -> anyhow::Result<Report> {
    let store = || RunStore::open(&cli.store).with_context(|| format!("opening store {}", cli.store.display()));
    match &cli.command {
        Command::Scan {
            images,
            layout,
            dataset_id,
            out,
        } => {
            let mut m = scan_directory(images, *layout)?;
            if let Some(id) = dataset_id {
                m.dataset_id = id.clone();
            }
            m.save(out)?;
            let classes = m.class_names.clone().unwrap_or_default();
            Ok(Report::new(
                json!({"manifest": out, "dataset_id": m.dataset_id, "images": m.records.len(), "classes": classes}),
                format!(
                    "{} images ({} classes) in dataset {} written to {}\n",
                    m.records.len(),
                    classes.len(),
                    m.dataset_id,
                    out.display()
                ),
            ))
        }
        Command::Subsample { manifest, n, seed, out } => {
            let m = load_manifest(manifest)?;
            let s = subsample(&m, *n, *seed)?;
            s.save(out)?;
            Ok(Report::new(
                json!({"manifest": out, "images": s.records.len(), "seed": seed}),
                format!("{} of {} images (seed {seed}) written to {}\n", s.records.len(), m.records.len(), out.display()),
            ))
        }
        Command::Run { run, backend } => {
            let store = store()?;
            let (_, id) = start_run(&store, run, backend, false)?;
            summary_report(&store, &id?)
        }
        Command::Resume {
            run,
            backend,
            criterion,
            manifest,
            max_concurrency,
        } => {
            let store = store()?;
            let overrides = ResumeOverrides {
                criterion: criterion.as_deref().map(TextCriterion::load).transpose()?,
                manifest: manifest.as_deref().map(load_manifest).transpose()?,
            };
            let gw = Gateway::new(backend.open()?, gateway_config(&store, backend, *max_concurrency, false));
            Pipeline::new(&store, &gw).resume(run, &overrides)?;
            summary_report(&store, run)
        }
        Command::Refine {
            parent,
            criterion,
            backend,
            run_id,
            max_concurrency,
        } => {
            let store = store()?;
            let (tc, _) = criterion.resolve()?;
            let gw = Gateway::new(backend.open()?, gateway_config(&store, backend, *max_concurrency, false));
            let state = Pipeline::new(&store, &gw).refine(parent, &tc, run_id.as_deref())?;
            summary_report(&store, &state.run_id)
        }
        Command::Show { run } => summary_report(&store()?, run),
        Command::List => {
            let store = store()?;
            let mut rows = Vec::new();
            let mut text = String::new();
            for id in store.list_runs()? {
                let s = store.summary(&id)?;
                let _ = writeln!(
                    text,
                    "{:<12} {:<8} {:<24} parent {}",
                    s.run_id,
                    s.stage.as_str(),
                    s.criterion.criterion_id,
                    s.parent_run_id.as_deref().unwrap_or("-")
                );
                rows.push(serde_json::to_value(&s)?);
            }
            Ok(Report::new(Value::Array(rows), text))
        }
        Command::Eval { run, labels, many_to_one } => {
            let store = store()?;
            let source = labels.clone().map_or(LabelSource::Manifest, LabelSource::HumanFile);
            let mode = if *many_to_one { MappingMode::ManyToOne } else { MappingMode::Injective };
            let r = evaluate_run(&store, run, &source, mode)?;
            Ok(Report::new(serde_json::to_value(&r)?, eval_text(run, &r)))
        }
        Command::Fairness { run, attribute, threshold } => {
            let r = fairness_audit(&store()?, run, attribute, *threshold)?;
            Ok(Report::new(serde_json::to_value(&r)?, fairness_text(run, &r)))
        }
        Command::Transcript(TranscriptCommand::Record { run, backend, out }) => {
            let store = store()?;
            let (gw, outcome) = start_run(&store, run, backend, true)?;
            // Saved even when the run fails, so the failure can be replayed.
            let transcript = gw.transcript().context("recording was not enabled")?;
            transcript.save(out)?;
            let id = outcome?;
            let mut report = summary_report(&store, &id)?;
            report.json["transcript"] = json!({"path": out, "entries": transcript.len()});
            let _ = writeln!(report.text, "transcript: {} entries written to {}", transcript.len(), out.display());
            Ok(report)
        }
        Command::Transcript(TranscriptCommand::Replay { run, transcript }) => {
            let store = store()?;
            let spec = BackendSpec::Replay(transcript.clone());
            let (_, id) = start_run(&store, run, &spec, false)?;
            summary_report(&store, &id?)
        }
        Command::ConfusionPlot { run, input, out, title } => {
            let store_dir;
            let (tsv_path, default_out) = match (run, input) {
                (_, Some(p)) => (p.clone(), p.with_extension("svg")),
                (Some(id), None) => {
                    let s = store()?;
                    if !s.exists(id) {
                        return Err(critclust::Error::RunNotFound(id.clone()).into());
                    }
                    store_dir = s.run_dir(id).join("eval");
                    (store_dir.join("confusion.tsv"), store_dir.join("confusion.svg"))
                }
                (None, None) => bail!("pass --run or --input"),
            };
            let text = fs::read_to_string(&tsv_path).with_context(|| {
                format!("reading {} (run `critclust eval` first)", tsv_path.display())
            })?;
            let (clusters, classes, grid) = parse_confusion_tsv(&text)?;
            let title = title.clone().or_else(|| run.clone()).unwrap_or_else(|| "confusion".into());
            let out = out.clone().unwrap_or(default_out);
            write_file(&out, &confusion_svg(&title, &clusters, &classes, &grid))?;
            Ok(Report::new(
                json!({"svg": out, "clusters": clusters.len(), "classes": classes.len()}),
                format!("wrote {}\n", out.display()),
            ))
        }
        Command::Serve {
            bind,
            port,
            backend,
            max_concurrency,
        } => {
            let store = store()?;
            let (backend, gw_config) = match backend {
                Some(spec) => (Some(spec.open()?), gateway_config(&store, spec, *max_concurrency, false)),
                None => (None, store.gateway_config(Default::default())),
            };
            let state = AppState::new(store, backend, gw_config)?;
            let addr = SocketAddr::new(*bind, *port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(state, addr))?;
            Ok(Report::new(json!({"stopped": true}), String::new()))
        }
    }
}

/// Runs `args` to completion. The gateway comes back for transcript saving,
/// alongside the pipeline outcome.
fn start_run(
    store: &RunStore,
    args: &RunArgs,
    spec: &BackendSpec,
    record: bool,
) -> anyhow::Result<(Gateway, critclust::Result<String>)> {
    let manifest = load_manifest(&args.manifest)?;
    let (tc, preset_threshold) = args.criterion.resolve()?;
    let settings = args.settings.build(preset_threshold);
    let backend = spec.open()?;
    let gw = Gateway::new(Arc::clone(&backend), gateway_config(store, spec, args.max_concurrency, record));
    let state = Pipeline::new(store, &gw)
        .with_options(RunOptions {
            stop_after: args.stop_after,
        })
        .run_all(&manifest, &tc, &settings, args.run_id.as_deref())
        .map(|s| s.run_id);
    Ok((gw, state))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn summary_report(store: &RunStore, run_id: &str) -> anyhow::Result<Report> {
    let s = store.summary(run_id)?;
    let mut json = serde_json::to_value(&s)?;
    let progress = store.progress(run_id)?;
    json["error"] = json!(progress.error);
    let mut text = summary_text(&s);
    if let Some(err) = &progress.error {
        let _ = writeln!(text, "last error: {err}");
    }
    Ok(Report::new(json, text))
}

fn summary_text(s: &RunSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "run {}", s.run_id);
    if let Some(p) = &s.parent_run_id {
        let _ = writeln!(t, "parent {p}");
    }
    let _ = writeln!(
        t,
        "dataset {} ({} images), criterion {}, K={}",
        s.dataset_id, s.dataset_size, s.criterion.criterion_id, s.k
    );
    let _ = writeln!(t, "stage {}", s.stage);
    if !s.clusters.is_empty() {
        let width = s.clusters.iter().map(|c| c.name.chars().count()).max().unwrap_or(0);
        for c in &s.clusters {
            let _ = writeln!(t, "  {:>3}  {:<width$}  {}", c.index, c.name, c.size);
        }
    }
    if let Some(rate) = s.fallback_rate {
        let _ = writeln!(t, "fallback rate {rate:.4}");
    }
    if let Some(m) = &s.metrics {
        let _ = writeln!(
            t,
            "ACC {:.4}  NMI {:.4}  ARI {:.4}  over {} images",
            m.acc, m.nmi, m.ari, m.n_evaluated
        );
    }
    t
}

fn eval_text(run: &str, r: &EvalReport) -> String {
    let mode = match r.mapping_mode {
        MappingMode::Injective => "injective",
        MappingMode::ManyToOne => "many-to-one",
    };
    let mut t = format!(
        "{run}: ACC {:.4}  NMI {:.4}  ARI {:.4}  over {} images ({mode} mapping)\n",
        r.acc, r.nmi, r.ari, r.n_evaluated
    );
    for m in &r.mapping {
        let _ = writeln!(t, "  {} -> {} ({})", m.cluster, m.class.as_deref().unwrap_or("-"), m.overlap);
    }
    t
}

fn fairness_text(run: &str, r: &FairnessReport) -> String {
    let mut t = format!(
        "{run}: attribute {}, {} images included, {} without the attribute\n",
        r.attribute, r.n_included, r.n_missing
    );
    for c in &r.clusters {
        let ratios: Vec<String> = r
            .groups
            .iter()
            .map(|g| format!("{g} {:.3}", c.ratios.get(g).copied().unwrap_or(0.0)))
            .collect();
        let flag = if c.flagged { "  FLAGGED" } else { "" };
        let _ = writeln!(
            t,
            "  {:<24} n={:<5} {}  disparity {:.3}{flag}",
            c.name,
            c.total,
            ratios.join(", "),
            c.disparity
        );
    }
    t
}
