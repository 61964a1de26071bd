//! Command line: `nairs <ingest|train|eval|cache|serve|report> [flags]`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure (with a one-line JSON
//! error on stderr), 2 on a usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nairs_core::dataset::{leave_one_out_split, SplitPair};
use nairs_core::evaluation::{evaluate, EvalConfig, ModelScorer, PopularityScorer, Scorer};
use nairs_core::model::{Hyperparams, ModelKind, ModelParams};
use nairs_core::retrieval::{build_cache, DEFAULT_CACHE_DEPTH};
use nairs_core::training::{fit, FitError, TrainObserver, Validation};
use serde_json::json;

use crate::cache;
use crate::config;
use crate::error::{Error, Result};
use crate::io::{self, Format};
use crate::reports::{self, TrainSummary};
use crate::service::{self, AppState, ServiceConfig};
use crate::snapshot::Snapshot;

#[derive(Debug, Parser)]
#[command(name = "nairs", version, about = "Attentive item-based collaborative filtering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw interaction file into a dataset directory.
    Ingest(IngestArgs),
    /// Fit a model and write a snapshot, a JSON report and a metrics log.
    Train(TrainArgs),
    /// Leave-one-out evaluation with sampled negatives.
    Eval(EvalArgs),
    /// Build the similar-user and similar-item cache for a snapshot.
    Cache(CacheArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Export per-epoch metrics of a training run as CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw interaction file (`user item rating [timestamp]` records).
    #[arg(long)]
    pub data: PathBuf,
    /// Input format; guessed from the extension and first line when omitted.
    #[arg(long)]
    pub format: Option<Format>,
    /// Optional item names file (`id<TAB>name`, `id::title::genres` or `id|title|...`).
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or raw interaction file.
    #[arg(long, env = "NAIRS_DATA")]
    pub data: PathBuf,
    /// Snapshot to write.
    #[arg(long, env = "NAIRS_MODEL")]
    pub model: PathBuf,
    /// `key = value` hyperparameter file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Embedding size; the attention width follows it unless set separately.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub attention_dim: Option<usize>,
    #[arg(long)]
    pub neg_ratio: Option<usize>,
    /// `nairs` (attentive) or `fism` (uniform weights).
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub fism_alpha: Option<f64>,
    /// Train on every interaction instead of the leave-one-out train part
    /// (disables per-epoch validation).
    #[arg(long)]
    pub full: bool,
    /// Metrics log path [default: <model>.metrics.tsv].
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    Nairs,
    Fism,
    Popularity,
}

impl ScorerKind {
    fn name(self) -> &'static str {
        match self {
            ScorerKind::Nairs => "nairs",
            ScorerKind::Fism => "fism",
            ScorerKind::Popularity => "popularity",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "NAIRS_DATA")]
    pub data: PathBuf,
    /// Snapshot to evaluate; not needed for `--scorer popularity`.
    #[arg(long, env = "NAIRS_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nairs")]
    pub scorer: ScorerKind,
    /// Seed of the negative sampler.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cut-off of HR@n and NDCG@n.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Sampled negatives per held-out item.
    #[arg(long, default_value_t = 99)]
    pub negatives: usize,
    /// Report path [default: <model>.<scorer>.metrics.tsv, or
    /// <data>/popularity.metrics.tsv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(long, env = "NAIRS_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "NAIRS_MODEL")]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CACHE_DEPTH)]
    pub depth: usize,
    /// [default: <model>.cache]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "NAIRS_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "NAIRS_MODEL")]
    pub model: PathBuf,
    /// Event log (JSON lines), replayed on startup.
    #[arg(long, env = "NAIRS_LOG", default_value = "events.jsonl")]
    pub log: PathBuf,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// [default: <model>.cache]
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CACHE_DEPTH)]
    pub depth: usize,
    /// Base seed of bootstrap draws made without a seed header.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Snapshot whose `<model>.report.json` is read.
    #[arg(long, env = "NAIRS_MODEL")]
    pub model: PathBuf,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
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
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Cache(a) => build_cache_cmd(a),
        Command::Serve(a) => serve(a),
        Command::Report(a) => report(a),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(suffix);
    p.into()
}

pub fn report_path(model: &Path) -> PathBuf {
    with_suffix(model, ".report.json")
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut dataset = io::load_any(&a.data, a.format)?;
    if let Some(items) = &a.items {
        dataset.attach_names(&io::load_item_names(items)?);
    }
    io::save_dataset_dir(&dataset, &a.out)?;
    let set = &dataset.interactions;
    println!(
        "{}",
        json!({
            "out": a.out,
            "users": set.num_users(),
            "items": set.num_items(),
            "interactions": set.len(),
            "duplicates_dropped": set.duplicates_dropped(),
        })
    );
    Ok(())
}

/// Hyperparameters from the config file and flags.
pub fn hyperparams(a: &TrainArgs) -> Result<Hyperparams> {
    let mut hp = Hyperparams::default();
    let mut explicit_attention = false;
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in config::parse_pairs(&text)? {
            if !config::apply(&mut hp, &k, &v)? {
                return Err(Error::Config(format!("{}: unknown key `{k}`", path.display())));
            }
            explicit_attention |= k == "attention_dim";
        }
    }
    let dim_flag = a.dim.is_some();
    hp.seed = a.seed.unwrap_or(hp.seed);
    hp.epochs = a.epochs.unwrap_or(hp.epochs);
    hp.beta = a.beta.unwrap_or(hp.beta);
    hp.dim = a.dim.unwrap_or(hp.dim);
    hp.neg_ratio = a.neg_ratio.unwrap_or(hp.neg_ratio);
    hp.learning_rate = a.lr.unwrap_or(hp.learning_rate);
    hp.lambda = a.lambda.unwrap_or(hp.lambda);
    hp.fism_alpha = a.fism_alpha.unwrap_or(hp.fism_alpha);
    if let Some(k) = &a.kind {
        hp.kind = ModelKind::parse(k).ok_or_else(|| Error::Usage(format!("unknown model kind `{k}` (nairs or fism)")))?;
    }
    match a.attention_dim {
        Some(att) => hp.attention_dim = att,
        None if dim_flag && !explicit_attention => hp.attention_dim = hp.dim,
        None => {}
    }
    hp.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(hp)
}

struct Progress<'a> {
    start: Instant,
    validation: Option<(&'a SplitPair, &'a Hyperparams)>,
}

impl TrainObserver for Progress<'_> {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, epoch: usize, params: &ModelParams) -> Option<Validation> {
        let (split, hp) = self.validation?;
        let cfg = EvalConfig {
            seed: hp.seed,
            ..Default::default()
        };
        let scorer = ModelScorer::new(params, hp, &split.train);
        let m = evaluate(&scorer, split, &cfg).ok()?;
        tracing::info!(epoch, hr = m.hr, ndcg = m.ndcg, "validation");
        Some(Validation { hr: m.hr, ndcg: m.ndcg })
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let hp = hyperparams(&a)?;
    let dataset = io::load_any(&a.data, None)?;
    let split = (!a.full).then(|| leave_one_out_split(&dataset.interactions));
    let train_set = split.as_ref().map_or(&dataset.interactions, |s| &s.train);
    tracing::info!(
        users = train_set.num_users(),
        items = train_set.num_items(),
        interactions = train_set.len(),
        kind = hp.kind.name(),
        "training"
    );

    let mut progress = Progress {
        start: Instant::now(),
        validation: split.as_ref().map(|s| (s, &hp)),
    };
    let summary_for = |report, version: String| {
        TrainSummary::new(report, version, train_set.num_users(), train_set.num_items(), train_set.len())
    };
    let (params, report) = match fit(train_set, &hp, &mut progress) {
        Ok(r) => r,
        Err(FitError::Invalid(e)) => return Err(e.into()),
        Err(FitError::Diverged { epoch, report }) => {
            summary_for(&report, String::new()).save(&report_path(&a.model))?;
            return Err(Error::Training(format!("loss became non-finite at epoch {epoch}")));
        }
    };

    let mut snapshot = Snapshot::new(params, hp);
    let meta = |k: &str, v: String| (k.to_string(), v);
    snapshot.metadata = vec![
        meta("train_split", if a.full { "full" } else { "leave_one_out" }.into()),
        meta("num_train", train_set.len().to_string()),
        meta("epochs_completed", report.epochs.len().to_string()),
    ];
    if let Some(l) = report.initial_loss {
        snapshot.metadata.push(meta("initial_loss", format!("{l:?}")));
    }
    if let Some(l) = report.final_loss() {
        snapshot.metadata.push(meta("final_loss", format!("{l:?}")));
    }
    let version = snapshot.save(&a.model)?;
    let summary = summary_for(&report, version.clone());
    summary.save(&report_path(&a.model))?;
    let log = a.log.clone().unwrap_or_else(|| with_suffix(&a.model, ".metrics.tsv"));
    std::fs::write(&log, reports::metrics_log(&summary)).map_err(|e| Error::io(&log, e))?;

    let last = report.epochs.last();
    println!(
        "{}",
        json!({
            "model": a.model,
            "version": version,
            "epochs": report.epochs.len(),
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss(),
            "hr@10": last.and_then(|e| e.validation).map(|v| v.hr),
            "ndcg@10": last.and_then(|e| e.validation).map(|v| v.ndcg),
            "seconds": report.wall_seconds,
        })
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let dataset = io::load_any(&a.data, None)?;
    let split = leave_one_out_split(&dataset.interactions);
    let cfg = EvalConfig {
        n: a.n,
        num_sampled_negatives: a.negatives,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;

    let loaded = match (a.scorer, &a.model) {
        (ScorerKind::Popularity, _) => None,
        (_, None) => return Err(Error::Usage(format!("--scorer {} needs --model", a.scorer.name()))),
        (_, Some(path)) => {
            let (snap, version) = Snapshot::load(path)?;
            let expected = match a.scorer {
                ScorerKind::Fism => ModelKind::Fism,
                _ => ModelKind::Attentive,
            };
            if snap.hyperparams.kind != expected {
                return Err(Error::Config(format!(
                    "{} holds a `{}` model but --scorer is `{}`",
                    path.display(),
                    snap.hyperparams.kind.name(),
                    a.scorer.name()
                )));
            }
            if snap.params.num_items() != split.train.num_items() as usize {
                return Err(Error::Config(format!(
                    "snapshot has {} items but the dataset has {}",
                    snap.params.num_items(),
                    split.train.num_items()
                )));
            }
            if snap.meta("train_split") == Some("full") {
                tracing::warn!("the snapshot was trained on every interaction; held-out items were seen in training");
            }
            Some((snap, version))
        }
    };

    let popularity;
    let model_scorer;
    let scorer: &dyn Scorer = match &loaded {
        None => {
            popularity = PopularityScorer::new(&split.train);
            &popularity
        }
        Some((snap, _)) => {
            model_scorer = ModelScorer::new(&snap.params, &snap.hyperparams, &split.train);
            &model_scorer
        }
    };
    let metrics = evaluate(scorer, &split, &cfg)?;
    let version = loaded.as_ref().map(|(_, v)| v.as_str());
    let out = a.out.clone().unwrap_or_else(|| match &a.model {
        Some(m) if a.scorer != ScorerKind::Popularity => with_suffix(m, &format!(".{}.metrics.tsv", a.scorer.name())),
        _ => a.data.join("popularity.metrics.tsv"),
    });
    let text = reports::ranking_report(&metrics, a.scorer.name(), version, a.seed);
    std::fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
    if metrics.is_degenerate() {
        tracing::warn!("every candidate list was fully tied; the ranking reflects the id tie-break only");
    }
    println!(
        "{}",
        json!({
            "scorer": a.scorer.name(),
            "version": version,
            "users": metrics.per_user.len(),
            format!("hr@{}", a.n): metrics.hr,
            format!("ndcg@{}", a.n): metrics.ndcg,
            "report": out,
        })
    );
    Ok(())
}

fn build_cache_cmd(a: CacheArgs) -> Result<()> {
    let dataset = io::load_any(&a.data, None)?;
    let (snap, version) = Snapshot::load(&a.model)?;
    if snap.params.num_items() != dataset.interactions.num_items() as usize {
        return Err(Error::Config("snapshot and dataset disagree on the number of items".into()));
    }
    let histories = nairs_core::dataset::build_user_histories(&dataset.interactions);
    let c = build_cache(&snap.params, &histories, &snap.hyperparams, a.depth, version.clone());
    let out = a.out.clone().unwrap_or_else(|| with_suffix(&a.model, ".cache"));
    cache::save(&c, &out)?;
    println!("{}", json!({ "cache": out, "version": version, "depth": a.depth }));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = ServiceConfig::new(a.model, a.data, a.log);
    cfg.cache_path = a.cache;
    cfg.cache_depth = a.depth;
    cfg.seed = a.seed;
    let state = AppState::open(cfg)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(service::serve(state, &a.bind, a.port))
}

fn report(a: ReportArgs) -> Result<()> {
    let summary = TrainSummary::load(&report_path(&a.model))?;
    let csv = reports::epoch_csv(&summary);
    match &a.out {
        Some(out) => std::fs::write(out, csv).map_err(|e| Error::io(out, e)),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
