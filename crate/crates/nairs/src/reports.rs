//! Training reports, per-epoch metric logs and evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nairs_core::evaluation::RankingMetrics;
use nairs_core::training::TrainReport;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub hr: Option<f64>,
    pub ndcg: Option<f64>,
    pub seconds: f64,
}

/// Serializable form of a training run, written beside the snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub snapshot_version: String,
    pub hyperparams: Vec<(String, String)>,
    pub num_users: u32,
    pub num_items: u32,
    pub num_train: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub wall_seconds: f64,
    pub epochs: Vec<EpochRow>,
}

impl TrainSummary {
    pub fn new(report: &TrainReport, version: String, num_users: u32, num_items: u32, num_train: usize) -> Self {
        TrainSummary {
            snapshot_version: version,
            hyperparams: config::hyperparam_pairs(&report.hyperparams)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            num_users,
            num_items,
            num_train,
            initial_loss: report.initial_loss,
            final_loss: report.final_loss(),
            wall_seconds: report.wall_seconds,
            epochs: report
                .epochs
                .iter()
                .map(|e| EpochRow {
                    epoch: e.epoch,
                    loss: e.loss,
                    hr: e.validation.map(|v| v.hr),
                    ndcg: e.validation.map(|v| v.ndcg),
                    seconds: e.seconds,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("summary serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
}

/// One tab-separated line per epoch: epoch, loss, HR@10, NDCG@10, seconds.
pub fn metrics_log(summary: &TrainSummary) -> String {
    let mut out = String::from("epoch\tloss\thr@10\tndcg@10\tseconds\n");
    for e in &summary.epochs {
        writeln!(out, "{}\t{:.6}\t{}\t{}\t{:.3}", e.epoch, e.loss, opt(e.hr), opt(e.ndcg), e.seconds)
            .expect("write to String");
    }
    out
}

/// Metric-vs-epoch CSV for plotting.
pub fn epoch_csv(summary: &TrainSummary) -> String {
    let mut out = String::from("epoch,loss,hr,ndcg,seconds\n");
    let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for e in &summary.epochs {
        writeln!(out, "{},{},{},{},{}", e.epoch, e.loss, cell(e.hr), cell(e.ndcg), e.seconds).expect("write to String");
    }
    out
}

/// Header, one row per evaluated user, and an aggregate line.
pub fn ranking_report(metrics: &RankingMetrics, scorer: &str, snapshot: Option<&str>, seed: u64) -> String {
    let n = metrics.n;
    let mut out = String::new();
    writeln!(out, "# scorer={scorer} snapshot={} seed={seed} n={n} users={}", snapshot.unwrap_or("-"), metrics.per_user.len())
        .expect("write to String");
    writeln!(out, "user\theld_out\tposition\tcandidates\thit@{n}\tndcg@{n}\ttied").expect("write to String");
    for r in &metrics.per_user {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}",
            r.user,
            r.held_out,
            r.position,
            r.num_candidates,
            u8::from(metrics.hit(r)),
            metrics.user_ndcg(r),
            u8::from(r.tied)
        )
        .expect("write to String");
    }
    writeln!(out, "{}", aggregate_line(metrics, scorer)).expect("write to String");
    out
}

pub fn aggregate_line(metrics: &RankingMetrics, scorer: &str) -> String {
    let n = metrics.n;
    let mut line = format!(
        "# aggregate scorer={scorer} hr@{n}={:.6} ndcg@{n}={:.6} users={} tied={}",
        metrics.hr,
        metrics.ndcg,
        metrics.per_user.len(),
        metrics.tied_users()
    );
    if metrics.is_degenerate() {
        line.push_str(" warning=all-scores-tied");
    }
    line
}
