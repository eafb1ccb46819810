//! Evaluation protocols and report output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, ScoreTable};
use crate::calibration::Temperature;
use crate::ensemble::{CommunityEstimate, EnsembleWeights};
use crate::error::{Error, Result};
use crate::features::compute_features;
use crate::ingest::{apply_verified_perturbation, EdgeList, UserStore, VerifiedMode};
use crate::synth::{resample_by_proximity, Resampled};
use crate::tabular::BoostModel;
use crate::types::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy and bot-class precision, recall and F1. Zero denominators
/// give 0.
pub fn individual_metrics(preds: &[Label], y: &[Label]) -> Result<IndividualMetrics> {
    if preds.len() != y.len() {
        return Err(Error::dim(y.len(), preds.len()));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("metrics need at least one prediction"));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in preds.iter().zip(y) {
        correct += usize::from(p == t);
        match (p.is_bot(), t.is_bot()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(IndividualMetrics {
        accuracy: ratio(correct, y.len()),
        precision,
        recall,
        f1,
    })
}

/// Anything that can estimate the bot fraction of a resampled community.
pub trait CommunityScorer {
    fn estimate(&self, community: &Resampled) -> Result<CommunityEstimate>;
}

/// Scores precomputed for a pool, combined with fixed temperatures and
/// weights. Valid because every shipped sub-model scores users from their
/// own record alone.
pub struct CachedScorer<'a> {
    pub scores: &'a ScoreTable,
    pub temperatures: Vec<Temperature>,
    pub weights: EnsembleWeights,
}

impl<'a> CachedScorer<'a> {
    pub fn new(bundle: &Bundle, scores: &'a ScoreTable) -> Self {
        CachedScorer {
            scores,
            temperatures: bundle.temperatures(),
            weights: bundle.manifest.weights.clone(),
        }
    }

    /// Same weights, every temperature 1.
    pub fn uncalibrated(&self) -> Self {
        CachedScorer {
            scores: self.scores,
            temperatures: vec![Temperature::IDENTITY; self.temperatures.len()],
            weights: self.weights.clone(),
        }
    }

    pub fn estimate_ids<'b>(&self, ids: impl IntoIterator<Item = &'b str>) -> Result<CommunityEstimate> {
        self.scores.estimate(ids, &self.temperatures, &self.weights)
    }
}

impl CommunityScorer for CachedScorer<'_> {
    fn estimate(&self, community: &Resampled) -> Result<CommunityEstimate> {
        self.estimate_ids(community.store.ids())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub community_id: String,
    pub target_fraction: f64,
    pub seed: u64,
    pub size: usize,
    pub true_fraction: f64,
    pub estimated_fraction: f64,
    pub abs_error: f64,
    pub status: RowStatus,
    pub mean_bot_prob: BTreeMap<String, f64>,
}

impl ReportRow {
    pub fn estimated(id: String, target: f64, seed: u64, truth: f64, est: &CommunityEstimate) -> Self {
        ReportRow {
            community_id: id,
            target_fraction: target,
            seed,
            size: est.n_users,
            true_fraction: truth,
            estimated_fraction: est.p_hat,
            abs_error: (truth - est.p_hat).abs(),
            status: RowStatus::Ok,
            mean_bot_prob: est.mean_bot_prob.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub individual: Option<IndividualMetrics>,
}

impl EvalReport {
    fn ok_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.status == RowStatus::Ok)
    }

    /// Mean absolute error over estimated rows; 0 when there are none.
    pub fn mae(&self) -> f64 {
        let n = self.ok_rows().count();
        if n == 0 {
            return 0.0;
        }
        self.ok_rows().map(|r| r.abs_error).sum::<f64>() / n as f64
    }

    pub fn max_error(&self) -> f64 {
        self.ok_rows().map(|r| r.abs_error).fold(0.0, f64::max)
    }

    pub fn infeasible(&self) -> usize {
        self.rows.len() - self.ok_rows().count()
    }
}

/// For each fraction and seed, resamples a community of `size` users from
/// the pool and estimates it. Infeasible targets become recorded rows.
/// Rows are sorted by fraction, then seed.
pub fn run_sweep(
    scorer: &dyn CommunityScorer,
    pool: (&UserStore, &EdgeList, &BTreeMap<String, Label>),
    fractions: &[f64],
    size: usize,
    seeds: &[u64],
) -> Result<EvalReport> {
    let (store, edges, labels) = pool;
    let mut order: Vec<f64> = fractions.to_vec();
    order.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for &f in &order {
        for &seed in seeds {
            let id = format!("f{f:.3}-s{seed}");
            match resample_by_proximity(store, edges, labels, f, size, seed) {
                Ok(c) => {
                    let est = scorer.estimate(&c)?;
                    rows.push(ReportRow::estimated(id, f, seed, c.bot_fraction(), &est));
                }
                Err(Error::InfeasibleTarget(_)) => rows.push(ReportRow {
                    community_id: id,
                    target_fraction: f,
                    seed,
                    size,
                    true_fraction: f64::NAN,
                    estimated_fraction: f64::NAN,
                    abs_error: f64::NAN,
                    status: RowStatus::Infeasible,
                    mean_bot_prob: BTreeMap::new(),
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(EvalReport { rows, individual: None })
}

/// Estimate drift of the ensemble and of a single verified-flag stump when
/// every user's `verified` flag is rewritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub mode: VerifiedMode,
    pub true_fraction: f64,
    pub ensemble_estimate: f64,
    pub baseline_estimate: f64,
}

impl PerturbationRow {
    pub fn ensemble_error(&self) -> f64 {
        (self.ensemble_estimate - self.true_fraction).abs()
    }

    pub fn baseline_error(&self) -> f64 {
        (self.baseline_estimate - self.true_fraction).abs()
    }
}

pub fn perturbation_eval(
    bundle: &Bundle,
    baseline: &BoostModel,
    store: &UserStore,
    labels: &BTreeMap<String, Label>,
    seed: u64,
) -> Result<Vec<PerturbationRow>> {
    let ids: Vec<&str> = store.ids().collect();
    let truth = ids
        .iter()
        .map(|id| labels.get(*id).ok_or_else(|| Error::UnknownUser(id.to_string())))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .filter(|l| l.is_bot())
        .count() as f64
        / ids.len().max(1) as f64;
    VerifiedMode::ALL
        .iter()
        .map(|&mode| {
            let perturbed = apply_verified_perturbation(store, mode, seed);
            let scores = bundle.score_store(&perturbed)?;
            let est = CachedScorer::new(bundle, &scores).estimate_ids(ids.iter().copied())?;
            let mut bots = 0usize;
            for u in perturbed.users() {
                if baseline.predict(&compute_features(u))?.argmax().is_bot() {
                    bots += 1;
                }
            }
            Ok(PerturbationRow {
                mode,
                true_fraction: truth,
                ensemble_estimate: est.p_hat,
                baseline_estimate: bots as f64 / perturbed.len().max(1) as f64,
            })
        })
        .collect()
}

pub const CSV_COLUMNS: [&str; 8] = [
    "community_id",
    "target_fraction",
    "seed",
    "size",
    "true_fraction",
    "estimated_fraction",
    "abs_error",
    "status",
];

fn diagnostic_keys(report: &EvalReport) -> Vec<String> {
    let keys: BTreeSet<&String> = report.rows.iter().flat_map(|r| r.mean_bot_prob.keys()).collect();
    keys.into_iter().cloned().collect()
}

/// Report as CSV text: the fixed columns, then one `mean_bot_prob:<key>`
/// column per sub-model in key order.
pub fn report_csv(report: &EvalReport) -> Result<String> {
    let keys = diagnostic_keys(report);
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = CSV_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain(keys.iter().map(|k| format!("mean_bot_prob:{k}")))
        .collect();
    w.write_record(&header)?;
    for r in &report.rows {
        let status = match r.status {
            RowStatus::Ok => "ok",
            RowStatus::Infeasible => "infeasible",
        };
        let mut rec = vec![
            r.community_id.clone(),
            r.target_fraction.to_string(),
            r.seed.to_string(),
            r.size.to_string(),
            r.true_fraction.to_string(),
            r.estimated_fraction.to_string(),
            r.abs_error.to_string(),
            status.to_string(),
        ];
        rec.extend(keys.iter().map(|k| r.mean_bot_prob.get(k).map(f64::to_string).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io {
        path: "<memory>".into(),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

const CHART_SIZE: f64 = 400.0;
const CHART_MARGIN: f64 = 50.0;

/// Estimated-vs-true scatter over the unit square with the `y = x` line.
pub fn report_svg(report: &EvalReport) -> String {
    let span = CHART_SIZE - 2.0 * CHART_MARGIN;
    let px = |v: f64| CHART_MARGIN + v * span;
    let py = |v: f64| CHART_SIZE - CHART_MARGIN - v * span;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CHART_SIZE}" height="{CHART_SIZE}" viewBox="0 0 {CHART_SIZE} {CHART_SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{CHART_SIZE}" height="{CHART_SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line id="x-axis" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(0.0)
    );
    let _ = writeln!(
        s,
        r#"<line id="y-axis" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        px(0.0),
        py(0.0),
        px(0.0),
        py(1.0)
    );
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            py(0.0) + 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{v:.1}</text>"#,
            px(0.0) - 5.0,
            py(v) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line id="reference" x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for r in report.rows.iter().filter(|r| r.status == RowStatus::Ok) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="steelblue"><title>{}</title></circle>"#,
            px(r.true_fraction),
            py(r.estimated_fraction),
            r.community_id
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">true bot fraction</text>"#,
        CHART_SIZE / 2.0,
        CHART_SIZE - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {})">estimated bot fraction</text>"#,
        CHART_SIZE / 2.0,
        CHART_SIZE / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes the CSV and, when `svg` is given, the chart.
pub fn write_report(report: &EvalReport, csv_path: &Path, svg: Option<&Path>) -> Result<()> {
    let text = report_csv(report)?;
    fs::write(csv_path, text).map_err(|e| Error::io(csv_path, e))?;
    if let Some(p) = svg {
        fs::write(p, report_svg(report)).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Parses a report CSV written by [`write_report`].
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < CSV_COLUMNS.len() || header[..CSV_COLUMNS.len()].iter().ne(CSV_COLUMNS.iter()) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected report header".into(),
        });
    }
    let extra: Vec<String> = header[CSV_COLUMNS.len()..]
        .iter()
        .map(|h| h.trim_start_matches("mean_bot_prob:").to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number in column {}", CSV_COLUMNS[k]),
            })
        };
        let status = match &rec[7] {
            "ok" => RowStatus::Ok,
            "infeasible" => RowStatus::Infeasible,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown status `{other}`"),
                })
            }
        };
        let mut mean_bot_prob = BTreeMap::new();
        for (k, key) in extra.iter().enumerate() {
            let v = &rec[CSV_COLUMNS.len() + k];
            if !v.is_empty() {
                mean_bot_prob.insert(
                    key.clone(),
                    v.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad number for {key}"),
                    })?,
                );
            }
        }
        rows.push(ReportRow {
            community_id: rec[0].to_string(),
            target_fraction: num(1)?,
            seed: num(2)? as u64,
            size: num(3)? as usize,
            true_fraction: num(4)?,
            estimated_fraction: num(5)?,
            abs_error: num(6)?,
            status,
            mean_bot_prob,
        });
    }
    Ok(EvalReport { rows, individual: None })
}
