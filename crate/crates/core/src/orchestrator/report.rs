use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{error_reduction, select_best_layer, SweepResult, TrainerDefaults};
use crate::error::{Error, Result};
use crate::features::SplitRatios;
use crate::heads::HeadKind;
use crate::trainer::RunSummary;

/// Run settings echoed next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub heads: Vec<HeadKind>,
    pub trainer: TrainerDefaults,
    pub split_ratios: SplitRatios,
    /// Split whose mean accuracy picks the best layer.
    pub selection_split: String,
    /// Split whose mean accuracy is quoted for that layer.
    pub reported_split: String,
    pub standardization: String,
}

impl ReportMeta {
    pub fn new(
        models: Vec<String>,
        datasets: Vec<String>,
        heads: Vec<HeadKind>,
        trainer: TrainerDefaults,
        split_ratios: SplitRatios,
    ) -> Self {
        let standardization = if trainer.standardize {
            "per-dimension z-score, train-split statistics, per layer"
        } else {
            "none"
        };
        Self {
            models,
            datasets,
            heads,
            trainer,
            split_ratios,
            selection_split: "dev".into(),
            reported_split: "test".into(),
            standardization: standardization.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationEntry {
    pub model_id: String,
    pub dataset_id: String,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestLayer {
    pub model_id: String,
    pub dataset_id: String,
    pub head_kind: HeadKind,
    pub layer: usize,
    pub mean_dev: f64,
    pub mean_test: f64,
    pub std_test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReductionEntry {
    pub model_id: String,
    pub dataset_id: String,
    pub head_kind: HeadKind,
    pub best_layer: usize,
    pub probe_test: f64,
    pub aggregate_test: f64,
    /// `None` when the aggregation model is already perfect.
    pub reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub meta: ReportMeta,
    pub sweeps: Vec<SweepResult>,
    pub aggregation: Vec<AggregationEntry>,
    pub best_layers: Vec<BestLayer>,
    pub error_reduction: Vec<ErrorReductionEntry>,
}

impl BenchmarkReport {
    /// Derives best layers and error reductions from raw sweep results.
    pub fn assemble(
        meta: ReportMeta,
        sweeps: Vec<SweepResult>,
        aggregation: Vec<AggregationEntry>,
    ) -> Result<Self> {
        let mut best_layers = Vec::with_capacity(sweeps.len());
        let mut reductions = Vec::new();
        for sweep in &sweeps {
            let layer = select_best_layer(sweep)?;
            let s = &sweep.per_layer[layer];
            best_layers.push(BestLayer {
                model_id: sweep.model_id.clone(),
                dataset_id: sweep.dataset_id.clone(),
                head_kind: sweep.head_kind,
                layer,
                mean_dev: s.mean_dev,
                mean_test: s.mean_test,
                std_test: s.std_test,
            });
            let agg = aggregation
                .iter()
                .find(|a| a.model_id == sweep.model_id && a.dataset_id == sweep.dataset_id);
            if let Some(agg) = agg {
                reductions.push(ErrorReductionEntry {
                    model_id: sweep.model_id.clone(),
                    dataset_id: sweep.dataset_id.clone(),
                    head_kind: sweep.head_kind,
                    best_layer: layer,
                    probe_test: s.mean_test,
                    aggregate_test: agg.summary.mean_test,
                    reduction_pct: error_reduction(agg.summary.mean_test, s.mean_test)?,
                });
            }
        }
        Ok(Self {
            meta,
            sweeps,
            aggregation,
            best_layers,
            error_reduction: reductions,
        })
    }

    /// Unweighted mean reduction across datasets for one model and head.
    pub fn average_error_reduction(&self, model_id: &str, head: HeadKind) -> Result<f64> {
        super::average_error_reduction(
            self.error_reduction
                .iter()
                .filter(|e| e.model_id == model_id && e.head_kind == head)
                .map(|e| e.reduction_pct),
        )
    }

    pub fn best_layer(
        &self,
        model_id: &str,
        dataset_id: &str,
        head: HeadKind,
    ) -> Option<&BestLayer> {
        self.best_layers
            .iter()
            .find(|b| b.model_id == model_id && b.dataset_id == dataset_id && b.head_kind == head)
    }
}

/// Accuracy in percent with one decimal and the layer in brackets.
pub fn format_cell(accuracy: f64, layer: usize) -> String {
    format!("{:.1} [{layer}]", accuracy * 100.0)
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen: Vec<&str> = Vec::new();
    for s in items {
        if !seen.contains(&s) {
            seen.push(s);
        }
    }
    seen
}

fn render_grid(report: &BenchmarkReport, head: HeadKind) -> String {
    let rows: Vec<&BestLayer> = report
        .best_layers
        .iter()
        .filter(|b| b.head_kind == head)
        .collect();
    let models = first_seen(rows.iter().map(|b| b.model_id.as_str()));
    let datasets = first_seen(rows.iter().map(|b| b.dataset_id.as_str()));
    let mut out = String::from("model");
    for d in &datasets {
        let _ = write!(out, ",{d}");
    }
    out.push('\n');
    for m in &models {
        out.push_str(m);
        for d in &datasets {
            out.push(',');
            if let Some(b) = rows.iter().find(|b| b.model_id == *m && b.dataset_id == *d) {
                out.push_str(&format_cell(b.mean_test, b.layer));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct CurvePoint<'a> {
    model: &'a str,
    dataset: &'a str,
    head: HeadKind,
    layer: usize,
    mean_dev: f64,
    std_dev: f64,
    mean_test: f64,
    std_test: f64,
}

#[derive(Serialize)]
struct ReductionPoint<'a> {
    model: &'a str,
    dataset: &'a str,
    head: HeadKind,
    best_layer: usize,
    probe_test: f64,
    aggregate_test: f64,
    error_reduction_pct: serde_json::Value,
}

fn jsonl<T: Serialize>(records: impl Iterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).map_err(|e| Error::Invariant(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes into `out_dir`:
///
/// * `grid_<head>.csv`: models by datasets, cells `acc [layer]`;
/// * `layer_curves.jsonl`: one record per (model, dataset, head, layer);
/// * `error_reduction.jsonl`: one record per (model, dataset, head), with
///   `"n/a"` where undefined;
/// * `report_meta.json` and the full `benchmark.json`.
///
/// Output depends only on `report`.
pub fn emit_report(report: &BenchmarkReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.sweeps.is_empty() || report.sweeps.iter().any(|s| s.per_layer.is_empty()) {
        return Err(Error::EmptySweep);
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let mut heads: Vec<HeadKind> = report.best_layers.iter().map(|b| b.head_kind).collect();
    heads.sort();
    heads.dedup();
    for head in heads {
        write(
            out_dir.join(format!("grid_{head}.csv")),
            &render_grid(report, head),
            &mut written,
        )?;
    }

    let curves = report.sweeps.iter().flat_map(|s| {
        s.per_layer
            .iter()
            .enumerate()
            .map(move |(layer, r)| CurvePoint {
                model: &s.model_id,
                dataset: &s.dataset_id,
                head: s.head_kind,
                layer,
                mean_dev: r.mean_dev,
                std_dev: r.std_dev,
                mean_test: r.mean_test,
                std_test: r.std_test,
            })
    });
    write(
        out_dir.join("layer_curves.jsonl"),
        &jsonl(curves)?,
        &mut written,
    )?;

    let reductions = report.error_reduction.iter().map(|e| ReductionPoint {
        model: &e.model_id,
        dataset: &e.dataset_id,
        head: e.head_kind,
        best_layer: e.best_layer,
        probe_test: e.probe_test,
        aggregate_test: e.aggregate_test,
        error_reduction_pct: match e.reduction_pct {
            Some(v) => serde_json::json!(v),
            None => serde_json::json!("n/a"),
        },
    });
    write(
        out_dir.join("error_reduction.jsonl"),
        &jsonl(reductions)?,
        &mut written,
    )?;

    write(
        out_dir.join("report_meta.json"),
        &pretty_json(&report.meta)?,
        &mut written,
    )?;
    write(
        out_dir.join("benchmark.json"),
        &pretty_json(report)?,
        &mut written,
    )?;
    Ok(written)
}

/// Reads a `benchmark.json` written by [`emit_report`].
pub fn load_report(path: impl AsRef<Path>) -> Result<BenchmarkReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Invariant(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
