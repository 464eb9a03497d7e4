//! Evaluation metrics, per-epoch training logs, model comparison and the
//! [`fit`] entry point that dispatches to the surrogate recipes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datasetgen::SampleSet;
use crate::surrogates::{self, ModelConfig, SurrogateError, SurrogateModel};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("predictions ({preds}) and targets ({targets}) differ in length")]
    Length { preds: usize, targets: usize },
    #[error("no rows to evaluate")]
    Empty,
    #[error("target at row {row} is {value}; percentage errors need positive targets")]
    NonPositiveTarget { row: usize, value: f64 },
    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },
}

/// Percent metrics are in percent (5.0 means 5%); `rmse` is in target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mape: f64,
    pub maxpe: f64,
    pub maxpe99: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    /// When set, targets with `|t| < eps` are replaced by `eps` in the
    /// percentage denominators instead of raising an error.
    pub epsilon_guard: Option<f64>,
}

/// Index into ascending-sorted APEs used for MAXPE99 (nearest rank).
pub fn nearest_rank_index(n: usize) -> usize {
    ((0.99 * n as f64).ceil() as usize).max(1) - 1
}

pub fn evaluate(preds: &[f64], targets: &[f64]) -> Result<MetricsReport, MetricsError> {
    evaluate_with(preds, targets, EvalOptions::default())
}

pub fn evaluate_with(preds: &[f64], targets: &[f64], opts: EvalOptions) -> Result<MetricsReport, MetricsError> {
    if preds.len() != targets.len() {
        return Err(MetricsError::Length { preds: preds.len(), targets: targets.len() });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut ape = Vec::with_capacity(preds.len());
    let mut sq = 0.0;
    for (row, (&p, &t)) in preds.iter().zip(targets).enumerate() {
        if !p.is_finite() || !t.is_finite() {
            return Err(MetricsError::NonFinite { row });
        }
        let denom = match opts.epsilon_guard {
            Some(eps) if t.abs() < eps => eps,
            _ if t <= 0.0 => return Err(MetricsError::NonPositiveTarget { row, value: t }),
            _ => t,
        };
        ape.push(100.0 * (p - t).abs() / denom);
        sq += (p - t) * (p - t);
    }
    let n = ape.len();
    let mape = ape.iter().sum::<f64>() / n as f64;
    ape.sort_by(f64::total_cmp);
    Ok(MetricsReport { rmse: (sq / n as f64).sqrt(), mape, maxpe: ape[n - 1], maxpe99: ape[nearest_rank_index(n)], n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
    /// Training-mode accuracy for classification stages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    /// Whether the weights returned are those of `best_epoch` (early stopping)
    /// rather than of the final epoch.
    pub restored_best: bool,
    /// The classification stage of a two-step recipe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<Box<TrainLog>>,
}

impl TrainLog {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch.checked_sub(1)?).map(|e| e.val_loss)
    }

    /// CSV with columns `epoch,train_loss,val_loss,lr,seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{},{:.3}", e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRow {
    pub model: String,
    pub rmse: f64,
    pub mape: f64,
    pub maxpe: f64,
    pub maxpe99: f64,
}

/// Rows sorted by MAPE, ties broken by RMSE and then model name.
pub fn compare(results: &[(String, MetricsReport)]) -> Vec<CompareRow> {
    let mut rows: Vec<CompareRow> = results
        .iter()
        .map(|(name, m)| CompareRow { model: name.clone(), rmse: m.rmse, mape: m.mape, maxpe: m.maxpe, maxpe99: m.maxpe99 })
        .collect();
    rows.sort_by(|a, b| a.mape.total_cmp(&b.mape).then_with(|| a.rmse.total_cmp(&b.rmse)).then_with(|| a.model.cmp(&b.model)));
    rows
}

pub fn compare_json(rows: &[CompareRow]) -> String {
    serde_json::to_string_pretty(rows).expect("plain data serializes")
}

/// Fixed-width text table; percentages with two decimals.
pub fn compare_text(rows: &[CompareRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max("model".len());
    let mut s = format!("{:<width$}  {:>12}  {:>8}  {:>8}  {:>8}\n", "model", "rmse", "mape", "maxpe", "maxpe99");
    for r in rows {
        let _ = writeln!(s, "{:<width$}  {:>12.4}  {:>8.2}  {:>8.2}  {:>8.2}", r.model, r.rmse, r.mape, r.maxpe, r.maxpe99);
    }
    s
}

/// MAPE of predicting the train-split mean target for every test row.
pub fn constant_mean_baseline(data: &SampleSet) -> Result<MetricsReport, MetricsError> {
    use crate::datasetgen::Split;
    let train = data.indices(Split::Train);
    let mean = train.iter().map(|&i| data.targets[i]).sum::<f64>() / train.len().max(1) as f64;
    let test = data.indices(Split::Test);
    let targets: Vec<f64> = test.iter().map(|&i| data.targets[i]).collect();
    evaluate(&vec![mean; targets.len()], &targets)
}

/// Trains the configured model kind on `data`; `adjacency` is required by
/// graph models and ignored otherwise.
pub fn fit(
    config: &ModelConfig,
    data: &SampleSet,
    adjacency: Option<&[Vec<bool>]>,
    seed: u64,
) -> Result<(SurrogateModel, TrainLog), SurrogateError> {
    surrogates::train(config, data, adjacency, seed)
}

/// Predicts the test split and scores it.
pub fn evaluate_model(model: &SurrogateModel, data: &SampleSet) -> Result<(Vec<usize>, Vec<f64>, MetricsReport), SurrogateError> {
    use crate::datasetgen::Split;
    let rows = data.indices(Split::Test);
    let features: Vec<&[i64]> = rows.iter().map(|&i| data.features[i].as_slice()).collect();
    let preds = model.predict_rows(&features)?;
    let targets: Vec<f64> = rows.iter().map(|&i| data.targets[i]).collect();
    let report = evaluate(&preds, &targets).map_err(|e| SurrogateError::Metrics(e.to_string()))?;
    Ok((rows, preds, report))
}

/// Header of the per-row predictions file shared with external tools.
pub const PREDICTIONS_HEADER: &str = "row_index,prediction_s";

/// `row_index,prediction_s` lines; values use the shortest exact decimal form.
pub fn predictions_csv(rows: &[usize], preds: &[f64]) -> String {
    let mut s = String::from(PREDICTIONS_HEADER);
    s.push('\n');
    for (r, p) in rows.iter().zip(preds) {
        let _ = writeln!(s, "{r},{}", crate::datasetgen::format_target(*p));
    }
    s
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PredictionsError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("missing column {0}")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Value { line: usize, message: String },
    #[error("row_index {0} appears more than once")]
    Duplicate(usize),
}

/// Reads `row_index,prediction_s` pairs; other columns are ignored and row
/// indices must be unique.
pub fn read_predictions<R: std::io::Read>(input: R) -> Result<Vec<(usize, f64)>, PredictionsError> {
    read_indexed(input, "prediction_s")
}

/// Reads `(row_index, value)` pairs from `value_column`. Without a
/// `row_index` column the data line number (from 0) is the index.
pub fn read_indexed<R: std::io::Read>(input: R, value_column: &'static str) -> Result<Vec<(usize, f64)>, PredictionsError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| PredictionsError::Csv(e.to_string()))?.clone();
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let vi = find(value_column).ok_or(PredictionsError::MissingColumn(value_column))?;
    let ri = find("row_index");
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| PredictionsError::Csv(e.to_string()))?;
        let row = match ri {
            Some(i) => rec[i].trim().parse::<usize>().map_err(|_| PredictionsError::Value {
                line: line + 2,
                message: format!("row_index {:?} is not a non-negative integer", &rec[i]),
            })?,
            None => line,
        };
        let v = rec[vi].trim().parse::<f64>().map_err(|_| PredictionsError::Value {
            line: line + 2,
            message: format!("{value_column} {:?} is not a number", &rec[vi]),
        })?;
        if !seen.insert(row) {
            return Err(PredictionsError::Duplicate(row));
        }
        out.push((row, v));
    }
    Ok(out)
}
