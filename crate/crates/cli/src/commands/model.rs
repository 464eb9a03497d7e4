use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use greenwave::datasetgen::{SampleSet, Split};
use greenwave::surrogates::{gradient_suite, ModelConfig, ModelKind, SurrogateModel, GRADCHECK_TOLERANCE};
use greenwave::trainer::{
    compare_json, compare_text, constant_mean_baseline, evaluate_model, fit, predictions_csv, read_indexed, read_predictions,
    MetricsReport,
};
use serde::Serialize;
use serde_json::json;

use super::json_line;
use crate::error::{CliError, CliResult, Kind};
use crate::run::{load_dataset, load_net, meta_path, pick, read_structured, ExperimentConfig, InputFile, RunDir};
use crate::{CompareArgs, EvaluateArgs, GradcheckArgs, KindArg, SplitArg, TrainArgs};

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Fcnn => ModelKind::Fcnn,
            KindArg::Gcn => ModelKind::Gcn,
            KindArg::Gnn => ModelKind::Gnn,
            KindArg::TransformerOnestep => ModelKind::TransformerOnestep,
            KindArg::TransformerTwostep => ModelKind::TransformerTwostep,
        }
    }
}

fn set_epochs(cfg: &mut ModelConfig, epochs: usize) {
    match cfg {
        ModelConfig::Fcnn(c) => c.train.epochs = epochs,
        ModelConfig::Gcn(c) => c.train.epochs = epochs,
        ModelConfig::Gnn(c) => c.train.epochs = epochs,
        ModelConfig::TransformerOnestep(c) => c.train.epochs = epochs,
        ModelConfig::TransformerTwostep(c) => {
            c.classify.epochs = epochs;
            c.regress.epochs = epochs;
        }
    }
}

fn optional_input(path: &Path) -> CliResult<Option<InputFile>> {
    if path.exists() {
        InputFile::hash(path).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Serialize)]
struct TrainResolved {
    data: InputFile,
    meta: Option<InputFile>,
    net: Option<InputFile>,
    model: ModelConfig,
    seed: u64,
}

pub fn train(a: TrainArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    let data_path = pick(a.data, cfg.paths.data.as_ref(), "--data")?;
    let mut model_cfg = match (&a.model_config, a.model, &cfg.model) {
        (Some(p), _, _) => read_structured::<ModelConfig>(p)?,
        (None, Some(k), _) => ModelConfig::default_for(k.into()),
        (None, None, Some(m)) => m.clone(),
        (None, None, None) => return Err(CliError::usage("one of --model or --model-config is required")),
    };
    if let Some(e) = a.epochs {
        set_epochs(&mut model_cfg, e);
    }
    model_cfg.validate()?;
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let data = load_dataset(&data_path, 0)?;

    let kind = model_cfg.kind();
    let net_path = a.net.or_else(|| cfg.paths.net.clone());
    let adjacency = match (&net_path, kind.needs_adjacency()) {
        (Some(p), true) => {
            let net = load_net(p)?;
            if net.signal_count() != data.k {
                return Err(CliError::contract(format!(
                    "network has {} signalized intersections but the dataset has K = {}",
                    net.signal_count(),
                    data.k
                )));
            }
            Some(net.adjacency_matrix())
        }
        (None, true) => return Err(CliError::usage(format!("{} needs --net for its adjacency", kind.name()))),
        (_, false) => None,
    };
    let resolved = TrainResolved {
        data: InputFile::hash(&data_path)?,
        meta: optional_input(&meta_path(&data_path))?,
        net: match (&net_path, kind.needs_adjacency()) {
            (Some(p), true) => Some(InputFile::hash(p)?),
            _ => None,
        },
        model: model_cfg.clone(),
        seed,
    };
    let runs_dir = a.common.runs_dir.as_deref().or(cfg.paths.runs_dir.as_deref());
    let run = RunDir::create("train", &resolved, a.common.out.as_deref(), runs_dir)?;

    let (model, log) = fit(&model_cfg, &data, adjacency.as_deref(), seed)?;
    model.save(&run.file("model"))?;
    let (rows, preds, report) = evaluate_model(&model, &data)?;
    run.write("predictions.csv", &predictions_csv(&rows, &preds))?;
    run.write("metrics.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    run.write("train_log.csv", &log.to_csv())?;
    if let Some(pre) = &log.pretrain {
        run.write("pretrain_log.csv", &pre.to_csv())?;
    }
    Ok(json_line(&json!({
        "run_dir": run.path,
        "model": kind.name(),
        "best_epoch": log.best_epoch,
        "test": report,
    })))
}

fn split_rows(data: &SampleSet, split: SplitArg) -> Vec<usize> {
    match split {
        SplitArg::Train => data.indices(Split::Train),
        SplitArg::Val => data.indices(Split::Val),
        SplitArg::Test => data.indices(Split::Test),
        SplitArg::All => (0..data.len()).collect(),
    }
}

#[derive(Serialize)]
struct ModelEvalResolved {
    model_manifest: InputFile,
    model_params: InputFile,
    data: InputFile,
    meta: Option<InputFile>,
    split: String,
}

#[derive(Serialize)]
struct PairEvalResolved {
    preds: InputFile,
    targets: InputFile,
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    let runs_dir = a.common.runs_dir.as_deref().or(cfg.paths.runs_dir.as_deref());
    if let (Some(p), Some(t)) = (&a.preds, &a.targets) {
        let resolved = PairEvalResolved { preds: InputFile::hash(p)?, targets: InputFile::hash(t)? };
        let run = RunDir::create("evaluate", &resolved, a.common.out.as_deref(), runs_dir)?;
        let report = evaluate_pairs(p, t)?;
        run.write("metrics.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
        return Ok(json_line(&json!({"run_dir": run.path, "metrics": report})));
    }
    let model_dir = pick(a.model, cfg.paths.model.as_ref(), "--model or --preds/--targets")?;
    let data_path = pick(a.data, cfg.paths.data.as_ref(), "--data")?;
    let resolved = ModelEvalResolved {
        model_manifest: InputFile::hash(&model_dir.join("manifest.json"))?,
        model_params: InputFile::hash(&model_dir.join("params.json"))?,
        data: InputFile::hash(&data_path)?,
        meta: optional_input(&meta_path(&data_path))?,
        split: format!("{:?}", a.split).to_lowercase(),
    };
    let run = RunDir::create("evaluate", &resolved, a.common.out.as_deref(), runs_dir)?;
    let model = SurrogateModel::load(&model_dir)?;
    let data = load_dataset(&data_path, 0)?;
    if model.k() != data.k {
        return Err(CliError::contract(format!("model expects K = {} but the dataset has K = {}", model.k(), data.k)));
    }
    let rows = split_rows(&data, a.split);
    let features: Vec<&[i64]> = rows.iter().map(|&i| data.features[i].as_slice()).collect();
    let preds = model.predict_rows(&features)?;
    let targets: Vec<f64> = rows.iter().map(|&i| data.targets[i]).collect();
    let report = greenwave::trainer::evaluate(&preds, &targets)?;
    run.write("predictions.csv", &predictions_csv(&rows, &preds))?;
    run.write("metrics.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(json_line(&json!({"run_dir": run.path, "metrics": report})))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::from(e).context(path.display()))
}

/// Joins predictions with targets on `row_index`. Targets come from a
/// dataset CSV (`total_wait_s`) or another predictions file.
fn evaluate_pairs(preds_path: &Path, targets_path: &Path) -> CliResult<MetricsReport> {
    let parse =
        |e: greenwave::trainer::PredictionsError, p: &Path| CliError::new(Kind::Parse, e.to_string()).context(p.display());
    let preds = read_predictions(open(preds_path)?).map_err(|e| parse(e, preds_path))?;
    let header = csv::Reader::from_reader(open(targets_path)?).headers()?.clone();
    let column = if header.iter().any(|h| h.trim() == "total_wait_s") { "total_wait_s" } else { "prediction_s" };
    let targets: HashMap<usize, f64> =
        read_indexed(open(targets_path)?, column).map_err(|e| parse(e, targets_path))?.into_iter().collect();
    let mut p = Vec::with_capacity(preds.len());
    let mut t = Vec::with_capacity(preds.len());
    for (row, value) in preds {
        let target = targets
            .get(&row)
            .ok_or_else(|| CliError::contract(format!("row_index {row} has no target in {}", targets_path.display())))?;
        p.push(value);
        t.push(*target);
    }
    Ok(greenwave::trainer::evaluate(&p, &t)?)
}

#[derive(Serialize)]
struct CompareResolved {
    metrics: Vec<(String, InputFile)>,
    baseline: Option<InputFile>,
}

/// `NAME=PATH`, or `PATH` labelled by its parent directory.
fn labelled(arg: &str) -> (String, PathBuf) {
    if let Some((name, path)) = arg.split_once('=') {
        return (name.to_string(), PathBuf::from(path));
    }
    let path = PathBuf::from(arg);
    let name = path
        .parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map_or_else(|| arg.to_string(), |n| n.to_string_lossy().into_owned());
    (name, path)
}

pub fn compare(a: CompareArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    let inputs: Vec<(String, PathBuf)> = a.metrics.iter().map(|m| labelled(m)).collect();
    let resolved = CompareResolved {
        metrics: inputs.iter().map(|(n, p)| Ok((n.clone(), InputFile::hash(p)?))).collect::<CliResult<_>>()?,
        baseline: a.baseline.as_deref().map(InputFile::hash).transpose()?,
    };
    let runs_dir = a.common.runs_dir.as_deref().or(cfg.paths.runs_dir.as_deref());
    let run = RunDir::create("compare", &resolved, a.common.out.as_deref(), runs_dir)?;
    let mut reports = Vec::new();
    for (name, path) in &inputs {
        reports.push((name.clone(), read_structured::<MetricsReport>(path)?));
    }
    if let Some(b) = &a.baseline {
        let data = load_dataset(b, 0)?;
        reports.push(("constant_mean".to_string(), constant_mean_baseline(&data)?));
    }
    let rows = greenwave::trainer::compare(&reports);
    run.write("comparison.json", &(compare_json(&rows) + "\n"))?;
    let text = compare_text(&rows);
    run.write("comparison.txt", &text)?;
    Ok(format!("{}\n{}", json_line(&json!({"run_dir": run.path})), text.trim_end()))
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult<String> {
    let reports = gradient_suite(a.seed)?;
    let worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let rows: Vec<_> = reports
        .iter()
        .map(|(name, r)| {
            json!({"model": name, "max_rel_error": r.max_rel_error, "worst_param": r.worst_param, "coords_checked": r.coords_checked})
        })
        .collect();
    let pass = worst < GRADCHECK_TOLERANCE;
    let line = json_line(&json!({"max_rel_error": worst, "tolerance": GRADCHECK_TOLERANCE, "pass": pass, "checks": rows}));
    if !pass {
        println!("{line}");
        return Err(CliError::new(Kind::Gradcheck, format!("max relative error {worst:e} >= {GRADCHECK_TOLERANCE:e}")));
    }
    Ok(line)
}
