use std::fs::File;
use std::io::BufWriter;

use greenwave::datasetgen::generate;
use greenwave::microsim::{SimConfig, SimOutcome, Simulator, TraceWriter};
use greenwave::signalplan::SignalSetting;
use serde::Serialize;
use serde_json::json;

use super::{apply_sim_flags, json_line, parse_setting};
use crate::error::{CliError, CliResult};
use crate::run::{load_net, pick, ExperimentConfig, InputFile, RunDir};
use crate::{GenDatasetArgs, SimulateArgs};

#[derive(Serialize)]
struct SimulateResolved {
    net: InputFile,
    setting: SignalSetting,
    sim: SimConfig,
    trace: bool,
}

pub fn simulate(a: SimulateArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    let net_path = pick(a.net, cfg.paths.net.as_ref(), "--net")?;
    let net = load_net(&net_path)?;
    let mut sim = apply_sim_flags(&net, cfg.sim.clone(), &a.sim)?;
    if let Some(s) = a.seed {
        sim.rng_seed = s;
    }
    sim.debug_checks |= a.debug_checks;
    let k = net.signal_count();
    let setting = match (a.setting, a.random_setting) {
        (Some(text), _) => parse_setting(&text, k)?,
        (None, Some(seed)) => SignalSetting::sample_uniform(k, seed),
        (None, None) => return Err(CliError::usage("one of --setting or --random-setting is required")),
    };
    let resolved =
        SimulateResolved { net: InputFile::hash(&net_path)?, setting: setting.clone(), sim: sim.clone(), trace: a.trace };
    let runs_dir = a.common.runs_dir.as_deref().or(cfg.paths.runs_dir.as_deref());
    let run = RunDir::create("simulate", &resolved, a.common.out.as_deref(), runs_dir)?;

    let simulator = Simulator::new(&net);
    let outcome: SimOutcome = if a.trace {
        let file = File::create(run.file("trace.jsonl"))?;
        let mut writer = TraceWriter::new(BufWriter::new(file));
        let outcome = simulator.run_observed(&setting, &sim, &mut writer)?;
        writer.finish()?;
        outcome
    } else {
        simulator.run(&setting, &sim)?
    };
    run.write("outcome.json", &(serde_json::to_string_pretty(&outcome)? + "\n"))?;
    Ok(json_line(&json!({
        "run_dir": run.path,
        "total_wait_s": outcome.total_wait_s,
        "vehicles_spawned": outcome.vehicles_spawned,
        "vehicles_completed": outcome.vehicles_completed,
    })))
}

#[derive(Serialize)]
struct DatasetResolved {
    net: InputFile,
    n: usize,
    seed: u64,
    sim: SimConfig,
}

pub fn gen_dataset(a: GenDatasetArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    let net_path = pick(a.net, cfg.paths.net.as_ref(), "--net")?;
    let net = load_net(&net_path)?;
    let sim = apply_sim_flags(&net, cfg.sim.clone(), &a.sim)?;
    let n = a.n.unwrap_or(cfg.dataset.n);
    let seed = a.seed.unwrap_or(cfg.dataset.seed);
    let workers = a.workers.unwrap_or(cfg.dataset.workers);
    // the worker count does not change the data, so it stays out of the hash
    let resolved = DatasetResolved { net: InputFile::hash(&net_path)?, n, seed, sim: sim.clone() };
    let runs_dir = a.common.runs_dir.as_deref().or(cfg.paths.runs_dir.as_deref());
    let run = RunDir::create("gen-dataset", &resolved, a.common.out.as_deref(), runs_dir)?;

    let data = generate(&net, &sim, n, seed, workers)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    let csv_path = run.file("dataset.csv");
    std::fs::write(&csv_path, csv)?;
    run.write("dataset.meta.json", &(data.meta_json() + "\n"))?;
    let mean = data.targets.iter().sum::<f64>() / data.len() as f64;
    Ok(json_line(&json!({"run_dir": run.path, "data": csv_path, "rows": data.len(), "k": data.k, "mean_total_wait_s": mean})))
}
