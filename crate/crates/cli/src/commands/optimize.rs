use greenwave::gaopt::{optimize as run_ga, verify_elite, FitnessSpec, GaConfig, GaError, SimulatorFitness, SurrogateFitness};
use greenwave::microsim::SimConfig;
use greenwave::surrogates::SurrogateModel;
use serde::Serialize;
use serde_json::json;

use super::{apply_sim_flags, json_line};
use crate::error::{CliError, CliResult, Kind};
use crate::run::{load_net, ExperimentConfig, InputFile, RunDir};
use crate::{FitnessArg, OptimizeArgs};

/// Simulator runs averaged when verifying elites if no count is configured.
const DEFAULT_SIM_SEEDS: u32 = 5;

#[derive(Serialize)]
struct OptimizeResolved {
    ga: GaConfig,
    model_manifest: Option<InputFile>,
    model_params: Option<InputFile>,
    net: Option<InputFile>,
    sim: Option<SimConfig>,
    verify_top: Option<usize>,
    verify_seeds: Option<u32>,
}

pub fn optimize(a: OptimizeArgs) -> CliResult<String> {
    let cfg = ExperimentConfig::load(a.common.config.as_deref())?;
    let mut ga = cfg.ga.clone();
    if let Some(p) = a.population {
        ga.population = p;
    }
    if let Some(g) = a.generations {
        ga.generations = g;
    }
    if let Some(s) = a.seed {
        ga.seed = s;
    }
    let configured_seeds = match ga.fitness {
        FitnessSpec::Simulator { seeds } => seeds,
        FitnessSpec::Surrogate => DEFAULT_SIM_SEEDS,
    };
    let sim_seeds = a.sim_seeds.unwrap_or(configured_seeds);
    match a.fitness {
        Some(FitnessArg::Surrogate) => ga.fitness = FitnessSpec::Surrogate,
        Some(FitnessArg::Simulator) => ga.fitness = FitnessSpec::Simulator { seeds: sim_seeds },
        None => {
            if let FitnessSpec::Simulator { seeds } = &mut ga.fitness {
                *seeds = sim_seeds;
            }
        }
    }
    ga.validate()?;

    let net_path = a.net.or_else(|| cfg.paths.net.clone());
    let net = net_path.as_deref().map(load_net).transpose()?;
    let sim = net.as_ref().map(|n| apply_sim_flags(n, cfg.sim.clone(), &a.sim)).transpose()?;
    let model_dir = a.model.or_else(|| cfg.paths.model.clone());
    let surrogate = matches!(ga.fitness, FitnessSpec::Surrogate);
    if surrogate && model_dir.is_none() {
        return Err(CliError::usage("surrogate fitness needs --model"));
    }
    if !surrogate && net.is_none() {
        return Err(CliError::usage("simulator fitness needs --net"));
    }
    if a.verify_top.is_some() && net.is_none() {
        return Err(CliError::usage("--verify-top needs --net"));
    }
    let model_files = match (&model_dir, surrogate) {
        (Some(d), true) => Some((InputFile::hash(&d.join("manifest.json"))?, InputFile::hash(&d.join("params.json"))?)),
        _ => None,
    };
    let (model_manifest, model_params) = model_files.map_or((None, None), |(m, p)| (Some(m), Some(p)));
    let resolved = OptimizeResolved {
        ga: ga.clone(),
        model_manifest,
        model_params,
        net: net_path.as_deref().map(InputFile::hash).transpose()?,
        sim: sim.clone(),
        verify_top: a.verify_top,
        verify_seeds: a.verify_top.map(|_| sim_seeds),
    };
    let runs_dir = a.common.runs_dir.as_deref().or(cfg.paths.runs_dir.as_deref());
    let run = RunDir::create("optimize", &resolved, a.common.out.as_deref(), runs_dir)?;

    let mut result = if surrogate {
        let model = SurrogateModel::load(model_dir.as_deref().expect("checked above"))?;
        if let Some(n) = &net {
            if n.signal_count() != model.k() {
                return Err(CliError::contract(format!(
                    "network has {} signalized intersections but the model expects K = {}",
                    n.signal_count(),
                    model.k()
                )));
            }
        }
        run_ga(&ga, &SurrogateFitness::new(&model))?
    } else {
        let f = SimulatorFitness::new(net.as_ref().expect("checked above"), sim.as_ref().expect("net implies sim"), sim_seeds)?;
        run_ga(&ga, &f).map_err(|e| match e {
            GaError::Fitness { .. } => CliError::new(Kind::Sim, e.to_string()),
            other => other.into(),
        })?
    };
    if let (Some(m), Some(n), Some(s)) = (a.verify_top, &net, &sim) {
        let truth = SimulatorFitness::new(n, s, sim_seeds)?;
        result.elite_check = Some(verify_elite(&result, &truth, m).map_err(|e| CliError::new(Kind::Sim, e.to_string()))?);
    }
    run.write("ga_result.json", &(serde_json::to_string_pretty(&result)? + "\n"))?;
    let mut curve = Vec::new();
    result.write_curve_csv(&mut curve)?;
    std::fs::write(run.file("curve.csv"), curve)?;
    let median_ape = result.elite_check.as_ref().filter(|t| !t.is_empty()).map(|t| {
        let mut apes: Vec<f64> = t.iter().map(|r| r.ape).collect();
        apes.sort_by(f64::total_cmp);
        let n = apes.len();
        if n % 2 == 1 {
            apes[n / 2]
        } else {
            0.5 * (apes[n / 2 - 1] + apes[n / 2])
        }
    });
    Ok(json_line(&json!({
        "run_dir": run.path,
        "best": result.best,
        "best_fitness": result.best_fitness,
        "fitness_calls": result.fitness_calls,
        "cache_hits": result.cache_hits,
        "median_elite_ape": median_ape,
    })))
}
