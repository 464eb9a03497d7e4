//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string. The logic lives
//! in the `*_json` functions so it can be tested natively.

use greenwave::datasetgen::directional_demand;
use greenwave::gaopt::{optimize, GaConfig, SimulatorFitness};
use greenwave::microsim::{run_simulation, SimConfig};
use greenwave::roadnet::grid_generate;
use greenwave::signalplan::{PhaseState, SignalSetting, SignalTriple};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest schedule the page will draw.
pub const MAX_HORIZON: u32 = 3600;

#[derive(Serialize)]
struct Schedule {
    cycle: u32,
    /// One character per second: `A` or `B`.
    phases: String,
}

pub fn phase_schedule_json(green_a: u32, green_b: u32, offset: u32, horizon: u32) -> Result<String, String> {
    let setting = SignalSetting::new(vec![SignalTriple::new(green_a, green_b, offset)]).map_err(|e| e.to_string())?;
    let t = setting.triples()[0];
    let phases = (0..horizon.min(MAX_HORIZON) as u64)
        .map(|s| match t.phase_at(s) {
            PhaseState::GreenA => 'A',
            PhaseState::GreenB => 'B',
        })
        .collect();
    Ok(serde_json::to_string(&Schedule { cycle: t.cycle(), phases }).expect("plain data"))
}

#[derive(Serialize)]
struct GridSummary {
    intersections: usize,
    setting: SignalSetting,
    total_wait_s: u64,
    per_intersection_wait_s: Vec<u64>,
    vehicles_spawned: u64,
    vehicles_completed: u64,
}

/// Simulates a grid under a uniformly sampled setting (from `setting_seed`).
pub fn simulate_grid_json(rows: usize, cols: usize, demand: f64, duration_s: u64, setting_seed: u64) -> Result<String, String> {
    if rows * cols > 64 {
        return Err("the demo is limited to 64 intersections".into());
    }
    let net = grid_generate(rows, cols, 20).map_err(|e| e.to_string())?;
    let setting = SignalSetting::sample_uniform(net.signal_count(), setting_seed);
    let cfg = SimConfig { duration_s, demand_default: demand, rng_seed: setting_seed, ..SimConfig::default() };
    let out = run_simulation(&net, &setting, &cfg).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&GridSummary {
        intersections: net.signal_count(),
        setting,
        total_wait_s: out.total_wait_s,
        per_intersection_wait_s: out.per_intersection_wait_s,
        vehicles_spawned: out.vehicles_spawned,
        vehicles_completed: out.vehicles_completed,
    })
    .expect("plain data"))
}

#[derive(Serialize)]
struct GaSummary {
    best: SignalSetting,
    best_fitness: f64,
    /// Best mean wait per generation.
    curve: Vec<f64>,
    fitness_calls: u64,
}

/// Genetic search on one intersection with simulator fitness (3 seeds).
pub fn single_intersection_ga_json(
    demand_a: f64,
    demand_b: f64,
    population: usize,
    generations: usize,
    seed: u64,
) -> Result<String, String> {
    let net = grid_generate(1, 1, 15).map_err(|e| e.to_string())?;
    let sim = SimConfig { duration_s: 300, rng_seed: seed, ..directional_demand(&net, demand_a, demand_b) };
    let fitness = SimulatorFitness::new(&net, &sim, 3).map_err(|e| e.to_string())?;
    let cfg = GaConfig { population, generations, seed, ..GaConfig::default() };
    let r = optimize(&cfg, &fitness).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&GaSummary {
        best: r.best,
        best_fitness: r.best_fitness,
        curve: r.curve.iter().map(|g| g.best).collect(),
        fitness_calls: r.fitness_calls,
    })
    .expect("plain data"))
}

#[wasm_bindgen]
pub fn phase_schedule(green_a: u32, green_b: u32, offset: u32, horizon: u32) -> Result<String, JsError> {
    phase_schedule_json(green_a, green_b, offset, horizon).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_grid(rows: usize, cols: usize, demand: f64, duration_s: u64, setting_seed: u64) -> Result<String, JsError> {
    simulate_grid_json(rows, cols, demand, duration_s, setting_seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn single_intersection_ga(
    demand_a: f64,
    demand_b: f64,
    population: usize,
    generations: usize,
    seed: u64,
) -> Result<String, JsError> {
    single_intersection_ga_json(demand_a, demand_b, population, generations, seed).map_err(|e| JsError::new(&e))
}
