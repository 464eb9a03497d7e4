//! Genetic search over signal settings.
//!
//! Individuals are [`SignalSetting`]s; lower fitness (total waiting time in
//! seconds) is better. Operators work on whole triples so that an offset is
//! never separated from the greens that bound it.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microsim::{SimConfig, Simulator};
use crate::roadnet::RoadNetwork;
use crate::seed::{derive_seed, derived_rng};
use crate::signalplan::{SignalSetting, SignalTriple, MAX_GREEN, MIN_GREEN};
use crate::surrogates::SurrogateModel;

#[derive(Debug, Error)]
pub enum GaError {
    #[error("invalid GA config: {0}")]
    Config(String),
    #[error("fitness expects {expected} intersections, initial population has {got}")]
    KMismatch { expected: usize, got: usize },
    #[error("fitness evaluation failed in generation {generation}: {message}")]
    Fitness { generation: usize, message: String },
    #[error("simulation failed: {0}")]
    Simulation(#[from] crate::microsim::SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Where fitness values come from. The model or network itself is supplied
/// separately to [`optimize`]; this records the choice in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FitnessSpec {
    Surrogate,
    /// Mean total wait over `seeds` simulator runs with common random numbers.
    Simulator {
        seeds: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_prob: f64,
    /// Probability that a given triple of a child is mutated.
    pub mutation_prob: f64,
    /// Largest green change, in seconds, applied by one mutation.
    pub green_step: u32,
    pub elitism: usize,
    pub fitness: FitnessSpec,
    pub seed: u64,
    /// Replaces the sampled initial population when present.
    pub initial_population: Option<Vec<SignalSetting>>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 40,
            generations: 30,
            tournament: 3,
            crossover_prob: 0.9,
            mutation_prob: 0.2,
            green_step: 10,
            elitism: 2,
            fitness: FitnessSpec::Surrogate,
            seed: 0,
            initial_population: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        let bad = |m: String| Err(GaError::Config(m));
        if self.population < 2 {
            return bad(format!("population must be >= 2, got {}", self.population));
        }
        if self.generations < 1 {
            return bad("generations must be >= 1".into());
        }
        if self.tournament < 1 {
            return bad("tournament must be >= 1".into());
        }
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.green_step < 1 {
            return bad("green_step must be >= 1".into());
        }
        if self.elitism >= self.population {
            return bad(format!("elitism {} must be below population {}", self.elitism, self.population));
        }
        if let FitnessSpec::Simulator { seeds: 0 } = self.fitness {
            return bad("simulator fitness needs at least one seed".into());
        }
        if let Some(init) = &self.initial_population {
            if init.len() != self.population {
                return bad(format!("initial population has {} members, expected {}", init.len(), self.population));
            }
        }
        Ok(())
    }
}

/// A batch fitness function. Implementations must be pure: equal settings
/// give equal values.
pub trait Fitness: Sync {
    fn k(&self) -> usize;
    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>, String>;
}

pub struct SurrogateFitness<'a> {
    model: &'a SurrogateModel,
}

impl<'a> SurrogateFitness<'a> {
    pub fn new(model: &'a SurrogateModel) -> Self {
        Self { model }
    }
}

impl Fitness for SurrogateFitness<'_> {
    fn k(&self) -> usize {
        self.model.k()
    }

    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>, String> {
        self.model.predict_batch(settings).map_err(|e| e.to_string())
    }
}

/// Mean simulated total wait over a fixed list of seeds shared by every
/// setting, so that differences between settings are not seed noise.
pub struct SimulatorFitness {
    sim: Simulator,
    cfg: SimConfig,
    seeds: Vec<u64>,
}

impl SimulatorFitness {
    /// Seeds are derived from `cfg.rng_seed`.
    pub fn new(net: &RoadNetwork, cfg: &SimConfig, n_seeds: u32) -> Result<Self, GaError> {
        cfg.validate()?;
        if n_seeds == 0 {
            return Err(GaError::Config("simulator fitness needs at least one seed".into()));
        }
        let seeds = (0..n_seeds as u64).map(|i| derive_seed(cfg.rng_seed, "fitness", i)).collect();
        Ok(Self { sim: Simulator::new(net), cfg: cfg.clone(), seeds })
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn mean_wait(&self, setting: &SignalSetting) -> Result<f64, String> {
        let total = self
            .seeds
            .par_iter()
            .map(|&s| {
                let cfg = SimConfig { rng_seed: s, ..self.cfg.clone() };
                self.sim.run(setting, &cfg).map(|o| o.total_wait_s).map_err(|e| e.to_string())
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        Ok(total as f64 / self.seeds.len() as f64)
    }
}

impl Fitness for SimulatorFitness {
    fn k(&self) -> usize {
        self.sim.signal_count()
    }

    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>, String> {
        settings.par_iter().map(|s| self.mean_wait(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best fitness in this generation's population.
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub setting: SignalSetting,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliteCheck {
    pub setting: SignalSetting,
    pub predicted: f64,
    pub simulated: f64,
    /// Absolute percentage error of the prediction against the simulation.
    pub ape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: SignalSetting,
    pub best_fitness: f64,
    pub curve: Vec<GenerationRecord>,
    /// Final population, best first.
    pub final_population: Vec<Scored>,
    /// Distinct settings sent to the fitness function.
    pub fitness_calls: u64,
    pub cache_hits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elite_check: Option<Vec<EliteCheck>>,
}

impl GaResult {
    /// `generation,best,mean` with one row per generation.
    pub fn write_curve_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "generation,best,mean")?;
        for r in &self.curve {
            writeln!(out, "{},{},{}", r.generation, r.best, r.mean)?;
        }
        Ok(())
    }
}

/// Exact-match memo over encoded settings.
struct Cache<'f> {
    fitness: &'f dyn Fitness,
    memo: HashMap<Vec<i64>, f64>,
    calls: u64,
    hits: u64,
}

impl Cache<'_> {
    fn score(&mut self, pop: &[SignalSetting], generation: usize) -> Result<Vec<f64>, GaError> {
        let keys: Vec<Vec<i64>> = pop.iter().map(SignalSetting::encode).collect();
        let mut fresh: Vec<usize> = Vec::new();
        let mut pending: HashMap<&[i64], ()> = HashMap::new();
        for (i, key) in keys.iter().enumerate() {
            if self.memo.contains_key(key) || pending.contains_key(key.as_slice()) {
                self.hits += 1;
            } else {
                pending.insert(key, ());
                fresh.push(i);
            }
        }
        if !fresh.is_empty() {
            let batch: Vec<SignalSetting> = fresh.iter().map(|&i| pop[i].clone()).collect();
            let values = self.fitness.evaluate(&batch).map_err(|message| GaError::Fitness { generation, message })?;
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(GaError::Fitness { generation, message: format!("non-finite fitness {bad}") });
            }
            self.calls += fresh.len() as u64;
            for (&i, v) in fresh.iter().zip(values) {
                self.memo.insert(keys[i].clone(), v);
            }
        }
        Ok(keys.iter().map(|k| self.memo[k]).collect())
    }
}

/// Indices of `fit` sorted best first; ties broken by encoded setting so the
/// order never depends on evaluation order.
fn ranking(pop: &[SignalSetting], fit: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| fit[a].total_cmp(&fit[b]).then_with(|| pop[a].encode().cmp(&pop[b].encode())));
    order
}

/// Best of `size` uniform draws with replacement, by position in `rank_of`.
fn tournament<R: Rng>(rank_of: &[usize], size: usize, rng: &mut R) -> usize {
    let n = rank_of.len();
    (0..size).map(|_| rng.random_range(0..n)).min_by_key(|&i| rank_of[i]).expect("size >= 1")
}

/// Swaps each triple between the two parents with probability one half.
fn crossover<R: Rng>(a: &SignalSetting, b: &SignalSetting, rng: &mut R) -> (SignalSetting, SignalSetting) {
    let (mut x, mut y) = (a.triples().to_vec(), b.triples().to_vec());
    for (p, q) in x.iter_mut().zip(y.iter_mut()) {
        if rng.random_bool(0.5) {
            std::mem::swap(p, q);
        }
    }
    (SignalSetting::new(x).expect("triples stay valid"), SignalSetting::new(y).expect("triples stay valid"))
}

/// Each green moves by a signed uniform step in `1..=step`, is clamped into
/// range, and the offset is redrawn within the new cycle.
fn mutate_triple<R: Rng>(t: SignalTriple, step: u32, rng: &mut R) -> SignalTriple {
    let mut shift = |g: u32| {
        let d = rng.random_range(1..=step as i64);
        let d = if rng.random_bool(0.5) { d } else { -d };
        (g as i64 + d).clamp(MIN_GREEN, MAX_GREEN) as u32
    };
    let (ga, gb) = (shift(t.green_a), shift(t.green_b));
    let offset = rng.random_range(0..ga + gb);
    SignalTriple::new(ga, gb, offset)
}

fn mutate<R: Rng>(s: &SignalSetting, cfg: &GaConfig, rng: &mut R) -> SignalSetting {
    let triples = s
        .triples()
        .iter()
        .map(|&t| if rng.random_bool(cfg.mutation_prob) { mutate_triple(t, cfg.green_step, rng) } else { t })
        .collect();
    SignalSetting::new(triples).expect("mutation keeps triples valid")
}

/// Runs the search. Generation 0 is the initial population; every generation
/// scores `population` individuals, so the fitness is asked for
/// `population * generations` values of which `cache_hits` come from memory.
pub fn optimize(cfg: &GaConfig, fitness: &dyn Fitness) -> Result<GaResult, GaError> {
    cfg.validate()?;
    let k = fitness.k();
    let mut pop: Vec<SignalSetting> = match &cfg.initial_population {
        Some(init) => {
            if let Some(bad) = init.iter().find(|s| s.len() != k) {
                return Err(GaError::KMismatch { expected: k, got: bad.len() });
            }
            init.clone()
        }
        None => {
            let mut rng = derived_rng(cfg.seed, "ga/init", 0);
            (0..cfg.population).map(|_| SignalSetting::sample_with(k, &mut rng)).collect()
        }
    };
    let mut cache = Cache { fitness, memo: HashMap::new(), calls: 0, hits: 0 };
    let mut curve = Vec::with_capacity(cfg.generations);
    let mut fit = cache.score(&pop, 0)?;

    for generation in 0..cfg.generations {
        let order = ranking(&pop, &fit);
        curve.push(GenerationRecord { generation, best: fit[order[0]], mean: fit.iter().sum::<f64>() / fit.len() as f64 });
        if generation + 1 == cfg.generations {
            break;
        }
        let mut rank_of = vec![0; pop.len()];
        for (r, &i) in order.iter().enumerate() {
            rank_of[i] = r;
        }
        let mut rng = derived_rng(cfg.seed, "ga/generation", generation as u64);
        let mut next: Vec<SignalSetting> = order[..cfg.elitism].iter().map(|&i| pop[i].clone()).collect();
        while next.len() < cfg.population {
            let a = &pop[tournament(&rank_of, cfg.tournament, &mut rng)];
            let b = &pop[tournament(&rank_of, cfg.tournament, &mut rng)];
            let (x, y) = if rng.random_bool(cfg.crossover_prob) { crossover(a, b, &mut rng) } else { (a.clone(), b.clone()) };
            next.push(mutate(&x, cfg, &mut rng));
            if next.len() < cfg.population {
                next.push(mutate(&y, cfg, &mut rng));
            }
        }
        pop = next;
        fit = cache.score(&pop, generation + 1)?;
    }

    let order = ranking(&pop, &fit);
    let final_population: Vec<Scored> = order.iter().map(|&i| Scored { setting: pop[i].clone(), fitness: fit[i] }).collect();
    Ok(GaResult {
        best: final_population[0].setting.clone(),
        best_fitness: final_population[0].fitness,
        curve,
        final_population,
        fitness_calls: cache.calls,
        cache_hits: cache.hits,
        elite_check: None,
    })
}

/// Re-simulates the `top_m` best distinct settings of the final population
/// and compares them with their recorded (surrogate) fitness.
pub fn verify_elite(result: &GaResult, truth: &SimulatorFitness, top_m: usize) -> Result<Vec<EliteCheck>, GaError> {
    let mut elites: Vec<&Scored> = Vec::new();
    for s in &result.final_population {
        if elites.len() == top_m {
            break;
        }
        if !elites.iter().any(|e| e.setting == s.setting) {
            elites.push(s);
        }
    }
    if elites.len() < top_m {
        return Err(GaError::Config(format!(
            "top_m {top_m} exceeds the {} distinct settings in the final population",
            elites.len()
        )));
    }
    elites
        .into_iter()
        .map(|e| {
            let simulated = truth.mean_wait(&e.setting).map_err(|message| GaError::Fitness { generation: 0, message })?;
            let ape = if simulated == 0.0 { f64::INFINITY } else { 100.0 * (e.fitness - simulated).abs() / simulated };
            Ok(EliteCheck { setting: e.setting.clone(), predicted: e.fitness, simulated, ape })
        })
        .collect()
}

/// Exhaustive search of a single intersection over `greens x greens` with
/// offset 0. Returns the best point and its fitness; ties go to the earlier
/// point in `(green_a, green_b)` order.
pub fn coarse_grid_search(fitness: &dyn Fitness, greens: &[u32]) -> Result<(SignalSetting, f64), GaError> {
    if fitness.k() != 1 {
        return Err(GaError::KMismatch { expected: 1, got: fitness.k() });
    }
    let mut points = Vec::new();
    for &ga in greens {
        for &gb in greens {
            let s = SignalSetting::new(vec![SignalTriple::new(ga, gb, 0)])
                .map_err(|e| GaError::Config(format!("grid point: {e}")))?;
            points.push(s);
        }
    }
    let values = fitness.evaluate(&points).map_err(|message| GaError::Fitness { generation: 0, message })?;
    let best =
        (0..points.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).ok_or_else(|| GaError::Config("empty grid".into()))?;
    Ok((points[best].clone(), values[best]))
}

#[cfg(test)]
mod tests;
