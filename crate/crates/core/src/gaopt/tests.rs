use std::sync::atomic::{AtomicU64, Ordering};

use proptest::prelude::*;

use super::*;
use crate::datasetgen::directional_demand;
use crate::roadnet::grid_generate;
use crate::seed::rng_from_seed;

/// Smooth bowl with a unique minimum at greens (60, 30) and offset 0.
struct Bowl {
    k: usize,
    calls: AtomicU64,
}

impl Bowl {
    fn new(k: usize) -> Self {
        Self { k, calls: AtomicU64::new(0) }
    }
}

impl Fitness for Bowl {
    fn k(&self) -> usize {
        self.k
    }

    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>, String> {
        self.calls.fetch_add(settings.len() as u64, Ordering::Relaxed);
        Ok(settings
            .iter()
            .map(|s| {
                assert!(SignalSetting::decode(&s.encode(), self.k).is_ok(), "invalid individual {s:?}");
                s.triples()
                    .iter()
                    .map(|t| {
                        let (a, b) = (t.green_a as f64 - 60.0, t.green_b as f64 - 30.0);
                        1000.0 + a * a + b * b + t.offset as f64
                    })
                    .sum()
            })
            .collect())
    }
}

/// Scores the initial population, then fails.
struct Failing(AtomicU64);

impl Fitness for Failing {
    fn k(&self) -> usize {
        2
    }

    fn evaluate(&self, settings: &[SignalSetting]) -> Result<Vec<f64>, String> {
        if self.0.fetch_add(1, Ordering::Relaxed) > 0 {
            Err("model unavailable".into())
        } else {
            Ok(vec![1.0; settings.len()])
        }
    }
}

fn small(seed: u64) -> GaConfig {
    GaConfig { population: 12, generations: 15, seed, ..GaConfig::default() }
}

#[test]
fn fixed_point_without_variation() {
    let same = SignalSetting::new(vec![SignalTriple::new(45, 33, 7), SignalTriple::new(70, 20, 50)]).unwrap();
    let cfg = GaConfig { crossover_prob: 0.0, mutation_prob: 0.0, initial_population: Some(vec![same.clone(); 12]), ..small(3) };
    let fit = Bowl::new(2);
    let r = optimize(&cfg, &fit).unwrap();
    assert_eq!(r.best, same);
    assert!(r.curve.windows(2).all(|w| w[0].best == w[1].best));
    assert!(r.final_population.iter().all(|s| s.setting == same));
    assert_eq!(r.fitness_calls, 1);
    assert_eq!(r.cache_hits, 12 * 15 - 1);
}

#[test]
fn call_count_matches_requests_minus_hits() {
    let fit = Bowl::new(3);
    let cfg = small(9);
    let r = optimize(&cfg, &fit).unwrap();
    let requested = (cfg.population * cfg.generations) as u64;
    assert_eq!(r.fitness_calls, fit.calls.load(Ordering::Relaxed));
    assert_eq!(r.fitness_calls, requested - r.cache_hits);
    // elites are always served from memory
    assert!(r.cache_hits >= (cfg.elitism * (cfg.generations - 1)) as u64);
}

#[test]
fn same_config_same_result() {
    let a = optimize(&small(21), &Bowl::new(2)).unwrap();
    let b = optimize(&small(21), &Bowl::new(2)).unwrap();
    assert_eq!(a, b);
    let c = optimize(&small(22), &Bowl::new(2)).unwrap();
    assert_ne!(a.final_population, c.final_population);
}

#[test]
fn approaches_the_bowl_minimum() {
    let cfg = GaConfig { population: 40, generations: 60, seed: 5, ..GaConfig::default() };
    let r = optimize(&cfg, &Bowl::new(1)).unwrap();
    let t = r.best.triples()[0];
    assert!((t.green_a as i64 - 60).abs() <= 4 && (t.green_b as i64 - 30).abs() <= 4, "{t:?}");
    assert!(r.best_fitness < 1040.0, "{}", r.best_fitness);
    assert_eq!(r.curve.len(), 60);
}

#[test]
fn fitness_failure_reports_generation() {
    let cfg = GaConfig { population: 10, elitism: 0, mutation_prob: 1.0, ..small(0) };
    match optimize(&cfg, &Failing(AtomicU64::new(0))) {
        Err(GaError::Fitness { generation, message }) => {
            assert_eq!(generation, 1);
            assert!(message.contains("unavailable"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_validation() {
    let bad = [
        GaConfig { elitism: 12, ..small(0) },
        GaConfig { population: 1, elitism: 0, ..small(0) },
        GaConfig { crossover_prob: 1.5, ..small(0) },
        GaConfig { mutation_prob: -0.1, ..small(0) },
        GaConfig { tournament: 0, ..small(0) },
        GaConfig { green_step: 0, ..small(0) },
        GaConfig { generations: 0, ..small(0) },
        GaConfig { fitness: FitnessSpec::Simulator { seeds: 0 }, ..small(0) },
        GaConfig { initial_population: Some(vec![]), ..small(0) },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(GaError::Config(_))), "{cfg:?}");
    }
    let wrong_k = GaConfig { initial_population: Some(vec![SignalSetting::sample_uniform(3, 1); 12]), ..small(0) };
    assert!(matches!(optimize(&wrong_k, &Bowl::new(2)), Err(GaError::KMismatch { expected: 2, got: 3 })));
}

#[test]
fn config_json_is_strict() {
    let cfg: GaConfig = serde_json::from_str(r#"{"population": 8, "fitness": {"kind": "simulator", "seeds": 3}}"#).unwrap();
    assert_eq!(cfg.population, 8);
    assert_eq!(cfg.fitness, FitnessSpec::Simulator { seeds: 3 });
    assert!(serde_json::from_str::<GaConfig>(r#"{"popsize": 8}"#).is_err());
}

#[test]
fn crossover_swaps_whole_triples() {
    let mut rng = rng_from_seed(4);
    for _ in 0..200 {
        let a = SignalSetting::sample_with(5, &mut rng);
        let b = SignalSetting::sample_with(5, &mut rng);
        let (x, y) = crossover(&a, &b, &mut rng);
        for i in 0..5 {
            let (ta, tb) = (a.triples()[i], b.triples()[i]);
            let (tx, ty) = (x.triples()[i], y.triples()[i]);
            assert!((tx, ty) == (ta, tb) || (tx, ty) == (tb, ta));
        }
    }
}

#[test]
fn curve_csv_has_one_row_per_generation() {
    let r = optimize(&small(1), &Bowl::new(1)).unwrap();
    let mut buf = Vec::new();
    r.write_curve_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("generation,best,mean"));
    assert_eq!(text.lines().count(), 16);
    let back: GaResult = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(back, r);
}

fn single_intersection() -> (RoadNetwork, SimConfig) {
    let net = grid_generate(1, 1, 15).unwrap();
    let cfg = SimConfig { duration_s: 300, ..directional_demand(&net, 0.3, 0.0) };
    (net, cfg)
}

#[test]
fn verify_elite_table_sizes() {
    let (net, cfg) = single_intersection();
    let truth = SimulatorFitness::new(&net, &cfg, 2).unwrap();
    let r = optimize(&GaConfig { population: 8, generations: 3, ..GaConfig::default() }, &truth).unwrap();
    assert!(verify_elite(&r, &truth, 0).unwrap().is_empty());
    let table = verify_elite(&r, &truth, 2).unwrap();
    assert_eq!(table.len(), 2);
    // the fitness here is the simulator itself, so predictions are exact
    for row in &table {
        assert_eq!(row.predicted, row.simulated);
        assert_eq!(row.ape, 0.0);
    }
    assert!(verify_elite(&r, &truth, 9).is_err());
}

#[test]
fn simulator_fitness_uses_common_seeds() {
    let (net, cfg) = single_intersection();
    let f = SimulatorFitness::new(&net, &cfg, 3).unwrap();
    assert_eq!(f.k(), 1);
    assert_eq!(f.seeds().len(), 3);
    let s = SignalSetting::sample_uniform(1, 8);
    let once = f.evaluate(std::slice::from_ref(&s)).unwrap();
    let twice = f.evaluate(&[s.clone(), s]).unwrap();
    assert_eq!(once[0], twice[0]);
    assert_eq!(twice[0], twice[1]);
}

#[test]
fn longer_group_a_green_wins_with_one_way_demand() {
    let (net, cfg) = single_intersection();
    let f = SimulatorFitness::new(&net, &cfg, 3).unwrap();
    let (best, grid_min) = coarse_grid_search(&f, &[20, 50, 80]).unwrap();
    assert!(best.triples()[0].green_a >= best.triples()[0].green_b, "{best:?}");
    let ga = GaConfig { population: 16, generations: 12, seed: 2, ..GaConfig::default() };
    let r = optimize(&ga, &f).unwrap();
    assert!(r.best_fitness <= grid_min * 1.05, "{} vs {grid_min}", r.best_fitness);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn best_never_worsens_with_elitism(seed in any::<u64>(), elitism in 1usize..4, mp in 0.0f64..1.0, cp in 0.0f64..1.0) {
        let cfg = GaConfig { elitism, mutation_prob: mp, crossover_prob: cp, ..small(seed) };
        let r = optimize(&cfg, &Bowl::new(2)).unwrap();
        prop_assert!(r.curve.windows(2).all(|w| w[1].best <= w[0].best));
        prop_assert_eq!(r.best_fitness, r.curve.last().unwrap().best);
    }

    #[test]
    fn mutation_stays_in_range(seed in any::<u64>(), step in 1u32..60) {
        let mut rng = rng_from_seed(seed);
        let t = crate::signalplan::sample_triple(&mut rng);
        let m = mutate_triple(t, step, &mut rng);
        prop_assert!(SignalSetting::new(vec![m]).is_ok());
        prop_assert!((m.green_a as i64 - t.green_a as i64).abs() <= step as i64);
        prop_assert!((m.green_b as i64 - t.green_b as i64).abs() <= step as i64);
    }
}
