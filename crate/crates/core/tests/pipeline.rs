//! Dataset generation, training, evaluation and surrogate-driven search on a
//! small grid, through the public API only.

use greenwave::datasetgen::{generate, Split};
use greenwave::gaopt::{optimize, verify_elite, GaConfig, SimulatorFitness, SurrogateFitness};
use greenwave::microsim::SimConfig;
use greenwave::roadnet::grid_generate;
use greenwave::surrogates::{FcnnConfig, ModelConfig, SurrogateModel, TrainConfig};
use greenwave::trainer::{constant_mean_baseline, evaluate_model, fit};

#[test]
fn generate_train_search_verify() {
    let net = grid_generate(1, 2, 12).unwrap();
    let cfg = SimConfig { duration_s: 300, demand_default: 0.25, ..SimConfig::default() };
    let data = generate(&net, &cfg, 600, 3, 1).unwrap();
    assert_eq!(data.indices(Split::Test).len(), 60);

    let model_cfg = ModelConfig::Fcnn(FcnnConfig {
        hidden: vec![32, 16],
        train: TrainConfig { epochs: 40, batch_size: 64, lr: 0.01, ..TrainConfig::tabular() },
        ..FcnnConfig::default()
    });
    let (model, log) = fit(&model_cfg, &data, None, 5).unwrap();
    assert!(log.best_epoch >= 1);
    let (_, _, report) = evaluate_model(&model, &data).unwrap();
    let baseline = constant_mean_baseline(&data).unwrap();
    assert!(report.mape < baseline.mape, "{} vs {}", report.mape, baseline.mape);

    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = SurrogateModel::load(dir.path()).unwrap();

    let ga = GaConfig { population: 16, generations: 6, seed: 1, ..GaConfig::default() };
    let result = optimize(&ga, &SurrogateFitness::new(&loaded)).unwrap();
    assert!(result.curve.windows(2).all(|w| w[1].best <= w[0].best));

    let truth = SimulatorFitness::new(&net, &cfg, 3).unwrap();
    let table = verify_elite(&result, &truth, 3).unwrap();
    assert_eq!(table.len(), 3);
    for row in &table {
        assert!(row.simulated >= 0.0 && row.ape.is_finite());
        assert_eq!(row.predicted, loaded.predict(&row.setting).unwrap());
    }
}
