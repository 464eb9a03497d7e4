use std::sync::Arc;

use super::training::train_inner;
use super::*;
use crate::autodiff::{grad_check, Graph, ParamStore, Tensor};
use crate::datasetgen::{NormStats, SampleSet, Split};
use crate::roadnet::grid_generate;
use crate::seed::derived_rng;

const K: usize = 3;

fn line_adjacency() -> Vec<Vec<bool>> {
    grid_generate(1, K, 5).unwrap().adjacency_matrix()
}

/// Smooth synthetic target so that small models learn within a few epochs.
fn synthetic(n: usize, seed: u64) -> SampleSet {
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let s = SignalSetting::sample_uniform(K, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        let v = s.encode();
        let y = 500.0 + 8.0 * v[0] as f64 - 3.0 * v[1] as f64
            + 0.02 * (v[3] * v[4]) as f64
            + 40.0 * ((v[2] as f64) / 20.0).sin()
            + 2.0 * v[7] as f64;
        features.push(v);
        targets.push(y);
    }
    SampleSet::from_rows(K, features, targets, seed).unwrap()
}

fn small_train(epochs: usize, batch: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, batch_size: batch, lr, weight_decay: 0.0, early_stopping: None, plateau: None }
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig { d_model: 16, heads: 2, layers: 1, ff_dim: 32, max_len: 32, ..EncoderConfig::default() }
}

fn small_configs() -> Vec<ModelConfig> {
    vec![
        ModelConfig::Fcnn(FcnnConfig { hidden: vec![32, 16], train: small_train(15, 64, 0.01), ..FcnnConfig::default() }),
        ModelConfig::Gcn(GcnConfig { conv_widths: vec![8, 8], train: small_train(10, 64, 0.01), ..GcnConfig::default() }),
        ModelConfig::Gnn(GnnConfig { train: small_train(10, 64, 0.01), ..GnnConfig::default() }),
        ModelConfig::TransformerOnestep(OnestepConfig {
            encoder: small_encoder(),
            head_hidden: 32,
            head_dropout: 0.05,
            train: small_train(12, 32, 2e-3),
        }),
        ModelConfig::TransformerTwostep(TwostepConfig {
            encoder: small_encoder(),
            head_hidden: 32,
            classify: TrainConfig {
                epochs: 4,
                batch_size: 32,
                lr: 2e-3,
                weight_decay: 0.01,
                early_stopping: None,
                plateau: None,
            },
            regress: small_train(6, 32, 0.01),
            ..TwostepConfig::default()
        }),
    ]
}

#[test]
fn default_architectures() {
    let f = FcnnConfig::default();
    assert_eq!(f.layer_widths(21), vec![63, 256, 128, 64, 48, 32, 16, 8, 1]);
    assert_eq!(f.activation, Activation::LeakyRelu);
    assert!(f.batch_norm);
    assert_eq!(GcnConfig::default().conv_widths, vec![21, 128, 48, 32]);
    let t = TrainConfig::tabular();
    assert_eq!((t.epochs, t.batch_size, t.lr, t.early_stopping), (100, 2048, 0.05, Some(10)));
    let p = t.plateau.unwrap();
    assert_eq!((p.factor, p.patience), (0.2, 2));
    let o = TrainConfig::onestep();
    assert_eq!((o.epochs, o.batch_size, o.lr), (12, 64, 5e-5));
    let c = TrainConfig::twostep_classify();
    assert_eq!((c.epochs, c.batch_size, c.lr, c.weight_decay), (15, 100, 2e-5, 0.01));
    let r = TrainConfig::twostep_regress();
    assert_eq!((r.epochs, r.lr), (12, 0.01));
    let e = EncoderConfig::default();
    assert_eq!((e.vocab, e.d_model, e.heads, e.layers, e.max_len, e.dropout), (360, 64, 4, 2, 128, 0.05));
}

#[test]
fn config_json_is_tagged_and_strict() {
    let c = ModelConfig::default_for(ModelKind::Gnn);
    let json = serde_json::to_string(&c).unwrap();
    assert!(json.starts_with(r#"{"kind":"gnn""#), "{json}");
    assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), c);
    let partial: ModelConfig = serde_json::from_str(r#"{"kind":"fcnn","hidden":[8]}"#).unwrap();
    assert_eq!(partial.kind(), ModelKind::Fcnn);
    assert!(serde_json::from_str::<ModelConfig>(r#"{"kind":"fcnn","hidden":[8],"widths":[1]}"#).is_err());
    let bad = ModelConfig::TransformerOnestep(OnestepConfig {
        encoder: EncoderConfig { d_model: 30, heads: 4, ..EncoderConfig::default() },
        ..OnestepConfig::default()
    });
    assert!(matches!(bad.validate(), Err(SurrogateError::Config(_))));
}

#[test]
fn normalized_adjacency_on_cycle_has_unit_row_sums() {
    let n = 6;
    let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| (i + 1) % n == j || (j + 1) % n == i).collect()).collect();
    let a = normalized_adjacency(&adj);
    for i in 0..n {
        let s: f64 = a[i * n..(i + 1) * n].iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        assert!((a[i * n + i] - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn gnn_mask_follows_adjacency() {
    let adj = line_adjacency();
    let (cin, cout) = (3, 2);
    let mask = gnn_mask(&adj, cin, cout);
    let cols = K * cout;
    for (idx, &m) in mask.iter().enumerate() {
        let (r, c) = (idx / cols, idx % cols);
        let (i, j) = (r / cin, c / cout);
        let allowed = i == j || adj[i][j];
        assert_eq!(m != 0.0, allowed, "({i},{j})");
    }
    // the end nodes of a 3-line are not adjacent
    assert!(!adj[0][2]);
}

fn model_from_config(config: ModelConfig, adj: Option<&[Vec<bool>]>, seed: u64) -> (ParamStore, Arch, ModelManifest) {
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        kind: config.kind(),
        k: K,
        config,
        preprocessing: Preprocessing { norm_stats: None, target_minmax: None },
        adjacency: adj.map(edge_list),
        train_seed: seed,
    };
    let (store, arch) = build_arch(&manifest).unwrap();
    (store, arch, manifest)
}

fn inputs(rows: usize, seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = derived_rng(seed, "inputs", 0);
    Tensor::matrix(rows, 3 * K, (0..rows * 3 * K).map(|_| rng.random_range(-1.5..1.5)).collect())
}

#[test]
fn gradcheck_fcnn() {
    let cfg = ModelConfig::Fcnn(FcnnConfig { hidden: vec![7, 5, 4], ..FcnnConfig::default() });
    let (mut store, arch, _) = model_from_config(cfg, None, 1);
    let x = inputs(6, 1);
    let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
    let r = grad_check(&mut store, 1e-5, 30, true, |g, s| {
        let xv = g.input(x.clone());
        let (out, _) = training::tabular_forward(&arch, g, s, xv).map_err(unwrap_ad)?;
        g.mse(out, &y)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

fn unwrap_ad(e: SurrogateError) -> crate::autodiff::AdError {
    match e {
        SurrogateError::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

#[test]
fn gradcheck_gcn_and_gnn() {
    let adj = line_adjacency();
    let x = inputs(4, 2);
    let y = [1.0, -0.5, 0.25, 2.0];
    for cfg in [
        ModelConfig::Gcn(GcnConfig { conv_widths: vec![5, 4], dense_widths: vec![3], ..GcnConfig::default() }),
        ModelConfig::Gcn(GcnConfig { conv_widths: vec![4], readout: Readout::SumPool, ..GcnConfig::default() }),
        ModelConfig::Gnn(GnnConfig { layers: 2, channels: 3, dense_widths: vec![4], ..GnnConfig::default() }),
    ] {
        let (mut store, arch, _) = model_from_config(cfg.clone(), Some(&adj), 3);
        let r = grad_check(&mut store, 1e-5, 30, false, |g, s| {
            let xv = g.input(x.clone());
            let (out, _) = training::tabular_forward(&arch, g, s, xv).map_err(unwrap_ad)?;
            g.mse(out, &y)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{cfg:?}: {r:?}");
    }
}

#[test]
fn gradcheck_full_encoder() {
    let cfg = ModelConfig::TransformerOnestep(OnestepConfig {
        encoder: EncoderConfig { d_model: 8, heads: 2, layers: 2, ff_dim: 12, max_len: 16, ..EncoderConfig::default() },
        head_hidden: 6,
        ..OnestepConfig::default()
    });
    let (mut store, arch, _) = model_from_config(cfg, None, 4);
    let Arch::Onestep { encoder, head } = &arch else { unreachable!() };
    let rows: Vec<Vec<i64>> = (0..3).map(|i| SignalSetting::sample_uniform(K, i).encode()).collect();
    let refs: Vec<&[i64]> = rows.iter().map(Vec::as_slice).collect();
    let ids = training::token_batch(&refs, K).unwrap();
    let seq = seq_len(K);
    let r = grad_check(&mut store, 1e-5, 25, false, |g, s| {
        let cls = encoder.forward(g, s, &ids, 3, seq).map_err(unwrap_ad)?;
        let out = head.forward(g, s, cls)?;
        g.mse(out, &[0.2, 0.9, 0.5])
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn encoder_shapes_errors_and_batch_independence() {
    let cfg = ModelConfig::TransformerOnestep(OnestepConfig { encoder: small_encoder(), ..OnestepConfig::default() });
    let (store, arch, _) = model_from_config(cfg, None, 5);
    let Arch::Onestep { encoder, .. } = &arch else { unreachable!() };
    let seq = seq_len(K);
    let rows: Vec<Vec<u32>> = (0..4).map(|i| tokenize(&SignalSetting::sample_uniform(K, 10 + i))).collect();
    let run = |order: &[usize]| {
        let ids: Vec<u32> = order.iter().flat_map(|&i| rows[i].clone()).collect();
        let mut g = Graph::inference();
        let cls = encoder.forward(&mut g, &store, &ids, order.len(), seq).unwrap();
        assert_eq!(g.shape(cls), &[order.len(), 16]);
        g.value(cls).data.clone()
    };
    let a = run(&[0, 1, 2, 3]);
    let b = run(&[2, 0, 3, 1]);
    for (pos, &orig) in [2usize, 0, 3, 1].iter().enumerate() {
        for c in 0..16 {
            assert!((b[pos * 16 + c] - a[orig * 16 + c]).abs() < 1e-12);
        }
    }
    let mut g = Graph::inference();
    let mut bad = rows[0].clone();
    bad[2] = 360;
    assert!(matches!(
        encoder.forward(&mut g, &store, &bad, 1, seq),
        Err(SurrogateError::TokenOutOfVocab { token: 360, vocab: 360 })
    ));
    let long = vec![CLS; 40];
    assert!(matches!(encoder.forward(&mut g, &store, &long, 1, 40), Err(SurrogateError::SequenceTooLong { .. })));
}

#[test]
#[allow(clippy::needless_range_loop)]
fn gcn_sum_pool_is_permutation_invariant() {
    let adj = line_adjacency();
    let perm = [2usize, 0, 1]; // new position p holds old node perm[p]
    let padj: Vec<Vec<bool>> = (0..K).map(|i| (0..K).map(|j| adj[perm[i]][perm[j]]).collect()).collect();
    let cfg = ModelConfig::Gcn(GcnConfig {
        conv_widths: vec![6, 5],
        dense_widths: vec![4],
        readout: Readout::SumPool,
        ..GcnConfig::default()
    });
    let (store, arch, _) = model_from_config(cfg.clone(), Some(&adj), 6);
    let (_, parch, _) = model_from_config(cfg, Some(&padj), 6);
    let x = inputs(5, 7);
    let mut px = x.clone();
    for r in 0..5 {
        for p in 0..K {
            for c in 0..3 {
                px.data[r * 3 * K + p * 3 + c] = x.data[r * 3 * K + perm[p] * 3 + c];
            }
        }
    }
    let eval = |arch: &Arch, t: &Tensor| {
        let mut g = Graph::inference();
        let xv = g.input(t.clone());
        let (out, _) = training::tabular_forward(arch, &mut g, &store, xv).unwrap();
        g.value(out).data.clone()
    };
    let (a, b) = (eval(&arch, &x), eval(&parch, &px));
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-9, "{u} vs {v}");
    }
}

#[test]
fn bucketize_boundaries_and_partition() {
    assert_eq!(bucketize(&[0.0, 1.0, 0.5, -0.2, 1.7, 0.0666], 15), vec![0, 14, 7, 0, 14, 0]);
    let data = synthetic(300, 3);
    let (lo, hi) = data.target_minmax;
    let train: Vec<f64> = data.indices(Split::Train).iter().map(|&i| (data.targets[i] - lo) / (hi - lo)).collect();
    let labels = bucketize(&train, 15);
    let mut counts = [0usize; 15];
    for l in labels {
        counts[l] += 1;
    }
    assert_eq!(counts.iter().sum::<usize>(), train.len());
}

#[test]
fn graph_kinds_need_matching_adjacency() {
    let data = synthetic(60, 1);
    let cfg = ModelConfig::Gcn(GcnConfig { conv_widths: vec![2], train: small_train(1, 16, 0.01), ..GcnConfig::default() });
    assert!(matches!(train(&cfg, &data, None, 1), Err(SurrogateError::MissingAdjacency { kind: "gcn" })));
    let wrong = grid_generate(2, 2, 5).unwrap().adjacency_matrix();
    assert!(matches!(train(&cfg, &data, Some(&wrong), 1), Err(SurrogateError::Adjacency { k: 3, got: 4 })));
}

#[test]
fn degenerate_targets_rejected_for_token_models() {
    let mut data = synthetic(60, 2);
    data.targets.iter_mut().for_each(|t| *t = 100.0);
    data.target_minmax = (100.0, 100.0);
    let cfg = ModelConfig::TransformerOnestep(OnestepConfig { encoder: small_encoder(), ..OnestepConfig::default() });
    assert!(matches!(train(&cfg, &data, None, 1), Err(SurrogateError::DegenerateTargets(_))));
}

struct Trained {
    model: SurrogateModel,
    log: crate::trainer::TrainLog,
    step1_checksum: Option<u64>,
}

fn train_all(data: &SampleSet, seed: u64) -> Vec<Trained> {
    let adj = line_adjacency();
    small_configs()
        .into_iter()
        .map(|cfg| {
            let (model, log, step1_checksum) = train_inner(&cfg, data, Some(&adj), seed).unwrap();
            Trained { model, log, step1_checksum }
        })
        .collect()
}

fn baseline_mape(data: &SampleSet) -> f64 {
    crate::trainer::constant_mean_baseline(data).unwrap().mape
}

#[test]
fn recipes_learn_and_round_trip() {
    let data = synthetic(1200, 9);
    let base = baseline_mape(&data);
    let trained = train_all(&data, 21);
    for t in &trained {
        let kind = t.model.kind();
        let first = t.log.epochs.first().unwrap().train_loss;
        let last = t.log.epochs.last().unwrap().train_loss;
        assert!(last < first, "{kind:?}: train loss {first} -> {last}");
        let (_, _, report) = crate::trainer::evaluate_model(&t.model, &data).unwrap();
        assert!(report.mape < base, "{kind:?}: MAPE {} vs baseline {base}", report.mape);

        // save/load is exact
        let (m, p) = t.model.to_json();
        let loaded = SurrogateModel::from_json(&m, &p).unwrap();
        let probe: Vec<SignalSetting> = (0..50).map(|i| SignalSetting::sample_uniform(K, 900 + i)).collect();
        let a = t.model.predict_batch(&probe).unwrap();
        let b = loaded.predict_batch(&probe).unwrap();
        assert_eq!(a, b, "{kind:?}");
        for (s, batch_pred) in probe.iter().zip(&a) {
            let single = t.model.predict(s).unwrap();
            assert!((single - batch_pred).abs() <= 1e-12 * batch_pred.abs().max(1.0));
        }
        // finite, positive predictions over random valid settings
        let sweep: Vec<SignalSetting> = (0..1000).map(|i| SignalSetting::sample_uniform(K, 50_000 + i)).collect();
        assert!(t.model.predict_batch(&sweep).unwrap().iter().all(|p| p.is_finite() && *p > 0.0), "{kind:?}");
        assert!(matches!(t.model.predict_rows(&[&[20, 20, 0]]), Err(SurrogateError::KMismatch { k: 3, got: 3 })));
    }
}

#[test]
fn two_step_stages() {
    let data = synthetic(1200, 10);
    let cfg = &small_configs()[4];
    let (model, log, checksum) = train_inner(cfg, &data, None, 5).unwrap();
    let pre = log.pretrain.as_ref().unwrap();
    assert_eq!(pre.epochs.len(), 4);
    assert!(pre.epochs[0].train_accuracy.unwrap() > 1.0 / 15.0);
    assert_eq!(model.params().checksum(ENCODER_PREFIX), checksum.unwrap());
    let w = model.params().find("regressor.hidden.weight").unwrap();
    assert_eq!(model.params().value(w).shape, vec![16, 32]);
}

#[test]
fn training_is_deterministic() {
    let data = synthetic(400, 11);
    let a = train_all(&data, 3);
    let b = train_all(&data, 3);
    for (x, y) in a.iter().zip(&b) {
        let strip = |l: &crate::trainer::TrainLog| l.epochs.iter().map(|e| (e.train_loss, e.val_loss, e.lr)).collect::<Vec<_>>();
        assert_eq!(strip(&x.log), strip(&y.log));
        assert_eq!(x.model.to_json(), y.model.to_json());
        assert_eq!(x.step1_checksum, y.step1_checksum);
    }
}

#[test]
fn early_stopping_restores_best_weights() {
    let data = synthetic(500, 12);
    let cfg = ModelConfig::Fcnn(FcnnConfig {
        hidden: vec![32, 16],
        train: TrainConfig { epochs: 60, batch_size: 32, lr: 0.05, weight_decay: 0.0, early_stopping: Some(3), plateau: None },
        ..FcnnConfig::default()
    });
    let (model, log) = train(&cfg, &data, None, 2).unwrap();
    assert!(log.restored_best);
    let best = log.best_val_loss().unwrap();
    assert!(log.epochs.iter().all(|e| e.val_loss >= best));
    if log.epochs.len() < 60 {
        assert_eq!(log.epochs.len(), log.best_epoch + 3);
    }
    let val = data.indices(Split::Val);
    let rows: Vec<&[i64]> = val.iter().map(|&i| data.features[i].as_slice()).collect();
    let preds = model.predict_rows(&rows).unwrap();
    let mse = preds.iter().zip(&val).map(|(p, &i)| (p - data.targets[i]).powi(2)).sum::<f64>() / val.len() as f64;
    assert!((mse - best).abs() <= 1e-9 * best.max(1.0), "{mse} vs {best}");
}

#[test]
fn preprocessing_is_fitted_on_train_rows_only() {
    let data = synthetic(300, 13);
    let train_rows: Vec<&[i64]> = data.indices(Split::Train).iter().map(|&i| data.features[i].as_slice()).collect();
    let expected = NormStats::fit(train_rows).unwrap();
    let cfg = ModelConfig::Fcnn(FcnnConfig { hidden: vec![4], train: small_train(1, 64, 0.01), ..FcnnConfig::default() });
    let (model, _) = train(&cfg, &data, None, 1).unwrap();
    assert_eq!(model.manifest().preprocessing.norm_stats.as_ref(), Some(&expected));
    let all_rows: Vec<&[i64]> = data.features.iter().map(Vec::as_slice).collect();
    assert_ne!(model.manifest().preprocessing.norm_stats.as_ref(), Some(&NormStats::fit(all_rows).unwrap()));

    let cfg = ModelConfig::TransformerOnestep(OnestepConfig {
        encoder: small_encoder(),
        train: small_train(1, 64, 1e-3),
        ..OnestepConfig::default()
    });
    let (model, _) = train(&cfg, &data, None, 1).unwrap();
    let train_targets: Vec<f64> = data.indices(Split::Train).iter().map(|&i| data.targets[i]).collect();
    let lo = train_targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train_targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(model.manifest().preprocessing.target_minmax, Some((lo, hi)));
}

#[test]
fn model_files_round_trip_on_disk() {
    let data = synthetic(200, 14);
    let cfg = ModelConfig::Gnn(GnnConfig { layers: 1, channels: 2, train: small_train(2, 32, 0.01), ..GnnConfig::default() });
    let (model, _) = train(&cfg, &data, Some(&line_adjacency()), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = SurrogateModel::load(dir.path()).unwrap();
    let s = SignalSetting::sample_uniform(K, 1);
    assert_eq!(model.predict(&s).unwrap(), loaded.predict(&s).unwrap());
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    let tampered = manifest.replace("\"gnn\"", "\"fcnn\"");
    let params = std::fs::read_to_string(dir.path().join(PARAMS_FILE)).unwrap();
    assert!(SurrogateModel::from_json(&tampered, &params).is_err());
}

#[test]
fn model_is_shareable_across_threads() {
    fn assert_sync<T: Send + Sync>() {}
    assert_sync::<SurrogateModel>();
    let _ = Arc::new(0);
}

#[test]
fn gradient_suite_covers_every_architecture() {
    let reports = gradient_suite(0).unwrap();
    let names: Vec<&str> = reports.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["fcnn", "gcn", "gnn", "transformer"]);
    for (name, r) in &reports {
        assert!(r.coords_checked > 0, "{name}");
        assert!(r.max_rel_error < GRADCHECK_TOLERANCE, "{name}: {r:?}");
    }
}
