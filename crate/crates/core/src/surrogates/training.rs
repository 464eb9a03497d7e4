use std::time::Instant;

use rand::seq::SliceRandom;

use super::nets::BnOutputs;
use super::tokenizer::{seq_len, tokenize_row};
use super::{
    build_arch, edge_list, Arch, ModelConfig, ModelManifest, Preprocessing, SurrogateError, SurrogateModel, TrainConfig,
    ENCODER_PREFIX, MODEL_FORMAT, MODEL_VERSION,
};
use crate::autodiff::{Adam, AdamConfig, Graph, ParamStore, PlateauScheduler, Tensor, Var};
use crate::datasetgen::{NormStats, SampleSet, Split};
use crate::seed::{derive_seed, derived_rng};
use crate::trainer::{EpochLog, TrainLog};

const EVAL_CHUNK: usize = 512;

/// Class label per normalized target: `floor(x * n)` clamped to `[0, n-1]`.
pub fn bucketize(normalized: &[f64], n_buckets: usize) -> Vec<usize> {
    normalized
        .iter()
        .map(|&x| {
            let b = (x * n_buckets as f64).floor();
            if b.is_nan() || b < 0.0 {
                0
            } else {
                (b as usize).min(n_buckets - 1)
            }
        })
        .collect()
}

pub(crate) fn standardize(norm: &NormStats, rows: &[&[i64]]) -> Vec<f64> {
    rows.iter().flat_map(|r| norm.apply(r)).collect()
}

pub(crate) fn token_batch(rows: &[&[i64]], k: usize) -> Result<Vec<u32>, SurrogateError> {
    let mut out = Vec::with_capacity(rows.len() * seq_len(k));
    for r in rows {
        out.extend(tokenize_row(r, k)?);
    }
    Ok(out)
}

pub(crate) fn tabular_forward<'m>(
    arch: &'m Arch,
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
) -> Result<(Var, BnOutputs<'m>), SurrogateError> {
    Ok(match arch {
        Arch::Fcnn(m) => m.forward(g, store, x)?,
        Arch::Gcn(m) => (m.forward(g, store, x)?, Vec::new()),
        Arch::Gnn(m) => (m.forward(g, store, x)?, Vec::new()),
        _ => unreachable!("token models are not tabular"),
    })
}

pub(crate) struct StepOut<'m> {
    pub loss: Var,
    pub bn: BnOutputs<'m>,
    /// Correct argmax predictions in the batch, for classifiers.
    pub correct: Option<usize>,
}

/// Mini-batch Adam over `n_train` rows. `step` builds the loss for a batch of
/// train positions; `validate` scores the current weights. Shuffling and
/// dropout streams derive from `seed` and `stage`.
pub(crate) fn run_epochs<'m>(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    n_train: usize,
    seed: u64,
    stage: &str,
    mut step: impl FnMut(&mut Graph, &ParamStore, &[usize]) -> Result<StepOut<'m>, SurrogateError>,
    mut validate: impl FnMut(&ParamStore) -> Result<f64, SurrogateError>,
) -> Result<TrainLog, SurrogateError> {
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let mut sched = cfg.plateau.map(|p| PlateauScheduler::new(p.factor, p.patience));
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut snapshot: Option<ParamStore> = None;
    let mut step_index = 0u64;
    let shuffle_domain = format!("{stage}/shuffle");
    let dropout_domain = format!("{stage}/dropout");
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut derived_rng(seed, &shuffle_domain, epoch as u64));
        let (mut loss_sum, mut seen, mut correct) = (0.0, 0usize, None::<usize>);
        for batch in order.chunks(cfg.batch_size) {
            // A single-row batch has no batch statistics; fold it away.
            if batch.len() < 2 && n_train > 1 {
                continue;
            }
            let mut g = Graph::new(true, derive_seed(seed, &dropout_domain, step_index));
            let out = step(&mut g, store, batch)?;
            let l = g.value(out.loss).data[0];
            if !l.is_finite() {
                return Err(SurrogateError::Diverged { epoch });
            }
            store.zero_grad();
            g.backward(out.loss, store)?;
            for (bn, v) in &out.bn {
                bn.update_running(&g, *v, store);
            }
            adam.step(store);
            loss_sum += l * batch.len() as f64;
            seen += batch.len();
            if let Some(c) = out.correct {
                *correct.get_or_insert(0) += c;
            }
            step_index += 1;
        }
        let val_loss = validate(store)?;
        if !val_loss.is_finite() {
            return Err(SurrogateError::Diverged { epoch });
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            lr: adam.config.lr,
            seconds: start.elapsed().as_secs_f64(),
            train_accuracy: correct.map(|c| c as f64 / seen.max(1) as f64),
        });
        if val_loss < best {
            best = val_loss;
            log.best_epoch = epoch;
            since_best = 0;
            if cfg.early_stopping.is_some() {
                snapshot = Some(store.clone());
            }
        } else {
            since_best += 1;
        }
        if let Some(s) = sched.as_mut() {
            adam.config.lr = s.step(val_loss, adam.config.lr);
        }
        if cfg.early_stopping.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    if let Some(best_store) = snapshot {
        store.copy_values_from(&best_store);
        log.restored_best = true;
    }
    Ok(log)
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

struct Splits<'a> {
    data: &'a SampleSet,
    train: Vec<usize>,
    val: Vec<usize>,
}

impl<'a> Splits<'a> {
    fn new(data: &'a SampleSet) -> Result<Self, SurrogateError> {
        let train = data.indices(Split::Train);
        let val = data.indices(Split::Val);
        if train.len() < 2 || val.is_empty() {
            return Err(SurrogateError::Config(format!(
                "need at least 2 train and 1 val rows, have {} and {}",
                train.len(),
                val.len()
            )));
        }
        Ok(Self { data, train, val })
    }

    fn rows(&self, idx: &[usize]) -> Vec<&'a [i64]> {
        idx.iter().map(|&i| self.data.features[i].as_slice()).collect()
    }

    fn targets(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.data.targets[i]).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn output_bias(arch: &Arch) -> crate::autodiff::ParamId {
    match arch {
        Arch::Fcnn(m) => m.output_bias(),
        Arch::Gcn(m) => m.output_bias(),
        Arch::Gnn(m) => m.output_bias(),
        Arch::Onestep { head, .. } | Arch::Twostep { head, .. } => head.output_bias(),
    }
}

/// Trains the configured kind. Graph kinds require `adjacency` (`K x K`).
pub fn train(
    config: &ModelConfig,
    data: &SampleSet,
    adjacency: Option<&[Vec<bool>]>,
    seed: u64,
) -> Result<(SurrogateModel, TrainLog), SurrogateError> {
    train_inner(config, data, adjacency, seed).map(|(m, log, _)| (m, log))
}

/// As [`train`], also returning the encoder checksum at the end of a
/// two-step recipe's classification stage.
pub(crate) fn train_inner(
    config: &ModelConfig,
    data: &SampleSet,
    adjacency: Option<&[Vec<bool>]>,
    seed: u64,
) -> Result<(SurrogateModel, TrainLog, Option<u64>), SurrogateError> {
    config.validate()?;
    let kind = config.kind();
    let k = data.k;
    let adjacency = if kind.needs_adjacency() {
        let adj = adjacency.ok_or(SurrogateError::MissingAdjacency { kind: kind.name() })?;
        if adj.len() != k || adj.iter().any(|r| r.len() != k) {
            return Err(SurrogateError::Adjacency { k, got: adj.len() });
        }
        Some(edge_list(adj))
    } else {
        None
    };
    let splits = Splits::new(data)?;
    let is_token_model = matches!(kind, super::ModelKind::TransformerOnestep | super::ModelKind::TransformerTwostep);
    let (lo, hi) = data.target_minmax;
    // also rejects NaN bounds
    if is_token_model && hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(SurrogateError::DegenerateTargets(lo));
    }
    let preprocessing = Preprocessing {
        norm_stats: (!is_token_model).then(|| data.norm_stats.clone()),
        target_minmax: is_token_model.then_some((lo, hi)),
    };
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        kind,
        k,
        config: config.clone(),
        preprocessing,
        adjacency,
        train_seed: seed,
    };
    let (mut store, arch) = build_arch(&manifest)?;
    let y_train = splits.targets(&splits.train);
    let y_val = splits.targets(&splits.val);
    let mut step1_checksum = None;

    let log = match (&manifest.config, &arch) {
        (ModelConfig::Fcnn(_) | ModelConfig::Gcn(_) | ModelConfig::Gnn(_), _) => {
            let cfg = tabular_train_config(&manifest.config);
            store.value_mut(output_bias(&arch)).data[0] = mean(&y_train);
            let norm = manifest.preprocessing.norm_stats.as_ref().expect("set for tabular kinds");
            let width = 3 * k;
            let x_train = standardize(norm, &splits.rows(&splits.train));
            let x_val = standardize(norm, &splits.rows(&splits.val));
            let arch_ref = &arch;
            run_epochs(
                &mut store,
                cfg,
                splits.train.len(),
                seed,
                "tabular",
                |g, s, batch| {
                    let mut x = Vec::with_capacity(batch.len() * width);
                    for &i in batch {
                        x.extend_from_slice(&x_train[i * width..(i + 1) * width]);
                    }
                    let y: Vec<f64> = batch.iter().map(|&i| y_train[i]).collect();
                    let xv = g.input(Tensor::matrix(batch.len(), width, x));
                    let (out, bn) = tabular_forward(arch_ref, g, s, xv)?;
                    Ok(StepOut { loss: g.mse(out, &y)?, bn, correct: None })
                },
                |s| {
                    let mut preds = Vec::with_capacity(y_val.len());
                    for chunk in x_val.chunks(EVAL_CHUNK * width) {
                        let mut g = Graph::inference();
                        let xv = g.input(Tensor::matrix(chunk.len() / width, width, chunk.to_vec()));
                        let (out, _) = tabular_forward(arch_ref, &mut g, s, xv)?;
                        preds.extend_from_slice(&g.value(out).data);
                    }
                    Ok(mse(&preds, &y_val))
                },
            )?
        }
        (ModelConfig::TransformerOnestep(c), Arch::Onestep { encoder, head }) => {
            let norm = |y: &[f64]| -> Vec<f64> { y.iter().map(|t| (t - lo) / (hi - lo)).collect() };
            let (z_train, z_val) = (norm(&y_train), norm(&y_val));
            store.value_mut(head.output_bias()).data[0] = mean(&z_train);
            let seq = seq_len(k);
            let t_train = token_batch(&splits.rows(&splits.train), k)?;
            let t_val = token_batch(&splits.rows(&splits.val), k)?;
            run_epochs(
                &mut store,
                &c.train,
                splits.train.len(),
                seed,
                "onestep",
                |g, s, batch| {
                    let ids = gather_tokens(&t_train, batch, seq);
                    let cls = encoder.forward(g, s, &ids, batch.len(), seq)?;
                    let out = head.forward(g, s, cls)?;
                    let z: Vec<f64> = batch.iter().map(|&i| z_train[i]).collect();
                    Ok(StepOut { loss: g.mse(out, &z)?, bn: Vec::new(), correct: None })
                },
                |s| {
                    let mut preds = Vec::with_capacity(z_val.len());
                    for chunk in t_val.chunks(EVAL_CHUNK * seq) {
                        let mut g = Graph::inference();
                        let cls = encoder.forward(&mut g, s, chunk, chunk.len() / seq, seq)?;
                        let out = head.forward(&mut g, s, cls)?;
                        preds.extend_from_slice(&g.value(out).data);
                    }
                    Ok(mse(&preds, &z_val))
                },
            )?
        }
        (ModelConfig::TransformerTwostep(c), Arch::Twostep { encoder, classifier, head }) => {
            let seq = seq_len(k);
            let normalize = |y: &[f64]| -> Vec<f64> { y.iter().map(|t| (t - lo) / (hi - lo)).collect() };
            let labels_train = bucketize(&normalize(&y_train), c.buckets);
            let labels_val = bucketize(&normalize(&y_val), c.buckets);
            let t_train = token_batch(&splits.rows(&splits.train), k)?;
            let t_val = token_batch(&splits.rows(&splits.val), k)?;
            let dropout = c.encoder.dropout;
            let pretrain = run_epochs(
                &mut store,
                &c.classify,
                splits.train.len(),
                seed,
                "classify",
                |g, s, batch| {
                    let ids = gather_tokens(&t_train, batch, seq);
                    let cls = encoder.forward(g, s, &ids, batch.len(), seq)?;
                    let cls = g.dropout(cls, dropout);
                    let logits = classifier.forward(g, s, cls)?;
                    let labels: Vec<usize> = batch.iter().map(|&i| labels_train[i]).collect();
                    let correct = argmax_rows(g.value(logits)).iter().zip(&labels).filter(|(a, b)| a == b).count();
                    Ok(StepOut { loss: g.cross_entropy(logits, &labels)?, bn: Vec::new(), correct: Some(correct) })
                },
                |s| {
                    let mut total = 0.0;
                    for (ci, chunk) in t_val.chunks(EVAL_CHUNK * seq).enumerate() {
                        let n = chunk.len() / seq;
                        let mut g = Graph::inference();
                        let cls = encoder.forward(&mut g, s, chunk, n, seq)?;
                        let logits = classifier.forward(&mut g, s, cls)?;
                        let labels = &labels_val[ci * EVAL_CHUNK..ci * EVAL_CHUNK + n];
                        let l = g.cross_entropy(logits, labels)?;
                        total += g.value(l).data[0] * n as f64;
                    }
                    Ok(total / labels_val.len() as f64)
                },
            )?;

            // Step 2: the encoder and classifier are frozen; the regressor
            // sees fixed CLS embeddings.
            for id in store.ids().collect::<Vec<_>>() {
                if !store.name(id).starts_with("regressor.") {
                    store.set_trainable(id, false);
                }
            }
            let checksum = store.checksum(ENCODER_PREFIX);
            step1_checksum = Some(checksum);
            let d = c.encoder.d_model;
            let embed = |s: &ParamStore, tokens: &[u32]| -> Result<Vec<f64>, SurrogateError> {
                let mut out = Vec::with_capacity(tokens.len() / seq * d);
                for chunk in tokens.chunks(EVAL_CHUNK * seq) {
                    let mut g = Graph::inference();
                    let cls = encoder.forward(&mut g, s, chunk, chunk.len() / seq, seq)?;
                    out.extend_from_slice(&g.value(cls).data);
                }
                Ok(out)
            };
            let e_train = embed(&store, &t_train)?;
            let e_val = embed(&store, &t_val)?;
            store.value_mut(head.output_bias()).data[0] = mean(&y_train);
            let mut log = run_epochs(
                &mut store,
                &c.regress,
                splits.train.len(),
                seed,
                "regress",
                |g, s, batch| {
                    let mut x = Vec::with_capacity(batch.len() * d);
                    for &i in batch {
                        x.extend_from_slice(&e_train[i * d..(i + 1) * d]);
                    }
                    let xv = g.input(Tensor::matrix(batch.len(), d, x));
                    let out = head.forward(g, s, xv)?;
                    let y: Vec<f64> = batch.iter().map(|&i| y_train[i]).collect();
                    Ok(StepOut { loss: g.mse(out, &y)?, bn: Vec::new(), correct: None })
                },
                |s| {
                    let mut g = Graph::inference();
                    let xv = g.input(Tensor::matrix(y_val.len(), d, e_val.clone()));
                    let out = head.forward(&mut g, s, xv)?;
                    Ok(mse(&g.value(out).data, &y_val))
                },
            )?;
            if store.checksum(ENCODER_PREFIX) != checksum {
                return Err(SurrogateError::Config("encoder parameters changed during regression stage".into()));
            }
            log.pretrain = Some(Box::new(pretrain));
            log
        }
        _ => unreachable!("architecture built from the same config"),
    };
    for id in store.ids().collect::<Vec<_>>() {
        store.set_trainable(id, true);
    }
    store.zero_grad();
    Ok((SurrogateModel::from_parts(manifest, store, arch), log, step1_checksum))
}

fn tabular_train_config(config: &ModelConfig) -> &TrainConfig {
    match config {
        ModelConfig::Fcnn(c) => &c.train,
        ModelConfig::Gcn(c) => &c.train,
        ModelConfig::Gnn(c) => &c.train,
        _ => unreachable!("tabular kinds only"),
    }
}

fn gather_tokens(all: &[u32], batch: &[usize], seq: usize) -> Vec<u32> {
    let mut ids = Vec::with_capacity(batch.len() * seq);
    for &i in batch {
        ids.extend_from_slice(&all[i * seq..(i + 1) * seq]);
    }
    ids
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = t.shape[1];
    t.data
        .chunks_exact(c)
        .map(|row| row.iter().enumerate().fold(0, |best, (j, v)| if *v > row[best] { j } else { best }))
        .collect()
}
