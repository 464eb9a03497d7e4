//! Finite-difference checks of every surrogate architecture on a small
//! fixed problem (three intersections in a row, 64-bit, dropout off).

use rand::Rng;

use super::training::{tabular_forward, token_batch};
use super::{
    build_arch, edge_list, seq_len, Arch, EncoderConfig, FcnnConfig, GcnConfig, GnnConfig, ModelConfig, ModelManifest,
    OnestepConfig, Preprocessing, SurrogateError, MODEL_FORMAT, MODEL_VERSION,
};
use crate::autodiff::{grad_check, GradCheckReport, Tensor};
use crate::roadnet::grid_generate;
use crate::seed::derived_rng;
use crate::signalplan::SignalSetting;

/// Largest acceptable relative error between analytic and numeric gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const K: usize = 3;
const EPS: f64 = 1e-5;
const COORDS: usize = 30;

fn arch_for(
    config: ModelConfig,
    adj: Option<&[Vec<bool>]>,
    seed: u64,
) -> Result<(crate::autodiff::ParamStore, Arch), SurrogateError> {
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
    build_arch(&manifest)
}

/// Checks FCNN (batch norm in training mode), GCN, masked GNN and the full
/// transformer encoder with its regression head. Returns one report per
/// architecture, in that order.
pub fn gradient_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>, SurrogateError> {
    let adj = grid_generate(1, K, 5).expect("fixed valid grid").adjacency_matrix();
    let mut rng = derived_rng(seed, "gradcheck/inputs", 0);
    let rows = 4;
    let x = Tensor::matrix(rows, 3 * K, (0..rows * 3 * K).map(|_| rng.random_range(-1.5..1.5)).collect());
    let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = Vec::new();

    let tabular = [
        ("fcnn", ModelConfig::Fcnn(FcnnConfig { hidden: vec![7, 5, 4], ..FcnnConfig::default() }), true),
        ("gcn", ModelConfig::Gcn(GcnConfig { conv_widths: vec![5, 4], dense_widths: vec![3], ..GcnConfig::default() }), false),
        ("gnn", ModelConfig::Gnn(GnnConfig { layers: 2, channels: 3, dense_widths: vec![4], ..GnnConfig::default() }), false),
    ];
    for (name, cfg, training) in tabular {
        let (mut store, arch) = arch_for(cfg, Some(&adj), seed)?;
        let report = grad_check(&mut store, EPS, COORDS, training, |g, s| {
            let xv = g.input(x.clone());
            let (pred, _) = tabular_forward(&arch, g, s, xv).map_err(into_ad)?;
            g.mse(pred, &y)
        })?;
        out.push((name.to_string(), report));
    }

    let cfg = ModelConfig::TransformerOnestep(OnestepConfig {
        encoder: EncoderConfig { d_model: 8, heads: 2, layers: 2, ff_dim: 12, max_len: 16, ..EncoderConfig::default() },
        head_hidden: 6,
        ..OnestepConfig::default()
    });
    let (mut store, arch) = arch_for(cfg, None, seed)?;
    let Arch::Onestep { encoder, head } = &arch else { unreachable!("onestep config builds an onestep arch") };
    let settings: Vec<Vec<i64>> = (0..3).map(|i| SignalSetting::sample_uniform(K, seed.wrapping_add(i)).encode()).collect();
    let refs: Vec<&[i64]> = settings.iter().map(Vec::as_slice).collect();
    let ids = token_batch(&refs, K)?;
    let report = grad_check(&mut store, EPS, COORDS, false, |g, s| {
        let cls = encoder.forward(g, s, &ids, refs.len(), seq_len(K)).map_err(into_ad)?;
        let pred = head.forward(g, s, cls)?;
        g.mse(pred, &y[..3])
    })?;
    out.push(("transformer".to_string(), report));
    Ok(out)
}

fn into_ad(e: SurrogateError) -> crate::autodiff::AdError {
    match e {
        SurrogateError::Autodiff(a) => a,
        other => crate::autodiff::AdError::Forward(other.to_string()),
    }
}
