//! Tabular and graph regressors operating on standardized `B x 3K` inputs.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{Activation, FcnnConfig, GcnConfig, GnnConfig, Readout};
use crate::autodiff::layers::{BatchNorm, Linear};
use crate::autodiff::{AdError, Graph, Init, ParamId, ParamStore, Var};

/// Variables produced by training-mode batch norms, for running-stat updates.
pub(crate) type BnOutputs<'m> = Vec<(&'m BatchNorm, Var)>;

pub(crate) struct Fcnn {
    hidden: Vec<(ParamId, Option<BatchNorm>, Option<ParamId>)>,
    out: Linear,
    act: Activation,
}

impl Fcnn {
    pub fn new(cfg: &FcnnConfig, k: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let mut hidden = Vec::new();
        let mut width = 3 * k;
        for (i, &w) in cfg.hidden.iter().enumerate() {
            let name = format!("fcnn.hidden{i}");
            let weight = store.add(&format!("{name}.weight"), vec![width, w], Init::XavierUniform, rng);
            // A bias directly ahead of batch norm is cancelled by the centring.
            let (bn, bias) = if cfg.batch_norm {
                (Some(BatchNorm::new(store, &format!("{name}.bn"), w, cfg.bn_momentum, rng)), None)
            } else {
                (None, Some(store.add(&format!("{name}.bias"), vec![w], Init::Zeros, rng)))
            };
            hidden.push((weight, bn, bias));
            width = w;
        }
        let out = Linear::new(store, "fcnn.out", width, 1, rng);
        Self { hidden, out, act: cfg.activation }
    }

    pub fn output_bias(&self) -> ParamId {
        self.out.b
    }

    pub fn forward<'m>(&'m self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, BnOutputs<'m>), AdError> {
        let mut h = x;
        let mut bns = Vec::new();
        for (w, bn, bias) in &self.hidden {
            let wv = g.param(store, *w);
            h = g.matmul(h, wv)?;
            if let Some(bn) = bn {
                h = bn.forward(g, store, h)?;
                bns.push((bn, h));
            }
            if let Some(b) = bias {
                let bv = g.param(store, *b);
                h = g.bias(h, bv)?;
            }
            h = self.act.apply(g, h);
        }
        Ok((self.out.forward(g, store, h)?, bns))
    }
}

/// Symmetric normalization `D^-1/2 (A + I) D^-1/2`, row-major `K x K`.
pub fn normalized_adjacency(adj: &[Vec<bool>]) -> Vec<f64> {
    let k = adj.len();
    let deg: Vec<f64> = (0..k).map(|i| 1.0 + (0..k).filter(|&j| j != i && adj[i][j]).count() as f64).collect();
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i == j || adj[i][j] {
                out[i * k + j] = 1.0 / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    out
}

pub(crate) struct Gcn {
    k: usize,
    a_hat: Arc<Vec<f64>>,
    convs: Vec<Linear>,
    dense: Vec<Linear>,
    out: Linear,
    act: Activation,
    readout: Readout,
}

impl Gcn {
    pub fn new(cfg: &GcnConfig, adj: &[Vec<bool>], store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let k = adj.len();
        let mut convs = Vec::new();
        let mut ch = 3;
        for (i, &w) in cfg.conv_widths.iter().enumerate() {
            convs.push(Linear::new(store, &format!("gcn.conv{i}"), ch, w, rng));
            ch = w;
        }
        let mut width = match cfg.readout {
            Readout::Flatten => k * ch,
            Readout::SumPool => ch,
        };
        let mut dense = Vec::new();
        for (i, &w) in cfg.dense_widths.iter().enumerate() {
            dense.push(Linear::new(store, &format!("gcn.dense{i}"), width, w, rng));
            width = w;
        }
        let out = Linear::new(store, "gcn.out", width, 1, rng);
        Self { k, a_hat: Arc::new(normalized_adjacency(adj)), convs, dense, out, act: cfg.activation, readout: cfg.readout }
    }

    pub fn output_bias(&self) -> ParamId {
        self.out.b
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AdError> {
        let b = g.shape(x)[0];
        let mut h = g.reshape(x, &[b * self.k, 3])?;
        for conv in &self.convs {
            let w = g.param(store, conv.w);
            let bias = g.param(store, conv.b);
            let hw = g.matmul(h, w)?;
            let mixed = g.graph_mix(hw, self.a_hat.clone(), self.k)?;
            let z = g.bias(mixed, bias)?;
            h = self.act.apply(g, z);
        }
        let ch = g.shape(h)[1];
        h = match self.readout {
            Readout::Flatten => g.reshape(h, &[b, self.k * ch])?,
            Readout::SumPool => {
                let m = g.mean_pool(h, self.k)?;
                g.scale(m, self.k as f64)
            }
        };
        for d in &self.dense {
            let z = d.forward(g, store, h)?;
            h = self.act.apply(g, z);
        }
        self.out.forward(g, store, h)
    }
}

/// Connectivity mask for a `(K*c_in) x (K*c_out)` weight: entry
/// `(i*c_in + a, j*c_out + b)` is 1 iff `i == j` or `i` and `j` are adjacent.
pub fn gnn_mask(adj: &[Vec<bool>], c_in: usize, c_out: usize) -> Vec<f64> {
    let k = adj.len();
    let cols = k * c_out;
    let mut mask = vec![0.0; k * c_in * cols];
    for i in 0..k {
        for j in 0..k {
            if i != j && !adj[i][j] {
                continue;
            }
            for a in 0..c_in {
                for b in 0..c_out {
                    mask[(i * c_in + a) * cols + j * c_out + b] = 1.0;
                }
            }
        }
    }
    mask
}

pub(crate) struct MaskedLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub mask: Arc<Vec<f64>>,
}

pub(crate) struct Gnn {
    pub layers: Vec<MaskedLayer>,
    dense: Vec<Linear>,
    out: Linear,
    head_act: Activation,
}

impl Gnn {
    pub fn new(cfg: &GnnConfig, adj: &[Vec<bool>], store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let k = adj.len();
        let mut layers = Vec::new();
        let mut ch = 3;
        for i in 0..cfg.layers {
            let mask = gnn_mask(adj, ch, cfg.channels);
            let w = store.add(&format!("gnn.layer{i}.weight"), vec![k * ch, k * cfg.channels], Init::XavierUniform, rng);
            for (v, m) in store.value_mut(w).data.iter_mut().zip(&mask) {
                *v *= m;
            }
            let b = store.add(&format!("gnn.layer{i}.bias"), vec![k * cfg.channels], Init::Zeros, rng);
            layers.push(MaskedLayer { w, b, mask: Arc::new(mask) });
            ch = cfg.channels;
        }
        let mut width = k * ch;
        let mut dense = Vec::new();
        for (i, &w) in cfg.dense_widths.iter().enumerate() {
            dense.push(Linear::new(store, &format!("gnn.dense{i}"), width, w, rng));
            width = w;
        }
        let out = Linear::new(store, "gnn.out", width, 1, rng);
        Self { layers, dense, out, head_act: cfg.head_activation }
    }

    pub fn output_bias(&self) -> ParamId {
        self.out.b
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AdError> {
        let mut h = x;
        for layer in &self.layers {
            let w = g.param(store, layer.w);
            let wm = g.mul_const(w, layer.mask.clone())?;
            let b = g.param(store, layer.b);
            let z = g.matmul(h, wm)?;
            let z = g.bias(z, b)?;
            h = g.tanh(z);
        }
        for d in &self.dense {
            let z = d.forward(g, store, h)?;
            h = self.head_act.apply(g, z);
        }
        self.out.forward(g, store, h)
    }
}

/// `in -> hidden -> 1` regressor with ReLU and dropout after the hidden layer.
pub(crate) struct Head {
    l1: Linear,
    l2: Linear,
    dropout: f64,
}

impl Head {
    pub fn new(name: &str, input: usize, hidden: usize, dropout: f64, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            l2: Linear::new(store, &format!("{name}.out"), hidden, 1, rng),
            dropout,
        }
    }

    pub fn output_bias(&self) -> ParamId {
        self.l2.b
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AdError> {
        let h = self.l1.forward(g, store, x)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dropout);
        self.l2.forward(g, store, h)
    }
}
