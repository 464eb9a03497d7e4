//! Surrogate models mapping a signal setting to predicted total red-light
//! waiting time in seconds.
//!
//! Five kinds share one [`SurrogateModel`] wrapper: a fully connected network
//! with batch normalization, a graph convolutional network, a sparse road-graph
//! network whose weights follow the intersection adjacency, and a transformer
//! encoder over setting tokens trained either end to end on min-max normalized
//! targets (one-step) or as a bucket classifier followed by a regressor on its
//! frozen CLS embeddings (two-step). Every kind predicts raw seconds.

mod check;
mod nets;
mod tokenizer;
mod training;
mod transformer;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use check::{gradient_suite, GRADCHECK_TOLERANCE};
pub use nets::{gnn_mask, normalized_adjacency};
pub use tokenizer::{body_len, detokenize, seq_len, tokenize, tokenize_row, TokenError, CLS, PAD, SEP, VALUE_OFFSET, VOCAB_SIZE};
pub use training::{bucketize, train};
pub use transformer::ENCODER_PREFIX;

use crate::autodiff::{AdError, Checkpoint, Graph, ParamStore, Var};
use crate::datasetgen::NormStats;
use crate::seed::derived_rng;
use crate::signalplan::{SettingError, SignalSetting};
use nets::{Fcnn, Gcn, Gnn, Head};
use transformer::Encoder;

pub const MODEL_FORMAT: &str = "greenwave-model";
pub const MODEL_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.json";

const PREDICT_CHUNK: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum SurrogateError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("setting has {got} values, model expects 3*{k}")]
    KMismatch { k: usize, got: usize },
    #[error(transparent)]
    Setting(#[from] SettingError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error("adjacency has {got} nodes but the dataset has K = {k}")]
    Adjacency { k: usize, got: usize },
    #[error("{kind} needs the road-network adjacency")]
    MissingAdjacency { kind: &'static str },
    #[error("training target range is degenerate (min == max == {0})")]
    DegenerateTargets(f64),
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { token: u32, vocab: usize },
    #[error("sequence length {len} exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("model file: {0}")]
    Manifest(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Fcnn,
    Gcn,
    Gnn,
    TransformerOnestep,
    TransformerTwostep,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::Fcnn, Self::TransformerOnestep, Self::TransformerTwostep, Self::Gcn, Self::Gnn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fcnn => "fcnn",
            Self::Gcn => "gcn",
            Self::Gnn => "gnn",
            Self::TransformerOnestep => "transformer_onestep",
            Self::TransformerTwostep => "transformer_twostep",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn needs_adjacency(self) -> bool {
        matches!(self, Self::Gcn | Self::Gnn)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    LeakyRelu,
    Tanh,
}

/// Negative slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    pub(crate) fn apply(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Self::Relu => g.relu(v),
            Self::LeakyRelu => g.leaky_relu(v, LEAKY_SLOPE),
            Self::Tanh => g.tanh(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Stop after this many epochs without validation improvement and restore
    /// the best weights.
    #[serde(default)]
    pub early_stopping: Option<usize>,
    #[serde(default)]
    pub plateau: Option<PlateauConfig>,
}

impl TrainConfig {
    /// Regime shared by the FCNN, GCN and GNN.
    pub fn tabular() -> Self {
        Self {
            epochs: 100,
            batch_size: 2048,
            lr: 0.05,
            weight_decay: 0.0,
            early_stopping: Some(10),
            plateau: Some(PlateauConfig { factor: 0.2, patience: 2 }),
        }
    }

    pub fn onestep() -> Self {
        Self { epochs: 12, batch_size: 64, lr: 5e-5, weight_decay: 0.0, early_stopping: None, plateau: None }
    }

    pub fn twostep_classify() -> Self {
        Self { epochs: 15, batch_size: 100, lr: 2e-5, weight_decay: 0.01, early_stopping: None, plateau: None }
    }

    pub fn twostep_regress() -> Self {
        Self { epochs: 12, batch_size: 100, lr: 0.01, weight_decay: 0.0, early_stopping: None, plateau: None }
    }

    fn validate(&self) -> Result<(), SurrogateError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SurrogateError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(SurrogateError::Config(format!("bad lr {} or weight_decay {}", self.lr, self.weight_decay)));
        }
        if let Some(p) = &self.plateau {
            if !(p.factor > 0.0 && p.factor < 1.0) {
                return Err(SurrogateError::Config(format!("plateau factor {} not in (0, 1)", p.factor)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcnnConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "yes")]
    pub batch_norm: bool,
    #[serde(default = "bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "TrainConfig::tabular")]
    pub train: TrainConfig,
}

fn yes() -> bool {
    true
}

fn bn_momentum() -> f64 {
    0.1
}

impl Default for FcnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128, 64, 48, 32, 16, 8],
            activation: Activation::LeakyRelu,
            batch_norm: true,
            bn_momentum: 0.1,
            train: TrainConfig::tabular(),
        }
    }
}

impl FcnnConfig {
    /// Input, hidden and output widths for `k` intersections.
    pub fn layer_widths(&self, k: usize) -> Vec<usize> {
        let mut w = vec![3 * k];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Concatenate node features in intersection order.
    #[default]
    Flatten,
    /// Sum node features; invariant to intersection order.
    SumPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcnConfig {
    /// Output channels of each graph convolution.
    pub conv_widths: Vec<usize>,
    /// Dense layers between the readout and the scalar output.
    #[serde(default)]
    pub dense_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default = "TrainConfig::tabular")]
    pub train: TrainConfig,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            conv_widths: vec![21, 128, 48, 32],
            dense_widths: Vec::new(),
            activation: Activation::LeakyRelu,
            readout: Readout::Flatten,
            train: TrainConfig::tabular(),
        }
    }
}

impl GcnConfig {
    /// Alternative reading of the `(21, 128, 48, 32)` widths: four narrow
    /// graph convolutions followed by dense layers of those sizes.
    pub fn dense_head_reading() -> Self {
        Self { conv_widths: vec![8; 4], dense_widths: vec![21, 128, 48, 32], ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnConfig {
    /// Number of adjacency-masked layers (tanh), 1 to 4.
    pub layers: usize,
    /// Channels per intersection in each masked layer, 1 to 4.
    pub channels: usize,
    #[serde(default)]
    pub dense_widths: Vec<usize>,
    #[serde(default)]
    pub head_activation: Activation,
    #[serde(default = "TrainConfig::tabular")]
    pub train: TrainConfig,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            channels: 4,
            dense_widths: vec![32],
            head_activation: Activation::LeakyRelu,
            train: TrainConfig::tabular(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { vocab: VOCAB_SIZE, d_model: 64, heads: 4, layers: 2, ff_dim: 256, max_len: 128, dropout: 0.05 }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<(), SurrogateError> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(SurrogateError::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.vocab < VOCAB_SIZE {
            return Err(SurrogateError::Config(format!("vocab {} smaller than {VOCAB_SIZE}", self.vocab)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SurrogateError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnestepConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "head_dropout")]
    pub head_dropout: f64,
    #[serde(default = "TrainConfig::onestep")]
    pub train: TrainConfig,
}

fn head_hidden() -> usize {
    512
}

fn head_dropout() -> f64 {
    0.05
}

fn buckets() -> usize {
    15
}

impl Default for OnestepConfig {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), head_hidden: 512, head_dropout: 0.05, train: TrainConfig::onestep() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwostepConfig {
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default = "buckets")]
    pub buckets: usize,
    #[serde(default = "head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "head_dropout")]
    pub head_dropout: f64,
    #[serde(default = "TrainConfig::twostep_classify")]
    pub classify: TrainConfig,
    #[serde(default = "TrainConfig::twostep_regress")]
    pub regress: TrainConfig,
}

impl Default for TwostepConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            buckets: 15,
            head_hidden: 512,
            head_dropout: 0.05,
            classify: TrainConfig::twostep_classify(),
            regress: TrainConfig::twostep_regress(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Fcnn(FcnnConfig),
    Gcn(GcnConfig),
    Gnn(GnnConfig),
    TransformerOnestep(OnestepConfig),
    TransformerTwostep(TwostepConfig),
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Fcnn => Self::Fcnn(FcnnConfig::default()),
            ModelKind::Gcn => Self::Gcn(GcnConfig::default()),
            ModelKind::Gnn => Self::Gnn(GnnConfig::default()),
            ModelKind::TransformerOnestep => Self::TransformerOnestep(OnestepConfig::default()),
            ModelKind::TransformerTwostep => Self::TransformerTwostep(TwostepConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Fcnn(_) => ModelKind::Fcnn,
            Self::Gcn(_) => ModelKind::Gcn,
            Self::Gnn(_) => ModelKind::Gnn,
            Self::TransformerOnestep(_) => ModelKind::TransformerOnestep,
            Self::TransformerTwostep(_) => ModelKind::TransformerTwostep,
        }
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        match self {
            Self::Fcnn(c) => {
                if c.hidden.contains(&0) {
                    return Err(SurrogateError::Config("fcnn hidden widths must be positive".into()));
                }
                c.train.validate()
            }
            Self::Gcn(c) => {
                if c.conv_widths.is_empty() || c.conv_widths.contains(&0) || c.dense_widths.contains(&0) {
                    return Err(SurrogateError::Config("gcn needs at least one conv layer and positive widths".into()));
                }
                c.train.validate()
            }
            Self::Gnn(c) => {
                if !(1..=4).contains(&c.layers) || !(1..=4).contains(&c.channels) || c.dense_widths.contains(&0) {
                    return Err(SurrogateError::Config("gnn layers and channels must be in 1..=4".into()));
                }
                c.train.validate()
            }
            Self::TransformerOnestep(c) => {
                c.encoder.validate()?;
                c.train.validate()
            }
            Self::TransformerTwostep(c) => {
                c.encoder.validate()?;
                if c.buckets < 2 {
                    return Err(SurrogateError::Config("need at least two buckets".into()));
                }
                c.classify.validate()?;
                c.regress.validate()
            }
        }
    }
}

/// Statistics the model applies to its inputs and outputs, fitted on the
/// training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
    #[serde(default)]
    pub target_minmax: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub k: usize,
    pub config: ModelConfig,
    pub preprocessing: Preprocessing,
    /// Undirected intersection edges `(i, j)` with `i < j`, for graph kinds.
    #[serde(default)]
    pub adjacency: Option<Vec<[usize; 2]>>,
    pub train_seed: u64,
}

impl ModelManifest {
    fn adjacency_matrix(&self) -> Option<Vec<Vec<bool>>> {
        let edges = self.adjacency.as_ref()?;
        let mut m = vec![vec![false; self.k]; self.k];
        for &[i, j] in edges {
            m[i][j] = true;
            m[j][i] = true;
        }
        Some(m)
    }
}

pub(crate) fn edge_list(adj: &[Vec<bool>]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for (i, row) in adj.iter().enumerate() {
        for (j, &a) in row.iter().enumerate().skip(i + 1) {
            if a || adj[j][i] {
                out.push([i, j]);
            }
        }
    }
    out
}

pub(crate) enum Arch {
    Fcnn(Fcnn),
    Gcn(Gcn),
    Gnn(Gnn),
    Onestep { encoder: Encoder, head: Head },
    Twostep { encoder: Encoder, classifier: crate::autodiff::layers::Linear, head: Head },
}

/// A trained surrogate: manifest, parameters and the network built from them.
pub struct SurrogateModel {
    manifest: ModelManifest,
    store: ParamStore,
    arch: Arch,
}

impl std::fmt::Debug for SurrogateModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurrogateModel")
            .field("kind", &self.manifest.kind)
            .field("k", &self.manifest.k)
            .field("params", &self.store.param_count())
            .finish()
    }
}

/// Builds a freshly initialised network for a manifest. Initialisation draws
/// from a stream derived from the training seed.
pub(crate) fn build_arch(manifest: &ModelManifest) -> Result<(ParamStore, Arch), SurrogateError> {
    let mut store = ParamStore::new();
    let mut rng = derived_rng(manifest.train_seed, "init", 0);
    let adjacency = manifest.adjacency_matrix();
    let need_adj = |kind: &'static str| adjacency.clone().ok_or(SurrogateError::MissingAdjacency { kind });
    let arch = match &manifest.config {
        ModelConfig::Fcnn(c) => Arch::Fcnn(Fcnn::new(c, manifest.k, &mut store, &mut rng)),
        ModelConfig::Gcn(c) => Arch::Gcn(Gcn::new(c, &need_adj("gcn")?, &mut store, &mut rng)),
        ModelConfig::Gnn(c) => Arch::Gnn(Gnn::new(c, &need_adj("gnn")?, &mut store, &mut rng)),
        ModelConfig::TransformerOnestep(c) => {
            let encoder = Encoder::new(&c.encoder, &mut store, &mut rng);
            let head = Head::new("head", c.encoder.d_model, c.head_hidden, c.head_dropout, &mut store, &mut rng);
            Arch::Onestep { encoder, head }
        }
        ModelConfig::TransformerTwostep(c) => {
            let encoder = Encoder::new(&c.encoder, &mut store, &mut rng);
            let classifier =
                crate::autodiff::layers::Linear::new(&mut store, "classifier", c.encoder.d_model, c.buckets, &mut rng);
            let head = Head::new("regressor", c.encoder.d_model, c.head_hidden, c.head_dropout, &mut store, &mut rng);
            Arch::Twostep { encoder, classifier, head }
        }
    };
    Ok((store, arch))
}

impl SurrogateModel {
    pub(crate) fn from_parts(manifest: ModelManifest, store: ParamStore, arch: Arch) -> Self {
        Self { manifest, store, arch }
    }

    pub fn manifest(&self) -> &ModelManifest {
        &self.manifest
    }

    pub fn kind(&self) -> ModelKind {
        self.manifest.kind
    }

    pub fn k(&self) -> usize {
        self.manifest.k
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn predict(&self, setting: &SignalSetting) -> Result<f64, SurrogateError> {
        Ok(self.predict_batch(std::slice::from_ref(setting))?[0])
    }

    pub fn predict_batch(&self, settings: &[SignalSetting]) -> Result<Vec<f64>, SurrogateError> {
        let rows: Vec<Vec<i64>> = settings.iter().map(SignalSetting::encode).collect();
        let refs: Vec<&[i64]> = rows.iter().map(Vec::as_slice).collect();
        self.predict_rows(&refs)
    }

    /// Predictions in seconds for encoded rows; each row must be a valid
    /// setting for the model's `K`.
    pub fn predict_rows(&self, rows: &[&[i64]]) -> Result<Vec<f64>, SurrogateError> {
        let k = self.manifest.k;
        for r in rows {
            if r.len() != 3 * k {
                return Err(SurrogateError::KMismatch { k, got: r.len() });
            }
            SignalSetting::decode(r, k)?;
        }
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(PREDICT_CHUNK) {
            out.extend(self.forward_eval(&self.store, chunk)?);
        }
        Ok(out)
    }

    /// Inference on pre-validated rows with an explicit parameter store.
    pub(crate) fn forward_eval(&self, store: &ParamStore, rows: &[&[i64]]) -> Result<Vec<f64>, SurrogateError> {
        let k = self.manifest.k;
        let mut g = Graph::inference();
        let pre = &self.manifest.preprocessing;
        let out = match &self.arch {
            Arch::Fcnn(_) | Arch::Gcn(_) | Arch::Gnn(_) => {
                let norm = pre.norm_stats.as_ref().ok_or_else(|| SurrogateError::Manifest("missing norm_stats".into()))?;
                let x = training::standardize(norm, rows);
                let xv = g.input(crate::autodiff::Tensor::matrix(rows.len(), 3 * k, x));
                let y = training::tabular_forward(&self.arch, &mut g, store, xv)?.0;
                g.value(y).data.clone()
            }
            Arch::Onestep { encoder, head } => {
                let (lo, hi) = pre.target_minmax.ok_or_else(|| SurrogateError::Manifest("missing target_minmax".into()))?;
                let ids = training::token_batch(rows, k)?;
                let cls = encoder.forward(&mut g, store, &ids, rows.len(), seq_len(k))?;
                let y = head.forward(&mut g, store, cls)?;
                g.value(y).data.iter().map(|z| lo + z * (hi - lo)).collect()
            }
            Arch::Twostep { encoder, head, .. } => {
                let ids = training::token_batch(rows, k)?;
                let cls = encoder.forward(&mut g, store, &ids, rows.len(), seq_len(k))?;
                let y = head.forward(&mut g, store, cls)?;
                g.value(y).data.clone()
            }
        };
        Ok(out)
    }

    /// Manifest JSON and parameter checkpoint JSON.
    pub fn to_json(&self) -> (String, String) {
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("plain data serializes");
        let params = serde_json::to_string(&self.store.to_checkpoint()).expect("plain data serializes");
        (manifest, params)
    }

    pub fn from_json(manifest: &str, params: &str) -> Result<Self, SurrogateError> {
        let manifest: ModelManifest = serde_json::from_str(manifest)?;
        if manifest.format != MODEL_FORMAT || manifest.version != MODEL_VERSION {
            return Err(SurrogateError::Manifest(format!("unsupported format {} v{}", manifest.format, manifest.version)));
        }
        if manifest.kind != manifest.config.kind() {
            return Err(SurrogateError::Manifest("kind does not match config".into()));
        }
        manifest.config.validate()?;
        let ck: Checkpoint = serde_json::from_str(params)?;
        let (mut store, arch) = build_arch(&manifest)?;
        store.load_checkpoint(&ck)?;
        Ok(Self { manifest, store, arch })
    }

    /// Writes `manifest.json` and `params.json` into `dir`, creating it.
    pub fn save(&self, dir: &Path) -> Result<(), SurrogateError> {
        std::fs::create_dir_all(dir)?;
        let (m, p) = self.to_json();
        std::fs::write(dir.join(MANIFEST_FILE), m + "\n")?;
        std::fs::write(dir.join(PARAMS_FILE), p + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SurrogateError> {
        let m = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let p = std::fs::read_to_string(dir.join(PARAMS_FILE))?;
        Self::from_json(&m, &p)
    }
}

#[cfg(test)]
mod tests;
