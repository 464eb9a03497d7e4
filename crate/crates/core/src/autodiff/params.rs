use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{AdError, Tensor};

pub const CHECKPOINT_FORMAT: &str = "greenwave-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))` for a `[fan_in, fan_out]` weight.
    XavierUniform,
    Normal(f64),
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    trainable: bool,
}

/// Named parameters with gradient buffers, plus untrained buffers such as
/// batch-norm running statistics. Insertion order is stable and defines the
/// checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    buffers: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<CheckpointTensor>,
    #[serde(default)]
    pub buffers: BTreeMap<String, Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::XavierUniform => {
                let (fan_in, fan_out) = match shape.as_slice() {
                    [a, b] => (*a, *b),
                    _ => (n, n),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        self.insert(name, Tensor::new(shape, data))
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name: name.to_string(), value, grad, trainable: true });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    /// Frozen parameters keep receiving gradients but optimizers skip them.
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        for (o, x) in self.params[id.0].grad.iter_mut().zip(g) {
            *o += x;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn buffer(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(Vec::as_slice)
    }

    pub fn set_buffer(&mut self, name: &str, values: Vec<f64>) {
        self.buffers.insert(name.to_string(), values);
    }

    /// Order-sensitive checksum of the bit patterns of parameters whose name
    /// starts with `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            for v in &p.value.data {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            tensors: self
                .params
                .iter()
                .map(|p| CheckpointTensor { name: p.name.clone(), shape: p.value.shape.clone(), values: p.value.data.clone() })
                .collect(),
            buffers: self.buffers.clone(),
        }
    }

    /// Overwrites values from a checkpoint. Every parameter must be present
    /// with a matching shape; extra tensors are rejected.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), AdError> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(AdError::Checkpoint(format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        if ck.tensors.len() != self.params.len() {
            return Err(AdError::Checkpoint(format!("expected {} tensors, found {}", self.params.len(), ck.tensors.len())));
        }
        for t in &ck.tensors {
            let id = self.find(&t.name).ok_or_else(|| AdError::Checkpoint(format!("unknown tensor {}", t.name)))?;
            let p = &mut self.params[id.0];
            if p.value.shape != t.shape || t.values.len() != p.value.len() {
                return Err(AdError::Checkpoint(format!(
                    "tensor {}: shape {:?} does not match {:?}",
                    t.name, t.shape, p.value.shape
                )));
            }
            p.value.data.clone_from(&t.values);
        }
        for (name, values) in &ck.buffers {
            match self.buffers.get_mut(name) {
                Some(b) if b.len() == values.len() => b.clone_from(values),
                _ => return Err(AdError::Checkpoint(format!("unexpected buffer {name}"))),
            }
        }
        Ok(())
    }

    /// Copies all values and buffers from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.data.clone_from(&src.value.data);
        }
        self.buffers.clone_from(&other.buffers);
    }
}
