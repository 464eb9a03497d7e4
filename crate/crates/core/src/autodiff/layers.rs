//! Parameterised building blocks shared by the surrogate models.

use rand_chacha::ChaCha8Rng;

use super::{AdError, Graph, Init, ParamId, ParamStore, Var};

/// `y = x W + b` with `W` of shape `[in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(&format!("{name}.weight"), vec![fan_in, fan_out], Init::XavierUniform, rng);
        let b = store.add(&format!("{name}.bias"), vec![fan_out], Init::Zeros, rng);
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AdError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.bias(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let gamma = store.add(&format!("{name}.gamma"), vec![width], Init::Ones, rng);
        let beta = store.add(&format!("{name}.beta"), vec![width], Init::Zeros, rng);
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AdError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Batch normalization with running statistics kept as store buffers
/// `{name}.running_mean` and `{name}.running_var`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub name: String,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, momentum: f64, rng: &mut ChaCha8Rng) -> Self {
        let gamma = store.add(&format!("{name}.gamma"), vec![width], Init::Ones, rng);
        let beta = store.add(&format!("{name}.beta"), vec![width], Init::Zeros, rng);
        store.set_buffer(&format!("{name}.running_mean"), vec![0.0; width]);
        store.set_buffer(&format!("{name}.running_var"), vec![1.0; width]);
        Self { gamma, beta, name: name.to_string(), momentum }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, AdError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let mean = store.buffer(&format!("{}.running_mean", self.name)).expect("registered buffer");
        let var = store.buffer(&format!("{}.running_var", self.name)).expect("registered buffer");
        g.batch_norm(x, gamma, beta, (mean, var))
    }

    /// Folds the batch statistics recorded at `out` into the running
    /// estimates; the variance is stored unbiased.
    pub fn update_running(&self, g: &Graph, out: Var, store: &mut ParamStore) {
        let Some((mean, var)) = g.batch_stats(out) else { return };
        let n = g.shape(out)[0] as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        let mean_key = format!("{}.running_mean", self.name);
        let var_key = format!("{}.running_var", self.name);
        let rm: Vec<f64> =
            store.buffer(&mean_key).expect("registered buffer").iter().zip(mean).map(|(r, b)| (1.0 - m) * r + m * b).collect();
        let rv: Vec<f64> = store
            .buffer(&var_key)
            .expect("registered buffer")
            .iter()
            .zip(var)
            .map(|(r, b)| (1.0 - m) * r + m * b * unbias)
            .collect();
        store.set_buffer(&mean_key, rm);
        store.set_buffer(&var_key, rv);
    }
}
