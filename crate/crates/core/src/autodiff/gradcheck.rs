use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::AdError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`, maximised over checked coordinates.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Compares analytic gradients with central differences of step `eps`.
/// At most `max_coords` evenly spaced coordinates are probed per parameter.
/// Every evaluation gets a fresh graph in the given mode with the same seed,
/// so training-mode batch statistics are exercised while dropout masks stay
/// fixed.
pub fn grad_check<F>(
    store: &mut ParamStore,
    eps: f64,
    max_coords: usize,
    training: bool,
    loss: F,
) -> Result<GradCheckReport, AdError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, AdError>,
{
    let eval = |store: &ParamStore| -> Result<f64, AdError> {
        let mut g = Graph::new(training, 0);
        let l = loss(&mut g, store)?;
        Ok(g.value(l).data[0])
    };
    store.zero_grad();
    let mut g = Graph::new(training, 0);
    let l = loss(&mut g, store)?;
    g.backward(l, store)?;
    drop(g);

    let mut report = GradCheckReport { max_rel_error: 0.0, worst_param: String::new(), coords_checked: 0 };
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let n = store.value(id).len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let analytic = store.grad(id)[i];
            let orig = store.value(id).data[i];
            store.value_mut(id).data[i] = orig + eps;
            let plus = eval(store)?;
            store.value_mut(id).data[i] = orig - eps;
            let minus = eval(store)?;
            store.value_mut(id).data[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.name(id).to_string();
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
