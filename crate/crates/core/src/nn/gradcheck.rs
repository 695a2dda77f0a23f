//! Central finite differences against reverse-mode gradients (`f64` only).

use crate::error::Result;
use crate::nn::graph::{Graph, Var};
use crate::nn::params::ParameterStore;

/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding compare by absolute difference.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// differences of step `eps`, for every scalar of every parameter.
pub fn grad_check<F>(store: &ParameterStore<f64>, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParameterStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = f(&mut g)?;
        Ok(g.value(loss).data()[0])
    };
    let mut work = store.clone();
    let mut per_param = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    for id in store.ids() {
        let mut worst: f64 = 0.0;
        for j in 0..store.value(id).len() {
            let orig = store.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[j]);
            worst = worst.max(rel_error(a, numeric));
            checked += 1;
        }
        max_rel_error = max_rel_error.max(worst);
        per_param.push((store.name(id).to_string(), worst));
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_param,
        checked,
    })
}
