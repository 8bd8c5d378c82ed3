use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::param::ParamStore;
use crate::error::{Error, Result};

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step, within `[1e-6, 1e-3]`.
    pub eps: f64,
    /// Checks an evenly strided subset of each parameter when set.
    pub max_elements_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_elements_per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per checked parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub elements_checked: usize,
}

fn eval<F>(store: &ParamStore<f64>, f: &mut F) -> Result<(f64, bool)>
where
    F: for<'a> FnMut(&mut Graph<'a, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::Contract(format!("grad_check needs a scalar, got {:?}", v.shape())));
    }
    Ok((v.item(), g.is_stochastic()))
}

/// Compares reverse-mode gradients of every trainable parameter in `store`
/// against central finite differences `(f(θ+ε) − f(θ−ε)) / 2ε`.
///
/// The relative error of each element is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(store: &mut ParamStore<f64>, opts: GradCheckOptions, mut f: F) -> Result<GradCheckReport>
where
    F: for<'a> FnMut(&mut Graph<'a, f64>) -> Result<Var>,
{
    if !(1e-6..=1e-3).contains(&opts.eps) {
        return Err(Error::Argument(format!("gradcheck eps {} outside [1e-6, 1e-3]", opts.eps)));
    }
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        if g.is_stochastic() {
            return Err(Error::Contract("gradcheck on a stochastic function (dropout enabled)".into()));
        }
        g.backward(loss)?
    };
    let (base, _) = eval(store, &mut f)?;
    let (again, _) = eval(store, &mut f)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract("gradcheck on a non-deterministic function".into()));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::new(),
        elements_checked: 0,
    };
    for id in store.trainable_ids() {
        let n = store.value(id).len();
        let stride = match opts.max_elements_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut worst = 0.0f64;
        for e in (0..n).step_by(stride) {
            let orig = store.value(id).data()[e];
            store.value_mut(id).data_mut()[e] = orig + opts.eps;
            let (plus, _) = eval(store, &mut f)?;
            store.value_mut(id).data_mut()[e] = orig - opts.eps;
            let (minus, _) = eval(store, &mut f)?;
            store.value_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[e]);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            if !rel.is_finite() {
                return Err(Error::NonFinite(format!("gradcheck of {}", store.get(id).name)));
            }
            worst = worst.max(rel);
            report.elements_checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((store.get(id).name.clone(), worst));
    }
    Ok(report)
}
