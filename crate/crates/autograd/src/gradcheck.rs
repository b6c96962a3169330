//! Central finite-difference verification of [`Graph::backward`].

use crate::error::TensorError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub worst_relative_error: f64,
    /// `(parameter index, flat element index)` of the worst entry.
    pub worst_entry: (usize, usize),
    /// Worst relative error per parameter tensor.
    pub per_param: Vec<f64>,
    pub entries_checked: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Builds the graph once per evaluation: `build` receives fresh trainable
/// leaves for `params` (in order) and returns the scalar loss node.
pub fn analytic_gradients<F>(params: &[Tensor<f64>], build: &F) -> Result<Vec<Tensor<f64>>, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.wrt(&g, v)).collect())
}

fn loss_value<F>(params: &[Tensor<f64>], build: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

pub fn numeric_gradients<F>(
    params: &[Tensor<f64>],
    build: &F,
    step: f64,
) -> Result<Vec<Tensor<f64>>, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape().to_vec());
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + step;
            let plus = loss_value(&work, build)?;
            work[p].data_mut()[k] = orig - step;
            let minus = loss_value(&work, build)?;
            work[p].data_mut()[k] = orig;
            grad.data_mut()[k] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

pub fn compare_gradients(
    analytic: &[Tensor<f64>],
    numeric: &[Tensor<f64>],
    tolerance: f64,
) -> GradCheckReport {
    let mut worst = 0.0f64;
    let mut worst_entry = (0, 0);
    let mut per_param = Vec::with_capacity(analytic.len());
    let mut entries = 0;
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let mut local = 0.0f64;
        for (k, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(x, y);
            // NaN must register as a failure
            if e.is_nan() || e > local {
                local = if e.is_nan() { f64::INFINITY } else { e };
            }
            if local > worst {
                worst = local;
                worst_entry = (p, k);
            }
            entries += 1;
        }
        if a.len() != n.len() {
            local = f64::INFINITY;
            worst = f64::INFINITY;
        }
        per_param.push(local);
    }
    if analytic.len() != numeric.len() {
        worst = f64::INFINITY;
    }
    GradCheckReport {
        tolerance,
        worst_relative_error: worst,
        worst_entry,
        per_param,
        entries_checked: entries,
        passed: worst < tolerance,
    }
}

/// Compares backward-pass gradients against central differences with the
/// given `step`. Mismatches are reported, not returned as errors; `Err` only
/// surfaces graph-construction failures.
pub fn gradient_check<F>(
    params: &[Tensor<f64>],
    build: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let analytic = analytic_gradients(params, &build)?;
    let numeric = numeric_gradients(params, &build, step)?;
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}
