use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Added to every analytic gradient entry before comparison. Only for
    /// verifying that the checker catches a broken backward pass.
    pub fault: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tol: 1e-4,
            fault: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars)?;
    let v = out.value();
    if v.len() != 1 {
        return Err(Error::invalid(format!(
            "grad_check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences at every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tol: config.tol,
        passed: true,
    };
    let mut probe = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for j in 0..a.len() {
            let x = probe[i].data()[j];
            probe[i].data_mut()[j] = x + config.step;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x - config.step;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * config.step);
            let err = relative_error(a.data()[j] + config.fault, numeric);
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = Some((i, j));
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < config.tol;
    Ok(report)
}
