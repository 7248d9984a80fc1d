//! Finite-difference gradient checking for graph computations.

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
    /// Relative error per input.
    pub errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.errors.iter().all(|&e| e < tolerance)
    }
}

fn eval(f: &dyn Fn(&mut Graph, &[Var]) -> Var, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::detached();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    let v = g.value(out);
    if v.len() != 1 {
        return Err(NnError::Shape(format!(
            "gradient check needs a scalar output, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central differences.
pub fn check_gradients(
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    inputs: &[Tensor],
    step: f64,
) -> Result<GradCheck> {
    let mut g = Graph::detached();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .wrt(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut num = Tensor::zeros(inputs[i].shape());
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + step;
            let up = eval(f, &work)?;
            work[i].data_mut()[k] = orig - step;
            let down = eval(f, &work)?;
            work[i].data_mut()[k] = orig;
            num.data_mut()[k] = (up - down) / (2.0 * step);
        }
        numeric.push(num);
    }
    let errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .collect();
    Ok(GradCheck {
        analytic,
        numeric,
        errors,
    })
}
