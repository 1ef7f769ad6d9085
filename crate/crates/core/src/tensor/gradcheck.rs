//! Central finite-difference gradient checking (64-bit).
//!
//! The numeric side only ever re-evaluates the forward pass, so it stays
//! independent of the backward rules it is used to validate.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::TensorError;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub compared: usize,
    pub max_rel_error: f64,
    /// `(input index, flat element index, analytic, numeric)` of the worst component.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.compared > 0 && self.max_rel_error < tol
    }
}

/// Compares analytic gradients of `build` against central differences.
///
/// `build` receives one trainable [`Var`] per tensor in `inputs` and must
/// return a scalar. When `sample` is `Some((count, seed))` only `count`
/// components, drawn uniformly over all inputs, are compared.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, sample_spec: Option<(usize, u64)>, build: F) -> Result<GradReport, TensorError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let total: usize = inputs.iter().map(Tensor::len).sum();
    let picks: Vec<usize> = match sample_spec {
        Some((count, seed)) if count < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, total, count).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };

    let mut report = GradReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for flat in picks {
        let (which, elem) = locate(inputs, flat);
        let orig = work[which].data()[elem];
        work[which].data_mut()[elem] = orig + step;
        let plus = eval(&work)?;
        work[which].data_mut()[elem] = orig - step;
        let minus = eval(&work)?;
        work[which].data_mut()[elem] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[which].data()[elem];
        let err = relative_error(a, numeric);
        report.compared += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((which, elem, a, numeric));
        }
    }
    Ok(report)
}

fn locate(inputs: &[Tensor<f64>], mut flat: usize) -> (usize, usize) {
    for (i, t) in inputs.iter().enumerate() {
        if flat < t.len() {
            return (i, flat);
        }
        flat -= t.len();
    }
    unreachable!("flat index beyond inputs")
}
