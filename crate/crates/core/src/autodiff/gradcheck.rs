//! Central finite-difference verification of tape gradients.
//!
//! The numerical side only ever evaluates the forward pass with constant
//! inputs, so it shares no code with the backward rules it checks.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Result of comparing analytic and numerical gradients for each input.
#[derive(Clone, Debug)]
pub struct GradReport {
    /// Per input: ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor).
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

const NORM_FLOOR: f64 = 1e-10;

/// Compares `∂f/∂inputs` from one backward sweep against central differences
/// with the given step. `f` must build a single-element output.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let o = f(&mut tape, &vs)?;
        Ok(tape.value(o).item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let hi = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let lo = eval(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (hi - lo) / (2.0 * step);
        }
        numeric.push(g);
    }

    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff: f64 = a
                .data()
                .iter()
                .zip(n.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            let nn = n.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            diff / na.max(nn).max(NORM_FLOOR)
        })
        .collect();

    Ok(GradReport {
        rel_errors,
        analytic,
        numeric,
    })
}
