//! Central-finite-difference gradient checker.
//!
//! The checker is the independent oracle for every backward rule: it never
//! touches the tape's gradient path, only repeated forward evaluations.

use super::array::Array;
use super::graph::{Graph, Tensor};
use crate::error::{Error, Result};

/// Default perturbation used by the verification suite (64-bit graphs).
pub const DEFAULT_EPS: f64 = 1e-3;
/// Relative-error bound every op and loss must stay under.
pub const GRAD_TOL: f64 = 1e-3;

/// Compares tape gradients of `build` against central differences at each
/// coordinate of every input; returns the worst relative error
/// `|a - n| / max(1e-8, |a| + |n|)`.
///
/// `build` must be deterministic (dropout off); this is verified by
/// evaluating it twice and demanding bitwise-equal loss values.
pub fn grad_check<B>(build: &B, inputs: &[Array<f64>], eps: f64) -> Result<f64>
where
    B: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let eval = |arrays: &[Array<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ts: Vec<Tensor> = arrays.iter().map(|a| g.leaf(a.clone())).collect();
        let loss = build(&mut g, &ts)?;
        if g.value(loss).numel() != 1 {
            return Err(Error::contract("grad_check function must be scalar-valued"));
        }
        Ok(g.value(loss).item())
    };

    let base = eval(inputs)?;
    if eval(inputs)?.to_bits() != base.to_bits() {
        return Err(Error::contract("grad_check function is not deterministic"));
    }

    // Analytic pass.
    let mut g = Graph::new();
    let ts: Vec<Tensor> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
    let loss = build(&mut g, &ts)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ts
        .iter()
        .zip(inputs)
        .map(|(&t, arr)| match g.grad(t) {
            Some(ga) => ga.data().to_vec(),
            None => vec![0.0; arr.numel()],
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Array<f64>> = inputs.to_vec();
    for (ti, arr) in inputs.iter().enumerate() {
        for ci in 0..arr.numel() {
            let orig = arr.data()[ci];
            probe[ti].data_mut()[ci] = orig + eps;
            let up = eval(&probe)?;
            probe[ti].data_mut()[ci] = orig - eps;
            let down = eval(&probe)?;
            probe[ti].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti][ci];
            let err = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
