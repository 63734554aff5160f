use super::graph::{Graph, NodeId};
use super::params::ParamSet;
use crate::error::Result;

/// Compares reverse-mode gradients with central differences for every
/// parameter entry. `build` must be deterministic and return the graph and
/// its scalar loss node. Returns the largest `|a - n| / max(1, |a|, |n|)`.
pub fn gradient_check<F>(params: &mut ParamSet<f64>, mut build: F, eps: f64) -> Result<f64>
where
    F: FnMut(&ParamSet<f64>) -> Result<(Graph<f64>, NodeId)>,
{
    params.zero_grads();
    let (g, loss) = build(params)?;
    g.backward(loss, params)?;
    let analytic: Vec<Vec<f64>> = (0..params.len())
        .map(|i| params.grad(i).data().to_vec())
        .collect();
    let mut worst = 0.0f64;
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = params.value(i).data()[j];
            params.value_mut(i).data_mut()[j] = orig + eps;
            let (g, l) = build(params)?;
            let up = g.value(l).data()[0];
            params.value_mut(i).data_mut()[j] = orig - eps;
            let (g, l) = build(params)?;
            let down = g.value(l).data()[0];
            params.value_mut(i).data_mut()[j] = orig;
            let n = (up - down) / (2.0 * eps);
            worst = worst.max((a - n).abs() / 1f64.max(a.abs()).max(n.abs()));
        }
    }
    Ok(worst)
}
