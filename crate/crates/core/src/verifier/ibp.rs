use std::time::Instant;

use crate::nnmodel::{Activation, Network};

use super::{BoundsResult, Method, VerifyError};

/// Interval propagation per layer in midpoint/radius form.
pub(crate) fn propagate(net: &Network, lower: &[f64], upper: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    for layer in &net.layers {
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.5 * (l + u)).collect();
        let rad: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| 0.5 * (u - l)).collect();
        let mut nlo = Vec::with_capacity(layer.out_dim);
        let mut nhi = Vec::with_capacity(layer.out_dim);
        for i in 0..layer.out_dim {
            let row = layer.row(i);
            let m: f64 = row.iter().zip(&mid).map(|(w, x)| w * x).sum::<f64>() + layer.bias[i];
            let r: f64 = row.iter().zip(&rad).map(|(w, x)| w.abs() * x).sum();
            // widen by a few ulps so rounding cannot cut into the true range
            let slack = 4.0 * f64::EPSILON * (m.abs() + r);
            let (mut l, mut u) = (m - r - slack, m + r + slack);
            if layer.activation == Activation::Relu {
                l = l.max(0.0);
                u = u.max(0.0);
            }
            nlo.push(l);
            nhi.push(u);
        }
        lo = nlo;
        hi = nhi;
    }
    (lo, hi)
}

/// Sound interval bounds of the network over an input box.
pub fn ibp_bounds(net: &Network, lower: &[f64], upper: &[f64]) -> Result<BoundsResult, VerifyError> {
    if lower.len() != net.input_dim || upper.len() != net.input_dim {
        return Err(VerifyError::DimensionMismatch(format!(
            "box has {}/{} entries but the network expects {}",
            lower.len(),
            upper.len(),
            net.input_dim
        )));
    }
    if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
        return Err(VerifyError::DimensionMismatch(format!(
            "box side {i} is empty: [{}, {}]",
            lower[i], upper[i]
        )));
    }
    let start = Instant::now();
    let (lower, upper) = propagate(net, lower, upper);
    Ok(BoundsResult {
        lower,
        upper,
        method: Method::Ibp,
        wall_time: start.elapsed().as_secs_f64(),
        subproblems: 0,
    })
}
