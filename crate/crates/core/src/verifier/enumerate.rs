use std::time::Instant;

use crate::geometry::{Halfspace, Polytope};
use crate::lpsolve;
use crate::nnmodel::{Activation, Network};

use super::relax::{maximize_over, push_constraint};
use super::{BoundsResult, Method, VerifyError};

pub const ENUMERATION_RELU_LIMIT: usize = 20;

/// Exact output range by enumerating every feasible activation pattern.
///
/// Patterns are explored depth-first in (layer, neuron) order and pruned as
/// soon as their region becomes empty, so the LP count stays well below
/// `2^relus` on typical networks.
pub fn exact_range_enumerate(net: &Network, poly: &Polytope) -> Result<BoundsResult, VerifyError> {
    if poly.dim != net.input_dim {
        return Err(VerifyError::DimensionMismatch(format!(
            "polytope has dimension {} but the network expects {} inputs",
            poly.dim, net.input_dim
        )));
    }
    let count = net.relu_count();
    if count > ENUMERATION_RELU_LIMIT {
        return Err(VerifyError::TooManyRelus {
            count,
            limit: ENUMERATION_RELU_LIMIT,
        });
    }
    let start = Instant::now();
    if !lpsolve::feasible(&poly.halfspaces)?.0 {
        return Err(VerifyError::InfeasiblePolytope);
    }
    let d = net.input_dim;
    let m = net.output_dim();
    let inputs: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut f = vec![0.0; d + 1];
            f[i] = 1.0;
            f
        })
        .collect();
    let mut e = Enumerator {
        net,
        poly,
        lower: vec![f64::INFINITY; m],
        upper: vec![f64::NEG_INFINITY; m],
        pieces: 0,
    };
    let pre = e.layer_pre(0, &inputs);
    e.descend(0, 0, pre, Vec::new(), Vec::new())?;
    if e.pieces == 0 {
        return Err(VerifyError::InfeasiblePolytope);
    }
    Ok(BoundsResult {
        lower: e.lower,
        upper: e.upper,
        method: Method::Enumerate,
        wall_time: start.elapsed().as_secs_f64(),
        subproblems: e.pieces,
    })
}

struct Enumerator<'a> {
    net: &'a Network,
    poly: &'a Polytope,
    lower: Vec<f64>,
    upper: Vec<f64>,
    pieces: usize,
}

impl Enumerator<'_> {
    /// Affine pre-activations of layer `k` given affine inputs.
    fn layer_pre(&self, k: usize, h: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let layer = &self.net.layers[k];
        let width = h.first().map_or(self.net.input_dim + 1, Vec::len);
        (0..layer.out_dim)
            .map(|i| {
                let mut f = vec![0.0; width];
                f[width - 1] = layer.bias[i];
                for (w, hj) in layer.row(i).iter().zip(h) {
                    if *w != 0.0 {
                        for (ft, ht) in f.iter_mut().zip(hj) {
                            *ft += w * ht;
                        }
                    }
                }
                f
            })
            .collect()
    }

    fn descend(
        &mut self,
        k: usize,
        i: usize,
        pre: Vec<Vec<f64>>,
        mut post: Vec<Vec<f64>>,
        constraints: Vec<Halfspace>,
    ) -> Result<(), VerifyError> {
        let layer = &self.net.layers[k];
        if layer.activation == Activation::Linear || i == layer.out_dim {
            let post = if layer.activation == Activation::Linear { pre } else { post };
            if k + 1 == self.net.layers.len() {
                return self.leaf(&post, &constraints);
            }
            let next = self.layer_pre(k + 1, &post);
            return self.descend(k + 1, 0, next, Vec::new(), constraints);
        }
        let width = pre[i].len();
        for active in [true, false] {
            let mut c = constraints.clone();
            let sign = if active { -1.0 } else { 1.0 };
            if push_constraint(&mut c, &pre[i], sign).is_none() {
                continue;
            }
            if c.len() > constraints.len() {
                let mut rows = self.poly.halfspaces.clone();
                rows.extend_from_slice(&c);
                if !lpsolve::feasible(&rows)?.0 {
                    continue;
                }
            }
            post.push(if active { pre[i].clone() } else { vec![0.0; width] });
            self.descend(k, i + 1, pre.clone(), post.clone(), c)?;
            post.pop();
        }
        Ok(())
    }

    fn leaf(&mut self, out: &[Vec<f64>], constraints: &[Halfspace]) -> Result<(), VerifyError> {
        let d = self.net.input_dim;
        let mut any = false;
        for (j, f) in out.iter().enumerate() {
            let Some((hi, _)) = maximize_over(self.poly, constraints, &f[..d], f[d])? else {
                continue;
            };
            let neg: Vec<f64> = f[..d].iter().map(|c| -c).collect();
            let Some((lo, _)) = maximize_over(self.poly, constraints, &neg, -f[d])? else {
                continue;
            };
            any = true;
            self.upper[j] = self.upper[j].max(hi);
            self.lower[j] = self.lower[j].min(-lo);
        }
        if any {
            self.pieces += 1;
        }
        Ok(())
    }
}
