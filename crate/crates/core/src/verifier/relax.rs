//! Linear relaxations shared by CROWN and branch-and-bound.
//!
//! A forward pass carries affine lower/upper bounds `L(z) <= y <= U(z)` for
//! every pre-activation through the network and intersects their box
//! concretizations with interval bounds. A backward pass then bounds a linear
//! objective of the outputs by an affine function of `z`, which is maximised
//! exactly over the input region by LP.

use crate::geometry::{dot, Halfspace, Polytope};
use crate::lpsolve::{self, Sense};
use crate::nnmodel::{Activation, Network};

use super::VerifyError;

/// Split assignments: `Some(true)` forces a ReLU active, `Some(false)` inactive.
pub(crate) type SplitMap = Vec<Vec<Option<bool>>>;

pub(crate) fn empty_splits(net: &Network) -> SplitMap {
    net.layers
        .iter()
        .map(|l| vec![None; if l.activation == Activation::Relu { l.out_dim } else { 0 }])
        .collect()
}

/// Affine function `coeffs·z + constant` stored as `[coeffs..., constant]`.
type Affine = Vec<f64>;

fn concretize(f: &[f64], lo: &[f64], hi: &[f64], upper: bool) -> f64 {
    let d = lo.len();
    let mut v = f[d];
    for i in 0..d {
        let c = f[i];
        v += if (c > 0.0) == upper { c * hi[i] } else { c * lo[i] };
    }
    v
}

/// Result of a forward pass on one region.
#[derive(Debug, Clone)]
pub(crate) struct ForwardBounds {
    /// Pre-activation bounds per layer.
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    /// Constraints on `z` implied by the split assignments.
    pub constraints: Vec<Halfspace>,
}

/// Neuron state under the current bounds and splits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Phase {
    Active,
    Inactive,
    Unstable,
}

pub(crate) fn phase(l: f64, u: f64, split: Option<bool>) -> Phase {
    match split {
        Some(true) => Phase::Active,
        Some(false) => Phase::Inactive,
        None if l >= 0.0 => Phase::Active,
        None if u <= 0.0 => Phase::Inactive,
        None => Phase::Unstable,
    }
}

/// Slack allowed when a split constraint is checked against concrete bounds.
const SPLIT_TOL: f64 = 1e-9;

/// Returns `None` when the splits are infeasible on the box.
pub(crate) fn forward(
    net: &Network,
    lo: &[f64],
    hi: &[f64],
    splits: &SplitMap,
) -> Option<ForwardBounds> {
    let d = net.input_dim;
    let mut h_lo_aff: Vec<Affine> = (0..d)
        .map(|i| {
            let mut f = vec![0.0; d + 1];
            f[i] = 1.0;
            f
        })
        .collect();
    let mut h_hi_aff = h_lo_aff.clone();
    let mut h_lo: Vec<f64> = lo.to_vec();
    let mut h_hi: Vec<f64> = hi.to_vec();
    let mut out = ForwardBounds {
        lower: Vec::with_capacity(net.layers.len()),
        upper: Vec::with_capacity(net.layers.len()),
        constraints: Vec::new(),
    };

    for (k, layer) in net.layers.iter().enumerate() {
        let n = layer.out_dim;
        let mut y_lo_aff: Vec<Affine> = Vec::with_capacity(n);
        let mut y_hi_aff: Vec<Affine> = Vec::with_capacity(n);
        let mut y_lo = vec![0.0; n];
        let mut y_hi = vec![0.0; n];
        for i in 0..n {
            let row = layer.row(i);
            let mut fl = vec![0.0; d + 1];
            let mut fu = vec![0.0; d + 1];
            fl[d] = layer.bias[i];
            fu[d] = layer.bias[i];
            let mut il = layer.bias[i];
            let mut iu = layer.bias[i];
            for (j, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (src_l, src_u, cl, cu) = if w > 0.0 {
                    (&h_lo_aff[j], &h_hi_aff[j], h_lo[j], h_hi[j])
                } else {
                    (&h_hi_aff[j], &h_lo_aff[j], h_hi[j], h_lo[j])
                };
                for t in 0..=d {
                    fl[t] += w * src_l[t];
                    fu[t] += w * src_u[t];
                }
                il += w * cl;
                iu += w * cu;
            }
            y_lo[i] = concretize(&fl, lo, hi, false).max(il);
            y_hi[i] = concretize(&fu, lo, hi, true).min(iu);
            y_lo_aff.push(fl);
            y_hi_aff.push(fu);
        }

        match layer.activation {
            Activation::Linear => {
                h_lo_aff = y_lo_aff;
                h_hi_aff = y_hi_aff;
                h_lo = y_lo.clone();
                h_hi = y_hi.clone();
            }
            Activation::Relu => {
                let mut nl_aff = Vec::with_capacity(n);
                let mut nu_aff = Vec::with_capacity(n);
                let mut nl = vec![0.0; n];
                let mut nu = vec![0.0; n];
                for i in 0..n {
                    let (l, u) = (y_lo[i], y_hi[i]);
                    match splits[k][i] {
                        Some(true) => {
                            if u < -SPLIT_TOL {
                                return None;
                            }
                            // U(z) >= 0
                            push_constraint(&mut out.constraints, &y_hi_aff[i], -1.0)?;
                        }
                        Some(false) => {
                            if l > SPLIT_TOL {
                                return None;
                            }
                            // L(z) <= 0
                            push_constraint(&mut out.constraints, &y_lo_aff[i], 1.0)?;
                        }
                        None => {}
                    }
                    match phase(l, u, splits[k][i]) {
                        Phase::Active => {
                            nl[i] = l.max(0.0);
                            nu[i] = u.max(0.0);
                            nl_aff.push(y_lo_aff[i].clone());
                            nu_aff.push(y_hi_aff[i].clone());
                        }
                        Phase::Inactive => {
                            nl_aff.push(vec![0.0; d + 1]);
                            nu_aff.push(vec![0.0; d + 1]);
                        }
                        Phase::Unstable => {
                            let s = u / (u - l);
                            let mut fu: Affine = y_hi_aff[i].iter().map(|c| s * c).collect();
                            fu[d] -= s * l;
                            let fl: Affine = if u >= -l {
                                y_lo_aff[i].clone()
                            } else {
                                vec![0.0; d + 1]
                            };
                            nu[i] = u;
                            nl_aff.push(fl);
                            nu_aff.push(fu);
                        }
                    }
                }
                h_lo_aff = nl_aff;
                h_hi_aff = nu_aff;
                h_lo = nl;
                h_hi = nu;
            }
        }
        out.lower.push(y_lo);
        out.upper.push(y_hi);
    }
    Some(out)
}

/// Adds `sign·f(z) <= 0`; `None` if the constraint is a violated constant.
pub(crate) fn push_constraint(out: &mut Vec<Halfspace>, f: &[f64], sign: f64) -> Option<()> {
    let d = f.len() - 1;
    let a: Vec<f64> = f[..d].iter().map(|c| sign * c).collect();
    let b = -sign * f[d];
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale <= 1e-12 * (1.0 + b.abs()) {
        return if b >= -SPLIT_TOL { Some(()) } else { None };
    }
    out.push(Halfspace { a, b });
    Some(())
}

/// Backward bound: returns `(coeffs, constant)` with
/// `lambda·net(z) <= coeffs·z + constant` on the region.
pub(crate) fn backward_upper(
    net: &Network,
    fwd: &ForwardBounds,
    splits: &SplitMap,
    lambda: &[f64],
) -> (Vec<f64>, f64) {
    let mut cur = lambda.to_vec();
    let mut constant = 0.0;
    for k in (0..net.layers.len()).rev() {
        let layer = &net.layers[k];
        constant += dot(&cur, &layer.bias);
        let mut mu = vec![0.0; layer.in_dim];
        for (i, &c) in cur.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (m, w) in mu.iter_mut().zip(layer.row(i)) {
                *m += c * w;
            }
        }
        if k == 0 {
            return (mu, constant);
        }
        let prev = &net.layers[k - 1];
        cur = match prev.activation {
            Activation::Linear => mu,
            Activation::Relu => {
                let (lo, hi) = (&fwd.lower[k - 1], &fwd.upper[k - 1]);
                mu.iter()
                    .enumerate()
                    .map(|(j, &m)| match phase(lo[j], hi[j], splits[k - 1][j]) {
                        Phase::Active => m,
                        Phase::Inactive => 0.0,
                        Phase::Unstable => {
                            let (l, u) = (lo[j], hi[j]);
                            if m >= 0.0 {
                                let s = u / (u - l);
                                constant -= m * s * l;
                                m * s
                            } else if u >= -l {
                                m
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect()
            }
        };
    }
    (cur, constant)
}

/// Maximises `coeffs·z + constant` over the polytope intersected with `extra`.
/// Returns `None` if the region is empty.
pub(crate) fn maximize_over(
    poly: &Polytope,
    extra: &[Halfspace],
    coeffs: &[f64],
    constant: f64,
) -> Result<Option<(f64, Vec<f64>)>, VerifyError> {
    if extra.is_empty() {
        if let Some((lo, hi)) = poly.as_box() {
            let z: Vec<f64> = coeffs
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(c, (l, h))| if *c >= 0.0 { *h } else { *l })
                .collect();
            return Ok(Some((dot(coeffs, &z) + constant, z)));
        }
    }
    let mut rows = poly.halfspaces.clone();
    rows.extend_from_slice(extra);
    match lpsolve::optimize_halfspaces(coeffs, &rows, Sense::Maximize)? {
        lpsolve::LpOutcome::Optimal(sol) => Ok(Some((sol.value + constant, sol.point))),
        lpsolve::LpOutcome::Infeasible => Ok(None),
        lpsolve::LpOutcome::Unbounded => Err(VerifyError::UnboundedRegion),
    }
}

/// Bounding box of the polytope intersected with `extra`, or `None` if empty.
pub(crate) fn region_box(
    poly: &Polytope,
    extra: &[Halfspace],
) -> Result<Option<(Vec<f64>, Vec<f64>)>, VerifyError> {
    let d = poly.dim;
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    let mut e = vec![0.0; d];
    for i in 0..d {
        e[i] = 1.0;
        match maximize_over(poly, extra, &e, 0.0)? {
            Some((v, _)) => hi[i] = v,
            None => return Ok(None),
        }
        e[i] = -1.0;
        match maximize_over(poly, extra, &e, 0.0)? {
            Some((v, _)) => lo[i] = -v,
            None => return Ok(None),
        }
        e[i] = 0.0;
    }
    Ok(Some((lo, hi)))
}
