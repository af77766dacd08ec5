//! Best-first branch-and-bound over ReLU activation splits.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use tracing::debug;

use crate::geometry::{dot, GeometryError, Polytope, UNBOUNDED};
use crate::nnmodel::{Activation, AffineLayer, Network};

use super::relax::{self, phase, ForwardBounds, Phase, SplitMap};
use super::{
    check_interval, counterexample_at, pull_inside, BoundsResult, Budget, Counterexample, Method,
    Status, VerifyError, DECISION_TOL,
};

/// Region bounding boxes are recomputed by LP up to this input dimension.
const REGION_BOX_DIM: usize = 8;
const GAP_TOL: f64 = 1e-9;

/// One subproblem: a split assignment with its bounds on the split region.
#[derive(Debug, Clone)]
pub(crate) struct Node {
    splits: SplitMap,
    fwd: ForwardBounds,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Node {
    /// Unstable neuron maximising `|l|·|u|/(u−l)`, first in (layer, index)
    /// order on ties.
    fn branching_neuron(&self) -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (k, row) in self.splits.iter().enumerate() {
            for (i, s) in row.iter().enumerate() {
                let (l, u) = (self.fwd.lower[k][i], self.fwd.upper[k][i]);
                if phase(l, u, *s) != Phase::Unstable {
                    continue;
                }
                let score = (-l) * u / (u - l);
                if best.is_none_or(|(b, _, _)| score > b) {
                    best = Some((score, k, i));
                }
            }
        }
        best.map(|(_, k, i)| (k, i))
    }
}

/// Network, polytope and the data shared by every subproblem.
pub(crate) struct Context<'a> {
    net: Network,
    poly: &'a Polytope,
    center: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Context<'a> {
    pub(crate) fn new(net: &Network, poly: &'a Polytope) -> Result<Self, VerifyError> {
        let mut net = net.clone();
        if net.layers.last().is_some_and(|l| l.activation == Activation::Relu) {
            // the backward pass bounds pre-activations, so expose the output as one
            let m = net.output_dim();
            let eye = (0..m)
                .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            net.layers
                .push(AffineLayer::new(eye, vec![0.0; m], Activation::Linear).expect("identity layer"));
        }
        let (center, _) = poly.chebyshev_center().map_err(map_geometry)?;
        let (lo, hi) = poly.bounding_box().map_err(map_geometry)?;
        Ok(Self {
            net,
            poly,
            center,
            lo,
            hi,
        })
    }

    pub(crate) fn root(&self) -> Result<Node, VerifyError> {
        self.evaluate(relax::empty_splits(&self.net), &self.lo, &self.hi)?
            .ok_or(VerifyError::InfeasiblePolytope)
    }

    fn evaluate(&self, splits: SplitMap, plo: &[f64], phi: &[f64]) -> Result<Option<Node>, VerifyError> {
        let Some(mut fwd) = relax::forward(&self.net, plo, phi, &splits) else {
            return Ok(None);
        };
        let (mut lo, mut hi) = (plo.to_vec(), phi.to_vec());
        if !fwd.constraints.is_empty() && self.poly.dim <= REGION_BOX_DIM {
            let Some((rlo, rhi)) = relax::region_box(self.poly, &fwd.constraints)? else {
                return Ok(None);
            };
            let rlo: Vec<f64> = rlo.iter().zip(plo).map(|(a, b)| a.max(*b)).collect();
            let rhi: Vec<f64> = rhi.iter().zip(phi).map(|(a, b)| a.min(*b)).collect();
            let shrunk = rlo.iter().zip(plo).any(|(a, b)| a - b > 1e-9)
                || rhi.iter().zip(phi).any(|(a, b)| b - a > 1e-9);
            if shrunk && rlo.iter().zip(&rhi).all(|(l, h)| l <= h) {
                let Some(tight) = relax::forward(&self.net, &rlo, &rhi, &splits) else {
                    return Ok(None);
                };
                for k in 0..fwd.lower.len() {
                    for i in 0..fwd.lower[k].len() {
                        fwd.lower[k][i] = fwd.lower[k][i].max(tight.lower[k][i]);
                        fwd.upper[k][i] = fwd.upper[k][i].min(tight.upper[k][i]);
                    }
                }
                fwd.constraints.extend(tight.constraints);
                lo = rlo;
                hi = rhi;
            }
        }
        Ok(Some(Node { splits, fwd, lo, hi }))
    }

    /// Upper bound of `lambda·net(z)` on the node's region with the LP
    /// argpoint, or `None` if the region is empty.
    pub(crate) fn objective_bound(&self, node: &Node, lambda: &[f64]) -> Result<Option<(f64, Vec<f64>)>, VerifyError> {
        let (coeffs, constant) = relax::backward_upper(&self.net, &node.fwd, &node.splits, lambda);
        let Some((value, z)) = relax::maximize_over(self.poly, &node.fwd.constraints, &coeffs, constant)? else {
            return Ok(None);
        };
        let last = node.fwd.lower.len() - 1;
        let interval: f64 = lambda
            .iter()
            .zip(node.fwd.lower[last].iter().zip(&node.fwd.upper[last]))
            .map(|(c, (l, u))| if *c >= 0.0 { c * u } else { c * l })
            .sum();
        Ok(Some((value.min(interval), z)))
    }

    /// `(lambda·net(z), z)` after moving `z` into the polytope.
    fn primal(&self, z: &[f64], lambda: &[f64]) -> Option<(f64, Vec<f64>)> {
        let z = pull_inside(self.poly, z, &self.center)?;
        let y = self.net.forward_unchecked(&z);
        Some((dot(lambda, &y), z))
    }
}

fn map_geometry(e: GeometryError) -> VerifyError {
    match e {
        GeometryError::Infeasible | GeometryError::Lp(crate::lpsolve::LpError::InfeasiblePolytope) => {
            VerifyError::InfeasiblePolytope
        }
        GeometryError::Unbounded | GeometryError::Lp(crate::lpsolve::LpError::UnboundedPolytope) => {
            VerifyError::UnboundedRegion
        }
        other => VerifyError::Geometry(other),
    }
}

struct Entry {
    ub: f64,
    id: usize,
    node: Node,
    resolved: bool,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.ub.total_cmp(&other.ub).then_with(|| other.id.cmp(&self.id))
    }
}

pub(crate) struct SideOutcome {
    /// Certified upper bound of the objective.
    pub bound: f64,
    /// Best objective value found at a contained point.
    pub primal: Option<(f64, Vec<f64>)>,
    pub evaluated: usize,
}

/// Maximises `lambda·net(z)` by best-first branch-and-bound.
///
/// With `decide = Some(t)` the search stops once the bound is at most `t` or
/// a point above `t` has been found.
pub(crate) fn maximize(
    ctx: &Context,
    root: &Node,
    lambda: &[f64],
    decide: Option<f64>,
    max_subproblems: usize,
    deadline: Instant,
) -> Result<SideOutcome, VerifyError> {
    let mut primal: Option<(f64, Vec<f64>)> = None;
    let offer = |cand: Option<(f64, Vec<f64>)>, primal: &mut Option<(f64, Vec<f64>)>| {
        if let Some((v, z)) = cand {
            if primal.as_ref().is_none_or(|(b, _)| v > *b) {
                *primal = Some((v, z));
            }
        }
    };
    for v in &ctx.poly.vertices {
        offer(ctx.primal(v, lambda), &mut primal);
    }
    offer(ctx.primal(&ctx.center.clone(), lambda), &mut primal);

    let Some((root_ub, z)) = ctx.objective_bound(root, lambda)? else {
        return Err(VerifyError::InfeasiblePolytope);
    };
    offer(ctx.primal(&z, lambda), &mut primal);

    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    heap.push(Entry {
        ub: root_ub,
        id: next_id,
        resolved: root.branching_neuron().is_none(),
        node: root.clone(),
    });
    next_id += 1;
    let mut evaluated = 0usize;
    let mut fallback = f64::NEG_INFINITY;

    while let Some(top) = heap.peek() {
        let ub = top.ub;
        let best = primal.as_ref().map_or(f64::NEG_INFINITY, |p| p.0);
        if top.resolved || best >= ub - GAP_TOL {
            break;
        }
        if let Some(t) = decide {
            if ub <= t + DECISION_TOL || best > t + DECISION_TOL {
                break;
            }
        }
        if evaluated >= max_subproblems || Instant::now() >= deadline {
            break;
        }
        let entry = heap.pop().expect("peeked");
        fallback = fallback.max(entry.ub);
        let (k, i) = entry.node.branching_neuron().expect("unresolved node has an unstable neuron");
        for active in [true, false] {
            let mut splits = entry.node.splits.clone();
            splits[k][i] = Some(active);
            evaluated += 1;
            let Some(child) = ctx.evaluate(splits, &entry.node.lo, &entry.node.hi)? else {
                continue;
            };
            let Some((child_ub, z)) = ctx.objective_bound(&child, lambda)? else {
                continue;
            };
            offer(ctx.primal(&z, lambda), &mut primal);
            heap.push(Entry {
                ub: child_ub.min(entry.ub),
                id: next_id,
                resolved: child.branching_neuron().is_none(),
                node: child,
            });
            next_id += 1;
        }
    }

    let bound = match heap.peek() {
        Some(top) => top.ub,
        // every remaining piece was empty; the best point found is the maximum
        None => primal.as_ref().map_or(fallback, |p| p.0),
    };
    debug!(evaluated, bound, "branch-and-bound side finished");
    Ok(SideOutcome {
        bound,
        primal,
        evaluated,
    })
}

/// Complete verification of `net(z) ∈ interval` for all `z` in `poly`.
///
/// Each output and direction is searched separately with its own
/// `max_subproblems` allowance; the timeout is shared. Sides whose interval
/// end is a ±1e30 sentinel are only tightened when
/// `budget.stop_when_decided` is false.
pub fn bab_verify(
    net: &Network,
    poly: &Polytope,
    interval: &[(f64, f64)],
    budget: &Budget,
) -> Result<(Status, BoundsResult, Option<Counterexample>), VerifyError> {
    if poly.dim != net.input_dim {
        return Err(VerifyError::DimensionMismatch(format!(
            "polytope has dimension {} but the network expects {} inputs",
            poly.dim, net.input_dim
        )));
    }
    check_interval(interval, net.output_dim())?;
    let start = Instant::now();
    let deadline = start + budget.timeout.min(Duration::from_secs(u32::MAX as u64));
    let ctx = Context::new(net, poly)?;
    let root = ctx.root()?;
    let m = net.output_dim();
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut subproblems = 1;
    let mut holds = true;
    let mut cex: Option<Counterexample> = None;

    for (j, &(lo, hi)) in interval.iter().enumerate() {
        for sign in [1.0, -1.0] {
            let mut lambda = vec![0.0; m];
            lambda[j] = sign;
            let threshold = if sign > 0.0 { hi } else { -lo };
            let vacuous = threshold >= UNBOUNDED;
            let side = if vacuous && budget.stop_when_decided {
                let (ub, _) = ctx.objective_bound(&root, &lambda)?.ok_or(VerifyError::InfeasiblePolytope)?;
                SideOutcome {
                    bound: ub,
                    primal: None,
                    evaluated: 0,
                }
            } else {
                let decide = budget.stop_when_decided.then_some(threshold);
                maximize(&ctx, &root, &lambda, decide, budget.max_subproblems, deadline)?
            };
            subproblems += side.evaluated;
            if sign > 0.0 {
                upper[j] = side.bound;
            } else {
                lower[j] = -side.bound;
            }
            if !vacuous && side.bound > threshold + DECISION_TOL {
                holds = false;
            }
            if cex.is_none() && !vacuous {
                if let Some((v, z)) = side.primal {
                    if v > threshold + DECISION_TOL {
                        cex = counterexample_at(&ctx.net, z, interval);
                    }
                }
            }
        }
    }
    for j in 0..m {
        if lower[j] > upper[j] {
            let mid = 0.5 * (lower[j] + upper[j]);
            lower[j] = mid;
            upper[j] = mid;
        }
    }
    let status = if cex.is_some() {
        Status::Violated
    } else if holds {
        Status::Holds
    } else {
        Status::Unknown
    };
    Ok((
        status,
        BoundsResult {
            lower,
            upper,
            method: Method::Bab,
            wall_time: start.elapsed().as_secs_f64(),
            subproblems,
        },
        cex,
    ))
}
