//! Certified output bounds and specification checking.
//!
//! [`ibp_bounds`] and [`crown_bounds`] are sound but incomplete.
//! [`bab_verify`] splits unstable ReLUs until the bounds are exact or the
//! budget runs out. [`exact_range_enumerate`] is the brute-force oracle for
//! small networks.

mod bab;
mod enumerate;
mod ibp;
mod relax;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sample_points, GeometryError, Polytope, CONTAINS_TOL, UNBOUNDED};
use crate::lpsolve::LpError;
use crate::nnmodel::Network;
use crate::speclang::Spec;

pub use bab::bab_verify;
pub use enumerate::{exact_range_enumerate, ENUMERATION_RELU_LIMIT};
pub use ibp::ibp_bounds;

/// Slack allowed when comparing bounds to an interval.
pub const DECISION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("input polytope is empty")]
    InfeasiblePolytope,
    #[error("input region is unbounded")]
    UnboundedRegion,
    #[error("invalid interval [{lo}, {hi}] for output {output}")]
    InvalidInterval { output: usize, lo: f64, hi: f64 },
    #[error("network has {count} ReLUs; enumeration is limited to {limit}")]
    TooManyRelus { count: usize, limit: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ibp,
    Crown,
    Bab,
    Enumerate,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ibp => "ibp",
            Method::Crown => "crown",
            Method::Bab => "bab",
            Method::Enumerate => "enumerate",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ibp" => Ok(Method::Ibp),
            "crown" => Ok(Method::Crown),
            "bab" => Ok(Method::Bab),
            "enumerate" => Ok(Method::Enumerate),
            _ => Err(format!("unknown method '{s}' (expected crown or bab)")),
        }
    }
}

/// Per-output certified bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub method: Method,
    /// Seconds.
    pub wall_time: f64,
    pub subproblems: usize,
}

/// L∞ ball `‖x − center‖∞ <= radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPerturbation {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BoxPerturbation {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self, VerifyError> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(VerifyError::DimensionMismatch(format!(
                "box radius must be finite and non-negative, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }

    pub fn to_polytope(&self) -> Result<Polytope, VerifyError> {
        let lo: Vec<f64> = self.center.iter().map(|c| c - self.radius).collect();
        let hi: Vec<f64> = self.center.iter().map(|c| c + self.radius).collect();
        Ok(Polytope::from_box(&lo, &hi)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub z: Vec<f64>,
    pub output: Vec<f64>,
    pub violated_constraint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Holds,
    Violated,
    Unknown,
}

impl Status {
    /// The SAT/UNSAT labels of the results tables, where SAT means "holds".
    pub fn paper_label(self) -> &'static str {
        match self {
            Status::Holds => "SAT",
            Status::Violated => "UNSAT",
            Status::Unknown => "-",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Holds => "HOLDS",
            Status::Violated => "VIOLATED",
            Status::Unknown => "UNKNOWN",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub spec_id: String,
    pub status: Status,
    pub paper_status: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub method: Method,
    pub wall_time_s: f64,
    pub subproblems: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counterexample: Option<Counterexample>,
}

/// Limits for branch-and-bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    /// Per objective (output and direction).
    pub max_subproblems: usize,
    pub timeout: Duration,
    /// Stop each side as soon as it is certified or refuted instead of
    /// tightening the bound to optimality.
    pub stop_when_decided: bool,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_subproblems: 10_000,
            timeout: Duration::from_secs(60),
            stop_when_decided: false,
        }
    }
}

/// Options for [`verify_spec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub method: Method,
    pub budget: Budget,
    /// Hit-and-run points tried by the falsification pre-pass.
    pub falsify_samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            method: Method::Bab,
            budget: Budget {
                stop_when_decided: true,
                ..Budget::default()
            },
            falsify_samples: 1000,
            seed: 0,
        }
    }
}

pub(crate) fn check_interval(interval: &[(f64, f64)], outputs: usize) -> Result<(), VerifyError> {
    if interval.len() != outputs {
        return Err(VerifyError::DimensionMismatch(format!(
            "interval has {} entries but the network has {outputs} outputs",
            interval.len()
        )));
    }
    for (output, &(lo, hi)) in interval.iter().enumerate() {
        if !(lo <= hi) {
            return Err(VerifyError::InvalidInterval { output, lo, hi });
        }
    }
    Ok(())
}

fn check_dims(net: &Network, poly: &Polytope) -> Result<(), VerifyError> {
    if poly.dim != net.input_dim {
        return Err(VerifyError::DimensionMismatch(format!(
            "polytope has dimension {} but the network expects {} inputs",
            poly.dim, net.input_dim
        )));
    }
    Ok(())
}

/// Describes the first violated interval side of `y`, if any.
pub(crate) fn violation(y: &[f64], interval: &[(f64, f64)]) -> Option<String> {
    for (j, (&v, &(lo, hi))) in y.iter().zip(interval).enumerate() {
        if hi < UNBOUNDED && v > hi + DECISION_TOL {
            return Some(format!("Y_{j} = {v:?} > {hi:?}"));
        }
        if lo > -UNBOUNDED && v < lo - DECISION_TOL {
            return Some(format!("Y_{j} = {v:?} < {lo:?}"));
        }
    }
    None
}

/// Moves `z` toward `center` until it satisfies [`Polytope::contains`].
pub(crate) fn pull_inside(poly: &Polytope, z: &[f64], center: &[f64]) -> Option<Vec<f64>> {
    if poly.max_violation(z) <= 0.0 {
        return Some(z.to_vec());
    }
    let mut s = 1.0f64;
    for h in &poly.halfspaces {
        let az = h.eval(z);
        if az > h.b {
            let ac = h.eval(center);
            let denom = az - ac;
            if denom > 0.0 {
                s = s.min((h.b - ac) / denom);
            }
        }
    }
    let s = (s * (1.0 - 1e-12)).clamp(0.0, 1.0);
    let p: Vec<f64> = center.iter().zip(z).map(|(c, zi)| c + s * (zi - c)).collect();
    (poly.max_violation(&p) <= CONTAINS_TOL).then_some(p)
}

fn counterexample_at(net: &Network, z: Vec<f64>, interval: &[(f64, f64)]) -> Option<Counterexample> {
    let output = net.forward_unchecked(&z);
    violation(&output, interval).map(|violated_constraint| Counterexample {
        z,
        output,
        violated_constraint,
    })
}

/// Evaluates the polytope's vertices, then `n_samples` hit-and-run points, and
/// returns the first point whose output leaves `interval`.
pub fn find_counterexample(
    net: &Network,
    poly: &Polytope,
    interval: &[(f64, f64)],
    n_samples: usize,
    seed: u64,
) -> Result<Option<Counterexample>, VerifyError> {
    check_dims(net, poly)?;
    check_interval(interval, net.output_dim())?;
    for v in &poly.vertices {
        if poly.contains(v)? {
            if let Some(c) = counterexample_at(net, v.clone(), interval) {
                return Ok(Some(c));
            }
        }
    }
    if n_samples == 0 {
        return Ok(None);
    }
    for z in sample_points(poly, n_samples, seed)? {
        if let Some(c) = counterexample_at(net, z, interval) {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

/// CROWN bounds over the polytope (no splitting).
pub fn crown_bounds(net: &Network, poly: &Polytope) -> Result<BoundsResult, VerifyError> {
    check_dims(net, poly)?;
    let start = Instant::now();
    let ctx = bab::Context::new(net, poly)?;
    let root = ctx.root()?;
    let m = net.output_dim();
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    for j in 0..m {
        let mut lambda = vec![0.0; m];
        lambda[j] = 1.0;
        upper[j] = ctx.objective_bound(&root, &lambda)?.ok_or(VerifyError::InfeasiblePolytope)?.0;
        lambda[j] = -1.0;
        lower[j] = -ctx.objective_bound(&root, &lambda)?.ok_or(VerifyError::InfeasiblePolytope)?.0;
    }
    Ok(BoundsResult {
        lower,
        upper,
        method: Method::Crown,
        wall_time: start.elapsed().as_secs_f64(),
        subproblems: 1,
    })
}

fn status_from_bounds(b: &BoundsResult, interval: &[(f64, f64)]) -> Status {
    let holds = b
        .lower
        .iter()
        .zip(&b.upper)
        .zip(interval)
        .all(|((l, u), (lo, hi))| *u <= hi + DECISION_TOL && *l >= lo - DECISION_TOL);
    if holds {
        Status::Holds
    } else {
        Status::Unknown
    }
}

/// Decides `z ∈ poly ⟹ net(z) ∈ spec.output_interval`.
///
/// Runs the falsification pre-pass, then CROWN or branch-and-bound. The
/// polytope reference in the spec is not resolved here; the caller passes
/// the polytope it resolved.
pub fn verify_spec(
    net: &Network,
    spec: &Spec,
    poly: &Polytope,
    options: &VerifyOptions,
) -> Result<VerificationResult, VerifyError> {
    check_dims(net, poly)?;
    let interval = &spec.output_interval;
    check_interval(interval, net.output_dim())?;
    let start = Instant::now();
    let pre = find_counterexample(net, poly, interval, options.falsify_samples, options.seed)?;

    let (status, bounds, cex) = match options.method {
        Method::Bab | Method::Enumerate => {
            let (status, bounds, cex) = bab_verify(net, poly, interval, &options.budget)?;
            (status, bounds, cex.or(pre))
        }
        Method::Crown | Method::Ibp => {
            let bounds = crown_bounds(net, poly)?;
            let status = if pre.is_some() {
                Status::Violated
            } else {
                status_from_bounds(&bounds, interval)
            };
            (status, bounds, pre)
        }
    };
    let status = if cex.is_some() { Status::Violated } else { status };
    Ok(VerificationResult {
        spec_id: spec.id.clone(),
        status,
        paper_status: status.paper_label().to_string(),
        lower: bounds.lower,
        upper: bounds.upper,
        method: bounds.method,
        wall_time_s: start.elapsed().as_secs_f64(),
        subproblems: bounds.subproblems,
        counterexample: if status == Status::Violated { cex } else { None },
    })
}

/// CROWN over an input-space L∞ box, for comparison with latent-space runs.
pub fn verify_box_baseline(
    controller: &Network,
    pert: &BoxPerturbation,
    interval: &[(f64, f64)],
    spec_id: &str,
) -> Result<VerificationResult, VerifyError> {
    if pert.center.len() != controller.input_dim {
        return Err(VerifyError::DimensionMismatch(format!(
            "image vector has {} entries but the controller expects {}",
            pert.center.len(),
            controller.input_dim
        )));
    }
    check_interval(interval, controller.output_dim())?;
    let start = Instant::now();
    let poly = pert.to_polytope()?;
    let center_cex = counterexample_at(controller, pert.center.clone(), interval);
    let bounds = crown_bounds(controller, &poly)?;
    let status = if center_cex.is_some() {
        Status::Violated
    } else {
        status_from_bounds(&bounds, interval)
    };
    Ok(VerificationResult {
        spec_id: spec_id.to_string(),
        status,
        paper_status: status.paper_label().to_string(),
        lower: bounds.lower,
        upper: bounds.upper,
        method: Method::Crown,
        wall_time_s: start.elapsed().as_secs_f64(),
        subproblems: bounds.subproblems,
        counterexample: center_cex,
    })
}
