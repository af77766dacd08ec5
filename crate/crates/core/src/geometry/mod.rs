//! Convex polytopes in latent space.
//!
//! A [`Polytope`] carries both an H-representation (always present) and an
//! optional V-representation. Polytopes are built from action-labelled latent
//! samples: filter the samples for an action interval, take the convex hull
//! (exact Quickhull up to [`HULL_DIM_LIMIT`], support-function outer
//! approximation above it) and inflate by an L2 ball.

mod hull;
mod io;
mod sampling;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lpsolve::{self, LpError, LpOutcome, Sense};

pub use hull::{convex_hull, FACET_LIMIT, HULL_DIM_LIMIT};
pub use io::{read_latent_csv, read_polytope, write_latent_csv, write_polytope, PolytopeDescriptor};
pub use sampling::{filter_samples, sample_points, DEFAULT_SIGMA_CAP};

/// Membership tolerance for [`Polytope::contains`].
pub const CONTAINS_TOL: f64 = 1e-9;
/// Residual tolerance for hull vertices and input points.
pub const HULL_TOL: f64 = 1e-7;
/// Sentinel used for unbounded sides of action and output intervals.
pub const UNBOUNDED: f64 = 1e30;

const OUTER_SEED: u64 = 0x006f_7574_6572;
/// Corner arcs of a planar inflation are resolved to this Hausdorff error.
pub const ARC_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate point set: points span only {rank} of {dim} dimensions (deficient in dimension {})", rank + 1)]
    Degenerate { rank: usize, dim: usize },
    #[error("exact hulls are limited to dimension {limit} (got {dim}); use outer_approximate instead")]
    UnsupportedDimension { dim: usize, limit: usize },
    #[error("hull exceeded {limit} facets; use outer_approximate instead")]
    TooManyFacets { limit: usize },
    #[error("no samples selected for action interval [{lo}, {hi}]")]
    EmptySelection { lo: f64, hi: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("polytope is empty")]
    Infeasible,
    #[error("polytope is unbounded")]
    Unbounded,
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Provenance of a latent sample or polytope.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum SampleTag {
    #[default]
    Clean,
    Augmented { kind: String, level: String },
}

impl fmt::Display for SampleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleTag::Clean => f.write_str("clean"),
            SampleTag::Augmented { kind, level } => write!(f, "{kind}_{level}"),
        }
    }
}

impl std::str::FromStr for SampleTag {
    type Err = GeometryError;

    /// `clean` or `<kind>_<level>`, e.g. `vertical_motion_blur_d2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "clean" {
            return Ok(SampleTag::Clean);
        }
        match s.rsplit_once('_') {
            Some((kind, level)) if !kind.is_empty() && !level.is_empty() => Ok(SampleTag::Augmented {
                kind: kind.to_string(),
                level: level.to_string(),
            }),
            _ => Err(GeometryError::Parse(format!("invalid sample tag '{s}'"))),
        }
    }
}

impl Serialize for SampleTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SampleTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A latent vector with its control-action label.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub action: f64,
    pub tag: SampleTag,
}

/// `a·z <= b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Halfspace {
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self, GeometryError> {
        if a.iter().chain(std::iter::once(&b)).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidArgument("non-finite halfspace".into()));
        }
        if norm(&a) <= 0.0 {
            return Err(GeometryError::InvalidArgument("halfspace normal is zero".into()));
        }
        Ok(Self { a, b })
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        dot(&self.a, z)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.a)
    }

    /// Signed distance of `z` past the boundary (positive = outside).
    pub fn signed_distance(&self, z: &[f64]) -> f64 {
        (self.eval(z) - self.b) / self.norm()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A bounded convex polytope with action-interval metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub id: String,
    pub dim: usize,
    /// Extreme points; empty when the polytope is an outer approximation.
    pub vertices: Vec<Vec<f64>>,
    pub halfspaces: Vec<Halfspace>,
    pub action_interval: (f64, f64),
    pub inflation_radius: f64,
    pub source_tag: SampleTag,
    pub parent_id: Option<String>,
}

impl Polytope {
    /// Builds a polytope from an H-representation; the result is not checked
    /// for boundedness (see [`Polytope::bounding_box`]).
    pub fn from_halfspaces(dim: usize, halfspaces: Vec<Halfspace>) -> Result<Self, GeometryError> {
        if halfspaces.is_empty() {
            return Err(GeometryError::InvalidArgument("polytope needs at least one halfspace".into()));
        }
        for h in &halfspaces {
            if h.a.len() != dim {
                return Err(GeometryError::DimensionMismatch {
                    expected: dim,
                    found: h.a.len(),
                });
            }
            if h.norm() <= 0.0 || !h.b.is_finite() || h.a.iter().any(|v| !v.is_finite()) {
                return Err(GeometryError::InvalidArgument("invalid halfspace".into()));
            }
        }
        let mut p = Self {
            id: String::new(),
            dim,
            vertices: Vec::new(),
            halfspaces,
            action_interval: (-UNBOUNDED, UNBOUNDED),
            inflation_radius: 0.0,
            source_tag: SampleTag::Clean,
            parent_id: None,
        };
        p.refresh_id();
        Ok(p)
    }

    /// Axis-aligned box `lower <= z <= upper` with its corner V-representation
    /// (corners only for dim <= 10).
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self, GeometryError> {
        if lower.len() != upper.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        let d = lower.len();
        if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
            return Err(GeometryError::InvalidArgument("box lower bound exceeds upper bound".into()));
        }
        let mut hs = Vec::with_capacity(2 * d);
        for i in 0..d {
            let mut a = vec![0.0; d];
            a[i] = 1.0;
            hs.push(Halfspace { a: a.clone(), b: upper[i] });
            a[i] = -1.0;
            hs.push(Halfspace { a, b: -lower[i] });
        }
        let mut p = Self::from_halfspaces(d, hs)?;
        if d <= 10 {
            p.vertices = (0..1usize << d)
                .map(|mask| (0..d).map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] }).collect())
                .collect();
        }
        Ok(p)
    }

    /// Recomputes the content-derived identifier.
    pub fn refresh_id(&mut self) {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for hs in &self.halfspaces {
            for v in &hs.a {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(hs.b.to_bits().to_le_bytes());
        }
        h.update(self.inflation_radius.to_bits().to_le_bytes());
        h.update(self.action_interval.0.to_bits().to_le_bytes());
        h.update(self.action_interval.1.to_bits().to_le_bytes());
        let digest = h.finalize();
        self.id = format!("P{}", &hex::encode(digest)[..12]);
    }

    pub fn with_metadata(mut self, action_interval: (f64, f64), source_tag: SampleTag) -> Self {
        self.action_interval = action_interval;
        self.source_tag = source_tag;
        self.refresh_id();
        self
    }

    /// `A·z <= b + 1e-9` for every halfspace.
    pub fn contains(&self, z: &[f64]) -> Result<bool, GeometryError> {
        if z.len() != self.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                found: z.len(),
            });
        }
        Ok(self.halfspaces.iter().all(|h| h.eval(z) <= h.b + CONTAINS_TOL))
    }

    /// Largest constraint violation `max_i (a_i·z - b_i)`; non-positive inside.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.eval(z) - h.b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// The box `lower <= z <= upper` when every halfspace is axis aligned.
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim;
        let mut lower = vec![f64::NEG_INFINITY; d];
        let mut upper = vec![f64::INFINITY; d];
        for h in &self.halfspaces {
            let mut nz = h.a.iter().enumerate().filter(|(_, v)| **v != 0.0);
            let (i, &v) = nz.next()?;
            if nz.next().is_some() {
                return None;
            }
            if v > 0.0 {
                upper[i] = upper[i].min(h.b / v);
            } else {
                lower[i] = lower[i].max(h.b / v);
            }
        }
        if lower.iter().chain(&upper).all(|v| v.is_finite()) {
            Some((lower, upper))
        } else {
            None
        }
    }

    /// Per-dimension extent by LP over the H-representation.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
        if let Some((lower, upper)) = self.as_box() {
            if lower.iter().zip(&upper).any(|(l, u)| l > u) {
                return Err(GeometryError::Infeasible);
            }
            return Ok((lower, upper));
        }
        let d = self.dim;
        let mut lower = vec![0.0; d];
        let mut upper = vec![0.0; d];
        for i in 0..d {
            let mut c = vec![0.0; d];
            c[i] = 1.0;
            for (sense, out) in [(Sense::Minimize, &mut lower), (Sense::Maximize, &mut upper)] {
                match lpsolve::optimize_halfspaces(&c, &self.halfspaces, sense)? {
                    LpOutcome::Optimal(s) => out[i] = s.value,
                    LpOutcome::Infeasible => return Err(GeometryError::Infeasible),
                    LpOutcome::Unbounded => return Err(GeometryError::Unbounded),
                }
            }
        }
        Ok((lower, upper))
    }

    /// Center and radius of the largest inscribed ball.
    pub fn chebyshev_center(&self) -> Result<(Vec<f64>, f64), GeometryError> {
        lpsolve::chebyshev_center(&self.halfspaces)?.ok_or(GeometryError::Infeasible)
    }

    /// Checks the structural invariants; returns human-readable violations.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.halfspaces.is_empty() {
            out.push("H-representation is empty".to_string());
        }
        for (i, h) in self.halfspaces.iter().enumerate() {
            if h.a.len() != self.dim {
                out.push(format!("halfspace {i} has dimension {}", h.a.len()));
            } else if h.norm() <= 0.0 {
                out.push(format!("halfspace {i} has a zero normal"));
            }
        }
        for (i, v) in self.vertices.iter().enumerate() {
            if v.len() != self.dim {
                out.push(format!("vertex {i} has dimension {}", v.len()));
            } else if self.max_violation(v) > HULL_TOL {
                out.push(format!("vertex {i} violates the H-representation"));
            }
        }
        if self.inflation_radius < 0.0 {
            out.push("negative inflation radius".to_string());
        }
        if self.inflation_radius > 0.0 && self.parent_id.is_none() {
            out.push("inflated polytope does not record its parent".to_string());
        }
        if out.is_empty() {
            if let Err(e) = self.bounding_box() {
                out.push(format!("bounding box unavailable: {e}"));
            }
        }
        out
    }
}

/// Support-function outer approximation with `k` unit directions: the `2d`
/// signed axes followed by `k - 2d` seeded random directions.
pub fn outer_approximate(points: &[Vec<f64>], k: usize) -> Result<Polytope, GeometryError> {
    outer_approximate_seeded(points, k, OUTER_SEED)
}

pub fn outer_approximate_seeded(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Polytope, GeometryError> {
    let Some(d) = points.first().map(Vec::len) else {
        return Err(GeometryError::InvalidArgument("no points".into()));
    };
    if d == 0 {
        return Err(GeometryError::InvalidArgument("zero-dimensional points".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(GeometryError::DimensionMismatch {
            expected: d,
            found: p.len(),
        });
    }
    if k < 2 * d {
        return Err(GeometryError::InvalidArgument(format!(
            "outer approximation needs at least {} directions, got {k}",
            2 * d
        )));
    }
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut a = vec![0.0; d];
            a[i] = s;
            dirs.push(a);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < k {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            dirs.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let halfspaces = dirs
        .into_iter()
        .map(|a| {
            let b = points
                .iter()
                .map(|p| dot(&a, p))
                .fold(f64::NEG_INFINITY, f64::max);
            Halfspace { a, b }
        })
        .collect();
    Polytope::from_halfspaces(d, halfspaces)
}

/// Minkowski sum with the L2 ball of radius `epsilon`.
///
/// Every halfspace is offset to `b + epsilon·‖a‖`. For planar polytopes with
/// a vertex list the rounded corners are additionally cut by tangent
/// halfspaces so the result is within [`ARC_TOL`] of the exact sum; in higher
/// dimensions the offset polytope is an outer approximation and carries no
/// vertices.
pub fn inflate(poly: &Polytope, epsilon: f64) -> Result<Polytope, GeometryError> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(GeometryError::InvalidArgument(format!(
            "inflation radius must be non-negative, got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return Ok(poly.clone());
    }
    let mut halfspaces: Vec<Halfspace> = poly
        .halfspaces
        .iter()
        .map(|h| Halfspace {
            a: h.a.clone(),
            b: h.b + epsilon * h.norm(),
        })
        .collect();
    let mut vertices = Vec::new();
    if poly.dim == 2 && poly.vertices.len() >= 3 {
        let (caps, verts) = planar_corner_caps(&poly.vertices, epsilon);
        halfspaces.extend(caps);
        vertices = verts;
    }
    let mut out = Polytope {
        id: String::new(),
        dim: poly.dim,
        vertices,
        halfspaces,
        action_interval: poly.action_interval,
        inflation_radius: poly.inflation_radius + epsilon,
        source_tag: poly.source_tag.clone(),
        parent_id: Some(poly.id.clone()),
    };
    out.refresh_id();
    Ok(out)
}

/// Tangent halfspaces along the corner arcs of a convex polygon offset by
/// `eps`, plus the vertices of the resulting polygon.
fn planar_corner_caps(vertices: &[Vec<f64>], eps: f64) -> (Vec<Halfspace>, Vec<Vec<f64>>) {
    let n = vertices.len() as f64;
    let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / n;
    let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / n;
    let mut ring: Vec<&Vec<f64>> = vertices.iter().collect();
    ring.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
    let m = ring.len();
    // outward normal angle of edge i -> i+1 for a counter-clockwise ring
    let edge_angle = |i: usize| {
        let p = ring[i];
        let q = ring[(i + 1) % m];
        let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
        dy.atan2(dx) - std::f64::consts::FRAC_PI_2
    };
    let max_step = 2.0 * (1.0 / (1.0 + ARC_TOL / eps)).acos();
    let mut caps = Vec::new();
    let mut verts = Vec::new();
    for i in 0..m {
        let v = ring[i];
        let start = edge_angle((i + m - 1) % m);
        let mut sweep = (edge_angle(i) - start).rem_euclid(std::f64::consts::TAU);
        if sweep > std::f64::consts::PI {
            // collinear or reflex artefact; treat as flat
            sweep = 0.0;
        }
        let pieces = (sweep / max_step).ceil().max(1.0) as usize;
        let angles: Vec<f64> = (0..=pieces)
            .map(|k| start + sweep * k as f64 / pieces as f64)
            .collect();
        for &t in &angles[1..pieces] {
            let u = [t.cos(), t.sin()];
            caps.push(Halfspace {
                a: u.to_vec(),
                b: u[0] * v[0] + u[1] * v[1] + eps,
            });
        }
        for w in angles.windows(2) {
            let (ua, ub) = ([w[0].cos(), w[0].sin()], [w[1].cos(), w[1].sin()]);
            let s = eps / (1.0 + ua[0] * ub[0] + ua[1] * ub[1]);
            verts.push(vec![v[0] + s * (ua[0] + ub[0]), v[1] + s * (ua[1] + ub[1])]);
        }
    }
    (caps, verts)
}
