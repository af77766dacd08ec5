//! Quickhull in general dimension.

use std::collections::{BTreeMap, VecDeque};

use tracing::debug;

use super::{dot, norm, GeometryError, Halfspace, Polytope};

/// Largest dimension for which exact hulls are attempted.
pub const HULL_DIM_LIMIT: usize = 6;
/// Abort once this many facets are alive at the same time.
pub const FACET_LIMIT: usize = 200_000;

struct Facet {
    verts: Vec<usize>,
    normal: Vec<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Facet {
    fn distance(&self, p: &[f64]) -> f64 {
        dot(&self.normal, p) - self.offset
    }
}

/// Exact convex hull; the V-representation holds extreme points only and the
/// H-representation one halfspace per distinct facet hyperplane.
pub fn convex_hull(points: &[Vec<f64>]) -> Result<Polytope, GeometryError> {
    let Some(d) = points.first().map(Vec::len) else {
        return Err(GeometryError::Degenerate { rank: 0, dim: 0 });
    };
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(GeometryError::DimensionMismatch {
            expected: d,
            found: p.len(),
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidArgument("non-finite coordinate".into()));
    }
    if d == 0 {
        return Err(GeometryError::Degenerate { rank: 0, dim: 0 });
    }
    if d > HULL_DIM_LIMIT {
        return Err(GeometryError::UnsupportedDimension {
            dim: d,
            limit: HULL_DIM_LIMIT,
        });
    }
    if d == 1 {
        return hull_1d(points);
    }

    let scale = points
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let eps = 1e-10 * scale;

    let simplex = initial_simplex(points, eps)?;
    let interior: Vec<f64> = (0..d)
        .map(|i| simplex.iter().map(|&k| points[k][i]).sum::<f64>() / (d + 1) as f64)
        .collect();

    let mut hull = Builder {
        points,
        d,
        eps,
        interior,
        facets: Vec::new(),
        ridges: BTreeMap::new(),
        alive: 0,
    };
    for skip in 0..=d {
        let verts: Vec<usize> = simplex
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != skip)
            .map(|(_, &k)| k)
            .collect();
        hull.add_facet(verts)?;
    }
    let initial: Vec<usize> = (0..hull.facets.len()).collect();
    let mut in_simplex = vec![false; points.len()];
    for &k in &simplex {
        in_simplex[k] = true;
    }
    let candidates: Vec<usize> = (0..points.len()).filter(|&i| !in_simplex[i]).collect();
    hull.assign(&candidates, &initial);

    let mut cursor = 0;
    loop {
        // lowest-index live facet with a non-empty outside set
        while cursor < hull.facets.len()
            && (!hull.facets[cursor].alive || hull.facets[cursor].outside.is_empty())
        {
            cursor += 1;
        }
        if cursor >= hull.facets.len() {
            break;
        }
        let f = cursor;
        let apex = {
            let facet = &hull.facets[f];
            *facet
                .outside
                .iter()
                .max_by(|&&a, &&b| {
                    facet
                        .distance(&points[a])
                        .total_cmp(&facet.distance(&points[b]))
                        .then(b.cmp(&a))
                })
                .expect("non-empty outside set")
        };
        hull.add_point(f, apex)?;
        cursor = 0;
    }

    let live: Vec<&Facet> = hull.facets.iter().filter(|f| f.alive).collect();
    let mut vert_ids: Vec<usize> = live.iter().flat_map(|f| f.verts.iter().copied()).collect();
    vert_ids.sort_unstable();
    vert_ids.dedup();
    let vertices = vert_ids.iter().map(|&i| points[i].clone()).collect();

    // merge coplanar facets
    let mut halfspaces: Vec<Halfspace> = Vec::new();
    for f in live {
        let dup = halfspaces.iter().any(|h| {
            (h.b - f.offset).abs() <= 1e-9 * (1.0 + scale)
                && h.a.iter().zip(&f.normal).all(|(x, y)| (x - y).abs() <= 1e-9)
        });
        if !dup {
            halfspaces.push(Halfspace {
                a: f.normal.clone(),
                b: f.offset,
            });
        }
    }
    debug!(
        dim = d,
        points = points.len(),
        vertices = vert_ids.len(),
        facets = halfspaces.len(),
        "convex hull"
    );
    let mut poly = Polytope::from_halfspaces(d, halfspaces)?;
    poly.vertices = vertices;
    poly.refresh_id();
    Ok(poly)
}

fn hull_1d(points: &[Vec<f64>]) -> Result<Polytope, GeometryError> {
    let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-10 * lo.abs().max(hi.abs()).max(1e-300)) {
        return Err(GeometryError::Degenerate { rank: 0, dim: 1 });
    }
    let mut p = Polytope::from_box(&[lo], &[hi])?;
    p.vertices = vec![vec![lo], vec![hi]];
    Ok(p)
}

/// Greedy maximal-volume simplex: start from the lowest first coordinate,
/// then repeatedly take the point farthest from the current affine span.
fn initial_simplex(points: &[Vec<f64>], eps: f64) -> Result<Vec<usize>, GeometryError> {
    let d = points[0].len();
    let first = (0..points.len())
        .min_by(|&a, &b| points[a][0].total_cmp(&points[b][0]).then(a.cmp(&b)))
        .expect("non-empty");
    let origin = &points[first];
    let mut chosen = vec![first];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for rank in 0..d {
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for (i, p) in points.iter().enumerate() {
            let mut r: Vec<f64> = p.iter().zip(origin).map(|(a, b)| a - b).collect();
            for q in &basis {
                let c = dot(&r, q);
                for (x, y) in r.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
            let dist = norm(&r);
            if best.as_ref().is_none_or(|(_, bd, _)| dist > *bd) {
                best = Some((i, dist, r));
            }
        }
        let (i, dist, r) = best.expect("non-empty");
        if dist <= eps * 10.0 {
            return Err(GeometryError::Degenerate { rank, dim: d });
        }
        // second Gram-Schmidt pass for orthogonality
        let mut r: Vec<f64> = r.iter().map(|x| x / dist).collect();
        for q in &basis {
            let c = dot(&r, q);
            for (x, y) in r.iter_mut().zip(q) {
                *x -= c * y;
            }
        }
        let n = norm(&r);
        basis.push(r.into_iter().map(|x| x / n).collect());
        chosen.push(i);
    }
    Ok(chosen)
}

struct Builder<'a> {
    points: &'a [Vec<f64>],
    d: usize,
    eps: f64,
    interior: Vec<f64>,
    facets: Vec<Facet>,
    ridges: BTreeMap<Vec<usize>, Vec<usize>>,
    alive: usize,
}

impl Builder<'_> {
    fn add_facet(&mut self, mut verts: Vec<usize>) -> Result<usize, GeometryError> {
        verts.sort_unstable();
        let d = self.d;
        let base = &self.points[verts[0]];
        let edges: Vec<Vec<f64>> = verts[1..]
            .iter()
            .map(|&k| self.points[k].iter().zip(base).map(|(a, b)| a - b).collect())
            .collect();
        let mut normal = hyperplane_normal(&edges, d);
        let n = norm(&normal);
        if n == 0.0 {
            return Err(GeometryError::Degenerate { rank: d - 1, dim: d });
        }
        for v in &mut normal {
            *v /= n;
        }
        let mut offset = dot(&normal, base);
        if dot(&normal, &self.interior) > offset {
            for v in &mut normal {
                *v = -*v;
            }
            offset = -offset;
        }
        let id = self.facets.len();
        for skip in 0..verts.len() {
            let ridge: Vec<usize> = verts
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &v)| v)
                .collect();
            self.ridges.entry(ridge).or_default().push(id);
        }
        self.facets.push(Facet {
            verts,
            normal,
            offset,
            outside: Vec::new(),
            alive: true,
        });
        self.alive += 1;
        if self.alive > FACET_LIMIT {
            return Err(GeometryError::TooManyFacets { limit: FACET_LIMIT });
        }
        Ok(id)
    }

    fn remove_facet(&mut self, id: usize) {
        let verts = self.facets[id].verts.clone();
        for skip in 0..verts.len() {
            let ridge: Vec<usize> = verts
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, &v)| v)
                .collect();
            if let Some(owners) = self.ridges.get_mut(&ridge) {
                owners.retain(|&f| f != id);
                if owners.is_empty() {
                    self.ridges.remove(&ridge);
                }
            }
        }
        self.facets[id].alive = false;
        self.facets[id].outside.clear();
        self.alive -= 1;
    }

    /// Gives each point to the facet it lies farthest outside of.
    fn assign(&mut self, pts: &[usize], facets: &[usize]) {
        for &p in pts {
            let mut best: Option<(usize, f64)> = None;
            for &f in facets {
                let dist = self.facets[f].distance(&self.points[p]);
                if dist > self.eps && best.is_none_or(|(_, bd)| dist > bd) {
                    best = Some((f, dist));
                }
            }
            if let Some((f, _)) = best {
                self.facets[f].outside.push(p);
            }
        }
    }

    fn add_point(&mut self, start: usize, apex: usize) -> Result<(), GeometryError> {
        let p = &self.points[apex];
        let mut visible = vec![start];
        let mut seen = std::collections::BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        let mut horizon: Vec<Vec<usize>> = Vec::new();
        while let Some(f) = queue.pop_front() {
            let verts = self.facets[f].verts.clone();
            for skip in 0..verts.len() {
                let ridge: Vec<usize> = verts
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != skip)
                    .map(|(_, &v)| v)
                    .collect();
                let Some(owners) = self.ridges.get(&ridge) else {
                    continue;
                };
                let Some(&nb) = owners.iter().find(|&&g| g != f) else {
                    continue;
                };
                if seen.contains(&nb) {
                    if !visible.contains(&nb) {
                        horizon.push(ridge);
                    }
                    continue;
                }
                if self.facets[nb].distance(p) > self.eps {
                    seen.insert(nb);
                    visible.push(nb);
                    queue.push_back(nb);
                } else {
                    seen.insert(nb);
                    horizon.push(ridge);
                }
            }
        }
        // A ridge reached from a visible facet to a hidden one may be pushed
        // twice when the hidden facet is met again; keep unique ridges whose
        // other owner is hidden.
        horizon.sort();
        horizon.dedup();
        let visible_set: std::collections::BTreeSet<usize> = visible.iter().copied().collect();
        horizon.retain(|r| {
            self.ridges
                .get(r)
                .is_some_and(|owners| owners.iter().any(|o| !visible_set.contains(o)))
        });

        let mut orphans: Vec<usize> = Vec::new();
        for &f in &visible {
            orphans.extend(self.facets[f].outside.iter().copied().filter(|&q| q != apex));
        }
        for &f in &visible {
            self.remove_facet(f);
        }
        let mut created = Vec::with_capacity(horizon.len());
        for ridge in horizon {
            let mut verts = ridge;
            verts.push(apex);
            created.push(self.add_facet(verts)?);
        }
        orphans.sort_unstable();
        orphans.dedup();
        self.assign(&orphans, &created);
        Ok(())
    }
}

/// Unit-free normal of the hyperplane spanned by `d - 1` edge vectors, via
/// signed cofactors.
fn hyperplane_normal(edges: &[Vec<f64>], d: usize) -> Vec<f64> {
    if d == 2 {
        return vec![edges[0][1], -edges[0][0]];
    }
    (0..d)
        .map(|col| {
            let minor: Vec<Vec<f64>> = edges
                .iter()
                .map(|e| {
                    e.iter()
                        .enumerate()
                        .filter(|&(j, _)| j != col)
                        .map(|(_, &v)| v)
                        .collect()
                })
                .collect();
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            sign * determinant(minor)
        })
        .collect()
}

fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .expect("non-empty");
        if m[piv][c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            m.swap(piv, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    det
}
