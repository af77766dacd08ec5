//! Dense two-phase simplex.
//!
//! The LPs that show up in this crate are small: polytope support queries,
//! Chebyshev centers and the per-node relaxations of branch-and-bound. Two
//! entry points are provided:
//!
//! * [`solve`] for general programs with `<=`, `=`, `>=` rows and optional
//!   variable bounds, and
//! * [`optimize_halfspaces`] for `max/min c·z s.t. A z <= b` with free `z`.
//!   Those programs typically have many rows and few columns, so they are
//!   solved through their dual (`d` equality rows, one column per halfspace)
//!   and the primal point is read back from the simplex multipliers.
//!
//! Pricing is Dantzig's rule; after a run of degenerate pivots the engine
//! switches permanently to Bland's rule, which makes every run deterministic
//! and cycle free.

use thiserror::Error;

use crate::geometry::{Halfspace, Polytope};

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-7;
/// Reduced-cost optimality tolerance.
pub const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self {
            coeffs,
            relation,
            rhs,
        }
    }
}

/// A linear program over `objective.len()` variables.
///
/// Variables without bounds (`variable_bounds == None`) are free. Infinite
/// entries in `variable_bounds` mean the side is unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub constraints: Vec<Constraint>,
    pub variable_bounds: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub point: Vec<f64>,
    /// Sensitivity of the optimal value to each constraint's right-hand side.
    ///
    /// For [`solve`] these are indexed like `constraints`; for
    /// [`optimize_halfspaces`] like the halfspace slice.
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("simplex iteration limit of {limit} reached (problem is ill-conditioned)")]
    IterationLimit { limit: usize },
    #[error("polytope is infeasible")]
    InfeasiblePolytope,
    #[error("objective is unbounded over the polytope")]
    UnboundedPolytope,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn check(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("non-finite objective coefficient".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::Malformed(format!(
                    "constraint {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if c.coeffs.iter().any(|v| !v.is_finite()) || !c.rhs.is_finite() {
                return Err(LpError::Malformed(format!("constraint {i} has a non-finite value")));
            }
        }
        if let Some(bounds) = &self.variable_bounds {
            if bounds.len() != n {
                return Err(LpError::Malformed(format!(
                    "{} variable bounds for {n} variables",
                    bounds.len()
                )));
            }
            for (j, &(lo, hi)) in bounds.iter().enumerate() {
                if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                    return Err(LpError::Malformed(format!("invalid bounds for variable {j}")));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Standard-form engine: min cost·x s.t. A x = b, x >= 0.

struct StandardForm {
    m: usize,
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    /// Column that equals `+e_r` in row r (a slack), if any.
    unit_col: Vec<Option<usize>>,
}

enum EngineResult {
    Optimal { x: Vec<f64>, value: f64, pi: Vec<f64>, basis: Vec<usize> },
    Infeasible,
    Unbounded,
}

struct Tableau {
    m: usize,
    width: usize, // columns incl. rhs
    rows: Vec<f64>,
    obj: Vec<f64>, // reduced costs, last entry = -objective value
    basis: Vec<usize>,
    iterations: usize,
    limit: usize,
}

enum RunStatus {
    Optimal,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.rows[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.rows[pr * w + pc];
        let inv = 1.0 / p;
        for v in &mut self.rows[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.rows[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.rows[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.m {
            if r == pr {
                continue;
            }
            let f = self.rows[r * w + pc];
            if f != 0.0 {
                let row = &mut self.rows[r * w..(r + 1) * w];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[pc] = 0.0;
            }
        }
        let f = self.obj[pc];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Recomputes the reduced-cost row for `cost` given the current basis.
    fn price(&mut self, cost: &[f64]) {
        let w = self.width;
        let mut obj = vec![0.0; w];
        obj[..cost.len()].copy_from_slice(cost);
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for (c, v) in obj.iter_mut().enumerate() {
                    *v -= cb * self.rows[r * w + c];
                }
            }
        }
        for r in 0..self.m {
            obj[self.basis[r]] = 0.0;
        }
        self.obj = obj;
    }

    fn run(&mut self, allowed: &[bool]) -> Result<RunStatus, LpError> {
        let ncols = self.width - 1;
        let mut bland = false;
        let mut degenerate_run = 0usize;
        loop {
            // entering column
            let mut enter = None;
            let mut best = -OPT_TOL;
            for c in 0..ncols {
                if !allowed[c] {
                    continue;
                }
                let d = self.obj[c];
                if bland {
                    if d < -OPT_TOL {
                        enter = Some(c);
                        break;
                    }
                } else if d < best {
                    best = d;
                    enter = Some(c);
                }
            }
            let Some(pc) = enter else {
                return Ok(RunStatus::Optimal);
            };
            // ratio test; ties broken by lowest basic variable index
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                            if ratio < lratio && !tie
                                || tie && self.basis[r] < self.basis[lr]
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return Ok(RunStatus::Unbounded);
            };
            self.iterations += 1;
            if self.iterations > self.limit {
                return Err(LpError::IterationLimit { limit: self.limit });
            }
            if ratio <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc);
        }
    }
}

fn run_standard_form(mut sf: StandardForm) -> Result<EngineResult, LpError> {
    let StandardForm { m, n, .. } = sf;
    let mut flip = vec![1.0; m];
    for r in 0..m {
        if sf.b[r] < 0.0 {
            flip[r] = -1.0;
            sf.b[r] = -sf.b[r];
            for v in &mut sf.a[r * n..(r + 1) * n] {
                *v = -*v;
            }
            sf.unit_col[r] = None;
        }
    }
    // Artificial columns for rows without a usable unit column.
    let mut unit = vec![0usize; m];
    let mut n_art = 0;
    for r in 0..m {
        match sf.unit_col[r] {
            Some(c) => unit[r] = c,
            None => {
                unit[r] = n + n_art;
                n_art += 1;
            }
        }
    }
    let ncols = n + n_art;
    let width = ncols + 1;
    let mut rows = vec![0.0; m * width];
    for r in 0..m {
        rows[r * width..r * width + n].copy_from_slice(&sf.a[r * n..(r + 1) * n]);
        if unit[r] >= n {
            rows[r * width + unit[r]] = 1.0;
        }
        rows[r * width + ncols] = sf.b[r];
    }
    let limit = (10 * (ncols + m) * (ncols + m)).max(1000);
    let mut tab = Tableau {
        m,
        width,
        rows,
        obj: vec![0.0; width],
        basis: unit.clone(),
        iterations: 0,
        limit,
    };

    if n_art > 0 {
        let mut phase1 = vec![0.0; ncols];
        for c in n..ncols {
            phase1[c] = 1.0;
        }
        tab.price(&phase1);
        let allowed = vec![true; ncols];
        tab.run(&allowed)?;
        let infeas: f64 = (0..m)
            .filter(|&r| tab.basis[r] >= n)
            .map(|r| tab.rhs(r))
            .sum();
        let scale = 1.0 + sf.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if infeas > FEAS_TOL * scale {
            return Ok(EngineResult::Infeasible);
        }
        // drive remaining artificials out of the basis
        for r in 0..m {
            if tab.basis[r] >= n {
                let mut best: Option<(usize, f64)> = None;
                for c in 0..n {
                    let v = tab.at(r, c).abs();
                    if v > 1e-9 && best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((c, v));
                    }
                }
                if let Some((c, _)) = best {
                    tab.pivot(r, c);
                }
            }
        }
    }

    let mut cost = sf.cost.clone();
    cost.resize(ncols, 0.0);
    tab.price(&cost);
    let mut allowed = vec![true; ncols];
    for a in allowed.iter_mut().skip(n) {
        *a = false;
    }
    match tab.run(&allowed)? {
        RunStatus::Unbounded => Ok(EngineResult::Unbounded),
        RunStatus::Optimal => {
            let mut x = vec![0.0; n];
            for r in 0..m {
                let c = tab.basis[r];
                if c < n {
                    x[c] = tab.rhs(r);
                }
            }
            let value: f64 = x.iter().zip(&sf.cost).map(|(a, b)| a * b).sum();
            let pi: Vec<f64> = (0..m)
                .map(|r| {
                    let u = unit[r];
                    flip[r] * (cost[u] - tab.obj[u])
                })
                .collect();
            Ok(EngineResult::Optimal {
                x,
                value,
                pi,
                basis: tab.basis.clone(),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// General programs.

enum VarMap {
    Shift { col: usize, lo: f64 },
    Reflect { col: usize, hi: f64 },
    Split { pos: usize, neg: usize },
}

/// Solves a general linear program.
///
/// Statuses are data; only malformed input or the iteration cap produce an
/// error.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    lp.check()?;
    let nv = lp.num_vars();
    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };

    // variable substitution
    let mut maps = Vec::with_capacity(nv);
    let mut ncol = 0;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..nv {
        let (lo, hi) = lp
            .variable_bounds
            .as_ref()
            .map(|b| b[j])
            .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        if lo.is_finite() {
            maps.push(VarMap::Shift { col: ncol, lo });
            if hi.is_finite() {
                upper_rows.push((ncol, hi - lo));
            }
            ncol += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Reflect { col: ncol, hi });
            ncol += 1;
        } else {
            maps.push(VarMap::Split { pos: ncol, neg: ncol + 1 });
            ncol += 2;
        }
    }

    let n_user = lp.constraints.len();
    let m = n_user + upper_rows.len();
    let n_slack = lp
        .constraints
        .iter()
        .filter(|c| c.relation != Relation::Eq)
        .count()
        + upper_rows.len();
    let n = ncol + n_slack;
    let mut a = vec![0.0; m * n];
    let mut b = vec![0.0; m];
    let mut unit_col = vec![None; m];
    let mut cost = vec![0.0; n];
    let mut obj_const = 0.0;

    for (j, map) in maps.iter().enumerate() {
        let c = sign * lp.objective[j];
        match *map {
            VarMap::Shift { col, lo } => {
                cost[col] += c;
                obj_const += c * lo;
            }
            VarMap::Reflect { col, hi } => {
                cost[col] -= c;
                obj_const += c * hi;
            }
            VarMap::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }

    let mut slack = ncol;
    for (r, con) in lp.constraints.iter().enumerate() {
        let row = &mut a[r * n..(r + 1) * n];
        let mut rhs = con.rhs;
        for (j, map) in maps.iter().enumerate() {
            let v = con.coeffs[j];
            if v == 0.0 {
                continue;
            }
            match *map {
                VarMap::Shift { col, lo } => {
                    row[col] += v;
                    rhs -= v * lo;
                }
                VarMap::Reflect { col, hi } => {
                    row[col] -= v;
                    rhs -= v * hi;
                }
                VarMap::Split { pos, neg } => {
                    row[pos] += v;
                    row[neg] -= v;
                }
            }
        }
        match con.relation {
            Relation::Le => {
                row[slack] = 1.0;
                unit_col[r] = Some(slack);
                slack += 1;
            }
            Relation::Ge => {
                row[slack] = -1.0;
                slack += 1;
            }
            Relation::Eq => {}
        }
        b[r] = rhs;
    }
    for (k, &(col, width)) in upper_rows.iter().enumerate() {
        let r = n_user + k;
        a[r * n + col] = 1.0;
        a[r * n + slack] = 1.0;
        unit_col[r] = Some(slack);
        slack += 1;
        b[r] = width;
    }

    let sf = StandardForm {
        m,
        n,
        a,
        b,
        cost,
        unit_col,
    };
    match run_standard_form(sf)? {
        EngineResult::Infeasible => Ok(LpOutcome::Infeasible),
        EngineResult::Unbounded => Ok(LpOutcome::Unbounded),
        EngineResult::Optimal { x, value, pi, .. } => {
            let point: Vec<f64> = maps
                .iter()
                .map(|map| match *map {
                    VarMap::Shift { col, lo } => lo + x[col],
                    VarMap::Reflect { col, hi } => hi - x[col],
                    VarMap::Split { pos, neg } => x[pos] - x[neg],
                })
                .collect();
            let duals = pi[..n_user].iter().map(|p| sign * p).collect();
            Ok(LpOutcome::Optimal(LpSolution {
                value: sign * (value + obj_const),
                point,
                duals,
            }))
        }
    }
}

// ---------------------------------------------------------------------------
// Halfspace programs, solved through the dual.

fn solve_dual(
    objective: &[f64],
    halfspaces: &[Halfspace],
) -> Result<Option<EngineResult>, LpError> {
    // max c·z s.t. A z <= b  <=>  min b·y s.t. Aᵀ y = c, y >= 0
    let d = objective.len();
    let mcols = halfspaces.len();
    let mut a = vec![0.0; d * mcols];
    for (i, h) in halfspaces.iter().enumerate() {
        if h.a.len() != d {
            return Err(LpError::Malformed(format!(
                "halfspace {i} has dimension {}, expected {d}",
                h.a.len()
            )));
        }
        for (j, &v) in h.a.iter().enumerate() {
            a[j * mcols + i] = v;
        }
    }
    let sf = StandardForm {
        m: d,
        n: mcols,
        a,
        b: objective.to_vec(),
        cost: halfspaces.iter().map(|h| h.b).collect(),
        unit_col: vec![None; d],
    };
    Ok(Some(run_standard_form(sf)?))
}

/// Optimizes `c·z` over `{z : a_i·z <= b_i}` with `z` free.
pub fn optimize_halfspaces(
    c: &[f64],
    halfspaces: &[Halfspace],
    sense: Sense,
) -> Result<LpOutcome, LpError> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(LpError::Malformed("non-finite objective coefficient".into()));
    }
    let sign = match sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let obj: Vec<f64> = c.iter().map(|v| sign * v).collect();
    let result = solve_dual(&obj, halfspaces)?.expect("dual engine result");
    match result {
        EngineResult::Optimal { x, value, pi, basis } => {
            let point = polish_point(pi, &basis, halfspaces);
            Ok(LpOutcome::Optimal(LpSolution {
                value: sign * value,
                point,
                duals: x,
            }))
        }
        // dual unbounded below => primal infeasible
        EngineResult::Unbounded => Ok(LpOutcome::Infeasible),
        EngineResult::Infeasible => match chebyshev_center(halfspaces)? {
            Some(_) => Ok(LpOutcome::Unbounded),
            None => Ok(LpOutcome::Infeasible),
        },
    }
}

/// Re-solves the active constraints of a full structural basis for a more
/// accurate primal point; falls back to the multipliers otherwise.
fn polish_point(pi: Vec<f64>, basis: &[usize], halfspaces: &[Halfspace]) -> Vec<f64> {
    let d = pi.len();
    if d == 0 || basis.iter().any(|&c| c >= halfspaces.len()) {
        return pi;
    }
    let mut m: Vec<Vec<f64>> = basis
        .iter()
        .map(|&c| {
            let mut row = halfspaces[c].a.clone();
            row.push(halfspaces[c].b);
            row
        })
        .collect();
    match solve_dense(&mut m) {
        Some(z) if z.iter().all(|v| v.is_finite()) => {
            let worst = |p: &[f64]| {
                halfspaces
                    .iter()
                    .map(|h| h.eval(p) - h.b)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            if worst(&z) <= worst(&pi).max(0.0) + 1e-12 {
                z
            } else {
                pi
            }
        }
        _ => pi,
    }
}

/// Gaussian elimination with partial pivoting on an augmented `d × (d+1)`
/// matrix. Returns `None` when singular.
pub(crate) fn solve_dense(m: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let d = m.len();
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        for r in col + 1..d {
            let f = m[r][col] / m[col][col];
            if f != 0.0 {
                for c in col..=d {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; d];
    for r in (0..d).rev() {
        let mut s = m[r][d];
        for c in r + 1..d {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

/// Center and radius of the largest inscribed L2 ball, or `None` when the
/// halfspaces have no common point. A zero radius means the set is
/// lower-dimensional but non-empty.
pub fn chebyshev_center(halfspaces: &[Halfspace]) -> Result<Option<(Vec<f64>, f64)>, LpError> {
    let Some(d) = halfspaces.first().map(|h| h.a.len()) else {
        return Err(LpError::Malformed("no halfspaces".into()));
    };
    let mut rows: Vec<Halfspace> = halfspaces
        .iter()
        .map(|h| {
            let mut a = h.a.clone();
            a.push(h.norm());
            Halfspace { a, b: h.b }
        })
        .collect();
    let mut cap = vec![0.0; d + 1];
    cap[d] = 1.0;
    rows.push(Halfspace { a: cap, b: 1e9 });
    let mut c = vec![0.0; d + 1];
    c[d] = 1.0;
    let result = solve_dual(&c, &rows)?.expect("dual engine result");
    match result {
        EngineResult::Optimal { value, pi, basis, .. } => {
            let point = polish_point(pi, &basis, &rows);
            let r = value;
            if r < -FEAS_TOL {
                return Ok(None);
            }
            let center = point[..d].to_vec();
            // verify against the original system
            let worst = halfspaces
                .iter()
                .map(|h| h.eval(&center) - h.b)
                .fold(f64::NEG_INFINITY, f64::max);
            if worst > FEAS_TOL {
                return Ok(None);
            }
            Ok(Some((center, r.max(0.0))))
        }
        _ => Ok(None),
    }
}

/// Phase-1 style feasibility check with a witness point.
pub fn feasible(halfspaces: &[Halfspace]) -> Result<(bool, Option<Vec<f64>>), LpError> {
    Ok(match chebyshev_center(halfspaces)? {
        Some((c, _)) => (true, Some(c)),
        None => (false, None),
    })
}

/// Exact min/max of `c·z` over the polytope's H-representation.
///
/// A zero objective returns value 0 at the Chebyshev center.
pub fn optimize_linear(c: &[f64], poly: &Polytope, sense: Sense) -> Result<(f64, Vec<f64>), LpError> {
    if c.len() != poly.dim {
        return Err(LpError::Malformed(format!(
            "objective has dimension {}, polytope has {}",
            c.len(),
            poly.dim
        )));
    }
    if c.iter().all(|&v| v == 0.0) {
        return match chebyshev_center(&poly.halfspaces)? {
            Some((center, _)) => Ok((0.0, center)),
            None => Err(LpError::InfeasiblePolytope),
        };
    }
    match optimize_halfspaces(c, &poly.halfspaces, sense)? {
        LpOutcome::Optimal(s) => Ok((s.value, s.point)),
        LpOutcome::Infeasible => Err(LpError::InfeasiblePolytope),
        LpOutcome::Unbounded => Err(LpError::UnboundedPolytope),
    }
}
