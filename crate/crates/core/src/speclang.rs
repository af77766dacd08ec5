//! Output specifications over latent polytopes.
//!
//! Specs can be built directly, read from the `ALWAYS ... IMPLIES ...`
//! surface syntax, or exchanged as a conjunctive subset of VNN-LIB:
//!
//! ```text
//! (declare-const X_0 Real)
//! (declare-const Y_0 Real)
//! (assert (<= (+ (* 0.5 X_0) (* -1.0 X_1)) 0.3))
//! (assert (<= Y_0 0.0))
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Halfspace, Polytope, UNBOUNDED};

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: unsupported feature: {feature}")]
    Unsupported {
        line: usize,
        column: usize,
        feature: String,
    },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SpecKind {
    /// One-sided output constraint.
    Safety,
    /// Two-sided output interval.
    Performance,
}

impl fmt::Display for SpecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpecKind::Safety => "SAFETY",
            SpecKind::Performance => "PERFORMANCE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Negative,
    Positive,
}

/// `z ∈ polytope ⟹ output_j ∈ [lo_j, hi_j]` for every output `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spec {
    pub id: String,
    pub kind: SpecKind,
    /// Polytope id or path, resolved by the caller.
    pub polytope_ref: String,
    /// One `[lo, hi]` per output; ±1e30 marks an open side.
    pub output_interval: Vec<(f64, f64)>,
    #[serde(default)]
    pub description: String,
}

fn kind_of(lo: f64, hi: f64) -> SpecKind {
    if lo <= -UNBOUNDED || hi >= UNBOUNDED {
        SpecKind::Safety
    } else {
        SpecKind::Performance
    }
}

fn fmt_bound(v: f64) -> String {
    if v >= UNBOUNDED {
        "inf".into()
    } else if v <= -UNBOUNDED {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// `output <= 0` for [`Sign::Negative`], `output >= 0` for [`Sign::Positive`].
pub fn build_safety_spec(sign: Sign, polytope_ref: &str) -> Spec {
    let (interval, description) = match sign {
        Sign::Negative => ((-UNBOUNDED, 0.0), "output <= 0"),
        Sign::Positive => ((0.0, UNBOUNDED), "output >= 0"),
    };
    Spec {
        id: format!("safety_{}_{}", if sign == Sign::Negative { "neg" } else { "pos" }, polytope_ref),
        kind: SpecKind::Safety,
        polytope_ref: polytope_ref.to_string(),
        output_interval: vec![interval],
        description: description.to_string(),
    }
}

pub fn build_performance_spec(lo: f64, hi: f64, polytope_ref: &str) -> Result<Spec, SpecError> {
    if !(lo <= hi) {
        return Err(SpecError::InvalidInterval { lo, hi });
    }
    Ok(Spec {
        id: format!("performance_{lo}_{hi}_{polytope_ref}"),
        kind: kind_of(lo, hi),
        polytope_ref: polytope_ref.to_string(),
        output_interval: vec![(lo, hi)],
        description: format!("{} <= output <= {}", fmt_bound(lo), fmt_bound(hi)),
    })
}

// ---------------------------------------------------------------------------
// s-expressions

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom { text: String, line: usize, column: usize },
    List { items: Vec<Sexp>, line: usize, column: usize },
}

impl Sexp {
    fn pos(&self) -> (usize, usize) {
        match self {
            Sexp::Atom { line, column, .. } | Sexp::List { line, column, .. } => (*line, *column),
        }
    }
}

fn syntax(pos: (usize, usize), message: impl Into<String>) -> SpecError {
    SpecError::Syntax {
        line: pos.0,
        column: pos.1,
        message: message.into(),
    }
}

fn unsupported(pos: (usize, usize), feature: impl Into<String>) -> SpecError {
    SpecError::Unsupported {
        line: pos.0,
        column: pos.1,
        feature: feature.into(),
    }
}

fn parse_sexps(text: &str) -> Result<Vec<Sexp>, SpecError> {
    let mut stack: Vec<(Vec<Sexp>, usize, usize)> = vec![(Vec::new(), 0, 0)];
    let mut chars = text.chars().peekable();
    let (mut line, mut column) = (1usize, 0usize);
    while let Some(c) = chars.next() {
        column += 1;
        match c {
            '\n' => {
                line += 1;
                column = 0;
            }
            ';' => {
                while chars.peek().is_some_and(|&c| c != '\n') {
                    chars.next();
                }
            }
            '(' => stack.push((Vec::new(), line, column)),
            ')' => {
                if stack.len() == 1 {
                    return Err(syntax((line, column), "unbalanced ')'"));
                }
                let (items, l, col) = stack.pop().expect("non-empty stack");
                stack.last_mut().expect("root").0.push(Sexp::List {
                    items,
                    line: l,
                    column: col,
                });
            }
            c if c.is_whitespace() => {}
            c => {
                let start = column;
                let mut text = String::from(c);
                while let Some(&n) = chars.peek() {
                    if n.is_whitespace() || n == '(' || n == ')' || n == ';' {
                        break;
                    }
                    text.push(n);
                    chars.next();
                    column += 1;
                }
                stack.last_mut().expect("root").0.push(Sexp::Atom {
                    text,
                    line,
                    column: start,
                });
            }
        }
    }
    if stack.len() != 1 {
        let (_, l, c) = stack.pop().expect("open list");
        return Err(syntax((l, c), "unclosed '('"));
    }
    Ok(stack.pop().expect("root").0)
}

// ---------------------------------------------------------------------------
// VNN-LIB

/// Input constraints and output interval read from a VNN-LIB property.
#[derive(Debug, Clone, PartialEq)]
pub struct VnnProperty {
    pub input_dim: usize,
    pub halfspaces: Vec<Halfspace>,
    /// One entry per declared output; sides without an assert are ±1e30.
    pub output_interval: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Var {
    X(usize),
    Y(usize),
}

fn parse_var(s: &str) -> Option<Var> {
    if let Some(k) = s.strip_prefix("X_") {
        return k.parse().ok().map(Var::X);
    }
    if let Some(k) = s.strip_prefix("Y_") {
        return k.parse().ok().map(Var::Y);
    }
    None
}

fn parse_number(e: &Sexp) -> Option<f64> {
    match e {
        Sexp::Atom { text, .. } => text.parse::<f64>().ok().filter(|v| v.is_finite()),
        Sexp::List { items, .. } => match items.as_slice() {
            [Sexp::Atom { text, .. }, inner] if text == "-" => parse_number(inner).map(|v| -v),
            _ => None,
        },
    }
}

/// Accumulates `coeff·var` terms of a linear expression.
fn parse_linexpr(
    e: &Sexp,
    scale: f64,
    declared: &BTreeMap<Var, ()>,
    terms: &mut BTreeMap<Var, f64>,
) -> Result<(), SpecError> {
    match e {
        Sexp::Atom { text, .. } => {
            let var = parse_var(text).ok_or_else(|| syntax(e.pos(), format!("unknown symbol '{text}'")))?;
            if !declared.contains_key(&var) {
                return Err(syntax(e.pos(), format!("undeclared variable '{text}'")));
            }
            *terms.entry(var).or_insert(0.0) += scale;
            Ok(())
        }
        Sexp::List { items, .. } => {
            let Some(Sexp::Atom { text: op, .. }) = items.first() else {
                return Err(syntax(e.pos(), "expected an operator"));
            };
            match op.as_str() {
                "+" if items.len() >= 2 => {
                    for it in &items[1..] {
                        parse_linexpr(it, scale, declared, terms)?;
                    }
                    Ok(())
                }
                "*" if items.len() == 3 => {
                    let (c, var) = match (parse_number(&items[1]), parse_number(&items[2])) {
                        (Some(c), None) => (c, &items[2]),
                        (None, Some(c)) => (c, &items[1]),
                        _ => return Err(unsupported(e.pos(), "non-linear term")),
                    };
                    if matches!(var, Sexp::List { .. }) {
                        return Err(unsupported(var.pos(), "non-linear term"));
                    }
                    parse_linexpr(var, scale * c, declared, terms)
                }
                "or" => Err(unsupported(e.pos(), "disjunction ('or')")),
                "-" | "/" => Err(unsupported(e.pos(), format!("operator '{op}'"))),
                _ => Err(unsupported(e.pos(), format!("operator '{op}'"))),
            }
        }
    }
}

/// Parses the conjunctive VNN-LIB subset.
pub fn parse_vnnlib(text: &str) -> Result<VnnProperty, SpecError> {
    let forms = parse_sexps(text)?;
    let mut declared = BTreeMap::new();
    let mut rows: Vec<(BTreeMap<Var, f64>, f64, (usize, usize))> = Vec::new();
    for form in &forms {
        let Sexp::List { items, .. } = form else {
            return Err(syntax(form.pos(), "expected a command"));
        };
        let Some(Sexp::Atom { text: cmd, .. }) = items.first() else {
            return Err(syntax(form.pos(), "expected a command"));
        };
        match cmd.as_str() {
            "declare-const" => {
                let [_, Sexp::Atom { text: name, .. }, Sexp::Atom { text: ty, .. }] = items.as_slice() else {
                    return Err(syntax(form.pos(), "expected (declare-const NAME Real)"));
                };
                if ty != "Real" {
                    return Err(unsupported(form.pos(), format!("sort '{ty}'")));
                }
                let var = parse_var(name)
                    .ok_or_else(|| syntax(form.pos(), format!("variable '{name}' is not X_k or Y_k")))?;
                declared.insert(var, ());
            }
            "assert" => {
                let [_, body] = items.as_slice() else {
                    return Err(syntax(form.pos(), "expected (assert EXPR)"));
                };
                let conjuncts: Vec<&Sexp> = match body {
                    Sexp::List { items: b, .. }
                        if matches!(b.first(), Some(Sexp::Atom { text, .. }) if text == "and") =>
                    {
                        b[1..].iter().collect()
                    }
                    _ => vec![body],
                };
                for c in conjuncts {
                    rows.push(parse_comparison(c, &declared)?);
                }
            }
            other => return Err(unsupported(form.pos(), format!("command '{other}'"))),
        }
    }

    let input_dim = declared.keys().filter(|v| matches!(v, Var::X(_))).count();
    let output_dim = declared.keys().filter(|v| matches!(v, Var::Y(_))).count();
    for (kind, n) in [("X", input_dim), ("Y", output_dim)] {
        for k in 0..n {
            let v = if kind == "X" { Var::X(k) } else { Var::Y(k) };
            if !declared.contains_key(&v) {
                return Err(syntax((1, 1), format!("variables {kind}_0..{kind}_{} are not contiguous", n - 1)));
            }
        }
    }

    let mut halfspaces = Vec::new();
    let mut output_interval = vec![(-UNBOUNDED, UNBOUNDED); output_dim];
    for (terms, rhs, pos) in rows {
        let has_x = terms.keys().any(|v| matches!(v, Var::X(_)));
        let has_y = terms.keys().any(|v| matches!(v, Var::Y(_)));
        if has_x && has_y {
            return Err(unsupported(pos, "constraint mixing inputs and outputs"));
        }
        if has_y {
            let [(Var::Y(j), c)] = terms.iter().map(|(v, c)| (*v, *c)).collect::<Vec<_>>()[..] else {
                return Err(unsupported(pos, "output constraint over several outputs"));
            };
            if c == 0.0 {
                continue;
            }
            let bound = rhs / c;
            let (lo, hi) = &mut output_interval[j];
            if c > 0.0 {
                *hi = hi.min(bound);
            } else {
                *lo = lo.max(bound);
            }
        } else {
            let mut a = vec![0.0; input_dim];
            for (v, c) in terms {
                if let Var::X(k) = v {
                    a[k] = c;
                }
            }
            if a.iter().all(|v| *v == 0.0) {
                if rhs < 0.0 {
                    return Err(syntax(pos, "constant constraint is never satisfied"));
                }
                continue;
            }
            halfspaces.push(Halfspace { a, b: rhs });
        }
    }
    Ok(VnnProperty {
        input_dim,
        halfspaces,
        output_interval,
    })
}

/// `(<= e c)` or `(>= e c)` as `terms <= rhs`.
fn parse_comparison(
    e: &Sexp,
    declared: &BTreeMap<Var, ()>,
) -> Result<(BTreeMap<Var, f64>, f64, (usize, usize)), SpecError> {
    let Sexp::List { items, .. } = e else {
        return Err(syntax(e.pos(), "expected a comparison"));
    };
    let Some(Sexp::Atom { text: op, .. }) = items.first() else {
        return Err(syntax(e.pos(), "expected a comparison"));
    };
    let sign = match op.as_str() {
        "<=" => 1.0,
        ">=" => -1.0,
        "or" => return Err(unsupported(e.pos(), "disjunction ('or')")),
        "<" | ">" | "=" => return Err(unsupported(e.pos(), format!("comparison '{op}'"))),
        _ => return Err(unsupported(e.pos(), format!("operator '{op}'"))),
    };
    if items.len() != 3 {
        return Err(syntax(e.pos(), format!("'{op}' takes two arguments")));
    }
    let mut terms = BTreeMap::new();
    let rhs = if let Some(c) = parse_number(&items[2]) {
        parse_linexpr(&items[1], sign, declared, &mut terms)?;
        sign * c
    } else if let Some(c) = parse_number(&items[1]) {
        parse_linexpr(&items[2], -sign, declared, &mut terms)?;
        -sign * c
    } else {
        return Err(unsupported(e.pos(), "comparison without a constant side"));
    };
    Ok((terms, rhs, e.pos()))
}

/// Writes the spec as VNN-LIB with one linear assert per halfspace.
pub fn emit_vnnlib(spec: &Spec, poly: &Polytope) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "; spec {} ({})", spec.id, spec.kind);
    let _ = writeln!(out, "; polytope {}", poly.id);
    for k in 0..poly.dim {
        let _ = writeln!(out, "(declare-const X_{k} Real)");
    }
    for j in 0..spec.output_interval.len() {
        let _ = writeln!(out, "(declare-const Y_{j} Real)");
    }
    for h in &poly.halfspaces {
        let terms: Vec<String> = h
            .a
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| format!("(* {c:?} X_{k})"))
            .collect();
        let _ = writeln!(out, "(assert (<= (+ {}) {:?}))", terms.join(" "), h.b);
    }
    for (j, &(lo, hi)) in spec.output_interval.iter().enumerate() {
        if lo > -UNBOUNDED {
            let _ = writeln!(out, "(assert (>= Y_{j} {lo:?}))");
        }
        if hi < UNBOUNDED {
            let _ = writeln!(out, "(assert (<= Y_{j} {hi:?}))");
        }
    }
    out
}

// ---------------------------------------------------------------------------
// surface syntax

fn surface_tokens(text: &str) -> Result<Vec<(String, usize)>, SpecError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || "()[],".contains(c) {
            if !cur.is_empty() {
                out.push((std::mem::take(&mut cur), start + 1));
            }
            if !c.is_whitespace() {
                out.push((c.to_string(), i + 1));
            }
        } else {
            if cur.is_empty() {
                start = i;
            }
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push((cur, start + 1));
    }
    Ok(out)
}

fn surface_bound(tok: &str, column: usize) -> Result<f64, SpecError> {
    let v = match tok.to_ascii_lowercase().as_str() {
        "inf" | "+inf" => UNBOUNDED,
        "-inf" => -UNBOUNDED,
        _ => tok
            .parse::<f64>()
            .map_err(|_| syntax((1, column), format!("invalid bound '{tok}'")))?,
    };
    if !v.is_finite() {
        return Err(syntax((1, column), format!("invalid bound '{tok}'")));
    }
    Ok(v.clamp(-UNBOUNDED, UNBOUNDED))
}

/// Parses `ALWAYS (z IN <poly-id>) IMPLIES (output IN [lo, hi])`.
///
/// `inf` and `-inf` are accepted for open sides; values at or beyond 1e30
/// are treated the same way.
pub fn parse_surface(text: &str) -> Result<Spec, SpecError> {
    let toks = surface_tokens(text.trim())?;
    let temporal = ["EVENTUALLY", "NEXT", "UNTIL", "RELEASE", "F", "G", "X", "U", "<>", "[]"];
    if let Some((t, col)) = toks.iter().find(|(t, _)| temporal.contains(&t.as_str())) {
        return Err(unsupported((1, *col), format!("temporal operator '{t}' (only ALWAYS is supported)")));
    }
    let expect = ["ALWAYS", "(", "z", "IN", "", ")", "IMPLIES", "(", "output", "IN", "[", "", ",", "", "]", ")"];
    if toks.len() != expect.len() {
        let col = toks.get(toks.len().min(expect.len()).saturating_sub(1)).map_or(1, |t| t.1);
        return Err(syntax(
            (1, col),
            "expected ALWAYS (z IN <poly-id>) IMPLIES (output IN [lo, hi])",
        ));
    }
    for (i, (want, (got, col))) in expect.iter().zip(&toks).enumerate() {
        if !want.is_empty() && !got.eq_ignore_ascii_case(want) {
            return Err(syntax((1, *col), format!("expected '{want}', found '{got}' (token {})", i + 1)));
        }
    }
    let poly_ref = toks[4].0.clone();
    let lo = surface_bound(&toks[11].0, toks[11].1)?;
    let hi = surface_bound(&toks[13].0, toks[13].1)?;
    if !(lo <= hi) {
        return Err(SpecError::InvalidInterval { lo, hi });
    }
    Ok(Spec {
        id: format!("always_{poly_ref}"),
        kind: kind_of(lo, hi),
        polytope_ref: poly_ref,
        output_interval: vec![(lo, hi)],
        description: text.trim().to_string(),
    })
}

/// Renders a single-output spec in the surface syntax.
pub fn emit_surface(spec: &Spec) -> String {
    let (lo, hi) = spec.output_interval.first().copied().unwrap_or((-UNBOUNDED, UNBOUNDED));
    format!(
        "ALWAYS (z IN {}) IMPLIES (output IN [{}, {}])",
        spec.polytope_ref,
        fmt_bound(lo),
        fmt_bound(hi)
    )
}

// ---------------------------------------------------------------------------
// manifest

/// One manifest row; exactly one of `surface`, `vnnlib` or `interval` gives
/// the output constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SpecKind>,
    /// Inline surface-syntax text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
    /// Path to a VNN-LIB file; its input asserts are ignored in favour of
    /// the polytope file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vnnlib: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
    pub polytope: PathBuf,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpecManifest {
    pub specs: Vec<ManifestEntry>,
}

impl SpecManifest {
    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        serde_json::from_str(text).map_err(|e| SpecError::Manifest(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

impl ManifestEntry {
    /// Builds the spec; relative paths are resolved against `base`.
    pub fn to_spec(&self, base: &Path) -> Result<Spec, SpecError> {
        let poly_ref = base.join(&self.polytope).display().to_string();
        let sources = [self.surface.is_some(), self.vnnlib.is_some(), self.interval.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(SpecError::Manifest(format!(
                "spec '{}' needs exactly one of surface, vnnlib or interval",
                self.id
            )));
        }
        let output_interval = if let Some(text) = &self.surface {
            parse_surface(text)?.output_interval
        } else if let Some(path) = &self.vnnlib {
            let path = base.join(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| SpecError::Manifest(format!("{}: {e}", path.display())))?;
            parse_vnnlib(&text)?.output_interval
        } else {
            let (lo, hi) = self.interval.expect("checked above");
            if !(lo <= hi) {
                return Err(SpecError::InvalidInterval { lo, hi });
            }
            vec![(lo, hi)]
        };
        let inferred = if output_interval.iter().all(|&(lo, hi)| kind_of(lo, hi) == SpecKind::Performance) {
            SpecKind::Performance
        } else {
            SpecKind::Safety
        };
        Ok(Spec {
            id: self.id.clone(),
            kind: self.kind.unwrap_or(inferred),
            polytope_ref: poly_ref,
            output_interval,
            description: self.description.clone(),
        })
    }
}
