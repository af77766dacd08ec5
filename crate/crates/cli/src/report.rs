//! Plain-text tables for the terminal.

use std::fmt::Write as _;

use latent_verify::geometry::UNBOUNDED;
use latent_verify::speclang::SpecKind;
use latent_verify::verifier::VerificationResult;

pub fn fmt_bound(v: f64) -> String {
    if v >= UNBOUNDED {
        "inf".into()
    } else if v <= -UNBOUNDED {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    if parts.len() == 1 {
        parts[0].clone()
    } else {
        format!("[{}]", parts.join(", "))
    }
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}", w = *w))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

pub fn verify_table(results: &[VerificationResult], kinds: &[SpecKind]) -> String {
    let header = ["spec", "kind", "status", "paper", "lower", "upper", "method", "time_s", "subproblems"];
    let rows: Vec<Vec<String>> = results
        .iter()
        .zip(kinds)
        .map(|(r, k)| {
            vec![
                r.spec_id.clone(),
                k.to_string(),
                r.status.to_string(),
                r.paper_status.clone(),
                fmt_vec(&r.lower),
                fmt_vec(&r.upper),
                r.method.to_string(),
                format!("{:.3}", r.wall_time_s),
                r.subproblems.to_string(),
            ]
        })
        .collect();
    let mut out = render(&header, &rows);
    for r in results {
        if let Some(c) = &r.counterexample {
            let _ = writeln!(out, "witness for {}: z = {:?} ({})", r.spec_id, c.z, c.violated_constraint);
        }
    }
    out
}

pub fn baseline_table(
    pixel: &VerificationResult,
    latent: Option<&VerificationResult>,
    pixel_dim: usize,
    latent_dim: Option<usize>,
) -> String {
    let header = ["run", "input_dim", "status", "lower", "upper", "time_s"];
    let mut rows = vec![vec![
        "pixel box".to_string(),
        pixel_dim.to_string(),
        pixel.status.to_string(),
        fmt_vec(&pixel.lower),
        fmt_vec(&pixel.upper),
        format!("{:.4}", pixel.wall_time_s),
    ]];
    if let Some(l) = latent {
        rows.push(vec![
            "latent polytope".to_string(),
            latent_dim.map_or("-".into(), |d| d.to_string()),
            l.status.to_string(),
            fmt_vec(&l.lower),
            fmt_vec(&l.upper),
            format!("{:.4}", l.wall_time_s),
        ]);
    }
    let mut out = render(&header, &rows);
    if let Some(d) = latent_dim {
        let _ = writeln!(out, "input-dimension ratio (pixel / latent): {:.1}", pixel_dim as f64 / d as f64);
    }
    if let Some(l) = latent {
        if l.wall_time_s > 0.0 {
            let _ = writeln!(out, "wall-time ratio (pixel / latent): {:.2}", pixel.wall_time_s / l.wall_time_s);
        }
    }
    out
}
