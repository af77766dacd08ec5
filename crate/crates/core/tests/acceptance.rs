//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{random_net, random_polytope, random_widths, rng, sampled_range, small_widths};
use latent_verify::geometry::{
    convex_hull, inflate, read_latent_csv, read_polytope, sample_points, Halfspace, Polytope, UNBOUNDED,
};
use latent_verify::lpsolve::{solve, Constraint, LinearProgram, LpOutcome, Relation, Sense};
use latent_verify::nnmodel::{compose, Network};
use latent_verify::speclang::{
    build_performance_spec, build_safety_spec, emit_vnnlib, parse_vnnlib, Sign, Spec, SpecManifest,
};
use latent_verify::verifier::{
    bab_verify, crown_bounds, exact_range_enumerate, verify_box_baseline, verify_spec, BoxPerturbation, Budget,
    Status, VerifyOptions,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SOUNDNESS_TOL: f64 = 1e-9;
const SOUNDNESS_NETS: usize = 100;
const SOUNDNESS_SAMPLES: usize = 10_000;
const SOUNDNESS_TIME: Duration = Duration::from_secs(300);

const COMPLETENESS_TOL: f64 = 1e-6;
const COMPLETENESS_NETS: usize = 50;
const COMPLETENESS_RELUS: usize = 12;
const COMPLETENESS_TIME: Duration = Duration::from_secs(600);
const MARGIN: f64 = 1e-5;

const HULL_SETS: usize = 50;
const HULL_MATCH_TOL: f64 = 1e-12;
const INFLATION_EPS: [f64; 3] = [0.0, 0.05, 0.5];
const INFLATION_TOL: f64 = 1e-6;
const INFLATION_SAMPLES: usize = 10_000;

const COMPOSITION_SAMPLES: usize = 1000;

const SPEC_NETS: usize = 30;

const BASELINE_DELTA: f64 = 0.01;
const BASELINE_SAMPLES: usize = 2000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load_net(name: &str) -> Network {
    let text = std::fs::read_to_string(fixtures().join(name)).expect("fixture network");
    Network::from_nnw(&text).expect("fixture parses")
}

fn soundness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    let budget = Budget {
        max_subproblems: 300,
        timeout: Duration::from_secs(10),
        stop_when_decided: false,
    };
    for i in 0..SOUNDNESS_NETS {
        let d = r.random_range(1..=4);
        let outputs = r.random_range(1..=2);
        let widths = random_widths(&mut r);
        let net = random_net(&mut r, d, &widths, outputs);
        let poly = random_polytope(&mut r, d);
        let (lo, hi) = sampled_range(&net, &poly, SOUNDNESS_SAMPLES, i as u64);
        let crown = crown_bounds(&net, &poly).expect("crown runs");
        let vacuous = vec![(-UNBOUNDED, UNBOUNDED); outputs];
        let (_, bab, _) = bab_verify(&net, &poly, &vacuous, &budget).expect("bab runs");
        for b in [&crown, &bab] {
            for j in 0..outputs {
                let gap = (b.lower[j] - lo[j]).max(hi[j] - b.upper[j]);
                worst = worst.max(gap);
                if gap > SOUNDNESS_TOL {
                    failures += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < SOUNDNESS_TIME,
        format!(
            "{SOUNDNESS_NETS} nets x {SOUNDNESS_SAMPLES} samples, crown+bab; {failures} violations, worst excess {worst:.3e} (tol {SOUNDNESS_TOL:e}); {:.1}s (limit {}s)",
            elapsed.as_secs_f64(),
            SOUNDNESS_TIME.as_secs()
        ),
    )
}

fn truth(lo: f64, hi: f64, interval: (f64, f64)) -> Status {
    if interval.0 <= lo && hi <= interval.1 {
        Status::Holds
    } else {
        Status::Violated
    }
}

fn completeness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2002);
    let mut worst = 0.0f64;
    let mut bound_failures = 0;
    let mut status_failures = Vec::new();
    let mut cases = 0;
    let decide = Budget {
        stop_when_decided: true,
        ..Budget::default()
    };
    for i in 0..COMPLETENESS_NETS {
        let d = r.random_range(1..=3);
        let widths = small_widths(&mut r, COMPLETENESS_RELUS);
        let net = random_net(&mut r, d, &widths, 1);
        let poly = random_polytope(&mut r, d);
        let exact = exact_range_enumerate(&net, &poly).expect("enumeration runs");
        let (m, big_m) = (exact.lower[0], exact.upper[0]);
        let (_, bab, _) = bab_verify(&net, &poly, &[(-UNBOUNDED, UNBOUNDED)], &Budget::default()).expect("bab runs");
        let gap = (bab.lower[0] - m).abs().max((bab.upper[0] - big_m).abs());
        worst = worst.max(gap);
        if gap > COMPLETENESS_TOL {
            bound_failures += 1;
        }

        let w = big_m - m;
        let marginal = if i % 2 == 0 {
            (m - MARGIN, big_m + MARGIN)
        } else {
            (m + MARGIN, big_m + 1.0)
        };
        let intervals = [
            (m - 0.1 * w - 1e-3, big_m + 0.1 * w + 1e-3),
            (m + 0.3 * w + 1e-3, big_m + 1.0),
            marginal,
        ];
        for iv in intervals {
            cases += 1;
            let (status, _, cex) = bab_verify(&net, &poly, &[iv], &decide).expect("bab runs");
            let expected = truth(m, big_m, iv);
            let witness_ok = match (&cex, status) {
                (Some(c), Status::Violated) => {
                    poly.max_violation(&c.z) <= 1e-9 && (c.output[0] < iv.0 || c.output[0] > iv.1)
                }
                (None, Status::Violated) => false,
                _ => true,
            };
            if status != expected || !witness_ok {
                status_failures.push(format!("net {i} {iv:?}: {status} vs {expected}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let mut detail = format!(
        "{COMPLETENESS_NETS} nets <= {COMPLETENESS_RELUS} ReLUs; {bound_failures} bound mismatches, worst {worst:.3e} (tol {COMPLETENESS_TOL:e}); statuses {}/{cases} agree; {:.1}s (limit {}s)",
        cases - status_failures.len(),
        elapsed.as_secs_f64(),
        COMPLETENESS_TIME.as_secs()
    );
    if let Some(first) = status_failures.first() {
        detail += &format!("; first disagreement: {first}");
    }
    outcome(
        bound_failures == 0 && status_failures.is_empty() && elapsed < COMPLETENESS_TIME,
        detail,
    )
}

/// Point `i` is extreme iff it is not a convex combination of the others.
fn lp_extreme_points(points: &[Vec<f64>]) -> Vec<usize> {
    let d = points[0].len();
    (0..points.len())
        .filter(|&i| {
            let others: Vec<&Vec<f64>> = points.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, p)| p).collect();
            let mut constraints: Vec<Constraint> = (0..d)
                .map(|k| Constraint::new(others.iter().map(|p| p[k]).collect(), Relation::Eq, points[i][k]))
                .collect();
            constraints.push(Constraint::new(vec![1.0; others.len()], Relation::Eq, 1.0));
            let lp = LinearProgram {
                objective: vec![0.0; others.len()],
                sense: Sense::Minimize,
                constraints,
                variable_bounds: Some(vec![(0.0, f64::INFINITY); others.len()]),
            };
            matches!(solve(&lp).expect("oracle LP"), LpOutcome::Infeasible)
        })
        .collect()
}

/// Brute-force second opinion: a point in general position is extreme iff it
/// lies on a supporting line (2D) or plane (3D) through input points.
fn brute_extreme_points(points: &[Vec<f64>]) -> Vec<usize> {
    let n = points.len();
    let supporting = |normal: &[f64], anchor: &[f64]| {
        let dots: Vec<f64> = points
            .iter()
            .map(|p| (0..normal.len()).map(|k| normal[k] * (p[k] - anchor[k])).sum::<f64>())
            .collect();
        dots.iter().all(|&v| v <= 1e-12) || dots.iter().all(|&v| v >= -1e-12)
    };
    let mut extreme = vec![false; n];
    match points[0].len() {
        2 => {
            for i in 0..n {
                for j in i + 1..n {
                    let (a, b) = (&points[i], &points[j]);
                    let normal = [b[1] - a[1], a[0] - b[0]];
                    if supporting(&normal, a) {
                        extreme[i] = true;
                        extreme[j] = true;
                    }
                }
            }
        }
        3 => {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        let (a, b, c) = (&points[i], &points[j], &points[k]);
                        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                        let normal = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                        if supporting(&normal, a) {
                            extreme[i] = true;
                            extreme[j] = true;
                            extreme[k] = true;
                        }
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    (0..n).filter(|&i| extreme[i]).collect()
}

fn hull_vertex_indices(poly: &Polytope, points: &[Vec<f64>]) -> Option<Vec<usize>> {
    let mut idx: Vec<usize> = poly
        .vertices
        .iter()
        .map(|v| {
            points
                .iter()
                .position(|p| p.iter().zip(v).all(|(a, b)| (a - b).abs() <= HULL_MATCH_TOL))
        })
        .collect::<Option<_>>()?;
    idx.sort_unstable();
    Some(idx)
}

/// Counter-clockwise ring of a convex polygon's vertices.
fn ccw_ring(vertices: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = vertices.len() as f64;
    let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / n;
    let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / n;
    let mut ring: Vec<[f64; 2]> = vertices.iter().map(|v| [v[0], v[1]]).collect();
    ring.sort_by(|a, b| (a[1] - cy).atan2(a[0] - cx).total_cmp(&(b[1] - cy).atan2(b[0] - cx)));
    ring
}

/// Euclidean distance from `x` to a convex polygon given as a CCW ring.
fn polygon_distance(ring: &[[f64; 2]], x: [f64; 2]) -> f64 {
    let m = ring.len();
    let mut inside = true;
    let mut best = f64::INFINITY;
    for i in 0..m {
        let (p, q) = (ring[i], ring[(i + 1) % m]);
        let e = [q[0] - p[0], q[1] - p[1]];
        let w = [x[0] - p[0], x[1] - p[1]];
        if e[0] * w[1] - e[1] * w[0] < 0.0 {
            inside = false;
        }
        let t = ((w[0] * e[0] + w[1] * e[1]) / (e[0] * e[0] + e[1] * e[1])).clamp(0.0, 1.0);
        let c = [p[0] + t * e[0] - x[0], p[1] + t * e[1] - x[1]];
        best = best.min(c[0].hypot(c[1]));
    }
    if inside {
        0.0
    } else {
        best
    }
}

fn unit_vector(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn geometry() -> Outcome {
    let mut r = rng(3003);
    let mut hull_failures = Vec::new();
    for s in 0..HULL_SETS {
        let d = if s % 2 == 0 { 2 } else { 3 };
        let n = r.random_range(10..=40);
        let pts = common::random_points(&mut r, n, d, 1.0);
        let poly = convex_hull(&pts).expect("hull builds");
        let got = hull_vertex_indices(&poly, &pts);
        let lp = lp_extreme_points(&pts);
        let brute = brute_extreme_points(&pts);
        if got.as_ref() != Some(&lp) || lp != brute {
            hull_failures.push(s);
        }
    }

    // exact test on polygons, sound direction in 3D
    let polygons: Vec<Polytope> = (0..5)
        .map(|_| {
            let n = r.random_range(6..=20);
            convex_hull(&common::random_points(&mut r, n, 2, 1.0)).unwrap()
        })
        .collect();
    let per_poly = INFLATION_SAMPLES / polygons.len();
    let mut misclassified = 0;
    let mut checked = 0;
    for eps in INFLATION_EPS {
        for p in &polygons {
            let inflated = inflate(p, eps).expect("inflate");
            let ring = ccw_ring(&p.vertices);
            let (blo, bhi) = p.bounding_box().unwrap();
            for k in 0..per_poly {
                let x: Vec<f64> = if k % 2 == 0 {
                    (0..2).map(|i| r.random_range(blo[i] - eps - 0.3..bhi[i] + eps + 0.3)).collect()
                } else {
                    let v = &p.vertices[r.random_range(0..p.vertices.len())];
                    let u = unit_vector(&mut r, 2);
                    let t = r.random_range(0.0..=2.0 * eps + 0.01);
                    vec![v[0] + t * u[0], v[1] + t * u[1]]
                };
                let dist = polygon_distance(&ring, [x[0], x[1]]);
                let inside = inflated.contains(&x).unwrap();
                if (dist <= eps - INFLATION_TOL && !inside) || (dist >= eps + INFLATION_TOL && inside) {
                    misclassified += 1;
                }
                checked += 1;
            }
        }
    }
    let mut outside_3d = 0;
    let solid = convex_hull(&common::random_points(&mut r, 20, 3, 1.0)).unwrap();
    for eps in INFLATION_EPS {
        let inflated = inflate(&solid, eps).unwrap();
        let base = sample_points(&solid, 2000, 7).unwrap();
        for z in base.iter().chain(&solid.vertices) {
            let u = unit_vector(&mut r, 3);
            let x: Vec<f64> = (0..3).map(|i| z[i] + eps * u[i]).collect();
            if !inflated.contains(&x).unwrap() {
                outside_3d += 1;
            }
        }
    }
    let mut detail = format!(
        "hulls {}/{HULL_SETS} match LP and brute-force extreme points; 2D inflation eps {INFLATION_EPS:?}: {misclassified}/{checked} misclassified (tol {INFLATION_TOL:e}); 3D eps-ball points outside: {outside_3d}",
        HULL_SETS - hull_failures.len()
    );
    if !hull_failures.is_empty() {
        detail += &format!("; failing sets {hull_failures:?}");
    }
    outcome(hull_failures.is_empty() && misclassified == 0 && outside_3d == 0, detail)
}

fn composition() -> Outcome {
    let decoder = load_net("decoder.nnw");
    let controller = load_net("controller.nnw");
    let combined = compose(&decoder, &controller).expect("compose");
    let stored = load_net("combined.nnw");
    let csv = std::fs::File::open(fixtures().join("latents_clean.csv")).expect("latent csv");
    let samples = read_latent_csv(csv).expect("csv parses");
    let zs: Vec<&Vec<f64>> = samples.iter().map(|s| &s.z).take(COMPOSITION_SAMPLES).collect();
    let mut mismatches = 0;
    let mut min_pixel = f64::INFINITY;
    let mut min_latent = f64::INFINITY;
    for z in &zs {
        let x = decoder.forward(z).unwrap();
        let f = controller.forward(&x).unwrap();
        let h = combined.forward(z).unwrap();
        let s = stored.forward(z).unwrap();
        if f[0].to_bits() != h[0].to_bits() || h[0].to_bits() != s[0].to_bits() {
            mismatches += 1;
        }
        min_pixel = min_pixel.min(f[0]);
        min_latent = min_latent.min(h[0]);
    }
    let min_equal = min_pixel.to_bits() == min_latent.to_bits();
    outcome(
        zs.len() == COMPOSITION_SAMPLES && mismatches == 0 && min_equal,
        format!(
            "{} latent rows: {mismatches} bitwise mismatches (in-memory and stored combined net); sample min F(D(z)) = {min_pixel:?}, min H(z) = {min_latent:?}",
            zs.len()
        ),
    )
}

fn same_property(spec: &Spec, poly: &Polytope, text: &str) -> bool {
    match parse_vnnlib(text) {
        Ok(p) => {
            p.input_dim == poly.dim
                && p.output_interval == spec.output_interval
                && p.halfspaces.len() == poly.halfspaces.len()
                && p.halfspaces.iter().zip(&poly.halfspaces).all(|(a, b): (&Halfspace, &Halfspace)| a == b)
        }
        Err(_) => false,
    }
}

fn spec_semantics() -> Outcome {
    let manifest_path = fixtures().join("specs.json");
    let manifest = SpecManifest::from_json(&std::fs::read_to_string(&manifest_path).unwrap()).expect("manifest");
    let mut round_trips = 0;
    let mut round_trip_failures = Vec::new();
    for entry in &manifest.specs {
        let spec = entry.to_spec(&fixtures()).expect("spec loads");
        let poly = read_polytope(fixtures().join(&entry.polytope)).expect("polytope loads");
        round_trips += 1;
        if !same_property(&spec, &poly, &emit_vnnlib(&spec, &poly)) {
            round_trip_failures.push(spec.id.clone());
        }
    }
    let mut r = rng(5005);
    let mut agree = 0;
    let mut cases = 0;
    let mut disagreements = Vec::new();
    let mut holds = 0;
    let opts = VerifyOptions::default();
    for i in 0..SPEC_NETS {
        let d = r.random_range(1..=4);
        let widths = small_widths(&mut r, COMPLETENESS_RELUS);
        let net = random_net(&mut r, d, &widths, 1);
        let poly = random_polytope(&mut r, d);
        let exact = exact_range_enumerate(&net, &poly).unwrap();
        let (m, big_m) = (exact.lower[0], exact.upper[0]);
        let specs = [
            build_safety_spec(Sign::Negative, &poly.id),
            build_safety_spec(Sign::Positive, &poly.id),
            build_performance_spec(-0.4, -0.1, &poly.id).unwrap(),
            build_performance_spec(-0.1, 0.1, &poly.id).unwrap(),
            build_performance_spec(0.1, 0.4, &poly.id).unwrap(),
            build_performance_spec(m - 0.05, big_m + 0.05, &poly.id).unwrap(),
        ];
        for spec in &specs {
            round_trips += 1;
            if !same_property(spec, &poly, &emit_vnnlib(spec, &poly)) {
                round_trip_failures.push(format!("net {i} {}", spec.id));
            }
            cases += 1;
            let expected = truth(m, big_m, spec.output_interval[0]);
            let got = verify_spec(&net, spec, &poly, &opts).expect("verify_spec runs");
            if got.status == expected {
                agree += 1;
            } else {
                disagreements.push(format!("net {i} {}: {} vs {expected}", spec.id, got.status));
            }
            if expected == Status::Holds {
                holds += 1;
            }
        }
    }
    let mut detail = format!(
        "VNN-LIB round-trips {}/{round_trips} exact (fixture phi1-phi5 + random); verify_spec agrees with enumeration {agree}/{cases} ({holds} HOLDS, {} VIOLATED)",
        round_trips - round_trip_failures.len(),
        cases - holds
    );
    if let Some(first) = round_trip_failures.first().or(disagreements.first()) {
        detail += &format!("; first failure: {first}");
    }
    outcome(round_trip_failures.is_empty() && agree == cases, detail)
}

fn baseline() -> Outcome {
    let decoder = load_net("decoder.nnw");
    let controller = load_net("controller.nnw");
    let combined = load_net("combined.nnw");
    let image: Vec<f64> = std::fs::read_to_string(fixtures().join("image.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace().map(|t| t.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    let poly = read_polytope(fixtures().join("poly_phi4.json")).unwrap();
    let pert = BoxPerturbation::new(image.clone(), BASELINE_DELTA).unwrap();
    let vacuous = [(-UNBOUNDED, UNBOUNDED)];
    let pixel = verify_box_baseline(&controller, &pert, &vacuous, "pixel").unwrap();
    let latent = crown_bounds(&combined, &poly).unwrap();

    let mut r = rng(6006);
    let mut pixel_ok = true;
    for _ in 0..BASELINE_SAMPLES {
        let x: Vec<f64> = image.iter().map(|c| c + r.random_range(-BASELINE_DELTA..=BASELINE_DELTA)).collect();
        let y = controller.forward(&x).unwrap()[0];
        pixel_ok &= pixel.lower[0] - SOUNDNESS_TOL <= y && y <= pixel.upper[0] + SOUNDNESS_TOL;
    }
    let (lo, hi) = sampled_range(&combined, &poly, BASELINE_SAMPLES, 6);
    let latent_ok = latent.lower[0] - SOUNDNESS_TOL <= lo[0] && hi[0] <= latent.upper[0] + SOUNDNESS_TOL;
    let ratio = controller.input_dim as f64 / decoder.input_dim as f64;
    outcome(
        ratio == 48.0 && pixel_ok && latent_ok,
        format!(
            "input-dimension ratio {}/{} = {ratio:.1} (expected 48.0); pixel box delta {BASELINE_DELTA}: [{:.4}, {:.4}] in {:.4}s, sound {pixel_ok}; latent polytope: [{:.4}, {:.4}] in {:.4}s, sound {latent_ok}",
            controller.input_dim,
            decoder.input_dim,
            pixel.lower[0],
            pixel.upper[0],
            pixel.wall_time_s,
            latent.lower[0],
            latent.upper[0],
            latent.wall_time
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("soundness", soundness),
        ("completeness", completeness),
        ("geometry", geometry),
        ("composition", composition),
        ("spec-semantics", spec_semantics),
        ("baseline", baseline),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
