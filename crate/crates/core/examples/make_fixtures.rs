//! Writes the deterministic fixture set used by the tests and the README
//! walkthrough: a hand-built lane-image decoder and steering controller, their
//! composition, labelled latent CSVs, polytopes for the five standard action
//! intervals, a spec manifest and a pixel-space image vector.
//!
//! ```text
//! cargo run -p latent-verify --example make_fixtures -- fixtures
//! ```
//!
//! The decoder renders a 12×16 image of a bright lane band whose column
//! position in row `r` is `p_r(z)`, affine in the latent vector. Pixels are
//! `clamp(0.95 + 0.05·z_1 + 0.05·(r/11 − 0.5)·z_3 − 0.35·|c − p_r|, 0, 1)`,
//! written with ReLUs only. The controller sums column-weighted intensities
//! per row band and maps them through thresholded ReLUs to a steering value
//! whose output layer is fitted by ridge regression to the geometric label.

use std::fs;
use std::path::{Path, PathBuf};

use latent_verify::geometry::{
    convex_hull, filter_samples, inflate, outer_approximate, write_latent_csv, write_polytope, LatentSample,
    SampleTag, DEFAULT_SIGMA_CAP, UNBOUNDED,
};
use latent_verify::nnmodel::{compose, Activation, AffineLayer, Network};
use latent_verify::speclang::{ManifestEntry, SpecKind, SpecManifest};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const ROWS: usize = 12;
const COLS: usize = 16;
const LATENT: usize = 4;
const SEED: u64 = 20240611;
const SAMPLES: usize = 2000;

fn lane_coeffs(r: usize) -> (f64, f64) {
    let t = r as f64 / (ROWS - 1) as f64;
    // (dp/dz_0, dp/dz_2)
    (4.5 * (0.6 + 0.4 * t), 2.0 * t * t)
}

fn decoder() -> Network {
    let npx = ROWS * COLS;
    let centre = (COLS as f64 - 1.0) / 2.0;

    // tents around the lane position plus ± latent passthrough
    let mut rows = Vec::with_capacity(2 * npx + 2 * LATENT);
    let mut bias = Vec::with_capacity(2 * npx + 2 * LATENT);
    for r in 0..ROWS {
        let (k0, k2) = lane_coeffs(r);
        for c in 0..COLS {
            let off = centre - c as f64;
            rows.push(vec![k0, 0.0, k2, 0.0]);
            bias.push(off);
            rows.push(vec![-k0, 0.0, -k2, 0.0]);
            bias.push(-off);
        }
    }
    for i in 0..LATENT {
        for s in [1.0, -1.0] {
            let mut w = vec![0.0; LATENT];
            w[i] = s;
            rows.push(w);
            bias.push(0.0);
        }
    }
    let l1 = AffineLayer::new(rows, bias, Activation::Relu).unwrap();

    let width = 2 * npx + 2 * LATENT;
    let mut rows = Vec::with_capacity(npx);
    for r in 0..ROWS {
        let t = r as f64 / (ROWS - 1) as f64;
        for c in 0..COLS {
            let px = r * COLS + c;
            let mut w = vec![0.0; width];
            w[2 * px] = -0.35;
            w[2 * px + 1] = -0.35;
            w[2 * npx + 2] = 0.05;
            w[2 * npx + 3] = -0.05;
            w[2 * npx + 6] = 0.05 * (t - 0.5);
            w[2 * npx + 7] = -0.05 * (t - 0.5);
            rows.push(w);
        }
    }
    let l2 = AffineLayer::new(rows, vec![0.95; npx], Activation::Linear).unwrap();

    // clamp(x, 0, 1) = relu(x) - relu(x - 1)
    let mut rows = Vec::with_capacity(2 * npx);
    let mut bias = Vec::with_capacity(2 * npx);
    for px in 0..npx {
        let mut w = vec![0.0; npx];
        w[px] = 1.0;
        rows.push(w.clone());
        bias.push(0.0);
        rows.push(w);
        bias.push(-1.0);
    }
    let l3 = AffineLayer::new(rows, bias, Activation::Relu).unwrap();
    let rows = (0..npx)
        .map(|px| {
            let mut w = vec![0.0; 2 * npx];
            w[2 * px] = 1.0;
            w[2 * px + 1] = -1.0;
            w
        })
        .collect();
    let l4 = AffineLayer::new(rows, vec![0.0; npx], Activation::Linear).unwrap();
    Network::new("decoder", LATENT, vec![l1, l2, l3, l4]).unwrap()
}

/// Controller up to its last hidden layer; the output row is fitted later.
fn controller_body() -> (AffineLayer, AffineLayer) {
    let npx = ROWS * COLS;
    let centre = (COLS as f64 - 1.0) / 2.0;
    let bands = 4;
    let per_band = ROWS / bands;
    // band features f_g = sum_{r in band} sum_c (c - centre) x / 40, as relu(f), relu(-f)
    let mut rows = Vec::new();
    for variant in 0..4 {
        for g in 0..bands {
            let mut w = vec![0.0; npx];
            for r in g * per_band..(g + 1) * per_band {
                for c in 0..COLS {
                    let d = c as f64 - centre;
                    // variants emphasise the centre or the edges of the row
                    let shape = match variant {
                        0 | 1 => 1.0,
                        2 => 1.0 + 0.04 * d.abs(),
                        _ => 1.0 - 0.03 * d.abs(),
                    };
                    w[r * COLS + c] = d * shape / 40.0;
                }
            }
            rows.push(w.clone());
            rows.push(w.iter().map(|v| -v).collect());
        }
    }
    let l1 = AffineLayer::new(rows, vec![0.0; 32], Activation::Relu).unwrap();

    // 16 thresholded units over the signed band features
    let mut rows = Vec::new();
    let mut bias = Vec::new();
    for j in 0..16 {
        let feature = 2 * j;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let mut w = vec![0.0; 32];
        w[feature] = sign;
        w[feature + 1] = -sign;
        rows.push(w);
        bias.push([0.0, 0.6][(j / 4) % 2]);
    }
    let l2 = AffineLayer::new(rows, bias, Activation::Relu).unwrap();
    (l1, l2)
}

fn label(z: &[f64]) -> f64 {
    (0.8 * z[0] + 0.2 * z[2]).clamp(-1.0, 1.0)
}

fn latent_samples(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let means0 = [-0.6, -0.2, 0.2, 0.6];
    let comp = Normal::new(0.0, 0.22).unwrap();
    let other = Normal::new(0.0, 0.4).unwrap();
    (0..n)
        .map(|_| {
            let k = rng.random_range(0..means0.len());
            (0..dim)
                .map(|i| match i {
                    0 => means0[k] + comp.sample(rng),
                    2 => 0.3 * (k as f64 - 1.5) / 1.5 + other.sample(rng) * 0.5,
                    _ => other.sample(rng),
                })
                .map(|v: f64| v.clamp(-1.2, 1.2))
                .collect()
        })
        .collect()
}

fn ridge_fit(features: &[Vec<f64>], targets: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = features.len();
    let k = features[0].len() + 1;
    let x = DMatrix::from_fn(n, k, |i, j| if j + 1 == k { 1.0 } else { features[i][j] });
    let y = DVector::from_column_slice(targets);
    let mut gram = x.transpose() * &x;
    for j in 0..k - 1 {
        gram[(j, j)] += lambda;
    }
    let rhs = x.transpose() * y;
    let sol = gram.cholesky().expect("ridge system is positive definite").solve(&rhs);
    (sol.iter().take(k - 1).copied().collect(), sol[k - 1])
}

fn write_net(dir: &Path, name: &str, net: &Network) {
    fs::write(dir.join(name), net.to_nnw()).unwrap();
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let dec = decoder();
    let (c1, c2) = controller_body();
    let latents = latent_samples(&mut rng, SAMPLES, LATENT);
    let labels: Vec<f64> = latents.iter().map(|z| label(z)).collect();

    let feats: Vec<Vec<f64>> = latents
        .iter()
        .map(|z| c2.apply(&c1.apply(&dec.forward(z).unwrap())))
        .collect();
    let (w, b) = ridge_fit(&feats, &labels, 1e-3);
    let out = AffineLayer::new(vec![w.clone()], vec![b], Activation::Linear).unwrap();
    let ctrl = Network::new("controller", ROWS * COLS, vec![c1.clone(), c2.clone(), out]).unwrap();
    let flipped_out = AffineLayer::new(vec![w.iter().map(|v| -v).collect()], vec![-b], Activation::Linear).unwrap();
    let flipped = Network::new("controller_flipped", ROWS * COLS, vec![c1, c2, flipped_out]).unwrap();
    let combined = compose(&dec, &ctrl).unwrap();

    let mae = latents
        .iter()
        .zip(&labels)
        .map(|(z, a)| (combined.forward(z).unwrap()[0] - a).abs())
        .sum::<f64>()
        / SAMPLES as f64;
    println!("controller fit MAE on latent samples: {mae:.4}");

    write_net(&dir, "decoder.nnw", &dec);
    write_net(&dir, "controller.nnw", &ctrl);
    write_net(&dir, "controller_flipped.nnw", &flipped);
    write_net(&dir, "combined.nnw", &combined);

    let noise = Normal::new(0.0, 0.01).unwrap();
    let samples: Vec<LatentSample> = latents
        .iter()
        .zip(&labels)
        .map(|(z, a)| LatentSample {
            z: z.clone(),
            action: (a + noise.sample(&mut rng)).clamp(-1.0, 1.0),
            tag: SampleTag::Clean,
        })
        .collect();
    write_latent_csv(fs::File::create(dir.join("latents_clean.csv")).unwrap(), &samples).unwrap();

    let wide = latent_samples(&mut rng, 600, 8);
    let wide: Vec<LatentSample> = wide
        .into_iter()
        .map(|z| LatentSample {
            action: label(&z),
            z,
            tag: SampleTag::Clean,
        })
        .collect();
    write_latent_csv(fs::File::create(dir.join("latents_8d.csv")).unwrap(), &wide).unwrap();

    // image of a slightly right-shifted straight lane
    let image = dec.forward(&[0.1, 0.0, 0.0, 0.0]).unwrap();
    let mut text = String::from("# 12x16 grayscale image, row-major, decoded from z = (0.1, 0, 0, 0)\n");
    for row in image.chunks(COLS) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&cells.join(" "));
        text.push('\n');
    }
    fs::write(dir.join("image.txt"), text).unwrap();

    let intervals: [(&str, (f64, f64), (f64, f64)); 5] = [
        ("phi1", (-UNBOUNDED, 0.0), (-UNBOUNDED, 0.0)),
        ("phi2", (0.0, UNBOUNDED), (0.0, UNBOUNDED)),
        ("phi3", (-0.4, -0.1), (-0.4, -0.1)),
        ("phi4", (-0.1, 0.1), (-0.1, 0.1)),
        ("phi5", (0.1, 0.4), (0.1, 0.4)),
    ];
    let mut manifest = SpecManifest::default();
    for (id, action, out) in intervals {
        let kept = filter_samples(&samples, action, DEFAULT_SIGMA_CAP).unwrap();
        let pts: Vec<Vec<f64>> = kept.iter().map(|s| s.z.clone()).collect();
        let poly = convex_hull(&pts).unwrap().with_metadata(action, SampleTag::Clean);
        let file = format!("poly_{id}.json");
        write_polytope(dir.join(&file), &poly).unwrap();
        println!(
            "{id}: {} samples, {} vertices, {} halfspaces",
            kept.len(),
            poly.vertices.len(),
            poly.halfspaces.len()
        );
        let fmt = |v: f64| {
            if v >= UNBOUNDED {
                "inf".to_string()
            } else if v <= -UNBOUNDED {
                "-inf".to_string()
            } else {
                format!("{v}")
            }
        };
        manifest.specs.push(ManifestEntry {
            id: id.to_string(),
            kind: Some(if out.0 <= -UNBOUNDED || out.1 >= UNBOUNDED {
                SpecKind::Safety
            } else {
                SpecKind::Performance
            }),
            surface: Some(format!(
                "ALWAYS (z IN {}) IMPLIES (output IN [{}, {}])",
                poly.id,
                fmt(out.0),
                fmt(out.1)
            )),
            vnnlib: None,
            interval: None,
            polytope: PathBuf::from(file),
            description: String::new(),
        });
    }
    fs::write(dir.join("specs.json"), manifest.to_json() + "\n").unwrap();
    fs::write(dir.join("specs_empty.json"), SpecManifest::default().to_json() + "\n").unwrap();

    // an inflated variant and an outer approximation in eight dimensions
    let kept = filter_samples(&samples, (0.02, 0.2), DEFAULT_SIGMA_CAP).unwrap();
    let pts: Vec<Vec<f64>> = kept.iter().map(|s| s.z.clone()).collect();
    let base = convex_hull(&pts).unwrap().with_metadata((0.02, 0.2), SampleTag::Clean);
    write_polytope(dir.join("poly_a1_eps0.05.json"), &inflate(&base, 0.05).unwrap()).unwrap();
    let kept8 = filter_samples(&wide, (0.1, 0.4), DEFAULT_SIGMA_CAP).unwrap();
    let pts8: Vec<Vec<f64>> = kept8.iter().map(|s| s.z.clone()).collect();
    let outer = outer_approximate(&pts8, 64).unwrap().with_metadata((0.1, 0.4), SampleTag::Clean);
    write_polytope(dir.join("poly_8d_outer64.json"), &outer).unwrap();
}
