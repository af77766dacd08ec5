#![allow(dead_code)]

use latent_verify::geometry::{convex_hull, Polytope};
use latent_verify::nnmodel::{Activation, AffineLayer, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn layer(rows: &[&[f64]], bias: &[f64], act: Activation) -> AffineLayer {
    AffineLayer::new(rows.iter().map(|r| r.to_vec()).collect(), bias.to_vec(), act).unwrap()
}

/// `|x|` as `relu(x) + relu(-x)`.
pub fn abs_net() -> Network {
    Network::new(
        "abs",
        1,
        vec![
            layer(&[&[1.0], &[-1.0]], &[0.0, 0.0], Activation::Relu),
            layer(&[&[1.0, 1.0]], &[0.0], Activation::Linear),
        ],
    )
    .unwrap()
}

pub fn identity_net(d: usize) -> Network {
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    Network::new(
        "id",
        d,
        vec![AffineLayer::new(rows, vec![0.0; d], Activation::Linear).unwrap()],
    )
    .unwrap()
}

/// Random ReLU network with the given hidden widths and a linear output layer.
pub fn random_net(rng: &mut ChaCha8Rng, input: usize, hidden: &[usize], outputs: usize) -> Network {
    let mut layers = Vec::new();
    let mut prev = input;
    let widths: Vec<usize> = hidden.iter().copied().chain(std::iter::once(outputs)).collect();
    for (k, &w) in widths.iter().enumerate() {
        let scale = 1.0 / (prev as f64).sqrt();
        let rows: Vec<Vec<f64>> = (0..w)
            .map(|_| (0..prev).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let bias: Vec<f64> = (0..w).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let act = if k + 1 == widths.len() {
            Activation::Linear
        } else {
            Activation::Relu
        };
        layers.push(AffineLayer::new(rows, bias, act).unwrap());
        prev = w;
    }
    Network::new("random", input, layers).unwrap()
}

/// Hidden widths with 2–3 layers of width 2..=16.
pub fn random_widths(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let depth = rng.random_range(2..=3);
    (0..depth).map(|_| rng.random_range(2..=16)).collect()
}

/// Hidden widths whose total is at most `max_relus`.
pub fn small_widths(rng: &mut ChaCha8Rng, max_relus: usize) -> Vec<usize> {
    loop {
        let depth = rng.random_range(1..=3);
        let w: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
        if w.iter().sum::<usize>() <= max_relus {
            return w;
        }
    }
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, spread).unwrap();
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
    (0..n)
        .map(|_| (0..d).map(|k| shift[k] + normal.sample(rng)).collect())
        .collect()
}

/// Hull of random points, or an axis box for one input.
pub fn random_polytope(rng: &mut ChaCha8Rng, d: usize) -> Polytope {
    if d == 1 {
        let a: f64 = rng.random_range(-1.5..0.5);
        let w: f64 = rng.random_range(0.2..2.0);
        return Polytope::from_box(&[a], &[a + w]).unwrap();
    }
    loop {
        let n = rng.random_range(d + 3..=d + 15);
        let pts = random_points(rng, n, d, 0.8);
        if let Ok(p) = convex_hull(&pts) {
            return p;
        }
    }
}

/// Sampled min/max per output over hull vertices plus hit-and-run points.
pub fn sampled_range(net: &Network, poly: &Polytope, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let m = net.output_dim();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    let pts = latent_verify::geometry::sample_points(poly, n, seed).unwrap();
    for z in poly.vertices.iter().chain(&pts) {
        let y = net.forward(z).unwrap();
        for j in 0..m {
            lo[j] = lo[j].min(y[j]);
            hi[j] = hi[j].max(y[j]);
        }
    }
    (lo, hi)
}
