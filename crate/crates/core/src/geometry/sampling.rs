use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{dot, norm, GeometryError, LatentSample, Polytope};

pub const DEFAULT_SIGMA_CAP: f64 = 2.0;
const BURN_IN_STEPS: usize = 50;

/// Keeps samples whose action lies in `interval` and whose latent vector is
/// within `sigma_cap` componentwise standard deviations of the selection's
/// componentwise mean (population statistics).
pub fn filter_samples(
    samples: &[LatentSample],
    interval: (f64, f64),
    sigma_cap: f64,
) -> Result<Vec<LatentSample>, GeometryError> {
    let (lo, hi) = interval;
    if !(lo <= hi) {
        return Err(GeometryError::InvalidArgument(format!("interval [{lo}, {hi}] is empty")));
    }
    if !(sigma_cap > 0.0) {
        return Err(GeometryError::InvalidArgument(format!(
            "sigma cap must be positive, got {sigma_cap}"
        )));
    }
    let selected: Vec<&LatentSample> = samples
        .iter()
        .filter(|s| s.action >= lo && s.action <= hi)
        .collect();
    let Some(d) = selected.first().map(|s| s.z.len()) else {
        return Err(GeometryError::EmptySelection { lo, hi });
    };
    if let Some(s) = selected.iter().find(|s| s.z.len() != d) {
        return Err(GeometryError::DimensionMismatch {
            expected: d,
            found: s.z.len(),
        });
    }
    let n = selected.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|k| selected.iter().map(|s| s.z[k]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..d)
        .map(|k| {
            let var = selected.iter().map(|s| (s.z[k] - mean[k]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect();
    let kept: Vec<LatentSample> = selected
        .into_iter()
        .filter(|s| {
            s.z.iter()
                .zip(mean.iter().zip(&std))
                .all(|(z, (m, sd))| (z - m).abs() <= sigma_cap * sd + 1e-12 * (1.0 + m.abs()))
        })
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(GeometryError::EmptySelection { lo, hi });
    }
    Ok(kept)
}

/// Hit-and-run samples from the polytope, started at its Chebyshev center,
/// with [`BURN_IN_STEPS`] steps between emitted points.
pub fn sample_points(poly: &Polytope, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, GeometryError> {
    let (mut x, _) = match poly.as_box() {
        Some((lo, hi)) if lo.iter().zip(&hi).all(|(l, h)| l <= h) => {
            (lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect(), 0.0)
        }
        _ => poly.chebyshev_center()?,
    };
    let boxed = poly.as_box();
    let d = poly.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut slack: Vec<f64> = poly.halfspaces.iter().map(|h| h.b - h.eval(&x)).collect();
    let mut dir = vec![0.0; d];
    for _ in 0..n {
        for _ in 0..BURN_IN_STEPS {
            loop {
                for v in dir.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let nn = norm(&dir);
                if nn > 1e-12 {
                    for v in dir.iter_mut() {
                        *v /= nn;
                    }
                    break;
                }
            }
            let mut tmin = f64::NEG_INFINITY;
            let mut tmax = f64::INFINITY;
            if let Some((lo, hi)) = &boxed {
                // axis-aligned chord in O(d)
                for i in 0..d {
                    let di = dir[i];
                    if di > 1e-15 {
                        tmax = tmax.min(((hi[i] - x[i]) / di).max(0.0));
                        tmin = tmin.max(((lo[i] - x[i]) / di).min(0.0));
                    } else if di < -1e-15 {
                        tmax = tmax.min(((lo[i] - x[i]) / di).max(0.0));
                        tmin = tmin.max(((hi[i] - x[i]) / di).min(0.0));
                    }
                }
                if tmax > tmin {
                    let t = rng.random_range(tmin..tmax);
                    for i in 0..d {
                        x[i] = (x[i] + t * dir[i]).clamp(lo[i], hi[i]);
                    }
                }
                continue;
            }
            let mut rates = Vec::with_capacity(poly.halfspaces.len());
            for (h, s) in poly.halfspaces.iter().zip(&slack) {
                let ad = dot(&h.a, &dir);
                rates.push(ad);
                let s = s.max(0.0);
                if ad > 1e-15 {
                    tmax = tmax.min(s / ad);
                } else if ad < -1e-15 {
                    tmin = tmin.max(s / ad);
                }
            }
            if !tmin.is_finite() || !tmax.is_finite() {
                return Err(GeometryError::Unbounded);
            }
            if tmax > tmin {
                let t = rng.random_range(tmin..tmax);
                for (xi, di) in x.iter_mut().zip(&dir) {
                    *xi += t * di;
                }
                for (s, ad) in slack.iter_mut().zip(&rates) {
                    *s -= t * ad;
                }
            }
        }
        // refresh slacks to stop drift
        if boxed.is_some() {
            out.push(x.clone());
            continue;
        }
        for (s, h) in slack.iter_mut().zip(&poly.halfspaces) {
            *s = h.b - h.eval(&x);
        }
        out.push(x.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SampleTag;

    fn sample(z: &[f64], action: f64) -> LatentSample {
        LatentSample {
            z: z.to_vec(),
            action,
            tag: SampleTag::Clean,
        }
    }

    #[test]
    fn selects_by_action_interval() {
        let s = vec![sample(&[0.0], -0.3), sample(&[1.0], 0.1), sample(&[2.0], 0.5)];
        let kept = filter_samples(&s, (0.02, 0.2), 2.0).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].action, 0.1);
    }

    #[test]
    fn identical_latents_survive_any_cap() {
        let s: Vec<_> = (0..10).map(|i| sample(&[0.3, -0.2], i as f64 * 0.01)).collect();
        for cap in [1e-6, 0.5, 2.0] {
            assert_eq!(filter_samples(&s, (-1.0, 1.0), cap).unwrap().len(), 10);
        }
    }

    #[test]
    fn empty_selection_is_signalled() {
        let s = vec![sample(&[0.0], 0.5)];
        assert!(matches!(
            filter_samples(&s, (-1.0, 0.0), 2.0),
            Err(GeometryError::EmptySelection { .. })
        ));
        assert!(filter_samples(&s, (1.0, 0.0), 2.0).is_err());
        assert!(filter_samples(&s, (0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn outliers_are_removed() {
        let mut s: Vec<_> = (0..20).map(|i| sample(&[(i % 5) as f64 * 0.01], 0.0)).collect();
        s.push(sample(&[10.0], 0.0));
        let kept = filter_samples(&s, (0.0, 0.0), 2.0).unwrap();
        assert_eq!(kept.len(), 20);
    }

    #[test]
    fn samples_are_contained_and_deterministic() {
        let p = Polytope::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let a = sample_points(&p, 1000, 7).unwrap();
        let b = sample_points(&p, 1000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|z| p.contains(z).unwrap()));
        assert_ne!(a, sample_points(&p, 1000, 8).unwrap());
    }

    #[test]
    fn sample_mean_of_square() {
        let p = Polytope::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let pts = sample_points(&p, 10_000, 3).unwrap();
        for k in 0..2 {
            let m = pts.iter().map(|z| z[k]).sum::<f64>() / pts.len() as f64;
            assert!((m - 0.5).abs() < 0.05, "mean {m}");
        }
    }

    #[test]
    fn infeasible_polytope_cannot_be_sampled() {
        let p = Polytope::from_halfspaces(
            1,
            vec![
                crate::geometry::Halfspace { a: vec![1.0], b: 0.0 },
                crate::geometry::Halfspace { a: vec![-1.0], b: -1.0 },
            ],
        )
        .unwrap();
        assert!(sample_points(&p, 3, 0).is_err());
    }
}
