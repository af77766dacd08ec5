mod common;

use common::{random_net, random_points, rng};
use latent_verify::geometry::{
    convex_hull, filter_samples, inflate, read_latent_csv, sample_points, write_latent_csv, LatentSample,
    Polytope, SampleTag,
};
use latent_verify::lpsolve::{optimize_linear, Sense};
use latent_verify::nnmodel::{compose, Network};
use latent_verify::speclang::{
    build_performance_spec, emit_surface, emit_vnnlib, parse_surface, parse_vnnlib, ManifestEntry, SpecKind,
    SpecManifest,
};
use latent_verify::UNBOUNDED;
use proptest::prelude::*;

fn net_from_seed(seed: u64, input: usize, hidden: &[usize], outputs: usize) -> Network {
    random_net(&mut rng(seed), input, hidden, outputs)
}

fn hull_from_seed(seed: u64, d: usize) -> Polytope {
    let mut r = rng(seed);
    loop {
        if let Ok(p) = convex_hull(&random_points(&mut r, 12 + d * 4, d, 1.0)) {
            return p;
        }
    }
}

fn hidden_widths() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..8, 0..3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nnw_round_trip_is_lossless(seed in any::<u64>(), d in 1usize..5, hidden in hidden_widths(), m in 1usize..3) {
        let net = net_from_seed(seed, d, &hidden, m);
        let text = net.to_nnw();
        let back = Network::from_nnw(&text).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(back.to_nnw(), text);
    }

    #[test]
    fn composition_is_bitwise_sequential(
        seed in any::<u64>(),
        z in prop::collection::vec(-3.0f64..3.0, 3),
        dh in hidden_widths(),
        ch in hidden_widths(),
    ) {
        let dec = net_from_seed(seed, 3, &dh, 5);
        let ctrl = net_from_seed(seed ^ 0x5eed, 5, &ch, 2);
        let h = compose(&dec, &ctrl).unwrap();
        prop_assert_eq!(h.relu_count(), dec.relu_count() + ctrl.relu_count());
        let seq = ctrl.forward(&dec.forward(&z).unwrap()).unwrap();
        let direct = h.forward(&z).unwrap();
        prop_assert!(seq.iter().zip(&direct).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn hull_contains_its_points_and_bbox_matches_vertices(seed in any::<u64>(), d in 2usize..4) {
        let mut r = rng(seed);
        let pts = random_points(&mut r, 25, d, 1.0);
        let poly = convex_hull(&pts).unwrap();
        for p in &pts {
            prop_assert!(poly.max_violation(p) <= 1e-7);
        }
        let (lo, hi) = poly.bounding_box().unwrap();
        for k in 0..d {
            let vmin = poly.vertices.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            let vmax = poly.vertices.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((lo[k] - vmin).abs() <= 1e-7 && (hi[k] - vmax).abs() <= 1e-7);
        }
    }

    #[test]
    fn lp_optimum_is_attained_at_a_vertex(seed in any::<u64>(), d in 2usize..4, c in prop::collection::vec(-1.0f64..1.0, 3)) {
        let poly = hull_from_seed(seed, d);
        let c = &c[..d];
        let (value, point) = optimize_linear(c, &poly, Sense::Maximize).unwrap();
        let best = poly
            .vertices
            .iter()
            .map(|v| v.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((value - best).abs() <= 1e-7);
        prop_assert!(poly.max_violation(&point) <= 1e-7);
    }

    #[test]
    fn inflation_is_monotone(seed in any::<u64>(), d in 2usize..4, e1 in 0.0f64..0.3, extra in 0.0f64..0.3) {
        let poly = hull_from_seed(seed, d);
        let small = inflate(&poly, e1).unwrap();
        let large = inflate(&poly, e1 + extra).unwrap();
        for z in sample_points(&small, 300, seed).unwrap() {
            prop_assert!(large.contains(&z).unwrap());
        }
        for z in &poly.vertices {
            prop_assert!(small.contains(z).unwrap());
        }
    }

    #[test]
    fn hit_and_run_is_deterministic_and_contained(seed in any::<u64>(), d in 2usize..4) {
        let poly = hull_from_seed(seed, d);
        let a = sample_points(&poly, 200, seed).unwrap();
        let b = sample_points(&poly, 200, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|z| poly.contains(z).unwrap()));
    }

    #[test]
    fn polytope_descriptor_round_trip(seed in any::<u64>(), d in 2usize..4, eps in 0.0f64..0.2) {
        let poly = inflate(&hull_from_seed(seed, d).with_metadata((-0.4, -0.1), SampleTag::Clean), eps).unwrap();
        let back = Polytope::from_json(&poly.to_json()).unwrap();
        prop_assert_eq!(back, poly);
    }

    #[test]
    fn filtered_samples_respect_the_interval(
        actions in prop::collection::vec(-1.0f64..1.0, 10..60),
        lo in -1.0f64..0.0,
        width in 0.1f64..1.0,
    ) {
        let samples: Vec<LatentSample> = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| LatentSample { z: vec![a, (i as f64).sin()], action: a, tag: SampleTag::Clean })
            .collect();
        let hi = lo + width;
        if let Ok(kept) = filter_samples(&samples, (lo, hi), 2.0) {
            prop_assert!(kept.iter().all(|s| s.action >= lo && s.action <= hi));
            prop_assert!(kept.iter().all(|s| samples.contains(s)));
        } else {
            prop_assert!(actions.iter().all(|a| *a < lo || *a > hi));
        }
    }

    #[test]
    fn latent_csv_round_trip(rows in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), -1.0f64..1.0, any::<bool>()), 1..20)) {
        let samples: Vec<LatentSample> = rows
            .into_iter()
            .map(|(z, action, aug)| LatentSample {
                z,
                action,
                tag: if aug {
                    SampleTag::Augmented { kind: "blur".into(), level: "d2".into() }
                } else {
                    SampleTag::Clean
                },
            })
            .collect();
        let mut buf = Vec::new();
        write_latent_csv(&mut buf, &samples).unwrap();
        prop_assert_eq!(read_latent_csv(&buf[..]).unwrap(), samples);
    }

    #[test]
    fn vnnlib_round_trip(seed in any::<u64>(), d in 2usize..4, lo in -2.0f64..0.0, w in 0.0f64..2.0, open in 0usize..3) {
        let poly = inflate(&hull_from_seed(seed, d), 0.05).unwrap();
        let (lo, hi) = match open {
            0 => (lo, lo + w),
            1 => (-UNBOUNDED, lo + w),
            _ => (lo, UNBOUNDED),
        };
        let spec = build_performance_spec(lo, hi, &poly.id).unwrap();
        let prop = parse_vnnlib(&emit_vnnlib(&spec, &poly)).unwrap();
        prop_assert_eq!(prop.input_dim, d);
        prop_assert_eq!(&prop.halfspaces, &poly.halfspaces);
        prop_assert_eq!(&prop.output_interval, &spec.output_interval);
    }

    #[test]
    fn surface_round_trip(lo in -5.0f64..5.0, w in 0.0f64..5.0, open in 0usize..3) {
        let (lo, hi) = match open {
            0 => (lo, lo + w),
            1 => (-UNBOUNDED, lo + w),
            _ => (lo, UNBOUNDED),
        };
        let spec = build_performance_spec(lo, hi, "P0123456789ab").unwrap();
        let back = parse_surface(&emit_surface(&spec)).unwrap();
        prop_assert_eq!(back.output_interval, spec.output_interval);
        prop_assert_eq!(back.polytope_ref, spec.polytope_ref);
    }
}

#[test]
fn manifest_json_round_trip() {
    let manifest = SpecManifest {
        specs: vec![
            ManifestEntry {
                id: "phi1".into(),
                kind: Some(SpecKind::Safety),
                surface: Some("ALWAYS (z IN Pabc) IMPLIES (output IN [-inf, 0])".into()),
                vnnlib: None,
                interval: None,
                polytope: "poly_phi1.json".into(),
                description: "steer left".into(),
            },
            ManifestEntry {
                id: "phi3".into(),
                kind: None,
                surface: None,
                vnnlib: None,
                interval: Some((-0.4, -0.1)),
                polytope: "sub/poly_phi3.json".into(),
                description: String::new(),
            },
        ],
    };
    let back = SpecManifest::from_json(&manifest.to_json()).unwrap();
    assert_eq!(back, manifest);
    let spec = back.specs[1].to_spec(std::path::Path::new("/tmp")).unwrap();
    assert_eq!(spec.output_interval, vec![(-0.4, -0.1)]);
    assert_eq!(spec.kind, SpecKind::Performance);
}

#[test]
fn fixture_networks_parse_and_compose() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let load = |n: &str| Network::from_nnw(&std::fs::read_to_string(dir.join(n)).unwrap()).unwrap();
    let dec = load("decoder.nnw");
    let ctrl = load("controller.nnw");
    let flipped = load("controller_flipped.nnw");
    assert_eq!((dec.input_dim, dec.output_dim(), ctrl.input_dim), (4, 192, 192));
    assert_eq!(compose(&dec, &ctrl).unwrap().to_nnw(), std::fs::read_to_string(dir.join("combined.nnw")).unwrap());
    let x = dec.forward(&[0.3, -0.2, 0.1, 0.0]).unwrap();
    assert_eq!(flipped.forward(&x).unwrap()[0], -ctrl.forward(&x).unwrap()[0]);
}
