use calodiff::diffusion::{ddim_step, perturb, predict_x0, schedule_at, velocity_target, FnField};
use calodiff::eval::{auc, emd_1d, Histogram};
use calodiff::repr::format::{read_pointclouds, write_pointclouds};
use calodiff::repr::{
    denormalize_cloud, denormalize_image, from_masked, normalize_cloud, normalize_image, to_masked, voxelize,
    CloudStats,
};
use calodiff::showergen::{generate_event, smear_events};
use calodiff::{GeometrySpec, ShowerModelParams};
use proptest::prelude::*;

fn event(seed: u64, index: u64) -> calodiff::PointCloudEvent {
    generate_event(&GeometrySpec::default(), &ShowerModelParams::default(), seed, index).unwrap()
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..30)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn schedule_preserves_variance(t in 0.0f64..=1.0) {
        let (a, s) = schedule_at(t).unwrap();
        prop_assert!((a * a + s * s - 1.0).abs() < 1e-12);
        prop_assert!(a >= 0.0 && s >= 0.0);
    }

    #[test]
    fn clean_estimate_inverts_perturbation(
        x in prop::collection::vec(-10.0f64..10.0, 1..20),
        t in 1e-6f64..=1.0,
        seed in any::<u64>(),
    ) {
        let eps: Vec<f64> = x.iter().enumerate().map(|(i, _)| ((seed.wrapping_add(i as u64) % 1000) as f64 - 500.0) / 250.0).collect();
        let x_t = perturb(&x, t, &eps).unwrap();
        let v = velocity_target(&x, t, &eps).unwrap();
        let back = predict_x0(&x_t, &v, t).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let field = FnField(|_: &[f64], _: f64| v.clone());
        let s = t * 0.5;
        let stepped = ddim_step(&field, &x_t, t, s, &[], None).unwrap();
        let expected = perturb(&x, s, &eps).unwrap();
        for (a, b) in stepped.iter().zip(&expected) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn emd_is_a_symmetric_translation_covariant_metric(a in sample(), b in sample(), c in -50.0f64..50.0) {
        let d = emd_1d(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(rel_close(d, emd_1d(&b, &a).unwrap(), 1e-12));
        prop_assert_eq!(emd_1d(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
        prop_assert!(rel_close(emd_1d(&a, &shifted).unwrap(), c.abs(), 1e-9));
        let (sa, sb): (Vec<f64>, Vec<f64>) = (a.iter().map(|x| -2.0 * x).collect(), b.iter().map(|x| -2.0 * x).collect());
        prop_assert!(rel_close(emd_1d(&sa, &sb).unwrap(), 2.0 * d, 1e-9));
    }

    #[test]
    fn auc_flips_with_score_sign(scores in prop::collection::vec(-5.0f64..5.0, 2..60), seed in any::<u64>()) {
        let labels: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let a = auc(&scores, &labels).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((a + auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
        let squashed: Vec<f64> = scores.iter().map(|s| s.tanh() * 3.0 + 1.0).collect();
        prop_assert!((a - auc(&squashed, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_every_in_range_value_once(xs in prop::collection::vec(-2.0f64..12.0, 0..200), bins in 1usize..30) {
        let mut h = Histogram::linear(0.0, 10.0, bins).unwrap();
        h.fill_all(&xs);
        prop_assume!(!xs.contains(&10.0));
        let inside = xs.iter().filter(|&&x| (0.0..10.0).contains(&x)).count() as f64;
        prop_assert_eq!(h.total(), inside);
        let density = h.density();
        if h.total() > 0.0 {
            let area: f64 = density.counts.iter().zip(density.edges.windows(2)).map(|(c, e)| c * (e[1] - e[0])).sum();
            prop_assert!((area - 1.0).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn voxelization_conserves_energy(seed in any::<u64>(), index in 0u64..1000) {
        let g = GeometrySpec::default();
        let e = event(seed, index);
        let img = voxelize(&g, &e);
        prop_assert!(rel_close(img.total_energy(), e.total_energy(), 1e-9));
        prop_assert!(img.energies.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn image_normalization_round_trips(seed in any::<u64>(), index in 0u64..1000) {
        let g = GeometrySpec::default();
        let img = voxelize(&g, &event(seed, index));
        let n = normalize_image(&img).unwrap();
        for (z, empty) in n.empty_layers.iter().enumerate() {
            let plane = n.side * n.side;
            let s: f64 = n.fractions[z * plane..(z + 1) * plane].iter().sum();
            let ok = if *empty { s == 0.0 } else { (s - 1.0).abs() < 1e-12 };
            prop_assert!(ok);
        }
        let back = denormalize_image(&n.fractions, &n.layers, img.incident).unwrap();
        for (a, b) in back.energies.iter().zip(&img.energies) {
            prop_assert!(rel_close(*a, *b, 1e-12));
        }
    }

    #[test]
    fn cloud_normalization_round_trips(seed in any::<u64>()) {
        let g = GeometrySpec::default();
        let events: Vec<_> = (0..4).map(|i| event(seed, i)).collect();
        let smeared = smear_events(&g, &events, seed).unwrap();
        let stats = CloudStats::from_events(&smeared).unwrap();
        for e in &smeared {
            let mc = to_masked(&g, e).unwrap();
            let norm = normalize_cloud(&g, &stats, &mc).unwrap();
            for (row, m) in norm.features.iter().zip(&norm.mask) {
                if *m {
                    prop_assert!(row[..3].iter().all(|u| (-1.0..=1.0).contains(u)));
                } else {
                    prop_assert!(row.iter().all(|&u| u == 0.0));
                }
            }
            let back = from_masked(&denormalize_cloud(&g, &stats, &norm));
            prop_assert_eq!(back.hits.len(), e.hits.len());
            for (a, b) in back.hits.iter().zip(&e.hits) {
                prop_assert!(rel_close(a.energy, b.energy, 1e-9));
                for axis in 0..3 {
                    prop_assert!(rel_close(a.position[axis], b.position[axis], 1e-9));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn point_cloud_files_round_trip(seed in any::<u64>(), n in 1u64..12) {
        let g = GeometrySpec::default();
        let events: Vec<_> = (0..n).map(|i| event(seed, i)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.pc");
        write_pointclouds(&path, &g, &events).unwrap();
        prop_assert_eq!(read_pointclouds(&path, &g).unwrap(), events);
    }
}
