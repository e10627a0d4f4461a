use proptest::prelude::*;

use shortcut_core::net::conv::{backward_input, forward, ConvGeometry};
use shortcut_core::phantom::{generate_cohort, generate_phantom, split_dataset, PhantomSpec, SignalMode};
use shortcut_core::prep::{apply_config, residual_fraction_curve, ConfigId, PrepConfig};
use shortcut_core::relevance::{mean_heatmap, relevance_mask};
use shortcut_core::similarity::{emd, iou, minmax_normalize, mssim, pearson, rmse};
use shortcut_core::spray::{adjusted_rand_index, affinity, group_mean_heatmaps, laplacian_spectrum};
use shortcut_core::stats::{holm, mcnemar_exact, DiscreteTest, HolmVariant};
use shortcut_core::{Class, Dims, Volume};

fn small_spec() -> PhantomSpec {
    PhantomSpec { dims: Dims::cube(8), shell_thickness_vox: 0.5, ..Default::default() }
}

fn volume(d: Dims, lo: f32, hi: f32) -> impl Strategy<Value = Volume> {
    prop::collection::vec(lo..hi, d.len()).prop_map(move |v| Volume::new(d, 1.0, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_are_subject_disjoint_and_stratified(n in 20usize..60, per in 1usize..3, seed in any::<u64>()) {
        let recs = generate_cohort(&small_spec(), n, per, 11).unwrap();
        let split = split_dataset(&recs, seed).unwrap();
        let subjects = |ix: &[usize]| {
            let mut s: Vec<&str> = ix.iter().map(|&i| recs[i].subject_id.as_str()).collect();
            s.sort();
            s.dedup();
            s
        };
        let sets: Vec<Vec<&str>> = split.sets().iter().map(|s| subjects(s)).collect();
        for a in 0..3 {
            for b in a + 1..3 {
                prop_assert!(sets[a].iter().all(|s| !sets[b].contains(s)));
            }
        }
        let total: usize = sets.iter().map(Vec::len).sum();
        prop_assert_eq!(total, n);
        // every image of a subject follows it
        prop_assert_eq!(split.sets().iter().map(|s| s.len()).sum::<usize>(), recs.len());
        let ad_total = (0..n).filter(|i| i % 2 == 1).count() as f64;
        for set in &sets {
            let ad = set.iter().filter(|s| {
                recs.iter().find(|r| r.subject_id == **s).unwrap().class == Class::Ad
            }).count() as f64;
            let expected = ad_total * set.len() as f64 / n as f64;
            prop_assert!((ad - expected).abs() <= 1.0, "{} AD of {} vs {:.2}", ad, set.len(), expected);
        }
    }

    #[test]
    fn ventricle_growth_removes_tissue(seed in any::<u64>(), lo in 0.05f64..0.2, step in 0.05f64..0.2) {
        let base = PhantomSpec {
            noise_sigma: 0.0,
            signal_mode: SignalMode::MorphologyOnly,
            brain_radius_frac: [0.7, 0.7],
            ..small_spec()
        };
        let count = |v: f64| {
            let spec = PhantomSpec { ventricle_radius_frac: [v, v], ..base.clone() };
            let r = generate_phantom(&spec, seed, Class::Nc).unwrap();
            r.image.data().iter().zip(r.brain_mask.data()).filter(|(&x, &m)| m > 0.0 && x > 0.1).count()
        };
        // grow until at least one more voxel centre is swallowed
        let mut hi = lo + step;
        while hi < 0.49 && count(hi) == count(lo) {
            hi += 0.02;
        }
        if hi < 0.49 {
            prop_assert!(count(hi) < count(lo));
        }
    }

    #[test]
    fn residual_curve_non_increasing(img in volume(Dims::cube(4), 0.0, 1.5), mut ts in prop::collection::vec(0.0f64..1.5, 1..8)) {
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mask = Volume::filled(Dims::cube(4), 1.0, 1.0);
        let c = residual_fraction_curve(&img, &mask, &ts).unwrap();
        prop_assert!(c.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn strip_and_binarize_commute(img in volume(Dims::cube(4), 0.0, 1.5), bits in prop::collection::vec(any::<bool>(), 64)) {
        let mask = Volume::new(Dims::cube(4), 1.0, bits.iter().map(|&b| b as u8 as f32).collect()).unwrap();
        for id in [ConfigId::B2, ConfigId::C2, ConfigId::D2] {
            let both = apply_config(&img, &mask, id.config()).unwrap();
            prop_assert!(both.is_binary());
            let binarized = apply_config(&img, &mask, PrepConfig { id, skull_strip: false, binarize_frac: id.binarize_frac() }).unwrap();
            let stripped_after = apply_config(&binarized, &mask, PrepConfig { id, skull_strip: true, binarize_frac: None }).unwrap();
            prop_assert_eq!(both, stripped_after);
        }
    }

    #[test]
    fn relevance_masks_nest(map in volume(Dims::cube(4), 0.0, 3.0)) {
        prop_assume!(map.sum() > 0.0);
        let narrow = relevance_mask(&map, 0.1).unwrap();
        let wide = relevance_mask(&map, 0.4).unwrap();
        prop_assert!(narrow.data().iter().zip(wide.data()).all(|(&a, &b)| a <= b));
    }

    #[test]
    fn mean_heatmap_order_free(maps in prop::collection::vec(volume(Dims::cube(3), -1.0, 1.0), 1..6)) {
        let fwd = mean_heatmap(&maps).unwrap();
        let rev = mean_heatmap(maps.iter().rev()).unwrap();
        for (a, b) in fwd.data().iter().zip(rev.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn similarity_symmetric(a in volume(Dims::cube(7), 0.0, 1.0), b in volume(Dims::cube(7), 0.0, 1.0)) {
        prop_assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
        prop_assert_eq!(mssim(&a, &b).unwrap(), mssim(&b, &a).unwrap());
        prop_assert_eq!(emd(&a, &b).unwrap(), emd(&b, &a).unwrap());
        let p = pearson(&a, &b).unwrap();
        prop_assert!((p - pearson(&b, &a).unwrap()).abs() <= 1e-15 && (-1.0..=1.0).contains(&p));
        let (ma, mb) = (relevance_mask(&a, 0.4).unwrap(), relevance_mask(&b, 0.4).unwrap());
        let j = iou(&ma, &mb).unwrap();
        prop_assert!(j == iou(&mb, &ma).unwrap() && (0.0..=1.0).contains(&j));
        let s = mssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn minmax_idempotent(a in volume(Dims::cube(3), -5.0, 5.0)) {
        prop_assume!(a.max() > a.min());
        let once = minmax_normalize(&a).unwrap();
        let twice = minmax_normalize(&once).unwrap();
        for (x, y) in once.data().iter().zip(twice.data()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn emd_shift_is_exact(vals in prop::collection::vec(0.0f32..1.0, 4 * 3 * 3), shift in 1usize..5) {
        // content in x ∈ [0, 4), shifted copy stays inside x < 9
        prop_assume!(vals.iter().any(|&v| v > 0.0));
        let d = Dims::new(9, 3, 3);
        let mut a = Volume::zeros(d, 1.0);
        let mut b = Volume::zeros(d, 1.0);
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..4 {
                    let v = vals[(z * 3 + y) * 4 + x];
                    a.set(x, y, z, v);
                    b.set(x + shift, y, z, v);
                }
            }
        }
        let e = emd(&a, &b).unwrap();
        prop_assert!((e - shift as f64 / 3.0).abs() <= 1e-12, "{} vs {}", e, shift as f64 / 3.0);
    }

    #[test]
    fn mcnemar_symmetric(b in 0u64..300, c in 0u64..300) {
        prop_assert_eq!(mcnemar_exact(b, c), mcnemar_exact(c, b));
        let p = mcnemar_exact(b, c);
        prop_assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn holm_monotone_and_discrete_dominates(pairs in prop::collection::vec((0u64..15, 0u64..15), 1..12)) {
        let tests: Vec<DiscreteTest> = pairs.iter().map(|&(b, c)| DiscreteTest::mcnemar(b, c)).collect();
        let plain = holm(&tests, 0.05, HolmVariant::Plain).unwrap();
        let disc = holm(&tests, 0.05, HolmVariant::Discrete).unwrap();
        for i in 0..tests.len() {
            prop_assert!(!plain.reject[i] || disc.reject[i]);
            for j in 0..tests.len() {
                if tests[i].p <= tests[j].p {
                    prop_assert!(!disc.reject[j] || disc.reject[i]);
                    prop_assert!(!plain.reject[j] || plain.reject[i]);
                }
            }
            prop_assert!(disc.adjusted[i] <= plain.adjusted[i] + 1e-15);
        }
    }

    #[test]
    fn laplacian_spectrum_bounded(points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 6..20)) {
        let g = affinity(&points, 3).unwrap();
        for i in 0..g.n {
            prop_assert_eq!(g.get(i, i), 0.0);
            for j in 0..g.n {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let s = laplacian_spectrum(&g).unwrap();
        prop_assert!(s.eigenvalues.iter().all(|&l| (-1e-8..=2.0 + 1e-8).contains(&l)));
        prop_assert!(s.eigenvalues[0].abs() < 1e-8);
        prop_assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ari_ignores_label_names(labels in prop::collection::vec(0usize..3, 4..30), perm in Just([2usize, 0, 1])) {
        let renamed: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let v = adjusted_rand_index(&labels, &renamed).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn group_means_order_free(vals in prop::collection::vec(0.0f32..1.0, 6)) {
        let maps: Vec<Volume> = vals.iter().map(|&v| Volume::filled(Dims::cube(2), 1.0, v)).collect();
        let labels = [0, 1, 0, 1, 0, 1];
        let fwd = group_mean_heatmaps(&maps, &labels, 2).unwrap();
        let rev_maps: Vec<Volume> = maps.iter().rev().cloned().collect();
        let rev_labels: Vec<usize> = labels.iter().rev().copied().collect();
        let rev = group_mean_heatmaps(&rev_maps, &rev_labels, 2).unwrap();
        for (a, b) in fwd.iter().zip(&rev) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            prop_assert!((a.data()[0] - b.data()[0]).abs() <= 1e-6);
        }
    }

    #[test]
    fn conv_adjoint_identity(ic in 1usize..3, oc in 1usize..3, n in 2usize..6, stride in 1usize..3, seed in any::<u64>()) {
        let g = ConvGeometry::new(ic, oc, Dims::new(n, n + 1, n), stride);
        let mut s = seed;
        let mut next = || {
            s = shortcut_core::seed::mix(s);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let x: Vec<f64> = (0..g.input_len()).map(|_| next()).collect();
        let y: Vec<f64> = (0..g.output_len()).map(|_| next()).collect();
        let w: Vec<f64> = (0..g.weight_len()).map(|_| next()).collect();
        let mut wx = vec![0.0; g.output_len()];
        forward(&g, &x, &w, &vec![0.0; oc], &mut wx);
        let mut wty = vec![0.0; g.input_len()];
        backward_input(&g, &y, &w, &mut wty);
        let lhs: f64 = wx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&wty).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}
