mod common;

use carcensus::adapt::{fit_resolution_hist, sample_crop, Histogram};
use carcensus::calibrate::{fit_isotonic, fit_location_prior, iou, learn_alpha, EvalImage, ScoredBox};
use carcensus::census::{expected_attribute, expected_class_count, merge_shards, truncate_topk, Aggregator, Grouping};
use carcensus::demographics::{fit_ridge, pearson_r};
use carcensus::ingest::{BBox, ImageDims};
use carcensus::spatial::{
    build_weights, classify_clusters, getis_ord_gistar, haversine_m, morans_i, ClusterLabel, GeoPoint, PointPattern,
    WeightScheme,
};
use carcensus::taxonomy::{attribute_accuracy, confusion_matrix, AttributeKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bbox() -> impl Strategy<Value = BBox> {
    (20.0..620.0f64, 20.0..460.0f64, 2.0..200.0f64, 2.0..150.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
}

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<GeoPoint>> {
    prop::collection::vec((0.0..0.02f64, 0.0..0.02f64, -50.0..50.0f64), n).prop_map(|v| {
        v.into_iter().map(|(lat, lon, value)| GeoPoint { lat: 41.0 + lat, lon: -87.0 + lon, value }).collect()
    })
}

fn varied(pts: &[GeoPoint]) -> bool {
    let first = pts[0].value;
    pts.iter().any(|p| (p.value - first).abs() > 1e-3)
}

proptest! {
    #[test]
    fn isotonic_matches_oracle(labels in prop::collection::vec(any::<bool>(), 1..=8), ties in prop::collection::vec(0u8..3, 8)) {
        // scores with occasional ties: equal scores pool before the monotone fit
        let mut score = 0.0;
        let mut pairs = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            if i > 0 && ties[i] != 0 {
                score += 1.0;
            }
            pairs.push((score, l));
        }
        let model = fit_isotonic(&pairs).unwrap();
        // oracle over tie groups, weighted by group size
        let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
        for &(s, l) in &pairs {
            match groups.last_mut() {
                Some((gs, ys)) if *gs == s => ys.push(l as u8 as f64),
                _ => groups.push((s, vec![l as u8 as f64])),
            }
        }
        let expanded: Vec<f64> = groups.iter().flat_map(|(_, ys)| {
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            std::iter::repeat_n(m, ys.len())
        }).collect();
        let want = common::exhaustive_isotonic(&expanded);
        for (&(s, _), w) in pairs.iter().zip(&want) {
            prop_assert!((model.apply(s) - w).abs() < 1e-9);
        }
    }

    #[test]
    fn isotonic_apply_is_monotone(pairs in prop::collection::vec((-5.0..5.0f64, any::<bool>()), 1..60), probes in prop::collection::vec(-8.0..8.0f64, 2..40)) {
        let model = fit_isotonic(&pairs).unwrap();
        let mut probes = probes;
        probes.sort_by(f64::total_cmp);
        for w in probes.windows(2) {
            prop_assert!(model.apply(w[0]) <= model.apply(w[1]));
        }
    }

    #[test]
    fn augmentation_preserves_rank_within_a_bin(b in bbox(), s1 in -3.0..3.0f64, s2 in -3.0..3.0f64, alpha in 0.0..2.0f64, train in prop::collection::vec(bbox(), 1..30)) {
        let dims = ImageDims::new(640, 480);
        let boxes: Vec<_> = train.iter().map(|t| (*t, dims)).collect();
        let prior = fit_location_prior(&boxes, 20).unwrap().with_alpha(alpha);
        let (a1, a2) = (prior.augment_score(s1, &b, dims), prior.augment_score(s2, &b, dims));
        prop_assert_eq!(s1 < s2, a1 < a2);
    }

    #[test]
    fn prior_is_resolution_invariant(train in prop::collection::vec(bbox(), 1..40), shift in 0u32..4) {
        let s = f64::from(1u32 << shift);
        let dims = ImageDims::new(640, 480);
        let big = ImageDims::new(640 << shift, 480 << shift);
        let a = fit_location_prior(&train.iter().map(|b| (*b, dims)).collect::<Vec<_>>(), 20).unwrap();
        let scaled: Vec<_> = train.iter().map(|b| (BBox::new(b.x_center * s, b.y_center * s, b.width * s, b.height * s).unwrap(), big)).collect();
        let b = fit_location_prior(&scaled, 20).unwrap();
        prop_assert_eq!(a.counts(), b.counts());
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn topk_keeps_the_heaviest_entries(raw in prop::collection::vec(0.0..1.0f64, 1..60), k in 1usize..25) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let dist: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let kept = truncate_topk(&dist, k).unwrap();
        prop_assert!(kept.len() <= k);
        prop_assert!(kept.windows(2).all(|w| w[0].prob >= w[1].prob));
        let mut sorted = dist.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let best: f64 = sorted.iter().take(k).sum();
        let got: f64 = kept.iter().map(|c| c.prob).sum();
        prop_assert!((best - got).abs() < 1e-12);
    }

    #[test]
    fn expectation_is_order_free_and_bounded(seed in any::<u64>(), n in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut recs: Vec<_> = (0..n).map(|_| common::random_record(&mut rng, "im", 40, 20)).collect();
        let e = expected_class_count(&recs).unwrap();
        prop_assert!(e.class_mass() <= e.expected_cars + 1e-12);
        recs.reverse();
        let r = expected_class_count(&recs).unwrap();
        for (a, b) in e.counts.iter().zip(&r.counts) {
            prop_assert_eq!(a.0, b.0);
            prop_assert!((a.1 - b.1).abs() <= 1e-15 * a.1.max(1.0));
        }
    }

    #[test]
    fn categorical_expectation_sums_to_mass(seed in any::<u64>(), n in 1usize..12) {
        let fx = common::region_fixture(1, 1, 0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs: Vec<_> = (0..n).map(|_| common::random_record(&mut rng, "im", fx.table.len() as u32, 20)).collect();
        let e = expected_class_count(&recs).unwrap();
        for kind in [AttributeKind::Make, AttributeKind::BodyType, AttributeKind::Foreign] {
            let total: f64 = match expected_attribute(&e, &fx.table, kind).unwrap() {
                carcensus::census::AttributeExpectation::Histogram(h) => h.values().sum(),
                other => panic!("{other:?}"),
            };
            prop_assert!((total - e.class_mass()).abs() < 1e-12 * e.class_mass().max(1.0));
        }
    }

    #[test]
    fn adding_an_image_never_lowers_total_cars(seed in any::<u64>()) {
        let fx = common::region_fixture(2, 6, 3, seed);
        let total_after = |count: usize| {
            let mut agg = Aggregator::new(&fx.table, &fx.images, Grouping::Zip);
            for i in 0..count {
                agg.add_image(&fx.images[i].image_id, &fx.records(i)).unwrap();
            }
            agg.into_accumulators().0.values().map(|r| r.expected_cars()).sum::<f64>()
        };
        let totals: Vec<f64> = (0..=fx.images.len()).map(total_after).collect();
        prop_assert!(totals.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn shard_merge_ignores_shard_order(seed in any::<u64>(), split in 1usize..11) {
        let fx = common::region_fixture(3, 4, 4, seed);
        let shard = |idx: &[usize]| {
            let images: Vec<_> = idx.iter().map(|&i| fx.images[i].clone()).collect();
            let mut agg = Aggregator::new(&fx.table, &images, Grouping::Zip);
            for &i in idx {
                agg.add_image(&fx.images[i].image_id, &fx.records(i)).unwrap();
            }
            agg.into_accumulators().0
        };
        let all: Vec<usize> = (0..fx.images.len()).collect();
        let (a, b) = (shard(&all[..split]), shard(&all[split..]));
        let ab = merge_shards(&[a.clone(), b.clone()]);
        let ba = merge_shards(&[b, a]);
        for (region, acc) in &ab {
            let x = acc.finish(region, &fx.table).unwrap();
            let y = ba[region].finish(region, &fx.table).unwrap();
            prop_assert_eq!(x.image_count, y.image_count);
            prop_assert!((x.total_expected_cars - y.total_expected_cars).abs() <= 1e-12 * x.total_expected_cars.max(1.0));
        }
    }

    #[test]
    fn attribute_accuracy_dominates_exact_accuracy(pairs in prop::collection::vec((0u32..40, 0u32..40), 1..50)) {
        let fx = common::region_fixture(1, 1, 0, 0);
        let (p, t): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
        let exact = p.iter().zip(&t).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;
        for kind in [AttributeKind::Make, AttributeKind::BodyType, AttributeKind::Country, AttributeKind::Foreign] {
            let acc = attribute_accuracy(&p, &t, kind, &fx.table).unwrap();
            prop_assert!(acc >= exact);
            let m = confusion_matrix(&p, &t, kind, &fx.table).unwrap();
            prop_assert_eq!(m.trace() as f64, (acc * p.len() as f64).round());
            for (row, counts) in m.rates.iter().zip(&m.counts) {
                let s: f64 = row.iter().sum();
                prop_assert!(counts.iter().sum::<u64>() == 0 || (s - 1.0).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn moran_affine_and_weight_scale_invariance(pts in points(5..60), a in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64], b in -1e3..1e3f64, c in 1e-3..1e3f64) {
        prop_assume!(varied(&pts));
        let p = PointPattern::new(pts).unwrap();
        let w = build_weights(&p, WeightScheme::InverseSquare).unwrap();
        let i0 = morans_i(&p, &w).unwrap();
        let moved: Vec<f64> = p.values().iter().map(|x| a * x + b).collect();
        let i1 = morans_i(&p.with_values(&moved).unwrap(), &w).unwrap();
        let i2 = morans_i(&p, &w.scaled(c)).unwrap();
        prop_assert!((i0 - i1).abs() < 1e-9);
        prop_assert!((i0 - i2).abs() < 1e-9);
    }

    #[test]
    fn gistar_ignores_value_shift_and_scale(pts in points(5..60), a in 0.01..100.0f64, b in -1e3..1e3f64) {
        prop_assume!(varied(&pts));
        let p = PointPattern::new(pts).unwrap();
        let w = build_weights(&p, WeightScheme::Band(800.0));
        prop_assume!(w.is_ok());
        let w = w.unwrap();
        let z0 = getis_ord_gistar(&p, &w).unwrap();
        let moved: Vec<f64> = p.values().iter().map(|x| a * x + b).collect();
        let z1 = getis_ord_gistar(&p.with_values(&moved).unwrap(), &w).unwrap();
        for (x, y) in z0.iter().zip(&z1) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-8 * x.abs().max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "definedness changed"),
            }
        }
    }

    #[test]
    fn haversine_is_a_symmetric_distance(a in (-80.0..80.0f64, -179.0..179.0f64), b in (-80.0..80.0f64, -179.0..179.0f64), c in (-80.0..80.0f64, -179.0..179.0f64)) {
        let d = |p: (f64, f64), q: (f64, f64)| haversine_m(p.0, p.1, q.0, q.1);
        prop_assert_eq!(d(a, b), d(b, a));
        prop_assert!(d(a, a) == 0.0);
        prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-6);
    }

    #[test]
    fn cluster_labels_are_monotone(mut z in prop::collection::vec(-5.0..5.0f64, 1..50), hot in 0.1..3.0f64, cold in -3.0..-0.1f64) {
        z.sort_by(f64::total_cmp);
        let labels = classify_clusters(&z.iter().map(|v| Some(*v)).collect::<Vec<_>>(), hot, cold).unwrap();
        let rank = |l: &ClusterLabel| match l { ClusterLabel::Cold => 0, ClusterLabel::None => 1, ClusterLabel::Hot => 2 };
        prop_assert_eq!(labels.len(), z.len());
        prop_assert!(labels.windows(2).all(|w| rank(&w[0]) <= rank(&w[1])));
    }

    #[test]
    fn ridge_predictions_survive_column_rescaling(seed in any::<u64>(), n in 6usize..40, d in 1usize..8, col in 0usize..8, scale in prop_oneof![-50.0..-0.1f64, 0.1..50.0f64], shift in -100.0..100.0f64, lambda in 0.0..10.0f64) {
        use rand::Rng;
        let col = col % d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let moved: Vec<Vec<f64>> = x.iter().map(|r| {
            let mut r = r.clone();
            r[col] = r[col] * scale + shift;
            r
        }).collect();
        prop_assume!(lambda > 0.0 || n > d + 1);
        let m0 = fit_ridge(&x, &y, lambda).unwrap();
        let m1 = fit_ridge(&moved, &y, lambda).unwrap();
        for (a, b) in x.iter().zip(&moved) {
            let (p0, p1) = (m0.predict(a).unwrap(), m1.predict(b).unwrap());
            prop_assert!((p0 - p1).abs() < 1e-8 * p0.abs().max(1.0), "{p0} vs {p1}");
        }
    }

    #[test]
    fn ridge_gradient_vanishes(seed in any::<u64>(), n in 3usize..60, d in 1usize..20, lambda in 0.01..100.0f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let m = fit_ridge(&x, &y, lambda).unwrap();
        // central finite differences of the penalized objective on standardized columns
        let objective = |w: &[f64]| -> f64 {
            let rss: f64 = x.iter().zip(&y).map(|(r, t)| {
                let z: f64 = (0..d).filter(|j| m.scales[*j] > 0.0).map(|j| (r[j] - m.means[j]) / m.scales[j] * w[j]).sum();
                (t - m.intercept - z).powi(2)
            }).sum();
            rss + lambda * w.iter().map(|v| v * v).sum::<f64>()
        };
        let h = 1e-5;
        for j in 0..d {
            if m.scales[j] == 0.0 {
                continue;
            }
            let (mut up, mut down) = (m.weights.clone(), m.weights.clone());
            up[j] += h;
            down[j] -= h;
            let g = (objective(&up) - objective(&down)) / (2.0 * h);
            prop_assert!(g.abs() < 1e-6 * (n as f64).max(1.0), "gradient {g}");
        }
    }

    #[test]
    fn pearson_symmetry_and_affine_maps(pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..40), a in 0.1..10.0f64, b in -50.0..50.0f64) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = pearson_r(&x, &y);
        prop_assume!(r.is_ok());
        let r = r.unwrap();
        prop_assert!((r - pearson_r(&y, &x).unwrap()).abs() < 1e-12);
        let pos: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let neg: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        prop_assert!((r - pearson_r(&pos, &y).unwrap()).abs() < 1e-9);
        prop_assert!((r + pearson_r(&neg, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn crops_stay_inside_the_image(truth in bbox(), seed in any::<u64>(), bin in 5usize..10) {
        let hist = Histogram::from_values(&[bin as f64 / 10.0 + 0.05], 10, 0.0, 1.0).unwrap();
        let dims = ImageDims::new(640, 480);
        let truth = truth.clamp_to(dims).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(c) = sample_crop(&truth, dims, &hist, &mut rng) {
            prop_assert!(c.inside(dims));
            prop_assert_eq!(hist.bin_of(iou(&c, &truth)), Some(bin));
        }
    }

    #[test]
    fn resolution_histogram_scales_with_boxes(train in prop::collection::vec(bbox(), 2..40), shift in 1u32..4) {
        let s = f64::from(1u32 << shift);
        let a = fit_resolution_hist(&train, 35).unwrap();
        let scaled: Vec<BBox> = train.iter().map(|b| BBox::new(b.x_center * s, b.y_center * s, b.width * s, b.height * s).unwrap()).collect();
        let b = fit_resolution_hist(&scaled, 35).unwrap();
        prop_assert_eq!(a.probabilities(), b.probabilities());
        for (ea, eb) in a.edges().iter().zip(b.edges()) {
            prop_assert!((ea * s - eb).abs() <= 1e-9 * eb.abs());
        }
    }

    #[test]
    fn learn_alpha_never_loses_to_zero(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ImageDims::new(640, 480);
        let mut images = Vec::new();
        let mut boxes = Vec::new();
        for i in 0..20 {
            let truths: Vec<BBox> = (0..3).map(|_| BBox::new(rng.random_range(50.0..590.0), rng.random_range(200.0..400.0), 60.0, 40.0).unwrap()).collect();
            boxes.extend(truths.iter().map(|t| (*t, dims)));
            let mut detections: Vec<ScoredBox> = truths.iter().map(|t| ScoredBox { bbox: *t, score: rng.random_range(-1.0..2.0) }).collect();
            detections.extend((0..3).map(|_| ScoredBox {
                bbox: BBox::new(rng.random_range(50.0..590.0), rng.random_range(40.0..440.0), rng.random_range(10.0..200.0), 40.0).unwrap(),
                score: rng.random_range(-2.0..1.5),
            }));
            images.push(EvalImage { image_id: format!("i{i}"), dims, detections, truths });
        }
        let prior = fit_location_prior(&boxes, 20).unwrap();
        let fit = learn_alpha(&prior, &images, 0.5, &[0.0, 0.5, 1.0, 1.5, 2.0]).unwrap();
        prop_assert!(fit.ap >= fit.ap_at(0.0).unwrap());
    }
}
