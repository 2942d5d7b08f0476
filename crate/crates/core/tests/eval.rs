use std::collections::BTreeMap;

use fluoroseg::coco::{CocoAnnotation, CocoDataset, CocoImage, RleMask};
use fluoroseg::eval::{
    average_precision, default_thresholds, evaluate, iou, match_detections, GroundTruth, IouKind, Predictions,
};
use fluoroseg::geometry::BinaryMask;
use fluoroseg::segment::Detection;
use fluoroseg::{Category, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod support;

use support::*;

#[test]
fn evaluate_matches_oracle_on_random_scenes() {
    let thresholds = default_thresholds();
    for seed in 0..100 {
        let (ds, preds) = scene(seed, 3, 4, 6);
        let report = evaluate(&preds, &ds, &thresholds, &IouKind::BOTH, false).unwrap();
        for kind in IouKind::BOTH {
            for (i, &t) in thresholds.iter().enumerate() {
                let got = report.map_at(kind, i);
                let want = oracle_map(&ds, &preds, t, kind);
                match (got, want) {
                    (Some(g), Some(w)) => assert!((g - w).abs() < 1e-9, "seed {seed} {kind}@{t}: {g} vs {w}"),
                    (g, w) => assert_eq!(g, w, "seed {seed} {kind}@{t}"),
                }
            }
        }
    }
}

#[test]
fn mask_iou_equals_popcount() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let a = BinaryMask::from_bits(W, H, (0..W * H).map(|_| rng.gen_bool(0.4)).collect()).unwrap();
        let b = BinaryMask::from_bits(W, H, (0..W * H).map(|_| rng.gen_bool(0.4)).collect()).unwrap();
        let inter = a.bits().iter().zip(b.bits()).filter(|(p, q)| **p && **q).count();
        let union = a.bits().iter().zip(b.bits()).filter(|(p, q)| **p || **q).count();
        let want = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        assert_eq!(a.iou(&b).unwrap(), want);
    }
    let empty = BinaryMask::new(3, 3);
    assert_eq!(empty.iou(&empty).unwrap(), 0.0);
    assert!(matches!(empty.iou(&BinaryMask::new(3, 4)), Err(Error::Shape(_))));
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Maximum number of one-to-one same-category pairs at IoU ≥ t, by trying
/// every assignment of ground truths to detection slots.
fn optimal_tp(dets: &[Detection], gts: &[GroundTruth], t: f64, kind: IouKind) -> usize {
    let slots = dets.len().max(gts.len());
    let mut best = 0;
    for perm in permutations(slots) {
        let tp = (0..dets.len())
            .filter(|&i| {
                let j = perm[i];
                j < gts.len() && gts[j].category == dets[i].category && iou(kind, &dets[i], &gts[j]).unwrap() >= t
            })
            .count();
        best = best.max(tp);
    }
    best
}

#[test]
fn greedy_matching_never_beats_optimal_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let n_gt = rng.gen_range(0..=5);
        let gts: Vec<GroundTruth> =
            (0..n_gt).map(|_| as_gt(&detection(category(&mut rng), 1.0, random_blob(&mut rng)))).collect();
        let n_det = rng.gen_range(0..=5);
        let mut dets: Vec<Detection> = (0..n_det)
            .map(|_| detection(category(&mut rng), rng.gen(), random_blob(&mut rng)))
            .collect();
        dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        let t = rng.gen_range(0.1..0.9);
        for kind in IouKind::BOTH {
            let flags = match_detections(&dets, &gts, t, kind).unwrap();
            let greedy = flags.iter().filter(|&&f| f).count();
            let best = optimal_tp(&dets, &gts, t, kind);
            assert!(greedy <= best);
            // when each detection has at most one eligible partner, greedy is optimal
            let eligible = |d: &Detection| {
                gts.iter().filter(|g| g.category == d.category && iou(kind, d, *g).unwrap() >= t).count()
            };
            let contested = gts.iter().any(|g| {
                dets.iter().filter(|d| d.category == g.category && iou(kind, *d, g).unwrap() >= t).count() > 1
            });
            if dets.iter().all(|d| eligible(d) <= 1) && !contested {
                assert_eq!(greedy, best);
            }
        }
    }
}

#[test]
fn ap_does_not_rise_with_threshold() {
    let thresholds = default_thresholds();
    for seed in 100..300 {
        let (ds, preds) = scene(seed, 2, 4, 6);
        let report = evaluate(&preds, &ds, &thresholds, &IouKind::BOTH, false).unwrap();
        for kind in IouKind::BOTH {
            for cat in [Category::Femur, Category::Tibia] {
                let aps: Vec<Option<f64>> = (0..thresholds.len()).map(|i| report.ap(kind, cat, i)).collect();
                for w in aps.windows(2) {
                    if let (Some(a), Some(b)) = (w[0], w[1]) {
                        assert!(b <= a + 1e-12, "seed {seed}: {aps:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn perfect_predictions_score_hundred() {
    let (ds, _) = scene(7, 4, 4, 0);
    let mut preds = Predictions::new();
    for a in &ds.annotations {
        let d = detection(Category::from_coco_id(a.category_id).unwrap(), 1.0, a.segmentation.decode().unwrap());
        preds.entry(a.image_id).or_default().push(d);
    }
    let report = evaluate(&preds, &ds, &default_thresholds(), &IouKind::BOTH, false).unwrap();
    for e in &report.entries {
        assert!(e.ap.is_none() || e.ap == Some(100.0), "{e:?}");
    }
    assert_eq!(report.map(IouKind::Mask), Some(100.0));
}

#[test]
fn single_pair_at_iou_point_seven() {
    // GT 10 pixels, prediction 7 of them: IoU exactly 0.7
    let g = BinaryMask::from_fn(W, H, |x, y| y == 0 && x < 10);
    let p = BinaryMask::from_fn(W, H, |x, y| y == 0 && x < 7);
    let mut ds = CocoDataset::empty();
    ds.images.push(CocoImage { id: 1, file_name: "a".into(), width: W, height: H });
    ds.annotations.push(CocoAnnotation {
        id: 1,
        image_id: 1,
        category_id: 1,
        bbox: g.bbox().unwrap(),
        area: 10,
        segmentation: RleMask::encode(&g),
        iscrowd: 0,
    });
    let preds: Predictions = BTreeMap::from([(1, vec![detection(Category::Femur, 0.9, p)])]);
    let thresholds = default_thresholds();
    let report = evaluate(&preds, &ds, &thresholds, &[IouKind::Mask], false).unwrap();
    for (i, &t) in thresholds.iter().enumerate() {
        let want = if t <= 0.7 { 100.0 } else { 0.0 };
        assert_eq!(report.ap(IouKind::Mask, Category::Femur, i), Some(want), "t = {t}");
    }
    // tibia has neither truth nor predictions
    assert_eq!(report.ap(IouKind::Mask, Category::Tibia, 0), None);
}

#[test]
fn class_agnostic_merges_categories() {
    let f = BinaryMask::from_fn(W, H, |x, y| x < 4 && y < 4);
    let t = BinaryMask::from_fn(W, H, |x, y| x >= 6 && y >= 5);
    let mut ds = CocoDataset::empty();
    ds.images.push(CocoImage { id: 1, file_name: "a".into(), width: W, height: H });
    for (i, (cat, m)) in [(1, &f), (2, &t)].into_iter().enumerate() {
        ds.annotations.push(CocoAnnotation {
            id: i as u64 + 1,
            image_id: 1,
            category_id: cat,
            bbox: m.bbox().unwrap(),
            area: m.count() as u64,
            segmentation: RleMask::encode(m),
            iscrowd: 0,
        });
    }
    let preds: Predictions = BTreeMap::from([(
        1,
        vec![detection(Category::Implant, 1.0, f.clone()), detection(Category::Implant, 1.0, t.clone())],
    )]);
    let agnostic = evaluate(&preds, &ds, &[0.5], &IouKind::BOTH, true).unwrap();
    assert_eq!(agnostic.categories, vec![Category::Implant]);
    assert_eq!(agnostic.map(IouKind::Mask), Some(100.0));
    // class-aware: implant predictions match nothing
    let aware = evaluate(&preds, &ds, &[0.5], &IouKind::BOTH, false).unwrap();
    assert_eq!(aware.map(IouKind::Mask), Some(0.0));
}

#[test]
fn unknown_image_is_a_validation_error() {
    let (ds, _) = scene(3, 1, 1, 0);
    let preds: Predictions = BTreeMap::from([(999, vec![])]);
    let r = evaluate(&preds, &ds, &[0.5], &[IouKind::Box], false);
    assert!(matches!(r, Err(Error::Validation(_))));
}

#[test]
fn image_order_does_not_matter() {
    for seed in 0..30 {
        let (mut ds, preds) = scene(seed, 4, 3, 5);
        let a = evaluate(&preds, &ds, &default_thresholds(), &IouKind::BOTH, false).unwrap();
        ds.images.reverse();
        ds.annotations.reverse();
        let b = evaluate(&preds, &ds, &default_thresholds(), &IouKind::BOTH, false).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn hand_evaluated_interpolation() {
    let want = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
    assert!((average_precision(&[true, false, true], 2).unwrap() - want).abs() < 1e-15);
}
