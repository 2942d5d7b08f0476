use fluoroseg::coco::CocoDataset;
use fluoroseg::geometry::{BBox, BinaryMask};
use fluoroseg::netpbm::GrayImage;
use fluoroseg::segment::{
    assemble_detections, nms, segment, sort_by_score, threshold_segment, train, Backend, Detection, ProtoConfig, ProtoModel,
    ThresholdConfig, ThresholdMode, TrainConfig, TrainingSet,
};
use fluoroseg::synth::{generate_dataset, ScenarioClass, ScenarioMix, SceneGeometry, SynthSample};
use fluoroseg::{Category, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clean(n: usize, size: usize, seed: u64) -> Vec<SynthSample> {
    generate_dataset(n, &ScenarioMix::pure(ScenarioClass::Clean), seed, &SceneGeometry::standard(size)).unwrap()
}

fn union(masks: impl IntoIterator<Item = BinaryMask>, w: usize, h: usize) -> BinaryMask {
    masks.into_iter().fold(BinaryMask::new(w, h), |acc, m| acc.or(&m).unwrap())
}

#[test]
fn threshold_reproduces_clean_ground_truth() {
    // Without morphology the clean image is reproduced pixel for pixel.
    let exact = ThresholdConfig { morph_radius: 0, min_area: 1, ..Default::default() };
    for s in clean(20, 128, 3) {
        let (w, h) = (s.image.width(), s.image.height());
        let dets = threshold_segment(&s.image, &exact);
        let found = union(dets.iter().map(|d| d.mask.clone()), w, h);
        let truth = union(s.parts.iter().map(|p| p.mask.clone()), w, h);
        assert_eq!(found, truth, "seed {}", s.seed);
        for d in &dets {
            assert_eq!(d.category, Category::Implant);
            assert_eq!(d.score, 1.0);
            let best = s.parts.iter().map(|p| d.mask.iou(&p.mask).unwrap()).fold(0.0, f64::max);
            assert!(best >= 0.99, "seed {}: component IoU {best}", s.seed);
        }
    }
}

#[test]
fn default_morphology_costs_little_on_clean_frames() {
    // Opening shaves thin slivers, so this holds at 256 but not at 128.
    for s in clean(10, 256, 3) {
        for d in threshold_segment(&s.image, &ThresholdConfig::default()) {
            let best = s.parts.iter().map(|p| d.mask.iou(&p.mask).unwrap()).fold(0.0, f64::max);
            assert!(best >= 0.99, "seed {}: component IoU {best}", s.seed);
        }
    }
}

#[test]
fn threshold_on_blank_image_is_empty() {
    for v in [0, 150, 255] {
        let img = GrayImage::filled(64, 64, v);
        assert!(segment(&Backend::Threshold(ThresholdConfig::default()), &img).unwrap().is_empty());
    }
}

#[test]
fn fixed_threshold_ignores_background_offset() {
    let cfg = ThresholdConfig { threshold: ThresholdMode::Fixed(100), ..Default::default() };
    for s in clean(10, 128, 5) {
        let base = threshold_segment(&s.image, &cfg);
        for offset in [-40i16, -20, 30, 90] {
            let mut shifted = s.image.clone();
            for p in shifted.pixels_mut() {
                if *p >= 100 {
                    *p = (*p as i16 + offset).clamp(100, 255) as u8;
                }
            }
            let again = threshold_segment(&shifted, &cfg);
            assert_eq!(base.len(), again.len());
            for (a, b) in base.iter().zip(&again) {
                assert_eq!(a.mask, b.mask);
            }
        }
    }
}

#[test]
fn segment_is_pure() {
    let model = ProtoModel::init(11);
    let backend = Backend::Proto(model, ProtoConfig { conf_thresh: 0.3, nms_iou: 0.5 });
    for s in clean(3, 64, 1) {
        assert_eq!(segment(&backend, &s.image).unwrap(), segment(&backend, &s.image).unwrap());
    }
}

#[test]
fn proto_detections_satisfy_invariants() {
    // An untrained model with a low gate produces plenty of candidates.
    let model = ProtoModel::init(2);
    for s in clean(4, 128, 8) {
        let heads = model.forward(&s.image).unwrap();
        let dets = assemble_detections(&heads, 0.2, 0.5);
        for d in &dets {
            d.validate(128, 128).unwrap();
            let grown = d.bbox.expanded(1.0);
            for y in 0..128 {
                for x in 0..128 {
                    if d.mask.get(x, y) {
                        assert!(grown.contains(&BBox::new(x as f64, y as f64, 1.0, 1.0)));
                    }
                }
            }
        }
        for (i, a) in dets.iter().enumerate() {
            for b in &dets[i + 1..] {
                if a.category == b.category {
                    assert!(a.bbox.iou(&b.bbox) <= 0.5);
                }
            }
        }
    }
}

fn random_detection(rng: &mut ChaCha8Rng) -> Detection {
    let x = rng.gen_range(0..40) as f64;
    let y = rng.gen_range(0..40) as f64;
    let bbox = BBox::new(x, y, rng.gen_range(4..24) as f64, rng.gen_range(4..24) as f64);
    let mask = BinaryMask::from_fn(64, 64, |px, py| bbox.contains(&BBox::new(px as f64, py as f64, 1.0, 1.0)));
    let category = [Category::Femur, Category::Tibia][rng.gen_range(0..2)];
    Detection { category, score: rng.gen_range(0.0..1.0), bbox: mask.bbox().unwrap(), mask }
}

#[test]
fn nms_leaves_no_overlapping_same_category_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let mut dets: Vec<_> = (0..rng.gen_range(0..15)).map(|_| random_detection(&mut rng)).collect();
        let thr = rng.gen_range(0.1..0.9);
        sort_by_score(&mut dets);
        let kept = nms(dets.clone(), thr);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                assert!(a.category != b.category || a.bbox.iou(&b.bbox) <= thr);
            }
        }
        // every dropped detection is covered by a higher-scoring survivor
        for d in &dets {
            if !kept.contains(d) {
                assert!(kept
                    .iter()
                    .any(|k| k.category == d.category && k.score >= d.score && k.bbox.iou(&d.bbox) > thr));
            }
        }
        assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

fn training_set(n: usize, size: usize) -> TrainingSet {
    let samples = clean(n, size, 4);
    let ds = CocoDataset::from_samples(&samples, None);
    let images: Vec<_> = samples.into_iter().map(|s| s.image).collect();
    TrainingSet::new(&ds, &images).unwrap()
}

#[test]
fn zero_iterations_leave_model_unchanged() {
    let set = training_set(4, 64);
    let mut model = ProtoModel::init(5);
    let before = model.clone();
    let trace = train(&mut model, &set, &TrainConfig { iterations: 0, ..Default::default() }).unwrap();
    assert!(trace.is_empty());
    assert_eq!(model.params(), before.params());
}

#[test]
fn training_is_bit_deterministic_and_learns() {
    let set = training_set(8, 64);
    let cfg = TrainConfig { iterations: 60, batch_size: 2, warmup: 10, seed: 3, ..Default::default() };
    let run = || {
        let mut model = ProtoModel::init(1);
        let trace = train(&mut model, &set, &cfg).unwrap();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        (trace, bytes)
    };
    let (trace_a, ckpt_a) = run();
    let (trace_b, ckpt_b) = run();
    assert_eq!(ckpt_a, ckpt_b);
    assert_eq!(trace_a, trace_b);
    assert_eq!(trace_a.len(), 60);
    let head: f64 = trace_a[..10].iter().sum();
    let tail: f64 = trace_a[50..].iter().sum();
    assert!(tail < head, "loss went from {head} to {tail}");

    let other = TrainConfig { seed: 4, ..cfg };
    let mut model = ProtoModel::init(1);
    train(&mut model, &set, &other).unwrap();
    let mut bytes = Vec::new();
    model.write_to(&mut bytes).unwrap();
    assert_ne!(bytes, ckpt_a);
}

#[test]
fn empty_dataset_is_config_error() {
    let ds = CocoDataset::empty();
    assert!(matches!(TrainingSet::new(&ds, &[]), Err(Error::Config(_))));
}

#[test]
fn bad_train_config_is_rejected() {
    let set = training_set(2, 64);
    let mut model = ProtoModel::zeros();
    for cfg in [
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { lr: -1.0, ..Default::default() },
        TrainConfig { momentum: 1.0, ..Default::default() },
    ] {
        assert!(matches!(train(&mut model, &set, &cfg), Err(Error::Config(_))));
    }
}

#[test]
fn checkpoint_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fseg");
    let model = ProtoModel::init(42);
    model.save(&path).unwrap();
    let back = ProtoModel::load(&path).unwrap();
    assert_eq!(back.params(), model.params());
    std::fs::write(&path, b"garbage").unwrap();
    assert!(ProtoModel::load(&path).is_err());
}
