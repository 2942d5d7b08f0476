//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use fluoroseg::coco::{CocoAnnotation, CocoDataset, CocoImage, RleMask};
use fluoroseg::eval::{GroundTruth, IouKind, Predictions};
use fluoroseg::geometry::BinaryMask;
use fluoroseg::segment::Detection;
use fluoroseg::tensor::{Graph, Tensor, Var};
use fluoroseg::{Category, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- evaluation scenes and brute-force AP --------------------------------

pub const W: usize = 12;
pub const H: usize = 10;

pub fn random_blob<R: Rng>(rng: &mut R) -> BinaryMask {
    let (x0, y0) = (rng.gen_range(0..W - 2), rng.gen_range(0..H - 2));
    let (x1, y1) = (rng.gen_range(x0 + 1..=W), rng.gen_range(y0 + 1..=H));
    let mut m = BinaryMask::from_fn(W, H, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y));
    // ragged edge so box and mask IoU differ
    for _ in 0..3 {
        m.set(rng.gen_range(x0..x1), rng.gen_range(y0..y1), false);
    }
    if m.is_empty() {
        m.set(x0, y0, true);
    }
    m
}

pub fn category<R: Rng>(rng: &mut R) -> Category {
    if rng.gen_bool(0.5) {
        Category::Femur
    } else {
        Category::Tibia
    }
}

pub fn detection(category: Category, score: f64, mask: BinaryMask) -> Detection {
    let bbox = mask.bbox().unwrap();
    Detection { category, score, bbox, mask }
}

pub fn as_gt(d: &Detection) -> GroundTruth {
    GroundTruth { category: d.category, bbox: d.bbox, mask: d.mask.clone() }
}

/// Random multi-image scene: ground truth plus noisy predictions.
pub fn scene(seed: u64, images: usize, max_gt: usize, max_det: usize) -> (CocoDataset, Predictions) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = CocoDataset::empty();
    let mut preds = Predictions::new();
    for img in 1..=images as u64 {
        ds.images.push(CocoImage { id: img * 10, file_name: format!("{img}.pgm"), width: W, height: H });
        let n_gt = rng.gen_range(0..=max_gt);
        let mut gts = Vec::new();
        for _ in 0..n_gt {
            let m = random_blob(&mut rng);
            let cat = category(&mut rng);
            ds.annotations.push(CocoAnnotation {
                id: ds.annotations.len() as u64 + 1,
                image_id: img * 10,
                category_id: cat.coco_id(),
                bbox: m.bbox().unwrap(),
                area: m.count() as u64,
                segmentation: RleMask::encode(&m),
                iscrowd: 0,
            });
            gts.push((cat, m));
        }
        let n_det = rng.gen_range(0..=max_det);
        let mut dets = Vec::new();
        for _ in 0..n_det {
            // coarse scores so ties happen
            let score = f64::from(rng.gen_range(1..=5u8)) / 5.0;
            let d = if !gts.is_empty() && rng.gen_bool(0.7) {
                let (cat, m) = &gts[rng.gen_range(0..gts.len())];
                let mut m = m.clone();
                for _ in 0..rng.gen_range(0..6) {
                    let (x, y) = (rng.gen_range(0..W), rng.gen_range(0..H));
                    m.set(x, y, !m.get(x, y));
                }
                if m.is_empty() {
                    m.set(0, 0, true);
                }
                let cat = if rng.gen_bool(0.85) { *cat } else { category(&mut rng) };
                detection(cat, score, m)
            } else {
                detection(category(&mut rng), score, random_blob(&mut rng))
            };
            dets.push(d);
        }
        preds.insert(img * 10, dets);
    }
    ds.validate().unwrap();
    (ds, preds)
}

// ---- independent oracle -------------------------------------------------

pub fn oracle_iou(kind: IouKind, a: &Detection, b: &(Category, BinaryMask)) -> f64 {
    match kind {
        IouKind::Mask => {
            let (mut i, mut u) = (0, 0);
            for y in 0..H {
                for x in 0..W {
                    let (p, q) = (a.mask.get(x, y), b.1.get(x, y));
                    i += usize::from(p && q);
                    u += usize::from(p || q);
                }
            }
            if u == 0 { 0.0 } else { i as f64 / u as f64 }
        }
        IouKind::Box => {
            let bb = b.1.bbox().unwrap();
            let ix = (a.bbox.x + a.bbox.w).min(bb.x + bb.w) - a.bbox.x.max(bb.x);
            let iy = (a.bbox.y + a.bbox.h).min(bb.y + bb.h) - a.bbox.y.max(bb.y);
            let inter = ix.max(0.0) * iy.max(0.0);
            let union = a.bbox.w * a.bbox.h + bb.w * bb.h - inter;
            if union <= 0.0 { 0.0 } else { inter / union }
        }
    }
}

pub fn oracle_ap(flags: &[bool], positives: usize) -> Option<f64> {
    if positives == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let mut tp = 0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        prec.push(tp as f64 / (i + 1) as f64);
        rec.push(tp as f64 / positives as f64);
    }
    let mut total = 0.0;
    for j in 0..=100 {
        let r = j as f64 / 100.0;
        let best = (0..flags.len()).filter(|&i| rec[i] >= r).map(|i| prec[i]).fold(0.0, f64::max);
        total += best;
    }
    Some(total / 101.0)
}

pub fn oracle_map(ds: &CocoDataset, preds: &Predictions, t: f64, kind: IouKind) -> Option<f64> {
    let mut aps = Vec::new();
    for cat in [Category::Femur, Category::Tibia] {
        let mut pooled = Vec::new();
        let mut positives = 0;
        for img in &ds.images {
            let gts: Vec<(Category, BinaryMask)> = ds
                .annotations
                .iter()
                .filter(|a| a.image_id == img.id && a.category_id == cat.coco_id())
                .map(|a| (cat, a.segmentation.decode().unwrap()))
                .collect();
            positives += gts.len();
            let mut dets: Vec<(usize, &Detection)> = preds
                .get(&img.id)
                .map(|v| v.iter().filter(|d| d.category == cat).enumerate().collect())
                .unwrap_or_default();
            dets.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap().then(a.0.cmp(&b.0)));
            let mut used = vec![false; gts.len()];
            for (rank, (_, d)) in dets.iter().enumerate() {
                let mut pick = None;
                let mut best = t;
                for (j, g) in gts.iter().enumerate() {
                    let v = oracle_iou(kind, d, g);
                    if !used[j] && v >= best && pick.is_none_or(|_| v > best) {
                        pick = Some(j);
                        best = v;
                    }
                }
                if let Some(j) = pick {
                    used[j] = true;
                }
                pooled.push((d.score, img.id, rank, pick.is_some()));
            }
        }
        pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let flags: Vec<bool> = pooled.iter().map(|p| p.3).collect();
        if let Some(ap) = oracle_ap(&flags, positives) {
            aps.push(100.0 * ap);
        }
    }
    if aps.is_empty() { None } else { Some(aps.iter().sum::<f64>() / aps.len() as f64) }
}

// ---- finite differences -------------------------------------------------

pub const EPS: f64 = 1e-5;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Relative error with an absolute floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Largest relative error between the tape gradient of `build` and central
/// differences, over every element of every input.
pub fn gradcheck<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut g, &vars).unwrap();
    g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).expect("input reached by backward").to_vec();
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

/// Smooth scalar read-out of an arbitrary tensor: BCE against fixed targets.
pub fn readout(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.value(v).numel();
    let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    g.bce_with_logits(v, &targets, None)
}
