//! COCO-style detection and segmentation metrics: IoU, greedy matching,
//! 101-point interpolated AP and its mean over categories and thresholds.

mod report;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::coco::{CocoDataset, CocoResult};
use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask};
use crate::labels::Category;
use crate::segment::Detection;

pub use report::{render_table, ApEntry, ApReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Box,
    Mask,
}

impl IouKind {
    pub const BOTH: [IouKind; 2] = [IouKind::Box, IouKind::Mask];

    pub fn name(self) -> &'static str {
        match self {
            IouKind::Box => "box",
            IouKind::Mask => "mask",
        }
    }
}

impl std::fmt::Display for IouKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

/// A ground-truth instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub category: Category,
    pub bbox: BBox,
    pub mask: BinaryMask,
}

/// Anything with a box and a mask.
pub trait Region {
    fn bbox(&self) -> &BBox;
    fn mask(&self) -> &BinaryMask;
}

impl Region for Detection {
    fn bbox(&self) -> &BBox {
        &self.bbox
    }
    fn mask(&self) -> &BinaryMask {
        &self.mask
    }
}

impl Region for GroundTruth {
    fn bbox(&self) -> &BBox {
        &self.bbox
    }
    fn mask(&self) -> &BinaryMask {
        &self.mask
    }
}

/// Box or mask IoU; two empty regions have IoU 0.
pub fn iou(kind: IouKind, a: &impl Region, b: &impl Region) -> Result<f64> {
    match kind {
        IouKind::Box => Ok(a.bbox().iou(b.bbox())),
        IouKind::Mask => a.mask().iou(b.mask()),
    }
}

/// Greedy one-to-one matching in score order: each detection takes the
/// unmatched same-category ground truth with the highest IoU at or above
/// `iou_threshold` (the first such on ties). Returns a true-positive flag
/// per detection.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64, kind: IouKind) -> Result<Vec<bool>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Contract(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    if let Some(w) = dets.windows(2).find(|w| w[0].score < w[1].score) {
        return Err(Error::Contract(format!(
            "detections are not sorted by score ({} before {})",
            w[0].score, w[1].score
        )));
    }
    let mut taken = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(dets.len());
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.category != d.category {
                continue;
            }
            let v = iou(kind, d, g)?;
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
        }
        flags.push(best.is_some());
    }
    Ok(flags)
}

/// Ranked precision/recall pairs, one per detection.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
    pub positives: usize,
}

impl PrCurve {
    pub fn new(flags: &[bool], positives: usize) -> Self {
        let mut tp = 0usize;
        let points = flags
            .iter()
            .enumerate()
            .map(|(i, &hit)| {
                tp += usize::from(hit);
                let recall = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
                (recall, tp as f64 / (i + 1) as f64)
            })
            .collect();
        Self { points, positives }
    }
}

/// 101-point interpolated AP in `[0, 1]`: the mean over recall levels
/// 0, 0.01, …, 1 of the best precision reached at or beyond that recall.
/// `None` when there is nothing to score (no positives, no detections).
pub fn average_precision(flags: &[bool], positives: usize) -> Option<f64> {
    if positives == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    let curve = PrCurve::new(flags, positives);
    // precision envelope, non-increasing in rank
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut rank = 0;
    for level in 0..=100 {
        let r = f64::from(level) / 100.0;
        while rank < curve.points.len() && curve.points[rank].0 < r {
            rank += 1;
        }
        if rank < envelope.len() {
            sum += envelope[rank];
        }
    }
    Some(sum / 101.0)
}

/// Detections per image id, each list in its original (file) order.
pub type Predictions = BTreeMap<u64, Vec<Detection>>;

pub fn group_results(results: &[CocoResult]) -> Result<Predictions> {
    let mut out = Predictions::new();
    for r in results {
        out.entry(r.image_id).or_default().push(Detection::from_result(r)?);
    }
    Ok(out)
}

/// Decoded ground truth per image.
pub fn ground_truth(truth: &CocoDataset) -> Result<BTreeMap<u64, Vec<GroundTruth>>> {
    let mut out: BTreeMap<u64, Vec<GroundTruth>> = truth.images.iter().map(|i| (i.id, Vec::new())).collect();
    for a in &truth.annotations {
        let category = Category::from_coco_id(a.category_id)
            .ok_or_else(|| Error::Validation(format!("unknown category id {}", a.category_id)))?;
        out.get_mut(&a.image_id)
            .ok_or_else(|| Error::Validation(format!("annotation {} refers to missing image {}", a.id, a.image_id)))?
            .push(GroundTruth {
                category,
                bbox: a.bbox,
                mask: a.segmentation.decode()?,
            });
    }
    Ok(out)
}

/// AP per (category, threshold, kind), pooling all images, on a 0–100
/// scale. Score ties rank by image id, then by position in the image's
/// prediction list. In class-agnostic mode every instance counts as one
/// [`Category::Implant`] class.
pub fn evaluate(
    preds: &Predictions,
    truth: &CocoDataset,
    thresholds: &[f64],
    kinds: &[IouKind],
    class_agnostic: bool,
) -> Result<ApReport> {
    if thresholds.is_empty() {
        return Err(Error::Config("no IoU thresholds given".into()));
    }
    if let Some(t) = thresholds.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Config(format!("IoU threshold {t} outside (0, 1]")));
    }
    if kinds.is_empty() {
        return Err(Error::Config("no IoU kinds given".into()));
    }
    let mut gts = ground_truth(truth)?;
    if let Some(id) = preds.keys().find(|id| !gts.contains_key(id)) {
        return Err(Error::Validation(format!("predictions reference unknown image {id}")));
    }
    let categories: Vec<Category> = if class_agnostic {
        vec![Category::Implant]
    } else {
        truth
            .categories
            .iter()
            .map(|c| {
                Category::from_coco_id(c.id).ok_or_else(|| Error::Validation(format!("unknown category id {}", c.id)))
            })
            .collect::<Result<_>>()?
    };

    // per image: detections stable-sorted by score, optionally relabelled
    let mut ranked: HashMap<u64, Vec<Detection>> = HashMap::new();
    for (&id, dets) in preds {
        let mut d = dets.clone();
        if class_agnostic {
            d.iter_mut().for_each(|x| x.category = Category::Implant);
        }
        d.sort_by(|a, b| b.score.total_cmp(&a.score));
        ranked.insert(id, d);
    }
    if class_agnostic {
        gts.values_mut()
            .flatten()
            .for_each(|g| g.category = Category::Implant);
    }

    let mut entries = Vec::new();
    for &kind in kinds {
        for (ti, &t) in thresholds.iter().enumerate() {
            for &cat in &categories {
                // (score, image id, rank in image, hit)
                let mut pooled: Vec<(f64, u64, usize, bool)> = Vec::new();
                let mut positives = 0;
                for (&id, image_gts) in &gts {
                    let g: Vec<GroundTruth> = image_gts.iter().filter(|g| g.category == cat).cloned().collect();
                    positives += g.len();
                    let d: Vec<Detection> = ranked
                        .get(&id)
                        .map(|v| v.iter().filter(|d| d.category == cat).cloned().collect())
                        .unwrap_or_default();
                    let flags = match_detections(&d, &g, t, kind)?;
                    pooled.extend(d.iter().zip(flags).enumerate().map(|(r, (d, hit))| (d.score, id, r, hit)));
                }
                pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let flags: Vec<bool> = pooled.iter().map(|p| p.3).collect();
                entries.push(ApEntry {
                    category: cat,
                    threshold_index: ti,
                    kind,
                    ap: average_precision(&flags, positives).map(|ap| 100.0 * ap),
                });
            }
        }
    }
    Ok(ApReport::new(thresholds.to_vec(), kinds.to_vec(), categories, entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(category: Category, score: f64, x: usize, w: usize) -> Detection {
        let mask = BinaryMask::from_fn(16, 4, |px, _| (x..x + w).contains(&px));
        Detection {
            category,
            score,
            bbox: mask.bbox().unwrap(),
            mask,
        }
    }

    fn gt(d: &Detection) -> GroundTruth {
        GroundTruth {
            category: d.category,
            bbox: d.bbox,
            mask: d.mask.clone(),
        }
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true], 1), Some(1.0));
        assert_eq!(average_precision(&[false], 1), Some(0.0));
        assert_eq!(average_precision(&[], 0), None);
        assert_eq!(average_precision(&[false], 0), Some(0.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        let want = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((average_precision(&[true, false, true], 2).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn box_iou_example() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 1.0, 2.0, 2.0);
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let g = region(Category::Femur, 1.0, 2, 5);
        let dets = vec![region(Category::Femur, 0.9, 2, 5), region(Category::Femur, 0.8, 2, 5)];
        assert_eq!(match_detections(&dets, &[gt(&g)], 0.5, IouKind::Mask).unwrap(), vec![true, false]);
    }

    #[test]
    fn unsorted_input_breaks_contract() {
        let dets = vec![region(Category::Femur, 0.1, 2, 5), region(Category::Femur, 0.8, 2, 5)];
        assert!(matches!(match_detections(&dets, &[], 0.5, IouKind::Box), Err(Error::Contract(_))));
    }

    #[test]
    fn category_must_agree() {
        let g = region(Category::Femur, 1.0, 2, 5);
        let d = region(Category::Tibia, 0.9, 2, 5);
        assert_eq!(match_detections(&[d], &[gt(&g)], 0.5, IouKind::Box).unwrap(), vec![false]);
    }

    #[test]
    fn pr_curve_recalls_rise() {
        let c = PrCurve::new(&[true, false, true], 2);
        assert_eq!(c.points, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
    }
}
