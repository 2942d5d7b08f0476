use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geometry::BinaryMask;
use crate::labels::Category;
use crate::netpbm::GrayImage;

use super::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Otsu's method over the in-field histogram.
    Auto,
    Fixed(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub threshold: ThresholdMode,
    pub min_area: usize,
    pub morph_radius: usize,
    /// Pixels at or below this level are collimator blackout, not anatomy:
    /// they are left out of the histogram and never marked foreground.
    pub field_floor: Option<u8>,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdMode::Auto,
            min_area: 30,
            morph_radius: 1,
            field_floor: Some(0),
        }
    }
}

/// Otsu's threshold `t`: splitting into `< t` and `≥ t` maximises the
/// between-class variance. Returns `None` for a single-level histogram.
/// When several cut points tie, the middle of the tied range is used.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0);
    let mut best = -1.0;
    let (mut first, mut last) = (0usize, 0usize);
    for t in 1..256 {
        w0 += hist[t - 1];
        sum0 += (t - 1) as f64 * hist[t - 1] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best * (1.0 + 1e-12) {
            best = between;
            first = t;
            last = t;
        } else if (between - best).abs() <= best * 1e-12 {
            last = t;
        }
    }
    (best >= 0.0).then(|| ((first + last) / 2) as u8)
}

/// Binarise dark pixels, clean up with a square open/close, and report each
/// 4-connected component of at least `min_area` pixels as an implant.
pub fn threshold_segment(image: &GrayImage, cfg: &ThresholdConfig) -> Vec<Detection> {
    let (w, h) = (image.width(), image.height());
    let floor = cfg.field_floor;
    let in_field = |p: u8| floor.is_none_or(|f| p > f);
    let t = match cfg.threshold {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Auto => {
            let mut hist = [0u64; 256];
            for &p in image.pixels().iter().filter(|&&p| in_field(p)) {
                hist[p as usize] += 1;
            }
            match otsu_threshold(&hist) {
                Some(t) => t,
                None => return Vec::new(),
            }
        }
    };
    let fg: Vec<bool> = image.pixels().iter().map(|&p| in_field(p) && p < t).collect();
    let r = cfg.morph_radius;
    let fg = if r > 0 {
        let opened = dilate(&erode(&fg, w, h, r), w, h, r);
        erode(&dilate(&opened, w, h, r), w, h, r)
    } else {
        fg
    };
    components(&fg, w, h)
        .into_iter()
        .filter(|c| c.len() >= cfg.min_area.max(1))
        .map(|pixels| {
            let mut mask = BinaryMask::new(w, h);
            for p in pixels {
                mask.set(p % w, p / w, true);
            }
            let bbox = mask.bbox().expect("component is non-empty");
            Detection {
                category: Category::Implant,
                score: 1.0,
                bbox,
                mask,
            }
        })
        .collect()
}

/// Separable square min/max filter; the window is clipped at the border.
fn filter(src: &[bool], w: usize, h: usize, r: usize, keep: bool) -> Vec<bool> {
    // keep == true: dilation (any set); keep == false: erosion (all set)
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (c, n) = if horizontal { (x, w) } else { (y, h) };
                let lo = c.saturating_sub(r);
                let hi = (c + r).min(n - 1);
                let at = |k: usize| if horizontal { src[y * w + k] } else { src[k * w + x] };
                out[y * w + x] = if keep { (lo..=hi).any(at) } else { (lo..=hi).all(at) };
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

fn erode(src: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    filter(src, w, h, r, false)
}

fn dilate(src: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    filter(src, w, h, r, true)
}

/// 4-connected components in raster order of their first pixel.
fn components(fg: &[bool], w: usize, h: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; fg.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if fg[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        out.push(pixels);
    }
    out
}
