use crate::labels::Category;
use crate::netpbm::{GrayImage, RgbImage};
use crate::segment::Detection;

pub fn tint(category: Category) -> [u8; 3] {
    match category {
        Category::Femur => [255, 0, 0],
        Category::Tibia => [0, 0, 255],
        Category::Implant => [0, 255, 0],
    }
}

/// The frame in colour with each mask blended 50/50 with its category tint,
/// lowest score first so stronger detections end up on top.
pub fn overlay(frame: &GrayImage, dets: &[Detection]) -> RgbImage {
    let mut out = RgbImage::from_gray(frame);
    for d in dets.iter().rev() {
        let t = tint(d.category);
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                if d.mask.get(x, y) {
                    let px = out.get(x, y);
                    let mix = |c: usize| (u16::from(px[c]) + u16::from(t[c])).div_ceil(2) as u8;
                    out.set(x, y, [mix(0), mix(1), mix(2)]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, BinaryMask};

    #[test]
    fn femur_red_tibia_blue_half_opacity() {
        let frame = GrayImage::filled(4, 1, 100);
        let mk = |category, x: usize| Detection {
            category,
            score: 0.9,
            bbox: BBox::new(x as f64, 0.0, 1.0, 1.0),
            mask: BinaryMask::from_fn(4, 1, |px, _| px == x),
        };
        let out = overlay(&frame, &[mk(Category::Femur, 0), mk(Category::Tibia, 1)]);
        assert_eq!(out.get(0, 0), [178, 50, 50]);
        assert_eq!(out.get(1, 0), [50, 50, 178]);
        assert_eq!(out.get(2, 0), [100, 100, 100]);
    }
}
