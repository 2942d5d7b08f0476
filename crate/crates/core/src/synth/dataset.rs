use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{phantom, pose_mesh, rasterize_silhouette, BBox, BinaryMask, FluoroCamera, RigidPose, TriMesh, Vec3};
use crate::labels::Category;
use crate::netpbm::GrayImage;

use super::{compose_image, ScenarioClass, ScenarioMix, ScenarioSpec};

/// Draws knee poses: femoral flexion about the mediolateral (beam) axis
/// through the condylar centre, plus in-plane and depth jitter of the knee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSampler {
    pub flexion_deg: (f64, f64),
    pub jitter_mm: f64,
    pub depth_mm: f64,
    /// Lateral distance between the two knees in bilateral frames.
    pub bilateral_offset_mm: f64,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            flexion_deg: (0.0, 120.0),
            jitter_mm: 10.0,
            depth_mm: 500.0,
            bilateral_offset_mm: 90.0,
        }
    }
}

/// Everything needed to turn a pose into silhouettes.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub femur: TriMesh,
    pub tibia: TriMesh,
    pub camera: FluoroCamera,
    pub sampler: PoseSampler,
}

impl SceneGeometry {
    /// Procedural implant components viewed by the default camera.
    pub fn standard(size: usize) -> Self {
        Self {
            femur: phantom::femoral_component(),
            tibia: phantom::tibial_component(),
            camera: FluoroCamera::for_image(size),
            sampler: PoseSampler::default(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.femur.is_empty() || self.tibia.is_empty() {
            return Err(Error::Config("scene needs non-empty femur and tibia meshes".into()));
        }
        Ok(())
    }

    /// Millimetres of lateral motion that move a point at depth `z` by one pixel.
    fn mm_per_pixel(&self, z: f64) -> f64 {
        1.0 / self.camera.pixels_per_mm_at(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPart {
    pub category: Category,
    pub mask: BinaryMask,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: GrayImage,
    pub parts: Vec<SynthPart>,
    pub class: ScenarioClass,
    pub scenario: ScenarioSpec,
    pub seed: u64,
}

impl SynthSample {
    /// Checks the box/mask agreement and per-category counts.
    pub fn validate(&self) -> Result<()> {
        for p in &self.parts {
            if Some(p.bbox) != p.mask.bbox() {
                return Err(Error::Validation(format!("{} box disagrees with its mask", p.category)));
            }
        }
        let cap = if self.scenario.bilateral { 2 } else { 1 };
        for cat in Category::ANNOTATED {
            let n = self.parts.iter().filter(|p| p.category == cat).count();
            if n > cap {
                return Err(Error::Validation(format!("{n} {cat} parts, at most {cap} allowed")));
            }
        }
        Ok(())
    }
}

/// One knee: where its tibial tray sits and how far the femur is flexed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KneePose {
    pub center: Vec3,
    pub flexion_rad: f64,
}

impl KneePose {
    fn femur_pose(&self) -> RigidPose {
        let flex = RigidPose::rotation_about(Vec3::new(0.0, 0.0, 1.0), self.flexion_rad, phantom::condyle_center());
        RigidPose::translation(self.center).after(&flex)
    }

    fn tibia_pose(&self) -> RigidPose {
        RigidPose::translation(self.center)
    }
}

impl PoseSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> KneePose {
        let (lo, hi) = self.flexion_deg;
        let deg = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let j = self.jitter_mm;
        let mut jitter = || if j > 0.0 { rng.gen_range(-j..j) } else { 0.0 };
        let (x, y, z) = (jitter(), jitter(), jitter());
        KneePose {
            center: Vec3::new(x, y, self.depth_mm + z),
            flexion_rad: phantom::flexion(deg),
        }
    }
}

/// Renders the silhouettes of every knee under `spec`, then the frame.
/// Only the first knee takes part in an overlap shift.
pub fn render_scene(geometry: &SceneGeometry, knees: &[KneePose], class: ScenarioClass, mut spec: ScenarioSpec, seed: u64) -> Result<SynthSample> {
    let cam = &geometry.camera;
    let (width, height) = cam.image_size;
    let pixel_shift = |shift: (f64, f64), z: f64| {
        let mm = geometry.mm_per_pixel(z);
        Vec3::new(shift.0 * mm, shift.1 * mm, 0.0)
    };

    let render_knee = |knee: &KneePose, overlap: (f64, f64)| -> Result<(BinaryMask, BinaryMask)> {
        let crop = pixel_shift(spec.crop_shift, knee.center.z);
        let femur = pose_mesh(&geometry.femur, &knee.femur_pose())?
            .translated(crop + pixel_shift(overlap, knee.center.z));
        let tibia = pose_mesh(&geometry.tibia, &knee.tibia_pose())?.translated(crop);
        Ok((rasterize_silhouette(&femur, cam)?, rasterize_silhouette(&tibia, cam)?))
    };

    let mut masks = Vec::new();
    for (k, knee) in knees.iter().enumerate() {
        let overlapping = k == 0 && spec.overlap_shift != (0.0, 0.0);
        let (mut femur, mut tibia) = render_knee(knee, if overlapping { spec.overlap_shift } else { (0.0, 0.0) })?;
        if overlapping {
            // push the femur further down until the silhouettes touch
            let mut steps = 0;
            while femur.intersection_count(&tibia)? == 0 && steps < 4 * height {
                spec.overlap_shift.1 += 1.0;
                (femur, tibia) = render_knee(knee, spec.overlap_shift)?;
                steps += 1;
            }
        }
        masks.push((Category::Femur, femur));
        masks.push((Category::Tibia, tibia));
    }

    let parts: Vec<SynthPart> = masks
        .into_iter()
        .filter_map(|(category, mask)| mask.bbox().map(|bbox| SynthPart { category, mask, bbox }))
        .collect();
    let part_masks: Vec<BinaryMask> = parts.iter().map(|p| p.mask.clone()).collect();
    let image = compose_image(width, height, &part_masks, &spec, seed)?;
    Ok(SynthSample {
        image,
        parts,
        class,
        scenario: spec,
        seed,
    })
}

fn generate_one(geometry: &SceneGeometry, mix: &ScenarioMix, seed: u64) -> Result<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (width, height) = geometry.camera.image_size;
    let class = mix.pick(rng.gen::<f64>());
    let spec = class.sample_spec(width, height, &mut rng);
    let mut knees = vec![geometry.sampler.sample(&mut rng)];
    if spec.bilateral {
        let half = geometry.sampler.bilateral_offset_mm / 2.0;
        let mut second = geometry.sampler.sample(&mut rng);
        knees[0].center.x -= half;
        second.center.x += half;
        second.center.z += rng.gen_range(20.0..80.0);
        knees.push(second);
    }
    render_scene(geometry, &knees, class, spec, seed)
}

/// Generates `n` samples. Sample `i` is drawn from its own stream seeded with
/// `seed ^ i`, so the output does not depend on evaluation order.
pub fn generate_dataset(n: usize, mix: &ScenarioMix, seed: u64, geometry: &SceneGeometry) -> Result<Vec<SynthSample>> {
    geometry.check()?;
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| generate_one(geometry, mix, seed ^ i as u64))
        .collect()
}

/// Frames of one knee flexing evenly from the low to the high end of the
/// sampler's range, as in a continuous fluoroscopic recording.
pub fn render_flexion_sweep(geometry: &SceneGeometry, n: usize, class: ScenarioClass, seed: u64) -> Result<Vec<SynthSample>> {
    geometry.check()?;
    let (width, height) = geometry.camera.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = class.sample_spec(width, height, &mut rng);
    let center = Vec3::new(0.0, 0.0, geometry.sampler.depth_mm);
    let (lo, hi) = geometry.sampler.flexion_deg;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let knee = KneePose {
                center,
                flexion_rad: phantom::flexion(lo + t * (hi - lo)),
            };
            render_scene(geometry, &[knee], class, spec, seed ^ i as u64)
        })
        .collect()
}
