//! Poses both implant components at a few flexion angles and writes their
//! cone-beam silhouettes as PGM masks.
//!
//!     cargo run --example projection -- /tmp/silhouettes 256

use fluoroseg::geometry::{phantom, pose_mesh, project_point, rasterize_silhouette, RigidPose, Vec3};
use fluoroseg::netpbm::GrayImage;
use fluoroseg::synth::SceneGeometry;

fn main() -> fluoroseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "silhouettes".into());
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(256);
    std::fs::create_dir_all(&out)?;

    let geometry = SceneGeometry::standard(size);
    let cam = geometry.camera;
    let depth = Vec3::new(0.0, 0.0, 500.0);
    println!("{} px/mm at {} mm depth", cam.pixels_per_mm_at(depth.z), depth.z);
    let (u, v) = project_point(depth, &cam)?;
    println!("optical axis lands on ({u}, {v})");

    for degrees in [0.0, 45.0, 90.0] {
        let bend = RigidPose::rotation_about(Vec3::new(0.0, 0.0, 1.0), phantom::flexion(degrees), phantom::condyle_center());
        let femur = pose_mesh(&geometry.femur, &RigidPose::translation(depth).after(&bend))?;
        let tibia = pose_mesh(&geometry.tibia, &RigidPose::translation(depth))?;
        let f = rasterize_silhouette(&femur, &cam)?;
        let t = rasterize_silhouette(&tibia, &cam)?;
        let both = f.or(&t)?;
        let pixels = both.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
        let path = format!("{out}/flexion_{degrees:03}.pgm");
        GrayImage::new(size, size, pixels)?.write_pgm(&path)?;
        println!(
            "{path}: femur {} px bbox {:?}, tibia {} px bbox {:?}",
            f.count(),
            f.bbox(),
            t.count(),
            t.bbox()
        );
    }
    Ok(())
}
