use fluoroseg::geometry::{
    pose_mesh, project_point, rasterize_silhouette, BBox, FluoroCamera, Mat3, RigidPose, TriMesh, Vec3,
};
use fluoroseg::synth::SceneGeometry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Square plate of side `s` facing the source, centred at `c`, rotated by
/// `angle` about the optical axis.
fn plate(c: Vec3, s: f64, angle: f64) -> TriMesh {
    let h = s / 2.0;
    let (sin, cos) = angle.sin_cos();
    let corner = |x: f64, y: f64| Vec3::new(c.x + x * cos - y * sin, c.y + x * sin + y * cos, c.z);
    TriMesh::new(
        vec![corner(-h, -h), corner(h, -h), corner(h, h), corner(-h, h)],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
    let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0));
    let t = Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
    RigidPose::new(Mat3::rotation(axis, rng.gen_range(-3.0..3.0)), t).unwrap()
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[test]
fn composition_matches_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mesh = SceneGeometry::standard(128).femur;
    for _ in 0..20 {
        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let twice = pose_mesh(&pose_mesh(&mesh, &a).unwrap(), &b).unwrap();
        // B∘A written out by hand: R = Rb·Ra, t = Rb·ta + tb.
        let r = mat_mul(&b.rotation_matrix().0, &a.rotation_matrix().0);
        let ta = a.translation_vector();
        let rb = b.rotation_matrix().0;
        let tb = b.translation_vector();
        let t = Vec3::new(
            rb[0][0] * ta.x + rb[0][1] * ta.y + rb[0][2] * ta.z + tb.x,
            rb[1][0] * ta.x + rb[1][1] * ta.y + rb[1][2] * ta.z + tb.y,
            rb[2][0] * ta.x + rb[2][1] * ta.y + rb[2][2] * ta.z + tb.z,
        );
        let once = pose_mesh(&mesh, &RigidPose::new(Mat3(r), t).unwrap()).unwrap();
        let composed = pose_mesh(&mesh, &b.after(&a)).unwrap();
        for ((p, q), s) in twice.vertices().iter().zip(once.vertices()).zip(composed.vertices()) {
            assert!((*p - *q).norm() < 1e-9);
            assert!((*p - *s).norm() < 1e-9);
        }
        assert_eq!(twice.triangles(), mesh.triangles());
    }
}

#[test]
fn translation_preserves_distances() {
    let mesh = SceneGeometry::standard(128).tibia;
    let moved = pose_mesh(&mesh, &RigidPose::translation(Vec3::new(3.0, -7.0, 11.0))).unwrap();
    let v = mesh.vertices();
    let m = moved.vertices();
    for i in (0..v.len()).step_by(7) {
        for j in (0..v.len()).step_by(11) {
            assert!(((v[i] - v[j]).norm() - (m[i] - m[j]).norm()).abs() < 1e-9);
        }
    }
}

#[test]
fn projection_worked_example() {
    let cam = FluoroCamera::new(1000.0, 0.5, (256.0, 256.0), (512, 512)).unwrap();
    let (u, v) = project_point(Vec3::new(10.0, 0.0, 500.0), &cam).unwrap();
    assert_eq!((u, v), (296.0, 256.0));
    let (u2, _) = project_point(Vec3::new(10.0, 0.0, 1000.0), &cam).unwrap();
    assert!((u2 - 256.0 - 20.0).abs() < 1e-12);
}

#[test]
fn centred_plate_area_within_perimeter() {
    for size in [128, 256, 512] {
        let cam = FluoroCamera::for_image(size);
        for (s, z) in [(20.0, 500.0), (37.0, 640.0), (60.0, 900.0)] {
            let mask = rasterize_silhouette(&plate(Vec3::new(0.0, 0.0, z), s, 0.0), &cam).unwrap();
            let side = s * cam.pixels_per_mm_at(z);
            let diff = (mask.count() as f64 - side * side).abs();
            assert!(diff <= 4.0 * side, "size {size}: {} px vs {:.1}", mask.count(), side * side);
            let b = mask.bbox().unwrap();
            let (cx, cy) = b.center();
            assert!((cx - size as f64 / 2.0).abs() <= 0.5 && (cy - size as f64 / 2.0).abs() <= 0.5);
        }
    }
}

#[test]
fn area_error_shrinks_with_resolution() {
    // RMS relative error over off-grid plates; quantization error scales
    // with perimeter/area, so doubling the resolution should roughly halve it.
    let rms = |size: usize| {
        let cam = FluoroCamera::for_image(size);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut acc = 0.0;
        let n = 300;
        for _ in 0..n {
            let z = rng.gen_range(500.0..900.0);
            let s = rng.gen_range(15.0..40.0);
            let c = Vec3::new(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), z);
            let mask = rasterize_silhouette(&plate(c, s, 0.0), &cam).unwrap();
            let analytic = (s * cam.pixels_per_mm_at(z)).powi(2);
            acc += ((mask.count() as f64 - analytic) / analytic).powi(2);
        }
        (acc / n as f64).sqrt()
    };
    let (coarse, fine) = (rms(256), rms(512));
    assert!(fine <= 0.6 * coarse, "256: {coarse:.5}, 512: {fine:.5}");
}

#[test]
fn rotation_about_axis_keeps_area() {
    let cam = FluoroCamera::for_image(256);
    let base = rasterize_silhouette(&plate(Vec3::new(0.0, 0.0, 600.0), 50.0, 0.0), &cam).unwrap().count() as f64;
    for k in 1..24 {
        let angle = k as f64 * std::f64::consts::PI / 24.0;
        let area = rasterize_silhouette(&plate(Vec3::new(0.0, 0.0, 600.0), 50.0, angle), &cam).unwrap().count() as f64;
        assert!((area - base).abs() / base < 0.02, "angle {angle}: {area} vs {base}");
    }
}

#[test]
fn union_of_meshes_is_or_of_masks() {
    let cam = FluoroCamera::for_image(256);
    let geometry = SceneGeometry::standard(256);
    let pairs = [
        (plate(Vec3::new(-40.0, 0.0, 600.0), 20.0, 0.3), plate(Vec3::new(40.0, 10.0, 700.0), 25.0, 1.0)),
        (plate(Vec3::new(0.0, 0.0, 600.0), 30.0, 0.0), plate(Vec3::new(5.0, 5.0, 650.0), 30.0, 0.7)),
        (
            geometry.femur.translated(Vec3::new(0.0, 0.0, 500.0)),
            geometry.tibia.translated(Vec3::new(0.0, 0.0, 500.0)),
        ),
    ];
    for (a, b) in pairs {
        let ma = rasterize_silhouette(&a, &cam).unwrap();
        let mb = rasterize_silhouette(&b, &cam).unwrap();
        let both = rasterize_silhouette(&TriMesh::merge(&[a, b]), &cam).unwrap();
        assert_eq!(both, ma.or(&mb).unwrap());
    }
}

#[test]
fn bbox_within_projected_vertex_bounds() {
    let cam = FluoroCamera::for_image(256);
    let geometry = SceneGeometry::standard(256);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..30 {
        let mesh = if i % 2 == 0 { &geometry.femur } else { &geometry.tibia };
        let pose = RigidPose::new(
            Mat3::rotation(Vec3::new(rng.gen_range(-1.0..1.0), 1.0, rng.gen_range(-1.0..1.0)), rng.gen_range(-1.0..1.0)),
            Vec3::new(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(450.0..700.0)),
        )
        .unwrap();
        let posed = pose_mesh(mesh, &pose).unwrap();
        let mask = rasterize_silhouette(&posed, &cam).unwrap();
        let Some(b) = mask.bbox() else { continue };
        let pts: Vec<_> = posed.vertices().iter().map(|&v| project_point(v, &cam).unwrap()).collect();
        let (x0, x1) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
        let (y0, y1) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        let bound = BBox::new(x0, y0, x1 - x0, y1 - y0).expanded(1.0);
        assert!(bound.contains(&b), "{b:?} outside {bound:?}");
    }
}
