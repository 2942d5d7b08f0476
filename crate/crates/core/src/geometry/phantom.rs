//! Procedural stand-ins for knee implant components.
//!
//! Both meshes live in a knee frame seen from the side: `x` anterior,
//! `y` inferior (image down), `z` mediolateral (along the beam). The joint
//! line is `y = 0`; the femoral component sits above it, the tibial
//! component below, separated by the radiolucent insert gap.

use std::f64::consts::PI;

use super::{TriMesh, Vec3};

/// Insert thickness between the components, in millimetres.
pub const JOINT_GAP_MM: f64 = 8.0;

const CONDYLE_OUTER_MM: f64 = 24.0;
const CONDYLE_INNER_MM: f64 = 16.0;
const FEMUR_HALF_WIDTH_MM: f64 = 30.0;
const TIBIA_HALF_WIDTH_MM: f64 = 32.0;

/// Centre of the condylar arc; flexion rotates the femoral component about
/// the mediolateral axis through this point.
pub fn condyle_center() -> Vec3 {
    Vec3::new(0.0, -(JOINT_GAP_MM / 2.0 + CONDYLE_OUTER_MM), 0.0)
}

/// Extrudes a convex polygon (x, y) along z into a closed prism.
fn prism(outline: &[(f64, f64)], half_depth: f64) -> TriMesh {
    let n = outline.len();
    let mut vertices = Vec::with_capacity(2 * n);
    for &z in &[-half_depth, half_depth] {
        vertices.extend(outline.iter().map(|&(x, y)| Vec3::new(x, y, z)));
    }
    let mut triangles = Vec::with_capacity(4 * n);
    for i in 1..n - 1 {
        triangles.push([0, i, i + 1]);
        triangles.push([n, n + i + 1, n + i]);
    }
    for i in 0..n {
        let j = (i + 1) % n;
        triangles.push([i, j, n + j]);
        triangles.push([i, n + j, n + i]);
    }
    TriMesh::new(vertices, triangles).expect("prism indices are in range")
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(f64, f64)> {
    vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
}

/// Femoral component: a thick condylar arc open towards the anterior-superior
/// side, closed by a box cut with a fixation peg. Every point lies within
/// `CONDYLE_OUTER_MM` of [`condyle_center`], so no flexion angle pushes it
/// across the joint line.
pub fn femoral_component() -> TriMesh {
    let c = condyle_center();
    let (start, end) = (-30f64.to_radians(), 215f64.to_radians());
    let segments = 24;
    let mut parts = Vec::new();
    for s in 0..segments {
        let a0 = start + (end - start) * s as f64 / segments as f64;
        let a1 = start + (end - start) * (s + 1) as f64 / segments as f64;
        let p = |r: f64, a: f64| (c.x + r * a.cos(), c.y + r * a.sin());
        parts.push(prism(
            &[p(CONDYLE_INNER_MM, a0), p(CONDYLE_OUTER_MM, a0), p(CONDYLE_OUTER_MM, a1), p(CONDYLE_INNER_MM, a1)],
            FEMUR_HALF_WIDTH_MM,
        ));
    }
    // box cut spanning the arc and a short peg rising from it
    parts.push(prism(&rect(c.x - 13.0, c.y - 9.0, c.x + 9.0, c.y - 3.0), FEMUR_HALF_WIDTH_MM));
    parts.push(prism(&rect(c.x - 3.0, c.y - 21.0, c.x + 3.0, c.y - 9.0), FEMUR_HALF_WIDTH_MM));
    TriMesh::merge(&parts)
}

/// Tibial component: a flat baseplate with a tapered keel.
pub fn tibial_component() -> TriMesh {
    let top = JOINT_GAP_MM / 2.0;
    let tray = prism(&rect(-24.0, top, 22.0, top + 5.0), TIBIA_HALF_WIDTH_MM);
    let keel = prism(
        &[(-8.0, top + 5.0), (6.0, top + 5.0), (3.0, top + 38.0), (-4.0, top + 38.0)],
        8.0,
    );
    TriMesh::merge(&[tray, keel])
}

/// Flexion angle in radians for a knee-frame angle in degrees.
pub fn flexion(degrees: f64) -> f64 {
    degrees * PI / 180.0
}
