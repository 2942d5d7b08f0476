//! Posed triangle meshes and their cone-beam silhouettes.
//!
//! The x-ray source sits at the camera-frame origin and looks down `+z`;
//! the detector plane is at `z = source_to_detector`. Image `x` grows to the
//! right and image `y` grows downwards, matching camera-frame `x` and `y`.

mod mask;
mod mesh_io;
pub mod phantom;
mod raster;

pub use mask::{BBox, BinaryMask};
pub use mesh_io::{parse_off, parse_pose, read_off, read_pose, write_off};
pub use raster::rasterize_silhouette;

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Right-handed rotation by `angle` radians about a unit `axis`.
    pub fn rotation(axis: Vec3, angle: f64) -> Mat3 {
        let a = axis * (1.0 / axis.norm());
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3([
            [t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y],
            [t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x],
            [t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c],
        ])
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn matmul(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::Validation(format!(
                "triangle {t:?} indexes past {} vertices",
                vertices.len()
            )));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Concatenates meshes, re-indexing the triangles of each.
    pub fn merge(parts: &[TriMesh]) -> TriMesh {
        let mut out = TriMesh::empty();
        for part in parts {
            let offset = out.vertices.len();
            out.vertices.extend_from_slice(&part.vertices);
            out.triangles
                .extend(part.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
        }
        out
    }

    pub fn translated(&self, t: Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| v + t).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.vertices.is_empty() {
            return None;
        }
        let sum = self.vertices.iter().fold(Vec3::default(), |acc, &v| acc + v);
        Some(sum * (1.0 / self.vertices.len() as f64))
    }
}

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Proper rigid motion `v ↦ R·v + t` (millimetres).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let rtr = rotation.transpose().matmul(&rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (rtr.0[i][j] - expected).abs() > ORTHONORMAL_TOL {
                    return Err(Error::Pose(format!("rotation is not orthonormal (RᵀR[{i}][{j}] = {})", rtr.0[i][j])));
                }
            }
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Pose(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::IDENTITY,
            translation: Vec3::default(),
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::IDENTITY,
            translation: t,
        }
    }

    /// Rotation by `angle` about the line through `pivot` along `axis`.
    pub fn rotation_about(axis: Vec3, angle: f64, pivot: Vec3) -> Self {
        let rotation = Mat3::rotation(axis, angle);
        Self {
            rotation,
            translation: pivot - rotation.apply(pivot),
        }
    }

    pub fn rotation_matrix(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation_vector(&self) -> Vec3 {
        self.translation
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        self.rotation.apply(v) + self.translation
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation.matmul(&first.rotation),
            translation: self.rotation.apply(first.translation) + self.translation,
        }
    }
}

/// Point-source fluoroscope with a flat detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluoroCamera {
    pub source_to_detector: f64,
    pub pixel_pitch: f64,
    pub principal_point: (f64, f64),
    pub image_size: (usize, usize),
}

/// Detector width in millimetres used by [`FluoroCamera::for_image`].
pub const DEFAULT_DETECTOR_SPAN_MM: f64 = 384.0;
pub const DEFAULT_SOURCE_TO_DETECTOR_MM: f64 = 1000.0;

impl FluoroCamera {
    pub fn new(
        source_to_detector: f64,
        pixel_pitch: f64,
        principal_point: (f64, f64),
        image_size: (usize, usize),
    ) -> Result<Self> {
        let (w, h) = image_size;
        if !(source_to_detector > 0.0 && pixel_pitch > 0.0 && w > 0 && h > 0) {
            return Err(Error::Validation(format!(
                "camera needs positive geometry (sdd {source_to_detector}, pitch {pixel_pitch}, size {w}x{h})"
            )));
        }
        let (px, py) = principal_point;
        if !(px >= 0.0 && px <= w as f64 && py >= 0.0 && py <= h as f64) {
            return Err(Error::Validation(format!("principal point ({px}, {py}) outside {w}x{h} image")));
        }
        Ok(Self {
            source_to_detector,
            pixel_pitch,
            principal_point,
            image_size,
        })
    }

    /// Square detector of fixed physical span sampled at `size`×`size`.
    pub fn for_image(size: usize) -> Self {
        Self::new(
            DEFAULT_SOURCE_TO_DETECTOR_MM,
            DEFAULT_DETECTOR_SPAN_MM / size as f64,
            (size as f64 / 2.0, size as f64 / 2.0),
            (size, size),
        )
        .expect("valid default camera")
    }

    pub fn width(&self) -> usize {
        self.image_size.0
    }

    pub fn height(&self) -> usize {
        self.image_size.1
    }

    /// Pixels per millimetre for an object at depth `z`.
    pub fn pixels_per_mm_at(&self, z: f64) -> f64 {
        self.source_to_detector / (z * self.pixel_pitch)
    }
}

/// Continuous detector coordinates of a camera-frame point.
pub fn project_point(p: Vec3, cam: &FluoroCamera) -> Result<(f64, f64)> {
    if !(p.z > 0.0) {
        return Err(Error::BehindSource { z: p.z });
    }
    let scale = cam.source_to_detector / (p.z * cam.pixel_pitch);
    Ok((cam.principal_point.0 + p.x * scale, cam.principal_point.1 + p.y * scale))
}

pub fn pose_mesh(mesh: &TriMesh, pose: &RigidPose) -> Result<TriMesh> {
    // Long chains of `after` drift away from orthonormality.
    let pose = RigidPose::new(pose.rotation, pose.translation)?;
    Ok(TriMesh {
        vertices: mesh.vertices.iter().map(|&v| pose.apply(v)).collect(),
        triangles: mesh.triangles.clone(),
    })
}
