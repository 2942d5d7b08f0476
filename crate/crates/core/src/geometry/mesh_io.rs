//! ASCII OFF meshes and whitespace-separated pose files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Mat3, RigidPose, TriMesh, Vec3};

/// Parses an OFF document: `OFF`, a `vertices faces edges` counts line,
/// vertex lines, then triangle lines with a leading `3`. `#` starts a comment.
pub fn parse_off(text: &str) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty OFF file".into()))?;
    let counts_inline = header.strip_prefix("OFF").ok_or_else(|| Error::Parse(format!("bad OFF header {header:?}")))?;
    let counts_line = if counts_inline.trim().is_empty() {
        lines.next().ok_or_else(|| Error::Parse("missing OFF counts line".into()))?
    } else {
        counts_inline.trim()
    };
    let counts = numbers::<usize>(counts_line)?;
    if counts.len() < 2 {
        return Err(Error::Parse(format!("bad OFF counts line {counts_line:?}")));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| Error::Parse("OFF file ends inside the vertex list".into()))?;
        let xyz = numbers::<f64>(line)?;
        if xyz.len() < 3 {
            return Err(Error::Parse(format!("vertex line {line:?} has fewer than 3 coordinates")));
        }
        vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let line = lines.next().ok_or_else(|| Error::Parse("OFF file ends inside the face list".into()))?;
        let face = numbers::<usize>(line)?;
        match face[..] {
            [3, a, b, c, ..] => triangles.push([a, b, c]),
            _ => return Err(Error::Parse(format!("face {line:?} is not a triangle"))),
        }
    }
    TriMesh::new(vertices, triangles).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_off(path: impl AsRef<Path>) -> Result<TriMesh> {
    parse_off(&fs::read_to_string(path)?)
}

pub fn write_off(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("OFF\n{} {} 0\n", mesh.vertices().len(), mesh.triangles().len());
    for v in mesh.vertices() {
        out.push_str(&format!("{} {} {}\n", v.x, v.y, v.z));
    }
    for t in mesh.triangles() {
        out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Twelve numbers: the rotation row by row, then the translation.
pub fn parse_pose(text: &str) -> Result<RigidPose> {
    let v = numbers::<f64>(text)?;
    if v.len() != 12 {
        return Err(Error::Parse(format!("pose needs 12 numbers, found {}", v.len())));
    }
    let rotation = Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]);
    RigidPose::new(rotation, Vec3::new(v[9], v[10], v[11]))
}

pub fn read_pose(path: impl AsRef<Path>) -> Result<RigidPose> {
    parse_pose(&fs::read_to_string(path)?)
}

fn numbers<T: std::str::FromStr>(text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|_| Error::Parse(format!("bad number {tok:?}"))))
        .collect()
}
