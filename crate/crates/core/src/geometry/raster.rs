use crate::error::{Error, Result};

use super::{project_point, BinaryMask, FluoroCamera, TriMesh};

/// Projected triangles with less than this area (px²) are skipped.
const DEGENERATE_AREA: f64 = 1e-12;

/// Edge function of `p` against the directed edge `a → b`.
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Tie-break for pixel centres exactly on an edge. A shared edge is walked
/// in opposite directions by its two (consistently wound) triangles, so
/// exactly one of them claims the centre.
fn owns_boundary(a: (f64, f64), b: (f64, f64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Sets every pixel whose centre falls inside the cone-beam projection of at
/// least one triangle.
pub fn rasterize_silhouette(mesh: &TriMesh, cam: &FluoroCamera) -> Result<BinaryMask> {
    let (width, height) = cam.image_size;
    let mut mask = BinaryMask::new(width, height);
    if let Some(v) = mesh.vertices().iter().find(|v| !(v.z > 0.0)) {
        return Err(Error::BehindSource { z: v.z });
    }
    let projected = mesh
        .vertices()
        .iter()
        .map(|&v| project_point(v, cam))
        .collect::<Result<Vec<_>>>()?;

    for tri in mesh.triangles() {
        let [mut a, mut b, c] = tri.map(|i| projected[i]);
        let mut area = edge(a, b, c);
        if area.abs() < DEGENERATE_AREA {
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut a, &mut b);
            area = -area;
        }
        debug_assert!(area > 0.0);

        let min_x = a.0.min(b.0).min(c.0);
        let max_x = a.0.max(b.0).max(c.0);
        let min_y = a.1.min(b.1).min(c.1);
        let max_y = a.1.max(b.1).max(c.1);
        // pixel centres sit at (i + 0.5, j + 0.5)
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(width as f64 - 1.0);
        let y1 = (max_y - 0.5).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }

        let edges = [(b, c), (c, a), (a, b)];
        let owns = edges.map(|(p, q)| owns_boundary(p, q));
        for py in y0 as usize..=y1 as usize {
            for px in x0 as usize..=x1 as usize {
                let center = (px as f64 + 0.5, py as f64 + 0.5);
                let inside = edges.iter().zip(&owns).all(|(&(p, q), &own)| {
                    let e = edge(p, q, center);
                    e > 0.0 || (e == 0.0 && own)
                });
                if inside {
                    mask.set(px, py, true);
                }
            }
        }
    }
    Ok(mask)
}
