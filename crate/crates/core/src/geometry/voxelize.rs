use std::collections::VecDeque;

use super::{Mesh, OccupancyGrid};

/// Solid occupancy of a closed mesh. Cells touched by a triangle are marked
/// as shell and the exterior is flood-filled from the grid boundary; cells
/// not reached are inside, and shell cells are settled by casting a ray from
/// their centre along +x and counting crossings.
pub fn voxelize_mesh(mesh: &Mesh, resolution: usize) -> OccupancyGrid {
    let r = resolution;
    let idx = |i: usize, j: usize, k: usize| (i * r + j) * r + k;
    let mut shell = vec![false; r * r * r];
    let cell = |x: f64| ((x * r as f64).floor().max(0.0) as usize).min(r - 1);
    let h = 1.0 / r as f64;
    for f in &mesh.faces {
        let [a, b, c] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        let longest = [(a, b), (b, c), (c, a)]
            .iter()
            .map(|(p, q)| super::dist2(*p, *q).sqrt())
            .fold(0.0, f64::max);
        // sample the triangle finely enough that no shell cell is skipped
        let steps = ((longest / (0.25 * h)).ceil() as usize).max(1);
        for s in 0..=steps {
            for t in 0..=steps - s {
                let (u, v) = (s as f64 / steps as f64, t as f64 / steps as f64);
                let p = [0, 1, 2].map(|d| a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d]));
                shell[idx(cell(p[0]), cell(p[1]), cell(p[2]))] = true;
            }
        }
    }

    let mut outside = vec![false; r * r * r];
    let mut queue = VecDeque::new();
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let boundary = [i, j, k].iter().any(|&x| x == 0 || x == r - 1);
                let id = idx(i, j, k);
                if boundary && !shell[id] {
                    outside[id] = true;
                    queue.push_back((i, j, k));
                }
            }
        }
    }
    while let Some((i, j, k)) = queue.pop_front() {
        let mut visit = |i: usize, j: usize, k: usize| {
            let id = idx(i, j, k);
            if !outside[id] && !shell[id] {
                outside[id] = true;
                queue.push_back((i, j, k));
            }
        };
        if i > 0 {
            visit(i - 1, j, k);
        }
        if i + 1 < r {
            visit(i + 1, j, k);
        }
        if j > 0 {
            visit(i, j - 1, k);
        }
        if j + 1 < r {
            visit(i, j + 1, k);
        }
        if k > 0 {
            visit(i, j, k - 1);
        }
        if k + 1 < r {
            visit(i, j, k + 1);
        }
    }
    let rays = RayCaster::new(mesh, r);
    let mut values = vec![0.0f32; r * r * r];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let id = idx(i, j, k);
                let inside = if shell[id] {
                    rays.inside([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h])
                } else {
                    !outside[id]
                };
                values[id] = inside as u8 as f32;
            }
        }
    }
    OccupancyGrid::new(r, values).expect("values are binary and sized R³")
}

/// Parity test along +x with triangles bucketed by their yz footprint.
struct RayCaster<'a> {
    mesh: &'a Mesh,
    r: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> RayCaster<'a> {
    fn new(mesh: &'a Mesh, r: usize) -> Self {
        let mut buckets = vec![Vec::new(); r * r];
        let cell = |x: f64| ((x * r as f64).floor().max(0.0) as usize).min(r - 1);
        for (fi, f) in mesh.faces.iter().enumerate() {
            let vs = f.map(|v| mesh.vertices[v]);
            let (y0, y1) = (vs.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min), vs.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max));
            let (z0, z1) = (vs.iter().map(|v| v[2]).fold(f64::INFINITY, f64::min), vs.iter().map(|v| v[2]).fold(f64::NEG_INFINITY, f64::max));
            for a in cell(y0)..=cell(y1) {
                for b in cell(z0)..=cell(z1) {
                    buckets[a * r + b].push(fi);
                }
            }
        }
        RayCaster { mesh, r, buckets }
    }

    fn inside(&self, p: [f64; 3]) -> bool {
        // nudge off grid-aligned degeneracies
        let (py, pz) = (p[1] + 1.3e-7, p[2] + 2.9e-7);
        let cell = |x: f64| ((x * self.r as f64).floor().max(0.0) as usize).min(self.r - 1);
        let mut crossings = 0;
        for &fi in &self.buckets[cell(py) * self.r + cell(pz)] {
            let [a, b, c] = self.mesh.faces[fi].map(|v| self.mesh.vertices[v]);
            let d = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2]);
            if d.abs() < 1e-300 {
                continue;
            }
            let u = ((py - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (pz - a[2])) / d;
            let v = ((b[1] - a[1]) * (pz - a[2]) - (py - a[1]) * (b[2] - a[2])) / d;
            if u < 0.0 || v < 0.0 || u + v > 1.0 {
                continue;
            }
            let x = a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]);
            if x > p[0] {
                crossings += 1;
            }
        }
        crossings % 2 == 1
    }
}
