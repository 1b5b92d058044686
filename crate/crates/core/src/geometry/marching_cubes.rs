use std::sync::OnceLock;

use super::{cross, dot, sub, Mesh, OccupancyGrid, Point};
use crate::error::{contract_err, Result};

/// Surface produced by [`marching_cubes`].
#[derive(Clone, Debug)]
pub struct Extraction {
    pub mesh: Mesh,
    /// Some occupied cell lies on the grid boundary, so the surface is cut
    /// open there and the mesh is not watertight.
    pub touches_boundary: bool,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Edge(u8),
    Centroid(u8),
}

#[derive(Default)]
struct Case {
    loops: Vec<Vec<u8>>,
    triangles: Vec<[Slot; 3]>,
}

/// Corner `c` sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// `(low corner, high corner, axis)` for the twelve cube edges.
fn edges() -> &'static [(usize, usize, usize); 12] {
    static EDGES: OnceLock<[(usize, usize, usize); 12]> = OnceLock::new();
    EDGES.get_or_init(|| {
        let mut out = [(0, 0, 0); 12];
        let mut n = 0;
        for axis in 0..3 {
            for c in 0..8 {
                if c >> axis & 1 == 0 {
                    out[n] = (c, c | 1 << axis, axis);
                    n += 1;
                }
            }
        }
        out
    })
}

fn edge_between(a: usize, b: usize) -> u8 {
    let (lo, hi) = (a.min(b), a.max(b));
    edges().iter().position(|&(c0, c1, _)| c0 == lo && c1 == hi).unwrap() as u8
}

/// The cube faces `(axis, side)` an edge lies on.
fn edge_faces(e: u8) -> [(usize, usize); 2] {
    let (c0, _, axis) = edges()[e as usize];
    let o = corner_offset(c0);
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    [(u, o[u]), (v, o[v])]
}

fn share_face(a: u8, b: u8) -> bool {
    let fb = edge_faces(b);
    edge_faces(a).iter().any(|f| fb.contains(f))
}

/// Contour segments on each cube face, walked counter-clockwise as seen from
/// outside the cube and directed from where the walk leaves the solid back to
/// where it entered. Every inside run of corners gets its own segment, so an
/// ambiguous face always separates its two inside corners and both cubes
/// sharing it agree.
fn build_case(mask: usize) -> Case {
    let inside = |c: usize| mask >> c & 1 == 1;
    let mut next = [u8::MAX; 12];
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let order: [(usize, usize); 4] = if side == 1 {
                [(0, 0), (1, 0), (1, 1), (0, 1)]
            } else {
                [(0, 0), (0, 1), (1, 1), (1, 0)]
            };
            let q: Vec<usize> = order
                .iter()
                .map(|&(a, b)| side << axis | a << u | b << v)
                .collect();
            let crossing = |i: usize| edge_between(q[i], q[(i + 1) % 4]);
            for i in 0..4 {
                if inside(q[i]) && !inside(q[(i + 1) % 4]) {
                    let mut j = (i + 3) % 4;
                    while !(!inside(q[j]) && inside(q[(j + 1) % 4])) {
                        j = (j + 3) % 4;
                    }
                    next[crossing(i) as usize] = crossing(j);
                }
            }
        }
    }

    let mut case = Case::default();
    let mut seen = [false; 12];
    for start in 0..12 {
        if next[start] == u8::MAX || seen[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            lp.push(e as u8);
            e = next[e] as usize;
        }
        case.loops.push(lp);
    }

    for (li, lp) in case.loops.iter().enumerate() {
        let m = lp.len();
        let pivot = (0..m).find(|&p| (2..m - 1).all(|i| !share_face(lp[p], lp[(p + i) % m])));
        match pivot {
            Some(p) => {
                for i in 1..m - 1 {
                    case.triangles.push([
                        Slot::Edge(lp[p]),
                        Slot::Edge(lp[(p + i) % m]),
                        Slot::Edge(lp[(p + i + 1) % m]),
                    ]);
                }
            }
            None => {
                for i in 0..m {
                    case.triangles.push([Slot::Centroid(li as u8), Slot::Edge(lp[i]), Slot::Edge(lp[(i + 1) % m])]);
                }
            }
        }
    }
    case
}

struct Table {
    cases: Vec<Case>,
    /// Triangles come out wound inward and must be reversed.
    flip: bool,
}

fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let cases: Vec<Case> = (0..256).map(build_case).collect();
        // Calibrate on the single-corner case: the normal must point away
        // from the solid corner.
        let midpoint = |e: u8| {
            let (c0, c1, _) = edges()[e as usize];
            let (a, b) = (corner_offset(c0), corner_offset(c1));
            [0, 1, 2].map(|k| (a[k] + b[k]) as f64 / 2.0)
        };
        let pos = |s: Slot| match s {
            Slot::Edge(e) => midpoint(e),
            Slot::Centroid(_) => unreachable!(),
        };
        let t = cases[1].triangles[0];
        let (a, b, c) = (pos(t[0]), pos(t[1]), pos(t[2]));
        let n = cross(sub(b, a), sub(c, a));
        let centroid = [0, 1, 2].map(|k| (a[k] + b[k] + c[k]) / 3.0);
        Table {
            flip: dot(n, centroid) < 0.0,
            cases,
        }
    })
}

/// Triangulates the `iso` level set of `grid`, treating each value as a
/// sample at its cell centre. Cells strictly above `iso` are inside.
/// Vertices are shared between neighbouring cubes, and faces wind
/// counter-clockwise seen from outside.
pub fn marching_cubes(grid: &OccupancyGrid, iso: f32) -> Result<Extraction> {
    if !(iso > 0.0 && iso < 1.0) {
        return contract_err(format!("iso level {iso} must lie strictly between 0 and 1"));
    }
    let r = grid.resolution();
    if r < 8 {
        return contract_err(format!("marching cubes needs resolution >= 8, got {r}"));
    }
    let table = table();
    let values = grid.values();
    let inside = |i: usize, j: usize, k: usize| values[(i * r + j) * r + k] > iso;

    let mut touches_boundary = false;
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let on_face = [i, j, k].iter().any(|&x| x == 0 || x == r - 1);
                if on_face && inside(i, j, k) {
                    touches_boundary = true;
                }
            }
        }
    }

    let mut vertex_of = vec![u32::MAX; r * r * r * 3];
    let mut vertices: Vec<Point> = Vec::new();
    let mut faces = Vec::new();
    let h = 1.0 / r as f64;
    let mut local = [0usize; 12];

    for i in 0..r - 1 {
        for j in 0..r - 1 {
            for k in 0..r - 1 {
                let mut mask = 0usize;
                for c in 0..8 {
                    let o = corner_offset(c);
                    if inside(i + o[0], j + o[1], k + o[2]) {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                let case = &table.cases[mask];
                for lp in &case.loops {
                    for &e in lp {
                        let (c0, c1, axis) = edges()[e as usize];
                        let (o0, o1) = (corner_offset(c0), corner_offset(c1));
                        let (a, b) = ((i + o0[0], j + o0[1], k + o0[2]), (i + o1[0], j + o1[1], k + o1[2]));
                        let key = ((a.0 * r + a.1) * r + a.2) * 3 + axis;
                        if vertex_of[key] == u32::MAX {
                            let v0 = values[(a.0 * r + a.1) * r + a.2] as f64;
                            let v1 = values[(b.0 * r + b.1) * r + b.2] as f64;
                            let t = ((iso as f64 - v0) / (v1 - v0)).clamp(0.0, 1.0);
                            let mut p = [(a.0 as f64 + 0.5) * h, (a.1 as f64 + 0.5) * h, (a.2 as f64 + 0.5) * h];
                            p[axis] += t * h;
                            vertex_of[key] = vertices.len() as u32;
                            vertices.push(p);
                        }
                        local[e as usize] = vertex_of[key] as usize;
                    }
                }
                let mut centroids = [usize::MAX; 4];
                for tri in &case.triangles {
                    let mut f = [0usize; 3];
                    for (slot, s) in f.iter_mut().zip(tri) {
                        *slot = match *s {
                            Slot::Edge(e) => local[e as usize],
                            Slot::Centroid(li) => {
                                let li = li as usize;
                                if centroids[li] == usize::MAX {
                                    let lp = &case.loops[li];
                                    let mut c = [0.0; 3];
                                    for &e in lp {
                                        let p = vertices[local[e as usize]];
                                        for d in 0..3 {
                                            c[d] += p[d] / lp.len() as f64;
                                        }
                                    }
                                    centroids[li] = vertices.len();
                                    vertices.push(c);
                                }
                                centroids[li]
                            }
                        };
                    }
                    if table.flip {
                        f.swap(1, 2);
                    }
                    faces.push(f);
                }
            }
        }
    }
    Ok(Extraction {
        mesh: Mesh { vertices, faces },
        touches_boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_closes_its_loops() {
        for mask in 0..256 {
            let case = build_case(mask);
            let crossing = edges()
                .iter()
                .filter(|&&(a, b, _)| (mask >> a & 1) != (mask >> b & 1))
                .count();
            let on_loops: usize = case.loops.iter().map(|l| l.len()).sum();
            assert_eq!(crossing, on_loops, "mask {mask:08b}");
            assert!(case.loops.iter().all(|l| l.len() >= 3));
        }
    }

    #[test]
    fn complementary_cases_have_the_same_crossings() {
        for mask in 1..255 {
            let a: usize = build_case(mask).loops.iter().map(|l| l.len()).sum();
            let b: usize = build_case(255 - mask).loops.iter().map(|l| l.len()).sum();
            assert_eq!(a, b);
        }
    }
}
