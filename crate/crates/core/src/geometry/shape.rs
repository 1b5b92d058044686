use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{dist2, Mesh, OccupancyGrid, Point};
use crate::error::{config_err, Result};

/// Every parametric solid must keep this distance from the cube faces.
pub const MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Box,
    Torus,
    Cylinder,
    Union,
    VoxelizedMesh,
}

/// A solid with an exact inside/outside oracle.
///
/// The torus lies in the xz-plane around an axis parallel to y; the cylinder
/// runs along z.
#[derive(Clone, Debug)]
pub enum ImplicitShape {
    Sphere { center: Point, radius: f64 },
    Box { center: Point, size: Point },
    Torus { center: Point, major: f64, minor: f64 },
    Cylinder { center: Point, radius: f64, height: f64 },
    Union(Vec<ImplicitShape>),
    Voxels { grid: OccupancyGrid, mesh: Option<Mesh> },
}

fn check_range(what: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(lo..=hi).contains(&v) || !v.is_finite() {
        return config_err(format!("{what} = {v} outside [{lo}, {hi}]"));
    }
    Ok(())
}

impl ImplicitShape {
    pub fn sphere(center: Point, radius: f64) -> Result<Self> {
        check_range("sphere radius", radius, 0.1, 0.45)?;
        Self::Sphere { center, radius }.fitted()
    }

    pub fn cuboid(center: Point, size: Point) -> Result<Self> {
        for s in size {
            check_range("box side", s, 0.05, 0.9)?;
        }
        Self::Box { center, size }.fitted()
    }

    pub fn torus(center: Point, major: f64, minor: f64) -> Result<Self> {
        check_range("torus major radius", major, 0.05, 0.4)?;
        check_range("torus minor radius", minor, 0.02, major)?;
        Self::Torus { center, major, minor }.fitted()
    }

    pub fn cylinder(center: Point, radius: f64, height: f64) -> Result<Self> {
        check_range("cylinder radius", radius, 0.03, 0.45)?;
        check_range("cylinder height", height, 0.05, 0.9)?;
        Self::Cylinder { center, radius, height }.fitted()
    }

    pub fn union(parts: Vec<ImplicitShape>) -> Result<Self> {
        if parts.is_empty() {
            return config_err("union needs at least one part");
        }
        Ok(Self::Union(parts))
    }

    /// Solid given by thresholding a grid at 0.5; `mesh`, when present, is
    /// used for surface sampling.
    pub fn voxels(grid: OccupancyGrid, mesh: Option<Mesh>) -> Self {
        Self::Voxels { grid, mesh }
    }

    fn fitted(self) -> Result<Self> {
        let (lo, hi) = self.bounds();
        for a in 0..3 {
            if lo[a] < MARGIN - 1e-12 || hi[a] > 1.0 - MARGIN + 1e-12 {
                return config_err(format!(
                    "{:?} leaves the unit cube margin: bounds {lo:?}..{hi:?}",
                    self.kind()
                ));
            }
        }
        Ok(self)
    }

    pub fn kind(&self) -> ShapeKind {
        match self {
            Self::Sphere { .. } => ShapeKind::Sphere,
            Self::Box { .. } => ShapeKind::Box,
            Self::Torus { .. } => ShapeKind::Torus,
            Self::Cylinder { .. } => ShapeKind::Cylinder,
            Self::Union(_) => ShapeKind::Union,
            Self::Voxels { .. } => ShapeKind::VoxelizedMesh,
        }
    }

    /// Axis-aligned bounding box.
    pub fn bounds(&self) -> (Point, Point) {
        let around = |c: Point, h: Point| {
            (
                [c[0] - h[0], c[1] - h[1], c[2] - h[2]],
                [c[0] + h[0], c[1] + h[1], c[2] + h[2]],
            )
        };
        match self {
            Self::Sphere { center, radius } => around(*center, [*radius; 3]),
            Self::Box { center, size } => around(*center, [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0]),
            Self::Torus { center, major, minor } => around(*center, [major + minor, *minor, major + minor]),
            Self::Cylinder { center, radius, height } => around(*center, [*radius, *radius, height / 2.0]),
            Self::Union(parts) => parts.iter().map(|p| p.bounds()).fold(
                ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]),
                |(lo, hi), (l, h)| {
                    (
                        [lo[0].min(l[0]), lo[1].min(l[1]), lo[2].min(l[2])],
                        [hi[0].max(h[0]), hi[1].max(h[1]), hi[2].max(h[2])],
                    )
                },
            ),
            Self::Voxels { .. } => ([0.0; 3], [1.0; 3]),
        }
    }

    /// Signed distance, negative inside. Exact for the primitives, a lower
    /// bound for unions, unavailable for voxels.
    pub fn sdf(&self, p: Point) -> Option<f64> {
        Some(match self {
            Self::Sphere { center, radius } => dist2(p, *center).sqrt() - radius,
            Self::Box { center, size } => {
                let q: Vec<f64> = (0..3).map(|a| (p[a] - center[a]).abs() - size[a] / 2.0).collect();
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Self::Torus { center, major, minor } => {
                let (dx, dy, dz) = (p[0] - center[0], p[1] - center[1], p[2] - center[2]);
                let ring = (dx * dx + dz * dz).sqrt() - major;
                (ring * ring + dy * dy).sqrt() - minor
            }
            Self::Cylinder { center, radius, height } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let dr = (dx * dx + dy * dy).sqrt() - radius;
                let dh = (p[2] - center[2]).abs() - height / 2.0;
                dr.max(dh).min(0.0) + (dr.max(0.0).powi(2) + dh.max(0.0).powi(2)).sqrt()
            }
            Self::Union(parts) => {
                let mut best = f64::INFINITY;
                for part in parts {
                    best = best.min(part.sdf(p)?);
                }
                best
            }
            Self::Voxels { .. } => return None,
        })
    }

    pub fn occupancy(&self, p: Point) -> bool {
        match self {
            Self::Union(parts) => parts.iter().any(|s| s.occupancy(p)),
            Self::Voxels { grid, .. } => grid.lookup(p) >= 0.5,
            _ => self.sdf(p).is_some_and(|d| d <= 0.0),
        }
    }

    /// Exact volume where it has a closed form.
    pub fn volume(&self) -> Option<f64> {
        Some(match self {
            Self::Sphere { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            Self::Box { size, .. } => size[0] * size[1] * size[2],
            Self::Torus { major, minor, .. } => 2.0 * PI * PI * major * minor * minor,
            Self::Cylinder { radius, height, .. } => PI * radius * radius * height,
            _ => return None,
        })
    }

    /// Exact surface area for the primitives; the sum of part areas for a
    /// union (an upper bound).
    pub fn area(&self) -> f64 {
        match self {
            Self::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Self::Box { size, .. } => 2.0 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2]),
            Self::Torus { major, minor, .. } => 4.0 * PI * PI * major * minor,
            Self::Cylinder { radius, height, .. } => 2.0 * PI * radius * (radius + height),
            Self::Union(parts) => parts.iter().map(|p| p.area()).sum(),
            Self::Voxels { grid, mesh } => match mesh {
                Some(m) => m.area(),
                None => {
                    let h = 1.0 / grid.resolution() as f64;
                    grid.occupied_count(0.5) as f64 * h * h
                }
            },
        }
    }

    /// A point drawn uniformly by area from the boundary, with its outward
    /// normal.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Point, Point) {
        match self {
            Self::Sphere { center, radius } => {
                let n = random_direction(rng);
                ([center[0] + radius * n[0], center[1] + radius * n[1], center[2] + radius * n[2]], n)
            }
            Self::Box { center, size } => {
                let faces = [size[1] * size[2], size[0] * size[2], size[0] * size[1]];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (a, f) in faces.iter().enumerate() {
                    if pick < *f {
                        axis = a;
                        break;
                    }
                    pick -= f;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                let mut n = [0.0; 3];
                for a in 0..3 {
                    p[a] = if a == axis {
                        center[a] + sign * size[a] / 2.0
                    } else {
                        center[a] + (rng.random::<f64>() - 0.5) * size[a]
                    };
                }
                n[axis] = sign;
                (p, n)
            }
            Self::Torus { center, major, minor } => {
                // area element is proportional to (major + minor·cos v)
                let v = loop {
                    let v = rng.random::<f64>() * 2.0 * PI;
                    if rng.random::<f64>() * (major + minor) <= major + minor * v.cos() {
                        break v;
                    }
                };
                let u = rng.random::<f64>() * 2.0 * PI;
                let n = [v.cos() * u.cos(), v.sin(), v.cos() * u.sin()];
                let ring = major + minor * v.cos();
                (
                    [center[0] + ring * u.cos(), center[1] + minor * v.sin(), center[2] + ring * u.sin()],
                    n,
                )
            }
            Self::Cylinder { center, radius, height } => {
                let side = 2.0 * PI * radius * height;
                let cap = PI * radius * radius;
                let pick = rng.random::<f64>() * (side + 2.0 * cap);
                if pick < side {
                    let a = rng.random::<f64>() * 2.0 * PI;
                    let z = center[2] + (rng.random::<f64>() - 0.5) * height;
                    (
                        [center[0] + radius * a.cos(), center[1] + radius * a.sin(), z],
                        [a.cos(), a.sin(), 0.0],
                    )
                } else {
                    let sign = if pick < side + cap { 1.0 } else { -1.0 };
                    let a = rng.random::<f64>() * 2.0 * PI;
                    let r = radius * rng.random::<f64>().sqrt();
                    (
                        [center[0] + r * a.cos(), center[1] + r * a.sin(), center[2] + sign * height / 2.0],
                        [0.0, 0.0, sign],
                    )
                }
            }
            Self::Union(parts) => {
                let areas: Vec<f64> = parts.iter().map(|p| p.area()).collect();
                let total: f64 = areas.iter().sum();
                for _ in 0..10_000 {
                    let mut pick = rng.random::<f64>() * total;
                    let mut idx = parts.len() - 1;
                    for (i, a) in areas.iter().enumerate() {
                        if pick < *a {
                            idx = i;
                            break;
                        }
                        pick -= a;
                    }
                    let (p, n) = parts[idx].sample_surface(rng);
                    let buried = parts
                        .iter()
                        .enumerate()
                        .any(|(j, s)| j != idx && s.sdf(p).is_some_and(|d| d < 0.0));
                    if !buried {
                        return (p, n);
                    }
                }
                parts[0].sample_surface(rng)
            }
            Self::Voxels { grid, mesh } => match mesh {
                Some(m) if !m.faces.is_empty() => m.sample_surface_with_normal(rng),
                _ => voxel_boundary_sample(grid, rng),
            },
        }
    }
}

pub(crate) fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Point {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// A point on a random exposed face of an occupied voxel.
fn voxel_boundary_sample<R: Rng + ?Sized>(grid: &OccupancyGrid, rng: &mut R) -> (Point, Point) {
    let r = grid.resolution();
    let h = 1.0 / r as f64;
    let occ = |i: isize, j: isize, k: isize| {
        let inside = |x: isize| x >= 0 && (x as usize) < r;
        inside(i) && inside(j) && inside(k) && grid.get(i as usize, j as usize, k as usize) >= 0.5
    };
    let mut faces = Vec::new();
    for i in 0..r as isize {
        for j in 0..r as isize {
            for k in 0..r as isize {
                if !occ(i, j, k) {
                    continue;
                }
                for (a, s) in [(0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
                    let mut n = [i, j, k];
                    n[a] += s;
                    if !occ(n[0], n[1], n[2]) {
                        faces.push(([i, j, k], a, s));
                    }
                }
            }
        }
    }
    if faces.is_empty() {
        return ([0.5; 3], [0.0, 0.0, 1.0]);
    }
    let (cell, axis, sign) = faces[rng.random_range(0..faces.len())];
    let mut p = [0.0; 3];
    let mut n = [0.0; 3];
    for a in 0..3 {
        p[a] = if a == axis {
            (cell[a] as f64 + if sign > 0 { 1.0 } else { 0.0 }) * h
        } else {
            (cell[a] as f64 + rng.random::<f64>()) * h
        };
    }
    n[axis] = sign as f64;
    (p, n)
}
