//! Shapes, point sampling, occupancy grids and surface extraction.
//!
//! Everything lives in the unit cube `[0, 1]³`. Grid cell `(i, j, k)` of an
//! `R³` grid is centred on `((i + ½)/R, (j + ½)/R, (k + ½)/R)` with `i` along
//! x, and values are stored with `k` fastest.

mod grid;
mod marching_cubes;
mod mesh;
mod sampling;
mod shape;
pub mod toy;
mod voxelize;

pub use grid::{rasterize_coverage, rasterize_occupancy, volumetric_iou, OccupancyGrid};
pub use marching_cubes::{marching_cubes, Extraction};
pub use mesh::{load_mesh, save_mesh, Mesh};
pub use sampling::{sample_points, PointCloud, SampleMode, SURFACE_BAND};
pub use shape::{ImplicitShape, ShapeKind, MARGIN};
pub use voxelize::voxelize_mesh;

pub type Point = [f64; 3];

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}
