//! Meshes a sphere of radius 0.4 at R = 32 and reports topology and area.

use std::f64::consts::PI;

use argus3d::geometry::{marching_cubes, rasterize_coverage, rasterize_occupancy, ImplicitShape};
use argus3d::Result;

fn main() -> Result<()> {
    let sphere = ImplicitShape::sphere([0.5; 3], 0.4)?;
    let exact = 4.0 * PI * 0.4 * 0.4;
    for (label, grid) in [
        ("binary occupancy", rasterize_occupancy(&sphere, 32)),
        ("4x supersampled coverage", rasterize_coverage(&sphere, 32, 4)),
    ] {
        let m = marching_cubes(&grid, 0.5)?.mesh;
        println!(
            "{label}: {} vertices, {} faces, watertight {}, Euler {}, area {:.4} ({:+.1}% vs {exact:.4})",
            m.vertices.len(),
            m.faces.len(),
            m.is_watertight(),
            m.euler_characteristic(),
            m.area(),
            100.0 * (m.area() - exact) / exact
        );
    }
    let path = std::env::temp_dir().join("argus3d_sphere.obj");
    argus3d::geometry::save_mesh(&marching_cubes(&rasterize_coverage(&sphere, 32, 4), 0.5)?.mesh, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
