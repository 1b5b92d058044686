use std::f64::consts::PI;

use argus3d::geometry::toy::ToyClass;
use argus3d::geometry::{
    load_mesh, marching_cubes, rasterize_coverage, rasterize_occupancy, sample_points, save_mesh, volumetric_iou,
    voxelize_mesh, ImplicitShape, Mesh, OccupancyGrid, SampleMode, SURFACE_BAND,
};
use argus3d::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C: [f64; 3] = [0.5, 0.5, 0.5];

fn sphere() -> ImplicitShape {
    ImplicitShape::sphere(C, 0.4).unwrap()
}

#[test]
fn sphere_oracle_center_and_corner() {
    let s = sphere();
    assert!(s.occupancy([0.5, 0.5, 0.5]));
    assert!(!s.occupancy([0.99, 0.99, 0.99]));
}

#[test]
fn out_of_range_parameters_are_config_errors() {
    assert!(matches!(ImplicitShape::sphere(C, 0.5), Err(Error::Config(_))));
    assert!(matches!(ImplicitShape::sphere(C, 0.05), Err(Error::Config(_))));
    assert!(matches!(ImplicitShape::sphere([0.2, 0.5, 0.5], 0.3), Err(Error::Config(_))));
    assert!(matches!(ImplicitShape::torus(C, 0.2, 0.3), Err(Error::Config(_))));
    assert!(matches!(ImplicitShape::cuboid(C, [0.95, 0.3, 0.3]), Err(Error::Config(_))));
}

#[test]
fn box_volume_by_monte_carlo() {
    let size = [0.6, 0.3, 0.45];
    let b = ImplicitShape::cuboid(C, size).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1_000_000;
    let hits = (0..n).filter(|_| b.occupancy([rng.random(), rng.random(), rng.random()])).count();
    let est = hits as f64 / n as f64;
    let exact = size[0] * size[1] * size[2];
    assert!((est - exact).abs() / exact < 0.01, "{est} vs {exact}");
}

#[test]
fn primitive_volumes_match_monte_carlo() {
    let shapes = [
        ImplicitShape::torus(C, 0.27, 0.1).unwrap(),
        ImplicitShape::cylinder(C, 0.11, 0.8).unwrap(),
        sphere(),
    ];
    for s in shapes {
        let cloud = sample_points(&s, 200_000, SampleMode::UniformVolume, 3);
        let est = cloud.occupied_fraction().unwrap();
        let exact = s.volume().unwrap();
        assert!((est - exact).abs() / exact < 0.03, "{:?}: {est} vs {exact}", s.kind());
    }
}

#[test]
fn uniform_sphere_fraction() {
    let cloud = sample_points(&sphere(), 100_000, SampleMode::UniformVolume, 9);
    let f = cloud.occupied_fraction().unwrap();
    let exact = 4.0 / 3.0 * PI * 0.4f64.powi(3);
    assert!((f - exact).abs() / exact < 0.02, "{f} vs {exact}");
}

#[test]
fn surface_near_points_stay_in_the_band() {
    let cloud = sample_points(&sphere(), 5000, SampleMode::SurfaceNear, 2);
    for p in &cloud.points {
        let r = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2)).sqrt();
        assert!((r - 0.4).abs() < SURFACE_BAND);
    }
    let inside = cloud.occupied_fraction().unwrap();
    assert!((inside - 0.5).abs() < 0.02, "{inside}");
}

#[test]
fn surface_samples_lie_on_every_primitive() {
    let shapes = [
        ImplicitShape::cuboid(C, [0.76, 0.76, 0.18]).unwrap(),
        ImplicitShape::torus(C, 0.27, 0.1).unwrap(),
        ImplicitShape::cylinder(C, 0.11, 0.8).unwrap(),
        ImplicitShape::union(vec![
            ImplicitShape::sphere([0.4, 0.5, 0.5], 0.2).unwrap(),
            ImplicitShape::sphere([0.6, 0.5, 0.5], 0.2).unwrap(),
        ])
        .unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in &shapes {
        for _ in 0..2000 {
            let (p, n) = s.sample_surface(&mut rng);
            assert!(s.sdf(p).unwrap().abs() < 1e-9, "{:?}", s.kind());
            let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((l - 1.0).abs() < 1e-9);
            let out = [p[0] + 1e-4 * n[0], p[1] + 1e-4 * n[1], p[2] + 1e-4 * n[2]];
            assert!(!s.occupancy(out), "{:?} normal points inward at {p:?}", s.kind());
        }
    }
}

#[test]
fn sampling_is_deterministic_and_labels_reproduce() {
    for mode in [SampleMode::SurfaceNear, SampleMode::UniformVolume, SampleMode::Mixed] {
        let shape = ToyClass::Torus.shape(4);
        let a = sample_points(&shape, 777, mode, 42);
        let b = sample_points(&shape, 777, mode, 42);
        assert_eq!(a, b);
        assert_ne!(a, sample_points(&shape, 777, mode, 43));
        for (p, &l) in a.points.iter().zip(a.labels.as_ref().unwrap()) {
            assert_eq!(shape.occupancy(*p) as u8 as f32, l);
        }
    }
}

#[test]
fn rasterize_trivial_grids() {
    let full = ImplicitShape::voxels(OccupancyGrid::filled(4, 1.0), None);
    assert!(rasterize_occupancy(&full, 16).values().iter().all(|&v| v == 1.0));
    let empty = ImplicitShape::voxels(OccupancyGrid::filled(4, 0.0), None);
    assert!(rasterize_occupancy(&empty, 16).values().iter().all(|&v| v == 0.0));

    let g = rasterize_occupancy(&sphere(), 64);
    let again = rasterize_occupancy(&ImplicitShape::voxels(g.clone(), None), 64);
    assert_eq!(volumetric_iou(&g, &again, 0.5).unwrap(), 1.0);
}

#[test]
fn coverage_grid_matches_volume() {
    let s = ImplicitShape::torus(C, 0.27, 0.1).unwrap();
    let g = rasterize_coverage(&s, 32, 4);
    let vol: f64 = g.values().iter().map(|&v| v as f64).sum::<f64>() / 32f64.powi(3);
    let exact = s.volume().unwrap();
    assert!((vol - exact).abs() / exact < 0.01, "{vol} vs {exact}");
}

fn box_grid(lo: [usize; 3], hi: [usize; 3], r: usize) -> OccupancyGrid {
    let mut v = vec![0.0; r * r * r];
    for i in lo[0]..hi[0] {
        for j in lo[1]..hi[1] {
            for k in lo[2]..hi[2] {
                v[(i * r + j) * r + k] = 1.0;
            }
        }
    }
    OccupancyGrid::new(r, v).unwrap()
}

#[test]
fn iou_identities() {
    let a = box_grid([2, 2, 2], [10, 10, 10], 16);
    assert_eq!(volumetric_iou(&a, &a, 0.5).unwrap(), 1.0);
    let far = box_grid([11, 11, 11], [15, 15, 15], 16);
    assert_eq!(volumetric_iou(&a, &far, 0.5).unwrap(), 0.0);
    let half = box_grid([6, 2, 2], [14, 10, 10], 16);
    assert!((volumetric_iou(&a, &half, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(volumetric_iou(&a, &half, 0.5).unwrap(), volumetric_iou(&half, &a, 0.5).unwrap());
    let e = OccupancyGrid::filled(8, 0.0);
    assert_eq!(volumetric_iou(&e, &e, 0.5).unwrap(), 1.0);
    assert!(matches!(volumetric_iou(&a, &e, 0.5), Err(Error::Dimension(_))));
}

#[test]
fn iou_grows_when_shared_cells_are_added() {
    let a = box_grid([2, 2, 2], [10, 10, 10], 16);
    let b = box_grid([6, 2, 2], [14, 10, 10], 16);
    let base = volumetric_iou(&a, &b, 0.5).unwrap();
    let mut av = a.values().to_vec();
    let mut bv = b.values().to_vec();
    for k in 0..4 {
        av[(12 * 16 + 12) * 16 + k] = 1.0;
        bv[(12 * 16 + 12) * 16 + k] = 1.0;
    }
    let grown = volumetric_iou(&OccupancyGrid::new(16, av).unwrap(), &OccupancyGrid::new(16, bv).unwrap(), 0.5).unwrap();
    assert!(grown > base);
}

#[test]
fn grid_rejects_bad_sizes_and_values() {
    assert!(matches!(OccupancyGrid::new(4, vec![0.0; 63]), Err(Error::Dimension(_))));
    assert!(matches!(OccupancyGrid::new(2, vec![1.5; 8]), Err(Error::Contract(_))));
}

#[test]
fn marching_cubes_sphere_topology_and_area() {
    let binary = marching_cubes(&rasterize_occupancy(&sphere(), 32), 0.5).unwrap();
    assert!(!binary.touches_boundary);
    assert!(binary.mesh.is_watertight());
    assert_eq!(binary.mesh.euler_characteristic(), 2);

    let ex = marching_cubes(&rasterize_coverage(&sphere(), 32, 4), 0.5).unwrap();
    let m = &ex.mesh;
    assert!(m.is_watertight());
    assert!(m.is_consistently_oriented());
    assert_eq!(m.euler_characteristic(), 2);
    let exact = 4.0 * PI * 0.16;
    assert!((m.area() - exact).abs() / exact < 0.05, "{} vs {exact}", m.area());
    assert!(m.signed_volume() > 0.0);
}

#[test]
fn marching_cubes_torus_has_genus_one() {
    let t = ImplicitShape::torus(C, 0.27, 0.1).unwrap();
    let m = marching_cubes(&rasterize_coverage(&t, 32, 2), 0.5).unwrap().mesh;
    assert!(m.is_watertight());
    assert_eq!(m.euler_characteristic(), 0);
}

#[test]
fn marching_cubes_edge_cases() {
    let empty = marching_cubes(&OccupancyGrid::filled(16, 0.0), 0.5).unwrap();
    assert!(empty.mesh.vertices.is_empty() && empty.mesh.faces.is_empty());
    assert!(marching_cubes(&OccupancyGrid::filled(16, 1.0), 0.5).unwrap().touches_boundary);
    assert!(matches!(marching_cubes(&OccupancyGrid::filled(4, 0.0), 0.5), Err(Error::Contract(_))));
    assert!(matches!(marching_cubes(&OccupancyGrid::filled(16, 0.0), 1.0), Err(Error::Contract(_))));
}

fn random_interior_grid(r: usize, seed: u64, density: f64) -> OccupancyGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = vec![0.0f32; r * r * r];
    for i in 1..r - 1 {
        for j in 1..r - 1 {
            for k in 1..r - 1 {
                if rng.random::<f64>() < density {
                    v[(i * r + j) * r + k] = rng.random::<f32>();
                }
            }
        }
    }
    OccupancyGrid::new(r, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marching_cubes_is_watertight_on_random_fields(seed in any::<u64>(), density in 0.2f64..0.9) {
        let ex = marching_cubes(&random_interior_grid(10, seed, density), 0.5).unwrap();
        prop_assert!(!ex.touches_boundary);
        let m = &ex.mesh;
        if !m.faces.is_empty() {
            prop_assert!(m.is_watertight());
            prop_assert!(m.is_consistently_oriented());
            prop_assert!(m.signed_volume() > 0.0);
        }
    }
}

#[test]
fn mesh_round_trips_through_obj_and_off() {
    let m = marching_cubes(&rasterize_occupancy(&sphere(), 16), 0.5).unwrap().mesh;
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.obj", "a.off"] {
        let path = dir.path().join(name);
        save_mesh(&m, &path).unwrap();
        assert_eq!(load_mesh(&path).unwrap(), m);
    }
}

#[test]
fn mesh_parse_errors_carry_line_numbers() {
    let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3 4\n";
    assert!(matches!(Mesh::parse_obj(obj), Err(Error::Parse { line: 5, .. })));
    let obj = "# header\nv 0 0 x\n";
    assert!(matches!(Mesh::parse_obj(obj), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(Mesh::parse_obj("v 0 0 0\nf 1 2 3\n"), Err(Error::Parse { line: 2, .. })));
    let parsed = Mesh::parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 -1\n").unwrap();
    assert_eq!(parsed.faces, vec![[0, 1, 2]]);

    let off = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2 2\n";
    assert!(matches!(Mesh::parse_off(off), Err(Error::Parse { line: 6, .. })));
    assert!(matches!(Mesh::parse_off("PLY\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(Mesh::parse_off("OFF\n3 1 0\n0 0 0\n"), Err(Error::Parse { line: 4, .. })));
}

#[test]
fn voxelized_mesh_recovers_the_solid() {
    let s = ImplicitShape::torus(C, 0.27, 0.1).unwrap();
    let mesh = marching_cubes(&rasterize_coverage(&s, 48, 2), 0.5).unwrap().mesh;
    let vox = voxelize_mesh(&mesh, 32);
    let truth = rasterize_occupancy(&s, 32);
    let iou = volumetric_iou(&vox, &truth, 0.5).unwrap();
    assert!(iou > 0.8, "{iou}");
    let shape = ImplicitShape::voxels(vox, Some(mesh));
    let cloud = sample_points(&shape, 1000, SampleMode::Mixed, 1);
    assert_eq!(cloud.len(), 1000);
}

#[test]
fn mesh_normalization_fits_margin() {
    let mut m = Mesh::new(vec![[-3.0, 0.0, 1.0], [5.0, 2.0, 1.0], [0.0, 1.0, 4.0]], vec![[0, 1, 2]]).unwrap();
    m.normalize_to_unit_cube(0.05);
    for v in &m.vertices {
        for &x in v {
            assert!((0.05 - 1e-12..=0.95 + 1e-12).contains(&x));
        }
    }
    assert!(Mesh::new(vec![[0.0; 3]], vec![[0, 0, 1]]).is_err());
}

#[test]
fn toy_classes_are_distinct_and_deterministic() {
    let grids: Vec<OccupancyGrid> = ToyClass::ALL.iter().map(|c| rasterize_occupancy(&c.shape(0), 32)).collect();
    for a in 0..4 {
        for b in a + 1..4 {
            let iou = volumetric_iou(&grids[a], &grids[b], 0.5).unwrap();
            assert!(iou < 0.4, "{a} vs {b}: {iou}");
        }
    }
    for c in ToyClass::ALL {
        let a = rasterize_occupancy(&c.shape(11), 32);
        let b = rasterize_occupancy(&c.shape(11), 32);
        assert_eq!(a, b);
        assert_eq!(c.name().parse::<ToyClass>().unwrap(), c);
    }
}

#[test]
fn toy_prototypes_leave_room_for_class_fidelity() {
    let protos: Vec<OccupancyGrid> = ToyClass::ALL.iter().map(|c| rasterize_occupancy(&c.prototype(), 32)).collect();
    for a in 0..4 {
        for b in a + 1..4 {
            let iou = volumetric_iou(&protos[a], &protos[b], 0.5).unwrap();
            assert!(iou < 0.28, "{a} vs {b}: {iou}");
        }
    }
    // jittered members stay close to their own prototype
    for (c, proto) in ToyClass::ALL.iter().zip(&protos) {
        let mean = (0..16)
            .map(|s| volumetric_iou(&rasterize_occupancy(&c.shape(s), 32), proto, 0.5).unwrap())
            .sum::<f64>()
            / 16.0;
        assert!(mean > 0.88, "{c}: {mean}");
    }
}
