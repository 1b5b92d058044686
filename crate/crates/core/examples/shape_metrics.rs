//! Distribution metrics between two toy shape sets: a jittered copy of the
//! reference classes and a set that collapses onto one class.

use argus3d::geometry::toy::ToyClass;
use argus3d::geometry::Point;
use argus3d::metrics::{evaluate_sets, frechet, tmd, Distance};
use argus3d::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 256;

fn cloud(class: ToyClass, seed: u64) -> Vec<Point> {
    let shape = class.shape(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC10D);
    (0..POINTS).map(|_| shape.sample_surface(&mut rng).0).collect()
}

/// Per-shape bounding-box extents, a crude feature for the Fréchet distance.
fn extents(c: &[Point]) -> Vec<f64> {
    (0..3)
        .map(|a| c.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max) - c.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min))
        .collect()
}

fn main() -> Result<()> {
    let reference: Vec<Vec<Point>> = ToyClass::ALL.iter().flat_map(|&c| (0..4).map(move |i| cloud(c, i))).collect();
    let faithful: Vec<Vec<Point>> = ToyClass::ALL.iter().flat_map(|&c| (100..104).map(move |i| cloud(c, i))).collect();
    let collapsed: Vec<Vec<Point>> = (200..216).map(|i| cloud(ToyClass::Sphere, i)).collect();

    for (name, set) in [("faithful", &faithful), ("collapsed", &collapsed)] {
        let report = evaluate_sets(set, &reference, &Distance::ALL, 5, Some(POINTS))?;
        println!("== {name}\n{}", report.to_text_table());
        let fd = frechet(
            &set.iter().map(|c| extents(c)).collect::<Vec<_>>(),
            &reference.iter().map(|c| extents(c)).collect::<Vec<_>>(),
        )?;
        println!("Fréchet distance of bounding-box extents: {fd:.5}");
        println!("TMD within the set: {:.5}\n", tmd(set)?);
    }
    Ok(())
}
