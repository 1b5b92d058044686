use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImplicitShape, Point};

/// Half-width of the shell used for surface-near samples.
pub const SURFACE_BAND: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Within ±[`SURFACE_BAND`] of the surface along its normal, alternating
    /// inward and outward offsets.
    SurfaceNear,
    UniformVolume,
    /// Half uniform, half surface-near.
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub labels: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn occupied_fraction(&self) -> Option<f64> {
        let labels = self.labels.as_ref()?;
        Some(labels.iter().map(|&l| l as f64).sum::<f64>() / labels.len().max(1) as f64)
    }
}

fn surface_near<R: Rng>(shape: &ImplicitShape, parity: usize, rng: &mut R) -> Point {
    let (p, n) = shape.sample_surface(rng);
    let sign = if parity % 2 == 0 { -1.0 } else { 1.0 };
    let d = sign * rng.random::<f64>() * SURFACE_BAND;
    [
        (p[0] + d * n[0]).clamp(0.0, 1.0),
        (p[1] + d * n[1]).clamp(0.0, 1.0),
        (p[2] + d * n[2]).clamp(0.0, 1.0),
    ]
}

/// `n` labelled points drawn from `shape`; the same seed always yields the
/// same cloud.
pub fn sample_points(shape: &ImplicitShape, n: usize, mode: SampleMode, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point> = (0..n)
        .map(|i| {
            let uniform = match mode {
                SampleMode::UniformVolume => true,
                SampleMode::SurfaceNear => false,
                SampleMode::Mixed => i % 2 == 0,
            };
            if uniform {
                [rng.random(), rng.random(), rng.random()]
            } else {
                surface_near(shape, i / if mode == SampleMode::Mixed { 2 } else { 1 }, &mut rng)
            }
        })
        .collect();
    let labels = points.iter().map(|&p| shape.occupancy(p) as u8 as f32).collect();
    PointCloud {
        points,
        labels: Some(labels),
    }
}
