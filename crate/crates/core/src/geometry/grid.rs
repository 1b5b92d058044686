use rayon::prelude::*;

use super::{ImplicitShape, Point};
use crate::error::{contract_err, dim_err, Result};

/// `R³` occupancy probabilities, `k` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    resolution: usize,
    values: Vec<f32>,
}

impl OccupancyGrid {
    pub fn new(resolution: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != resolution.pow(3) {
            return dim_err(format!(
                "grid of resolution {resolution} needs {} values, got {}",
                resolution.pow(3),
                values.len()
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return contract_err("occupancy values must lie in [0, 1]");
        }
        Ok(OccupancyGrid { resolution, values })
    }

    pub fn filled(resolution: usize, value: f32) -> Self {
        OccupancyGrid {
            resolution,
            values: vec![value.clamp(0.0, 1.0); resolution.pow(3)],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.index(i, j, k)]
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Point {
        let r = self.resolution as f64;
        [(i as f64 + 0.5) / r, (j as f64 + 0.5) / r, (k as f64 + 0.5) / r]
    }

    /// Value of the cell containing `p`, with points outside the cube clamped.
    pub fn lookup(&self, p: Point) -> f32 {
        let r = self.resolution;
        let idx = |x: f64| ((x * r as f64).floor().max(0.0) as usize).min(r - 1);
        self.get(idx(p[0]), idx(p[1]), idx(p[2]))
    }

    pub fn occupied_count(&self, threshold: f32) -> usize {
        self.values.iter().filter(|&&v| v >= threshold).count()
    }
}

/// One oracle query per cell centre.
pub fn rasterize_occupancy(shape: &ImplicitShape, resolution: usize) -> OccupancyGrid {
    rasterize_coverage(shape, resolution, 1)
}

/// Fraction of `s³` regularly spaced sub-samples inside each cell. With
/// `s = 1` this is the cell-centre oracle.
pub fn rasterize_coverage(shape: &ImplicitShape, resolution: usize, supersample: usize) -> OccupancyGrid {
    let r = resolution;
    let s = supersample.max(1);
    let inv = 1.0 / (r * s) as f64;
    let norm = 1.0 / (s * s * s) as f32;
    let values: Vec<f32> = (0..r * r)
        .into_par_iter()
        .flat_map_iter(|ij| {
            let (i, j) = (ij / r, ij % r);
            (0..r).map(move |k| {
                let mut hits = 0usize;
                for a in 0..s {
                    for b in 0..s {
                        for c in 0..s {
                            let p = [
                                ((i * s + a) as f64 + 0.5) * inv,
                                ((j * s + b) as f64 + 0.5) * inv,
                                ((k * s + c) as f64 + 0.5) * inv,
                            ];
                            hits += shape.occupancy(p) as usize;
                        }
                    }
                }
                hits as f32 * norm
            })
        })
        .collect();
    OccupancyGrid { resolution, values }
}

/// `|A ∩ B| / |A ∪ B|` over cells at or above `threshold`; 1 when both are empty.
pub fn volumetric_iou(a: &OccupancyGrid, b: &OccupancyGrid, threshold: f32) -> Result<f64> {
    if a.resolution != b.resolution {
        return dim_err(format!(
            "IoU needs equal resolutions, got {} and {}",
            a.resolution, b.resolution
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x >= threshold, y >= threshold);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
