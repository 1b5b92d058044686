use rayon::prelude::*;

use super::{chamfer, Distance};
use crate::error::{contract_err, Result};
use crate::geometry::Point;

/// Default neighbour count of the ECD graph.
pub const ECD_K: usize = 5;

/// All distances the set metrics need between a generated set `G` and a
/// reference set `R`, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrices {
    pub distance: Distance,
    /// `|G| × |R|`, row per generated shape.
    pub gen_ref: Vec<Vec<f64>>,
    pub gen_gen: Vec<Vec<f64>>,
    pub ref_ref: Vec<Vec<f64>>,
}

fn pairwise(a: &[Vec<Point>], b: &[Vec<Point>], dist: Distance) -> Result<Vec<Vec<f64>>> {
    let pairs: Vec<(usize, usize)> = (0..a.len()).flat_map(|i| (0..b.len()).map(move |j| (i, j))).collect();
    let flat = pairs.par_iter().map(|&(i, j)| dist.eval(&a[i], &b[j])).collect::<Result<Vec<f64>>>()?;
    Ok(flat.chunks(b.len().max(1)).map(|c| c.to_vec()).take(a.len()).collect())
}

fn self_pairwise(a: &[Vec<Point>], dist: Distance) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let vals = pairs.par_iter().map(|&(i, j)| dist.eval(&a[i], &a[j])).collect::<Result<Vec<f64>>>()?;
    let mut m = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(vals) {
        m[i][j] = v;
        m[j][i] = v;
    }
    Ok(m)
}

impl DistanceMatrices {
    /// Pairs are evaluated in parallel; the result does not depend on the
    /// worker count.
    pub fn compute(generated: &[Vec<Point>], reference: &[Vec<Point>], distance: Distance) -> Result<Self> {
        if generated.is_empty() || reference.is_empty() {
            return contract_err("set metrics need non-empty generated and reference sets");
        }
        Ok(DistanceMatrices {
            distance,
            gen_ref: pairwise(generated, reference, distance)?,
            gen_gen: self_pairwise(generated, distance)?,
            ref_ref: self_pairwise(reference, distance)?,
        })
    }

    pub fn n_generated(&self) -> usize {
        self.gen_ref.len()
    }

    pub fn n_reference(&self) -> usize {
        self.ref_ref.len()
    }

    /// Mean over references of the distance to the closest generated shape.
    pub fn mmd(&self) -> f64 {
        let nr = self.n_reference();
        (0..nr)
            .map(|r| self.gen_ref.iter().map(|row| row[r]).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / nr as f64
    }

    /// Fraction of references that are the nearest reference (lowest index
    /// on ties) of at least one generated shape.
    pub fn cov(&self) -> f64 {
        let nr = self.n_reference();
        let mut hit = vec![false; nr];
        for row in &self.gen_ref {
            let mut best = 0;
            for (r, &d) in row.iter().enumerate() {
                if d < row[best] {
                    best = r;
                }
            }
            hit[best] = true;
        }
        hit.iter().filter(|&&h| h).count() as f64 / nr as f64
    }

    /// Distance between members `a` and `b` of `G ∪ R`, indexed with the
    /// generated shapes first.
    fn joint(&self, a: usize, b: usize) -> f64 {
        let ng = self.n_generated();
        match (a < ng, b < ng) {
            (true, true) => self.gen_gen[a][b],
            (false, false) => self.ref_ref[a - ng][b - ng],
            (true, false) => self.gen_ref[a][b - ng],
            (false, true) => self.gen_ref[b][a - ng],
        }
    }

    /// Leave-one-out 1-NN classification accuracy over `G ∪ R`. A tie
    /// between a same-set and an other-set neighbour counts as a
    /// misclassification.
    pub fn one_nna(&self) -> f64 {
        let ng = self.n_generated();
        let n = ng + self.n_reference();
        let correct = (0..n)
            .filter(|&s| {
                let mut best = f64::INFINITY;
                let mut other_at_best = false;
                for t in (0..n).filter(|&t| t != s) {
                    let d = self.joint(s, t);
                    let other = (t < ng) != (s < ng);
                    if d < best {
                        best = d;
                        other_at_best = other;
                    } else if d == best && other {
                        other_at_best = true;
                    }
                }
                !other_at_best
            })
            .count();
        correct as f64 / n as f64
    }

    /// Cross-set edge counts of the directed `k`-NN graph on `G ∪ R`
    /// (neighbours ordered by distance, then index): `(observed, expected)`
    /// where the expectation is over random assignment of the two labels.
    pub fn cross_edges(&self, k: usize) -> Result<(usize, f64)> {
        let ng = self.n_generated();
        let nr = self.n_reference();
        let n = ng + nr;
        if k == 0 || k >= n {
            return contract_err(format!("ECD needs 1 ≤ k < {n}, got {k}"));
        }
        let mut observed = 0;
        for s in 0..n {
            let mut others: Vec<(f64, usize)> = (0..n).filter(|&t| t != s).map(|t| (self.joint(s, t), t)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            observed += others[..k].iter().filter(|&&(_, t)| (t < ng) != (s < ng)).count();
        }
        let expected = (n * k) as f64 * 2.0 * ng as f64 * nr as f64 / (n as f64 * (n - 1) as f64);
        Ok((observed, expected))
    }

    /// `|E_cross − E_expected|` of the `k`-NN graph.
    pub fn ecd(&self, k: usize) -> Result<f64> {
        let (observed, expected) = self.cross_edges(k)?;
        Ok((observed as f64 - expected).abs())
    }
}

pub fn mmd(generated: &[Vec<Point>], reference: &[Vec<Point>], dist: Distance) -> Result<f64> {
    Ok(DistanceMatrices::compute(generated, reference, dist)?.mmd())
}

pub fn cov(generated: &[Vec<Point>], reference: &[Vec<Point>], dist: Distance) -> Result<f64> {
    Ok(DistanceMatrices::compute(generated, reference, dist)?.cov())
}

pub fn one_nna(generated: &[Vec<Point>], reference: &[Vec<Point>], dist: Distance) -> Result<f64> {
    Ok(DistanceMatrices::compute(generated, reference, dist)?.one_nna())
}

pub fn ecd(generated: &[Vec<Point>], reference: &[Vec<Point>], dist: Distance, k: usize) -> Result<f64> {
    DistanceMatrices::compute(generated, reference, dist)?.ecd(k)
}

/// Mean pairwise Chamfer distance among shapes generated for one condition.
pub fn tmd(shapes: &[Vec<Point>]) -> Result<f64> {
    let n = shapes.len();
    if n < 2 {
        return contract_err("TMD needs at least two shapes");
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let d = pairs.par_iter().map(|&(i, j)| chamfer(&shapes[i], &shapes[j])).collect::<Result<Vec<f64>>>()?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// [`tmd`] averaged over conditions.
pub fn tmd_over_conditions(groups: &[Vec<Vec<Point>>]) -> Result<f64> {
    if groups.is_empty() {
        return contract_err("TMD needs at least one condition");
    }
    let per = groups.iter().map(|g| tmd(g)).collect::<Result<Vec<f64>>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}
