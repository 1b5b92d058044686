use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::geometry::Point;

/// Largest set size solved exactly; larger sets use the auction solver.
pub const EXACT_EMD_LIMIT: usize = 512;

/// Relative duality gap at which the auction solver stops.
pub const AUCTION_GAP: f64 = 0.01;

/// Pairwise shape distance used by the set metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Distance {
    #[serde(rename = "cd")]
    Chamfer,
    #[serde(rename = "emd")]
    Emd,
}

impl Distance {
    pub const ALL: [Distance; 2] = [Distance::Chamfer, Distance::Emd];

    pub fn eval(self, a: &[Point], b: &[Point]) -> Result<f64> {
        match self {
            Distance::Chamfer => chamfer(a, b),
            Distance::Emd => emd(a, b),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Distance::Chamfer => "CD",
            Distance::Emd => "EMD",
        }
    }
}

fn d2(a: &Point, b: &Point) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

fn mean_nearest_sq(from: &[Point], to: &[Point]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| d2(p, q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// Mean squared nearest-neighbour distance from `x` to `y` plus the same
/// from `y` to `x`.
pub fn chamfer(x: &[Point], y: &[Point]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return contract_err("chamfer distance of an empty point set");
    }
    Ok(mean_nearest_sq(x, y) + mean_nearest_sq(y, x))
}

/// Minimum mean Euclidean cost over perfect matchings of two equal-size
/// sets. Exact up to [`EXACT_EMD_LIMIT`] points, otherwise within
/// [`AUCTION_GAP`] of the optimum (see [`emd_auction`]).
pub fn emd(x: &[Point], y: &[Point]) -> Result<f64> {
    if x.len() != y.len() {
        return contract_err(format!("EMD needs equal sizes, got {} and {}", x.len(), y.len()));
    }
    if x.is_empty() {
        return contract_err("EMD of empty point sets");
    }
    if x.len() <= EXACT_EMD_LIMIT {
        Ok(emd_exact(x, y))
    } else {
        Ok(emd_auction(x, y).0)
    }
}

fn cost_matrix(x: &[Point], y: &[Point]) -> Vec<f64> {
    x.iter().flat_map(|p| y.iter().map(move |q| d2(p, q).sqrt())).collect()
}

/// Hungarian algorithm (shortest augmenting paths with potentials), O(n³).
pub fn emd_exact(x: &[Point], y: &[Point]) -> f64 {
    let n = x.len();
    let cost = cost_matrix(x, y);
    let assignment = hungarian(&cost, n);
    assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64
}

/// Row-to-column assignment minimising total cost of an `n × n` matrix.
pub(crate) fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials u (rows), v (columns); p[j] is the row matched to j
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}

/// Auction algorithm with ε-scaling. Returns the mean cost of the final
/// matching and its certified relative gap `(primal − dual) / primal`,
/// which is at most [`AUCTION_GAP`] unless ε reached its floor first.
pub fn emd_auction(x: &[Point], y: &[Point]) -> (f64, f64) {
    let n = x.len();
    let cost = cost_matrix(x, y);
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    if max_cost == 0.0 {
        return (0.0, 0.0);
    }
    let eps_floor = max_cost * 1e-9;
    let mut eps = max_cost / 4.0;
    let mut price = vec![0.0f64; n];
    loop {
        let mut owner: Vec<Option<usize>> = vec![None; n];
        let mut assigned: Vec<usize> = vec![usize::MAX; n];
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            // bidder i maximises the value −c_ij − p_j
            let row = &cost[i * n..(i + 1) * n];
            let (mut best, mut v1, mut v2) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, (&c, &pj)) in row.iter().zip(&price).enumerate() {
                let val = -c - pj;
                if val > v1 {
                    v2 = v1;
                    v1 = val;
                    best = j;
                } else if val > v2 {
                    v2 = val;
                }
            }
            let raise = if v2.is_finite() { v1 - v2 + eps } else { eps };
            price[best] += raise;
            if let Some(k) = owner[best] {
                assigned[k] = usize::MAX;
                queue.push(k);
            }
            owner[best] = Some(i);
            assigned[i] = best;
        }
        let primal: f64 = assigned.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        // weak duality: optimum ≥ −(Σ_j p_j + Σ_i max_j(−c_ij − p_j))
        let dual_max: f64 = price.iter().sum::<f64>()
            + (0..n)
                .map(|i| {
                    cost[i * n..(i + 1) * n]
                        .iter()
                        .zip(&price)
                        .map(|(&c, &pj)| -c - pj)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum::<f64>();
        let lower = (-dual_max).max(0.0);
        let gap = if primal > 0.0 { (primal - lower) / primal } else { 0.0 };
        if gap <= AUCTION_GAP || eps <= eps_floor {
            return (primal / n as f64, gap);
        }
        eps /= 5.0;
    }
}
