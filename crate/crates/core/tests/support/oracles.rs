//! Brute-force reference implementations of the shape metrics, written
//! without sharing code with the library.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type P = [f64; 3];

pub fn random_set(n: usize, seed: u64, offset: f64) -> Vec<P> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [offset + r.random::<f64>(), r.random::<f64>(), r.random::<f64>()]).collect()
}

pub fn random_sets(count: usize, n: usize, seed: u64, offset: f64) -> Vec<Vec<P>> {
    (0..count).map(|i| random_set(n, seed * 1000 + i as u64, offset)).collect()
}

fn sq(a: &P, b: &P) -> f64 {
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

pub fn chamfer(x: &[P], y: &[P]) -> f64 {
    let mut fwd = 0.0;
    for a in x {
        let mut all: Vec<f64> = y.iter().map(|b| sq(a, b)).collect();
        all.sort_by(f64::total_cmp);
        fwd += all[0];
    }
    let mut bwd = 0.0;
    for b in y {
        let mut all: Vec<f64> = x.iter().map(|a| sq(a, b)).collect();
        all.sort_by(f64::total_cmp);
        bwd += all[0];
    }
    fwd / x.len() as f64 + bwd / y.len() as f64
}

/// Minimum over all `p!` matchings, by Heap's algorithm.
pub fn emd(x: &[P], y: &[P]) -> f64 {
    let n = x.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |perm: &[usize]| (0..n).map(|i| sq(&x[i], &y[perm[i]]).sqrt()).sum::<f64>();
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

pub fn mmd(g: &[Vec<P>], r: &[Vec<P>], d: fn(&[P], &[P]) -> f64) -> f64 {
    let mut total = 0.0;
    for ref_shape in r {
        let mut best = f64::INFINITY;
        for gen in g {
            let v = d(gen, ref_shape);
            if v < best {
                best = v;
            }
        }
        total += best;
    }
    total / r.len() as f64
}

pub fn cov(g: &[Vec<P>], r: &[Vec<P>], d: fn(&[P], &[P]) -> f64) -> f64 {
    let mut matched = std::collections::BTreeSet::new();
    for gen in g {
        let ds: Vec<f64> = r.iter().map(|x| d(gen, x)).collect();
        let min = ds.iter().copied().fold(f64::INFINITY, f64::min);
        matched.insert(ds.iter().position(|&v| v == min).unwrap());
    }
    matched.len() as f64 / r.len() as f64
}

fn labelled<'a>(g: &'a [Vec<P>], r: &'a [Vec<P>]) -> Vec<(&'a [P], bool)> {
    g.iter().map(|s| (s.as_slice(), true)).chain(r.iter().map(|s| (s.as_slice(), false))).collect()
}

pub fn one_nna(g: &[Vec<P>], r: &[Vec<P>], d: fn(&[P], &[P]) -> f64) -> f64 {
    let all = labelled(g, r);
    let mut right = 0;
    for (s, (shape, label)) in all.iter().enumerate() {
        let others: Vec<(f64, bool)> = all
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != s)
            .map(|(_, (o, l))| (d(shape, o), *l))
            .collect();
        let min = others.iter().map(|o| o.0).fold(f64::INFINITY, f64::min);
        let tie_with_other = others.iter().any(|&(v, l)| v == min && l != *label);
        if !tie_with_other {
            right += 1;
        }
    }
    right as f64 / all.len() as f64
}

/// Returns `(cross edges, expected cross edges)` of the directed k-NN graph.
pub fn knn_cross(g: &[Vec<P>], r: &[Vec<P>], d: fn(&[P], &[P]) -> f64, k: usize) -> (usize, f64) {
    let all = labelled(g, r);
    let n = all.len();
    let mut cross = 0;
    for s in 0..n {
        let mut remaining: Vec<usize> = (0..n).filter(|&t| t != s).collect();
        for _ in 0..k {
            // selection of the nearest remaining, lowest index on ties
            let mut pick = 0;
            for c in 1..remaining.len() {
                let (a, b) = (d(all[s].0, all[remaining[c]].0), d(all[s].0, all[remaining[pick]].0));
                if a < b {
                    pick = c;
                }
            }
            let t = remaining.remove(pick);
            if all[t].1 != all[s].1 {
                cross += 1;
            }
        }
    }
    let mut ordered_cross = 0usize;
    for u in 0..n {
        for v in 0..n {
            if u != v && all[u].1 != all[v].1 {
                ordered_cross += 1;
            }
        }
    }
    let p_cross = ordered_cross as f64 / (n * (n - 1)) as f64;
    (cross, (n * k) as f64 * p_cross)
}

pub fn ecd(g: &[Vec<P>], r: &[Vec<P>], d: fn(&[P], &[P]) -> f64, k: usize) -> f64 {
    let (c, e) = knn_cross(g, r, d, k);
    (c as f64 - e).abs()
}

pub fn tmd(shapes: &[Vec<P>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..shapes.len() {
        for j in 0..shapes.len() {
            if i < j {
                sum += chamfer(&shapes[i], &shapes[j]);
                count += 1;
            }
        }
    }
    sum / count as f64
}
