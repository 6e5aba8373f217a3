//! Lloyd's algorithm with k-means++ seeding over an embedding table.
//! Stops when at most 1% of points changed assignment or after 50 iterations.

use super::{Clustering, Flavor};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

pub const MAX_ITERATIONS: usize = 50;
pub const STOP_CHANGED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansIteration {
    /// Sum of squared distances to assigned centroids at the end of the
    /// iteration.
    pub inertia: f64,
    /// Points whose assignment changed in this iteration.
    pub changed: usize,
    pub changed_fraction: f64,
    /// Empty clusters refilled during this iteration.
    pub reseeded: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KmeansLog {
    pub iterations: Vec<KmeansIteration>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared euclidean distance; ties pick the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn seed_plus_plus(table: &EmbeddingTable, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = table.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..n);
    centroids.push(table.vector(first).to_vec());
    let mut dist: Vec<f64> = (0..n)
        .map(|i| squared_distance(table.vector(i), &centroids[0]))
        .collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let r = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if r < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining points coincide with a centroid: take the first
            // unchosen index so seeding stays deterministic.
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[next] = true;
        centroids.push(table.vector(next).to_vec());
        let newest = centroids.last().unwrap();
        for (i, d) in dist.iter_mut().enumerate() {
            let nd = squared_distance(table.vector(i), newest);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

/// Refills empty clusters: each takes the point farthest from its assigned
/// centroid, considering only points whose cluster keeps at least two
/// members (ties pick the lowest point index). Returns how many were refilled.
fn reseed_empty(
    table: &EmbeddingTable,
    assignment: &mut [usize],
    centroids: &mut [Vec<f64>],
    sizes: &mut [usize],
) -> usize {
    let mut reseeded = 0;
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let mut farthest: Option<(usize, f64)> = None;
        for i in 0..table.len() {
            if sizes[assignment[i]] < 2 {
                continue;
            }
            let d = squared_distance(table.vector(i), &centroids[assignment[i]]);
            let better = match farthest {
                None => true,
                Some((_, best)) => d > best,
            };
            if better {
                farthest = Some((i, d));
            }
        }
        let (point, _) = farthest.expect("k <= n guarantees a donor cluster with 2+ members");
        let old = assignment[point];
        assignment[point] = empty;
        sizes[old] -= 1;
        sizes[empty] = 1;
        recompute_centroid(table, assignment, old, &mut centroids[old]);
        centroids[empty].copy_from_slice(table.vector(point));
        reseeded += 1;
    }
    reseeded
}

fn recompute_centroid(table: &EmbeddingTable, assignment: &[usize], cluster: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut count = 0usize;
    for (i, &assigned) in assignment.iter().enumerate() {
        if assigned == cluster {
            for (o, v) in out.iter_mut().zip(table.vector(i)) {
                *o += v;
            }
            count += 1;
        }
    }
    if count > 0 {
        out.iter_mut().for_each(|v| *v /= count as f64);
    }
}

/// Clusters the table's tokens into `k` groups. Deterministic for a fixed
/// seed; the per-point distance computations run in parallel.
pub fn kmeans(
    table: &EmbeddingTable,
    flavor: Flavor,
    k: u32,
    seed: u64,
) -> Result<(Clustering, KmeansLog)> {
    let n = table.len();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if (k as usize) > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} available points")));
    }
    let kk = k as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(table, kk, &mut rng);
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut log = KmeansLog::default();

    for _ in 0..MAX_ITERATIONS {
        let next: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(table.vector(i), &centroids))
            .collect();
        let changed = next
            .iter()
            .enumerate()
            .filter(|(i, (c, _))| assignment[*i] != *c)
            .count();
        let changed_fraction = changed as f64 / n as f64;
        for (slot, (c, _)) in assignment.iter_mut().zip(&next) {
            *slot = *c;
        }

        if changed_fraction <= STOP_CHANGED_FRACTION {
            let inertia = next.iter().map(|(_, d)| d).sum();
            log.iterations.push(KmeansIteration { inertia, changed, changed_fraction, reseeded: 0 });
            break;
        }

        let mut sizes = vec![0usize; kk];
        for &c in &assignment {
            sizes[c] += 1;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            recompute_centroid(table, &assignment, c, centroid);
        }
        let reseeded = reseed_empty(table, &mut assignment, &mut centroids, &mut sizes);
        let inertia = (0..n)
            .map(|i| squared_distance(table.vector(i), &centroids[assignment[i]]))
            .sum();
        log.iterations.push(KmeansIteration { inertia, changed, changed_fraction, reseeded });
    }

    let mut map = BTreeMap::new();
    for (i, &c) in assignment.iter().enumerate() {
        map.insert(table.token(i).to_string(), c as u32);
    }
    let clustering = Clustering::from_assignment(flavor, k, map)?;
    Ok((clustering, log))
}
