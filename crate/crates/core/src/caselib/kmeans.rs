//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centers: Vec<Vec<f64>>,
    /// Cluster index of each point.
    pub assignments: Vec<usize>,
    /// Final within-cluster sum of squared distances.
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Objective after each assignment step.
    pub objective_history: Vec<f64>,
}

impl ClusterModel {
    /// Index and squared distance of the nearest center (lowest index on ties).
    pub fn nearest(&self, point: &[f64]) -> (usize, f64) {
        nearest_center(point, &self.centers)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Clusters `points` into `k` groups. Deterministic for a given seed.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    let n = points.len();
    if k == 0 {
        return Err(Error::invalid("k", "number of clusters must be >= 1"));
    }
    if n < k {
        return Err(Error::insufficient("k-means", k, n));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points", "all points must share one dimension"));
    }

    let mut centers = plus_plus_init(points, k, seed);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let (next, mut dist) = assign(points, &centers);
        let changed = next != assignments;
        assignments = next;
        reseed_empty(points, &mut centers, &mut assignments, &mut dist, k);
        history.push(dist.iter().sum());
        if !changed {
            break;
        }
        let shift = update_centers(points, &mut centers, &assignments, k);
        if shift < tol {
            // one more assignment pass decides whether this is a fixed point
            let (check, _) = assign(points, &centers);
            if check == assignments {
                break;
            }
        }
    }

    // Leave the model in a state where centers are exact member means.
    let (final_assign, mut dist) = assign(points, &centers);
    assignments = final_assign;
    reseed_empty(points, &mut centers, &mut assignments, &mut dist, k);
    update_centers(points, &mut centers, &assignments, k);
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &j)| squared_distance(p, &centers[j]))
        .sum();

    Ok(ClusterModel {
        k,
        centers,
        assignments,
        inertia,
        seed,
        iterations,
        objective_history: history,
    })
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points
        .par_iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();

    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            chosen.iter().position(|c| !c).expect("n >= k")
        };
        chosen[pick] = true;
        let center = points[pick].clone();
        d2.par_iter_mut().zip(points.par_iter()).for_each(|(d, p)| {
            *d = d.min(squared_distance(p, &center));
        });
        centers.push(center);
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .par_iter()
        .map(|p| nearest_center(p, centers))
        .unzip()
}

/// Moves the farthest point of a multi-member cluster into each empty one.
fn reseed_empty(
    points: &[Vec<f64>],
    centers: &mut [Vec<f64>],
    assignments: &mut [usize],
    dist: &mut [f64],
    k: usize,
) {
    let mut counts = vec![0usize; k];
    for &j in assignments.iter() {
        counts[j] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..points.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("n >= k guarantees a multi-member cluster");
        counts[assignments[donor]] -= 1;
        counts[empty] = 1;
        assignments[donor] = empty;
        dist[donor] = 0.0;
        centers[empty] = points[donor].clone();
    }
}

/// Recomputes centers as member means; returns the largest center shift.
fn update_centers(
    points: &[Vec<f64>],
    centers: &mut [Vec<f64>],
    assignments: &[usize],
    k: usize,
) -> f64 {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &j) in points.iter().zip(assignments) {
        counts[j] += 1;
        for (s, v) in sums[j].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut shift = 0.0f64;
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let mean: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        shift = shift.max(squared_distance(&mean, &centers[j]).sqrt());
        centers[j] = mean;
    }
    shift
}
