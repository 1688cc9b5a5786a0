//! Lloyd's k-means with furthest-first seeding and restarts.

use rand::Rng;

use crate::error::{Result, SccnError};
use crate::model::{Labeling, Matrix};
use crate::rng::{derive_seed, rng_from, Stream};

pub const DEFAULT_RESTARTS: usize = 50;
const MAX_LLOYD: usize = 300;

// Four independent accumulators so the loop vectorizes.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let t = x[l] - y[l];
            acc[l] += t * t;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Clusters the rows of `points` into `k` nonempty groups. Keeps the run
/// with the smallest within-cluster sum of squares; labels are numbered by
/// each cluster's smallest member.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<Labeling> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(SccnError::InvalidArgument(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    if k == 1 {
        return Ok(Labeling::single(n));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    // Restarts whose seeding picks the same set of points repeat an earlier
    // run exactly and cannot improve on it.
    let mut tried = std::collections::HashSet::new();
    for r in 0..restarts.max(1) {
        let mut rng = rng_from(derive_seed(seed, Stream::Clustering, r as u64));
        let first = rng.gen_range(0..n);
        let mut picks = furthest_first(points, k, first);
        picks.sort_unstable();
        if !tried.insert(picks.clone()) {
            continue;
        }
        let centers = picks.iter().map(|&i| points.row(i).to_vec()).collect();
        let (sse, labels) = lloyd(points, k, centers);
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, labels));
        }
    }
    let (_, labels) = best.expect("at least one restart");
    Ok(canonical(&labels, k))
}

fn furthest_first(points: &Matrix, k: usize, first: usize) -> Vec<usize> {
    let n = points.rows();
    let mut centers = vec![first];
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(points.row(i), points.row(first))).collect();
    while centers.len() < k {
        let mut pick = usize::MAX;
        for i in 0..n {
            if !chosen[i] && (pick == usize::MAX || nearest[i] > nearest[pick]) {
                pick = i;
            }
        }
        chosen[pick] = true;
        for i in 0..n {
            nearest[i] = nearest[i].min(dist2(points.row(i), points.row(pick)));
        }
        centers.push(pick);
    }
    centers
}

// Lloyd iterations with Elkan's bounds: a distance is computed only when
// the triangle inequality cannot rule the center out, so assignments match
// the plain algorithm.
fn lloyd(points: &Matrix, k: usize, mut centers: Vec<Vec<f64>>) -> (f64, Vec<usize>) {
    let (n, d) = points.shape();
    let mut labels = vec![0usize; n];
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n * k];
    for i in 0..n {
        let row = points.row(i);
        let lb = &mut lower[i * k..(i + 1) * k];
        for c in 0..k {
            lb[c] = dist2(row, &centers[c]).sqrt();
            if lb[c] < lb[labels[i]] {
                labels[i] = c;
            }
        }
        upper[i] = lb[labels[i]];
    }
    let mut gap = vec![0.0; k * k];
    let mut half_min = vec![0.0; k];
    for iter in 0..MAX_LLOYD {
        let mut changed = iter == 0;
        if iter > 0 {
            for c in 0..k {
                for o in c + 1..k {
                    let g = dist2(&centers[c], &centers[o]).sqrt() / 2.0;
                    gap[c * k + o] = g;
                    gap[o * k + c] = g;
                }
            }
            for c in 0..k {
                half_min[c] = (0..k).filter(|&o| o != c).map(|o| gap[c * k + o]).fold(f64::INFINITY, f64::min);
            }
            for i in 0..n {
                let mut a = labels[i];
                if upper[i] < half_min[a] * (1.0 - SLACK) {
                    continue;
                }
                let row = points.row(i);
                let lb = &mut lower[i * k..(i + 1) * k];
                let mut stale = true;
                for c in 0..k {
                    if c == a {
                        continue;
                    }
                    let bound = lb[c].max(gap[a * k + c]);
                    if upper[i] < bound * (1.0 - SLACK) {
                        continue;
                    }
                    if stale {
                        upper[i] = dist2(row, &centers[a]).sqrt();
                        lb[a] = upper[i];
                        stale = false;
                        if upper[i] < bound * (1.0 - SLACK) {
                            continue;
                        }
                    }
                    let dc = dist2(row, &centers[c]).sqrt();
                    lb[c] = dc;
                    if dc < upper[i] || (dc == upper[i] && c < a) {
                        a = c;
                        upper[i] = dc;
                    }
                }
                if a != labels[i] {
                    labels[i] = a;
                    changed = true;
                }
            }
        }
        if has_empty(&labels, k) {
            let mut dists: Vec<f64> = (0..n).map(|i| dist2(points.row(i), &centers[labels[i]])).collect();
            let before = labels.clone();
            changed |= fill_empty(&mut labels, &mut dists, k);
            for i in 0..n {
                if labels[i] != before[i] {
                    upper[i] = f64::INFINITY;
                    lower[i * k..(i + 1) * k].fill(0.0);
                }
            }
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            sums[labels[i]].iter_mut().zip(points.row(i)).for_each(|(s, v)| *s += v);
        }
        let mut moves = vec![0.0; k];
        for c in 0..k {
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moves[c] = dist2(&next, &centers[c]).sqrt();
            centers[c] = next;
        }
        for i in 0..n {
            upper[i] += moves[labels[i]];
            for (l, m) in lower[i * k..(i + 1) * k].iter_mut().zip(&moves) {
                *l = (*l - m).max(0.0);
            }
        }
        if !changed {
            break;
        }
    }
    let sse = (0..n).map(|i| dist2(points.row(i), &centers[labels[i]])).sum();
    (sse, labels)
}

const SLACK: f64 = 1e-12;

fn has_empty(labels: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    labels.iter().for_each(|&l| seen[l] = true);
    seen.iter().any(|&s| !s)
}

// Moves the point farthest from its center (in a cluster with more than one
// member) into each empty cluster.
fn fill_empty(labels: &mut [usize], dists: &mut [f64], k: usize) -> bool {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut changed = false;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut pick = usize::MAX;
        for i in 0..labels.len() {
            if counts[labels[i]] > 1 && (pick == usize::MAX || dists[i] > dists[pick]) {
                pick = i;
            }
        }
        counts[labels[pick]] -= 1;
        labels[pick] = c;
        dists[pick] = 0.0;
        counts[c] = 1;
        changed = true;
    }
    changed
}

fn canonical(labels: &[usize], k: usize) -> Labeling {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    let relabeled = labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect();
    Labeling::new(relabeled, k).expect("every cluster is nonempty")
}
