//! k-means with k-means++ seeding, and normalized mutual information.

use std::collections::BTreeMap;

use crate::error::{IdmlError, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centers<V: AsRef<[f64]>>(points: &[V], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.below(n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.unit() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if r < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd<V: AsRef<[f64]>>(points: &[V], mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeansResult {
    let dim = centers[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p.as_ref(), &centers).0).collect();
    for _ in 0..max_iter {
        let k = centers.len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p.as_ref(), &centers).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p.as_ref(), &centers[a]))
        .sum();
    KMeansResult {
        assignments,
        centers,
        inertia,
    }
}

/// Best of `restarts` Lloyd runs (lowest inertia), each seeded with
/// k-means++.
pub fn kmeans<V: AsRef<[f64]>>(
    points: &[V],
    k: usize,
    restarts: usize,
    max_iter: usize,
    rng: &mut Rng,
) -> Result<KMeansResult> {
    if k == 0 || k > points.len() {
        return Err(IdmlError::param(format!("k-means needs 1 <= k <= N, got k = {k}, N = {}", points.len())));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(IdmlError::shape("k-means points differ in dimension"));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, seed_centers(points, k, rng), max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(L; C) / (H(L) + H(C))`, defined as 1 when both partitions are a
/// single block.
pub fn nmi(labels: &[u32], clusters: &[usize]) -> Result<f64> {
    if labels.len() != clusters.len() {
        return Err(IdmlError::shape(format!("{} labels for {} cluster ids", labels.len(), clusters.len())));
    }
    if labels.is_empty() {
        return Err(IdmlError::param("nmi of an empty labelling"));
    }
    let n = labels.len() as f64;
    let mut joint: BTreeMap<(u32, usize), usize> = BTreeMap::new();
    let mut by_label: BTreeMap<u32, usize> = BTreeMap::new();
    let mut by_cluster: BTreeMap<usize, usize> = BTreeMap::new();
    for (&l, &c) in labels.iter().zip(clusters) {
        *joint.entry((l, c)).or_default() += 1;
        *by_label.entry(l).or_default() += 1;
        *by_cluster.entry(c).or_default() += 1;
    }
    let hl = entropy(by_label.values().copied(), n);
    let hc = entropy(by_cluster.values().copied(), n);
    if hl + hc == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(l, c), &nij)| {
            let nij = nij as f64;
            let (a, b) = (by_label[&l] as f64, by_cluster[&c] as f64);
            nij / n * (n * nij / (a * b)).ln()
        })
        .sum();
    Ok((2.0 * mi / (hl + hc)).clamp(0.0, 1.0))
}
