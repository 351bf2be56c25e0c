//! Rank-based retrieval metrics over a precomputed distance table.

use serde::{Deserialize, Serialize};

use crate::error::{IdmlError, Result};
use crate::types::{diff_norm, LabelSet};

/// Pairwise Euclidean distances.
pub fn euclidean_table<V: AsRef<[f64]>>(points: &[V]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut t = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = diff_norm(points[i].as_ref(), points[j].as_ref());
            t[i][j] = d;
            t[j][i] = d;
        }
    }
    t
}

fn check_table(dists: &[Vec<f64>], labels: &[LabelSet]) -> Result<()> {
    let n = labels.len();
    if dists.len() != n || dists.iter().any(|r| r.len() != n) {
        return Err(IdmlError::shape(format!("distance table must be {n} x {n}")));
    }
    Ok(())
}

/// Every other sample ordered by `(distance, index)`.
pub fn ranking(dists: &[Vec<f64>], query: usize) -> Vec<usize> {
    let row = &dists[query];
    let mut others: Vec<usize> = (0..row.len()).filter(|&j| j != query).collect();
    others.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    others
}

/// Fraction of queries with a matching sample among their `k` nearest
/// others.
pub fn recall_at_k<V: AsRef<[f64]>>(embeddings: &[V], labels: &[LabelSet], k: usize) -> Result<f64> {
    recall_at_k_from_table(&euclidean_table(embeddings), labels, k)
}

pub fn recall_at_k_from_table(dists: &[Vec<f64>], labels: &[LabelSet], k: usize) -> Result<f64> {
    check_table(dists, labels)?;
    let n = labels.len();
    if k == 0 || k >= n {
        return Err(IdmlError::param(format!("recall@{k} needs 1 <= k < N = {n}")));
    }
    let hits = (0..n)
        .filter(|&q| {
            ranking(dists, q)
                .iter()
                .take(k)
                .any(|&j| labels[q].matches(&labels[j]))
        })
        .count();
    Ok(hits as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub r_precision: f64,
    pub map_at_r: f64,
    /// Queries that entered the averages.
    pub queries: usize,
    /// Queries skipped because no other sample shares their label.
    pub skipped: usize,
}

/// R-precision and MAP@R, with `R` the number of other samples sharing the
/// query's label.
pub fn r_precision_and_map_at_r<V: AsRef<[f64]>>(embeddings: &[V], labels: &[LabelSet]) -> Result<RankStats> {
    rank_stats_from_table(&euclidean_table(embeddings), labels)
}

/// R-precision and average precision at R for one query, or `None` when no
/// other sample shares its label.
pub fn query_rank_stats(dists: &[Vec<f64>], labels: &[LabelSet], q: usize) -> Option<(f64, f64)> {
    let r = (0..labels.len())
        .filter(|&j| j != q && labels[q].matches(&labels[j]))
        .count();
    if r == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &j) in ranking(dists, q).iter().take(r).enumerate() {
        if labels[q].matches(&labels[j]) {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Some((hits as f64 / r as f64, ap / r as f64))
}

pub fn rank_stats_from_table(dists: &[Vec<f64>], labels: &[LabelSet]) -> Result<RankStats> {
    check_table(dists, labels)?;
    let (mut rp_sum, mut map_sum) = (0.0, 0.0);
    let (mut queries, mut skipped) = (0, 0);
    for q in 0..labels.len() {
        match query_rank_stats(dists, labels, q) {
            Some((rp, ap)) => {
                rp_sum += rp;
                map_sum += ap;
                queries += 1;
            }
            None => skipped += 1,
        }
    }
    if queries == 0 {
        return Err(IdmlError::Degenerate("no query has a same-label partner".into()));
    }
    Ok(RankStats {
        r_precision: rp_sum / queries as f64,
        map_at_r: map_sum / queries as f64,
        queries,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singles(v: &[u32]) -> Vec<LabelSet> {
        v.iter().map(|&l| LabelSet::single(l)).collect()
    }

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn recall_examples() {
        let p = pts(&[0.0, 1.0, 2.0, 3.0]);
        let one = singles(&[5, 5, 5, 5]);
        for k in 1..4 {
            assert_eq!(recall_at_k(&p, &one, k).unwrap(), 1.0);
        }
        let p = pts(&[0.0, 0.1, 10.0, 10.1]);
        assert_eq!(recall_at_k(&p, &singles(&[0, 0, 1, 1]), 1).unwrap(), 1.0);
        // query 1 (at 1.0) is nearest to 2 (at 1.5, other class)
        let p = pts(&[0.0, 1.0, 1.5, 5.0]);
        let labels = singles(&[0, 0, 1, 1]);
        assert_eq!(recall_at_k(&p, &labels, 1).unwrap(), 0.5);
    }

    #[test]
    fn recall_rejects_bad_k() {
        let p = pts(&[0.0, 1.0]);
        let l = singles(&[0, 0]);
        assert!(matches!(recall_at_k(&p, &l, 2), Err(IdmlError::Param(_))));
        assert!(recall_at_k(&p, &l, 0).is_err());
    }

    #[test]
    fn rank_examples() {
        let p = pts(&[0.0, 0.1, 0.2, 5.0, 5.1, 5.2]);
        let s = r_precision_and_map_at_r(&p, &singles(&[0, 0, 0, 1, 1, 1])).unwrap();
        assert_eq!((s.r_precision, s.map_at_r), (1.0, 1.0));

        // query 0 has R = 2; its ranking starts (pos, neg)
        let dists = vec![
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 0.0, 9.0, 9.0],
            vec![2.0, 9.0, 0.0, 9.0],
            vec![3.0, 9.0, 9.0, 0.0],
        ];
        let labels = singles(&[0, 0, 1, 0]);
        assert_eq!(ranking(&dists, 0), vec![1, 2, 3]);
        assert_eq!(query_rank_stats(&dists, &labels, 0), Some((0.5, 0.5)));

        // ranking (neg, pos)
        let dists = vec![
            vec![0.0, 2.0, 1.0, 3.0],
            vec![2.0, 0.0, 9.0, 9.0],
            vec![1.0, 9.0, 0.0, 9.0],
            vec![3.0, 9.0, 9.0, 0.0],
        ];
        assert_eq!(ranking(&dists, 0), vec![2, 1, 3]);
        assert_eq!(query_rank_stats(&dists, &labels, 0), Some((0.5, 0.25)));
    }

    #[test]
    fn singleton_class_is_skipped() {
        let p = pts(&[0.0, 0.1, 7.0]);
        let s = r_precision_and_map_at_r(&p, &singles(&[0, 0, 1])).unwrap();
        assert_eq!(s.skipped, 1);
        assert_eq!(s.queries, 2);
        assert!(r_precision_and_map_at_r(&p, &singles(&[0, 1, 2])).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        let dists = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        assert_eq!(ranking(&dists, 0), vec![1, 2]);
        assert_eq!(ranking(&dists, 2), vec![0, 1]);
    }
}
