//! Uncertainty levels and the correlation between the semantic and
//! uncertainty spaces, measured through relative embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{IdmlError, Result};
use crate::metric::cosine_similarity;
use crate::types::{norm, EmbeddingPair};

use super::retrieval::{euclidean_table, ranking};

/// `|u|`.
pub fn uncertainty_level(p: &EmbeddingPair) -> f64 {
    norm(&p.uncertainty)
}

/// Cosine similarity of `e` to each anchor.
pub fn relative_embedding<V: AsRef<[f64]>>(e: &[f64], anchors: &[V]) -> Result<Vec<f64>> {
    if anchors.is_empty() {
        return Err(IdmlError::param("relative embedding needs at least one anchor"));
    }
    anchors
        .iter()
        .map(|a| {
            let a = a.as_ref();
            if a.iter().all(|x| *x == 0.0) {
                return Err(IdmlError::Degenerate("zero anchor vector".into()));
            }
            if e.iter().all(|x| *x == 0.0) {
                return Ok(0.0);
            }
            cosine_similarity(e, a, 0.0)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrStats {
    pub jaccard: f64,
    pub mrr: f64,
    pub cosine: f64,
}

/// Agreement between two relative spaces over the same samples: mean
/// Jaccard overlap of the `knn_k` nearest neighbours, mean reciprocal rank
/// in the second space of each sample's nearest neighbour in the first, and
/// mean cosine between a sample's two relative vectors.
pub fn correlation_stats(rel_s: &[Vec<f64>], rel_u: &[Vec<f64>], knn_k: usize) -> Result<CorrStats> {
    let n = rel_s.len();
    if rel_u.len() != n {
        return Err(IdmlError::shape(format!("{n} semantic vs {} uncertainty rows", rel_u.len())));
    }
    if knn_k == 0 || knn_k >= n {
        return Err(IdmlError::param(format!("knn_k must satisfy 1 <= k < N = {n}, got {knn_k}")));
    }
    let ts = euclidean_table(rel_s);
    let tu = euclidean_table(rel_u);
    let (mut jaccard, mut mrr, mut cosine) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let rs = ranking(&ts, i);
        let ru = ranking(&tu, i);
        let a = &rs[..knn_k];
        let b = &ru[..knn_k];
        let inter = a.iter().filter(|x| b.contains(x)).count();
        jaccard += inter as f64 / (2 * knn_k - inter) as f64;
        let nn = rs[0];
        let rank = ru.iter().position(|&j| j == nn).expect("neighbour present") + 1;
        mrr += 1.0 / rank as f64;
        let (x, y) = (&rel_s[i], &rel_u[i]);
        let denom = norm(x) * norm(y);
        if denom > 0.0 {
            cosine += crate::types::dot(x, y) / denom;
        }
    }
    let n = n as f64;
    Ok(CorrStats {
        jaccard: jaccard / n,
        mrr: mrr / n,
        cosine: cosine / n,
    })
}
