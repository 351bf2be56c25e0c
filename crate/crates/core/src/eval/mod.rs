//! Retrieval, clustering and uncertainty evaluation of a trained encoder.

pub mod cluster;
pub mod diagnostics;
pub mod retrieval;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augment::{mix_batch, AugmentConfig};
use crate::error::{IdmlError, Result};
use crate::metric::{BetaForm, Metric};
use crate::model::Model;
use crate::rng::Rng;
use crate::types::{diff_norm, norm, sum_norm, EmbeddingPair, LabelSet, MetricParams, Sample};

pub use cluster::{kmeans, nmi, KMeansResult};
pub use diagnostics::{correlation_stats, relative_embedding, uncertainty_level, CorrStats};
pub use retrieval::{
    euclidean_table, query_rank_stats, r_precision_and_map_at_r, rank_stats_from_table, ranking, recall_at_k,
    recall_at_k_from_table, RankStats,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Metric used to rank test samples. Euclidean ignores `u`.
    pub test_metric: Metric,
    pub metric_params: MetricParams,
    /// Scale semantic vectors to unit length before ranking and clustering.
    pub normalize_semantic: bool,
    pub knn_k: usize,
    pub n_anchors: usize,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    /// Mixed probes synthesized from the test split, as a fraction of its
    /// size, for the mixed-versus-clean uncertainty comparison.
    pub mixed_fraction: f64,
    pub mix_lambda_dist: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![1, 2, 4, 8],
            test_metric: Metric::Euclidean,
            metric_params: MetricParams::default(),
            normalize_semantic: false,
            knn_k: 10,
            n_anchors: 100,
            kmeans_restarts: 10,
            kmeans_iters: 100,
            mixed_fraction: 0.5,
            mix_lambda_dist: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_k: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub r_precision: f64,
    pub map_at_r: f64,
    /// Queries left out of RP and MAP@R for lack of a same-label partner.
    pub rank_queries_skipped: usize,
    pub mean_uncert_clean: f64,
    pub mean_uncert_mixed: Option<f64>,
    pub corr: Option<CorrStats>,
    pub test_metric: Metric,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Column names of [`EvalReport::csv_row`] for the given recall cutoffs.
    pub fn csv_header(ks: &[usize]) -> String {
        let mut h = String::new();
        for k in ks {
            let _ = write!(h, "recall_at_{k},");
        }
        h.push_str(
            "nmi,r_precision,map_at_r,rank_queries_skipped,mean_uncert_clean,mean_uncert_mixed,\
             corr_jaccard,corr_mrr,corr_cosine,test_metric,n_samples",
        );
        h
    }

    /// One CSV row; missing values are empty fields.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut r = String::new();
        for v in self.recall_at_k.values() {
            let _ = write!(r, "{v},");
        }
        let _ = write!(
            r,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.nmi,
            self.r_precision,
            self.map_at_r,
            self.rank_queries_skipped,
            self.mean_uncert_clean,
            opt(self.mean_uncert_mixed),
            opt(self.corr.map(|c| c.jaccard)),
            opt(self.corr.map(|c| c.mrr)),
            opt(self.corr.map(|c| c.cosine)),
            self.test_metric,
            self.n_samples
        );
        r
    }
}

/// One line of the per-sample uncertainty table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub id: String,
    pub label: String,
    pub is_mixed: bool,
    pub u_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub uncertainty: Vec<UncertaintyRow>,
}

pub fn uncertainty_csv(rows: &[UncertaintyRow]) -> String {
    let mut out = String::from("id,label,is_mixed,u_norm\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.id, r.label, r.is_mixed as u8, r.u_norm);
    }
    out
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

/// Pairwise test-time distances between embeddings under `metric`.
pub fn distance_table(
    embeddings: &[EmbeddingPair],
    metric: Metric,
    mp: &MetricParams,
    normalize_semantic: bool,
) -> Vec<Vec<f64>> {
    let s: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| if normalize_semantic { unit(&e.semantic) } else { e.semantic.to_vec() })
        .collect();
    if metric == Metric::Euclidean {
        return euclidean_table(&s);
    }
    let n = embeddings.len();
    let mut t = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let alpha = diff_norm(&s[i], &s[j]);
            let (ui, uj) = (&embeddings[i].uncertainty, &embeddings[j].uncertainty);
            let beta = match metric.beta_form() {
                BetaForm::SumThenNorm => sum_norm(ui, uj),
                BetaForm::NormThenSum => norm(ui) + norm(uj),
            };
            let d = metric.distance(alpha, beta, mp).value;
            t[i][j] = d;
            t[j][i] = d;
        }
    }
    t
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    v.sum::<f64>() / n as f64
}

/// Full evaluation of `model` on `samples`, which are treated as clean
/// test samples. `ids` name them in the uncertainty table.
pub fn evaluate(
    model: &Model,
    samples: &[Sample],
    ids: &[String],
    opts: &EvalOptions,
    rng: &mut Rng,
) -> Result<Evaluation> {
    if ids.len() != samples.len() {
        return Err(IdmlError::shape(format!("{} ids for {} samples", ids.len(), samples.len())));
    }
    let n = samples.len();
    if n < 2 {
        return Err(IdmlError::param("evaluation needs at least two samples"));
    }
    opts.metric_params.validate()?;
    let features: Vec<_> = samples.iter().map(|s| s.feature.clone()).collect();
    let emb = model.forward_batch(&features)?;
    let labels: Vec<LabelSet> = samples.iter().map(|s| s.labels.clone()).collect();

    let table = distance_table(&emb, opts.test_metric, &opts.metric_params, opts.normalize_semantic);
    let mut recall = BTreeMap::new();
    for &k in &opts.ks {
        recall.insert(k, recall_at_k_from_table(&table, &labels, k)?);
    }
    let rank = rank_stats_from_table(&table, &labels)?;

    let s: Vec<Vec<f64>> = emb
        .iter()
        .map(|e| if opts.normalize_semantic { unit(&e.semantic) } else { e.semantic.to_vec() })
        .collect();
    let primary: Vec<u32> = labels.iter().map(|l| l.primary()).collect();
    let k = primary.iter().collect::<BTreeSet<_>>().len();
    let clusters = kmeans(&s, k, opts.kmeans_restarts, opts.kmeans_iters, rng)?;
    let nmi_value = nmi(&primary, &clusters.assignments)?;

    let mut rows: Vec<UncertaintyRow> = emb
        .iter()
        .zip(ids)
        .zip(&labels)
        .map(|((e, id), l)| UncertaintyRow {
            id: id.clone(),
            label: l.to_string(),
            is_mixed: false,
            u_norm: uncertainty_level(e),
        })
        .collect();
    let mean_clean = mean(rows.iter().map(|r| r.u_norm));

    let mix_cfg = AugmentConfig {
        mix_fraction: opts.mixed_fraction,
        mix_lambda_dist: opts.mix_lambda_dist,
        ..AugmentConfig::none()
    };
    mix_cfg.validate()?;
    let mixed = mix_batch(samples, &mix_cfg, rng)?;
    let mean_mixed = if mixed.is_empty() {
        None
    } else {
        let mixed_feats: Vec<_> = mixed.iter().map(|s| s.feature.clone()).collect();
        let mixed_emb = model.forward_batch(&mixed_feats)?;
        let start = rows.len();
        for (m, (e, s)) in mixed_emb.iter().zip(&mixed).enumerate() {
            rows.push(UncertaintyRow {
                id: format!("mix{m}"),
                label: s.labels.to_string(),
                is_mixed: true,
                u_norm: uncertainty_level(e),
            });
        }
        Some(mean(rows[start..].iter().map(|r| r.u_norm)))
    };

    let corr = correlation(&emb, opts, rng)?;

    Ok(Evaluation {
        report: EvalReport {
            recall_at_k: recall,
            nmi: nmi_value,
            r_precision: rank.r_precision,
            map_at_r: rank.map_at_r,
            rank_queries_skipped: rank.skipped,
            mean_uncert_clean: mean_clean,
            mean_uncert_mixed: mean_mixed,
            corr,
            test_metric: opts.test_metric,
            n_samples: n,
        },
        uncertainty: rows,
    })
}

/// Relative-embedding correlation between the two spaces, with anchors
/// drawn uniformly without replacement. `None` when the sample is too
/// small for `knn_k` or an anchor has a zero vector.
fn correlation(emb: &[EmbeddingPair], opts: &EvalOptions, rng: &mut Rng) -> Result<Option<CorrStats>> {
    let n = emb.len();
    if opts.knn_k == 0 || opts.knn_k >= n || opts.n_anchors == 0 {
        return Ok(None);
    }
    let anchors = rng.choose_distinct(n, opts.n_anchors.min(n));
    let a_s: Vec<&[f64]> = anchors.iter().map(|&i| emb[i].semantic.as_slice()).collect();
    let a_u: Vec<&[f64]> = anchors.iter().map(|&i| emb[i].uncertainty.as_slice()).collect();
    let rel = |pick: &dyn Fn(&EmbeddingPair) -> &[f64], a: &[&[f64]]| -> Result<Vec<Vec<f64>>> {
        emb.iter().map(|e| relative_embedding(pick(e), a)).collect()
    };
    let rel_s = rel(&|e| e.semantic.as_slice(), &a_s);
    let rel_u = rel(&|e| e.uncertainty.as_slice(), &a_u);
    match (rel_s, rel_u) {
        (Ok(s), Ok(u)) => Ok(Some(correlation_stats(&s, &u, opts.knn_k)?)),
        (Err(IdmlError::Degenerate(_)), _) | (_, Err(IdmlError::Degenerate(_))) => Ok(None),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}
