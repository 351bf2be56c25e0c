//! Multi-similarity loss and its pair mining rule.

use crate::error::{IdmlError, Result};
use crate::types::LabelSet;

use super::pairs::{log1p_sum_exp, values, PointGrads, Points};
use super::{LossInput, LossValue, Mining, Objective, PairTerm};

fn ms_mask(sims: &[Vec<f64>], labels: &[LabelSet], eps: f64) -> Vec<Vec<bool>> {
    let n = sims.len();
    let mut mask = vec![vec![false; n]; n];
    for i in 0..n {
        let mut min_pos = f64::INFINITY;
        let mut max_neg = f64::NEG_INFINITY;
        for j in (0..n).filter(|&j| j != i) {
            if labels[i].matches(&labels[j]) {
                min_pos = min_pos.min(sims[i][j]);
            } else {
                max_neg = max_neg.max(sims[i][j]);
            }
        }
        for j in (0..n).filter(|&j| j != i) {
            let c = sims[i][j];
            mask[i][j] = if labels[i].matches(&labels[j]) {
                c < max_neg + eps
            } else {
                c > min_pos - eps
            };
        }
    }
    mask
}

/// Applies the multi-similarity mining rule to a similarity table. A
/// negative survives when it is more similar than the anchor's weakest
/// positive minus `eps`; a positive survives when it is less similar than
/// the anchor's hardest negative plus `eps`. Every other entry, and the
/// diagonal, becomes 0.
pub fn ms_modified_similarity(sims: &[Vec<f64>], labels: &[LabelSet], eps: f64) -> Result<Vec<Vec<f64>>> {
    let n = sims.len();
    if labels.len() != n || sims.iter().any(|r| r.len() != n) {
        return Err(IdmlError::shape(format!(
            "similarity table must be {0} x {0} to match the labels",
            labels.len()
        )));
    }
    let mask = ms_mask(sims, labels, eps);
    Ok(sims
        .iter()
        .zip(mask)
        .map(|(row, keep)| row.iter().zip(keep).map(|(c, k)| if k { *c } else { 0.0 }).collect())
        .collect())
}

pub(super) fn mine(obj: &Objective, input: &LossInput<'_>, pts: &Points<'_>) -> Mining {
    let n = input.embeddings.len();
    let sims = values(&obj.scorer().square_table(pts, n));
    Mining::PairMask(ms_mask(&sims, input.labels, obj.loss_params.ms_eps))
}

pub(super) fn loss(
    obj: &Objective,
    input: &LossInput<'_>,
    pts: &Points<'_>,
    mining: &Mining,
    grads: &mut PointGrads,
) -> Result<LossValue> {
    let n = input.embeddings.len();
    let full;
    let mask = match mining {
        Mining::PairMask(m) => {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return Err(IdmlError::shape("pair mask does not match the batch"));
            }
            m
        }
        Mining::All => {
            full = vec![vec![true; n]; n];
            &full
        }
        other => return Err(IdmlError::param(format!("multi-similarity cannot use mining {other:?}"))),
    };
    if n == 0 {
        return Ok(LossValue::from_terms(Vec::new(), f64::INFINITY));
    }
    let scorer = obj.scorer();
    let table = scorer.square_table(pts, n);
    let lp = &obj.loss_params;
    let (a, b, lambda) = (lp.ms_alpha, lp.ms_beta, lp.ms_lambda);
    let inv_n = 1.0 / n as f64;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for j in (0..n).filter(|&j| j != i && mask[i][j]) {
            if input.labels[i].matches(&input.labels[j]) {
                pos.push(j);
            } else {
                neg.push(j);
            }
        }
        let xp: Vec<f64> = pos.iter().map(|&j| -a * (table[i][j].value() - lambda)).collect();
        let xn: Vec<f64> = neg.iter().map(|&j| b * (table[i][j].value() - lambda)).collect();
        let (lp_pos, wp) = log1p_sum_exp(&xp);
        let (lp_neg, wn) = log1p_sum_exp(&xn);
        for (&j, w) in pos.iter().zip(wp) {
            grads.add_pair(pts, &scorer, i, j, &table[i][j], -w * inv_n);
        }
        for (&j, w) in neg.iter().zip(wn) {
            grads.add_pair(pts, &scorer, i, j, &table[i][j], w * inv_n);
        }
        terms.push(PairTerm {
            i,
            j: None,
            value: (lp_pos / a + lp_neg / b) * inv_n,
        });
    }
    Ok(LossValue::from_terms(terms, f64::INFINITY))
}
