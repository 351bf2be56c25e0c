//! Contrastive, margin (with distance-weighted sampling) and semi-hard
//! triplet losses.

use crate::error::{IdmlError, Result};
use crate::rng::Rng;
use crate::sampling::{draw_dw_unchecked, semi_hard_unchecked, TripletIndex};

use super::pairs::{values, PointGrads, Points};
use super::{LossInput, LossValue, Mining, Objective, PairTerm};

/// `sum_pos D + sum_neg [margin - D]_+` over all pairs `i < j`.
pub(super) fn contrastive(
    obj: &Objective,
    input: &LossInput<'_>,
    pts: &Points<'_>,
    grads: &mut PointGrads,
) -> Result<LossValue> {
    let n = input.embeddings.len();
    if n < 2 {
        return Err(IdmlError::param("contrastive loss needs at least one pair"));
    }
    let scorer = obj.scorer();
    let margin = obj.loss_params.contrastive_margin;
    let mut terms = Vec::with_capacity(n * (n - 1) / 2);
    let mut gap = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let ev = scorer.eval(pts, i, j);
            let d = ev.value();
            if input.labels[i].matches(&input.labels[j]) {
                terms.push(PairTerm { i, j: Some(j), value: d });
                grads.add_pair(pts, &scorer, i, j, &ev, 1.0);
            } else {
                let h = margin - d;
                gap = gap.min(h.abs());
                if h > 0.0 {
                    terms.push(PairTerm { i, j: Some(j), value: h });
                    grads.add_pair(pts, &scorer, i, j, &ev, -1.0);
                } else {
                    terms.push(PairTerm { i, j: Some(j), value: 0.0 });
                }
            }
        }
    }
    Ok(LossValue::from_terms(terms, gap))
}

fn positive_pairs(input: &LossInput<'_>) -> Vec<(usize, usize)> {
    let n = input.labels.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if input.labels[i].matches(&input.labels[j]) {
                out.push((i, j));
            }
        }
    }
    out
}

/// One distance-weighted negative per positive pair, anchored at the pair's
/// first sample, using the selected metric on unit semantic vectors.
pub(super) fn mine_dw(obj: &Objective, input: &LossInput<'_>, pts: &Points<'_>, rng: &mut Rng) -> Result<Mining> {
    let n = input.embeddings.len();
    let table = values(&obj.scorer().square_table(pts, n));
    let n_dim = input.embeddings.first().map_or(1, |e| e.semantic.dim());
    let phi = obj.loss_params.phi;
    let mut picks = Vec::new();
    for (a, _) in positive_pairs(input) {
        if let Some(neg) = draw_dw_unchecked(a, &table, input.labels, n_dim, phi, rng) {
            picks.push((a, neg));
        }
    }
    Ok(Mining::DwNegatives(picks))
}

/// `sum_pos [D - xi]_+ + sum_sampled [omega - D]_+`.
pub(super) fn margin_dw(
    obj: &Objective,
    input: &LossInput<'_>,
    pts: &Points<'_>,
    mining: &Mining,
    grads: &mut PointGrads,
) -> Result<LossValue> {
    let negatives = match mining {
        Mining::DwNegatives(v) => v.as_slice(),
        Mining::All => &[],
        other => return Err(IdmlError::param(format!("margin loss cannot use mining {other:?}"))),
    };
    let positives = positive_pairs(input);
    if positives.is_empty() {
        return Err(IdmlError::param("margin loss needs at least one positive pair"));
    }
    let scorer = obj.scorer();
    let (xi, omega) = (obj.loss_params.margin_xi, obj.loss_params.margin_omega);
    let mut terms = Vec::new();
    let mut gap = f64::INFINITY;
    for (i, j) in positives {
        let ev = scorer.eval(pts, i, j);
        let h = ev.value() - xi;
        gap = gap.min(h.abs());
        let value = if h > 0.0 {
            grads.add_pair(pts, &scorer, i, j, &ev, 1.0);
            h
        } else {
            0.0
        };
        terms.push(PairTerm { i, j: Some(j), value });
    }
    for &(a, neg) in negatives {
        if input.labels[a].matches(&input.labels[neg]) {
            return Err(IdmlError::param(format!("mined pair ({a}, {neg}) is not a negative")));
        }
        let ev = scorer.eval(pts, a, neg);
        let h = omega - ev.value();
        gap = gap.min(h.abs());
        let value = if h > 0.0 {
            grads.add_pair(pts, &scorer, a, neg, &ev, -1.0);
            h
        } else {
            0.0
        };
        terms.push(PairTerm { i: a, j: Some(neg), value });
    }
    Ok(LossValue::from_terms(terms, gap))
}

/// Semi-hard negatives for every ordered anchor/positive pair.
pub(super) fn mine_triplets(obj: &Objective, input: &LossInput<'_>, pts: &Points<'_>) -> Mining {
    let n = input.embeddings.len();
    let table = values(&obj.scorer().square_table(pts, n));
    let mut triplets = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || !input.labels[a].matches(&input.labels[p]) {
                continue;
            }
            if let Some(negative) = semi_hard_unchecked(a, p, &table, input.labels) {
                triplets.push(TripletIndex {
                    anchor: a,
                    positive: p,
                    negative,
                });
            }
        }
    }
    Mining::Triplets(triplets)
}

/// `sum [D(a,p) - D(a,n) + margin]_+` over mined triplets.
pub(super) fn triplet(
    obj: &Objective,
    input: &LossInput<'_>,
    pts: &Points<'_>,
    mining: &Mining,
    grads: &mut PointGrads,
) -> Result<LossValue> {
    let Mining::Triplets(triplets) = mining else {
        return Err(IdmlError::param("triplet loss requires mined triplets"));
    };
    let scorer = obj.scorer();
    let margin = obj.loss_params.triplet_margin;
    let mut terms = Vec::with_capacity(triplets.len());
    let mut gap = f64::INFINITY;
    for t in triplets {
        let n = input.labels.len();
        if t.anchor >= n || t.positive >= n || t.negative >= n {
            return Err(IdmlError::shape("triplet index out of range"));
        }
        let ap = scorer.eval(pts, t.anchor, t.positive);
        let an = scorer.eval(pts, t.anchor, t.negative);
        let h = ap.value() - an.value() + margin;
        gap = gap.min(h.abs());
        let value = if h > 0.0 {
            grads.add_pair(pts, &scorer, t.anchor, t.positive, &ap, 1.0);
            grads.add_pair(pts, &scorer, t.anchor, t.negative, &an, -1.0);
            h
        } else {
            0.0
        };
        terms.push(PairTerm {
            i: t.anchor,
            j: Some(t.positive),
            value,
        });
    }
    let mut out = LossValue::from_terms(terms, gap);
    out.mining_exhausted = triplets.is_empty();
    Ok(out)
}
