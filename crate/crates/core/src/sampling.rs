//! Negative mining: semi-hard selection for triplets and distance-weighted
//! sampling for the margin loss.

use serde::{Deserialize, Serialize};

use crate::error::{IdmlError, Result};
use crate::rng::Rng;
use crate::types::LabelSet;

/// Smallest distance admitted by the distance-weighted density.
pub const DW_MIN_DISTANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

pub(crate) fn validate_table(dists: &[Vec<f64>], n_labels: usize) -> Result<()> {
    let n = dists.len();
    if n != n_labels {
        return Err(IdmlError::shape(format!("{n} distance rows for {n_labels} labels")));
    }
    for (i, row) in dists.iter().enumerate() {
        if row.len() != n {
            return Err(IdmlError::shape(format!("distance row {i} has {} entries, expected {n}", row.len())));
        }
        if row[i] != 0.0 {
            return Err(IdmlError::shape(format!("distance table diagonal {i} is nonzero")));
        }
        for j in 0..i {
            if row[j] != dists[j][i] {
                return Err(IdmlError::shape(format!("distance table asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Closest negative that is still farther from the anchor than the positive.
pub fn semi_hard_negative(
    anchor: usize,
    positive: usize,
    dists: &[Vec<f64>],
    labels: &[LabelSet],
) -> Result<Option<usize>> {
    validate_table(dists, labels.len())?;
    if anchor >= labels.len() || positive >= labels.len() {
        return Err(IdmlError::shape("triplet index out of range"));
    }
    Ok(semi_hard_unchecked(anchor, positive, dists, labels))
}

pub(crate) fn semi_hard_unchecked(
    anchor: usize,
    positive: usize,
    dists: &[Vec<f64>],
    labels: &[LabelSet],
) -> Option<usize> {
    let row = &dists[anchor];
    let d_ap = row[positive];
    let mut best: Option<(f64, usize)> = None;
    for (n, l) in labels.iter().enumerate() {
        if n == anchor || labels[anchor].matches(l) {
            continue;
        }
        let d = row[n];
        if d > d_ap && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, n));
        }
    }
    best.map(|(_, n)| n)
}

/// Log of the inverse hypersphere distance density, capped at `log(phi)`:
/// `min(log phi, (2 - n) log d + ((3 - n) / 2) log(1 - d^2 / 4))`.
/// `d` is clamped into `[DW_MIN_DISTANCE, 2 - DW_MIN_DISTANCE]`.
pub fn dw_log_weight(d: f64, n_dim: usize, phi: f64) -> f64 {
    let d = if d.is_nan() { DW_MIN_DISTANCE } else { d.clamp(DW_MIN_DISTANCE, 2.0 - DW_MIN_DISTANCE) };
    let n = n_dim as f64;
    let log_density_inv = (2.0 - n) * d.ln() + 0.5 * (3.0 - n) * (1.0 - 0.25 * d * d).ln();
    log_density_inv.min(phi.ln())
}

/// Normalized sampling probabilities over the anchor's negatives, computed in
/// the log domain. Returns `(negative index, probability)` pairs.
pub fn dw_negative_distribution(
    anchor: usize,
    dists: &[Vec<f64>],
    labels: &[LabelSet],
    n_dim: usize,
    phi: f64,
) -> Vec<(usize, f64)> {
    let row = &dists[anchor];
    let logs: Vec<(usize, f64)> = labels
        .iter()
        .enumerate()
        .filter(|(n, l)| *n != anchor && !labels[anchor].matches(l))
        .map(|(n, _)| (n, dw_log_weight(row[n], n_dim, phi)))
        .collect();
    let max = logs.iter().map(|(_, w)| *w).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<(usize, f64)> = logs.iter().map(|(n, w)| (*n, (w - max).exp())).collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    weights.into_iter().map(|(n, w)| (n, w / total)).collect()
}

/// Draws one negative for `anchor` with probability proportional to its
/// distance-weighted sampling weight.
pub fn sample_negatives_dw(
    anchor: usize,
    dists: &[Vec<f64>],
    labels: &[LabelSet],
    n_dim: usize,
    phi: f64,
    rng: &mut Rng,
) -> Result<usize> {
    validate_table(dists, labels.len())?;
    if !(phi > 0.0) {
        return Err(IdmlError::param("phi must be > 0"));
    }
    draw_dw_unchecked(anchor, dists, labels, n_dim, phi, rng)
        .ok_or_else(|| IdmlError::MiningExhausted(format!("anchor {anchor} has no negatives")))
}

pub(crate) fn draw_dw_unchecked(
    anchor: usize,
    dists: &[Vec<f64>],
    labels: &[LabelSet],
    n_dim: usize,
    phi: f64,
    rng: &mut Rng,
) -> Option<usize> {
    let dist = dw_negative_distribution(anchor, dists, labels, n_dim, phi);
    let last = dist.last()?.0;
    let r = rng.unit();
    let mut acc = 0.0;
    for &(n, p) in &dist {
        acc += p;
        if r < acc {
            return Some(n);
        }
    }
    Some(last)
}
