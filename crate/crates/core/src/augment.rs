//! Mixup with set-valued labels and feature-space analogues of the
//! low-resolution, blur and occlusion image corruptions.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, IdmlError, Result};
use crate::rng::Rng;
use crate::types::{LabelSet, Sample, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Shape `a` of the symmetric Beta(a, a) that draws the mixing weight.
    pub mix_lambda_dist: f64,
    /// Mixed samples added per batch, as a fraction of the batch size.
    pub mix_fraction: f64,
    pub blur_prob: f64,
    pub occl_prob: f64,
    pub occl_fraction: f64,
    pub lowres_factor: usize,
    pub noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mix_lambda_dist: 1.0,
            mix_fraction: 0.5,
            blur_prob: 0.0,
            occl_prob: 0.0,
            occl_fraction: 0.25,
            lowres_factor: 1,
            noise_sigma: 0.1,
        }
    }
}

impl AugmentConfig {
    /// No mixup and no corruption.
    pub fn none() -> Self {
        AugmentConfig {
            mix_fraction: 0.0,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("mix_fraction", self.mix_fraction),
            ("blur_prob", self.blur_prob),
            ("occl_prob", self.occl_prob),
            ("occl_fraction", self.occl_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(IdmlError::param(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.mix_lambda_dist > 0.0 && self.mix_lambda_dist.is_finite()) {
            return Err(IdmlError::param("mix_lambda_dist must be > 0"));
        }
        if self.lowres_factor == 0 {
            return Err(IdmlError::param("lowres_factor must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(IdmlError::param("noise_sigma must be >= 0"));
        }
        Ok(())
    }

    /// Applies the configured corruptions in the order low-res, blur,
    /// occlusion.
    pub fn corrupt(&self, x: &Vector, rng: &mut Rng) -> Result<Vector> {
        let mut out = lowres(x, self.lowres_factor)?;
        if self.blur_prob > 0.0 && rng.bernoulli(self.blur_prob) {
            out = blur(&out, self.noise_sigma, rng)?;
        }
        if self.occl_prob > 0.0 && rng.bernoulli(self.occl_prob) {
            out = occlude(&out, self.occl_fraction, rng)?;
        }
        Ok(out)
    }
}

/// `lambda * x1 + (1 - lambda) * x2` labelled with `l1 ∪ l2`.
pub fn mix(x1: &Vector, l1: &LabelSet, x2: &Vector, l2: &LabelSet, lambda: f64) -> Result<Sample> {
    ensure_same_dim(x1.dim(), x2.dim(), "mixed vectors")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(IdmlError::param(format!("mixing weight must lie in [0, 1], got {lambda}")));
    }
    let feature = x1
        .iter()
        .zip(x2.iter())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(Sample {
        feature: Vector::new(feature)?,
        labels: l1.union(l2),
        is_mixed: true,
    })
}

/// Synthesizes `round(mix_fraction * n)` mixed samples from random pairs of
/// `samples`. The partner is drawn among samples with non-matching labels
/// when any exist.
pub fn mix_batch(samples: &[Sample], cfg: &AugmentConfig, rng: &mut Rng) -> Result<Vec<Sample>> {
    let n = samples.len();
    let count = (cfg.mix_fraction * n as f64).round() as usize;
    if n < 2 || count == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.below(n);
        let others: Vec<usize> = (0..n)
            .filter(|&j| j != i && !samples[i].labels.matches(&samples[j].labels))
            .collect();
        let j = if others.is_empty() {
            let j = rng.below(n - 1);
            if j >= i { j + 1 } else { j }
        } else {
            others[rng.below(others.len())]
        };
        let lambda = rng.beta(cfg.mix_lambda_dist)?;
        let (a, b) = (&samples[i], &samples[j]);
        out.push(mix(&a.feature, &a.labels, &b.feature, &b.labels, lambda)?);
    }
    Ok(out)
}

fn zeroed_count(fraction: f64, dim: usize) -> usize {
    let k = fraction * dim as f64;
    let nearest = k.round();
    let k = if (k - nearest).abs() < 1e-9 { nearest } else { k.ceil() };
    (k as usize).min(dim)
}

/// Sets `ceil(fraction * dim)` distinct coordinates, chosen uniformly, to 0.
pub fn occlude(x: &Vector, fraction: f64, rng: &mut Rng) -> Result<Vector> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(IdmlError::param(format!("occlusion fraction must lie in [0, 1], got {fraction}")));
    }
    let mut v = x.to_vec();
    for i in rng.choose_distinct(v.len(), zeroed_count(fraction, v.len())) {
        v[i] = 0.0;
    }
    Vector::new(v)
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate.
pub fn blur(x: &Vector, sigma: f64, rng: &mut Rng) -> Result<Vector> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(IdmlError::param(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    Vector::new(x.iter().map(|v| v + sigma * rng.normal()).collect())
}

/// Replaces each contiguous block of `factor` coordinates by its mean. A
/// short final block is padded by repeating its last coordinate.
pub fn lowres(x: &Vector, factor: usize) -> Result<Vector> {
    if factor == 0 {
        return Err(IdmlError::param("lowres factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let mut out = Vec::with_capacity(x.dim());
    for block in x.chunks(factor) {
        let last = block[block.len() - 1];
        let pad = (factor - block.len()) as f64;
        let mean = (block.iter().sum::<f64>() + pad * last) / factor as f64;
        out.extend(std::iter::repeat_n(mean, block.len()));
    }
    Vector::new(out)
}
