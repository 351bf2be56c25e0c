//! Value types shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{IdmlError, Result};

/// A finite, nonempty real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(IdmlError::shape("vector must have positive dimension"));
        }
        check_finite(&values)?;
        Ok(Vector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector must have positive dimension");
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = IdmlError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(IdmlError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Euclidean norm, rejecting non-finite input.
pub fn l2_norm(v: &[f64]) -> Result<f64> {
    check_finite(v)?;
    Ok(norm(v))
}

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub(crate) fn sum_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x + y) * (x + y))
        .sum::<f64>()
        .sqrt()
}

/// The two halves of an introspective embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub semantic: Vector,
    pub uncertainty: Vector,
}

impl EmbeddingPair {
    pub fn new(semantic: Vector, uncertainty: Vector) -> Self {
        EmbeddingPair {
            semantic,
            uncertainty,
        }
    }

    pub fn from_slices(semantic: &[f64], uncertainty: &[f64]) -> Result<Self> {
        Ok(EmbeddingPair {
            semantic: Vector::new(semantic.to_vec())?,
            uncertainty: Vector::new(uncertainty.to_vec())?,
        })
    }
}

/// A nonempty set of class identifiers. Original samples carry one label,
/// mixed samples carry the union of their sources' labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct LabelSet(Vec<u32>);

impl LabelSet {
    pub fn new(labels: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut v: Vec<u32> = labels.into_iter().collect();
        if v.is_empty() {
            return Err(IdmlError::param("label set must be nonempty"));
        }
        v.sort_unstable();
        v.dedup();
        Ok(LabelSet(v))
    }

    pub fn single(label: u32) -> Self {
        LabelSet(vec![label])
    }

    pub fn labels(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Smallest identifier; used wherever a single class is required.
    pub fn primary(&self) -> u32 {
        self.0[0]
    }

    pub fn contains(&self, label: u32) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    pub fn union(&self, other: &LabelSet) -> LabelSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        v.sort_unstable();
        v.dedup();
        LabelSet(v)
    }

    /// Two label sets match when they share at least one class.
    pub fn matches(&self, other: &LabelSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        false
    }
}

impl TryFrom<Vec<u32>> for LabelSet {
    type Error = IdmlError;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        LabelSet::new(v)
    }
}

impl From<LabelSet> for Vec<u32> {
    fn from(l: LabelSet) -> Self {
        l.0
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        f.write_str(&parts.join("|"))
    }
}

pub fn labels_match(a: &LabelSet, b: &LabelSet) -> bool {
    a.matches(b)
}

/// Introspective bias, temperature and the degeneracy clamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    pub gamma: f64,
    pub tau: f64,
    pub alpha_min: f64,
    /// Distance that the dissimilar-attenuation ablation drifts towards on
    /// distance-based losses. `sqrt(2)` is the distance between orthogonal
    /// unit vectors, i.e. cosine similarity 0.
    pub dis_reference: f64,
}

fn default_dis_reference() -> f64 {
    std::f64::consts::SQRT_2
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            gamma: 0.0,
            tau: 5.0,
            alpha_min: 1e-12,
            dis_reference: default_dis_reference(),
        }
    }
}

impl MetricParams {
    pub fn new(gamma: f64, tau: f64) -> Result<Self> {
        let mp = MetricParams {
            gamma,
            tau,
            ..Default::default()
        };
        mp.validate()?;
        Ok(mp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(IdmlError::param(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(IdmlError::param(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.alpha_min > 0.0) {
            return Err(IdmlError::param("alpha_min must be > 0"));
        }
        if !(self.dis_reference >= 0.0 && self.dis_reference.is_finite()) {
            return Err(IdmlError::param("dis_reference must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub feature: Vector,
    pub labels: LabelSet,
    pub is_mixed: bool,
}

impl Sample {
    pub fn clean(feature: Vector, label: u32) -> Self {
        Sample {
            feature,
            labels: LabelSet::single(label),
            is_mixed: false,
        }
    }
}

/// A nonempty set of samples that share one feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    samples: Vec<Sample>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| IdmlError::param("batch must be nonempty"))?;
        let dim = first.feature.dim();
        for (i, s) in samples.iter().enumerate() {
            if s.feature.dim() != dim {
                return Err(IdmlError::shape(format!(
                    "sample {i} has dim {} but batch dim is {dim}",
                    s.feature.dim()
                )));
            }
        }
        Ok(Batch { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].feature.dim()
    }

    pub fn labels(&self) -> Vec<LabelSet> {
        self.samples.iter().map(|s| s.labels.clone()).collect()
    }
}
