//! The introspective similarity metric family and its two baselines.
//!
//! For a pair with semantic distance `alpha = |s1 - s2|` and similarity
//! uncertainty `beta = |u1 + u2|`, the relative uncertainty is
//! `beta_rel = (beta + gamma) / alpha` and the attenuation factor is
//! `w = exp(-beta_rel / tau)`. The distance form is `alpha * w`; the
//! similarity form pulls a cosine similarity `c` towards 1 as
//! `1 - (1 - c) * w`.
//!
//! `alpha` is clamped below by `alpha_min` wherever it is a divisor. A pair
//! with `alpha == 0` has distance exactly zero.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, IdmlError, Result};
use crate::types::{check_finite, diff_norm, dot, norm, sum_norm, EmbeddingPair, MetricParams};

/// Selects how a pair is compared inside a loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Plain Euclidean distance / cosine similarity of the semantic parts.
    Euclidean,
    /// Introspective similarity metric.
    Ism,
    /// Hard-threshold variant: the semantic distance survives only when it
    /// exceeds `beta + gamma`.
    IsmStrict,
    /// Ablation that attenuates towards "unrelated" instead of "identical".
    IsmDis,
    /// Introspective metric with `beta = |u1| + |u2|`.
    UncertSumnorm,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Euclidean,
        Metric::Ism,
        Metric::IsmStrict,
        Metric::IsmDis,
        Metric::UncertSumnorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Ism => "ism",
            Metric::IsmStrict => "ism_strict",
            Metric::IsmDis => "ism_dis",
            Metric::UncertSumnorm => "uncert_sumnorm",
        }
    }

    pub fn uses_uncertainty(self) -> bool {
        !matches!(self, Metric::Euclidean)
    }

    pub fn beta_form(self) -> BetaForm {
        match self {
            Metric::UncertSumnorm => BetaForm::NormThenSum,
            _ => BetaForm::SumThenNorm,
        }
    }

    /// Distance form with partial derivatives in `alpha` and `beta`.
    pub fn distance(self, alpha: f64, beta: f64, mp: &MetricParams) -> PairScore {
        match self {
            Metric::Euclidean => PairScore {
                value: alpha,
                d_alpha: 1.0,
                ..PairScore::ZERO
            },
            Metric::Ism | Metric::UncertSumnorm => {
                let att = Attenuation::new(alpha, beta, mp);
                if alpha == 0.0 {
                    return PairScore {
                        d_alpha: att.w,
                        ..PairScore::ZERO
                    };
                }
                PairScore {
                    value: alpha * att.w,
                    d_alpha: att.w + alpha * att.dw_dalpha,
                    d_beta: alpha * att.dw_dbeta,
                    d_cos: 0.0,
                }
            }
            Metric::IsmStrict => {
                if alpha - beta - mp.gamma > 0.0 {
                    PairScore {
                        value: alpha,
                        d_alpha: 1.0,
                        ..PairScore::ZERO
                    }
                } else {
                    PairScore::ZERO
                }
            }
            Metric::IsmDis => {
                let att = Attenuation::new(alpha, beta, mp);
                let rho2 = mp.dis_reference * mp.dis_reference;
                let a2 = alpha * alpha;
                let d = (att.w * a2 + (1.0 - att.w) * rho2).sqrt();
                if d == 0.0 {
                    return PairScore {
                        d_alpha: 1.0,
                        ..PairScore::ZERO
                    };
                }
                PairScore {
                    value: d,
                    d_alpha: (2.0 * att.w * alpha + (a2 - rho2) * att.dw_dalpha) / (2.0 * d),
                    d_beta: (a2 - rho2) * att.dw_dbeta / (2.0 * d),
                    d_cos: 0.0,
                }
            }
        }
    }

    /// Similarity form of a cosine similarity `c`, with `alpha` the distance
    /// between the unit-normalized semantic vectors.
    pub fn similarity(self, c: f64, alpha: f64, beta: f64, mp: &MetricParams) -> PairScore {
        match self {
            Metric::Euclidean => PairScore {
                value: c,
                d_cos: 1.0,
                ..PairScore::ZERO
            },
            Metric::Ism | Metric::UncertSumnorm => {
                let att = Attenuation::new(alpha, beta, mp);
                // c*w + (1-w) is exactly c when w == 1
                PairScore {
                    value: c * att.w + (1.0 - att.w),
                    d_cos: att.w,
                    d_alpha: (c - 1.0) * att.dw_dalpha,
                    d_beta: (c - 1.0) * att.dw_dbeta,
                }
            }
            Metric::IsmDis => {
                let att = Attenuation::new(alpha, beta, mp);
                PairScore {
                    value: c * att.w,
                    d_cos: att.w,
                    d_alpha: c * att.dw_dalpha,
                    d_beta: c * att.dw_dbeta,
                }
            }
            Metric::IsmStrict => {
                if alpha - beta - mp.gamma > 0.0 {
                    PairScore {
                        value: c,
                        d_cos: 1.0,
                        ..PairScore::ZERO
                    }
                } else {
                    PairScore {
                        value: 1.0,
                        ..PairScore::ZERO
                    }
                }
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = IdmlError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| IdmlError::param(format!("unknown metric '{s}'")))
    }
}

/// How two uncertainty vectors combine into the pair uncertainty `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaForm {
    /// `|u1 + u2|`
    SumThenNorm,
    /// `|u1| + |u2|`
    NormThenSum,
}

/// A pair score and its partial derivatives with respect to the scalar pair
/// quantities it was computed from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub value: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
    pub d_cos: f64,
}

impl PairScore {
    pub const ZERO: PairScore = PairScore {
        value: 0.0,
        d_alpha: 0.0,
        d_beta: 0.0,
        d_cos: 0.0,
    };
}

/// `w = exp(-beta_rel / tau)` and its partials.
#[derive(Clone, Copy, Debug)]
struct Attenuation {
    w: f64,
    dw_dalpha: f64,
    dw_dbeta: f64,
}

impl Attenuation {
    fn new(alpha: f64, beta: f64, mp: &MetricParams) -> Self {
        let clamped = alpha.max(mp.alpha_min);
        let rel = (beta + mp.gamma) / clamped;
        let w = (-rel / mp.tau).exp();
        let dw_dalpha = if alpha >= mp.alpha_min {
            w * rel / (mp.tau * alpha)
        } else {
            0.0
        };
        Attenuation {
            w,
            dw_dalpha,
            dw_dbeta: -w / (mp.tau * clamped),
        }
    }
}

/// Semantic distance, similarity uncertainty and relative uncertainty of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGeometry {
    pub alpha: f64,
    pub beta: f64,
    pub beta_rel: f64,
}

pub fn euclidean_distance(s1: &[f64], s2: &[f64]) -> Result<f64> {
    ensure_same_dim(s1.len(), s2.len(), "euclidean_distance")?;
    check_finite(s1)?;
    check_finite(s2)?;
    Ok(diff_norm(s1, s2))
}

/// KL-divergence between diagonal Gaussians, written with the leading `-1/2`
/// and sign layout of the usual textbook form. Reference baseline only.
pub fn kl_gaussian(mu1: &[f64], sigma1: &[f64], mu2: &[f64], sigma2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    for (len, name) in [(sigma1.len(), "sigma1"), (mu2.len(), "mu2"), (sigma2.len(), "sigma2")] {
        ensure_same_dim(d, len, name)?;
    }
    if sigma1.iter().chain(sigma2).any(|s| !(*s > 0.0)) {
        return Err(IdmlError::param("sigma entries must be strictly positive"));
    }
    let mut acc = 0.0;
    for k in 0..d {
        let ratio = (sigma1[k] * sigma1[k]) / (sigma2[k] * sigma2[k]);
        let diff = mu1[k] - mu2[k];
        acc += ratio.ln() - ratio - diff * diff / (sigma2[k] * sigma2[k]) + 1.0;
    }
    Ok(-0.5 * acc)
}

fn check_pair(p1: &EmbeddingPair, p2: &EmbeddingPair) -> Result<()> {
    ensure_same_dim(p1.semantic.dim(), p2.semantic.dim(), "semantic dims")?;
    ensure_same_dim(p1.uncertainty.dim(), p2.uncertainty.dim(), "uncertainty dims")
}

pub fn pair_geometry(p1: &EmbeddingPair, p2: &EmbeddingPair, mp: &MetricParams) -> Result<PairGeometry> {
    check_pair(p1, p2)?;
    let alpha = diff_norm(&p1.semantic, &p2.semantic);
    let beta = sum_norm(&p1.uncertainty, &p2.uncertainty);
    Ok(PairGeometry {
        alpha,
        beta,
        beta_rel: (beta + mp.gamma) / alpha.max(mp.alpha_min),
    })
}

/// `|u1| + |u2|`, the ablation alternative to `|u1 + u2|`.
pub fn pair_uncertainty_sumnorm(p1: &EmbeddingPair, p2: &EmbeddingPair) -> Result<f64> {
    ensure_same_dim(p1.uncertainty.dim(), p2.uncertainty.dim(), "uncertainty dims")?;
    Ok(norm(&p1.uncertainty) + norm(&p2.uncertainty))
}

pub fn ism_strict(p1: &EmbeddingPair, p2: &EmbeddingPair, mp: &MetricParams) -> Result<f64> {
    let g = pair_geometry(p1, p2, mp)?;
    Ok(Metric::IsmStrict.distance(g.alpha, g.beta, mp).value)
}

pub fn ism_distance(p1: &EmbeddingPair, p2: &EmbeddingPair, mp: &MetricParams) -> Result<f64> {
    let g = pair_geometry(p1, p2, mp)?;
    Ok(Metric::Ism.distance(g.alpha, g.beta, mp).value)
}

fn check_similarity_args(c: f64, beta_rel: f64, tau: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&c) {
        return Err(IdmlError::param(format!("similarity {c} outside [-1, 1]")));
    }
    if !(beta_rel >= 0.0) {
        return Err(IdmlError::param("relative uncertainty must be >= 0"));
    }
    if !(tau > 0.0) {
        return Err(IdmlError::param("tau must be > 0"));
    }
    Ok(())
}

/// `1 - (1 - c) * exp(-beta_rel / tau)`.
pub fn ism_similarity(c: f64, beta_rel: f64, tau: f64) -> Result<f64> {
    check_similarity_args(c, beta_rel, tau)?;
    let w = (-beta_rel / tau).exp();
    Ok(c * w + (1.0 - w))
}

/// `c * exp(-beta_rel / tau)`.
pub fn ism_dissim(c: f64, beta_rel: f64, tau: f64) -> Result<f64> {
    check_similarity_args(c, beta_rel, tau)?;
    Ok(c * (-beta_rel / tau).exp())
}

/// Derivative of the introspective distance with respect to `alpha`,
/// `exp(-x) * (1 + x)` with `x = (beta + gamma) / (alpha * tau)`.
pub fn gradient_weight(alpha: f64, beta: f64, mp: &MetricParams) -> Result<f64> {
    if !(alpha >= mp.alpha_min) {
        return Err(IdmlError::param(format!(
            "alpha {alpha} below clamp {}",
            mp.alpha_min
        )));
    }
    if !(beta >= 0.0) {
        return Err(IdmlError::param("beta must be >= 0"));
    }
    let x = (beta + mp.gamma) / alpha / mp.tau;
    Ok((-x).exp() * (1.0 + x))
}

pub fn cosine_similarity(a: &[f64], b: &[f64], alpha_min: f64) -> Result<f64> {
    ensure_same_dim(a.len(), b.len(), "cosine_similarity")?;
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (norm(a), norm(b));
    if na < alpha_min || nb < alpha_min {
        return Err(IdmlError::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
