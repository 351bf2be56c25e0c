//! Metric-learning losses with a pluggable pair metric.
//!
//! Every loss runs in two phases. [`Objective::mine`] makes the discrete
//! choices (distance-weighted negatives, semi-hard triplets, the
//! multi-similarity pair mask) without gradients. [`Objective::evaluate`]
//! then computes the loss value and its exact gradient with respect to every
//! semantic and uncertainty vector, samples and proxies alike, holding the
//! mining fixed.
//!
//! | loss | comparison |
//! | ---- | ---------- |
//! | contrastive, triplet | distance on raw semantic vectors |
//! | margin + DW sampling, ProxyNCA | distance on unit semantic vectors |
//! | multi-similarity, softmax, ProxyAnchor | cosine similarity |

mod multi_similarity;
mod pair_losses;
pub(crate) mod pairs;
mod proxy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IdmlError, Result};
use crate::metric::Metric;
use crate::rng::Rng;
use crate::sampling::TripletIndex;
use crate::types::{check_finite, EmbeddingPair, LabelSet, MetricParams};

pub use multi_similarity::ms_modified_similarity;
use pairs::{Form, PointGrads, Points, Scorer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Contrastive,
    MarginDw,
    TripletSemiHard,
    MultiSimilarity,
    Softmax,
    ProxyNca,
    ProxyAnchor,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Contrastive,
        LossKind::MarginDw,
        LossKind::TripletSemiHard,
        LossKind::MultiSimilarity,
        LossKind::Softmax,
        LossKind::ProxyNca,
        LossKind::ProxyAnchor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Contrastive => "contrastive",
            LossKind::MarginDw => "margin_dw",
            LossKind::TripletSemiHard => "triplet_sh",
            LossKind::MultiSimilarity => "multi_similarity",
            LossKind::Softmax => "softmax",
            LossKind::ProxyNca => "proxy_nca",
            LossKind::ProxyAnchor => "proxy_anchor",
        }
    }

    pub fn uses_proxies(self) -> bool {
        matches!(self, LossKind::Softmax | LossKind::ProxyNca | LossKind::ProxyAnchor)
    }

    /// Whether the loss contains hinge terms whose kinks matter for
    /// finite-difference checks.
    pub fn has_hinges(self) -> bool {
        matches!(
            self,
            LossKind::Contrastive | LossKind::MarginDw | LossKind::TripletSemiHard
        )
    }

    /// Whether the loss compares length-normalized semantic vectors.
    pub fn normalizes_semantic(self) -> bool {
        !matches!(self.form(), Form::Distance)
    }

    pub(crate) fn form(self) -> Form {
        match self {
            LossKind::Contrastive | LossKind::TripletSemiHard => Form::Distance,
            LossKind::MarginDw | LossKind::ProxyNca => Form::UnitDistance,
            LossKind::MultiSimilarity | LossKind::Softmax | LossKind::ProxyAnchor => Form::Cosine,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = IdmlError;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| IdmlError::param(format!("unknown loss '{s}'")))
    }
}

/// Margins and scales of all seven losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    /// Negative margin of the contrastive loss.
    pub contrastive_margin: f64,
    /// Ranking margin of the triplet loss.
    pub triplet_margin: f64,
    /// Positive boundary of the margin loss.
    pub margin_xi: f64,
    /// Negative boundary of the margin loss.
    pub margin_omega: f64,
    /// Cap on the distance-weighted sampling weight.
    pub phi: f64,
    pub ms_eps: f64,
    pub ms_alpha: f64,
    pub ms_beta: f64,
    pub ms_lambda: f64,
    pub pa_alpha: f64,
    pub pa_delta: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            contrastive_margin: 1.0,
            triplet_margin: 0.2,
            margin_xi: 0.5,
            margin_omega: 1.4,
            phi: 10.0,
            ms_eps: 0.1,
            ms_alpha: 2.0,
            ms_beta: 50.0,
            ms_lambda: 1.0,
            pa_alpha: 32.0,
            pa_delta: 0.1,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("phi", self.phi),
            ("ms_alpha", self.ms_alpha),
            ("ms_beta", self.ms_beta),
            ("pa_alpha", self.pa_alpha),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IdmlError::param(format!("{name} must be > 0, got {v}")));
            }
        }
        let margins = [
            ("contrastive_margin", self.contrastive_margin),
            ("triplet_margin", self.triplet_margin),
            ("margin_xi", self.margin_xi),
            ("margin_omega", self.margin_omega),
            ("ms_eps", self.ms_eps),
            ("pa_delta", self.pa_delta),
        ];
        for (name, v) in margins {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(IdmlError::param(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.ms_lambda.is_finite() {
            return Err(IdmlError::param("ms_lambda must be finite"));
        }
        Ok(())
    }
}

/// Learnable class representatives, each with a semantic and an uncertainty
/// vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxySet {
    classes: Vec<u32>,
    semantic: Vec<Vec<f64>>,
    uncertainty: Vec<Vec<f64>>,
}

impl ProxySet {
    pub fn new(classes: Vec<u32>, semantic: Vec<Vec<f64>>, uncertainty: Vec<Vec<f64>>) -> Result<Self> {
        if classes.len() != semantic.len() || classes.len() != uncertainty.len() {
            return Err(IdmlError::shape("one semantic and one uncertainty vector per proxy"));
        }
        let mut sorted = classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return Err(IdmlError::param("duplicate proxy class"));
        }
        for (s, u) in semantic.iter().zip(&uncertainty) {
            if s.len() != semantic[0].len() || u.len() != uncertainty[0].len() || s.is_empty() || u.is_empty() {
                return Err(IdmlError::shape("proxy dims must agree"));
            }
            check_finite(s)?;
            check_finite(u)?;
        }
        Ok(ProxySet {
            classes,
            semantic,
            uncertainty,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn semantic(&self) -> &[Vec<f64>] {
        &self.semantic
    }

    pub fn uncertainty(&self) -> &[Vec<f64>] {
        &self.uncertainty
    }

    pub fn index_of(&self, class: u32) -> Option<usize> {
        self.classes.iter().position(|c| *c == class)
    }
}

/// One additive contribution to a loss value. `j` is the partner index for
/// pair terms and `None` for per-anchor or per-proxy terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub i: usize,
    pub j: Option<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    /// Sum of `pair_terms` in order.
    pub value: f64,
    pub pair_terms: Vec<PairTerm>,
    /// Set when mining produced nothing to train on.
    pub mining_exhausted: bool,
    /// Smallest distance of any hinge argument from its kink.
    pub min_hinge_gap: f64,
}

impl LossValue {
    pub(crate) fn from_terms(pair_terms: Vec<PairTerm>, min_hinge_gap: f64) -> Self {
        let value = pair_terms.iter().map(|t| t.value).sum();
        LossValue {
            value,
            pair_terms,
            mining_exhausted: false,
            min_hinge_gap,
        }
    }
}

/// Gradients of a loss with respect to every embedding it saw.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingGrads {
    pub semantic: Vec<Vec<f64>>,
    pub uncertainty: Vec<Vec<f64>>,
    pub proxy_semantic: Vec<Vec<f64>>,
    pub proxy_uncertainty: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: LossValue,
    pub grads: EmbeddingGrads,
}

#[derive(Clone, Copy, Debug)]
pub struct LossInput<'a> {
    pub embeddings: &'a [EmbeddingPair],
    pub labels: &'a [LabelSet],
    /// Marks mixed samples; `None` means all samples are original.
    pub is_mixed: Option<&'a [bool]>,
    pub proxies: Option<&'a ProxySet>,
}

impl<'a> LossInput<'a> {
    pub fn new(embeddings: &'a [EmbeddingPair], labels: &'a [LabelSet]) -> Self {
        LossInput {
            embeddings,
            labels,
            is_mixed: None,
            proxies: None,
        }
    }

    pub fn with_proxies(mut self, proxies: &'a ProxySet) -> Self {
        self.proxies = Some(proxies);
        self
    }

    pub fn with_mixed(mut self, is_mixed: &'a [bool]) -> Self {
        self.is_mixed = Some(is_mixed);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.embeddings.len() != self.labels.len() {
            return Err(IdmlError::shape(format!(
                "{} embeddings for {} label sets",
                self.embeddings.len(),
                self.labels.len()
            )));
        }
        if let Some(m) = self.is_mixed {
            if m.len() != self.labels.len() {
                return Err(IdmlError::shape("mixed flags must match batch size"));
            }
        }
        if let Some(first) = self.embeddings.first() {
            let (ds, du) = (first.semantic.dim(), first.uncertainty.dim());
            for e in self.embeddings {
                if e.semantic.dim() != ds || e.uncertainty.dim() != du {
                    return Err(IdmlError::shape("embedding dims differ within the batch"));
                }
            }
            if let Some(p) = self.proxies {
                if let (Some(ps), Some(pu)) = (p.semantic.first(), p.uncertainty.first()) {
                    if ps.len() != ds || pu.len() != du {
                        return Err(IdmlError::shape("proxy dims differ from embedding dims"));
                    }
                }
            }
        }
        Ok(())
    }

    fn is_mixed(&self, i: usize) -> bool {
        self.is_mixed.is_some_and(|m| m[i])
    }

    /// Points: samples first, then proxies (if any).
    fn points(&self, alpha_min: f64) -> Points<'a> {
        let mut s: Vec<&[f64]> = self.embeddings.iter().map(|e| e.semantic.as_slice()).collect();
        let mut u: Vec<&[f64]> = self.embeddings.iter().map(|e| e.uncertainty.as_slice()).collect();
        if let Some(p) = self.proxies {
            s.extend(p.semantic.iter().map(|v| v.as_slice()));
            u.extend(p.uncertainty.iter().map(|v| v.as_slice()));
        }
        Points::new(s, u, alpha_min)
    }
}

/// Discrete choices made before a loss is differentiated.
#[derive(Clone, Debug, PartialEq)]
pub enum Mining {
    /// No mining; every pair participates.
    All,
    /// `(anchor, negative)` pairs drawn by distance-weighted sampling.
    DwNegatives(Vec<(usize, usize)>),
    Triplets(Vec<TripletIndex>),
    /// Pairs kept by the multi-similarity mining rule.
    PairMask(Vec<Vec<bool>>),
}

/// A loss bound to a metric and its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub loss: LossKind,
    pub metric: Metric,
    pub metric_params: MetricParams,
    pub loss_params: LossParams,
    /// Whether mixed samples act as anchors in proxy losses.
    pub mixed_proxy_anchors: bool,
}

impl Objective {
    pub fn new(loss: LossKind, metric: Metric) -> Self {
        Objective {
            loss,
            metric,
            metric_params: MetricParams::default(),
            loss_params: LossParams::default(),
            mixed_proxy_anchors: true,
        }
    }

    pub fn with_params(mut self, mp: MetricParams, lp: LossParams) -> Self {
        self.metric_params = mp;
        self.loss_params = lp;
        self
    }

    pub(crate) fn scorer(&self) -> Scorer {
        Scorer {
            metric: self.metric,
            mp: self.metric_params,
            form: self.loss.form(),
        }
    }

    fn check(&self, input: &LossInput<'_>) -> Result<()> {
        self.metric_params.validate()?;
        self.loss_params.validate()?;
        input.validate()?;
        if self.loss.uses_proxies() {
            let proxies = input
                .proxies
                .ok_or_else(|| IdmlError::param(format!("{} requires a proxy set", self.loss)))?;
            if proxies.is_empty() {
                return Err(IdmlError::param("proxy set is empty"));
            }
        }
        Ok(())
    }

    pub fn mine(&self, input: &LossInput<'_>, rng: &mut Rng) -> Result<Mining> {
        self.check(input)?;
        let pts = input.points(self.metric_params.alpha_min);
        match self.loss {
            LossKind::MarginDw => pair_losses::mine_dw(self, input, &pts, rng),
            LossKind::TripletSemiHard => Ok(pair_losses::mine_triplets(self, input, &pts)),
            LossKind::MultiSimilarity => Ok(multi_similarity::mine(self, input, &pts)),
            _ => Ok(Mining::All),
        }
    }

    pub fn evaluate(&self, input: &LossInput<'_>, mining: &Mining) -> Result<LossOutput> {
        self.check(input)?;
        let pts = input.points(self.metric_params.alpha_min);
        let mut grads = PointGrads::zeros(&pts);
        let value = match self.loss {
            LossKind::Contrastive => pair_losses::contrastive(self, input, &pts, &mut grads)?,
            LossKind::MarginDw => pair_losses::margin_dw(self, input, &pts, mining, &mut grads)?,
            LossKind::TripletSemiHard => pair_losses::triplet(self, input, &pts, mining, &mut grads)?,
            LossKind::MultiSimilarity => multi_similarity::loss(self, input, &pts, mining, &mut grads)?,
            LossKind::Softmax => proxy::softmax(self, input, &pts, &mut grads)?,
            LossKind::ProxyNca => proxy::proxy_nca(self, input, &pts, &mut grads)?,
            LossKind::ProxyAnchor => proxy::proxy_anchor(self, input, &pts, &mut grads)?,
        };
        if !value.value.is_finite() {
            let bad = value
                .pair_terms
                .iter()
                .find(|t| !t.value.is_finite())
                .copied();
            return Err(IdmlError::Numerical(format!(
                "{} produced a non-finite value; offending term {bad:?}",
                self.loss
            )));
        }
        let (mut ds, mut du) = grads.finish(&pts);
        let n = input.embeddings.len();
        let proxy_semantic = ds.split_off(n);
        let proxy_uncertainty = du.split_off(n);
        Ok(LossOutput {
            value,
            grads: EmbeddingGrads {
                semantic: ds,
                uncertainty: du,
                proxy_semantic,
                proxy_uncertainty,
            },
        })
    }

    /// Mines and evaluates in one call.
    pub fn compute(&self, input: &LossInput<'_>, rng: &mut Rng) -> Result<LossOutput> {
        let mining = self.mine(input, rng)?;
        self.evaluate(input, &mining)
    }
}

fn objective(loss: LossKind, metric: Metric, mp: &MetricParams, lp: &LossParams) -> Objective {
    Objective::new(loss, metric).with_params(*mp, *lp)
}

pub fn contrastive_loss(input: &LossInput<'_>, metric: Metric, mp: &MetricParams, lp: &LossParams) -> Result<LossOutput> {
    objective(LossKind::Contrastive, metric, mp, lp).evaluate(input, &Mining::All)
}

pub fn margin_dw_loss(
    input: &LossInput<'_>,
    metric: Metric,
    mp: &MetricParams,
    lp: &LossParams,
    rng: &mut Rng,
) -> Result<LossOutput> {
    objective(LossKind::MarginDw, metric, mp, lp).compute(input, rng)
}

pub fn triplet_sh_loss(input: &LossInput<'_>, metric: Metric, mp: &MetricParams, lp: &LossParams) -> Result<LossOutput> {
    let obj = objective(LossKind::TripletSemiHard, metric, mp, lp);
    obj.compute(input, &mut Rng::new(0))
}

pub fn multi_similarity_loss(input: &LossInput<'_>, metric: Metric, mp: &MetricParams, lp: &LossParams) -> Result<LossOutput> {
    let obj = objective(LossKind::MultiSimilarity, metric, mp, lp);
    obj.compute(input, &mut Rng::new(0))
}

pub fn softmax_proxy_loss(input: &LossInput<'_>, metric: Metric, mp: &MetricParams, lp: &LossParams) -> Result<LossOutput> {
    objective(LossKind::Softmax, metric, mp, lp).evaluate(input, &Mining::All)
}

pub fn proxy_nca_loss(input: &LossInput<'_>, metric: Metric, mp: &MetricParams, lp: &LossParams) -> Result<LossOutput> {
    objective(LossKind::ProxyNca, metric, mp, lp).evaluate(input, &Mining::All)
}

pub fn proxy_anchor_loss(input: &LossInput<'_>, metric: Metric, mp: &MetricParams, lp: &LossParams) -> Result<LossOutput> {
    objective(LossKind::ProxyAnchor, metric, mp, lp).evaluate(input, &Mining::All)
}
