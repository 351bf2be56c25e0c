//! Finite-difference verification of the analytic gradients and of the
//! uncertainty-driven gradient attenuation factor.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{IdmlError, Result};
use crate::losses::{contrastive_loss, LossInput, LossParams, Mining, Objective};
use crate::metric::{gradient_weight, Metric};
use crate::rng::Rng;
use crate::types::{diff_norm, sum_norm, EmbeddingPair, LabelSet, MetricParams, Sample};

use super::Model;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Batches with any hinge argument closer than this to its kink are
    /// skipped and redrawn.
    pub kink_margin: f64,
    pub max_resamples: usize,
    /// The relative-error denominator is at least
    /// `floor_scale * max(1, |loss|)`, which keeps gradients at the level of
    /// finite-difference round-off from being judged relatively.
    pub floor_scale: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-6,
            tolerance: 1e-4,
            kink_margin: 1e-3,
            max_resamples: 50,
            floor_scale: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdSummary {
    pub n_params: usize,
    pub max_rel_err: f64,
    pub worst: Option<ParamCheck>,
    /// Parameters whose relative error exceeds the tolerance.
    pub failures: Vec<ParamCheck>,
}

impl FdSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares `analytic` with central differences of `loss` around `params`,
/// coordinate by coordinate.
pub fn compare_with_finite_differences(
    params: &[f64],
    analytic: &[f64],
    loss: impl Fn(&[f64]) -> Result<f64>,
    opts: &GradcheckOptions,
) -> Result<FdSummary> {
    if params.len() != analytic.len() {
        return Err(IdmlError::shape("analytic gradient length differs from parameter count"));
    }
    let base = loss(params)?;
    let floor = opts.floor_scale * base.abs().max(1.0);
    let mut p = params.to_vec();
    let mut worst: Option<ParamCheck> = None;
    let mut failures = Vec::new();
    for k in 0..params.len() {
        let orig = p[k];
        p[k] = orig + opts.step;
        let up = loss(&p)?;
        p[k] = orig - opts.step;
        let down = loss(&p)?;
        p[k] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let a = analytic[k];
        let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        let check = ParamCheck {
            index: k,
            analytic: a,
            numeric,
            rel_err,
        };
        if worst.is_none_or(|w| rel_err > w.rel_err) {
            worst = Some(check);
        }
        if rel_err > opts.tolerance {
            failures.push(check);
        }
    }
    Ok(FdSummary {
        n_params: params.len(),
        max_rel_err: worst.map_or(0.0, |w| w.rel_err),
        worst,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: String,
    pub metric: String,
    pub summary: FdSummary,
    /// Batches rejected for lying too close to a hinge kink.
    pub skipped_kinks: usize,
    pub passed: bool,
}

/// Checks one batch. Returns `None` when a hinge argument lies within
/// `kink_margin` of its kink.
pub fn check_batch(
    model: &Model,
    samples: &[Sample],
    obj: &Objective,
    opts: &GradcheckOptions,
    rng: &mut Rng,
) -> Result<Option<FdSummary>> {
    let step = model.loss_and_grad(samples, obj, None, rng)?;
    if obj.loss.has_hinges() && step.value.min_hinge_gap < opts.kink_margin {
        return Ok(None);
    }
    let mining: Mining = step.mining;
    let probe = RefCell::new(model.clone());
    let summary = compare_with_finite_differences(
        model.params(),
        &step.grads,
        |p| {
            let mut m = probe.borrow_mut();
            m.set_params(p.to_vec())?;
            m.loss_value(samples, obj, &mining)
        },
        opts,
    )?;
    Ok(Some(summary))
}

/// Draws batches until one is kink-free and checks every parameter on it.
pub fn gradcheck(
    model: &Model,
    mut draw: impl FnMut(&mut Rng) -> Vec<Sample>,
    obj: &Objective,
    opts: &GradcheckOptions,
    rng: &mut Rng,
) -> Result<GradcheckReport> {
    for skipped in 0..=opts.max_resamples {
        let batch = draw(rng);
        if let Some(summary) = check_batch(model, &batch, obj, opts, rng)? {
            return Ok(GradcheckReport {
                loss: obj.loss.to_string(),
                metric: obj.metric.to_string(),
                passed: summary.passed(),
                summary,
                skipped_kinks: skipped,
            });
        }
    }
    Err(IdmlError::Numerical(format!(
        "no batch cleared the kink margin in {} draws",
        opts.max_resamples + 1
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HFactorReport {
    pub pairs: usize,
    /// Largest `|g_idml / g_base - H|` over all coordinates.
    pub max_ratio_err: f64,
    pub max_h: f64,
    /// Pairs with `H > 1`, or with `H = 1` while the relative uncertainty is
    /// positive, or `H != 1` while it is zero.
    pub bound_violations: usize,
}

/// For single positive pairs under the contrastive loss, compares the
/// semantic gradient of the introspective loss with the Euclidean one
/// scaled by `H(alpha, beta)`. Every fourth pair has zero uncertainty.
pub fn h_factor_check(pairs: usize, dim: usize, mp: &MetricParams, rng: &mut Rng) -> Result<HFactorReport> {
    let labels = [LabelSet::single(0), LabelSet::single(0)];
    let lp = LossParams::default();
    let mut report = HFactorReport {
        pairs,
        max_ratio_err: 0.0,
        max_h: 0.0,
        bound_violations: 0,
    };
    for k in 0..pairs {
        let certain = k % 4 == 0;
        let u_scale = if certain { 0.0 } else { rng.uniform(0.05, 2.0)? };
        let mut draw = |scale: f64| -> Vec<f64> { (0..dim).map(|_| scale * rng.normal()).collect() };
        let (s1, s2) = (draw(1.0), draw(1.0));
        let (u1, u2) = (draw(u_scale), draw(u_scale));
        let e = [EmbeddingPair::from_slices(&s1, &u1)?, EmbeddingPair::from_slices(&s2, &u2)?];
        let input = LossInput::new(&e, &labels);
        let g_idml = contrastive_loss(&input, Metric::Ism, mp, &lp)?.grads.semantic;
        let g_base = contrastive_loss(&input, Metric::Euclidean, mp, &lp)?.grads.semantic;
        let alpha = diff_norm(&s1, &s2);
        let beta = sum_norm(&u1, &u2);
        let h = gradient_weight(alpha, beta, mp)?;
        report.max_h = report.max_h.max(h);
        let beta_rel = (beta + mp.gamma) / alpha.max(mp.alpha_min);
        let bound_ok = if beta_rel == 0.0 { h == 1.0 } else { h < 1.0 };
        if !bound_ok {
            report.bound_violations += 1;
        }
        for (gi, gb) in g_idml.iter().flatten().zip(g_base.iter().flatten()) {
            if gb.abs() > 1e-12 {
                report.max_ratio_err = report.max_ratio_err.max((gi / gb - h).abs());
            }
        }
    }
    Ok(report)
}
